use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use ulps_core::codes::generate_kasami_small_set;
use ulps_core::eval::{ecdf, run_trials, sweep as run_sweep, MethodOutcome, TrialReport};
use ulps_core::{Method, ReceivedBuffer, Scenario, TrialSpec};

use crate::capture::{Capture, CaptureHeader, SampleFormat};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIXES_FILE: &str = "fixes.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CAPTURE_FILE: &str = "capture.csv";

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Mca => "mca",
        Method::Classical => "classical",
    }
}

pub fn ecdf_file(m: Method) -> String {
    format!("ecdf_{}.csv", method_name(m))
}

/// Command-line replacements for the scenario's estimator settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub min_components: Option<usize>,
    pub gamma: Option<f64>,
    pub max_iterations: Option<usize>,
    pub delta_ms: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) -> Result<()> {
        if let Some(m) = self.min_components {
            scenario.mca.min_components = m;
        }
        if let Some(g) = self.gamma {
            scenario.mca.gamma = g;
        }
        if let Some(j) = self.max_iterations {
            scenario.mca.max_iterations = j;
        }
        if let Some(d) = self.delta_ms {
            ensure!(d >= 0.0, "--delta-ms must be non-negative, got {d}");
            scenario.delta_seconds = Some(d / 1000.0);
        }
        scenario.validate().context("invalid parameters")?;
        Ok(())
    }
}

/// One row per sequence, chips as ±1, under a `chip_0..` header row.
pub fn codes_csv(degree: u32, polynomial: u32, assign: Option<usize>) -> Result<String> {
    let set = generate_kasami_small_set(polynomial, degree)?;
    let seqs = match assign {
        Some(n) => set.beacon_codes(n)?,
        None => set.sequences,
    };
    let n = seqs.first().map_or(0, |s| s.len());
    let mut out = (0..n).map(|k| format!("chip_{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for s in &seqs {
        let row: Vec<String> = s.chips().iter().map(|c| c.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Job {
    Simulate {
        methods: Vec<Method>,
        dump_buffers: usize,
    },
    Sweep {
        m_values: Vec<usize>,
        gamma_values: Vec<f64>,
    },
}

/// Everything needed to regenerate a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub trials: usize,
    pub job: Job,
    /// With command-line overrides applied.
    pub scenario: Scenario,
    /// Files written next to the manifest.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&json).with_context(|| format!("malformed manifest {}", path.display()))?;
        m.scenario.validate()?;
        Ok(m)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn fixes_csv(report: &TrialReport, channels: usize) -> String {
    let mut out =
        String::from("trial,method,truth_x,truth_y,truth_z,capture_offset,x,y,z,error_m,residual_rms,discards");
    for c in 1..=channels {
        write!(out, ",toa_{c}").unwrap();
    }
    out.push('\n');
    for o in &report.outcomes {
        for m in &o.methods {
            let t = o.truth;
            let p = m.fix.map(|f| f.position);
            write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                o.trial,
                method_name(m.method),
                t.x,
                t.y,
                t.z,
                o.capture_offset_samples,
                opt(p.map(|p| p.x)),
                opt(p.map(|p| p.y)),
                opt(p.map(|p| p.z)),
                opt(o.error(m.method)),
                opt(m.fix.map(|f| f.residual_rms)),
                m.discards,
            )
            .unwrap();
            for toa in &m.toas {
                out.push(',');
                if let Some(k) = toa {
                    write!(out, "{k}").unwrap();
                }
            }
            out.push('\n');
        }
    }
    out
}

fn ecdf_csv(errors: &[f64]) -> Result<String> {
    let curve = ecdf(errors)?;
    let mut out = String::from("error_m,probability\n");
    for (e, p) in curve.errors.iter().zip(&curve.probabilities) {
        writeln!(out, "{e},{p}").unwrap();
    }
    Ok(out)
}

/// The first `count` trial buffers, padded to a common window length.
pub fn dump_buffers(scenario: &Scenario, seed: u64, count: usize) -> Result<Capture> {
    let prepared = scenario.prepare()?;
    let mut window = prepared.frame.len();
    for t in 0..count {
        window = window.max(prepared.render_trial(seed, t)?.buffer.len());
    }
    let mut samples = Vec::with_capacity(window * count);
    for t in 0..count {
        let tb = prepared.render_trial_sized(&scenario.receiver, seed, t, Some(window))?;
        samples.extend_from_slice(&tb.buffer.samples);
    }
    Ok(Capture {
        header: CaptureHeader {
            rate_hz: scenario.fs_rx,
            channels: 1,
            sample_format: SampleFormat::F64,
            window_samples: Some(window),
            buffers: Some(count),
        },
        samples,
    })
}

/// Runs the trials and writes fixes, one ECDF per method, an optional
/// buffer dump and the manifest into `out`.
pub fn simulate(
    scenario: &Scenario,
    seed: u64,
    trials: usize,
    methods: &[Method],
    dump: usize,
    out: &Path,
) -> Result<Manifest> {
    ensure!(dump <= trials, "cannot dump {dump} buffers from {trials} trials");
    let spec = TrialSpec {
        scenario: scenario.clone(),
        methods: methods.to_vec(),
        trials,
        seed,
    };
    let report = run_trials(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut outputs = vec![FIXES_FILE.to_string()];
    write(out, FIXES_FILE, &fixes_csv(&report, scenario.array.len()))?;
    for &m in methods {
        let name = ecdf_file(m);
        write(out, &name, &ecdf_csv(&report.errors(m))?)?;
        outputs.push(name);
    }
    if dump > 0 {
        dump_buffers(scenario, seed, dump)?.write(&out.join(CAPTURE_FILE))?;
        outputs.push(CAPTURE_FILE.into());
        outputs.push(
            crate::capture::sidecar_path(Path::new(CAPTURE_FILE))
                .display()
                .to_string(),
        );
    }
    let manifest = Manifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        trials,
        job: Job::Simulate {
            methods: methods.to_vec(),
            dump_buffers: dump,
        },
        scenario: scenario.clone(),
        outputs,
    };
    write(out, MANIFEST_FILE, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Writes the (M, γ) grid as `m,gamma,mean_error_m,missing` rows plus a
/// manifest into `out`.
pub fn sweep(
    scenario: &Scenario,
    seed: u64,
    trials: usize,
    m_values: &[usize],
    gamma_values: &[f64],
    out: &Path,
) -> Result<Manifest> {
    let spec = TrialSpec {
        scenario: scenario.clone(),
        methods: vec![Method::Mca],
        trials,
        seed,
    };
    let grid = run_sweep(&spec, m_values, gamma_values)?;
    let mut csv = String::from("m,gamma,mean_error_m,missing\n");
    for (mi, m) in grid.m_values.iter().enumerate() {
        for (gi, g) in grid.gamma_values.iter().enumerate() {
            writeln!(csv, "{m},{g},{},{}", grid.mean_error[mi][gi], grid.missing[mi][gi]).unwrap();
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(out, SWEEP_FILE, &csv)?;
    let manifest = Manifest {
        tool_version: TOOL_VERSION.into(),
        seed,
        trials,
        job: Job::Sweep {
            m_values: m_values.to_vec(),
            gamma_values: gamma_values.to_vec(),
        },
        scenario: scenario.clone(),
        outputs: vec![SWEEP_FILE.into()],
    };
    write(out, MANIFEST_FILE, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Repeats the run a manifest describes, writing into `out`.
pub fn rerun(manifest: &Manifest, out: &Path) -> Result<Manifest> {
    match &manifest.job {
        Job::Simulate { methods, dump_buffers } => simulate(
            &manifest.scenario,
            manifest.seed,
            manifest.trials,
            methods,
            *dump_buffers,
            out,
        ),
        Job::Sweep { m_values, gamma_values } => sweep(
            &manifest.scenario,
            manifest.seed,
            manifest.trials,
            m_values,
            gamma_values,
            out,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferResult {
    pub index: usize,
    pub start_sample: usize,
    pub methods: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub scenario: String,
    pub rate_hz: f64,
    pub window_samples: usize,
    /// Trailing samples shorter than a window.
    pub ignored_samples: usize,
    pub buffers: Vec<BufferResult>,
}

/// Splits the capture into windows and estimates every window with each
/// method. Wall time per window is returned separately so the report
/// stays reproducible.
pub fn process(capture: &Capture, scenario: &Scenario, methods: &[Method]) -> Result<(ProcessReport, Vec<Duration>)> {
    let rate = capture.header.rate_hz;
    ensure!(
        (rate - scenario.fs_rx).abs() <= 1e-9 * scenario.fs_rx,
        "capture rate {rate} Hz does not match the scenario's {} Hz",
        scenario.fs_rx
    );
    ensure!(!methods.is_empty(), "no methods selected");
    let prepared = scenario.prepare()?;
    let window = capture.header.window_samples.unwrap_or(prepared.frame.len());
    let n = capture.samples.len();
    if let Some(b) = capture.header.buffers {
        ensure!(
            n == b * window,
            "capture length mismatch: expected {} samples ({b} windows of {window}), found {n}",
            b * window
        );
    }
    ensure!(
        n >= window,
        "capture too short: expected at least {window} samples (one window), found {n}"
    );
    let mut buffers = Vec::new();
    let mut times = Vec::new();
    for (index, chunk) in capture.samples.chunks_exact(window).enumerate() {
        let started = Instant::now();
        let buffer = ReceivedBuffer::new(chunk.to_vec(), rate);
        let outcomes = methods
            .iter()
            .map(|&m| prepared.estimate(&buffer, m))
            .collect::<ulps_core::Result<Vec<_>>>()
            .with_context(|| format!("buffer {index}"))?;
        times.push(started.elapsed());
        buffers.push(BufferResult {
            index,
            start_sample: index * window,
            methods: outcomes,
        });
    }
    Ok((
        ProcessReport {
            scenario: scenario.name.clone(),
            rate_hz: rate,
            window_samples: window,
            ignored_samples: n % window,
            buffers,
        },
        times,
    ))
}
