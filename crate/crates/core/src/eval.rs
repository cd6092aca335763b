//! Monte-Carlo trials: render a scenario many times, estimate positions with
//! each method, and summarize the errors as ECDFs and parameter sweeps.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    add_reflector_echo_to, direct_path_taps, image_source_taps, render_received, uex_array, BeaconArray,
    ChannelRealization, NoiseConfig, Point3, ReceivedBuffer, RenderOptions, RoomModel, DEFAULT_REFERENCE_GAIN,
    DEFAULT_SPEED_OF_SOUND, UEX_ROOM_DIMENSIONS,
};
use crate::codes::{generate_kasami_small_set, DEFAULT_POLY_DEG8};
use crate::error::{Error, Result};
use crate::mca::{
    classical_toa_with, select_los, ChannelEstimate, McaConfig, Method, PatternBank, ToaResult, DEFAULT_EPSILON_STOP,
    DEFAULT_GAMMA, DEFAULT_J, DEFAULT_M,
};
use crate::positioning::{solve_position, toas_to_tdoas, PositionFix, SearchBox, SolverConfig};
use crate::waveform::{
    build_frame, receiver_patterns, CodePattern, ModulationConfig, TdmaSchedule, TransmitFrame, DEFAULT_FS_RX,
    DEFAULT_SLOT_SECONDS,
};

pub const DEFAULT_JITTER_M: f64 = 0.01;
pub const DEFAULT_MAX_CAPTURE_OFFSET: usize = 500;
pub const UEX_RECEIVER: [f64; 3] = [0.0, 0.0, 1.0];
/// Reflector echo of the bundled scenario: 0.8 ms late, 1.5× the LoS.
pub const UEX_ECHO_DELAY_S: f64 = 0.0008;
pub const UEX_ECHO_RATIO: f64 = 1.5;
pub const UEX_ECHO_CHANNELS: [usize; 2] = [1, 2];
pub const UEX_SNR_DB: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSpec {
    pub degree: u32,
    pub polynomial: u32,
    /// Set member per beacon; members 1..=L when absent.
    #[serde(default)]
    pub assignment: Option<Vec<usize>>,
}

impl Default for CodeSpec {
    fn default() -> Self {
        Self {
            degree: 8,
            polynomial: DEFAULT_POLY_DEG8,
            assignment: None,
        }
    }
}

/// An extra path on selected channels, relative to each one's LoS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub extra_delay_s: f64,
    pub gain_ratio: f64,
    /// 1-based.
    pub channels: Vec<usize>,
}

/// Estimator parameters; the window half-width comes from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McaParams {
    pub min_components: usize,
    pub gamma: f64,
    pub max_iterations: usize,
    pub epsilon_stop: f64,
    pub window_check: bool,
}

impl Default for McaParams {
    fn default() -> Self {
        Self {
            min_components: DEFAULT_M,
            gamma: DEFAULT_GAMMA,
            max_iterations: DEFAULT_J,
            epsilon_stop: DEFAULT_EPSILON_STOP,
            window_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Free field when absent.
    #[serde(default)]
    pub room: Option<RoomModel>,
    /// 0 = direct paths only, 1 = one reflection per surface.
    #[serde(default)]
    pub image_order: u32,
    pub array: BeaconArray,
    pub receiver: Point3,
    #[serde(default)]
    pub reflector: Option<Reflector>,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub codes: CodeSpec,
    #[serde(default)]
    pub modulation: ModulationConfig,
    pub fs_rx: f64,
    pub slot_seconds: f64,
    /// Channel per slot; sequential when absent.
    #[serde(default)]
    pub slot_order: Option<Vec<usize>>,
    /// Window half-width; derived from the coverage box when absent.
    #[serde(default)]
    pub delta_seconds: Option<f64>,
    pub speed_of_sound: f64,
    #[serde(default = "default_reference_gain")]
    pub reference_gain: f64,
    /// Region the receiver may occupy; used for δ and random placements.
    pub coverage: SearchBox,
    /// Uniform receiver jitter per axis, metres. The height is not jittered
    /// when the solver fixes it.
    #[serde(default)]
    pub jitter_m: f64,
    /// Capture start is drawn from `0..=max_capture_offset_samples`.
    #[serde(default)]
    pub max_capture_offset_samples: usize,
    #[serde(default)]
    pub mca: McaParams,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_reference_gain() -> f64 {
    DEFAULT_REFERENCE_GAIN
}

impl Scenario {
    fn uex_base(name: &str, description: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            room: Some(RoomModel::uex()),
            image_order: 1,
            array: uex_array(),
            receiver: Point3::from(UEX_RECEIVER),
            reflector: None,
            noise: NoiseConfig::SnrDb(UEX_SNR_DB),
            codes: CodeSpec::default(),
            modulation: ModulationConfig::default(),
            fs_rx: DEFAULT_FS_RX,
            slot_seconds: DEFAULT_SLOT_SECONDS,
            slot_order: None,
            delta_seconds: None,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            reference_gain: DEFAULT_REFERENCE_GAIN,
            coverage: SearchBox::uex_coverage(),
            jitter_m: DEFAULT_JITTER_M,
            max_capture_offset_samples: DEFAULT_MAX_CAPTURE_OFFSET,
            mca: McaParams::default(),
            solver: SolverConfig {
                fixed_z: Some(UEX_RECEIVER[2]),
                ..Default::default()
            },
        }
    }

    /// Simulated 6.4 × 3.5 × 2.8 m room, first-order reflections, 20 dB SNR.
    pub fn uex_noreflector() -> Self {
        Self::uex_base(
            "uex_noreflector",
            "Simulated box room with first-order wall, floor and ceiling reflections; receiver at (0, 0, 1).",
        )
    }

    /// As [`Scenario::uex_noreflector`] plus a reflector echo 1.5× the LoS,
    /// 0.8 ms late, on beacons 1 and 2.
    pub fn uex_reflector() -> Self {
        let mut s = Self::uex_base(
            "uex_reflector",
            "Simulated box room plus a reflector echo 1.5x the LoS, 0.8 ms late, on beacons 1 and 2.",
        );
        s.reflector = Some(Reflector {
            extra_delay_s: UEX_ECHO_DELAY_S,
            gain_ratio: UEX_ECHO_RATIO,
            channels: UEX_ECHO_CHANNELS.to_vec(),
        });
        s
    }

    /// Direct paths only, no noise, no jitter.
    pub fn free_field_noiseless() -> Self {
        let mut s = Self::uex_base("free_field_noiseless", "Direct paths only, noiseless.");
        s.room = None;
        s.image_order = 0;
        s.noise = NoiseConfig::Noiseless;
        s.jitter_m = 0.0;
        s
    }

    /// A smaller 4 × 4 × 2.8 m room with hard surfaces, so first-order
    /// echoes arrive early and strong. Receiver off centre at (0.5, −0.4, 1).
    pub fn box_room_images() -> Self {
        let mut s = Self::uex_base(
            "box_room_images",
            "Simulated 4 x 4 x 2.8 m room, reflection coefficient 0.95 on every surface, first-order images; receiver at (0.5, -0.4, 1).",
        );
        s.room = Some(RoomModel {
            min_corner: Point3::new(-2.0, -2.0, 0.0),
            dimensions: [4.0, 4.0, UEX_ROOM_DIMENSIONS[2]],
            reflection_coeffs: [0.95; 6],
        });
        s.receiver = Point3::new(0.5, -0.4, UEX_RECEIVER[2]);
        s
    }

    pub fn schedule(&self, delta_seconds: f64) -> TdmaSchedule {
        TdmaSchedule {
            slot_seconds: self.slot_seconds,
            order: self
                .slot_order
                .clone()
                .unwrap_or_else(|| (1..=self.array.len()).collect()),
            delta_seconds,
        }
    }

    pub fn delta_samples(&self) -> usize {
        match self.delta_seconds {
            Some(d) => (d * self.fs_rx).round() as usize,
            None => delta_from_geometry(&self.array, &self.coverage, self.speed_of_sound, self.fs_rx),
        }
    }

    pub fn mca_config(&self) -> McaConfig {
        McaConfig {
            min_components: self.mca.min_components,
            gamma: self.mca.gamma,
            max_iterations: self.mca.max_iterations,
            delta_samples: self.delta_samples(),
            epsilon_stop: self.mca.epsilon_stop,
            window_check: self.mca.window_check,
        }
    }

    /// Checks everything that does not need the codes or patterns.
    pub fn validate(&self) -> Result<()> {
        if !(self.fs_rx > 0.0 && self.speed_of_sound > 0.0 && self.slot_seconds > 0.0) {
            return Err(Error::InvalidArgument(
                "fs_rx, speed_of_sound and slot_seconds must be positive".into(),
            ));
        }
        if self.jitter_m < 0.0 {
            return Err(Error::InvalidArgument("jitter_m must be non-negative".into()));
        }
        if let Some(room) = &self.room {
            room.validate()?;
        }
        if self.image_order > 1 || (self.room.is_none() && self.image_order > 0) {
            return Err(Error::ImageOrder(self.image_order));
        }
        self.schedule(self.delta_samples() as f64 / self.fs_rx).validate()?;
        self.mca_config().validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Codes, patterns and frame shared by every buffer of this scenario.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let set = generate_kasami_small_set(self.codes.polynomial, self.codes.degree)?;
        let codes = match &self.codes.assignment {
            Some(a) => set.assign(a)?,
            None => set.beacon_codes(self.array.len())?,
        };
        if codes.len() != self.array.len() {
            return Err(Error::ChannelCountMismatch {
                patterns: codes.len(),
                channels: self.array.len(),
            });
        }
        let patterns = receiver_patterns(&codes, &self.modulation, self.fs_rx)?;
        let delta_samples = self.delta_samples();
        let schedule = self.schedule(delta_samples as f64 / self.fs_rx);
        let frame = build_frame(&patterns, &schedule)?;
        let bank = PatternBank::new(&patterns)?;
        Ok(Prepared {
            scenario: self.clone(),
            schedule,
            mca: self.mca_config(),
            patterns,
            frame,
            bank,
        })
    }
}

/// Largest range-difference spread between any two beacons over the
/// coverage box (0.05 m grid), in receiver samples, plus two samples.
pub fn delta_from_geometry(array: &BeaconArray, coverage: &SearchBox, speed_of_sound: f64, fs_rx: f64) -> usize {
    let axis = |k: usize| {
        let n = ((coverage.max[k] - coverage.min[k]) / 0.05).ceil().max(0.0) as usize;
        (0..=n).map(move |i| (coverage.min[k] + i as f64 * 0.05).min(coverage.max[k]))
    };
    let mut spread = 0.0f64;
    for x in axis(0) {
        for y in axis(1) {
            for z in axis(2) {
                let p = Point3::new(x, y, z);
                let d: Vec<f64> = array.positions.iter().map(|b| (p - b).norm()).collect();
                let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
                spread = spread.max(hi - lo);
            }
        }
    }
    (spread / speed_of_sound * fs_rx).ceil() as usize + 2
}

/// Per-trial random stream: stream `trial` of the master-seeded generator.
pub fn trial_rng(master_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

/// One rendered trial buffer and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBuffer {
    pub truth: Point3,
    pub capture_offset_samples: usize,
    pub channel: ChannelRealization,
    pub buffer: ReceivedBuffer,
}

/// Result of one method on one buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub toas: Vec<Option<usize>>,
    pub fix: Option<PositionFix>,
    /// Iterations whose window check failed; MCA only.
    pub discards: usize,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub schedule: TdmaSchedule,
    pub mca: McaConfig,
    pub patterns: Vec<CodePattern>,
    /// At the receiver rate.
    pub frame: TransmitFrame,
    pub bank: PatternBank,
}

impl Prepared {
    /// Channel taps for a receiver at `rx`, reflector included.
    pub fn channel_at(&self, rx: &Point3) -> Result<ChannelRealization> {
        let s = &self.scenario;
        let ch = match &s.room {
            Some(room) => image_source_taps(room, &s.array, rx, s.speed_of_sound, s.reference_gain, s.image_order)?,
            None => direct_path_taps(&s.array, rx, s.speed_of_sound, s.reference_gain)?,
        };
        match &s.reflector {
            Some(r) => add_reflector_echo_to(&ch, r.extra_delay_s, r.gain_ratio, &r.channels),
            None => Ok(ch),
        }
    }

    pub fn render_at(&self, rx: &Point3, capture_offset_samples: usize, noise_seed: u64) -> Result<ReceivedBuffer> {
        let opts = RenderOptions {
            capture_offset_samples,
            ..RenderOptions::new(self.scenario.fs_rx)
        };
        render_received(
            &self.frame,
            &self.channel_at(rx)?,
            &self.scenario.noise,
            &opts,
            noise_seed,
        )
    }

    /// Buffer for trial `trial`, receiver at `base` plus jitter.
    pub fn render_trial_at(&self, base: &Point3, master_seed: u64, trial: usize) -> Result<TrialBuffer> {
        self.render_trial_sized(base, master_seed, trial, None)
    }

    /// As [`Prepared::render_trial_at`] with a fixed buffer length; noise
    /// over the common prefix is the same as for the shortest buffer.
    pub fn render_trial_sized(
        &self,
        base: &Point3,
        master_seed: u64,
        trial: usize,
        buffer_len: Option<usize>,
    ) -> Result<TrialBuffer> {
        let s = &self.scenario;
        let mut rng = trial_rng(master_seed, trial);
        let mut truth = *base;
        if s.jitter_m > 0.0 {
            for k in 0..3 {
                let j = rng.random_range(-s.jitter_m..=s.jitter_m);
                if k < 2 || s.solver.fixed_z.is_none() {
                    truth[k] += j;
                }
            }
        }
        let capture_offset_samples = rng.random_range(0..=s.max_capture_offset_samples);
        let noise_seed = rng.next_u64();
        let channel = self.channel_at(&truth)?;
        let opts = RenderOptions {
            capture_offset_samples,
            buffer_len,
            ..RenderOptions::new(s.fs_rx)
        };
        let buffer = render_received(&self.frame, &channel, &s.noise, &opts, noise_seed)?;
        Ok(TrialBuffer {
            truth,
            capture_offset_samples,
            channel,
            buffer,
        })
    }

    pub fn render_trial(&self, master_seed: u64, trial: usize) -> Result<TrialBuffer> {
        self.render_trial_at(&self.scenario.receiver, master_seed, trial)
    }

    pub fn run_mca(&self, buffer: &ReceivedBuffer, cfg: &McaConfig) -> Result<ChannelEstimate> {
        self.bank.run(buffer, &self.schedule, cfg)
    }

    /// Position from arrival estimates; `None` when too few arrivals, the
    /// geometry is degenerate or the fit does not converge.
    pub fn locate(&self, toa: &ToaResult) -> Option<PositionFix> {
        let s = &self.scenario;
        let tdoas = toas_to_tdoas(toa, &self.schedule, s.fs_rx, s.speed_of_sound).ok()?;
        let fix = solve_position(&tdoas, &s.array, &s.solver).ok()?;
        fix.converged.then_some(fix)
    }

    pub fn estimate(&self, buffer: &ReceivedBuffer, method: Method) -> Result<MethodOutcome> {
        let (toa, discards) = match method {
            Method::Mca => {
                let est = self.run_mca(buffer, &self.mca)?;
                (select_los(&est, self.mca.gamma), est.discards())
            }
            Method::Classical => (classical_toa_with(&self.bank, buffer, &self.schedule)?, 0),
        };
        Ok(MethodOutcome {
            method,
            fix: self.locate(&toa),
            toas: toa.toas,
            discards,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub truth: Point3,
    pub capture_offset_samples: usize,
    /// In the order of `TrialSpec::methods`.
    pub methods: Vec<MethodOutcome>,
}

impl TrialOutcome {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Euclidean error of a method's fix, `None` when it has no fix.
    pub fn error(&self, method: Method) -> Option<f64> {
        self.outcome(method)?.fix.map(|f| (f.position - self.truth).norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub methods: Vec<Method>,
    pub outcomes: Vec<TrialOutcome>,
}

impl TrialReport {
    /// Errors in trial order; missing fixes are `+∞`.
    pub fn errors(&self, method: Method) -> Vec<f64> {
        self.outcomes
            .iter()
            .map(|o| o.error(method).unwrap_or(f64::INFINITY))
            .collect()
    }

    pub fn missing(&self, method: Method) -> usize {
        self.outcomes.iter().filter(|o| o.error(method).is_none()).count()
    }
}

fn in_order<T: Send>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

pub fn run_trials(spec: &TrialSpec) -> Result<TrialReport> {
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods selected".into()));
    }
    let prepared = spec.scenario.prepare()?;
    let outcomes = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let run = || -> Result<TrialOutcome> {
                let tb = prepared.render_trial(spec.seed, trial)?;
                let methods = spec
                    .methods
                    .iter()
                    .map(|&m| prepared.estimate(&tb.buffer, m))
                    .collect::<Result<_>>()?;
                Ok(TrialOutcome {
                    trial,
                    truth: tb.truth,
                    capture_offset_samples: tb.capture_offset_samples,
                    methods,
                })
            };
            run().map_err(|e| Error::Trial {
                trial,
                source: Box::new(e),
            })
        })
        .collect();
    Ok(TrialReport {
        methods: spec.methods.clone(),
        outcomes: in_order(outcomes)?,
    })
}

/// Empirical CDF: `probabilities[k] = (k + 1) / n` at `errors[k]`, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfCurve {
    pub errors: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl EcdfCurve {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn ecdf(errors: &[f64]) -> Result<EcdfCurve> {
    if errors.is_empty() {
        return Err(Error::EmptyErrors);
    }
    if errors.iter().any(|e| e.is_nan() || *e < 0.0) {
        return Err(Error::InvalidArgument("errors must be non-negative numbers".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(EcdfCurve {
        probabilities: (1..=sorted.len()).map(|k| k as f64 / n).collect(),
        errors: sorted,
    })
}

/// Smallest error whose cumulative probability reaches `p`.
pub fn percentile(curve: &EcdfCurve, p: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyErrors);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 1]")));
    }
    let n = curve.len();
    // Guard against p·n landing a hair above an integer.
    let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(curve.errors[k.min(n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub m_values: Vec<usize>,
    pub gamma_values: Vec<f64>,
    /// `mean_error[m][g]` over trials with a fix, metres.
    pub mean_error: Vec<Vec<f64>>,
    /// Trials without a fix per cell.
    pub missing: Vec<Vec<usize>>,
}

/// Mean MCA error for every (M, γ) pair. Each trial's buffer is rendered
/// once and shared by all cells; γ only changes the LoS selection, so one
/// estimation per M serves the whole row.
pub fn sweep(spec: &TrialSpec, m_values: &[usize], gamma_values: &[f64]) -> Result<SweepGrid> {
    if m_values.is_empty() || gamma_values.is_empty() {
        return Err(Error::InvalidArgument("sweep axes must be nonempty".into()));
    }
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let prepared = spec.scenario.prepare()?;
    let configs: Vec<McaConfig> = m_values
        .iter()
        .map(|&m| {
            let cfg = McaConfig {
                min_components: m,
                ..prepared.mca.clone()
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<_>>()?;
    for &g in gamma_values {
        McaConfig {
            gamma: g,
            ..prepared.mca.clone()
        }
        .validate()?;
    }
    // errors[trial][m][g]
    let per_trial = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let run = || -> Result<Vec<Vec<Option<f64>>>> {
                let tb = prepared.render_trial(spec.seed, trial)?;
                configs
                    .iter()
                    .map(|cfg| {
                        let est = prepared.run_mca(&tb.buffer, cfg)?;
                        Ok(gamma_values
                            .iter()
                            .map(|&g| {
                                prepared
                                    .locate(&select_los(&est, g))
                                    .map(|f| (f.position - tb.truth).norm())
                            })
                            .collect())
                    })
                    .collect()
            };
            run().map_err(|e| Error::Trial {
                trial,
                source: Box::new(e),
            })
        })
        .collect();
    let per_trial = in_order(per_trial)?;
    let mut mean_error = vec![vec![0.0; gamma_values.len()]; m_values.len()];
    let mut missing = vec![vec![0; gamma_values.len()]; m_values.len()];
    for mi in 0..m_values.len() {
        for gi in 0..gamma_values.len() {
            let found: Vec<f64> = per_trial.iter().filter_map(|t| t[mi][gi]).collect();
            missing[mi][gi] = per_trial.len() - found.len();
            mean_error[mi][gi] = if found.is_empty() {
                f64::NAN
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            };
        }
    }
    Ok(SweepGrid {
        m_values: m_values.to_vec(),
        gamma_values: gamma_values.to_vec(),
        mean_error,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        let c = ecdf(&[0.04, 0.01, 0.03, 0.02]).unwrap();
        assert_eq!(c.errors, vec![0.01, 0.02, 0.03, 0.04]);
        assert_eq!(c.probabilities, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(percentile(&c, 0.5).unwrap(), 0.02);
        assert_eq!(percentile(&c, 0.51).unwrap(), 0.03);
        assert_eq!(percentile(&c, 1.0).unwrap(), 0.04);
        assert_eq!(percentile(&c, 0.0).unwrap(), 0.01);
        let same = ecdf(&[0.07; 9]).unwrap();
        for p in [0.0, 0.1, 0.5, 0.95, 1.0] {
            assert_eq!(percentile(&same, p).unwrap(), 0.07);
        }
        assert_eq!(ecdf(&[]), Err(Error::EmptyErrors));
        assert!(ecdf(&[f64::NAN]).is_err());
        let with_missing = ecdf(&[0.01, f64::INFINITY]).unwrap();
        assert_eq!(percentile(&with_missing, 0.95).unwrap(), f64::INFINITY);
    }

    #[test]
    fn p95_of_250() {
        let errs: Vec<f64> = (1..=250).map(|k| k as f64).collect();
        let c = ecdf(&errs).unwrap();
        // 0.95 × 250 = 237.5 → the 238th value.
        assert_eq!(percentile(&c, 0.95).unwrap(), 238.0);
    }

    #[test]
    fn delta_covers_spread() {
        let s = Scenario::uex_reflector();
        let d = s.delta_samples();
        // Opposite corners 0.99 m apart bound the spread from above.
        assert!(d > 200 && d <= 291, "{d}");
        assert!(s.schedule(d as f64 / s.fs_rx).validate().is_ok());
    }

    #[test]
    fn trial_streams_differ_and_repeat() {
        let a: Vec<u64> = (0..3).map(|t| trial_rng(7, t).next_u64()).collect();
        assert_ne!(a[0], a[1]);
        assert_eq!(a, (0..3).map(|t| trial_rng(7, t).next_u64()).collect::<Vec<_>>());
    }

    #[test]
    fn noiseless_free_field_single_trial() {
        let spec = TrialSpec {
            scenario: Scenario::free_field_noiseless(),
            methods: vec![Method::Mca, Method::Classical],
            trials: 1,
            seed: 3,
        };
        let r = run_trials(&spec).unwrap();
        let bound = DEFAULT_SPEED_OF_SOUND / DEFAULT_FS_RX * 3f64.sqrt();
        let e = r.errors(Method::Mca)[0];
        assert!(e < bound, "{e}");
        assert_eq!(r.missing(Method::Mca), 0);
    }

    #[test]
    fn same_seed_same_outcomes() {
        let mut scenario = Scenario::uex_reflector();
        scenario.mca.max_iterations = 16;
        let spec = TrialSpec {
            scenario,
            methods: vec![Method::Mca, Method::Classical],
            trials: 6,
            seed: 11,
        };
        let a = run_trials(&spec).unwrap();
        let b = run_trials(&spec).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_trials(&spec)).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.outcomes.len(), 6);
        assert!(a.outcomes.iter().enumerate().all(|(i, o)| o.trial == i));
    }

    #[test]
    fn sweep_shape_and_buffer_reuse() {
        let spec = TrialSpec {
            scenario: Scenario::free_field_noiseless(),
            methods: vec![Method::Mca],
            trials: 3,
            seed: 5,
        };
        let p = spec.scenario.prepare().unwrap();
        let g = sweep(&spec, &[1, 2, 3], &[0.01, 0.5, 1.0]).unwrap();
        assert_eq!(g.mean_error.len(), 3);
        assert!(g.mean_error.iter().all(|row| row.len() == 3));
        // One true tap per channel: every cell sees the same fixes.
        let first = g.mean_error[0][0];
        for row in &g.mean_error {
            for &v in row {
                assert!((v - first).abs() < 1e-12, "{:?}", g.mean_error);
            }
        }
        assert_eq!(p.render_trial(5, 2).unwrap(), p.render_trial(5, 2).unwrap());
        assert!(sweep(&spec, &[], &[0.1]).is_err());
    }

    #[test]
    fn scenario_json_round_trip_and_unknown_keys() {
        let s = Scenario::uex_reflector();
        let json = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<Scenario>(v).is_err());
    }

    #[test]
    fn trial_errors_carry_index() {
        let mut scenario = Scenario::free_field_noiseless();
        scenario.receiver = scenario.array.positions[0];
        let spec = TrialSpec {
            scenario,
            methods: vec![Method::Mca],
            trials: 2,
            seed: 0,
        };
        assert_eq!(
            run_trials(&spec),
            Err(Error::Trial {
                trial: 0,
                source: Box::new(Error::ZeroDistance(1))
            })
        );
    }
}
