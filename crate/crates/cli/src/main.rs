use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ulps_cli::capture::Capture;
use ulps_cli::commands::{self, Manifest, Overrides, MANIFEST_FILE};
use ulps_cli::scenarios;
use ulps_core::codes::DEFAULT_POLY_DEG8;
use ulps_core::Method;

#[derive(Parser)]
#[command(
    name = "ulps",
    version,
    about = "Ultrasonic local positioning: codes, simulation and capture processing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Kasami small set as CSV, one sequence per row.
    Codes {
        #[arg(long, default_value_t = 8)]
        degree: u32,
        /// Feedback polynomial, decimal or 0x-prefixed hex.
        #[arg(long, value_parser = parse_u32, default_value_t = DEFAULT_POLY_DEG8)]
        polynomial: u32,
        /// Only the first N members, one per beacon.
        #[arg(long)]
        assign: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo trials: fixes, ECDFs and a manifest.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        /// Also write the first N trial buffers as a capture file.
        #[arg(long, default_value_t = 0)]
        dump_buffers: usize,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Estimate arrivals and positions for every window of a capture.
    Process {
        #[arg(long)]
        capture: PathBuf,
        /// Bundled scenario name or scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value_t = MethodArg::Mca)]
        method: MethodArg,
        #[command(flatten)]
        params: ParamArgs,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean MCA error over a grid of M and γ values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long = "M", value_delimiter = ',', default_values_t = [1usize, 2, 3, 5, 10])]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1f64, 0.3, 0.5, 0.8, 1.0])]
        gamma: Vec<f64>,
        #[arg(long = "J")]
        j: Option<usize>,
        #[arg(long = "delta-ms")]
        delta_ms: Option<f64>,
    },
    /// Repeat a simulate or sweep run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Bundled scenario name or scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 250)]
    trials: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParamArgs {
    /// Minimum stored components per channel.
    #[arg(long = "M")]
    m: Option<usize>,
    /// LoS threshold fraction.
    #[arg(long)]
    gamma: Option<f64>,
    /// Iteration cap.
    #[arg(long = "J")]
    j: Option<usize>,
    /// Timing-window half-width in milliseconds.
    #[arg(long = "delta-ms")]
    delta_ms: Option<f64>,
}

impl ParamArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            min_components: self.m,
            gamma: self.gamma,
            max_iterations: self.j,
            delta_ms: self.delta_ms,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mca,
    Classical,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Mca => vec![Method::Mca],
            MethodArg::Classical => vec![Method::Classical],
            MethodArg::Both => vec![Method::Mca, Method::Classical],
        }
    }
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("`{s}`: {e}"))
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Codes {
            degree,
            polynomial,
            assign,
            out,
        } => write_or_print(out.as_ref(), &commands::codes_csv(degree, polynomial, assign)?),
        Command::Simulate {
            run,
            method,
            dump_buffers,
            params,
        } => {
            let mut scenario = scenarios::load(&run.scenario)?;
            params.overrides().apply(&mut scenario)?;
            let started = Instant::now();
            commands::simulate(
                &scenario,
                run.seed,
                run.trials,
                &method.methods(),
                dump_buffers,
                &run.out,
            )?;
            eprintln!("{} trials in {:.3} s", run.trials, started.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Process {
            capture,
            scenario,
            method,
            params,
            out,
        } => {
            let mut scenario = scenarios::load(&scenario)?;
            params.overrides().apply(&mut scenario)?;
            let capture = Capture::read(&capture)?;
            let (report, times) = commands::process(&capture, &scenario, &method.methods())?;
            for (i, t) in times.iter().enumerate() {
                eprintln!("buffer {i}: {:.4} s", t.as_secs_f64());
            }
            if report.ignored_samples > 0 {
                eprintln!("ignored {} trailing samples", report.ignored_samples);
            }
            write_or_print(out.as_ref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Sweep {
            run,
            m,
            gamma,
            j,
            delta_ms,
        } => {
            let mut scenario = scenarios::load(&run.scenario)?;
            Overrides {
                max_iterations: j,
                delta_ms,
                ..Default::default()
            }
            .apply(&mut scenario)?;
            let started = Instant::now();
            commands::sweep(&scenario, run.seed, run.trials, &m, &gamma, &run.out)?;
            eprintln!("{} trials in {:.3} s", run.trials, started.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Rerun { manifest, out } => {
            let m = Manifest::read(&manifest)?;
            commands::rerun(&m, &out)?;
            eprintln!(
                "rewrote {} and {MANIFEST_FILE} in {}",
                m.outputs.join(", "),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
