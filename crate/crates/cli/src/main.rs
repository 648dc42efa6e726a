use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sindy_ekf::io::read_json;
use sindy_ekf::pipeline::{
    estimate_stage, experiment_stage, simulate_stage, train_stage, CaseName, CaseSummary, ExperimentSpec, ForcingSpec,
};
use sindy_ekf::Error;

/// Sparse-regression models and extended Kalman filtering for joint
/// state and parameter estimation.
#[derive(Parser)]
#[command(name = "sindy-ekf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training realizations and noisy test signals.
    Simulate(Common),
    /// Fit the sparse model (and delay embedding) from simulated data.
    Train(Common),
    /// Run the filter on the test signals using the trained artifacts.
    Estimate(Common),
    /// simulate, train and estimate in one go.
    Experiment {
        /// Preset name: shear-building, oscillator-k2 or oscillator-coupling.
        preset: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace every seed in the spec with streams derived from this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict estimation to one test case label.
    #[arg(long = "case")]
    case: Option<String>,
    /// Seismogram CSV (`time_s,accel_m_s2`) replacing the synthetic forcing.
    #[arg(long)]
    seismogram: Option<PathBuf>,
}

fn load_spec(common: &Common, preset: Option<&str>) -> Result<ExperimentSpec, Error> {
    let mut spec = match (&common.config, preset) {
        (Some(_), Some(_)) => return Err(Error::Config("give either a preset name or --config, not both".into())),
        (Some(path), None) => read_json::<ExperimentSpec>(path)?,
        (None, Some(name)) => ExperimentSpec::preset(CaseName::parse(name)?),
        (None, None) => return Err(Error::Config("no experiment given: pass --config <path>".into())),
    };
    if let Some(seed) = common.seed {
        spec = spec.with_seed(seed);
    }
    if let Some(path) = &common.seismogram {
        let mut replaced = false;
        for forcing in [&mut spec.training.forcing, &mut spec.test.forcing].into_iter().flatten() {
            *forcing = ForcingSpec::Csv {
                path: path.clone(),
                resample_dt: forcing.resample_dt(),
            };
            replaced = true;
        }
        if !replaced {
            return Err(Error::Config("--seismogram given but the experiment has no forcing".into()));
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn report(summaries: &[CaseSummary], out: &Path) -> ExitCode {
    let mut diverged = false;
    for s in summaries {
        let estimates: Vec<String> = s
            .parameters
            .iter()
            .zip(&s.final_estimate)
            .zip(&s.final_relative_error)
            .map(|((p, v), e)| format!("{p}={v:.6} ({:.2}%)", 100.0 * e))
            .collect();
        println!("{}: {}", s.label, estimates.join(", "));
        if let Some(d) = &s.divergence {
            eprintln!("{}: diverged at step {} (t={}): {}", s.label, d.step, d.time, d.reason);
            diverged = true;
        }
    }
    println!("results in {}", out.display());
    if diverged {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate(c) => {
            let spec = load_spec(&c, None)?;
            let m = simulate_stage(&spec, &c.out)?;
            println!("{} realizations, {} test signals in {}", m.realizations.len(), m.tests.len(), c.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(c) => {
            let spec = load_spec(&c, None)?;
            train_stage(&spec, &c.out)?;
            println!("model written to {}", c.out.join("model").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate(c) => {
            let spec = load_spec(&c, None)?;
            let summaries = estimate_stage(&spec, &c.out, c.case.as_deref())?;
            Ok(report(&summaries, &c.out))
        }
        Command::Experiment { preset, common } => {
            let spec = load_spec(&common, preset.as_deref())?;
            let summaries = experiment_stage(&spec, &common.out, common.case.as_deref())?;
            Ok(report(&summaries, &common.out))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_numeric() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
