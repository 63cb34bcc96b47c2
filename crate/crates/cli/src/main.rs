use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thzvr_core::predictors::{LosClassifier, ViewpointMode};
use thzvr_core::sim::plots::emit_plots;
use thzvr_core::sim::sweep::write_sweep;
use thzvr_core::sim::{
    load_config, pretrain_cnn, run_sweep, write_metrics, ControlMode, LoadedConfig, PredictorSource, Simulator,
    SweepAxis,
};
use thzvr_core::CoreError;

#[derive(Parser)]
#[command(name = "thzvr", version, about = "RIS-assisted THz VR network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured episodes and write per-slot metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        predictors: Option<Source>,
        #[arg(long, value_enum)]
        viewpoint: Option<Viewpoint>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Vary one axis, hold everything else fixed, and write `sweep.csv`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Seeds averaged per value.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the LoS classifier on generated scenes and save a checkpoint.
    PretrainCnn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every network family.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn a metrics directory into plot-ready CSV tables.
    EmitPlots {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cdrl,
    Exhaustive,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Genie,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum Viewpoint {
    Centralized,
    Fedavg,
}

fn load(path: &Path) -> Result<LoadedConfig> {
    let loaded = load_config(path)?;
    if !loaded.defaulted.is_empty() {
        log::info!("defaulted keys: {}", loaded.defaulted.join(", "));
    }
    Ok(loaded)
}

fn simulate(
    config: &Path,
    seed: Option<u64>,
    mode: Option<Mode>,
    predictors: Option<Source>,
    viewpoint: Option<Viewpoint>,
    out: &Path,
) -> Result<()> {
    let mut cfg = load(config)?.config;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(m) = mode {
        cfg.run.mode = match m {
            Mode::Cdrl => ControlMode::Cdrl,
            Mode::Exhaustive => ControlMode::Exhaustive,
            Mode::Random => ControlMode::Random,
        };
    }
    if let Some(p) = predictors {
        cfg.predictors.source = match p {
            Source::Genie => PredictorSource::Genie,
            Source::Learned => PredictorSource::Learned,
        };
    }
    if let Some(v) = viewpoint {
        cfg.predictors.viewpoint_mode = match v {
            Viewpoint::Centralized => ViewpointMode::Centralized,
            Viewpoint::Fedavg => ViewpointMode::Fedavg,
        };
    }
    cfg.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write(&out.join("config.toml"))?;
    let t_th_vr = cfg.video.t_th_vr;
    let records = Simulator::new(cfg, None)?.run()?;
    write_metrics(&records, t_th_vr, out)?;
    log::info!("wrote {} slot records to {}", records.len(), out.display());
    Ok(())
}

fn sweep(config: &Path, axis: SweepAxis, values: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let cfg = load(config)?.config;
    let cnn = match cfg.predictors.source {
        PredictorSource::Learned if cfg.predictors.cnn.checkpoint.is_none() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            Some(Arc::new(pretrain_cnn(&cfg, &mut rng)?.0))
        }
        _ => None,
    };
    let rows = run_sweep(&cfg, axis, values, seeds, cnn)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_sweep(&rows, &out.join("sweep.csv"))?;
    for r in &rows {
        println!("{axis}={:<3} qoe {:.4} ± {:.4}  t_vr {:.5} ± {:.5}", r.value, r.mean_qoe, r.se_qoe, r.mean_t_vr, r.se_t_vr);
    }
    Ok(())
}

fn pretrain(config: &Path, scenes: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load(config)?.config;
    if let Some(n) = scenes {
        cfg.predictors.cnn.scenes = n;
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let (clf, losses): (LosClassifier, Vec<f64>) = pretrain_cnn(&cfg, &mut rng)?;
    clf.save(out)?;
    println!("final training loss {:.5} after {} epochs; saved {}", losses.last().unwrap_or(&f64::NAN), losses.len(), out.display());
    Ok(())
}

fn grad_check(tol: f64, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    for (name, report) in thzvr_nn::standard_suite(&mut rng, tol) {
        println!("{name:<20} {report}");
        ok &= report.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, seed, mode, predictors, viewpoint, out } => {
            simulate(&config, seed, mode, predictors, viewpoint, &out)?
        }
        Command::Sweep { config, axis, values, seeds, out } => sweep(&config, axis, &values, &seeds, &out)?,
        Command::PretrainCnn { config, scenes, out } => pretrain(&config, scenes, &out)?,
        Command::GradCheck { tol, seed } => return grad_check(tol, seed),
        Command::EmitPlots { input } => {
            for p in emit_plots(&input)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| c.downcast_ref::<CoreError>().is_some_and(CoreError::is_config));
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
