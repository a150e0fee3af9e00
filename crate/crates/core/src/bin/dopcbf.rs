use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dopcbf::acc::ControllerKind;
use dopcbf::experiment::{
    run_batch, run_single, sweep_sigma, write_batch, write_run, write_run_error, write_sweep, ExperimentConfig,
};
use dopcbf::Error;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "dopcbf", version, about = "Observer-based safety filters for adaptive cruise control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment file; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed loop and write trajectory.csv, report.json and plot.svg.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// cbf, docbf or dopcbf.
        #[arg(long)]
        controller: Option<String>,
    },
    /// Compare docbf and dopcbf on seeded random roads; writes summary.json and per_run.csv.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n: u64,
    },
    /// One run per sigma; writes sweep.csv and sweep.svg.
    SweepSigma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 1.0, 10.0])]
        sigmas: Vec<f64>,
    },
}

enum Failure {
    Config(Error),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(common: &Common, controller: Option<&str>) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(name) = controller {
        cfg.controller = name.parse::<ControllerKind>()?;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let road = cfg.road.build(cfg.seed, 0, cfg.sim.t_end)?;
    match run_single(cfg, cfg.controller, &road) {
        Ok(run) => {
            write_run(dir, cfg, &run)?;
            let r = &run.report;
            println!(
                "{}: min_h = {:.6} at t = {:.2} s, min_h_de = {:.6}, rms du/dt = {:.4} N/s, violation = {}",
                r.controller, r.min_h, r.min_h_time, r.min_hde, r.rms_du, r.violation
            );
            if r.qp_failures > 0 {
                return Err(Failure::Run(format!(
                    "{} controller ticks failed; first at t = {} s: {}",
                    r.qp_failures,
                    run.failures()[0].t,
                    run.failures()[0].message
                )));
            }
            Ok(())
        }
        Err(e) => {
            write_run_error(dir, cfg, &e)?;
            Err(Failure::Run(e.to_string()))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, controller } => {
            let (cfg, dir) = load(&common, controller.as_deref())?;
            simulate(&cfg, &dir)
        }
        Command::Batch { common, n } => {
            let (cfg, dir) = load(&common, None)?;
            let out = run_batch(&cfg, n, cfg.seed)?;
            write_batch(&dir, &out)?;
            let s = &out.summary;
            println!(
                "violations: docbf {} dopcbf {}; aborted: docbf {} dopcbf {}",
                s.docbf.violations, s.dopcbf.violations, s.docbf.aborted, s.dopcbf.aborted
            );
            if let Some(c) = &s.comparison {
                println!(
                    "rms du/dt improvement: mean {:.2}% min {:.2}% max {:.2}% win rate {:.2}",
                    c.mean_improvement, c.min_improvement, c.max_improvement, c.win_rate
                );
            }
            Ok(())
        }
        Command::SweepSigma {
            common,
            controller,
            sigmas,
        } => {
            let (cfg, dir) = load(&common, controller.as_deref())?;
            let rows = sweep_sigma(&cfg, &sigmas)?;
            write_sweep(&dir, &rows)?;
            for r in &rows {
                println!(
                    "sigma {}: min_h {:.6} min_h_de {:.6} rms {:.4} ({})",
                    r.sigma, r.min_h, r.min_hde, r.rms_du, r.status
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}
