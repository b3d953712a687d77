use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use snapslam::baseline::{grid_search_detailed, TrialGrid};
use snapslam::harness::{
    export_report, read_observations, run_experiment, write_dumps, write_observations, ExperimentConfig,
};
use snapslam::{run, sample_observations, StateVector};

#[derive(Parser)]
#[command(name = "snapslam", version, about = "Single-snapshot NLOS localization and mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one noisy observation set from the configured scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Noise level index within the configured sweep.
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Run the belief-propagation estimator on one observation set.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
        /// Write the messages of these iterations as CSV files.
        #[arg(long = "dump-messages", value_delimiter = ',')]
        dump_messages: Vec<usize>,
    },
    /// Monte Carlo sweep over the configured noise levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// 1000 trials with 10^4 particles.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Grid-search least-squares baseline on one observation set.
    Ls {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
            cfg.engine.seed = seed;
        }
        if let Some(t) = self.trials {
            cfg.n_trials = t;
        }
        if let Some(n) = self.particles {
            cfg.engine = snapslam::EngineConfig {
                incoming_subsample: cfg.engine.incoming_subsample.min(n),
                n_particles: n,
                ..cfg.engine
            };
        }
        if let Some(l) = self.iterations {
            cfg.engine.n_iterations = l;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_state(label: &str, est: &StateVector) {
    print!(
        "{label}: p = ({:.3}, {:.3}) m, alpha = {:.3} deg",
        est.mobile.position.x,
        est.mobile.position.y,
        est.mobile.orientation().to_degrees()
    );
    for (j, s) in est.incidence_points.iter().enumerate() {
        print!(", s{j} = ({:.3}, {:.3})", s.x, s.y);
    }
    println!();
}

fn created(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, level } => {
            let cfg = common.load()?;
            let Some(noise) = cfg.sweep.get(level) else {
                bail!("noise level {level} is outside the sweep of {}", cfg.sweep.len());
            };
            let obs = sample_observations(&cfg.scenario, noise, cfg.master_seed)?;
            created(&cfg.output_dir)?;
            let path = cfg.output_dir.join("observations.csv");
            write_observations(&obs, &path)?;
            println!("{}", path.display());
        }
        Command::Estimate {
            common,
            obs,
            dump_messages,
        } => {
            let mut cfg = common.load()?;
            cfg.engine.dump_iterations.extend(dump_messages);
            let obs = read_observations(&obs)?;
            let out = run(&obs, cfg.scenario.base_station, &cfg.engine)?;
            for (l, est) in out.trace.estimates.iter().enumerate() {
                print_state(&format!("iteration {}", l + 1), est);
            }
            if out.diagnostics.flagged() {
                eprintln!("warning: {:?}", out.diagnostics);
            }
            if !out.dumps.is_empty() {
                created(&cfg.output_dir)?;
                let files = write_dumps(&out.dumps, &cfg.output_dir)?;
                println!("wrote {} message files to {}", files.len(), cfg.output_dir.display());
            }
        }
        Command::Sweep { common, paper_scale } => {
            let mut cfg = common.load()?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            let report = run_experiment(&cfg)?;
            created(&cfg.output_dir)?;
            for path in export_report(&report, &cfg.output_dir)? {
                println!("{}", path.display());
            }
            let flagged = report.flagged_trials();
            if flagged > 0 {
                eprintln!("warning: {flagged} trials needed a fallback");
            }
        }
        Command::Ls { common, obs } => {
            let cfg = common.load()?;
            let obs = read_observations(&obs)?;
            let outcome = grid_search_detailed(&obs, cfg.scenario.base_station, &TrialGrid::new(cfg.ls_delta_alpha)?)?;
            print_state("ls", &outcome.estimate);
            println!(
                "residual {:.6}, {} trials, {} singular{}",
                outcome.best.residual_norm,
                outcome.n_evaluated,
                outcome.n_singular,
                if outcome.from_valid { "" } else { ", no valid trial" }
            );
        }
    }
    Ok(())
}
