//! `costsmith` command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration, 2 filesystem, 3 training,
//! 4 evolution, 5 LLM backend, 6 HTTP service.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use costsmith::config::{ReviewMode, RunConfig};
use costsmith::ecf::ReviewQueue;
use costsmith::ppo::Algorithm;
use costsmith::runner::{self, RunError};
use costsmith::service::{Service, ServiceState, DEFAULT_HEATMAP_RESOLUTION};

#[derive(Parser)]
#[command(name = "costsmith", version, about = "Evolve shaped cost functions for safe RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Ppo,
    PpoLag,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy, optionally shaped by a cost expression.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "ppo")]
        algo: Algo,
        /// File holding one cost expression.
        #[arg(long)]
        cost: Option<PathBuf>,
    },
    /// Run the cost-function search.
    Evolve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved policy and print metrics as JSON.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Render a cost expression over the arena.
    Heatmap {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HEATMAP_RESOLUTION)]
        resolution: usize,
    },
    /// Serve the JSON API over the configured run root.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Also run `evolve` in this process, reviewing through the API.
        #[arg(long)]
        evolve: bool,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train { config, algo, cost } => {
            let cfg = RunConfig::load(&config)?;
            let cost = cost.as_deref().map(runner::load_cost).transpose()?;
            let algo = match algo {
                Algo::Ppo => Algorithm::Ppo,
                Algo::PpoLag => Algorithm::PpoLag(cfg.lagrange()),
            };
            let out = runner::train_run(&cfg, algo, cost.as_ref(), &runner::run_id_for(&cfg, "train"))?;
            println!(
                "{}: tcr {:.3} her {:.3} in {:.1}s",
                out.dir.display(),
                out.summary.tcr,
                out.summary.her,
                out.summary.t_algo
            );
        }
        Command::Evolve { config } => {
            let cfg = RunConfig::load(&config)?;
            let id = runner::run_id_for(&cfg, "evolve");
            let reviewer = runner::reviewer_for(&cfg, &id, None)?;
            let out = runner::evolve_run(&cfg, reviewer.as_ref(), &id)?;
            let best = out.outcome.best.f_w_best.as_ref().map(|e| e.to_string()).unwrap_or_default();
            println!("{}: p_best {} best {best}", out.dir.display(), out.outcome.best.p_best);
        }
        Command::Eval { policy, config, episodes } => {
            let cfg = RunConfig::load(&config)?;
            let report = runner::eval_checkpoint(&cfg, &policy, episodes)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Heatmap { cost, config, out, pgm, resolution } => {
            let cfg = RunConfig::load(&config)?;
            let expr = runner::load_cost(&cost)?;
            runner::heatmap_files(&cfg, &expr, resolution, &out, pgm.as_deref())?;
        }
        Command::Serve { config, addr, evolve, threads } => {
            let cfg = RunConfig::load(&config)?;
            std::fs::create_dir_all(&cfg.output.root)?;
            let queue = Arc::new(ReviewQueue::new());
            let service = Service::bind(&addr, ServiceState::new(&cfg.output.root, queue.clone()))?;
            eprintln!("serving {} on http://{addr}", cfg.output.root.display());
            let handle = service.spawn(threads);
            if evolve {
                let id = runner::run_id_for(&cfg, "evolve");
                let queue = (cfg.review.mode == ReviewMode::Remote).then_some(queue);
                let reviewer = runner::reviewer_for(&cfg, &id, queue)?;
                let out = runner::evolve_run(&cfg, reviewer.as_ref(), &id)?;
                eprintln!("{}: finished, p_best {}", out.dir.display(), out.outcome.best.p_best);
            }
            handle.join();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
