//! The work behind each CLI subcommand. Every function here writes a
//! complete run directory and returns what it wrote, so tests and examples
//! can drive the same code paths as the binary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, ReviewMode, RunConfig};
use crate::dsl::{parse, CostExpr, DslError};
use crate::ecf::{AutoReviewer, InteractiveReviewer, RemoteReviewer, ReviewQueue, Reviewer};
use crate::evolution::{evolve, EvolveContext, EvolveError, EvolveOutcome};
use crate::fpe::MetricsAggregate;
use crate::llm::LlmError;
use crate::nn::{read_checkpoint, write_checkpoint, NnError};
use crate::ppo::{evaluate_policy, train, Agent, Algorithm, TrainError};
use crate::report::{heatmap, HeatmapGrid, ReportError, RunSummary};
use crate::rundir::{unix_ms, RunDir, RunState, RunStatus};
use crate::service::ServiceError;

/// Failures of a subcommand, grouped by the process exit code they map to.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("evolution failed: {0}")]
    Evolve(#[from] EvolveError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("service: {0}")]
    Service(#[from] ServiceError),
}

impl RunError {
    /// 1 config, 2 io, 3 training, 4 evolution, 5 llm, 6 service.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Io(_) => 2,
            RunError::Train(_) => 3,
            RunError::Evolve(_) => 4,
            RunError::Llm(_) => 5,
            RunError::Service(_) => 6,
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<TrainError> for RunError {
    fn from(e: TrainError) -> Self {
        RunError::Train(e.to_string())
    }
}

impl From<ReportError> for RunError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(e) => RunError::Io(e.to_string()),
            e => RunError::Train(e.to_string()),
        }
    }
}

impl From<NnError> for RunError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(e) => RunError::Io(e.to_string()),
            e => RunError::Io(format!("policy checkpoint: {e}")),
        }
    }
}

fn bad_input(what: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Config(ConfigError::Invalid(vec![format!("{what}: {e}")]))
}

/// Reads a `.cost` file and parses it.
pub fn load_cost(path: &Path) -> Result<CostExpr, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    parse(text.trim()).map_err(|e: DslError| bad_input(&path.display().to_string(), e))
}

/// `<kind>-<unix ms>` unless the config pins an id.
pub fn run_id_for(cfg: &RunConfig, kind: &str) -> String {
    cfg.output.run_id.clone().unwrap_or_else(|| format!("{kind}-{}", unix_ms()))
}

fn open_run(cfg: &RunConfig, id: &str) -> Result<RunDir, RunError> {
    std::fs::create_dir_all(&cfg.output.root)?;
    let run = RunDir::create(&cfg.output.root, id)?;
    let mut echo = cfg.clone();
    echo.output.run_id = Some(id.to_string());
    run.write_json("run.json", &echo)?;
    Ok(run)
}

fn save_policy(run: &RunDir, name: &str, policy: &crate::nn::GaussianPolicy) -> Result<(), RunError> {
    let mut w = BufWriter::new(File::create(run.path().join(name))?);
    write_checkpoint(policy, &mut w)?;
    Ok(())
}

fn finish<T>(run: &RunDir, kind: &str, iteration: usize, result: Result<T, RunError>) -> Result<T, RunError> {
    let (state, message) = match &result {
        Ok(_) => (RunState::Completed, None),
        Err(e) => (RunState::Failed, Some(e.to_string())),
    };
    run.set_status(&RunStatus {
        kind: kind.into(),
        state,
        iteration,
        message,
    })?;
    result
}

#[derive(Debug)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// One training job, with an optional shaping expression, followed by a
/// deterministic evaluation. Writes `summary.json`, `curves.csv`,
/// `policy.ckpt`, and `run.json`.
pub fn train_run(cfg: &RunConfig, algo: Algorithm, cost: Option<&CostExpr>, run_id: &str) -> Result<TrainRun, RunError> {
    let run = open_run(cfg, run_id)?;
    run.set_status(&RunStatus {
        kind: "train".into(),
        state: RunState::Running,
        iteration: 0,
        message: None,
    })?;
    if let Some(c) = cost {
        run.write_text("shaping.cost", &format!("{c}\n"))?;
    }
    let result = (|| {
        let agent = Agent::new(&cfg.ppo, &algo, cfg.ppo.seed)?;
        let report = train(&cfg.env, agent, &cfg.ppo, &algo, cost, None)?;
        let eval = evaluate_policy(&cfg.env, &report.agent.policy, &cfg.ppo, cfg.train.eval_episodes, cfg.train.eval_seed)?;
        let summary = RunSummary::new(&report, &eval)?;
        run.write_json("summary.json", &summary)?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        run.write_text("curves.csv", &String::from_utf8_lossy(&csv))?;
        save_policy(&run, "policy.ckpt", &report.agent.policy)?;
        run.audit(json!({"event": "train_finished", "algorithm": summary.algorithm, "tcr": summary.tcr, "her": summary.her}))?;
        Ok(summary)
    })();
    let summary = finish(&run, "train", cfg.ppo.epochs, result)?;
    Ok(TrainRun {
        dir: run.path().to_path_buf(),
        summary,
    })
}

/// The reviewer named by `review.mode`. Remote review needs the queue the
/// service is serving.
pub fn reviewer_for(cfg: &RunConfig, run_id: &str, queue: Option<Arc<ReviewQueue>>) -> Result<Box<dyn Reviewer>, RunError> {
    Ok(match cfg.review.mode {
        ReviewMode::Auto => Box::new(AutoReviewer),
        ReviewMode::Interactive => Box::new(InteractiveReviewer::new(
            std::io::BufReader::new(std::io::stdin()),
            std::io::stderr(),
        )),
        ReviewMode::Remote => {
            let queue = queue.ok_or_else(|| bad_input("review", "mode remote is only available under `serve --evolve`"))?;
            Box::new(RemoteReviewer {
                queue,
                run_id: run_id.to_string(),
                timeout: cfg.review.timeout(),
                fallback: cfg.review.fallback,
            })
        }
    })
}

#[derive(Debug)]
pub struct EvolveRun {
    pub dir: PathBuf,
    pub outcome: EvolveOutcome,
}

/// The full search. Writes `summary.json`, `best.cost`, `best_policy.ckpt`
/// and the audit log next to the per-candidate files.
pub fn evolve_run(cfg: &RunConfig, reviewer: &dyn Reviewer, run_id: &str) -> Result<EvolveRun, RunError> {
    let backend = cfg.backend()?;
    let run = open_run(cfg, run_id)?;
    run.set_status(&RunStatus {
        kind: "evolve".into(),
        state: RunState::Running,
        iteration: 0,
        message: None,
    })?;
    let ctx = EvolveContext {
        env: &cfg.env,
        ppo: &cfg.ppo,
        safety: cfg.requirement(),
        n: cfg.safety.n,
        generator: backend.as_deref(),
        reviewer,
        run: Some(&run),
        run_id: run_id.to_string(),
    };
    let result = evolve(&cfg.evolution, &ctx).map_err(RunError::from).and_then(|outcome| {
        run.write_json("summary.json", &outcome.summary())?;
        if let Some(best) = &outcome.best.f_w_best {
            run.write_text("best.cost", &format!("{best}\n"))?;
        }
        if let Some(p) = &outcome.best_policy {
            save_policy(&run, "best_policy.ckpt", p)?;
        }
        Ok(outcome)
    });
    let outcome = finish(&run, "evolve", cfg.evolution.iterations, result)?;
    Ok(EvolveRun {
        dir: run.path().to_path_buf(),
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: MetricsAggregate,
    pub j_r: Vec<f64>,
    pub j_c: Vec<f64>,
}

/// Deterministic evaluation of a saved policy. Writes nothing.
pub fn eval_checkpoint(cfg: &RunConfig, policy_path: &Path, episodes: usize) -> Result<EvalReport, RunError> {
    if episodes == 0 {
        return Err(bad_input("episodes", "must be >= 1"));
    }
    let file = File::open(policy_path).map_err(|e| RunError::Io(format!("{}: {e}", policy_path.display())))?;
    let policy = read_checkpoint(std::io::BufReader::new(file))?;
    let started = std::time::Instant::now();
    let eps = evaluate_policy(&cfg.env, &policy, &cfg.ppo, episodes, cfg.train.eval_seed)?;
    let metrics = MetricsAggregate::from_episodes(&eps, started.elapsed().as_secs_f64())
        .map_err(|e| RunError::Train(e.to_string()))?;
    Ok(EvalReport {
        metrics,
        j_r: eps.iter().map(|e| e.j_r).collect(),
        j_c: eps.iter().map(|e| e.j_c).collect(),
    })
}

/// Renders `cost` over the arena to CSV, and optionally to a PGM image.
pub fn heatmap_files(
    cfg: &RunConfig,
    cost: &CostExpr,
    resolution: usize,
    csv: &Path,
    pgm: Option<&Path>,
) -> Result<HeatmapGrid, RunError> {
    let grid = heatmap(cost, &cfg.env, resolution)?;
    std::fs::write(csv, grid.to_csv()).map_err(|e| RunError::Io(format!("{}: {e}", csv.display())))?;
    if let Some(p) = pgm {
        let mut w = BufWriter::new(File::create(p).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))?);
        grid.write_pgm(&mut w)?;
    }
    Ok(grid)
}
