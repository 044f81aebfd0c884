//! The outer search loop: generate base functions, filter them, score them
//! with short training runs, mix them by normalized fitness, and keep the
//! best mixture.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cmdp::SafetyRequirement;
use crate::dsl::{evaluate, weighted_sum, CostExpr, DslError, Limits};
use crate::ecf::{
    gate, syntax_check, CandidateRecord, CandidateStatus, EcfError, FeatureRanges, GateSettings, LintSettings,
    Origin, ReviewDecision, Reviewer, ReviewerKind, Verdict,
};
use crate::env::EnvConfig;
use crate::fpe::{fpe_run, run_pool, score, EvalPhase, FpeError, FpeJob, MetricsAggregate, ScoreExpr, DEFAULT_EVAL_SEED};
use crate::llm::{generate_candidates, generate_score_expr, judge_scores, ChatBackend, PromptBundle, ScoreChoice};
use crate::nn::GaussianPolicy;
use crate::ppo::PpoConfig;
use crate::rundir::RunDir;

/// Hand-written starting points: an indicator penalty, a smooth penalty
/// near hazard boundaries, and a constant step cost.
pub const DEFAULT_SEED_LIBRARY: [&str; 3] = ["-in_hazard", "-max(0, 0.3 - dist_hazard_min)", "-0.01"];

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("no candidate survived filtering in any of {0} iterations")]
    NoViableCandidate(usize),
    #[error(transparent)]
    Fpe(#[from] FpeError),
    #[error(transparent)]
    Review(#[from] EcfError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("run directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Always the configured `score_expr`.
    #[default]
    Expr,
    /// A fresh score expression from the model every iteration.
    Llm,
    /// The model scores candidates directly.
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub iterations: usize,
    pub population: usize,
    pub t1: usize,
    pub t2: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub seed_library: Vec<String>,
    pub score_source: ScoreSource,
    pub score_expr: ScoreExpr,
    pub workers: usize,
    pub seed: u64,
    pub lint: LintSettings,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            iterations: 3,
            population: 4,
            t1: 5,
            t2: 20,
            eval_episodes: 20,
            eval_seed: DEFAULT_EVAL_SEED,
            seed_library: DEFAULT_SEED_LIBRARY.iter().map(|s| s.to_string()).collect(),
            score_source: ScoreSource::Expr,
            score_expr: ScoreExpr::builtin(),
            workers: 1,
            seed: 0,
            lint: LintSettings::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self, env: &EnvConfig, ppo: &PpoConfig) -> Result<(), EvolveError> {
        let bad = |m: String| Err(EvolveError::Config(m));
        if self.iterations == 0 || self.population == 0 {
            return bad("iterations and population must be >= 1".into());
        }
        if !(0 < self.t1 && self.t1 < self.t2 && self.t2 <= ppo.epochs) {
            return bad(format!(
                "need 0 < t1 < t2 <= ppo.epochs, got t1 {} t2 {} epochs {}",
                self.t1, self.t2, ppo.epochs
            ));
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1".into());
        }
        let ranges = FeatureRanges::for_env(env);
        for (i, text) in self.seed_library.iter().enumerate() {
            let rec = syntax_check(format!("seed-{i}"), 0, text, Origin::Seed, &ranges, Limits::default());
            if rec.status != CandidateStatus::PendingReview {
                let why = rec.lint_findings.first().map(|f| f.message.clone()).unwrap_or_default();
                return bad(format!("seed library entry {i} `{text}` fails the syntax check: {why}"));
            }
        }
        Ok(())
    }

    pub fn early(&self) -> EvalPhase {
        EvalPhase {
            eval_seed: self.eval_seed,
            ..EvalPhase::early(self.t1, self.eval_episodes)
        }
    }

    pub fn late(&self) -> EvalPhase {
        EvalPhase {
            eval_seed: self.eval_seed,
            ..EvalPhase::late(self.t2, self.eval_episodes)
        }
    }
}

/// Shift by the minimum, divide by the shifted sum. Equal scores give
/// uniform weights.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>, DslError> {
    if scores.is_empty() {
        return Err(DslError::InvalidArgument("no scores to normalize".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(DslError::InvalidArgument(format!("non-finite score {s}")));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|s| s - min).collect();
    let total: f64 = shifted.iter().sum();
    if total == 0.0 {
        let k = scores.len() as f64;
        return Ok(vec![1.0 / k; scores.len()]);
    }
    Ok(shifted.iter().map(|s| s / total).collect())
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iteration: usize,
    pub candidate_id: String,
    /// `(base candidate id, weight)` for every term of the mixture.
    pub components: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub f_w_best: Option<CostExpr>,
    /// Starts at minus infinity (serialized as null).
    #[serde(with = "neg_inf_as_null")]
    pub p_best: f64,
    pub provenance: Option<Provenance>,
    pub metrics: Option<MetricsAggregate>,
}

impl Default for BestRecord {
    fn default() -> Self {
        BestRecord {
            f_w_best: None,
            p_best: f64::NEG_INFINITY,
            provenance: None,
            metrics: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    Completed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: usize,
    pub status: IterationStatus,
    pub candidates: Vec<String>,
    pub score_expr: Option<String>,
    pub weights: Vec<(String, f64)>,
    pub weighted_id: Option<String>,
    pub p_tmp: Option<f64>,
    #[serde(with = "neg_inf_as_null")]
    pub p_best: f64,
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub best: BestRecord,
    pub best_policy: Option<GaussianPolicy>,
    pub iterations: Vec<IterationState>,
    pub candidates: Vec<CandidateRecord>,
    pub audit: Vec<Value>,
    pub wall_clock_s: f64,
}

/// Serialized as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub best: BestRecord,
    pub iterations: Vec<IterationState>,
    pub t_algo: f64,
}

impl EvolveOutcome {
    pub fn summary(&self) -> EvolveSummary {
        EvolveSummary {
            best: self.best.clone(),
            iterations: self.iterations.clone(),
            t_algo: self.wall_clock_s,
        }
    }
}

pub struct EvolveContext<'a> {
    pub env: &'a EnvConfig,
    pub ppo: &'a PpoConfig,
    pub safety: SafetyRequirement,
    /// Infeasibility penalty of the constrained fitness.
    pub n: f64,
    pub generator: Option<&'a dyn ChatBackend>,
    pub reviewer: &'a dyn Reviewer,
    pub run: Option<&'a RunDir>,
    /// Prefix of every candidate id.
    pub run_id: String,
}

struct Recorder<'a> {
    run: Option<&'a RunDir>,
    events: Vec<Value>,
}

impl Recorder<'_> {
    fn log(&mut self, event: Value) -> Result<(), EvolveError> {
        if let Some(run) = self.run {
            run.audit(event.clone())?;
        }
        self.events.push(event);
        Ok(())
    }

    fn record(&mut self, rec: &CandidateRecord, from: usize) -> Result<(), EvolveError> {
        for pair in rec.history[from.saturating_sub(1)..].windows(2) {
            let mut e = json!({
                "event": "status",
                "candidate": rec.id,
                "iteration": rec.iteration,
                "from": pair[0].as_str(),
                "to": pair[1].as_str(),
            });
            if pair[1] == CandidateStatus::Approved || pair[1] == CandidateStatus::Rejected {
                if let Some(d) = &rec.review {
                    e["reviewer"] = json!(d.reviewer);
                    e["note"] = json!(d.note);
                }
            }
            self.log(e)?;
        }
        if let Some(run) = self.run {
            run.write_candidate(rec)?;
        }
        Ok(())
    }
}

fn pad_from_library(texts: &mut Vec<(String, Origin)>, library: &[String], k: usize) {
    if library.is_empty() {
        return;
    }
    let mut i = 0;
    while texts.len() < k {
        texts.push((library[i % library.len()].clone(), Origin::Seed));
        i += 1;
    }
}

/// Runs the search. Returns the best mixture found, or
/// [`EvolveError::NoViableCandidate`] if every iteration was skipped.
pub fn evolve(config: &EvolutionConfig, ctx: &EvolveContext) -> Result<EvolveOutcome, EvolveError> {
    config.validate(ctx.env, ctx.ppo)?;
    let started = Instant::now();
    let d = ctx.safety.effective_limit();
    let n = ctx.n;
    let k = config.population;
    let mut rec = Recorder {
        run: ctx.run,
        events: Vec::new(),
    };
    let gate_settings = GateSettings {
        lint: config.lint,
        ..GateSettings::for_env(ctx.env)
    };
    let mut best = BestRecord::default();
    let mut best_policy = None;
    let mut states = Vec::new();
    let mut all_records = Vec::new();
    rec.log(json!({"event": "run_started", "iterations": config.iterations, "population": k}))?;

    for it in 1..=config.iterations {
        let bundle = PromptBundle::for_task(ctx.env, &ctx.safety, best.f_w_best.as_ref());

        // Base functions.
        let mut texts: Vec<(String, Origin)> = Vec::new();
        if it == 1 || ctx.generator.is_none() {
            texts.extend(config.seed_library.iter().take(k).map(|s| (s.clone(), Origin::Seed)));
        }
        if let Some(gen) = ctx.generator {
            let want = k - texts.len();
            if want > 0 {
                match generate_candidates(&bundle, want, gen) {
                    Ok(blocks) => texts.extend(blocks.into_iter().map(|b| (b, Origin::Llm))),
                    Err(e) => rec.log(json!({"event": "generation_failed", "iteration": it, "error": e.to_string()}))?,
                }
            }
        }
        pad_from_library(&mut texts, &config.seed_library, k);
        texts.truncate(k);

        // Filtering.
        let mut records = Vec::with_capacity(texts.len());
        for (j, (text, origin)) in texts.iter().enumerate() {
            let id = format!("{}-i{it}-c{j}", ctx.run_id);
            rec.log(json!({"event": "generated", "candidate": id, "iteration": it, "origin": origin, "text": text}))?;
            let r = gate(id, it, text, *origin, &gate_settings, ctx.reviewer)?;
            rec.record(&r, 1)?;
            records.push(r);
        }
        let survivors: Vec<usize> = (0..records.len()).filter(|&i| records[i].status.admits_fpe()).collect();
        if survivors.is_empty() {
            rec.log(json!({"event": "iteration_skipped", "iteration": it, "reason": "no candidate survived filtering"}))?;
            states.push(IterationState {
                iteration: it,
                status: IterationStatus::Skipped,
                candidates: records.iter().map(|r| r.id.clone()).collect(),
                score_expr: None,
                weights: Vec::new(),
                weighted_id: None,
                p_tmp: None,
                p_best: best.p_best,
            });
            all_records.extend(records);
            continue;
        }

        // Early evaluation.
        let early = config.early();
        let jobs: Vec<FpeJob> = survivors
            .iter()
            .map(|&i| FpeJob {
                candidate: records[i].ast.clone(),
                phase: early,
            })
            .collect();
        for &i in &survivors {
            rec.log(json!({"event": "fpe_start", "candidate": records[i].id, "phase": "early", "epochs": early.epochs}))?;
        }
        let results = run_pool(&jobs, ctx.env, ctx.ppo, config.seed, config.workers);
        let mut outcomes = Vec::with_capacity(results.len());
        for (&i, res) in survivors.iter().zip(results) {
            match res {
                Ok(out) => outcomes.push(Some(out)),
                Err(e) if e.is_soft() => {
                    rec.log(json!({"event": "fpe_soft_failure", "candidate": records[i].id, "error": e.to_string()}))?;
                    outcomes.push(None);
                }
                Err(e) => return Err(e.into()),
            }
        }

        // Scores.
        let score_expr = match config.score_source {
            ScoreSource::Llm => match ctx.generator {
                Some(gen) => match generate_score_expr(&bundle, gen) {
                    Ok(ScoreChoice::Generated(e)) => {
                        rec.log(json!({"event": "score_expr", "iteration": it, "source": "llm", "expr": e.to_string()}))?;
                        e
                    }
                    Ok(ScoreChoice::Fallback { reason }) => {
                        rec.log(json!({"event": "score_fallback", "iteration": it, "reason": reason}))?;
                        ScoreExpr::builtin()
                    }
                    Err(e) => {
                        rec.log(json!({"event": "score_fallback", "iteration": it, "reason": e.to_string()}))?;
                        ScoreExpr::builtin()
                    }
                },
                None => {
                    rec.log(json!({"event": "score_fallback", "iteration": it, "reason": "no generator configured"}))?;
                    ScoreExpr::builtin()
                }
            },
            _ => config.score_expr.clone(),
        };
        let mut scores = Vec::with_capacity(survivors.len());
        for out in &outcomes {
            scores.push(match out {
                Some(o) => score(&o.metrics, &score_expr, d, n)?,
                None => -n,
            });
        }
        if config.score_source == ScoreSource::LlmJudge {
            let judged: Vec<(String, MetricsAggregate)> = survivors
                .iter()
                .zip(&outcomes)
                .filter_map(|(&i, o)| o.as_ref().map(|o| (records[i].source_text.clone(), o.metrics)))
                .collect();
            let verdict = match ctx.generator {
                Some(gen) if !judged.is_empty() => judge_scores(&bundle, &judged, gen).map_err(|e| e.to_string()),
                Some(_) => Err("nothing to judge".to_string()),
                None => Err("no generator configured".to_string()),
            };
            match verdict {
                Ok(js) => {
                    let mut it_js = js.into_iter();
                    for (s, o) in scores.iter_mut().zip(&outcomes) {
                        if o.is_some() {
                            *s = it_js.next().expect("one judged score per evaluated candidate");
                        }
                    }
                    rec.log(json!({"event": "judge_scores", "iteration": it, "scores": scores}))?;
                }
                Err(reason) => rec.log(json!({"event": "score_fallback", "iteration": it, "reason": reason}))?,
            }
        }
        for ((&i, out), s) in survivors.iter().zip(&outcomes).zip(&scores) {
            let r = &mut records[i];
            let before = r.history.len();
            r.fpe_metrics = out.as_ref().map(|o| o.metrics);
            r.fitness = Some(*s);
            r.transition(CandidateStatus::Evaluated)?;
            rec.record(r, before)?;
            if let (Some(run), Some(o)) = (ctx.run, out) {
                run.append_metrics(it, &r.id, &early, &o.metrics, *s)?;
                run.append_curves(&r.id, &early, &o.curves)?;
            }
        }

        // Mixture.
        let weights = normalize_scores(&scores)?;
        let exprs: Vec<CostExpr> = survivors
            .iter()
            .map(|&i| records[i].ast.clone().expect("approved records carry an ast"))
            .collect();
        let f_w = weighted_sum(&exprs, &weights)?;
        f_w.check_limits(Limits::composite(exprs.len()))?;
        let mut worst = 0.0f64;
        for probe in gate_settings.ranges.probe_maps() {
            let direct: f64 = exprs
                .iter()
                .zip(&weights)
                .map(|(e, w)| evaluate(e, &probe).map(|v| w * v))
                .sum::<Result<f64, _>>()?;
            let mixed = evaluate(&f_w, &probe)?;
            worst = worst.max((mixed - direct).abs() / direct.abs().max(1.0));
        }
        let components: Vec<(String, f64)> =
            survivors.iter().zip(&weights).map(|(&i, w)| (records[i].id.clone(), *w)).collect();
        for (&i, w) in survivors.iter().zip(&weights) {
            records[i].weight = Some(*w);
            if let Some(run) = ctx.run {
                run.write_candidate(&records[i])?;
            }
        }
        rec.log(json!({"event": "weights", "iteration": it, "score_expr": score_expr.to_string(),
            "components": components, "max_rel_error": worst}))?;

        let w_id = format!("{}-i{it}-w", ctx.run_id);
        let mut w_rec = CandidateRecord::generated(&w_id, it, f_w.to_string(), Origin::Weighted);
        w_rec.ast = Some(f_w.clone());
        w_rec.transition(CandidateStatus::PendingReview)?;
        w_rec.apply_review(ReviewDecision {
            candidate_id: w_id.clone(),
            verdict: Verdict::Approve,
            note: "weighted sum of approved candidates".into(),
            reviewer: ReviewerKind::Auto,
        })?;

        // Late evaluation.
        let late = config.late();
        rec.log(json!({"event": "fpe_start", "candidate": w_id, "phase": "late", "epochs": late.epochs}))?;
        let (p_tmp, late_out) = match fpe_run(Some(&f_w), &late, ctx.env, ctx.ppo, config.seed) {
            Ok(o) => (score(&o.metrics, &score_expr, d, n)?, Some(o)),
            Err(e) if e.is_soft() => {
                rec.log(json!({"event": "fpe_soft_failure", "candidate": w_id, "error": e.to_string()}))?;
                (-n, None)
            }
            Err(e) => return Err(e.into()),
        };
        w_rec.fpe_metrics = late_out.as_ref().map(|o| o.metrics);
        w_rec.fitness = Some(p_tmp);
        w_rec.transition(CandidateStatus::Evaluated)?;
        rec.record(&w_rec, 1)?;
        if let (Some(run), Some(o)) = (ctx.run, &late_out) {
            run.append_metrics(it, &w_id, &late, &o.metrics, p_tmp)?;
            run.append_curves(&w_id, &late, &o.curves)?;
        }

        let improved = p_tmp > best.p_best;
        if improved {
            best = BestRecord {
                f_w_best: Some(f_w),
                p_best: p_tmp,
                provenance: Some(Provenance {
                    iteration: it,
                    candidate_id: w_id.clone(),
                    components: components.clone(),
                }),
                metrics: late_out.as_ref().map(|o| o.metrics),
            };
            best_policy = late_out.map(|o| o.policy);
        }
        rec.log(json!({"event": "iteration", "iteration": it, "p_tmp": p_tmp,
            "p_best": best.p_best, "improved": improved}))?;
        states.push(IterationState {
            iteration: it,
            status: IterationStatus::Completed,
            candidates: records.iter().map(|r| r.id.clone()).collect(),
            score_expr: Some(score_expr.to_string()),
            weights: components,
            weighted_id: Some(w_id),
            p_tmp: Some(p_tmp),
            p_best: best.p_best,
        });
        all_records.extend(records);
        all_records.push(w_rec);
        if let Some(run) = ctx.run {
            run.set_status(&crate::rundir::RunStatus {
                kind: "evolve".into(),
                state: crate::rundir::RunState::Running,
                iteration: it,
                message: None,
            })?;
        }
    }

    if best.f_w_best.is_none() {
        rec.log(json!({"event": "no_viable_candidate"}))?;
        return Err(EvolveError::NoViableCandidate(config.iterations));
    }
    let wall = started.elapsed().as_secs_f64();
    rec.log(json!({"event": "run_finished", "p_best": best.p_best, "wall_clock_s": wall}))?;
    Ok(EvolveOutcome {
        best,
        best_policy,
        iterations: states,
        candidates: all_records,
        audit: rec.events,
        wall_clock_s: wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecf::AutoReviewer;
    use crate::llm::MockScript;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[2.0, 3.0, 5.0]).unwrap(), vec![0.0, 0.25, 0.75]);
        assert_eq!(normalize_scores(&[7.0, 7.0, 7.0]).unwrap(), vec![1.0 / 3.0; 3]);
        let w = normalize_scores(&[-1e6, 4.0, 6.0]).unwrap();
        let total = 1_000_004.0 + 1_000_006.0;
        assert_eq!(w, vec![0.0, 1_000_004.0 / total, 1_000_006.0 / total]);
        assert!(normalize_scores(&[1.0, f64::NAN]).is_err());
        assert!(normalize_scores(&[]).is_err());
    }

    fn tiny_ppo() -> PpoConfig {
        PpoConfig {
            epochs: 3,
            steps_per_epoch: 300,
            max_episode_steps: 100,
            minibatch_size: 100,
            update_iters: 2,
            hidden_sizes: vec![8],
            ..PpoConfig::default()
        }
    }

    fn tiny_evo(seeds: &[&str], iterations: usize, k: usize) -> EvolutionConfig {
        EvolutionConfig {
            iterations,
            population: k,
            t1: 1,
            t2: 2,
            eval_episodes: 3,
            seed_library: seeds.iter().map(|s| s.to_string()).collect(),
            ..EvolutionConfig::default()
        }
    }

    fn ctx<'a>(env: &'a EnvConfig, ppo: &'a PpoConfig, generator: Option<&'a dyn ChatBackend>) -> EvolveContext<'a> {
        EvolveContext {
            env,
            ppo,
            safety: SafetyRequirement::traditional(10.0).unwrap(),
            n: 1e6,
            generator,
            reviewer: &AutoReviewer,
            run: None,
            run_id: "t".into(),
        }
    }

    #[test]
    fn single_seed_population() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let out = evolve(&tiny_evo(&["-in_hazard"], 1, 1), &ctx(&env, &ppo, None)).unwrap();
        let f = out.best.f_w_best.unwrap();
        assert_eq!(f.to_string(), "1 * -in_hazard");
        assert_eq!(out.best.provenance.unwrap().components, vec![("t-i1-c0".to_string(), 1.0)]);
    }

    #[test]
    fn all_filtered_is_no_viable_candidate() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let mock = MockScript::from_texts(["```\nmin(1,\n```", "```\n5 * in_hazard\n```"]);
        let err = evolve(&tiny_evo(&[], 2, 1), &ctx(&env, &ppo, Some(&mock))).unwrap_err();
        assert!(matches!(err, EvolveError::NoViableCandidate(2)));
    }

    #[test]
    fn best_is_kept_when_later_iteration_is_worse() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        // The second iteration's score function ranks everything at -n.
        let mock = MockScript::from_texts([
            "```\n-in_hazard\n```",
            "```\navg_return\n```",
            "```\n-0.5 * speed\n```",
            "```\n0 - n\n```",
        ]);
        let cfg = EvolutionConfig {
            score_source: ScoreSource::Llm,
            ..tiny_evo(&[], 2, 1)
        };
        let out = evolve(&cfg, &ctx(&env, &ppo, Some(&mock))).unwrap();
        let ps: Vec<f64> = out.iterations.iter().map(|s| s.p_tmp.unwrap()).collect();
        assert_eq!(ps[1], -1e6);
        assert!(ps[0] > ps[1]);
        assert_eq!(out.best.provenance.as_ref().unwrap().iteration, 1);
        assert_eq!(out.best.f_w_best.unwrap().to_string(), "1 * -in_hazard");
        assert_eq!(out.iterations[1].p_best, ps[0]);
        // The second generation prompt carries the iteration-1 best.
        assert!(mock.requests()[2].user.contains("1 * -in_hazard"));
    }

    #[test]
    fn rejected_candidates_never_reach_fpe() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let mock = MockScript::from_texts(["```\n2 * in_hazard\n```\n```\nmin(\n```\n```\n-0.01\n```"]);
        let out = evolve(&tiny_evo(&["-in_hazard"], 1, 4), &ctx(&env, &ppo, Some(&mock))).unwrap();
        let started: Vec<&str> = out
            .audit
            .iter()
            .filter(|e| e["event"] == "fpe_start" && e["phase"] == "early")
            .map(|e| e["candidate"].as_str().unwrap())
            .collect();
        assert_eq!(started, vec!["t-i1-c0", "t-i1-c3"]);
        let statuses: Vec<CandidateStatus> = out.candidates.iter().map(|r| r.status).collect();
        use CandidateStatus::*;
        assert_eq!(statuses, vec![Evaluated, Rejected, SyntaxFailed, Evaluated, Evaluated]);
    }

    #[test]
    fn generation_failure_pads_from_library() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let mock = MockScript::from_texts(["no code here"]);
        let out = evolve(&tiny_evo(&["-0.01"], 1, 2), &ctx(&env, &ppo, Some(&mock))).unwrap();
        assert!(out.audit.iter().any(|e| e["event"] == "generation_failed"));
        let texts: Vec<&str> = out.candidates.iter().take(2).map(|r| r.source_text.as_str()).collect();
        assert_eq!(texts, vec!["-0.01", "-0.01"]);
    }

    #[test]
    fn llm_score_expression_is_used_and_falls_back() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let mock = MockScript::from_texts(["```\n-0.01\n```", "```\ntcr - 5.0*her\n```", "```\n-0.02\n```", "```\nbogus\n```"]);
        let cfg = EvolutionConfig {
            score_source: ScoreSource::Llm,
            ..tiny_evo(&[], 2, 1)
        };
        let out = evolve(&cfg, &ctx(&env, &ppo, Some(&mock))).unwrap();
        assert_eq!(out.iterations[0].score_expr.as_deref(), Some("tcr - 5 * her"));
        assert_eq!(out.iterations[1].score_expr.as_deref(), Some(crate::fpe::BUILTIN_SCORE));
        assert!(out.audit.iter().any(|e| e["event"] == "score_fallback"));
    }

    #[test]
    fn best_record_json() {
        let b = BestRecord::default();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"p_best\":null"));
        let back: BestRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back.p_best, f64::NEG_INFINITY);
    }

    #[test]
    fn validation_rejects_bad_phases_and_seeds() {
        let (env, ppo) = (EnvConfig::default(), tiny_ppo());
        let mut c = tiny_evo(&["-in_hazard"], 1, 1);
        c.t2 = 9;
        assert!(c.validate(&env, &ppo).is_err());
        let c = tiny_evo(&["-in_hazard +"], 1, 1);
        assert!(c.validate(&env, &ppo).is_err());
    }
}
