//! Candidate filtering: a mechanical syntax and validity check followed by a
//! review step that rejects functions contradicting the safety intent.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{evaluate, parse_with_limits, CostExpr, DslError, FeatureMap, Limits};
use crate::env::EnvConfig;
use crate::fpe::{MetricsAggregate, SCORE_FEATURES};

/// Values above this magnitude draw an `unbounded-magnitude` warning.
pub const MAGNITUDE_WARNING: f64 = 1e4;

pub const DEFAULT_REVIEW_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EcfError {
    #[error("illegal status transition {from:?} -> {to:?} for `{id}`")]
    IllegalTransition {
        id: String,
        from: CandidateStatus,
        to: CandidateStatus,
    },
    #[error("unknown candidate `{0}`")]
    UnknownCandidate(String),
    #[error("candidate `{0}` was already decided")]
    AlreadyDecided(String),
    #[error("review failed: {0}")]
    Review(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Llm,
    Seed,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Generated,
    SyntaxFailed,
    LintFailed,
    PendingReview,
    Approved,
    Rejected,
    Evaluated,
}

impl CandidateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateStatus::Generated => "generated",
            CandidateStatus::SyntaxFailed => "syntax_failed",
            CandidateStatus::LintFailed => "lint_failed",
            CandidateStatus::PendingReview => "pending_review",
            CandidateStatus::Approved => "approved",
            CandidateStatus::Rejected => "rejected",
            CandidateStatus::Evaluated => "evaluated",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        use CandidateStatus::*;
        [Generated, SyntaxFailed, LintFailed, PendingReview, Approved, Rejected, Evaluated]
            .into_iter()
            .find(|c| c.as_str() == s)
    }

    pub fn can_become(self, next: CandidateStatus) -> bool {
        use CandidateStatus::*;
        matches!(
            (self, next),
            (Generated, SyntaxFailed | LintFailed | PendingReview)
                | (PendingReview, LintFailed | Approved | Rejected)
                | (Approved, Evaluated)
        )
    }

    /// May this candidate be trained?
    pub fn admits_fpe(self) -> bool {
        self == CandidateStatus::Approved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: String,
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    fn new(rule: &str, severity: Severity, message: impl Into<String>) -> Self {
        Finding {
            rule: rule.to_string(),
            severity,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewerKind {
    Auto,
    Interactive,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub candidate_id: String,
    pub verdict: Verdict,
    pub note: String,
    pub reviewer: ReviewerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub iteration: usize,
    pub source_text: String,
    pub ast: Option<CostExpr>,
    pub origin: Origin,
    pub status: CandidateStatus,
    /// Every status the record has held, oldest first.
    pub history: Vec<CandidateStatus>,
    pub lint_findings: Vec<Finding>,
    pub review: Option<ReviewDecision>,
    pub fpe_metrics: Option<MetricsAggregate>,
    pub fitness: Option<f64>,
    /// Mixture weight, for base candidates that entered a weighted sum.
    pub weight: Option<f64>,
}

impl CandidateRecord {
    pub fn generated(id: impl Into<String>, iteration: usize, source_text: impl Into<String>, origin: Origin) -> Self {
        CandidateRecord {
            id: id.into(),
            iteration,
            source_text: source_text.into(),
            ast: None,
            origin,
            status: CandidateStatus::Generated,
            history: vec![CandidateStatus::Generated],
            lint_findings: Vec::new(),
            review: None,
            fpe_metrics: None,
            fitness: None,
            weight: None,
        }
    }

    pub fn transition(&mut self, next: CandidateStatus) -> Result<(), EcfError> {
        if !self.status.can_become(next) {
            return Err(EcfError::IllegalTransition {
                id: self.id.clone(),
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        self.history.push(next);
        Ok(())
    }

    pub fn has_errors(&self) -> bool {
        self.lint_findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn apply_review(&mut self, decision: ReviewDecision) -> Result<(), EcfError> {
        let next = match decision.verdict {
            Verdict::Approve => CandidateStatus::Approved,
            Verdict::Reject => CandidateStatus::Rejected,
        };
        self.transition(next)?;
        self.review = Some(decision);
        Ok(())
    }
}

/// Value ranges per feature. Drives the fixed probe points of
/// [`syntax_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanges {
    entries: Vec<(String, f64, f64)>,
}

impl FeatureRanges {
    pub fn new(entries: Vec<(String, f64, f64)>) -> Self {
        FeatureRanges { entries }
    }

    pub fn for_env(env: &EnvConfig) -> Self {
        let h = env.arena_half_extent;
        let diag = 2.0 * std::f64::consts::SQRT_2 * h;
        let max_r = env.hazards.iter().map(|c| c.radius).fold(0.0, f64::max);
        let step = env.max_speed * env.dt;
        let table = [
            ("x", -h, h),
            ("y", -h, h),
            ("vx", -env.max_speed, env.max_speed),
            ("vy", -env.max_speed, env.max_speed),
            ("goal_dx", -2.0 * h, 2.0 * h),
            ("goal_dy", -2.0 * h, 2.0 * h),
            ("dist_goal", 0.0, diag),
            ("dist_hazard_min", -max_r, diag),
            ("in_hazard", 0.0, 1.0),
            ("speed", 0.0, env.max_speed),
            ("progress", -step, step),
        ];
        FeatureRanges::new(table.iter().map(|(n, lo, hi)| (n.to_string(), *lo, *hi)).collect())
    }

    /// Ranges for score expressions: rates in [0, 1], returns and costs
    /// spanning a generous band, `n` at its default.
    pub fn for_scores(d: f64, n: f64) -> Self {
        let table = [
            ("avg_return", -100.0, 100.0),
            ("avg_cost", 0.0, 100.0),
            ("tcr", 0.0, 1.0),
            ("her", 0.0, 1.0),
            ("d", d, d),
            ("n", n, n),
        ];
        debug_assert_eq!(table.len(), SCORE_FEATURES.len());
        FeatureRanges::new(table.iter().map(|(k, lo, hi)| (k.to_string(), *lo, *hi)).collect())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _, _)| n.as_str()).collect()
    }

    /// Sixteen fixed points: the all-low and all-high corners, thirteen mixed
    /// corners, and the centroid.
    pub fn probe_maps(&self) -> Vec<FeatureMap> {
        let mut maps = Vec::with_capacity(16);
        let patterns = [0usize, 15, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13];
        for p in patterns {
            let mut m = FeatureMap::new();
            for (i, (name, lo, hi)) in self.entries.iter().enumerate() {
                let high = (p >> (i % 4)) & 1 == 1;
                m.insert(name.clone(), if high { *hi } else { *lo }).expect("ranges are finite");
            }
            maps.push(m);
        }
        let mut centroid = FeatureMap::new();
        for (name, lo, hi) in &self.entries {
            centroid.insert(name.clone(), 0.5 * (lo + hi)).expect("ranges are finite");
        }
        maps.push(centroid);
        maps
    }
}

/// First gate: parse, check the registry, probe for finite values.
pub fn syntax_check(
    id: impl Into<String>,
    iteration: usize,
    text: &str,
    origin: Origin,
    ranges: &FeatureRanges,
    limits: Limits,
) -> CandidateRecord {
    let mut rec = CandidateRecord::generated(id, iteration, text, origin);
    let ast = match parse_with_limits(text, limits) {
        Ok(ast) => ast,
        Err(e) => {
            let rule = match e {
                DslError::LimitExceeded { .. } => "limit-exceeded",
                _ => "syntax",
            };
            rec.lint_findings.push(Finding::new(rule, Severity::Error, e.to_string()));
            rec.transition(CandidateStatus::SyntaxFailed).expect("fresh record");
            return rec;
        }
    };
    let registry = ranges.names();
    let unknown: Vec<String> = ast
        .free_features()
        .into_iter()
        .filter(|f| !registry.contains(&f.as_str()))
        .collect();
    rec.ast = Some(ast);
    if !unknown.is_empty() {
        for f in unknown {
            rec.lint_findings
                .push(Finding::new("unknown-feature", Severity::Error, format!("`{f}` is not a known feature")));
        }
        rec.transition(CandidateStatus::LintFailed).expect("fresh record");
        return rec;
    }
    let ast = rec.ast.as_ref().expect("set above");
    for (i, probe) in ranges.probe_maps().iter().enumerate() {
        let bad = match evaluate(ast, probe) {
            Ok(v) if v.is_finite() => None,
            Ok(v) => Some(format!("probe {i} produced {v}")),
            Err(e) => Some(format!("probe {i}: {e}")),
        };
        if let Some(msg) = bad {
            rec.lint_findings.push(Finding::new("non-finite", Severity::Error, msg));
            rec.transition(CandidateStatus::LintFailed).expect("fresh record");
            return rec;
        }
    }
    rec.transition(CandidateStatus::PendingReview).expect("fresh record");
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LintSettings {
    pub probes: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for LintSettings {
    fn default() -> Self {
        LintSettings {
            probes: 64,
            margin: 0.0,
            seed: 0xecf,
        }
    }
}

fn sample_in_hazards(env: &EnvConfig, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let total: f64 = env.hazards.iter().map(|c| c.radius * c.radius).sum();
    loop {
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = env.hazards[env.hazards.len() - 1];
        for c in &env.hazards {
            if pick < c.radius * c.radius {
                chosen = *c;
                break;
            }
            pick -= c.radius * c.radius;
        }
        let r = chosen.radius * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let p = [chosen.center[0] + r * theta.cos(), chosen.center[1] + r * theta.sin()];
        if env.in_hazard(p) {
            return p;
        }
    }
}

fn sample_outside(env: &EnvConfig, rng: &mut ChaCha8Rng) -> Option<[f64; 2]> {
    let h = env.arena_half_extent;
    (0..10_000).find_map(|_| {
        let p = [rng.gen_range(-h..=h), rng.gen_range(-h..=h)];
        (!env.in_hazard(p)).then_some(p)
    })
}

/// Second gate, automatic part: probe the candidate inside and outside the
/// hazards with the robot at rest.
pub fn semantic_lint(ast: &CostExpr, env: &EnvConfig, settings: &LintSettings) -> Vec<Finding> {
    let mut findings = Vec::new();
    if env.hazards.is_empty() || settings.probes == 0 {
        return findings;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut inside = Vec::with_capacity(settings.probes);
    let mut outside = Vec::with_capacity(settings.probes);
    for _ in 0..settings.probes {
        inside.push(sample_in_hazards(env, &mut rng));
        if let Some(p) = sample_outside(env, &mut rng) {
            outside.push(p);
        }
    }
    let eval_all = |pts: &[[f64; 2]]| -> Result<Vec<f64>, DslError> {
        pts.iter().map(|p| evaluate(ast, &env.features_at(*p))).collect()
    };
    let (vin, vout) = match (eval_all(&inside), eval_all(&outside)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            findings.push(Finding::new("evaluation", Severity::Error, e.to_string()));
            return findings;
        }
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (mi, mo) = (mean(&vin), mean(&vout));
    if !vout.is_empty() && mi > mo + settings.margin {
        findings.push(Finding::new(
            "rewards-hazard",
            Severity::Error,
            format!("mean value inside hazards {mi:.4} exceeds mean outside {mo:.4}"),
        ));
    }
    if let Some(peak) = vin.iter().chain(&vout).map(|v| v.abs()).reduce(f64::max) {
        if peak > MAGNITUDE_WARNING {
            findings.push(Finding::new(
                "unbounded-magnitude",
                Severity::Warning,
                format!("|value| reaches {peak:.3e}"),
            ));
        }
    }
    findings
}

pub trait Reviewer: Send + Sync {
    fn kind(&self) -> ReviewerKind;
    fn review(&self, record: &CandidateRecord) -> Result<ReviewDecision, EcfError>;
}

/// Approves exactly the candidates without error findings.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoReviewer;

impl Reviewer for AutoReviewer {
    fn kind(&self) -> ReviewerKind {
        ReviewerKind::Auto
    }

    fn review(&self, record: &CandidateRecord) -> Result<ReviewDecision, EcfError> {
        let errors: Vec<&str> = record
            .lint_findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.rule.as_str())
            .collect();
        let (verdict, note) = if errors.is_empty() {
            (Verdict::Approve, "no error findings".to_string())
        } else {
            (Verdict::Reject, format!("error findings: {}", errors.join(", ")))
        };
        Ok(ReviewDecision {
            candidate_id: record.id.clone(),
            verdict,
            note,
            reviewer: ReviewerKind::Auto,
        })
    }
}

/// Asks on a terminal-like stream. End of input falls back to the auto verdict.
pub struct InteractiveReviewer<R, W> {
    io: Mutex<(R, W)>,
}

impl<R: BufRead + Send, W: Write + Send> InteractiveReviewer<R, W> {
    pub fn new(input: R, output: W) -> Self {
        InteractiveReviewer {
            io: Mutex::new((input, output)),
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> Reviewer for InteractiveReviewer<R, W> {
    fn kind(&self) -> ReviewerKind {
        ReviewerKind::Interactive
    }

    fn review(&self, record: &CandidateRecord) -> Result<ReviewDecision, EcfError> {
        let mut guard = self.io.lock().map_err(|_| EcfError::Review("terminal lock poisoned".into()))?;
        let (input, output) = &mut *guard;
        let io_err = |e: std::io::Error| EcfError::Review(e.to_string());
        writeln!(output, "candidate {} ({:?}): {}", record.id, record.origin, record.source_text).map_err(io_err)?;
        for f in &record.lint_findings {
            writeln!(output, "  [{:?}] {}: {}", f.severity, f.rule, f.message).map_err(io_err)?;
        }
        loop {
            write!(output, "approve? [y/n] ").map_err(io_err)?;
            output.flush().map_err(io_err)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io_err)? == 0 {
                let mut d = AutoReviewer.review(record)?;
                d.note = format!("input closed; {}", d.note);
                return Ok(d);
            }
            let verdict = match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => Verdict::Approve,
                "n" | "no" => Verdict::Reject,
                _ => continue,
            };
            return Ok(ReviewDecision {
                candidate_id: record.id.clone(),
                verdict,
                note: String::new(),
                reviewer: ReviewerKind::Interactive,
            });
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendingEntry {
    pub run_id: String,
    pub record: CandidateRecord,
}

#[derive(Debug, Default)]
struct QueueState {
    pending: BTreeMap<String, PendingEntry>,
    decided: BTreeMap<String, ReviewDecision>,
}

/// Hand-off point between the orchestrator and remote reviewers. Decisions
/// are accepted once per candidate id.
#[derive(Debug, Default)]
pub struct ReviewQueue {
    state: Mutex<QueueState>,
    changed: Condvar,
}

impl ReviewQueue {
    pub fn new() -> Self {
        ReviewQueue::default()
    }

    pub fn park(&self, run_id: &str, record: &CandidateRecord) {
        let mut s = self.state.lock().expect("queue lock");
        s.pending.insert(
            record.id.clone(),
            PendingEntry {
                run_id: run_id.to_string(),
                record: record.clone(),
            },
        );
        self.changed.notify_all();
    }

    pub fn pending(&self) -> Vec<PendingEntry> {
        self.state.lock().expect("queue lock").pending.values().cloned().collect()
    }

    pub fn get_pending(&self, id: &str) -> Option<PendingEntry> {
        self.state.lock().expect("queue lock").pending.get(id).cloned()
    }

    pub fn decision(&self, id: &str) -> Option<ReviewDecision> {
        self.state.lock().expect("queue lock").decided.get(id).cloned()
    }

    /// Records a remote verdict. Fails for unknown ids and for ids that
    /// already carry a decision.
    pub fn decide(&self, id: &str, verdict: Verdict, note: &str) -> Result<(String, ReviewDecision), EcfError> {
        let mut s = self.state.lock().expect("queue lock");
        if s.decided.contains_key(id) {
            return Err(EcfError::AlreadyDecided(id.to_string()));
        }
        let entry = s
            .pending
            .remove(id)
            .ok_or_else(|| EcfError::UnknownCandidate(id.to_string()))?;
        let d = ReviewDecision {
            candidate_id: id.to_string(),
            verdict,
            note: note.to_string(),
            reviewer: ReviewerKind::Remote,
        };
        s.decided.insert(id.to_string(), d.clone());
        self.changed.notify_all();
        Ok((entry.run_id, d))
    }

    /// Blocks until `id` is decided or `timeout` passes. On timeout the
    /// fallback decision is recorded so later remote verdicts are refused.
    pub fn wait(&self, id: &str, timeout: Duration, fallback: impl FnOnce() -> ReviewDecision) -> (ReviewDecision, bool) {
        let deadline = Instant::now() + timeout;
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(d) = s.decided.get(id) {
                return (d.clone(), false);
            }
            let now = Instant::now();
            if now >= deadline {
                s.pending.remove(id);
                let d = fallback();
                s.decided.insert(id.to_string(), d.clone());
                return (d, true);
            }
            s = self.changed.wait_timeout(s, deadline - now).expect("queue lock").0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutFallback {
    #[default]
    Auto,
    Reject,
}

/// Parks candidates on a [`ReviewQueue`] and waits for an API decision.
pub struct RemoteReviewer {
    pub queue: Arc<ReviewQueue>,
    pub run_id: String,
    pub timeout: Duration,
    pub fallback: TimeoutFallback,
}

impl Reviewer for RemoteReviewer {
    fn kind(&self) -> ReviewerKind {
        ReviewerKind::Remote
    }

    fn review(&self, record: &CandidateRecord) -> Result<ReviewDecision, EcfError> {
        self.queue.park(&self.run_id, record);
        let fallback = self.fallback;
        let (d, _timed_out) = self.queue.wait(&record.id, self.timeout, || {
            let mut d = match fallback {
                TimeoutFallback::Auto => AutoReviewer.review(record).expect("auto review is total"),
                TimeoutFallback::Reject => ReviewDecision {
                    candidate_id: record.id.clone(),
                    verdict: Verdict::Reject,
                    note: String::new(),
                    reviewer: ReviewerKind::Auto,
                },
            };
            d.note = format!("review timed out; fallback verdict ({})", d.note);
            d
        });
        Ok(d)
    }
}

/// Knobs for [`gate`].
#[derive(Debug, Clone)]
pub struct GateSettings {
    pub env: EnvConfig,
    pub ranges: FeatureRanges,
    pub limits: Limits,
    pub lint: LintSettings,
}

impl GateSettings {
    pub fn for_env(env: &EnvConfig) -> Self {
        GateSettings {
            env: env.clone(),
            ranges: FeatureRanges::for_env(env),
            limits: Limits::default(),
            lint: LintSettings::default(),
        }
    }
}

/// Runs both gates. The returned record is in a terminal filtering state:
/// syntax_failed, lint_failed, approved or rejected.
pub fn gate(
    id: impl Into<String>,
    iteration: usize,
    text: &str,
    origin: Origin,
    settings: &GateSettings,
    reviewer: &dyn Reviewer,
) -> Result<CandidateRecord, EcfError> {
    let mut rec = syntax_check(id, iteration, text, origin, &settings.ranges, settings.limits);
    if rec.status != CandidateStatus::PendingReview {
        return Ok(rec);
    }
    let ast = rec.ast.as_ref().expect("pending records carry an ast");
    let findings = semantic_lint(ast, &settings.env, &settings.lint);
    rec.lint_findings.extend(findings);
    let decision = reviewer.review(&rec)?;
    rec.apply_review(decision)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(text: &str) -> CandidateRecord {
        let env = EnvConfig::default();
        syntax_check("c", 1, text, Origin::Llm, &FeatureRanges::for_env(&env), Limits::default())
    }

    fn lint(text: &str) -> Vec<Finding> {
        let ast = crate::dsl::parse(text).unwrap();
        semantic_lint(&ast, &EnvConfig::default(), &LintSettings::default())
    }

    fn errors(findings: &[Finding]) -> Vec<&str> {
        findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.rule.as_str())
            .collect()
    }

    #[test]
    fn syntax_check_examples() {
        let r = check("min(1.0,");
        assert_eq!(r.status, CandidateStatus::SyntaxFailed);
        assert!(r.ast.is_none());
        assert!(r.lint_findings[0].message.contains("offset"));

        let r = check("dist_to_moon * 2");
        assert_eq!(r.status, CandidateStatus::LintFailed);
        assert_eq!(r.lint_findings[0].rule, "unknown-feature");

        let r = check("-(1.0 - min(dist_hazard_min, 1.0))");
        assert_eq!(r.status, CandidateStatus::PendingReview);
        assert!(r.ast.is_some());
        assert_eq!(r.history, vec![CandidateStatus::Generated, CandidateStatus::PendingReview]);
    }

    #[test]
    fn oversized_candidates_fail_syntax() {
        let text = vec!["x"; 600].join(" + ");
        let r = check(&text);
        assert_eq!(r.status, CandidateStatus::SyntaxFailed);
        assert_eq!(r.lint_findings[0].rule, "limit-exceeded");
    }

    #[test]
    fn sixteen_distinct_probes() {
        let maps = FeatureRanges::for_env(&EnvConfig::default()).probe_maps();
        assert_eq!(maps.len(), 16);
        for (i, a) in maps.iter().enumerate() {
            for b in &maps[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn lint_examples() {
        assert!(errors(&lint("-in_hazard")).is_empty());
        assert_eq!(errors(&lint("+5.0 * in_hazard")), vec!["rewards-hazard"]);
        assert!(errors(&lint("-0.1")).is_empty());
        assert!(lint("exp(50) * in_hazard - exp(60)")
            .iter()
            .any(|f| f.rule == "unbounded-magnitude" && f.severity == Severity::Warning));
    }

    #[test]
    fn lint_is_deterministic() {
        assert_eq!(lint("tanh(dist_hazard_min) - x"), lint("tanh(dist_hazard_min) - x"));
    }

    #[test]
    fn auto_review_rules() {
        let mut r = check("-in_hazard");
        r.lint_findings.push(Finding::new("w", Severity::Warning, "just a warning"));
        assert_eq!(AutoReviewer.review(&r).unwrap().verdict, Verdict::Approve);
        r.lint_findings.push(Finding::new("e", Severity::Error, "bad"));
        assert_eq!(AutoReviewer.review(&r).unwrap().verdict, Verdict::Reject);
    }

    #[test]
    fn transitions_follow_the_lifecycle() {
        let mut r = check("-in_hazard");
        assert!(r.transition(CandidateStatus::Evaluated).is_err());
        r.transition(CandidateStatus::Approved).unwrap();
        r.transition(CandidateStatus::Evaluated).unwrap();
        assert!(r.transition(CandidateStatus::Rejected).is_err());
        let mut failed = check("1 +");
        assert!(failed.transition(CandidateStatus::Approved).is_err());
    }

    #[test]
    fn interactive_reviewer_reads_answers() {
        let rec = check("-in_hazard");
        let input = std::io::Cursor::new(b"maybe\nn\n".to_vec());
        let rev = InteractiveReviewer::new(input, Vec::new());
        let d = rev.review(&rec).unwrap();
        assert_eq!(d.verdict, Verdict::Reject);
        assert_eq!(d.reviewer, ReviewerKind::Interactive);
        let out = String::from_utf8(rev.io.into_inner().unwrap().1).unwrap();
        assert_eq!(out.matches("approve?").count(), 2);
    }

    #[test]
    fn interactive_reviewer_falls_back_on_eof() {
        let rec = check("-in_hazard");
        let rev = InteractiveReviewer::new(std::io::Cursor::new(Vec::new()), std::io::sink());
        let d = rev.review(&rec).unwrap();
        assert_eq!(d.verdict, Verdict::Approve);
        assert_eq!(d.reviewer, ReviewerKind::Auto);
    }

    #[test]
    fn remote_decision_unblocks_reviewer() {
        let queue = Arc::new(ReviewQueue::new());
        let rec = check("-in_hazard");
        let reviewer = RemoteReviewer {
            queue: queue.clone(),
            run_id: "r".into(),
            timeout: Duration::from_secs(30),
            fallback: TimeoutFallback::Auto,
        };
        let handle = std::thread::spawn(move || reviewer.review(&rec).unwrap());
        while queue.pending().is_empty() {
            std::thread::sleep(Duration::from_millis(2));
        }
        let (run, _) = queue.decide("c", Verdict::Reject, "looks wrong").unwrap();
        assert_eq!(run, "r");
        let d = handle.join().unwrap();
        assert_eq!(d.verdict, Verdict::Reject);
        assert_eq!(d.reviewer, ReviewerKind::Remote);
        assert_eq!(queue.decide("c", Verdict::Approve, ""), Err(EcfError::AlreadyDecided("c".into())));
        assert_eq!(queue.decide("zzz", Verdict::Approve, ""), Err(EcfError::UnknownCandidate("zzz".into())));
    }

    #[test]
    fn remote_timeout_uses_fallback() {
        let queue = Arc::new(ReviewQueue::new());
        let reviewer = RemoteReviewer {
            queue: queue.clone(),
            run_id: "r".into(),
            timeout: Duration::from_millis(20),
            fallback: TimeoutFallback::Auto,
        };
        let d = reviewer.review(&check("+5.0 * speed")).unwrap();
        assert_eq!(d.verdict, Verdict::Approve);
        assert!(d.note.contains("timed out"));
        assert!(queue.pending().is_empty());
        assert!(queue.decide("c", Verdict::Reject, "").is_err());
    }

    #[test]
    fn gate_end_states() {
        let s = GateSettings::for_env(&EnvConfig::default());
        let status = |t: &str| gate("g", 1, t, Origin::Seed, &s, &AutoReviewer).unwrap().status;
        assert_eq!(status("-in_hazard"), CandidateStatus::Approved);
        assert_eq!(status("3 * in_hazard"), CandidateStatus::Rejected);
        assert_eq!(status("min(1,"), CandidateStatus::SyntaxFailed);
        assert_eq!(status("fuel"), CandidateStatus::LintFailed);
    }

    #[test]
    fn record_json_round_trip() {
        let s = GateSettings::for_env(&EnvConfig::default());
        let rec = gate("g", 2, "-2 * max(0, 0.3 - dist_hazard_min)", Origin::Llm, &s, &AutoReviewer).unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        let back: CandidateRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
