//! Candidate generation through a chat-completions endpoint or a scripted
//! mock, plus the prompts and the response extraction both share.

mod client;
mod mock;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::SafetyRequirement;
use crate::dsl::CostExpr;
use crate::env::{feature_registry, EnvConfig};
use crate::fpe::{MetricsAggregate, ScoreExpr, BUILTIN_SCORE, SCORE_FEATURES};

pub use client::{parse_completion, HttpChatClient, LlmEndpointConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use mock::MockScript;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("LLM configuration: {0}")]
    Config(String),
    #[error("request timed out after {0} s")]
    Timeout(f64),
    #[error("endpoint refused credentials (HTTP {0})")]
    Auth(u16),
    #[error("endpoint unavailable after {attempts} attempts (last: {last})")]
    RetryExhausted { attempts: u32, last: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("mock script exhausted after {0} responses")]
    MockExhausted(usize),
    #[error("response contained no fenced code block")]
    EmptyGeneration,
    #[error("invalid prompt bundle: {0}")]
    Bundle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

pub const GRAMMAR_SUMMARY: &str = "\
expr  := term (('+' | '-') term)*
term  := factor (('*' | '/') factor)*
factor:= ('-' | '+')? atom
atom  := number | feature | fn '(' expr (',' expr)* ')' | '(' expr ')'
       | 'if' '(' expr cmp expr ',' expr ',' expr ')'
fn    := min max clip neg abs exp log sqrt tanh step
cmp   := < <= > >= ==
Division, log and sqrt are guarded, so every expression evaluates to a finite number.";

const SYSTEM_PROMPT: &str = "You design cost functions for safe reinforcement learning. \
Answer only with fenced code blocks written in the expression language described by the user. \
Do not write any other code.";

/// Everything the model is told about the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_description: String,
    pub safety_requirement: String,
    pub original_functions: String,
    pub best_so_far: Option<String>,
    pub feature_registry: Vec<String>,
    pub grammar_summary: String,
}

impl PromptBundle {
    pub fn for_task(env: &EnvConfig, safety: &SafetyRequirement, best: Option<&CostExpr>) -> Self {
        let mut task = format!(
            "A point robot moves in a square arena [-{h}, {h}] x [-{h}, {h}] (meters) and must reach a goal circle \
of radius {gr} centered at ({gx}, {gy}). It accelerates with a 2-D action in [-1, 1]^2 (gain {ag}, dt {dt} s, \
top speed {ms} m/s). Episodes end at the goal or after {steps} steps. Fixed hazard circles:",
            h = env.arena_half_extent,
            gr = env.goal.radius,
            gx = env.goal.center[0],
            gy = env.goal.center[1],
            ag = env.accel_gain,
            dt = env.dt,
            ms = env.max_speed,
            steps = env.max_episode_steps,
        );
        for c in &env.hazards {
            let _ = write!(task, " center ({}, {}) radius {};", c.center[0], c.center[1], c.radius);
        }
        task.push_str(" The robot should reach the goal quickly without entering hazards.");
        let original = format!(
            "Reward per step: {pc} * (previous dist_goal - dist_goal), plus {gb} on reaching the goal.\n\
Original cost: 1 for every step that ends inside a hazard, else 0 (equal to in_hazard).\n\
Your cost function c(features) is evaluated on the state after each step and added to the reward: \
shaped_reward = reward + c. Negative values therefore penalize.",
            pc = env.progress_coefficient,
            gb = env.goal_bonus,
        );
        PromptBundle {
            task_description: task,
            safety_requirement: safety.describe(),
            original_functions: original,
            best_so_far: best.map(|b| b.to_string()),
            feature_registry: feature_registry().iter().map(|s| s.to_string()).collect(),
            grammar_summary: GRAMMAR_SUMMARY.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        for (name, text) in [
            ("task description", &self.task_description),
            ("safety requirement", &self.safety_requirement),
            ("original functions", &self.original_functions),
        ] {
            if text.trim().is_empty() {
                return Err(LlmError::Bundle(format!("{name} is empty")));
            }
        }
        Ok(())
    }

    fn context(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Task description\n{}\n", self.task_description);
        let _ = writeln!(s, "## Safety requirement\n{}\n", self.safety_requirement);
        let _ = writeln!(s, "## Original reward and cost functions\n{}\n", self.original_functions);
        let _ = writeln!(
            s,
            "## Best cost function so far\n{}\n",
            self.best_so_far.as_deref().unwrap_or("None yet.")
        );
        s
    }

    /// Request for `k` candidate cost functions.
    pub fn render_generation(&self, k: usize) -> ChatRequest {
        let mut user = self.context();
        let _ = writeln!(user, "## Expression language\nFeatures: {}\n{}\n", self.feature_registry.join(", "), self.grammar_summary);
        let _ = write!(
            user,
            "## Instructions\nPropose {k} different cost functions that improve on the best one so far. \
Write each as a single expression inside its own fenced code block, for example:\n```\n-0.5 * in_hazard\n```"
        );
        ChatRequest {
            system: SYSTEM_PROMPT.to_string(),
            user,
        }
    }

    /// Request for a fitness expression over the evaluation metrics.
    pub fn render_scoring(&self) -> ChatRequest {
        let mut user = self.context();
        let _ = write!(
            user,
            "## Scoring\nCandidate policies are trained briefly and evaluated. Write one fitness expression that ranks \
them, higher is better, using only these names: {}.\navg_return and avg_cost are mean discounted episode reward and \
cost, tcr the share of episodes that reach the goal, her the share that touch a hazard, d the cost limit, n a large \
penalty. The default is `{BUILTIN_SCORE}`.\n{}\nAnswer with exactly one fenced code block.",
            SCORE_FEATURES.join(", "),
            self.grammar_summary
        );
        ChatRequest {
            system: SYSTEM_PROMPT.to_string(),
            user,
        }
    }

    /// Request for direct numeric scores of already evaluated candidates.
    pub fn render_judge(&self, candidates: &[(String, MetricsAggregate)]) -> ChatRequest {
        let mut user = self.context();
        let _ = writeln!(user, "## Evaluated candidates");
        for (i, (text, m)) in candidates.iter().enumerate() {
            let _ = writeln!(
                user,
                "{}. `{text}`: avg_return {:.4}, avg_cost {:.4}, tcr {:.3}, her {:.3}",
                i + 1,
                m.avg_return,
                m.avg_cost,
                m.tcr,
                m.her
            );
        }
        let _ = write!(
            user,
            "\n## Instructions\nScore every candidate, higher is better. Answer with one fenced code block holding \
{} numbers separated by commas, in the order above.",
            candidates.len()
        );
        ChatRequest {
            system: SYSTEM_PROMPT.to_string(),
            user,
        }
    }
}

/// Contents of every fenced block, in order. An info string after the
/// opening fence is ignored; an unterminated block runs to the end.
pub fn extract_code_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n").trim().to_string());
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n").trim().to_string());
    }
    blocks.retain(|b| !b.is_empty());
    blocks
}

/// Up to `k` candidate texts. Fewer come back when the model under-delivers.
pub fn generate_candidates(bundle: &PromptBundle, k: usize, backend: &dyn ChatBackend) -> Result<Vec<String>, LlmError> {
    if k == 0 {
        return Err(LlmError::Bundle("k must be >= 1".into()));
    }
    bundle.validate()?;
    let reply = backend.chat(&bundle.render_generation(k))?;
    let mut blocks = extract_code_blocks(&reply);
    if blocks.is_empty() {
        return Err(LlmError::EmptyGeneration);
    }
    blocks.truncate(k);
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreChoice {
    Generated(ScoreExpr),
    /// The reply did not validate; the built-in score stands in.
    Fallback { reason: String },
}

impl ScoreChoice {
    pub fn expr(&self) -> ScoreExpr {
        match self {
            ScoreChoice::Generated(e) => e.clone(),
            ScoreChoice::Fallback { .. } => ScoreExpr::builtin(),
        }
    }
}

pub fn generate_score_expr(bundle: &PromptBundle, backend: &dyn ChatBackend) -> Result<ScoreChoice, LlmError> {
    bundle.validate()?;
    let reply = backend.chat(&bundle.render_scoring())?;
    let Some(block) = extract_code_blocks(&reply).into_iter().next() else {
        return Ok(ScoreChoice::Fallback {
            reason: LlmError::EmptyGeneration.to_string(),
        });
    };
    Ok(match ScoreExpr::parse(&block) {
        Ok(e) => ScoreChoice::Generated(e),
        Err(e) => ScoreChoice::Fallback {
            reason: format!("`{block}`: {e}"),
        },
    })
}

/// Numeric scores straight from the model, one per candidate.
pub fn judge_scores(
    bundle: &PromptBundle,
    candidates: &[(String, MetricsAggregate)],
    backend: &dyn ChatBackend,
) -> Result<Vec<f64>, LlmError> {
    bundle.validate()?;
    let reply = backend.chat(&bundle.render_judge(candidates))?;
    let block = extract_code_blocks(&reply)
        .into_iter()
        .next()
        .ok_or(LlmError::EmptyGeneration)?;
    let scores: Vec<f64> = block
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| LlmError::Protocol(format!("`{t}` is not a number"))))
        .collect::<Result<_, _>>()?;
    if scores.len() != candidates.len() || scores.iter().any(|s| !s.is_finite()) {
        return Err(LlmError::Protocol(format!(
            "expected {} finite scores, got `{block}`",
            candidates.len()
        )));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> PromptBundle {
        PromptBundle::for_task(&EnvConfig::default(), &SafetyRequirement::traditional(10.0).unwrap(), None)
    }

    #[test]
    fn extraction_rules() {
        let text = "Here:\n```cost\n-in_hazard\n```\nand\n```\n-0.1\n```\n```\n0.5 * progress\n```";
        assert_eq!(extract_code_blocks(text), vec!["-in_hazard", "-0.1", "0.5 * progress"]);
        assert!(extract_code_blocks("no fences at all").is_empty());
        assert_eq!(extract_code_blocks("```\n-x\n"), vec!["-x"]);
        assert!(extract_code_blocks("```\n\n```").is_empty());
    }

    #[test]
    fn k_limits_returned_blocks() {
        let m = MockScript::from_texts(["```\na\n```\n```\nb\n```\n```\nc\n```"]);
        assert_eq!(generate_candidates(&bundle(), 2, &m).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn no_fences_is_empty_generation() {
        let m = MockScript::from_texts(["I cannot help with that."]);
        assert_eq!(generate_candidates(&bundle(), 2, &m), Err(LlmError::EmptyGeneration));
    }

    #[test]
    fn score_generation_and_fallback() {
        let m = MockScript::from_texts([
            "```\nif(avg_cost > d, 0 - n, avg_return)\n```",
            "```\ntcr - 5.0*her\n```",
            "```\nsuccess_rate * 2\n```",
        ]);
        assert_eq!(generate_score_expr(&bundle(), &m).unwrap().expr(), ScoreExpr::builtin());
        assert!(matches!(generate_score_expr(&bundle(), &m).unwrap(), ScoreChoice::Generated(_)));
        let third = generate_score_expr(&bundle(), &m).unwrap();
        assert!(matches!(third, ScoreChoice::Fallback { .. }));
        assert_eq!(third.expr(), ScoreExpr::builtin());
    }

    #[test]
    fn judge_parses_numbers() {
        let m = MockScript::from_texts(["```\n0.5, 2, -1\n```", "```\n1, 2\n```"]);
        let metrics = MetricsAggregate {
            avg_return: 1.0,
            avg_cost: 0.0,
            tcr: 1.0,
            her: 0.0,
            episodes: 1,
            wall_clock_s: 0.0,
        };
        let c: Vec<(String, MetricsAggregate)> = (0..3).map(|i| (format!("c{i}"), metrics)).collect();
        assert_eq!(judge_scores(&bundle(), &c, &m).unwrap(), vec![0.5, 2.0, -1.0]);
        assert!(matches!(judge_scores(&bundle(), &c, &m), Err(LlmError::Protocol(_))));
    }

    #[test]
    fn prompt_carries_all_sections() {
        let best = crate::dsl::parse("-in_hazard").unwrap();
        let b = PromptBundle::for_task(&EnvConfig::default(), &SafetyRequirement::traditional(10.0).unwrap(), Some(&best));
        b.validate().unwrap();
        let r = b.render_generation(4);
        for needle in ["## Task description", "## Safety requirement", "## Original reward", "-in_hazard", "dist_hazard_min", "Propose 4"] {
            assert!(r.user.contains(needle), "missing {needle}");
        }
        assert_eq!(r, b.render_generation(4));
    }

    #[test]
    fn empty_section_fails_validation() {
        let mut b = bundle();
        b.safety_requirement = "  ".into();
        assert!(b.validate().is_err());
    }
}
