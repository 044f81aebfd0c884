//! Score a handful of candidates with truncated training, the way one
//! iteration of the search does, and print the resulting mixture weights.
//!
//! cargo run --release --example fast_evaluation -- [epochs]

use costsmith::dsl::{parse, weighted_sum};
use costsmith::env::EnvConfig;
use costsmith::evolution::normalize_scores;
use costsmith::fpe::{run_pool, score, EvalPhase, FpeJob, ScoreExpr};
use costsmith::ppo::PpoConfig;

fn main() {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let env = EnvConfig::default();
    let ppo = PpoConfig::default();
    let texts = ["-in_hazard", "-0.02", "-max(0, 0.3 - dist_hazard_min)"];
    let cands: Vec<_> = texts.iter().map(|t| parse(t).unwrap()).collect();
    let jobs: Vec<FpeJob> = cands
        .iter()
        .map(|c| FpeJob {
            candidate: Some(c.clone()),
            phase: EvalPhase::early(epochs, 10),
        })
        .collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let results = run_pool(&jobs, &env, &ppo, 0, workers);

    let judge = ScoreExpr::parse("tcr - 5 * her").unwrap();
    let mut scores = Vec::new();
    for (t, r) in texts.iter().zip(results) {
        let out = r.expect("fpe run");
        let s = score(&out.metrics, &judge, 10.0, 1e6).unwrap();
        println!(
            "{t:<34} tcr {:.2} her {:.2} return {:.3} ({:.1}s) -> score {s:+.3}",
            out.metrics.tcr, out.metrics.her, out.metrics.avg_return, out.metrics.wall_clock_s
        );
        scores.push(s);
    }
    let w = normalize_scores(&scores).unwrap();
    println!("weights {w:?}");
    println!("mixture {}", weighted_sum(&cands, &w).unwrap());
}
