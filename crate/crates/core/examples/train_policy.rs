//! Train PPO or PPO-Lagrangian, optionally shaped by a cost expression, then
//! evaluate the mean policy on fixed spawns.
//!
//! cargo run --release --example train_policy -- [ppo|ppo-lag] [epochs] [cost expr]

use costsmith::dsl::parse;
use costsmith::env::EnvConfig;
use costsmith::fpe::DEFAULT_EVAL_SEED;
use costsmith::ppo::{evaluate_policy, train, Agent, Algorithm, LagrangeConfig, PpoConfig};
use costsmith::report::RunSummary;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let algo = match args.first().map(String::as_str) {
        Some("ppo-lag") => Algorithm::PpoLag(LagrangeConfig::default()),
        _ => Algorithm::Ppo,
    };
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let shaping = args.get(2).map(|s| parse(s).expect("cost expression"));
    let cfg = PpoConfig { epochs, ..PpoConfig::default() };
    let env = EnvConfig::default();

    let agent = Agent::new(&cfg, &algo, cfg.seed).unwrap();
    let report = train(&env, agent, &cfg, &algo, shaping.as_ref(), None).unwrap();
    for e in &report.epochs {
        println!(
            "epoch {:3} return {:6.3} cost {:6.2} tcr {:.2} her {:.2}{}",
            e.epoch,
            e.avg_return,
            e.avg_cost,
            e.tcr,
            e.her,
            e.lambda.map(|l| format!(" lambda {l:.3}")).unwrap_or_default()
        );
    }
    let eval = evaluate_policy(&env, &report.agent.policy, &cfg, 20, DEFAULT_EVAL_SEED).unwrap();
    let s = RunSummary::new(&report, &eval).unwrap();
    println!("{}: tcr {:.2} her {:.2} in {:.1}s, {} env steps", s.algorithm, s.tcr, s.her, s.t_algo, s.env_steps);
    println!("discounted cost quartiles {:?}", (s.cost_distribution.q25, s.cost_distribution.median, s.cost_distribution.q75));
}
