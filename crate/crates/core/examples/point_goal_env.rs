//! Drive the point robot with a straight-line controller and watch the
//! features and the binary hazard cost.

use costsmith::env::{DoneReason, EnvConfig, PointGoalEnv};

fn main() {
    let cfg = EnvConfig::default();
    println!("goal {:?}, {} hazards, {} step budget", cfg.goal, cfg.hazards.len(), cfg.max_episode_steps);
    let mut env = PointGoalEnv::new(cfg.clone()).unwrap();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut obs = env.reset(seed).unwrap();
    let (mut ret, mut cost) = (0.0, 0.0);
    loop {
        let (dx, dy) = (obs.get("goal_dx").unwrap(), obs.get("goal_dy").unwrap());
        let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
        let step = env.step([dx / norm, dy / norm]).unwrap();
        ret += step.reward;
        cost += step.cost;
        obs = step.observation;
        if env.steps() % 10 == 0 || step.done {
            let p = obs.position();
            println!(
                "t {:3} pos ({:+.2}, {:+.2}) dist_goal {:.3} in_hazard {} cost so far {cost}",
                env.steps(),
                p[0],
                p[1],
                obs.dist_goal(),
                obs.in_hazard()
            );
        }
        if step.done {
            let why = if step.done_reason == Some(DoneReason::Goal) { "goal" } else { "timeout" };
            println!("done ({why}) return {ret:.3} cost {cost}");
            break;
        }
    }
}
