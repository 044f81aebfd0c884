//! The full search driven by the scripted LLM responses in
//! `fixtures/e2e/llm`. Pass `full` for the 2 x 4 population with t1=5,
//! t2=20 used by the acceptance suite; the default is a shortened run.
//!
//! cargo run --release --example evolve_with_mock_llm -- [full]

use std::path::Path;

use costsmith::config::RunConfig;
use costsmith::ecf::AutoReviewer;
use costsmith::runner::evolve_run;

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e/evolve.json");
    let mut cfg = RunConfig::load(&fixtures).unwrap();
    if std::env::args().nth(1).as_deref() != Some("full") {
        cfg.evolution.t1 = 1;
        cfg.evolution.t2 = 3;
        cfg.evolution.eval_episodes = 5;
    }
    let out = tempfile_dir();
    cfg.output.root = out.clone();
    let run = evolve_run(&cfg, &AutoReviewer, "demo").unwrap();
    for it in &run.outcome.iterations {
        println!("iteration {} {:?} p_tmp {:?} p_best {}", it.iteration, it.status, it.p_tmp, it.p_best);
        for (id, w) in &it.weights {
            println!("    {id} weight {w:.3}");
        }
    }
    let best = &run.outcome.best;
    println!("best: {}", best.f_w_best.as_ref().unwrap());
    if let Some(m) = &best.metrics {
        println!("best policy tcr {:.2} her {:.2}", m.tcr, m.her);
    }
    println!("run directory: {}", run.dir.display());
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("costsmith-demo-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
