//! Serve the JSON API while a search runs with remote review. A small
//! client thread plays the reviewer: it approves everything except
//! candidates with lint errors.
//!
//! cargo run --release --example review_service

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use costsmith::config::{ReviewMode, RunConfig};
use costsmith::ecf::ReviewQueue;
use costsmith::ppo::PpoConfig;
use costsmith::runner::{evolve_run, reviewer_for};
use costsmith::service::{Service, ServiceState};
use serde_json::Value;

fn main() {
    let root = std::env::temp_dir().join(format!("costsmith-review-{}", std::process::id()));
    let mut cfg = RunConfig::default();
    cfg.output.root = root.clone();
    cfg.ppo = PpoConfig { epochs: 4, ..PpoConfig::default() };
    cfg.evolution.iterations = 1;
    cfg.evolution.t1 = 2;
    cfg.evolution.t2 = 4;
    cfg.evolution.eval_episodes = 5;
    cfg.review.mode = ReviewMode::Remote;
    std::fs::create_dir_all(&root).unwrap();

    let queue = Arc::new(ReviewQueue::new());
    let service = Service::bind("127.0.0.1:0", ServiceState::new(&root, queue.clone())).unwrap();
    let base = format!("http://{}", service.local_addr().unwrap());
    println!("API at {base}/api/runs");
    let server = service.spawn(2);

    let done = Arc::new(AtomicBool::new(false));
    let reviewer_base = base.clone();
    let finished = done.clone();
    let client = std::thread::spawn(move || {
        while !finished.load(Ordering::Relaxed) {
            let list: Value = ureq::get(&format!("{reviewer_base}/api/candidates?status=pending_review"))
                .call()
                .unwrap()
                .into_json()
                .unwrap();
            for entry in list["candidates"].as_array().unwrap() {
                let c = &entry["candidate"];
                let id = c["id"].as_str().unwrap();
                let errors = c["lint_findings"].as_array().is_some_and(|f| f.iter().any(|x| x["severity"] == "error"));
                let verdict = if errors { "reject" } else { "approve" };
                let body = format!(r#"{{"verdict":"{verdict}","note":"example reviewer"}}"#);
                let _ = ureq::post(&format!("{reviewer_base}/api/candidates/{id}/decision")).send_string(&body);
                println!("{verdict} {id}: {}", c["source_text"]);
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    });

    let reviewer = reviewer_for(&cfg, "review-demo", Some(queue)).unwrap();
    let run = evolve_run(&cfg, reviewer.as_ref(), "review-demo").unwrap();
    done.store(true, Ordering::Relaxed);
    client.join().unwrap();
    let detail: Value = ureq::get(&format!("{base}/api/runs/review-demo")).call().unwrap().into_json().unwrap();
    println!("best via API: {}", detail["best"]["f_w_best"]);
    println!("run directory: {}", run.dir.display());
    server.stop();
}
