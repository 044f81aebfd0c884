use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;

use costsmith::config::{ReviewMode, RunConfig};
use costsmith::ecf::ReviewQueue;
use costsmith::ppo::PpoConfig;
use costsmith::rundir::read_audit;
use costsmith::runner::{evolve_run, reviewer_for};
use costsmith::service::{Service, ServiceState};

fn tiny(root: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output.root = root.to_path_buf();
    cfg.ppo = PpoConfig {
        epochs: 2,
        steps_per_epoch: 300,
        max_episode_steps: 100,
        minibatch_size: 100,
        update_iters: 2,
        hidden_sizes: vec![8],
        ..PpoConfig::default()
    };
    cfg.evolution.iterations = 1;
    cfg.evolution.population = 2;
    cfg.evolution.t1 = 1;
    cfg.evolution.t2 = 2;
    cfg.evolution.eval_episodes = 2;
    cfg.evolution.seed_library = vec!["-in_hazard".into(), "-0.01".into()];
    cfg.review.mode = ReviewMode::Remote;
    cfg.review.timeout_s = 60.0;
    cfg
}

/// Status code and JSON body, whatever the status.
fn call(req: ureq::Request, body: Option<&str>) -> (u16, Value) {
    let res = match body {
        Some(b) => req.set("Content-Type", "application/json").send_string(b),
        None => req.call(),
    };
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport: {e}"),
    };
    let status = resp.status();
    assert_eq!(resp.header("Content-Type"), Some("application/json"));
    assert_eq!(resp.header("Access-Control-Allow-Origin"), Some("*"));
    let text = resp.into_string().unwrap();
    (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
}

fn pending(base: &str) -> Vec<Value> {
    let (s, body) = call(ureq::get(&format!("{base}/api/candidates?status=pending_review")), None);
    assert_eq!(s, 200);
    body["candidates"].as_array().cloned().unwrap_or_default()
}

#[test]
fn remote_review_unblocks_evolution() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(root.path());
    let queue = Arc::new(ReviewQueue::new());
    let service = Service::bind("127.0.0.1:0", ServiceState::new(root.path(), queue.clone())).unwrap();
    let base = format!("http://{}", service.local_addr().unwrap());
    let handle = service.spawn(2);

    let worker = {
        let cfg = cfg.clone();
        let queue = queue.clone();
        std::thread::spawn(move || {
            let reviewer = reviewer_for(&cfg, "live", Some(queue)).unwrap();
            evolve_run(&cfg, reviewer.as_ref(), "live")
        })
    };

    let mut decided = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    while decided.len() < 2 && Instant::now() < deadline {
        for entry in pending(&base) {
            let id = entry["candidate"]["id"].as_str().unwrap().to_string();
            assert_eq!(entry["run_id"], "live");
            let (s, one) = call(ureq::get(&format!("{base}/api/candidates/{id}")), None);
            assert_eq!(s, 200);
            assert_eq!(one["status"], "pending_review");
            let (s, hm) = call(ureq::get(&format!("{base}/api/candidates/{id}/heatmap?resolution=9")), None);
            assert_eq!(s, 200);
            assert_eq!(hm["grid"]["values"].as_array().unwrap().len(), 9);
            let url = format!("{base}/api/candidates/{id}/decision");
            let (s, _) = call(ureq::post(&url), Some(r#"{"verdict":"approve","note":"looks fine"}"#));
            assert_eq!(s, 200);
            let (s, _) = call(ureq::post(&url), Some(r#"{"verdict":"reject","note":"late"}"#));
            assert_eq!(s, 409);
            decided.push(id);
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let run = worker.join().unwrap().expect("evolve finishes after approvals");
    assert_eq!(decided.len(), 2);
    assert!(run.outcome.best.f_w_best.is_some());

    let audit = read_audit(&run.dir.join("audit.log")).unwrap();
    let api: Vec<&Value> = audit.iter().filter(|e| e["event"] == "api_decision").collect();
    assert_eq!(api.len(), 2);
    let remote_approvals = audit
        .iter()
        .filter(|e| e["event"] == "status" && e["to"] == "approved" && e["reviewer"] == "remote")
        .count();
    assert_eq!(remote_approvals, 2);

    let (s, runs) = call(ureq::get(&format!("{base}/api/runs")), None);
    assert_eq!(s, 200);
    assert_eq!(runs["runs"][0]["status"]["state"], "completed");
    let (s, detail) = call(ureq::get(&format!("{base}/api/runs/live")), None);
    assert_eq!(s, 200);
    assert_eq!(detail["iterations"].as_array().unwrap().len(), 1);
    assert!(detail["best"]["f_w_best"].is_string());
    let echo: RunConfig = serde_json::from_value(detail["config"].clone()).unwrap();
    assert_eq!(echo.evolution, cfg.evolution);
    let (s, metrics) = call(ureq::get(&format!("{base}/api/runs/live/metrics")), None);
    assert_eq!(s, 200);
    assert_eq!(metrics["phases"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["best_trace"].as_array().unwrap().len(), 1);

    let (s, _) = call(ureq::get(&format!("{base}/api/runs/missing")), None);
    assert_eq!(s, 404);
    let (s, _) = call(ureq::request("OPTIONS", &format!("{base}/api/runs")), None);
    assert_eq!(s, 204);
    let (s, _) = call(ureq::post(&format!("{base}/api/candidates/{}/decision", decided[0])), Some("{"));
    assert_eq!(s, 400);
    handle.stop();
}

#[test]
fn review_timeout_falls_back_to_auto() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny(root.path());
    cfg.review.timeout_s = 0.05;
    let queue = Arc::new(ReviewQueue::new());
    let reviewer = reviewer_for(&cfg, "quiet", Some(queue.clone())).unwrap();
    let run = evolve_run(&cfg, reviewer.as_ref(), "quiet").unwrap();
    assert!(queue.pending().is_empty());
    let notes: Vec<String> = read_audit(&run.dir.join("audit.log"))
        .unwrap()
        .iter()
        .filter(|e| e["event"] == "status" && e["to"] == "approved" && e["reviewer"] == "auto")
        .filter_map(|e| e["note"].as_str().map(str::to_string))
        .filter(|n| n.starts_with("review timed out"))
        .collect();
    assert_eq!(notes.len(), 2);
}
