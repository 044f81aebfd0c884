//! JSON-over-HTTP view of the run directories plus the live review queue.
//!
//! Reads go to disk (or to the queue for candidates still awaiting review);
//! the only write is a review decision, which is appended to the owning
//! run's `audit.log` before the response is sent.

use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::ecf::{CandidateRecord, CandidateStatus, EcfError, ReviewQueue, Verdict};
use crate::env::EnvConfig;
use crate::report::heatmap;
use crate::rundir::{append_audit, csv_to_json};

pub const DEFAULT_HEATMAP_RESOLUTION: usize = 41;
const MAX_BODY: u64 = 64 * 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}

pub struct ServiceState {
    pub runs_root: PathBuf,
    pub queue: Arc<ReviewQueue>,
    pub cors_origin: String,
}

impl ServiceState {
    pub fn new(runs_root: impl Into<PathBuf>, queue: Arc<ReviewQueue>) -> Self {
        ServiceState {
            runs_root: runs_root.into(),
            queue,
            cors_origin: "*".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Reply { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Reply {
            status,
            body: json!({"error": message.into()}),
        }
    }
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn read_json(path: &Path) -> Option<Value> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("run.json").is_file())
                .collect()
        })
        .unwrap_or_default();
    dirs.sort();
    dirs
}

fn run_listing(dir: &Path) -> Value {
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let status = read_json(&dir.join("status.json")).unwrap_or(json!({"state": "unknown"}));
    let p_best = read_json(&dir.join("summary.json")).and_then(|s| s.pointer("/best/p_best").cloned());
    json!({"id": id, "status": status, "p_best": p_best})
}

fn query_param<'a>(query: &'a str, key: &str) -> Option<&'a str> {
    query.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
        (k == key).then_some(v)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    verdict: Verdict,
    #[serde(default)]
    note: String,
}

impl ServiceState {
    fn find_candidate(&self, id: &str) -> Option<(Option<String>, CandidateRecord)> {
        if let Some(p) = self.queue.get_pending(id) {
            return Some((Some(p.run_id), p.record));
        }
        for dir in run_dirs(&self.runs_root) {
            let path = dir.join("candidates").join(format!("{id}.json"));
            if let Some(v) = read_json(&path) {
                if let Ok(rec) = serde_json::from_value::<CandidateRecord>(v) {
                    let run = dir.file_name().map(|n| n.to_string_lossy().into_owned());
                    return Some((run, rec));
                }
            }
        }
        None
    }

    fn run_env(&self, run_id: Option<&str>) -> EnvConfig {
        run_id
            .and_then(|r| read_json(&self.runs_root.join(r).join("run.json")))
            .and_then(|v| v.get("env").cloned())
            .and_then(|e| serde_json::from_value(e).ok())
            .unwrap_or_default()
    }

    fn list_candidates(&self, status: Option<CandidateStatus>) -> Vec<Value> {
        let mut out: Vec<Value> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for p in self.queue.pending() {
            if status.is_none() || status == Some(CandidateStatus::PendingReview) {
                seen.insert(p.record.id.clone());
                out.push(json!({"run_id": p.run_id, "candidate": p.record}));
            }
        }
        if status == Some(CandidateStatus::PendingReview) {
            return out;
        }
        for dir in run_dirs(&self.runs_root) {
            let run = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let Ok(rd) = std::fs::read_dir(dir.join("candidates")) else { continue };
            let mut files: Vec<PathBuf> = rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                let Some(rec) = read_json(&f).and_then(|v| serde_json::from_value::<CandidateRecord>(v).ok()) else {
                    continue;
                };
                if status.is_some_and(|s| s != rec.status) || seen.contains(&rec.id) {
                    continue;
                }
                out.push(json!({"run_id": run, "candidate": rec}));
            }
        }
        out
    }

    /// Routes one request. Pure apart from filesystem reads, the queue, and
    /// the audit append on decisions.
    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> Reply {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (method, parts.as_slice()) {
            ("GET", ["api", "runs"]) => {
                let runs: Vec<Value> = run_dirs(&self.runs_root).iter().map(|d| run_listing(d)).collect();
                Reply::ok(json!({"runs": runs}))
            }
            ("GET", ["api", "runs", id]) => {
                if !safe_id(id) {
                    return Reply::error(404, format!("unknown run `{id}`"));
                }
                let dir = self.runs_root.join(id);
                let Some(config) = read_json(&dir.join("run.json")) else {
                    return Reply::error(404, format!("unknown run `{id}`"));
                };
                let summary = read_json(&dir.join("summary.json")).unwrap_or(Value::Null);
                Reply::ok(json!({
                    "id": id,
                    "status": read_json(&dir.join("status.json")),
                    "config": config,
                    "best": summary.get("best").cloned().unwrap_or(Value::Null),
                    "iterations": summary.get("iterations").cloned().unwrap_or(json!([])),
                    "summary": summary,
                }))
            }
            ("GET", ["api", "runs", id, "metrics"]) => {
                let dir = self.runs_root.join(id);
                if !safe_id(id) || !dir.join("run.json").is_file() {
                    return Reply::error(404, format!("unknown run `{id}`"));
                }
                let csv = |name: &str| {
                    std::fs::read_to_string(dir.join(name))
                        .map(|t| csv_to_json(&t))
                        .unwrap_or_default()
                };
                let trace: Vec<Value> = read_json(&dir.join("summary.json"))
                    .and_then(|s| s.get("iterations").cloned())
                    .and_then(|v| v.as_array().cloned())
                    .unwrap_or_default()
                    .iter()
                    .map(|s| json!({"iteration": s["iteration"], "p_best": s["p_best"]}))
                    .collect();
                Reply::ok(json!({"phases": csv("metrics.csv"), "curves": csv("curves.csv"), "best_trace": trace}))
            }
            ("GET", ["api", "candidates"]) => {
                let status = match query_param(query, "status") {
                    None | Some("") => None,
                    Some(s) => match CandidateStatus::from_name(s) {
                        Some(s) => Some(s),
                        None => return Reply::error(400, format!("unknown status `{s}`")),
                    },
                };
                Reply::ok(json!({"candidates": self.list_candidates(status)}))
            }
            ("GET", ["api", "candidates", id]) => match safe_id(id).then(|| self.find_candidate(id)).flatten() {
                Some((run, rec)) => Reply::ok(json!({
                    "run_id": run,
                    "id": rec.id,
                    "source_text": rec.source_text,
                    "canonical": rec.ast.as_ref().map(|a| a.to_string()),
                    "origin": rec.origin,
                    "status": rec.status,
                    "findings": rec.lint_findings,
                    "review": rec.review,
                    "fpe_metrics": rec.fpe_metrics,
                    "fitness": rec.fitness,
                    "weight": rec.weight,
                })),
                None => Reply::error(404, format!("unknown candidate `{id}`")),
            },
            ("GET", ["api", "candidates", id, "heatmap"]) => {
                let Some((run, rec)) = safe_id(id).then(|| self.find_candidate(id)).flatten() else {
                    return Reply::error(404, format!("unknown candidate `{id}`"));
                };
                let Some(ast) = rec.ast else {
                    return Reply::error(409, format!("candidate `{id}` did not parse"));
                };
                let res = match query_param(query, "resolution").map(str::parse::<usize>) {
                    None => DEFAULT_HEATMAP_RESOLUTION,
                    Some(Ok(r)) if (1..=401).contains(&r) => r,
                    Some(_) => return Reply::error(400, "resolution must be an integer in 1..=401"),
                };
                let env = self.run_env(run.as_deref());
                match heatmap(&ast, &env, res) {
                    Ok(grid) => Reply::ok(json!({"id": id, "grid": grid, "hazards": env.hazards, "goal": env.goal})),
                    Err(e) => Reply::error(500, e.to_string()),
                }
            }
            ("POST", ["api", "candidates", id, "decision"]) => {
                let parsed: Result<DecisionBody, _> = serde_json::from_slice(body);
                let Ok(d) = parsed else {
                    return Reply::error(400, "body must be {\"verdict\": \"approve\"|\"reject\", \"note\": string}");
                };
                match self.queue.decide(id, d.verdict, &d.note) {
                    Ok((run_id, decision)) => {
                        if safe_id(&run_id) {
                            let _ = append_audit(
                                &self.runs_root.join(&run_id).join("audit.log"),
                                json!({"event": "api_decision", "candidate": id, "verdict": decision.verdict, "note": decision.note}),
                            );
                        }
                        Reply::ok(json!({"decision": decision}))
                    }
                    Err(EcfError::AlreadyDecided(_)) => {
                        if let Some((Some(run), _)) = self.find_candidate(id) {
                            let _ = append_audit(
                                &self.runs_root.join(run).join("audit.log"),
                                json!({"event": "api_decision_refused", "candidate": id}),
                            );
                        }
                        Reply::error(409, format!("candidate `{id}` was already decided"))
                    }
                    Err(_) => Reply::error(404, format!("unknown candidate `{id}`")),
                }
            }
            ("OPTIONS", _) => Reply {
                status: 204,
                body: Value::Null,
            },
            (_, ["api", ..]) if known_path(&parts) => Reply::error(405, format!("{method} not allowed here")),
            _ => Reply::error(404, format!("no route for {path}")),
        }
    }
}

fn known_path(parts: &[&str]) -> bool {
    matches!(
        parts,
        ["api", "runs"]
            | ["api", "runs", _]
            | ["api", "runs", _, "metrics"]
            | ["api", "candidates"]
            | ["api", "candidates", _]
            | ["api", "candidates", _, "heatmap"]
            | ["api", "candidates", _, "decision"]
    )
}

fn header(k: &str, v: &str) -> tiny_http::Header {
    tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()).expect("static header")
}

/// A bound HTTP server. Requests are served by a small pool of threads.
pub struct Service {
    server: Arc<tiny_http::Server>,
    state: Arc<ServiceState>,
}

impl Service {
    pub fn bind(addr: &str, state: ServiceState) -> Result<Self, ServiceError> {
        let server = tiny_http::Server::http(addr).map_err(|e| ServiceError::Bind {
            addr: addr.to_string(),
            message: e.to_string(),
        })?;
        Ok(Service {
            server: Arc::new(server),
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.server.server_addr().to_ip()
    }

    fn serve_one(state: &ServiceState, mut req: tiny_http::Request) {
        let mut body = Vec::new();
        let _ = req.as_reader().take(MAX_BODY).read_to_end(&mut body);
        let method = req.method().as_str().to_ascii_uppercase();
        let reply = state.handle(&method, req.url(), &body);
        let text = if reply.body.is_null() {
            String::new()
        } else {
            reply.body.to_string()
        };
        let resp = tiny_http::Response::from_string(text)
            .with_status_code(reply.status)
            .with_header(header("Content-Type", "application/json"))
            .with_header(header("Access-Control-Allow-Origin", &state.cors_origin))
            .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
            .with_header(header("Access-Control-Allow-Headers", "Content-Type"));
        let _ = req.respond(resp);
    }

    /// Serves on `workers` threads until [`ServiceHandle::stop`].
    pub fn spawn(self, workers: usize) -> ServiceHandle {
        let mut threads = Vec::new();
        for _ in 0..workers.max(1) {
            let server = self.server.clone();
            let state = self.state.clone();
            threads.push(std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    Service::serve_one(&state, req);
                }
            }));
        }
        ServiceHandle {
            server: self.server,
            threads,
        }
    }
}

pub struct ServiceHandle {
    server: Arc<tiny_http::Server>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn stop(self) {
        self.server.unblock();
        for _ in 1..self.threads.len() {
            self.server.unblock();
        }
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until every worker exits.
    pub fn join(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}
