//! On-disk layout of one run. The service reads these files back, so
//! everything an API client can see is written here first.
//!
//! ```text
//! <root>/<run_id>/
//!   run.json            resolved configuration
//!   status.json         state + current iteration
//!   summary.json        best record, iteration states, timings
//!   metrics.csv         one row per FPE run
//!   curves.csv          per-epoch training statistics of every FPE run
//!   best.cost           canonical text of the best weighted function
//!   audit.log           one JSON object per line, one line per transition
//!   candidates/<id>.json, candidates/<id>.cost
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ecf::CandidateRecord;
use crate::fpe::{EvalPhase, MetricsAggregate};
use crate::ppo::EpochStats;

pub const METRICS_CSV_HEADER: &str =
    "iteration,candidate,phase,epochs,avg_return,avg_cost,tcr,her,episodes,wall_clock_s,fitness";
pub const CURVES_CSV_HEADER: &str =
    "candidate,phase,epoch,avg_return,avg_cost,avg_shaped_return,episodes,tcr,her,wall_clock_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub kind: String,
    pub state: RunState,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Appends one JSON line per event. Lines are written with a single call so
/// concurrent writers do not interleave within a line.
pub fn append_audit(path: &Path, mut event: Value) -> io::Result<()> {
    if let Value::Object(map) = &mut event {
        map.entry("t_ms").or_insert(json!(unix_ms() as u64));
    }
    let mut line = serde_json::to_string(&event).map_err(io::Error::other)?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())
}

pub fn read_audit(path: &Path) -> io::Result<Vec<Value>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    id: String,
    lock: Mutex<()>,
}

impl RunDir {
    /// Creates `<root>/<id>` with an empty `candidates/`. Refuses to reuse a
    /// directory that already holds a run.
    pub fn create(root: &Path, id: &str) -> io::Result<Self> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("bad run id `{id}`")));
        }
        let path = root.join(id);
        if path.join("run.json").exists() {
            return Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("{} already holds a run", path.display()),
            ));
        }
        fs::create_dir_all(path.join("candidates"))?;
        Ok(RunDir {
            path,
            id: id.to_string(),
            lock: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn audit_path(&self) -> PathBuf {
        self.path.join("audit.log")
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        write_atomic(&self.path.join(name), text.as_bytes())
    }

    pub fn write_text(&self, name: &str, text: &str) -> io::Result<()> {
        write_atomic(&self.path.join(name), text.as_bytes())
    }

    pub fn audit(&self, event: Value) -> io::Result<()> {
        let _g = self.lock.lock().expect("run dir lock");
        append_audit(&self.audit_path(), event)
    }

    pub fn set_status(&self, status: &RunStatus) -> io::Result<()> {
        self.write_json("status.json", status)
    }

    pub fn write_candidate(&self, rec: &CandidateRecord) -> io::Result<()> {
        let dir = self.path.join("candidates");
        let text = serde_json::to_string_pretty(rec).map_err(io::Error::other)?;
        write_atomic(&dir.join(format!("{}.json", rec.id)), text.as_bytes())?;
        let mut cost = rec.source_text.clone();
        cost.push('\n');
        write_atomic(&dir.join(format!("{}.cost", rec.id)), cost.as_bytes())
    }

    pub fn append_metrics(
        &self,
        iteration: usize,
        candidate: &str,
        phase: &EvalPhase,
        m: &MetricsAggregate,
        fitness: f64,
    ) -> io::Result<()> {
        let row = format!(
            "{iteration},{candidate},{},{},{},{},{},{},{},{},{}",
            phase_name(phase),
            phase.epochs,
            m.avg_return,
            m.avg_cost,
            m.tcr,
            m.her,
            m.episodes,
            m.wall_clock_s,
            fitness
        );
        self.append_csv("metrics.csv", METRICS_CSV_HEADER, &[row])
    }

    pub fn append_curves(&self, candidate: &str, phase: &EvalPhase, curves: &[EpochStats]) -> io::Result<()> {
        let rows: Vec<String> = curves
            .iter()
            .map(|e| {
                format!(
                    "{candidate},{},{},{},{},{},{},{},{},{}",
                    phase_name(phase),
                    e.epoch,
                    e.avg_return,
                    e.avg_cost,
                    e.avg_shaped_return,
                    e.episodes,
                    e.tcr,
                    e.her,
                    e.wall_clock_s
                )
            })
            .collect();
        self.append_csv("curves.csv", CURVES_CSV_HEADER, &rows)
    }

    fn append_csv(&self, name: &str, header: &str, rows: &[String]) -> io::Result<()> {
        let _g = self.lock.lock().expect("run dir lock");
        let path = self.path.join(name);
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = String::new();
        if fresh {
            buf.push_str(header);
            buf.push('\n');
        }
        for r in rows {
            buf.push_str(r);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())
    }
}

fn phase_name(p: &EvalPhase) -> &'static str {
    match p.label {
        crate::fpe::PhaseLabel::Early => "early",
        crate::fpe::PhaseLabel::Late => "late",
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(tmp, path)
}

/// Parses a CSV written by this module into JSON objects keyed by header.
/// Numeric cells become numbers.
pub fn csv_to_json(text: &str) -> Vec<Value> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Vec::new();
    };
    let cols: Vec<&str> = header.split(',').collect();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut obj = serde_json::Map::new();
            for (k, v) in cols.iter().zip(l.split(',')) {
                let val = match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => json!(x),
                    _ => json!(v),
                };
                obj.insert(k.to_string(), val);
            }
            Value::Object(obj)
        })
        .collect()
}
