//! Push the shipped candidate set through syntax checking, semantic lint
//! and automatic review.

use std::path::Path;

use costsmith::ecf::{gate, AutoReviewer, GateSettings, Origin};
use costsmith::env::EnvConfig;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ecf/candidates.txt");
    let text = std::fs::read_to_string(path).unwrap();
    let settings = GateSettings::for_env(&EnvConfig::default());
    for (i, line) in text.lines().enumerate() {
        let rec = gate(format!("c{i}"), 1, line, Origin::Llm, &settings, &AutoReviewer).unwrap();
        println!("{:<36} {}", line, rec.status.as_str());
        for f in &rec.lint_findings {
            println!("    {:?} {}: {}", f.severity, f.rule, f.message);
        }
        if let Some(r) = &rec.review {
            println!("    review: {}", r.note);
        }
    }
}
