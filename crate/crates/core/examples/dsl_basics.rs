//! Parse, print, evaluate and mix cost expressions.
//!
//! cargo run --example dsl_basics -- "if(dist_hazard_min < 0.2, -1, 0)"

use costsmith::dsl::{evaluate, parse, weighted_sum, FeatureMap};
use costsmith::env::EnvConfig;

fn main() {
    let text = std::env::args().nth(1).unwrap_or_else(|| "-max(0, 0.3 - dist_hazard_min)".into());
    let expr = match parse(&text) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!("canonical: {expr}");
    println!("nodes {} depth {} features {:?}", expr.node_count(), expr.depth(), expr.free_features());

    // Evaluate along a horizontal line through the first hazard.
    let env = EnvConfig::default();
    let hazard = env.hazards[0];
    for dx in [-0.6, -0.3, 0.0, 0.3, 0.6] {
        let p = [hazard.center[0] + dx, hazard.center[1]];
        let obs = env.features_at(p);
        let v = evaluate(&expr, &obs).unwrap();
        println!("  at ({:+.2}, {:+.2}) dist_hazard_min {:+.3} -> {v:+.4}", p[0], p[1], obs.get("dist_hazard_min").unwrap());
    }

    let mixed = weighted_sum(&[expr.clone(), parse("-in_hazard").unwrap()], &[0.25, 0.75]).unwrap();
    println!("mixture: {mixed}");
    let m = FeatureMap::new().with("dist_hazard_min", 0.1).with("in_hazard", 0.0);
    if let Ok(v) = evaluate(&mixed, &m) {
        println!("mixture at dist_hazard_min=0.1: {v}");
    }
}
