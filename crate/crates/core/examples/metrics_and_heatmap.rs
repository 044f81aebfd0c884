//! Episode metrics, the time ratio, and a heatmap written as CSV and PGM.

use costsmith::cmdp::EpisodeStats;
use costsmith::dsl::parse;
use costsmith::env::EnvConfig;
use costsmith::report::{compute_rates, cost_distribution, heatmap, time_ratio};

fn main() {
    let eps = vec![
        EpisodeStats::new(2.1, 0.0, 0.0, true),
        EpisodeStats::new(1.8, 3.2, 4.0, true),
        EpisodeStats::new(0.4, 0.0, 0.0, false),
        EpisodeStats::new(2.3, 9.5, 12.0, true),
    ];
    let (tcr, her) = compute_rates(&eps).unwrap();
    println!("tcr {tcr} her {her}");
    println!("{:?}", cost_distribution(&eps).unwrap());
    println!("TR for 60s vs 43s: {:.3}", time_ratio(60.0, 43.0).unwrap());

    let expr = parse("-in_hazard - 0.5 * step(0.25 - dist_hazard_min)").unwrap();
    let grid = heatmap(&expr, &EnvConfig::default(), 61).unwrap();
    let dir = std::env::temp_dir();
    std::fs::write(dir.join("heatmap.csv"), grid.to_csv()).unwrap();
    grid.write_pgm(std::fs::File::create(dir.join("heatmap.pgm")).unwrap()).unwrap();
    println!("wrote {}/heatmap.csv and heatmap.pgm", dir.display());
    for row in grid.values.iter().rev().step_by(6) {
        let line: String = row
            .iter()
            .step_by(2)
            .map(|&v| if v <= -1.0 { '#' } else if v < 0.0 { '+' } else { '.' })
            .collect();
        println!("{line}");
    }
}
