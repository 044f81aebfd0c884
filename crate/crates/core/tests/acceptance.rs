//! Acceptance suite. Each test prints one `PASS` or `FAIL` line and then
//! asserts. Tests share one lock so wall-clock measurements never overlap.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use costsmith::cmdp::{constrained_fitness, EpisodeStats};
use costsmith::config::RunConfig;
use costsmith::dsl::{evaluate, parse, weighted_sum, BinaryOp, CostExpr, DslError, FeatureMap, UnaryOp};
use costsmith::ecf::{gate, AutoReviewer, CandidateStatus, GateSettings, Origin};
use costsmith::env::{EnvConfig, FEATURE_NAMES};
use costsmith::fpe::{fpe_run, score, EvalPhase, MetricsAggregate, ScoreExpr};
use costsmith::nn::Mlp;
use costsmith::ppo::Algorithm;
use costsmith::report::{compute_rates, cost_distribution, time_ratio};
use costsmith::rundir::read_audit;
use costsmith::runner::{evolve_run, train_run, EvolveRun, TrainRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|p| p.into_inner())
}

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn e2e_config() -> RunConfig {
    let mut cfg = RunConfig::load(&fixtures().join("e2e/evolve.json")).unwrap();
    cfg.output.root = scratch().to_path_buf();
    cfg
}

/// Unshaped PPO on the default layout, trained once and shared.
/// User plus system CPU seconds of this process, from /proc. The host
/// shares its one core, so wall clock for identical work drifts by up to
/// half; CPU time does not count time spent descheduled.
fn cpu_seconds() -> f64 {
    let stat = std::fs::read_to_string("/proc/self/stat").unwrap();
    let after_comm = &stat[stat.rfind(')').unwrap() + 2..];
    let fields: Vec<&str> = after_comm.split_whitespace().collect();
    // utime and stime are fields 14 and 15; `after_comm` starts at field 3
    let ticks: f64 = fields[11].parse::<f64>().unwrap() + fields[12].parse::<f64>().unwrap();
    ticks / 100.0
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = cpu_seconds();
    let out = f();
    (out, cpu_seconds() - start)
}

static BASELINE: OnceLock<(TrainRun, f64)> = OnceLock::new();
static E2E: OnceLock<(EvolveRun, f64)> = OnceLock::new();

fn baseline() -> &'static TrainRun {
    &BASELINE.get_or_init(|| timed(|| train_run(&e2e_config(), Algorithm::Ppo, None, "baseline").unwrap())).0
}

fn e2e() -> &'static EvolveRun {
    &E2E.get_or_init(|| timed(|| evolve_run(&e2e_config(), &AutoReviewer, "e2e-a").unwrap())).0
}

const BASELINE_HER: f64 = 0.30;

#[test]
fn constrained_score_matches_fitness() {
    let _g = serial();
    let started = Instant::now();
    let builtin = ScoreExpr::builtin();
    let n = 1e6;
    let mut mismatches = 0;
    let mut cases = 0;
    for i in 0..10 {
        for j in 0..10 {
            for &d in &[0.0, 5.0, 10.0] {
                let j_r = -5.0 + i as f64 * 1.3;
                let j_c = j as f64 * 1.7;
                let m = MetricsAggregate {
                    avg_return: j_r,
                    avg_cost: j_c,
                    tcr: 0.5,
                    her: 0.5,
                    episodes: 1,
                    wall_clock_s: 0.0,
                };
                let got = score(&m, &builtin, d, n).unwrap();
                let want = constrained_fitness(j_r, j_c, d, n).unwrap();
                mismatches += usize::from(got.to_bits() != want.to_bits());
                cases += 1;
            }
        }
    }
    let t = started.elapsed();
    verdict(
        "constrained-score-equivalence",
        mismatches == 0 && t < Duration::from_secs(1),
        format!("{cases} cases, {mismatches} mismatches, {:.3}s (limit 1s)", t.as_secs_f64()),
    );
}

fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> CostExpr {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.5) {
            CostExpr::constant(rng.gen_range(-2.0..2.0))
        } else {
            CostExpr::feature(FEATURE_NAMES[rng.gen_range(0..FEATURE_NAMES.len())])
        };
    }
    match rng.gen_range(0..4) {
        0 => {
            let ops = [UnaryOp::Neg, UnaryOp::Abs, UnaryOp::Tanh, UnaryOp::Step];
            CostExpr::unary(ops[rng.gen_range(0..ops.len())], random_expr(rng, depth - 1))
        }
        1 => CostExpr::clip(
            random_expr(rng, depth - 1),
            CostExpr::constant(-1.0),
            CostExpr::constant(1.0),
        ),
        _ => {
            let ops = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Min, BinaryOp::Max];
            CostExpr::binary(
                ops[rng.gen_range(0..ops.len())],
                random_expr(rng, depth - 1),
                random_expr(rng, depth - 1),
            )
        }
    }
}

fn random_features(rng: &mut ChaCha8Rng) -> FeatureMap {
    let mut m = FeatureMap::new();
    for name in FEATURE_NAMES {
        m.insert(name, rng.gen_range(-3.0..3.0)).unwrap();
    }
    m
}

#[test]
fn weighted_sum_is_sound() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let maps: Vec<FeatureMap> = (0..1000).map(|_| random_features(&mut rng)).collect();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..=5);
        let fs: Vec<CostExpr> = (0..k).map(|_| random_expr(&mut rng, 3)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mixed = weighted_sum(&fs, &w).unwrap();
        for m in &maps {
            let got = evaluate(&mixed, m).unwrap();
            let want: f64 = fs.iter().zip(&w).map(|(f, wi)| wi * evaluate(f, m).unwrap()).sum();
            let scale = 1.0f64.max(want.abs());
            worst = worst.max((got - want).abs() / scale);
        }
    }
    let t = started.elapsed();
    verdict(
        "weighted-sum-soundness",
        worst <= 1e-12 && t < Duration::from_secs(10),
        format!("max error {worst:.3e} (limit 1e-12), {:.2}s (limit 10s)", t.as_secs_f64()),
    );
}

fn oracle_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn rates_and_distribution_match_oracles() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..60);
        let eps: Vec<EpisodeStats> = (0..len)
            .map(|_| {
                let cost = if rng.gen_bool(0.4) { rng.gen_range(1..30) as f64 } else { 0.0 };
                EpisodeStats::new(rng.gen_range(-1.0..3.0), cost * 0.8, cost, rng.gen_bool(0.7))
            })
            .collect();
        let mut reached = 0usize;
        let mut touched = 0usize;
        for e in &eps {
            if e.reached_goal {
                reached += 1;
            }
            if e.undiscounted_cost > 0.0 {
                touched += 1;
            }
        }
        let (tcr, her) = compute_rates(&eps).unwrap();
        let mut sorted: Vec<f64> = eps.iter().map(|e| e.j_c).collect();
        sorted.sort_by(f64::total_cmp);
        let d = cost_distribution(&eps).unwrap();
        let ok = tcr == reached as f64 / len as f64
            && her == touched as f64 / len as f64
            && d.min == sorted[0]
            && d.max == sorted[len - 1]
            && d.q25 == oracle_quantile(&sorted, 0.25)
            && d.median == oracle_quantile(&sorted, 0.5)
            && d.q75 == oracle_quantile(&sorted, 0.75);
        failures += usize::from(!ok);
    }
    let t = started.elapsed();
    verdict(
        "rate-and-distribution-oracles",
        failures == 0 && t < Duration::from_secs(10),
        format!("1000 episode sets, {failures} mismatches, {:.2}s (limit 10s)", t.as_secs_f64()),
    );
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let _g = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let nets = 12;
    for _ in 0..nets {
        let n_in = rng.gen_range(1..6);
        let mut sizes = vec![n_in];
        for _ in 0..rng.gen_range(1..3) {
            sizes.push(rng.gen_range(2..9));
        }
        sizes.push(rng.gen_range(1..4));
        let mut net = Mlp::random(&sizes, 1.0, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let g: Vec<f64> = (0..net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = net.backward(&x, &g).unwrap();
        let h = 1e-6;
        for p in 0..net.num_params() {
            let orig = net.params()[p];
            let f = |net: &Mlp| -> f64 { net.forward(&x).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum() };
            net.params_mut()[p] = orig + h;
            let up = f(&net);
            net.params_mut()[p] = orig - h;
            let dn = f(&net);
            net.params_mut()[p] = orig;
            let numeric = (up - dn) / (2.0 * h);
            let a = analytic[p];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let t = started.elapsed();
    verdict(
        "gradient-correctness",
        worst < 1e-4 && t < Duration::from_secs(30),
        format!("{nets} nets, max relative error {worst:.2e} (limit 1e-4), {:.2}s", t.as_secs_f64()),
    );
}

fn fuzz_input(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 30] = [
        "x", "speed", "in_hazard", "fuel", "1", "0.5", "1e9", "-", "+", "*", "/", "(", ")", ",", "<", "<=", "==", ">",
        "min(", "max(", "clip(", "if(", "exp(", "log(", "abs(", " ", "1e", ".", "$", "é",
    ];
    let len = rng.gen_range(0..25);
    (0..len).map(|_| PIECES[rng.gen_range(0..PIECES.len())]).collect()
}

#[test]
fn parser_round_trip_and_fuzz() {
    let _g = serial();
    let started = Instant::now();
    let corpus = std::fs::read_to_string(fixtures().join("dsl_corpus.txt")).unwrap();
    let lines: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut broken = Vec::new();
    for line in &lines {
        let ok = parse(line).ok().is_some_and(|e| {
            let text = e.to_string();
            parse(&text).ok() == Some(e) && parse(&text).unwrap().to_string() == text
        });
        if !ok {
            broken.push(*line);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut crashes = 0;
    let mut unexpected = 0;
    let mut parsed = 0;
    for _ in 0..10_000 {
        let input = fuzz_input(&mut rng);
        match std::panic::catch_unwind(|| parse(&input)) {
            Err(_) => crashes += 1,
            Ok(Ok(_)) => parsed += 1,
            Ok(Err(DslError::Parse(_) | DslError::LimitExceeded { .. })) => {}
            Ok(Err(_)) => unexpected += 1,
        }
    }
    let t = started.elapsed();
    verdict(
        "parser-robustness",
        lines.len() == 50 && broken.is_empty() && crashes == 0 && unexpected == 0 && t < Duration::from_secs(30),
        format!(
            "{} corpus lines, {} failed round-trip {broken:?}; 10000 fuzzed inputs, {parsed} parsed, {crashes} crashes, {unexpected} other errors; {:.2}s",
            lines.len(),
            broken.len(),
            t.as_secs_f64()
        ),
    );
}

#[test]
fn ecf_gate_fixture() {
    let _g = serial();
    let texts = std::fs::read_to_string(fixtures().join("ecf/candidates.txt")).unwrap();
    let expected = std::fs::read_to_string(fixtures().join("ecf/expected.txt")).unwrap();
    let settings = GateSettings::for_env(&EnvConfig::default());
    let run = || -> Vec<CandidateStatus> {
        texts
            .lines()
            .enumerate()
            .map(|(i, t)| gate(format!("ecf-{i}"), 1, t, Origin::Llm, &settings, &AutoReviewer).unwrap().status)
            .collect()
    };
    let first = run();
    let second = run();
    let count = |s: CandidateStatus| first.iter().filter(|&&x| x == s).count();
    let names: Vec<&str> = first.iter().map(|s| s.as_str()).collect();
    let want: Vec<&str> = expected.lines().collect();
    let filtered = count(CandidateStatus::LintFailed) + count(CandidateStatus::Rejected);
    verdict(
        "ecf-gate",
        first.len() == 8
            && count(CandidateStatus::SyntaxFailed) == 2
            && filtered == 1
            && count(CandidateStatus::Approved) == 5
            && names == want
            && first == second,
        format!("statuses {names:?}, repeat identical: {}", first == second),
    );
}

#[test]
fn ppo_sanity_baseline() {
    let _g = serial();
    let base = baseline();
    let s = &base.summary;
    let pass = s.tcr >= 0.9 && s.env_steps <= 200_000 && s.t_algo <= 15.0 * 60.0 && (s.her - BASELINE_HER).abs() < 1e-12;
    verdict(
        "ppo-sanity",
        pass,
        format!(
            "tcr {:.2} (>= 0.9), {} env steps (<= 200000), {:.1}s (<= 900s), her {:.2} (pinned {BASELINE_HER})",
            s.tcr, s.env_steps, s.t_algo, s.her
        ),
    );
}

#[test]
fn end_to_end_evolve() {
    let _g = serial();
    let base_her = baseline().summary.her;
    let run = e2e();
    let m = run.outcome.best.metrics.clone().expect("best metrics");
    let trace: Vec<f64> = read_audit(&run.dir.join("audit.log"))
        .unwrap()
        .iter()
        .filter(|e| e["event"] == "iteration")
        .map(|e| e["p_best"].as_f64().unwrap_or(f64::NEG_INFINITY))
        .collect();
    let nondecreasing = trace.windows(2).all(|w| w[1] >= w[0]);
    let t = run.outcome.wall_clock_s;
    verdict(
        "end-to-end-evolve",
        m.her <= 0.5 * base_her && m.tcr >= 0.8 && nondecreasing && trace.len() == 2 && t <= 30.0 * 60.0,
        format!(
            "best her {:.2} (<= 0.5 x {base_her:.2}), tcr {:.2} (>= 0.8), p_best trace {trace:?}, {t:.1}s (<= 1800s)",
            m.her, m.tcr
        ),
    );
}

#[test]
fn fpe_timing_and_time_ratio() {
    let _g = serial();
    let cfg = e2e_config();
    let cand = parse("-in_hazard").unwrap();
    let evo = &cfg.evolution;
    let early = fpe_run(Some(&cand), &EvalPhase::early(evo.t1, evo.eval_episodes), &cfg.env, &cfg.ppo, evo.seed).unwrap();
    let late = fpe_run(Some(&cand), &EvalPhase::late(evo.t2, evo.eval_episodes), &cfg.env, &cfg.ppo, evo.seed).unwrap();
    let (t1, t2) = (early.metrics.wall_clock_s, late.metrics.wall_clock_s);
    let (search, base) = (e2e(), baseline());
    let (search_cpu, base_cpu) = (E2E.get().unwrap().1, BASELINE.get().unwrap().1);
    let tr_cpu = time_ratio(search_cpu, base_cpu).unwrap();
    let tr_wall = time_ratio(search.outcome.wall_clock_s, base.summary.t_algo).unwrap();
    verdict(
        "fpe-timing",
        t1 < t2 && tr_cpu > 1.0,
        format!(
            "t1 phase {t1:.2}s < t2 phase {t2:.2}s; TR {tr_cpu:.3} (> 1.0) on cpu {search_cpu:.1}s / {base_cpu:.1}s, \
             wall {tr_wall:.3} ({:.1}s / {:.1}s)",
            search.outcome.wall_clock_s, base.summary.t_algo
        ),
    );
}

#[test]
fn evolve_is_deterministic() {
    let _g = serial();
    let first = std::fs::read(e2e().dir.join("best.cost")).unwrap();
    let again = evolve_run(&e2e_config(), &AutoReviewer, "e2e-b").unwrap();
    let second = std::fs::read(again.dir.join("best.cost")).unwrap();
    verdict(
        "evolve-determinism",
        first == second && !first.is_empty(),
        format!("best.cost {} bytes, identical: {}", first.len(), first == second),
    );
}
