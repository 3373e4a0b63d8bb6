//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the test harness so the report reads as a
//! table.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use clickcast::commands::{self, SimulateConfig};
use clickcast_core::evaluation::AccuracyReport;
use clickcast_core::filter::{resample_multinomial, resample_systematic};
use clickcast_core::oracle::{exact_posterior, GridSpec};
use clickcast_core::simulator::{generate_dataset, sample_click, TaskKind, STUDY_COLORS, STUDY_MARKS};
use clickcast_core::{
    transition_color_pmf, transition_sample, AttentionState, ClickEvent, FilterParams, Mark, MarkSpace,
    ModelParams, ParticleSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let out = Outcome {
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {:<26} {} [{:.1}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.name,
        out.detail,
        out.elapsed.as_secs_f64()
    );
    out
}

// ---------------------------------------------------------------------------
// Oracle fixture: 12 marks, two colors, 50 scripted sessions of 8 clicks.

const FIXTURE_SESSIONS: u64 = 50;
const FIXTURE_CLICKS: usize = 8;

fn fixture_space() -> MarkSpace<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let marks = (0..12)
        .map(|i| Mark {
            id: i + 1,
            x: rng.random_range(0.05..0.95),
            y: rng.random_range(0.05..0.95),
            color: (i % 2) as u32 + 1,
        })
        .collect();
    MarkSpace::new(marks, 2).expect("fixture is valid")
}

/// Click scripts drawn from a scripted user: random start, slow drift.
fn fixture_scripts(space: &MarkSpace<f64>) -> Vec<Vec<ClickEvent<f64>>> {
    let user = ModelParams::new(0.08, 0.08, 0.2, 0.9).expect("valid");
    (0..FIXTURE_SESSIONS)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
            let mut state = AttentionState::new(rng.random(), rng.random(), rng.random_range(1..=2), rng.random());
            (1..=FIXTURE_CLICKS)
                .map(|t| {
                    if t > 1 {
                        state = transition_sample(&state, &user, 2, &mut rng);
                    }
                    sample_click(space, &state, &user, t, &mut rng)
                })
                .collect()
        })
        .collect()
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

struct OracleRun {
    /// Per (session, t) color-marginal TV distance, t = 1..=8.
    tvs: Vec<f64>,
    top1_matches: usize,
    top1_steps: usize,
}

struct OracleTruth {
    colors: Vec<Vec<Vec<f64>>>,
    top1: Vec<Vec<Option<u64>>>,
}

fn oracle_truth(space: &MarkSpace<f64>, scripts: &[Vec<ClickEvent<f64>>], model: &ModelParams<f64>) -> OracleTruth {
    let grid = GridSpec::new(20, 20, 5, 2).expect("grid fits");
    let mut colors = Vec::new();
    let mut top1 = Vec::new();
    for clicks in scripts {
        let post = exact_posterior(space, clicks, model, grid).expect("fixture clicks are possible");
        colors.push((1..=clicks.len()).map(|t| post.color_marginal(t)).collect());
        top1.push((1..=clicks.len()).map(|t| post.prediction(t, 1).top()).collect());
    }
    OracleTruth { colors, top1 }
}

fn particle_run(
    space: &MarkSpace<f64>,
    scripts: &[Vec<ClickEvent<f64>>],
    truth: &OracleTruth,
    particles: usize,
) -> OracleRun {
    let mut run = OracleRun {
        tvs: Vec::new(),
        top1_matches: 0,
        top1_steps: 0,
    };
    for (s, clicks) in scripts.iter().enumerate() {
        let params = FilterParams {
            particles,
            seed: 9000 + s as u64,
            ..FilterParams::default()
        };
        let mut ps = ParticleSet::init(space, &params).expect("valid params");
        for (i, click) in clicks.iter().enumerate() {
            ps.step(click, space, &params).expect("fixture click");
            run.tvs.push(tv(&ps.color_marginal(), &truth.colors[s][i]));
            if ps.t() >= params.warmup {
                run.top1_steps += 1;
                let ours = ps.predict(space, &FilterParams { alpha: 1, ..params }).top();
                run.top1_matches += (ours == truth.top1[s][i]) as usize;
            }
        }
    }
    run
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let space = fixture_space();
    let scripts = fixture_scripts(&space);
    let model = ModelParams::<f64>::default();
    let mut truth = None;
    let mut outcomes = Vec::new();
    let mut runs: Vec<(usize, OracleRun)> = Vec::new();

    outcomes.push(timed("oracle-equivalence", || {
        let start = Instant::now();
        let exact = truth.insert(oracle_truth(&space, &scripts, &model));
        let run = particle_run(&space, &scripts, exact, 100_000);
        let elapsed = start.elapsed();
        let rate = run.top1_matches as f64 / run.top1_steps as f64;
        let worst = run.tvs.iter().copied().fold(0.0, f64::max);
        let detail = format!(
            "top-1 agreement {:.4} over {} steps (need >= 0.95), max color TV {:.4} (need <= 0.05), {:.1}s (need < 120s)",
            rate,
            run.top1_steps,
            worst,
            elapsed.as_secs_f64()
        );
        runs.push((100_000, run));
        (rate >= 0.95 && worst <= 0.05 && elapsed < Duration::from_secs(120), detail)
    }));
    let truth = truth.expect("oracle computed");

    outcomes.push(timed("convergence-in-m", || {
        for m in [100, 1_000, 10_000] {
            runs.push((m, particle_run(&space, &scripts, &truth, m)));
        }
        runs.sort_by_key(|(m, _)| *m);
        let stats: Vec<(usize, f64, f64)> = runs
            .iter()
            .map(|(m, r)| {
                let (mean, se) = mean_se(&r.tvs);
                (*m, mean, se)
            })
            .collect();
        let ok = stats
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 + 3.0 * (w[0].2.powi(2) + w[1].2.powi(2)).sqrt());
        let detail = stats
            .iter()
            .map(|(m, mean, se)| format!("m={m}: {mean:.4}±{se:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        (ok, format!("mean color TV {detail}"))
    }));

    outcomes.push(timed("synthetic-study", synthetic_study));
    outcomes.push(timed("distributional-exactness", distributional_exactness));
    outcomes.push(timed("resampling-unbiasedness", resampling_unbiasedness));
    outcomes.push(timed("determinism", determinism));
    outcomes.push(timed("performance", performance));

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn curve_ok(report: &AccuracyReport, kind: &str) -> (bool, f64, f64) {
    let curve = report.curve(kind).unwrap_or(&[]);
    let mean_over = |lo: usize, hi: usize| {
        let v: Vec<f64> = (lo..=hi)
            .filter_map(|t| t.checked_sub(report.warmup).and_then(|i| curve.get(i).copied().flatten()))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    match (mean_over(3, 9), mean_over(10, 20)) {
        (Some(early), Some(late)) => (late >= early - 0.03, early, late),
        (Some(early), None) => (true, early, f64::NAN),
        _ => (false, f64::NAN, f64::NAN),
    }
}

fn synthetic_study() -> (bool, String) {
    let cfg = SimulateConfig {
        marks: STUDY_MARKS,
        colors: STUDY_COLORS,
        data_seed: 7,
        sessions: vec![(TaskKind::Geo, 28), (TaskKind::Type, 23), (TaskKind::Mixed, 27)],
    };
    let start = Instant::now();
    let sim = commands::simulate_sessions(&cfg).expect("simulation runs");
    let params = FilterParams::<f64>::default();
    let report = commands::evaluate_sessions(&sim.space, &sim.sessions, &params).expect("evaluation runs");
    let elapsed = start.elapsed();
    let mut ok = elapsed < Duration::from_secs(300);
    let mut parts = Vec::new();
    for kind in TaskKind::ALL {
        let s = report.summary(kind.as_str()).expect("every kind simulated");
        let (flat, early, late) = curve_ok(&report, kind.as_str());
        ok &= s.pooled_accuracy >= 0.90 && flat;
        parts.push(format!(
            "{} {:.4} (curve t3-9 {:.3}, t10-20 {:.3})",
            kind, s.pooled_accuracy, early, late
        ));
    }
    (
        ok,
        format!(
            "pooled accuracy need >= 0.90 each: {}; {:.1}s (need < 300s)",
            parts.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn distributional_exactness() -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();

    // The color pmf sums to one up to the rounding of the summation.
    let mut worst = 0.0f64;
    for k in 2..=16u32 {
        for rho in [0.0, 0.1, 0.5, 0.9, 0.96, 0.999, 1.0] {
            let p = ModelParams::new(0.1, 0.1, 0.45, rho).expect("valid");
            for from in 1..=k {
                let pmf = transition_color_pmf(from, &p, k).expect("valid color");
                let err = (pmf.iter().sum::<f64>() - 1.0).abs();
                worst = worst.max(err);
                ok &= err <= k as f64 * f64::EPSILON;
            }
        }
    }
    notes.push(format!("max |sum pmf - 1| {worst:.1e}"));

    // Empirical transition frequencies.
    let n = 1_000_000usize;
    let p = ModelParams::new(0.1, 0.1, 0.45, 0.96).expect("valid");
    let start = AttentionState::new(0.5, 0.5, 3, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut colors = [0usize; 8];
    let (mut bias_one, mut bias_zero, mut x_low) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let s = transition_sample(&start, &p, 8, &mut rng);
        colors[s.color as usize - 1] += 1;
        bias_one += (s.bias == 1.0) as usize;
        bias_zero += (s.bias == 0.0) as usize;
        x_low += (s.x <= 0.4) as usize;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let pmf = transition_color_pmf(3, &p, 8).expect("valid");
    let mut expected: Vec<(String, f64, usize)> = pmf
        .iter()
        .enumerate()
        .map(|(j, &q)| (format!("color {}", j + 1), q, colors[j]))
        .collect();
    expected.push(("bias clamped to 1".into(), 1.0 - normal.cdf(0.1 / 0.45), bias_one));
    expected.push(("bias clamped to 0".into(), normal.cdf(-0.9 / 0.45), bias_zero));
    expected.push(("x <= 0.4".into(), normal.cdf(-1.0), x_low));
    let mut max_z = 0.0f64;
    for (label, q, count) in &expected {
        let se = (q * (1.0 - q) / n as f64).sqrt();
        let z = (*count as f64 / n as f64 - q).abs() / se;
        max_z = max_z.max(z);
        if z > 3.0 {
            ok = false;
            notes.push(format!("{label} off by {z:.2} SE"));
        }
    }
    notes.push(format!("{} frequencies, max deviation {max_z:.2} SE (need <= 3)", expected.len()));

    // Extreme spreads never leave the domain.
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let sigmas = [1e-300, 1e-12, 1e6, 1e300];
    let mut escaped = 0usize;
    let mut state = AttentionState::new(0.5, 0.5, 1, 0.5);
    for i in 0..n {
        let sx = sigmas[i % 4];
        let sb = sigmas[(i / 4) % 4];
        let p = ModelParams::new(sx, sigmas[(i / 16) % 4], sb, rng.random()).expect("valid");
        state = transition_sample(&state, &p, 5, &mut rng);
        escaped += !state.is_valid(5) as usize;
    }
    ok &= escaped == 0;
    notes.push(format!("{escaped} out-of-domain states in {n} extreme-spread draws"));
    (ok, notes.join("; "))
}

fn resampling_unbiasedness() -> (bool, String) {
    let weights = [0.05, 0.4, 0.1, 0.3, 0.15];
    let reps = 10_000usize;
    let m = weights.len();
    let chi = ChiSquared::new((m - 1) as f64).expect("positive dof");
    let mut out = Vec::new();
    let mut ok = true;
    for (label, systematic) in [("multinomial", false), ("systematic", true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut counts = [0usize; 5];
        for _ in 0..reps {
            let picked = if systematic {
                resample_systematic(&weights, m, &mut rng)
            } else {
                resample_multinomial(&weights, m, &mut rng)
            }
            .expect("weights have mass");
            for i in picked {
                counts[i] += 1;
            }
        }
        let total = (reps * m) as f64;
        let stat: f64 = weights
            .iter()
            .zip(&counts)
            .map(|(w, &c)| {
                let e = total * w;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - chi.cdf(stat);
        ok &= p > 0.001;
        out.push(format!("{label} chi2 {stat:.3}, p {p:.3}"));
    }
    (ok, format!("{} (need p > 0.001)", out.join("; ")))
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = SimulateConfig {
        marks: 400,
        colors: 6,
        data_seed: 3,
        sessions: vec![(TaskKind::Geo, 1)],
    };
    let sim = commands::simulate_sessions(&cfg).expect("simulation runs");
    commands::export_sessions(dir.path(), &sim.space, &sim.sessions).expect("export");
    let spec = dir.path().join("spec.json");
    let log = dir.path().join("logs/geo_000.jsonl");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_clickcast"))
            .args(["replay", "--seed", "42", "--spec"])
            .arg(&spec)
            .arg("--log")
            .arg(&log)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).expect("csv written")
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let rows = a.iter().filter(|&&c| c == b'\n').count();
    (a == b && rows > 1, format!("two replays with seed 42: {} bytes, {} lines, identical: {}", a.len(), rows, a == b))
}

fn performance() -> (bool, String) {
    let space = generate_dataset::<f64>(2000, 8, 1).expect("dataset");
    let params = FilterParams::<f64> {
        seed: 5,
        ..FilterParams::default()
    };
    let mut ps = ParticleSet::init(&space, &params).expect("valid params");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let user = ModelParams::new(0.03, 0.03, 0.05, 0.95).expect("valid");
    let mut state = AttentionState::new(0.5, 0.5, 2, 0.7);
    let mut times = Vec::new();
    for t in 1..=43 {
        if t > 1 {
            state = transition_sample(&state, &user, 8, &mut rng);
        }
        let click = sample_click(&space, &state, &user, t, &mut rng);
        let start = Instant::now();
        ps.step(&click, &space, &params).expect("valid click");
        let pred = ps.predict(&space, &params);
        let elapsed = start.elapsed();
        assert_eq!(pred.len(), 100);
        if t > 3 {
            times.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    (
        median < 50.0,
        format!("median step+predict {median:.2} ms over {} clicks (need < 50 ms)", times.len()),
    )
}
