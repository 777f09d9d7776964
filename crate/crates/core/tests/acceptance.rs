//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use heatmap_bfv::{decrypt, encrypt, keygen, noise_budget, Evaluator, KeyMaterial, PlainVec};
use heatmap_core::bench::{fit_rows, run_sweep, SweepConfig};
use heatmap_core::dp::{
    dp_experiment, paper_epsilon_grid, rounded_laplace_mean_abs, rounded_laplace_pmf, sample_discrete_laplace,
    DpConfig, ExperimentConfig,
};
use heatmap_core::ingest::{aggregate_checkins, synthetic_checkins, synthetic_registry};
use heatmap_core::linalg::{mat_mul_tile, BsgsPlan, PreparedMatrix};
use heatmap_core::masking::{inner_sum, inner_sum_indices, plain_mask_scalar, plain_randomness};
use heatmap_core::protocol::{
    client_finalize, client_prepare, context_for, ideal_f_cov, keygen_for, ClientRequest, Ledger, Message, Period,
    Policy, RejectReason, Server, ServerConfig,
};
use heatmap_core::{master_seed, CdrMatrix, CoreError, ThreadBudget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn period(s: &str) -> Period {
    Period::parse(s).unwrap()
}

fn random_z(rng: &mut ChaCha20Rng, rows: usize, cols: usize, cap: u64) -> CdrMatrix {
    CdrMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..=cap)).collect()).unwrap()
}

fn binary(rng: &mut ChaCha20Rng, len: usize, ones: usize) -> Vec<u64> {
    let mut x = vec![0u64; len];
    for i in rand::seq::index::sample(rng, len, ones.min(len)) {
        x[i] = 1;
    }
    x
}

fn server(params: &str, masked: bool, z: CdrMatrix, dp: DpConfig, threads: ThreadBudget) -> Result<Server, String> {
    let mut cfg = ServerConfig::new(params);
    cfg.masked = masked;
    cfg.dp = dp;
    cfg.threads = threads;
    cfg.policy = Policy {
        w_min: 0,
        ..Policy::default()
    };
    ok(Server::new(cfg, Arc::new(z), Ledger::in_memory()))
}

fn keys(name: &str, masked: bool, seed: u64) -> Result<KeyMaterial, String> {
    let ctx = ok(context_for(name))?;
    ok(keygen_for(&ctx, masked, &mut ChaCha20Rng::seed_from_u64(seed)))
}

fn oracle_equivalence() -> Outcome {
    let ctx = ok(context_for("desk"))?;
    let (n, t) = (ctx.n(), ctx.params().t());
    let km = keys("desk", false, 1)?;
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let mut tiles = 0;
    for inst in 0..50u64 {
        let rows = rng.random_range(1..=4 * n);
        let cols = rng.random_range(1..=n);
        let cap = rng.random_range(1..=8);
        let z = random_z(&mut rng, rows, cols, cap);
        let eps = rng.random_range(1..=20) as f64 * 0.05;
        let dp = ok(DpConfig::new(eps, cap))?;
        let srv = server("desk", false, z.clone(), dp, ThreadBudget::max())?;
        let ones = rng.random_range(0..=rows.min(200));
        let x = binary(&mut rng, rows, ones);
        let req = ok(client_prepare(&km, &x, false, "j", period("2020-01-01..2020-01-07"), &mut rng))?;
        let seed = master_seed(inst);
        let (resp, report) = ok(srv.process(&req, &seed))?;
        tiles += report.n_v * report.n_o;
        let h = ok(client_finalize(&km.secret, &resp, cols))?;
        let ideal = ok(ideal_f_cov(&x, req.w, &z, &dp, &seed, t))?;
        ensure!(h.consistent, "instance {inst}: slot rows disagree");
        ensure!(h.values == ideal, "instance {inst} ({rows}x{cols}) differs from the ideal output");
    }
    Ok(format!("50 instances, {tiles} tiles, all equal to the ideal functionality"))
}

fn bsgs_rotation_budget() -> Outcome {
    let ctx = ok(context_for("desk"))?;
    let (n, t) = (ctx.n(), ctx.params().t());
    let plan = ok(BsgsPlan::for_params(ctx.params()))?;
    let mut rot = plan.rotation_indices();
    rot.extend(inner_sum_indices(n));
    let mut rng = ChaCha20Rng::seed_from_u64(200);
    let km = ok(keygen(&ctx, &rot, false, &mut rng))?;
    let ev = ok(Evaluator::new(ctx.clone(), Arc::new(km.eval.clone())))?;
    let z = Arc::new(random_z(&mut rng, 2 * n, n, 1000));
    let pm = ok(PreparedMatrix::new(ctx.clone(), z.clone()))?;
    for j in 0..2 {
        let x: Vec<u64> = (0..2 * n).map(|i| if i / n == j { rng.random_range(0..2) } else { 0 }).collect();
        let c = ok(encrypt(&km.secret, &ok(PlainVec::new(&ctx, &x[j * n..(j + 1) * n]))?, &mut rng))?;
        let expect = ok(z.vec_mul(&x, t))?;
        for i in 0..2 {
            let before = ev.counts();
            let out = ok(mat_mul_tile(&ev, &pm, j, i, &c, None, true))?.ok_or("dense tile skipped")?;
            let used = ev.counts() - before;
            ensure!(
                used.row_rotations as usize == plan.m1 + plan.m2 - 2,
                "tile ({j},{i}) used {} row rotations",
                used.row_rotations
            );
            ensure!(used.column_rotations == 1, "tile ({j},{i}) used {} column rotations", used.column_rotations);
            let got = ok(decrypt(&km.secret, &out))?;
            ensure!(got.row(0) == &expect[i * n / 2..(i + 1) * n / 2], "tile ({j},{i}) row 0 wrong");
        }
    }
    let mut unit = vec![0u64; n];
    unit[0] = 1;
    let c = ok(encrypt(&km.secret, &ok(PlainVec::new(&ctx, &unit))?, &mut rng))?;
    let before = ev.counts();
    let s = ok(inner_sum(&ev, &c))?;
    let used = ev.counts() - before;
    let log = (n / 2).trailing_zeros() as u64;
    ensure!(used.row_rotations == log, "inner sum used {} row rotations", used.row_rotations);
    ensure!(ok(decrypt(&km.secret, &s))?.slots().iter().all(|&v| v == 1), "inner sum of a unit vector");
    Ok(format!(
        "4 tiles exact, {} rotations per tile (m1={}, m2={}), inner sum {log} + 1",
        plan.m1 + plan.m2 - 2,
        plan.m1,
        plan.m2
    ))
}

/// Query vectors that are not binary, or whose announced weight is wrong.
fn adversarial_vectors(t: u64) -> Vec<(Vec<u64>, u64)> {
    let mut v = vec![
        (vec![2, 0, 0, 0, 0, 0, 0, 0], 2),
        (vec![2, 0, 0, 0, 0, 0, 0, 0], 1),
        (vec![1, 1, 0, 0, 0, 0, 0, 0], 3),
        (vec![1, 1, 1, 0, 0, 0, 0, 0], 2),
        (vec![0; 8], 1),
        (vec![1; 8], 7),
        (vec![t - 1, 2, 0, 0, 0, 0, 0, 0], 1),
        (vec![t - 1, 0, 0, 0, 0, 0, 0, 1], 0),
        (vec![3, 0, 0, 0, 0, 0, 0, 0], 3),
        (vec![0, 0, 0, 0, 0, 0, 0, 5], 5),
        (vec![1, 0, 1, 0, 1, 0, 1, t - 3], 1),
        (vec![(t + 1) / 2, (t + 1) / 2, 0, 0, 0, 0, 0, 0], 1),
        (vec![2, 2, 2, 2, 2, 2, 2, 2], 16),
        (vec![1, 1, 1, 1, 0, 0, 0, 0], 5),
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(300);
    while v.len() < 20 {
        let x: Vec<u64> = (0..8).map(|_| rng.random_range(0..t)).collect();
        let w = x.iter().sum::<u64>() % t;
        v.push((x, w));
    }
    v
}

fn mask_soundness() -> Outcome {
    let t = 12289u64;
    let draws = 100_000u64;
    let vectors = adversarial_vectors(t);
    let p0 = 3.0 / t as f64;
    let sigma = (p0 * (1.0 - p0) / draws as f64).sqrt();
    let bound = p0 + 3.0 * sigma;
    let mut worst = 0.0f64;
    for (vi, (x, w)) in vectors.iter().enumerate() {
        ensure!(
            !(x.iter().all(|&v| v <= 1) && x.iter().sum::<u64>() == *w),
            "vector {vi} is honest"
        );
        let mut zeros = 0u64;
        for d in 0..draws {
            let seed = [vi as u8, 0, 0, 0, 0, 0, 0, 0].iter().chain(&d.to_le_bytes()).copied().collect::<Vec<u8>>();
            let r = ok(plain_randomness(&seed, t))?;
            zeros += (plain_mask_scalar(x, *w, t, &r, true) == 0) as u64;
        }
        let p = zeros as f64 / draws as f64;
        worst = worst.max(p);
        ensure!(p <= bound, "vector {vi}: P[mask = 0] = {p:.2e} > {bound:.2e}");
    }
    Ok(format!("worst P[mask = 0] = {worst:.2e} <= {bound:.2e} over 20 vectors x {draws}"))
}

// Every tenth run is a single desk-mask tile; the rest use the toy ring so
// multi-tile shapes stay affordable.
fn mask_completeness() -> Outcome {
    let sets = [("desk-mask", keys("desk-mask", true, 2)?), ("toy", keys("toy", true, 2)?)];
    let mut rng = ChaCha20Rng::seed_from_u64(400);
    let mut tiles = 0;
    for run in 0..100u64 {
        let (name, km) = if run % 10 == 0 { (&sets[0].0, &sets[0].1) } else { (&sets[1].0, &sets[1].1) };
        let n = km.secret.context().n();
        let (max_rows, max_cols) = if run % 10 == 0 { (n, n / 2) } else { (2 * n, n) };
        let rows = rng.random_range(1..=max_rows);
        let cols = rng.random_range(1..=max_cols);
        let z = random_z(&mut rng, rows, cols, 6);
        let ones = rng.random_range(0..=rows.min(64));
        let x = binary(&mut rng, rows, ones);
        let req = ok(client_prepare(km, &x, true, "j", period("2020-02-01..2020-02-02"), &mut rng))?;
        let seed = master_seed(run);
        let masked = server(name, true, z.clone(), DpConfig::disabled(), ThreadBudget::max())?;
        let plain = server(name, false, z, DpConfig::disabled(), ThreadBudget::max())?;
        let (mr, report) = ok(masked.process(&req, &seed))?;
        let (pr, _) = ok(plain.process(&req, &seed))?;
        tiles += report.n_v * report.n_o;
        let hm = ok(client_finalize(&km.secret, &mr, cols))?;
        let hp = ok(client_finalize(&km.secret, &pr, cols))?;
        ensure!(hm.consistent && hm == hp, "run {run} ({name}, {rows}x{cols}): masked output differs");
    }
    Ok(format!("100 masked runs ({tiles} tiles, 10 on desk-mask) identical to unmasked"))
}

fn depth_adequacy() -> Outcome {
    let ctx = ok(context_for("paper-2"))?;
    let (n, t) = (ctx.n(), ctx.params().t());
    let km = keys("paper-2", true, 3)?;
    let mut rng = ChaCha20Rng::seed_from_u64(500);
    let z = random_z(&mut rng, n, n / 2, 15);
    let x = binary(&mut rng, n, 40);
    let w = 40;
    let req = ok(client_prepare(&km, &x, true, "j", period("2020-03-01..2020-03-14"), &mut rng))?;
    let dp = ok(DpConfig::new(0.4, 15))?;
    let srv = server("paper-2", true, z.clone(), dp, ThreadBudget::max())?;
    let seed = master_seed(5);
    let (resp, report) = ok(srv.process(&req, &seed))?;
    let budget = resp.blocks.iter().map(|b| noise_budget(&km.secret, b)).collect::<Result<Vec<_>, _>>();
    let budget = ok(budget)?.into_iter().min().unwrap_or(0);
    ensure!(budget > 0, "noise budget exhausted");
    let h = ok(client_finalize(&km.secret, &resp, n / 2))?;
    ensure!(h.values == ok(ideal_f_cov(&x, w, &z, &dp, &seed, t))?, "wrong heatmap");
    Ok(format!(
        "paper-2 masked tile: final budget {budget} bits, {} ct-ct products",
        report.counts.ct_ct_mults
    ))
}

// The toy ring keeps each pass short, so many interleaved passes fit and the
// best of them is stable even on a busy shared host.
fn runtime_linearity() -> Outcome {
    let cfg = SweepConfig {
        params: "toy".into(),
        masked: false,
        sizes: vec![1, 2, 3, 4, 5, 6],
        threads: ThreadBudget::sequential(),
        seed: 6,
        cache_bytes: 0,
        repeats: 30,
    };
    let rows = ok(run_sweep(&cfg))?;
    let fit = fit_rows(&rows).ok_or("degenerate sweep")?;
    ensure!(fit.r2 >= 0.99, "R^2 = {:.4}", fit.r2);
    Ok(format!(
        "{} points on {}, best of {} passes, {:.3}s per MatMul, R^2 = {:.4}",
        rows.len(),
        cfg.params,
        cfg.repeats,
        fit.slope,
        fit.r2
    ))
}

fn dp_distribution() -> Outcome {
    let dp = ok(DpConfig::new(0.4, 1))?;
    let b = dp.scale();
    let n = 1_000_000usize;
    let samples = sample_discrete_laplace(&dp, n, [7; 32]);
    let mut counts = BTreeMap::<i64, usize>::new();
    for &s in &samples {
        *counts.entry(s).or_default() += 1;
    }
    let (lo, hi) = (*counts.keys().next().unwrap(), *counts.keys().last().unwrap());
    // pmf oracle: sum of the continuous mass over each rounding interval
    let pmf = |k: i64| -> f64 {
        let cdf = |x: f64| if x < 0.0 { 0.5 * (x / b).exp() } else { 1.0 - 0.5 * (-x / b).exp() };
        cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5)
    };
    let mut emp = 0.0;
    let mut model: f64 = (-100_000..lo).map(pmf).sum();
    let mut d = 0.0f64;
    for k in lo..=hi {
        emp += *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
        model += pmf(k);
        d = d.max((emp - model).abs());
        ensure!((pmf(k) - rounded_laplace_pmf(k, b)).abs() < 1e-12, "pmf mismatch at {k}");
    }
    let critical = 1.628 / (n as f64).sqrt();
    ensure!(d < critical, "KS distance {d:.2e} >= {critical:.2e}");
    let oracle: f64 = (-10_000..=10_000i64).map(|k| k.unsigned_abs() as f64 * pmf(k)).sum();
    let mean = samples.iter().map(|s| s.unsigned_abs() as f64).sum::<f64>() / n as f64;
    let rel = (mean - oracle).abs() / oracle;
    ensure!(rel < 0.02, "mean |noise| {mean:.4} vs oracle {oracle:.4}");
    ensure!((rounded_laplace_mean_abs(b) - oracle).abs() < 1e-6, "closed-form mean disagrees");

    let grid = paper_epsilon_grid();
    ensure!(grid.len() == 20, "epsilon grid has {} points", grid.len());
    let c = synthetic_checkins(300, 12, 5, 60, 8);
    let z = ok(aggregate_checkins(&c, Some(synthetic_registry(12)), None, None))?.matrix;
    let exp = ExperimentConfig {
        w_range: vec![15],
        epsilons: grid.clone(),
        trials: 400,
        delta_q: 1,
        seed: [8; 32],
        parallel: true,
    };
    let rows = ok(dp_experiment(&z, &exp))?;
    let analytic: Vec<f64> = grid.iter().map(|&e| rounded_laplace_mean_abs(1.0 / e)).collect();
    ensure!(analytic.windows(2).all(|p| p[1] < p[0]), "analytic mean not decreasing");
    for p in rows.windows(2) {
        let se = (p[0].quantiles[4] - p[0].quantiles[0]) / 3.29 / (exp.trials as f64).sqrt();
        ensure!(p[1].mean_noise <= p[0].mean_noise + 3.0 * se, "noise rises from eps {} to {}", p[0].epsilon, p[1].epsilon);
    }
    ensure!(rows[0].mean_noise > 5.0 * rows[19].mean_noise, "no clear trend over the grid");
    Ok(format!(
        "KS {d:.2e} < {critical:.2e}, mean |noise| off by {:.2}%, {} grid points decreasing",
        100.0 * rel,
        rows.len()
    ))
}

fn thread_determinism() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(800);
    let mut checked = Vec::new();
    for (params, masked) in [("desk", false), ("desk-mask", true)] {
        let ctx = ok(context_for(params))?;
        let n = ctx.n();
        let km = keys(params, masked, 8)?;
        let z = random_z(&mut rng, n + 37, n / 2 + 5, 6);
        let x = binary(&mut rng, n + 37, 25);
        let req = ok(client_prepare(&km, &x, masked, "j", period("2020-04-01..2020-04-02"), &mut rng))?;
        let mut outs = Vec::new();
        for threads in [ThreadBudget::sequential(), ThreadBudget::new(2), ThreadBudget::max()] {
            let srv = server(params, masked, z.clone(), ok(DpConfig::new(0.3, 6))?, threads)?;
            let (resp, _) = ok(srv.process(&req, &master_seed(8)))?;
            outs.push(ok(Message::Response(resp).encode())?);
        }
        ensure!(outs.windows(2).all(|w| w[0] == w[1]), "{params}: responses differ across thread budgets");
        checked.push(params);
    }
    Ok(format!("byte-identical responses for 1, 2 and {} threads on {}", ThreadBudget::max().resolve(), checked.join(", ")))
}

fn rejection(r: Result<impl Sized, CoreError>) -> Option<RejectReason> {
    match r {
        Err(CoreError::Rejected { reason, .. }) => Some(reason),
        _ => None,
    }
}

fn policy_enforcement() -> Outcome {
    let km = keys("desk", false, 9)?;
    let mut rng = ChaCha20Rng::seed_from_u64(900);
    let mut cfg = ServerConfig::new("desk");
    cfg.policy = Policy {
        w_min: 15,
        jurisdictions: Some(BTreeSet::from(["vienna".to_string()])),
        collection: Some(period("2020-01-01..2020-06-30")),
    };
    let srv = ok(Server::new(cfg, Arc::new(random_z(&mut rng, 40, 6, 3)), Ledger::in_memory()))?;
    let x = binary(&mut rng, 40, 20);
    let p = period("2020-03-01..2020-03-14");
    let mut prep = |x: &[u64], j: &str, p: Period| client_prepare(&km, x, false, j, p, &mut rng).unwrap();
    let cases: Vec<(&str, ClientRequest, RejectReason)> = vec![
        ("w below floor", prep(&binary(&mut ChaCha20Rng::seed_from_u64(1), 40, 14), "vienna", p), RejectReason::WTooSmall),
        ("outside allowlist", prep(&x, "graz", p), RejectReason::OutOfJurisdiction),
        ("outside collection", prep(&x, "vienna", period("2020-06-25..2020-07-02")), RejectReason::PeriodOutOfRange),
    ];
    for (name, req, want) in &cases {
        ensure!(rejection(srv.process(req, &[0; 32])) == Some(*want), "{name}: expected {want}");
    }
    ok(srv.process(&prep(&x, "vienna", p), &[0; 32]))?;
    let overlap = prep(&x, "vienna", period("2020-03-10..2020-03-20"));
    ensure!(rejection(srv.process(&overlap, &[0; 32])) == Some(RejectReason::PeriodOverlap), "overlap accepted");
    let mut bad = prep(&x, "vienna", period("2020-05-01..2020-05-02"));
    bad.blocks.clear();
    let (msg, _) = ok(srv.handle(Message::Request(bad), &[0; 32]))?;
    ensure!(matches!(msg, Message::Reject { reason: RejectReason::Malformed, .. }), "malformed accepted");
    ok(srv.process(&prep(&x, "vienna", period("2020-03-15..2020-03-21")), &[0; 32]))?;
    ensure!(srv.ledger_entries() == 2, "ledger holds {} entries", srv.ledger_entries());
    Ok("W_TOO_SMALL, OUT_OF_JURISDICTION, PERIOD_OUT_OF_RANGE, PERIOD_OVERLAP, MALFORMED".into())
}

fn serialization() -> Outcome {
    let ctx = ok(context_for("desk"))?;
    let n = ctx.n();
    let km = keys("desk", false, 10)?;
    let mut rng = ChaCha20Rng::seed_from_u64(1000);
    let mut ratios = Vec::new();
    for (i, (rows, cols)) in [(5, 3), (n, n / 2), (2 * n + 1, n / 2 + 1), (3 * n, n)].into_iter().enumerate() {
        let z = random_z(&mut rng, rows, cols, 4);
        let srv = server("desk", false, z, ok(DpConfig::new(0.5, 4))?, ThreadBudget::max())?;
        let x = binary(&mut rng, rows, rows.min(20));
        let req = ok(client_prepare(&km, &x, false, &format!("j{i}"), period("2020-01-01..2020-01-09"), &mut rng))?;
        let (resp, _) = ok(srv.process(&req, &[i as u8; 32]))?;
        let msgs = [Message::Request(req), Message::Response(resp)];
        for m in &msgs {
            let frame = ok(m.encode())?;
            let back = ok(Message::decode(&frame))?;
            ensure!(ok(back.encode())? == frame, "{:?} did not roundtrip", m.kind());
        }
        let (a, b) = (ok(msgs[0].encode())?.len(), ok(msgs[1].encode())?.len());
        ensure!(a > b, "request {a} bytes <= response {b} bytes");
        ratios.push(a as f64 / b as f64);
    }
    for reason in RejectReason::ALL {
        let m = Message::Reject {
            reason,
            detail: format!("{reason}"),
        };
        let frame = ok(m.encode())?;
        ensure!(ok(ok(Message::decode(&frame))?.encode())? == frame, "reject {reason} did not roundtrip");
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("all message types roundtrip; request/response size ratio >= {min:.1}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("bsgs rotation budget", bsgs_rotation_budget),
        ("mask soundness", mask_soundness),
        ("mask completeness", mask_completeness),
        ("depth adequacy", depth_adequacy),
        ("runtime linearity", runtime_linearity),
        ("dp distribution", dp_distribution),
        ("thread determinism", thread_determinism),
        ("policy enforcement", policy_enforcement),
        ("serialization", serialization),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
