use heatmap_bfv::{decrypt, encrypt, noise_budget, Context, Evaluator, HeParams, PlainVec, SecretKey};
use heatmap_core::dp::{
    apply_noise, dp_experiment, heatmap_pairs, paper_epsilon_grid, rounded_laplace_mean_abs, sample_discrete_laplace,
    write_report, DpConfig, ExperimentConfig,
};
use heatmap_core::ingest::{aggregate_checkins, synthetic_checkins, synthetic_registry};
use heatmap_core::linalg::EncryptedHeatmap;
use heatmap_core::protocol::centered;
use heatmap_core::CdrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Probability mass of `round(Lap(b)) = k` by Simpson quadrature of the
/// density over `[k - 1/2, k + 1/2)`.
fn quadrature_pmf(k: i64, b: f64) -> f64 {
    let density = |x: f64| (-(x.abs()) / b).exp() / (2.0 * b);
    let (lo, hi) = (k as f64 - 0.5, k as f64 + 0.5);
    // split at the cusp so each piece is smooth
    let pieces: Vec<(f64, f64)> = if lo < 0.0 && hi > 0.0 { vec![(lo, 0.0), (0.0, hi)] } else { vec![(lo, hi)] };
    pieces
        .into_iter()
        .map(|(a, c)| {
            let steps = 200;
            let h = (c - a) / steps as f64;
            let mut s = density(a) + density(c);
            for i in 1..steps {
                s += density(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        })
        .sum()
}

#[test]
fn quadrature_oracle_is_normalized() {
    let s: f64 = (-400..=400).map(|k| quadrature_pmf(k, 2.5)).sum();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn samples_follow_the_rounded_laplace() {
    let dp = DpConfig::new(0.4, 1).unwrap();
    let b = dp.scale();
    let n = 1_000_000usize;
    let samples = sample_discrete_laplace(&dp, n, [42; 32]);
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for &s in &samples {
        *counts.entry(s).or_default() += 1;
    }
    let (lo, hi) = (*counts.keys().next().unwrap(), *counts.keys().last().unwrap());
    let mut emp = 0.0;
    let mut model = (-10_000..lo).map(|k| quadrature_pmf(k, b)).sum::<f64>();
    let mut d_max: f64 = 0.0;
    for k in lo..=hi {
        emp += *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
        model += quadrature_pmf(k, b);
        d_max = d_max.max((emp - model).abs());
    }
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d_max < critical, "KS distance {d_max} >= {critical}");

    let oracle_mean_abs: f64 = (-400..=400i64).map(|k| k.unsigned_abs() as f64 * quadrature_pmf(k, b)).sum();
    let mean_abs = samples.iter().map(|s| s.unsigned_abs() as f64).sum::<f64>() / n as f64;
    assert!((mean_abs - oracle_mean_abs).abs() / oracle_mean_abs < 0.02);
    assert!((rounded_laplace_mean_abs(b) - oracle_mean_abs).abs() < 1e-6);

    let var: f64 = (-400..=400i64).map(|k| (k * k) as f64 * quadrature_pmf(k, b)).sum();
    let mean = samples.iter().sum::<i64>() as f64 / n as f64;
    assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "mean {mean}");
}

#[test]
fn fixed_seed_reproduces() {
    let dp = DpConfig::new(0.25, 3).unwrap();
    assert_eq!(sample_discrete_laplace(&dp, 50, [1; 32]), sample_discrete_laplace(&dp, 50, [1; 32]));
    assert_ne!(sample_discrete_laplace(&dp, 50, [1; 32]), sample_discrete_laplace(&dp, 50, [2; 32]));
}

#[test]
fn homomorphic_noise_adds_exactly_without_depth() {
    let ctx = Context::new(HeParams::named("desk").unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let sk = SecretKey::generate(&ctx, &mut rng);
    let ev = Evaluator::without_keys(ctx.clone());
    let n = ctx.n();
    let t = ctx.params().t();
    let k = n / 2 + 3;
    let agg: Vec<u64> = (0..k as u64).map(|i| i % 50).collect();
    let mut blocks = Vec::new();
    for c in agg.chunks(n / 2) {
        let mut row = c.to_vec();
        row.resize(n / 2, 0);
        blocks.push(encrypt(&sk, &PlainVec::from_rows(&ctx, &row, &row).unwrap(), &mut rng).unwrap());
    }
    let before: Vec<u32> = blocks.iter().map(|b| noise_budget(&sk, b).unwrap()).collect();
    let mut h = EncryptedHeatmap { blocks, k };
    let mut delta = vec![0i64; k];
    delta[0] = -3;
    delta[1] = 5;
    delta[k - 1] = -7;
    apply_noise(&ev, &mut h, &delta).unwrap();
    for (b, &old) in h.blocks.iter().zip(&before) {
        assert!(old - noise_budget(&sk, b).unwrap() < 1);
    }
    let mut out = Vec::new();
    for b in &h.blocks {
        out.extend(decrypt(&sk, b).unwrap().row(0).iter().map(|&v| centered(v, t)));
    }
    out.truncate(k);
    let expect: Vec<i64> = agg.iter().zip(&delta).map(|(&a, &d)| a as i64 + d).collect();
    assert_eq!(out, expect);

    let mut zero = EncryptedHeatmap { blocks: h.blocks.clone(), k };
    apply_noise(&ev, &mut zero, &vec![0; k]).unwrap();
    assert!(apply_noise(&ev, &mut zero, &[1]).is_err());
}

fn synthetic_matrix() -> CdrMatrix {
    let c = synthetic_checkins(200, 12, 5, 50, 4);
    aggregate_checkins(&c, Some(synthetic_registry(12)), None, None).unwrap().matrix
}

#[test]
fn experiment_noise_falls_with_epsilon() {
    let z = synthetic_matrix();
    let cfg = ExperimentConfig {
        w_range: vec![15, 40],
        epsilons: paper_epsilon_grid(),
        trials: 200,
        delta_q: 1,
        seed: [7; 32],
        parallel: true,
    };
    let rows = dp_experiment(&z, &cfg).unwrap();
    assert_eq!(rows.len(), 40);
    for w_rows in rows.chunks(20) {
        for pair in w_rows.windows(2) {
            let spread = pair[0].quantiles[4] - pair[0].quantiles[0];
            let se = spread / 3.29 / (cfg.trials as f64).sqrt();
            assert!(pair[1].mean_noise <= pair[0].mean_noise + 3.0 * se, "{pair:?}");
        }
        assert!(w_rows[0].mean_noise > 5.0 * w_rows[19].mean_noise);
        for r in w_rows {
            assert!(r.min <= r.quantiles[0] && r.quantiles[4] <= r.max);
        }
    }
    let mut csv = Vec::new();
    write_report(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epsilon,w,mean_noise,min,max,q05,q25,q50,q75,q95\n"));
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn experiment_edge_cases() {
    let one = CdrMatrix::from_rows(&[vec![2, 0, 1]]).unwrap();
    let cfg = ExperimentConfig {
        w_range: vec![1],
        epsilons: vec![0.3],
        trials: 3,
        delta_q: 2,
        seed: [0; 32],
        parallel: false,
    };
    let rows = dp_experiment(&one, &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].queries, 3);
    assert!(dp_experiment(&CdrMatrix::zeros(3, 3).unwrap(), &cfg).is_err());
    let bad = ExperimentConfig { w_range: vec![5], ..cfg };
    assert!(dp_experiment(&one, &bad).is_err());
}

#[test]
fn heatmap_pairs_share_the_original() {
    let z = synthetic_matrix();
    let x: Vec<u64> = (0..z.rows()).map(|i| (i % 7 == 0) as u64).collect();
    let (orig, noised) = heatmap_pairs(&z, &x, &[0.05, 0.3], 1, [2; 32]).unwrap();
    assert_eq!(orig, z.vec_mul(&x, u64::MAX).unwrap());
    assert_eq!(noised.len(), 2);
    let dev = |v: &Vec<i64>| v.iter().zip(&orig).map(|(a, &b)| (a - b as i64).abs()).sum::<i64>();
    assert!(dev(&noised[0]) > dev(&noised[1]));
}
