use std::collections::BTreeSet;
use std::sync::Arc;

use heatmap_bfv::{decrypt, encrypt, keygen, Context, Evaluator, HeParams, KeyMaterial, PlainVec};
use heatmap_core::linalg::{diag, mat_mul_full, mat_mul_tile, rotate, BsgsPlan, DiagonalCache, PreparedMatrix};
use heatmap_core::CdrMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    ctx: Arc<Context>,
    keys: KeyMaterial,
    ev: Evaluator,
}

fn fixture(name: &str) -> Fixture {
    let ctx = Context::new(HeParams::named(name).unwrap()).unwrap();
    let plan = BsgsPlan::for_params(ctx.params()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let keys = keygen(&ctx, &plan.rotation_indices(), false, &mut rng).unwrap();
    let ev = Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone())).unwrap();
    Fixture { ctx, keys, ev }
}

fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, max: u64) -> CdrMatrix {
    CdrMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..=max)).collect()).unwrap()
}

fn encrypt_query(f: &Fixture, x: &[u64], rng: &mut ChaCha20Rng) -> Vec<heatmap_bfv::CipherVec> {
    x.chunks(f.ctx.n())
        .map(|c| encrypt(&f.keys.secret, &PlainVec::new(&f.ctx, c).unwrap(), rng).unwrap())
        .collect()
}

fn decrypt_heatmap(f: &Fixture, blocks: &[heatmap_bfv::CipherVec], k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend_from_slice(decrypt(&f.keys.secret, b).unwrap().row(0));
    }
    out.truncate(k);
    out
}

fn matvec(a: &[u64], m: usize, x: &[u64], t: u64) -> Vec<u64> {
    (0..m)
        .map(|r| (0..m).map(|c| a[r * m + c] * x[c] % t).sum::<u64>() % t)
        .collect()
}

#[test]
fn diag_of_identity() {
    let mut id = vec![0u64; 16];
    for i in 0..4 {
        id[i * 5] = 1;
    }
    assert_eq!(diag(&id, 4, 0).unwrap(), vec![1; 4]);
    assert_eq!(diag(&id, 4, 1).unwrap(), vec![0; 4]);
    assert!(diag(&id, 4, 4).is_err());
}

proptest! {
    #[test]
    fn diagonal_sum_is_matvec(a in prop::collection::vec(0u64..257, 64), x in prop::collection::vec(0u64..257, 8)) {
        let t = 257;
        let mut acc = vec![0u64; 8];
        for i in 0..8 {
            let d = diag(&a, 8, i).unwrap();
            let r = rotate(&x, i as isize);
            for j in 0..8 {
                acc[j] = (acc[j] + d[j] * r[j]) % t;
            }
        }
        prop_assert_eq!(acc, matvec(&a, 8, &x, t));
    }

    #[test]
    fn bsgs_regrouping_is_matvec(a in prop::collection::vec(0u64..257, 256), x in prop::collection::vec(0u64..257, 16)) {
        let t = 257;
        let plan = BsgsPlan::new(16).unwrap();
        let mut acc = vec![0u64; 16];
        for k in 0..plan.m2 {
            let mut inner = vec![0u64; 16];
            for b in 0..plan.m1 {
                let i = k * plan.m1 + b;
                let dprime = rotate(&diag(&a, 16, i).unwrap(), -((i / plan.m1 * plan.m1) as isize));
                let r = rotate(&x, b as isize);
                for j in 0..16 {
                    inner[j] = (inner[j] + dprime[j] * r[j]) % t;
                }
            }
            let shifted = rotate(&inner, (k * plan.m1) as isize);
            for j in 0..16 {
                acc[j] = (acc[j] + shifted[j]) % t;
            }
        }
        prop_assert_eq!(acc, matvec(&a, 16, &x, t));
    }
}

#[test]
fn tile_matches_oracle_and_rotation_budget() {
    let f = fixture("desk");
    let n = f.ctx.n();
    let t = f.ctx.params().t();
    let plan = BsgsPlan::for_params(f.ctx.params()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let z = Arc::new(random_matrix(&mut rng, n, n / 2, 1000));
    let x: Vec<u64> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let pm = PreparedMatrix::new(f.ctx.clone(), z.clone()).unwrap();
    let c = encrypt_query(&f, &x, &mut rng);
    let before = f.ev.counts();
    let out = mat_mul_tile(&f.ev, &pm, 0, 0, &c[0], None, true).unwrap().unwrap();
    let used = f.ev.counts() - before;
    assert_eq!(used.row_rotations as usize, plan.m1 + plan.m2 - 2);
    assert_eq!(used.column_rotations, 1);
    assert_eq!(used.ct_ct_mults, 0);
    assert_eq!(decrypt_heatmap(&f, &[out], n / 2), z.vec_mul(&x, t).unwrap());
}

#[test]
fn zero_and_selector_tiles() {
    let f = fixture("toy");
    let n = f.ctx.n();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let x: Vec<u64> = (0..n).map(|_| rng.random_range(0..100)).collect();
    let c = encrypt_query(&f, &x, &mut rng);

    let zero = PreparedMatrix::new(f.ctx.clone(), Arc::new(CdrMatrix::zeros(n, n / 2).unwrap())).unwrap();
    assert!(mat_mul_tile(&f.ev, &zero, 0, 0, &c[0], None, false).unwrap().is_none());
    let (h, stats) = mat_mul_full(&f.ev, &zero, &c, None, false).unwrap();
    assert_eq!(stats.skipped_tiles, 1);
    assert_eq!(decrypt_heatmap(&f, &h.blocks, n / 2), vec![0; n / 2]);

    let mut sel = CdrMatrix::zeros(n, n / 2).unwrap();
    for i in 0..n / 2 {
        sel.set(i, i, 1);
    }
    let pm = PreparedMatrix::new(f.ctx.clone(), Arc::new(sel)).unwrap();
    let out = mat_mul_tile(&f.ev, &pm, 0, 0, &c[0], None, false).unwrap().unwrap();
    assert_eq!(decrypt_heatmap(&f, &[out], n / 2), x[..n / 2].to_vec());
}

#[test]
fn full_product_over_padded_shapes() {
    let f = fixture("toy");
    let n = f.ctx.n();
    let t = f.ctx.params().t();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for rows in [n, n + 1, 2 * n, 2 * n + 3] {
        for cols in [1, n / 2, n / 2 + 1, n] {
            let z = Arc::new(random_matrix(&mut rng, rows, cols, 50));
            let x: Vec<u64> = (0..rows).map(|_| rng.random_range(0..2)).collect();
            let pm = PreparedMatrix::new(f.ctx.clone(), z.clone()).unwrap();
            let c = encrypt_query(&f, &x, &mut rng);
            let (h, stats) = mat_mul_full(&f.ev, &pm, &c, None, true).unwrap();
            let grid = pm.grid();
            assert_eq!(stats.matmuls as usize, grid.n_v * grid.n_o);
            assert_eq!(h.blocks.len(), grid.n_o);
            assert_eq!(decrypt_heatmap(&f, &h.blocks, cols), z.vec_mul(&x, t).unwrap(), "{rows}x{cols}");
        }
    }
}

#[test]
fn cache_and_thread_budget_do_not_change_bytes() {
    let f = fixture("toy");
    let n = f.ctx.n();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let z = Arc::new(random_matrix(&mut rng, 2 * n + 5, n / 2 + 3, 9));
    let x: Vec<u64> = (0..z.rows()).map(|_| rng.random_range(0..2)).collect();
    let pm = PreparedMatrix::new(f.ctx.clone(), z).unwrap();
    let c = encrypt_query(&f, &x, &mut rng);
    let bytes = |b: &[heatmap_bfv::CipherVec]| -> Vec<Vec<u8>> { b.iter().map(|c| c.to_blob(&f.ctx)).collect() };
    let (seq, _) = mat_mul_full(&f.ev, &pm, &c, None, false).unwrap();
    let cache = DiagonalCache::new(usize::MAX);
    let (cached, _) = mat_mul_full(&f.ev, &pm, &c, Some(&cache), true).unwrap();
    assert_eq!(cache.len(), 6);
    let (again, stats) = mat_mul_full(&f.ev, &pm, &c, Some(&cache), true).unwrap();
    assert_eq!(stats.cache_hits, 6);
    assert_eq!(bytes(&seq.blocks), bytes(&cached.blocks));
    assert_eq!(bytes(&seq.blocks), bytes(&again.blocks));

    let tiny = DiagonalCache::new(1);
    mat_mul_full(&f.ev, &pm, &c, Some(&tiny), false).unwrap();
    assert!(tiny.is_empty());
}

#[test]
fn missing_giant_step_key_fails() {
    let ctx = Context::new(HeParams::named("toy").unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let keys = keygen(&ctx, &BTreeSet::from([1]), false, &mut rng).unwrap();
    let ev = Evaluator::new(ctx.clone(), Arc::new(keys.eval)).unwrap();
    let n = ctx.n();
    let z = Arc::new(CdrMatrix::new(n, n / 2, vec![1; n * n / 2]).unwrap());
    let pm = PreparedMatrix::new(ctx.clone(), z).unwrap();
    let c = encrypt(&keys.secret, &PlainVec::zero(&ctx), &mut rng).unwrap();
    assert!(mat_mul_tile(&ev, &pm, 0, 0, &c, None, false).is_err());
}

#[test]
fn shape_errors() {
    let f = fixture("toy");
    let n = f.ctx.n();
    let pm = PreparedMatrix::new(f.ctx.clone(), Arc::new(CdrMatrix::zeros(2 * n, 4).unwrap())).unwrap();
    let c = vec![f.ev.zero(f.ctx.top_level())];
    assert!(mat_mul_full(&f.ev, &pm, &c, None, false).is_err());
    let big = CdrMatrix::new(1, 1, vec![f.ctx.params().t()]).unwrap();
    assert!(PreparedMatrix::new(f.ctx.clone(), Arc::new(big)).is_err());
}
