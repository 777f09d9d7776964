//! Encrypted vector-matrix products: diagonal encoding, baby-step giant-step
//! rotations, two-row packing and tiling of the full matrix.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use heatmap_bfv::{CipherVec, Context, Evaluator, HeParams, MulPlain, PlainVec};

use crate::error::{CoreError, Result};
use crate::matrix::CdrMatrix;
use crate::par;

/// `out[j] = a[j][(j + i) mod m]` for a row-major `m x m` matrix.
pub fn diag(a: &[u64], m: usize, i: usize) -> Result<Vec<u64>> {
    if a.len() != m * m {
        return Err(CoreError::Shape(format!("{} entries for a {m}x{m} matrix", a.len())));
    }
    if i >= m {
        return Err(CoreError::Shape(format!("diagonal {i} of a {m}x{m} matrix")));
    }
    Ok((0..m).map(|j| a[j * m + (j + i) % m]).collect())
}

/// Cyclic left rotation by `s` (negative rotates right).
pub fn rotate(v: &[u64], s: isize) -> Vec<u64> {
    let m = v.len() as isize;
    (0..m).map(|j| v[(j + s).rem_euclid(m) as usize]).collect()
}

/// Factorization `m = m1 * m2` of the rotation schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BsgsPlan {
    pub m: usize,
    pub m1: usize,
    pub m2: usize,
}

impl BsgsPlan {
    /// `m1 = m2 = sqrt(m)` for even powers of two, otherwise
    /// `m1 = sqrt(2m)` and `m2 = m / m1`.
    pub fn new(m: usize) -> Result<Self> {
        if !m.is_power_of_two() || m < 2 {
            return Err(CoreError::Config(format!("matrix dimension {m} is not a power of two >= 2")));
        }
        let e = m.trailing_zeros();
        let m1 = 1usize << e.div_ceil(2);
        Ok(Self { m, m1, m2: m / m1 })
    }

    pub fn for_params(params: &HeParams) -> Result<Self> {
        Self::new(params.row_size())
    }

    /// Row-rotation indices used: the baby step 1 and every giant step.
    pub fn rotation_indices(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = (1..self.m2).map(|k| k * self.m1).collect();
        if self.m1 > 1 {
            s.insert(1);
        }
        s
    }

    /// Row rotations per dense tile.
    pub fn rotations_per_tile(&self) -> usize {
        self.m1 + self.m2 - 2
    }
}

/// Tile grid of an `N x k` matrix for ring degree `n`: `n_v` row blocks of
/// `n` subscribers and `n_o` column blocks of `n/2` towers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_v: usize,
    pub n_o: usize,
}

impl TileGrid {
    pub fn new(n: usize, rows: usize, cols: usize) -> Self {
        Self {
            n,
            rows,
            cols,
            n_v: rows.div_ceil(n),
            n_o: (2 * cols).div_ceil(n),
        }
    }

    pub fn tiles(&self) -> usize {
        self.n_v * self.n_o
    }
}

/// Packed diagonal `d` of tile `(j, i)`: row `r` of the plaintext holds
/// `diag'(T_r^T, d)` where `T_r` is the `r`-th `n/2 x n/2` half of the tile.
/// Returns `None` when the diagonal is zero.
pub fn tile_diagonal(z: &CdrMatrix, n: usize, plan: &BsgsPlan, j: usize, i: usize, d: usize) -> Option<Vec<u64>> {
    let m = plan.m;
    let shift = (d / plan.m1) * plan.m1;
    let mut out = vec![0u64; n];
    let mut any = false;
    for r in 0..2 {
        let row_base = j * n + r * m;
        for s in 0..m {
            let u = (s + m - shift) % m;
            let col = i * m + u;
            let row = row_base + (u + d) % m;
            if row < z.rows() && col < z.cols() {
                let v = z.get(row, col);
                if v != 0 {
                    out[r * m + s] = v;
                    any = true;
                }
            }
        }
    }
    any.then_some(out)
}

fn tile_is_zero(z: &CdrMatrix, n: usize, j: usize, i: usize) -> bool {
    let m = n / 2;
    let rows = j * n..((j + 1) * n).min(z.rows());
    let cols = i * m..((i + 1) * m).min(z.cols());
    rows.into_iter().all(|r| z.row(r)[cols.clone()].iter().all(|&v| v == 0))
}

/// Encoded diagonals of one tile, indexed by diagonal number.
#[derive(Debug)]
pub struct TileDiagonals {
    pub diags: Vec<Option<MulPlain>>,
}

impl TileDiagonals {
    pub fn byte_size(&self) -> usize {
        self.diags.iter().flatten().map(MulPlain::byte_size).sum()
    }
}

type CacheKey = ([u8; 32], String, usize, usize);

/// Byte-bounded cache of encoded tile diagonals, keyed by matrix digest,
/// parameter set and tile position. Tiles that do not fit are encoded on the
/// fly at every use.
#[derive(Debug)]
pub struct DiagonalCache {
    budget: usize,
    used: Mutex<usize>,
    entries: Mutex<HashMap<CacheKey, Arc<TileDiagonals>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl DiagonalCache {
    pub fn new(budget_bytes: usize) -> Self {
        Self {
            budget: budget_bytes,
            used: Mutex::new(0),
            entries: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn used_bytes(&self) -> usize {
        *self.used.lock().unwrap()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(hits, misses)` so far.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    fn get(&self, key: &CacheKey) -> Option<Arc<TileDiagonals>> {
        let hit = self.entries.lock().unwrap().get(key).cloned();
        let counter = if hit.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        hit
    }

    fn offer(&self, key: CacheKey, tile: Arc<TileDiagonals>) {
        let size = tile.byte_size();
        let mut used = self.used.lock().unwrap();
        if *used + size <= self.budget {
            let mut entries = self.entries.lock().unwrap();
            if entries.insert(key, tile).is_none() {
                *used += size;
            }
        }
    }

    /// Whether a tile of `size` bytes would still fit.
    fn has_room(&self, size: usize) -> bool {
        *self.used.lock().unwrap() + size <= self.budget
    }
}

/// A matrix bound to a parameter set, ready for encrypted products.
#[derive(Debug)]
pub struct PreparedMatrix {
    ctx: Arc<Context>,
    matrix: Arc<CdrMatrix>,
    // Only needed for cache keys; hashing a large matrix is not free.
    digest: OnceLock<[u8; 32]>,
    plan: BsgsPlan,
    grid: TileGrid,
    zero_tiles: Vec<bool>,
}

impl PreparedMatrix {
    pub fn new(ctx: Arc<Context>, matrix: Arc<CdrMatrix>) -> Result<Self> {
        let t = ctx.params().t();
        if matrix.max_entry() >= t {
            return Err(CoreError::Config("matrix entries are not reduced mod t".into()));
        }
        let n = ctx.n();
        let plan = BsgsPlan::for_params(ctx.params())?;
        let grid = TileGrid::new(n, matrix.rows(), matrix.cols());
        let mut zero_tiles = Vec::with_capacity(grid.tiles());
        for j in 0..grid.n_v {
            for i in 0..grid.n_o {
                zero_tiles.push(tile_is_zero(&matrix, n, j, i));
            }
        }
        Ok(Self {
            digest: OnceLock::new(),
            ctx,
            matrix,
            plan,
            grid,
            zero_tiles,
        })
    }

    pub fn matrix(&self) -> &Arc<CdrMatrix> {
        &self.matrix
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn plan(&self) -> &BsgsPlan {
        &self.plan
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn digest(&self) -> [u8; 32] {
        *self.digest.get_or_init(|| self.matrix.digest())
    }

    pub fn is_zero_tile(&self, j: usize, i: usize) -> bool {
        self.zero_tiles[j * self.grid.n_o + i]
    }

    fn key(&self, j: usize, i: usize) -> CacheKey {
        (self.digest(), self.ctx.params().name().to_string(), j, i)
    }

    /// Raw packed diagonals of tile `(j, i)`.
    pub fn diagonal_slots(&self, j: usize, i: usize, d: usize) -> Option<Vec<u64>> {
        tile_diagonal(&self.matrix, self.grid.n, &self.plan, j, i, d)
    }

    fn encode_diagonal(&self, j: usize, i: usize, d: usize) -> Option<MulPlain> {
        let slots = self.diagonal_slots(j, i, d)?;
        let plain = PlainVec::new(&self.ctx, &slots).expect("tile diagonal fits the ring");
        Some(MulPlain::new(&self.ctx, &plain, self.ctx.top_level()))
    }

    /// Memory of a fully dense encoded tile.
    pub fn tile_bytes_bound(&self) -> usize {
        self.plan.m * (self.ctx.top_level() + 1) * self.ctx.n() * 8
    }

    /// Encodes every diagonal of tile `(j, i)`.
    pub fn encode_tile(&self, j: usize, i: usize, parallel: bool) -> TileDiagonals {
        TileDiagonals {
            diags: par::map_range(parallel, self.plan.m, |d| self.encode_diagonal(j, i, d)),
        }
    }

    /// Fills `cache` with as many nonzero tiles as fit, in row-major order.
    pub fn warm(&self, cache: &DiagonalCache, parallel: bool) {
        for j in 0..self.grid.n_v {
            for i in 0..self.grid.n_o {
                if self.is_zero_tile(j, i) || !cache.has_room(self.tile_bytes_bound()) {
                    continue;
                }
                if cache.entries.lock().unwrap().contains_key(&self.key(j, i)) {
                    continue;
                }
                let tile = self.encode_tile(j, i, parallel);
                cache.offer(self.key(j, i), Arc::new(tile));
            }
        }
    }
}

/// Encrypted result: block `i` carries towers `i*n/2 .. (i+1)*n/2` in its
/// first row.
#[derive(Clone, Debug)]
pub struct EncryptedHeatmap {
    pub blocks: Vec<CipherVec>,
    pub k: usize,
}

/// Work done by one [`mat_mul_full`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatMulStats {
    pub matmuls: u64,
    pub skipped_tiles: u64,
    pub cache_hits: u64,
}

/// `(x_block)^T * tile` for tile `(j, i)`. Returns `None` for a zero tile.
pub fn mat_mul_tile(
    ev: &Evaluator,
    z: &PreparedMatrix,
    j: usize,
    i: usize,
    x: &CipherVec,
    cache: Option<&DiagonalCache>,
    parallel: bool,
) -> Result<Option<CipherVec>> {
    if z.is_zero_tile(j, i) {
        return Ok(None);
    }
    let plan = *z.plan();
    let cached = cache.and_then(|c| c.get(&z.key(j, i)));
    let cached = match (cached, cache) {
        (Some(t), _) => Some(t),
        (None, Some(c)) if c.has_room(z.tile_bytes_bound()) => {
            let tile = Arc::new(z.encode_tile(j, i, parallel));
            c.offer(z.key(j, i), tile.clone());
            Some(tile)
        }
        _ => None,
    };

    // Which diagonals are nonzero decides how many baby steps are needed.
    let nonzero: Vec<bool> = match &cached {
        Some(t) => t.diags.iter().map(Option::is_some).collect(),
        None => par::map_range(parallel, plan.m, |d| z.diagonal_slots(j, i, d).is_some()),
    };
    let baby_needed = (0..plan.m)
        .filter(|&d| nonzero[d])
        .map(|d| d % plan.m1)
        .max();
    let Some(baby_needed) = baby_needed else {
        return Ok(None);
    };
    let mut baby = Vec::with_capacity(baby_needed + 1);
    baby.push(x.clone());
    for b in 1..=baby_needed {
        let next = ev.rotate_rows(&baby[b - 1], 1)?;
        baby.push(next);
    }

    let giant = par::map_range(parallel, plan.m2, |k| -> Result<Option<CipherVec>> {
        let mut owned = Vec::new();
        let mut idx = Vec::new();
        for b in 0..=baby_needed {
            let d = k * plan.m1 + b;
            if !nonzero[d] {
                continue;
            }
            match &cached {
                Some(_) => idx.push((b, d)),
                None => {
                    if let Some(p) = z.encode_diagonal(j, i, d) {
                        owned.push((b, p));
                    }
                }
            }
        }
        let (cts, pts): (Vec<&CipherVec>, Vec<&MulPlain>) = match &cached {
            Some(t) => idx
                .iter()
                .map(|&(b, d)| (&baby[b], t.diags[d].as_ref().expect("nonzero diagonal")))
                .unzip(),
            None => owned.iter().map(|(b, p)| (&baby[*b], p)).unzip(),
        };
        if cts.is_empty() {
            return Ok(None);
        }
        let inner = ev.dot_plain(&cts, &pts)?;
        Ok(Some(if k == 0 { inner } else { ev.rotate_rows(&inner, k * plan.m1)? }))
    });

    let mut acc: Option<CipherVec> = None;
    for g in giant {
        if let Some(c) = g? {
            match &mut acc {
                Some(a) => ev.add_assign(a, &c)?,
                None => acc = Some(c),
            }
        }
    }
    let acc = acc.expect("a nonzero diagonal exists");
    let swapped = ev.rotate_columns(&acc)?;
    Ok(Some(ev.add(&acc, &swapped)?))
}

/// `c~_i = sum_j MatMul(SubMat(Z, j, i)^T, c_j)` for every column block `i`,
/// accumulated in ascending `j`.
pub fn mat_mul_full(
    ev: &Evaluator,
    z: &PreparedMatrix,
    c_blocks: &[CipherVec],
    cache: Option<&DiagonalCache>,
    parallel: bool,
) -> Result<(EncryptedHeatmap, MatMulStats)> {
    let grid = *z.grid();
    if c_blocks.len() != grid.n_v {
        return Err(CoreError::Shape(format!(
            "{} ciphertext blocks for {} row blocks",
            c_blocks.len(),
            grid.n_v
        )));
    }
    let level = c_blocks[0].level();
    if c_blocks.iter().any(|c| c.level() != level) {
        return Err(CoreError::Shape("query blocks at different levels".into()));
    }
    let hits_before = cache.map_or(0, |c| c.stats().0);
    let products = par::map_range(parallel, grid.tiles(), |idx| {
        let (i, j) = (idx / grid.n_v, idx % grid.n_v);
        mat_mul_tile(ev, z, j, i, &c_blocks[j], cache, parallel)
    });
    let mut stats = MatMulStats {
        matmuls: grid.tiles() as u64,
        ..Default::default()
    };
    let mut blocks = Vec::with_capacity(grid.n_o);
    let mut products = products.into_iter();
    for _ in 0..grid.n_o {
        let mut acc = ev.zero(level);
        for _ in 0..grid.n_v {
            match products.next().expect("one product per tile")? {
                Some(c) => ev.add_assign(&mut acc, &c)?,
                None => stats.skipped_tiles += 1,
            }
        }
        blocks.push(acc);
    }
    stats.cache_hits = cache.map_or(0, |c| c.stats().0) - hits_before;
    Ok((
        EncryptedHeatmap {
            blocks,
            k: grid.cols,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_factorization() {
        assert_eq!(BsgsPlan::new(4096).unwrap(), BsgsPlan { m: 4096, m1: 64, m2: 64 });
        assert_eq!(BsgsPlan::new(8192).unwrap(), BsgsPlan { m: 8192, m1: 128, m2: 64 });
        assert_eq!(BsgsPlan::new(2048).unwrap(), BsgsPlan { m: 2048, m1: 64, m2: 32 });
        assert_eq!(BsgsPlan::new(2).unwrap(), BsgsPlan { m: 2, m1: 2, m2: 1 });
        assert!(BsgsPlan::new(12).is_err());
        let p = BsgsPlan::new(16).unwrap();
        assert_eq!(p.rotation_indices(), BTreeSet::from([1, 4, 8, 12]));
    }

    #[test]
    fn grid_counts() {
        let g = TileGrid::new(4096, 2 * 4096 + 3, 2049);
        assert_eq!((g.n_v, g.n_o), (3, 2));
        assert_eq!(TileGrid::new(8, 8, 4).tiles(), 1);
    }
}
