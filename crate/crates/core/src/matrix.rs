//! The server's subscriber-by-tower matrix and its file formats.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Magic bytes opening the dense binary matrix format.
pub const MATRIX_MAGIC: [u8; 4] = *b"CDRM";

/// Time units per subscriber (rows) and cell tower (columns), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdrMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl CdrMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::Shape(format!("empty {rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn max_entry(&self) -> u64 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Fails if any entry exceeds `cap`.
    pub fn check_cap(&self, cap: u64) -> Result<()> {
        match self.data.iter().position(|&v| v > cap) {
            Some(p) => Err(CoreError::Config(format!(
                "entry ({}, {}) = {} exceeds the sensitivity cap {cap}",
                p / self.cols,
                p % self.cols,
                self.data[p]
            ))),
            None => Ok(()),
        }
    }

    /// Number of nonzero entries per column.
    pub fn column_supports(&self) -> Vec<usize> {
        let mut out = vec![0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += (v != 0) as usize;
            }
        }
        out
    }

    /// `x^T Z mod t`.
    pub fn vec_mul(&self, x: &[u64], t: u64) -> Result<Vec<u64>> {
        if x.len() != self.rows {
            return Err(CoreError::Shape(format!(
                "vector of length {} against {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut acc = vec![0u128; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0 {
                continue;
            }
            for (a, &z) in acc.iter_mut().zip(self.row(r)) {
                *a = (*a + xv as u128 * z as u128) % t as u128;
            }
        }
        Ok(acc.into_iter().map(|v| v as u64).collect())
    }

    /// Rows reordered so that old row `i` lands at `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.rows {
            return Err(CoreError::Shape("permutation length differs from row count".into()));
        }
        let mut seen = vec![false; self.rows];
        let mut data = vec![0; self.data.len()];
        for (i, &dst) in order.iter().enumerate() {
            if dst >= self.rows || std::mem::replace(&mut seen[dst], true) {
                return Err(CoreError::Shape("row order is not a permutation".into()));
            }
            data[dst * self.cols..(dst + 1) * self.cols].copy_from_slice(self.row(i));
        }
        Self::new(self.rows, self.cols, data)
    }

    /// SHA-256 over the shape and entries.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.data.chunks(4096) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            h.update(&buf);
        }
        h.finalize().into()
    }

    /// One row per subscriber, comma-separated integers, no header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<u64>().map_err(|_| {
                        CoreError::Ingest(format!("line {}: `{f}` is not a non-negative integer", line + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CoreError::Ingest("matrix file has no rows".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for r in 0..self.rows {
            w.write_record(self.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Dense binary layout: magic, `N`, `k`, `t`, then `N * k` entries, all
    /// little-endian `u64`.
    pub fn write_binary<W: Write>(&self, mut w: W, t: u64) -> Result<()> {
        w.write_all(&MATRIX_MAGIC)?;
        for v in [self.rows as u64, self.cols as u64, t] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the binary layout and returns the matrix with its stored `t`.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, u64)> {
        let mut head = [0u8; 28];
        r.read_exact(&mut head)
            .map_err(|_| CoreError::Ingest("truncated matrix header".into()))?;
        if head[..4] != MATRIX_MAGIC {
            return Err(CoreError::Ingest("not a binary matrix file".into()));
        }
        let word = |i: usize| u64::from_le_bytes(head[4 + 8 * i..12 + 8 * i].try_into().unwrap());
        let (rows, cols, t) = (word(0) as usize, word(1) as usize, word(2));
        let count = rows
            .checked_mul(cols)
            .filter(|c| *c <= (1 << 34))
            .ok_or_else(|| CoreError::Ingest("matrix dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(CoreError::Ingest(format!(
                "expected {} entry bytes, found {}",
                count * 8,
                bytes.len()
            )));
        }
        let data: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(v) = data.iter().find(|&&v| v >= t) {
            return Err(CoreError::Ingest(format!("entry {v} not reduced mod {t}")));
        }
        Ok((Self::new(rows, cols, data)?, t))
    }
}
