use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};

/// Phone number to database row, shared with the client in the clear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMapping {
    /// `by_index[i]` is the subscriber stored at row `i`.
    by_index: Vec<String>,
    index: HashMap<String, usize>,
}

impl IndexMapping {
    /// Random-order bijection between `subscribers` and `0..N`.
    pub fn build(subscribers: &[String], seed: u64) -> Result<Self> {
        let mut order: Vec<usize> = (0..subscribers.len()).collect();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        Self::from_rows(order.into_iter().map(|i| subscribers[i].clone()).collect())
    }

    fn from_rows(by_index: Vec<String>) -> Result<Self> {
        if by_index.is_empty() {
            return Err(CoreError::Ingest("no subscribers".into()));
        }
        let mut index = HashMap::with_capacity(by_index.len());
        for (i, s) in by_index.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(CoreError::Ingest(format!("subscriber `{s}` listed twice")));
            }
        }
        Ok(Self { by_index, index })
    }

    pub fn len(&self) -> usize {
        self.by_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_index.is_empty()
    }

    pub fn get(&self, phone: &str) -> Option<usize> {
        self.index.get(phone).copied()
    }

    pub fn subscriber(&self, row: usize) -> Option<&str> {
        self.by_index.get(row).map(String::as_str)
    }

    /// For each original subscriber position, its assigned row; feeds
    /// [`crate::matrix::CdrMatrix::permute_rows`].
    pub fn order_for(&self, subscribers: &[String]) -> Result<Vec<usize>> {
        subscribers
            .iter()
            .map(|s| self.get(s).ok_or_else(|| CoreError::Ingest(format!("subscriber `{s}` not in mapping"))))
            .collect()
    }

    /// Indicator vector over all rows for the given phone numbers.
    pub fn indicator<S: AsRef<str>>(&self, phones: &[S]) -> Result<Vec<u64>> {
        let mut x = vec![0u64; self.len()];
        for p in phones {
            let p = p.as_ref();
            let i = self
                .get(p)
                .ok_or_else(|| CoreError::Ingest(format!("phone number `{p}` is not a subscriber")))?;
            x[i] = 1;
        }
        Ok(x)
    }

    /// CSV with header `phone,index`, one row per subscriber in row order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["phone", "index"])?;
        for (i, s) in self.by_index.iter().enumerate() {
            w.write_record([s.as_str(), &i.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut rows: Vec<(usize, String)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(CoreError::Ingest("mapping rows need phone,index".into()));
            }
            let i: usize = rec[1]
                .parse()
                .map_err(|_| CoreError::Ingest(format!("bad index `{}`", &rec[1])))?;
            rows.push((i, rec[0].to_string()));
        }
        rows.sort();
        if rows.iter().enumerate().any(|(k, (i, _))| k != *i) {
            return Err(CoreError::Ingest("mapping indices are not 0..N".into()));
        }
        Self::from_rows(rows.into_iter().map(|(_, s)| s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("+43{i:07}")).collect()
    }

    #[test]
    fn bijection_and_persistence() {
        let s = subs(3);
        let m = IndexMapping::build(&s, 9).unwrap();
        let mut rows: Vec<usize> = s.iter().map(|p| m.get(p).unwrap()).collect();
        rows.sort();
        assert_eq!(rows, vec![0, 1, 2]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(IndexMapping::read_csv(&buf[..]).unwrap(), m);
        assert_eq!(IndexMapping::build(&s, 9).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_unknowns() {
        let mut s = subs(3);
        s.push(s[0].clone());
        assert!(IndexMapping::build(&s, 1).is_err());
        let m = IndexMapping::build(&subs(3), 1).unwrap();
        assert!(m.indicator(&["nobody"]).is_err());
        let x = m.indicator(&[subs(3)[1].as_str()]).unwrap();
        assert_eq!(x.iter().sum::<u64>(), 1);
        assert_eq!(x[m.get(&subs(3)[1]).unwrap()], 1);
    }
}
