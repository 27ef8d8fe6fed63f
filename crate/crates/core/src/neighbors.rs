//! Precomputed Hamming neighborhoods between the distinct hash codes of an
//! LSH table.
//!
//! For every code id `i` and every step `k ∈ 1..=d_max` the table stores the
//! ascending list of code ids at Hamming distance exactly `k` from code `i`.

use std::collections::HashSet;

use crate::codec::{Reader, Writer};
use crate::distance::hamming;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    d_max: usize,
    /// `lists[i][k - 1]`.
    lists: Vec<Vec<Vec<u32>>>,
}

/// Default distance cap, `min(K, 6)`.
pub fn default_d_max(k_funcs: usize) -> usize {
    k_funcs.min(6)
}

fn check_distinct<C: AsRef<[i32]>>(codes: &[C], seen: &mut HashSet<Vec<i32>>, offset: usize) -> Result<()> {
    for (i, c) in codes.iter().enumerate() {
        if !seen.insert(c.as_ref().to_vec()) {
            return Err(Error::DuplicateCode(offset + i));
        }
    }
    Ok(())
}

fn check_lengths<C: AsRef<[i32]>>(codes: &[C], len: usize) -> Result<()> {
    for c in codes {
        if c.as_ref().len() != len {
            return Err(Error::CodeLengthMismatch {
                left: len,
                right: c.as_ref().len(),
            });
        }
    }
    Ok(())
}

impl NeighborTable {
    /// Exhaustive pairwise construction.
    ///
    /// ```
    /// use probecard::NeighborTable;
    /// let codes = [vec![0, 2, 1, 3], vec![1, 2, 1, 3], vec![1, 1, 2, 2]];
    /// let table = NeighborTable::build(&codes, 4).unwrap();
    /// assert_eq!(table.lookup(0, 1).unwrap(), &[1]);
    /// assert_eq!(table.lookup(0, 4).unwrap(), &[2]);
    /// ```
    pub fn build<C: AsRef<[i32]>>(codes: &[C], d_max: usize) -> Result<Self> {
        let k = codes.first().map_or(0, |c| c.as_ref().len());
        if d_max < 1 || (k > 0 && d_max > k) {
            return Err(Error::param(format!("d_max must be in 1..={k}, got {d_max}")));
        }
        check_lengths(codes, k)?;
        check_distinct(codes, &mut HashSet::new(), 0)?;

        let mut table = NeighborTable {
            d_max,
            lists: vec![vec![Vec::new(); d_max]; codes.len()],
        };
        for i in 0..codes.len() {
            let ci = codes[i].as_ref();
            for (j, cj) in codes.iter().enumerate().skip(i + 1) {
                table.link(i, j, hamming(ci, cj.as_ref()));
            }
        }
        Ok(table)
    }

    #[inline]
    fn link(&mut self, i: usize, j: usize, d: usize) {
        if d > 0 && d <= self.d_max {
            self.lists[i][d - 1].push(j as u32);
            self.lists[j][d - 1].push(i as u32);
        }
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn num_codes(&self) -> usize {
        self.lists.len()
    }

    /// Code ids at Hamming distance exactly `k` from `code_id`.
    pub fn lookup(&self, code_id: u32, k: usize) -> Result<&[u32]> {
        if k < 1 || k > self.d_max {
            return Err(Error::param(format!("step {k} outside 1..={}", self.d_max)));
        }
        let entry = self
            .lists
            .get(code_id as usize)
            .ok_or_else(|| Error::param(format!("unknown code id {code_id}")))?;
        Ok(&entry[k - 1])
    }

    /// Total number of stored (directed) entries.
    pub fn entry_count(&self) -> usize {
        self.lists.iter().flatten().map(Vec::len).sum()
    }

    /// Extends a table built on `old_codes` with `new_codes`, which receive
    /// ids `old_codes.len()..`. Only old×new and new×new pairs are compared.
    pub fn update<C: AsRef<[i32]>, D: AsRef<[i32]>>(
        &mut self,
        old_codes: &[C],
        new_codes: &[D],
    ) -> Result<()> {
        if old_codes.len() != self.lists.len() {
            return Err(Error::param(format!(
                "table holds {} codes but {} old codes were given",
                self.lists.len(),
                old_codes.len()
            )));
        }
        if new_codes.is_empty() {
            return Ok(());
        }
        let k = old_codes
            .first()
            .map(|c| c.as_ref().len())
            .unwrap_or_else(|| new_codes[0].as_ref().len());
        if self.d_max > k {
            return Err(Error::param(format!("d_max {} exceeds code length {k}", self.d_max)));
        }
        check_lengths(old_codes, k)?;
        check_lengths(new_codes, k)?;
        let mut seen = HashSet::new();
        check_distinct(old_codes, &mut seen, 0)?;
        check_distinct(new_codes, &mut seen, old_codes.len())?;

        let s1 = old_codes.len();
        self.lists
            .extend((0..new_codes.len()).map(|_| vec![Vec::new(); self.d_max]));
        for (i, ci) in old_codes.iter().enumerate() {
            for (j, cj) in new_codes.iter().enumerate() {
                self.link(i, s1 + j, hamming(ci.as_ref(), cj.as_ref()));
            }
        }
        // Both sides of every new×new pair are recorded so the table stays
        // symmetric.
        for i in 0..new_codes.len() {
            let ci = new_codes[i].as_ref();
            for (j, cj) in new_codes.iter().enumerate().skip(i + 1) {
                self.link(s1 + i, s1 + j, hamming(ci, cj.as_ref()));
            }
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.usize(self.d_max);
        w.usize(self.lists.len());
        for entry in &self.lists {
            for list in entry {
                w.u32s(list);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let d_max = r.usize()?;
        let n = r.usize()?;
        if d_max == 0 {
            return Err(r.corrupt("zero d_max"));
        }
        let mut lists = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut entry = Vec::with_capacity(d_max);
            for _ in 0..d_max {
                let list = r.u32s()?;
                if list.iter().any(|&j| j as usize >= n) {
                    return Err(r.corrupt("neighbor id out of range"));
                }
                entry.push(list);
            }
            lists.push(entry);
        }
        Ok(NeighborTable { d_max, lists })
    }
}

/// Groups every code by its Hamming distance to `query`, for codes within
/// `1..=d_max`. Used when the query's code is not present in the table.
pub fn scan_neighbors<'a>(
    codes: impl Iterator<Item = &'a [i32]>,
    query: &[i32],
    d_max: usize,
) -> Vec<Vec<u32>> {
    let mut groups = vec![Vec::new(); d_max];
    for (j, c) in codes.enumerate() {
        let d = hamming(query, c);
        if d > 0 && d <= d_max {
            groups[d - 1].push(j as u32);
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_codes() -> Vec<Vec<i32>> {
        vec![
            vec![0, 2, 1, 3], // central
            vec![1, 2, 1, 3],
            vec![0, 2, 1, 4],
            vec![2, 3, 1, 3],
            vec![0, 1, 2, 3],
            vec![1, 2, 1, 4],
            vec![0, 3, 2, 4],
            vec![1, 2, 2, 2],
            vec![1, 1, 0, 3],
            vec![1, 1, 2, 2],
        ]
    }

    fn random_codes(n: usize, k: usize, seed: u64) -> Vec<Vec<i32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = HashSet::new();
        let mut out = Vec::new();
        while out.len() < n {
            let c: Vec<i32> = (0..k).map(|_| rng.random_range(0..3)).collect();
            if set.insert(c.clone()) {
                out.push(c);
            }
        }
        out
    }

    /// Independent O(n²) scan over ordered pairs.
    fn brute_force(codes: &[Vec<i32>], d_max: usize) -> Vec<Vec<Vec<u32>>> {
        codes
            .iter()
            .map(|ci| {
                (1..=d_max)
                    .map(|k| {
                        codes
                            .iter()
                            .enumerate()
                            .filter(|(_, cj)| ci.iter().zip(cj.iter()).filter(|(a, b)| a != b).count() == k)
                            .map(|(j, _)| j as u32)
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn worked_example_neighborhoods() {
        let codes = example_codes();
        let t = NeighborTable::build(&codes, 4).unwrap();
        let named = |ids: &[u32]| ids.iter().map(|&i| codes[i as usize].clone()).collect::<Vec<_>>();
        assert_eq!(named(t.lookup(0, 1).unwrap()), vec![vec![1, 2, 1, 3], vec![0, 2, 1, 4]]);
        assert_eq!(
            named(t.lookup(0, 2).unwrap()),
            vec![vec![2, 3, 1, 3], vec![0, 1, 2, 3], vec![1, 2, 1, 4]]
        );
        assert_eq!(
            named(t.lookup(0, 3).unwrap()),
            vec![vec![0, 3, 2, 4], vec![1, 2, 2, 2], vec![1, 1, 0, 3]]
        );
        assert_eq!(named(t.lookup(0, 4).unwrap()), vec![vec![1, 1, 2, 2]]);
    }

    #[test]
    fn single_code_has_no_neighbors() {
        let t = NeighborTable::build(&[vec![1, 2, 3]], 3).unwrap();
        for k in 1..=3 {
            assert!(t.lookup(0, k).unwrap().is_empty());
        }
        assert!(t.lookup(0, 0).is_err());
        assert!(t.lookup(0, 4).is_err());
    }

    #[test]
    fn duplicate_codes_rejected() {
        let codes = vec![vec![1, 2], vec![3, 4], vec![1, 2]];
        assert!(matches!(NeighborTable::build(&codes, 2), Err(Error::DuplicateCode(2))));
    }

    #[test]
    fn matches_brute_force() {
        let codes = random_codes(200, 12, 1);
        let t = NeighborTable::build(&codes, 4).unwrap();
        assert_eq!(t.lists, brute_force(&codes, 4));
        let pairs: usize = (0..codes.len())
            .flat_map(|i| (i + 1..codes.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| (1..=4).contains(&hamming(&codes[i], &codes[j])))
            .count();
        assert_eq!(t.entry_count(), 2 * pairs);
        for i in 0..codes.len() as u32 {
            for k in 1..=4 {
                for &j in t.lookup(i, k).unwrap() {
                    assert!(t.lookup(j, k).unwrap().contains(&i));
                    assert_eq!(hamming(&codes[i as usize], &codes[j as usize]), k);
                }
            }
        }
    }

    #[test]
    fn incremental_equals_batch() {
        let codes = random_codes(200, 12, 2);
        let batch = NeighborTable::build(&codes, 4).unwrap();
        let (old, new) = codes.split_at(120);
        let mut inc = NeighborTable::build(old, 4).unwrap();
        inc.update(old, new).unwrap();
        assert_eq!(inc, batch);
    }

    #[test]
    fn update_with_one_close_code() {
        let old = vec![vec![0, 0, 0], vec![5, 5, 5]];
        let mut t = NeighborTable::build(&old, 2).unwrap();
        t.update(&old, &[vec![0, 0, 1]]).unwrap();
        assert_eq!(t.lookup(0, 1).unwrap(), &[2]);
        assert_eq!(t.lookup(2, 1).unwrap(), &[0]);
        assert!(t.lookup(1, 1).unwrap().is_empty());

        let before = t.clone();
        let all = vec![vec![0, 0, 0], vec![5, 5, 5], vec![0, 0, 1]];
        t.update(&all, &Vec::<Vec<i32>>::new()).unwrap();
        assert_eq!(t, before);
        assert!(matches!(t.update(&all, &[vec![5, 5, 5]]), Err(Error::DuplicateCode(3))));
    }

    #[test]
    fn scan_matches_table_rows() {
        let codes = random_codes(100, 8, 3);
        let t = NeighborTable::build(&codes, 3).unwrap();
        let scanned = scan_neighbors(codes.iter().map(|c| c.as_slice()), &codes[5], 3);
        for k in 1..=3 {
            assert_eq!(scanned[k - 1], t.lookup(5, k).unwrap());
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let codes = random_codes(50, 6, 4);
        let t = NeighborTable::build(&codes, 3).unwrap();
        let mut w = Writer::new();
        t.encode(&mut w);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes, "neighbors");
        assert_eq!(NeighborTable::decode(&mut r).unwrap(), t);
        r.finish().unwrap();
    }
}
