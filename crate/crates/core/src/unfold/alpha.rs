use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::refdist::ReferenceDensity;

/// Largest `n` stored densely; larger matrices keep only each row's
/// nonzero suffix.
pub const DENSE_LIMIT: usize = 8000;

/// Relative singular-value threshold of [`uniqueness_diagnostic`].
pub const RANK_TOL: f64 = 1e-10;

/// Sorted, strictly increasing observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    values: Vec<f64>,
    perturbed: usize,
}

impl Observations {
    /// Sorts `raw` and moves each tied value up to the next representable
    /// float above its predecessor.
    pub fn new(mut raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidArgument("no observations".into()));
        }
        if let Some(i) = raw.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "observation {i} is not a positive finite number ({})",
                raw[i]
            )));
        }
        raw.sort_by(f64::total_cmp);
        let mut perturbed = 0;
        for k in 1..raw.len() {
            if raw[k] <= raw[k - 1] {
                raw[k] = raw[k - 1].next_up();
                perturbed += 1;
            }
        }
        Ok(Self { values: raw, perturbed })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of tied values moved.
    pub fn perturbed(&self) -> usize {
        self.perturbed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `α_ij = g(s_i / s_j) / s_j`, stored by rows. Row `i` is zero left of
/// `lo[i]`; only entries from `lo[i]` on are kept when the matrix is sparse.
#[derive(Clone, Debug)]
pub struct AlphaMatrix {
    s: Vec<f64>,
    lo: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    dense: bool,
}

impl AlphaMatrix {
    /// Builds the matrix for sorted positive observations (ties allowed).
    /// A row with no positive entry is an error naming the observation.
    pub fn build<D: ReferenceDensity + ?Sized>(g: &D, s: &[f64]) -> Result<Self> {
        Self::build_with_storage(g, s, s.len() <= DENSE_LIMIT)
    }

    pub(crate) fn build_with_storage<D: ReferenceDensity + ?Sized>(g: &D, s: &[f64], dense: bool) -> Result<Self> {
        let n = s.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no observations".into()));
        }
        if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) || s.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("observations must be positive and sorted".into()));
        }
        let s_max = g.support_max();
        let lo: Vec<usize> = s.iter().map(|&si| s.partition_point(|&sj| si / sj > s_max)).collect();
        let mut offset = Vec::with_capacity(n + 1);
        let mut values = Vec::new();
        for (i, &si) in s.iter().enumerate() {
            offset.push(values.len());
            if dense {
                values.resize(values.len() + lo[i], 0.0);
            }
            let start = values.len();
            values.extend(s[lo[i]..].iter().map(|&sj| g.density(si / sj) / sj));
            if values[start..].iter().all(|&a| a <= 0.0) {
                return Err(Error::OutsideSupport { index: i, value: si });
            }
        }
        offset.push(values.len());
        Ok(Self { s: s.to_vec(), lo, offset, values, dense })
    }

    /// Dense matrix from explicit rows; `s` only labels the columns.
    pub fn from_rows(s: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = s.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("alpha rows must form an n×n matrix".into()));
        }
        let mut lo = Vec::with_capacity(n);
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative or non-finite entry")));
            }
            match r.iter().position(|&a| a > 0.0) {
                Some(k) => lo.push(k),
                None => return Err(Error::OutsideSupport { index: i, value: s[i] }),
            }
        }
        let offset = (0..=n).map(|i| i * n).collect();
        Ok(Self { s, lo, offset, values: rows.concat(), dense: true })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn observations(&self) -> &[f64] {
        &self.s
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    /// First possibly nonzero column of row `i`.
    pub fn row_lo(&self, i: usize) -> usize {
        self.lo[i]
    }

    /// Entries `α_{i, lo..n}` with `lo = row_lo(i)`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let row = &self.values[self.offset[i]..self.offset[i + 1]];
        if self.dense {
            &row[self.lo[i]..]
        } else {
            row
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.lo[i];
        if j < lo {
            0.0
        } else {
            self.row(i)[j - lo]
        }
    }

    /// Stored entries, zeros included.
    pub fn stored_len(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }
}

/// Numerical rank of `A` and whether the likelihood maximizer is
/// guaranteed unique (full rank).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Uniqueness {
    pub rank: usize,
    pub n: usize,
    pub unique: bool,
}

/// Upper-triangular matrices with a positive diagonal are reported full
/// rank directly; otherwise singular values below `RANK_TOL · σ_max` are
/// treated as zero.
pub fn uniqueness_diagnostic(a: &AlphaMatrix) -> Uniqueness {
    let n = a.n();
    let triangular = (0..n).all(|i| a.row_lo(i) >= i && a.get(i, i) > 0.0);
    let rank = if triangular {
        n
    } else {
        let sv = a.to_dense().singular_values();
        let top = sv.max();
        sv.iter().filter(|&&v| v > RANK_TOL * top).count()
    };
    Uniqueness { rank, n, unique: rank == n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refdist::AnalyticBall;

    /// Uniform density on `[0, 1.5]`.
    struct Flat;

    impl ReferenceDensity for Flat {
        fn density(&self, s: f64) -> f64 {
            if (0.0..=1.5).contains(&s) {
                1.0 / 1.5
            } else {
                0.0
            }
        }

        fn support_max(&self) -> f64 {
            1.5
        }
    }

    #[test]
    fn ties_are_moved_up_and_counted() {
        let obs = Observations::new(vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(obs.perturbed(), 2);
        assert!(obs.values().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(obs.values()[1], 1f64.next_up());
        assert!(Observations::new(vec![1.0, -1.0]).is_err());
        assert!(Observations::new(vec![]).is_err());
    }

    #[test]
    fn single_observation() {
        let a = AlphaMatrix::build(&AnalyticBall, &[0.7]).unwrap();
        assert_eq!(a.n(), 1);
        assert!((a.get(0, 0) - AnalyticBall.density(1.0) / 0.7).abs() < 1e-15);
    }

    #[test]
    fn entries_and_zero_pattern() {
        let s = [0.2, 0.25, 0.5, 0.9, 1.0, 2.0];
        let a = AlphaMatrix::build(&Flat, &s).unwrap();
        for i in 0..s.len() {
            assert_eq!(a.get(i, i), Flat.density(1.0) / s[i]);
            for j in 0..s.len() {
                let want = if s[i] > 1.5 * s[j] { 0.0 } else { Flat.density(s[i] / s[j]) / s[j] };
                assert_eq!(a.get(i, j), want, "({i},{j})");
            }
        }
    }

    #[test]
    fn dense_and_sparse_storage_agree() {
        let s: Vec<f64> = (1..=300).map(|k| 0.01 + k as f64 * 1e-2).collect();
        let sparse = AlphaMatrix::build_with_storage(&Flat, &s, false).unwrap();
        let dense = AlphaMatrix::build(&Flat, &s).unwrap();
        assert!(dense.is_dense() && !sparse.is_dense());
        for i in 0..300 {
            assert_eq!(dense.row(i), sparse.row(i));
            for j in (0..300).step_by(7) {
                assert_eq!(dense.get(i, j), sparse.get(i, j));
            }
        }
        assert!(sparse.stored_len() < dense.stored_len());
    }

    #[test]
    fn zero_row_names_the_observation() {
        let rows = vec![vec![1.0, 0.5], vec![0.0, 0.0]];
        match AlphaMatrix::from_rows(vec![1.0, 2.0], &rows) {
            Err(Error::OutsideSupport { index, value }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rank_diagnostic() {
        let one = AlphaMatrix::from_rows(vec![1.0], &[vec![0.3]]).unwrap();
        assert_eq!(uniqueness_diagnostic(&one), Uniqueness { rank: 1, n: 1, unique: true });

        // Identical observations give identical rows.
        let s = [0.3, 0.5, 0.5, 0.8];
        let tied = AlphaMatrix::build(&AnalyticBall, &s).unwrap();
        let u = uniqueness_diagnostic(&tied);
        assert!(!u.unique && u.rank < 4, "{u:?}");

        // Ratios beyond the support make the matrix upper triangular.
        let s = [0.1, 0.2, 0.4, 0.8, 1.6];
        let tri = AlphaMatrix::build(&Flat, &s).unwrap();
        assert!((0..5).all(|i| tri.row_lo(i) == i));
        assert!(uniqueness_diagnostic(&tri).unique);

        let s = [0.3, 0.4, 0.5, 0.8];
        let full = AlphaMatrix::build(&AnalyticBall, &s).unwrap();
        assert!(uniqueness_diagnostic(&full).unique);
    }
}
