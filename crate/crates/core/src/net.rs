//! Interaction network: a column-stochastic transition matrix and the states
//! it propagates.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_simplex, SIMPLEX_TOL};

/// Column sums within this distance of 1 are renormalised on load.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Column sums closer to 1 than this are left untouched, which keeps
/// renormalisation idempotent.
const ROUNDING_NOISE: f64 = 1e-13;

/// Column-stochastic `n × n` matrix, `M[(i, j)]` = probability of moving
/// from node `j` to node `i`. Singular values are computed once at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

/// A point of `Δ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState(DVector<f64>);

impl NetworkState {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        check_simplex(values.as_slice(), SIMPLEX_TOL, || "network state".into())?;
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn uniform(n: usize) -> Self {
        Self(crate::linalg::uniform(n))
    }

    pub fn vertex(n: usize, j: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl TransitionMatrix {
    /// Validates `raw` and computes its spectral data. Columns whose sums
    /// are within `tol` of one are renormalised.
    pub fn validate_stochastic(raw: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (rows, cols) = raw.shape();
        if rows != cols || rows == 0 {
            return Err(Error::NotSquare { rows, cols });
        }
        let mut entries = raw;
        let indexed = || {
            entries
                .iter()
                .enumerate()
                .map(|(idx, &v)| (idx % rows, idx / rows, v))
        };
        // negative entries are reported ahead of oversized ones
        if let Some((row, col, value)) = indexed().find(|&(_, _, v)| !v.is_finite() || v < 0.0) {
            return Err(Error::NegativeEntry { row, col, value });
        }
        if let Some((row, col, value)) = indexed().find(|&(_, _, v)| v > 1.0 + tol) {
            return Err(Error::NegativeEntry { row, col, value });
        }
        for (column, mut c) in entries.column_iter_mut().enumerate() {
            let sum = c.sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::NonStochastic { column, sum });
            }
            if (sum - 1.0).abs() > ROUNDING_NOISE {
                c /= sum;
            }
        }
        let sv = entries.clone().svd(false, false).singular_values;
        let sigma_max = sv.max();
        let sigma_min = sv.min().max(0.0);
        Ok(Self {
            entries,
            sigma_min,
            sigma_max,
        })
    }

    /// Row-major list of rows, as in the scenario file.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: r.len(),
                });
            }
        }
        let raw = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::validate_stochastic(raw, RENORMALIZE_TOL)
    }

    /// Header-free row-major CSV; columns are source nodes.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .enumerate()
                .map(|(col, field)| {
                    field.parse::<f64>().map_err(|e| Error::Parse {
                        line: line + 1,
                        column: col + 1,
                        message: format!("{field:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn identity(n: usize) -> Self {
        Self::validate_stochastic(DMatrix::identity(n, n), RENORMALIZE_TOL)
            .expect("identity is stochastic")
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Numerical regularity: the smallest singular value is nonzero
    /// relative to machine precision.
    pub fn is_regular(&self) -> bool {
        self.sigma_min > f64::EPSILON * self.n() as f64 * self.sigma_max
    }

    /// `κ(M) = σ_max / σ_min`.
    pub fn condition_number(&self) -> Result<f64> {
        if !self.is_regular() {
            return Err(Error::SingularNetwork {
                sigma_min: self.sigma_min,
            });
        }
        Ok(self.sigma_max / self.sigma_min)
    }

    /// `M^t`.
    pub fn power(&self, t: u32) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.n(), self.n());
        for _ in 0..t {
            out = &self.entries * out;
        }
        out
    }

    /// Cached `M^t` for repeated use with a fixed horizon.
    pub fn propagator(&self, t: u32) -> Propagator {
        Propagator {
            t,
            power: self.power(t),
        }
    }

    /// `M^t · x`.
    pub fn propagate(&self, x: &NetworkState, t: u32) -> NetworkState {
        let mut v = x.0.clone();
        for _ in 0..t {
            v = &self.entries * v;
        }
        NetworkState(v)
    }

    /// `M^t · X`, column by column.
    pub fn propagate_matrix(&self, x: &DMatrix<f64>, t: u32) -> DMatrix<f64> {
        let mut out = x.clone();
        for _ in 0..t {
            out = &self.entries * out;
        }
        out
    }
}

/// `M^t` for a fixed horizon `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    t: u32,
    power: DMatrix<f64>,
}

impl Propagator {
    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.power.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.power
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.power * x
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.power * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Result<TransitionMatrix> {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn identity_spectrum() {
        let id = TransitionMatrix::identity(3);
        assert_abs_diff_eq!(id.sigma_min(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.sigma_max(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.condition_number().unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_two_state_spectrum() {
        // eigenvalues of [[3/4,1/4],[1/4,3/4]] are 1 and 1/2
        let mm = m(&[&[0.75, 0.25], &[0.25, 0.75]]).unwrap();
        assert_abs_diff_eq!(mm.sigma_min(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(mm.sigma_max(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(mm.condition_number().unwrap(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn rejects_bad_column() {
        match m(&[&[0.5, 0.6], &[0.5, 0.5]]) {
            Err(Error::NonStochastic { column, sum }) => {
                assert_eq!(column, 1);
                assert_abs_diff_eq!(sum, 1.1, epsilon = 1e-12);
            }
            other => panic!("expected NonStochastic, got {other:?}"),
        }
        assert!(matches!(
            m(&[&[1.2, 0.0], &[-0.2, 1.0]]),
            Err(Error::NegativeEntry { row: 1, col: 0, .. })
        ));
        assert!(matches!(m(&[&[1.0, 0.0]]), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn renormalises_within_tolerance() {
        let mm = m(&[&[0.5 + 4e-10, 0.5], &[0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(mm.entries().column(0).sum(), 1.0, epsilon = 1e-15);
        // idempotent
        let again = TransitionMatrix::from_rows(&mm.rows()).unwrap();
        assert_eq!(again, mm);
    }

    #[test]
    fn singular_network_has_no_condition_number() {
        let avg = m(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        assert!(!avg.is_regular());
        assert!(matches!(
            avg.condition_number(),
            Err(Error::SingularNetwork { .. })
        ));
    }

    #[test]
    fn propagation_examples() {
        let x = NetworkState::from_slice(&[0.2, 0.8]).unwrap();
        let id = TransitionMatrix::identity(2);
        assert_eq!(id.propagate(&x, 7), x);

        let swap = m(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let y = swap.propagate(&NetworkState::from_slice(&[0.3, 0.7]).unwrap(), 1);
        assert_abs_diff_eq!(y.as_vector()[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(y.as_vector()[1], 0.3, epsilon = 1e-15);

        let avg = m(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        let z = avg.propagate(&NetworkState::from_slice(&[0.1, 0.9]).unwrap(), 1);
        assert_abs_diff_eq!(z.as_vector()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cyclic_permutation_has_order_n() {
        // 4-cycle: node j -> node j+1
        let n = 4;
        let raw = DMatrix::from_fn(n, n, |i, j| if i == (j + 1) % n { 1.0 } else { 0.0 });
        let p = TransitionMatrix::validate_stochastic(raw, 1e-9).unwrap();
        let x = DMatrix::from_fn(n, 2, |i, k| ((i + 2 * k) as f64 + 1.0) / 10.0);
        let x = DMatrix::from_fn(n, 2, |i, k| x[(i, k)] / x.column(k).sum());
        assert_abs_diff_eq!(p.propagate_matrix(&x, n as u32), x, epsilon = 1e-15);
        assert!((p.propagate_matrix(&x, 1) - &x).norm() > 0.1);
        assert_abs_diff_eq!(p.condition_number().unwrap(), 1.0, epsilon = 1e-13);
        // single column reduces to propagate
        let col = NetworkState::new(x.column(0).into_owned()).unwrap();
        assert_abs_diff_eq!(
            p.propagate_matrix(&x, 3).column(0).into_owned(),
            p.propagate(&col, 3).into_vector(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "0.75,0.25\n0.25,0.75\n").unwrap();
        let mm = TransitionMatrix::from_csv(&path).unwrap();
        assert_abs_diff_eq!(mm.sigma_min(), 0.5, epsilon = 1e-14);
        std::fs::write(&path, "0.75,abc\n0.25,0.75\n").unwrap();
        assert!(matches!(
            TransitionMatrix::from_csv(&path),
            Err(Error::Parse { line: 1, column: 2, .. })
        ));
    }

    fn random_matrix() -> impl Strategy<Value = TransitionMatrix> {
        (2usize..6).prop_flat_map(|n| {
            prop::collection::vec(0.01f64..1.0, n * n).prop_map(move |v| {
                let mut raw = DMatrix::from_vec(n, n, v);
                for mut c in raw.column_iter_mut() {
                    let s = c.sum();
                    c /= s;
                }
                TransitionMatrix::validate_stochastic(raw, 1e-9).unwrap()
            })
        })
    }

    fn state(n: usize, w: &[f64]) -> NetworkState {
        let v = DVector::from_iterator(n, w.iter().take(n).copied());
        let s = v.sum();
        NetworkState::new(v / s).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn propagation_preserves_simplex(
            mm in random_matrix(),
            w in prop::collection::vec(0.0f64..1.0, 6),
            t in 0u32..=10,
        ) {
            prop_assume!(w.iter().take(mm.n()).sum::<f64>() > 1e-3);
            let y = mm.propagate(&state(mm.n(), &w), t);
            prop_assert!((y.as_vector().sum() - 1.0).abs() < 1e-10);
            prop_assert!(y.as_vector().iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #[test]
        fn propagation_is_a_semigroup(
            mm in random_matrix(),
            w in prop::collection::vec(0.01f64..1.0, 6),
            s in 0u32..5,
            t in 0u32..5,
        ) {
            let x = state(mm.n(), &w);
            let direct = mm.propagate(&x, s + t);
            let split = mm.propagate(&mm.propagate(&x, s), t);
            prop_assert!((direct.as_vector() - split.as_vector()).amax() < 1e-14);
        }

        #[test]
        fn singular_value_power_bounds(mm in random_matrix(), t in 1u32..=5) {
            let sv = mm.power(t).svd(false, false).singular_values;
            let scale = 1e-12;
            prop_assert!(sv.min() >= mm.sigma_min().powi(t as i32) - scale);
            prop_assert!(sv.max() <= mm.sigma_max().powi(t as i32) + scale);
        }
    }
}
