//! Simplex helpers and the block norms used by the convergence analysis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default tolerance for "lies in the simplex" checks.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Euclidean projection onto the probability simplex, sorting algorithm.
pub fn project_simplex(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let mut u: Vec<f64> = y.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    DVector::from_iterator(n, y.iter().map(|&v| (v - theta).max(0.0)))
}

pub fn check_simplex(v: &[f64], tol: f64, what: impl FnOnce() -> String) -> Result<()> {
    let sum: f64 = v.iter().sum();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if v.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > tol || min < -tol {
        return Err(Error::InvalidSimplex {
            what: what(),
            sum,
            min,
        });
    }
    Ok(())
}

pub fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

/// `‖X‖_F`: Euclidean norm of the stacked columns.
pub fn frobenius(x: &DMatrix<f64>) -> f64 {
    x.norm()
}

/// `‖P‖_H = (Σ_i ‖p_i‖_1²)^{1/2}` over the columns of `p`.
pub fn h_norm(p: &DMatrix<f64>) -> f64 {
    p.column_iter()
        .map(|c| c.lp_norm(1).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Dual of [`h_norm`]: `(Σ_i ‖z_i‖_∞²)^{1/2}`.
pub fn h_dual_norm(z: &DMatrix<f64>) -> f64 {
    z.column_iter().map(|c| c.amax().powi(2)).sum::<f64>().sqrt()
}

/// Frank-Wolfe gap `max_{y ∈ Δ} ⟨g, x − y⟩ = ⟨g, x⟩ − min_j g_j` for
/// `x ∈ Δ`, accumulated as `Σ x_m (g_m − min g)` to avoid cancellation.
pub fn fw_gap(g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    if min == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    g.iter()
        .zip(x.iter())
        .filter(|(_, &xm)| xm > 0.0)
        .map(|(&gm, &xm)| xm * (gm - min))
        .sum()
}

/// Numerically stable `log Σ exp(a_k)`.
pub fn log_sum_exp(a: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = a.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + a.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn projection_of_simplex_point_is_identity() {
        let x = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        assert_abs_diff_eq!(project_simplex(&x), x, epsilon = 1e-15);
    }

    #[test]
    fn projection_known_values() {
        let x = DVector::from_vec(vec![2.0, 0.0]);
        assert_abs_diff_eq!(
            project_simplex(&x),
            DVector::from_vec(vec![1.0, 0.0]),
            epsilon = 1e-15
        );
        let x = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(project_simplex(&x), uniform(3), epsilon = 1e-15);
    }

    #[test]
    fn log_sum_exp_large_values() {
        assert_abs_diff_eq!(log_sum_exp([1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn norms_on_small_matrix() {
        let z = DMatrix::from_column_slice(2, 2, &[1.0, -2.0, 0.5, 0.25]);
        assert_abs_diff_eq!(h_norm(&z), (9.0f64 + 0.5625).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(h_dual_norm(&z), (4.0f64 + 0.25).sqrt(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_optimal(v in prop::collection::vec(-3.0f64..3.0, 1..8)) {
            let y = DVector::from_vec(v);
            let p = project_simplex(&y);
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            // variational inequality: ⟨y − p, z − p⟩ ≤ 0 at every vertex z
            for j in 0..y.len() {
                let mut z = DVector::zeros(y.len());
                z[j] = 1.0;
                prop_assert!((&y - &p).dot(&(z - &p)) <= 1e-12);
            }
        }
    }
}
