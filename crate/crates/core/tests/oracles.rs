use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use netmanip::choice::ChoiceModel;
use netmanip::linalg::xlogx;
use netmanip::oracle::{
    fd_gradient, grid_minimize, mc_choice_probabilities, strong_convexity_probe, GridSpec, ProbeNorm,
    ProductSimplex,
};
use proptest::prelude::*;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[test]
fn logit_frequencies_match_closed_form() {
    let m = ChoiceModel::mnl(1.0, 2).unwrap();
    let est = mc_choice_probabilities(&m, &v(&[1.0, 0.0]), 1_000_000, 2024);
    assert!((est.frequencies[0] - 0.7311).abs() <= 0.0014, "{}", est.frequencies[0]);
    assert!(est.standard_errors[0] < 5e-4);
}

#[test]
fn nested_frequencies_within_three_standard_errors() {
    let m = ChoiceModel::nested(vec![vec![0, 1], vec![2, 3]], vec![0.5, 0.9]).unwrap();
    let u = v(&[0.4, 0.1, 0.0, -0.3]);
    let est = mc_choice_probabilities(&m, &u, 1_000_000, 99);
    let p = m.probabilities(&u).into_vector();
    for k in 0..4 {
        let z = (est.frequencies[k] - p[k]).abs() / est.standard_errors[k];
        assert!(z <= 3.0, "alternative {k}: {z:.2} standard errors");
    }
}

#[test]
fn sampled_frequencies_are_seed_deterministic() {
    let m = ChoiceModel::nested(vec![vec![0], vec![1, 2]], vec![1.0, 0.6]).unwrap();
    let u = v(&[0.0, 0.2, -0.1]);
    let a = mc_choice_probabilities(&m, &u, 200_000, 5);
    let b = mc_choice_probabilities(&m, &u, 200_000, 5);
    for k in 0..3 {
        assert_eq!(a.frequencies[k].to_bits(), b.frequencies[k].to_bits());
    }
}

#[test]
fn grid_recovers_logit_solution() {
    let mu = 0.7;
    let m = ChoiceModel::mnl(mu, 3).unwrap();
    let u = v(&[0.5, -0.2, 0.1]);
    let spec = GridSpec::new(3, 2e-3).unwrap();
    // ⟨−u, p⟩ + μ Σ p ln p, Lipschitz bounded by ‖u‖ plus the entropy slope
    let obj = |p: &DVector<f64>| -u.dot(p) + mu * p.iter().map(|&x| xlogx(x)).sum::<f64>();
    let r = grid_minimize(obj, &spec, 10.0).unwrap();
    let p = m.probabilities(&u).into_vector();
    assert!((&r.point - &p).amax() <= 2e-3, "{} vs {p}", r.point);
    assert!(r.value >= obj(&p) - 1e-15);
}

#[test]
fn logit_conjugate_modulus_in_l1() {
    let m = ChoiceModel::mnl(0.7, 4).unwrap();
    let est = strong_convexity_probe(
        |p| m.conjugate(p),
        ProbeNorm::L1,
        ProductSimplex { dim: 4, blocks: 1 },
        1000,
        17,
    );
    assert!(est >= 0.7 - 1e-8, "{est}");
}

#[test]
fn nested_conjugate_modulus_in_l1() {
    let m = ChoiceModel::nested(vec![vec![0, 1], vec![2, 3, 4]], vec![0.35, 0.8]).unwrap();
    let est = strong_convexity_probe(
        |p| m.conjugate(p),
        ProbeNorm::L1,
        ProductSimplex { dim: 5, blocks: 1 },
        1000,
        18,
    );
    assert!(est >= m.convexity_parameter() - 1e-8, "{est}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surplus_gradient_by_finite_differences(u in prop::collection::vec(-4.0f64..4.0, 2..6), mu in 0.2f64..2.0) {
        let m = ChoiceModel::mnl(mu, u.len()).unwrap();
        let u = DVector::from_vec(u);
        let fd = fd_gradient(|x| m.surplus(x), &u, 1e-6);
        prop_assert!((fd - m.probabilities(&u).into_vector()).amax() <= 1e-6);
    }

    #[test]
    fn grid_point_is_no_better_than_true_minimum(c in prop::collection::vec(-1.0f64..1.0, 3)) {
        // strongly convex quadratic with known minimiser inside the simplex
        let target = v(&[0.2, 0.5, 0.3]);
        let c = DVector::from_vec(c) * 0.01;
        let obj = |x: &DVector<f64>| 0.5 * (x - &target).norm_squared() + c.dot(x);
        let r = grid_minimize(obj, &GridSpec::new(3, 0.01).unwrap(), 2.0).unwrap();
        let fine = grid_minimize(obj, &GridSpec::new(3, 0.001).unwrap(), 2.0).unwrap();
        prop_assert!(r.value <= fine.value + r.error_bound);
    }
}

#[test]
fn quadratic_finite_difference_is_exact() {
    let u = v(&[0.3, -1.1, 2.0]);
    let g = fd_gradient(|x| 3.0 * x[0] * x[0] - x[1] * x[2] + x[2], &u, 1e-3);
    assert_abs_diff_eq!(g, v(&[1.8, -2.0, 2.1]), epsilon = 1e-8);
}
