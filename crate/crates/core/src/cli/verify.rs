use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{ChoiceMatrix, ManipulationMatrix};
use crate::altmin::{
    conjugate_term, constants, payoff_term, reference_optimum, run, Scenario, Scheme,
};
use crate::error::Result;
use crate::linalg::{frobenius, h_dual_norm};
use crate::net::NetworkState;
use crate::oracle::{
    fd_gradient, grid_minimize, mc_choice_probabilities, strong_convexity_probe, GridSpec, ProbeNorm,
    ProductSimplex,
};
use crate::orgs::{org_objective, solve_org_subproblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "SKIP",
        };
        write!(f, "{tag}  {:<14} {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub pairs: usize,
    pub draws: usize,
    /// Grid resolution for the subproblem check (only run for `n ≤ 3`).
    pub grid_resolution: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            pairs: 300,
            draws: 200_000,
            grid_resolution: 2e-3,
        }
    }
}

fn outcome(name: &'static str, ok: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

fn skip(name: &'static str, why: &str) -> CheckOutcome {
    CheckOutcome {
        name,
        status: CheckStatus::Skip,
        detail: why.into(),
    }
}

fn unstack(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

/// Runs every invariant check on the scenario and returns one outcome per
/// check.
pub fn verify(s: &Scenario, opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let g = s.distances(&s.x0);
    let consts = constants(s).ok();

    // conjugate duality and first-order optimality at G(X0)
    let mut fenchel = 0.0f64;
    let mut stationarity = 0.0f64;
    for (i, a) in s.agents.iter().enumerate() {
        let u = -g.column(i).into_owned();
        let p = a.model.rational_inattention_solve(&g.column(i).into_owned()).into_vector();
        fenchel = fenchel.max((a.model.conjugate(&p) - (p.dot(&u) - a.model.surplus(&u))).abs());
        let grad = a.model.conjugate_gradient_log(&p.map(f64::ln)) - &u;
        stationarity = stationarity.max(grad.max() - grad.min());
    }
    out.push(outcome(
        "duality",
        fenchel <= 1e-10 && stationarity <= 1e-8,
        format!("fenchel residual {fenchel:.2e}, gradient spread {stationarity:.2e}"),
    ));

    let mut wdz = 0.0f64;
    for (i, a) in s.agents.iter().enumerate() {
        let u = -g.column(i).into_owned();
        let fd = fd_gradient(|v| a.model.surplus(v), &u, 1e-6);
        wdz = wdz.max((fd - a.model.probabilities(&u).into_vector()).amax());
    }
    out.push(outcome("surplus_grad", wdz <= 1e-6, format!("max error {wdz:.2e}")));

    let mut worst_z = 0.0f64;
    for (i, a) in s.agents.iter().enumerate() {
        let u = -g.column(i).into_owned();
        let est = mc_choice_probabilities(&a.model, &u, opts.draws, s.seed.wrapping_add(i as u64));
        let p = a.model.probabilities(&u).into_vector();
        for k in 0..p.len() {
            let se = est.standard_errors[k].max(1.0 / opts.draws as f64);
            worst_z = worst_z.max((est.frequencies[k] - p[k]).abs() / se);
        }
    }
    out.push(outcome(
        "monte_carlo",
        worst_z <= 4.0,
        format!("largest deviation {worst_z:.2} standard errors ({} draws)", opts.draws),
    ));

    let min_beta = s.agents.iter().map(|a| a.model.convexity_parameter()).fold(f64::INFINITY, f64::min);
    let k = s.k();
    let h_est = strong_convexity_probe(
        |v| conjugate_term(s, &ChoiceMatrix::new(unstack(v, k)).expect("probe point")),
        ProbeNorm::H { block: k },
        ProductSimplex { dim: k, blocks: s.n_agents() },
        opts.pairs,
        s.seed,
    );
    out.push(outcome(
        "convexity_h",
        h_est >= min_beta - 1e-8,
        format!("modulus {h_est:.6} vs {min_beta:.6}"),
    ));

    match consts {
        Some(c) => {
            let n = s.n();
            let f_est = strong_convexity_probe(
                |v| payoff_term(s, &ManipulationMatrix::new(unstack(v, n)).expect("probe point")),
                ProbeNorm::L2,
                ProductSimplex { dim: n, blocks: k },
                opts.pairs,
                s.seed ^ 0x5eed,
            );
            out.push(outcome(
                "convexity_f",
                f_est >= c.sigma1 - 1e-8,
                format!("modulus {f_est:.6} vs {:.6}", c.sigma1),
            ));

            let dom = ProductSimplex { dim: n, blocks: k };
            let mut worst = f64::NEG_INFINITY;
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x11b);
            for _ in 0..opts.pairs {
                let x = ManipulationMatrix::new(unstack(&dom.sample(&mut rng), n)).expect("sample");
                let y = ManipulationMatrix::new(unstack(&dom.sample(&mut rng), n)).expect("sample");
                let lhs = h_dual_norm(&(s.distances(&x) - s.distances(&y)));
                let rhs = c.l1 * frobenius(&(x.matrix() - y.matrix()));
                worst = worst.max(lhs - rhs);
            }
            out.push(outcome(
                "lipschitz_g",
                worst <= 1e-10,
                format!("largest excess {worst:.2e} over modulus {:.6}", c.l1),
            ));
        }
        None => {
            out.push(skip("convexity_f", "network is singular"));
            out.push(skip("lipschitz_g", "network is singular"));
        }
    }

    let stable = consts.is_some_and(|c| c.stable);
    let reference = if stable { Some(reference_optimum(s)?) } else { None };
    let exact = run(s, Scheme::Exact, reference.as_ref())?;
    let inexact = run(s, Scheme::Inexact, reference.as_ref())?;
    for (name, tr) in [("exact_run", &exact), ("inexact_run", &inexact)] {
        let descent = tr.descent_violations(1e-9).len();
        if stable {
            let bounds = tr.bound_violations().len();
            let lam = consts.map(|c| c.lambda).unwrap_or(f64::NAN);
            let rate = tr.rate_estimate(1e-9);
            let rate_ok = name != "exact_run" || rate.is_none_or(|r| r <= lam.ln() + 0.05);
            out.push(outcome(
                name,
                descent == 0 && bounds == 0 && rate_ok,
                format!(
                    "{} iterations, {descent} descent and {bounds} bound violations, rate {} vs ln lambda {:.3}",
                    tr.last().iter,
                    rate.map_or("n/a".into(), |r| format!("{r:.3}")),
                    lam.ln()
                ),
            ));
        } else {
            out.push(outcome(
                name,
                descent == 0,
                format!(
                    "{} iterations, {descent} descent violations; bound checks skipped (stability assumption fails)",
                    tr.last().iter
                ),
            ));
        }
    }

    if s.n() <= 3 {
        let p = s.choices(&s.x0);
        let spec = GridSpec::new(s.n(), opts.grid_resolution)?;
        let a_norm = s.propagator().matrix().norm();
        let mut worst = f64::NEG_INFINITY;
        for (kk, o) in s.orgs.iter().enumerate() {
            let row: Vec<f64> = p.matrix().row(kk).iter().copied().collect();
            let (x, cert) = solve_org_subproblem(o, &row, &s.agents, s.propagator(), 0.0)?;
            let obj = |z: &DVector<f64>| {
                org_objective(o, &NetworkState::new(z.clone()).expect("grid point"), &row, &s.agents, s.propagator())
            };
            let lip = a_norm * (row.iter().sum::<f64>() + o.weight() * 2f64.sqrt());
            let grid = grid_minimize(obj, &spec, lip)?;
            let excess = obj(x.as_vector()) - grid.value - cert.gap - grid.error_bound;
            worst = worst.max(excess);
        }
        out.push(outcome(
            "certificates",
            worst <= 0.0,
            format!("largest excess over grid reference {worst:.2e}"),
        ));
    } else {
        out.push(skip("certificates", "grid reference needs n <= 3"));
    }

    Ok(out)
}
