//! Exact and inexact alternating minimization of the potential over
//! `(X, P)`, the constants governing its convergence, and online checks of
//! the resulting distance bounds.

use log::warn;
use nalgebra::DMatrix;

use crate::agents::{
    choice_gaps, choice_matrix_from_distances, distance_matrix, perturb_to_delta, AgentProfile,
    ChoiceMatrix, ManipulationMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, h_norm};
use crate::net::{Propagator, TransitionMatrix};
use crate::orgs::{
    manipulation_matrix_with, org_objective, OrganizationProfile, SolveOptions, SubproblemContext,
};

/// Outer iterations stop once `‖X_{ℓ+1} − X_ℓ‖_F` falls to this.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Absolute slack granted to every bound check, covering the accuracy of
/// the reference optimum.
pub const BOUND_SLACK: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 500;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: TransitionMatrix,
    pub t: u32,
    pub agents: Vec<AgentProfile>,
    pub orgs: Vec<OrganizationProfile>,
    pub delta1: f64,
    pub delta2: f64,
    pub x0: ManipulationMatrix,
    pub max_iters: usize,
    pub seed: u64,
    propagator: Propagator,
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.network == other.network
            && self.t == other.t
            && self.agents == other.agents
            && self.orgs == other.orgs
            && self.delta1 == other.delta1
            && self.delta2 == other.delta2
            && self.x0 == other.x0
            && self.max_iters == other.max_iters
            && self.seed == other.seed
    }
}

impl Scenario {
    /// Scenario with exact subproblems, `X0 = (1/n)·ee^T`, 500 iterations
    /// and seed 0.
    pub fn new(
        network: TransitionMatrix,
        t: u32,
        agents: Vec<AgentProfile>,
        orgs: Vec<OrganizationProfile>,
    ) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if agents.is_empty() {
            return Err(Error::dims("agents", 1, 0));
        }
        if orgs.is_empty() {
            return Err(Error::dims("organizations", 1, 0));
        }
        let n = network.n();
        let k = orgs.len();
        for (i, a) in agents.iter().enumerate() {
            if a.aspired_state.len() != n {
                return Err(Error::dims(format!("agent {i} aspired state"), n, a.aspired_state.len()));
            }
            if a.model.k() != k {
                return Err(Error::dims(format!("agent {i} choice model"), k, a.model.k()));
            }
        }
        for (j, o) in orgs.iter().enumerate() {
            if let Some(w) = o.anchor() {
                if w.len() != n {
                    return Err(Error::dims(format!("organization {j} anchor"), n, w.len()));
                }
            }
        }
        let propagator = network.propagator(t);
        Ok(Self {
            x0: ManipulationMatrix::uniform(n, k),
            network,
            t,
            agents,
            orgs,
            delta1: 0.0,
            delta2: 0.0,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
            propagator,
        })
    }

    pub fn with_deltas(mut self, delta1: f64, delta2: f64) -> Result<Self> {
        for (name, d) in [("delta1", delta1), ("delta2", delta2)] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {d}")));
            }
        }
        self.delta1 = delta1;
        self.delta2 = delta2;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: ManipulationMatrix) -> Result<Self> {
        if x0.n() != self.n() {
            return Err(Error::dims("x0 rows", self.n(), x0.n()));
        }
        if x0.k() != self.k() {
            return Err(Error::dims("x0 columns", self.k(), x0.k()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn k(&self) -> usize {
        self.orgs.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Cached `M^t`.
    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn distances(&self, x: &ManipulationMatrix) -> DMatrix<f64> {
        distance_matrix(&self.agents, x, &self.propagator)
    }

    /// `P(X)`, the exact P-block minimiser.
    pub fn choices(&self, x: &ManipulationMatrix) -> ChoiceMatrix {
        choice_matrix_from_distances(&self.agents, &self.distances(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConstants {
    pub sigma1: f64,
    pub sigma2: f64,
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
    pub stable: bool,
}

impl ConvergenceConstants {
    pub fn from_parts(
        min_weight: f64,
        min_beta: f64,
        n_agents: usize,
        sigma_min: f64,
        sigma_max: f64,
        t: u32,
    ) -> Self {
        let sigma1 = min_weight * sigma_min.powi(2 * t as i32);
        let sigma2 = min_beta;
        let l1 = (n_agents as f64).sqrt() * sigma_max.powi(t as i32);
        let l2 = 1.0;
        let lambda = l1 * l1 * l2 * l2 / (sigma1 * sigma2);
        Self {
            sigma1,
            sigma2,
            l1,
            l2,
            lambda,
            stable: lambda < 1.0,
        }
    }

    /// The stability condition in its condition-number form,
    /// `κ^t < (min τ/η · min β / N)^{1/2}`.
    pub fn condition_form(kappa: f64, t: u32, min_weight: f64, min_beta: f64, n_agents: usize) -> bool {
        kappa.powi(t as i32) < (min_weight * min_beta / n_agents as f64).sqrt()
    }
}

pub fn constants(s: &Scenario) -> Result<ConvergenceConstants> {
    if !s.network.is_regular() {
        return Err(Error::SingularNetwork {
            sigma_min: s.network.sigma_min(),
        });
    }
    let min_weight = s.orgs.iter().map(OrganizationProfile::weight).fold(f64::INFINITY, f64::min);
    let min_beta = s
        .agents
        .iter()
        .map(|a| a.model.convexity_parameter())
        .fold(f64::INFINITY, f64::min);
    Ok(ConvergenceConstants::from_parts(
        min_weight,
        min_beta,
        s.n_agents(),
        s.network.sigma_min(),
        s.network.sigma_max(),
        s.t,
    ))
}

/// Asymptotic radii `(X, P)` around the optimum reached by the inexact
/// scheme.
pub fn limit_radius(c: &ConvergenceConstants, delta1: f64, delta2: f64) -> (f64, f64) {
    let ex = (2.0 * delta2 / c.sigma1).sqrt();
    let ep = (2.0 * delta1 / c.sigma2).sqrt();
    (
        ex + c.l1 * c.l2 / c.sigma1 * ep,
        ep + c.l1 * c.l2 / c.sigma2 * ex,
    )
}

/// `f(X) = −Σ_k π_k(M^t x_k)/η_k`.
pub fn payoff_term(s: &Scenario, x: &ManipulationMatrix) -> f64 {
    let y = s.propagator.apply_matrix(x.matrix());
    s.orgs
        .iter()
        .enumerate()
        .map(|(k, o)| -o.payoff.value(&y.column(k).into_owned()) / o.eta)
        .sum()
}

/// `h(P) = Σ_i E_i*(p_i)`.
pub fn conjugate_term(s: &Scenario, p: &ChoiceMatrix) -> f64 {
    s.agents
        .iter()
        .enumerate()
        .map(|(i, a)| a.model.conjugate(&p.column(i)))
        .sum()
}

/// `⟨G, P⟩ = Σ_{k,i} G_{ki} P_{ki}`.
pub fn coupling(g: &DMatrix<f64>, p: &ChoiceMatrix) -> f64 {
    g.dot(p.matrix())
}

/// `Φ(X, P)` as `f(X) + ⟨G(X), P⟩ + h(P)`.
pub fn potential_split(s: &Scenario, x: &ManipulationMatrix, p: &ChoiceMatrix) -> f64 {
    payoff_term(s, x) + coupling(&s.distances(x), p) + conjugate_term(s, p)
}

/// `Φ(X, P)` as the agents' conjugates plus each organization's objective.
pub fn potential_direct(s: &Scenario, x: &ManipulationMatrix, p: &ChoiceMatrix) -> f64 {
    let orgs: f64 = s
        .orgs
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let row: Vec<f64> = p.matrix().row(k).iter().copied().collect();
            let xk = crate::net::NetworkState::new(x.column(k)).expect("feasible column");
            org_objective(o, &xk, &row, &s.agents, &s.propagator)
        })
        .sum();
    conjugate_term(s, p) + orgs
}

pub fn potential(s: &Scenario, x: &ManipulationMatrix, p: &ChoiceMatrix) -> f64 {
    let split = potential_split(s, x, p);
    debug_assert!(
        (split - potential_direct(s, x, p)).abs() <= 1e-10 * (1.0 + split.abs()),
        "potential forms disagree"
    );
    split
}

/// `Φ(X, P(X))`: the potential with the P-block minimised out.
pub fn reduced_potential(s: &Scenario, x: &ManipulationMatrix) -> f64 {
    let g = s.distances(x);
    let p = choice_matrix_from_distances(&s.agents, &g);
    payoff_term(s, x) + coupling(&g, &p) + conjugate_term(s, &p)
}

/// One sweep of the scheme: the P-step at `x` followed by the X-step.
#[derive(Debug, Clone)]
pub struct Step {
    pub p: ChoiceMatrix,
    pub p_gaps: Vec<f64>,
    pub p_reached: bool,
    pub x: ManipulationMatrix,
    pub x_gaps: Vec<f64>,
}

/// `T^δ(x) = v^{δ₂}(u^{δ₁}(x))`. `delta1` and `delta2` are block budgets;
/// they are split evenly over columns.
pub fn step(
    s: &Scenario,
    ctx: &SubproblemContext<'_>,
    x: &ManipulationMatrix,
    delta1: f64,
    delta2: f64,
    opts_override: Option<SolveOptions>,
) -> Result<Step> {
    let g = s.distances(x);
    let exact = choice_matrix_from_distances(&s.agents, &g);
    let perturbed = perturb_to_delta(&exact, delta1, &s.agents, &g)?;
    if !perturbed.reached {
        warn!(
            "P-step could only realise gap {:e} of the requested {:e}",
            perturbed.gap, delta1
        );
    }
    let opts = opts_override.unwrap_or_else(|| SolveOptions::for_delta(delta2 / s.k() as f64));
    let (x_next, certs) = manipulation_matrix_with(ctx, &s.orgs, &perturbed.matrix, &opts, Some(x))?;
    Ok(Step {
        p: perturbed.matrix,
        p_gaps: perturbed.column_gaps,
        p_reached: perturbed.reached,
        x: x_next,
        x_gaps: certs.into_iter().map(|c| c.gap).collect(),
    })
}

/// High-accuracy minimiser of the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: ManipulationMatrix,
    pub p: ChoiceMatrix,
    pub iterations: usize,
    pub last_step: f64,
}

impl Reference {
    pub fn new(s: &Scenario, x: ManipulationMatrix) -> Result<Self> {
        let x = ManipulationMatrix::new(x.into_matrix())?;
        if x.n() != s.n() || x.k() != s.k() {
            return Err(Error::dims("reference optimum", s.n() * s.k(), x.n() * x.k()));
        }
        let p = s.choices(&x);
        Ok(Self {
            x,
            p,
            iterations: 0,
            last_step: f64::NAN,
        })
    }
}

/// Runs the exact scheme with `1e-12` certificates for
/// `10·⌈log(1e−12)/log λ⌉` sweeps, stopping early once the iterates are
/// stationary to `1e-13`.
pub fn reference_optimum(s: &Scenario) -> Result<Reference> {
    let lambda = constants(s).map(|c| c.lambda).unwrap_or(f64::NAN);
    let sweeps = if lambda > 0.0 && lambda < 1.0 {
        (10.0 * (1e-12f64.ln() / lambda.ln()).ceil()).max(10.0) as usize
    } else {
        10_000
    };
    let ctx = SubproblemContext::new(&s.agents, &s.propagator);
    let mut x = s.x0.clone();
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..sweeps {
        iterations += 1;
        let st = step(s, &ctx, &x, 0.0, 0.0, Some(SolveOptions::reference()))?;
        last_step = frobenius(&(st.x.matrix() - x.matrix()));
        x = st.x;
        if last_step <= 1e-13 {
            break;
        }
    }
    let p = s.choices(&x);
    Ok(Reference {
        x,
        p,
        iterations,
        last_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Exact,
    Inexact,
}

/// Bound curves at one iteration; `None` where no bound applies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bounds {
    pub x: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub x: ManipulationMatrix,
    pub p: ChoiceMatrix,
    pub phi: f64,
    pub p_gaps: Vec<f64>,
    pub x_gaps: Vec<f64>,
    pub gap_p: f64,
    pub gap_x: f64,
    pub step_x: f64,
    pub dist_x: Option<f64>,
    pub dist_p: Option<f64>,
    /// Bounds evaluated with `max(requested δ, largest realised gap so far)`.
    pub bound: Bounds,
    /// Bounds evaluated with the largest realised gaps so far.
    pub tight_bound: Bounds,
}

/// Row 0 holds `(X₀, P(X₀))`; row `ℓ ≥ 1` holds `(P̃_ℓ, X̃_ℓ)` with
/// `P̃_ℓ` computed at `X̃_{ℓ−1}`.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub scheme: Scheme,
    pub records: Vec<IterationRecord>,
    pub constants: Option<ConvergenceConstants>,
    pub assumption_violated: bool,
    pub converged: bool,
    pub delta1: f64,
    pub delta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    X,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation {
    pub iter: usize,
    pub kind: BoundKind,
    pub distance: f64,
    pub bound: f64,
}

impl RunTrace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has row 0")
    }

    pub fn has_reference(&self) -> bool {
        self.records[0].dist_x.is_some()
    }

    fn violations_of(&self, pick: impl Fn(&IterationRecord) -> Bounds) -> Vec<BoundViolation> {
        let mut out = Vec::new();
        for r in &self.records {
            let b = pick(r);
            for (kind, dist, bound) in [(BoundKind::X, r.dist_x, b.x), (BoundKind::P, r.dist_p, b.p)] {
                if let (Some(d), Some(bd)) = (dist, bound) {
                    if d > bd + BOUND_SLACK {
                        out.push(BoundViolation {
                            iter: r.iter,
                            kind,
                            distance: d,
                            bound: bd,
                        });
                    }
                }
            }
        }
        out
    }

    /// Iterations whose distance exceeds the conservative bound curve.
    pub fn bound_violations(&self) -> Vec<BoundViolation> {
        self.violations_of(|r| r.bound)
    }

    pub fn tight_bound_violations(&self) -> Vec<BoundViolation> {
        self.violations_of(|r| r.tight_bound)
    }

    /// Iterations where `Φ` rose by more than `2·max(δ₁, δ₂)` (plus `tol`),
    /// using the realised gaps when they exceed the requested ones.
    pub fn descent_violations(&self, tol: f64) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| {
                let allowance = 2.0 * self.delta1.max(self.delta2).max(w[1].gap_p).max(w[1].gap_x);
                w[1].phi > w[0].phi + allowance + tol
            })
            .map(|w| w[1].iter)
            .collect()
    }

    /// Least-squares slope of `ln ‖X_ℓ − X*‖_F` against `ℓ` over iterations
    /// with distance above `floor`.
    pub fn rate_estimate(&self, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter_map(|r| r.dist_x.filter(|&d| d > floor).map(|d| (r.iter as f64, d.ln())))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs with a freshly computed reference when the scenario is stable.
fn run_referenced(s: &Scenario, scheme: Scheme) -> Result<RunTrace> {
    let reference = match constants(s) {
        Ok(c) if c.stable => Some(reference_optimum(s)?),
        _ => None,
    };
    run(s, scheme, reference.as_ref())
}

pub fn run_exact(s: &Scenario) -> Result<RunTrace> {
    run_referenced(s, Scheme::Exact)
}

pub fn run_inexact(s: &Scenario) -> Result<RunTrace> {
    run_referenced(s, Scheme::Inexact)
}

pub fn run(s: &Scenario, scheme: Scheme, reference: Option<&Reference>) -> Result<RunTrace> {
    let (delta1, delta2) = match scheme {
        Scheme::Exact => (0.0, 0.0),
        Scheme::Inexact => (s.delta1, s.delta2),
    };
    let constants = match constants(s) {
        Ok(c) => Some(c),
        Err(Error::SingularNetwork { sigma_min }) => {
            warn!("network is singular (sigma_min {sigma_min:e}); bound checks skipped");
            None
        }
        Err(e) => return Err(e),
    };
    let assumption_violated = !constants.is_some_and(|c| c.stable);
    if let Some(c) = constants.filter(|c| !c.stable) {
        warn!("stability assumption fails (lambda = {}); bound checks skipped", c.lambda);
    }
    let checker = match (reference, constants) {
        (Some(r), Some(c)) if c.stable => Some(BoundChecker::new(s, r, c)),
        _ => None,
    };

    let ctx = SubproblemContext::new(&s.agents, &s.propagator);
    let g0 = s.distances(&s.x0);
    let p0 = choice_matrix_from_distances(&s.agents, &g0);
    let p0_gaps = choice_gaps(&s.agents, &g0, &p0);
    let mut records = vec![IterationRecord {
        iter: 0,
        phi: potential(s, &s.x0, &p0),
        gap_p: p0_gaps.iter().sum(),
        p_gaps: p0_gaps,
        x_gaps: vec![0.0; s.k()],
        gap_x: 0.0,
        step_x: 0.0,
        dist_x: reference.map(|r| frobenius(&(s.x0.matrix() - r.x.matrix()))),
        dist_p: reference.map(|r| h_norm(&(p0.matrix() - r.p.matrix()))),
        bound: Bounds::default(),
        tight_bound: Bounds::default(),
        x: s.x0.clone(),
        p: p0,
    }];
    let mut realised = (0.0f64, 0.0f64);
    if let Some(ch) = &checker {
        let r = &mut records[0];
        r.bound = ch.at(0, delta1, delta2);
        r.tight_bound = ch.at(0, 0.0, 0.0);
    }

    let mut converged = false;
    for iter in 1..=s.max_iters {
        let prev = &records[iter - 1];
        let st = step(s, &ctx, &prev.x, delta1, delta2, None)?;
        let step_x = frobenius(&(st.x.matrix() - prev.x.matrix()));
        let gap_p: f64 = st.p_gaps.iter().sum();
        let gap_x: f64 = st.x_gaps.iter().sum();
        realised = (realised.0.max(gap_p), realised.1.max(gap_x));
        let mut rec = IterationRecord {
            iter,
            phi: potential(s, &st.x, &st.p),
            dist_x: reference.map(|r| frobenius(&(st.x.matrix() - r.x.matrix()))),
            dist_p: reference.map(|r| h_norm(&(st.p.matrix() - r.p.matrix()))),
            p_gaps: st.p_gaps,
            x_gaps: st.x_gaps,
            gap_p,
            gap_x,
            step_x,
            bound: Bounds::default(),
            tight_bound: Bounds::default(),
            x: st.x,
            p: st.p,
        };
        if let Some(ch) = &checker {
            rec.bound = ch.at(iter, delta1.max(realised.0), delta2.max(realised.1));
            rec.tight_bound = ch.at(iter, realised.0, realised.1);
        }
        records.push(rec);
        if step_x <= STATIONARITY_TOL {
            converged = true;
            break;
        }
    }

    Ok(RunTrace {
        scheme,
        records,
        constants,
        assumption_violated,
        converged,
        delta1,
        delta2,
    })
}

struct BoundChecker {
    c: ConvergenceConstants,
    x0_dist: f64,
    p1_dist: f64,
}

impl BoundChecker {
    fn new(s: &Scenario, r: &Reference, c: ConvergenceConstants) -> Self {
        let p1 = s.choices(&s.x0);
        Self {
            c,
            x0_dist: frobenius(&(s.x0.matrix() - r.x.matrix())),
            p1_dist: h_norm(&(p1.matrix() - r.p.matrix())),
        }
    }

    fn at(&self, iter: usize, d1: f64, d2: f64) -> Bounds {
        let (rx, rp) = limit_radius(&self.c, d1, d2);
        let lam = self.c.lambda;
        let x = lam.powi(iter as i32) * self.x0_dist + rx;
        let p = (iter >= 1).then(|| {
            lam.powi(iter as i32 - 1) * (self.p1_dist + (2.0 * d1 / self.c.sigma2).sqrt()) + rp
        });
        Bounds { x: Some(x), p }
    }
}
