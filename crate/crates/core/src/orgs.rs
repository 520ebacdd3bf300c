//! Organizations: payoffs and the simplex-constrained subproblem each one
//! solves against the current choice matrix.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::agents::{AgentProfile, ChoiceMatrix, ManipulationMatrix};
use crate::error::{Error, Result};
use crate::linalg::{fw_gap, project_simplex, uniform};
use crate::net::{NetworkState, Propagator};
use crate::par;

/// Distance below which `‖M^t x − v_i‖` is treated as a kink of the
/// objective.
pub const KINK_TOL: f64 = 1e-12;
/// Floor on any certificate the solver will accept.
pub const MIN_ACCEPT_GAP: f64 = 1e-8;
const SNAP_RADIUS: f64 = 1e-3;
const MIN_STEP: f64 = 1e-20;

/// A concave payoff `π` of the resulting network state.
pub trait Payoff: Debug + Send + Sync {
    fn value(&self, y: &DVector<f64>) -> f64;
    fn gradient(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Strong-concavity modulus with respect to `‖·‖₂`.
    fn concavity(&self) -> f64;
    fn as_anchor(&self) -> Option<&AnchorPayoff> {
        None
    }
}

/// `π(y) = −(τ/2)·‖y − w‖₂²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPayoff {
    pub tau: f64,
    pub anchor: NetworkState,
}

impl Payoff for AnchorPayoff {
    fn value(&self, y: &DVector<f64>) -> f64 {
        -0.5 * self.tau * (y - self.anchor.as_vector()).norm_squared()
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.anchor.as_vector() - y) * self.tau
    }

    fn concavity(&self) -> f64 {
        self.tau
    }

    fn as_anchor(&self) -> Option<&AnchorPayoff> {
        Some(self)
    }
}

#[derive(Debug, Clone)]
pub struct OrganizationProfile {
    pub eta: f64,
    pub payoff: Arc<dyn Payoff>,
}

impl PartialEq for OrganizationProfile {
    fn eq(&self, other: &Self) -> bool {
        self.eta == other.eta
            && (Arc::ptr_eq(&self.payoff, &other.payoff)
                || matches!((self.payoff.as_anchor(), other.payoff.as_anchor()), (Some(a), Some(b)) if a == b))
    }
}

impl OrganizationProfile {
    pub fn new(eta: f64, tau: f64, anchor: NetworkState) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Self::with_payoff(eta, Arc::new(AnchorPayoff { tau, anchor }))
    }

    pub fn with_payoff(eta: f64, payoff: Arc<dyn Payoff>) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        Ok(Self { eta, payoff })
    }

    pub fn tau(&self) -> f64 {
        self.payoff.concavity()
    }

    pub fn anchor(&self) -> Option<&NetworkState> {
        self.payoff.as_anchor().map(|a| &a.anchor)
    }

    /// `τ/η`, the curvature the payoff contributes to the objective.
    pub fn weight(&self) -> f64 {
        self.tau() / self.eta
    }
}

pub fn payoff(org: &OrganizationProfile, y: &NetworkState) -> f64 {
    org.payoff.value(y.as_vector())
}

/// Witness for a δ-inexact solution: `⟨g, x* − x̃⟩ ≥ −gap` for the
/// subgradient `g` at the returned point.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCertificate {
    pub gap: f64,
    pub subgradient_used: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop as soon as the certificate is at most this.
    pub target_gap: f64,
    /// Largest certificate returned without a `NonConvergence` error.
    pub accept_gap: f64,
    pub max_iters: usize,
}

impl SolveOptions {
    pub fn for_delta(delta2: f64) -> Self {
        if delta2 > 0.0 {
            let gap = delta2.max(MIN_ACCEPT_GAP);
            Self {
                target_gap: gap,
                accept_gap: gap,
                max_iters: 200_000,
            }
        } else {
            Self {
                target_gap: 1e-10,
                accept_gap: MIN_ACCEPT_GAP,
                max_iters: 200_000,
            }
        }
    }

    /// Tight tolerances used for reference optima.
    pub fn reference() -> Self {
        Self {
            target_gap: 1e-12,
            accept_gap: 1e-10,
            max_iters: 400_000,
        }
    }
}

/// `Σ_i p_i‖v_i − M^t x‖₂ − π(M^t x)/η`.
pub fn org_objective(
    org: &OrganizationProfile,
    x: &NetworkState,
    p_row: &[f64],
    agents: &[AgentProfile],
    prop: &Propagator,
) -> f64 {
    let y = prop.apply(x.as_vector());
    p_row
        .iter()
        .zip(agents)
        .map(|(&p, a)| p * (a.aspired_state.as_vector() - &y).norm())
        .sum::<f64>()
        - org.payoff.value(&y) / org.eta
}

struct Eval {
    value: f64,
    /// Gradient of the smooth terms, with the zero subgradient for kinks.
    g0: DVector<f64>,
    /// Total weight of the terms sitting at a kink.
    kink_weight: f64,
}

/// Shared, organization-independent data for subproblem solves at a fixed
/// network power and agent population.
pub struct SubproblemContext<'a> {
    agents: &'a [AgentProfile],
    prop: &'a Propagator,
    a_t: DMatrix<f64>,
    a_t_lu: Option<LU<f64, Dyn, Dyn>>,
    a_norm: f64,
    /// `(M^t)^{-1} v_i` where that point is feasible.
    kinks: Vec<Option<DVector<f64>>>,
}

impl<'a> SubproblemContext<'a> {
    pub fn new(agents: &'a [AgentProfile], prop: &'a Propagator) -> Self {
        let a = prop.matrix();
        let lu = a.clone().lu();
        let kinks = agents
            .iter()
            .map(|ag| {
                let z = lu.solve(ag.aspired_state.as_vector())?;
                if z.iter().any(|&v| !v.is_finite() || v < -1e-12) {
                    return None;
                }
                let z = project_simplex(&z);
                ((a * &z - ag.aspired_state.as_vector()).norm() <= KINK_TOL).then_some(z)
            })
            .collect();
        let a_t = a.transpose();
        let a_t_lu = Some(a_t.clone().lu()).filter(|l| l.is_invertible());
        Self {
            agents,
            prop,
            a_norm: a.norm(),
            a_t,
            a_t_lu,
            kinks,
        }
    }

    fn eval(&self, org: &OrganizationProfile, p_row: &[f64], x: &DVector<f64>) -> Eval {
        let y = self.prop.apply(x);
        let mut value = 0.0;
        let mut kink_weight = 0.0;
        let mut acc = -org.payoff.gradient(&y) / org.eta;
        for (&p, a) in p_row.iter().zip(self.agents) {
            if p == 0.0 {
                continue;
            }
            let r = &y - a.aspired_state.as_vector();
            let d = r.norm();
            value += p * d;
            if d > KINK_TOL {
                acc.axpy(p / d, &r, 1.0);
            } else {
                kink_weight += p;
            }
        }
        value -= org.payoff.value(&y) / org.eta;
        Eval {
            value,
            g0: &self.a_t * acc,
            kink_weight,
        }
    }

    /// Smallest Frank-Wolfe gap over the subgradients the solver can
    /// produce at `x`.
    fn certificate(&self, ev: &Eval, x: &DVector<f64>, target: f64) -> (f64, DVector<f64>) {
        let gap = fw_gap(&ev.g0, x);
        if ev.kink_weight == 0.0 || gap <= target {
            return (gap, ev.g0.clone());
        }
        self.kink_subgradient(&ev.g0, ev.kink_weight, x, target, gap)
    }

    /// At a kink the subdifferential is `g0 + c·(M^t)^T B` with `B` the unit
    /// ball. Searches it for a subgradient that is constant on the support
    /// of `x` and no smaller off it, which makes the gap vanish.
    fn kink_subgradient(
        &self,
        g0: &DVector<f64>,
        c: f64,
        x: &DVector<f64>,
        target: f64,
        zero_gap: f64,
    ) -> (f64, DVector<f64>) {
        let n = g0.len();
        let mut best = (zero_gap, g0.clone());
        let subgrad = |s: &DVector<f64>| g0 + &self.a_t * s * c;
        let consider = |g: DVector<f64>, best: &mut (f64, DVector<f64>)| {
            let gap = fw_gap(&g, x);
            if gap < best.0 {
                *best = (gap, g);
            }
        };

        let mut s = DVector::zeros(n);
        if let Some(lu) = &self.a_t_lu {
            // (M^t)^T e = e, so shifting gamma only moves s along e
            if let Some(b) = lu.solve(g0) {
                let gamma = b.mean();
                s = project_ball((b.map(|v| gamma - v)) / c);
                consider(subgrad(&s), &mut best);
                if best.0 <= target {
                    return best;
                }
            }
        }

        let support: Vec<bool> = x.iter().map(|&v| v > 1e-9).collect();
        let residual = |g: &DVector<f64>, gamma: f64| {
            DVector::from_iterator(
                n,
                g.iter().zip(&support).map(|(&gj, &on)| {
                    let r = gj - gamma;
                    if on { r } else { r.min(0.0) }
                }),
            )
        };
        let lip = 2.0 * (c * self.a_norm + (n as f64).sqrt()).powi(2);
        let step = 1.0 / lip;
        let g = subgrad(&s);
        let mut gamma = g
            .iter()
            .zip(&support)
            .filter(|(_, &on)| on)
            .map(|(&v, _)| v)
            .sum::<f64>()
            / support.iter().filter(|&&on| on).count().max(1) as f64;
        let (mut ys, mut yg) = (s.clone(), gamma);
        let mut t = 1.0f64;
        let mut last_phi = f64::INFINITY;
        for it in 0..3000 {
            let r = residual(&subgrad(&ys), yg);
            let phi = r.norm_squared();
            let grad_s = self.prop.matrix() * &r * (2.0 * c);
            let grad_g = -2.0 * r.sum();
            let s_next = project_ball(&ys - grad_s * step);
            let g_next = yg - grad_g * step;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_next;
            // restart momentum when the surrogate goes up
            if phi > last_phi {
                t = 1.0;
                ys = s.clone();
                yg = gamma;
                last_phi = f64::INFINITY;
                continue;
            }
            last_phi = phi;
            ys = &s_next + (&s_next - &s) * mom;
            yg = g_next + (g_next - gamma) * mom;
            s = s_next;
            gamma = g_next;
            t = t_next;
            if it % 25 == 24 {
                consider(subgrad(&s), &mut best);
                if best.0 <= target {
                    break;
                }
            }
        }
        consider(subgrad(&s), &mut best);
        best
    }

    /// Projected gradient with backtracking on the smooth part, snapping to
    /// feasible kink points when iterates approach them or stall. Stops on
    /// the Frank-Wolfe certificate.
    pub fn solve(
        &self,
        org: &OrganizationProfile,
        p_row: &[f64],
        opts: &SolveOptions,
        start: Option<&DVector<f64>>,
    ) -> Result<(NetworkState, DeltaCertificate)> {
        let n = self.prop.n();
        if p_row.len() != self.agents.len() {
            return Err(Error::dims("choice row", self.agents.len(), p_row.len()));
        }
        let mut x = match start {
            Some(s) if s.len() == n => project_simplex(s),
            Some(s) => return Err(Error::dims("solver start", n, s.len())),
            None => uniform(n),
        };
        let mut ev = self.eval(org, p_row, &x);
        let mut tried = vec![false; self.kinks.len()];
        let mut alpha = 1.0 / (org.weight() * self.a_norm.powi(2) + 1.0);
        let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
        let mut iterations = 0;

        while iterations < opts.max_iters {
            iterations += 1;
            let (gap, g) = self.certificate(&ev, &x, opts.target_gap);
            if best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((gap, x.clone(), g));
            }
            if gap <= opts.target_gap {
                break;
            }

            let near = self.kinks.iter().enumerate().find_map(|(i, z)| {
                z.as_ref()
                    .filter(|z| !tried[i] && (*z - &x).norm() <= SNAP_RADIUS)
                    .map(|z| (i, z))
            });
            if let Some((i, z)) = near {
                tried[i] = true;
                let evz = self.eval(org, p_row, z);
                if evz.value <= ev.value {
                    x = z.clone();
                    ev = evz;
                    continue;
                }
            }

            let mut moved = false;
            while alpha > MIN_STEP {
                let xn = project_simplex(&(&x - &ev.g0 * alpha));
                let dx = (&xn - &x).norm();
                if dx == 0.0 {
                    break;
                }
                let evn = self.eval(org, p_row, &xn);
                let curvature_ok = (&evn.g0 - &ev.g0).norm() * alpha <= dx;
                let descent_ok = evn.value <= ev.value + 1e-13 * (1.0 + ev.value.abs());
                if curvature_ok && descent_ok {
                    x = xn;
                    ev = evn;
                    alpha *= 1.5;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if moved {
                continue;
            }

            // stalled: the minimiser is likely a kink we have not visited
            let mut jumped = false;
            for (i, z) in self.kinks.iter().enumerate() {
                let Some(z) = z else { continue };
                if tried[i] {
                    continue;
                }
                tried[i] = true;
                let evz = self.eval(org, p_row, z);
                if evz.value <= ev.value {
                    x = z.clone();
                    ev = evz;
                    jumped = true;
                    break;
                }
            }
            if !jumped {
                break;
            }
            alpha = alpha.max(1e-6);
        }

        let (gap, x, g) = best.expect("at least one iteration");
        if gap > opts.accept_gap {
            return Err(Error::NonConvergence {
                column: None,
                iterations,
                best_gap: gap,
            });
        }
        let x = NetworkState::new(x)?;
        Ok((
            x,
            DeltaCertificate {
                gap,
                subgradient_used: g,
            },
        ))
    }
}

fn project_ball(s: DVector<f64>) -> DVector<f64> {
    let norm = s.norm();
    if norm > 1.0 {
        s / norm
    } else {
        s
    }
}

/// Solves one organization's subproblem to certificate `max(delta2, 1e-8)`
/// (or `1e-10` targeted when `delta2 = 0`).
pub fn solve_org_subproblem(
    org: &OrganizationProfile,
    p_row: &[f64],
    agents: &[AgentProfile],
    prop: &Propagator,
    delta2: f64,
) -> Result<(NetworkState, DeltaCertificate)> {
    if !(delta2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta2 {delta2}")));
    }
    SubproblemContext::new(agents, prop).solve(org, p_row, &SolveOptions::for_delta(delta2), None)
}

/// `X(P)`: organization `k` solves against row `k` of `P`. `start` warm-starts
/// each column.
pub fn manipulation_matrix_with(
    ctx: &SubproblemContext<'_>,
    orgs: &[OrganizationProfile],
    p: &ChoiceMatrix,
    opts: &SolveOptions,
    start: Option<&ManipulationMatrix>,
) -> Result<(ManipulationMatrix, Vec<DeltaCertificate>)> {
    if p.k() != orgs.len() {
        return Err(Error::dims("choice matrix rows", orgs.len(), p.k()));
    }
    if let Some(s) = start {
        if s.k() != orgs.len() {
            return Err(Error::dims("start columns", orgs.len(), s.k()));
        }
    }
    let cols = par::try_map_indexed(orgs.len(), |k| {
        let row: Vec<f64> = p.matrix().row(k).iter().copied().collect();
        let warm = start.map(|s| s.column(k));
        ctx.solve(&orgs[k], &row, opts, warm.as_ref()).map_err(|e| match e {
            Error::NonConvergence {
                iterations, best_gap, ..
            } => Error::NonConvergence {
                column: Some(k),
                iterations,
                best_gap,
            },
            other => other,
        })
    })?;
    let (xs, certs): (Vec<_>, Vec<_>) = cols.into_iter().map(|(x, c)| (x.into_vector(), c)).unzip();
    Ok((ManipulationMatrix::from_columns(&xs)?, certs))
}

pub fn manipulation_matrix(
    orgs: &[OrganizationProfile],
    p: &ChoiceMatrix,
    agents: &[AgentProfile],
    prop: &Propagator,
    delta2: f64,
) -> Result<(ManipulationMatrix, Vec<DeltaCertificate>)> {
    let ctx = SubproblemContext::new(agents, prop);
    manipulation_matrix_with(&ctx, orgs, p, &SolveOptions::for_delta(delta2), None)
}
