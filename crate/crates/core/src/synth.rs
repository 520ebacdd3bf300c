//! Random scenarios with a prescribed contraction factor, for tests and
//! benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::agents::AgentProfile;
use crate::altmin::Scenario;
use crate::choice::ChoiceModel;
use crate::error::Result;
use crate::net::{NetworkState, TransitionMatrix};
use crate::orgs::OrganizationProfile;

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
    pub n_agents: usize,
    pub t: u32,
    /// Contraction factor the organizations' weights are tuned to.
    pub lambda: f64,
    /// Use a nested model (two nests) for every other agent when `k ≥ 2`.
    pub nested: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 3,
            k: 2,
            n_agents: 3,
            t: 1,
            lambda: 0.5,
            nested: false,
            seed: 0,
        }
    }
}

/// Uniform point of `Δ_n` (normalised exponentials).
pub fn dirichlet_point(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| {
        let e: f64 = Exp1.sample(rng);
        e
    });
    let s = v.sum();
    v / s
}

/// Column-stochastic `(1 − ε)I + εR` with `R` random and `ε ∈ [0.1, 0.35]`.
pub fn random_network(rng: &mut impl Rng, n: usize) -> Result<TransitionMatrix> {
    let eps = rng.random_range(0.1..0.35);
    let mut m = DMatrix::identity(n, n) * (1.0 - eps);
    for j in 0..n {
        let col = dirichlet_point(rng, n) * eps;
        let mut c = m.column_mut(j);
        c += col;
    }
    TransitionMatrix::validate_stochastic(m, crate::net::RENORMALIZE_TOL)
}

pub fn random_model(rng: &mut impl Rng, k: usize, nested: bool) -> Result<ChoiceModel> {
    if nested && k >= 2 {
        let split = rng.random_range(1..k);
        let nests = vec![(0..split).collect(), (split..k).collect()];
        let mu = vec![rng.random_range(0.4..1.0), rng.random_range(0.4..1.0)];
        ChoiceModel::nested(nests, mu)
    } else {
        ChoiceModel::mnl(rng.random_range(0.5..1.5), k)
    }
}

/// Random scenario whose organizations' `τ/η` make the contraction factor
/// exactly `cfg.lambda`.
pub fn random_scenario(cfg: &SynthConfig) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = random_network(&mut rng, cfg.n)?;
    let agents = (0..cfg.n_agents)
        .map(|i| {
            Ok(AgentProfile {
                aspired_state: NetworkState::new(dirichlet_point(&mut rng, cfg.n))?,
                model: random_model(&mut rng, cfg.k, cfg.nested && i % 2 == 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_beta = agents
        .iter()
        .map(|a| a.model.convexity_parameter())
        .fold(f64::INFINITY, f64::min);
    let t = cfg.t as i32;
    let l1_sq = cfg.n_agents as f64 * network.sigma_max().powi(2 * t);
    let min_weight = l1_sq / (cfg.lambda * min_beta * network.sigma_min().powi(2 * t));
    let orgs = (0..cfg.k)
        .map(|k| {
            let factor = if k == 0 { 1.0 } else { rng.random_range(1.0..1.5) };
            let eta = rng.random_range(0.5..2.0);
            OrganizationProfile::new(
                eta,
                min_weight * factor * eta,
                NetworkState::new(dirichlet_point(&mut rng, cfg.n))?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario::new(network, cfg.t, agents, orgs)?.with_seed(cfg.seed))
}
