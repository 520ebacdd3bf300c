//! Additive random utility models: choice probabilities, surplus `E`, its
//! convex conjugate `E*`, convexity parameters and Monte-Carlo sampling.
//!
//! Surplus is defined without the `γμ` offset that a zero-mean error
//! distribution would add, i.e. `E(u) = μ log Σ exp(u_k/μ)` for MNL. The
//! offset is an additive constant and cancels wherever `E` is used.
//! Sampling does use zero-mean errors (location `−γμ`).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, xlogx};
use crate::par;

/// Euler–Mascheroni constant, the mean of a standard Gumbel variable.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SAMPLE_BLOCK: usize = 1 << 16;

/// Serialized form used by scenario files. Nest indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChoiceSpec {
    Mnl { mu: f64 },
    Nl { nests: Vec<Vec<usize>>, mu: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Mnl {
        mu: f64,
    },
    Nested {
        nests: Vec<Vec<usize>>,
        mu: Vec<f64>,
        nest_of: Vec<usize>,
    },
}

/// A validated discrete-choice model over `k` alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceModel {
    kind: Kind,
    k: usize,
}

/// A vector of choice probabilities in `Δ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities(DVector<f64>);

impl ChoiceProbabilities {
    pub fn new(p: DVector<f64>) -> Result<Self> {
        crate::linalg::check_simplex(p.as_slice(), 1e-12, || "choice probabilities".into())?;
        Ok(Self(p))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl ChoiceModel {
    pub fn mnl(mu: f64, k: usize) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidModel(format!("MNL scale must be positive, got {mu}")));
        }
        if k == 0 {
            return Err(Error::InvalidModel("no alternatives".into()));
        }
        Ok(Self {
            kind: Kind::Mnl { mu },
            k,
        })
    }

    /// Nested logit. `nests` holds 0-based alternative indices and must
    /// partition `0..K`; every `mu_l` must lie in `(0, 1]`.
    pub fn nested(nests: Vec<Vec<usize>>, mu: Vec<f64>) -> Result<Self> {
        if nests.is_empty() || nests.len() != mu.len() {
            return Err(Error::InvalidModel(format!(
                "{} nests but {} nest parameters",
                nests.len(),
                mu.len()
            )));
        }
        let k: usize = nests.iter().map(Vec::len).sum();
        let mut nest_of = vec![usize::MAX; k];
        for (l, nest) in nests.iter().enumerate() {
            if nest.is_empty() {
                return Err(Error::InvalidModel(format!("nest {} is empty", l + 1)));
            }
            for &a in nest {
                if a >= k {
                    return Err(Error::InvalidModel(format!(
                        "alternative {} out of range 1..={k}",
                        a + 1
                    )));
                }
                if nest_of[a] != usize::MAX {
                    return Err(Error::InvalidModel(format!(
                        "alternative {} appears in more than one nest",
                        a + 1
                    )));
                }
                nest_of[a] = l;
            }
        }
        for (l, &m) in mu.iter().enumerate() {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "nest {} parameter {m} outside (0, 1]",
                    l + 1
                )));
            }
        }
        Ok(Self {
            kind: Kind::Nested { nests, mu, nest_of },
            k,
        })
    }

    pub fn from_spec(spec: &ChoiceSpec, k: usize) -> Result<Self> {
        match spec {
            ChoiceSpec::Mnl { mu } => Self::mnl(*mu, k),
            ChoiceSpec::Nl { nests, mu } => {
                if nests.iter().flatten().any(|&a| a == 0) {
                    return Err(Error::InvalidModel("nest indices are 1-based".into()));
                }
                let zero_based = nests
                    .iter()
                    .map(|n| n.iter().map(|&a| a - 1).collect())
                    .collect();
                let model = Self::nested(zero_based, mu.clone())?;
                if model.k != k {
                    return Err(Error::InvalidModel(format!(
                        "nests cover {} alternatives, expected {k}",
                        model.k
                    )));
                }
                Ok(model)
            }
        }
    }

    pub fn to_spec(&self) -> ChoiceSpec {
        match &self.kind {
            Kind::Mnl { mu } => ChoiceSpec::Mnl { mu: *mu },
            Kind::Nested { nests, mu, .. } => ChoiceSpec::Nl {
                nests: nests
                    .iter()
                    .map(|n| n.iter().map(|a| a + 1).collect())
                    .collect(),
                mu: mu.clone(),
            },
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_nested(&self) -> bool {
        matches!(self.kind, Kind::Nested { .. })
    }

    /// Per-nest `(log Σ_{m∈N_l} exp(u_m/μ_l), μ_l · that)`.
    fn inclusive_values(nests: &[Vec<usize>], mu: &[f64], u: &[f64]) -> Vec<(f64, f64)> {
        nests
            .iter()
            .zip(mu)
            .map(|(nest, &m)| {
                let lse = log_sum_exp(nest.iter().map(|&a| u[a] / m));
                (lse, m * lse)
            })
            .collect()
    }

    /// Log choice probabilities, computed entirely in log space.
    pub fn log_probabilities(&self, u: &DVector<f64>) -> DVector<f64> {
        assert_eq!(u.len(), self.k, "utility vector length");
        match &self.kind {
            Kind::Mnl { mu } => {
                let lse = log_sum_exp(u.iter().map(|&v| v / mu));
                u.map(|v| v / mu - lse)
            }
            Kind::Nested { nests, mu, nest_of } => {
                let us = u.as_slice();
                let iv = Self::inclusive_values(nests, mu, us);
                let top = log_sum_exp(iv.iter().map(|&(_, i)| i));
                DVector::from_iterator(
                    self.k,
                    (0..self.k).map(|a| {
                        let l = nest_of[a];
                        (iv[l].1 - top) + (us[a] / mu[l] - iv[l].0)
                    }),
                )
            }
        }
    }

    pub fn probabilities(&self, u: &DVector<f64>) -> ChoiceProbabilities {
        let p = self.log_probabilities(u).map(f64::exp);
        let s = p.sum();
        ChoiceProbabilities(p / s)
    }

    /// Expected maximum utility, without the mean offset of the errors.
    pub fn surplus(&self, u: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Mnl { mu } => mu * log_sum_exp(u.iter().map(|&v| v / mu)),
            Kind::Nested { nests, mu, .. } => {
                let iv = Self::inclusive_values(nests, mu, u.as_slice());
                log_sum_exp(iv.iter().map(|&(_, i)| i))
            }
        }
    }

    /// Convex conjugate `E*(p)` for `p ∈ Δ_K`, with `0 ln 0 = 0`.
    pub fn conjugate(&self, p: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Mnl { mu } => mu * p.iter().copied().map(xlogx).sum::<f64>(),
            Kind::Nested { nests, mu, .. } => nests
                .iter()
                .zip(mu)
                .map(|(nest, &m)| {
                    let within: f64 = nest.iter().map(|&a| xlogx(p[a])).sum();
                    let total: f64 = nest.iter().map(|&a| p[a]).sum();
                    m * within + (1.0 - m) * xlogx(total)
                })
                .sum(),
        }
    }

    /// Gradient of `E*` at `p = exp(log_p)`, evaluated from log-probabilities
    /// so that tiny components do not underflow.
    pub fn conjugate_gradient_log(&self, log_p: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Mnl { mu } => log_p.map(|lp| mu * (lp + 1.0)),
            Kind::Nested { nests, mu, nest_of } => {
                let log_total: Vec<f64> = nests
                    .iter()
                    .map(|nest| log_sum_exp(nest.iter().map(|&a| log_p[a])))
                    .collect();
                DVector::from_iterator(
                    self.k,
                    (0..self.k).map(|a| {
                        let l = nest_of[a];
                        mu[l] * (log_p[a] + 1.0) + (1.0 - mu[l]) * (log_total[l] + 1.0)
                    }),
                )
            }
        }
    }

    /// Strong-convexity parameter of `E*` w.r.t. `‖·‖₁`.
    pub fn convexity_parameter(&self) -> f64 {
        match &self.kind {
            Kind::Mnl { mu } => *mu,
            Kind::Nested { mu, .. } => mu.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// `argmin_{p ∈ Δ_K} ⟨g, p⟩ + E*(p)`, via the conjugate-duality identity
    /// (the minimiser equals the choice probabilities at `u = −g`).
    pub fn rational_inattention_solve(&self, cost: &DVector<f64>) -> ChoiceProbabilities {
        self.probabilities(&(-cost))
    }

    /// Empirical argmax frequencies of `u + ε` over `draws` samples.
    ///
    /// Draws are split into fixed blocks, each with its own ChaCha stream,
    /// so the result depends only on `seed` and not on the thread count.
    pub fn sample_choice(&self, u: &DVector<f64>, seed: u64, draws: usize) -> DVector<f64> {
        assert!(draws >= 1, "at least one draw is required");
        assert_eq!(u.len(), self.k, "utility vector length");
        let blocks = draws.div_ceil(SAMPLE_BLOCK);
        let counts = par::map_indexed(blocks, |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = SAMPLE_BLOCK.min(draws - b * SAMPLE_BLOCK);
            self.sample_block(u, &mut rng, len)
        });
        let mut total = vec![0u64; self.k];
        for c in counts {
            for (t, v) in total.iter_mut().zip(c) {
                *t += v;
            }
        }
        DVector::from_iterator(self.k, total.into_iter().map(|c| c as f64 / draws as f64))
    }

    fn sample_block<R: Rng>(&self, u: &DVector<f64>, rng: &mut R, len: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.k];
        match &self.kind {
            Kind::Mnl { mu } => {
                let eps = Gumbel::new(-EULER_GAMMA * mu, *mu).expect("positive scale");
                for _ in 0..len {
                    let best = argmax(u.iter().map(|&v| v + eps.sample(rng)));
                    counts[best] += 1;
                }
            }
            Kind::Nested { nests, mu, .. } => {
                // Max-stable representation: the best alternative of nest l
                // has utility I_l + (nest-level Gumbel), and within the nest
                // the winner is the argmax of u_k + μ_l·(Gumbel), drawn
                // independently of the nest-level maximum.
                let std = Gumbel::new(-EULER_GAMMA, 1.0).expect("unit scale");
                let iv = Self::inclusive_values(nests, mu, u.as_slice());
                for _ in 0..len {
                    let l = argmax(iv.iter().map(|&(_, i)| i + std.sample(rng)));
                    let m = mu[l];
                    let pick = argmax(nests[l].iter().map(|&a| u[a] + m * std.sample(rng)));
                    counts[nests[l][pick]] += 1;
                }
            }
        }
        counts
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Table of mode densities `g^{k,m}(z̄)` of the error differences
/// `ε_k − ε_m`, for every ordered pair `k ≠ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDensities {
    k: usize,
    table: Vec<Option<f64>>,
}

impl ModeDensities {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            table: vec![None; k * k],
        }
    }

    /// IID Gumbel errors with scale `mu`: each difference is logistic with
    /// scale `mu`, whose density at the mode 0 is `1 / (4 mu)`.
    pub fn iid_gumbel(k: usize, mu: f64) -> Self {
        let mut d = Self::new(k);
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    d.set(a, b, 1.0 / (4.0 * mu));
                }
            }
        }
        d
    }

    pub fn set(&mut self, k: usize, m: usize, density: f64) {
        self.table[k * self.k + m] = Some(density);
    }

    pub fn get(&self, k: usize, m: usize) -> Option<f64> {
        self.table[k * self.k + m]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            table: self.table.iter().map(|v| v.map(|d| d * factor)).collect(),
        }
    }
}

/// Generic strong-convexity bound `β = 1 / (2 Σ_k Σ_{m≠k} g^{k,m}(z̄))`.
pub fn convexity_parameter_lemma_bound(densities: &ModeDensities) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..densities.k {
        for m in 0..densities.k {
            if k != m {
                total += densities
                    .get(k, m)
                    .filter(|d| d.is_finite())
                    .ok_or(Error::MissingPair { k, m })?;
            }
        }
    }
    Ok(1.0 / (2.0 * total))
}
