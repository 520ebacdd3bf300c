//! Brute-force and Monte Carlo reference computations: barycentric grid
//! search, sampled choice frequencies, finite differences and an empirical
//! strong-convexity probe.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::ManipulationMatrix;
use crate::altmin::{reduced_potential, Scenario};
use crate::choice::ChoiceModel;
use crate::error::{Error, Result};
use crate::par;
use crate::synth::dirichlet_point;

pub const MAX_GRID_DIMENSION: usize = 4;
/// Largest number of grid points a single search will evaluate.
pub const MAX_GRID_POINTS: u128 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dimension: usize,
    resolution: f64,
}

impl GridSpec {
    pub fn new(dimension: usize, resolution: f64) -> Result<Self> {
        if dimension == 0 || dimension > MAX_GRID_DIMENSION {
            return Err(Error::InvalidParameter(format!(
                "grid dimension must be in 1..={MAX_GRID_DIMENSION}, got {dimension}"
            )));
        }
        if !(resolution > 0.0 && resolution <= 1.0) {
            return Err(Error::InvalidParameter(format!("grid resolution {resolution}")));
        }
        Ok(Self { dimension, resolution })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of parts each unit is split into, `⌈1/resolution⌉`.
    pub fn divisions(&self) -> usize {
        (1.0 / self.resolution - 1e-9).ceil() as usize
    }

    pub fn points(&self) -> u128 {
        binomial((self.divisions() + self.dimension - 1) as u128, (self.dimension - 1) as u128)
    }

    /// All grid points in lexicographic order of their integer coordinates.
    pub fn enumerate(&self) -> Vec<DVector<f64>> {
        let m = self.divisions();
        let mut out = Vec::new();
        let mut buf = vec![0usize; self.dimension];
        compositions(m, 0, &mut buf, &mut |c| out.push(to_point(c, m)));
        out
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn to_point(c: &[usize], m: usize) -> DVector<f64> {
    DVector::from_iterator(c.len(), c.iter().map(|&a| a as f64 / m as f64))
}

fn compositions(rest: usize, pos: usize, buf: &mut [usize], f: &mut impl FnMut(&[usize])) {
    if pos + 1 == buf.len() {
        buf[pos] = rest;
        f(buf);
        return;
    }
    for a in (0..=rest).rev() {
        buf[pos] = a;
        compositions(rest - a, pos + 1, buf, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult<P> {
    pub point: P,
    pub value: f64,
    /// `lipschitz · resolution · √d`: how far the grid minimum may sit above
    /// the true minimum.
    pub error_bound: f64,
    pub evaluated: u128,
}

fn better(a: Option<(f64, usize)>, b: Option<(f64, usize)>) -> Option<(f64, usize)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Exhaustive minimisation over the barycentric grid of `Δ_d`. Ties go to
/// the first point in enumeration order.
pub fn grid_minimize<F>(objective: F, spec: &GridSpec, lipschitz: f64) -> Result<GridResult<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let total = spec.points();
    if total > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge {
            points: total,
            limit: MAX_GRID_POINTS,
        });
    }
    let m = spec.divisions();
    let d = spec.dimension;
    // split on the first coordinate, which runs from m down to 0
    let parts = par::map_indexed(m + 1, |i| {
        let first = m - i;
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut buf = vec![0usize; d];
        buf[0] = first;
        let mut visit = |c: &[usize]| {
            let v = objective(&to_point(c, m));
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, c.to_vec()));
            }
        };
        if d == 1 {
            if first == m {
                visit(&buf);
            }
        } else {
            compositions(m - first, 1, &mut buf, &mut visit);
        }
        best
    });
    let (value, coords) = parts
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<usize>)>, |acc, b| match acc {
            Some(a) if a.0 <= b.0 => Some(a),
            _ => Some(b),
        })
        .expect("grid is nonempty");
    Ok(GridResult {
        point: to_point(&coords, m),
        value,
        error_bound: lipschitz * spec.resolution * (d as f64).sqrt(),
        evaluated: total,
    })
}

/// Exhaustive minimisation over the product of `blocks` copies of the grid.
pub fn grid_minimize_product<F>(
    objective: F,
    spec: &GridSpec,
    blocks: usize,
    lipschitz: f64,
) -> Result<GridResult<Vec<DVector<f64>>>>
where
    F: Fn(&[DVector<f64>]) -> f64 + Sync,
{
    let per = spec.points();
    let total = per.checked_pow(blocks as u32).unwrap_or(u128::MAX);
    if blocks == 0 || total > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge {
            points: total,
            limit: MAX_GRID_POINTS,
        });
    }
    let pts = spec.enumerate();
    let c = pts.len();
    let rest = c.pow(blocks as u32 - 1);
    let decode = |mut idx: usize| -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(0); blocks];
        for b in (0..blocks).rev() {
            out[b] = pts[idx % c].clone();
            idx /= c;
        }
        out
    };
    let parts = par::map_indexed(c, |head| {
        (0..rest)
            .map(|tail| {
                let idx = head * rest + tail;
                (objective(&decode(idx)), idx)
            })
            .fold(None, |acc, v| better(acc, Some(v)))
    });
    let (value, idx) = parts.into_iter().fold(None, better).expect("grid is nonempty");
    Ok(GridResult {
        point: decode(idx),
        value,
        error_bound: lipschitz * spec.resolution * ((spec.dimension * blocks) as f64).sqrt(),
        evaluated: total,
    })
}

/// Grid minimum of `Φ(X, P(X))` over `Δ_n^K`.
pub fn grid_reduced_potential(
    s: &Scenario,
    resolution: f64,
    lipschitz: f64,
) -> Result<GridResult<ManipulationMatrix>> {
    let spec = GridSpec::new(s.n(), resolution)?;
    let r = grid_minimize_product(
        |cols| {
            let x = ManipulationMatrix::from_columns(cols).expect("grid points are feasible");
            reduced_potential(s, &x)
        },
        &spec,
        s.k(),
        lipschitz,
    )?;
    Ok(GridResult {
        point: ManipulationMatrix::from_columns(&r.point)?,
        value: r.value,
        error_bound: r.error_bound,
        evaluated: r.evaluated,
    })
}

/// Sampled choice frequencies with binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub frequencies: DVector<f64>,
    pub standard_errors: DVector<f64>,
    pub draws: usize,
}

pub fn mc_choice_probabilities(model: &ChoiceModel, u: &DVector<f64>, draws: usize, seed: u64) -> McEstimate {
    let frequencies = model.sample_choice(u, seed, draws);
    let standard_errors = frequencies.map(|p| (p * (1.0 - p) / draws as f64).sqrt());
    McEstimate {
        frequencies,
        standard_errors,
        draws,
    }
}

/// Central differences with step `h`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, u: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(u.len(), |k, _| {
        let mut up = u.clone();
        let mut down = u.clone();
        up[k] += h;
        down[k] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeNorm {
    L1,
    /// Euclidean norm of the whole vector (the Frobenius norm for stacked
    /// matrix columns).
    L2,
    /// `(Σ_b ‖z_b‖₁²)^{1/2}` over consecutive blocks of length `block`.
    H { block: usize },
}

impl ProbeNorm {
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        match *self {
            ProbeNorm::L1 => z.lp_norm(1),
            ProbeNorm::L2 => z.norm(),
            ProbeNorm::H { block } => z
                .as_slice()
                .chunks(block)
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// `Δ_dim^blocks`, points stacked block after block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductSimplex {
    pub dim: usize,
    pub blocks: usize,
}

impl ProductSimplex {
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim * self.blocks);
        for b in 0..self.blocks {
            let mut p = dirichlet_point(rng, self.dim);
            if self.dim > 1 && rng.random_bool(0.2) {
                // push onto a face
                let keep = rng.random_range(0..self.dim);
                for j in 0..self.dim {
                    if j != keep && rng.random_bool(0.5) {
                        p[j] = 0.0;
                    }
                }
                let s = p.sum();
                p /= s;
            }
            out.rows_mut(b * self.dim, self.dim).copy_from(&p);
        }
        out
    }
}

pub const PROBE_WEIGHTS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Smallest observed
/// `2·[αF(x) + (1−α)F(y) − F(αx + (1−α)y)] / (α(1−α)‖x − y‖²)` over random
/// pairs in `domain` and `α ∈ {0.1, …, 0.9}`.
pub fn strong_convexity_probe<F>(f: F, norm: ProbeNorm, domain: ProductSimplex, pairs: usize, seed: u64) -> f64
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    par::map_indexed(pairs, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x = domain.sample(&mut rng);
        let y = domain.sample(&mut rng);
        let d = norm.eval(&(&x - &y));
        if d < 1e-6 {
            return f64::INFINITY;
        }
        let (fx, fy) = (f(&x), f(&y));
        PROBE_WEIGHTS
            .iter()
            .map(|&a| {
                let mid = &x * a + &y * (1.0 - a);
                2.0 * (a * fx + (1.0 - a) * fy - f(&mid)) / (a * (1.0 - a) * d * d)
            })
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}
