//! Seeded synthetic generators whose conditional means, quantiles,
//! propensities and density bounds are known in closed form.
//!
//! Every row draws from its own ChaCha stream keyed on `(seed, row)`, with
//! columns consumed in a fixed order, so output does not depend on thread
//! count or on how rows are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::auditors::{expand_groups, GroupPredicate};
use crate::chain::logistic;
use crate::data::{Dataset, Domain, GroupColumns};
use crate::error::{Error, Result};

const HETERO_SALT: u64 = 0x6865_7465_726f;
const SOURCE_SALT: u64 = 0x736f_7572_6365;
const TARGET_SALT: u64 = 0x7461_7267_6574;
const MISSING_SALT: u64 = 0x6d69_7373_696e;

fn row_rng(seed: u64, salt: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(row as u64);
    rng
}

/// Standard normal quantile `Phi^{-1}(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// Ground truth for [`gen_hetero`]: `y = x0 + (0.1 + 0.2 x1) eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroOracle {
    /// Feature driving the noise scale (`x1`, or `x0` when `d = 1`).
    pub scale_feature: usize,
}

impl HeteroOracle {
    pub fn cond_mean(&self, x: &[f64]) -> f64 {
        x[0]
    }

    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        0.1 + 0.2 * x[self.scale_feature]
    }

    /// Conditional `delta`-quantile `m(x) + sigma(x) Phi^{-1}(delta)`.
    pub fn cond_quantile(&self, x: &[f64], delta: f64) -> f64 {
        self.cond_mean(x) + self.noise_scale(x) * normal_quantile(delta)
    }

    /// Largest conditional label density, attained at the smallest scale.
    pub fn density_bound(&self) -> f64 {
        1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// `x ~ U[0,1]^d`, heteroscedastic Gaussian labels around `x0`.
pub fn gen_hetero(n: usize, d: usize, seed: u64) -> Result<(Dataset, HeteroOracle)> {
    if n == 0 || d == 0 {
        return Err(Error::input("gen_hetero needs n >= 1 and d >= 1"));
    }
    let oracle = HeteroOracle {
        scale_feature: 1.min(d - 1),
    };
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, HETERO_SALT, i);
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let eps: f64 = rng.sample(StandardNormal);
            let y = oracle.cond_mean(&x) + oracle.noise_scale(&x) * eps;
            (x, y)
        })
        .collect();
    let (features, labels): (Vec<Vec<f64>>, Vec<f64>) = rows.into_iter().unzip();
    Ok((Dataset::from_rows(features, labels)?, oracle))
}

/// Parameters of the covariate-shift scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    /// Target mean; the source is centred at the origin.
    pub mu: Vec<f64>,
    /// Link weights `a` in `E[y|x] = (1 - w) logistic(a . x) + w / 2`.
    pub link: Vec<f64>,
    /// Weight `w` of the uniform noise component.
    pub noise_weight: f64,
}

impl ShiftSpec {
    /// Link `2 e_0` and equal parts signal and uniform noise.
    pub fn new(mu: Vec<f64>) -> Self {
        let mut link = vec![0.0; mu.len()];
        if let Some(first) = link.first_mut() {
            *first = 2.0;
        }
        ShiftSpec {
            mu,
            link,
            noise_weight: 0.5,
        }
    }
}

/// Ground truth for [`gen_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOracle {
    pub spec: ShiftSpec,
}

impl ShiftOracle {
    fn signal(&self, x: &[f64]) -> f64 {
        let z: f64 = self.spec.link.iter().zip(x).map(|(a, v)| a * v).sum();
        (1.0 - self.spec.noise_weight) * logistic(z)
    }

    pub fn cond_mean(&self, x: &[f64]) -> f64 {
        self.signal(x) + 0.5 * self.spec.noise_weight
    }

    pub fn cond_quantile(&self, x: &[f64], delta: f64) -> f64 {
        self.signal(x) + delta * self.spec.noise_weight
    }

    /// `p_ta(x) / p_so(x) = exp(mu . x - |mu|^2 / 2)`.
    pub fn true_ratio(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.spec.mu.iter().zip(x).map(|(m, v)| m * v).sum();
        let sq: f64 = self.spec.mu.iter().map(|m| m * m).sum();
        (dot - 0.5 * sq).exp()
    }

    /// Source propensity parameters `(|mu|^2 / 2, -mu)`, intercept first.
    pub fn theta(&self) -> Vec<f64> {
        let sq: f64 = self.spec.mu.iter().map(|m| m * m).sum();
        std::iter::once(0.5 * sq)
            .chain(self.spec.mu.iter().map(|m| -m))
            .collect()
    }

    /// Conditional label density is `1 / w` on its support.
    pub fn density_bound(&self) -> f64 {
        1.0 / self.spec.noise_weight
    }
}

/// Source and target samples sharing the conditional law of `y` given `x`.
#[derive(Debug, Clone)]
pub struct ShiftScenario {
    pub source: Dataset,
    /// Labels are for evaluation only.
    pub target: Dataset,
    pub oracle: ShiftOracle,
}

fn shift_rows(n: usize, spec: &ShiftSpec, oracle: &ShiftOracle, offset: bool, seed: u64, salt: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, salt, i);
            let x: Vec<f64> = spec
                .mu
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    if offset {
                        z + m
                    } else {
                        z
                    }
                })
                .collect();
            let u: f64 = rng.random();
            let y = oracle.signal(&x) + spec.noise_weight * u;
            (x, y)
        })
        .collect();
    rows.into_iter().unzip()
}

/// `x ~ N(0, I)` on the source and `N(mu, I)` on the target, with
/// `y = (1 - w) logistic(a . x) + w U`, `U ~ U(0, 1)`.
pub fn gen_shift(n_so: usize, n_ta: usize, spec: ShiftSpec, seed: u64) -> Result<ShiftScenario> {
    if n_so == 0 || n_ta == 0 {
        return Err(Error::input("both domains need at least one row"));
    }
    if spec.mu.is_empty() || spec.link.len() != spec.mu.len() {
        return Err(Error::input("shift and link vectors must share a nonzero length"));
    }
    if !(spec.noise_weight > 0.0 && spec.noise_weight <= 1.0) {
        return Err(Error::input("noise weight must lie in (0, 1]"));
    }
    let oracle = ShiftOracle { spec: spec.clone() };
    let (xs, ys) = shift_rows(n_so, &spec, &oracle, false, seed, SOURCE_SALT);
    let source = Dataset::from_rows(xs, ys)?.with_domain(vec![Domain::Source; n_so])?;
    let (xt, yt) = shift_rows(n_ta, &spec, &oracle, true, seed, TARGET_SALT);
    let target = Dataset::from_rows(xt, yt)?.with_domain(vec![Domain::Target; n_ta])?;
    Ok(ShiftScenario {
        source,
        target,
        oracle,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    /// Each row complete with probability `rho`.
    Mcar { rho: f64 },
    /// `P(R = 1 | x) = logistic(theta . (1, x))`; the masked column's
    /// coefficient must be zero.
    Mar { theta: Vec<f64> },
    /// As `Mar` but free to depend on the masked column.
    Mnar { theta: Vec<f64> },
}

/// Corrupted data with its uncorrupted copy and true completion probabilities.
#[derive(Debug, Clone)]
pub struct MissingData {
    pub data: Dataset,
    pub complete: Dataset,
    pub propensity: Vec<f64>,
    pub masked_column: usize,
}

fn logistic_affine(theta: &[f64], x: &[f64]) -> f64 {
    let mut z = theta[0];
    for (t, v) in theta[1..].iter().zip(x) {
        z += t * v;
    }
    logistic(z)
}

/// Masks `masked_column` (default: the last feature) on incomplete rows.
pub fn gen_missing(
    base: &Dataset,
    mechanism: &Mechanism,
    masked_column: Option<usize>,
    seed: u64,
) -> Result<MissingData> {
    if base.miss_mask().is_some() {
        return Err(Error::input("base dataset already has missing cells"));
    }
    let d = base.d();
    let col = masked_column.unwrap_or(d - 1);
    if col >= d {
        return Err(Error::input(format!("masked column {col} out of range")));
    }
    match mechanism {
        Mechanism::Mcar { rho } if !(*rho > 0.0 && *rho <= 1.0) => {
            return Err(Error::input(format!("MCAR rate {rho} outside (0, 1]")));
        }
        Mechanism::Mar { theta } | Mechanism::Mnar { theta } if theta.len() != d + 1 => {
            return Err(Error::input(format!("theta needs {} entries (intercept first)", d + 1)));
        }
        Mechanism::Mar { theta } if theta[col + 1] != 0.0 => {
            return Err(Error::input("MAR theta must not depend on the masked column"));
        }
        _ => {}
    }
    let propensity: Vec<f64> = base
        .rows()
        .map(|x| match mechanism {
            Mechanism::Mcar { rho } => *rho,
            Mechanism::Mar { theta } | Mechanism::Mnar { theta } => logistic_affine(theta, x),
        })
        .collect();
    let observed: Vec<bool> = propensity
        .par_iter()
        .enumerate()
        .map(|(i, &p)| row_rng(seed, MISSING_SALT, i).random::<f64>() < p)
        .collect();
    let mut mask = vec![true; base.n() * d];
    for (i, &obs) in observed.iter().enumerate() {
        if !obs {
            mask[i * d + col] = false;
        }
    }
    let data = base.clone().with_miss_mask(mask)?;
    Ok(MissingData {
        data,
        complete: base.clone(),
        propensity,
        masked_column: col,
    })
}

/// Adds a membership column per predicate (and pairwise intersections at
/// depth 2).
pub fn gen_groups(data: &Dataset, predicates: &[GroupPredicate], depth: usize) -> Result<Dataset> {
    if predicates.is_empty() {
        return Err(Error::input("no group predicates given"));
    }
    for p in predicates {
        if p.max_feature().is_some_and(|j| j >= data.d()) {
            return Err(Error::input(format!("group {} references a missing feature", p.name)));
        }
    }
    let groups = expand_groups(predicates, depth)?;
    let mut members = Vec::with_capacity(data.n() * groups.len());
    for x in data.rows() {
        members.extend(groups.iter().map(|g| g.contains(x)));
    }
    data.clone().with_groups(GroupColumns {
        names: groups.into_iter().map(|g| g.name).collect(),
        members,
    })
}
