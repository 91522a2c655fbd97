//! Coverage pipelines: one-sided lower bounds with group-conditional
//! coverage, two-sided intervals, score-based intervals, multivalid bounds
//! and the no-harm comparison.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::auditors::{multivalidity_family, AuditorFamily, Bin, BinGrid, FamilyEvaluator, GroupPredicate};
use crate::chain::{InitialPredictor, PredictorChain, ProjectionInterval};
use crate::config::FitConfig;
use crate::data::Dataset;
use crate::engine::{fit, FitOutcome};
use crate::error::{Error, Result};
use crate::mappings::MappingSpec;

/// `[min(y) - range, max(y) + range]`, or a unit-width box around a
/// constant label.
pub fn quantile_projection(labels: &[f64]) -> Result<ProjectionInterval> {
    let (lo, hi) = labels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::input("labels must be finite"));
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    ProjectionInterval::new(lo - range, hi + range)
}

/// Lower bound `l(x)` with `P(y >= l(x) | x in A) ~ 1 - delta` for every
/// group auditor in `family`.
pub fn fit_lower_bound(
    delta: f64,
    data: &Dataset,
    family: &AuditorFamily,
    config: &FitConfig,
    f0: InitialPredictor,
    density_bound: Option<f64>,
) -> Result<FitOutcome> {
    let mapping = MappingSpec::quantile(delta, density_bound)?;
    let proj = quantile_projection(data.labels())?;
    fit(config, data, family, mapping, f0, proj)
}

/// Anything that maps a feature vector to an interval `[lo, hi]`.
pub trait PredictionInterval {
    fn interval(&self, x: &[f64]) -> Result<(f64, f64)>;

    fn covers(&self, x: &[f64], y: f64) -> Result<bool> {
        let (lo, hi) = self.interval(x)?;
        Ok(lo <= y && y <= hi)
    }
}

/// `[lower(x), upper(x)]` from two quantile chains at levels `delta / 2` and
/// `1 - delta / 2`. Either side may be absent (infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPredictor {
    pub delta: f64,
    pub lower: Option<PredictorChain>,
    pub upper: Option<PredictorChain>,
}

impl IntervalPredictor {
    /// `(-inf, +inf)`.
    pub fn trivial() -> Self {
        IntervalPredictor {
            delta: 0.0,
            lower: None,
            upper: None,
        }
    }
}

impl PredictionInterval for IntervalPredictor {
    fn interval(&self, x: &[f64]) -> Result<(f64, f64)> {
        let lo = match &self.lower {
            Some(c) => c.predict(x)?,
            None => f64::NEG_INFINITY,
        };
        let hi = match &self.upper {
            Some(c) => c.predict(x)?,
            None => f64::INFINITY,
        };
        Ok((lo, hi))
    }
}

/// Fitted two-sided interval with both underlying runs.
#[derive(Debug, Clone)]
pub struct TwoSidedFit {
    pub interval: IntervalPredictor,
    pub lower: FitOutcome,
    pub upper: FitOutcome,
    /// Fraction of training rows where the lower chain exceeds the upper.
    pub crossing_rate: f64,
}

/// Two quantile chains at `delta / 2` and `1 - delta / 2`, so each tail
/// holds about `delta / 2` of the labels.
pub fn fit_two_sided(
    delta: f64,
    data: &Dataset,
    family: &AuditorFamily,
    config: &FitConfig,
    f0: InitialPredictor,
    density_bound: Option<f64>,
) -> Result<TwoSidedFit> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta {delta} outside (0, 1)")));
    }
    let lower = fit_lower_bound(delta / 2.0, data, family, config, f0.clone(), density_bound)?;
    let upper = fit_lower_bound(1.0 - delta / 2.0, data, family, config, f0, density_bound)?;
    let crossed = lower
        .values
        .iter()
        .zip(&upper.values)
        .filter(|(l, u)| l > u)
        .count();
    let crossing_rate = crossed as f64 / data.n() as f64;
    if crossing_rate > 0.05 {
        warn!("lower chain exceeds upper chain on {:.1}% of rows", 100.0 * crossing_rate);
    }
    Ok(TwoSidedFit {
        interval: IntervalPredictor {
            delta,
            lower: Some(lower.chain.clone()),
            upper: Some(upper.chain.clone()),
        },
        lower,
        upper,
        crossing_rate,
    })
}

/// A nonnegative score `m(x, y)` and the inverse image
/// `{y : m(x, y) <= q}` as an interval.
pub trait NonconformityScore {
    fn score(&self, x: &[f64], y: f64) -> f64;
    fn invert(&self, x: &[f64], q: f64) -> (f64, f64);
}

/// `|y - h(x)|`, inverted to `[h(x) - q, h(x) + q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsResidual {
    pub center: InitialPredictor,
}

impl NonconformityScore for AbsResidual {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        (y - self.center.evaluate(x)).abs()
    }

    fn invert(&self, x: &[f64], q: f64) -> (f64, f64) {
        let h = self.center.evaluate(x);
        (h - q, h + q)
    }
}

/// Threshold chain `q(x)` on a score, read back as an interval.
#[derive(Debug, Clone)]
pub struct ScoreInterval<S> {
    pub score: S,
    pub threshold: PredictorChain,
}

impl<S: NonconformityScore> PredictionInterval for ScoreInterval<S> {
    fn interval(&self, x: &[f64]) -> Result<(f64, f64)> {
        let q = self.threshold.predict(x)?;
        Ok(self.score.invert(x, q))
    }
}

/// Fits `q(x)` so that `P(m(x, y) <= q(x) | A) ~ 1 - delta` and checks on
/// 100 sampled rows that the inverter agrees with the score.
pub fn fit_score_interval<S: NonconformityScore + Clone>(
    delta: f64,
    data: &Dataset,
    score: &S,
    family: &AuditorFamily,
    config: &FitConfig,
    f0: InitialPredictor,
    density_bound: Option<f64>,
) -> Result<(ScoreInterval<S>, FitOutcome)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta {delta} outside (0, 1)")));
    }
    let scores: Vec<f64> = data.rows().zip(data.labels()).map(|(x, &y)| score.score(x, y)).collect();
    if scores.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::input("scores must be nonnegative"));
    }
    let transformed = data.with_labels(scores)?;
    let mapping = MappingSpec::quantile(1.0 - delta, density_bound)?;
    let default = quantile_projection(transformed.labels())?;
    let proj = ProjectionInterval::new(0.0, default.hi)?;
    let out = fit(config, &transformed, family, mapping, f0, proj)?;
    let fitted = ScoreInterval {
        score: score.clone(),
        threshold: out.chain.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for i in sample(&mut rng, data.n(), data.n().min(100)) {
        let x = data.row(i);
        let y = data.label(i);
        let q = out.values[i];
        let (lo, hi) = score.invert(x, q);
        if (lo <= y && y <= hi) != (score.score(x, y) <= q) {
            return Err(Error::config(format!(
                "score inverter disagrees with the score on row {i}"
            )));
        }
    }
    Ok((fitted, out))
}

/// Lower bound audited by bin-by-group cells of its own value. Bins of width
/// `lambda` (default a tenth of the range) cover the projection interval.
pub fn fit_multivalid(
    delta: f64,
    data: &Dataset,
    lambda: Option<f64>,
    groups: Option<&[GroupPredicate]>,
    config: &FitConfig,
    f0: InitialPredictor,
    density_bound: Option<f64>,
) -> Result<(FitOutcome, Vec<Bin>)> {
    let proj = quantile_projection(data.labels())?;
    let grid = BinGrid {
        lo: proj.lo,
        hi: proj.hi,
        width: lambda.unwrap_or(proj.width() / 10.0),
    };
    let family = multivalidity_family(grid, groups)?;
    let mapping = MappingSpec::quantile(delta, density_bound)?;
    let out = fit(config, data, &family, mapping, f0, proj)?;
    Ok((out, grid.bins()?))
}

/// One row of a coverage table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub group_id: String,
    /// Bin index, or `"all"`.
    pub bin_id: String,
    pub n: usize,
    pub coverage: f64,
    /// `coverage - target`.
    pub deviation: f64,
    /// `P(cell) * (coverage - target)`.
    pub mass_weighted_deviation: f64,
    /// `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
}

/// Membership mask of each predicate over `data`.
pub fn predicate_masks(predicates: &[GroupPredicate], data: &Dataset) -> Vec<(String, Vec<bool>)> {
    predicates
        .iter()
        .map(|g| (g.name.clone(), data.rows().map(|x| g.contains(x)).collect()))
        .collect()
}

fn coverage_row(group_id: &str, bin_id: String, covered: &[bool], members: impl Iterator<Item = usize>, total: usize, target: f64) -> CoverageRow {
    let (mut n, mut hits) = (0usize, 0usize);
    for i in members {
        n += 1;
        hits += usize::from(covered[i]);
    }
    let coverage = if n > 0 { hits as f64 / n as f64 } else { f64::NAN };
    let deviation = coverage - target;
    CoverageRow {
        group_id: group_id.to_string(),
        bin_id,
        n,
        coverage,
        deviation,
        mass_weighted_deviation: if n > 0 { n as f64 / total as f64 * deviation } else { 0.0 },
        std_error: if n > 0 { (coverage * (1.0 - coverage) / n as f64).sqrt() } else { f64::NAN },
    }
}

/// Coverage per group (and per bin of `values` when `bins` is given),
/// always led by the whole-population row.
pub fn coverage_table(
    covered: &[bool],
    groups: &[(String, Vec<bool>)],
    bins: Option<(&[Bin], &[f64])>,
    target: f64,
) -> Vec<CoverageRow> {
    let total = covered.len();
    let mut rows = vec![coverage_row("all", "all".into(), covered, 0..total, total, target)];
    for (name, mask) in groups {
        let members = (0..total).filter(|&i| mask[i]);
        rows.push(coverage_row(name, "all".into(), covered, members, total, target));
    }
    if let Some((bins, values)) = bins {
        let all = ("all".to_string(), vec![true; total]);
        for (name, mask) in std::iter::once(&all).chain(groups) {
            for (b, bin) in bins.iter().enumerate() {
                let members = (0..total).filter(|&i| mask[i] && bin.contains(values[i]));
                rows.push(coverage_row(name, b.to_string(), covered, members, total, target));
            }
        }
    }
    rows
}

/// Largest `|mean(c * (1{covered} - target))|` over the family, with bin
/// auditors evaluated at `values`.
pub fn coverage_audit(
    covered: &[bool],
    values: &[f64],
    data: &Dataset,
    family: &AuditorFamily,
    target: f64,
) -> Result<f64> {
    if covered.len() != data.n() || values.len() != data.n() {
        return Err(Error::input("coverage vectors must have n entries"));
    }
    let evaluator = FamilyEvaluator::new(family, data)?;
    let signals: Vec<f64> = covered.iter().map(|&c| f64::from(u8::from(c)) - target).collect();
    Ok(evaluator.best(values, &signals, None).violation)
}

/// Squared error to the true quantile before and after fitting.
#[derive(Debug, Clone, Serialize)]
pub struct NoHarm {
    pub mse_init: f64,
    pub mse_final: f64,
    /// `mse_final / mse_init` (`NaN` when `mse_init` is zero).
    pub ratio: f64,
}

/// Starts from `l*(x) + N(0, sigma_init^2)` (appended as a score column),
/// fits the lower bound and compares squared error to `l*` before and after.
/// Also returns the augmented training table the chain was fitted on.
pub fn no_harm_eval(
    data: &Dataset,
    true_quantile: &[f64],
    sigma_init: f64,
    delta: f64,
    family: &AuditorFamily,
    config: &FitConfig,
    density_bound: Option<f64>,
) -> Result<(NoHarm, FitOutcome, Dataset)> {
    if true_quantile.len() != data.n() {
        return Err(Error::input("true quantile must have n entries"));
    }
    if !(sigma_init >= 0.0) {
        return Err(Error::config("sigma_init must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, sigma_init).map_err(|e| Error::config(e.to_string()))?;
    let start: Vec<f64> = true_quantile.iter().map(|l| l + noise.sample(&mut rng)).collect();
    let augmented = data.with_feature_column(&start)?;
    let f0 = InitialPredictor::ScoreColumn { column: data.d() };
    let out = fit_lower_bound(delta, &augmented, family, config, f0, density_bound)?;
    let proj = out.chain.proj;
    let mse = |vals: &mut dyn Iterator<Item = f64>| {
        vals.zip(true_quantile).map(|(v, l)| (v - l) * (v - l)).sum::<f64>() / data.n() as f64
    };
    let mse_init = mse(&mut start.iter().map(|&v| proj.clamp(v)));
    let mse_final = mse(&mut out.values.iter().copied());
    let ratio = if mse_init > 0.0 { mse_final / mse_init } else { f64::NAN };
    Ok((
        NoHarm {
            mse_init,
            mse_final,
            ratio,
        },
        out,
        augmented,
    ))
}
