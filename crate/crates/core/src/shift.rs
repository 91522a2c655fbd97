//! Pipelines that transfer guarantees to an unseen population: covariate
//! shift (squared error and coverage), missing covariates, and parity of
//! selection rates across groups.

use serde::Serialize;

use crate::auditors::{centered_group_family, constant_family, propensity_family, shift_composite_family, GroupPredicate};
use crate::chain::{InitialPredictor, PredictorChain, ProjectionInterval};
use crate::config::FitConfig;
use crate::data::Dataset;
use crate::engine::{fit, FitOutcome};
use crate::error::{Error, Result};
use crate::fairness::quantile_projection;
use crate::mappings::MappingSpec;

/// Logistic propensity grid and its clamp `[c1, c2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityGrid {
    /// Parameter vectors, intercept first.
    pub thetas: Vec<Vec<f64>>,
    pub c1: f64,
    pub c2: f64,
}

fn check_unit_labels(data: &Dataset) -> Result<()> {
    if data.labels().iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::input("labels must lie in [0, 1]"));
    }
    Ok(())
}

/// Squared-error predictor on `O = [0, 1]` audited by
/// `+-ratio_theta(x) (f(x) - p(x))` for every grid point and baseline.
pub fn fit_universal_l2(
    source: &Dataset,
    grid: &PropensityGrid,
    baselines: &[InitialPredictor],
    config: &FitConfig,
    f0: InitialPredictor,
) -> Result<FitOutcome> {
    check_unit_labels(source)?;
    let family = shift_composite_family(&grid.thetas, baselines, grid.c1, grid.c2)?;
    fit(config, source, &family, MappingSpec::residual(), f0, ProjectionInterval::unit())
}

/// Lower bound whose coverage is reweighted by every propensity ratio in the
/// grid; the constant auditor is always added so source coverage holds too.
/// An empty grid leaves only the constant auditor.
pub fn fit_shift_conformal(
    delta: f64,
    source: &Dataset,
    grid: &PropensityGrid,
    config: &FitConfig,
    f0: InitialPredictor,
    density_bound: Option<f64>,
) -> Result<FitOutcome> {
    let family = if grid.thetas.is_empty() {
        constant_family()
    } else {
        propensity_family(&grid.thetas, grid.c1, grid.c2)?.with_constant()?
    };
    let mapping = MappingSpec::quantile(delta, density_bound)?;
    let proj = quantile_projection(source.labels())?;
    fit(config, source, &family, mapping, f0, proj)
}

/// Squared-error fit on the complete cases. The composite family should
/// contain the inverse completion weight in its span: with
/// `P(R = 1 | x) = logistic(theta . x)`, the grid `{theta, 0}` gives
/// `1 / P(R = 1 | x) = 1 + ratio_theta(x)`.
pub fn fit_missing(
    data: &Dataset,
    grid: &PropensityGrid,
    baselines: &[InitialPredictor],
    config: &FitConfig,
    f0: InitialPredictor,
) -> Result<FitOutcome> {
    let complete = data.complete_cases()?;
    check_unit_labels(&complete)?;
    let family = shift_composite_family(&grid.thetas, baselines, grid.c1, grid.c2)?;
    fit(config, &complete, &family, MappingSpec::residual(), f0, ProjectionInterval::unit())
}

/// Selection scores on `[0, 1]` whose covariance with every group indicator
/// is at most `alpha`. Labels are ignored.
pub fn fit_multiparity(
    data: &Dataset,
    groups: &[GroupPredicate],
    depth: usize,
    config: &FitConfig,
    f0: InitialPredictor,
) -> Result<FitOutcome> {
    let family = centered_group_family(groups, data, depth)?;
    fit(config, data, &family, MappingSpec::parity(), f0, ProjectionInterval::unit())
}

/// `mean((f(x) - truth(x))^2)` over `data`.
pub fn target_mse(chain: &PredictorChain, data: &Dataset, truth: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let preds = chain.predict_all(data)?;
    let total: f64 = preds
        .iter()
        .zip(data.rows())
        .map(|(f, x)| {
            let e = f - truth(x);
            e * e
        })
        .sum();
    Ok(total / data.n() as f64)
}

/// `mean((f(x) - y)^2)` over `data`.
pub fn label_mse(chain: &PredictorChain, data: &Dataset) -> Result<f64> {
    let preds = chain.predict_all(data)?;
    let total: f64 = preds.iter().zip(data.labels()).map(|(f, y)| (f - y) * (f - y)).sum();
    Ok(total / data.n() as f64)
}

/// `P(l(x) <= y)` over `data`.
pub fn target_coverage(chain: &PredictorChain, data: &Dataset) -> Result<f64> {
    let preds = chain.predict_all(data)?;
    let hits = preds.iter().zip(data.labels()).filter(|(l, y)| l <= y).count();
    Ok(hits as f64 / data.n() as f64)
}

/// One row of the shift evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReportRow {
    pub scenario: String,
    pub n_source: usize,
    pub n_target: usize,
    /// Target coverage or target squared error, depending on the scenario.
    pub metric: String,
    pub value: f64,
    pub deviation: f64,
    pub realizable: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditors::FeatureCondition;
    use crate::fairness::fit_lower_bound;
    use crate::report::FitStatus;
    use crate::synth::{gen_shift, ShiftSpec};

    #[test]
    fn zero_shift_matches_lower_bound() {
        let s = gen_shift(3000, 10, ShiftSpec::new(vec![0.0]), 1).unwrap();
        let grid = PropensityGrid {
            thetas: Vec::new(),
            c1: 0.05,
            c2: 0.95,
        };
        let config = FitConfig::new(0.03);
        let shifted =
            fit_shift_conformal(0.1, &s.source, &grid, &config, InitialPredictor::constant(0.5), Some(2.0))
                .unwrap();
        let plain = fit_lower_bound(
            0.1,
            &s.source,
            &constant_family(),
            &config,
            InitialPredictor::constant(0.5),
            Some(2.0),
        )
        .unwrap();
        assert_eq!(shifted.values, plain.values);
        assert_eq!(shifted.chain, plain.chain);
    }

    #[test]
    fn constant_f0_is_parity_fair() {
        let rows = (0..100).map(|i| vec![(i % 10) as f64 / 10.0]).collect();
        let data = Dataset::from_rows(rows, vec![0.0; 100]).unwrap();
        let groups = vec![GroupPredicate::new("a", vec![FeatureCondition::le(0, 0.45)])];
        let out = fit_multiparity(&data, &groups, 1, &FitConfig::new(0.02), InitialPredictor::constant(0.3))
            .unwrap();
        assert_eq!(out.report.status, FitStatus::Converged);
        assert!(out.chain.is_empty());
    }

    #[test]
    fn rejects_labels_outside_unit() {
        let data = Dataset::from_rows(vec![vec![0.0]], vec![1.5]).unwrap();
        let grid = PropensityGrid {
            thetas: vec![vec![0.0, 0.0]],
            c1: 0.1,
            c2: 0.9,
        };
        let res = fit_universal_l2(&data, &grid, &[InitialPredictor::constant(0.5)], &FitConfig::new(0.1), InitialPredictor::constant(0.5));
        assert!(res.is_err());
    }
}
