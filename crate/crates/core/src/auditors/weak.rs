use rayon::prelude::*;

use super::{apply_sign, AuditorDescriptor, AuditorFamily, AuditorKind, Bin, FamilyMembers, Sign};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mappings::Mapping;

/// The member chosen by the weak learner and its empirical violation
/// `mean(c(f(x), x) * s(f(x), y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub descriptor: AuditorDescriptor,
    /// Position in the closed member list (finite families only).
    pub member: Option<usize>,
    pub violation: f64,
}

/// Per-row columns cached for one positive member. Each variant reproduces
/// `AuditorKind::value` with the same operations in the same order.
enum Column {
    Static(Vec<f64>),
    Composite { ratio: Vec<f64>, baseline: Vec<f64> },
    Product { base: Vec<f64>, bin: Bin },
    Bin(Bin),
    Dynamic(AuditorKind),
}

impl Column {
    fn build(kind: &AuditorKind, data: &Dataset) -> Column {
        if !kind.depends_on_prediction() {
            return Column::Static(data.rows().map(|x| kind.value(0.0, x)).collect());
        }
        match kind {
            AuditorKind::ShiftComposite { ratio, baseline } => Column::Composite {
                ratio: data.rows().map(|x| ratio.ratio(x)).collect(),
                baseline: data.rows().map(|x| baseline.evaluate(x)).collect(),
            },
            AuditorKind::Product { base, bin } if !base.depends_on_prediction() => Column::Product {
                base: data.rows().map(|x| base.value(0.0, x)).collect(),
                bin: *bin,
            },
            AuditorKind::Bin { bin } => Column::Bin(*bin),
            other => Column::Dynamic(other.clone()),
        }
    }

    #[inline]
    fn value(&self, r: usize, f: f64, data: &Dataset) -> f64 {
        match self {
            Column::Static(col) => col[r],
            Column::Composite { ratio, baseline } => ratio[r] * (f - baseline[r]),
            Column::Product { base, bin } => base[r] * bin.indicator(f),
            Column::Bin(bin) => bin.indicator(f),
            Column::Dynamic(kind) => kind.value(f, data.row(r)),
        }
    }
}

/// A family bound to one dataset, with label-free per-row quantities cached.
pub struct FamilyEvaluator<'a> {
    family: &'a AuditorFamily,
    data: &'a Dataset,
    columns: Vec<Column>,
}

impl<'a> FamilyEvaluator<'a> {
    pub fn new(family: &'a AuditorFamily, data: &'a Dataset) -> Result<Self> {
        if family.min_dim() > data.d() {
            return Err(Error::DimensionMismatch {
                expected: family.min_dim(),
                got: data.d(),
            });
        }
        let columns = family
            .base_kinds()
            .into_par_iter()
            .map(|kind| Column::build(kind, data))
            .collect();
        Ok(FamilyEvaluator {
            family,
            data,
            columns,
        })
    }

    pub fn family(&self) -> &AuditorFamily {
        self.family
    }

    /// Most violated member on `rows` (all rows when `None`). Ties go to the
    /// earliest member in closure order.
    pub fn best(&self, values: &[f64], signals: &[f64], rows: Option<&[usize]>) -> Violation {
        match self.family.members() {
            FamilyMembers::Finite(members) => self.best_finite(members, values, signals, rows),
            FamilyMembers::LinearBall {
                radius,
                intercept,
                dim,
            } => self.best_linear(*radius, *intercept, *dim, signals, rows),
        }
    }

    /// Signed means `mean(c * s)` of each positive member over `rows`.
    pub fn member_means(&self, values: &[f64], signals: &[f64], rows: Option<&[usize]>) -> Vec<f64> {
        let count = match rows {
            Some(r) => r.len(),
            None => values.len(),
        } as f64;
        self.columns
            .par_iter()
            .map(|col| {
                let mut acc = 0.0;
                match rows {
                    None => {
                        for r in 0..values.len() {
                            acc += col.value(r, values[r], self.data) * signals[r];
                        }
                    }
                    Some(idx) => {
                        for &r in idx {
                            acc += col.value(r, values[r], self.data) * signals[r];
                        }
                    }
                }
                acc / count
            })
            .collect()
    }

    fn best_finite(
        &self,
        members: &[AuditorDescriptor],
        values: &[f64],
        signals: &[f64],
        rows: Option<&[usize]>,
    ) -> Violation {
        let means = self.member_means(values, signals, rows);
        let mut best = 0usize;
        let mut best_value = f64::NEG_INFINITY;
        for (k, &mean) in means.iter().enumerate() {
            for (offset, v) in [(0, mean), (1, -mean)] {
                if v > best_value {
                    best_value = v;
                    best = 2 * k + offset;
                }
            }
        }
        if best_value.is_nan() || best_value == f64::NEG_INFINITY {
            best = 0;
            best_value = f64::NAN;
        }
        Violation {
            descriptor: members[best].clone(),
            member: Some(best),
            violation: best_value,
        }
    }

    fn best_linear(
        &self,
        radius: f64,
        intercept: bool,
        dim: usize,
        signals: &[f64],
        rows: Option<&[usize]>,
    ) -> Violation {
        let width = dim + usize::from(intercept);
        let mut grad = vec![0.0; width];
        let mut count = 0usize;
        let mut add = |r: usize| {
            let x = self.data.row(r);
            let s = signals[r];
            for j in 0..dim {
                grad[j] += x[j] * s;
            }
            if intercept {
                grad[dim] += s;
            }
            count += 1;
        };
        match rows {
            None => (0..self.data.n()).for_each(&mut add),
            Some(idx) => idx.iter().copied().for_each(&mut add),
        }
        for g in &mut grad {
            *g /= count as f64;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let weights: Vec<f64> = if norm > 0.0 {
            grad.iter().map(|g| radius * g / norm).collect()
        } else {
            vec![0.0; width]
        };
        let offset = if intercept { weights[dim] } else { 0.0 };
        Violation {
            descriptor: AuditorDescriptor::positive(AuditorKind::Linear {
                weights: weights[..dim].to_vec(),
                offset,
            }),
            member: None,
            violation: radius * norm,
        }
    }

    /// `c(f, x_r)` for the chosen auditor, bit-identical to
    /// `descriptor.evaluate(f, x_r)`.
    #[inline]
    pub fn value(&self, chosen: &Violation, r: usize, f: f64) -> f64 {
        match chosen.member {
            Some(j) => {
                let sign = if j % 2 == 0 { Sign::Plus } else { Sign::Minus };
                apply_sign(sign, self.columns[j / 2].value(r, f, self.data))
            }
            None => chosen.descriptor.evaluate(f, self.data.row(r)),
        }
    }
}

/// Searches `family` for the member with the largest empirical violation
/// against `predictions` on `data`.
pub fn weak_learn(
    family: &AuditorFamily,
    predictions: &[f64],
    data: &Dataset,
    mapping: Mapping,
) -> Result<(AuditorDescriptor, f64)> {
    let evaluator = FamilyEvaluator::new(family, data)?;
    let found = weak_learn_with(&evaluator, predictions, data, mapping)?;
    Ok((found.descriptor, found.violation))
}

/// As [`weak_learn`] with a prebuilt evaluator.
pub fn weak_learn_with(
    evaluator: &FamilyEvaluator<'_>,
    predictions: &[f64],
    data: &Dataset,
    mapping: Mapping,
) -> Result<Violation> {
    if predictions.len() != data.n() {
        return Err(Error::input(format!(
            "{} predictions for {} rows",
            predictions.len(),
            data.n()
        )));
    }
    let signals: Vec<f64> = predictions
        .iter()
        .zip(data.labels())
        .map(|(&f, &y)| mapping.signal(f, y))
        .collect();
    let found = evaluator.best(predictions, &signals, None);
    if !found.violation.is_finite() {
        return Err(Error::NonFinite(format!(
            "violation of {} is {}",
            found.descriptor.id(),
            found.violation
        )));
    }
    Ok(found)
}
