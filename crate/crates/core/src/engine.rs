//! The projected update loop, in population and sample-splitting modes.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::auditors::{AuditorDescriptor, AuditorFamily, FamilyEvaluator, FamilyMembers, Violation};
use crate::chain::{ChainStep, InitialPredictor, PredictorChain, ProjectionInterval};
use crate::config::{FitConfig, FitMode, IterBudget, ResolvedParams, StepSize};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mappings::MappingSpec;
use crate::report::{AuditReport, FitStatus, IterationRecord, MemberViolation, RunReport};

/// Current tabular predictions over the working rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub values: Vec<f64>,
    pub steps: Vec<ChainStep>,
    pub iteration: usize,
    /// Mean potential of `values` over all working rows.
    pub potential: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Updated {
        auditor: AuditorDescriptor,
        violation: f64,
    },
    /// The largest violation did not exceed the threshold; state untouched.
    NoViolator { violation: f64 },
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub chain: PredictorChain,
    pub report: RunReport,
    /// Final tabular values `f_T(x_i)` on the training rows.
    pub values: Vec<f64>,
}

/// A fit problem with every constant resolved and auditor columns cached.
pub struct Engine<'a> {
    data: &'a Dataset,
    evaluator: FamilyEvaluator<'a>,
    mapping: MappingSpec,
    f0: InitialPredictor,
    proj: ProjectionInterval,
    mode: FitMode,
    params: ResolvedParams,
    folds: Vec<Vec<usize>>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at row {i} is {}", values[i]))),
        None => Ok(()),
    }
}

impl<'a> Engine<'a> {
    pub fn new(
        config: &FitConfig,
        data: &'a Dataset,
        family: &'a AuditorFamily,
        mapping: MappingSpec,
        f0: InitialPredictor,
        proj: ProjectionInterval,
    ) -> Result<Self> {
        config.validate()?;
        if f0.min_dim() > data.d() {
            return Err(Error::DimensionMismatch {
                expected: f0.min_dim(),
                got: data.d(),
            });
        }
        if let FamilyMembers::LinearBall { dim, .. } = family.members() {
            if *dim != data.d() {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    got: data.d(),
                });
            }
        }
        if data.labels().iter().any(|y| !y.is_finite()) {
            return Err(Error::input("labels must be finite"));
        }
        let evaluator = FamilyEvaluator::new(family, data)?;

        let initial: Vec<f64> = data.rows().map(|x| proj.clamp(f0.evaluate(x))).collect();
        check_finite(&initial, "initial prediction")?;
        let alpha = config.alpha;
        let b = family.b_bound();
        let kappa = mapping.kappa;
        let sample = config.mode.is_sample();
        let eta = match config.eta {
            StepSize::Auto if sample => alpha / (4.0 * kappa * b),
            StepSize::Auto => alpha / (2.0 * kappa * b),
            StepSize::Fixed(eta) => eta,
        };
        // Sample-mode progress assumes the population violation is at least
        // alpha / 2 whenever the fold violation exceeds 3 alpha / 4.
        let margin = if sample { alpha / 2.0 } else { alpha };
        let progress = eta * margin - kappa * eta * eta * b;
        let potential_upper = mapping.mean_potential(&initial, data.labels());
        let potential_lower = mapping.potential_lower(data.labels());
        let mut max_iters = match config.max_iters {
            IterBudget::Fixed(t) => t,
            IterBudget::Auto => {
                if !(progress > 0.0) {
                    return Err(Error::config(format!(
                        "eta = {eta} guarantees no progress; choose eta below {}",
                        margin / (kappa * b)
                    )));
                }
                let gap = (potential_upper - potential_lower).max(0.0);
                let t = (gap / progress).ceil();
                if t > usize::MAX as f64 / 2.0 {
                    usize::MAX / 2
                } else {
                    t as usize
                }
            }
        };

        let (folds, fold_size) = match config.mode {
            FitMode::Population | FitMode::Reuse => (Vec::new(), None),
            FitMode::FreshFolds => {
                let m = config
                    .fold_size
                    .unwrap_or_else(|| config.default_fold_size(family.dim_estimate()));
                let available = data.n() / m;
                if available == 0 {
                    return Err(Error::config(format!(
                        "fold size {m} exceeds the {} available rows",
                        data.n()
                    )));
                }
                match config.max_iters {
                    IterBudget::Fixed(t) if t.saturating_add(1).saturating_mul(m) > data.n() => {
                        return Err(Error::config(format!(
                            "{} rows cannot supply {} disjoint folds of size {m}",
                            data.n(),
                            t + 1
                        )));
                    }
                    IterBudget::Fixed(_) => {}
                    IterBudget::Auto => {
                        if max_iters + 1 > available {
                            info!(
                                "budget {max_iters} clamped to {} by the {available} available folds",
                                available - 1
                            );
                            max_iters = available - 1;
                        }
                    }
                }
                let mut perm: Vec<usize> = (0..data.n()).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
                let folds = perm
                    .chunks_exact(m)
                    .take(max_iters + 1)
                    .map(<[usize]>::to_vec)
                    .collect();
                (folds, Some(m))
            }
        };

        let params = ResolvedParams {
            mode: config.mode.name(),
            alpha,
            eta,
            max_iters,
            threshold: config.threshold(),
            fold_size,
            b_bound: b,
            kappa,
            progress,
            potential_upper,
            potential_lower,
        };
        debug!("resolved fit parameters: {params:?}");
        Ok(Engine {
            data,
            evaluator,
            mapping,
            f0,
            proj,
            mode: config.mode,
            params,
            folds,
        })
    }

    pub fn params(&self) -> &ResolvedParams {
        &self.params
    }

    pub fn initial_state(&self) -> FitState {
        let values: Vec<f64> = self
            .data
            .rows()
            .map(|x| self.proj.clamp(self.f0.evaluate(x)))
            .collect();
        let potential = self.mapping.mean_potential(&values, self.data.labels());
        FitState {
            values,
            steps: Vec::new(),
            iteration: 0,
            potential,
        }
    }

    fn signals(&self, values: &[f64]) -> Vec<f64> {
        let mapping = self.mapping.mapping;
        values
            .par_iter()
            .zip(self.data.labels().par_iter())
            .map(|(&f, &y)| mapping.signal(f, y))
            .collect()
    }

    /// Audit rows for the current iteration (`None` = all rows).
    fn audit_rows(&self, iteration: usize) -> Option<&[usize]> {
        match self.mode {
            FitMode::FreshFolds => self.folds.get(iteration).map(Vec::as_slice),
            _ => None,
        }
    }

    fn search(&self, state: &FitState) -> Result<Violation> {
        let rows = match self.mode {
            FitMode::FreshFolds => Some(
                self.audit_rows(state.iteration)
                    .ok_or_else(|| Error::config("validation folds exhausted"))?,
            ),
            _ => None,
        };
        let signals = self.signals(&state.values);
        let found = self.evaluator.best(&state.values, &signals, rows);
        if !found.violation.is_finite() {
            return Err(Error::NonFinite(format!(
                "violation at iteration {} is {}",
                state.iteration, found.violation
            )));
        }
        Ok(found)
    }

    /// One pass of the loop body: find the most violated auditor and, if it
    /// exceeds the threshold, apply the projected update to every row.
    pub fn step(&self, state: &mut FitState) -> Result<UpdateOutcome> {
        let found = self.search(state)?;
        if found.violation <= self.params.threshold {
            return Ok(UpdateOutcome::NoViolator {
                violation: found.violation,
            });
        }
        let eta = self.params.eta;
        let updated: Vec<f64> = state
            .values
            .par_iter()
            .enumerate()
            .map(|(r, &v)| self.proj.clamp(v - eta * self.evaluator.value(&found, r, v)))
            .collect();
        check_finite(&updated, "updated prediction")?;
        state.values = updated;
        state.potential = self.mapping.mean_potential(&state.values, self.data.labels());
        state.steps.push(ChainStep {
            auditor: found.descriptor.clone(),
            eta,
        });
        state.iteration += 1;
        Ok(UpdateOutcome::Updated {
            auditor: found.descriptor,
            violation: found.violation,
        })
    }

    /// Runs the loop to convergence or budget exhaustion.
    pub fn run(&self) -> Result<FitOutcome> {
        let mut state = self.initial_state();
        let mut records = Vec::new();
        let mut status = FitStatus::BudgetExhausted;
        while state.iteration < self.params.max_iters {
            let before = state.potential;
            match self.step(&mut state)? {
                UpdateOutcome::NoViolator { violation } => {
                    debug!("converged at iteration {} with violation {violation}", state.iteration);
                    status = FitStatus::Converged;
                    break;
                }
                UpdateOutcome::Updated { auditor, violation } => {
                    records.push(IterationRecord {
                        iteration: state.iteration,
                        auditor_id: auditor.id(),
                        empirical_violation: violation,
                        potential_before: before,
                        potential_after: state.potential,
                    });
                }
            }
        }
        if status == FitStatus::BudgetExhausted {
            // One more audit decides whether the final predictor is happy.
            let last_ok = match self.mode {
                FitMode::FreshFolds if self.audit_rows(state.iteration).is_none() => false,
                _ => self.search(&state)?.violation <= self.params.threshold,
            };
            if last_ok {
                status = FitStatus::Converged;
            }
        }
        let signals = self.signals(&state.values);
        let final_max_violation = self.evaluator.best(&state.values, &signals, None).violation;
        info!(
            "fit finished: {} updates, status {status:?}, final violation {final_max_violation:.6}",
            records.len()
        );
        let mut chain = PredictorChain::new(self.data.d(), self.f0.clone(), self.proj)?;
        chain.steps = state.steps;
        Ok(FitOutcome {
            chain,
            report: RunReport {
                iterations: records,
                status,
                final_max_violation,
                params: self.params.clone(),
            },
            values: state.values,
        })
    }
}

/// Fits a chain on `data` by projected auditor updates starting from `f0`.
pub fn fit(
    config: &FitConfig,
    data: &Dataset,
    family: &AuditorFamily,
    mapping: MappingSpec,
    f0: InitialPredictor,
    proj: ProjectionInterval,
) -> Result<FitOutcome> {
    Engine::new(config, data, family, mapping, f0, proj)?.run()
}

/// Violation of every family member against fixed predictions.
pub fn audit(
    predictions: &[f64],
    data: &Dataset,
    family: &AuditorFamily,
    mapping: MappingSpec,
) -> Result<AuditReport> {
    if predictions.len() != data.n() {
        return Err(Error::input(format!(
            "{} predictions for {} rows",
            predictions.len(),
            data.n()
        )));
    }
    let evaluator = FamilyEvaluator::new(family, data)?;
    let signals: Vec<f64> = predictions
        .iter()
        .zip(data.labels())
        .map(|(&f, &y)| mapping.mapping.signal(f, y))
        .collect();
    match family.members() {
        FamilyMembers::Finite(members) => {
            let means = evaluator.member_means(predictions, &signals, None);
            let max_abs_violation = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let members = members
                .iter()
                .step_by(2)
                .zip(means)
                .map(|(d, violation)| MemberViolation {
                    auditor_id: d.id(),
                    violation,
                })
                .collect();
            Ok(AuditReport {
                members,
                max_abs_violation,
            })
        }
        FamilyMembers::LinearBall { .. } => {
            let best = evaluator.best(predictions, &signals, None);
            Ok(AuditReport {
                members: vec![MemberViolation {
                    auditor_id: best.descriptor.id(),
                    violation: best.violation,
                }],
                max_abs_violation: best.violation,
            })
        }
    }
}
