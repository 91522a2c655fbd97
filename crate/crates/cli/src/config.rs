//! JSON run configuration. Every block rejects unknown keys, and
//! [`RunConfig::validate`] checks what a command needs before any work.

use std::path::{Path, PathBuf};

use happymap::auditors::{
    centered_group_family, constant_family, group_family, linear_family, multivalidity_family, propensity_family,
    shift_composite_family, stump_family, AuditorFamily, BinGrid, Comparison, FeatureCondition, GroupFamilyOptions,
    GroupPredicate,
};
use happymap::shift::PropensityGrid;
use happymap::synth::{Mechanism, ShiftSpec};
use happymap::{Dataset, FitConfig, FitMode, InitialPredictor, MappingSpec, ProjectionInterval};
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::Command;

/// A number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Value(T),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl<T> Default for AutoOr<T> {
    fn default() -> Self {
        AutoOr::Keyword(AutoKeyword::Auto)
    }
}

impl<T: Copy> AutoOr<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            AutoOr::Value(v) => Some(*v),
            AutoOr::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Population,
    FreshFolds,
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub alpha: f64,
    #[serde(default)]
    pub eta: AutoOr<f64>,
    #[serde(default)]
    pub max_iters: AutoOr<usize>,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default)]
    pub fold_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl FitBlock {
    pub fn to_config(&self, seed: Option<u64>) -> FitConfig {
        let mut config = FitConfig::new(self.alpha)
            .with_mode(match self.mode {
                ModeName::Population => FitMode::Population,
                ModeName::FreshFolds => FitMode::FreshFolds,
                ModeName::Reuse => FitMode::Reuse,
            })
            .with_seed(seed.unwrap_or(self.seed));
        if let Some(eta) = self.eta.value() {
            config = config.with_eta(eta);
        }
        if let Some(t) = self.max_iters.value() {
            config = config.with_max_iters(t);
        }
        if let Some(m) = self.fold_size {
            config = config.with_fold_size(m);
        }
        config
    }
}

/// Base predictor written with plain numbers.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredictorSpec {
    Constant { value: f64 },
    Linear { weights: Vec<f64>, intercept: f64 },
    ScoreColumn { column: usize },
    LogisticLink { weights: Vec<f64>, intercept: f64, lo: f64, hi: f64 },
}

impl PredictorSpec {
    pub fn build(&self) -> InitialPredictor {
        match self.clone() {
            PredictorSpec::Constant { value } => InitialPredictor::Constant { value },
            PredictorSpec::Linear { weights, intercept } => InitialPredictor::Linear { weights, intercept },
            PredictorSpec::ScoreColumn { column } => InitialPredictor::ScoreColumn { column },
            PredictorSpec::LogisticLink {
                weights,
                intercept,
                lo,
                hi,
            } => InitialPredictor::LogisticLink {
                weights,
                intercept,
                lo,
                hi,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjSpec {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl ProjSpec {
    pub fn build(&self) -> CliResult<ProjectionInterval> {
        Ok(ProjectionInterval::new(
            self.lo.unwrap_or(f64::NEG_INFINITY),
            self.hi.unwrap_or(f64::INFINITY),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub feature: usize,
    pub op: Comparison,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    pub name: String,
    pub all: Vec<ConditionSpec>,
}

pub fn build_predicates(specs: &[PredicateSpec]) -> Vec<GroupPredicate> {
    specs
        .iter()
        .map(|p| {
            GroupPredicate::new(
                p.name.clone(),
                p.all
                    .iter()
                    .map(|c| FeatureCondition {
                        feature: c.feature,
                        op: c.op,
                        threshold: c.threshold,
                    })
                    .collect(),
            )
        })
        .collect()
}

fn default_depth() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    Constant,
    Groups {
        predicates: Vec<PredicateSpec>,
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default)]
        normalized: bool,
    },
    CenteredGroups {
        predicates: Vec<PredicateSpec>,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    Stumps {
        thresholds_per_feature: usize,
    },
    Linear {
        radius: f64,
        #[serde(default = "default_true")]
        intercept: bool,
    },
    Propensity {
        thetas: Vec<Vec<f64>>,
        c1: f64,
        c2: f64,
        #[serde(default = "default_true")]
        with_constant: bool,
    },
    ShiftComposite {
        thetas: Vec<Vec<f64>>,
        baselines: Vec<PredictorSpec>,
        c1: f64,
        c2: f64,
    },
    /// Bins over `[lo, hi]` (default: the projection interval).
    Multivalidity {
        width: f64,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
        #[serde(default)]
        groups: Option<Vec<PredicateSpec>>,
    },
}

impl FamilySpec {
    pub fn build(&self, data: &Dataset, proj: ProjectionInterval) -> CliResult<AuditorFamily> {
        Ok(match self {
            FamilySpec::Constant => constant_family(),
            FamilySpec::Groups {
                predicates,
                depth,
                normalized,
            } => group_family(
                &build_predicates(predicates),
                data,
                GroupFamilyOptions {
                    depth: *depth,
                    normalized: *normalized,
                },
            )?,
            FamilySpec::CenteredGroups { predicates, depth } => {
                centered_group_family(&build_predicates(predicates), data, *depth)?
            }
            FamilySpec::Stumps { thresholds_per_feature } => stump_family(data, *thresholds_per_feature)?,
            FamilySpec::Linear { radius, intercept } => linear_family(data, *radius, *intercept)?,
            FamilySpec::Propensity {
                thetas,
                c1,
                c2,
                with_constant,
            } => {
                let fam = propensity_family(thetas, *c1, *c2)?;
                if *with_constant {
                    fam.with_constant()?
                } else {
                    fam
                }
            }
            FamilySpec::ShiftComposite {
                thetas,
                baselines,
                c1,
                c2,
            } => {
                let baselines: Vec<InitialPredictor> = baselines.iter().map(PredictorSpec::build).collect();
                shift_composite_family(thetas, &baselines, *c1, *c2)?
            }
            FamilySpec::Multivalidity { width, lo, hi, groups } => {
                let grid = BinGrid {
                    lo: lo.unwrap_or(proj.lo),
                    hi: hi.unwrap_or(proj.hi),
                    width: *width,
                };
                if !(grid.lo.is_finite() && grid.hi.is_finite()) {
                    return Err(CliError::Config(
                        "multivalidity bins need finite lo/hi or a bounded projection".into(),
                    ));
                }
                let groups = groups.as_deref().map(build_predicates);
                multivalidity_family(grid, groups.as_deref())?
            }
        })
    }
}

/// One family or a list whose members are pooled.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FamilyList {
    One(FamilySpec),
    Many(Vec<FamilySpec>),
}

impl FamilyList {
    pub fn build(&self, data: &Dataset, proj: ProjectionInterval) -> CliResult<AuditorFamily> {
        let specs: Vec<&FamilySpec> = match self {
            FamilyList::One(s) => vec![s],
            FamilyList::Many(v) => v.iter().collect(),
        };
        let mut iter = specs.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| CliError::Config("family list is empty".into()))?;
        let mut family = first.build(data, proj)?;
        for spec in iter {
            family = family.union(spec.build(data, proj)?)?;
        }
        Ok(family)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub thetas: Vec<Vec<f64>>,
    pub c1: f64,
    pub c2: f64,
}

impl GridSpec {
    pub fn build(&self) -> PropensityGrid {
        PropensityGrid {
            thetas: self.thetas.clone(),
            c1: self.c1,
            c2: self.c2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScoreSpec {
    AbsResidual { center: PredictorSpec },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Hetero {
        n: usize,
        d: usize,
    },
    Shift {
        n_source: usize,
        n_target: usize,
        mu: Vec<f64>,
        #[serde(default)]
        link: Option<Vec<f64>>,
        #[serde(default)]
        noise_weight: Option<f64>,
    },
}

impl GeneratorSpec {
    pub fn shift_spec(&self) -> Option<ShiftSpec> {
        match self {
            GeneratorSpec::Shift {
                mu, link, noise_weight, ..
            } => {
                let mut spec = ShiftSpec::new(mu.clone());
                if let Some(link) = link {
                    spec.link = link.clone();
                }
                if let Some(w) = noise_weight {
                    spec.noise_weight = *w;
                }
                Some(spec)
            }
            GeneratorSpec::Hetero { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismSpec {
    Mcar { rho: f64 },
    Mar { theta: Vec<f64> },
    Mnar { theta: Vec<f64> },
}

impl MechanismSpec {
    pub fn build(&self) -> Mechanism {
        match self.clone() {
            MechanismSpec::Mcar { rho } => Mechanism::Mcar { rho },
            MechanismSpec::Mar { theta } => Mechanism::Mar { theta },
            MechanismSpec::Mnar { theta } => Mechanism::Mnar { theta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub masked_column: Option<usize>,
}

fn default_levels() -> Vec<f64> {
    vec![0.1, 0.9]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub missing: Option<MissingSpec>,
    #[serde(default)]
    pub groups: Option<Vec<PredicateSpec>>,
    #[serde(default = "default_depth")]
    pub group_depth: usize,
    /// Quantile levels written to the oracle sidecar.
    #[serde(default = "default_levels")]
    pub oracle_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    /// One-sided lower bound: `P(l(x) <= y)` per group.
    Coverage,
    /// `[lower, upper]` from two chains (either may be absent).
    Interval,
    /// Squared error against the labels.
    Mse,
    /// Audit against `family` and `mapping`.
    Violation,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub kind: EvalKind,
    #[serde(default)]
    pub chain: Option<PathBuf>,
    #[serde(default)]
    pub upper_chain: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training (or audited) dataset.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Separate evaluation dataset; `--holdout` takes precedence.
    #[serde(default)]
    pub eval_data: Option<PathBuf>,
    /// Chain to audit (`audit`); defaults to the bare `f0`.
    #[serde(default)]
    pub chain: Option<PathBuf>,
    #[serde(default)]
    pub fit: Option<FitBlock>,
    #[serde(default)]
    pub mapping: Option<String>,
    #[serde(default)]
    pub density_bound: Option<f64>,
    #[serde(default)]
    pub family: Option<FamilyList>,
    #[serde(default)]
    pub f0: Option<PredictorSpec>,
    #[serde(default)]
    pub proj: Option<ProjSpec>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Bin width for `multivalid`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Groups for coverage reports, `multivalid` cells and `parity`.
    #[serde(default)]
    pub groups: Option<Vec<PredicateSpec>>,
    #[serde(default = "default_depth")]
    pub group_depth: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub baselines: Option<Vec<PredictorSpec>>,
    #[serde(default)]
    pub score: Option<ScoreSpec>,
    /// Whether the grid contains the true propensity (reported only).
    #[serde(default)]
    pub realizable: Option<bool>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub eval: Option<EvalSpec>,
}

fn require<'a, T>(field: &'a Option<T>, name: &str, command: Command) -> CliResult<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("`{name}` is required by `{}`", command.name())))
}

fn check_unit(name: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(CliError::Config(format!("`{name}` = {v} must lie in (0, 1)")));
    }
    Ok(())
}

impl RunConfig {
    /// Reads and parses `path`, resolving relative file references against
    /// the config's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        resolve(&mut config.data);
        resolve(&mut config.eval_data);
        resolve(&mut config.chain);
        if let Some(eval) = &mut config.eval {
            resolve(&mut eval.chain);
            resolve(&mut eval.upper_chain);
        }
        Ok(config)
    }

    pub fn mapping_spec(&self) -> CliResult<MappingSpec> {
        let text = self
            .mapping
            .as_deref()
            .ok_or_else(|| CliError::Config("`mapping` is required".into()))?;
        Ok(MappingSpec::parse(text, self.density_bound)?)
    }

    /// Checks that every block `command` reads is present and sane.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        use Command::*;
        if let Some(kp) = self.density_bound {
            if !(kp > 0.0 && kp.is_finite()) {
                return Err(CliError::Config(format!("`density_bound` = {kp} must be positive")));
            }
        }
        if command != Synth {
            require(&self.data, "data", command)?;
        }
        let fits = !matches!(command, Audit | Synth | Eval);
        if fits {
            let fit = require(&self.fit, "fit", command)?;
            fit.to_config(None).validate()?;
            require(&self.f0, "f0", command)?;
        }
        match command {
            Fit => {
                require(&self.family, "family", command)?;
                self.mapping_spec()?;
            }
            Audit => {
                require(&self.family, "family", command)?;
                self.mapping_spec()?;
                if self.chain.is_none() {
                    require(&self.f0, "f0 (or chain)", command)?;
                }
            }
            Conformal | Conformal2 => {
                require(&self.family, "family", command)?;
                check_unit("delta", *require(&self.delta, "delta", command)?)?;
            }
            Multivalid => {
                check_unit("delta", *require(&self.delta, "delta", command)?)?;
                if let Some(l) = self.lambda {
                    if !(l > 0.0) {
                        return Err(CliError::Config(format!("`lambda` = {l} must be positive")));
                    }
                }
            }
            ShiftConformal => {
                check_unit("delta", *require(&self.delta, "delta", command)?)?;
                require(&self.grid, "grid", command)?;
            }
            UniversalL2 | Missing => {
                require(&self.grid, "grid", command)?;
                let baselines = require(&self.baselines, "baselines", command)?;
                if baselines.is_empty() {
                    return Err(CliError::Config("`baselines` must not be empty".into()));
                }
            }
            Parity => {
                if require(&self.groups, "groups", command)?.is_empty() {
                    return Err(CliError::Config("`groups` must not be empty".into()));
                }
            }
            Synth => {
                let synth = require(&self.synth, "synth", command)?;
                for &level in &synth.oracle_levels {
                    check_unit("oracle_levels", level)?;
                }
            }
            Eval => {
                let eval = require(&self.eval, "eval", command)?;
                match eval.kind {
                    EvalKind::Coverage | EvalKind::Mse => {
                        require(&eval.chain, "eval.chain", command)?;
                    }
                    EvalKind::Violation => {
                        require(&eval.chain, "eval.chain", command)?;
                        require(&self.family, "family", command)?;
                        self.mapping_spec()?;
                    }
                    EvalKind::Interval => {}
                }
                if eval.kind == EvalKind::Coverage && eval.target.is_none() {
                    check_unit("delta", *require(&self.delta, "delta (or eval.target)", command)?)?;
                }
            }
        }
        Ok(())
    }
}
