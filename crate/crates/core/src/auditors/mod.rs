//! Auditor functions `c(f(x), x)`, the families they come in, and the weak
//! learner that searches a family for the most violated member.

mod family;
mod weak;

pub use family::{
    centered_group_family, constant_family, group_family, linear_family, multivalidity_family, propensity_family,
    shift_composite_family, stump_family, AuditorFamily, BinGrid, FamilyMembers, GroupFamilyOptions,
};
pub use weak::{weak_learn, weak_learn_with, Violation};
pub(crate) use family::expand_groups;
pub(crate) use weak::FamilyEvaluator;

use serde::{Deserialize, Serialize};

use crate::chain::{logistic, InitialPredictor};
use crate::hexfloat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Le,
    Gt,
}

/// `x[feature] <= threshold` or `x[feature] > threshold`. Missing (`NaN`)
/// features never satisfy a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureCondition {
    pub feature: usize,
    pub op: Comparison,
    #[serde(with = "hexfloat")]
    pub threshold: f64,
}

impl FeatureCondition {
    pub fn le(feature: usize, threshold: f64) -> Self {
        FeatureCondition {
            feature,
            op: Comparison::Le,
            threshold,
        }
    }

    pub fn gt(feature: usize, threshold: f64) -> Self {
        FeatureCondition {
            feature,
            op: Comparison::Gt,
            threshold,
        }
    }

    #[inline]
    pub fn holds(&self, x: &[f64]) -> bool {
        let v = x[self.feature];
        match self.op {
            Comparison::Le => v <= self.threshold,
            Comparison::Gt => v > self.threshold,
        }
    }

    fn label(&self) -> String {
        let op = match self.op {
            Comparison::Le => "<=",
            Comparison::Gt => ">",
        };
        format!("x{}{}{}", self.feature, op, self.threshold)
    }
}

/// A named conjunction of feature conditions. The empty conjunction is the
/// whole population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPredicate {
    pub name: String,
    pub all: Vec<FeatureCondition>,
}

impl GroupPredicate {
    pub fn new(name: impl Into<String>, all: Vec<FeatureCondition>) -> Self {
        GroupPredicate {
            name: name.into(),
            all,
        }
    }

    pub fn everyone() -> Self {
        GroupPredicate::new("all", Vec::new())
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.all.iter().all(|c| c.holds(x))
    }

    /// Intersection of two groups.
    pub fn and(&self, other: &GroupPredicate) -> GroupPredicate {
        let mut all = self.all.clone();
        all.extend(other.all.iter().cloned());
        GroupPredicate::new(format!("{}&{}", self.name, other.name), all)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.all.iter().map(|c| c.feature).max()
    }

    /// Human-readable form of the conjunction, e.g. `x0<=0.5&x2>0.1`.
    pub fn describe(&self) -> String {
        if self.all.is_empty() {
            return "all".into();
        }
        self.all.iter().map(FeatureCondition::label).collect::<Vec<_>>().join("&")
    }
}

/// Interval over the prediction value, half-open unless `closed_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bin {
    #[serde(with = "hexfloat")]
    pub lo: f64,
    #[serde(with = "hexfloat")]
    pub hi: f64,
    pub closed_hi: bool,
}

impl Bin {
    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && (v < self.hi || (self.closed_hi && v <= self.hi))
    }

    #[inline]
    pub fn indicator(&self, v: f64) -> f64 {
        if self.contains(v) {
            1.0
        } else {
            0.0
        }
    }
}

/// Propensity-score ratio `(1 - s) / s` with
/// `s = clamp(logistic(theta[0] + theta[1..] . x), c1, c2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticRatio {
    #[serde(with = "hexfloat::vec")]
    pub theta: Vec<f64>,
    #[serde(with = "hexfloat")]
    pub c1: f64,
    #[serde(with = "hexfloat")]
    pub c2: f64,
}

impl LogisticRatio {
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let mut z = self.theta[0];
        for (t, v) in self.theta[1..].iter().zip(x) {
            z += t * v;
        }
        logistic(z).clamp(self.c1, self.c2)
    }

    #[inline]
    pub fn ratio(&self, x: &[f64]) -> f64 {
        let s = self.propensity(x);
        (1.0 - s) / s
    }

    /// Largest attainable ratio, `(1 - c1) / c1`.
    pub fn max_ratio(&self) -> f64 {
        (1.0 - self.c1) / self.c1
    }

    pub fn min_ratio(&self) -> f64 {
        (1.0 - self.c2) / self.c2
    }

    fn label(&self) -> String {
        let t: Vec<String> = self.theta.iter().map(|v| format!("{v:.4}")).collect();
        format!("theta=({})", t.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AuditorKind {
    Constant,
    /// `scale * 1{x in predicate}`
    Group {
        predicate: GroupPredicate,
        #[serde(with = "hexfloat")]
        scale: f64,
    },
    /// `1{x[feature] <= threshold}`
    Stump {
        feature: usize,
        #[serde(with = "hexfloat")]
        threshold: f64,
    },
    /// `offset + weights . x`
    Linear {
        #[serde(with = "hexfloat::vec")]
        weights: Vec<f64>,
        #[serde(with = "hexfloat")]
        offset: f64,
    },
    /// `1{f in bin}`
    Bin { bin: Bin },
    /// `base(f, x) * 1{f in bin}`
    Product { base: Box<AuditorKind>, bin: Bin },
    PropensityRatio { ratio: LogisticRatio },
    /// `ratio(x) * (f - baseline(x))`
    ShiftComposite {
        ratio: LogisticRatio,
        baseline: InitialPredictor,
    },
    /// `base(f, x) - mean`
    Centered {
        base: Box<AuditorKind>,
        #[serde(with = "hexfloat")]
        mean: f64,
    },
}

impl AuditorKind {
    #[inline]
    pub fn value(&self, f: f64, x: &[f64]) -> f64 {
        match self {
            AuditorKind::Constant => 1.0,
            AuditorKind::Group { predicate, scale } => {
                if predicate.contains(x) {
                    *scale
                } else {
                    0.0
                }
            }
            AuditorKind::Stump { feature, threshold } => {
                if x[*feature] <= *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            AuditorKind::Linear { weights, offset } => {
                let mut acc = *offset;
                for (w, v) in weights.iter().zip(x) {
                    acc += w * v;
                }
                acc
            }
            AuditorKind::Bin { bin } => bin.indicator(f),
            AuditorKind::Product { base, bin } => base.value(f, x) * bin.indicator(f),
            AuditorKind::PropensityRatio { ratio } => ratio.ratio(x),
            AuditorKind::ShiftComposite { ratio, baseline } => {
                ratio.ratio(x) * (f - baseline.evaluate(x))
            }
            AuditorKind::Centered { base, mean } => base.value(f, x) - mean,
        }
    }

    /// Whether the value changes with the current prediction `f`.
    pub fn depends_on_prediction(&self) -> bool {
        match self {
            AuditorKind::Bin { .. }
            | AuditorKind::Product { .. }
            | AuditorKind::ShiftComposite { .. } => true,
            AuditorKind::Centered { base, .. } => base.depends_on_prediction(),
            _ => false,
        }
    }

    /// Smallest feature dimension the auditor can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match self {
            AuditorKind::Constant | AuditorKind::Bin { .. } => 0,
            AuditorKind::Group { predicate, .. } => predicate.max_feature().map_or(0, |j| j + 1),
            AuditorKind::Stump { feature, .. } => feature + 1,
            AuditorKind::Linear { weights, .. } => weights.len(),
            AuditorKind::Product { base, .. } | AuditorKind::Centered { base, .. } => base.min_dim(),
            AuditorKind::PropensityRatio { ratio } => ratio.theta.len().saturating_sub(1),
            AuditorKind::ShiftComposite { ratio, baseline } => {
                ratio.theta.len().saturating_sub(1).max(baseline.min_dim())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            AuditorKind::Constant => "const".into(),
            AuditorKind::Group { predicate, scale } => {
                if *scale == 1.0 {
                    format!("group[{}]", predicate.name)
                } else {
                    format!("group[{}]/{:.4}", predicate.name, 1.0 / scale)
                }
            }
            AuditorKind::Stump { feature, threshold } => format!("stump[x{feature}<={threshold}]"),
            AuditorKind::Linear { .. } => "linear".into(),
            AuditorKind::Bin { bin } => format!("bin[{},{})", bin.lo, bin.hi),
            AuditorKind::Product { base, bin } => {
                format!("{}*bin[{},{})", base.label(), bin.lo, bin.hi)
            }
            AuditorKind::PropensityRatio { ratio } => format!("ratio[{}]", ratio.label()),
            AuditorKind::ShiftComposite { ratio, baseline } => {
                format!("composite[{};p={}]", ratio.label(), baseline.describe())
            }
            AuditorKind::Centered { base, .. } => format!("centered[{}]", base.label()),
        }
    }

}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl TryFrom<i8> for Sign {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("auditor sign must be 1 or -1, got {v}")),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

/// A signed auditor. Depends only on the current prediction and the raw
/// features, never on labels or row positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditorDescriptor {
    #[serde(flatten)]
    pub kind: AuditorKind,
    pub sign: Sign,
}

impl AuditorDescriptor {
    pub fn positive(kind: AuditorKind) -> Self {
        AuditorDescriptor {
            kind,
            sign: Sign::Plus,
        }
    }

    pub fn negative(kind: AuditorKind) -> Self {
        AuditorDescriptor {
            kind,
            sign: Sign::Minus,
        }
    }

    #[inline]
    pub fn evaluate(&self, f: f64, x: &[f64]) -> f64 {
        apply_sign(self.sign, self.kind.value(f, x))
    }

    pub fn id(&self) -> String {
        let s = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        format!("{s}{}", self.kind.label())
    }
}

#[inline]
pub(crate) fn apply_sign(sign: Sign, v: f64) -> f64 {
    match sign {
        Sign::Plus => v,
        Sign::Minus => -v,
    }
}
