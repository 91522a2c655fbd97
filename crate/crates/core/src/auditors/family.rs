use log::warn;

use super::{AuditorDescriptor, AuditorKind, Bin, GroupPredicate, LogisticRatio};
use crate::chain::InitialPredictor;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyMembers {
    /// Symmetric closure stored as `[+c0, -c0, +c1, -c1, ...]`.
    Finite(Vec<AuditorDescriptor>),
    /// `{ x -> w . phi(x) : |w|_2 <= radius }` with `phi(x) = (x, 1)` when
    /// `intercept` is set.
    LinearBall {
        radius: f64,
        intercept: bool,
        dim: usize,
    },
}

/// A symmetric auditor family with its second-moment bound `B` and a
/// complexity estimate `d(C)` used to size validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditorFamily {
    members: FamilyMembers,
    b_bound: f64,
    dim_estimate: f64,
}

impl AuditorFamily {
    /// Closes `kinds` under negation. `b_bound` must dominate `E[c^2]`.
    pub fn from_kinds(kinds: Vec<AuditorKind>, b_bound: f64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::config("auditor family is empty"));
        }
        if !(b_bound > 0.0 && b_bound.is_finite()) {
            return Err(Error::config(format!("family bound B = {b_bound} must be positive")));
        }
        let mut members = Vec::with_capacity(2 * kinds.len());
        for kind in kinds {
            members.push(AuditorDescriptor::positive(kind.clone()));
            members.push(AuditorDescriptor::negative(kind));
        }
        let dim_estimate = (members.len() as f64).ln();
        Ok(AuditorFamily {
            members: FamilyMembers::Finite(members),
            b_bound,
            dim_estimate,
        })
    }

    pub fn members(&self) -> &FamilyMembers {
        &self.members
    }

    /// Closed members of a finite family; `None` for parametric families.
    pub fn finite_members(&self) -> Option<&[AuditorDescriptor]> {
        match &self.members {
            FamilyMembers::Finite(m) => Some(m),
            FamilyMembers::LinearBall { .. } => None,
        }
    }

    /// Positive representatives of a finite family.
    pub fn base_kinds(&self) -> Vec<&AuditorKind> {
        match &self.members {
            FamilyMembers::Finite(m) => m.iter().step_by(2).map(|d| &d.kind).collect(),
            FamilyMembers::LinearBall { .. } => Vec::new(),
        }
    }

    /// Number of members after closure (`None` for parametric families).
    pub fn len(&self) -> Option<usize> {
        self.finite_members().map(<[_]>::len)
    }

    pub fn b_bound(&self) -> f64 {
        self.b_bound
    }

    pub fn dim_estimate(&self) -> f64 {
        self.dim_estimate
    }

    pub fn min_dim(&self) -> usize {
        match &self.members {
            FamilyMembers::Finite(m) => m.iter().map(|d| d.kind.min_dim()).max().unwrap_or(0),
            FamilyMembers::LinearBall { dim, .. } => *dim,
        }
    }

    /// Adds the constant auditor in front unless already present.
    pub fn with_constant(self) -> Result<Self> {
        let mut kinds: Vec<AuditorKind> = self.base_kinds().into_iter().cloned().collect();
        if kinds.is_empty() {
            return Err(Error::config("cannot add members to a parametric family"));
        }
        if !kinds.contains(&AuditorKind::Constant) {
            kinds.insert(0, AuditorKind::Constant);
        }
        Self::from_kinds(kinds, self.b_bound.max(1.0))
    }

    /// Union of two finite families, keeping member order.
    pub fn union(self, other: AuditorFamily) -> Result<Self> {
        let mut kinds: Vec<AuditorKind> = self.base_kinds().into_iter().cloned().collect();
        let extra: Vec<AuditorKind> = other.base_kinds().into_iter().cloned().collect();
        if kinds.is_empty() || extra.is_empty() {
            return Err(Error::config("union requires two finite families"));
        }
        kinds.extend(extra);
        Self::from_kinds(kinds, self.b_bound.max(other.b_bound))
    }
}

/// `{+1, -1}`.
pub fn constant_family() -> AuditorFamily {
    AuditorFamily::from_kinds(vec![AuditorKind::Constant], 1.0).expect("nonempty")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupFamilyOptions {
    /// 1 = the predicates themselves; 2 = also every pairwise intersection.
    pub depth: usize,
    /// Scale each indicator by `1 / P(A)` so its violation is the
    /// within-group (conditional) deviation rather than the mass-weighted one.
    pub normalized: bool,
}

impl Default for GroupFamilyOptions {
    fn default() -> Self {
        GroupFamilyOptions {
            depth: 1,
            normalized: false,
        }
    }
}

/// Expands predicates to the requested intersection depth.
pub(crate) fn expand_groups(predicates: &[GroupPredicate], depth: usize) -> Result<Vec<GroupPredicate>> {
    if !(1..=2).contains(&depth) {
        return Err(Error::config(format!("group depth must be 1 or 2, got {depth}")));
    }
    let mut out = predicates.to_vec();
    if depth == 2 {
        for i in 0..predicates.len() {
            for j in i + 1..predicates.len() {
                out.push(predicates[i].and(&predicates[j]));
            }
        }
    }
    Ok(out)
}

/// Indicator auditors `+-1{x in A}` for each group predicate.
pub fn group_family(
    predicates: &[GroupPredicate],
    data: &Dataset,
    opts: GroupFamilyOptions,
) -> Result<AuditorFamily> {
    if predicates.is_empty() {
        return Err(Error::config("group family needs at least one group"));
    }
    for p in predicates {
        if let Some(j) = p.max_feature() {
            if j >= data.d() {
                return Err(Error::config(format!(
                    "group {} references feature {j} but data has {} features",
                    p.name,
                    data.d()
                )));
            }
        }
    }
    let groups = expand_groups(predicates, opts.depth)?;
    let n = data.n() as f64;
    let mut kinds = Vec::with_capacity(groups.len());
    let mut b_bound: f64 = 1.0;
    for g in groups {
        let mass = data.rows().filter(|x| g.contains(x)).count() as f64 / n;
        if mass == 0.0 {
            warn!("group {} has no members; its auditor contributes nothing", g.name);
        }
        let scale = if opts.normalized && mass > 0.0 {
            b_bound = b_bound.max(1.0 / mass);
            1.0 / mass
        } else {
            1.0
        };
        kinds.push(AuditorKind::Group {
            predicate: g,
            scale,
        });
    }
    AuditorFamily::from_kinds(kinds, b_bound)
}

/// Centered indicators `+-(1{x in A} - P(A))`, with `P(A)` measured once on
/// `data`. `B` is the largest group variance `P(A)(1 - P(A))`.
pub fn centered_group_family(predicates: &[GroupPredicate], data: &Dataset, depth: usize) -> Result<AuditorFamily> {
    let base = group_family(
        predicates,
        data,
        GroupFamilyOptions {
            depth,
            normalized: false,
        },
    )?;
    let mut kinds = Vec::new();
    let mut b_bound = f64::MIN_POSITIVE;
    for kind in base.base_kinds() {
        let mean = data.rows().map(|x| kind.value(0.0, x)).sum::<f64>() / data.n() as f64;
        b_bound = b_bound.max(mean * (1.0 - mean));
        kinds.push(AuditorKind::Centered {
            base: Box::new(kind.clone()),
            mean,
        });
    }
    AuditorFamily::from_kinds(kinds, b_bound)
}

/// Empirical quantile thresholds for one feature, deduplicated.
fn stump_thresholds(mut column: Vec<f64>, count: usize) -> Vec<f64> {
    column.retain(|v| !v.is_nan());
    if column.is_empty() {
        return Vec::new();
    }
    column.sort_by(f64::total_cmp);
    let last = (column.len() - 1) as f64;
    let mut out: Vec<f64> = Vec::with_capacity(count);
    for t in 1..=count {
        let q = t as f64 / (count + 1) as f64;
        let tau = column[(q * last).floor() as usize];
        if out.last() != Some(&tau) {
            out.push(tau);
        }
    }
    out
}

/// Decision stumps `+-1{x_j <= tau}` at empirical quantiles of each feature.
pub fn stump_family(data: &Dataset, thresholds_per_feature: usize) -> Result<AuditorFamily> {
    if thresholds_per_feature == 0 {
        return Err(Error::config("thresholds_per_feature must be at least 1"));
    }
    let mut kinds = Vec::new();
    for j in 0..data.d() {
        for threshold in stump_thresholds(data.feature_column(j), thresholds_per_feature) {
            kinds.push(AuditorKind::Stump {
                feature: j,
                threshold,
            });
        }
    }
    AuditorFamily::from_kinds(kinds, 1.0)
}

/// Linear auditors in an l2 ball of the given radius, optimized in closed
/// form by the weak learner.
pub fn linear_family(data: &Dataset, radius: f64, intercept: bool) -> Result<AuditorFamily> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config("linear family radius must be positive"));
    }
    let extra = if intercept { 1.0 } else { 0.0 };
    let max_sq = data
        .rows()
        .filter(|x| x.iter().all(|v| !v.is_nan()))
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + extra)
        .fold(0.0f64, f64::max);
    let b_bound = (radius * radius * max_sq).max(f64::MIN_POSITIVE);
    let dim = data.d();
    Ok(AuditorFamily {
        members: FamilyMembers::LinearBall {
            radius,
            intercept,
            dim,
        },
        b_bound,
        dim_estimate: (dim + usize::from(intercept)) as f64,
    })
}

fn check_clamp(c1: f64, c2: f64) -> Result<()> {
    if !(0.0 < c1 && c1 < c2 && c2 < 1.0) {
        return Err(Error::config(format!("need 0 < c1 < c2 < 1, got [{c1}, {c2}]")));
    }
    Ok(())
}

fn check_thetas(thetas: &[Vec<f64>]) -> Result<()> {
    let first = thetas
        .first()
        .ok_or_else(|| Error::config("theta grid is empty"))?;
    if first.is_empty() || thetas.iter().any(|t| t.len() != first.len()) {
        return Err(Error::config("theta vectors must be nonempty and share a length"));
    }
    Ok(())
}

/// Propensity-ratio auditors `+-(1 - s)/s` over a grid of logistic
/// parameters (intercept first).
pub fn propensity_family(thetas: &[Vec<f64>], c1: f64, c2: f64) -> Result<AuditorFamily> {
    check_clamp(c1, c2)?;
    check_thetas(thetas)?;
    let kinds = thetas
        .iter()
        .map(|theta| AuditorKind::PropensityRatio {
            ratio: LogisticRatio {
                theta: theta.clone(),
                c1,
                c2,
            },
        })
        .collect();
    let max_ratio = (1.0 - c1) / c1;
    AuditorFamily::from_kinds(kinds, max_ratio * max_ratio)
}

/// Composite auditors `+-ratio(x) (f - p(x))` over theta grid x baselines.
pub fn shift_composite_family(
    thetas: &[Vec<f64>],
    baselines: &[InitialPredictor],
    c1: f64,
    c2: f64,
) -> Result<AuditorFamily> {
    check_clamp(c1, c2)?;
    check_thetas(thetas)?;
    if baselines.is_empty() {
        return Err(Error::config("baseline list is empty"));
    }
    let mut kinds = Vec::with_capacity(thetas.len() * baselines.len());
    for theta in thetas {
        for p in baselines {
            kinds.push(AuditorKind::ShiftComposite {
                ratio: LogisticRatio {
                    theta: theta.clone(),
                    c1,
                    c2,
                },
                baseline: p.clone(),
            });
        }
    }
    let bound = 2.0 * (1.0 - c1) / c1;
    AuditorFamily::from_kinds(kinds, bound * bound)
}

/// Equal-width bins of the prediction range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl BinGrid {
    pub fn bins(&self) -> Result<Vec<Bin>> {
        if !(self.width > 0.0) || !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::config(format!(
                "invalid bin grid [{}, {}] with width {}",
                self.lo, self.hi, self.width
            )));
        }
        let span = self.hi - self.lo;
        if self.width >= span {
            warn!("bin width {} covers the whole range; using a single bin", self.width);
        }
        let count = ((span / self.width).ceil() as usize).max(1);
        Ok((0..count)
            .map(|i| {
                let last = i + 1 == count;
                Bin {
                    lo: self.lo + i as f64 * self.width,
                    hi: if last {
                        self.hi
                    } else {
                        self.lo + (i + 1) as f64 * self.width
                    },
                    closed_hi: last,
                }
            })
            .collect())
    }
}

/// Bin auditors `+-1{f in I}`, or `+-1{f in I} g(x)` per group when groups
/// are given.
pub fn multivalidity_family(grid: BinGrid, groups: Option<&[GroupPredicate]>) -> Result<AuditorFamily> {
    let bins = grid.bins()?;
    let kinds = match groups {
        None => bins.into_iter().map(|bin| AuditorKind::Bin { bin }).collect(),
        Some(groups) => {
            if groups.is_empty() {
                return Err(Error::config("multivalidity base has no groups"));
            }
            let mut kinds = Vec::with_capacity(groups.len() * bins.len());
            for g in groups {
                for bin in &bins {
                    kinds.push(AuditorKind::Product {
                        base: Box::new(AuditorKind::Group {
                            predicate: g.clone(),
                            scale: 1.0,
                        }),
                        bin: *bin,
                    });
                }
            }
            kinds
        }
    };
    AuditorFamily::from_kinds(kinds, 1.0)
}
