use serde::Serialize;

use crate::config::ResolvedParams;

/// One accepted update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub auditor_id: String,
    pub empirical_violation: f64,
    pub potential_before: f64,
    pub potential_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitStatus {
    Converged,
    BudgetExhausted,
}

/// Audit trail of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub iterations: Vec<IterationRecord>,
    pub status: FitStatus,
    /// Largest violation over the family on the full working set after the
    /// last update.
    pub final_max_violation: f64,
    pub params: ResolvedParams,
}

impl RunReport {
    pub fn steps(&self) -> usize {
        self.iterations.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Per-member audit entry; `violation` is the signed mean `mean(c * s)` of
/// the positive member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberViolation {
    pub auditor_id: String,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub members: Vec<MemberViolation>,
    pub max_abs_violation: f64,
}
