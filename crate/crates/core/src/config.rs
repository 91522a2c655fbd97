use crate::error::{Error, Result};

/// Step size of every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `alpha / (2 kappa B)` in population mode, `alpha / (4 kappa B)` otherwise.
    Auto,
    Fixed(f64),
}

/// Iteration budget `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterBudget {
    /// `ceil((C^u - C^l) / progress)`.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Audit against the full working set; update while violation > alpha.
    Population,
    /// Audit iteration `t` on a fresh disjoint fold; update while the fold
    /// violation exceeds `3 alpha / 4`.
    FreshFolds,
    /// Fold logic on one shared set. Repeated use of the same sample carries
    /// no adaptive-reuse correction, so the guarantee is only heuristic.
    Reuse,
}

impl FitMode {
    pub fn is_sample(self) -> bool {
        !matches!(self, FitMode::Population)
    }

    pub fn name(self) -> &'static str {
        match self {
            FitMode::Population => "population",
            FitMode::FreshFolds => "fresh-folds",
            FitMode::Reuse => "reuse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub alpha: f64,
    pub eta: StepSize,
    pub max_iters: IterBudget,
    pub mode: FitMode,
    pub fold_size: Option<usize>,
    pub seed: u64,
}

impl FitConfig {
    /// Population mode with automatic step size and budget.
    pub fn new(alpha: f64) -> Self {
        FitConfig {
            alpha,
            eta: StepSize::Auto,
            max_iters: IterBudget::Auto,
            mode: FitMode::Population,
            fold_size: None,
            seed: 0,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = StepSize::Fixed(eta);
        self
    }

    pub fn with_max_iters(mut self, t: usize) -> Self {
        self.max_iters = IterBudget::Fixed(t);
        self
    }

    pub fn with_mode(mut self, mode: FitMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_fold_size(mut self, m: usize) -> Self {
        self.fold_size = Some(m);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config(format!("eta must be positive, got {eta}")));
            }
        }
        if self.max_iters == IterBudget::Fixed(0) {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.fold_size == Some(0) {
            return Err(Error::config("fold_size must be at least 1"));
        }
        Ok(())
    }

    /// Update threshold: `alpha` in population mode, `3 alpha / 4` otherwise.
    pub fn threshold(&self) -> f64 {
        if self.mode.is_sample() {
            0.75 * self.alpha
        } else {
            self.alpha
        }
    }

    /// Default validation fold size `max(200, ceil((d(C) + ln 20) 16 / alpha^2))`.
    pub fn default_fold_size(&self, dim_estimate: f64) -> usize {
        let m = ((dim_estimate + 20f64.ln()) * 16.0 / (self.alpha * self.alpha)).ceil();
        (m as usize).max(200)
    }
}

/// Constants the engine settled on for one run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResolvedParams {
    pub mode: &'static str,
    pub alpha: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub threshold: f64,
    pub fold_size: Option<usize>,
    pub b_bound: f64,
    pub kappa: f64,
    /// Guaranteed potential decrease per accepted update.
    pub progress: f64,
    pub potential_upper: f64,
    pub potential_lower: f64,
}
