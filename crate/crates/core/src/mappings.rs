//! Mappings `s(f, y)` and their matched potentials `L(f, y)`.
//!
//! Every potential is an antiderivative of its mapping in the prediction
//! argument and satisfies the smooth-like bound
//! `L(f) - L(g) >= (f - g) s(f) - kappa (f - g)^2`, pointwise for the smooth
//! mappings and in expectation (under a label density bounded by `K_p`) for
//! the quantile mapping.

use std::fmt;

use crate::error::{Error, Result};

/// Density bound used for quantile mappings when none is supplied.
pub const DEFAULT_DENSITY_BOUND: f64 = 10.0;

pub fn residual_signal(f: f64, y: f64) -> f64 {
    f - y
}

pub fn residual_potential(f: f64, y: f64) -> f64 {
    0.5 * (f - y) * (f - y)
}

/// `(1 - delta) - 1{l <= y}`
pub fn quantile_signal(l: f64, y: f64, delta: f64) -> f64 {
    let below = if l <= y { 1.0 } else { 0.0 };
    (1.0 - delta) - below
}

/// Pinball-style potential `(1 - delta) l - min(l - y, 0)`, minimized in
/// expectation at the `delta`-quantile of `y`.
pub fn quantile_potential(l: f64, y: f64, delta: f64) -> f64 {
    (1.0 - delta) * l - (l - y).min(0.0)
}

pub fn raw_moment_signal(f: f64, y: f64, k: u32) -> f64 {
    f.powi(k as i32) - y.powi(k as i32)
}

pub fn raw_moment_potential(f: f64, y: f64, k: u32) -> f64 {
    f.powi(k as i32 + 1) / f64::from(k + 1) - y.powi(k as i32) * f
}

/// `E_U[1{U < f}]` for `U ~ U(0, 1)` and `f` in `[0, 1]`.
pub fn parity_signal(f: f64) -> f64 {
    f
}

pub fn parity_potential(f: f64) -> f64 {
    0.5 * f * f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mapping {
    Residual,
    Quantile { delta: f64 },
    RawMoment { k: u32 },
    ParityExpected,
}

impl Mapping {
    #[inline]
    pub fn signal(&self, f: f64, y: f64) -> f64 {
        match *self {
            Mapping::Residual => residual_signal(f, y),
            Mapping::Quantile { delta } => quantile_signal(f, y, delta),
            Mapping::RawMoment { k } => raw_moment_signal(f, y, k),
            Mapping::ParityExpected => parity_signal(f),
        }
    }

    #[inline]
    pub fn potential(&self, f: f64, y: f64) -> f64 {
        match *self {
            Mapping::Residual => residual_potential(f, y),
            Mapping::Quantile { delta } => quantile_potential(f, y, delta),
            Mapping::RawMoment { k } => raw_moment_potential(f, y, k),
            Mapping::ParityExpected => parity_potential(f),
        }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mapping::Residual => write!(f, "residual"),
            Mapping::Quantile { delta } => write!(f, "quantile:{delta}"),
            Mapping::RawMoment { k } => write!(f, "moment:{k}"),
            Mapping::ParityExpected => write!(f, "parity"),
        }
    }
}

/// A mapping together with its smoothness constant `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingSpec {
    pub mapping: Mapping,
    pub kappa: f64,
    /// Upper bound `K_p` on the conditional label density (quantile only).
    pub density_bound: Option<f64>,
}

impl MappingSpec {
    pub fn residual() -> Self {
        MappingSpec {
            mapping: Mapping::Residual,
            kappa: 0.5,
            density_bound: None,
        }
    }

    /// Quantile mapping at level `delta`; `kappa = K_p`, defaulting to
    /// [`DEFAULT_DENSITY_BOUND`].
    pub fn quantile(delta: f64, density_bound: Option<f64>) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("quantile level {delta} outside (0, 1)")));
        }
        let kp = density_bound.unwrap_or(DEFAULT_DENSITY_BOUND);
        if !(kp > 0.0 && kp.is_finite()) {
            return Err(Error::config(format!("density bound {kp} must be positive")));
        }
        Ok(MappingSpec {
            mapping: Mapping::Quantile { delta },
            kappa: kp,
            density_bound: Some(kp),
        })
    }

    /// Raw-moment mapping on `O = [0, 1]`; `kappa = k / 2`.
    pub fn raw_moment(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("moment order must be at least 1"));
        }
        Ok(MappingSpec {
            mapping: Mapping::RawMoment { k },
            kappa: f64::from(k) / 2.0,
            density_bound: None,
        })
    }

    pub fn parity() -> Self {
        MappingSpec {
            mapping: Mapping::ParityExpected,
            kappa: 0.5,
            density_bound: None,
        }
    }

    /// Parses `"residual" | "quantile:<delta>" | "moment:<k>" | "parity"`.
    pub fn parse(text: &str, density_bound: Option<f64>) -> Result<Self> {
        let text = text.trim();
        match text.split_once(':') {
            None => match text {
                "residual" => Ok(Self::residual()),
                "parity" => Ok(Self::parity()),
                _ => Err(Error::config(format!("unknown mapping {text:?}"))),
            },
            Some(("quantile", arg)) => {
                let delta: f64 = arg
                    .parse()
                    .map_err(|_| Error::config(format!("bad quantile level {arg:?}")))?;
                Self::quantile(delta, density_bound)
            }
            Some(("moment", arg)) => {
                let k: u32 = arg
                    .parse()
                    .map_err(|_| Error::config(format!("bad moment order {arg:?}")))?;
                Self::raw_moment(k)
            }
            Some(_) => Err(Error::config(format!("unknown mapping {text:?}"))),
        }
    }

    /// Lower bound `C^l` on the mean potential over any predictor.
    ///
    /// Residual and parity potentials are nonnegative. The moment potential
    /// is bounded below by `-k/(k+1)` for labels in `[0, 1]`. The quantile
    /// potential dominates `(1 - delta) y`, giving `-(1 - delta) max|y|`.
    pub fn potential_lower(&self, labels: &[f64]) -> f64 {
        match self.mapping {
            Mapping::Residual | Mapping::ParityExpected => 0.0,
            Mapping::RawMoment { k } => -f64::from(k) / f64::from(k + 1),
            Mapping::Quantile { delta } => {
                let max_abs = labels.iter().fold(0.0f64, |m, y| m.max(y.abs()));
                -(1.0 - delta) * max_abs
            }
        }
    }

    /// Empirical mean potential of `values` against `labels`.
    pub fn mean_potential(&self, values: &[f64], labels: &[f64]) -> f64 {
        let sum: f64 = values
            .iter()
            .zip(labels)
            .map(|(&f, &y)| self.mapping.potential(f, y))
            .sum();
        sum / values.len() as f64
    }
}
