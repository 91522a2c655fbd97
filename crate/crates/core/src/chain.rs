//! The compositional predictor produced by every fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auditors::AuditorDescriptor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hexfloat;

/// Tag written into every chain file.
pub const CHAIN_FORMAT: &str = "happymap-chain-v1";

pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Base predictor `f0`. Restricted to forms that evaluate on unseen rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPredictor {
    Constant {
        #[serde(with = "hexfloat")]
        value: f64,
    },
    /// `intercept + weights . x`
    Linear {
        #[serde(with = "hexfloat::vec")]
        weights: Vec<f64>,
        #[serde(with = "hexfloat")]
        intercept: f64,
    },
    /// Reads an externally supplied score stored as feature `column`.
    ScoreColumn { column: usize },
    /// `lo + (hi - lo) * logistic(intercept + weights . x)`
    LogisticLink {
        #[serde(with = "hexfloat::vec")]
        weights: Vec<f64>,
        #[serde(with = "hexfloat")]
        intercept: f64,
        #[serde(with = "hexfloat")]
        lo: f64,
        #[serde(with = "hexfloat")]
        hi: f64,
    },
}

fn affine(weights: &[f64], intercept: f64, x: &[f64]) -> f64 {
    let mut acc = intercept;
    for (w, v) in weights.iter().zip(x) {
        acc += w * v;
    }
    acc
}

impl InitialPredictor {
    pub fn constant(value: f64) -> Self {
        InitialPredictor::Constant { value }
    }

    /// Smallest feature dimension this predictor can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match self {
            InitialPredictor::Constant { .. } => 0,
            InitialPredictor::Linear { weights, .. }
            | InitialPredictor::LogisticLink { weights, .. } => weights.len(),
            InitialPredictor::ScoreColumn { column } => column + 1,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            InitialPredictor::Constant { value } => *value,
            InitialPredictor::Linear { weights, intercept } => affine(weights, *intercept, x),
            InitialPredictor::ScoreColumn { column } => x[*column],
            InitialPredictor::LogisticLink {
                weights,
                intercept,
                lo,
                hi,
            } => lo + (hi - lo) * logistic(affine(weights, *intercept, x)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InitialPredictor::Constant { value } => format!("const({value})"),
            InitialPredictor::Linear { .. } => "linear".into(),
            InitialPredictor::ScoreColumn { column } => format!("x{column}"),
            InitialPredictor::LogisticLink { .. } => "logistic-link".into(),
        }
    }
}

/// Convex range `O` that every prediction is projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionInterval {
    #[serde(with = "hexfloat")]
    pub lo: f64,
    #[serde(with = "hexfloat")]
    pub hi: f64,
}

impl ProjectionInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::config(format!("invalid projection interval [{lo}, {hi}]")));
        }
        Ok(ProjectionInterval { lo, hi })
    }

    pub fn unbounded() -> Self {
        ProjectionInterval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn unit() -> Self {
        ProjectionInterval { lo: 0.0, hi: 1.0 }
    }

    /// Projection; `NaN` passes through so callers can detect it.
    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo
        } else if v > self.hi {
            self.hi
        } else {
            v
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStep {
    pub auditor: AuditorDescriptor,
    #[serde(with = "hexfloat")]
    pub eta: f64,
}

/// `f0` followed by projected updates `v <- clamp(v - eta * c(v, x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorChain {
    pub dim: usize,
    pub f0: InitialPredictor,
    pub steps: Vec<ChainStep>,
    pub proj: ProjectionInterval,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    format: String,
    dim: usize,
    f0: InitialPredictor,
    proj: ProjectionInterval,
    steps: Vec<ChainStep>,
}

impl PredictorChain {
    pub fn new(dim: usize, f0: InitialPredictor, proj: ProjectionInterval) -> Result<Self> {
        if f0.min_dim() > dim {
            return Err(Error::DimensionMismatch {
                expected: f0.min_dim(),
                got: dim,
            });
        }
        Ok(PredictorChain {
            dim,
            f0,
            steps: Vec::new(),
            proj,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut v = self.proj.clamp(self.f0.evaluate(x));
        for step in &self.steps {
            v = self.proj.clamp(v - step.eta * step.auditor.evaluate(v, x));
        }
        v
    }

    /// Predictions for every row of `data`.
    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.d() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: data.d(),
            });
        }
        Ok((0..data.n())
            .into_par_iter()
            .map(|i| self.predict_unchecked(data.row(i)))
            .collect())
    }

    pub fn to_json(&self) -> String {
        let file = ChainFile {
            format: CHAIN_FORMAT.to_string(),
            dim: self.dim,
            f0: self.f0.clone(),
            proj: self.proj,
            steps: self.steps.clone(),
        };
        serde_json::to_string_pretty(&file).expect("chain serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ChainFile = serde_json::from_str(text)?;
        if file.format != CHAIN_FORMAT {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("unsupported chain format {:?}", file.format),
            });
        }
        let proj = ProjectionInterval::new(file.proj.lo, file.proj.hi)?;
        let mut chain = PredictorChain::new(file.dim, file.f0, proj)?;
        for step in &file.steps {
            if !(step.eta > 0.0) {
                return Err(Error::input("chain step with non-positive eta"));
            }
        }
        chain.steps = file.steps;
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditors::{AuditorDescriptor, AuditorKind};

    #[test]
    fn empty_chain_is_f0() {
        let chain =
            PredictorChain::new(3, InitialPredictor::constant(0.5), ProjectionInterval::unit()).unwrap();
        assert_eq!(chain.predict(&[0.1, 0.2, 0.3]).unwrap(), 0.5);
        assert_eq!(chain.predict(&[9.0, -4.0, 1e9]).unwrap(), 0.5);
    }

    #[test]
    fn one_constant_step() {
        let mut chain =
            PredictorChain::new(1, InitialPredictor::constant(0.9), ProjectionInterval::unit()).unwrap();
        chain.steps.push(ChainStep {
            auditor: AuditorDescriptor::positive(AuditorKind::Constant),
            eta: 0.2,
        });
        assert!((chain.predict(&[0.0]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn clamps_into_projection() {
        let mut chain =
            PredictorChain::new(1, InitialPredictor::constant(0.1), ProjectionInterval::unit()).unwrap();
        chain.steps.push(ChainStep {
            auditor: AuditorDescriptor::positive(AuditorKind::Constant),
            eta: 0.5,
        });
        assert_eq!(chain.predict(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let chain =
            PredictorChain::new(2, InitialPredictor::constant(0.5), ProjectionInterval::unit()).unwrap();
        assert!(matches!(
            chain.predict(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn empty_chain_round_trips() {
        let chain = PredictorChain::new(
            2,
            InitialPredictor::Linear {
                weights: vec![0.1, -0.3],
                intercept: 0.25,
            },
            ProjectionInterval::unbounded(),
        )
        .unwrap();
        let text = chain.to_json();
        let back = PredictorChain::from_json(&text).unwrap();
        assert_eq!(back, chain);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn malformed_text_reports_position() {
        let err = PredictorChain::from_json("{\n  \"format\": 3,").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let wrong = PredictorChain::from_json(
            r#"{"format":"other","dim":1,"f0":{"kind":"constant","value":"0x1p-1"},"proj":{"lo":"-inf","hi":"inf"},"steps":[]}"#,
        );
        assert!(matches!(wrong, Err(Error::Parse { .. })));
    }
}
