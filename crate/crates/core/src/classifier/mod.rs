//! Patch classification backends and the probability vector they produce.

mod mock;
#[cfg(feature = "onnx")]
mod neural;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::slide_io::RgbTile;
use crate::tiling::{NormalizationStats, INPUT_SIZE};

pub use mock::{MockBackend, ANCHORS, DEFAULT_TEMPERATURE};
#[cfg(feature = "onnx")]
pub use neural::NeuralBackend;

/// Tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arity {
    /// Benign vs malignant.
    #[default]
    Binary,
    /// Benign, malignant, normal.
    Multiclass,
}

impl Arity {
    pub fn width(self) -> usize {
        match self {
            Arity::Binary => 2,
            Arity::Multiclass => 3,
        }
    }

    pub fn from_width(width: usize) -> Option<Self> {
        match width {
            2 => Some(Arity::Binary),
            3 => Some(Arity::Multiclass),
            _ => None,
        }
    }
}

/// Class probabilities in the fixed order benign, malignant[, normal].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if Arity::from_width(probs.len()).is_none() {
            return Err(Error::NotNormalized(format!(
                "length {} (expected 2 or 3)",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::NotNormalized(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized(format!("entries sum to {sum}")));
        }
        Ok(ProbabilityVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn arity(&self) -> Arity {
        Arity::from_width(self.probs.len()).expect("validated on construction")
    }

    /// Largest probability and its class; ties go to the earlier class.
    pub fn max(&self) -> (TissueLabel, f64) {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        (
            TissueLabel::from_index(best).expect("at most 3 classes"),
            self.probs[best],
        )
    }

    pub fn get(&self, label: TissueLabel) -> Option<f64> {
        self.probs.get(label.index()).copied()
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbabilityVector::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.probs
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Neural,
}

fn default_stats() -> NormalizationStats {
    NormalizationStats::imagenet()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub arity: Arity,
    /// ONNX file, required for the neural kind.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Input normalization applied before a neural model runs.
    #[serde(default = "default_stats")]
    pub stats: NormalizationStats,
    /// Mock softmax temperature; `None` uses the default.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            arity: Arity::Binary,
            model: None,
            stats: default_stats(),
            temperature: None,
        }
    }
}

impl BackendDescriptor {
    pub fn mock(arity: Arity) -> Self {
        BackendDescriptor {
            arity,
            ..Self::default()
        }
    }

    pub fn neural(arity: Arity, model: impl Into<PathBuf>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Neural,
            arity,
            model: Some(model.into()),
            ..Self::default()
        }
    }

    /// Model input shape excluding the batch dimension.
    pub fn input_shape(&self) -> [usize; 3] {
        [3, INPUT_SIZE as usize, INPUT_SIZE as usize]
    }
}

/// Whether a backend tolerates concurrent calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Shared,
    /// Calls must be serialized by the caller.
    SingleSession,
}

/// A patch classifier producing raw logits. Softmax is applied by [`predict`].
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }

    /// One logit row per patch, `arity` wide, in input order.
    fn logits(&self, batch: &[RgbTile]) -> Result<Vec<Vec<f64>>>;
}

pub fn load_backend(descriptor: &BackendDescriptor) -> Result<Box<dyn Backend>> {
    match descriptor.kind {
        BackendKind::Mock => {
            let mut mock = MockBackend::new(descriptor.arity);
            if let Some(t) = descriptor.temperature {
                mock = mock.with_temperature(t)?;
            }
            mock.descriptor.stats = descriptor.stats;
            Ok(Box::new(mock))
        }
        BackendKind::Neural => {
            #[cfg(feature = "onnx")]
            {
                Ok(Box::new(NeuralBackend::load(descriptor)?))
            }
            #[cfg(not(feature = "onnx"))]
            {
                Err(Error::Model("built without the `onnx` feature".into()))
            }
        }
    }
}

/// Classifies a batch: runs the backend, checks the output shape and
/// finiteness, and converts logits to probabilities.
pub fn predict(backend: &dyn Backend, batch: &[RgbTile]) -> Result<Vec<ProbabilityVector>> {
    if batch.is_empty() {
        return Err(Error::Empty("prediction batch"));
    }
    let width = backend.descriptor().arity.width();
    let logits = backend.logits(batch)?;
    if logits.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "backend returned {} rows for {} patches",
            logits.len(),
            batch.len()
        )));
    }
    logits
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "logit row {i} has width {}, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            ProbabilityVector::new(softmax(row))
        })
        .collect()
}
