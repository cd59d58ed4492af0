use std::sync::Arc;

use tract_onnx::prelude::*;

use crate::error::{Error, Result};
use crate::slide_io::RgbTile;
use crate::tiling::{normalize_patch, TensorPatch, INPUT_SIZE};

use super::{Backend, BackendDescriptor};

/// Runs an exported ONNX model taking `[N, 3, 224, 224]` float32 input and
/// returning `[N, arity]` logits.
pub struct NeuralBackend {
    descriptor: BackendDescriptor,
    plan: Arc<TypedRunnableModel>,
    /// Batch size baked into the model, if it is not symbolic.
    fixed_batch: Option<usize>,
}

fn model_err(e: impl std::fmt::Display) -> Error {
    Error::Model(e.to_string())
}

impl NeuralBackend {
    pub fn load(descriptor: &BackendDescriptor) -> Result<Self> {
        let path = descriptor
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("the neural backend needs a model path".into()))?;
        if !path.exists() {
            return Err(Error::NotFound(path.clone()));
        }
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        let typed = model.into_optimized().map_err(model_err)?;

        let input = typed.input_fact(0).map_err(model_err)?;
        let dims: Vec<Option<i64>> = input.shape.iter().map(|d| d.to_i64().ok()).collect();
        let expected = descriptor.input_shape();
        let spatial_ok = dims.len() == 4 && dims[1..].iter().zip(expected).all(|(d, e)| *d == Some(e as i64));
        if !spatial_ok {
            return Err(Error::ShapeMismatch(format!(
                "model input {:?} does not match [N, 3, {INPUT_SIZE}, {INPUT_SIZE}]",
                input.shape
            )));
        }
        let fixed_batch = dims[0].map(|b| b as usize);
        let plan = typed.into_runnable().map_err(model_err)?;
        let backend = NeuralBackend {
            descriptor: descriptor.clone(),
            plan,
            fixed_batch,
        };

        // Probe the output width once so arity mismatches fail at load time.
        let probe = vec![TensorPatch::zeros(); fixed_batch.unwrap_or(1)];
        let width = backend.run(&probe)?.first().map_or(0, Vec::len);
        if width != descriptor.arity.width() {
            return Err(Error::ShapeMismatch(format!(
                "model emits {width} logits per patch, descriptor expects {}",
                descriptor.arity.width()
            )));
        }
        Ok(backend)
    }

    fn run(&self, batch: &[TensorPatch]) -> Result<Vec<Vec<f64>>> {
        let n = batch.len();
        let mut data = Vec::with_capacity(n * TensorPatch::LEN);
        for t in batch {
            data.extend_from_slice(t.data());
        }
        let s = INPUT_SIZE as usize;
        let input = Tensor::from_shape(&[n, 3, s, s], &data).map_err(model_err)?;
        let outputs = self.plan.run(tvec![input.into()]).map_err(model_err)?;
        let out = outputs
            .first()
            .ok_or_else(|| Error::Model("model produced no outputs".into()))?;
        let shape = out.shape().to_vec();
        if shape.len() != 2 || shape[0] != n {
            return Err(Error::ShapeMismatch(format!(
                "model output shape {shape:?} for batch {n}"
            )));
        }
        let values = out.to_plain_array_view::<f32>().map_err(model_err)?;
        Ok(values
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect())
    }

    /// Logits for already-normalized tensors.
    pub fn logits_tensors(&self, batch: &[TensorPatch]) -> Result<Vec<Vec<f64>>> {
        match self.fixed_batch {
            None => self.run(batch),
            Some(b) => {
                let mut out = Vec::with_capacity(batch.len());
                for chunk in batch.chunks(b) {
                    let mut padded = chunk.to_vec();
                    padded.resize(b, TensorPatch::zeros());
                    out.extend(self.run(&padded)?.into_iter().take(chunk.len()));
                }
                Ok(out)
            }
        }
    }
}

impl Backend for NeuralBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn logits(&self, batch: &[RgbTile]) -> Result<Vec<Vec<f64>>> {
        let tensors = batch
            .iter()
            .map(|t| normalize_patch(t, &self.descriptor.stats))
            .collect::<Result<Vec<_>>>()?;
        self.logits_tensors(&tensors)
    }
}
