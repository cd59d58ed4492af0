use crate::error::{Error, Result};
use crate::slide_io::RgbTile;

use super::{Arity, Backend, BackendDescriptor};

/// Class anchor colours in class order (benign, malignant, normal). The
/// synthetic slide generator paints with the same colours.
pub const ANCHORS: [[u8; 3]; 3] = [[90, 60, 150], [150, 40, 90], [230, 180, 200]];

pub const DEFAULT_TEMPERATURE: f64 = 2.0;

/// Deterministic colour classifier: logits are `-d / temperature`, where `d`
/// is the Euclidean distance from the patch's mean RGB to each anchor.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub(super) descriptor: BackendDescriptor,
    temperature: f64,
}

impl MockBackend {
    pub fn new(arity: Arity) -> Self {
        MockBackend {
            descriptor: BackendDescriptor::mock(arity),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} must be positive"
            )));
        }
        self.temperature = temperature;
        self.descriptor.temperature = Some(temperature);
        Ok(self)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits_for_mean(&self, mean: [f64; 3]) -> Vec<f64> {
        ANCHORS[..self.descriptor.arity.width()]
            .iter()
            .map(|a| {
                let d2: f64 = (0..3).map(|c| (mean[c] - f64::from(a[c])).powi(2)).sum();
                -d2.sqrt() / self.temperature
            })
            .collect()
    }
}

pub fn mean_rgb(tile: &RgbTile) -> [f64; 3] {
    let mut sum = [0u64; 3];
    for p in tile.pixels.chunks_exact(3) {
        for c in 0..3 {
            sum[c] += u64::from(p[c]);
        }
    }
    let n = tile.pixel_count().max(1) as f64;
    sum.map(|s| s as f64 / n)
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn logits(&self, batch: &[RgbTile]) -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|t| self.logits_for_mean(mean_rgb(t))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::predict;
    use crate::label::TissueLabel;

    #[test]
    fn anchor_patch_is_confident() {
        let mock = MockBackend::new(Arity::Binary);
        let tile = RgbTile::filled(256, 256, ANCHORS[1]);
        let p = &predict(&mock, &[tile]).unwrap()[0];
        assert_eq!(p.max().0, TissueLabel::Malignant);
        assert!(p.max().1 > 0.99);
    }

    #[test]
    fn equidistant_patch_splits_evenly() {
        let mock = MockBackend::new(Arity::Multiclass);
        // Midpoint of the benign and malignant anchors.
        let tile = RgbTile::filled(8, 8, [120, 50, 120]);
        let p = &predict(&mock, &[tile]).unwrap()[0];
        assert!((p.probs()[0] - p.probs()[1]).abs() < 1e-12);
        assert!(p.probs()[2] < 1e-6);
    }

    #[test]
    fn byte_identical_patches_score_identically() {
        let mock = MockBackend::new(Arity::Multiclass);
        let a = RgbTile::filled(16, 16, [200, 100, 50]);
        let out = predict(&mock, &[a.clone(), a]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].probs().len(), 3);
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(MockBackend::new(Arity::Binary).with_temperature(0.0).is_err());
        assert_eq!(
            MockBackend::new(Arity::Binary)
                .with_temperature(20.0)
                .unwrap()
                .temperature(),
            20.0
        );
    }
}
