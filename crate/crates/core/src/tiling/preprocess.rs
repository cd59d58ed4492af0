use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide_io::RgbTile;

/// Model input side length.
pub const INPUT_SIZE: u32 = 224;

/// Per-channel mean and standard deviation on the `[0, 1]` intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationStats {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        for (c, &s) in std.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::ZeroVariance(c));
            }
        }
        Ok(NormalizationStats { mean, std })
    }

    /// Mean 0, std 1: normalization only rescales to `[0, 1]`.
    pub fn identity() -> Self {
        NormalizationStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// ImageNet statistics, the usual choice for pretrained backbones.
    pub fn imagenet() -> Self {
        NormalizationStats {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Single-pass, mergeable accumulator. Sums are kept as exact integers, so
/// the result does not depend on patch order or on how work was split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsAccumulator {
    count: u64,
    sum: [u64; 3],
    sum_sq: [u128; 3],
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tile: &RgbTile) {
        for p in tile.pixels.chunks_exact(3) {
            for (c, &v) in p.iter().enumerate() {
                let v = u64::from(v);
                self.sum[c] += v;
                self.sum_sq[c] += u128::from(v * v);
            }
        }
        self.count += tile.pixel_count() as u64;
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.count += other.count;
        for c in 0..3 {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
    }

    pub fn pixel_count(&self) -> u64 {
        self.count
    }

    /// Population mean and standard deviation, scaled to `[0, 1]`.
    pub fn finish(&self) -> Result<NormalizationStats> {
        if self.count == 0 {
            return Err(Error::Empty("no pixels for channel statistics"));
        }
        let n = self.count as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            // n * sum_sq - sum^2 is exact in integers; divide once at the end.
            let s = u128::from(self.sum[c]);
            let numer = u128::from(self.count) * self.sum_sq[c] - s * s;
            mean[c] = self.sum[c] as f64 / n / 255.0;
            std[c] = (numer as f64).sqrt() / n / 255.0;
            if numer == 0 {
                return Err(Error::ZeroVariance(c));
            }
        }
        Ok(NormalizationStats { mean, std })
    }
}

pub fn compute_channel_stats<'a, I>(patches: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a RgbTile>,
{
    let mut acc = StatsAccumulator::new();
    for tile in patches {
        acc.add(tile);
    }
    acc.finish()
}

/// Channel-major `3 x 224 x 224` model input.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPatch {
    data: Vec<f32>,
}

impl TensorPatch {
    pub const LEN: usize = 3 * (INPUT_SIZE as usize) * (INPUT_SIZE as usize);

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::LEN {
            return Err(Error::ShapeMismatch(format!(
                "tensor holds {} values, expected 3x{INPUT_SIZE}x{INPUT_SIZE}",
                data.len()
            )));
        }
        Ok(TensorPatch { data })
    }

    pub fn zeros() -> Self {
        TensorPatch {
            data: vec![0.0; Self::LEN],
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        let s = INPUT_SIZE as usize;
        self.data[(channel * s + y) * s + x]
    }
}

/// Bilinear resize of a square tile to 224x224 (half-pixel centres, edge
/// clamping), returned channel-major on the `[0, 1]` scale. A 224-pixel
/// input is returned unchanged apart from scaling.
pub fn resize_to_input(tile: &RgbTile) -> Result<Vec<f32>> {
    if tile.width != tile.height {
        return Err(Error::InvalidArgument(format!(
            "patch must be square, got {}x{}",
            tile.width, tile.height
        )));
    }
    if tile.width == 0 {
        return Err(Error::ZeroArea {
            width: tile.width,
            height: tile.height,
        });
    }
    let n = INPUT_SIZE as usize;
    let src = tile.width as usize;
    let scale = src as f64 / n as f64;
    // Precomputed taps: (lower index, upper index, upper weight).
    let taps: Vec<(usize, usize, f64)> = (0..n)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let px = |x: usize, y: usize, c: usize| f64::from(tile.pixels[(y * src + x) * 3 + c]);
    let mut out = vec![0.0f32; 3 * n * n];
    for (dy, &(y0, y1, wy)) in taps.iter().enumerate() {
        for (dx, &(x0, x1, wx)) in taps.iter().enumerate() {
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - wx) + px(x1, y0, c) * wx;
                let bottom = px(x0, y1, c) * (1.0 - wx) + px(x1, y1, c) * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                out[(c * n + dy) * n + dx] = (v / 255.0) as f32;
            }
        }
    }
    Ok(out)
}

pub fn normalize_patch(tile: &RgbTile, stats: &NormalizationStats) -> Result<TensorPatch> {
    let mut data = resize_to_input(tile)?;
    let plane = data.len() / 3;
    for (c, chunk) in data.chunks_exact_mut(plane).enumerate() {
        let (mean, std) = (stats.mean[c], stats.std[c]);
        for v in chunk {
            *v = ((f64::from(*v) - mean) / std) as f32;
        }
    }
    Ok(TensorPatch { data })
}

/// Inverse of the normalization step (`v * std + mean`), on the `[0, 1]` scale.
pub fn denormalize(tensor: &TensorPatch, stats: &NormalizationStats) -> Vec<f32> {
    let plane = tensor.data.len() / 3;
    tensor
        .data
        .chunks_exact(plane)
        .enumerate()
        .flat_map(|(c, chunk)| {
            let (mean, std) = (stats.mean[c], stats.std[c]);
            chunk.iter().map(move |&v| (f64::from(v) * std + mean) as f32)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Rotate90,
        Transform::Rotate180,
        Transform::Rotate270,
    ];

    /// Applies the transform to a square tile.
    pub fn apply(self, tile: &RgbTile) -> RgbTile {
        let n = tile.width;
        debug_assert_eq!(tile.width, tile.height);
        let mut out = tile.clone();
        for y in 0..n {
            for x in 0..n {
                // Source pixel that lands on (x, y).
                let (sx, sy) = match self {
                    Transform::Identity => (x, y),
                    Transform::FlipHorizontal => (n - 1 - x, y),
                    Transform::FlipVertical => (x, n - 1 - y),
                    Transform::Rotate90 => (y, n - 1 - x),
                    Transform::Rotate180 => (n - 1 - x, n - 1 - y),
                    Transform::Rotate270 => (n - 1 - y, x),
                };
                out.set_pixel(x, y, tile.pixel(sx, sy));
            }
        }
        out
    }
}

/// Random 224x224 crop followed by a uniformly chosen flip or rotation.
/// Deterministic for a given seed.
pub fn augment_patch(tile: &RgbTile, seed: u64) -> Result<RgbTile> {
    let n = INPUT_SIZE;
    if tile.width < n || tile.height < n {
        return Err(Error::InvalidArgument(format!(
            "patch {}x{} is smaller than the {n}x{n} crop",
            tile.width, tile.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ox = rng.random_range(0..=tile.width - n);
    let oy = rng.random_range(0..=tile.height - n);
    let transform = Transform::ALL[rng.random_range(0..Transform::ALL.len())];

    let mut pixels = Vec::with_capacity((n * n * 3) as usize);
    for y in oy..oy + n {
        let start = ((y * tile.width + ox) * 3) as usize;
        pixels.extend_from_slice(&tile.pixels[start..start + (n * 3) as usize]);
    }
    let crop = RgbTile::new(
        tile.level,
        tile.origin_x + i64::from(ox),
        tile.origin_y + i64::from(oy),
        n,
        n,
        pixels,
    )?;
    Ok(transform.apply(&crop))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(n: u32) -> RgbTile {
        let mut px = Vec::new();
        for y in 0..n {
            for x in 0..n {
                px.extend_from_slice(&[(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        RgbTile::new(0, 0, 0, n, n, px).unwrap()
    }

    #[test]
    fn constant_tile_is_zero_variance() {
        let tile = RgbTile::filled(4, 4, [128, 128, 128]);
        let mut acc = StatsAccumulator::new();
        acc.add(&tile);
        assert!(matches!(acc.finish(), Err(Error::ZeroVariance(0))));
        assert!(matches!(compute_channel_stats([]), Err(Error::Empty(_))));
    }

    #[test]
    fn two_point_distribution() {
        let mut tile = RgbTile::filled(2, 1, [0, 0, 0]);
        tile.set_pixel(1, 0, [255, 255, 255]);
        let stats = compute_channel_stats([&tile]).unwrap();
        for c in 0..3 {
            assert!((stats.mean[c] - 0.5).abs() < 1e-12);
            assert!((stats.std[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_tile_normalizes_to_zero() {
        let c = 77u8;
        let tile = RgbTile::filled(256, 256, [c; 3]);
        let mean = f64::from(c) / 255.0;
        let stats = NormalizationStats::new([mean; 3], [1.0; 3]).unwrap();
        let t = normalize_patch(&tile, &stats).unwrap();
        assert!(t.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn output_is_224_square() {
        let t = normalize_patch(&gradient(256), &NormalizationStats::identity()).unwrap();
        assert_eq!(t.data().len(), 3 * 224 * 224);
        assert!(normalize_patch(&RgbTile::filled(10, 12, [0; 3]), &NormalizationStats::identity()).is_err());
    }

    #[test]
    fn resize_is_identity_at_224() {
        let tile = gradient(224);
        let t = normalize_patch(&tile, &NormalizationStats::identity()).unwrap();
        for y in 0..224 {
            for x in 0..224 {
                let p = tile.pixel(x as u32, y as u32);
                for (c, &v) in p.iter().enumerate() {
                    assert_eq!(t.get(c, y, x), (f64::from(v) / 255.0) as f32);
                }
            }
        }
    }

    #[test]
    fn denormalize_recovers_resized_image() {
        let tile = gradient(256);
        let stats = NormalizationStats::imagenet();
        let t = normalize_patch(&tile, &stats).unwrap();
        let resized = resize_to_input(&tile).unwrap();
        for (a, b) in denormalize(&t, &stats).iter().zip(&resized) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn augmentation_is_deterministic_and_geometric() {
        let tile = gradient(256);
        let a = augment_patch(&tile, 7).unwrap();
        assert_eq!(a, augment_patch(&tile, 7).unwrap());
        assert_eq!((a.width, a.height), (224, 224));
        let mut src: Vec<[u8; 3]> = tile.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        src.sort_unstable();
        for p in a.pixels.chunks_exact(3) {
            assert!(src.binary_search(&[p[0], p[1], p[2]]).is_ok());
        }
        let constant = augment_patch(&RgbTile::filled(256, 256, [9, 8, 7]), 3).unwrap();
        assert!(constant.pixels.chunks_exact(3).all(|p| p == [9, 8, 7]));
        assert!(augment_patch(&RgbTile::filled(200, 256, [0; 3]), 1).is_err());
    }

    #[test]
    fn rotations_compose() {
        let tile = gradient(5);
        let r90 = Transform::Rotate90.apply(&tile);
        assert_eq!(Transform::Rotate270.apply(&r90), tile);
        assert_eq!(Transform::Rotate90.apply(&r90), Transform::Rotate180.apply(&tile));
        let h = Transform::FlipHorizontal.apply(&tile);
        assert_eq!(Transform::FlipHorizontal.apply(&h), tile);
    }
}
