//! Deterministic fixtures shared by the benchmarks.

use std::path::Path;

use melanoscope_core::decision::{LocalizationMap, PatchClass};
use melanoscope_core::label::TissueLabel;
use melanoscope_core::synthgen::{generate_slide, SynthSpec};
use melanoscope_core::tiling::{BinaryMask, LabelMask};
use melanoscope_core::{open_slide, Result, RgbTile, SlideHandle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Single-level slide of plain background, useful when only the extent matters.
pub fn blank_slide(dir: &Path, id: &str, width: u32, height: u32) -> Result<SlideHandle> {
    let spec = SynthSpec {
        slide_id: id.to_string(),
        width,
        height,
        levels: 1,
        blobs: Vec::new(),
        seed: 0,
        base_magnification: 40.0,
        pixel_size_um: 0.25,
    };
    let out = generate_slide(&spec, dir)?;
    open_slide(out.slide_dir)
}

/// Uniformly random pixels.
pub fn noise_tile(side: u32, seed: u64) -> RgbTile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tile = RgbTile::filled(side, side, [0, 0, 0]);
    rng.fill(&mut tile.pixels[..]);
    tile
}

/// Foreground and label masks at level 0 with independent per-pixel draws.
pub fn random_masks(width: u32, height: u32, seed: u64) -> (BinaryMask, LabelMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width as usize * height as usize;
    let bits = (0..n).map(|_| rng.random_bool(0.8)).collect();
    let fg = BinaryMask::new(0, width, height, bits).expect("sizes agree");
    let mut labels = LabelMask::empty(0, width, height);
    for cell in &mut labels.cells {
        *cell = match rng.random_range(0..5) {
            0 => None,
            k => TissueLabel::from_index((k - 1) % 3),
        };
    }
    (fg, labels)
}

/// Square map with random classes and about 10 % empty cells.
pub fn random_map(side: usize, seed: u64) -> LocalizationMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = LocalizationMap::empty("bench", 0, 1, (side as u32, side as u32), 1).expect("valid map");
    for cell in &mut map.cells {
        *cell = match rng.random_range(0..10) {
            0 => None,
            1 => Some(PatchClass::Unseen),
            2..=4 => Some(PatchClass::Malignant),
            5..=7 => Some(PatchClass::Benign),
            _ => Some(PatchClass::Normal),
        };
    }
    map
}
