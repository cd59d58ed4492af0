use std::path::Path;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiling::PatchRecord;

use super::PatchClass;

pub const PALETTE_ABSENT: [u8; 3] = [255, 255, 255];

fn colour(class: PatchClass) -> [u8; 3] {
    match class {
        PatchClass::Malignant => [230, 40, 40],
        PatchClass::Benign => [60, 180, 75],
        PatchClass::Normal => [70, 130, 220],
        PatchClass::Unseen => [200, 200, 200],
    }
}

/// One cell per patch position at the patch level; `None` marks cells that
/// were never classified (background).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMap {
    pub slide_id: String,
    pub level: usize,
    /// Level-0 pixels per level pixel.
    pub downsample: u32,
    /// Cell side in level pixels.
    pub stride: u32,
    pub grid_width: usize,
    pub grid_height: usize,
    pub cells: Vec<Option<PatchClass>>,
}

impl LocalizationMap {
    pub fn empty(slide_id: &str, level: usize, downsample: u32, level_dims: (u32, u32), stride: u32) -> Result<Self> {
        if stride == 0 || downsample == 0 {
            return Err(Error::InvalidArgument(
                "map stride and downsample must be positive".into(),
            ));
        }
        let grid_width = level_dims.0.div_ceil(stride) as usize;
        let grid_height = level_dims.1.div_ceil(stride) as usize;
        Ok(LocalizationMap {
            slide_id: slide_id.to_string(),
            level,
            downsample,
            stride,
            grid_width,
            grid_height,
            cells: vec![None; grid_width * grid_height],
        })
    }

    /// `(row, col)` of the cell holding a record.
    pub fn cell_of(&self, rec: &PatchRecord) -> (usize, usize) {
        let lx = rec.x / self.downsample;
        let ly = rec.y / self.downsample;
        ((ly / self.stride) as usize, (lx / self.stride) as usize)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<PatchClass> {
        self.cells[row * self.grid_width + col]
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let map: LocalizationMap = serde_json::from_slice(&text)?;
        if map.cells.len() != map.grid_width * map.grid_height {
            return Err(Error::InvalidArgument(format!(
                "{}: {} cells for a {}x{} grid",
                path.display(),
                map.cells.len(),
                map.grid_width,
                map.grid_height
            )));
        }
        Ok(map)
    }
}

/// Writes one cell per record. `level_dims` is the slide extent at the patch
/// level and `stride` the patch size there.
pub fn build_map(
    slide_id: &str,
    records: &[PatchRecord],
    classes: &[PatchClass],
    level_dims: (u32, u32),
    stride: u32,
    downsample: u32,
) -> Result<LocalizationMap> {
    if records.len() != classes.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: classes.len(),
        });
    }
    let level = records.first().map_or(0, |r| r.level);
    let mut map = LocalizationMap::empty(slide_id, level, downsample, level_dims, stride)?;
    for (rec, &class) in records.iter().zip(classes) {
        let (row, col) = map.cell_of(rec);
        if row >= map.grid_height || col >= map.grid_width {
            return Err(Error::OutOfBounds(format!(
                "record at ({}, {}) falls outside the {}x{} grid",
                rec.x, rec.y, map.grid_width, map.grid_height
            )));
        }
        let cell = &mut map.cells[row * map.grid_width + col];
        if cell.is_some() {
            return Err(Error::DuplicateCell { row, col });
        }
        *cell = Some(class);
    }
    Ok(map)
}

/// Paints each cell as a `scale`x`scale` block.
pub fn render_map(map: &LocalizationMap, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let w = map.grid_width as u32 * scale;
    let h = map.grid_height as u32 * scale;
    RgbImage::from_fn(w, h, |x, y| {
        let cell = map.get((y / scale) as usize, (x / scale) as usize);
        image::Rgb(cell.map_or(PALETTE_ABSENT, colour))
    })
}

/// Places `thumbnail` (scaled to the map's height) left of the rendered map.
pub fn composite(map_image: &RgbImage, thumbnail: &RgbImage) -> RgbImage {
    let h = map_image.height().max(1);
    let tw = ((u64::from(thumbnail.width()) * u64::from(h)) / u64::from(thumbnail.height().max(1))).max(1) as u32;
    let thumb = imageops::resize(thumbnail, tw, h, imageops::FilterType::Triangle);
    let mut out = RgbImage::from_pixel(tw + map_image.width(), h, image::Rgb(PALETTE_ABSENT));
    imageops::replace(&mut out, &thumb, 0, 0);
    imageops::replace(&mut out, map_image, i64::from(tw), 0);
    out
}
