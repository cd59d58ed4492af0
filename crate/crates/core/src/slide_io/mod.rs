//! Multi-resolution slide access.
//!
//! A slide is either a pyramid directory (`meta.json` plus one raster per
//! level) or a single raster file treated as a one-level pyramid. Opening a
//! slide only reads metadata and image headers; pixels are decoded on demand,
//! row by row, so regions of gigapixel levels can be read without buffering
//! the whole level.

mod annotations;
mod rows;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::{load_annotations, AnnotationSet, Region};
pub(crate) use rows::RowReader;

/// Magnification assumed for single-file slides that carry no metadata.
pub const DEFAULT_BASE_MAGNIFICATION: f64 = 40.0;
/// Pixel pitch (micrometers) assumed for single-file slides.
pub const DEFAULT_PIXEL_SIZE_UM: f64 = 0.2199;
/// Name of the metadata file inside a pyramid directory.
pub const META_FILE: &str = "meta.json";

/// On-disk metadata of a pyramid directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidMeta {
    pub base_magnification: f64,
    pub pixel_size_um: f64,
    pub levels: Vec<LevelMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMeta {
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub downsample: u32,
}

#[derive(Debug, Clone)]
pub(crate) enum LevelSource {
    /// PNG decoded row by row on every read.
    Png(PathBuf),
    /// Any other raster; decoded once on first access.
    Raster(PathBuf, OnceLock<Arc<Vec<u8>>>),
}

#[derive(Debug, Clone)]
pub struct LevelInfo {
    pub width: u32,
    pub height: u32,
    pub downsample: u32,
    pub(crate) source: LevelSource,
}

/// An opened slide. Immutable after [`open_slide`]; safe to share across
/// threads for concurrent region reads.
#[derive(Debug, Clone)]
pub struct SlideHandle {
    pub id: String,
    pub path: PathBuf,
    pub base_width: u32,
    pub base_height: u32,
    pub base_magnification: f64,
    pub pixel_size_um: f64,
    pub(crate) levels: Vec<LevelInfo>,
}

impl SlideHandle {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_downsamples(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.downsample).collect()
    }

    pub fn level(&self, level: usize) -> Result<&LevelInfo> {
        self.levels.get(level).ok_or(Error::InvalidLevel {
            level,
            count: self.levels.len(),
        })
    }

    pub fn level_dimensions(&self, level: usize) -> Result<(u32, u32)> {
        self.level(level).map(|l| (l.width, l.height))
    }

    pub fn level_downsample(&self, level: usize) -> Result<u32> {
        self.level(level).map(|l| l.downsample)
    }

    pub fn level_magnification(&self, level: usize) -> Result<f64> {
        self.level(level)
            .map(|l| self.base_magnification / f64::from(l.downsample))
    }
}

/// A rectangle of 8-bit RGB pixels read from one pyramid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbTile {
    pub level: usize,
    pub origin_x: i64,
    pub origin_y: i64,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
}

impl RgbTile {
    pub fn new(level: usize, origin_x: i64, origin_y: i64, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer holds {} bytes, expected {expected} for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(RgbTile {
            level,
            origin_x,
            origin_y,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb.repeat(width as usize * height as usize);
        RgbTile {
            level: 0,
            origin_x: 0,
            origin_y: 0,
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

fn ceil_div(a: u32, b: u32) -> u32 {
    a.div_ceil(b)
}

/// Opens a pyramid directory or a single raster file.
pub fn open_slide(path: impl AsRef<Path>) -> Result<SlideHandle> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        open_pyramid_dir(path)
    } else {
        open_single_file(path)
    }
}

fn slide_id_for(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slide".to_string())
}

fn open_pyramid_dir(dir: &Path) -> Result<SlideHandle> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PyramidMeta = serde_json::from_str(&text)?;

    if meta.levels.is_empty() {
        return Err(Error::InconsistentPyramid("no levels declared".into()));
    }
    if !(meta.base_magnification.is_finite() && meta.base_magnification > 0.0) {
        return Err(Error::InconsistentPyramid(format!(
            "base_magnification must be positive, got {}",
            meta.base_magnification
        )));
    }
    if !(meta.pixel_size_um.is_finite() && meta.pixel_size_um > 0.0) {
        return Err(Error::InconsistentPyramid(format!(
            "pixel_size_um must be positive, got {}",
            meta.pixel_size_um
        )));
    }
    if meta.levels[0].downsample != 1 {
        return Err(Error::InconsistentPyramid(format!(
            "level 0 downsample must be 1, got {}",
            meta.levels[0].downsample
        )));
    }
    let (base_width, base_height) = (meta.levels[0].width, meta.levels[0].height);
    if base_width == 0 || base_height == 0 {
        return Err(Error::InconsistentPyramid("level 0 has zero area".into()));
    }

    let mut levels = Vec::with_capacity(meta.levels.len());
    for (i, lm) in meta.levels.iter().enumerate() {
        if i > 0 && lm.downsample <= meta.levels[i - 1].downsample {
            return Err(Error::InconsistentPyramid(format!(
                "downsamples must be strictly increasing (level {i}: {} after {})",
                lm.downsample,
                meta.levels[i - 1].downsample
            )));
        }
        let expected = (
            ceil_div(base_width, lm.downsample),
            ceil_div(base_height, lm.downsample),
        );
        if (lm.width, lm.height) != expected {
            return Err(Error::InconsistentPyramid(format!(
                "level {i} declares {}x{}, expected {}x{} for downsample {}",
                lm.width, lm.height, expected.0, expected.1, lm.downsample
            )));
        }
        let file = dir.join(&lm.file);
        if !file.is_file() {
            return Err(Error::InconsistentPyramid(format!(
                "level {i} file {} is missing",
                file.display()
            )));
        }
        let (source, found) = probe_raster(&file)?;
        if found != (lm.width, lm.height) {
            return Err(Error::InconsistentPyramid(format!(
                "level {i} file is {}x{}, metadata declares {}x{}",
                found.0, found.1, lm.width, lm.height
            )));
        }
        levels.push(LevelInfo {
            width: lm.width,
            height: lm.height,
            downsample: lm.downsample,
            source,
        });
    }

    Ok(SlideHandle {
        id: slide_id_for(dir),
        path: dir.to_path_buf(),
        base_width,
        base_height,
        base_magnification: meta.base_magnification,
        pixel_size_um: meta.pixel_size_um,
        levels,
    })
}

fn open_single_file(path: &Path) -> Result<SlideHandle> {
    let (source, (width, height)) = probe_raster(path)?;
    if width == 0 || height == 0 {
        return Err(Error::InconsistentPyramid("image has zero area".into()));
    }
    Ok(SlideHandle {
        id: slide_id_for(path),
        path: path.to_path_buf(),
        base_width: width,
        base_height: height,
        base_magnification: DEFAULT_BASE_MAGNIFICATION,
        pixel_size_um: DEFAULT_PIXEL_SIZE_UM,
        levels: vec![LevelInfo {
            width,
            height,
            downsample: 1,
            source,
        }],
    })
}

/// Reads only the header of a raster and picks the access strategy.
fn probe_raster(path: &Path) -> Result<(LevelSource, (u32, u32))> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) => {
            let dims = rows::png_dimensions(path)?;
            Ok((LevelSource::Png(path.to_path_buf()), dims))
        }
        Some(_) => {
            let dims = reader
                .into_dimensions()
                .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
            Ok((LevelSource::Raster(path.to_path_buf(), OnceLock::new()), dims))
        }
        None => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

/// Reads a `w`x`h` rectangle at `level` whose top-left corner is `(x, y)` in
/// that level's pixel coordinates. Area outside the level is white.
pub fn read_region(slide: &SlideHandle, level: usize, x: i64, y: i64, w: u32, h: u32) -> Result<RgbTile> {
    let info = slide.level(level)?;
    if w == 0 || h == 0 {
        return Err(Error::ZeroArea { width: w, height: h });
    }
    let mut tile = RgbTile::filled(w, h, [255, 255, 255]);
    tile.level = level;
    tile.origin_x = x;
    tile.origin_y = y;

    let (lw, lh) = (i64::from(info.width), i64::from(info.height));
    let row_lo = y.max(0);
    let row_hi = (y + i64::from(h)).min(lh);
    let col_lo = x.max(0);
    let col_hi = (x + i64::from(w)).min(lw);
    if row_lo >= row_hi || col_lo >= col_hi {
        return Ok(tile);
    }

    let mut rows = RowReader::open(info)?;
    rows.skip_to(row_lo as u32)?;
    let span = ((col_hi - col_lo) * 3) as usize;
    let dst_col = ((col_lo - x) * 3) as usize;
    for r in row_lo..row_hi {
        let row = rows.next_row()?;
        let src = &row[(col_lo * 3) as usize..(col_lo * 3) as usize + span];
        let dst_off = ((r - y) as usize) * w as usize * 3 + dst_col;
        tile.pixels[dst_off..dst_off + span].copy_from_slice(src);
    }
    Ok(tile)
}

/// Maps a target magnification onto the coarsest level that still reaches it.
///
/// Returns the level plus the residual scale (`target / level magnification`,
/// at most 1) that resampling must apply to hit the target exactly.
pub fn level_for_magnification(slide: &SlideHandle, target_mag: f64) -> Result<(usize, f64)> {
    let base = slide.base_magnification;
    let tol = 1e-9 * base;
    if !(target_mag.is_finite() && target_mag > 0.0 && target_mag <= base + tol) {
        return Err(Error::Magnification {
            requested: target_mag,
            base,
        });
    }
    let mut chosen = 0;
    for (i, level) in slide.levels.iter().enumerate() {
        let mag = base / f64::from(level.downsample);
        if mag + tol >= target_mag {
            chosen = i;
        }
    }
    let mag = base / f64::from(slide.levels[chosen].downsample);
    let residual = if (mag - target_mag).abs() <= tol {
        1.0
    } else {
        target_mag / mag
    };
    Ok((chosen, residual))
}
