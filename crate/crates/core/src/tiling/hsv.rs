use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide_io::{RgbTile, RowReader, SlideHandle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in `[0, 360)`.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV. Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(i32::from);
    let max = r.max(g).max(b);
    let delta = max - r.min(g).min(b);
    let v = f64::from(max) / 255.0;
    let s = saturation(max, delta);
    if delta == 0 {
        return Hsv { h: 0.0, s, v };
    }
    let (num, offset) = hue_sector(r, g, b, max, delta);
    let mut h = 60.0 * f64::from(num) / f64::from(delta) + offset;
    if h < 0.0 {
        h += 360.0;
    }
    Hsv { h, s, v }
}

fn saturation(max: i32, delta: i32) -> f64 {
    if max > 0 {
        f64::from(delta) / f64::from(max)
    } else {
        0.0
    }
}

/// Signed numerator over `delta` and the degree offset of the hexcone sector.
fn hue_sector(r: i32, g: i32, b: i32, max: i32, delta: i32) -> (i32, f64) {
    debug_assert!(delta > 0);
    if max == r {
        (g - b, 0.0)
    } else if max == g {
        (b - r, 120.0)
    } else {
        (r - g, 240.0)
    }
}

/// Hue on the 8-bit half-degree scale (`round(h / 2)`, so `0..=180`).
pub fn hue8(h_degrees: f64) -> u16 {
    (h_degrees / 2.0).round() as u16
}

/// `hue8` of a pixel computed in integer arithmetic, so halfway hues round
/// up exactly instead of depending on floating-point error.
pub fn pixel_hue8(rgb: [u8; 3]) -> u16 {
    let [r, g, b] = rgb.map(i32::from);
    let max = r.max(g).max(b);
    let delta = max - r.min(g).min(b);
    if delta == 0 {
        return 0;
    }
    let (num, offset) = hue_sector(r, g, b, max, delta);
    // h / 2 = (30 * num + offset / 2 * delta) / delta, shifted into [0, 180).
    let mut half = 30 * num + (offset as i32 / 2) * delta;
    if half < 0 {
        half += 180 * delta;
    }
    ((2 * half + delta) / (2 * delta)) as u16
}

/// Inclusive hue interval on the half-degree scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u16; 2]", into = "[u16; 2]")]
pub struct HueRange {
    lo: u16,
    hi: u16,
}

impl HueRange {
    pub fn new(lo: u16, hi: u16) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("inverted hue range [{lo}, {hi}]")));
        }
        if hi > 180 {
            return Err(Error::InvalidArgument(format!(
                "hue range [{lo}, {hi}] exceeds the half-degree scale 0..=180"
            )));
        }
        Ok(HueRange { lo, hi })
    }

    pub fn lo(self) -> u16 {
        self.lo
    }

    pub fn hi(self) -> u16 {
        self.hi
    }

    pub fn contains(self, hue8: u16) -> bool {
        (self.lo..=self.hi).contains(&hue8)
    }
}

impl Default for HueRange {
    /// Purple and pink H&E tones.
    fn default() -> Self {
        HueRange { lo: 100, hi: 180 }
    }
}

impl TryFrom<[u16; 2]> for HueRange {
    type Error = Error;

    fn try_from(v: [u16; 2]) -> Result<Self> {
        HueRange::new(v[0], v[1])
    }
}

impl From<HueRange> for [u16; 2] {
    fn from(r: HueRange) -> Self {
        [r.lo, r.hi]
    }
}

pub const DEFAULT_SAT_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForegroundParams {
    hue: HueRange,
    sat_min: f64,
}

impl ForegroundParams {
    pub fn new(hue: HueRange, sat_min: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sat_min) {
            return Err(Error::InvalidArgument(format!("sat_min {sat_min} outside [0, 1]")));
        }
        Ok(ForegroundParams { hue, sat_min })
    }

    pub fn hue(&self) -> HueRange {
        self.hue
    }

    pub fn sat_min(&self) -> f64 {
        self.sat_min
    }

    /// Tissue iff saturated enough and hue inside the band.
    pub fn is_foreground(&self, rgb: [u8; 3]) -> bool {
        let [r, g, b] = rgb.map(i32::from);
        let max = r.max(g).max(b);
        let delta = max - r.min(g).min(b);
        saturation(max, delta) >= self.sat_min && self.hue.contains(pixel_hue8(rgb))
    }
}

impl Default for ForegroundParams {
    fn default() -> Self {
        ForegroundParams {
            hue: HueRange::default(),
            sat_min: DEFAULT_SAT_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub level: usize,
    pub width: u32,
    pub height: u32,
    /// Row-major, `true` = foreground.
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(level: usize, width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "mask holds {} bits, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask {
            level,
            width,
            height,
            bits,
        })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Writes the mask as an 8-bit grayscale PNG (255 = foreground).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::save_buffer(path, &data, self.width, self.height, image::ExtendedColorType::L8)
            .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
    }
}

pub fn foreground_mask(tile: &RgbTile, params: &ForegroundParams) -> BinaryMask {
    let bits = tile
        .pixels
        .chunks_exact(3)
        .map(|p| params.is_foreground([p[0], p[1], p[2]]))
        .collect();
    BinaryMask {
        level: tile.level,
        width: tile.width,
        height: tile.height,
        bits,
    }
}

/// Foreground mask of an entire level, streamed row by row.
pub fn segment_level(slide: &SlideHandle, level: usize, params: &ForegroundParams) -> Result<BinaryMask> {
    let info = slide.level(level)?;
    let mut rows = RowReader::open(info)?;
    let mut bits = Vec::with_capacity(info.width as usize * info.height as usize);
    for _ in 0..info.height {
        let row = rows.next_row()?;
        bits.extend(row.chunks_exact(3).map(|p| params.is_foreground([p[0], p[1], p[2]])));
    }
    Ok(BinaryMask {
        level,
        width: info.width,
        height: info.height,
        bits,
    })
}
