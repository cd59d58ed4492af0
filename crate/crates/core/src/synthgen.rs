//! Synthetic pyramid slides with disc-shaped lesions painted in the mock
//! classifier's anchor colours, plus matching annotations and truth records.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::ANCHORS;
use crate::decision::{Verdict, DEFAULT_T_R};
use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::slide_io::{
    AnnotationSet, LevelMeta, PyramidMeta, Region, DEFAULT_BASE_MAGNIFICATION, DEFAULT_PIXEL_SIZE_UM, META_FILE,
};

/// Largest accepted colour jitter. Clamped at 3 sigma, the per-channel
/// offset stays far below half the distance between any two anchors.
pub const MAX_JITTER_SIGMA: f64 = 2.0;
/// Vertices of each annotation outline.
pub const OUTLINE_VERTICES: usize = 64;
const WHITE: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub label: TissueLabel,
    /// Level-0 pixel coordinates.
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub jitter_sigma: f64,
}

fn default_mag() -> f64 {
    DEFAULT_BASE_MAGNIFICATION
}

fn default_pixel() -> f64 {
    DEFAULT_PIXEL_SIZE_UM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    /// Pyramid levels; level `i` has downsample `2^i`.
    pub levels: usize,
    pub blobs: Vec<Blob>,
    pub seed: u64,
    #[serde(default = "default_mag")]
    pub base_magnification: f64,
    #[serde(default = "default_pixel")]
    pub pixel_size_um: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAreas {
    pub benign: u64,
    pub malignant: u64,
    pub normal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub slide_id: String,
    pub verdict: Verdict,
    pub areas: LabelAreas,
}

impl TruthRecord {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub slide_dir: PathBuf,
    pub annotations: PathBuf,
    pub truth_path: PathBuf,
    pub truth: TruthRecord,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slide_id.is_empty() || self.slide_id.contains(['/', '\\']) {
            return Err(Error::InvalidArgument(format!("invalid slide id {:?}", self.slide_id)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::ZeroArea {
                width: self.width,
                height: self.height,
            });
        }
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidArgument(format!(
                "level count {} outside 1..=16",
                self.levels
            )));
        }
        for (i, b) in self.blobs.iter().enumerate() {
            let [cx, cy] = b.center;
            let r = b.radius;
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidArgument(format!("blob {i}: radius must be positive")));
            }
            let (w, h) = (f64::from(self.width), f64::from(self.height));
            if !(cx - r >= 0.0 && cy - r >= 0.0 && cx + r <= w && cy + r <= h) {
                return Err(Error::OutOfBounds(format!(
                    "blob {i} (centre ({cx}, {cy}), radius {r}) exceeds the {}x{} slide",
                    self.width, self.height
                )));
            }
            if !(0.0..=MAX_JITTER_SIGMA).contains(&b.jitter_sigma) {
                return Err(Error::InvalidArgument(format!(
                    "blob {i}: jitter sigma {} outside [0, {MAX_JITTER_SIGMA}]",
                    b.jitter_sigma
                )));
            }
        }
        Ok(())
    }

    /// A slide with blobs laid out on a 3x3 grid of slots (never overlapping).
    /// Melanoma slides get malignant blobs covering well over the ratio
    /// threshold; benign slides get benign blobs only. Both get normal tissue.
    pub fn random(slide_id: &str, width: u32, height: u32, levels: usize, seed: u64, verdict: Verdict) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots: Vec<usize> = (0..9).collect();
        // Fisher-Yates with our own rng keeps the layout tied to `seed`.
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let mut labels = match verdict {
            Verdict::Melanoma => {
                let mut l = vec![TissueLabel::Malignant; rng.random_range(1..=2)];
                l.extend(vec![TissueLabel::Benign; rng.random_range(0..=2)]);
                l
            }
            Verdict::BenignNevus => vec![TissueLabel::Benign; rng.random_range(1..=3)],
        };
        labels.extend(vec![TissueLabel::Normal; rng.random_range(0..=2)]);
        let (sw, sh) = (f64::from(width) / 3.0, f64::from(height) / 3.0);
        let blobs = labels
            .into_iter()
            .zip(slots)
            .map(|(label, slot)| {
                let radius = sw.min(sh) * rng.random_range(0.30..0.45);
                Blob {
                    label,
                    center: [(slot % 3) as f64 * sw + sw / 2.0, (slot / 3) as f64 * sh + sh / 2.0],
                    radius,
                    jitter_sigma: 1.5,
                }
            })
            .collect();
        SynthSpec {
            slide_id: slide_id.to_string(),
            width,
            height,
            levels,
            blobs,
            seed,
            base_magnification: DEFAULT_BASE_MAGNIFICATION,
            pixel_size_um: DEFAULT_PIXEL_SIZE_UM,
        }
    }

    pub fn annotations(&self) -> AnnotationSet {
        let regions = self
            .blobs
            .iter()
            .map(|b| Region {
                polygon: (0..OUTLINE_VERTICES)
                    .map(|k| {
                        let a = TAU * k as f64 / OUTLINE_VERTICES as f64;
                        [b.center[0] + b.radius * a.cos(), b.center[1] + b.radius * a.sin()]
                    })
                    .collect(),
                label: b.label,
            })
            .collect();
        AnnotationSet { regions }
    }
}

/// Benign/malignant area ratio rule applied to painted areas.
pub fn truth_verdict(areas: &LabelAreas) -> Verdict {
    let lesion = areas.malignant + areas.benign;
    if lesion > 0 && areas.malignant as f64 / lesion as f64 >= DEFAULT_T_R {
        Verdict::Melanoma
    } else {
        Verdict::BenignNevus
    }
}

fn png_writer(path: &Path, width: u32, height: u32) -> Result<png::StreamWriter<'static, BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    enc.write_header()
        .and_then(|w| w.into_stream_writer())
        .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

/// Box-downsampling accumulator for one coarser level. Each cell is the
/// 2x2 block of units from the next finer level; padding outside the image
/// counts as white, and sums are carried unrounded so every level is the
/// exact box average of level 0.
struct LevelAcc {
    width: u32,
    height: u32,
    /// Level-0 pixels per finer-level unit.
    unit_area: u64,
    finer_width: u32,
    sums: Vec<u64>,
    rows_in: u32,
    rows_out: u32,
    writer: png::StreamWriter<'static, BufWriter<File>>,
    out: Vec<u8>,
}

impl LevelAcc {
    /// Adds one finer row of per-unit sums; returns this level's completed
    /// sum row if the block row is now full.
    fn push(&mut self, row: &[u64], last: bool) -> Result<Option<Vec<u64>>> {
        for (i, chunk) in row.chunks_exact(3).enumerate() {
            let cell = i / 2 * 3;
            for (sum, &v) in self.sums[cell..cell + 3].iter_mut().zip(chunk) {
                *sum += v;
            }
        }
        self.rows_in += 1;
        if self.rows_in < 2 && !last {
            return Ok(None);
        }
        let pad = u64::from(WHITE) * self.unit_area;
        let finer_w = self.finer_width as usize;
        for cell in 0..self.width as usize {
            let cols = (finer_w - 2 * cell).min(2) as u64;
            let missing = 4 - cols * u64::from(self.rows_in);
            for c in 0..3 {
                self.sums[cell * 3 + c] += missing * pad;
            }
        }
        let area = self.unit_area * 4;
        for (o, &s) in self.out.iter_mut().zip(&self.sums) {
            *o = ((s + area / 2) / area) as u8;
        }
        self.writer
            .write_all(&self.out)
            .map_err(|e| Error::Encode(e.to_string()))?;
        self.rows_out += 1;
        self.rows_in = 0;
        let done = std::mem::replace(&mut self.sums, vec![0; self.width as usize * 3]);
        Ok(Some(done))
    }
}

/// Writes the pyramid, annotation file and truth record for `spec` under
/// `out_dir`. Rows are generated and downsampled in a single streaming pass.
pub fn generate_slide(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let slide_dir = out_dir.join(&spec.slide_id);
    fs::create_dir_all(&slide_dir).map_err(|e| Error::io(&slide_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<Option<Normal<f64>>> = spec
        .blobs
        .iter()
        .map(|b| (b.jitter_sigma > 0.0).then(|| Normal::new(0.0, b.jitter_sigma).expect("validated sigma")))
        .collect();

    let (w, h) = (spec.width, spec.height);
    let mut levels_meta = Vec::with_capacity(spec.levels);
    let mut base = png_writer(&slide_dir.join("level_0.png"), w, h)?;
    levels_meta.push(LevelMeta {
        file: "level_0.png".into(),
        width: w,
        height: h,
        downsample: 1,
    });
    let mut accs: Vec<LevelAcc> = Vec::with_capacity(spec.levels.saturating_sub(1));
    let (mut fw, mut fh) = (w, h);
    for i in 1..spec.levels {
        let (lw, lh) = (fw.div_ceil(2), fh.div_ceil(2));
        let file = format!("level_{i}.png");
        accs.push(LevelAcc {
            width: lw,
            height: lh,
            unit_area: 1u64 << (2 * (i - 1)),
            finer_width: fw,
            sums: vec![0; lw as usize * 3],
            rows_in: 0,
            rows_out: 0,
            writer: png_writer(&slide_dir.join(&file), lw, lh)?,
            out: vec![0; lw as usize * 3],
        });
        levels_meta.push(LevelMeta {
            file,
            width: lw,
            height: lh,
            downsample: 1 << i,
        });
        (fw, fh) = (lw, lh);
    }

    let mut areas = [0u64; 3];
    let mut row = vec![WHITE; w as usize * 3];
    let mut owner: Vec<Option<usize>> = vec![None; w as usize];
    for y in 0..h {
        row.fill(WHITE);
        owner.fill(None);
        let yc = f64::from(y) + 0.5;
        for (bi, b) in spec.blobs.iter().enumerate() {
            let dy = yc - b.center[1];
            let r2 = b.radius * b.radius;
            if dy * dy > r2 {
                continue;
            }
            let half = (r2 - dy * dy).sqrt();
            let lo = ((b.center[0] - half - 0.5).floor().max(0.0)) as u32;
            let hi = ((b.center[0] + half + 0.5).ceil().min(f64::from(w))) as u32;
            for x in lo..hi {
                let dx = f64::from(x) + 0.5 - b.center[0];
                if dx * dx + dy * dy <= r2 {
                    owner[x as usize] = Some(bi);
                }
            }
        }
        for (x, o) in owner.iter().enumerate() {
            let Some(bi) = *o else { continue };
            let b = &spec.blobs[bi];
            areas[b.label.index()] += 1;
            let anchor = ANCHORS[b.label.index()];
            for c in 0..3 {
                let mut v = f64::from(anchor[c]);
                if let Some(n) = &noise[bi] {
                    let s = b.jitter_sigma * 3.0;
                    v += n.sample(&mut rng).clamp(-s, s).round();
                }
                row[x * 3 + c] = v.clamp(0.0, 255.0) as u8;
            }
        }
        base.write_all(&row).map_err(|e| Error::Encode(e.to_string()))?;

        // Feed the row down the pyramid.
        let mut carry: Option<Vec<u64>> = Some(row.iter().map(|&v| u64::from(v)).collect());
        let mut last = y + 1 == h;
        for acc in accs.iter_mut() {
            let Some(sums) = carry.take() else { break };
            carry = acc.push(&sums, last)?;
            last = last && acc.rows_out == acc.height;
        }
    }
    base.finish().map_err(|e| Error::Encode(e.to_string()))?;
    for acc in accs {
        debug_assert_eq!(acc.rows_out, acc.height);
        acc.writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
    }

    let meta = PyramidMeta {
        base_magnification: spec.base_magnification,
        pixel_size_um: spec.pixel_size_um,
        levels: levels_meta,
    };
    let meta_path = slide_dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    let annotations = out_dir.join(format!("{}.geojson", spec.slide_id));
    spec.annotations().save(&annotations)?;

    let areas = LabelAreas {
        benign: areas[0],
        malignant: areas[1],
        normal: areas[2],
    };
    let truth = TruthRecord {
        slide_id: spec.slide_id.clone(),
        verdict: truth_verdict(&areas),
        areas,
    };
    let truth_path = out_dir.join(format!("{}.truth.json", spec.slide_id));
    fs::write(&truth_path, serde_json::to_vec_pretty(&truth)?).map_err(|e| Error::io(&truth_path, e))?;
    log::info!("generated {} ({}x{}, {} levels)", spec.slide_id, w, h, spec.levels);
    Ok(SynthOutput {
        slide_dir,
        annotations,
        truth_path,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_io::{open_slide, read_region};
    use crate::tiling::ForegroundParams;

    fn spec(blobs: Vec<Blob>) -> SynthSpec {
        SynthSpec {
            slide_id: "synth".into(),
            width: 203,
            height: 150,
            levels: 4,
            blobs,
            seed: 11,
            base_magnification: 40.0,
            pixel_size_um: 0.2199,
        }
    }

    fn blob(label: TissueLabel, cx: f64, cy: f64, r: f64) -> Blob {
        Blob {
            label,
            center: [cx, cy],
            radius: r,
            jitter_sigma: 2.0,
        }
    }

    #[test]
    fn truth_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_slide(&spec(vec![blob(TissueLabel::Malignant, 50.0, 50.0, 30.0)]), dir.path()).unwrap();
        assert_eq!(m.truth.verdict, Verdict::Melanoma);
        let dir = tempfile::tempdir().unwrap();
        let b = generate_slide(&spec(vec![blob(TissueLabel::Benign, 50.0, 50.0, 30.0)]), dir.path()).unwrap();
        assert_eq!(b.truth.verdict, Verdict::BenignNevus);
        assert!(b.truth.areas.benign > 2700);
    }

    #[test]
    fn deterministic_output() {
        let s = spec(vec![
            blob(TissueLabel::Malignant, 60.0, 60.0, 40.0),
            blob(TissueLabel::Benign, 150.0, 90.0, 40.0),
        ]);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_slide(&s, a.path()).unwrap();
        generate_slide(&s, b.path()).unwrap();
        for f in [
            "synth/level_0.png",
            "synth/level_3.png",
            "synth/meta.json",
            "synth.geojson",
            "synth.truth.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn levels_are_box_downsamples() {
        let s = spec(vec![
            blob(TissueLabel::Malignant, 60.0, 60.0, 40.0),
            blob(TissueLabel::Normal, 150.0, 90.0, 45.0),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_slide(&s, dir.path()).unwrap();
        let slide = open_slide(&out.slide_dir).unwrap();
        assert_eq!(slide.level_downsamples(), vec![1, 2, 4, 8]);
        let base = read_region(&slide, 0, 0, 0, 203, 150).unwrap();
        for level in 1..4 {
            let ds = 1u32 << level;
            let (lw, lh) = slide.level_dimensions(level).unwrap();
            let tile = read_region(&slide, level, 0, 0, lw, lh).unwrap();
            for y in 0..lh {
                for x in 0..lw {
                    for c in 0..3 {
                        let mut sum = 0u64;
                        for by in 0..ds {
                            for bx in 0..ds {
                                let (px, py) = (x * ds + bx, y * ds + by);
                                sum += if px < 203 && py < 150 {
                                    u64::from(base.pixel(px, py)[c])
                                } else {
                                    255
                                };
                            }
                        }
                        let n = u64::from(ds * ds);
                        assert_eq!(u64::from(tile.pixel(x, y)[c]), (sum + n / 2) / n);
                    }
                }
            }
        }
    }

    #[test]
    fn blob_pixels_stay_nearest_their_anchor_and_are_foreground() {
        let s = spec(vec![
            blob(TissueLabel::Benign, 40.0, 40.0, 35.0),
            blob(TissueLabel::Malignant, 110.0, 60.0, 35.0),
            blob(TissueLabel::Normal, 165.0, 110.0, 35.0),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_slide(&s, dir.path()).unwrap();
        let slide = open_slide(&out.slide_dir).unwrap();
        let tile = read_region(&slide, 0, 0, 0, 203, 150).unwrap();
        let fg = ForegroundParams::default();
        let mut seen = 0;
        for p in tile.pixels.chunks_exact(3) {
            if p == [255, 255, 255] {
                continue;
            }
            seen += 1;
            let d: Vec<i32> = ANCHORS
                .iter()
                .map(|a| (0..3).map(|c| (i32::from(p[c]) - i32::from(a[c])).pow(2)).sum())
                .collect();
            let nearest = (0..3).min_by_key(|&i| d[i]).unwrap();
            assert!(d[nearest] <= 3 * 36, "pixel {p:?} drifted too far");
            assert!(fg.is_foreground([p[0], p[1], p[2]]));
        }
        let a = out.truth.areas;
        assert_eq!(seen as u64, a.benign + a.malignant + a.normal);
    }

    #[test]
    fn rejects_out_of_bounds_blob() {
        let dir = tempfile::tempdir().unwrap();
        let err = generate_slide(&spec(vec![blob(TissueLabel::Benign, 10.0, 10.0, 30.0)]), dir.path()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds(_)));
        let mut bad = spec(vec![blob(TissueLabel::Benign, 50.0, 50.0, 10.0)]);
        bad.blobs[0].jitter_sigma = 9.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn random_specs_are_valid_and_match_requested_verdict() {
        for seed in 0..20 {
            let want = if seed % 2 == 0 {
                Verdict::Melanoma
            } else {
                Verdict::BenignNevus
            };
            let s = SynthSpec::random("r", 3000, 2000, 3, seed, want);
            s.validate().unwrap();
            let m: f64 = s
                .blobs
                .iter()
                .filter(|b| b.label == TissueLabel::Malignant)
                .map(|b| b.radius.powi(2))
                .sum();
            let b: f64 = s
                .blobs
                .iter()
                .filter(|b| b.label == TissueLabel::Benign)
                .map(|b| b.radius.powi(2))
                .sum();
            let got = if m > 0.0 && m / (m + b) >= DEFAULT_T_R {
                Verdict::Melanoma
            } else {
                Verdict::BenignNevus
            };
            assert_eq!(got, want);
        }
    }
}
