//! Stage orchestration: segment, plan/extract, infer, map, verdict.
//!
//! Every stage reads and writes files in a per-slide run directory
//! (`<out>/<slide_id>/`), so stages can run separately or chained. Payload
//! files never contain timestamps; wall-clock timings go to `timing.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{load_backend, predict, Backend, BackendDescriptor, Concurrency, ProbabilityVector};
use crate::decision::{
    assign_class, build_map, calibrate, composite, malignancy_ratio, render_map, slide_verdict, Calibration,
    LocalizationMap, PatchClass, SlideVerdict, Thresholds, ValidationSlide, Verdict, DEFAULT_T_P, DEFAULT_T_R,
};
use crate::error::{Error, Result};
use crate::evaluation::{metrics, ConfusionMatrix, MetricsReport};
use crate::label::TissueLabel;
use crate::slide_io::{level_for_magnification, load_annotations, open_slide, read_region, SlideHandle};
use crate::tiling::{
    extract_patches, plan_patches, rasterize_annotations, segment_level, DatasetManifest, DatasetWriter,
    ForegroundParams, HueRange, LabelMask, OverlapRule, PatchRecord, PlanMode, PlanParams, DEFAULT_OVERLAP_MIN,
    DEFAULT_PATCH_SIZE, DEFAULT_SAT_MIN,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const MAP_JSON_FILE: &str = "map.json";
pub const MAP_PNG_FILE: &str = "map.png";
pub const COMPOSITE_FILE: &str = "composite.png";
pub const VERDICT_FILE: &str = "verdict.json";
pub const FOREGROUND_FILE: &str = "foreground.png";
pub const TIMING_FILE: &str = "timing.json";
pub const DATASET_DIR: &str = "dataset";

/// Patches per inference work unit. Fixed so that results do not depend on
/// the worker count.
const SUB_BATCH: usize = 32;
/// Batches buffered between extraction and inference.
const QUEUE_DEPTH: usize = 2;

fn default_magnification() -> f64 {
    10.0
}
fn default_patch_size() -> u32 {
    DEFAULT_PATCH_SIZE
}
fn default_overlap() -> f64 {
    DEFAULT_OVERLAP_MIN
}
fn default_sat_min() -> f64 {
    DEFAULT_SAT_MIN
}
fn default_t_p() -> f64 {
    DEFAULT_T_P
}
fn default_t_r() -> f64 {
    DEFAULT_T_R
}
fn default_batch() -> usize {
    256
}
fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
fn default_out() -> PathBuf {
    PathBuf::from("melanoscope-out")
}
fn default_budget() -> f64 {
    180.0
}
fn default_render_scale() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub slides: Vec<PathBuf>,
    /// Empty, or one annotation file per slide.
    #[serde(default)]
    pub annotations: Vec<PathBuf>,
    #[serde(default = "default_magnification")]
    pub magnification: f64,
    /// Patch side in pixels at the target magnification.
    #[serde(default = "default_patch_size")]
    pub patch_size: u32,
    #[serde(default = "default_overlap")]
    pub overlap_min: f64,
    #[serde(default)]
    pub hue_range: HueRange,
    #[serde(default = "default_sat_min")]
    pub sat_min: f64,
    #[serde(default)]
    pub overlap_rule: OverlapRule,
    /// Planning mode; `None` lets each stage choose (tissue for the full
    /// pipeline, annotated for dataset extraction).
    #[serde(default)]
    pub plan_mode: Option<PlanMode>,
    #[serde(default)]
    pub backend: BackendDescriptor,
    #[serde(default = "default_t_p")]
    pub t_p: f64,
    #[serde(default = "default_t_r")]
    pub t_r: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Per-slide wall-clock budget; exceeding it only logs a warning.
    #[serde(default = "default_budget")]
    pub time_budget_secs: f64,
    /// Balance dataset classes with augmented copies on export.
    #[serde(default)]
    pub augment_minority: bool,
    /// Also write a thumbnail/map side-by-side image.
    #[serde(default)]
    pub composite: bool,
    #[serde(default = "default_render_scale")]
    pub render_scale: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn range_err(msg: String) -> Error {
    Error::Config(msg)
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            t_p: self.t_p,
            t_r: self.t_r,
        }
    }

    pub fn foreground(&self) -> Result<ForegroundParams> {
        ForegroundParams::new(self.hue_range, self.sat_min).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnification.is_finite() && self.magnification > 0.0) {
            return Err(range_err(format!(
                "magnification {} must be positive",
                self.magnification
            )));
        }
        if !(1..=8192).contains(&self.patch_size) {
            return Err(range_err(format!("patch_size {} outside [1, 8192]", self.patch_size)));
        }
        if !(self.overlap_min > 0.0 && self.overlap_min <= 1.0) {
            return Err(range_err(format!("overlap_min {} outside (0, 1]", self.overlap_min)));
        }
        if !(0.0..=1.0).contains(&self.sat_min) {
            return Err(range_err(format!("sat_min {} outside [0, 1]", self.sat_min)));
        }
        if !(self.t_p > 0.0 && self.t_p <= 1.0) {
            return Err(range_err(format!("t_p {} outside (0, 1]", self.t_p)));
        }
        if !(0.0..=1.0).contains(&self.t_r) {
            return Err(range_err(format!("t_r {} outside [0, 1]", self.t_r)));
        }
        if self.batch_size == 0 {
            return Err(range_err("batch_size must be at least 1".into()));
        }
        if !(1..=1024).contains(&self.workers) {
            return Err(range_err(format!("workers {} outside [1, 1024]", self.workers)));
        }
        if !(self.time_budget_secs.is_finite() && self.time_budget_secs > 0.0) {
            return Err(range_err(format!(
                "time_budget_secs {} must be positive",
                self.time_budget_secs
            )));
        }
        if !(1..=64).contains(&self.render_scale) {
            return Err(range_err(format!("render_scale {} outside [1, 64]", self.render_scale)));
        }
        if !self.annotations.is_empty() && self.annotations.len() != self.slides.len() {
            return Err(range_err(format!(
                "{} annotation files for {} slides",
                self.annotations.len(),
                self.slides.len()
            )));
        }
        if let Some(t) = self.backend.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(range_err(format!("backend temperature {t} must be positive")));
            }
        }
        Ok(())
    }

    pub fn annotation_for(&self, slide_index: usize) -> Option<&Path> {
        self.annotations.get(slide_index).map(PathBuf::as_path)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

/// Planned patches of one slide plus the geometry needed to place them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub slide_id: String,
    pub slide_path: PathBuf,
    pub target_magnification: f64,
    pub level: usize,
    pub downsample: u32,
    pub level_width: u32,
    pub level_height: u32,
    /// Patch side at `level`.
    pub patch_size: u32,
    pub records: Vec<PatchRecord>,
}

impl PatchManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub x: u32,
    pub y: u32,
    pub level: usize,
    pub ground_label: Option<TissueLabel>,
    pub probs: ProbabilityVector,
}

pub fn run_dir(out: &Path, slide_id: &str) -> PathBuf {
    out.join(slide_id)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Wall-clock seconds per stage, merged into the run's sidecar file.
fn record_timing(dir: &Path, stage: &str, secs: f64) -> Result<()> {
    let path = dir.join(TIMING_FILE);
    let mut timings: BTreeMap<String, f64> = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    timings.insert(stage.to_string(), secs);
    write_json(&path, &timings)
}

/// Slide geometry at the configured magnification.
pub struct SlideLevel {
    pub level: usize,
    pub downsample: u32,
    pub dims: (u32, u32),
    /// Patch side at `level` covering `patch_size` pixels at the target magnification.
    pub patch_px: u32,
}

pub fn slide_level(slide: &SlideHandle, cfg: &PipelineConfig) -> Result<SlideLevel> {
    let (level, residual) = level_for_magnification(slide, cfg.magnification)?;
    let patch_px = (f64::from(cfg.patch_size) / residual).round().max(1.0) as u32;
    if residual != 1.0 {
        log::info!(
            "{}: no level at {}x; reading {patch_px}px patches at level {level}",
            slide.id,
            cfg.magnification
        );
    }
    Ok(SlideLevel {
        level,
        downsample: slide.level_downsample(level)?,
        dims: slide.level_dimensions(level)?,
        patch_px,
    })
}

/// Writes the foreground mask of the target level as `foreground.png`.
pub fn segment(slide_path: &Path, cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let t0 = Instant::now();
    let slide = open_slide(slide_path)?;
    let geo = slide_level(&slide, cfg)?;
    let mask = segment_level(&slide, geo.level, &cfg.foreground()?)?;
    let dir = run_dir(&cfg.out, &slide.id);
    create_dir(&dir)?;
    let path = dir.join(FOREGROUND_FILE);
    mask.save_png(&path)?;
    log::info!(
        "{}: {} of {} pixels are tissue",
        slide.id,
        mask.count(),
        mask.bits.len()
    );
    record_timing(&dir, "segment", t0.elapsed().as_secs_f64())?;
    Ok(path)
}

/// Plans patches for one slide and writes `manifest.json`.
pub fn plan_slide(
    slide: &SlideHandle,
    annotations: Option<&Path>,
    mode: PlanMode,
    cfg: &PipelineConfig,
) -> Result<PatchManifest> {
    let geo = slide_level(slide, cfg)?;
    let fg = segment_level(slide, geo.level, &cfg.foreground()?)?;
    let labels = match annotations {
        Some(path) => {
            let ann = load_annotations(path)?.clipped_to(f64::from(slide.base_width), f64::from(slide.base_height));
            rasterize_annotations(&ann, slide, geo.level, geo.dims.0, geo.dims.1)?
        }
        None => {
            if mode == PlanMode::Annotated {
                log::warn!("{}: no annotations; the annotated plan is empty", slide.id);
            }
            LabelMask::empty(geo.level, geo.dims.0, geo.dims.1)
        }
    };
    let params = PlanParams {
        patch_size: geo.patch_px,
        overlap_min: cfg.overlap_min,
        rule: cfg.overlap_rule,
        mode,
    };
    let records = plan_patches(slide, &fg, &labels, &params)?;
    log::info!("{}: planned {} patches at level {}", slide.id, records.len(), geo.level);
    Ok(PatchManifest {
        slide_id: slide.id.clone(),
        slide_path: slide.path.clone(),
        target_magnification: cfg.magnification,
        level: geo.level,
        downsample: geo.downsample,
        level_width: geo.dims.0,
        level_height: geo.dims.1,
        patch_size: geo.patch_px,
        records,
    })
}

/// Plans and writes `<out>/<slide_id>/manifest.json`.
pub fn plan_stage(
    slide_path: &Path,
    annotations: Option<&Path>,
    mode: PlanMode,
    cfg: &PipelineConfig,
) -> Result<PatchManifest> {
    let t0 = Instant::now();
    let slide = open_slide(slide_path)?;
    let manifest = plan_slide(&slide, annotations, mode, cfg)?;
    let dir = run_dir(&cfg.out, &slide.id);
    create_dir(&dir)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    record_timing(&dir, "plan", t0.elapsed().as_secs_f64())?;
    Ok(manifest)
}

/// Exports labeled patches of every configured slide to `<out>/dataset/`.
pub fn extract_dataset(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    if cfg.slides.is_empty() {
        return Err(Error::Config("no slides given".into()));
    }
    let mode = cfg.plan_mode.unwrap_or(PlanMode::Annotated);
    let mut writer = DatasetWriter::new(cfg.out.join(DATASET_DIR))?;
    for (i, path) in cfg.slides.iter().enumerate() {
        let manifest = plan_stage(path, cfg.annotation_for(i), mode, cfg)?;
        let slide = open_slide(path)?;
        writer.add_slide(&slide, &manifest.records)?;
    }
    writer.finish(cfg.augment_minority, cfg.seed)
}

/// Classifies every record, extracting patches in one streaming pass and
/// dispatching fixed-size sub-batches to the worker pool. Results are
/// returned in record order regardless of completion order.
pub fn classify_records(
    slide: &SlideHandle,
    records: &[PatchRecord],
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> Result<Vec<ProbabilityVector>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let pool = cfg.pool()?;
    let mut results: Vec<Option<ProbabilityVector>> = vec![None; records.len()];
    let (tx, rx) = mpsc::sync_channel::<Vec<(usize, crate::slide_io::RgbTile)>>(QUEUE_DEPTH);
    let batch_size = cfg.batch_size;

    std::thread::scope(|scope| -> Result<()> {
        let producer = scope.spawn(move || -> Result<()> {
            let mut batch = Vec::with_capacity(batch_size);
            let send = |batch: Vec<_>| {
                tx.send(batch)
                    .map_err(|_| Error::InvalidArgument("inference stopped early".into()))
            };
            let stats = extract_patches(slide, records, |i, tile| {
                batch.push((i, tile));
                if batch.len() == batch_size {
                    send(std::mem::replace(&mut batch, Vec::with_capacity(batch_size)))?;
                }
                Ok(())
            })?;
            if !batch.is_empty() {
                send(batch)?;
            }
            log::debug!(
                "{}: extracted {} patches, peak buffer {} bytes",
                slide.id,
                stats.patches,
                stats.peak_buffered_bytes
            );
            Ok(())
        });

        let mut outcome = Ok(());
        for batch in rx.iter() {
            let (indices, tiles): (Vec<usize>, Vec<_>) = batch.into_iter().unzip();
            let probs: Result<Vec<Vec<ProbabilityVector>>> = match backend.concurrency() {
                Concurrency::Shared => {
                    pool.install(|| tiles.par_chunks(SUB_BATCH).map(|c| predict(backend, c)).collect())
                }
                Concurrency::SingleSession => tiles.chunks(SUB_BATCH).map(|c| predict(backend, c)).collect(),
            };
            match probs {
                Ok(probs) => {
                    for (i, p) in indices.into_iter().zip(probs.into_iter().flatten()) {
                        results[i] = Some(p);
                    }
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        drop(rx);
        let produced = producer.join().expect("extraction thread panicked");
        outcome?;
        produced
    })?;

    results
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Model(format!("no prediction for patch {i}"))))
        .collect()
}

pub fn write_predictions(path: &Path, records: &[PatchRecord], probs: &[ProbabilityVector]) -> Result<()> {
    if records.len() != probs.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: probs.len(),
        });
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (index, (rec, p)) in records.iter().zip(probs).enumerate() {
        let row = PredictionRow {
            index,
            x: rec.x,
            y: rec.y,
            level: rec.level,
            ground_label: rec.ground_label,
            probs: p.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredictionRow = serde_json::from_str(&line)?;
        if row.index != rows.len() {
            return Err(Error::InvalidArgument(format!(
                "{} line {}: index {} out of sequence",
                path.display(),
                n + 1,
                row.index
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Checks that predictions line up with the manifest records.
fn align<'a>(manifest: &PatchManifest, rows: &'a [PredictionRow]) -> Result<Vec<&'a ProbabilityVector>> {
    if rows.len() != manifest.records.len() {
        return Err(Error::LengthMismatch {
            left: manifest.records.len(),
            right: rows.len(),
        });
    }
    for (rec, row) in manifest.records.iter().zip(rows) {
        if (rec.x, rec.y, rec.level) != (row.x, row.y, row.level) {
            return Err(Error::InvalidArgument(format!(
                "prediction {} is for ({}, {}) but the manifest lists ({}, {})",
                row.index, row.x, row.y, rec.x, rec.y
            )));
        }
    }
    Ok(rows.iter().map(|r| &r.probs).collect())
}

/// Reads a run directory's manifest, classifies its patches and writes
/// `predictions.jsonl`.
pub fn infer_stage(dir: &Path, cfg: &PipelineConfig) -> Result<Vec<ProbabilityVector>> {
    cfg.validate()?;
    let t0 = Instant::now();
    let manifest = PatchManifest::load(dir.join(MANIFEST_FILE))?;
    let slide = open_slide(&manifest.slide_path)?;
    let backend = load_backend(&cfg.backend)?;
    let probs = classify_records(&slide, &manifest.records, backend.as_ref(), cfg)?;
    write_predictions(&dir.join(PREDICTIONS_FILE), &manifest.records, &probs)?;
    record_timing(dir, "infer", t0.elapsed().as_secs_f64())?;
    Ok(probs)
}

pub fn map_from(manifest: &PatchManifest, probs: &[&ProbabilityVector], t_p: f64) -> Result<LocalizationMap> {
    let classes = probs
        .iter()
        .map(|p| assign_class(p, t_p))
        .collect::<Result<Vec<PatchClass>>>()?;
    build_map(
        &manifest.slide_id,
        &manifest.records,
        &classes,
        (manifest.level_width, manifest.level_height),
        manifest.patch_size,
        manifest.downsample,
    )
}

fn thumbnail(slide: &SlideHandle) -> Result<image::RgbImage> {
    let level = slide.level_count() - 1;
    let (w, h) = slide.level_dimensions(level)?;
    let tile = read_region(slide, level, 0, 0, w, h)?;
    image::RgbImage::from_raw(w, h, tile.pixels).ok_or_else(|| Error::Decode("thumbnail buffer size".into()))
}

/// Builds the localization map from a run directory and writes `map.json`
/// and `map.png` (plus `composite.png` when configured).
pub fn map_stage(dir: &Path, cfg: &PipelineConfig) -> Result<LocalizationMap> {
    cfg.validate()?;
    let t0 = Instant::now();
    let manifest = PatchManifest::load(dir.join(MANIFEST_FILE))?;
    let rows = read_predictions(&dir.join(PREDICTIONS_FILE))?;
    let probs = align(&manifest, &rows)?;
    let map = map_from(&manifest, &probs, cfg.t_p)?;
    write_map(dir, &map, &manifest, cfg)?;
    record_timing(dir, "map", t0.elapsed().as_secs_f64())?;
    Ok(map)
}

fn write_map(dir: &Path, map: &LocalizationMap, manifest: &PatchManifest, cfg: &PipelineConfig) -> Result<()> {
    map.save_json(&dir.join(MAP_JSON_FILE))?;
    let img = render_map(map, cfg.render_scale);
    let png = dir.join(MAP_PNG_FILE);
    img.save(&png)
        .map_err(|e| Error::Encode(format!("{}: {e}", png.display())))?;
    if cfg.composite {
        let slide = open_slide(&manifest.slide_path)?;
        let out = composite(&img, &thumbnail(&slide)?);
        let path = dir.join(COMPOSITE_FILE);
        out.save(&path)
            .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Computes the slide verdict from `map.json` and writes `verdict.json`.
pub fn verdict_stage(dir: &Path, cfg: &PipelineConfig) -> Result<SlideVerdict> {
    cfg.validate()?;
    let map = LocalizationMap::load_json(&dir.join(MAP_JSON_FILE))?;
    let verdict = slide_verdict(&map.slide_id, &malignancy_ratio(&map), &cfg.thresholds());
    write_json(&dir.join(VERDICT_FILE), &verdict)?;
    Ok(verdict)
}

/// Runs plan, inference, map and verdict for one slide.
pub fn run_slide(
    slide_path: &Path,
    annotations: Option<&Path>,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> Result<SlideVerdict> {
    let t0 = Instant::now();
    let slide = open_slide(slide_path)?;
    let mode = cfg.plan_mode.unwrap_or(PlanMode::Tissue);
    let manifest = plan_slide(&slide, annotations, mode, cfg)?;
    let dir = run_dir(&cfg.out, &slide.id);
    create_dir(&dir)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let t_plan = t0.elapsed().as_secs_f64();

    let probs = classify_records(&slide, &manifest.records, backend, cfg)?;
    write_predictions(&dir.join(PREDICTIONS_FILE), &manifest.records, &probs)?;
    let t_infer = t0.elapsed().as_secs_f64();

    let refs: Vec<&ProbabilityVector> = probs.iter().collect();
    let map = map_from(&manifest, &refs, cfg.t_p)?;
    write_map(&dir, &map, &manifest, cfg)?;
    let verdict = slide_verdict(&slide.id, &malignancy_ratio(&map), &cfg.thresholds());
    write_json(&dir.join(VERDICT_FILE), &verdict)?;

    let total = t0.elapsed().as_secs_f64();
    let timings = BTreeMap::from([
        ("plan".to_string(), t_plan),
        ("infer".to_string(), t_infer - t_plan),
        ("map_verdict".to_string(), total - t_infer),
        ("total".to_string(), total),
    ]);
    write_json(&dir.join(TIMING_FILE), &timings)?;
    if total > cfg.time_budget_secs {
        log::warn!(
            "{}: took {total:.1}s, over the {:.0}s budget",
            slide.id,
            cfg.time_budget_secs
        );
    }
    log::info!(
        "{}: rho {:.4} -> {} ({} patches, {total:.1}s)",
        slide.id,
        verdict.rho,
        verdict.verdict.as_str(),
        manifest.records.len()
    );
    Ok(verdict)
}

/// End-to-end run over every configured slide.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<SlideVerdict>> {
    cfg.validate()?;
    if cfg.slides.is_empty() {
        return Err(Error::Config("no slides given".into()));
    }
    let backend = load_backend(&cfg.backend)?;
    cfg.slides
        .iter()
        .enumerate()
        .map(|(i, path)| run_slide(path, cfg.annotation_for(i), backend.as_ref(), cfg))
        .collect()
}

/// Loads a run directory's manifest and predictions.
pub fn load_run(dir: &Path) -> Result<(PatchManifest, Vec<PredictionRow>)> {
    let manifest = PatchManifest::load(dir.join(MANIFEST_FILE))?;
    let rows = read_predictions(&dir.join(PREDICTIONS_FILE))?;
    align(&manifest, &rows)?;
    Ok((manifest, rows))
}

/// Patch-level metrics over run directories, using patches with a ground
/// label. Predictions are the raw argmax unless `after_threshold` is set, in
/// which case `t_p` applies and Unseen patches count toward coverage only.
pub fn patch_metrics(dirs: &[PathBuf], after_threshold: bool, t_p: f64) -> Result<MetricsReport> {
    let mut cm: Option<ConfusionMatrix> = None;
    for dir in dirs {
        let (_, rows) = load_run(dir)?;
        for row in rows {
            let Some(truth) = row.ground_label else { continue };
            let pred = if after_threshold {
                assign_class(&row.probs, t_p)?
            } else {
                row.probs.max().0.into()
            };
            let m = cm.get_or_insert_with(|| ConfusionMatrix::new(row.probs.arity()));
            if truth.index() >= m.k() {
                continue;
            }
            m.add(pred, truth)?;
        }
    }
    let cm = cm.ok_or(Error::Empty("no labeled patches in the given runs"))?;
    metrics(&cm)
}

/// One validation slide for calibration: a run directory and its known verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub run: PathBuf,
    pub truth: Verdict,
}

pub fn calibrate_runs(entries: &[ValidationEntry], tp_grid: &[f64], tr_grid: &[f64]) -> Result<Calibration> {
    let slides = entries
        .iter()
        .map(|e| {
            let (manifest, rows) = load_run(&e.run)?;
            ValidationSlide::from_map_inputs(
                &manifest.records,
                rows.into_iter().map(|r| r.probs).collect(),
                (manifest.level_width, manifest.level_height),
                manifest.patch_size,
                manifest.downsample,
                e.truth,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    calibrate(&slides, tp_grid, tr_grid)
}
