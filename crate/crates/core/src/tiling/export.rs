use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::slide_io::{RgbTile, SlideHandle};

use super::extract::{extract_patch, extract_patches};
use super::plan::PatchRecord;
use super::preprocess::{augment_patch, NormalizationStats, StatsAccumulator};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Directory for patches planned without a ground label.
pub const UNLABELED_DIR: &str = "unlabeled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Path relative to the dataset root.
    pub file: String,
    pub record: PatchRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub file: String,
    /// Index into `entries` of the source patch.
    pub source: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
    /// Channel statistics over the original (non-augmented) patches.
    pub stats: NormalizationStats,
    pub augmented: Vec<AugmentedEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn patch_file_name(rec: &PatchRecord) -> String {
    format!("{}_{}_{}_{}.png", rec.slide_id, rec.x, rec.y, rec.level)
}

fn label_dir(label: Option<TissueLabel>) -> &'static str {
    label.map_or(UNLABELED_DIR, TissueLabel::as_str)
}

fn save_rgb_png(path: &Path, tile: &RgbTile) -> Result<()> {
    image::save_buffer(
        path,
        &tile.pixels,
        tile.width,
        tile.height,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
}

/// Writes patch datasets, possibly spanning several slides, under one root.
pub struct DatasetWriter {
    root: PathBuf,
    entries: Vec<DatasetEntry>,
    stats: StatsAccumulator,
    /// Slide path per entry, kept to re-read sources for augmentation.
    sources: Vec<PathBuf>,
}

impl DatasetWriter {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(DatasetWriter {
            root,
            entries: Vec::new(),
            stats: StatsAccumulator::new(),
            sources: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Extracts and writes every record of one slide.
    pub fn add_slide(&mut self, slide: &SlideHandle, records: &[PatchRecord]) -> Result<()> {
        for label in records.iter().map(|r| label_dir(r.ground_label)) {
            let dir = self.root.join(label);
            if !dir.exists() {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
        let base = self.entries.len();
        let mut files = vec![String::new(); records.len()];
        let root = &self.root;
        let stats = &mut self.stats;
        extract_patches(slide, records, |i, tile| {
            let rec = &records[i];
            let file = format!("{}/{}", label_dir(rec.ground_label), patch_file_name(rec));
            save_rgb_png(&root.join(&file), &tile)?;
            stats.add(&tile);
            files[i] = file;
            Ok(())
        })?;
        for (rec, file) in records.iter().zip(files) {
            self.entries.push(DatasetEntry {
                file,
                record: rec.clone(),
            });
            self.sources.push(slide.path.clone());
        }
        log::info!("{}: wrote {} patches", slide.id, self.entries.len() - base);
        Ok(())
    }

    /// Adds augmented copies of labeled patches until every label present
    /// matches the largest label count. Copies cycle through the sources of
    /// each label in order; the seed of copy `k` is `seed + k`.
    fn balance(&self, seed: u64) -> Result<Vec<AugmentedEntry>> {
        let mut by_label: [Vec<usize>; 3] = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(l) = e.record.ground_label {
                by_label[l.index()].push(i);
            }
        }
        let target = by_label.iter().map(Vec::len).max().unwrap_or(0);
        let mut augmented = Vec::new();
        let mut slides: Vec<(PathBuf, SlideHandle)> = Vec::new();
        let mut k = 0u64;
        for group in by_label.iter().filter(|g| !g.is_empty()) {
            for n in 0..target - group.len() {
                let source = group[n % group.len()];
                let path = &self.sources[source];
                let slide = match slides.iter().position(|(p, _)| p == path) {
                    Some(i) => &slides[i].1,
                    None => {
                        slides.push((path.clone(), crate::slide_io::open_slide(path)?));
                        &slides.last().expect("just pushed").1
                    }
                };
                let rec = &self.entries[source].record;
                let tile = augment_patch(&extract_patch(slide, rec)?, seed + k)?;
                let stem = patch_file_name(rec);
                let file = format!(
                    "{}/{}_aug{}.png",
                    label_dir(rec.ground_label),
                    stem.trim_end_matches(".png"),
                    k
                );
                save_rgb_png(&self.root.join(&file), &tile)?;
                augmented.push(AugmentedEntry {
                    file,
                    source,
                    seed: seed + k,
                });
                k += 1;
            }
        }
        Ok(augmented)
    }

    /// Computes statistics, optionally balances classes, and writes the manifest.
    pub fn finish(self, augment_minority: bool, seed: u64) -> Result<DatasetManifest> {
        let stats = self.stats.finish()?;
        let augmented = if augment_minority {
            self.balance(seed)?
        } else {
            Vec::new()
        };
        let manifest = DatasetManifest {
            entries: self.entries,
            stats,
            augmented,
        };
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
