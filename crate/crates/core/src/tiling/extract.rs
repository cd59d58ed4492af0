use crate::error::{Error, Result};
use crate::slide_io::{read_region, RgbTile, RowReader, SlideHandle};

use super::plan::PatchRecord;

/// Memory accounting for a batch extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub patches: usize,
    /// Largest number of pixel bytes held in partially filled tiles at once.
    pub peak_buffered_bytes: usize,
    pub rows_decoded: u64,
}

/// Patch origin in the pixel grid of its level.
fn level_origin(slide: &SlideHandle, rec: &PatchRecord) -> Result<(u32, u32)> {
    let ds = slide.level_downsample(rec.level)?;
    let (w, h) = slide.level_dimensions(rec.level)?;
    if rec.size_px == 0 {
        return Err(Error::ZeroArea { width: 0, height: 0 });
    }
    let (lx, ly) = (rec.x / ds, rec.y / ds);
    if lx >= w || ly >= h {
        return Err(Error::OutOfBounds(format!(
            "patch origin ({}, {}) lies outside level {} ({}x{})",
            rec.x, rec.y, rec.level, w, h
        )));
    }
    Ok((lx, ly))
}

/// Reads one patch. Edge patches that overhang the level are padded white.
pub fn extract_patch(slide: &SlideHandle, rec: &PatchRecord) -> Result<RgbTile> {
    let (lx, ly) = level_origin(slide, rec)?;
    read_region(slide, rec.level, i64::from(lx), i64::from(ly), rec.size_px, rec.size_px)
}

struct Pending {
    index: usize,
    lx: u32,
    end: u32,
    tile: RgbTile,
}

/// Extracts every record in one sequential pass per level.
///
/// Rows are decoded once each; a tile is allocated when the scan reaches its
/// first row and handed to `sink` (with the record's index) as soon as its
/// last row is copied, so at most one band of patches is buffered. Tiles
/// arrive ordered by level, then by row of completion, not by index.
pub fn extract_patches<F>(slide: &SlideHandle, records: &[PatchRecord], mut sink: F) -> Result<ExtractStats>
where
    F: FnMut(usize, RgbTile) -> Result<()>,
{
    let mut stats = ExtractStats::default();
    let mut order: Vec<(usize, u32, u32)> = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let (lx, ly) = level_origin(slide, rec)?;
        order.push((i, lx, ly));
    }
    order.sort_by_key(|&(i, _, ly)| (records[i].level, ly, i));

    let mut start = 0;
    while start < order.len() {
        let level = records[order[start].0].level;
        let stop = start
            + order[start..]
                .iter()
                .take_while(|&&(i, _, _)| records[i].level == level)
                .count();
        stream_level(slide, level, records, &order[start..stop], &mut stats, &mut sink)?;
        start = stop;
    }
    Ok(stats)
}

fn stream_level<F>(
    slide: &SlideHandle,
    level: usize,
    records: &[PatchRecord],
    order: &[(usize, u32, u32)],
    stats: &mut ExtractStats,
    sink: &mut F,
) -> Result<()>
where
    F: FnMut(usize, RgbTile) -> Result<()>,
{
    let info = slide.level(level)?;
    let mut rows = RowReader::open(info)?;
    let width = info.width;
    let mut next = 0;
    let mut active: Vec<Pending> = Vec::new();
    let mut buffered = 0usize;
    let first_row = order[0].2;
    rows.skip_to(first_row)?;
    stats.rows_decoded += u64::from(first_row);

    let mut y = first_row;
    while next < order.len() || !active.is_empty() {
        while next < order.len() && order[next].2 == y {
            let (index, lx, ly) = order[next];
            let size = records[index].size_px;
            let mut tile = RgbTile::filled(size, size, [255, 255, 255]);
            tile.level = level;
            tile.origin_x = i64::from(lx);
            tile.origin_y = i64::from(ly);
            buffered += tile.pixels.len();
            active.push(Pending {
                index,
                lx,
                end: ly + size,
                tile,
            });
            next += 1;
        }
        stats.peak_buffered_bytes = stats.peak_buffered_bytes.max(buffered);

        if y < info.height {
            let row = rows.next_row()?;
            stats.rows_decoded += 1;
            for p in &mut active {
                let span = (p.tile.width.min(width - p.lx) * 3) as usize;
                let src = p.lx as usize * 3;
                let dst = (y - p.tile.origin_y as u32) as usize * p.tile.width as usize * 3;
                p.tile.pixels[dst..dst + span].copy_from_slice(&row[src..src + span]);
            }
        }
        y += 1;

        // Tiles past the last level row only hold white padding from here on.
        let (done, keep): (Vec<Pending>, Vec<Pending>) =
            active.into_iter().partition(|p| p.end <= y || y >= info.height);
        active = keep;
        for p in done {
            buffered -= p.tile.pixels.len();
            stats.patches += 1;
            sink(p.index, p.tile)?;
        }
        if active.is_empty() && next < order.len() && order[next].2 > y {
            let gap = order[next].2;
            rows.skip_to(gap)?;
            stats.rows_decoded += u64::from(gap - y);
            y = gap;
        }
    }
    Ok(())
}
