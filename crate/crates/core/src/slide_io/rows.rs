use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{LevelInfo, LevelSource};

pub(crate) fn png_dimensions(path: &Path) -> Result<(u32, u32)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    let info = decoder
        .read_header_info()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    Ok((info.width, info.height))
}

enum Inner {
    Png {
        reader: Box<png::Reader<BufReader<File>>>,
        color: png::ColorType,
    },
    Buffered(Arc<Vec<u8>>),
}

/// Sequential RGB row access to one pyramid level.
///
/// PNG levels are decoded incrementally, so only the current row is held in
/// memory. Interlaced PNGs and non-PNG rasters are fully decoded up front.
pub(crate) struct RowReader {
    inner: Inner,
    width: u32,
    height: u32,
    next: u32,
    row: Vec<u8>,
}

impl RowReader {
    pub(crate) fn open(level: &LevelInfo) -> Result<Self> {
        let inner = match &level.source {
            LevelSource::Png(path) => open_png(path)?,
            LevelSource::Raster(path, cache) => {
                let data = match cache.get() {
                    Some(data) => Arc::clone(data),
                    None => {
                        let img = image::open(path)
                            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?
                            .to_rgb8()
                            .into_raw();
                        Arc::clone(cache.get_or_init(|| Arc::new(img)))
                    }
                };
                Inner::Buffered(data)
            }
        };
        Ok(RowReader {
            inner,
            width: level.width,
            height: level.height,
            next: 0,
            row: vec![0; level.width as usize * 3],
        })
    }

    pub(crate) fn skip_to(&mut self, row: u32) -> Result<()> {
        if let Inner::Buffered(_) = self.inner {
            self.next = row.min(self.height);
            return Ok(());
        }
        while self.next < row.min(self.height) {
            self.next_row()?;
        }
        Ok(())
    }

    /// Returns the next row as packed RGB. Errors past the last row.
    pub(crate) fn next_row(&mut self) -> Result<&[u8]> {
        if self.next >= self.height {
            return Err(Error::Decode(format!(
                "row {} past level height {}",
                self.next, self.height
            )));
        }
        let stride = self.width as usize * 3;
        match &mut self.inner {
            Inner::Png { reader, color } => {
                let row = reader
                    .next_row()
                    .map_err(|e| Error::Decode(e.to_string()))?
                    .ok_or_else(|| Error::Decode("png ended early".into()))?;
                to_rgb(row.data(), *color, &mut self.row)?;
            }
            Inner::Buffered(data) => {
                let off = self.next as usize * stride;
                self.row.copy_from_slice(&data[off..off + stride]);
            }
        }
        self.next += 1;
        Ok(&self.row)
    }
}

fn open_png(path: &Path) -> Result<Inner> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new_with_limits(BufReader::new(file), png::Limits { bytes: usize::MAX });
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let (color, _) = reader.output_color_type();
    if reader.info().interlaced {
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Decode("png too large".into()))?;
        let mut buf = vec![0; size];
        let frame = reader.next_frame(&mut buf).map_err(|e| Error::Decode(e.to_string()))?;
        let (w, h) = (frame.width as usize, frame.height as usize);
        let mut rgb = vec![0; w * h * 3];
        for (src, dst) in buf
            .chunks_exact(frame.line_size)
            .take(h)
            .zip(rgb.chunks_exact_mut(w * 3))
        {
            let mut row = vec![0; w * 3];
            to_rgb(src, color, &mut row)?;
            dst.copy_from_slice(&row);
        }
        return Ok(Inner::Buffered(Arc::new(rgb)));
    }
    Ok(Inner::Png {
        reader: Box::new(reader),
        color,
    })
}

/// Converts an 8-bit decoded row to RGB, compositing alpha over white.
fn to_rgb(src: &[u8], color: png::ColorType, dst: &mut [u8]) -> Result<()> {
    fn over_white(c: u8, a: u8) -> u8 {
        ((u32::from(c) * u32::from(a) + 255 * (255 - u32::from(a)) + 127) / 255) as u8
    }
    let n = dst.len() / 3;
    match color {
        png::ColorType::Rgb => dst.copy_from_slice(&src[..n * 3]),
        png::ColorType::Rgba => {
            for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(4)) {
                for c in 0..3 {
                    d[c] = over_white(s[c], s[3]);
                }
            }
        }
        png::ColorType::Grayscale => {
            for (d, &g) in dst.chunks_exact_mut(3).zip(src) {
                d.fill(g);
            }
        }
        png::ColorType::GrayscaleAlpha => {
            for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(2)) {
                d.fill(over_white(s[0], s[1]));
            }
        }
        png::ColorType::Indexed => {
            return Err(Error::Decode("indexed png was not expanded".into()));
        }
    }
    Ok(())
}
