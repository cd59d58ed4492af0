use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::slide_io::{AnnotationSet, SlideHandle};

/// Per-pixel annotation labels at one pyramid level (`None` = unannotated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub level: usize,
    pub width: u32,
    pub height: u32,
    pub cells: Vec<Option<TissueLabel>>,
}

impl LabelMask {
    pub fn empty(level: usize, width: u32, height: u32) -> Self {
        LabelMask {
            level,
            width,
            height,
            cells: vec![None; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<TissueLabel> {
        self.cells[y as usize * self.width as usize + x as usize]
    }
}

/// Rasterizes `ann` onto the grid of `level`. The requested extent must be
/// the slide's extent at that level.
pub fn rasterize_annotations(
    ann: &AnnotationSet,
    slide: &SlideHandle,
    level: usize,
    width: u32,
    height: u32,
) -> Result<LabelMask> {
    let expected = slide.level_dimensions(level)?;
    if expected != (width, height) {
        return Err(Error::ExtentMismatch {
            expected,
            found: (width, height),
        });
    }
    let downsample = f64::from(slide.level_downsample(level)?);
    Ok(rasterize_polygons(ann, level, downsample, width, height))
}

/// Labels each pixel by the last-listed polygon containing its centre
/// (even-odd rule). Level-0 vertices are divided by `downsample`.
pub fn rasterize_polygons(ann: &AnnotationSet, level: usize, downsample: f64, width: u32, height: u32) -> LabelMask {
    let mut mask = LabelMask::empty(level, width, height);
    let w = width as usize;
    let mut xs: Vec<f64> = Vec::new();
    for region in &ann.regions {
        let verts: Vec<[f64; 2]> = region
            .polygon
            .iter()
            .map(|&[x, y]| [x / downsample, y / downsample])
            .collect();
        let (min_y, max_y) = verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v[1]), hi.max(v[1]))
        });
        let row_lo = ((min_y - 0.5).floor().max(0.0)) as u32;
        let row_hi = ((max_y + 0.5).ceil().min(f64::from(height))).max(0.0) as u32;
        for row in row_lo..row_hi {
            let yc = f64::from(row) + 0.5;
            xs.clear();
            for i in 0..verts.len() {
                let a = verts[i];
                let b = verts[(i + 1) % verts.len()];
                if (a[1] > yc) != (b[1] > yc) {
                    xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let (Some(start), Some(end)) = (
                    first_center_at_or_after(pair[0], width),
                    first_center_at_or_after(pair[1], width),
                ) else {
                    continue;
                };
                let base = row as usize * w;
                for cell in &mut mask.cells[base + start..base + end] {
                    *cell = Some(region.label);
                }
            }
        }
    }
    mask
}

/// Smallest column `c` in `0..=width` with `c + 0.5 >= x` (clamped).
fn first_center_at_or_after(x: f64, width: u32) -> Option<usize> {
    if x.is_nan() {
        return None;
    }
    let w = f64::from(width);
    let mut c = (x - 0.5).ceil().clamp(0.0, w);
    // Re-check against the exact predicate to absorb rounding in `x - 0.5`.
    while c > 0.0 && (c - 1.0) + 0.5 >= x {
        c -= 1.0;
    }
    while c < w && c + 0.5 < x {
        c += 1.0;
    }
    Some(c as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_io::Region;
    use proptest::prelude::*;

    fn region(poly: &[[f64; 2]], label: TissueLabel) -> Region {
        Region {
            polygon: poly.to_vec(),
            label,
        }
    }

    /// Independent crossing-number test on pixel centres.
    fn brute_force(ann: &AnnotationSet, width: u32, height: u32) -> Vec<Option<TissueLabel>> {
        let mut out = vec![None; (width * height) as usize];
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                for r in &ann.regions {
                    let n = r.polygon.len();
                    let mut inside = false;
                    for i in 0..n {
                        let a = r.polygon[i];
                        let b = r.polygon[(i + 1) % n];
                        if (a[1] > py) != (b[1] > py) {
                            let xi = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                            if px < xi {
                                inside = !inside;
                            }
                        }
                    }
                    if inside {
                        out[(y * width + x) as usize] = Some(r.label);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn axis_aligned_square_fills_interior() {
        let ann = AnnotationSet {
            regions: vec![region(
                &[[2.0, 3.0], [6.0, 3.0], [6.0, 7.0], [2.0, 7.0]],
                TissueLabel::Malignant,
            )],
        };
        let mask = rasterize_polygons(&ann, 0, 1.0, 10, 10);
        for y in 0..10 {
            for x in 0..10 {
                let inside = (2..6).contains(&x) && (3..7).contains(&y);
                assert_eq!(mask.get(x, y).is_some(), inside, "({x},{y})");
            }
        }
        assert_eq!(mask.cells.iter().filter(|c| c.is_some()).count(), 16);
    }

    #[test]
    fn no_polygons_means_all_none() {
        let mask = rasterize_polygons(&AnnotationSet::default(), 0, 1.0, 7, 5);
        assert!(mask.cells.iter().all(Option::is_none));
    }

    #[test]
    fn later_polygon_wins_overlap() {
        let ann = AnnotationSet {
            regions: vec![
                region(
                    &[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
                    TissueLabel::Malignant,
                ),
                region(&[[3.0, 3.0], [6.0, 3.0], [6.0, 6.0], [3.0, 6.0]], TissueLabel::Benign),
            ],
        };
        let mask = rasterize_polygons(&ann, 0, 1.0, 10, 10);
        assert_eq!(mask.get(4, 4), Some(TissueLabel::Benign));
        assert_eq!(mask.get(1, 1), Some(TissueLabel::Malignant));
    }

    #[test]
    fn downsample_scales_vertices() {
        let ann = AnnotationSet {
            regions: vec![region(
                &[[0.0, 0.0], [16.0, 0.0], [16.0, 16.0], [0.0, 16.0]],
                TissueLabel::Normal,
            )],
        };
        let mask = rasterize_polygons(&ann, 2, 4.0, 8, 8);
        assert_eq!(mask.cells.iter().filter(|c| c.is_some()).count(), 16);
        assert_eq!(mask.level, 2);
    }

    #[test]
    fn polygon_outside_extent_is_clipped() {
        let ann = AnnotationSet {
            regions: vec![region(
                &[[-5.0, -5.0], [3.0, -5.0], [3.0, 3.0], [-5.0, 3.0]],
                TissueLabel::Benign,
            )],
        };
        let mask = rasterize_polygons(&ann, 0, 1.0, 6, 6);
        assert_eq!(mask.cells.iter().filter(|c| c.is_some()).count(), 9);
        assert_eq!(
            mask,
            LabelMask {
                cells: brute_force(&ann, 6, 6),
                ..mask.clone()
            }
        );
    }

    proptest! {
        #[test]
        fn matches_crossing_number_oracle(
            polys in prop::collection::vec(
                (prop::collection::vec((-4.0f64..36.0, -4.0f64..36.0), 3..9), 0usize..3),
                1..4,
            )
        ) {
            let ann = AnnotationSet {
                regions: polys
                    .into_iter()
                    .map(|(pts, l)| Region {
                        polygon: pts.into_iter().map(|(x, y)| [x, y]).collect(),
                        label: TissueLabel::from_index(l).unwrap(),
                    })
                    .collect(),
            };
            let mask = rasterize_polygons(&ann, 0, 1.0, 32, 32);
            prop_assert_eq!(mask.cells, brute_force(&ann, 32, 32));
        }

        #[test]
        fn integer_vertices_match_oracle(
            pts in prop::collection::vec((0i32..20, 0i32..20), 3..8)
        ) {
            // Vertices on pixel boundaries and centres stress the tie rules.
            let ann = AnnotationSet {
                regions: vec![Region {
                    polygon: pts.into_iter().map(|(x, y)| [f64::from(x) * 0.5, f64::from(y) * 0.5]).collect(),
                    label: TissueLabel::Benign,
                }],
            };
            let mask = rasterize_polygons(&ann, 0, 1.0, 12, 12);
            prop_assert_eq!(mask.cells, brute_force(&ann, 12, 12));
        }
    }
}
