//! Region annotations stored as GeoJSON polygon feature collections.
//!
//! Coordinates are level-0 pixels. Only exterior rings are used; interior
//! rings (holes) are ignored. MultiPolygon features expand into one region
//! per polygon.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::label::TissueLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Open ring (the closing vertex is not repeated), at least 3 vertices.
    pub polygon: Vec<[f64; 2]>,
    pub label: TissueLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub regions: Vec<Region>,
}

#[derive(Deserialize)]
struct RawCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
struct RawFeature {
    geometry: Option<Value>,
    #[serde(default)]
    properties: Option<serde_json::Map<String, Value>>,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationSet::from_geojson(&text)
}

fn parse_ring(value: &Value) -> Result<Vec<[f64; 2]>> {
    let points = value
        .as_array()
        .ok_or_else(|| Error::Geometry("ring is not an array".into()))?;
    let mut ring = Vec::with_capacity(points.len());
    for p in points {
        let xy = p
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| Error::Geometry(format!("vertex {p} is not a coordinate pair")))?;
        let x = xy[0].as_f64();
        let y = xy[1].as_f64();
        match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => ring.push([x, y]),
            _ => return Err(Error::Geometry(format!("vertex {p} is not numeric"))),
        }
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::Geometry(format!(
            "polygon needs at least 3 distinct vertices, found {}",
            ring.len()
        )));
    }
    Ok(ring)
}

fn exterior(polygon: &Value) -> Result<Vec<[f64; 2]>> {
    let rings = polygon
        .as_array()
        .ok_or_else(|| Error::Geometry("polygon coordinates are not an array".into()))?;
    let outer = rings
        .first()
        .ok_or_else(|| Error::Geometry("polygon has no rings".into()))?;
    parse_ring(outer)
}

impl AnnotationSet {
    pub fn from_geojson(text: &str) -> Result<Self> {
        let raw: RawCollection = serde_json::from_str(text)
            .map_err(|e| Error::Geometry(format!("not a GeoJSON feature collection: {e}")))?;
        if raw.kind != "FeatureCollection" {
            return Err(Error::Geometry(format!(
                "expected FeatureCollection, found {}",
                raw.kind
            )));
        }
        let mut regions = Vec::new();
        for (i, feature) in raw.features.iter().enumerate() {
            let label_value = feature
                .properties
                .as_ref()
                .and_then(|p| p.get("label"))
                .ok_or_else(|| Error::Geometry(format!("feature {i} has no \"label\" property")))?;
            let label: TissueLabel = match label_value.as_str() {
                Some(s) => s.parse()?,
                None => {
                    return Err(Error::UnknownLabel {
                        found: label_value.to_string(),
                    })
                }
            };
            let geometry = feature
                .geometry
                .as_ref()
                .ok_or_else(|| Error::Geometry(format!("feature {i} has no geometry")))?;
            let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
            let coords = geometry
                .get("coordinates")
                .ok_or_else(|| Error::Geometry(format!("feature {i} geometry has no coordinates")))?;
            match kind {
                "Polygon" => regions.push(Region {
                    polygon: exterior(coords)?,
                    label,
                }),
                "MultiPolygon" => {
                    let polys = coords
                        .as_array()
                        .ok_or_else(|| Error::Geometry("multipolygon coordinates are not an array".into()))?;
                    for poly in polys {
                        regions.push(Region {
                            polygon: exterior(poly)?,
                            label,
                        });
                    }
                }
                other => {
                    return Err(Error::Geometry(format!(
                        "feature {i}: unsupported geometry type {other:?}"
                    )))
                }
            }
        }
        Ok(AnnotationSet { regions })
    }

    pub fn to_geojson(&self) -> String {
        let features: Vec<Value> = self
            .regions
            .iter()
            .map(|r| {
                let mut ring: Vec<Value> = r.polygon.iter().map(|&[x, y]| json!([x, y])).collect();
                if let Some(first) = ring.first().cloned() {
                    ring.push(first);
                }
                json!({
                    "type": "Feature",
                    "properties": { "label": r.label.as_str() },
                    "geometry": { "type": "Polygon", "coordinates": [ring] },
                })
            })
            .collect();
        let doc = json!({ "type": "FeatureCollection", "features": features });
        serde_json::to_string_pretty(&doc).expect("annotation json is always serializable")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_geojson()).map_err(|e| Error::io(path, e))
    }

    /// Clips every polygon to the rectangle `[0, width] x [0, height]`,
    /// dropping regions that fall entirely outside.
    pub fn clipped_to(&self, width: f64, height: f64) -> AnnotationSet {
        let regions = self
            .regions
            .iter()
            .filter_map(|r| {
                let clipped = clip_to_rect(&r.polygon, width, height);
                (clipped.len() >= 3).then_some(Region {
                    polygon: clipped,
                    label: r.label,
                })
            })
            .collect();
        AnnotationSet { regions }
    }
}

/// Sutherland-Hodgman clipping against an axis-aligned rectangle at the origin.
fn clip_to_rect(poly: &[[f64; 2]], width: f64, height: f64) -> Vec<[f64; 2]> {
    // (axis, bound, keep_less_equal)
    let edges = [(0, 0.0, false), (0, width, true), (1, 0.0, false), (1, height, true)];
    let mut out = poly.to_vec();
    for (axis, bound, keep_le) in edges {
        if out.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_le { p[axis] <= bound } else { p[axis] >= bound };
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut p = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                p[axis] = bound;
                out.push(p);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(label: &str) -> String {
        format!(
            r#"{{"type":"FeatureCollection","features":[{{"type":"Feature","properties":{{"label":"{label}"}},
            "geometry":{{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,10],[0,10],[0,0]]]}}}}]}}"#
        )
    }

    #[test]
    fn loads_single_square() {
        let set = AnnotationSet::from_geojson(&square("malignant")).unwrap();
        assert_eq!(set.regions.len(), 1);
        assert_eq!(set.regions[0].label, TissueLabel::Malignant);
        assert_eq!(set.regions[0].polygon.len(), 4);
    }

    #[test]
    fn unknown_label_lists_vocabulary() {
        let err = AnnotationSet::from_geojson(&square("tumor")).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
        assert!(err.to_string().contains("benign, malignant, normal"));
    }

    #[test]
    fn two_vertex_polygon_rejected() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"benign"},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0]]]}}]}"#;
        assert!(matches!(AnnotationSet::from_geojson(text), Err(Error::Geometry(_))));
    }

    #[test]
    fn rejects_points_and_missing_labels() {
        let point = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"benign"},
            "geometry":{"type":"Point","coordinates":[1,2]}}]}"#;
        assert!(matches!(AnnotationSet::from_geojson(point), Err(Error::Geometry(_))));
        let unlabeled = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1]]]}}]}"#;
        assert!(matches!(
            AnnotationSet::from_geojson(unlabeled),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn multipolygon_expands() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"label":"Normal"},
            "geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1]]],[[[5,5],[6,5],[6,6]]]]}}]}"#;
        let set = AnnotationSet::from_geojson(text).unwrap();
        assert_eq!(set.regions.len(), 2);
        assert!(set.regions.iter().all(|r| r.label == TissueLabel::Normal));
    }

    #[test]
    fn clipping_to_slide_bounds() {
        let set = AnnotationSet {
            regions: vec![
                Region {
                    polygon: vec![[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]],
                    label: TissueLabel::Benign,
                },
                Region {
                    polygon: vec![[50.0, 50.0], [60.0, 50.0], [60.0, 60.0]],
                    label: TissueLabel::Malignant,
                },
            ],
        };
        let clipped = set.clipped_to(20.0, 20.0);
        assert_eq!(clipped.regions.len(), 1);
        let poly = &clipped.regions[0].polygon;
        assert!(poly
            .iter()
            .all(|p| (0.0..=20.0).contains(&p[0]) && (0.0..=20.0).contains(&p[1])));
        let mut sorted = poly.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted, vec![[0.0, 0.0], [0.0, 5.0], [5.0, 0.0], [5.0, 5.0]]);
    }

    fn region_strategy() -> impl Strategy<Value = Region> {
        (prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 3..12), 0usize..3)
            .prop_map(|(pts, l)| Region {
                polygon: pts.into_iter().map(|(x, y)| [x, y]).collect(),
                label: TissueLabel::from_index(l).unwrap(),
            })
            .prop_filter("closing vertex would be dropped", |r| {
                r.polygon.first() != r.polygon.last()
            })
    }

    proptest! {
        #[test]
        fn geojson_round_trip(regions in prop::collection::vec(region_strategy(), 0..6)) {
            let set = AnnotationSet { regions };
            let again = AnnotationSet::from_geojson(&set.to_geojson()).unwrap();
            prop_assert_eq!(again, set);
        }
    }
}
