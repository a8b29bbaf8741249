//! Segmentation masks: GeoJSON ingestion, cell-center rasterization and
//! multi-resolution ensemble merging.
//!
//! Masks arrive in world coordinates (CRS meters) as a GeoJSON
//! FeatureCollection of Polygon features with the properties `id`, `label`,
//! `confidence` and `source_resolution_m`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::geometry::{edge_crossing, validate_polygon, Point, Polygon};
use crate::grid::{Bounds, GridError, GridSpec};

/// Default IoU at or above which a lower-ranked mask is dropped.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Feature member carrying mask provenance when `properties` holds other
/// attributes (as in exported object tables).
pub const SOURCE_MEMBER: &str = "source";

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed mask document: {0}")]
    ParseError(String),
}

/// A feature that failed validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvalidMask {
    pub id: String,
    pub reason: String,
}

impl std::fmt::Display for InvalidMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid mask {}: {}", self.id, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub id: String,
    pub label: String,
    pub polygon: Polygon,
    pub confidence: f64,
    /// Ground sampling distance of the imagery the mask came from, meters.
    pub source_resolution: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedMasks {
    pub masks: Vec<ObjectMask>,
    pub rejected: Vec<InvalidMask>,
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

pub fn load_masks(path: &Path) -> Result<LoadedMasks, MaskError> {
    let text = fs::read_to_string(path).map_err(|source| MaskError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_masks(&text)
}

pub fn parse_masks(text: &str) -> Result<LoadedMasks, MaskError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| MaskError::ParseError(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(MaskError::ParseError("top-level object is not a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| MaskError::ParseError("FeatureCollection has no features array".into()))?;

    let mut out = LoadedMasks::default();
    for (i, feature) in features.iter().enumerate() {
        match parse_feature(feature) {
            Ok(mask) => out.masks.push(mask),
            Err((id, reason)) => {
                let id = id.unwrap_or_else(|| format!("#{i}"));
                log::warn!("rejecting mask {id}: {reason}");
                out.rejected.push(InvalidMask { id, reason });
            }
        }
    }
    Ok(out)
}

fn number_prop(props: &Map<String, Value>, source: Option<&Map<String, Value>>, key: &str) -> Result<f64, String> {
    props
        .get(key)
        .or_else(|| source.and_then(|s| s.get(key)))
        .ok_or_else(|| format!("missing property {key}"))?
        .as_f64()
        .ok_or_else(|| format!("property {key} is not a number"))
}

fn parse_ring(v: &Value) -> Result<Vec<Point>, String> {
    let positions = v.as_array().ok_or("ring is not an array")?;
    positions
        .iter()
        .map(|p| {
            let xy = p.as_array().ok_or("position is not an array")?;
            if xy.len() < 2 {
                return Err("position has fewer than 2 coordinates".to_string());
            }
            match (xy[0].as_f64(), xy[1].as_f64()) {
                (Some(x), Some(y)) => Ok([x, y]),
                _ => Err("position has a non-numeric coordinate".to_string()),
            }
        })
        .collect()
}

fn parse_feature(feature: &Value) -> Result<ObjectMask, (Option<String>, String)> {
    let props = feature
        .get("properties")
        .and_then(Value::as_object)
        .ok_or((None, "feature has no properties object".to_string()))?;
    let id = match props.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err((None, "property id is not a non-empty string".into())),
        None => return Err((None, "missing property id".into())),
    };
    let fail = |reason: String| (Some(id.clone()), reason);

    let label = props
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| fail("missing or non-string property label".into()))?
        .to_string();
    let source = feature.get(SOURCE_MEMBER).and_then(Value::as_object);
    let confidence = number_prop(props, source, "confidence").map_err(&fail)?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(fail(format!("confidence {confidence} outside [0, 1]")));
    }
    let source_resolution = number_prop(props, source, "source_resolution_m").map_err(&fail)?;
    if !(source_resolution.is_finite() && source_resolution > 0.0) {
        return Err(fail(format!("source_resolution_m {source_resolution} is not positive")));
    }

    let geometry = feature
        .get("geometry")
        .and_then(Value::as_object)
        .ok_or_else(|| fail("feature has no geometry".into()))?;
    match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => {}
        other => return Err(fail(format!("geometry type {other:?} is not Polygon"))),
    }
    let rings = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("polygon has no coordinates array".into()))?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings
        .next()
        .ok_or_else(|| fail("polygon has no rings".into()))?
        .map_err(&fail)?;
    let interiors = rings.collect::<Result<Vec<_>, _>>().map_err(&fail)?;
    let polygon = Polygon::new(exterior, interiors);
    validate_polygon(&polygon).map_err(&fail)?;

    Ok(ObjectMask {
        id,
        label,
        polygon,
        confidence,
        source_resolution,
    })
}

pub(crate) fn polygon_json(poly: &Polygon) -> Value {
    let ring = |r: &[Point]| Value::Array(r.iter().map(|p| json!([p[0], p[1]])).collect());
    json!({
        "type": "Polygon",
        "coordinates": poly.rings().map(ring).collect::<Vec<_>>(),
    })
}

/// Serializes masks in the interchange format `load_masks` reads.
pub fn masks_to_geojson(masks: &[ObjectMask]) -> Value {
    let features: Vec<Value> = masks
        .iter()
        .map(|m| {
            json!({
                "type": "Feature",
                "geometry": polygon_json(&m.polygon),
                "properties": {
                    "id": m.id,
                    "label": m.label,
                    "confidence": m.confidence,
                    "source_resolution_m": m.source_resolution,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Raster footprint of a mask: the cells whose centers it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    spec: GridSpec,
    /// Row-major cell indices, ascending.
    cells: Vec<usize>,
}

impl CellSet {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.cells
    }

    /// `(col, row)` pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().map(|&i| self.spec.col_row(i))
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        col < self.spec.ncols && row < self.spec.nrows && self.cells.binary_search(&self.spec.index(col, row)).is_ok()
    }

    pub fn intersection_len(&self, other: &CellSet) -> usize {
        let (a, b) = (&self.cells, &other.cells);
        if a.is_empty() || b.is_empty() || a[a.len() - 1] < b[0] || b[b.len() - 1] < a[0] {
            return 0;
        }
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Intersection over union; 0 when both sets are empty.
    pub fn iou(&self, other: &CellSet) -> f64 {
        let inter = self.intersection_len(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Cells of `spec` whose center lies inside `polygon` (even-odd rule, holes
/// subtract).
pub fn rasterize_polygon(polygon: &Polygon, spec: &GridSpec) -> CellSet {
    let mut cells = Vec::new();
    let (min, max) = polygon.bbox();
    let clamp_range = |lo: Option<i64>, hi: Option<i64>, n: usize| -> Option<(usize, usize)> {
        let lo = lo?.saturating_sub(1).max(0);
        let hi = hi?.saturating_add(1).min(n as i64 - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    let Some((row_lo, row_hi)) = clamp_range(spec.row_of(min[1]), spec.row_of(max[1]), spec.nrows) else {
        return CellSet { spec: *spec, cells };
    };
    let Some((col_lo, col_hi)) = clamp_range(spec.col_of(min[0]), spec.col_of(max[0]), spec.ncols) else {
        return CellSet { spec: *spec, cells };
    };

    let mut crossings: Vec<f64> = Vec::new();
    for row in row_lo..=row_hi {
        let y = spec.center_y(row as i64);
        crossings.clear();
        for ring in polygon.rings() {
            for w in ring.windows(2) {
                if let Some(x) = edge_crossing(w[0], w[1], y) {
                    crossings.push(x);
                }
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        // Number of crossings strictly right of the center; odd means inside.
        let mut at_or_left = 0;
        for col in col_lo..=col_hi {
            let x = spec.center_x(col as i64);
            while at_or_left < crossings.len() && crossings[at_or_left] <= x {
                at_or_left += 1;
            }
            if (crossings.len() - at_or_left) % 2 == 1 {
                cells.push(spec.index(col, row));
            }
        }
    }
    CellSet { spec: *spec, cells }
}

pub fn rasterize_mask(mask: &ObjectMask, spec: &GridSpec) -> CellSet {
    rasterize_polygon(&mask.polygon, spec)
}

/// Grid snapped to multiples of `cell_size` covering every mask's exterior.
pub fn mask_extent_spec(masks: &[ObjectMask], cell_size: f64) -> Result<GridSpec, GridError> {
    let mut bounds = Bounds::default();
    for m in masks {
        for p in &m.polygon.exterior {
            bounds.add(p[0], p[1]);
        }
    }
    bounds.to_spec(cell_size)
}

// ---------------------------------------------------------------------------
// Ensemble merge
// ---------------------------------------------------------------------------

/// A mask dropped by [`ensemble_merge_detailed`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suppressed {
    pub id: String,
    pub label: String,
    pub by: String,
    pub iou: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleResult {
    pub kept: Vec<ObjectMask>,
    pub suppressed: Vec<Suppressed>,
}

/// Ranking used by the greedy merge: higher confidence first, then finer
/// source resolution, then id.
pub fn rank_order(a: &ObjectMask, b: &ObjectMask) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.source_resolution.total_cmp(&b.source_resolution))
        .then_with(|| a.id.cmp(&b.id))
}

/// Greedy cross-resolution deduplication. Masks are visited in
/// [`rank_order`]; a mask is kept iff its raster IoU with every kept mask of
/// the same label is below `iou_threshold`.
pub fn ensemble_merge(mask_sets: &[Vec<ObjectMask>], spec: &GridSpec, iou_threshold: f64) -> Vec<ObjectMask> {
    ensemble_merge_detailed(mask_sets, spec, iou_threshold).kept
}

pub fn ensemble_merge_detailed(mask_sets: &[Vec<ObjectMask>], spec: &GridSpec, iou_threshold: f64) -> EnsembleResult {
    let mut all: Vec<&ObjectMask> = mask_sets.iter().flatten().collect();
    all.sort_by(|a, b| rank_order(a, b));
    let footprints: Vec<CellSet> = all.par_iter().map(|m| rasterize_mask(m, spec)).collect();

    let mut kept_by_label: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut result = EnsembleResult::default();
    for (i, mask) in all.iter().enumerate() {
        let kept = kept_by_label.entry(mask.label.as_str()).or_default();
        let clash = kept.iter().find_map(|&j| {
            let iou = footprints[i].iou(&footprints[j]);
            (iou >= iou_threshold).then_some((j, iou))
        });
        match clash {
            Some((j, iou)) => result.suppressed.push(Suppressed {
                id: mask.id.clone(),
                label: mask.label.clone(),
                by: all[j].id.clone(),
                iou,
            }),
            None => {
                kept.push(i);
                result.kept.push((*mask).clone());
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(id: &str, label: &str, min: Point, max: Point, conf: f64, res: f64) -> ObjectMask {
        ObjectMask {
            id: id.into(),
            label: label.into(),
            polygon: Polygon::rect(min, max),
            confidence: conf,
            source_resolution: res,
        }
    }

    fn feature(id: &str, ring: Value) -> Value {
        json!({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"id": id, "label": "tree", "confidence": 0.8, "source_resolution_m": 0.2},
        })
    }

    #[test]
    fn loads_valid_and_rejects_degenerate() {
        let doc = json!({
            "type": "FeatureCollection",
            "features": [
                feature("a", json!([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])),
                feature("b", json!([[0, 0], [1, 0], [0, 0]])),
            ],
        });
        let loaded = parse_masks(&doc.to_string()).unwrap();
        assert_eq!(loaded.masks.len(), 1);
        assert_eq!(loaded.masks[0].id, "a");
        assert_eq!(loaded.masks[0].polygon, Polygon::rect([0.0, 0.0], [1.0, 1.0]));
        assert_eq!(loaded.rejected.len(), 1);
        assert_eq!(loaded.rejected[0].id, "b");
    }

    #[test]
    fn empty_collection_and_malformed_documents() {
        let loaded = parse_masks(r#"{"type":"FeatureCollection","features":[]}"#).unwrap();
        assert!(loaded.masks.is_empty() && loaded.rejected.is_empty());
        assert!(matches!(parse_masks("{not json"), Err(MaskError::ParseError(_))));
        assert!(matches!(parse_masks(r#"{"type":"Feature"}"#), Err(MaskError::ParseError(_))));
    }

    #[test]
    fn rejects_bad_properties_individually() {
        let mut bad_conf = feature("c", json!([[0, 0], [1, 0], [1, 1], [0, 0]]));
        bad_conf["properties"]["confidence"] = json!(1.5);
        let mut no_id = feature("x", json!([[0, 0], [1, 0], [1, 1], [0, 0]]));
        no_id["properties"].as_object_mut().unwrap().remove("id");
        let mut point = feature("p", json!([0, 0]));
        point["geometry"] = json!({"type": "Point", "coordinates": [0, 0]});
        let doc = json!({"type": "FeatureCollection", "features": [bad_conf, no_id, point]});
        let loaded = parse_masks(&doc.to_string()).unwrap();
        let ids: Vec<_> = loaded.rejected.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "#1", "p"]);
    }

    #[test]
    fn provenance_falls_back_to_source_member() {
        let mut f = feature("s", json!([[0, 0], [1, 0], [1, 1], [0, 0]]));
        let props = f["properties"].as_object_mut().unwrap();
        props.remove("confidence");
        props.remove("source_resolution_m");
        f[SOURCE_MEMBER] = json!({"confidence": 0.25, "source_resolution_m": 0.5});
        let doc = json!({"type": "FeatureCollection", "features": [f]});
        let loaded = parse_masks(&doc.to_string()).unwrap();
        assert_eq!(loaded.masks[0].confidence, 0.25);
        assert_eq!(loaded.masks[0].source_resolution, 0.5);
    }

    #[test]
    fn unit_square_covers_25_cells() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let cells = rasterize_polygon(&Polygon::rect([0.0, 0.0], [1.0, 1.0]), &spec);
        assert_eq!(cells.len(), 25);
        for i in 0..5 {
            for j in 0..5 {
                assert!(cells.contains(i, j));
            }
        }
        assert!(!cells.contains(5, 0));
    }

    #[test]
    fn sub_cell_polygon_is_empty() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 10, 10).unwrap();
        let cells = rasterize_polygon(&Polygon::rect([0.01, 0.01], [0.05, 0.05]), &spec);
        assert!(cells.is_empty());
    }

    #[test]
    fn hole_excludes_middle_cell() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 3, 3).unwrap();
        let mut p = Polygon::rect([0.0, 0.0], [0.6, 0.6]);
        p.interiors.push(vec![[0.25, 0.25], [0.35, 0.25], [0.35, 0.35], [0.25, 0.35], [0.25, 0.25]]);
        let cells = rasterize_polygon(&p, &spec);
        assert_eq!(cells.len(), 8);
        assert!(!cells.contains(1, 1));
    }

    #[test]
    fn polygon_outside_grid() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 4, 4).unwrap();
        assert!(rasterize_polygon(&Polygon::rect([10.0, 10.0], [12.0, 12.0]), &spec).is_empty());
        let partial = rasterize_polygon(&Polygon::rect([-5.0, -5.0], [1.0, 1.0]), &spec);
        assert_eq!(partial.indices(), &[0]);
    }

    #[test]
    fn merge_identical_and_disjoint() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 50, 50).unwrap();
        let a = square_mask("a", "tree", [0.0, 0.0], [2.0, 2.0], 0.9, 0.2);
        let b = square_mask("b", "tree", [0.0, 0.0], [2.0, 2.0], 0.8, 0.1);
        let out = ensemble_merge(&[vec![a.clone()], vec![b.clone()]], &spec, 0.5);
        assert_eq!(out, vec![a.clone()]);

        let c = square_mask("c", "tree", [5.0, 5.0], [6.0, 6.0], 0.1, 0.3);
        let out = ensemble_merge(&[vec![a.clone(), c.clone()]], &spec, 0.5);
        assert_eq!(out.len(), 2);

        // same footprint, different label: both kept
        let d = square_mask("d", "building", [0.0, 0.0], [2.0, 2.0], 0.5, 0.2);
        assert_eq!(ensemble_merge(&[vec![a, d]], &spec, 0.5).len(), 2);
    }

    #[test]
    fn merge_keeps_higher_confidence_on_overlap() {
        // 10x10 cells vs 10x6 cells inside it: IoU = 60/100 = 0.6.
        let spec = GridSpec::new([0.0, 0.0], 0.2, 20, 20).unwrap();
        let big = square_mask("big", "tree", [0.0, 0.0], [2.0, 2.0], 0.7, 0.2);
        let small = square_mask("small", "tree", [0.0, 0.0], [2.0, 1.2], 0.9, 0.2);
        let fb = rasterize_mask(&big, &spec);
        let fs = rasterize_mask(&small, &spec);
        assert_eq!((fb.len(), fs.len()), (100, 60));
        assert_eq!(fb.iou(&fs), 0.6);
        let r = ensemble_merge_detailed(&[vec![big], vec![small]], &spec, 0.5);
        assert_eq!(r.kept.len(), 1);
        assert_eq!(r.kept[0].id, "small");
        assert_eq!(r.suppressed[0].by, "small");
    }

    #[test]
    fn finer_resolution_breaks_confidence_ties() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 20, 20).unwrap();
        let coarse = square_mask("a", "tree", [0.0, 0.0], [2.0, 2.0], 0.8, 0.3);
        let fine = square_mask("b", "tree", [0.0, 0.0], [2.0, 2.0], 0.8, 0.1);
        let out = ensemble_merge(&[vec![coarse], vec![fine]], &spec, 0.5);
        assert_eq!(out[0].id, "b");
    }

    #[test]
    fn geojson_round_trip() {
        let m = square_mask("q", "tree", [0.1, 0.3], [1.7, 2.9], 0.66, 0.2);
        let text = masks_to_geojson(std::slice::from_ref(&m)).to_string();
        assert_eq!(parse_masks(&text).unwrap().masks, vec![m]);
    }
}
