//! Per-object statistics over the normalized height surface.

use std::collections::HashSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::grid::ElevationGrid;
use crate::masks::{rasterize_mask, CellSet, ObjectMask};

pub const FEET_PER_METER: f64 = 3.28084;

/// Objects whose footprint is less than this fraction covered by valid
/// height cells are skipped.
pub const DEFAULT_COVERAGE_MIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Meters,
    Feet,
}

impl Units {
    pub fn factor(self) -> f64 {
        match self {
            Units::Meters => 1.0,
            Units::Feet => FEET_PER_METER,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Units::Meters => "meters",
            Units::Feet => "feet",
        }
    }

    /// Converts a length in meters to these units.
    pub fn from_meters(self, meters: f64) -> f64 {
        match self {
            Units::Meters => meters,
            Units::Feet => meters * FEET_PER_METER,
        }
    }
}

impl FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "meter" | "meters" | "metre" | "metres" => Ok(Units::Meters),
            "ft" | "foot" | "feet" => Ok(Units::Feet),
            other => Err(format!("unknown units '{other}' (expected meters or feet)")),
        }
    }
}

impl std::fmt::Display for Units {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the object table. Heights are in `units`; area, perimeter and
/// centroid are always metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectHeightRecord {
    pub id: String,
    pub label: String,
    pub height_min: f64,
    pub height_max: f64,
    pub height_mean: f64,
    /// Mean ground elevation (above the vertical datum) under the object.
    pub elev_ground_mean: f64,
    pub units: Units,
    pub area: f64,
    pub perimeter: f64,
    pub centroid: [f64; 2],
    /// Cells of the mask footprint.
    pub cell_count: usize,
    /// Fraction of footprint cells with a valid height.
    pub coverage: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ZonalError {
    #[error("object {0} has no valid height cell under its mask")]
    EmptyObject(String),
    #[error("object {id} covers only {coverage:.4} of its footprint (minimum {minimum})")]
    LowCoverage { id: String, coverage: f64, minimum: f64 },
    #[error("surface, ground and mask footprint must share one grid spec")]
    SpecMismatch,
}

#[derive(Default)]
struct Compensated {
    sum: f64,
    comp: f64,
    n: usize,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.sum + self.comp) / self.n as f64)
    }
}

/// Height statistics of one object.
pub fn object_stats(surface: &ElevationGrid, ground: &ElevationGrid, mask: &ObjectMask, cells: &CellSet, units: Units) -> Result<ObjectHeightRecord, ZonalError> {
    if surface.spec() != ground.spec() || surface.spec() != cells.spec() {
        return Err(ZonalError::SpecMismatch);
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut heights = Compensated::default();
    let mut ground_elev = Compensated::default();
    for &i in cells.indices() {
        let Some(h) = surface.at(i) else { continue };
        min = min.min(h);
        max = max.max(h);
        heights.add(h);
        if let Some(g) = ground.at(i) {
            ground_elev.add(g);
        }
    }
    let Some(mean) = heights.mean() else {
        return Err(ZonalError::EmptyObject(mask.id.clone()));
    };
    let mean = mean.clamp(min, max);
    let cell_count = cells.len();
    let spec = surface.spec();
    let polygon = &mask.polygon;
    let centroid = polygon.centroid().unwrap_or_else(|| {
        let (lo, hi) = polygon.bbox();
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
    });

    Ok(ObjectHeightRecord {
        id: mask.id.clone(),
        label: mask.label.clone(),
        height_min: units.from_meters(min),
        height_max: units.from_meters(max),
        height_mean: units.from_meters(mean),
        elev_ground_mean: units.from_meters(ground_elev.mean().unwrap_or(f64::NAN)),
        units,
        area: cell_count as f64 * spec.cell_size * spec.cell_size,
        perimeter: polygon.perimeter(),
        centroid,
        cell_count,
        coverage: heights.n as f64 / cell_count as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    pub units: Units,
    pub coverage_min: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            units: Units::Feet,
            coverage_min: DEFAULT_COVERAGE_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedMask {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateId {
    pub id: String,
    pub renamed_to: String,
}

#[derive(Debug, Clone, Default)]
pub struct ObjectTable {
    /// Records ordered by id.
    pub records: Vec<ObjectHeightRecord>,
    pub skipped: Vec<SkippedMask>,
    pub duplicates: Vec<DuplicateId>,
    /// Input masks after duplicate renaming, in input order.
    pub masks: Vec<ObjectMask>,
}

/// Gives every repeated id a `~N` suffix (N = 2, 3, ...) in input order,
/// skipping suffixes that collide with existing ids.
pub fn dedupe_ids(masks: &[ObjectMask]) -> (Vec<ObjectMask>, Vec<DuplicateId>) {
    let mut taken: HashSet<String> = masks.iter().map(|m| m.id.clone()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::with_capacity(masks.len());
    let mut dups = Vec::new();
    for m in masks {
        if seen.insert(m.id.as_str()) {
            out.push(m.clone());
            continue;
        }
        let mut n = 2;
        let renamed = loop {
            let candidate = format!("{}~{}", m.id, n);
            if !taken.contains(&candidate) {
                break candidate;
            }
            n += 1;
        };
        log::warn!("duplicate mask id {} renamed to {}", m.id, renamed);
        taken.insert(renamed.clone());
        dups.push(DuplicateId {
            id: m.id.clone(),
            renamed_to: renamed.clone(),
        });
        out.push(ObjectMask {
            id: renamed,
            ..m.clone()
        });
    }
    (out, dups)
}

/// Builds the object table: one record per mask with enough valid height
/// cells, ordered by id. Per-mask failures are collected, never fatal.
pub fn build_table(surface: &ElevationGrid, ground: &ElevationGrid, masks: &[ObjectMask], options: TableOptions) -> Result<ObjectTable, ZonalError> {
    if surface.spec() != ground.spec() {
        return Err(ZonalError::SpecMismatch);
    }
    let (masks, duplicates) = dedupe_ids(masks);
    let spec = surface.spec();
    let outcomes: Vec<Result<ObjectHeightRecord, ZonalError>> = masks
        .par_iter()
        .map(|m| {
            let cells = rasterize_mask(m, spec);
            let rec = object_stats(surface, ground, m, &cells, options.units)?;
            if rec.coverage < options.coverage_min {
                return Err(ZonalError::LowCoverage {
                    id: rec.id,
                    coverage: rec.coverage,
                    minimum: options.coverage_min,
                });
            }
            Ok(rec)
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (mask, outcome) in masks.iter().zip(outcomes) {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::info!("skipping mask {}: {e}", mask.id);
                skipped.push(SkippedMask {
                    id: mask.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    skipped.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(ObjectTable {
        records,
        skipped,
        duplicates,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::grid::GridSpec;

    fn mask(id: &str, min: [f64; 2], max: [f64; 2]) -> ObjectMask {
        ObjectMask {
            id: id.into(),
            label: "tree".into(),
            polygon: Polygon::rect(min, max),
            confidence: 0.9,
            source_resolution: 0.2,
        }
    }

    fn three_cell_scene() -> (ElevationGrid, ElevationGrid, ObjectMask) {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 3, 1).unwrap();
        let surface = ElevationGrid::from_values(spec, vec![Some(2.0), Some(4.0), Some(6.0)]).unwrap();
        let ground = ElevationGrid::filled(spec, 100.0);
        (surface, ground, mask("m", [0.0, 0.0], [0.6, 0.2]))
    }

    #[test]
    fn three_value_stats_in_meters() {
        let (s, g, m) = three_cell_scene();
        let cells = rasterize_mask(&m, s.spec());
        let r = object_stats(&s, &g, &m, &cells, Units::Meters).unwrap();
        assert_eq!((r.height_min, r.height_max, r.height_mean), (2.0, 6.0, 4.0));
        assert_eq!(r.elev_ground_mean, 100.0);
        assert_eq!(r.cell_count, 3);
        assert_eq!(r.area, 3.0 * 0.2 * 0.2);
        assert!((r.area - 0.12).abs() < 1e-15);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn feet_conversion() {
        let (s, g, m) = three_cell_scene();
        let cells = rasterize_mask(&m, s.spec());
        let r = object_stats(&s, &g, &m, &cells, Units::Feet).unwrap();
        assert!((r.height_mean - 13.12336).abs() < 1e-12);
        assert_eq!(r.units, Units::Feet);
        assert!((r.area - 0.12).abs() < 1e-15);
    }

    #[test]
    fn empty_object() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 5, 5).unwrap();
        let s = ElevationGrid::nodata(spec);
        let g = ElevationGrid::filled(spec, 1.0);
        let m = mask("e", [0.0, 0.0], [1.0, 1.0]);
        let cells = rasterize_mask(&m, &spec);
        assert_eq!(
            object_stats(&s, &g, &m, &cells, Units::Meters),
            Err(ZonalError::EmptyObject("e".into()))
        );
    }

    #[test]
    fn unit_square_geometry() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 5, 5).unwrap();
        let s = ElevationGrid::filled(spec, 1.0);
        let m = mask("u", [0.0, 0.0], [1.0, 1.0]);
        let cells = rasterize_mask(&m, &spec);
        let r = object_stats(&s, &s, &m, &cells, Units::Meters).unwrap();
        assert_eq!(r.perimeter, 4.0);
        assert_eq!(r.centroid, [0.5, 0.5]);
        assert_eq!(r.cell_count, 25);
    }

    #[test]
    fn table_ordering_and_diagnostics() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 10, 2).unwrap();
        let mut vals = vec![None; 20];
        for (c, v) in [(0, 1.0), (1, 3.0), (5, 10.0)] {
            vals[c] = Some(v);
        }
        let s = ElevationGrid::from_values(spec, vals).unwrap();
        let g = ElevationGrid::filled(spec, 0.0);
        let masks = vec![
            mask("z", [0.0, 0.0], [2.0, 1.0]),
            mask("a", [5.0, 0.0], [6.0, 1.0]),
            mask("a", [0.0, 0.0], [2.0, 1.0]),
            mask("sparse", [4.0, 0.0], [10.0, 2.0]), // 1 valid of 12
            mask("void", [8.0, 0.0], [10.0, 2.0]),
        ];
        let opts = TableOptions { units: Units::Meters, coverage_min: 0.1 };
        let t = build_table(&s, &g, &masks, opts).unwrap();
        let ids: Vec<_> = t.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "a~2", "z"]);
        assert_eq!(t.records[0].height_mean, 10.0);
        assert_eq!(t.records[2].height_mean, 2.0);
        assert_eq!(t.duplicates, vec![DuplicateId { id: "a".into(), renamed_to: "a~2".into() }]);
        let skipped: Vec<_> = t.skipped.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(skipped, ["sparse", "void"]);
        assert_eq!(t.masks.len(), 5);
    }

    #[test]
    fn zero_masks() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 1, 1).unwrap();
        let s = ElevationGrid::filled(spec, 1.0);
        let t = build_table(&s, &s, &[], TableOptions::default()).unwrap();
        assert!(t.records.is_empty() && t.skipped.is_empty());
    }

    #[test]
    fn dedupe_avoids_existing_suffixes() {
        let ms = vec![mask("a", [0.0, 0.0], [1.0, 1.0]), mask("a~2", [0.0, 0.0], [1.0, 1.0]), mask("a", [0.0, 0.0], [1.0, 1.0])];
        let (out, dups) = dedupe_ids(&ms);
        assert_eq!(out[2].id, "a~3");
        assert_eq!(dups.len(), 1);
    }

    #[test]
    fn parses_units() {
        assert_eq!("ft".parse::<Units>(), Ok(Units::Feet));
        assert_eq!("Meters".parse::<Units>(), Ok(Units::Meters));
        assert!("yards".parse::<Units>().is_err());
    }
}
