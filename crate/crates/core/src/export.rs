//! On-disk artifacts: the object table (CSV and GeoJSON), ESRI ASCII grids
//! and the JSON run report. Every file is written to a temporary sibling and
//! renamed into place.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::grid::ElevationGrid;
use crate::masks::{polygon_json, ObjectMask, SOURCE_MEMBER};
use crate::zonal::ObjectHeightRecord;

pub const NODATA_VALUE: &str = "-9999";

pub const TABLE_COLUMNS: [&str; 13] = [
    "id",
    "label",
    "centroid_x",
    "centroid_y",
    "area_m2",
    "perimeter_m",
    "height_min",
    "height_max",
    "height_mean",
    "elev_ground_mean",
    "units",
    "cell_count",
    "coverage",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("no mask geometry for record {0}")]
    MissingGeometry(String),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    let io_err = |source: io::Error| ExportError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".heights-")
        .tempfile_in(dir)
        .map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Fixed-precision formatting without a negative zero.
fn fixed(v: f64, digits: usize) -> String {
    let s = format!("{:.*}", digits, v);
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn float4(v: f64) -> String {
    fixed(v, 4)
}

/// The 13 table fields of a record as text, in column order.
pub fn record_fields(r: &ObjectHeightRecord) -> [String; 13] {
    [
        r.id.clone(),
        r.label.clone(),
        float4(r.centroid[0]),
        float4(r.centroid[1]),
        float4(r.area),
        float4(r.perimeter),
        float4(r.height_min),
        float4(r.height_max),
        float4(r.height_mean),
        float4(r.elev_ground_mean),
        r.units.as_str().to_string(),
        r.cell_count.to_string(),
        float4(r.coverage),
    ]
}

pub fn table_csv(records: &[ObjectHeightRecord]) -> Result<Vec<u8>, ExportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(TABLE_COLUMNS)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.into_inner().map_err(|e| ExportError::Io {
        path: "<memory>".into(),
        source: e.into_error(),
    })
}

pub fn write_table_csv(records: &[ObjectHeightRecord], path: &Path) -> Result<(), ExportError> {
    atomic_write(path, &table_csv(records)?)
}

/// Table properties as JSON values carrying exactly the CSV text values.
fn record_properties(r: &ObjectHeightRecord) -> Map<String, Value> {
    let fields = record_fields(r);
    let mut props = Map::new();
    for (name, text) in TABLE_COLUMNS.iter().zip(fields) {
        let value = match *name {
            "id" | "label" | "units" => Value::String(text),
            "cell_count" => json!(r.cell_count),
            _ => text.parse::<f64>().ok().filter(|v| v.is_finite()).map_or(Value::Null, |v| json!(v)),
        };
        props.insert(name.to_string(), value);
    }
    props
}

/// FeatureCollection pairing each record with its mask polygon. Mask
/// provenance travels in a `source` member so the file re-loads as masks.
pub fn table_geojson(records: &[ObjectHeightRecord], masks: &[ObjectMask]) -> Result<Value, ExportError> {
    let by_id: std::collections::HashMap<&str, &ObjectMask> = masks.iter().map(|m| (m.id.as_str(), m)).collect();
    let features = records
        .iter()
        .map(|r| {
            let mask = by_id.get(r.id.as_str()).ok_or_else(|| ExportError::MissingGeometry(r.id.clone()))?;
            Ok(json!({
                "type": "Feature",
                "geometry": polygon_json(&mask.polygon),
                "properties": record_properties(r),
                SOURCE_MEMBER: {
                    "confidence": mask.confidence,
                    "source_resolution_m": mask.source_resolution,
                },
            }))
        })
        .collect::<Result<Vec<_>, ExportError>>()?;
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn write_table_geojson(records: &[ObjectHeightRecord], masks: &[ObjectMask], path: &Path) -> Result<(), ExportError> {
    let doc = table_geojson(records, masks)?;
    write_json(&doc, path)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ExportError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// ESRI ASCII grid text, rows written north to south.
pub fn grid_asc(grid: &ElevationGrid) -> String {
    use std::fmt::Write as _;
    let spec = grid.spec();
    let mut out = String::with_capacity(spec.len() * 9 + 128);
    let _ = writeln!(out, "ncols {}", spec.ncols);
    let _ = writeln!(out, "nrows {}", spec.nrows);
    let _ = writeln!(out, "xllcorner {}", spec.origin[0]);
    let _ = writeln!(out, "yllcorner {}", spec.origin[1]);
    let _ = writeln!(out, "cellsize {}", spec.cell_size);
    let _ = writeln!(out, "NODATA_value {NODATA_VALUE}");
    for row in (0..spec.nrows).rev() {
        for col in 0..spec.ncols {
            if col > 0 {
                out.push(' ');
            }
            match grid.get(col, row) {
                Some(v) => out.push_str(&fixed(v, 3)),
                None => out.push_str(NODATA_VALUE),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_grid_asc(grid: &ElevationGrid, path: &Path) -> Result<(), ExportError> {
    atomic_write(path, grid_asc(grid).as_bytes())
}
