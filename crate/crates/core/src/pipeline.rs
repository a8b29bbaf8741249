//! End-to-end orchestration: points → DSM/DTM → filled DTM → nDSM →
//! per-object table, plus the individual stages the CLI exposes.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ConfigSummary, PipelineConfig};
use crate::export::{self, ExportError};
use crate::gapfill::GapFillError;
use crate::grid::{Bounds, ClassSet, ElevationGrid, GridError, GridSpec, RasterStats, Rasterizer};
use crate::heightmodel::{ndsm, NdsmStats};
use crate::las::{self, LasError, PointRecord};
use crate::masks::{self, ensemble_merge_detailed, InvalidMask, MaskError, ObjectMask, Suppressed};
use crate::zonal::{build_table, DuplicateId, ObjectHeightRecord, SkippedMask, TableOptions, ZonalError};

pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_GEOJSON: &str = "table.geojson";
pub const DSM_ASC: &str = "dsm.asc";
pub const DTM_ASC: &str = "dtm.asc";
pub const DTM_FILLED_ASC: &str = "dtm_filled.asc";
pub const NDSM_ASC: &str = "ndsm.asc";
pub const REPORT_JSON: &str = "run.report.json";

/// Points handed to the rasterizers per parallel batch.
const CHUNK: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Points { path: String, source: LasError },
    #[error("{path}: {source}")]
    Masks { path: String, source: MaskError },
    #[error("no ground or object points found in the point inputs")]
    NoPoints,
    #[error("no point inputs given")]
    NoPointInputs,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("ground surface: {0}")]
    GapFill(#[from] GapFillError),
    #[error(transparent)]
    Zonal(#[from] ZonalError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Point inputs
// ---------------------------------------------------------------------------

pub type PointStream = Box<dyn Iterator<Item = Result<PointRecord, LasError>> + Send>;

/// Opens a point file. LAS is recognized by its signature; anything else is
/// read as "x y z classification" text.
pub fn open_points(path: &Path) -> Result<PointStream, LasError> {
    let mut magic = [0u8; 4];
    let n = File::open(path)?.read(&mut magic)?;
    if n == 4 && &magic == las::LAS_SIGNATURE {
        let (_, points) = las::open_las(path)?;
        Ok(Box::new(points))
    } else {
        let reader = BufReader::new(File::open(path)?);
        Ok(Box::new(las::read_xyz_text(reader)))
    }
}

/// Streams every point of every input in batches.
fn for_each_batch<F>(paths: &[PathBuf], mut f: F) -> Result<u64, PipelineError>
where
    F: FnMut(&[PointRecord]),
{
    let mut total = 0u64;
    let mut batch = Vec::with_capacity(CHUNK);
    for path in paths {
        let wrap = |source| PipelineError::Points {
            path: path.display().to_string(),
            source,
        };
        for p in open_points(path).map_err(wrap)? {
            batch.push(p.map_err(wrap)?);
            if batch.len() == CHUNK {
                f(&batch);
                total += batch.len() as u64;
                batch.clear();
            }
        }
    }
    if !batch.is_empty() {
        f(&batch);
        total += batch.len() as u64;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Surfaces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Surfaces {
    pub spec: GridSpec,
    pub dsm: ElevationGrid,
    pub dtm: ElevationGrid,
    pub dsm_stats: RasterStats,
    pub dtm_stats: RasterStats,
    pub points_read: u64,
}

/// Rasterizes the object (DSM) and ground (DTM) surfaces on a shared grid
/// covering every ground and object point.
pub fn build_surfaces(config: &PipelineConfig, las_paths: &[PathBuf]) -> Result<Surfaces, PipelineError> {
    config.validate()?;
    if las_paths.is_empty() {
        return Err(PipelineError::NoPointInputs);
    }
    let relevant = ClassSet::new(
        config
            .ground_classes
            .codes()
            .into_iter()
            .chain(config.object_classes.codes()),
    );

    let mut bounds = Bounds::default();
    for_each_batch(las_paths, |batch| {
        for p in batch.iter().filter(|p| relevant.contains(p.classification)) {
            bounds.add(p.x, p.y);
        }
    })?;
    let spec = match bounds.to_spec(config.cell_size) {
        Err(GridError::EmptyInput) => return Err(PipelineError::NoPoints),
        other => other?,
    };
    log::info!("grid {} x {} cells at {} m", spec.ncols, spec.nrows, spec.cell_size);

    let mut dsm = Rasterizer::new(spec, config.object_classes.clone(), config.dsm_reducer);
    let mut dtm = Rasterizer::new(spec, config.ground_classes.clone(), config.dtm_reducer);
    let points_read = for_each_batch(las_paths, |batch| {
        rayon::join(|| dsm.extend_par(batch), || dtm.extend_par(batch));
    })?;
    let (dsm, dsm_stats) = dsm.finish();
    let (dtm, dtm_stats) = dtm.finish();
    Ok(Surfaces {
        spec,
        dsm,
        dtm,
        dsm_stats,
        dtm_stats,
        points_read,
    })
}

#[derive(Debug, Clone)]
pub struct HeightSurfaces {
    pub surfaces: Surfaces,
    pub dtm_filled: ElevationGrid,
    pub ndsm: ElevationGrid,
    pub ndsm_stats: NdsmStats,
}

pub fn build_height_surfaces(config: &PipelineConfig, las_paths: &[PathBuf]) -> Result<HeightSurfaces, PipelineError> {
    let surfaces = build_surfaces(config, las_paths)?;
    let dtm_filled = config.fill.apply(&surfaces.dtm, config.max_fill_distance)?;
    let (ndsm, ndsm_stats) = ndsm(&surfaces.dsm, &dtm_filled, config.clamp_negative)?;
    if ndsm_stats.negative_cells > 0 {
        log::warn!("{} cells had object surface below ground", ndsm_stats.negative_cells);
    }
    Ok(HeightSurfaces {
        surfaces,
        dtm_filled,
        ndsm,
        ndsm_stats,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_error(dir))
}

/// `dsm` stage: writes `dsm.asc`.
pub fn run_dsm(config: &PipelineConfig, las_paths: &[PathBuf], out_dir: &Path) -> Result<Surfaces, PipelineError> {
    config.validate()?;
    let s = build_surfaces(config, las_paths)?;
    ensure_dir(out_dir)?;
    export::write_grid_asc(&s.dsm, &out_dir.join(DSM_ASC))?;
    Ok(s)
}

/// `dtm` stage: writes `dtm.asc` and `dtm_filled.asc`.
pub fn run_dtm(config: &PipelineConfig, las_paths: &[PathBuf], out_dir: &Path) -> Result<(Surfaces, ElevationGrid), PipelineError> {
    config.validate()?;
    let s = build_surfaces(config, las_paths)?;
    let filled = config.fill.apply(&s.dtm, config.max_fill_distance)?;
    ensure_dir(out_dir)?;
    export::write_grid_asc(&s.dtm, &out_dir.join(DTM_ASC))?;
    export::write_grid_asc(&filled, &out_dir.join(DTM_FILLED_ASC))?;
    Ok((s, filled))
}

/// `ndsm` stage: writes `ndsm.asc`.
pub fn run_ndsm(config: &PipelineConfig, las_paths: &[PathBuf], out_dir: &Path) -> Result<HeightSurfaces, PipelineError> {
    config.validate()?;
    let h = build_height_surfaces(config, las_paths)?;
    ensure_dir(out_dir)?;
    export::write_grid_asc(&h.ndsm, &out_dir.join(NDSM_ASC))?;
    Ok(h)
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct MaskReport {
    pub files: usize,
    pub loaded: usize,
    pub rejected: Vec<InvalidMask>,
    pub suppressed: Vec<Suppressed>,
    pub kept: usize,
}

/// Loads every mask file, keeping one set per file.
pub fn load_mask_sets(paths: &[PathBuf]) -> Result<(Vec<Vec<ObjectMask>>, Vec<InvalidMask>), PipelineError> {
    let mut sets = Vec::with_capacity(paths.len());
    let mut rejected = Vec::new();
    for path in paths {
        let loaded = masks::load_masks(path).map_err(|source| PipelineError::Masks {
            path: path.display().to_string(),
            source,
        })?;
        rejected.extend(loaded.rejected.into_iter().map(|r| InvalidMask {
            id: r.id,
            reason: format!("{}: {}", path.display(), r.reason),
        }));
        sets.push(loaded.masks);
    }
    Ok((sets, rejected))
}

/// Deduplicates masks across sets on a grid spanning all of them at the
/// configured cell size.
pub fn merge_mask_sets(config: &PipelineConfig, sets: &[Vec<ObjectMask>]) -> Result<(Vec<ObjectMask>, Vec<Suppressed>), PipelineError> {
    let all: Vec<ObjectMask> = sets.iter().flatten().cloned().collect();
    if all.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let spec = masks::mask_extent_spec(&all, config.cell_size)?;
    let merged = ensemble_merge_detailed(sets, &spec, config.iou_threshold);
    Ok((merged.kept, merged.suppressed))
}

/// `merge-masks` stage: ensemble only, written in the mask interchange format.
pub fn run_merge_masks(config: &PipelineConfig, mask_paths: &[PathBuf], out_path: &Path) -> Result<MaskReport, PipelineError> {
    config.validate()?;
    let (sets, rejected) = load_mask_sets(mask_paths)?;
    let loaded = sets.iter().map(Vec::len).sum();
    let (kept, suppressed) = merge_mask_sets(config, &sets)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    export::write_json(&masks::masks_to_geojson(&kept), out_path)?;
    Ok(MaskReport {
        files: mask_paths.len(),
        loaded,
        rejected,
        suppressed,
        kept: kept.len(),
    })
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub read: u64,
    pub dsm: RasterStats,
    pub dtm: RasterStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct FillReport {
    pub method: String,
    pub holes_before: usize,
    pub holes_after: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ConfigSummary,
    pub grid: GridSpec,
    pub points: PointReport,
    pub fill: FillReport,
    pub ndsm: NdsmStats,
    pub masks: MaskReport,
    pub duplicate_ids: Vec<DuplicateId>,
    pub skipped_objects: Vec<SkippedMask>,
    pub objects: usize,
    pub artifacts: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub records: Vec<ObjectHeightRecord>,
    pub heights: HeightSurfaces,
}

/// Runs every stage and writes all artifacts into `out_dir`. `table.csv` is
/// written last, so its presence marks a complete run.
pub fn run_pipeline(config: &PipelineConfig, las_paths: &[PathBuf], mask_paths: &[PathBuf], out_dir: &Path) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let (sets, rejected) = load_mask_sets(mask_paths)?;
    let loaded: usize = sets.iter().map(Vec::len).sum();
    let heights = build_height_surfaces(config, las_paths)?;
    let (kept, suppressed) = merge_mask_sets(config, &sets)?;

    let options = TableOptions {
        units: config.units,
        coverage_min: config.coverage_min,
    };
    let table = build_table(&heights.ndsm, &heights.dtm_filled, &kept, options)?;

    ensure_dir(out_dir)?;
    let s = &heights.surfaces;
    export::write_grid_asc(&s.dsm, &out_dir.join(DSM_ASC))?;
    export::write_grid_asc(&s.dtm, &out_dir.join(DTM_ASC))?;
    export::write_grid_asc(&heights.dtm_filled, &out_dir.join(DTM_FILLED_ASC))?;
    export::write_grid_asc(&heights.ndsm, &out_dir.join(NDSM_ASC))?;
    export::write_table_geojson(&table.records, &table.masks, &out_dir.join(TABLE_GEOJSON))?;

    let report = RunReport {
        config: config.summary(),
        grid: s.spec,
        points: PointReport {
            read: s.points_read,
            dsm: s.dsm_stats,
            dtm: s.dtm_stats,
        },
        fill: FillReport {
            method: config.fill.to_string(),
            holes_before: s.spec.len() - s.dtm.valid_count(),
            holes_after: s.spec.len() - heights.dtm_filled.valid_count(),
        },
        ndsm: heights.ndsm_stats,
        masks: MaskReport {
            files: mask_paths.len(),
            loaded,
            rejected,
            suppressed,
            kept: kept.len(),
        },
        duplicate_ids: table.duplicates.clone(),
        skipped_objects: table.skipped.clone(),
        objects: table.records.len(),
        artifacts: vec![DSM_ASC, DTM_ASC, DTM_FILLED_ASC, NDSM_ASC, TABLE_GEOJSON, REPORT_JSON, TABLE_CSV],
    };
    export::write_json(&report, &out_dir.join(REPORT_JSON))?;
    export::write_table_csv(&table.records, &out_dir.join(TABLE_CSV))?;

    Ok(RunOutput {
        report,
        records: table.records,
        heights,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PointFileSummary {
    pub path: String,
    pub format: String,
    pub points: u64,
    pub class_counts: Vec<(u8, u64)>,
    pub bounds: Option<[f64; 4]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskFileSummary {
    pub path: String,
    pub loaded: usize,
    pub rejected: Vec<InvalidMask>,
    pub labels: Vec<(String, usize)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub points: Vec<PointFileSummary>,
    pub masks: Vec<MaskFileSummary>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.points.iter().all(|p| p.error.is_none()) && self.masks.iter().all(|m| m.error.is_none() && m.rejected.is_empty())
    }
}

fn summarize_points(path: &Path) -> PointFileSummary {
    let mut summary = PointFileSummary {
        path: path.display().to_string(),
        format: "text".into(),
        points: 0,
        class_counts: Vec::new(),
        bounds: None,
        error: None,
    };
    if let Ok((header, _)) = las::open_las(path) {
        summary.format = format!(
            "LAS {}.{} point format {}",
            header.version.0, header.version.1, header.point_format_id
        );
    }
    let stream = match open_points(path) {
        Ok(s) => s,
        Err(e) => {
            summary.error = Some(e.to_string());
            return summary;
        }
    };
    let mut counts = [0u64; 256];
    let mut bounds = Bounds::default();
    for p in stream {
        match p {
            Ok(p) => {
                summary.points += 1;
                counts[p.classification as usize] += 1;
                bounds.add(p.x, p.y);
            }
            Err(e) => {
                summary.error = Some(e.to_string());
                break;
            }
        }
    }
    summary.class_counts = (0..=255u8).filter(|&c| counts[c as usize] > 0).map(|c| (c, counts[c as usize])).collect();
    if bounds.count > 0 {
        summary.bounds = Some([bounds.min[0], bounds.min[1], bounds.max[0], bounds.max[1]]);
    }
    summary
}

fn summarize_masks(path: &Path) -> MaskFileSummary {
    let mut summary = MaskFileSummary {
        path: path.display().to_string(),
        loaded: 0,
        rejected: Vec::new(),
        labels: Vec::new(),
        error: None,
    };
    match masks::load_masks(path) {
        Ok(loaded) => {
            summary.loaded = loaded.masks.len();
            let mut labels = std::collections::BTreeMap::new();
            for m in &loaded.masks {
                *labels.entry(m.label.clone()).or_insert(0) += 1;
            }
            summary.labels = labels.into_iter().collect();
            summary.rejected = loaded.rejected;
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    summary
}

/// Parses every input and summarizes what was found, without failing fast.
pub fn validate_inputs(las_paths: &[PathBuf], mask_paths: &[PathBuf]) -> ValidationReport {
    ValidationReport {
        points: las_paths.iter().map(|p| summarize_points(p)).collect(),
        masks: mask_paths.iter().map(|p| summarize_masks(p)).collect(),
    }
}
