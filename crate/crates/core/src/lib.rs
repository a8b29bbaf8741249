//! Object heights from classified aerial LiDAR.
//!
//! Points are binned into an object surface (DSM) and a ground surface (DTM),
//! ground holes are filled from the nearest valid cells, and the difference
//! (nDSM) is summarized under externally supplied segmentation masks into a
//! per-object table of height, area, perimeter and location.
//!
//! ```text
//! LAS ──► grid (DSM: max over object classes)  ──┐
//!     └─► grid (DTM: min over ground class) ──► gapfill ──► heightmodel (nDSM)
//! masks (GeoJSON) ──► ensemble merge ─────────────────────────► zonal ──► export
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod export;
pub mod gapfill;
pub mod geometry;
pub mod grid;
pub mod heightmodel;
pub mod las;
pub mod masks;
pub mod pipeline;
pub mod zonal;

pub use config::PipelineConfig;
pub use gapfill::{fill_knn_mean, fill_nearest, FillMethod};
pub use geometry::Polygon;
pub use grid::{grid_bounds, rasterize, ClassSet, ElevationGrid, GridSpec, Reducer};
pub use heightmodel::ndsm;
pub use las::{parse_las_header, read_points, read_xyz_text, write_las, LasHeader, PointRecord};
pub use masks::{ensemble_merge, load_masks, rasterize_mask, CellSet, ObjectMask};
pub use pipeline::{run_pipeline, PipelineError};
pub use zonal::{build_table, object_stats, ObjectHeightRecord, Units};
