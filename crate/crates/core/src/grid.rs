//! Georeferenced elevation rasters and point binning.
//!
//! Cells are half-open: cell `(col, row)` covers
//! `[x0 + col*s, x0 + (col+1)*s) × [y0 + row*s, y0 + (row+1)*s)`, with row 0
//! at the bottom (south) edge. Edges are always evaluated with the same
//! floating-point expression so membership never disagrees with the
//! published cell bounds.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::las::PointRecord;

/// Default cell size in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.2;

/// Refuse to allocate rasters beyond this many cells.
pub const MAX_CELLS: u64 = 1 << 32;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("no points to derive grid bounds from")]
    EmptyInput,
    #[error("cell size must be a positive finite number, got {0}")]
    InvalidCellSize(f64),
    #[error("grid of {ncols} x {nrows} cells is empty or exceeds the supported size")]
    InvalidDimensions { ncols: u64, nrows: u64 },
    #[error("grid origin ({0}, {1}) is not finite")]
    InvalidOrigin(f64, f64),
    #[error("grid specs differ")]
    SpecMismatch,
    #[error("value {value} at cell ({col}, {row}) is not finite")]
    NonFinite { col: usize, row: usize, value: f64 },
    #[error("expected {expected} cell values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Lower-left corner.
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
}

#[inline]
fn edge(origin: f64, index: i64, cell_size: f64) -> f64 {
    origin + index as f64 * cell_size
}

/// Index of the half-open interval `[edge(i), edge(i+1))` containing `v`.
#[inline]
fn axis_index(v: f64, origin: f64, cell_size: f64) -> Option<i64> {
    let t = ((v - origin) / cell_size).floor();
    if !t.is_finite() || t.abs() > (1u64 << 52) as f64 {
        return None;
    }
    let mut i = t as i64;
    if v < edge(origin, i, cell_size) {
        i -= 1;
    } else if v >= edge(origin, i + 1, cell_size) {
        i += 1;
    }
    Some(i)
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, ncols: usize, nrows: usize) -> Result<Self, GridError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(GridError::InvalidOrigin(origin[0], origin[1]));
        }
        let cells = (ncols as u64).checked_mul(nrows as u64);
        if ncols == 0 || nrows == 0 || cells.is_none_or(|c| c > MAX_CELLS) {
            return Err(GridError::InvalidDimensions {
                ncols: ncols as u64,
                nrows: nrows as u64,
            });
        }
        Ok(Self {
            origin,
            cell_size,
            ncols,
            nrows,
        })
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.ncols, index / self.ncols)
    }

    /// Lower edge of column `col` (may be outside the grid).
    pub fn x_edge(&self, col: i64) -> f64 {
        edge(self.origin[0], col, self.cell_size)
    }

    /// Lower edge of row `row` (may be outside the grid).
    pub fn y_edge(&self, row: i64) -> f64 {
        edge(self.origin[1], row, self.cell_size)
    }

    /// Unbounded column index for `x`.
    pub fn col_of(&self, x: f64) -> Option<i64> {
        axis_index(x, self.origin[0], self.cell_size)
    }

    /// Unbounded row index for `y`.
    pub fn row_of(&self, y: f64) -> Option<i64> {
        axis_index(y, self.origin[1], self.cell_size)
    }

    /// Cell containing `(x, y)`, if inside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = self.col_of(x)?;
        let row = self.row_of(y)?;
        if col < 0 || row < 0 || col >= self.ncols as i64 || row >= self.nrows as i64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    pub fn center_x(&self, col: i64) -> f64 {
        self.origin[0] + (col as f64 + 0.5) * self.cell_size
    }

    pub fn center_y(&self, row: i64) -> f64 {
        self.origin[1] + (row as f64 + 0.5) * self.cell_size
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [self.center_x(col as i64), self.center_y(row as i64)]
    }

    /// Upper-right corner of the extent.
    pub fn max_corner(&self) -> [f64; 2] {
        [self.x_edge(self.ncols as i64), self.y_edge(self.nrows as i64)]
    }
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

/// Streaming bounding-box accumulator over planar coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub count: u64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
            count: 0,
        }
    }
}

impl Bounds {
    /// Non-finite coordinates are ignored.
    pub fn add(&mut self, x: f64, y: f64) {
        if !(x.is_finite() && y.is_finite()) {
            return;
        }
        self.min[0] = self.min[0].min(x);
        self.min[1] = self.min[1].min(y);
        self.max[0] = self.max[0].max(x);
        self.max[1] = self.max[1].max(y);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Bounds) {
        if other.count == 0 {
            return;
        }
        for axis in 0..2 {
            self.min[axis] = self.min[axis].min(other.min[axis]);
            self.max[axis] = self.max[axis].max(other.max[axis]);
        }
        self.count += other.count;
    }

    /// Smallest grid whose origin is a multiple of `cell_size` and whose
    /// half-open extent covers every added coordinate.
    pub fn to_spec(&self, cell_size: f64) -> Result<GridSpec, GridError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        if self.count == 0 {
            return Err(GridError::EmptyInput);
        }
        let mut origin = [0.0; 2];
        let mut dims = [0u64; 2];
        for axis in 0..2 {
            let lo = self.min[axis];
            let k = (lo / cell_size).floor();
            if !k.is_finite() || k.abs() > (1u64 << 52) as f64 {
                return Err(GridError::InvalidOrigin(lo, lo));
            }
            let mut k = k as i64;
            if edge(0.0, k, cell_size) > lo {
                k -= 1;
            }
            while edge(0.0, k + 1, cell_size) <= lo {
                k += 1;
            }
            origin[axis] = edge(0.0, k, cell_size);
            let last = axis_index(self.max[axis], origin[axis], cell_size).ok_or(
                GridError::InvalidDimensions {
                    ncols: u64::MAX,
                    nrows: u64::MAX,
                },
            )?;
            dims[axis] = last as u64 + 1;
        }
        if dims[0].saturating_mul(dims[1]) > MAX_CELLS {
            return Err(GridError::InvalidDimensions {
                ncols: dims[0],
                nrows: dims[1],
            });
        }
        GridSpec::new(origin, cell_size, dims[0] as usize, dims[1] as usize)
    }
}

/// Grid covering every point of `points`, origin snapped down to a multiple
/// of `cell_size`.
pub fn grid_bounds<'a, I>(points: I, cell_size: f64) -> Result<GridSpec, GridError>
where
    I: IntoIterator<Item = &'a PointRecord>,
{
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(GridError::InvalidCellSize(cell_size));
    }
    let mut bounds = Bounds::default();
    for p in points {
        bounds.add(p.x, p.y);
    }
    bounds.to_spec(cell_size)
}

// ---------------------------------------------------------------------------
// Elevation grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    spec: GridSpec,
    values: Vec<Option<f64>>,
}

impl ElevationGrid {
    pub fn nodata(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![None; spec.len()],
        }
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            spec,
            values: vec![Some(value); spec.len()],
        }
    }

    /// Builds a grid from row-major values, row 0 at the bottom.
    pub fn from_values(spec: GridSpec, values: Vec<Option<f64>>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::WrongLength {
                expected: spec.len(),
                got: values.len(),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                if !v.is_finite() {
                    let (col, row) = spec.col_row(i);
                    return Err(GridError::NonFinite { col, row, value: *v });
                }
            }
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        self.values[self.spec.index(col, row)]
    }

    pub fn at(&self, index: usize) -> Option<f64> {
        self.values[index]
    }

    /// Sets a cell. Non-finite values are stored as nodata.
    pub fn set(&mut self, col: usize, row: usize, value: Option<f64>) {
        let i = self.spec.index(col, row);
        self.values[i] = value.filter(|v| v.is_finite());
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn nodata_mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_none).collect()
    }

    /// Min and max over valid cells.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.values.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    Max,
    Min,
    Mean,
}

impl FromStr for Reducer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(Reducer::Max),
            "min" => Ok(Reducer::Min),
            "mean" => Ok(Reducer::Mean),
            other => Err(format!("unknown reducer '{other}' (expected max, min or mean)")),
        }
    }
}

/// Set of classification codes, one flag per code.
#[derive(Clone, PartialEq, Eq)]
pub struct ClassSet([bool; 256]);

impl ClassSet {
    pub fn new<I: IntoIterator<Item = u8>>(codes: I) -> Self {
        let mut flags = [false; 256];
        for c in codes {
            flags[c as usize] = true;
        }
        Self(flags)
    }

    #[inline]
    pub fn contains(&self, code: u8) -> bool {
        self.0[code as usize]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&f| f)
    }

    pub fn codes(&self) -> Vec<u8> {
        (0..=255u8).filter(|&c| self.contains(c)).collect()
    }

    pub fn is_disjoint(&self, other: &ClassSet) -> bool {
        !self.0.iter().zip(other.0.iter()).any(|(a, b)| *a && *b)
    }
}

impl std::fmt::Debug for ClassSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.codes()).finish()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RasterStats {
    /// Points whose class was requested.
    pub in_class: u64,
    /// In-class points that landed inside the grid extent.
    pub binned: u64,
    /// In-class points outside the extent (or with non-finite coordinates).
    pub out_of_extent: u64,
}

/// Neumaier compensated addition of `v` into `(sum, comp)`.
#[inline]
fn compensated_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

/// Incremental rasterizer for one surface. Feed points with [`push`] or
/// [`extend_par`], combine partitions with [`merge`], then [`finish`].
///
/// [`push`]: Rasterizer::push
/// [`extend_par`]: Rasterizer::extend_par
/// [`merge`]: Rasterizer::merge
/// [`finish`]: Rasterizer::finish
#[derive(Debug, Clone)]
pub struct Rasterizer {
    spec: GridSpec,
    classes: ClassSet,
    reducer: Reducer,
    counts: Vec<u32>,
    values: Vec<f64>,
    // Compensation terms, only allocated for the mean reducer.
    comp: Vec<f64>,
    stats: RasterStats,
}

impl Rasterizer {
    pub fn new(spec: GridSpec, classes: ClassSet, reducer: Reducer) -> Self {
        let n = spec.len();
        Self {
            spec,
            classes,
            reducer,
            counts: vec![0; n],
            values: vec![0.0; n],
            comp: if reducer == Reducer::Mean { vec![0.0; n] } else { Vec::new() },
            stats: RasterStats::default(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    fn locate(&self, p: &PointRecord) -> Option<usize> {
        if !p.z.is_finite() {
            return None;
        }
        self.spec.cell_of(p.x, p.y).map(|(c, r)| self.spec.index(c, r))
    }

    #[inline]
    fn accumulate(&mut self, cell: usize, z: f64) {
        let n = self.counts[cell];
        match self.reducer {
            Reducer::Max => {
                if n == 0 || z > self.values[cell] {
                    self.values[cell] = z;
                }
            }
            Reducer::Min => {
                if n == 0 || z < self.values[cell] {
                    self.values[cell] = z;
                }
            }
            Reducer::Mean => compensated_add(&mut self.values[cell], &mut self.comp[cell], z),
        }
        self.counts[cell] = n.saturating_add(1);
    }

    pub fn push(&mut self, p: &PointRecord) {
        if !self.classes.contains(p.classification) {
            return;
        }
        self.stats.in_class += 1;
        match self.locate(p) {
            Some(cell) => {
                self.stats.binned += 1;
                self.accumulate(cell, p.z);
            }
            None => self.stats.out_of_extent += 1,
        }
    }

    /// Bins a batch of points using all worker threads. The batch is keyed
    /// and sorted by (cell, z) in parallel so the per-cell fold order does
    /// not depend on the order of `points`.
    pub fn extend_par(&mut self, points: &[PointRecord]) {
        let mut keyed: Vec<(usize, f64)> = points
            .par_iter()
            .filter(|p| self.classes.contains(p.classification))
            .map(|p| (self.locate(p).unwrap_or(usize::MAX), p.z))
            .collect();
        keyed.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        self.stats.in_class += keyed.len() as u64;
        for (cell, z) in keyed {
            if cell == usize::MAX {
                self.stats.out_of_extent += 1;
            } else {
                self.stats.binned += 1;
                self.accumulate(cell, z);
            }
        }
    }

    /// Folds a rasterizer built over another partition of the same stream.
    pub fn merge(&mut self, other: &Rasterizer) -> Result<(), GridError> {
        if self.spec != other.spec || self.reducer != other.reducer {
            return Err(GridError::SpecMismatch);
        }
        for cell in 0..self.counts.len() {
            let m = other.counts[cell];
            if m == 0 {
                continue;
            }
            let n = self.counts[cell];
            let v = other.values[cell];
            match self.reducer {
                Reducer::Max => {
                    if n == 0 || v > self.values[cell] {
                        self.values[cell] = v;
                    }
                }
                Reducer::Min => {
                    if n == 0 || v < self.values[cell] {
                        self.values[cell] = v;
                    }
                }
                Reducer::Mean => {
                    compensated_add(&mut self.values[cell], &mut self.comp[cell], v);
                    self.comp[cell] += other.comp[cell];
                }
            }
            self.counts[cell] = n.saturating_add(m);
        }
        self.stats.in_class += other.stats.in_class;
        self.stats.binned += other.stats.binned;
        self.stats.out_of_extent += other.stats.out_of_extent;
        Ok(())
    }

    pub fn stats(&self) -> RasterStats {
        self.stats
    }

    /// Per-cell point counts, row-major.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn finish(self) -> (ElevationGrid, RasterStats) {
        let reducer = self.reducer;
        let values = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if n == 0 {
                    return None;
                }
                let v = match reducer {
                    Reducer::Mean => (self.values[i] + self.comp[i]) / n as f64,
                    _ => self.values[i],
                };
                Some(v).filter(|v| v.is_finite())
            })
            .collect();
        (
            ElevationGrid {
                spec: self.spec,
                values,
            },
            self.stats,
        )
    }
}

/// Reduces the z values of in-class points per cell. Cells without an
/// in-class point are nodata; points outside the extent are tallied.
pub fn rasterize<'a, I>(points: I, spec: GridSpec, classes: &ClassSet, reducer: Reducer) -> (ElevationGrid, RasterStats)
where
    I: IntoIterator<Item = &'a PointRecord>,
{
    let mut r = Rasterizer::new(spec, classes.clone(), reducer);
    for p in points {
        r.push(p);
    }
    r.finish()
}

/// Parallel [`rasterize`] over an in-memory slice.
pub fn rasterize_par(points: &[PointRecord], spec: GridSpec, classes: &ClassSet, reducer: Reducer) -> (ElevationGrid, RasterStats) {
    let mut r = Rasterizer::new(spec, classes.clone(), reducer);
    r.extend_par(points);
    r.finish()
}
