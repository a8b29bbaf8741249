//! Nodata infill from the nearest valid cells.
//!
//! Distances are Euclidean between cell centers. Because all cells share one
//! size, they are compared as exact integer squared index offsets
//! (`dcol² + drow²`); the metric threshold is applied as
//! `sqrt(d²) · cell_size ≤ max_distance`.
//!
//! When several donors are equally near they are averaged. The average sums
//! donor values in row-major index order and is clamped to the donors' own
//! range, so the result is independent of scan order and never leaves the
//! range of the values it was built from.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::ElevationGrid;

/// Side length (cells) of the buckets the donor index is built from.
const BLOCK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum GapFillError {
    #[error("grid has no valid cell to fill from")]
    AllNoData,
    #[error("k = {needed} nearest donors requested but only {available} valid cells exist")]
    InsufficientDonors { needed: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("maximum fill distance must be a non-negative number, got {0}")]
    InvalidMaxDistance(f64),
}

/// Fill strategy for the ground surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMethod {
    Nearest,
    KnnMean(usize),
}

impl std::str::FromStr for FillMethod {
    type Err = String;

    /// Accepts `nearest`, `knn:K` or `knn(K)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "nearest" {
            return Ok(FillMethod::Nearest);
        }
        let k = s
            .strip_prefix("knn:")
            .or_else(|| s.strip_prefix("knn(").and_then(|r| r.strip_suffix(')')))
            .ok_or_else(|| format!("unknown fill method '{s}' (expected nearest or knn:K)"))?;
        let k: usize = k.trim().parse().map_err(|_| format!("invalid k in '{s}'"))?;
        if k == 0 {
            return Err("knn fill needs k >= 1".into());
        }
        Ok(FillMethod::KnnMean(k))
    }
}

impl std::fmt::Display for FillMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FillMethod::Nearest => write!(f, "nearest"),
            FillMethod::KnnMean(k) => write!(f, "knn:{k}"),
        }
    }
}

impl FillMethod {
    pub fn apply(self, grid: &ElevationGrid, max_distance: Option<f64>) -> Result<ElevationGrid, GapFillError> {
        match self {
            FillMethod::Nearest => fill_nearest(grid, max_distance),
            FillMethod::KnnMean(k) => fill_knn(grid, k, max_distance),
        }
    }
}

/// Whether a donor at squared index distance `d2` is within `max_distance`.
pub fn within_distance(d2: u64, cell_size: f64, max_distance: f64) -> bool {
    (d2 as f64).sqrt() * cell_size <= max_distance
}

/// Largest squared index distance still within `max_distance`.
fn max_d2(cell_size: f64, max_distance: Option<f64>) -> Result<u64, GapFillError> {
    let Some(max) = max_distance else {
        return Ok(u64::MAX);
    };
    if max.is_nan() || max < 0.0 {
        return Err(GapFillError::InvalidMaxDistance(max));
    }
    let r = max / cell_size;
    if !(r * r < 1e15) {
        return Ok(u64::MAX);
    }
    let mut m = (r * r).floor() as u64;
    while within_distance(m + 1, cell_size, max) {
        m += 1;
    }
    while m > 0 && !within_distance(m, cell_size, max) {
        m -= 1;
    }
    Ok(m)
}

#[derive(Clone, Copy)]
struct Donor {
    col: u32,
    row: u32,
    value: f64,
}

/// Valid cells bucketed into `BLOCK × BLOCK` tiles, stored CSR-style.
struct DonorIndex {
    nbx: usize,
    nby: usize,
    starts: Vec<usize>,
    donors: Vec<Donor>,
}

impl DonorIndex {
    fn build(grid: &ElevationGrid) -> Self {
        let spec = grid.spec();
        let nbx = spec.ncols.div_ceil(BLOCK);
        let nby = spec.nrows.div_ceil(BLOCK);
        let block_of = |col: usize, row: usize| (row / BLOCK) * nbx + col / BLOCK;
        let mut starts = vec![0usize; nbx * nby + 1];
        for (i, v) in grid.values().iter().enumerate() {
            if v.is_some() {
                let (c, r) = spec.col_row(i);
                starts[block_of(c, r) + 1] += 1;
            }
        }
        for b in 0..nbx * nby {
            starts[b + 1] += starts[b];
        }
        let mut cursor = starts.clone();
        let mut donors = vec![
            Donor {
                col: 0,
                row: 0,
                value: 0.0
            };
            starts[nbx * nby]
        ];
        for (i, v) in grid.values().iter().enumerate() {
            if let Some(value) = *v {
                let (c, r) = spec.col_row(i);
                let b = block_of(c, r);
                donors[cursor[b]] = Donor {
                    col: c as u32,
                    row: r as u32,
                    value,
                };
                cursor[b] += 1;
            }
        }
        Self {
            nbx,
            nby,
            starts,
            donors,
        }
    }

    fn block(&self, bx: usize, by: usize) -> &[Donor] {
        let b = by * self.nbx + bx;
        &self.donors[self.starts[b]..self.starts[b + 1]]
    }

    /// All donors whose squared distance to `(col, row)` is at most the
    /// k-th smallest such distance (ties included), limited to `limit`.
    /// Returned as `(d2, row-major index, value)`.
    fn k_nearest(&self, col: usize, row: usize, k: usize, limit: u64, ncols: usize) -> Vec<(u64, usize, f64)> {
        let hbx = (col / BLOCK) as i64;
        let hby = (row / BLOCK) as i64;
        let max_ring = self.nbx.max(self.nby) as i64;
        let mut found: Vec<(u64, usize, f64)> = Vec::new();
        let mut kth = u64::MAX;

        for ring in 0..=max_ring {
            let lower = if ring == 0 {
                0
            } else {
                let d = (ring as u64 - 1) * BLOCK as u64 + 1;
                d * d
            };
            if lower > limit || (found.len() >= k && lower > kth) {
                break;
            }
            let mut visit = |bx: i64, by: i64| {
                if bx < 0 || by < 0 || bx >= self.nbx as i64 || by >= self.nby as i64 {
                    return;
                }
                for d in self.block(bx as usize, by as usize) {
                    let dc = d.col as i64 - col as i64;
                    let dr = d.row as i64 - row as i64;
                    let d2 = (dc * dc + dr * dr) as u64;
                    if d2 <= limit && d2 <= kth {
                        found.push((d2, d.row as usize * ncols + d.col as usize, d.value));
                    }
                }
            };
            for by in hby - ring..=hby + ring {
                if (by - hby).abs() == ring {
                    for bx in hbx - ring..=hbx + ring {
                        visit(bx, by);
                    }
                } else {
                    visit(hbx - ring, by);
                    if ring > 0 {
                        visit(hbx + ring, by);
                    }
                }
            }
            if found.len() >= k {
                found.sort_unstable_by_key(|&(d2, idx, _)| (d2, idx));
                kth = found[k - 1].0;
                let keep = found.partition_point(|&(d2, _, _)| d2 <= kth);
                found.truncate(keep);
            }
        }
        if found.len() < k {
            // Fewer than k donors in range: use what the distance limit allows.
            found.sort_unstable_by_key(|&(d2, idx, _)| (d2, idx));
        }
        found
    }
}

/// Mean of donor values summed in row-major index order, clamped to the
/// donors' range.
pub(crate) fn donor_mean(donors: &mut [(u64, usize, f64)]) -> f64 {
    donors.sort_unstable_by_key(|&(_, idx, _)| idx);
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, _, v) in donors.iter() {
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / donors.len() as f64).clamp(lo, hi)
}

fn fill_with(grid: &ElevationGrid, k: usize, max_distance: Option<f64>) -> Result<ElevationGrid, GapFillError> {
    let spec = *grid.spec();
    let limit = max_d2(spec.cell_size, max_distance)?;
    let available = grid.valid_count();
    if available == 0 {
        return Err(GapFillError::AllNoData);
    }
    if available < k {
        return Err(GapFillError::InsufficientDonors { needed: k, available });
    }
    let index = DonorIndex::build(grid);
    let holes: Vec<usize> = (0..spec.len()).filter(|&i| grid.at(i).is_none()).collect();
    let fills: Vec<(usize, Option<f64>)> = holes
        .par_iter()
        .map(|&i| {
            let (col, row) = spec.col_row(i);
            let mut donors = index.k_nearest(col, row, k, limit, spec.ncols);
            // With a distance limit the ring may hold fewer than k donors; the
            // cell is filled only if the k-th nearest donor is within range.
            if donors.len() < k {
                return (i, None);
            }
            (i, Some(donor_mean(&mut donors)))
        })
        .collect();
    let mut values = grid.values().to_vec();
    for (i, v) in fills {
        values[i] = v;
    }
    Ok(ElevationGrid::from_values(spec, values).expect("donor means are finite"))
}

/// Fills each nodata cell with the value of its nearest valid cell
/// (equidistant donors averaged). Cells farther than `max_distance` meters
/// from every donor stay nodata; `None` means unlimited.
pub fn fill_nearest(grid: &ElevationGrid, max_distance: Option<f64>) -> Result<ElevationGrid, GapFillError> {
    fill_with(grid, 1, max_distance)
}

/// Fills each nodata cell with the mean of its `k` nearest valid cells. All
/// donors tied with the k-th distance join the average.
pub fn fill_knn_mean(grid: &ElevationGrid, k: usize) -> Result<ElevationGrid, GapFillError> {
    fill_knn(grid, k, None)
}

/// [`fill_knn_mean`] with a distance cap: a cell is filled only when its
/// k-th nearest donor lies within `max_distance`.
pub fn fill_knn(grid: &ElevationGrid, k: usize, max_distance: Option<f64>) -> Result<ElevationGrid, GapFillError> {
    if k == 0 {
        return Err(GapFillError::ZeroK);
    }
    fill_with(grid, k, max_distance)
}
