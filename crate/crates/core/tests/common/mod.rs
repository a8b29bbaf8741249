//! Shared fixtures and brute-force reference implementations for the
//! integration tests. Nothing here calls into the library's algorithms.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use heights_core::geometry::Polygon;
use heights_core::grid::{ElevationGrid, GridSpec};
use heights_core::las::{write_las, PointRecord};
use rand::rngs::StdRng;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------------------
// Random inputs
// ---------------------------------------------------------------------------

/// Grid up to `max_dim` square with holes. Values are sometimes drawn from a
/// small set so that equidistant donors disagree and ties matter.
pub fn random_grid(rng: &mut StdRng, max_dim: usize) -> ElevationGrid {
    let ncols = rng.gen_range(1..=max_dim);
    let nrows = rng.gen_range(1..=max_dim);
    let cell = [0.1, 0.2, 0.25, 0.5, 1.0][rng.gen_range(0..5)];
    let origin = [rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)];
    let spec = GridSpec::new(origin, cell, ncols, nrows).unwrap();
    let hole_p: f64 = rng.gen_range(0.0..0.98);
    let coarse = rng.gen_bool(0.5);
    let mut values: Vec<Option<f64>> = (0..ncols * nrows)
        .map(|_| {
            if rng.gen_bool(hole_p) {
                None
            } else if coarse {
                Some(rng.gen_range(0..5) as f64 * 1.5 + 90.0)
            } else {
                Some(rng.gen_range(50.0..150.0))
            }
        })
        .collect();
    if values.iter().all(Option::is_none) {
        let i = rng.gen_range(0..values.len());
        values[i] = Some(rng.gen_range(50.0..150.0));
    }
    ElevationGrid::from_values(spec, values).unwrap()
}

/// Simple polygon: a star-shaped ring around `center`, optionally with a
/// star-shaped hole well inside its minimum radius.
pub fn random_polygon(rng: &mut StdRng, center: [f64; 2], max_radius: f64) -> Polygon {
    // Sorted angles give a simple ring only while every angular gap is
    // below pi; resample until that holds.
    let angles = loop {
        let n = rng.gen_range(3..12);
        let mut a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        a.sort_by(f64::total_cmp);
        a.dedup_by(|x, y| (*x - *y).abs() < 1e-3);
        if a.len() >= 3 && angle_gaps(&a).iter().all(|&g| g < std::f64::consts::PI * 0.95) {
            break a;
        }
    };
    let radii: Vec<f64> = angles.iter().map(|_| rng.gen_range(0.3..1.0) * max_radius).collect();
    let ring = |angles: &[f64], radii: &[f64], reverse: bool| {
        let mut pts: Vec<[f64; 2]> = angles
            .iter()
            .zip(radii)
            .map(|(a, r)| [center[0] + r * a.cos(), center[1] + r * a.sin()])
            .collect();
        if reverse {
            pts.reverse();
        }
        pts.push(pts[0]);
        pts
    };
    let exterior = ring(&angles, &radii, false);
    let min_r = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let mut interiors = Vec::new();
    // Each edge spans an angular gap g < pi and stays at least
    // r1*r2*sin(g)/(r1+r2) >= min_r*sin(g)/2 from the center.
    let inscribed = min_r / 2.0 * angle_gaps(&angles).iter().map(|g| g.sin()).fold(f64::INFINITY, f64::min);
    if inscribed > 1e-2 * max_radius && rng.gen_bool(0.3) {
        let ha = [0.3, 2.4, 4.4];
        let hole = [inscribed * 0.5; 3];
        interiors.push(ring(&ha, &hole, true));
    }
    Polygon::new(exterior, interiors)
}

fn angle_gaps(sorted: &[f64]) -> Vec<f64> {
    sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(std::iter::once(sorted[0] + std::f64::consts::TAU - sorted[sorted.len() - 1]))
        .collect()
}

/// Random stream of classified points over a `size` meter square.
pub fn random_points(rng: &mut StdRng, n: usize, size: f64) -> Vec<PointRecord> {
    let classes = [1u8, 2, 2, 2, 5, 6, 6, 14, 9];
    (0..n)
        .map(|_| {
            PointRecord::new(
                rng.gen_range(0.0..size),
                rng.gen_range(0.0..size),
                rng.gen_range(90.0..130.0),
                classes[rng.gen_range(0..classes.len())],
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Constructed end-to-end scene
// ---------------------------------------------------------------------------

pub const SCENE_SIZE: f64 = 20.0;
pub const SCENE_SPACING: f64 = 0.1;
pub const GROUND_Z: f64 = 100.0;
pub const OBJECT_Z: f64 = 105.0;
pub const FOOTPRINT: [f64; 4] = [8.0, 8.0, 12.0, 12.0];

/// Flat ground at 100 m with one point per 0.1 m, except under a 4 × 4 m
/// footprint whose returns are all at 105 m (class 6). Points sit at the
/// centers of the 0.1 m lattice so none straddles a cell edge.
pub fn scene_points() -> Vec<PointRecord> {
    let n = (SCENE_SIZE / SCENE_SPACING).round() as usize;
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = (i as f64 + 0.5) * SCENE_SPACING;
            let y = (j as f64 + 0.5) * SCENE_SPACING;
            let inside = x > FOOTPRINT[0] && x < FOOTPRINT[2] && y > FOOTPRINT[1] && y < FOOTPRINT[3];
            if inside {
                pts.push(PointRecord::new(x, y, OBJECT_Z, 6));
            } else {
                pts.push(PointRecord::new(x, y, GROUND_Z, 2));
            }
        }
    }
    pts
}

pub fn write_scene_las(dir: &Path) -> PathBuf {
    let path = dir.join("scene.las");
    write_las(&scene_points(), [0.001; 3], [0.0; 3], &path).unwrap();
    path
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Mean of `vals` in the given order, clamped to their range.
fn ordered_mean(vals: &[f64]) -> f64 {
    let sum: f64 = vals.iter().fold(0.0, |acc, v| acc + v);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (sum / vals.len() as f64).clamp(lo, hi)
}

/// Scans every valid cell for every hole. Donors are collected in row-major
/// order; the k-th smallest squared distance decides who joins, ties
/// included. `max_distance` uses the metric test `sqrt(d2) * s <= max`.
pub fn brute_fill(grid: &ElevationGrid, k: usize, max_distance: Option<f64>) -> Vec<Option<f64>> {
    let spec = grid.spec();
    let (nc, nr) = (spec.ncols, spec.nrows);
    let vals = grid.values();
    let donors: Vec<(i64, i64, f64)> = (0..nr)
        .flat_map(|r| (0..nc).map(move |c| (c, r)))
        .filter_map(|(c, r)| vals[r * nc + c].map(|v| (c as i64, r as i64, v)))
        .collect();
    let mut out = vals.to_vec();
    for r in 0..nr {
        for c in 0..nc {
            if vals[r * nc + c].is_some() {
                continue;
            }
            let d: Vec<u64> = donors
                .iter()
                .map(|&(dc, dr, _)| ((dc - c as i64).pow(2) + (dr - r as i64).pow(2)) as u64)
                .collect();
            let mut sorted = d.clone();
            sorted.sort_unstable();
            let kth = sorted[k - 1];
            if let Some(max) = max_distance {
                if (kth as f64).sqrt() * spec.cell_size > max {
                    continue;
                }
            }
            let chosen: Vec<f64> = donors
                .iter()
                .zip(d.iter())
                .filter(|(_, d2)| **d2 <= kth)
                .map(|(&(_, _, v), _)| v)
                .collect();
            out[r * nc + c] = Some(ordered_mean(&chosen));
        }
    }
    out
}

/// Even-odd ray cast with the textbook vertex-i interpolation.
pub fn naive_contains(poly: &Polygon, p: [f64; 2]) -> bool {
    let mut inside = false;
    for ring in poly.rings() {
        let n = ring.len() - 1;
        for i in 0..n {
            let (a, b) = (ring[i], ring[i + 1]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Row-major indices of cells whose center lies inside `poly`.
pub fn naive_footprint(poly: &Polygon, spec: &GridSpec) -> Vec<usize> {
    let mut cells = Vec::new();
    for r in 0..spec.nrows {
        for c in 0..spec.ncols {
            let x = spec.origin[0] + (c as f64 + 0.5) * spec.cell_size;
            let y = spec.origin[1] + (r as f64 + 0.5) * spec.cell_size;
            if naive_contains(poly, [x, y]) {
                cells.push(r * spec.ncols + c);
            }
        }
    }
    cells
}

pub struct NaiveStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub valid: usize,
    pub cells: usize,
}

pub fn naive_zonal(surface: &ElevationGrid, poly: &Polygon) -> Option<NaiveStats> {
    let cells = naive_footprint(poly, surface.spec());
    let vals: Vec<f64> = cells.iter().filter_map(|&i| surface.values()[i]).collect();
    if vals.is_empty() {
        return None;
    }
    Some(NaiveStats {
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        valid: vals.len(),
        cells: cells.len(),
    })
}

/// Half-open bin `[o + i*s, o + (i+1)*s)` holding `v`, by linear search
/// outward from the division estimate.
fn edge_bin(v: f64, o: f64, s: f64, n: usize) -> Option<usize> {
    let mut i = ((v - o) / s).floor() as i64;
    while v < o + i as f64 * s {
        i -= 1;
    }
    while v >= o + (i + 1) as f64 * s {
        i += 1;
    }
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

/// Two-pass group-by: bin every in-class point, then reduce each cell.
pub fn naive_rasterize(points: &[PointRecord], spec: &GridSpec, classes: &[u8], reducer: &str) -> Vec<Option<f64>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in points {
        if !classes.contains(&p.classification) {
            continue;
        }
        let (Some(c), Some(r)) = (edge_bin(p.x, spec.origin[0], spec.cell_size, spec.ncols), edge_bin(p.y, spec.origin[1], spec.cell_size, spec.nrows)) else {
            continue;
        };
        groups.entry(r * spec.ncols + c).or_default().push(p.z);
    }
    let mut out = vec![None; spec.len()];
    for (i, zs) in groups {
        out[i] = Some(match reducer {
            "max" => zs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "min" => zs.iter().copied().fold(f64::INFINITY, f64::min),
            _ => zs.iter().sum::<f64>() / zs.len() as f64,
        });
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Independent ESRI ASCII grid reader
// ---------------------------------------------------------------------------

pub struct AscGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Row-major, south row first (converted from the file's north-first order).
    pub values: Vec<Option<f64>>,
}

pub fn read_asc(text: &str) -> AscGrid {
    let mut header = BTreeMap::new();
    let mut lines = text.lines();
    for _ in 0..6 {
        let line = lines.next().expect("header line");
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap().to_ascii_lowercase();
        let value: f64 = parts.next().unwrap().parse().unwrap();
        header.insert(key, value);
    }
    let ncols = header["ncols"] as usize;
    let nrows = header["nrows"] as usize;
    let nodata = header["nodata_value"];
    let mut rows: Vec<Vec<Option<f64>>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| {
                    let v: f64 = t.parse().unwrap();
                    (v != nodata).then_some(v)
                })
                .collect()
        })
        .collect();
    assert_eq!(rows.len(), nrows, "row count");
    assert!(rows.iter().all(|r| r.len() == ncols), "column count");
    rows.reverse();
    AscGrid {
        ncols,
        nrows,
        xll: header["xllcorner"],
        yll: header["yllcorner"],
        cellsize: header["cellsize"],
        nodata,
        values: rows.into_iter().flatten().collect(),
    }
}
