//! Normalized height surface: object elevation minus filled ground elevation.

use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{ElevationGrid, GridError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NdsmStats {
    /// Cells where the object surface lay below the ground surface.
    pub negative_cells: u64,
    /// Whether those cells were clamped to zero.
    pub clamped: bool,
}

/// Per-cell `object - ground`. A cell is nodata when either input is.
/// Negative differences are set to 0 when `clamp_negative` is on and passed
/// through otherwise; either way they are counted.
pub fn ndsm(object_surface: &ElevationGrid, ground_filled: &ElevationGrid, clamp_negative: bool) -> Result<(ElevationGrid, NdsmStats), GridError> {
    if object_surface.spec() != ground_filled.spec() {
        return Err(GridError::SpecMismatch);
    }
    let diffs: Vec<Option<f64>> = object_surface
        .values()
        .par_iter()
        .zip(ground_filled.values().par_iter())
        .map(|(o, g)| match (o, g) {
            (Some(o), Some(g)) => Some(o - g),
            _ => None,
        })
        .collect();
    let negative_cells = diffs.iter().flatten().filter(|&&d| d < 0.0).count() as u64;
    let values = if clamp_negative {
        diffs.into_iter().map(|d| d.map(|d| if d < 0.0 { 0.0 } else { d })).collect()
    } else {
        diffs
    };
    let grid = ElevationGrid::from_values(*object_surface.spec(), values)?;
    Ok((
        grid,
        NdsmStats {
            negative_cells,
            clamped: clamp_negative,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new([0.0, 0.0], 0.2, n, 1).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let g = ElevationGrid::from_values(spec(3), vec![Some(1.5), None, Some(-4.0)]).unwrap();
        let (n, stats) = ndsm(&g, &g, true).unwrap();
        assert_eq!(n.values(), &[Some(0.0), None, Some(0.0)]);
        assert_eq!(stats.negative_cells, 0);
    }

    #[test]
    fn simple_difference_and_clamp() {
        let o = ElevationGrid::from_values(spec(2), vec![Some(105.0), Some(99.0)]).unwrap();
        let g = ElevationGrid::filled(spec(2), 100.0);
        let (n, stats) = ndsm(&o, &g, true).unwrap();
        assert_eq!(n.values(), &[Some(5.0), Some(0.0)]);
        assert_eq!(stats, NdsmStats { negative_cells: 1, clamped: true });
        let (n, stats) = ndsm(&o, &g, false).unwrap();
        assert_eq!(n.get(1, 0), Some(-1.0));
        assert_eq!(stats.negative_cells, 1);
    }

    #[test]
    fn nodata_is_union() {
        let o = ElevationGrid::from_values(spec(3), vec![Some(1.0), None, Some(3.0)]).unwrap();
        let g = ElevationGrid::from_values(spec(3), vec![Some(0.0), Some(0.0), None]).unwrap();
        let (n, _) = ndsm(&o, &g, true).unwrap();
        assert_eq!(n.nodata_mask(), vec![false, true, true]);
    }

    #[test]
    fn spec_mismatch() {
        let a = ElevationGrid::filled(spec(2), 1.0);
        let b = ElevationGrid::filled(spec(3), 1.0);
        assert_eq!(ndsm(&a, &b, true).unwrap_err(), GridError::SpecMismatch);
    }
}
