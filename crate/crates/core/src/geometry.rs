//! Planar polygon helpers: area, perimeter, centroid, containment and ring
//! validation.

pub type Point = [f64; 2];

/// Polygon with one exterior ring and optional holes. Rings are stored
/// closed (first vertex repeated at the end), as in GeoJSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    pub interiors: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, interiors: Vec<Vec<Point>>) -> Self {
        Self { exterior, interiors }
    }

    /// Axis-aligned rectangle, counter-clockwise.
    pub fn rect(min: Point, max: Point) -> Self {
        Self::new(
            vec![min, [max[0], min[1]], max, [min[0], max[1]], min],
            Vec::new(),
        )
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.interiors.iter().map(Vec::as_slice))
    }

    /// `(min, max)` corners of the exterior ring.
    pub fn bbox(&self) -> (Point, Point) {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &self.exterior {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        (min, max)
    }

    /// Exterior area minus hole areas.
    pub fn area(&self) -> f64 {
        let holes: f64 = self.interiors.iter().map(|r| ring_signed_area(r).abs()).sum();
        ring_signed_area(&self.exterior).abs() - holes
    }

    /// Exterior length plus the length of every hole boundary.
    pub fn perimeter(&self) -> f64 {
        self.rings().map(ring_length).sum()
    }

    /// Area centroid, holes subtracted.
    pub fn centroid(&self) -> Option<Point> {
        let anchor = *self.exterior.first()?;
        let mut area = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for (i, ring) in self.rings().enumerate() {
            let (a, cx, cy) = ring_moments(ring, anchor);
            // exterior counts positive, holes negative, whatever the winding
            let sign = if (i == 0) == (a >= 0.0) { 1.0 } else { -1.0 };
            area += sign * a;
            mx += sign * cx;
            my += sign * cy;
        }
        if area == 0.0 {
            return None;
        }
        Some([anchor[0] + mx / area, anchor[1] + my / area])
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_rings(self.rings(), p)
    }
}

/// Shoelace signed area of a closed ring (positive when counter-clockwise).
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let Some(&o) = ring.first() else { return 0.0 };
    ring.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            (a[0] - o[0]) * (b[1] - o[1]) - (b[0] - o[0]) * (a[1] - o[1])
        })
        .sum::<f64>()
        / 2.0
}

/// Signed area and first moments of a ring, relative to `o`.
fn ring_moments(ring: &[Point], o: Point) -> (f64, f64, f64) {
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for w in ring.windows(2) {
        let (x0, y0) = (w[0][0] - o[0], w[0][1] - o[1]);
        let (x1, y1) = (w[1][0] - o[0], w[1][1] - o[1]);
        let cross = x0 * y1 - x1 * y0;
        a2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    // area = a2/2; moments = c/6
    (a2 / 2.0, cx / 6.0, cy / 6.0)
}

pub fn ring_length(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// x coordinate where the edge `a`–`b` crosses the horizontal line at `y`,
/// if it does under the half-open rule. The endpoint with the lower y is
/// always used as the base so the value does not depend on edge direction.
#[inline]
pub fn edge_crossing(a: Point, b: Point, y: f64) -> Option<f64> {
    if (a[1] > y) == (b[1] > y) {
        return None;
    }
    let (lo, hi) = if a[1] < b[1] { (a, b) } else { (b, a) };
    Some(lo[0] + (hi[0] - lo[0]) * (y - lo[1]) / (hi[1] - lo[1]))
}

/// Even-odd containment over any number of closed rings.
pub fn point_in_rings<'a, I>(rings: I, p: Point) -> bool
where
    I: IntoIterator<Item = &'a [Point]>,
{
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            if let Some(x) = edge_crossing(w[0], w[1], p[1]) {
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Whether closed segments `p1p2` and `q1q2` share any point.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Checks that a closed ring has at least three distinct vertices, finite
/// coordinates, and does not touch or cross itself.
pub fn validate_ring(ring: &[Point]) -> Result<(), String> {
    if ring.len() < 4 {
        return Err(format!("ring has {} positions, at least 4 required", ring.len()));
    }
    if ring.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err("ring has a non-finite coordinate".into());
    }
    if ring.first() != ring.last() {
        return Err("ring is not closed".into());
    }
    // Drop repeated consecutive vertices; the ring stays closed.
    let mut v: Vec<Point> = Vec::with_capacity(ring.len());
    for &p in ring {
        if v.last() != Some(&p) {
            v.push(p);
        }
    }
    let n = v.len() - 1; // distinct-ish vertex count; v[n] == v[0]
    let mut distinct = v[..n].to_vec();
    distinct.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(format!("ring has {} distinct vertices, at least 3 required", distinct.len()));
    }
    if distinct.len() < n {
        return Err("ring revisits a vertex".into());
    }

    // Adjacent segments may only share their common vertex.
    for i in 0..n {
        let a = v[(i + n - 1) % n];
        let b = v[i];
        let c = v[i + 1];
        if orient(a, b, c) == 0.0 && (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]) < 0.0 {
            return Err("ring doubles back on itself".into());
        }
    }

    // Non-adjacent pairs, pruned by a sweep over segment x-extents.
    let mut order: Vec<usize> = (0..n).collect();
    let min_x = |i: usize| v[i][0].min(v[i + 1][0]);
    let max_x = |i: usize| v[i][0].max(v[i + 1][0]);
    order.sort_by(|&a, &b| min_x(a).total_cmp(&min_x(b)));
    for (k, &i) in order.iter().enumerate() {
        let hi = max_x(i);
        for &j in &order[k + 1..] {
            if min_x(j) > hi {
                break;
            }
            let adjacent = j == (i + 1) % n || i == (j + 1) % n;
            if adjacent {
                continue;
            }
            if segments_intersect(v[i], v[i + 1], v[j], v[j + 1]) {
                return Err("ring self-intersects".into());
            }
        }
    }
    Ok(())
}

/// Validates every ring and checks the polygon encloses positive area.
pub fn validate_polygon(poly: &Polygon) -> Result<(), String> {
    validate_ring(&poly.exterior).map_err(|e| format!("exterior {e}"))?;
    for (i, hole) in poly.interiors.iter().enumerate() {
        validate_ring(hole).map_err(|e| format!("interior ring {i}: {e}"))?;
    }
    let area = poly.area();
    if !(area > 0.0) {
        return Err(format!("polygon area {area} is not positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_measures() {
        let sq = Polygon::rect([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(sq.area(), 1.0);
        assert_eq!(sq.perimeter(), 4.0);
        assert_eq!(sq.centroid(), Some([0.5, 0.5]));
        assert!(validate_polygon(&sq).is_ok());
    }

    #[test]
    fn holes_reduce_area_and_shift_centroid() {
        let mut p = Polygon::rect([0.0, 0.0], [4.0, 2.0]);
        // clockwise hole in the right half
        p.interiors.push(vec![[2.0, 0.5], [2.0, 1.5], [3.0, 1.5], [3.0, 0.5], [2.0, 0.5]]);
        assert_eq!(p.area(), 7.0);
        assert_eq!(p.perimeter(), 16.0);
        let c = p.centroid().unwrap();
        // (8*2 - 1*2.5) / 7
        assert!((c[0] - 13.5 / 7.0).abs() < 1e-12);
        assert!((c[1] - 1.0).abs() < 1e-12);
        assert!(!p.contains([2.5, 1.0]));
        assert!(p.contains([1.0, 1.0]));
    }

    #[test]
    fn winding_does_not_matter() {
        let ccw = Polygon::rect([0.0, 0.0], [2.0, 1.0]);
        let mut cw = ccw.clone();
        cw.exterior.reverse();
        assert_eq!(cw.area(), ccw.area());
        assert_eq!(cw.centroid(), ccw.centroid());
        for p in [[0.5, 0.5], [1.999, 0.999], [2.0, 0.5], [-0.1, 0.5]] {
            assert_eq!(cw.contains(p), ccw.contains(p));
        }
    }

    #[test]
    fn rejects_degenerate_rings() {
        assert!(validate_ring(&[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(validate_ring(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).is_err());
        // bow tie
        let bow = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert_eq!(validate_ring(&bow), Err("ring self-intersects".into()));
        // collinear spike
        let spike = [[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        assert!(validate_ring(&spike).is_err());
        // all collinear
        let flat = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 0.0]], vec![]);
        assert!(validate_polygon(&flat).is_err());
    }

    #[test]
    fn accepts_repeated_consecutive_vertices() {
        let ring = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        assert!(validate_ring(&ring).is_ok());
    }
}
