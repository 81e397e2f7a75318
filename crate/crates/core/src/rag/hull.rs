//! Integer convex hulls in the plane.

pub type Point = [i64; 2];

fn cross(o: Point, a: Point, b: Point) -> i128 {
    let (ax, ay) = ((a[0] - o[0]) as i128, (a[1] - o[1]) as i128);
    let (bx, by) = ((b[0] - o[0]) as i128, (b[1] - o[1]) as i128);
    ax * by - ay * bx
}

/// Strict convex hull (collinear points dropped), counter-clockwise starting
/// from the lexicographically smallest point.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

pub fn merge_hulls(a: &[Point], b: &[Point]) -> Vec<Point> {
    let mut all = Vec::with_capacity(a.len() + b.len());
    all.extend_from_slice(a);
    all.extend_from_slice(b);
    convex_hull(&all)
}

/// Shoelace area of a polygon given in order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice: i128 = 0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        twice += p[0] as i128 * q[1] as i128 - q[0] as i128 * p[1] as i128;
    }
    twice.abs() as f64 / 2.0
}

/// The four corners of the unit square occupied by voxel `(r, c)`.
///
/// Corners live on the lattice shifted by half a voxel, so voxel `(r, c)`
/// spans `[r, r+1] x [c, c+1]` in corner coordinates.
pub fn voxel_corners(r: i64, c: i64) -> [Point; 4] {
    [[r, c], [r + 1, c], [r, c + 1], [r + 1, c + 1]]
}
