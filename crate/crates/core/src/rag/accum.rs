//! Mergeable per-region statistics.
//!
//! Everything here is additive: merging two accumulators is component-wise
//! addition (plus a hull of the union for 2D shapes), so a region's
//! statistics never need to be recomputed from voxels after a merge.

use super::hull::{self, Point};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueAccumulator {
    count: u64,
    /// Raw moment sums Σx, Σx², Σx³, Σx⁴.
    sums: [f64; 4],
    hist: Vec<u64>,
}

impl CueAccumulator {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 1, "histogram needs at least one bin");
        Self {
            count: 0,
            sums: [0.0; 4],
            hist: vec![0; bins],
        }
    }

    pub fn bin_of(x: f64, bins: usize) -> usize {
        ((x * bins as f64) as usize).min(bins - 1)
    }

    pub fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.count += 1;
        self.sums[0] += x;
        self.sums[1] += x2;
        self.sums[2] += x2 * x;
        self.sums[3] += x2 * x2;
        let b = Self::bin_of(x, self.hist.len());
        self.hist[b] += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.hist.len(), other.hist.len());
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            *a += b;
        }
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn raw_sums(&self) -> &[f64; 4] {
        &self.sums
    }

    pub fn hist(&self) -> &[u64] {
        &self.hist
    }

    pub fn bins(&self) -> usize {
        self.hist.len()
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sums[0] / self.count as f64
        }
    }

    /// Central moments μ2, μ3, μ4 derived from the raw sums.
    pub fn central_moments(&self) -> [f64; 3] {
        if self.count == 0 {
            return [0.0; 3];
        }
        let n = self.count as f64;
        let m = self.sums[0] / n;
        let e2 = self.sums[1] / n;
        let e3 = self.sums[2] / n;
        let e4 = self.sums[3] / n;
        let m2 = m * m;
        let mu2 = (e2 - m2).max(0.0);
        let mu3 = e3 - 3.0 * m * e2 + 2.0 * m2 * m;
        let mu4 = (e4 - 4.0 * m * e3 + 6.0 * m2 * e2 - 3.0 * m2 * m2).max(0.0);
        [mu2, mu3, mu4]
    }

    pub fn normalized_hist(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.hist.iter().map(|&h| h as f64 / n).collect()
    }
}

/// Voxel-coordinate moments of a region, plus its convex hull in 2D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAccumulator {
    count: u64,
    sums: Vec<f64>,
    /// Upper triangle of Σ xᵢxⱼ, row by row.
    second: Vec<f64>,
    hull: Option<Vec<Point>>,
}

impl SpatialAccumulator {
    pub fn new(ndim: usize) -> Self {
        Self {
            count: 0,
            sums: vec![0.0; ndim],
            second: vec![0.0; ndim * (ndim + 1) / 2],
            hull: (ndim == 2).then(Vec::new),
        }
    }

    pub fn ndim(&self) -> usize {
        self.sums.len()
    }

    /// Adds one voxel's coordinates to the moment sums. The hull is set
    /// separately through [`SpatialAccumulator::set_hull_points`].
    pub fn push(&mut self, coords: &[usize]) {
        self.count += 1;
        let mut k = 0;
        for i in 0..coords.len() {
            let xi = coords[i] as f64;
            self.sums[i] += xi;
            for &xj in &coords[i..] {
                self.second[k] += xi * xj as f64;
                k += 1;
            }
        }
    }

    pub fn set_hull_points(&mut self, points: &[Point]) {
        if let Some(h) = self.hull.as_mut() {
            *h = hull::convex_hull(points);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.hull.as_mut(), other.hull.as_ref()) {
            *a = hull::merge_hulls(a, b);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn second_sums(&self) -> &[f64] {
        &self.second
    }

    pub fn hull(&self) -> Option<&[Point]> {
        self.hull.as_deref()
    }

    pub fn hull_area(&self) -> Option<f64> {
        self.hull.as_ref().map(|h| hull::polygon_area(h))
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sums.iter().map(|s| s / n).collect()
    }

    /// Centered second-moment (covariance) matrix entry (i, j).
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let d = self.ndim();
        // index of (i, j) in the row-wise upper triangle
        let k = i * d - i * (i + 1) / 2 + j;
        let n = self.count.max(1) as f64;
        self.second[k] / n - (self.sums[i] / n) * (self.sums[j] / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_total_matches_count() {
        let mut a = CueAccumulator::new(4);
        for x in [0.0, 0.24, 0.25, 0.99, 1.0] {
            a.push(x);
        }
        assert_eq!(a.hist(), &[2, 1, 0, 2]);
        assert_eq!(a.hist().iter().sum::<u64>(), a.count());
    }

    #[test]
    fn two_point_moments() {
        let mut a = CueAccumulator::new(2);
        a.push(0.0);
        a.push(1.0);
        assert_eq!(a.mean(), 0.5);
        assert_eq!(a.central_moments(), [0.25, 0.0, 0.0625]);
    }

    #[test]
    fn constant_has_zero_central_moments() {
        let mut a = CueAccumulator::new(10);
        for _ in 0..7 {
            a.push(0.375);
        }
        assert_eq!(a.central_moments(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn merge_is_addition() {
        let xs = [0.1, 0.7, 0.3, 0.95, 0.5];
        let mut whole = CueAccumulator::new(5);
        let mut a = CueAccumulator::new(5);
        let mut b = CueAccumulator::new(5);
        for (i, &x) in xs.iter().enumerate() {
            whole.push(x);
            if i < 2 { a.push(x) } else { b.push(x) }
        }
        a.merge(&b);
        assert_eq!(a.count(), whole.count());
        assert_eq!(a.hist(), whole.hist());
        for (x, y) in a.raw_sums().iter().zip(whole.raw_sums()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_of_bar() {
        let mut s = SpatialAccumulator::new(2);
        for c in 0..5 {
            s.push(&[3, c]);
        }
        assert_eq!(s.centroid(), vec![3.0, 2.0]);
        assert_eq!(s.covariance(0, 0), 0.0);
        assert_eq!(s.covariance(0, 1), 0.0);
        assert!((s.covariance(1, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_d_has_no_hull() {
        let s = SpatialAccumulator::new(3);
        assert!(s.hull().is_none());
        assert_eq!(s.second_sums().len(), 6);
    }
}
