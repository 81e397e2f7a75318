//! Edge feature maps built from node and boundary accumulators.

use crate::error::{Error, Result};
use crate::rag::{CueAccumulator, EdgeRecord, NodeId, NodeRecord, Rag, RagConfig, SpatialAccumulator};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Manager {
    /// Histograms and approximate quantiles of u, v and their boundary, plus
    /// the Jensen-Shannon divergence between the u and v histograms.
    Histogram { bins: usize, quantiles: usize },
    /// Log count, mean and central moments of u, v and the boundary, plus
    /// absolute differences of the u and v moments.
    Moments,
    /// Boundary length relative to region sizes.
    Geometry,
    /// Principal-axis angles (2D only).
    Orientation,
    /// Convex hull to area ratios (2D only).
    Hull,
}

impl Manager {
    pub fn len(&self, channels: usize) -> usize {
        match *self {
            Manager::Histogram { bins, quantiles } => channels * (3 * bins + 3 * quantiles + 1),
            Manager::Moments => channels * 19,
            Manager::Geometry => 3,
            Manager::Orientation => 4,
            Manager::Hull => 3,
        }
    }

    fn needs_spatial(&self) -> bool {
        matches!(self, Manager::Orientation | Manager::Hull)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub managers: Vec<Manager>,
}

impl FeatureMap {
    pub fn new(channels: usize, managers: Vec<Manager>) -> Result<Self> {
        let fm = Self { channels, managers };
        fm.validate()?;
        Ok(fm)
    }

    /// Histogram (25 bins, 9 quantiles), moments and geometry, with the 2D
    /// orientation and hull managers added when `planar` is set.
    pub fn default_for(channels: usize, planar: bool) -> Self {
        let mut managers = vec![
            Manager::Histogram { bins: 25, quantiles: 9 },
            Manager::Moments,
            Manager::Geometry,
        ];
        if planar {
            managers.push(Manager::Orientation);
            managers.push(Manager::Hull);
        }
        Self { channels, managers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::FeatureMismatch("feature map needs at least one channel".into()));
        }
        if self.managers.is_empty() {
            return Err(Error::FeatureMismatch("feature map has no managers".into()));
        }
        let mut bins = None;
        for m in &self.managers {
            if let Manager::Histogram { bins: b, .. } = *m {
                if b == 0 {
                    return Err(Error::FeatureMismatch("histogram with 0 bins".into()));
                }
                if bins.is_some_and(|x| x != b) {
                    return Err(Error::FeatureMismatch(
                        "all histogram managers must share one bin count".into(),
                    ));
                }
                bins = Some(b);
            }
        }
        Ok(())
    }

    /// Output length q.
    pub fn len(&self) -> usize {
        self.managers.iter().map(|m| m.len(self.channels)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn histogram_bins(&self) -> Option<usize> {
        self.managers.iter().find_map(|m| match m {
            Manager::Histogram { bins, .. } => Some(*bins),
            _ => None,
        })
    }

    pub fn needs_spatial(&self) -> bool {
        self.managers.iter().any(Manager::needs_spatial)
    }

    /// Graph settings that satisfy this map.
    pub fn rag_config(&self) -> RagConfig {
        RagConfig {
            bins: self.histogram_bins().unwrap_or(RagConfig::default().bins),
            spatial: self.needs_spatial(),
            ..RagConfig::default()
        }
    }

    /// Checks that `rag` carries what every manager needs.
    pub fn check(&self, rag: &Rag) -> Result<()> {
        if rag.channels() != self.channels {
            return Err(Error::FeatureMismatch(format!(
                "feature map expects {} channels, graph has {}",
                self.channels,
                rag.channels()
            )));
        }
        if let Some(b) = self.histogram_bins() {
            if rag.config().bins != b {
                return Err(Error::FeatureMismatch(format!(
                    "feature map expects {b} histogram bins, graph has {}",
                    rag.config().bins
                )));
            }
        }
        if self.needs_spatial() && (!rag.config().spatial || rag.ndim() != 2) {
            return Err(Error::FeatureMismatch(
                "orientation and hull features need a 2D graph with spatial statistics".into(),
            ));
        }
        Ok(())
    }

    /// Feature vector of edge `(u, v)`; endpoint order does not matter.
    pub fn compute(&self, rag: &Rag, u: NodeId, v: NodeId) -> Result<Vec<f64>> {
        let (u, v) = if u < v { (u, v) } else { (v, u) };
        let e = rag.edge(u, v).ok_or(Error::EdgeAbsent(u, v))?;
        let nu = rag.node(u).ok_or(Error::EdgeAbsent(u, v))?;
        let nv = rag.node(v).ok_or(Error::EdgeAbsent(u, v))?;
        self.compute_records(nu, nv, e)
    }

    pub fn compute_records(&self, u: &NodeRecord, v: &NodeRecord, e: &EdgeRecord) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for m in &self.managers {
            match *m {
                Manager::Histogram { bins, quantiles } => {
                    for c in 0..self.channels {
                        out.extend(histogram_features(&u.cues[c], &v.cues[c], &e.boundary[c], bins, quantiles)?);
                    }
                }
                Manager::Moments => {
                    for c in 0..self.channels {
                        out.extend(moment_features(&u.cues[c], &v.cues[c], &e.boundary[c]));
                    }
                }
                Manager::Geometry => out.extend(geometry_features(u, v, e)),
                Manager::Orientation => out.extend(orientation_features(spatial(u)?, spatial(v)?)?),
                Manager::Hull => out.extend(hull_features(spatial(u)?, spatial(v)?)?),
            }
        }
        debug_assert_eq!(out.len(), self.len());
        Ok(out)
    }
}

fn spatial(n: &NodeRecord) -> Result<&SpatialAccumulator> {
    n.spatial
        .as_ref()
        .ok_or_else(|| Error::FeatureMismatch(format!("node {} has no spatial statistics", n.id)))
}

/// Approximate quantiles at probabilities k/(Q+1), treating each bin as
/// uniform over its interval.
pub fn hist_quantiles(hist: &[f64], q: usize) -> Vec<f64> {
    let b = hist.len() as f64;
    (1..=q)
        .map(|k| {
            let p = k as f64 / (q + 1) as f64;
            let mut before = 0.0;
            for (i, &h) in hist.iter().enumerate() {
                if h > 0.0 && before + h >= p {
                    let frac = ((p - before) / h).clamp(0.0, 1.0);
                    return ((i as f64 + frac) / b).clamp(0.0, 1.0);
                }
                before += h;
            }
            // rounding left p just above the total mass
            let last = hist.iter().rposition(|&h| h > 0.0).map_or(0, |i| i + 1);
            last as f64 / b
        })
        .collect()
}

fn kl_to_mix(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits between two normalized histograms.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_to_mix(p, &m) + 0.5 * kl_to_mix(q, &m)).clamp(0.0, 1.0)
}

pub fn histogram_features(
    u: &CueAccumulator,
    v: &CueAccumulator,
    b: &CueAccumulator,
    bins: usize,
    quantiles: usize,
) -> Result<Vec<f64>> {
    if u.count() == 0 || v.count() == 0 || b.count() == 0 {
        return Err(Error::InvalidInput("histogram of an empty accumulator".into()));
    }
    if u.bins() != bins {
        return Err(Error::FeatureMismatch(format!(
            "accumulators have {} bins, manager wants {bins}",
            u.bins()
        )));
    }
    let hists = [u.normalized_hist(), v.normalized_hist(), b.normalized_hist()];
    let mut out = Vec::with_capacity(3 * bins + 3 * quantiles + 1);
    for h in &hists {
        out.extend_from_slice(h);
    }
    for h in &hists {
        out.extend(hist_quantiles(h, quantiles));
    }
    out.push(jensen_shannon(&hists[0], &hists[1]));
    Ok(out)
}

pub fn moment_features(u: &CueAccumulator, v: &CueAccumulator, b: &CueAccumulator) -> Vec<f64> {
    let mut out = Vec::with_capacity(19);
    for a in [u, v, b] {
        out.push((a.count().max(1) as f64).ln());
        out.push(a.mean());
        out.extend(a.central_moments());
    }
    let (mu, mv) = (u.central_moments(), v.central_moments());
    out.push((u.mean() - v.mean()).abs());
    for k in 0..3 {
        out.push((mu[k] - mv[k]).abs());
    }
    out
}

pub fn geometry_features(u: &NodeRecord, v: &NodeRecord, e: &EdgeRecord) -> [f64; 3] {
    let small = u.size.min(v.size).max(1) as f64;
    let large = u.size.max(v.size).max(1) as f64;
    let bc = e.boundary_count.max(1) as f64;
    [bc.ln(), bc / small, small / large]
}

/// Smallest angle between two undirected lines, in [0, π/2].
fn line_angle(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d).clamp(0.0, FRAC_PI_2)
}

/// Principal axis angle of a 2D region, or `None` when isotropic.
fn principal_angle(s: &SpatialAccumulator) -> Option<f64> {
    let (a, b, c) = (s.covariance(0, 0), s.covariance(0, 1), s.covariance(1, 1));
    let spread = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    if spread <= 1e-9 * (a + c).abs().max(1.0) {
        return None;
    }
    Some(0.5 * (2.0 * b).atan2(a - c))
}

pub fn orientation_features(u: &SpatialAccumulator, v: &SpatialAccumulator) -> Result<[f64; 4]> {
    if u.ndim() != 2 || v.ndim() != 2 {
        return Err(Error::FeatureMismatch("orientation features are 2D only".into()));
    }
    let (cu, cv) = (u.centroid(), v.centroid());
    let (dr, dc) = (cv[0] - cu[0], cv[1] - cu[1]);
    let segment = ((dr * dr + dc * dc).sqrt() > 1e-12).then(|| dc.atan2(dr));
    let (au, av) = (principal_angle(u), principal_angle(v));
    let between = match (au, av) {
        (Some(x), Some(y)) => line_angle(x, y),
        _ => 0.0,
    };
    let to_segment = |axis: Option<f64>| match (axis, segment) {
        (Some(x), Some(s)) => line_angle(x, s),
        _ => 0.0,
    };
    let degenerate = au.is_none() || av.is_none() || segment.is_none();
    Ok([
        between,
        to_segment(au),
        to_segment(av),
        if degenerate { 1.0 } else { 0.0 },
    ])
}

pub fn hull_features(u: &SpatialAccumulator, v: &SpatialAccumulator) -> Result<[f64; 3]> {
    let (Some(hu), Some(hv)) = (u.hull(), v.hull()) else {
        return Err(Error::FeatureMismatch("hull features need 2D hulls".into()));
    };
    let au = crate::rag::hull::polygon_area(hu);
    let av = crate::rag::hull::polygon_area(hv);
    let auv = crate::rag::hull::polygon_area(&crate::rag::hull::merge_hulls(hu, hv));
    let (su, sv) = (u.count().max(1) as f64, v.count().max(1) as f64);
    Ok([au / su, av / sv, auv / (su + sv)])
}
