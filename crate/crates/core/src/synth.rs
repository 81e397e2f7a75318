//! Seeded synthetic benchmark: Voronoi gold standard, noisy boundary map,
//! optional per-region texture channel and watershed superpixels.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::volume::{regional_minima, watershed, Connectivity, CueVolume, LabelVolume, Neighborhood, Shape};
use serde::{Deserialize, Serialize};

const STREAM_SITES: u64 = 1;
const STREAM_BOUNDARY: u64 = 2;
const STREAM_TEXTURE_LEVEL: u64 = 3;
const STREAM_TEXTURE_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: Vec<usize>,
    pub regions: usize,
    pub blur_radius: usize,
    pub boundary_noise: f64,
    pub texture: bool,
    pub texture_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The reference benchmark: 128², 20 regions, two channels, seed 42.
    fn default() -> Self {
        Self {
            shape: vec![128, 128],
            regions: 20,
            blur_radius: 1,
            boundary_noise: 0.3,
            texture: true,
            texture_noise: 0.2,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<Shape> {
        let shape = Shape::new(self.shape.clone())?;
        if self.regions < 2 {
            return Err(Error::InvalidInput("need at least 2 regions".into()));
        }
        if self.regions > shape.len() {
            return Err(Error::InvalidInput(format!(
                "{} regions exceed {} voxels",
                self.regions,
                shape.len()
            )));
        }
        for (name, s) in [("boundary", self.boundary_noise), ("texture", self.texture_noise)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!("{name} noise {s} outside [0, 1]")));
            }
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVolumes {
    pub gt: LabelVolume,
    pub cues: CueVolume,
    pub sp: LabelVolume,
}

fn voronoi(shape: &Shape, k: usize, rng: &mut SplitMix64) -> Vec<u64> {
    let ext = shape.extents();
    let sites: Vec<Vec<f64>> = (0..k)
        .map(|_| ext.iter().map(|&e| rng.next_f64() * e as f64).collect())
        .collect();
    let mut coords = vec![0; shape.ndim()];
    (0..shape.len())
        .map(|i| {
            shape.coords_into(i, &mut coords);
            let mut best = (f64::INFINITY, 0usize);
            for (id, s) in sites.iter().enumerate() {
                let d: f64 = s.iter().zip(&coords).map(|(a, &c)| (c as f64 - a).powi(2)).sum();
                if d < best.0 {
                    best = (d, id);
                }
            }
            best.1 as u64 + 1
        })
        .collect()
}

fn boundary_indicator(shape: &Shape, gt: &[u64]) -> Vec<f64> {
    let nb = Neighborhood::new(shape, Connectivity::Face);
    let mut coords = vec![0; shape.ndim()];
    (0..shape.len())
        .map(|i| {
            let mut edge = false;
            nb.for_each(i, &mut coords, |j| edge |= gt[j] != gt[i]);
            if edge {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Mean over the (2r+1)^d window clipped to the domain, done one axis at a time.
fn box_blur(shape: &Shape, data: &[f64], r: usize) -> Vec<f64> {
    if r == 0 {
        return data.to_vec();
    }
    let ext = shape.extents();
    let strides = shape.strides();
    let mut sums = data.to_vec();
    let mut counts = vec![1.0f64; data.len()];
    let mut coords = vec![0; shape.ndim()];
    for ax in 0..shape.ndim() {
        let (e, st) = (ext[ax], strides[ax]);
        let mut next_s = vec![0.0; data.len()];
        let mut next_c = vec![0.0; data.len()];
        for i in 0..data.len() {
            shape.coords_into(i, &mut coords);
            let c = coords[ax];
            let lo = c.saturating_sub(r);
            let hi = (c + r).min(e - 1);
            let base = i - c * st;
            for k in lo..=hi {
                next_s[i] += sums[base + k * st];
            }
            next_c[i] = counts[i] * (hi - lo + 1) as f64;
        }
        sums = next_s;
        counts = next_c;
    }
    sums.iter().zip(&counts).map(|(s, c)| s / c).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthVolumes> {
    let shape = cfg.validate()?;
    let n = shape.len();
    let gt = voronoi(&shape, cfg.regions, &mut SplitMix64::stream(cfg.seed, STREAM_SITES));

    let mut noise = SplitMix64::stream(cfg.seed, STREAM_BOUNDARY);
    let blurred = box_blur(&shape, &boundary_indicator(&shape, &gt), cfg.blur_radius);
    let mut data: Vec<f64> = blurred
        .iter()
        .map(|&b| (b + noise.symmetric(cfg.boundary_noise)).clamp(0.0, 1.0))
        .collect();
    let mut channels = 1;
    if cfg.texture {
        let mut levels = SplitMix64::stream(cfg.seed, STREAM_TEXTURE_LEVEL);
        let level: Vec<f64> = (0..cfg.regions).map(|_| levels.next_f64()).collect();
        let mut tn = SplitMix64::stream(cfg.seed, STREAM_TEXTURE_NOISE);
        data.extend(
            gt.iter()
                .map(|&g| (level[g as usize - 1] + tn.symmetric(cfg.texture_noise)).clamp(0.0, 1.0)),
        );
        channels = 2;
    }
    debug_assert_eq!(data.len(), n * channels);
    let gt = LabelVolume::new(shape.clone(), gt)?;
    let cues = CueVolume::new(shape, channels, data)?;
    let seeds = regional_minima(&cues, 0, Connectivity::Face)?;
    let sp = watershed(&cues, 0, &seeds, Connectivity::Face)?;
    Ok(SynthVolumes { gt, cues, sp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{contingency, vi};
    use crate::learn::best_agglomeration;

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { shape: vec![40, 30], regions: 6, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().gt, generate(&other).unwrap().gt);
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig { shape: vec![3, 3], regions: 10, ..Default::default() };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig { regions: 1, ..Default::default() };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig { boundary_noise: 1.5, ..Default::default() };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn noiseless_limit() {
        let cfg = SynthConfig {
            shape: vec![48, 48],
            regions: 8,
            blur_radius: 0,
            boundary_noise: 0.0,
            texture: false,
            ..Default::default()
        };
        let s = generate(&cfg).unwrap();
        let ind = boundary_indicator(s.gt.shape(), s.gt.data());
        assert_eq!(s.cues.channel(0), &ind[..]);
        assert_eq!(s.cues.channels(), 1);
        let a = best_agglomeration(&s.sp, &s.gt).unwrap();
        let projected = a.project(&s.sp).unwrap();
        assert!(vi(&contingency(&projected, &s.gt).unwrap()).total < 0.5);
    }

    #[test]
    fn blur_preserves_mean_of_constant() {
        let shape = Shape::new(vec![5, 7]).unwrap();
        let out = box_blur(&shape, &vec![0.25; 35], 2);
        assert!(out.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mut spike = vec![0.0; 35];
        spike[0] = 1.0;
        // corner window of radius 1 covers 4 voxels
        assert_eq!(box_blur(&shape, &spike, 1)[0], 0.25);
    }

    #[test]
    fn reference_benchmark_regression() {
        let s = generate(&SynthConfig::default()).unwrap();
        let k = s.sp.labels().len();
        assert!(k > 20 && k < 128 * 128, "{k} superpixels");
        assert!(s.gt.labels().len() <= 20);
        let a = best_agglomeration(&s.sp, &s.gt).unwrap();
        let projected = a.project(&s.sp).unwrap();
        let agree = projected.data().iter().zip(s.gt.data()).filter(|(a, b)| a == b).count();
        assert!(agree as f64 >= 0.9 * (128 * 128) as f64, "purity {agree}");
    }
}
