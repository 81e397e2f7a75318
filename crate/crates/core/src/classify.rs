//! Random-forest merge classifier and the training sets it learns from.
//!
//! Labels follow the merge convention: −1 means "should merge", +1 means
//! "should not merge". A forest predicts the probability of +1, so low
//! scores are merged first.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::fmt::g17;
use crate::rng::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈√q⌉.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 20,
            min_leaf: 1,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn mtry(&self, q: usize) -> Result<usize> {
        let m = self
            .features_per_split
            .unwrap_or_else(|| (q as f64).sqrt().ceil() as usize);
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 || m == 0 || m > q {
            return Err(Error::InvalidInput(format!(
                "invalid forest parameters {self:?} for {q} features"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Flat,
    Gala,
    Lash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: Strategy,
    pub epoch: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    features: Vec<Vec<f64>>,
    labels: Vec<i8>,
    provenance: Vec<Provenance>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<f64>, label: i8, provenance: Provenance) -> Result<()> {
        if label != 1 && label != -1 {
            return Err(Error::InvalidInput(format!("training label {label} is not ±1")));
        }
        if let Some(first) = self.features.first() {
            if first.len() != x.len() {
                return Err(Error::FeatureMismatch(format!(
                    "example of length {} in a set of length {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        self.features.push(x);
        self.labels.push(label);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn extend(&mut self, other: TrainingSet) -> Result<()> {
        for ((x, y), p) in other.features.into_iter().zip(other.labels).zip(other.provenance) {
            self.push(x, y, p)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn count(&self, label: i8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// `label,f0,f1,...` rows with 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.n_features()).map(|i| format!("f{i}")).collect();
        writeln!(w, "label,{}", header.join(","))?;
        for (x, y) in self.features.iter().zip(&self.labels) {
            let row: Vec<String> = x.iter().map(|&v| g17(v)).collect();
            writeln!(w, "{y},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_provenance(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.provenance)?;
        Ok(())
    }

    /// Reads a CSV dump; `provenance` must have one entry per row when given.
    pub fn read_csv(r: impl BufRead, provenance: Option<Vec<Provenance>>) -> Result<Self> {
        let mut set = TrainingSet::new();
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("training set line {}", i + 1));
            let mut fields = line.trim().split(',');
            let y: i8 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let x = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            rows.push((x, y));
        }
        let prov = match provenance {
            Some(p) if p.len() == rows.len() => p,
            Some(p) => {
                return Err(Error::Format(format!(
                    "{} provenance entries for {} rows",
                    p.len(),
                    rows.len()
                )))
            }
            None => vec![Provenance { strategy: Strategy::Flat, epoch: 0 }; rows.len()],
        };
        for ((x, y), p) in rows.into_iter().zip(prov) {
            set.push(x, y, p)?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Fraction of +1 samples that reached this leaf.
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(p) => return p,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub params: ForestParams,
    pub feature_map_config: FeatureMap,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Probability that `x` should not be merged: the mean leaf fraction.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::FeatureMismatch(format!(
                "vector of length {} for a model with q = {}",
                x.len(),
                self.n_features
            )));
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((s / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map_config
    }

    /// Checks internal consistency: version, q against the embedded map,
    /// split indices and leaf fractions.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.feature_map_config.validate()?;
        let q = self.feature_map_config.len();
        if q != self.n_features {
            return Err(Error::FeatureMismatch(format!(
                "model has q = {} but its feature map produces {q}",
                self.n_features
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::Format("model has no trees".into()));
        }
        for t in &self.trees {
            for n in &t.nodes {
                match *n {
                    TreeNode::Split { feature, left, right, .. } => {
                        if feature >= q || left >= t.nodes.len() || right >= t.nodes.len() {
                            return Err(Error::Format("tree node index out of range".into()));
                        }
                    }
                    TreeNode::Leaf(p) if !(0.0..=1.0).contains(&p) => {
                        return Err(Error::Format(format!("leaf fraction {p} outside [0, 1]")))
                    }
                    TreeNode::Leaf(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        let found = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Format("model has no format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let m: ForestModel = serde_json::from_value(raw)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    positive: &'a [bool],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
}

impl Grower<'_> {
    fn grow(&self, rng: &mut SplitMix64) -> Tree {
        let n = self.positive.len();
        let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
        let mut nodes = vec![TreeNode::Leaf(0.0)];
        let mut stack = vec![(0usize, sample, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let pos = idx.iter().filter(|&&i| self.positive[i]).count();
            let frac = pos as f64 / idx.len() as f64;
            let pure = pos == 0 || pos == idx.len();
            if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
                nodes[slot] = TreeNode::Leaf(frac);
                continue;
            }
            let Some((feature, threshold)) = self.best_split(&idx, rng) else {
                nodes[slot] = TreeNode::Leaf(frac);
                continue;
            };
            let col = &self.columns[feature];
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= threshold);
            let left = nodes.len();
            nodes.push(TreeNode::Leaf(0.0));
            let right = nodes.len();
            nodes.push(TreeNode::Leaf(0.0));
            nodes[slot] = TreeNode::Split { feature, threshold, left, right };
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        Tree { nodes }
    }

    /// Lowest weighted Gini impurity over `mtry` non-constant features drawn
    /// without replacement. Thresholds are midpoints between consecutive
    /// distinct values; ties keep the first candidate found.
    fn best_split(&self, idx: &[usize], rng: &mut SplitMix64) -> Option<(usize, f64)> {
        let q = self.columns.len();
        let mut order: Vec<usize> = (0..q).collect();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut evaluated = 0;
        let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(idx.len());
        let total_pos = idx.iter().filter(|&&i| self.positive[i]).count() as f64;
        let n = idx.len();
        for k in 0..q {
            if evaluated >= self.mtry {
                break;
            }
            let j = k + rng.below(q - k);
            order.swap(k, j);
            let f = order[k];
            let col = &self.columns[f];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], self.positive[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            evaluated += 1;
            let mut left_pos = 0.0;
            for s in 1..n {
                if pairs[s - 1].1 {
                    left_pos += 1.0;
                }
                if s < self.min_leaf || n - s < self.min_leaf || pairs[s - 1].0 == pairs[s].0 {
                    continue;
                }
                let nl = s as f64;
                let nr = (n - s) as f64;
                let right_pos = total_pos - left_pos;
                let impurity = left_pos * (nl - left_pos) / nl + right_pos * (nr - right_pos) / nr;
                if best.is_none_or(|b| impurity < b.0) {
                    let (a, b) = (pairs[s - 1].0, pairs[s].0);
                    let mut t = a + (b - a) / 2.0;
                    if t >= b {
                        t = a;
                    }
                    best = Some((impurity, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Trains a forest on bootstrap resamples of `t`.
pub fn train_forest(t: &TrainingSet, params: &ForestParams, feature_map: &FeatureMap) -> Result<ForestModel> {
    if t.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let pos = t.count(1);
    if pos == 0 {
        return Err(Error::SingleClass(-1));
    }
    if pos == t.len() {
        return Err(Error::SingleClass(1));
    }
    let q = t.n_features();
    if q != feature_map.len() {
        return Err(Error::FeatureMismatch(format!(
            "training vectors have length {q}, feature map produces {}",
            feature_map.len()
        )));
    }
    let mtry = params.mtry(q)?;
    let columns: Vec<Vec<f64>> = (0..q)
        .map(|f| t.features.iter().map(|x| x[f]).collect())
        .collect();
    let positive: Vec<bool> = t.labels.iter().map(|&y| y == 1).collect();
    let grower = Grower {
        columns: &columns,
        positive: &positive,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        mtry,
    };
    let seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|k| SplitMix64::stream(params.seed, k).next_u64())
        .collect();
    let trees = seeds
        .par_iter()
        .map(|&s| grower.grow(&mut SplitMix64::new(s)))
        .collect();
    Ok(ForestModel {
        format_version: FORMAT_VERSION,
        params: *params,
        feature_map_config: feature_map.clone(),
        n_features: q,
        trees,
    })
}
