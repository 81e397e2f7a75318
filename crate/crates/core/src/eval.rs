//! Region metrics computed from sparse contingency tables.
//!
//! All entropies are in bits. Voxels labeled 0 in either input are left out
//! of every table.

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::rag::{apply_threshold, Dendrogram, DisjointSet, NodeId};
use crate::volume::{ensure_same_shape, LabelVolume};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    cells: BTreeMap<(u64, u64), u64>,
    rows: BTreeMap<u64, u64>,
    cols: BTreeMap<u64, u64>,
    total: u64,
}

impl ContingencyTable {
    /// Table of `(seg, gt)` label pairs; pairs with a 0 on either side are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut t = Self::default();
        for (s, u) in pairs {
            if s == 0 || u == 0 {
                continue;
            }
            *t.cells.entry((s, u)).or_default() += 1;
            *t.rows.entry(s).or_default() += 1;
            *t.cols.entry(u).or_default() += 1;
            t.total += 1;
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cells(&self) -> impl Iterator<Item = ((u64, u64), u64)> + '_ {
        self.cells.iter().map(|(&k, &n)| (k, n))
    }

    /// Segmentation marginals n_{s·}.
    pub fn rows(&self) -> &BTreeMap<u64, u64> {
        &self.rows
    }

    /// Gold-standard marginals n_{·u}.
    pub fn cols(&self) -> &BTreeMap<u64, u64> {
        &self.cols
    }
}

pub fn contingency(seg: &LabelVolume, gt: &LabelVolume) -> Result<ContingencyTable> {
    ensure_same_shape(seg.shape(), gt.shape())?;
    let t = ContingencyTable::from_pairs(seg.data().iter().copied().zip(gt.data().iter().copied()));
    if t.total == 0 {
        return Err(Error::InvalidInput(
            "no voxel is labeled in both the segmentation and the gold standard".into(),
        ));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViResult {
    /// H(U|S): false merges.
    pub under: f64,
    /// H(S|U): false splits.
    pub over: f64,
    pub total: f64,
}

fn xlog2x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

pub fn vi(t: &ContingencyTable) -> ViResult {
    let n = t.total as f64;
    let mut over = 0.0;
    let mut under = 0.0;
    for (&(s, u), &c) in &t.cells {
        let p = c as f64 / n;
        over -= p * (c as f64 / t.cols[&u] as f64).log2();
        under -= p * (c as f64 / t.rows[&s] as f64).log2();
    }
    let (over, under) = (over.max(0.0), under.max(0.0));
    ViResult { under, over, total: under + over }
}

fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

struct PairCounts {
    cells: u128,
    rows: u128,
    cols: u128,
    all: u128,
}

fn pair_counts(t: &ContingencyTable) -> PairCounts {
    PairCounts {
        cells: t.cells.values().map(|&c| pairs(c)).sum(),
        rows: t.rows.values().map(|&c| pairs(c)).sum(),
        cols: t.cols.values().map(|&c| pairs(c)).sum(),
        all: pairs(t.total),
    }
}

/// Fraction of voxel pairs on which the two labelings agree.
pub fn rand_index(t: &ContingencyTable) -> f64 {
    let p = pair_counts(t);
    if p.all == 0 {
        return 1.0;
    }
    let agree = p.all + 2 * p.cells - p.rows - p.cols;
    agree as f64 / p.all as f64
}

/// One minus the chance-adjusted Rand index.
pub fn adjusted_rand_error(t: &ContingencyTable) -> f64 {
    let p = pair_counts(t);
    if p.all == 0 {
        return 0.0;
    }
    let index = p.cells as f64;
    let expected = p.rows as f64 * p.cols as f64 / p.all as f64;
    let max = 0.5 * (p.rows as f64 + p.cols as f64);
    if max == expected {
        return 0.0;
    }
    1.0 - (index - expected) / (max - expected)
}

/// Gold-weighted best-Jaccard covering of the gold standard by the segmentation.
pub fn covering(t: &ContingencyTable) -> f64 {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for (&(s, u), &c) in &t.cells {
        let union = (t.rows[&s] + t.cols[&u] - c) as f64;
        let j = c as f64 / union;
        let b = best.entry(u).or_insert(0.0);
        if j > *b {
            *b = j;
        }
    }
    let n = t.total as f64;
    t.cols
        .iter()
        .map(|(u, &size)| size as f64 * best.get(u).copied().unwrap_or(0.0))
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakdownRow {
    pub segment: u64,
    pub mass: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    /// (u, P(U=u), H(S|U=u)): where the false splits are.
    pub gold: Vec<BreakdownRow>,
    /// (s, P(S=s), H(U|S=s)): where the false merges are.
    pub seg: Vec<BreakdownRow>,
}

pub fn vi_breakdown(t: &ContingencyTable) -> Breakdown {
    let n = t.total as f64;
    let mut gold_h: BTreeMap<u64, f64> = BTreeMap::new();
    let mut seg_h: BTreeMap<u64, f64> = BTreeMap::new();
    for (&(s, u), &c) in &t.cells {
        let pu = c as f64 / t.cols[&u] as f64;
        let ps = c as f64 / t.rows[&s] as f64;
        *gold_h.entry(u).or_default() -= pu * pu.log2();
        *seg_h.entry(s).or_default() -= ps * ps.log2();
    }
    let table = |marg: &BTreeMap<u64, u64>, h: &BTreeMap<u64, f64>| {
        let mut rows: Vec<BreakdownRow> = marg
            .iter()
            .map(|(&id, &m)| BreakdownRow {
                segment: id,
                mass: m as f64 / n,
                entropy: h.get(&id).copied().unwrap_or(0.0).max(0.0),
            })
            .collect();
        rows.sort_by(|a, b| {
            (b.mass * b.entropy)
                .total_cmp(&(a.mass * a.entropy))
                .then(a.segment.cmp(&b.segment))
        });
        rows
    };
    Breakdown {
        gold: table(&t.cols, &gold_h),
        seg: table(&t.rows, &seg_h),
    }
}

impl Breakdown {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "segment_id,mass,entropy,direction")?;
        for (rows, dir) in [(&self.gold, "false_split"), (&self.seg, "false_merge")] {
            for r in rows {
                writeln!(w, "{},{},{},{dir}", r.segment, g17(r.mass), g17(r.entropy))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    /// H(U|S)
    pub under: f64,
    /// H(S|U)
    pub over: f64,
    pub total: f64,
}

/// Split-VI curve along one merge log, one row per threshold.
///
/// Contingency rows are fused as the log is replayed, and the conditional
/// entropies are updated from the changed cells only.
pub fn split_vi_sweep(
    sp: &LabelVolume,
    d: &Dendrogram,
    gt: &LabelVolume,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    ensure_same_shape(sp.shape(), gt.shape())?;
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("sweep thresholds must be ascending".into()));
    }
    let leaves = d.leaves();
    let mut index: HashMap<NodeId, usize> = HashMap::new();
    for &node in leaves.values() {
        let next = index.len();
        index.entry(node).or_insert(next);
    }
    let mut rows: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); index.len()];
    let mut sizes: Vec<u64> = vec![0; index.len()];
    let mut cols: BTreeMap<u64, u64> = BTreeMap::new();
    let mut total = 0u64;
    for (&s, &u) in sp.data().iter().zip(gt.data()) {
        if s == 0 || u == 0 {
            continue;
        }
        let node = leaves.get(&s).ok_or_else(|| {
            Error::InvalidInput(format!("superpixel {s} does not appear in the dendrogram"))
        })?;
        let r = index[node];
        *rows[r].entry(u).or_default() += 1;
        sizes[r] += 1;
        *cols.entry(u).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidInput("empty effective domain".into()));
    }
    let n = total as f64;
    let f = |x: u64| xlog2x(x as f64);
    let gold_term: f64 = cols.values().map(|&c| f(c)).sum();
    let mut joint: f64 = rows.iter().flat_map(|r| r.values()).map(|&c| f(c)).sum();
    let mut seg_term: f64 = sizes.iter().map(|&c| f(c)).sum();

    let mut sets = DisjointSet::new(index.len());
    let events = d.events();
    let mut applied = 0;
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let stop = d.cut_len(t);
        while applied < stop {
            let e = events[applied];
            let (Some(&si), Some(&ai)) = (index.get(&e.survivor), index.get(&e.absorbed)) else {
                return Err(Error::InvalidInput(format!(
                    "merge {} <- {} names an unknown node",
                    e.survivor, e.absorbed
                )));
            };
            let (s, a) = (sets.find(si), sets.find(ai));
            if s != a {
                seg_term += f(sizes[s] + sizes[a]) - f(sizes[s]) - f(sizes[a]);
                sizes[s] += sizes[a];
                sizes[a] = 0;
                let moved = std::mem::take(&mut rows[a]);
                for (u, c) in moved {
                    let cell = rows[s].entry(u).or_default();
                    joint += f(*cell + c) - f(*cell) - f(c);
                    *cell += c;
                }
                sets.union_into(s, a);
            }
            applied += 1;
        }
        let under = ((seg_term - joint) / n).max(0.0);
        let over = ((gold_term - joint) / n).max(0.0);
        out.push(SweepRow { threshold: t, under, over, total: under + over });
    }
    Ok(out)
}

/// From-scratch counterpart of one sweep row.
pub fn vi_at_threshold(sp: &LabelVolume, d: &Dendrogram, gt: &LabelVolume, t: f64) -> Result<ViResult> {
    Ok(vi(&contingency(&apply_threshold(sp, d, t)?, gt)?))
}

pub fn write_sweep_csv(rows: &[SweepRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "metric,threshold,value")?;
    for r in rows {
        let t = g17(r.threshold);
        writeln!(w, "vi_under,{t},{}", g17(r.under))?;
        writeln!(w, "vi_over,{t},{}", g17(r.over))?;
        writeln!(w, "vi,{t},{}", g17(r.total))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdsOis {
    pub ods_threshold: f64,
    pub ods_score: f64,
    pub ois_score: f64,
}

/// Optimal dataset scale and optimal image scale.
///
/// `scores[i][k]` is image i's metric at `thresholds[k]`. Ties go to the
/// smaller threshold.
pub fn ods_ois(thresholds: &[f64], scores: &[Vec<f64>], goal: Goal) -> Result<OdsOis> {
    if thresholds.is_empty() || scores.is_empty() {
        return Err(Error::InvalidInput("ODS/OIS needs at least one image and threshold".into()));
    }
    if scores.iter().any(|s| s.len() != thresholds.len()) {
        return Err(Error::InvalidInput("every image needs one score per threshold".into()));
    }
    let better = |a: f64, b: f64| match goal {
        Goal::Minimize => a < b,
        Goal::Maximize => a > b,
    };
    let pick = |vals: &mut dyn Iterator<Item = f64>| {
        let mut best: Option<(usize, f64)> = None;
        for (k, v) in vals.enumerate() {
            if best.is_none_or(|(_, b)| better(v, b)) {
                best = Some((k, v));
            }
        }
        best.expect("nonempty")
    };
    let m = scores.len() as f64;
    let (k, ods_score) = pick(&mut (0..thresholds.len()).map(|k| scores.iter().map(|s| s[k]).sum::<f64>() / m));
    let ois_score = scores.iter().map(|s| pick(&mut s.iter().copied()).1).sum::<f64>() / m;
    Ok(OdsOis {
        ods_threshold: thresholds[k],
        ods_score,
        ois_score,
    })
}
