//! Training-data generation: flat learning, guided agglomerative epochs and
//! Rand-index-labeled (LASH-style) epochs, plus the drivers that alternate
//! epochs with forest training.

use crate::classify::{train_forest, ForestModel, ForestParams, Provenance, Strategy, TrainingSet};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::rag::{NodeId, NodeRecord, Policy, Rag};
use crate::volume::{ensure_same_shape, CueVolume, LabelVolume};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Each superpixel's gold segment of maximal overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BestAssignment {
    assignment: BTreeMap<NodeId, u64>,
    overlaps: BTreeMap<NodeId, BTreeMap<u64, u64>>,
    unassigned: Vec<NodeId>,
}

impl BestAssignment {
    /// Gold id of superpixel `sp`, or 0 when it only overlaps ignore voxels.
    pub fn gold(&self, sp: NodeId) -> u64 {
        self.assignment.get(&sp).copied().unwrap_or(0)
    }

    pub fn assignment(&self) -> &BTreeMap<NodeId, u64> {
        &self.assignment
    }

    /// Gold-standard voxel counts per superpixel.
    pub fn overlaps(&self) -> &BTreeMap<NodeId, BTreeMap<u64, u64>> {
        &self.overlaps
    }

    /// Superpixels that overlap only gold label 0.
    pub fn unassigned(&self) -> &[NodeId] {
        &self.unassigned
    }

    pub fn gold_count(&self) -> usize {
        let mut ids: Vec<u64> = self.assignment.values().copied().filter(|&g| g != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Common gold id of all members, if the node is pure.
    pub fn node_gold(&self, node: &NodeRecord) -> Option<u64> {
        let first = self.gold(*node.members.first()?);
        (first != 0 && node.members.iter().all(|&m| self.gold(m) == first)).then_some(first)
    }

    /// The superpixel map relabeled to assigned gold ids (0 where unassigned).
    pub fn project(&self, sp: &LabelVolume) -> Result<LabelVolume> {
        let data = sp.data().iter().map(|&s| if s == 0 { 0 } else { self.gold(s) }).collect();
        LabelVolume::new(sp.shape().clone(), data)
    }
}

pub fn best_agglomeration(sp: &LabelVolume, gt: &LabelVolume) -> Result<BestAssignment> {
    ensure_same_shape(sp.shape(), gt.shape())?;
    let mut overlaps: BTreeMap<NodeId, BTreeMap<u64, u64>> = BTreeMap::new();
    for (&s, &g) in sp.data().iter().zip(gt.data()) {
        if s == 0 {
            continue;
        }
        let row = overlaps.entry(s).or_default();
        if g != 0 {
            *row.entry(g).or_default() += 1;
        }
    }
    let mut assignment = BTreeMap::new();
    let mut unassigned = Vec::new();
    for (&s, row) in &overlaps {
        // BTreeMap iterates gold ids ascending, so strict `>` keeps the smaller id on ties.
        let mut best: Option<(u64, u64)> = None;
        for (&g, &n) in row {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((g, n));
            }
        }
        match best {
            Some((g, _)) => {
                assignment.insert(s, g);
            }
            None => {
                assignment.insert(s, 0);
                unassigned.push(s);
            }
        }
    }
    Ok(BestAssignment { assignment, overlaps, unassigned })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    Merge,
    Unknown,
    Split,
}

impl EdgeLabel {
    pub fn value(self) -> i8 {
        match self {
            EdgeLabel::Merge => -1,
            EdgeLabel::Unknown => 0,
            EdgeLabel::Split => 1,
        }
    }
}

pub fn label_edge(a: &BestAssignment, u: &NodeRecord, v: &NodeRecord) -> EdgeLabel {
    match (a.node_gold(u), a.node_gold(v)) {
        (Some(x), Some(y)) if x == y => EdgeLabel::Merge,
        (Some(_), Some(_)) => EdgeLabel::Split,
        _ => EdgeLabel::Unknown,
    }
}

fn touches_unassigned(a: &BestAssignment, n: &NodeRecord) -> bool {
    n.members.iter().any(|&m| a.gold(m) == 0)
}

fn nodes_of(rag: &Rag, u: NodeId, v: NodeId) -> (&NodeRecord, &NodeRecord) {
    (
        rag.node(u).expect("live edge endpoint"),
        rag.node(v).expect("live edge endpoint"),
    )
}

/// One labeled example per superpixel-level edge.
pub fn flat_train(rag: &Rag, a: &BestAssignment, fm: &FeatureMap) -> Result<TrainingSet> {
    fm.check(rag)?;
    let prov = Provenance { strategy: Strategy::Flat, epoch: 0 };
    let mut t = TrainingSet::new();
    for e in rag.edges() {
        let (u, v) = nodes_of(rag, e.u, e.v);
        let label = label_edge(a, u, v);
        if label == EdgeLabel::Unknown {
            continue;
        }
        t.push(fm.compute_records(u, v, e)?, label.value(), prov)?;
    }
    Ok(t)
}

/// Guided training epoch.
///
/// Edges are visited in policy order. Each visit records the edge's current
/// features and its label; true merges are carried out, false merges are
/// retired until one of their endpoints changes. When the queue runs dry
/// the graph equals the best agglomeration (up to gold segments whose
/// superpixels are not connected). Edges touching superpixels with no gold
/// overlap are skipped.
pub fn gala_epoch(
    rag: &mut Rag,
    policy: &Policy,
    a: &BestAssignment,
    fm: &FeatureMap,
    epoch: u32,
) -> Result<TrainingSet> {
    fm.check(rag)?;
    policy.check(rag)?;
    rag.rescore(policy)?;
    let prov = Provenance { strategy: Strategy::Gala, epoch };
    let mut t = TrainingSet::new();
    while let Some(top) = rag.pop_live() {
        let (u, v) = nodes_of(rag, top.u, top.v);
        if touches_unassigned(a, u) || touches_unassigned(a, v) {
            continue;
        }
        let label = label_edge(a, u, v);
        let x = fm.compute(rag, top.u, top.v)?;
        match label {
            EdgeLabel::Merge => {
                t.push(x, -1, prov)?;
                rag.merge_nodes(top.u, top.v, policy)?;
            }
            EdgeLabel::Split => t.push(x, 1, prov)?,
            EdgeLabel::Unknown => return Err(Error::ImpureNode(top.u, top.v)),
        }
    }
    Ok(t)
}

/// Numerator of the Rand-index change from merging two segmentation rows:
/// `2 Σ_u n1u·n2u − a1·a2`, where `a` are row sums. The index itself changes
/// by this amount divided by C(N, 2).
pub fn rand_gain(r1: &HashMap<u64, u64>, r2: &HashMap<u64, u64>) -> i128 {
    let (small, large) = if r1.len() <= r2.len() { (r1, r2) } else { (r2, r1) };
    let shared: i128 = small
        .iter()
        .filter_map(|(g, &n)| large.get(g).map(|&m| n as i128 * m as i128))
        .sum();
    let a1: i128 = r1.values().map(|&n| n as i128).sum();
    let a2: i128 = r2.values().map(|&n| n as i128).sum();
    2 * shared - a1 * a2
}

/// Rand-index-labeled epoch: every popped edge is merged, and labeled −1 if
/// the merge raises the Rand index against the gold standard, +1 if it
/// lowers it. Merges that leave it unchanged are not recorded.
pub fn lash_epoch(
    rag: &mut Rag,
    policy: &Policy,
    a: &BestAssignment,
    fm: &FeatureMap,
    epoch: u32,
) -> Result<TrainingSet> {
    fm.check(rag)?;
    policy.check(rag)?;
    rag.rescore(policy)?;
    let mut rows: HashMap<NodeId, HashMap<u64, u64>> = HashMap::new();
    for n in rag.nodes() {
        let row = rows.entry(n.id).or_default();
        for m in &n.members {
            if let Some(o) = a.overlaps().get(m) {
                for (&g, &c) in o {
                    *row.entry(g).or_default() += c;
                }
            }
        }
    }
    let prov = Provenance { strategy: Strategy::Lash, epoch };
    let mut t = TrainingSet::new();
    while let Some(top) = rag.pop_live() {
        let gain = rand_gain(&rows[&top.u], &rows[&top.v]);
        if gain != 0 {
            let x = fm.compute(rag, top.u, top.v)?;
            t.push(x, if gain > 0 { -1 } else { 1 }, prov)?;
        }
        let survivor = rag.merge_nodes(top.u, top.v, policy)?;
        let absorbed = if survivor == top.u { top.v } else { top.u };
        let gone = rows.remove(&absorbed).unwrap_or_default();
        let row = rows.entry(survivor).or_default();
        for (g, c) in gone {
            *row.entry(g).or_default() += c;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Flat,
    Gala,
    Lash,
}

/// Policy driving the first agglomerative epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialPolicy {
    /// Forest trained on the flat set.
    #[default]
    Flat,
    Mean,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainParams {
    pub method: Method,
    pub epochs: usize,
    pub forest: ForestParams,
    #[serde(default)]
    pub initial: InitialPolicy,
    /// Also run a Rand-index-labeled epoch alongside every guided epoch and
    /// keep both sets of examples.
    #[serde(default)]
    pub mix_lash: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            method: Method::Gala,
            epochs: 5,
            forest: ForestParams::default(),
            initial: InitialPolicy::Flat,
            mix_lash: false,
        }
    }
}

/// Inputs shared by every epoch.
pub struct TrainingVolumes<'a> {
    pub sp: &'a LabelVolume,
    pub cues: &'a CueVolume,
    pub gt: &'a LabelVolume,
}

pub struct TrainOutcome {
    pub model: ForestModel,
    /// Examples the final model was trained on.
    pub training_set: TrainingSet,
    /// Size of the accumulated set after each training round.
    pub history: Vec<usize>,
}

impl TrainingVolumes<'_> {
    fn fresh_rag(&self, fm: &FeatureMap) -> Result<Rag> {
        let rag = Rag::build(self.sp, self.cues, &fm.rag_config())?;
        fm.check(&rag)?;
        Ok(rag)
    }
}

fn initial_policy(kind: InitialPolicy, seed: u64) -> Option<Policy> {
    match kind {
        InitialPolicy::Flat => None,
        InitialPolicy::Mean => Some(Policy::MeanBoundary { channel: 0 }),
        InitialPolicy::Random => Some(Policy::Random { seed }),
    }
}

/// Guided agglomerative training: flat set first, then `epochs` guided
/// epochs, each under the policy learned from all examples so far.
pub fn gala_train(v: &TrainingVolumes, fm: &FeatureMap, params: &TrainParams) -> Result<TrainOutcome> {
    let a = best_agglomeration(v.sp, v.gt)?;
    let mut t = TrainingSet::new();
    let mut history = Vec::new();
    let mut policy = initial_policy(params.initial, params.forest.seed);
    let mut model = None;
    if policy.is_none() {
        t = flat_train(&v.fresh_rag(fm)?, &a, fm)?;
        let m = train_forest(&t, &params.forest, fm)?;
        policy = Some(Policy::learned(m.clone()));
        model = Some(m);
        history.push(t.len());
    } else if params.epochs == 0 {
        return Err(Error::InvalidInput(
            "a mean or random initial policy needs at least one epoch".into(),
        ));
    }
    for k in 1..=params.epochs {
        let current = policy.take().expect("policy for epoch");
        let mut rag = v.fresh_rag(fm)?;
        t.extend(gala_epoch(&mut rag, &current, &a, fm, k as u32)?)?;
        if params.mix_lash {
            let mut rag = v.fresh_rag(fm)?;
            t.extend(lash_epoch(&mut rag, &current, &a, fm, k as u32)?)?;
        }
        let m = train_forest(&t, &params.forest, fm)?;
        policy = Some(Policy::learned(m.clone()));
        model = Some(m);
        history.push(t.len());
    }
    Ok(TrainOutcome {
        model: model.expect("at least one training round"),
        training_set: t,
        history,
    })
}

/// Rand-index-labeled training where each round keeps only the previous
/// epoch's examples.
pub fn lash_train(v: &TrainingVolumes, fm: &FeatureMap, params: &TrainParams) -> Result<TrainOutcome> {
    let a = best_agglomeration(v.sp, v.gt)?;
    let mut history = Vec::new();
    let mut t;
    let mut policy = initial_policy(params.initial, params.forest.seed);
    let mut model = None;
    if policy.is_none() {
        t = flat_train(&v.fresh_rag(fm)?, &a, fm)?;
        let m = train_forest(&t, &params.forest, fm)?;
        policy = Some(Policy::learned(m.clone()));
        model = Some(m);
        history.push(t.len());
    } else if params.epochs == 0 {
        return Err(Error::InvalidInput(
            "a mean or random initial policy needs at least one epoch".into(),
        ));
    } else {
        t = TrainingSet::new();
    }
    for k in 1..=params.epochs {
        let current = policy.take().expect("policy for epoch");
        let mut rag = v.fresh_rag(fm)?;
        t = lash_epoch(&mut rag, &current, &a, fm, k as u32)?;
        let m = train_forest(&t, &params.forest, fm)?;
        policy = Some(Policy::learned(m.clone()));
        model = Some(m);
        history.push(t.len());
    }
    Ok(TrainOutcome {
        model: model.expect("at least one training round"),
        training_set: t,
        history,
    })
}

pub fn train(v: &TrainingVolumes, fm: &FeatureMap, params: &TrainParams) -> Result<TrainOutcome> {
    ensure_same_shape(v.sp.shape(), v.cues.shape())?;
    ensure_same_shape(v.sp.shape(), v.gt.shape())?;
    if fm.channels != v.cues.channels() {
        return Err(Error::FeatureMismatch(format!(
            "feature map expects {} channels, cues have {}",
            fm.channels,
            v.cues.channels()
        )));
    }
    match params.method {
        Method::Flat => gala_train(v, fm, &TrainParams { epochs: 0, initial: InitialPolicy::Flat, ..*params }),
        Method::Gala => gala_train(v, fm, params),
        Method::Lash => lash_train(v, fm, params),
    }
}
