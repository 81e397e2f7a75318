use super::NodeId;
use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::volume::LabelVolume;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub survivor: NodeId,
    pub absorbed: NodeId,
    pub score: f64,
}

/// Ordered merge log of one agglomeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    /// Superpixel id -> node id at the start of the log.
    leaves: BTreeMap<NodeId, NodeId>,
    events: Vec<MergeEvent>,
}

impl Dendrogram {
    pub fn identity(leaves: BTreeMap<NodeId, NodeId>) -> Self {
        Self {
            leaves,
            events: Vec::new(),
        }
    }

    /// Log whose leaves are the nonzero labels of `sp`, unchanged.
    pub fn over_labels(sp: &LabelVolume, events: Vec<MergeEvent>) -> Self {
        Self {
            leaves: sp.labels().into_iter().map(|l| (l, l)).collect(),
            events,
        }
    }

    pub fn push(&mut self, e: MergeEvent) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[MergeEvent] {
        &self.events
    }

    pub fn leaves(&self) -> &BTreeMap<NodeId, NodeId> {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn max_score(&self) -> Option<f64> {
        self.events.iter().map(|e| e.score).reduce(f64::max)
    }

    /// Number of leading events applied at threshold `t`: the prefix ends at
    /// the first event scoring `>= t`.
    pub fn cut_len(&self, t: f64) -> usize {
        self.events
            .iter()
            .position(|e| e.score >= t)
            .unwrap_or(self.events.len())
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "order,survivor,absorbed,score")?;
        for (i, e) in self.events.iter().enumerate() {
            writeln!(w, "{},{},{},{}", i, e.survivor, e.absorbed, g17(e.score))?;
        }
        Ok(())
    }

    /// Reads a merge log written by [`Dendrogram::write_csv`]; leaves are the
    /// labels of `sp`.
    pub fn read_csv(r: impl BufRead, sp: &LabelVolume) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty dendrogram file".into()))?;
        if header.trim() != "order,survivor,absorbed,score" {
            return Err(Error::Format(format!("unexpected dendrogram header {header:?}")));
        }
        let mut events = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("dendrogram line {}: {line:?}", lineno + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            events.push(MergeEvent {
                survivor: f[1].parse().map_err(|_| bad())?,
                absorbed: f[2].parse().map_err(|_| bad())?,
                score: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self::over_labels(sp, events))
    }
}

/// Union-find with path halving. The root of a set is whichever element
/// `union` names as the parent.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Attaches the set of `child` under the set of `parent`.
    pub fn union_into(&mut self, parent: usize, child: usize) {
        let (p, c) = (self.find(parent), self.find(child));
        if p != c {
            self.parent[c] = p;
        }
    }
}

/// Segmentation obtained by replaying the prefix of `d` whose scores are all
/// below `t`. Voxels are relabeled to survivor ids; label 0 stays 0.
pub fn apply_threshold(sp: &LabelVolume, d: &Dendrogram, t: f64) -> Result<LabelVolume> {
    let mut index: HashMap<NodeId, usize> = HashMap::new();
    let mut ids: Vec<NodeId> = Vec::new();
    for &node in d.leaves.values() {
        index.entry(node).or_insert_with(|| {
            ids.push(node);
            ids.len() - 1
        });
    }
    let mut sets = DisjointSet::new(ids.len());
    for e in &d.events[..d.cut_len(t)] {
        let (Some(&s), Some(&a)) = (index.get(&e.survivor), index.get(&e.absorbed)) else {
            return Err(Error::InvalidInput(format!(
                "merge {} <- {} names a node unknown to the superpixel map",
                e.survivor, e.absorbed
            )));
        };
        sets.union_into(s, a);
    }
    let mut lut: HashMap<NodeId, NodeId> = HashMap::with_capacity(d.leaves.len());
    for (&sp_id, node) in &d.leaves {
        lut.insert(sp_id, ids[sets.find(index[node])]);
    }
    let mut out = Vec::with_capacity(sp.data().len());
    for &l in sp.data() {
        if l == 0 {
            out.push(0);
        } else {
            match lut.get(&l) {
                Some(&x) => out.push(x),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "superpixel {l} does not appear in the dendrogram"
                    )))
                }
            }
        }
    }
    LabelVolume::new(sp.shape().clone(), out)
}
