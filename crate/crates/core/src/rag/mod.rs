//! Region adjacency graph with mergeable statistics and a lazy priority queue.
//!
//! Each node is a group of superpixels; each edge carries the statistics of
//! the voxel pairs that straddle the boundary between its endpoints. Scores
//! live in a binary heap with version stamps: when an edge changes it gets a
//! new version and a fresh heap entry, and entries whose version no longer
//! matches are skipped when popped.

pub mod accum;
mod dendrogram;
pub mod hull;
mod policy;

pub use accum::{CueAccumulator, SpatialAccumulator};
pub use dendrogram::{apply_threshold, Dendrogram, DisjointSet, MergeEvent};
pub use policy::Policy;

use crate::error::{Error, Result};
use crate::volume::{ensure_same_shape, Connectivity, CueVolume, LabelVolume, Neighborhood};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagConfig {
    pub bins: usize,
    pub spatial: bool,
    pub connectivity: Connectivity,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            bins: 25,
            spatial: false,
            connectivity: Connectivity::Face,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    /// Sorted superpixel ids grouped into this node.
    pub members: Vec<NodeId>,
    pub size: u64,
    pub cues: Vec<CueAccumulator>,
    pub spatial: Option<SpatialAccumulator>,
}

impl NodeRecord {
    fn absorb(&mut self, other: NodeRecord) {
        let mut members = Vec::with_capacity(self.members.len() + other.members.len());
        let (mut a, mut b) = (self.members.iter().peekable(), other.members.iter().peekable());
        while let (Some(&&x), Some(&&y)) = (a.peek(), b.peek()) {
            if x <= y {
                members.push(x);
                a.next();
            } else {
                members.push(y);
                b.next();
            }
        }
        members.extend(a);
        members.extend(b);
        self.members = members;
        self.size += other.size;
        for (x, y) in self.cues.iter_mut().zip(&other.cues) {
            x.merge(y);
        }
        if let (Some(x), Some(y)) = (self.spatial.as_mut(), other.spatial.as_ref()) {
            x.merge(y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub u: NodeId,
    pub v: NodeId,
    pub boundary_count: u64,
    pub boundary: Vec<CueAccumulator>,
    pub version: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct HeapEntry {
    pub score: f64,
    pub u: NodeId,
    pub v: NodeId,
    pub version: u64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.u.cmp(&other.u))
            .then(self.v.cmp(&other.v))
            .then(self.version.cmp(&other.version))
    }
}

#[derive(Debug, Clone)]
pub struct Rag {
    config: RagConfig,
    ndim: usize,
    channels: usize,
    nodes: BTreeMap<NodeId, NodeRecord>,
    edges: BTreeMap<(NodeId, NodeId), EdgeRecord>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    next_version: u64,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Rag {
    /// Builds the graph of nonzero superpixel labels.
    ///
    /// Every adjacent voxel pair with two different nonzero labels adds one
    /// sample, the mean of the pair's cue values, to its edge's boundary
    /// accumulator in each channel.
    pub fn build(sp: &LabelVolume, cues: &CueVolume, config: &RagConfig) -> Result<Self> {
        ensure_same_shape(sp.shape(), cues.shape())?;
        if config.bins == 0 {
            return Err(Error::InvalidInput("histogram bins must be >= 1".into()));
        }
        let shape = sp.shape();
        let ndim = shape.ndim();
        let channels = cues.channels();
        let labels = sp.data();
        let with_hull = config.spatial && ndim == 2;

        let mut nodes: HashMap<NodeId, NodeRecord> = HashMap::new();
        let mut corners: HashMap<NodeId, Vec<hull::Point>> = HashMap::new();
        let mut coords = vec![0usize; ndim];
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let node = nodes.entry(l).or_insert_with(|| NodeRecord {
                id: l,
                members: vec![l],
                size: 0,
                cues: vec![CueAccumulator::new(config.bins); channels],
                spatial: config.spatial.then(|| SpatialAccumulator::new(ndim)),
            });
            node.size += 1;
            for (c, acc) in node.cues.iter_mut().enumerate() {
                acc.push(cues.channel(c)[i]);
            }
            if let Some(sa) = node.spatial.as_mut() {
                shape.coords_into(i, &mut coords);
                sa.push(&coords);
                if with_hull {
                    corners
                        .entry(l)
                        .or_default()
                        .extend(hull::voxel_corners(coords[0] as i64, coords[1] as i64));
                }
            }
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 regions, found {}",
                nodes.len()
            )));
        }
        for (l, pts) in corners {
            if let Some(sa) = nodes.get_mut(&l).and_then(|n| n.spatial.as_mut()) {
                sa.set_hull_points(&pts);
            }
        }

        let mut edges: HashMap<(NodeId, NodeId), EdgeRecord> = HashMap::new();
        let nb = Neighborhood::new(shape, config.connectivity);
        nb.for_each_pair(|a, b| {
            let (la, lb) = (labels[a], labels[b]);
            if la == 0 || lb == 0 || la == lb {
                return;
            }
            let k = key(la, lb);
            let e = edges.entry(k).or_insert_with(|| EdgeRecord {
                u: k.0,
                v: k.1,
                boundary_count: 0,
                boundary: vec![CueAccumulator::new(config.bins); channels],
                version: 0,
            });
            e.boundary_count += 1;
            for (c, acc) in e.boundary.iter_mut().enumerate() {
                let ch = cues.channel(c);
                acc.push((ch[a] + ch[b]) / 2.0);
            }
        });

        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            nodes.keys().map(|&k| (k, BTreeSet::new())).collect();
        for &(u, v) in edges.keys() {
            adjacency.get_mut(&u).unwrap().insert(v);
            adjacency.get_mut(&v).unwrap().insert(u);
        }
        let mut rag = Self {
            config: *config,
            ndim,
            channels,
            nodes: nodes.into_iter().collect(),
            edges: edges.into_iter().collect(),
            adjacency,
            heap: BinaryHeap::new(),
            next_version: 0,
        };
        let keys: Vec<_> = rag.edges.keys().copied().collect();
        for k in keys {
            let ver = rag.bump();
            rag.edges.get_mut(&k).unwrap().version = ver;
        }
        Ok(rag)
    }

    fn bump(&mut self) -> u64 {
        self.next_version += 1;
        self.next_version
    }

    pub fn config(&self) -> &RagConfig {
        &self.config
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn edge(&self, u: NodeId, v: NodeId) -> Option<&EdgeRecord> {
        self.edges.get(&key(u, v))
    }

    /// Edges in ascending `(u, v)` order.
    pub fn edges(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.edges.values()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    /// Node ids keyed by superpixel id.
    pub fn membership(&self) -> BTreeMap<NodeId, NodeId> {
        self.nodes
            .values()
            .flat_map(|n| n.members.iter().map(move |&m| (m, n.id)))
            .collect()
    }

    fn is_live(&self, e: &HeapEntry) -> bool {
        self.edges
            .get(&(e.u, e.v))
            .is_some_and(|r| r.version == e.version)
    }

    /// Drops every heap entry and scores all edges afresh.
    pub fn rescore(&mut self, policy: &Policy) -> Result<()> {
        let mut heap = Vec::with_capacity(self.edges.len());
        for e in self.edges.values() {
            heap.push(Reverse(HeapEntry {
                score: policy.score(self, e.u, e.v)?,
                u: e.u,
                v: e.v,
                version: e.version,
            }));
        }
        self.heap = BinaryHeap::from(heap);
        Ok(())
    }

    /// Removes and returns the lowest-scoring live entry.
    pub fn pop_live(&mut self) -> Option<HeapEntry> {
        while let Some(Reverse(e)) = self.heap.pop() {
            if self.is_live(&e) {
                return Some(e);
            }
        }
        None
    }

    /// Lowest-scoring live entry, discarding stale entries on the way.
    pub fn peek_live(&mut self) -> Option<HeapEntry> {
        while let Some(Reverse(e)) = self.heap.peek().copied() {
            if self.is_live(&e) {
                return Some(e);
            }
            self.heap.pop();
        }
        None
    }

    /// Live heap entries in no particular order.
    pub fn live_entries(&self) -> Vec<HeapEntry> {
        self.heap
            .iter()
            .map(|Reverse(e)| *e)
            .filter(|e| self.is_live(e))
            .collect()
    }

    /// Merges the endpoints of edge `(u, v)` into `min(u, v)` and re-enqueues
    /// every edge incident to the survivor with a fresh score.
    pub fn merge_nodes(&mut self, u: NodeId, v: NodeId, policy: &Policy) -> Result<NodeId> {
        let (survivor, absorbed) = key(u, v);
        if self.edges.remove(&(survivor, absorbed)).is_none() {
            return Err(Error::EdgeAbsent(u, v));
        }
        let gone = self.nodes.remove(&absorbed).expect("edge endpoint without node");
        self.nodes
            .get_mut(&survivor)
            .expect("edge endpoint without node")
            .absorb(gone);

        let absorbed_nbrs = self.adjacency.remove(&absorbed).unwrap_or_default();
        self.adjacency.get_mut(&survivor).unwrap().remove(&absorbed);
        for w in absorbed_nbrs {
            if w == survivor {
                continue;
            }
            let old = self.edges.remove(&key(absorbed, w)).expect("adjacency out of sync");
            let adj_w = self.adjacency.get_mut(&w).unwrap();
            adj_w.remove(&absorbed);
            adj_w.insert(survivor);
            self.adjacency.get_mut(&survivor).unwrap().insert(w);
            let k = key(survivor, w);
            match self.edges.get_mut(&k) {
                Some(e) => {
                    e.boundary_count += old.boundary_count;
                    for (a, b) in e.boundary.iter_mut().zip(&old.boundary) {
                        a.merge(b);
                    }
                }
                None => {
                    self.edges.insert(
                        k,
                        EdgeRecord {
                            u: k.0,
                            v: k.1,
                            ..old
                        },
                    );
                }
            }
        }

        let incident: Vec<NodeId> = self.neighbors(survivor).collect();
        let mut fresh = Vec::with_capacity(incident.len());
        for w in incident {
            let k = key(survivor, w);
            let ver = self.bump();
            self.edges.get_mut(&k).unwrap().version = ver;
            fresh.push((k, ver));
        }
        for ((a, b), version) in fresh {
            let score = policy.score(self, a, b)?;
            self.heap.push(Reverse(HeapEntry { score, u: a, v: b, version }));
        }
        Ok(survivor)
    }

    /// Greedily merges the lowest-scoring edge until the best live score
    /// reaches `threshold` or no edges remain. The graph must already be
    /// scored under `policy` (see [`Rag::rescore`]).
    pub fn agglomerate(&mut self, policy: &Policy, threshold: f64) -> Result<Dendrogram> {
        let mut dendrogram = Dendrogram::identity(self.membership());
        while let Some(top) = self.peek_live() {
            if top.score >= threshold {
                break;
            }
            self.heap.pop();
            let survivor = self.merge_nodes(top.u, top.v, policy)?;
            dendrogram.push(MergeEvent {
                survivor,
                absorbed: top.v.max(top.u),
                score: top.score,
            });
        }
        Ok(dendrogram)
    }
}

/// Convenience: build, score and fully agglomerate.
pub fn full_dendrogram(
    sp: &LabelVolume,
    cues: &CueVolume,
    config: &RagConfig,
    policy: &Policy,
) -> Result<Dendrogram> {
    let mut rag = Rag::build(sp, cues, config)?;
    rag.rescore(policy)?;
    rag.agglomerate(policy, f64::INFINITY)
}
