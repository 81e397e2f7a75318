use super::{ensure_same_shape, Connectivity, CueVolume, LabelVolume, Neighborhood};
use crate::error::{Error, Result};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

/// Labels every connected plateau that is strictly lower than all of its
/// neighbors. Ids start at 1 and follow the plateau's lowest flat index.
pub fn regional_minima(cue: &CueVolume, channel: usize, conn: Connectivity) -> Result<LabelVolume> {
    if channel >= cue.channels() {
        return Err(Error::InvalidInput(format!(
            "channel {channel} out of range ({} channels)",
            cue.channels()
        )));
    }
    let shape = cue.shape();
    let values = cue.channel(channel);
    let n = shape.len();
    let nb = Neighborhood::new(shape, conn);
    let mut coords = vec![0; shape.ndim()];
    let mut visited = vec![false; n];
    let mut out = vec![0u64; n];
    let mut next_id = 1u64;
    let mut plateau = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..n {
        if visited[start] {
            continue;
        }
        let level = values[start];
        let mut is_min = true;
        plateau.clear();
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            plateau.push(i);
            nb.for_each(i, &mut coords, |j| {
                let vj = values[j];
                if vj == level {
                    if !visited[j] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                } else if vj < level {
                    is_min = false;
                }
            });
        }
        if is_min {
            for &i in &plateau {
                out[i] = next_id;
            }
            next_id += 1;
        }
    }
    LabelVolume::new(shape.clone(), out)
}

#[derive(Debug, Clone, Copy)]
struct FloodKey {
    value: f64,
    index: usize,
}

impl PartialEq for FloodKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FloodKey {}
impl PartialOrd for FloodKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FloodKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.index.cmp(&other.index))
    }
}

/// Seeded priority-flood watershed.
///
/// Voxels leave the queue in ascending `(cue, flat index)` order; each
/// unlabeled neighbor of a popped voxel takes the popped voxel's label at
/// that moment. Every voxel ends up labeled.
pub fn watershed(
    cue: &CueVolume,
    channel: usize,
    seeds: &LabelVolume,
    conn: Connectivity,
) -> Result<LabelVolume> {
    ensure_same_shape(cue.shape(), seeds.shape())?;
    if channel >= cue.channels() {
        return Err(Error::InvalidInput(format!(
            "channel {channel} out of range ({} channels)",
            cue.channels()
        )));
    }
    let shape = cue.shape();
    let values = cue.channel(channel);
    let mut labels = seeds.data().to_vec();
    let mut heap = BinaryHeap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            heap.push(Reverse(FloodKey { value: values[i], index: i }));
        }
    }
    if heap.is_empty() {
        return Err(Error::InvalidInput("watershed needs at least one seed".into()));
    }
    let nb = Neighborhood::new(shape, conn);
    let mut coords = vec![0; shape.ndim()];
    while let Some(Reverse(FloodKey { index, .. })) = heap.pop() {
        let label = labels[index];
        nb.for_each(index, &mut coords, |j| {
            if labels[j] == 0 {
                labels[j] = label;
                heap.push(Reverse(FloodKey { value: values[j], index: j }));
            }
        });
    }
    // Voxels unreachable from any seed cannot exist on a connected grid, so
    // `labels` is fully assigned here.
    LabelVolume::new(shape.clone(), labels)
}
