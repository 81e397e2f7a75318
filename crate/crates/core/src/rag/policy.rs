use super::{NodeId, Rag};
use crate::classify::ForestModel;
use crate::error::{Error, Result};
use crate::rng::mix64;
use std::sync::Arc;

/// Merge priority function. Lower scores merge sooner; every score depends
/// only on the two endpoint records and their shared edge.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Mean boundary value of one cue channel.
    MeanBoundary { channel: usize },
    /// Hash of the edge's records; a seeded stand-in for random order.
    Random { seed: u64 },
    /// Forest probability of "don't merge" on the embedded feature map.
    Learned(Arc<ForestModel>),
}

impl Policy {
    pub fn learned(model: ForestModel) -> Self {
        Policy::Learned(Arc::new(model))
    }

    /// Verifies that this policy can score edges of `rag`.
    pub fn check(&self, rag: &Rag) -> Result<()> {
        match self {
            Policy::MeanBoundary { channel } if *channel >= rag.channels() => Err(Error::InvalidInput(format!(
                "boundary channel {channel} out of range ({} channels)",
                rag.channels()
            ))),
            Policy::Learned(m) => m.feature_map().check(rag),
            _ => Ok(()),
        }
    }

    pub fn score(&self, rag: &Rag, u: NodeId, v: NodeId) -> Result<f64> {
        let e = rag.edge(u, v).ok_or(Error::EdgeAbsent(u, v))?;
        match self {
            Policy::MeanBoundary { channel } => e
                .boundary
                .get(*channel)
                .map(|a| a.mean())
                .ok_or_else(|| Error::InvalidInput(format!("no boundary channel {channel}"))),
            Policy::Random { seed } => {
                let (nu, nv) = (rag.node(e.u), rag.node(e.v));
                let mut h = mix64(*seed ^ 0x5EED);
                for x in [
                    e.u,
                    e.v,
                    e.boundary_count,
                    nu.map_or(0, |n| n.size),
                    nv.map_or(0, |n| n.size),
                ] {
                    h = mix64(h ^ x);
                }
                Ok((h >> 11) as f64 / (1u64 << 53) as f64)
            }
            Policy::Learned(m) => {
                let x = m.feature_map().compute(rag, u, v)?;
                m.predict_proba(&x)
            }
        }
    }
}
