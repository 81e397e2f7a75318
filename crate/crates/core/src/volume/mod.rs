//! Dense n-dimensional volumes, neighborhoods, file I/O and watershed.

mod io;
mod watershed;

pub use io::{load_volume, save_volume, write_volume, read_volume};
pub use watershed::{regional_minima, watershed};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: Vec<usize>) -> Result<Self> {
        if extents.is_empty() || extents.len() > MAX_DIMS {
            return Err(Error::Shape(format!(
                "dimension count {} outside [1, {MAX_DIMS}]",
                extents.len()
            )));
        }
        if extents.contains(&0) {
            return Err(Error::Shape(format!("zero extent in {extents:?}")));
        }
        extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Shape(format!("voxel count overflows for {extents:?}")))?;
        Ok(Self(extents))
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for ax in (0..self.0.len().saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * self.0[ax + 1];
        }
        strides
    }

    pub fn coords_into(&self, mut index: usize, out: &mut [usize]) {
        for ax in (0..self.0.len()).rev() {
            out[ax] = index % self.0[ax];
            index /= self.0[ax];
        }
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut c = vec![0; self.ndim()];
        self.coords_into(index, &mut c);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// 2·ndim neighbors sharing a face.
    #[default]
    Face,
    /// 3^ndim − 1 neighbors sharing at least a corner.
    Full,
}

/// Precomputed neighbor offsets for one shape and connectivity.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    shape: Shape,
    strides: Vec<usize>,
    offsets: Vec<Vec<isize>>,
}

impl Neighborhood {
    pub fn new(shape: &Shape, conn: Connectivity) -> Self {
        let ndim = shape.ndim();
        let mut offsets = Vec::new();
        match conn {
            Connectivity::Face => {
                for ax in 0..ndim {
                    for d in [-1isize, 1] {
                        let mut o = vec![0; ndim];
                        o[ax] = d;
                        offsets.push(o);
                    }
                }
            }
            Connectivity::Full => {
                let total = 3usize.pow(ndim as u32);
                for code in 0..total {
                    let mut c = code;
                    let mut o = vec![0isize; ndim];
                    for slot in o.iter_mut().rev() {
                        *slot = (c % 3) as isize - 1;
                        c /= 3;
                    }
                    if o.iter().any(|&x| x != 0) {
                        offsets.push(o);
                    }
                }
            }
        }
        Self {
            shape: shape.clone(),
            strides: shape.strides(),
            offsets,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Calls `f` with the flat index of every in-bounds neighbor of `index`.
    pub fn for_each(&self, index: usize, coords: &mut [usize], mut f: impl FnMut(usize)) {
        self.shape.coords_into(index, coords);
        let ext = self.shape.extents();
        'offsets: for off in &self.offsets {
            let mut flat = index as isize;
            for ax in 0..ext.len() {
                let c = coords[ax] as isize + off[ax];
                if c < 0 || c >= ext[ax] as isize {
                    continue 'offsets;
                }
                flat += off[ax] * self.strides[ax] as isize;
            }
            f(flat as usize);
        }
    }

    /// Calls `f(a, b)` once per unordered adjacent voxel pair, with `a < b`.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        let mut coords = vec![0; self.shape.ndim()];
        for i in 0..self.shape.len() {
            self.for_each(i, &mut coords, |j| {
                if j > i {
                    f(i, j)
                }
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    shape: Shape,
    data: Vec<u64>,
}

impl LabelVolume {
    pub fn new(shape: Shape, data: Vec<u64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "label data has {} voxels, shape {:?} needs {}",
                data.len(),
                shape.extents(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    /// Sorted distinct nonzero labels.
    pub fn labels(&self) -> Vec<u64> {
        let mut l: Vec<u64> = self.data.iter().copied().filter(|&x| x != 0).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueVolume {
    shape: Shape,
    channels: usize,
    data: Vec<f64>,
}

impl CueVolume {
    pub fn new(shape: Shape, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("cue volume needs at least one channel".into()));
        }
        if data.len() != shape.len() * channels {
            return Err(Error::Shape(format!(
                "cue data has {} values, expected {} channels x {} voxels",
                data.len(),
                channels,
                shape.len()
            )));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(Self {
            shape,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabelVolume),
    Cues(CueVolume),
}

impl Volume {
    pub fn shape(&self) -> &Shape {
        match self {
            Volume::Labels(v) => v.shape(),
            Volume::Cues(v) => v.shape(),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            Volume::Labels(v) => Ok(v),
            Volume::Cues(_) => Err(Error::Format("expected a label volume, found cues".into())),
        }
    }

    pub fn into_cues(self) -> Result<CueVolume> {
        match self {
            Volume::Cues(v) => Ok(v),
            Volume::Labels(_) => Err(Error::Format("expected a cue volume, found labels".into())),
        }
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Labels(v)
    }
}

impl From<CueVolume> for Volume {
    fn from(v: CueVolume) -> Self {
        Volume::Cues(v)
    }
}

pub(crate) fn ensure_same_shape(a: &Shape, b: &Shape) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            a.extents(),
            b.extents()
        )));
    }
    Ok(())
}
