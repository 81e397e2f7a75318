//! NDV array files.
//!
//! Layout: `"NDVOL1\n"` magic (7 bytes), dtype code (1 = u64, 2 = f64),
//! ndim (u8), channel count (u8), `ndim` little-endian u64 extents, then the
//! little-endian payload, channel-major then row-major.

use super::{CueVolume, LabelVolume, Shape, Volume, MAX_DIMS};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 7] = b"NDVOL1\n";
const DTYPE_U64: u8 = 1;
const DTYPE_F64: u8 = 2;

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let f = File::open(path.as_ref())?;
    read_volume(BufReader::new(f))
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    let mut w = BufWriter::new(f);
    write_volume(v, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_volume(v: &Volume, mut w: impl Write) -> Result<()> {
    let (dtype, channels) = match v {
        Volume::Labels(_) => (DTYPE_U64, 1usize),
        Volume::Cues(c) => (DTYPE_F64, c.channels()),
    };
    if channels > u8::MAX as usize {
        return Err(Error::Format(format!("{channels} channels exceed the format limit")));
    }
    let shape = v.shape();
    w.write_all(MAGIC)?;
    w.write_all(&[dtype, shape.ndim() as u8, channels as u8])?;
    for &e in shape.extents() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    match v {
        Volume::Labels(l) => {
            for &x in l.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Volume::Cues(c) => {
            for &x in c.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_volume(mut r: impl Read) -> Result<Volume> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &head[..7] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = head[7];
    let ndim = head[8] as usize;
    let channels = head[9] as usize;
    if ndim == 0 || ndim > MAX_DIMS {
        return Err(Error::Format(format!("ndim {ndim} outside [1, {MAX_DIMS}]")));
    }
    let mut extents = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated extents".into()))?;
        let e = u64::from_le_bytes(b);
        extents.push(usize::try_from(e).map_err(|_| Error::Format(format!("extent {e} too large")))?);
    }
    let shape = Shape::new(extents).map_err(|e| Error::Format(e.to_string()))?;
    let count = match dtype {
        DTYPE_U64 if channels != 1 => {
            return Err(Error::Format(format!("label volume with {channels} channels")))
        }
        DTYPE_U64 => shape.len(),
        DTYPE_F64 if channels == 0 => return Err(Error::Format("zero channels".into())),
        DTYPE_F64 => shape.len() * channels,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload length {} does not match header ({} bytes expected)",
            payload.len(),
            count * 8
        )));
    }
    let words = payload.chunks_exact(8).map(|c| {
        let mut b = [0u8; 8];
        b.copy_from_slice(c);
        b
    });
    Ok(match dtype {
        DTYPE_U64 => Volume::Labels(LabelVolume::new(shape, words.map(u64::from_le_bytes).collect())?),
        _ => Volume::Cues(CueVolume::new(shape, channels, words.map(f64::from_le_bytes).collect())?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn bytes(v: &Volume) -> Vec<u8> {
        let mut out = Vec::new();
        write_volume(v, &mut out).unwrap();
        out
    }

    #[test]
    fn smallest_label_map() {
        let v: Volume = LabelVolume::new(Shape::new(vec![2, 2]).unwrap(), vec![1, 1, 2, 2])
            .unwrap()
            .into();
        let b = bytes(&v);
        let back = read_volume(&b[..]).unwrap().into_labels().unwrap();
        assert_eq!(back.shape().extents(), &[2, 2]);
        assert_eq!(back.labels(), vec![1, 2]);
        assert_eq!(bytes(&back.into()), b);
    }

    #[test]
    fn random_round_trip_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ndv");
        let mut rng = SplitMix64::new(3);
        let data = (0..120).map(|_| rng.below(7) as u64).collect();
        let v: Volume = LabelVolume::new(Shape::new(vec![4, 5, 6]).unwrap(), data)
            .unwrap()
            .into();
        save_volume(&v, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap(), v);
        let first = std::fs::read(&path).unwrap();
        save_volume(&load_volume(&path).unwrap(), &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn cue_file_size() {
        let v: Volume = CueVolume::new(Shape::new(vec![8, 8]).unwrap(), 3, vec![0.25; 192])
            .unwrap()
            .into();
        // header: 7 magic + 3 code bytes + 2 extents * 8
        assert_eq!(bytes(&v).len(), 26 + 3 * 64 * 8);
    }

    #[test]
    fn out_of_range_cue_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&[DTYPE_F64, 1, 1]);
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&0.5f64.to_le_bytes());
        b.extend_from_slice(&1.5f64.to_le_bytes());
        let err = read_volume(&b[..]).unwrap_err();
        assert!(err.to_string().contains("value out of range"), "{err}");
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_volume(&b"NDVOL2\n\x01\x01\x01"[..]).is_err());
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&[9, 1, 1]);
        b.extend_from_slice(&1u64.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        assert!(read_volume(&b[..]).unwrap_err().to_string().contains("dtype"));
        b[7] = DTYPE_U64;
        b.push(0);
        assert!(read_volume(&b[..]).unwrap_err().to_string().contains("payload"));
    }

    #[test]
    fn unwritable_path() {
        let v: Volume = LabelVolume::new(Shape::new(vec![1]).unwrap(), vec![1]).unwrap().into();
        let err = save_volume(&v, "/nonexistent-dir/x.ndv").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
