//! Little-endian dataset file.
//!
//! Header: magic `DDTS`, version, sequence count, T, K, V, d_feat (all u32),
//! fps (f32). Each record: bone lengths (K-1 f32), then per frame the pose
//! (K·6), joints (K·3), vertices (V·3) and features (d_feat), all f32.

use std::io::{Read, Write};
use std::path::Path;

use ddt_tensor::Tensor;

use super::MotionSequence;
use crate::error::CoreError;
use crate::Result;

pub const DATASET_MAGIC: [u8; 4] = *b"DDTS";
const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetHeader {
    pub sequences: usize,
    pub frames: usize,
    pub joints: usize,
    pub vertices: usize,
    pub d_feat: usize,
    pub fps: f32,
}

impl DatasetHeader {
    pub fn record_bytes(&self) -> usize {
        let per_frame = self.joints * 9 + self.vertices * 3 + self.d_feat;
        4 * (self.joints - 1 + self.frames * per_frame)
    }

    pub fn file_bytes(&self) -> usize {
        HEADER_BYTES + self.sequences * self.record_bytes()
    }
}

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| CoreError::Contract(format!("{what} {v} does not fit the file format")))
}

pub fn write_dataset<W: Write>(out: &mut W, sequences: &[MotionSequence], fps: f64) -> Result<DatasetHeader> {
    let first = sequences
        .first()
        .ok_or_else(|| CoreError::Contract("cannot write an empty dataset".into()))?;
    let header = DatasetHeader {
        sequences: sequences.len(),
        frames: first.theta.shape()[0],
        joints: first.theta.shape()[1],
        vertices: first.vertices.shape()[1],
        d_feat: first.features.shape()[1],
        fps: fps as f32,
    };
    let mut buf = Vec::with_capacity(header.file_bytes());
    buf.extend_from_slice(&DATASET_MAGIC);
    for v in [VERSION as usize, header.sequences, header.frames, header.joints, header.vertices, header.d_feat] {
        buf.extend_from_slice(&as_u32(v, "header field")?.to_le_bytes());
    }
    buf.extend_from_slice(&header.fps.to_le_bytes());
    let push = |buf: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    };
    for (i, s) in sequences.iter().enumerate() {
        let (t, k, v, d) = (header.frames, header.joints, header.vertices, header.d_feat);
        if s.theta.shape() != [t, k, 6]
            || s.joints.shape() != [t, k, 3]
            || s.vertices.shape() != [t, v, 3]
            || s.features.shape() != [t, d]
            || s.beta.len() != k - 1
        {
            return Err(CoreError::Contract(format!("sequence {i} does not match the first sequence's shape")));
        }
        push(&mut buf, &s.beta);
        for f in 0..t {
            push(&mut buf, &s.theta.data()[f * k * 6..(f + 1) * k * 6]);
            push(&mut buf, &s.joints.data()[f * k * 3..(f + 1) * k * 3]);
            push(&mut buf, &s.vertices.data()[f * v * 3..(f + 1) * v * 3]);
            push(&mut buf, &s.features.data()[f * d..(f + 1) * d]);
        }
    }
    out.write_all(&buf)?;
    Ok(header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CoreError::Corrupt {
                offset: self.bytes.len() as u64,
                detail: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize, out: &mut Vec<f64>) -> Result<()> {
        let raw = self.take(4 * n)?;
        out.extend(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
        );
        Ok(())
    }
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<(DatasetHeader, Vec<MotionSequence>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| CoreError::Format("file shorter than the magic".into()))?;
    if magic != DATASET_MAGIC {
        return Err(CoreError::Format(format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}")));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(CoreError::Format(format!("dataset version {version}, expected {VERSION}")));
    }
    let (sequences, frames, joints, vertices, d_feat) = (cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?);
    let fps = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if joints < 2 || frames == 0 || vertices == 0 || d_feat == 0 {
        return Err(CoreError::Format(format!(
            "degenerate header: T={frames} K={joints} V={vertices} d_feat={d_feat}"
        )));
    }
    let header = DatasetHeader { sequences, frames, joints, vertices, d_feat, fps };
    let per_frame = (joints * 9 + vertices * 3 + d_feat) as u128;
    let expected = HEADER_BYTES as u128 + sequences as u128 * 4 * ((joints - 1) as u128 + frames as u128 * per_frame);
    let actual = bytes.len() as u128;
    if actual > expected {
        return Err(CoreError::Corrupt {
            offset: expected as u64,
            detail: format!("{} trailing bytes", actual - expected),
        });
    }
    if actual < expected {
        return Err(CoreError::Corrupt {
            offset: actual as u64,
            detail: format!("truncated: header promises {expected} bytes"),
        });
    }
    let (t, k, v, d) = (frames, joints, vertices, d_feat);
    let mut out = Vec::with_capacity(sequences);
    for _ in 0..sequences {
        let mut beta = Vec::with_capacity(k - 1);
        cur.f32s(k - 1, &mut beta)?;
        let (mut theta, mut jts, mut verts, mut feats) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..t {
            cur.f32s(k * 6, &mut theta)?;
            cur.f32s(k * 3, &mut jts)?;
            cur.f32s(v * 3, &mut verts)?;
            cur.f32s(d, &mut feats)?;
        }
        out.push(MotionSequence {
            beta,
            theta: Tensor::new(&[t, k, 6], theta)?,
            joints: Tensor::new(&[t, k, 3], jts)?,
            vertices: Tensor::new(&[t, v, 3], verts)?,
            features: Tensor::new(&[t, d], feats)?,
        });
    }
    Ok((header, out))
}

pub fn dataset_save(path: impl AsRef<Path>, sequences: &[MotionSequence], fps: f64) -> Result<DatasetHeader> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = write_dataset(&mut file, sequences, fps)?;
    file.flush()?;
    Ok(header)
}

pub fn dataset_load(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<MotionSequence>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_dataset(&mut file)
}
