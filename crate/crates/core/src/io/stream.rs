//! Seekable binary playback stream.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header   magic "STGTRKS\0" | u32 version | u32 frame_count | u32 max_persons
//!          | u32 joint_count | u32 vertex_count | f32 fps                 (32 bytes)
//! index    u64 absolute byte offset of every frame                      (8 × frame_count)
//! frame    u32 person_count, then per person:
//!          i32 id | joint_count × 3 f32 | [vertex_count × 3 f32 vertices
//!                                         | vertex_count × 3 f32 normals]
//! ```
//!
//! Stream frame `k` holds video frame `k`; persons absent from a frame are
//! not written, and persons are ordered by track id.

use std::collections::BTreeMap;
use std::io::{Read, Seek, SeekFrom, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::TrackSet;

pub const STREAM_MAGIC: [u8; 8] = *b"STGTRKS\0";
pub const STREAM_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamHeader {
    pub version: u32,
    pub frame_count: u32,
    pub max_persons: u32,
    pub joint_count: u32,
    pub vertex_count: u32,
    pub fps: f32,
}

impl StreamHeader {
    pub fn person_len(&self) -> u64 {
        4 + 12 * u64::from(self.joint_count) + 24 * u64::from(self.vertex_count)
    }

    pub fn index_len(&self) -> u64 {
        8 * u64::from(self.frame_count)
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[..8].copy_from_slice(&STREAM_MAGIC);
        for (i, v) in [self.version, self.frame_count, self.max_persons, self.joint_count, self.vertex_count]
            .into_iter()
            .enumerate()
        {
            out[8 + 4 * i..12 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out[28..32].copy_from_slice(&self.fps.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if bytes[..8] != STREAM_MAGIC {
            return Err(Error::Format("not a stage-tracks stream (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let header = StreamHeader {
            version: word(0),
            frame_count: word(1),
            max_persons: word(2),
            joint_count: word(3),
            vertex_count: word(4),
            fps: f32::from_le_bytes(bytes[28..32].try_into().unwrap()),
        };
        if header.version != STREAM_VERSION {
            return Err(Error::Format(format!("unsupported stream version {}", header.version)));
        }
        Ok(header)
    }
}

/// Body surface for one person in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
}

/// Meshes keyed by `(frame, track id)`.
pub type MeshFrames = BTreeMap<(u32, i32), Mesh>;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamPerson {
    pub id: i32,
    pub joints: Vec<[f32; 3]>,
    pub mesh: Option<Mesh>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamFrame {
    pub persons: Vec<StreamPerson>,
}

/// Exact byte size of a stream in which every frame holds `persons` people.
pub fn estimate_stream_size(frame_count: u64, persons: u64, joint_count: u64, vertex_count: u64) -> u64 {
    let person = 4 + 12 * joint_count + 24 * vertex_count;
    HEADER_LEN + 8 * frame_count + frame_count * (4 + persons * person)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} {v} exceeds u32")))
}

/// Per-frame person lists of the active tracks, ordered by id.
fn frame_people(ts: &TrackSet) -> Vec<Vec<(i32, &crate::Sample)>> {
    let frame_count = ts.last_frame().map_or(0, |f| f as usize + 1);
    let mut frames: Vec<Vec<(i32, &crate::Sample)>> = vec![Vec::new(); frame_count];
    let mut active: Vec<&crate::Track> = ts.active().collect();
    active.sort_by_key(|t| t.id);
    for track in active {
        for s in &track.samples {
            frames[s.frame as usize].push((track.id, s));
        }
    }
    frames
}

/// Writes the stream for the active tracks of `ts` into `out`.
pub fn write_stream_to<W: Write>(ts: &TrackSet, meshes: Option<&MeshFrames>, out: &mut W) -> Result<StreamHeader> {
    let vertex_count = match meshes {
        Some(m) => {
            let count = m.values().next().map_or(0, |mesh| mesh.vertices.len());
            for ((frame, id), mesh) in m {
                if mesh.vertices.len() != count || mesh.normals.len() != count {
                    return Err(Error::Dimension(format!(
                        "mesh for track {id} at frame {frame} has {} vertices / {} normals, expected {count}",
                        mesh.vertices.len(),
                        mesh.normals.len()
                    )));
                }
            }
            count
        }
        None => 0,
    };
    let people = frame_people(ts);
    let joint_count = ts.layout.joint_count;
    for frame in &people {
        for (id, s) in frame {
            if s.skeleton.joints3d.len() != joint_count {
                return Err(Error::Dimension(format!("track {id} frame {}: joint count mismatch", s.frame)));
            }
        }
    }
    let header = StreamHeader {
        version: STREAM_VERSION,
        frame_count: to_u32(people.len(), "frame count")?,
        max_persons: to_u32(people.iter().map(Vec::len).max().unwrap_or(0), "person count")?,
        joint_count: to_u32(joint_count, "joint count")?,
        vertex_count: to_u32(vertex_count, "vertex count")?,
        fps: ts.fps as f32,
    };
    out.write_all(&header.encode())?;
    let mut offset = HEADER_LEN + header.index_len();
    for frame in &people {
        out.write_all(&offset.to_le_bytes())?;
        offset += 4 + frame.len() as u64 * header.person_len();
    }
    let mut buf = Vec::new();
    for (k, frame) in people.iter().enumerate() {
        buf.clear();
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        for (id, s) in frame {
            buf.extend_from_slice(&id.to_le_bytes());
            for p in &s.skeleton.joints3d {
                for v in p {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            if vertex_count > 0 {
                let mesh = meshes.and_then(|m| m.get(&(k as u32, *id))).ok_or_else(|| {
                    Error::Dimension(format!("missing mesh for track {id} at frame {k}"))
                })?;
                for p in mesh.vertices.iter().chain(&mesh.normals) {
                    for v in p {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out.write_all(&buf)?;
    }
    Ok(header)
}

pub fn write_stream(ts: &TrackSet, meshes: Option<&MeshFrames>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_stream_to(ts, meshes, &mut out)?;
    Ok(out)
}

fn read_f32s(bytes: &[u8], count: usize) -> Vec<[f32; 3]> {
    bytes
        .chunks_exact(12)
        .take(count)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect()
}

/// Decodes one frame payload as returned by [`StreamReader::frame_bytes`].
pub fn decode_frame(header: &StreamHeader, bytes: &[u8]) -> Result<StreamFrame> {
    if bytes.len() < 4 {
        return Err(Error::Format("frame payload shorter than its person count".into()));
    }
    let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let person_len = header.person_len() as usize;
    if bytes.len() != 4 + count * person_len {
        return Err(Error::Format(format!(
            "frame payload is {} bytes, expected {}",
            bytes.len(),
            4 + count * person_len
        )));
    }
    let (j, v) = (header.joint_count as usize, header.vertex_count as usize);
    let persons = bytes[4..]
        .chunks_exact(person_len)
        .map(|p| {
            let id = i32::from_le_bytes(p[..4].try_into().unwrap());
            let joints = read_f32s(&p[4..], j);
            let mesh = (v > 0).then(|| Mesh {
                vertices: read_f32s(&p[4 + 12 * j..], v),
                normals: read_f32s(&p[4 + 12 * j + 12 * v..], v),
            });
            StreamPerson { id, joints, mesh }
        })
        .collect();
    Ok(StreamFrame { persons })
}

/// Random access over a stream through its seek index.
#[derive(Debug)]
pub struct StreamReader<R> {
    inner: R,
    header: StreamHeader,
    index: Vec<u64>,
    len: u64,
}

impl<R: Read + Seek> StreamReader<R> {
    pub fn open(mut inner: R) -> Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        if len < HEADER_LEN {
            return Err(Error::Format("stream shorter than its header".into()));
        }
        let mut hbuf = [0u8; HEADER_LEN as usize];
        inner.read_exact(&mut hbuf)?;
        let header = StreamHeader::decode(&hbuf)?;
        if HEADER_LEN + header.index_len() > len {
            return Err(Error::Format("stream truncated inside the seek index".into()));
        }
        let mut ibuf = vec![0u8; header.index_len() as usize];
        inner.read_exact(&mut ibuf)?;
        let index: Vec<u64> = ibuf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        let data_start = HEADER_LEN + header.index_len();
        let mut previous = data_start;
        for (k, &off) in index.iter().enumerate() {
            if off < previous || off > len {
                return Err(Error::Format(format!("seek index entry {k} out of order or past the end")));
            }
            previous = off;
        }
        let max_frame = 4 + u64::from(header.max_persons) * header.person_len();
        let expected_max = data_start + u64::from(header.frame_count) * max_frame;
        if len > expected_max {
            return Err(Error::Format("stream longer than its header allows".into()));
        }
        Ok(StreamReader { inner, header, index, len })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn byte_len(&self) -> u64 {
        self.len
    }

    /// `(offset, length)` of frame `k`, or `None` past the end.
    pub fn frame_range(&self, k: usize) -> Option<(u64, u64)> {
        let start = *self.index.get(k)?;
        let end = self.index.get(k + 1).copied().unwrap_or(self.len);
        Some((start, end - start))
    }

    /// Raw payload of frame `k`: one seek and one contiguous read.
    pub fn frame_bytes(&mut self, k: usize) -> Result<Vec<u8>> {
        let (start, len) = self
            .frame_range(k)
            .ok_or_else(|| Error::Input(format!("frame {k} out of range (stream has {})", self.index.len())))?;
        self.inner.seek(SeekFrom::Start(start))?;
        let mut buf = vec![0u8; len as usize];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn frame(&mut self, k: usize) -> Result<StreamFrame> {
        let bytes = self.frame_bytes(k)?;
        decode_frame(&self.header, &bytes)
    }
}
