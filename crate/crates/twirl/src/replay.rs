//! Transition storage and the fixed-ratio mixed sampler, plus the buffer
//! file format so source experience is a portable artifact.
//!
//! Buffer file layout (little-endian):
//!   magic "TWRB" | version u16 | metadata length u32 | metadata (UTF-8 JSON)
//!   | count u64 | packed f64 records (obs || act || r || next_obs || flags
//!   byte) | CRC32 of everything preceding.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One environment step record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    /// Failure-condition episode end; the Bellman target does not bootstrap.
    pub terminal: bool,
    /// Time-limit episode end; the Bellman target still bootstraps.
    pub truncated: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.terminal && self.truncated {
            return Err(Error::config("transition cannot be both terminal and truncated"));
        }
        if self.observation.len() != self.next_observation.len() {
            return Err(Error::config("observation/next_observation dim mismatch"));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct OnlineBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl OnlineBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0);
        OnlineBuffer {
            obs_dim,
            act_dim,
            capacity,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if t.observation.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::config(format!(
                "transition dims ({}, {}) do not match buffer schema ({}, {})",
                t.observation.len(),
                t.action.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }
}

/// Provenance carried alongside serialized source experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferMetadata {
    pub policy_id: String,
    pub mdp_id: String,
    pub seed: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
}

/// Immutable source-experience store.
#[derive(Debug, Clone)]
pub struct SourceBuffer {
    metadata: BufferMetadata,
    data: Vec<Transition>,
}

impl SourceBuffer {
    pub fn new(metadata: BufferMetadata, data: Vec<Transition>) -> Result<Self> {
        for t in &data {
            t.validate()?;
            if t.observation.len() != metadata.obs_dim || t.action.len() != metadata.act_dim {
                return Err(Error::config("source transition dims do not match metadata"));
            }
        }
        Ok(SourceBuffer { metadata, data })
    }

    pub fn metadata(&self) -> &BufferMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }
}

/// Number of source draws per batch: round(phi * batch), ties half-up.
pub fn source_count(phi: f64, batch_size: usize) -> usize {
    (phi * batch_size as f64 + 0.5).floor() as usize
}

/// Draws batches at a constant source/online ratio, uniformly with
/// replacement from each buffer, concatenated in randomized order.
#[derive(Debug)]
pub struct MixedSampler {
    pub phi: f64,
    /// Online transitions required before gradient updates may begin.
    pub min_online_size: usize,
}

impl MixedSampler {
    pub fn new(phi: f64, min_online_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::config(format!("phi must be in [0,1], got {phi}")));
        }
        Ok(MixedSampler { phi, min_online_size })
    }

    pub fn sample<R: Rng>(
        &self,
        source: Option<&SourceBuffer>,
        online: &OnlineBuffer,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        let n_src = source_count(self.phi, batch_size);
        let n_online = batch_size - n_src;
        if n_src > 0 {
            let src = source.ok_or_else(|| Error::config("phi > 0 but no source buffer configured"))?;
            if src.is_empty() {
                return Err(Error::config("source buffer is empty"));
            }
        }
        if n_online > 0 && online.len() < self.min_online_size {
            return Err(Error::NeedMoreData {
                have: online.len(),
                need: self.min_online_size,
            });
        }
        let mut batch = Vec::with_capacity(batch_size);
        if let Some(src) = source {
            for _ in 0..n_src {
                batch.push(src.get(rng.gen_range(0..src.len())).clone());
            }
        }
        for _ in 0..n_online {
            batch.push(online.get(rng.gen_range(0..online.len())).clone());
        }
        // Fisher-Yates shuffle so source/online draws are interleaved.
        for i in (1..batch.len()).rev() {
            let j = rng.gen_range(0..=i);
            batch.swap(i, j);
        }
        Ok(batch)
    }
}

const MAGIC: &[u8; 4] = b"TWRB";
const VERSION: u16 = 1;

fn record_len(obs_dim: usize, act_dim: usize) -> usize {
    8 * (obs_dim * 2 + act_dim + 1) + 1
}

pub fn serialize_buffer<W: Write>(w: &mut W, buffer: &SourceBuffer) -> Result<()> {
    let meta = serde_json::to_vec(buffer.metadata()).expect("metadata serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(buffer.len() as u64).to_le_bytes());
    for t in buffer.iter() {
        for v in &t.observation {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &t.action {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&t.reward.to_le_bytes());
        for v in &t.next_observation {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(u8::from(t.terminal) | (u8::from(t.truncated) << 1));
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn deserialize_buffer<R: Read>(r: &mut R) -> Result<SourceBuffer> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 4 + 2 + 4 + 8 + 4 {
        return Err(Error::format(buf.len() as u64, "buffer file too short"));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::format(body.len() as u64, "buffer CRC mismatch"));
    }

    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::format(*pos as u64, "unexpected end of buffer file"));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != &MAGIC[..] {
        return Err(Error::format(0, "bad buffer magic"));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported buffer version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta_bytes = take(&mut pos, meta_len)?;
    let metadata: BufferMetadata = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::format(pos as u64, format!("bad buffer metadata: {e}")))?;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;

    let rec = record_len(metadata.obs_dim, metadata.act_dim);
    if body.len() - pos != count * rec {
        return Err(Error::format(
            pos as u64,
            format!("expected {} record bytes, found {}", count * rec, body.len() - pos),
        ));
    }

    let read_f64 = |pos: &mut usize| -> f64 {
        let v = f64::from_le_bytes(body[*pos..*pos + 8].try_into().unwrap());
        *pos += 8;
        v
    };
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let observation: Vec<f64> = (0..metadata.obs_dim).map(|_| read_f64(&mut pos)).collect();
        let action: Vec<f64> = (0..metadata.act_dim).map(|_| read_f64(&mut pos)).collect();
        let reward = read_f64(&mut pos);
        let next_observation: Vec<f64> = (0..metadata.obs_dim).map(|_| read_f64(&mut pos)).collect();
        let flags = body[pos];
        pos += 1;
        data.push(Transition {
            observation,
            action,
            reward,
            next_observation,
            terminal: flags & 1 != 0,
            truncated: flags & 2 != 0,
        });
    }
    SourceBuffer::new(metadata, data)
}

pub fn save_buffer(path: &Path, buffer: &SourceBuffer) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serialize_buffer(&mut f, buffer)
}

pub fn load_buffer(path: &Path) -> Result<SourceBuffer> {
    let mut f = std::fs::File::open(path)?;
    deserialize_buffer(&mut f)
}
