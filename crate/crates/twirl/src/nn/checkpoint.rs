//! Network checkpoint file format.
//!
//! Layout (all little-endian):
//!   magic "TWNN" | version u16 | input_dim u32 | n_hidden u32 |
//!   hidden dims u32 each | output_dim u32 | flags u8 (bit 0: layer norm) |
//!   dropout rate f64 | parameter arrays f64 in layer order
//!   (weights row-major, bias, then layer-norm gain and bias when present) |
//!   CRC32 of everything preceding.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{MlpParams, MlpSpec};

const MAGIC: &[u8; 4] = b"TWNN";
const VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    spec.validate()?;
    if !params.matches_spec(spec) {
        return Err(Error::config("checkpoint params do not match spec"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.hidden_dims.len() as u32).to_le_bytes());
    for &h in &spec.hidden_dims {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
    buf.push(u8::from(spec.use_layer_norm));
    buf.extend_from_slice(&spec.dropout_rate.to_le_bytes());
    for v in params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(MlpSpec, MlpParams)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 4 + 2 + 4 {
        return Err(Error::format(buf.len() as u64, "checkpoint too short"));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::format(body.len() as u64, "checkpoint CRC mismatch"));
    }

    let mut cur = Cursor::new(body);
    if cur.take_bytes(4)? != &MAGIC[..] {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = cur.take_u16()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let input_dim = cur.take_u32()? as usize;
    let n_hidden = cur.take_u32()? as usize;
    if n_hidden > 64 {
        return Err(Error::format(cur.pos as u64, "implausible hidden layer count"));
    }
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(cur.take_u32()? as usize);
    }
    let output_dim = cur.take_u32()? as usize;
    let flags = cur.take_bytes(1)?[0];
    let dropout_rate = f64::from_le_bytes(cur.take_bytes(8)?.try_into().unwrap());
    let spec = MlpSpec {
        input_dim,
        hidden_dims,
        output_dim,
        use_layer_norm: flags & 1 != 0,
        dropout_rate,
    };
    spec.validate()
        .map_err(|e| Error::format(cur.pos as u64, format!("invalid checkpoint header: {e}")))?;

    let n_params = spec.param_count();
    let remaining = body.len() - cur.pos;
    if remaining != n_params * 8 {
        return Err(Error::format(
            cur.pos as u64,
            format!("expected {} parameter bytes, found {remaining}", n_params * 8),
        ));
    }
    let mut flat = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        flat.push(f64::from_le_bytes(cur.take_bytes(8)?.try_into().unwrap()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params = MlpParams::init(&spec, &mut rng, 1.0).zeros_like();
    params.unflatten_into(&flat);
    Ok((spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_checkpoint(&mut f, spec, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, MlpParams)> {
    let mut f = std::fs::File::open(path)?;
    read_checkpoint(&mut f)
}

use rand::SeedableRng;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.pos as u64, "unexpected end of checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take_bytes(2)?.try_into().unwrap()))
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take_bytes(4)?.try_into().unwrap()))
    }
}
