//! Binary checkpoints.
//!
//! A record is laid out little-endian as
//!
//! ```text
//! "DMDX" | version u32 | role u32 | layer count u32
//! per layer: rows u32 | cols u32 | activation u32 | weights rows×cols f64 | bias rows f64
//! "NOPT"  or  "ADAM" | step u64 | skipped u64 | per layer: m_w m_b v_w v_b (f64)
//! ```
//!
//! Composite roles (discriminators) store one record per sub-network,
//! concatenated in a single file.

use std::fs;
use std::path::Path;

use ndarray::Array1;

use super::mlp::{Activation, Layer, ParamGrads, ParamStore};
use super::optim::OptState;
use crate::{Error, Mat, Result};

pub const MAGIC: &[u8; 4] = b"DMDX";
pub const VERSION: u32 = 1;
const TAG_ADAM: &[u8; 4] = b"ADAM";
const TAG_NONE: &[u8; 4] = b"NOPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Fake,
    Gen,
    DiscLat,
    DiscData,
}

impl Role {
    pub fn tag(self) -> u32 {
        match self {
            Role::Teacher => 1,
            Role::Fake => 2,
            Role::Gen => 3,
            Role::DiscLat => 4,
            Role::DiscData => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => Role::Teacher,
            2 => Role::Fake,
            3 => Role::Gen,
            4 => Role::DiscLat,
            5 => Role::DiscData,
            other => return Err(Error::Format(format!("unknown role tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Teacher => "TEACHER",
            Role::Fake => "FAKE",
            Role::Gen => "GEN",
            Role::DiscLat => "DISC_LAT",
            Role::DiscData => "DISC_DATA",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    pub params: ParamStore,
    pub opt: Option<OptState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_moments(out: &mut Vec<u8>, g: &ParamGrads, i: usize) {
    put_f64s(out, g.layers[i].0.iter());
    put_f64s(out, g.layers[i].1.iter());
}

pub fn encode_record(out: &mut Vec<u8>, ckpt: &Checkpoint) {
    out.extend_from_slice(MAGIC);
    put_u32(out, VERSION);
    put_u32(out, ckpt.role.tag());
    put_u32(out, ckpt.params.layers.len() as u32);
    for l in &ckpt.params.layers {
        put_u32(out, l.out_dim() as u32);
        put_u32(out, l.in_dim() as u32);
        put_u32(out, l.activation.code());
        // Row-major regardless of the in-memory layout.
        for row in l.weight.rows() {
            put_f64s(out, row.iter());
        }
        put_f64s(out, l.bias.iter());
    }
    match &ckpt.opt {
        None => out.extend_from_slice(TAG_NONE),
        Some(st) => {
            out.extend_from_slice(TAG_ADAM);
            out.extend_from_slice(&st.step.to_le_bytes());
            out.extend_from_slice(&st.skipped.to_le_bytes());
            for i in 0..ckpt.params.layers.len() {
                put_moments(out, &st.m, i);
                put_moments(out, &st.v, i);
            }
        }
    }
}

pub fn encode(records: &[Checkpoint]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        encode_record(&mut out, r);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mat(&mut self, rows: usize, cols: usize) -> Result<Mat> {
        let v = self.f64s(rows * cols)?;
        Ok(Mat::from_shape_vec((rows, cols), v).expect("sized"))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_record(r: &mut Reader<'_>) -> Result<Checkpoint> {
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a DMDX checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let role = Role::from_tag(r.u32()?)?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let code = r.u32()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
        let weight = r.mat(rows, cols)?;
        let bias = Array1::from(r.f64s(rows)?);
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    let params = ParamStore::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
    let tag = r.take(4)?;
    let opt = if tag == TAG_NONE {
        None
    } else if tag == TAG_ADAM {
        let step = r.u64()?;
        let skipped = r.u64()?;
        let mut m = ParamGrads::zeros_like(&params);
        let mut v = ParamGrads::zeros_like(&params);
        for (i, l) in params.layers.iter().enumerate() {
            let (rows, cols) = l.weight.dim();
            m.layers[i] = (r.mat(rows, cols)?, Array1::from(r.f64s(rows)?));
            v.layers[i] = (r.mat(rows, cols)?, Array1::from(r.f64s(rows)?));
        }
        Some(OptState { m, v, step, skipped })
    } else {
        return Err(Error::Format("unknown optimizer tag".into()));
    };
    Ok(Checkpoint { role, params, opt })
}

/// Decodes every record in `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Vec<Checkpoint>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let mut out = Vec::new();
    loop {
        out.push(decode_record(&mut r)?);
        if r.done() {
            return Ok(out);
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    role: Role,
    params: &ParamStore,
    opt: Option<&OptState>,
) -> Result<()> {
    let rec = Checkpoint {
        role,
        params: params.clone(),
        opt: opt.cloned(),
    };
    save_records(path, std::slice::from_ref(&rec))
}

pub fn save_records(path: &Path, records: &[Checkpoint]) -> Result<()> {
    fs::write(path, encode(records))?;
    Ok(())
}

/// Loads a single-network checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut recs = load_records(path)?;
    if recs.len() != 1 {
        return Err(Error::Format(format!(
            "expected one record, found {}",
            recs.len()
        )));
    }
    Ok(recs.remove(0))
}

pub fn load_records(path: &Path) -> Result<Vec<Checkpoint>> {
    decode(&fs::read(path)?)
}
