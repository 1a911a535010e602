//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `TXCK`, format version, dimensions, head
//! description, seed, clip threshold and config hash, then every tensor of
//! [`Model::tensors`] as a `u64` length followed by `f64` values. The
//! vocabulary is stored beside the checkpoint in `<path>.vocab`.

use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::corpus::{write_atomic, Vocabulary};
use crate::dataset::TaskSpace;
use crate::engine::TaskFamily;
use crate::error::{Error, Result};
use crate::heads::{Activation, AlignedProjection, HeadParameters};
use crate::lstm::LstmParameters;
use crate::model::Model;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"TXCK";
const VERSION: u32 = 1;

/// Everything besides the weights needed to reuse a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub reverse_input: bool,
    pub seed: u64,
    pub clip: f64,
    /// 16 hex digits.
    pub config_hash: String,
}

pub fn vocab_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

pub fn save<T: Scalar>(path: &Path, model: &Model<T>, space: &TaskSpace, meta: &CheckpointMeta) -> Result<()> {
    model.validate()?;
    if space.vocab.len() != model.lstm.vocab_size() || space.outputs != model.head.outputs {
        return Err(Error::Checkpoint("task space does not match the model".into()));
    }
    let hash = hex_to_bytes(&meta.config_hash)?;
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    put_u32(&mut b, VERSION);
    put_u32(&mut b, model.lstm.hidden() as u32);
    put_u32(&mut b, model.lstm.embed() as u32);
    put_u32(&mut b, model.lstm.vocab_size() as u32);
    b.push(model.head.family.code());
    b.push(u8::from(meta.reverse_input));
    let proj = model.head.projection.as_ref();
    b.push(proj.map_or(0, |p| p.activation.code()));
    put_u32(&mut b, model.head.outputs.start as u32);
    put_u32(&mut b, model.head.outputs.end as u32);
    put_u32(&mut b, proj.map_or(0, |p| p.rows() as u32));
    b.extend_from_slice(&meta.seed.to_le_bytes());
    b.extend_from_slice(&meta.clip.to_le_bytes());
    b.extend_from_slice(&hash);
    for t in model.tensors() {
        b.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for x in t {
            b.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    write_atomic(path, &b)?;
    space.vocab.write(vocab_path(path))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Model<T>, TaskSpace, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hidden = r.u32()? as usize;
    let embed = r.u32()? as usize;
    let vocab_size = r.u32()? as usize;
    let family = TaskFamily::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown task family".into()))?;
    let reverse_input = r.u8()? != 0;
    let activation_code = r.u8()?;
    let outputs: Range<usize> = r.u32()? as usize..r.u32()? as usize;
    let head_rows = r.u32()? as usize;
    let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let clip = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let config_hash: String = r.take(8)?.iter().map(|b| format!("{b:02x}")).collect();

    let lstm = LstmParameters::zeros(vocab_size, embed, hidden);
    let head = if family == TaskFamily::AlignedLabeling {
        let activation = Activation::from_code(activation_code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {activation_code}")))?;
        HeadParameters::aligned(outputs.clone(), AlignedProjection::zeros(head_rows, embed, activation))
    } else {
        HeadParameters::dot(family, outputs.clone())
    };
    let mut model = Model::new(lstm, head).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for tensor in model.tensors_mut() {
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        if len != tensor.len() {
            return Err(Error::Checkpoint(format!("tensor of {len} values where {} expected", tensor.len())));
        }
        for x in tensor.iter_mut() {
            *x = T::of(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let vocab = Vocabulary::read(vocab_path(path))?;
    if vocab.len() != vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} symbols, checkpoint expects {vocab_size}",
            vocab.len()
        )));
    }
    let space = TaskSpace::from_parts(family, vocab, outputs, reverse_input)?;
    let meta = CheckpointMeta {
        reverse_input,
        seed,
        clip,
        config_hash,
    };
    Ok((model, space, meta))
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn hex_to_bytes(hex: &str) -> Result<[u8; 8]> {
    let bad = || Error::Checkpoint(format!("config hash {hex:?} is not 16 hex digits"));
    if hex.len() != 16 {
        return Err(bad());
    }
    let mut out = [0u8; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
