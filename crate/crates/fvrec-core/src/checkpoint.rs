//! Versioned binary checkpoint: magic "FVREC", format version, config
//! snapshot, item-vocabulary checksum, named f32 tensors, and a sha256
//! integrity digest over everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RecModel, Variant};
use crate::numerics::RngStream;

pub const MAGIC: &[u8; 5] = b"FVREC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    /// Effective run configuration, echoed verbatim.
    pub config_echo: String,
    pub vocab_checksum: String,
    /// (name, (rows, cols), row-major f32 values)
    pub tensors: Vec<(String, (u32, u32), Vec<f32>)>,
}

pub fn checkpoint_from_model(
    model: &RecModel,
    config_echo: &str,
    vocab_checksum: &str,
) -> Checkpoint {
    let mut tensors = Vec::new();
    model.visit_params(&mut |name, shape, data| {
        tensors.push((
            name.to_string(),
            (shape.0 as u32, shape.1 as u32),
            data.iter().map(|&v| v as f32).collect(),
        ));
    });
    Checkpoint {
        model_cfg: model.cfg.clone(),
        config_echo: config_echo.to_string(),
        vocab_checksum: vocab_checksum.to_string(),
        tensors,
    }
}

/// Rebuilds the model from a checkpoint; every parameter tensor must be
/// present with matching shape.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<RecModel> {
    let mut model = RecModel::init(ckpt.model_cfg.clone(), &mut RngStream::new(0))?;
    let lookup: std::collections::BTreeMap<&str, &(String, (u32, u32), Vec<f32>)> = ckpt
        .tensors
        .iter()
        .map(|t| (t.0.as_str(), t))
        .collect();
    let mut missing = Vec::new();
    let mut used = 0usize;
    model.visit_params_mut(&mut |name, shape, data| {
        match lookup.get(name) {
            Some((_, (r, c), values)) => {
                if (*r as usize, *c as usize) != shape || values.len() != data.len() {
                    missing.push(format!("{name} (shape mismatch)"));
                    return;
                }
                for (d, &v) in data.iter_mut().zip(values) {
                    *d = v as f64;
                }
                used += 1;
            }
            None => missing.push(name.to_string()),
        }
    });
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "checkpoint missing tensors: {}",
            missing.join(", ")
        )));
    }
    if used != ckpt.tensors.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, model uses {used}",
            ckpt.tensors.len()
        )));
    }
    Ok(model)
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn push_widths(buf: &mut Vec<u8>, widths: &[usize]) {
    push_u32(buf, widths.len() as u32);
    for &w in widths {
        push_u32(buf, w as u32);
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    let cfg = &ckpt.model_cfg;
    buf.push(match cfg.variant {
        Variant::VaeRec => 0,
        Variant::VaeAdv => 1,
        Variant::VaeGan => 2,
        Variant::VaeEmp => 3,
    });
    push_u32(&mut buf, cfg.n_items as u32);
    push_u32(&mut buf, cfg.latent as u32);
    push_u32(&mut buf, cfg.split as u32);
    push_u32(&mut buf, cfg.n_attrs as u32);
    push_widths(&mut buf, &cfg.hidden);
    push_widths(&mut buf, &cfg.adv_hidden);
    push_str(&mut buf, &ckpt.config_echo);
    push_str(&mut buf, &ckpt.vocab_checksum);
    push_u32(&mut buf, ckpt.tensors.len() as u32);
    for (name, (r, c), values) in &ckpt.tensors {
        push_str(&mut buf, name);
        push_u32(&mut buf, *r);
        push_u32(&mut buf, *c);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint string is not utf-8".into()))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let len = self.u32()? as usize;
        (0..len).map(|_| Ok(self.u32()? as usize)).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Data("checkpoint too small".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expected = Sha256::digest(body);
    if digest != expected.as_slice() {
        return Err(Error::Data(
            "checkpoint integrity checksum mismatch".into(),
        ));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(Error::Data("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let variant = match r.u8()? {
        0 => Variant::VaeRec,
        1 => Variant::VaeAdv,
        2 => Variant::VaeGan,
        3 => Variant::VaeEmp,
        other => return Err(Error::Data(format!("bad variant tag {other}"))),
    };
    let n_items = r.u32()? as usize;
    let latent = r.u32()? as usize;
    let split = r.u32()? as usize;
    let n_attrs = r.u32()? as usize;
    let hidden = r.widths()?;
    let adv_hidden = r.widths()?;
    let config_echo = r.string()?;
    let vocab_checksum = r.string()?;
    let n_tensors = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let n = rows as usize * cols as usize;
        let raw = r.take(n * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, (rows, cols), values));
    }
    if r.pos != body.len() {
        return Err(Error::Data("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint {
        model_cfg: ModelConfig {
            variant,
            n_items,
            hidden,
            latent,
            split,
            adv_hidden,
            n_attrs,
        },
        config_echo,
        vocab_checksum,
        tensors,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt))
        .map_err(|e| Error::Data(format!("cannot write checkpoint {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
