//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "FBCK" | version u32 | l u32 | k u32 | H u32 | W u32 | widths 3×u32 | T u32 | τ f64
//!        | variant u8 (0 feedback, 1 feedforward) | flags u8
//!        | tensor count u32 | per tensor: rank u32, dims u32…, values f64…
//!        | crc32 u32 of every preceding byte
//! ```

use std::path::Path;

use super::{DecayOperator, ModelError, ModelParams, NetConfig, Variant};
use crate::autodiff::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FBCK";

const FLAG_DECAY: u8 = 1;
const FLAG_SOFTMAX: u8 = 2;
const FLAG_STATIC_DECAY: u8 = 4;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.seg_channels,
        c.classes,
        c.height,
        c.width,
        c.widths[0],
        c.widths[1],
        c.widths[2],
        c.timesteps,
    ] {
        put_u32(&mut buf, v);
    }
    buf.extend_from_slice(&c.tau.to_le_bytes());
    let (tag, flags) = match c.variant {
        Variant::Feedback {
            use_decay,
            use_softmax,
        } => (
            0u8,
            if use_decay { FLAG_DECAY } else { 0 } | if use_softmax { FLAG_SOFTMAX } else { 0 },
        ),
        Variant::Feedforward { static_decay } => {
            (1u8, if static_decay { FLAG_STATIC_DECAY } else { 0 })
        }
    };
    buf.push(tag);
    buf.push(flags);
    let tensors = params.named_tensors();
    put_u32(&mut buf, tensors.len());
    for (_, t) in tensors {
        put_u32(&mut buf, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut buf, d);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("unexpected end of data".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
}

pub fn read_checkpoint(bytes: &[u8], origin: &str) -> Result<ModelParams, ModelError> {
    let fail = |reason: String| ModelError::Checkpoint {
        path: origin.to_string(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(fail("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 4,
    };
    let parse = |r: &mut Reader| -> Result<ModelParams, String> {
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            ));
        }
        let mut f = [0usize; 8];
        for v in f.iter_mut() {
            *v = r.u32()?;
        }
        let tau = r.f64()?;
        let tag = r.u8()?;
        let flags = r.u8()?;
        let variant = match tag {
            0 => Variant::Feedback {
                use_decay: flags & FLAG_DECAY != 0,
                use_softmax: flags & FLAG_SOFTMAX != 0,
            },
            1 => Variant::Feedforward {
                static_decay: flags & FLAG_STATIC_DECAY != 0,
            },
            other => return Err(format!("unknown variant tag {other}")),
        };
        let config = NetConfig {
            seg_channels: f[0],
            classes: f[1],
            height: f[2],
            width: f[3],
            widths: [f[4], f[5], f[6]],
            timesteps: f[7],
            tau,
            variant,
        };
        config.validate().map_err(|e| e.to_string())?;
        let mut params = ModelParams::init(&config, 0).map_err(|e| e.to_string())?;
        let count = r.u32()?;
        let expected = params.named_tensors().len();
        if count != expected {
            return Err(format!(
                "holds {count} tensors, architecture needs {expected}"
            ));
        }
        for (i, slot) in params.tensors_mut().into_iter().enumerate() {
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            if shape != slot.shape() {
                return Err(format!(
                    "tensor {i} has shape {shape:?}, expected {:?}",
                    slot.shape()
                ));
            }
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            *slot = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        }
        if r.pos != r.bytes.len() {
            return Err(format!("{} trailing bytes", r.bytes.len() - r.pos));
        }
        params.decay = DecayOperator {
            tau,
            ..params.decay
        };
        Ok(params)
    };
    parse(&mut r).map_err(fail)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, write_checkpoint(params)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(&bytes, &path.display().to_string())
}
