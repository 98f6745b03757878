//! Binary checkpoint format (little-endian throughout):
//!
//! ```text
//! "CHVT" | version u16
//! image_h image_w patch_size channels embed_dim depth heads mlp_hidden num_classes : u32 each
//! variant tag u8 | parameter count u32
//! per parameter: name_len u16 | name (utf-8) | rank u8 | dims u32×rank | values f32×prod(dims)
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::io::Reader;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CHVT";
pub const VERSION: u16 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.image_h,
        cfg.image_w,
        cfg.patch_size,
        cfg.channels,
        cfg.embed_dim,
        cfg.depth,
        cfg.heads,
        cfg.mlp_hidden,
        cfg.num_classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(cfg.variant.tag());
    out.extend_from_slice(&(params.params().len() as u32).to_le_bytes());
    for p in params.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic (expected CHVT)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let tag = r.u8()?;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| Error::format("checkpoint", format!("unknown variant tag {tag}")))?;
    let [image_h, image_w, patch_size, channels, embed_dim, depth, heads, mlp_hidden, num_classes] =
        dims;
    let config = ModelConfig {
        image_h,
        image_w,
        patch_size,
        channels,
        embed_dim,
        depth,
        heads,
        mlp_hidden,
        num_classes,
        variant,
    };
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "parameter name is not utf-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r.f32s(n)?.into_iter().map(f64::from).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            "checkpoint",
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    ModelParams::from_named(&config, named)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
