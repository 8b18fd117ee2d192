//! Binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "RCUNETCK"
//! version    u32      1
//! spec       u32 length + UTF-8 model description (key=value lines)
//! meta       u32 length + UTF-8 key=value lines (epoch, seed, lr, ...)
//! count      u32      number of parameters
//! per parameter:
//!   name     u32 length + UTF-8
//!   kind     u8       0 weight, 1 recurrent, 2 buffer
//!   rank     u32, then rank x u64 dims
//!   step     u64      Adam step counter
//!   value    n x f64
//!   adam_m   n x f64
//!   adam_v   n x f64
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rcunet_tensor::ParamKind;

use super::{ModelSpec, Network};
use crate::error::{io_err, CoreError, Result};

pub const MAGIC: &[u8; 8] = b"RCUNETCK";
pub const VERSION: u32 = 1;

fn format_err(detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("string is not UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn kind_code(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Weight => 0,
        ParamKind::Recurrent => 1,
        ParamKind::Buffer => 2,
    }
}

/// Key=value metadata stored alongside the parameters.
pub type Meta = BTreeMap<String, String>;

pub fn encode(network: &Network, meta: &Meta) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &network.spec.to_text());
    let meta_text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    put_str(&mut buf, &meta_text);
    put_u32(&mut buf, network.params.len() as u32);
    for p in network.params.iter() {
        put_str(&mut buf, &p.name);
        buf.push(kind_code(p.kind));
        put_u32(&mut buf, p.value.rank() as u32);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&p.step_count.to_le_bytes());
        put_f64s(&mut buf, p.value.data());
        put_f64s(&mut buf, &p.adam_m);
        put_f64s(&mut buf, &p.adam_v);
    }
    buf
}

/// Rebuilds the network described by the checkpoint and restores every
/// parameter, buffer and optimizer moment.
pub fn decode(bytes: &[u8]) -> Result<(Network, Meta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let spec = ModelSpec::parse(&r.string()?)?;
    let meta: Meta = r
        .string()?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut network = Network::build(&spec, 0)?;
    let count = r.u32()? as usize;
    if count != network.params.len() {
        return Err(format_err(format!(
            "{count} parameters stored, model has {}",
            network.params.len()
        )));
    }
    for _ in 0..count {
        let name = r.string()?;
        let kind = r.u8()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let step = r.u64()?;
        let id = network
            .params
            .id_of(&name)
            .ok_or_else(|| format_err(format!("unknown parameter {name:?}")))?;
        let p = network.params.get_mut(id);
        if p.value.shape() != shape.as_slice() || kind_code(p.kind) != kind {
            return Err(format_err(format!(
                "parameter {name:?}: stored {shape:?} kind {kind}, model expects {:?} kind {}",
                p.value.shape(),
                kind_code(p.kind)
            )));
        }
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&r.f64s(n)?);
        p.adam_m = r.f64s(n)?;
        p.adam_v = r.f64s(n)?;
        p.step_count = step;
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes"));
    }
    Ok((network, meta))
}

pub fn save(path: &Path, network: &Network, meta: &Meta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, encode(network, meta)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<(Network, Meta)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}
