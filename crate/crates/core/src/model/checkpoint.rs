//! Binary checkpoint layout (little endian):
//!
//! ```text
//! magic "ESNETCK1" | version u32 | kind u32 | blocks u32 | kernel u32
//! | dims u32 | grid n u32 (0: any) | g_inverse u32 | channel count u32
//! | channels u32 * count
//! | epsilon f64 | c f64 | dt f64 | parameters f64 * param_count
//! ```
//!
//! Parameters follow the network's declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BlockKind, EStableNet, NetConfig};
use crate::dataset::{decode_f64s, write_f64s};
use crate::error::{Error, Result};
use crate::field::OperatorKind;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ESNETCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_CHANNELS: usize = 64;

fn g_code(kind: OperatorKind) -> u32 {
    match kind {
        OperatorKind::Identity => 0,
        OperatorKind::InverseNegLaplacian => 1,
    }
}

pub fn write_checkpoint(net: &EStableNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let cfg = &net.config;
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    let words = [
        CHECKPOINT_VERSION,
        cfg.kind.code(),
        cfg.blocks as u32,
        cfg.kernel as u32,
        cfg.dims as u32,
        cfg.grid_n.unwrap_or(0) as u32,
        g_code(cfg.g_inverse),
        cfg.channels.len() as u32,
    ];
    for word in words.iter().chain(cfg.channels.iter().map(|&c| c as u32).collect::<Vec<_>>().iter()) {
        w.write_all(&word.to_le_bytes()).map_err(io)?;
    }
    write_f64s(&mut w, &[cfg.epsilon, cfg.c, cfg.dt]).map_err(io)?;
    for p in &net.params {
        write_f64s(&mut w, p.value.data()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<EStableNet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: String| Error::format(path, m);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, not an ESNETCK1 checkpoint".into()));
    }
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::format(path, "truncated header"))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let kind = read_u32(&mut r)?;
    let kind = BlockKind::from_code(kind).ok_or_else(|| bad(format!("unknown block kind {kind}")))?;
    let blocks = read_u32(&mut r)? as usize;
    let kernel = read_u32(&mut r)? as usize;
    let dims = read_u32(&mut r)? as usize;
    let grid_n = match read_u32(&mut r)? {
        0 => None,
        n => Some(n as usize),
    };
    let g_inverse = match read_u32(&mut r)? {
        0 => OperatorKind::Identity,
        1 => OperatorKind::InverseNegLaplacian,
        other => return Err(bad(format!("unknown G operator code {other}"))),
    };
    let count = read_u32(&mut r)? as usize;
    if count < 2 || count > MAX_CHANNELS {
        return Err(bad(format!("implausible channel plan length {count}")));
    }
    let channels = (0..count)
        .map(|_| read_u32(&mut r).map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut fb = [0u8; 24];
    r.read_exact(&mut fb).map_err(|_| bad("truncated header".into()))?;
    let floats = decode_f64s(&fb);
    let config = NetConfig {
        kind,
        dims,
        blocks,
        kernel,
        channels,
        epsilon: floats[0],
        c: floats[1],
        dt: floats[2],
        g_inverse,
        grid_n,
    };
    if blocks > 1 << 16 || kernel > 1 << 12 {
        return Err(bad("implausible network size".into()));
    }
    let mut net = EStableNet::zeros(config).map_err(|e| bad(format!("bad header: {e}")))?;
    for p in &mut net.params {
        let mut buf = vec![0u8; 8 * p.value.len()];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(path, format!("truncated at parameter {}", p.name)))?;
        let values = decode_f64s(&buf);
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("non-finite value {v} in {}", p.name)));
        }
        p.value.data_mut().copy_from_slice(&values);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last parameter".into()));
    }
    Ok(net)
}
