//! Weight file I/O. The format is an 8-byte magic (`HITW0001`), a text
//! manifest of one `name f32 d0xd1x...` line per tensor terminated by a
//! blank line, then each tensor's raw little-endian f32 data concatenated in
//! manifest order. Round-trips are bitwise lossless.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::backbone::ModelConfig;
use crate::error::{HitError, Result};
use crate::init::TensorSource;
use crate::model::{AblationSpec, HitModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HITW0001";

/// Write named tensors in order.
pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(HitError::WeightFormat(format!(
                "tensor name `{name}` is empty or contains whitespace"
            )));
        }
        let shape = t
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        writeln!(w, "{name} f32 {shape}")?;
    }
    writeln!(w)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a weight file back into (name, tensor) pairs, in manifest order.
pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| HitError::WeightFormat("file too short for magic header".into()))?;
    if &magic != MAGIC {
        return Err(HitError::WeightFormat(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }

    // manifest: read byte-wise lines until the blank terminator
    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let line = read_line(&mut r)?;
        if line.is_empty() {
            break;
        }
        let mut parts = line.split_whitespace();
        let (name, dtype, shape) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(d), Some(s), None) => (n, d, s),
            _ => {
                return Err(HitError::WeightFormat(format!(
                    "malformed manifest line `{line}`"
                )))
            }
        };
        if dtype != "f32" {
            return Err(HitError::WeightFormat(format!(
                "unsupported dtype `{dtype}` for `{name}`"
            )));
        }
        let dims = shape
            .split('x')
            .map(|d| {
                d.parse::<usize>().map_err(|_| {
                    HitError::WeightFormat(format!("bad shape `{shape}` for `{name}`"))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        if dims.is_empty() || dims.contains(&0) {
            return Err(HitError::WeightFormat(format!(
                "empty dimension in shape `{shape}` for `{name}`"
            )));
        }
        if entries.iter().any(|(n, _)| n == name) {
            return Err(HitError::WeightFormat(format!(
                "duplicate tensor name `{name}`"
            )));
        }
        entries.push((name.to_string(), dims));
    }

    let mut out = Vec::with_capacity(entries.len());
    for (name, dims) in entries {
        let count: usize = dims.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes).map_err(|_| {
            HitError::WeightFormat(format!(
                "blob truncated while reading `{name}` ({count} f32 values)"
            ))
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(HitError::WeightFormat(
            "trailing bytes after final tensor blob".into(),
        ));
    }
    Ok(out)
}

fn read_line(r: &mut impl Read) -> Result<String> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(HitError::WeightFormat(
                "manifest ended without blank-line terminator".into(),
            ));
        }
        if byte[0] == b'\n' {
            break;
        }
        buf.push(byte[0]);
        if buf.len() > 4096 {
            return Err(HitError::WeightFormat("manifest line too long".into()));
        }
    }
    String::from_utf8(buf)
        .map_err(|_| HitError::WeightFormat("manifest is not valid UTF-8".into()))
}

/// Save a model's parameters.
pub fn save_model(path: &Path, model: &HitModel) -> Result<()> {
    save_tensors(path, &model.named_tensors())
}

/// Build a model of the given configuration from a weight file. Every tensor
/// in the file must be consumed and every tensor the model needs must be
/// present, with matching shapes.
pub fn load_model(path: &Path, cfg: &ModelConfig, spec: AblationSpec) -> Result<HitModel> {
    let pairs = load_tensors(path)?;
    let mut map: HashMap<String, Tensor> = pairs.into_iter().collect();
    let model = HitModel::build(cfg, spec, &mut TensorSource::Stored(&mut map))?;
    if !map.is_empty() {
        let mut extra: Vec<&String> = map.keys().collect();
        extra.sort();
        return Err(HitError::WeightFormat(format!(
            "file contains tensors the model does not use: {}",
            extra
                .iter()
                .take(5)
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    Ok(model)
}
