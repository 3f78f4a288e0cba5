//! Binary checkpoint format:
//!
//! ```text
//! GECADAPT-CKPT 1\n
//! {json header}\n
//! <little-endian tensor data, in header order>
//! ```
//!
//! The header records the model configuration, element type, every tensor's
//! name, group and shape, and the SHA-256 of the data section.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ModelParams, ParamGroup};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "GECADAPT-CKPT 1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
    sha256: String,
}

fn encode_data<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut data = Vec::with_capacity(params.num_parameters() * std::mem::size_of::<T>());
    for (_, _, t) in params.tensors() {
        for v in t.iter() {
            let x = v.to_f64().unwrap();
            if T::DTYPE == "f32" {
                data.extend_from_slice(&(x as f32).to_le_bytes());
            } else {
                data.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    data
}

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut w: W) -> Result<()> {
    let data = encode_data(params);
    let header = Header {
        config: params.config.clone(),
        dtype: T::DTYPE.to_string(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(group, name, t)| TensorEntry {
                name,
                group,
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
        sha256: hex::encode(Sha256::digest(&data)),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&data)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let tmp = path.as_ref().with_extension("tmp");
    write_checkpoint(params, BufWriter::new(fs::File::create(&tmp)?))?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a checkpoint into scalar type `T`, converting if the file was
/// written with another element type.
pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<ModelParams<T>> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic line)".into()));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    };
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if hex::encode(Sha256::digest(&data)) != header.sha256 {
        return Err(Error::Checkpoint("checksum mismatch: file is corrupt".into()));
    }
    let mut params = ModelParams::<T>::zeros(&header.config);
    let expected = params.tensors().into_iter().map(|(g, n, t)| (g, n, [t.nrows(), t.ncols()])).collect::<Vec<_>>();
    if expected.len() != header.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint lists {} tensors, configuration implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((g, n, shape), entry) in expected.iter().zip(&header.tensors) {
        if *n != entry.name || *g != entry.group || *shape != entry.shape {
            return Err(Error::Shape(format!(
                "tensor {} has shape {:?} in checkpoint, expected {} {:?}",
                entry.name, entry.shape, n, shape
            )));
        }
    }
    let total: usize = expected.iter().map(|(_, _, s)| s[0] * s[1]).sum();
    if data.len() != total * width {
        return Err(Error::Checkpoint(format!("data section has {} bytes, expected {}", data.len(), total * width)));
    }
    let mut chunks = data.chunks_exact(width);
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            let c = chunks.next().expect("length checked above");
            let x = if width == 4 {
                f32::from_le_bytes(c.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(c.try_into().unwrap())
            };
            *v = T::from_f64_lossy(x);
        }
    }
    params.check_finite()?;
    Ok(params)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    read_checkpoint(fs::File::open(path)?)
}

/// Loads and additionally requires the stored configuration to equal
/// `config`.
pub fn load_checkpoint_expecting<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelParams<T>> {
    let p = load_checkpoint(path)?;
    if &p.config != config {
        return Err(Error::Shape(format!(
            "checkpoint configuration {:?} differs from expected {:?}",
            p.config, config
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            hidden_dim: 4,
            enc_layers: 2,
            dec_layers: 1,
            vocab_size: 8,
            ..ModelConfig::desk(8)
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let p = init_params::<f32>(&cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q: ModelParams<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let p64 = init_params::<f64>(&cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p64, &mut buf).unwrap();
        assert_eq!(read_checkpoint::<f64, _>(buf.as_slice()).unwrap(), p64);
    }

    #[test]
    fn corrupt_data_detected() {
        let p = init_params::<f32>(&cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let last = buf.len() - 1;
        buf[last] ^= 0x40;
        assert!(matches!(read_checkpoint::<f32, _>(buf.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = init_params::<f32>(&cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf).into_owned();
        let header_end = text.find("\n").unwrap() + 1 + text[text.find("\n").unwrap() + 1..].find("\n").unwrap();
        let header = &text[..header_end];
        let tampered = header.replacen("\"shape\":[8,3]", "\"shape\":[8,4]", 1);
        assert_ne!(tampered, header);
        let mut bad = tampered.into_bytes();
        bad.extend_from_slice(&buf[header_end..]);
        assert!(matches!(read_checkpoint::<f32, _>(bad.as_slice()), Err(Error::Shape(_))));
    }

    #[test]
    fn expecting_other_config_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = init_params::<f32>(&cfg(), 1).unwrap();
        save_checkpoint(&p, &path).unwrap();
        load_checkpoint_expecting::<f32>(&path, &cfg()).unwrap();
        let mut other = cfg();
        other.hidden_dim = 5;
        assert!(load_checkpoint_expecting::<f32>(&path, &other).is_err());
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(read_checkpoint::<f32, _>(&b"hello\n{}\n"[..]), Err(Error::Checkpoint(_))));
    }
}
