//! Checkpoint format: one JSON header line, then every parameter as a
//! little-endian `f32`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseNet, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Layer sizes of each stored network, in order.
    pub layer_sizes: Vec<Vec<usize>>,
    /// Parameter count of each stored network.
    pub counts: Vec<usize>,
    /// Free-form metadata, e.g. the agent config.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, nets: &[&DenseNet<T>], meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        layer_sizes: nets.iter().map(|n| n.layer_sizes().to_vec()).collect(),
        counts: nets.iter().map(|n| n.n_params()).collect(),
        meta,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for net in nets {
        for &p in net.params() {
            w.write_all(&(p.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(r: R) -> Result<(CheckpointHeader, Vec<DenseNet<T>>)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format {
            offset: line.len() as u64,
            detail: "checkpoint header line is not terminated".into(),
        });
    }
    let header: CheckpointHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Format {
        offset: 0,
        detail: format!("checkpoint header: {e}"),
    })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.layer_sizes.len() != header.counts.len() {
        return Err(Error::Format {
            offset: 0,
            detail: "layer_sizes and counts differ in length".into(),
        });
    }
    let mut offset = line.len() as u64;
    let mut nets = Vec::new();
    for (sizes, &count) in header.layer_sizes.iter().zip(&header.counts) {
        let mut params = Vec::with_capacity(count);
        let mut buf = [0u8; 4];
        for _ in 0..count {
            reader.read_exact(&mut buf).map_err(|_| Error::Format {
                offset,
                detail: "checkpoint ends inside the parameter block".into(),
            })?;
            offset += 4;
            params.push(T::of(f32::from_le_bytes(buf) as f64));
        }
        nets.push(DenseNet::from_params(sizes, params)?);
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format {
            offset,
            detail: format!("{} trailing bytes", rest.len()),
        });
    }
    Ok((header, nets))
}

pub fn save_checkpoint<T: Real>(path: &Path, nets: &[&DenseNet<T>], meta: serde_json::Value) -> Result<()> {
    write_checkpoint(std::fs::File::create(path)?, nets, meta)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(CheckpointHeader, Vec<DenseNet<T>>)> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DenseNet::<f32>::new(&[4, 8, 3], &mut rng).unwrap();
        let b = DenseNet::<f32>::new(&[2, 1], &mut rng).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&a, &b], serde_json::json!({"agent": "smore"})).unwrap();
        let (header, nets) = read_checkpoint::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(nets, vec![a, b]);
        assert_eq!(header.meta["agent"], "smore");
    }

    #[test]
    fn truncation_names_offset() {
        let net = DenseNet::<f32>::zeros(&[2, 2]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&net], serde_json::Value::Null).unwrap();
        buf.truncate(buf.len() - 3);
        let header_len = buf.iter().position(|&b| b == b'\n').unwrap() as u64 + 1;
        match read_checkpoint::<f32, _>(buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, header_len + 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = "{\"version\":7,\"layer_sizes\":[],\"counts\":[]}\n";
        assert!(matches!(
            read_checkpoint::<f32, _>(text.as_bytes()),
            Err(Error::Version { found: 7, .. })
        ));
    }
}
