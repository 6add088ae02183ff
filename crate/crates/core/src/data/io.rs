//! Dataset files: a JSON header line followed by fixed-width records of seven
//! little-endian `u32` fields.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CollectConfig, OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::mdp::EnvSpec;

pub const DATASET_VERSION: u32 = 1;
const RECORD_BYTES: u64 = 28;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    env: EnvSpec,
    provenance: CollectConfig,
    n_transitions: u64,
    n_episodes: u64,
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &OfflineDataset) -> Result<()> {
    let header = Header {
        version: DATASET_VERSION,
        env: dataset.env.clone(),
        provenance: dataset.provenance.clone(),
        n_transitions: dataset.len() as u64,
        n_episodes: dataset.episodes().len() as u64,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for tr in dataset.transitions() {
        for field in [tr.episode, tr.t, tr.s, tr.a, tr.s_next, tr.achieved_goal, tr.commanded_goal] {
            w.write_all(&field.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<OfflineDataset> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format {
            offset: line.len() as u64,
            detail: "header line is not terminated".into(),
        });
    }
    let value: serde_json::Value = serde_json::from_str(line.trim_end()).map_err(|e| Error::Format {
        offset: 0,
        detail: format!("header is not JSON: {e}"),
    })?;
    // Check the version before the schema so old files get the clearer error.
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != DATASET_VERSION {
        return Err(Error::Version {
            found,
            expected: DATASET_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| Error::Format {
        offset: 0,
        detail: format!("header: {e}"),
    })?;
    let start = line.len() as u64;
    let mut transitions = Vec::with_capacity(header.n_transitions as usize);
    let mut buf = [0u8; RECORD_BYTES as usize];
    for k in 0..header.n_transitions {
        let offset = start + k * RECORD_BYTES;
        let mut filled = 0;
        while filled < buf.len() {
            let n = reader.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(Error::Format {
                    offset: offset + filled as u64,
                    detail: format!("file ends inside record {k} of {}", header.n_transitions),
                });
            }
            filled += n;
        }
        let f = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap());
        transitions.push(Transition {
            episode: f(0),
            t: f(1),
            s: f(2),
            a: f(3),
            s_next: f(4),
            achieved_goal: f(5),
            commanded_goal: f(6),
        });
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format {
            offset: start + header.n_transitions * RECORD_BYTES,
            detail: format!("{} trailing bytes", rest.len()),
        });
    }
    let dataset = OfflineDataset::new(header.env, header.provenance, transitions)?;
    if dataset.episodes().len() as u64 != header.n_episodes {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "header announces {} episodes, records hold {}",
                header.n_episodes,
                dataset.episodes().len()
            ),
        });
    }
    Ok(dataset)
}

pub fn save_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    write_dataset(std::io::BufWriter::new(std::fs::File::create(path)?), dataset)
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// One headered CSV row per transition.
pub fn export_csv<W: Write>(w: W, dataset: &OfflineDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for tr in dataset.transitions() {
        out.serialize(tr)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect_dataset;

    fn sample() -> OfflineDataset {
        let config = CollectConfig {
            n_episodes: 6,
            horizon: 7,
            seed: 3,
            ..Default::default()
        };
        collect_dataset(&EnvSpec::gridworld(3, 0.2), &config).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let data = sample();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
        let mut again = Vec::new();
        write_dataset(&mut again, &read_dataset(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncation_reports_offset() {
        let data = sample();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let header_len = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        buf.truncate(header_len + 28 * 5 + 9);
        match read_dataset(buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (header_len + 28 * 5 + 9) as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let data = sample();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let text = String::from_utf8_lossy(&buf).replacen("\"version\":1", "\"version\":2", 1);
        let err = read_dataset(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, expected: 1 }));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let data = sample();
        let mut buf = Vec::new();
        export_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "episode,t,s,a,s_next,achieved_goal,commanded_goal");
        assert_eq!(lines.count(), data.len());
    }
}
