//! Checkpoint container.
//!
//! Layout: a text header of `key=value` lines, the last of which is
//! `data_offset=NNNNNNNNNNNN` (fixed width) giving the byte offset of the
//! payload, followed by the named arrays as little-endian `f64`, concatenated
//! in the order listed by the `arrays` key. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::ParameterVector;
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, PotentialNetwork};
use crate::scalar::Real;

pub const MAGIC: &str = "ymeasure-checkpoint";
pub const VERSION: &str = "1";
const OFFSET_KEY: &str = "data_offset=";
const OFFSET_DIGITS: usize = 12;

/// Key-value metadata plus named real arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key).ok_or_else(|| corrupt(format!("missing key {key}")))?;
        raw.parse()
            .map_err(|_| corrupt(format!("bad value for {key}: {raw:?}")))
    }

    pub fn push_array(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.arrays.push((name.into(), data));
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("{k}={v}\n"));
        }
        let listing: Vec<String> = self
            .arrays
            .iter()
            .map(|(n, d)| format!("{n}:{}", d.len()))
            .collect();
        header.push_str(&format!("arrays={}\n", listing.join(",")));
        let offset = header.len() + OFFSET_KEY.len() + OFFSET_DIGITS + 1;
        header.push_str(&format!("{OFFSET_KEY}{offset:0width$}\n", width = OFFSET_DIGITS));
        let mut bytes = header.into_bytes();
        debug_assert_eq!(bytes.len(), offset);
        for (_, data) in &self.arrays {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("truncated header"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| corrupt("header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };

        let first = next_line(&mut pos)?;
        let mut parts = first.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = parts.next().unwrap_or("").to_string();
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION.into(),
            });
        }

        let mut meta = BTreeMap::new();
        let mut listing = None;
        let offset = loop {
            let line = next_line(&mut pos)?;
            if let Some(v) = line.strip_prefix(OFFSET_KEY) {
                break v.parse::<usize>().map_err(|_| corrupt("bad data offset"))?;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("malformed header line {line:?}")))?;
            if k == "arrays" {
                listing = Some(v.to_string());
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        };
        if offset != pos {
            return Err(corrupt("data offset does not match header length"));
        }

        let listing = listing.ok_or_else(|| corrupt("missing array listing"))?;
        let mut arrays = Vec::new();
        let mut cursor = offset;
        for entry in listing.split(',').filter(|e| !e.is_empty()) {
            let (name, len) = entry
                .split_once(':')
                .ok_or_else(|| corrupt(format!("bad array entry {entry:?}")))?;
            let len: usize = len.parse().map_err(|_| corrupt("bad array length"))?;
            let end = cursor + 8 * len;
            if end > bytes.len() {
                return Err(corrupt(format!("array {name} truncated")));
            }
            let data = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name.to_string(), data));
            cursor = end;
        }
        if cursor != bytes.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        reason: reason.into(),
    }
}

/// Writes the network configuration into `c`'s metadata and its parameters as the `params` array.
pub fn store_network<T: Real>(c: &mut Container, net: &PotentialNetwork<T>) {
    let cfg = net.config();
    c.set("network.input_dim", cfg.input_dim);
    c.set("network.depth", cfg.depth);
    c.set("network.hidden_width", cfg.hidden_width);
    c.set("network.trunk_mode", cfg.trunk_mode.as_str());
    c.set("network.seed", cfg.seed);
    c.set("network.param_count", net.params().len());
    c.push_array(
        "params",
        net.params().as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
    );
}

pub fn restore_network<T: Real>(c: &Container) -> Result<PotentialNetwork<T>> {
    let cfg = NetworkConfig {
        input_dim: c.parse("network.input_dim")?,
        depth: c.parse("network.depth")?,
        hidden_width: c.parse("network.hidden_width")?,
        trunk_mode: c
            .get("network.trunk_mode")
            .ok_or_else(|| corrupt("missing network.trunk_mode"))?
            .parse()?,
        seed: c.parse("network.seed")?,
    };
    let data = c.array("params").ok_or_else(|| corrupt("missing params array"))?;
    let layout = cfg.layout();
    let params = ParameterVector::from_flat(layout, data.iter().map(|&v| T::of(v)).collect()).ok_or(
        Error::LayoutMismatch {
            expected: layout.len(),
            got: data.len(),
        },
    )?;
    PotentialNetwork::from_params(cfg, params)
}

pub fn save_network<T: Real>(net: &PotentialNetwork<T>, path: &Path) -> Result<()> {
    let mut c = Container::default();
    store_network(&mut c, net);
    c.save(path)
}

pub fn load_network<T: Real>(path: &Path) -> Result<PotentialNetwork<T>> {
    restore_network(&Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TrunkMode;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let cfg = NetworkConfig {
            input_dim: 4,
            depth: 3,
            hidden_width: 7,
            trunk_mode: TrunkMode::LiftedTrunk,
            seed: 42,
        };
        let net = PotentialNetwork::<f64>::init_xavier(cfg).unwrap();
        let mut c = Container::default();
        store_network(&mut c, &net);
        c.set("epoch", 12);
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let restored: PotentialNetwork<f64> = restore_network(&back).unwrap();
        assert_eq!(restored, net);
        for (a, b) in restored.params().as_slice().iter().zip(net.params().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_offset_points_at_payload() {
        let mut c = Container::default();
        c.set("a", 1);
        c.push_array("x", vec![1.5, -0.0, f64::MIN_POSITIVE]);
        let bytes = c.to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        let line = text.lines().find(|l| l.starts_with("data_offset=")).unwrap();
        let off: usize = line["data_offset=".len()..].parse().unwrap();
        assert_eq!(bytes.len() - off, 24);
        assert_eq!(&bytes[off..off + 8], &1.5f64.to_le_bytes());
    }

    #[test]
    fn version_and_corruption_errors() {
        let mut c = Container::default();
        c.push_array("params", vec![1.0]);
        let mut bytes = c.to_bytes();
        bytes[MAGIC.len() + 1] = b'9';
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::CheckpointVersion { .. })));
        let mut truncated = c.to_bytes();
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(Container::from_bytes(&truncated), Err(Error::Checkpoint { .. })));
        assert!(Container::from_bytes(b"hello\n").is_err());
    }
}
