//! Plain-text checkpoint: layer shapes and parameters as hexadecimal IEEE
//! bit patterns, so a save/load round trip is exact.
//!
//! ```text
//! safe-gain-checkpoint 1
//! seed 7
//! config_sha256 <64 hex digits>
//! activation relu
//! layers 3
//! layer 15 64
//! w <hex> <hex> ...
//! b <hex> ...
//! ```

use std::path::Path;

use super::network::{Activation, Layer, QNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "safe-gain-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: QNetwork,
    pub seed: u64,
    /// SHA-256 of the canonical run configuration, hex encoded.
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC} {CHECKPOINT_VERSION}\nseed {}\nconfig_sha256 {}\nactivation {}\nlayers {}\n",
            self.seed,
            self.config_hash,
            self.net.activation.name(),
            self.net.layers.len()
        );
        let hex = |v: &[f64]| v.iter().map(|x| format!("{:016x}", x.to_bits())).collect::<Vec<_>>().join(" ");
        for l in &self.net.layers {
            out.push_str(&format!("layer {} {}\n", l.inputs, l.outputs));
            out.push_str(&format!("w {}\n", hex(&l.weights)));
            out.push_str(&format!("b {}\n", hex(&l.biases)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`, found `{line}`")))
        };
        let version = field(MAGIC)?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let seed = field("seed")?.parse().map_err(|_| bad("seed is not an integer"))?;
        let config_hash = field("config_sha256")?;
        let activation_name = field("activation")?;
        let activation =
            Activation::parse(&activation_name).ok_or_else(|| bad(&format!("unknown activation {activation_name}")))?;
        let count: usize = field("layers")?.parse().map_err(|_| bad("layer count is not an integer"))?;
        if count == 0 {
            return Err(bad("network has no layers"));
        }
        let parse_hex = |s: &str, expected: usize| -> Result<Vec<f64>> {
            let values = s
                .split_whitespace()
                .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("malformed parameter"))?;
            if values.len() != expected {
                return Err(bad(&format!("expected {expected} values, found {}", values.len())));
            }
            Ok(values)
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let shape = field("layer")?;
            let dims: Vec<usize> = shape
                .split_whitespace()
                .map(|d| d.parse().map_err(|_| bad("malformed layer shape")))
                .collect::<Result<_>>()?;
            let [inputs, outputs] = dims[..] else {
                return Err(bad("layer shape needs two dimensions"));
            };
            if let Some(prev) = layers.last().map(|l: &Layer| l.outputs) {
                if prev != inputs {
                    return Err(bad("layer shapes do not chain"));
                }
            }
            let weights = parse_hex(&field("w")?, inputs * outputs)?;
            let biases = parse_hex(&field("b")?, outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                biases,
            });
        }
        let net = QNetwork { layers, activation };
        if !net.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self {
            net,
            seed,
            config_hash,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut net = QNetwork::new(15, &[8, 8], 5, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(3));
        net.layers[0].biases[0] = -0.0;
        net.layers[2].biases[1] = f64::MIN_POSITIVE / 4.0;
        Checkpoint {
            net,
            seed: 3,
            config_hash: "ab".repeat(32),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_text(&c.to_text()).unwrap();
        assert_eq!(back.seed, c.seed);
        assert_eq!(back.config_hash, c.config_hash);
        let bits = |n: &QNetwork| n.parameters().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.net), bits(&c.net));
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let text = sample().to_text();
        assert!(Checkpoint::from_text(&text.replace("safe-gain-checkpoint 1", "safe-gain-checkpoint 9")).is_err());
        assert!(Checkpoint::from_text(&text.replace("layer 8 8", "layer 8 7")).is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(matches!(Checkpoint::from_text(&truncated), Err(Error::Checkpoint(_))));
    }
}
