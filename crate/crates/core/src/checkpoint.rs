//! JSON checkpoints for the ranker and its optimizer state.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! checkpoint reloads bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{AdamConfig, AdamState, RankerDims, RankerParams};

const FORMAT: &str = "klredact-ranker";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RankerCheckpoint {
    pub params: RankerParams,
    pub adam: Option<AdamState>,
    pub seed: u64,
    /// Free-form run configuration recorded alongside the weights.
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdamRecord {
    #[serde(flatten)]
    config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    format: String,
    version: u32,
    seed: u64,
    dims: RankerDims,
    layers: Vec<LayerRecord>,
    adam: Option<AdamRecord>,
    #[serde(default)]
    metadata: serde_json::Value,
}

impl RankerCheckpoint {
    pub fn new(params: RankerParams, adam: Option<AdamState>, seed: u64) -> Self {
        RankerCheckpoint {
            params,
            adam,
            seed,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = (0..4)
            .map(|l| LayerRecord {
                weights: self.params.weights(l).to_vec(),
                bias: self.params.bias(l).to_vec(),
            })
            .collect();
        let adam = self.adam.as_ref().map(|s| AdamRecord {
            config: s.config,
            t: s.step_count(),
            m: s.first_moment().to_vec(),
            v: s.second_moment().to_vec(),
        });
        let record = CheckpointRecord {
            format: FORMAT.to_owned(),
            version: VERSION,
            seed: self.seed,
            dims: self.params.dims(),
            layers,
            adam,
            metadata: self.metadata.clone(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: CheckpointRecord = serde_json::from_str(text)?;
        if record.format != FORMAT || record.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                record.format, record.version
            )));
        }
        let dims = RankerDims::new(record.dims.input, record.dims.hidden)?;
        if record.layers.len() != 4 {
            return Err(Error::invalid("checkpoint must hold exactly 4 layers"));
        }
        let mut flat = Vec::with_capacity(dims.num_params());
        for (layer, (fan_in, fan_out)) in record.layers.into_iter().zip(dims.layer_shapes()) {
            if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
                return Err(Error::invalid("checkpoint layer shape disagrees with dims"));
            }
            flat.extend(layer.weights);
            flat.extend(layer.bias);
        }
        let params = RankerParams::from_flat(dims, flat)?;
        let adam = match record.adam {
            Some(a) => {
                if a.m.len() != dims.num_params() {
                    return Err(Error::DimensionMismatch {
                        expected: dims.num_params(),
                        actual: a.m.len(),
                    });
                }
                Some(AdamState::from_parts(a.config, a.m, a.v, a.t)?)
            }
            None => None,
        };
        Ok(RankerCheckpoint {
            params,
            adam,
            seed: record.seed,
            metadata: record.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RankerCheckpoint::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn checkpoint_round_trips_bit_exactly(seed in any::<u64>(), scale in -1e6f64..1e6, t in 0u64..1000) {
            let dims = RankerDims::new(3, [4, 3, 2]).unwrap();
            let mut params = RankerParams::init(dims, seed);
            params.as_mut_slice()[0] *= scale;
            params.as_mut_slice()[1] = 1e-300;
            let n = dims.num_params();
            let m: Vec<f64> = (0..n).map(|i| (i as f64 + 0.1).sin() / 3.0).collect();
            let v: Vec<f64> = (0..n).map(|i| (i as f64).exp2().recip()).collect();
            let adam = AdamState::from_parts(AdamConfig::default(), m, v, t).unwrap();
            let mut ckpt = RankerCheckpoint::new(params, Some(adam), seed);
            ckpt.metadata = serde_json::json!({"note": "x"});
            let back = RankerCheckpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            let bits = |p: &RankerParams| p.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.params), bits(&ckpt.params));
            prop_assert_eq!(&back, &ckpt);
        }
    }

    #[test]
    fn rejects_shape_and_format_problems() {
        let dims = RankerDims::new(2, [2, 2, 2]).unwrap();
        let ckpt = RankerCheckpoint::new(RankerParams::init(dims, 1), None, 1);
        let json = ckpt.to_json().unwrap();
        let bad = json.replacen("\"input\": 2", "\"input\": 3", 1);
        assert!(RankerCheckpoint::from_json(&bad).is_err());
        let bad = json.replacen("klredact-ranker", "other", 1);
        assert!(RankerCheckpoint::from_json(&bad).is_err());
        let file = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(file.path()).unwrap();
        assert_eq!(RankerCheckpoint::load(file.path()).unwrap(), ckpt);
    }
}
