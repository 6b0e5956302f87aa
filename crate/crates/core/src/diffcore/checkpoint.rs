use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, ParameterSet, TensorBuffer};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u64 = 1;

/// On-disk parameter snapshot. `flat_data[i]` holds layer `i`'s weight
/// entries followed by its bias entries; `shapes[i]` is `[weight, bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub layer_names: Vec<String>,
    pub shapes: Vec<[Vec<usize>; 2]>,
    pub flat_data: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params(params: &ParameterSet) -> Self {
        let mut c = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            layer_names: Vec::new(),
            shapes: Vec::new(),
            flat_data: Vec::new(),
            scheduler: None,
        };
        for (name, layer) in params.iter() {
            c.layer_names.push(name.to_string());
            c.shapes
                .push([layer.weight.shape().to_vec(), layer.bias.shape().to_vec()]);
            c.flat_data.push(
                layer
                    .weight
                    .data()
                    .iter()
                    .chain(layer.bias.data())
                    .copied()
                    .collect(),
            );
        }
        c
    }

    pub fn to_params(&self) -> Result<ParameterSet> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                found: self.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if self.layer_names.len() != self.shapes.len() || self.shapes.len() != self.flat_data.len() {
            return Err(Error::contract("checkpoint arrays have different lengths"));
        }
        let mut params = ParameterSet::new();
        for ((name, [ws, bs]), data) in self.layer_names.iter().zip(&self.shapes).zip(&self.flat_data) {
            let nw: usize = ws.iter().product();
            if nw > data.len() {
                return Err(Error::Dimension {
                    layer: name.clone(),
                    expected: nw,
                    got: data.len(),
                });
            }
            let weight = TensorBuffer::new(ws.clone(), data[..nw].to_vec())?;
            let bias = TensorBuffer::new(bs.clone(), data[nw..].to_vec())?;
            params.push(name.clone(), Layer::new(weight, bias)?)?;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParameterSet::new();
        p.push("h", Layer::init(7, 3, 2f64.sqrt(), &mut rng)).unwrap();
        p.push("o", Layer::init(3, 1, 0.01, &mut rng)).unwrap();
        let text = serde_json::to_string(&Checkpoint::from_params(&p)).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let q = back.to_params().unwrap();
        for (a, b) in p.values().zip(q.values()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(p, q);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut c = Checkpoint::from_params(&ParameterSet::new());
        c.format_version = 9;
        assert!(matches!(c.to_params(), Err(Error::Version { found: 9, .. })));
    }
}
