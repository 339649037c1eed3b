//! JSON model files with base64 little-endian parameter arrays.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::net::{Activation, Layer, TransformNet, NUM_LAYERS};
use super::RankError;

const FORMAT: &str = "invrank-transform-net";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dim: usize,
    activation: Activation,
    seed: u64,
    held_out_fold: Option<u8>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: String,
    bias: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>, RankError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| RankError::Model(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(RankError::Model(format!(
            "expected {expected} parameters, found {} bytes",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RankError::Model("non-finite parameter".into()));
    }
    Ok(values)
}

pub fn model_file_name(fold: u8) -> String {
    format!("model-fold{fold}.json")
}

pub fn model_to_json(net: &TransformNet) -> String {
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        dim: net.dim,
        activation: net.activation,
        seed: net.seed,
        held_out_fold: net.held_out_fold,
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                weight: encode(&l.weight),
                bias: encode(&l.bias),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<TransformNet, RankError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| RankError::Model(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(RankError::Model(format!(
            "unsupported format {} v{}",
            file.format, file.version
        )));
    }
    if file.dim == 0 || file.layers.len() != NUM_LAYERS {
        return Err(RankError::Model(
            "expected 3 layers of positive dimension".into(),
        ));
    }
    let d = file.dim;
    let layers = file
        .layers
        .iter()
        .map(|l| {
            Ok(Layer {
                weight: decode(&l.weight, d * d)?,
                bias: decode(&l.bias, d)?,
            })
        })
        .collect::<Result<_, RankError>>()?;
    Ok(TransformNet {
        dim: d,
        layers,
        activation: file.activation,
        seed: file.seed,
        held_out_fold: file.held_out_fold,
    })
}

fn io(path: &Path, e: std::io::Error) -> RankError {
    RankError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn save_model(net: &TransformNet, path: &Path) -> Result<(), RankError> {
    fs::write(path, model_to_json(net)).map_err(|e| io(path, e))
}

pub fn load_model(path: &Path) -> Result<TransformNet, RankError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    model_from_json(&text)
}

/// Writes `epoch,mean_loss` rows, epochs numbered from 1.
pub fn write_training_log(losses: &[f64], path: &Path) -> Result<(), RankError> {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(path, out).map_err(|e| io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_bitwise() {
        let mut net = TransformNet::new(5, 77);
        net.held_out_fold = Some(3);
        net.layers[1].bias[2] = -0.0;
        let back = model_from_json(&model_to_json(&net)).unwrap();
        assert_eq!(back, net);
        let bits = |n: &TransformNet| n.params().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
    }

    #[test]
    fn rejects_malformed() {
        let net = TransformNet::identity(2);
        let good = model_to_json(&net);
        assert!(model_from_json(&good.replace(FORMAT, "other")).is_err());
        let truncated = good.replacen(&encode(&net.layers[0].bias), "AAAA", 1);
        assert!(matches!(
            model_from_json(&truncated),
            Err(RankError::Model(_))
        ));
        assert!(model_from_json("{}").is_err());
    }
}
