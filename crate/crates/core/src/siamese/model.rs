use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::dataset::Standardizer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative from the pre-activation `z` and output `h`; 0 at the relu kink.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu, tanh)")),
        }
    }
}

/// Fully connected embedding network shared by every branch of a triplet.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs with
/// a row-major `out × in` weight matrix. Hidden layers use `activation`, the
/// output layer is linear and optionally projected onto the unit sphere.
/// When a standardizer is attached, raw features are z-scored first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub normalize_output: bool,
    pub standardizer: Option<Standardizer>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradient (or optimizer moment) with the same shape as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn scale(&mut self, c: f64) {
        self.iter_mut().for_each(|g| *g *= c);
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Forward {
    /// `h[0]` is the (standardized) input, `h[l + 1]` the output of layer `l`.
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

impl Forward {
    /// Smallest |pre-activation| over hidden relu units.
    pub fn min_relu_margin(&self, activation: Activation) -> f64 {
        if activation != Activation::Relu {
            return f64::INFINITY;
        }
        self.z[..self.z.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

/// Xavier-uniform weights from a seeded generator, zero biases.
pub fn init_model(
    layer_sizes: &[usize],
    activation: Activation,
    normalize_output: bool,
    seed: u64,
) -> Result<EmbeddingModel, ModelError> {
    if layer_sizes.len() < 2 {
        return Err(ModelError::TooFewLayers(layer_sizes.len()));
    }
    if layer_sizes.contains(&0) {
        return Err(ModelError::ZeroLayerSize);
    }
    let mut rng = seed::rng(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect(),
        );
        biases.push(vec![0.0; fan_out]);
    }
    Ok(EmbeddingModel {
        layer_sizes: layer_sizes.to_vec(),
        activation,
        normalize_output,
        standardizer: None,
        weights,
        biases,
    })
}

impl EmbeddingModel {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn with_standardizer(mut self, standardizer: Standardizer) -> Self {
        self.standardizer = Some(standardizer);
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Shape and standardizer consistency, used after deserialization.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_sizes.len() < 2 {
            return Err(ModelError::TooFewLayers(self.layer_sizes.len()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(ModelError::ZeroLayerSize);
        }
        let layers = self.layer_sizes.len() - 1;
        let shapes_ok = self.weights.len() == layers
            && self.biases.len() == layers
            && self.layer_sizes.windows(2).enumerate().all(|(l, p)| {
                self.weights[l].len() == p[0] * p[1] && self.biases[l].len() == p[1]
            });
        if !shapes_ok {
            return Err(ModelError::ShapeMismatch);
        }
        if let Some(s) = &self.standardizer {
            if s.dim() != self.input_dim() {
                return Err(ModelError::DimensionMismatch {
                    expected: self.input_dim(),
                    found: s.dim(),
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Result<Forward, ModelError> {
        self.check_input(x)?;
        let input = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let layers = self.weights.len();
        let mut h = vec![input];
        let mut z = Vec::with_capacity(layers);
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &h[l];
            let w = &self.weights[l];
            let pre: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    self.biases[l][o] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let post = if l + 1 < layers {
                pre.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                pre.clone()
            };
            z.push(pre);
            h.push(post);
        }
        let raw = h.last().expect("output layer");
        let out = if self.normalize_output {
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                raw.iter().map(|v| v / norm).collect()
            } else {
                raw.clone()
            }
        } else {
            raw.clone()
        };
        Ok(Forward { h, z, out })
    }

    /// Accumulates `∂loss/∂params` into `grads` given `g_out = ∂loss/∂out`.
    pub(crate) fn backward(&self, fwd: &Forward, g_out: &[f64], grads: &mut Params) {
        let layers = self.weights.len();
        let mut g: Vec<f64> = if self.normalize_output {
            let raw = &fwd.h[layers];
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let u = &fwd.out;
                let ug: f64 = u.iter().zip(g_out).map(|(a, b)| a * b).sum();
                g_out.iter().zip(u).map(|(gi, ui)| (gi - ui * ug) / norm).collect()
            } else {
                vec![0.0; g_out.len()]
            }
        } else {
            g_out.to_vec()
        };
        for l in (0..layers).rev() {
            if l + 1 < layers {
                for (gi, (zi, hi)) in g.iter_mut().zip(fwd.z[l].iter().zip(&fwd.h[l + 1])) {
                    *gi *= self.activation.derivative(*zi, *hi);
                }
            }
            let n_in = self.layer_sizes[l];
            let prev = &fwd.h[l];
            let gw = &mut grads.weights[l];
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                for (gw_oi, p) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(prev) {
                    *gw_oi += go * p;
                }
                grads.biases[l][o] += go;
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut back = vec![0.0; n_in];
                for (o, go) in g.iter().enumerate() {
                    if *go == 0.0 {
                        continue;
                    }
                    for (b, wi) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *b += go * wi;
                    }
                }
                g = back;
            }
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(x)?.out)
    }

    /// Embeds every row, in parallel, preserving order.
    pub fn embed_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        rows.par_iter().map(|x| self.embed(x)).collect()
    }

    pub(crate) fn params(&self) -> Params {
        Params {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
    }

    pub(crate) fn params_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    /// SHA-256 over the architecture and the exact bit patterns of all
    /// parameters and standardizer values, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.layer_sizes {
            h.update((*s as u64).to_le_bytes());
        }
        h.update([self.activation as u8, u8::from(self.normalize_output)]);
        let mut put = |v: &f64| h.update(v.to_bits().to_le_bytes());
        if let Some(s) = &self.standardizer {
            s.mean.iter().chain(&s.scale).for_each(&mut put);
        }
        self.weights.iter().flatten().for_each(&mut put);
        self.biases.iter().flatten().for_each(&mut put);
        hex::encode(h.finalize())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    activation: Activation,
    normalize_output: bool,
    standardizer: Option<Standardizer>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    checksum: String,
}

impl ModelFile {
    fn new(model: &EmbeddingModel) -> Self {
        Self {
            layer_sizes: model.layer_sizes.clone(),
            activation: model.activation,
            normalize_output: model.normalize_output,
            standardizer: model.standardizer.clone(),
            weights: model.weights.clone(),
            biases: model.biases.clone(),
            checksum: model.checksum(),
        }
    }
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<(), ModelError> {
    let file = ModelFile::new(model);
    let text = serde_json::to_string_pretty(&file).map_err(|e| ModelError::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| ModelError::io(path, e))
}

/// Loads a model and rejects it when the stored checksum does not match.
pub fn load_model(path: &Path) -> Result<EmbeddingModel, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        ModelError::Io { message, .. } => ModelError::io(path, message),
        other => other,
    })
}

pub(crate) fn model_to_value(model: &EmbeddingModel) -> serde_json::Value {
    serde_json::to_value(ModelFile::new(model)).expect("model serializes")
}

pub(crate) fn model_from_json(text: &str) -> Result<EmbeddingModel, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::io(Path::new("<json>"), e))?;
    model_from_file(file)
}

pub(crate) fn model_from_value(value: serde_json::Value) -> Result<EmbeddingModel, ModelError> {
    let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::io(Path::new("<json>"), e))?;
    model_from_file(file)
}

fn model_from_file(file: ModelFile) -> Result<EmbeddingModel, ModelError> {
    let model = EmbeddingModel {
        layer_sizes: file.layer_sizes,
        activation: file.activation,
        normalize_output: file.normalize_output,
        standardizer: file.standardizer,
        weights: file.weights,
        biases: file.biases,
    };
    model.validate()?;
    let computed = model.checksum();
    if computed != file.checksum {
        return Err(ModelError::ChecksumMismatch {
            stored: file.checksum,
            computed,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[8, 16, 4], Activation::Relu, true, 1).unwrap();
        let b = init_model(&[8, 16, 4], Activation::Relu, true, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a, init_model(&[8, 16, 4], Activation::Relu, true, 2).unwrap());
        assert_eq!(a.parameter_count(), 8 * 16 + 16 + 16 * 4 + 4);
    }

    #[test]
    fn init_rejects_single_layer() {
        assert!(matches!(
            init_model(&[8], Activation::Relu, false, 0),
            Err(ModelError::TooFewLayers(1))
        ));
    }

    #[test]
    fn init_respects_xavier_bound() {
        let m = init_model(&[3, 2], Activation::Relu, false, 0).unwrap();
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(m.weights[0].iter().all(|w| w.abs() <= limit));
        assert!(m.biases[0].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let mut m = init_model(&[3, 5, 2], Activation::Relu, false, 0).unwrap();
        m.params_iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.embed(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut m = init_model(&[3, 3], Activation::Relu, false, 0).unwrap();
        m.weights[0] = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = [0.5, -1.5, 2.0];
        assert_eq!(m.embed(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = init_model(&[3, 2], Activation::Relu, false, 0).unwrap();
        assert!(matches!(
            m.embed(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn normalized_embeddings_have_unit_norm() {
        let m = init_model(&[5, 12, 4], Activation::Tanh, true, 3).unwrap();
        let mut rng = crate::seed::rng(7);
        for _ in 0..500 {
            let x: Vec<f64> = (0..5).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let e = m.embed(&x).unwrap();
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_matches_single() {
        let m = init_model(&[2, 4, 3], Activation::Relu, true, 5).unwrap();
        let rows = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        let batch = m.embed_batch(&rows).unwrap();
        assert_eq!(batch[1], m.embed(&rows[1]).unwrap());
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let m = init_model(&[3, 4, 2], Activation::Tanh, true, 9)
            .unwrap()
            .with_standardizer(Standardizer {
                mean: vec![0.1, 0.2, 0.3],
                scale: vec![1.0, 2.0, 3.0],
            });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["biases"][0][0] = serde_json::json!(0.5);
        std::fs::write(&path, value.to_string()).unwrap();
        assert!(matches!(load_model(&path), Err(ModelError::ChecksumMismatch { .. })));
    }
}
