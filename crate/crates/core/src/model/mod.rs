//! A small post-layer-norm transformer encoder with BERT's heads.
//!
//! Forward and backward passes are written by hand per layer and run in
//! `f64`, which keeps finite-difference gradient checks meaningful.

mod checkpoint;
mod encoder;
mod heads;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{backward, forward, ForwardOutput, Mode};
pub use heads::{
    mean_pool, mean_pool_backward, mlm_loss, nsp_logits, nsp_loss, token_classification_loss,
    token_logits, Loss, MaskedTarget,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tensor::Matrix;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub type_vocab_size: usize,
    /// Output size of the token-classification head.
    pub num_labels: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ff_dim: 128,
            max_positions: 128,
            vocab_size: 0,
            type_vocab_size: 2,
            num_labels: 65,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The default desk-scale shape for a given vocabulary size.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
            ("type_vocab_size", self.type_vocab_size),
            ("num_labels", self.num_labels),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// `y = x · weight + bias`, with `weight` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        let b = self.bias.row(0);
        for r in 0..y.rows() {
            for (o, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        y
    }

    /// Accumulates weight/bias gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        x.matmul_tn_into(dy, &mut grad.weight);
        let gb = grad.bias.row_mut(0);
        for r in 0..dy.rows() {
            for (g, &d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        dy.matmul_nt(&self.weight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attention_output: Linear,
    pub attention_norm: LayerNorm,
    pub intermediate: Linear,
    pub output: Linear,
    pub output_norm: LayerNorm,
}

/// Every weight of the encoder and its heads. Shapes follow from `config`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub token_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub segment_embeddings: Matrix,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    pub pooler: Linear,
    pub mlm_transform: Linear,
    pub mlm_norm: LayerNorm,
    pub mlm_decoder: Linear,
    pub nsp_classifier: Linear,
    pub ner_classifier: Linear,
}

/// Gradients share the parameter layout.
pub type Gradients = Parameters;

fn push_linear<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

fn push_norm<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, n: &'a LayerNorm) {
    out.push((format!("{prefix}.gamma"), &n.gamma));
    out.push((format!("{prefix}.beta"), &n.beta));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, prefix: &str, l: &'a mut Linear) {
    out.push((format!("{prefix}.weight"), &mut l.weight));
    out.push((format!("{prefix}.bias"), &mut l.bias));
}

fn push_norm_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, prefix: &str, n: &'a mut LayerNorm) {
    out.push((format!("{prefix}.gamma"), &mut n.gamma));
    out.push((format!("{prefix}.beta"), &mut n.beta));
}

impl Parameters {
    /// All-zero tensors of the right shapes (layer-norm scales included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let ln = |d| LayerNorm {
            gamma: Matrix::zeros(1, d),
            beta: Matrix::zeros(1, d),
        };
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer {
                query: Linear::zeros(h, h),
                key: Linear::zeros(h, h),
                value: Linear::zeros(h, h),
                attention_output: Linear::zeros(h, h),
                attention_norm: ln(h),
                intermediate: Linear::zeros(h, config.ff_dim),
                output: Linear::zeros(config.ff_dim, h),
                output_norm: ln(h),
            })
            .collect();
        Ok(Parameters {
            config: config.clone(),
            token_embeddings: Matrix::zeros(config.vocab_size, h),
            position_embeddings: Matrix::zeros(config.max_positions, h),
            segment_embeddings: Matrix::zeros(config.type_vocab_size, h),
            embedding_norm: ln(h),
            layers,
            pooler: Linear::zeros(h, h),
            mlm_transform: Linear::zeros(h, h),
            mlm_norm: ln(h),
            mlm_decoder: Linear::zeros(h, config.vocab_size),
            nsp_classifier: Linear::zeros(h, 2),
            ner_classifier: Linear::zeros(h, config.num_labels),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Parameters::zeros(&self.config).expect("config was validated on construction")
    }

    /// Named tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_embeddings),
            ("embeddings.position".to_string(), &self.position_embeddings),
            ("embeddings.segment".to_string(), &self.segment_embeddings),
        ];
        push_norm(&mut out, "embeddings.norm", &self.embedding_norm);
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push_linear(&mut out, &format!("{p}.attention.query"), &l.query);
            push_linear(&mut out, &format!("{p}.attention.key"), &l.key);
            push_linear(&mut out, &format!("{p}.attention.value"), &l.value);
            push_linear(
                &mut out,
                &format!("{p}.attention.output"),
                &l.attention_output,
            );
            push_norm(&mut out, &format!("{p}.attention.norm"), &l.attention_norm);
            push_linear(&mut out, &format!("{p}.ffn.intermediate"), &l.intermediate);
            push_linear(&mut out, &format!("{p}.ffn.output"), &l.output);
            push_norm(&mut out, &format!("{p}.ffn.norm"), &l.output_norm);
        }
        push_linear(&mut out, "pooler", &self.pooler);
        push_linear(&mut out, "mlm.transform", &self.mlm_transform);
        push_norm(&mut out, "mlm.norm", &self.mlm_norm);
        push_linear(&mut out, "mlm.decoder", &self.mlm_decoder);
        push_linear(&mut out, "nsp.classifier", &self.nsp_classifier);
        push_linear(&mut out, "ner.classifier", &self.ner_classifier);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &mut self.token_embeddings),
            (
                "embeddings.position".to_string(),
                &mut self.position_embeddings,
            ),
            (
                "embeddings.segment".to_string(),
                &mut self.segment_embeddings,
            ),
        ];
        push_norm_mut(&mut out, "embeddings.norm", &mut self.embedding_norm);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            push_linear_mut(&mut out, &format!("{p}.attention.query"), &mut l.query);
            push_linear_mut(&mut out, &format!("{p}.attention.key"), &mut l.key);
            push_linear_mut(&mut out, &format!("{p}.attention.value"), &mut l.value);
            push_linear_mut(
                &mut out,
                &format!("{p}.attention.output"),
                &mut l.attention_output,
            );
            push_norm_mut(
                &mut out,
                &format!("{p}.attention.norm"),
                &mut l.attention_norm,
            );
            push_linear_mut(
                &mut out,
                &format!("{p}.ffn.intermediate"),
                &mut l.intermediate,
            );
            push_linear_mut(&mut out, &format!("{p}.ffn.output"), &mut l.output);
            push_norm_mut(&mut out, &format!("{p}.ffn.norm"), &mut l.output_norm);
        }
        push_linear_mut(&mut out, "pooler", &mut self.pooler);
        push_linear_mut(&mut out, "mlm.transform", &mut self.mlm_transform);
        push_norm_mut(&mut out, "mlm.norm", &mut self.mlm_norm);
        push_linear_mut(&mut out, "mlm.decoder", &mut self.mlm_decoder);
        push_linear_mut(&mut out, "nsp.classifier", &mut self.nsp_classifier);
        push_linear_mut(&mut out, "ner.classifier", &mut self.ner_classifier);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    /// Re-draws the token-classification head for `num_labels` outputs.
    pub fn reset_ner_head(&mut self, num_labels: usize, seed: u64) {
        self.config.num_labels = num_labels;
        let mut rng = seed::rng(&[seed, stream::HEAD_INIT]);
        let mut weight = Matrix::zeros(self.config.hidden_dim, num_labels);
        fill_truncated_normal(&mut weight, &mut rng);
        self.ner_classifier = Linear {
            weight,
            bias: Matrix::zeros(1, num_labels),
        };
    }
}

fn is_weight(name: &str) -> bool {
    (name.starts_with("embeddings.") && !name.starts_with("embeddings.norm"))
        || name.ends_with(".weight")
}

fn fill_truncated_normal<R: Rng>(m: &mut Matrix, rng: &mut R) {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for v in m.data_mut() {
        *v = loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        };
    }
}

/// Weights from a normal(0, 0.02) truncated at two standard deviations,
/// zero biases, unit layer-norm scales. Fully determined by `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    let mut params = Parameters::zeros(config)?;
    let mut rng = seed::rng(&[config.seed, stream::INIT]);
    for (name, m) in params.tensors_mut() {
        if name.ends_with(".gamma") {
            m.fill(1.0);
        } else if is_weight(&name) {
            fill_truncated_normal(m, &mut rng);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 16,
            max_positions: 12,
            num_labels: 5,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small()).unwrap();
        let b = init_params(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 1;
        assert_ne!(a, init_params(&other).unwrap());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            hidden_dim: 8,
            num_heads: 3,
            ..small()
        };
        assert!(matches!(init_params(&cfg), Err(Error::Config(_))));
        let cfg = ModelConfig {
            dropout_rate: 1.0,
            ..small()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_values_are_bounded() {
        let p = init_params(&ModelConfig::desk(50)).unwrap();
        for (name, m) in p.tensors() {
            if name.ends_with(".gamma") {
                assert!(m.data().iter().all(|&v| v == 1.0), "{name}");
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                assert!(m.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert!(m.data().iter().all(|v| v.abs() <= 0.04), "{name}");
                assert!(m.data().iter().any(|&v| v != 0.0), "{name}");
            }
        }
    }

    #[test]
    fn tensor_names_are_unique_and_ordered() {
        let p = init_params(&small()).unwrap();
        let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut q = p.clone();
        let names_mut: Vec<_> = q.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
    }
}
