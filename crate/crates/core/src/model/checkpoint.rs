//! JSON checkpoint container: model config, optional vocabulary, and named
//! row-major tensors with explicit dims. Floats round-trip bitwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::tensor::Matrix;
use crate::tokenizer::Vocabulary;

const FORMAT: &str = "astrolm-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    dims: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
    #[serde(default)]
    lowercase: bool,
    tensors: Vec<NamedTensor>,
}

/// Parameters plus the vocabulary they were trained with, when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub vocab: Option<Vocabulary>,
}

impl Checkpoint {
    pub fn new(params: Parameters, vocab: Option<Vocabulary>) -> Self {
        Checkpoint { params, vocab }
    }

    pub fn to_json(&self) -> Result<String> {
        let container = Container {
            format: FORMAT.into(),
            version: VERSION,
            config: self.params.config.clone(),
            vocab: self.vocab.as_ref().map(|v| v.tokens().to_vec()),
            lowercase: self.vocab.as_ref().is_some_and(Vocabulary::lowercase),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    dims: [m.rows(), m.cols()],
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&container)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let container: Container = serde_json::from_str(text)?;
        if container.format != FORMAT || container.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                container.format, container.version
            )));
        }
        let mut params = Parameters::zeros(&container.config)?;
        let mut stored: std::collections::HashMap<String, NamedTensor> = container
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        for (name, slot) in params.tensors_mut() {
            let t = stored
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims != [slot.rows(), slot.cols()] || t.data.len() != t.dims[0] * t.dims[1] {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has dims {:?}, config implies {:?}",
                    t.dims,
                    slot.shape()
                )));
            }
            *slot = Matrix::from_vec(t.dims[0], t.dims[1], t.data);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        let vocab = container
            .vocab
            .map(|tokens| {
                Vocabulary::from_tokens(tokens).map(|v| v.with_lowercase(container.lowercase))
            })
            .transpose()?;
        if let Some(v) = &vocab {
            if v.len() != params.config.vocab_size {
                return Err(Error::Checkpoint(format!(
                    "vocabulary has {} tokens, config says {}",
                    v.len(),
                    params.config.vocab_size
                )));
            }
        }
        Ok(Checkpoint { params, vocab })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
