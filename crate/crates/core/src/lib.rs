//! Desk-scale toolkit for domain-adapted BERT-style language models.
//!
//! The pipeline runs end to end on a laptop CPU:
//!
//! - [`corpus`]: citation-annotated document collections (JSON lines).
//! - [`tokenizer`]: WordPiece training and encoding.
//! - [`model`]: a small transformer encoder with MLM, NSP, token-classification
//!   and pooling heads, with hand-written backward passes.
//! - [`pretrain`]: MLM/NSP example generation and the pretraining loop.
//! - [`ner`]: IOB2 tagging, finetuning, the frequency baseline and metrics.
//! - [`sts`]: citation-context pair mining and bi-encoder training.
//! - [`report`]: metric files and model comparison tables.

pub mod corpus;
pub mod error;
pub mod model;
pub mod ner;
pub mod optim;
pub mod pretrain;
pub mod reference;
pub mod report;
pub mod seed;
pub mod sts;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;

pub use corpus::{load_corpus, Corpus, Document};
pub use error::{Error, Result};
pub use model::{init_params, Checkpoint, ModelConfig, Parameters};
pub use tensor::Matrix;
pub use tokenizer::{Encoding, Vocabulary};
