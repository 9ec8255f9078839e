//! Token-classification finetuning, prediction, and the label-frequency
//! random baseline.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward, token_classification_loss, token_logits, Checkpoint, Mode, Parameters,
};
use crate::ner::conll::LabeledSequence;
use crate::ner::tags::{repair_iob2, Tag, TagSet};
use crate::optim::{linear_schedule, Adam, AdamConfig};
use crate::pretrain::trim_padding;
use crate::seed::{self, stream};
use crate::tokenizer::{Encoding, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub seed: u64,
    pub max_len: usize,
    pub adam: AdamConfig,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        FinetuneHyper {
            lr: 1e-3,
            batch_size: 16,
            epochs: 3,
            warmup_steps: 0,
            seed: 0,
            max_len: 128,
            adam: AdamConfig::default(),
        }
    }
}

/// A finetuned encoder with its vocabulary and tag set.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub params: Parameters,
    pub vocab: Vocabulary,
    pub tagset: TagSet,
    pub max_len: usize,
}

struct Prepared {
    encoding: Encoding,
    labels: Vec<usize>,
    mask: Vec<bool>,
}

/// Gold label on each word's first subword; every other position is masked
/// out of the loss.
fn prepare(
    seq: &LabeledSequence,
    vocab: &Vocabulary,
    tagset: &TagSet,
    max_len: usize,
) -> Result<Prepared> {
    if seq.tokens.len() != seq.labels.len() {
        return Err(Error::Shape("tokens and labels differ in length".into()));
    }
    let (encoding, firsts) = vocab.encode_words(&seq.tokens, max_len);
    let mut labels = vec![0; encoding.len()];
    let mut mask = vec![false; encoding.len()];
    for (label, pos) in seq.labels.iter().zip(firsts) {
        let id = tagset.id(label)?;
        if let Some(p) = pos {
            labels[p] = id;
            mask[p] = true;
        }
    }
    Ok(Prepared {
        encoding,
        labels,
        mask,
    })
}

fn check_compatible(
    params: &Parameters,
    vocab: &Vocabulary,
    ckpt_vocab: Option<&Vocabulary>,
) -> Result<()> {
    if params.config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint expects {} tokens, vocabulary has {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    if ckpt_vocab.is_some_and(|v| v.tokens() != vocab.tokens()) {
        return Err(Error::Config(
            "vocabulary differs from the checkpoint's".into(),
        ));
    }
    Ok(())
}

pub fn finetune(
    checkpoint: &Checkpoint,
    train: &[LabeledSequence],
    tagset: &TagSet,
    vocab: &Vocabulary,
    hyper: &FinetuneHyper,
) -> Result<Tagger> {
    if train.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = checkpoint.params.clone();
    check_compatible(&params, vocab, checkpoint.vocab.as_ref())?;
    if params.config.num_labels != tagset.num_labels() {
        params.reset_ner_head(
            tagset.num_labels(),
            seed::mix(&[hyper.seed, stream::HEAD_INIT]),
        );
    }
    let max_len = hyper.max_len.min(params.config.max_positions);

    // Canonical order first, so only the seed decides the visiting order.
    let mut sorted: Vec<&LabeledSequence> = train.iter().collect();
    sorted.sort();
    let data: Vec<Prepared> = sorted
        .into_iter()
        .map(|s| prepare(s, vocab, tagset, max_len))
        .collect::<Result<_>>()?;
    let data: Vec<Prepared> = data
        .into_iter()
        .filter(|p| p.mask.contains(&true))
        .collect();

    let per_epoch = data.len().div_ceil(hyper.batch_size) as u64;
    let total = per_epoch * hyper.epochs as u64;
    let mut adam = Adam::new(&params, hyper.adam);
    let mut step = 0u64;
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(&[hyper.seed, stream::ORDER, epoch as u64]));
        for chunk in order.chunks(hyper.batch_size) {
            let mut batch: Vec<Encoding> =
                chunk.iter().map(|&i| data[i].encoding.clone()).collect();
            trim_padding(&mut batch);
            let len = batch[0].len();
            let labels: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| data[i].labels[..len].to_vec())
                .collect();
            let mask: Vec<Vec<bool>> = chunk
                .iter()
                .map(|&i| data[i].mask[..len].to_vec())
                .collect();
            let mut out = forward(&params, &batch, Mode::Train { step })?;
            let loss = token_classification_loss(&params, &out, &labels, &mask)?;
            if !loss.value.is_finite() {
                return Err(Error::Diverged { step });
            }
            let grads = out.backward(&params, &loss)?;
            adam.step(
                &mut params,
                &grads,
                linear_schedule(step, total, hyper.warmup_steps, hyper.lr),
            );
            step += 1;
        }
    }
    Ok(Tagger {
        params,
        vocab: vocab.clone(),
        tagset: tagset.clone(),
        max_len,
    })
}

#[derive(Serialize, Deserialize)]
struct TaggerFile {
    format: String,
    entity_types: TagSet,
    max_len: usize,
    checkpoint: serde_json::Value,
}

const TAGGER_FORMAT: &str = "astrolm-tagger";

impl Tagger {
    pub fn new(
        checkpoint: &Checkpoint,
        vocab: &Vocabulary,
        tagset: &TagSet,
        max_len: usize,
    ) -> Result<Self> {
        check_compatible(&checkpoint.params, vocab, checkpoint.vocab.as_ref())?;
        if checkpoint.params.config.num_labels != tagset.num_labels() {
            return Err(Error::Config(format!(
                "checkpoint head has {} labels, tag set has {}",
                checkpoint.params.config.num_labels,
                tagset.num_labels()
            )));
        }
        Ok(Tagger {
            params: checkpoint.params.clone(),
            vocab: vocab.clone(),
            tagset: tagset.clone(),
            max_len: max_len.min(checkpoint.params.config.max_positions),
        })
    }

    /// Raw argmax tag at each word's first subword. Words cut off by
    /// `max_len` get `O`.
    pub fn predict_raw<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Tag>> {
        let (encoding, firsts) = self.vocab.encode_words(tokens, self.max_len);
        let mut batch = vec![encoding];
        trim_padding(&mut batch);
        let out = forward(&self.params, &batch, Mode::Eval)?;
        let logits = token_logits(&self.params, &out).remove(0);
        Ok(firsts
            .into_iter()
            .map(|pos| match pos {
                Some(p) => {
                    let row = logits.row(p);
                    let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    self.tagset.tag(best)
                }
                None => Tag::Outside,
            })
            .collect())
    }

    /// IOB2-valid labels, one per word.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut tags = self.predict_raw(tokens)?;
        repair_iob2(&mut tags);
        Ok(tags
            .into_iter()
            .map(|t| self.tagset.display(t).to_string())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint::new(self.params.clone(), Some(self.vocab.clone()));
        let file = TaggerFile {
            format: TAGGER_FORMAT.into(),
            entity_types: self.tagset.clone(),
            max_len: self.max_len,
            checkpoint: serde_json::from_str(&ckpt.to_json()?)?,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaggerFile = serde_json::from_str(text)?;
        if file.format != TAGGER_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a tagger file: {}",
                file.format
            )));
        }
        let ckpt = Checkpoint::from_json(&file.checkpoint.to_string())?;
        let vocab = ckpt
            .vocab
            .clone()
            .ok_or_else(|| Error::Checkpoint("tagger file lacks a vocabulary".into()))?;
        Tagger::new(&ckpt, &vocab, &file.entity_types, file.max_len)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Tagger::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn predict<S: AsRef<str>>(tagger: &Tagger, tokens: &[S]) -> Result<Vec<String>> {
    tagger.predict(tokens)
}

/// Empirical label distribution of a data set, keyed by label string.
pub fn label_frequencies(data: &[LabeledSequence]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for seq in data {
        for l in &seq.labels {
            *counts.entry(l.clone()).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(l, c)| (l, c as f64 / total as f64))
        .collect()
}

/// Draws every token's label independently from a fixed distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomBaseline {
    labels: Vec<String>,
    cdf: Vec<f64>,
    seed: u64,
}

pub fn random_baseline(
    frequencies: &BTreeMap<String, f64>,
    tagset: &TagSet,
    seed: u64,
) -> Result<RandomBaseline> {
    if frequencies.is_empty() {
        return Err(Error::invalid("empty label distribution"));
    }
    let mut labels = Vec::with_capacity(frequencies.len());
    let mut cdf = Vec::with_capacity(frequencies.len());
    let mut acc = 0.0;
    // Tag-set order, so the draw does not depend on label spelling.
    let mut entries: Vec<(usize, &String, f64)> = frequencies
        .iter()
        .map(|(l, &p)| tagset.id(l).map(|id| (id, l, p)))
        .collect::<Result<_>>()?;
    entries.sort_by_key(|e| e.0);
    for (_, label, p) in entries {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::invalid(format!("probability {p} for {label}")));
        }
        acc += p;
        labels.push(label.clone());
        cdf.push(acc);
    }
    if (acc - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("label probabilities sum to {acc}")));
    }
    Ok(RandomBaseline { labels, cdf, seed })
}

impl RandomBaseline {
    /// The label at token `position` of sequence `sequence`; a pure function
    /// of `(seed, sequence, position)`.
    pub fn label_at(&self, sequence: usize, position: usize) -> &str {
        let u = seed::unit(&[
            self.seed,
            stream::BASELINE,
            sequence as u64,
            position as u64,
        ]) * self.cdf.last().unwrap();
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.labels.len() - 1);
        &self.labels[i]
    }

    pub fn predict_sequence(&self, sequence: usize, len: usize) -> Vec<String> {
        (0..len)
            .map(|p| self.label_at(sequence, p).to_string())
            .collect()
    }
}

/// Anything that labels a list of word sequences.
pub trait SequenceLabeler {
    fn label_all(&self, sequences: &[Vec<String>]) -> Result<Vec<Vec<String>>>;
}

impl SequenceLabeler for Tagger {
    fn label_all(&self, sequences: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        sequences.iter().map(|s| self.predict(s)).collect()
    }
}

impl SequenceLabeler for RandomBaseline {
    fn label_all(&self, sequences: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        Ok(sequences
            .iter()
            .enumerate()
            .map(|(i, s)| self.predict_sequence(i, s.len()))
            .collect())
    }
}
