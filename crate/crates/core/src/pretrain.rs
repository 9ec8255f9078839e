//! MLM + NSP example generation and the pretraining loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{
    forward, init_params, mlm_loss, nsp_logits, nsp_loss, Checkpoint, MaskedTarget, Mode,
    ModelConfig, Parameters,
};
use crate::optim::{linear_schedule, Adam, AdamConfig};
use crate::seed::{self, stream};
use crate::tokenizer::{Encoding, TokenId, Vocabulary, MASK, NUM_SPECIAL};

/// A segment pair for next-sentence prediction. Document fields are corpus
/// positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NspPair {
    pub segment_a: String,
    pub segment_b: String,
    pub is_next: bool,
    pub doc_a: usize,
    pub doc_b: usize,
}

/// One pair per adjacent paragraph pair in each document. The successor is
/// kept with probability one half; otherwise segment B is a uniformly drawn
/// paragraph of another document.
pub fn make_nsp_pairs(corpus: &Corpus, seed: u64) -> Result<Vec<NspPair>> {
    let docs = corpus.documents();
    let adjacent: usize = docs
        .iter()
        .map(|d| d.paragraphs.len().saturating_sub(1))
        .sum();
    if adjacent == 0 {
        return Ok(Vec::new());
    }
    if docs.iter().filter(|d| !d.paragraphs.is_empty()).count() < 2 {
        return Err(Error::invalid(
            "next-sentence negatives need paragraphs in at least two documents",
        ));
    }
    // offsets[d] = number of paragraphs in documents before d
    let mut offsets = Vec::with_capacity(docs.len() + 1);
    offsets.push(0usize);
    for d in docs {
        offsets.push(offsets.last().unwrap() + d.paragraphs.len());
    }
    let total = *offsets.last().unwrap();

    let mut pairs = Vec::with_capacity(adjacent);
    for (di, doc) in docs.iter().enumerate() {
        let mut rng = seed::rng(&[seed, stream::NSP, di as u64]);
        let own = doc.paragraphs.len();
        for i in 1..own {
            let segment_a = doc.paragraphs[i - 1].clone();
            if rng.random_bool(0.5) {
                pairs.push(NspPair {
                    segment_a,
                    segment_b: doc.paragraphs[i].clone(),
                    is_next: true,
                    doc_a: di,
                    doc_b: di,
                });
                continue;
            }
            let mut k = rng.random_range(0..total - own);
            if k >= offsets[di] {
                k += own;
            }
            let dj = offsets.partition_point(|&o| o <= k) - 1;
            pairs.push(NspPair {
                segment_a,
                segment_b: docs[dj].paragraphs[k - offsets[dj]].clone(),
                is_next: false,
                doc_a: di,
                doc_b: dj,
            });
        }
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingConfig {
    pub select_prob: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            select_prob: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(unit(self.select_prob) && unit(self.mask_prob) && unit(self.random_prob))
            || self.mask_prob + self.random_prob > 1.0 + 1e-12
        {
            return Err(Error::Config(format!("invalid masking ratios {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainExample {
    /// The pair encoding after masking.
    pub encoding: Encoding,
    pub is_next: bool,
    /// Ascending.
    pub masked_positions: Vec<usize>,
    /// Pre-masking ids, aligned with `masked_positions`.
    pub original_ids: Vec<TokenId>,
}

impl PretrainExample {
    pub fn with_is_next(mut self, is_next: bool) -> Self {
        self.is_next = is_next;
        self
    }

    pub fn targets(&self, sequence: usize) -> impl Iterator<Item = MaskedTarget> + '_ {
        self.masked_positions
            .iter()
            .zip(&self.original_ids)
            .map(move |(&position, &target)| MaskedTarget {
                sequence,
                position,
                target,
            })
    }
}

fn eligible(enc: &Encoding) -> Vec<usize> {
    (0..enc.len())
        .filter(|&p| !enc.special_mask[p] && enc.attention_mask[p] == 1)
        .collect()
}

/// Masks with the default 15% / 80-10-10 ratios. `is_next` is left false.
pub fn apply_masking(
    encoding: &Encoding,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<PretrainExample> {
    apply_masking_with(encoding, vocab, &MaskingConfig::default(), seed)
}

pub fn apply_masking_with(
    encoding: &Encoding,
    vocab: &Vocabulary,
    config: &MaskingConfig,
    seed: u64,
) -> Result<PretrainExample> {
    config.validate()?;
    let positions = eligible(encoding);
    if positions.is_empty() {
        return Err(Error::invalid("no maskable position in the encoding"));
    }
    if vocab.len() <= NUM_SPECIAL {
        return Err(Error::Vocabulary(
            "no non-special tokens to sample from".into(),
        ));
    }
    let mut rng = seed::rng(&[seed, stream::MASK]);
    let mut selected: Vec<usize> = positions
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < config.select_prob)
        .collect();
    if selected.is_empty() {
        selected.push(positions[0]);
    }
    let mut enc = encoding.clone();
    let mut original_ids = Vec::with_capacity(selected.len());
    for &p in &selected {
        original_ids.push(enc.ids[p]);
        let r: f64 = rng.random();
        let replacement = if r < config.mask_prob {
            Some(MASK)
        } else if r < config.mask_prob + config.random_prob {
            Some(rng.random_range(NUM_SPECIAL as TokenId..vocab.len() as TokenId))
        } else {
            None
        };
        if let Some(id) = replacement {
            enc.ids[p] = id;
            enc.tokens[p] = vocab.token(id).unwrap_or_default().to_string();
        }
    }
    Ok(PretrainExample {
        encoding: enc,
        is_next: false,
        masked_positions: selected,
        original_ids,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub seed: u64,
    /// Pair encodings are truncated and padded to this length, capped at the
    /// model's `max_positions`.
    pub max_len: usize,
    pub masking: MaskingConfig,
    pub adam: AdamConfig,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        PretrainHyper {
            lr: 1e-3,
            batch_size: 16,
            epochs: 1,
            warmup_steps: 0,
            seed: 0,
            max_len: 128,
            masking: MaskingConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// Index of the first entry of each epoch.
    pub fn epoch_starts(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| i == 0 || self.entries[i].epoch != self.entries[i - 1].epoch)
            .collect()
    }

    pub fn epoch_mean_mlm(&self, epoch: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.epoch == epoch)
            .map(|e| e.mlm_loss)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,mlm_loss,nsp_loss,lr")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.step, e.mlm_loss, e.nsp_loss, e.lr)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Drops padding columns shared by every sequence in the batch. Padded
/// positions are never attended, so the remaining outputs are unchanged.
pub fn trim_padding(batch: &mut [Encoding]) {
    let keep = batch.iter().map(Encoding::used_len).max().unwrap_or(0);
    for enc in batch {
        enc.ids.truncate(keep);
        enc.segment_ids.truncate(keep);
        enc.attention_mask.truncate(keep);
        enc.special_mask.truncate(keep);
        enc.tokens.truncate(keep);
    }
}

fn effective_len(hyper_len: usize, config: &ModelConfig) -> usize {
    hyper_len.min(config.max_positions)
}

/// Masked examples for one epoch, in corpus order. Pairs that leave no
/// maskable position are skipped.
pub fn epoch_examples(
    corpus: &Corpus,
    vocab: &Vocabulary,
    hyper: &PretrainHyper,
    max_len: usize,
    epoch: usize,
) -> Result<Vec<PretrainExample>> {
    let pairs = make_nsp_pairs(corpus, seed::mix(&[hyper.seed, epoch as u64]))?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let enc = vocab.encode_pair(&pair.segment_a, &pair.segment_b, max_len);
        if eligible(&enc).is_empty() {
            continue;
        }
        let key = seed::mix(&[hyper.seed, stream::MASK, epoch as u64, i as u64]);
        out.push(apply_masking_with(&enc, vocab, &hyper.masking, key)?.with_is_next(pair.is_next));
    }
    Ok(out)
}

/// Trains a fresh model on MLM + NSP. Bitwise reproducible for a given
/// `hyper.seed` and `config.seed`.
pub fn pretrain(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &ModelConfig,
    hyper: &PretrainHyper,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "config vocab_size {} but vocabulary has {} tokens",
            config.vocab_size,
            vocab.len()
        )));
    }
    if hyper.batch_size == 0 || !(hyper.lr.is_finite() && hyper.lr >= 0.0) {
        return Err(Error::Config(
            "batch_size must be positive and lr finite".into(),
        ));
    }
    hyper.masking.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let mut params = init_params(config)?;
    let mut log = TrainLog::default();
    if hyper.epochs == 0 {
        return Ok((Checkpoint::new(params, Some(vocab.clone())), log));
    }
    let max_len = effective_len(hyper.max_len, config);

    let mut epochs = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        epochs.push(epoch_examples(corpus, vocab, hyper, max_len, epoch)?);
    }
    let total: u64 = epochs
        .iter()
        .map(|e| e.len().div_ceil(hyper.batch_size) as u64)
        .sum();
    if total == 0 {
        return Err(Error::invalid("corpus yields no pretraining pairs"));
    }

    let mut adam = Adam::new(&params, hyper.adam);
    let mut step = 0u64;
    for (epoch, examples) in epochs.into_iter().enumerate() {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seed::rng(&[hyper.seed, stream::ORDER, epoch as u64]));
        for chunk in order.chunks(hyper.batch_size) {
            let mut batch: Vec<Encoding> = chunk
                .iter()
                .map(|&i| examples[i].encoding.clone())
                .collect();
            trim_padding(&mut batch);
            let targets: Vec<MaskedTarget> = chunk
                .iter()
                .enumerate()
                .flat_map(|(b, &i)| examples[i].targets(b))
                .collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| examples[i].is_next).collect();

            let mut out = forward(&params, &batch, Mode::Train { step })?;
            let mlm = mlm_loss(&params, &out, &targets)?;
            let nsp = nsp_loss(&params, &out, &labels)?;
            let (mlm_value, nsp_value) = (mlm.value, nsp.value);
            if !(mlm_value + nsp_value).is_finite() {
                return Err(Error::Diverged { step });
            }
            let grads = out.backward(&params, &(mlm + nsp))?;
            let lr = linear_schedule(step, total, hyper.warmup_steps, hyper.lr);
            adam.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::Diverged { step });
            }
            log.entries.push(LogEntry {
                step,
                epoch,
                mlm_loss: mlm_value,
                nsp_loss: nsp_value,
                lr,
            });
            step += 1;
        }
    }
    Ok((Checkpoint::new(params, Some(vocab.clone())), log))
}

/// Fraction of pairs whose NSP argmax matches the label, in eval mode.
pub fn nsp_accuracy(
    params: &Parameters,
    vocab: &Vocabulary,
    pairs: &[NspPair],
    max_len: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to score"));
    }
    let max_len = effective_len(max_len, &params.config);
    let mut correct = 0usize;
    for chunk in pairs.chunks(32) {
        let mut batch: Vec<Encoding> = chunk
            .iter()
            .map(|p| vocab.encode_pair(&p.segment_a, &p.segment_b, max_len))
            .collect();
        trim_padding(&mut batch);
        let out = forward(params, &batch, Mode::Eval)?;
        let logits = nsp_logits(params, &out);
        for (r, p) in chunk.iter().enumerate() {
            let predicted_next = logits.get(r, 0) >= logits.get(r, 1);
            correct += usize::from(predicted_next == p.is_next);
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::tokenizer::{CLS, PAD, SEP, SPECIAL_TOKENS};

    fn doc(id: &str, paragraphs: &[&str]) -> Document {
        Document {
            doc_id: id.into(),
            paragraphs: paragraphs.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    fn vocab() -> Vocabulary {
        let words = [
            "alpha", "beta", "gamma", "delta", "red", "green", "blue", "cyan",
        ];
        Vocabulary::from_tokens(SPECIAL_TOKENS.iter().chain(&words).copied()).unwrap()
    }

    #[test]
    fn single_paragraph_documents_give_no_pairs() {
        let c = Corpus::new(vec![doc("a", &["x"]), doc("b", &["y"])]).unwrap();
        assert!(make_nsp_pairs(&c, 1).unwrap().is_empty());
    }

    #[test]
    fn two_by_three_gives_four_reproducible_pairs() {
        let c = Corpus::new(vec![
            doc("a", &["a0", "a1", "a2"]),
            doc("b", &["b0", "b1", "b2"]),
        ])
        .unwrap();
        let pairs = make_nsp_pairs(&c, 9).unwrap();
        assert_eq!(pairs.len(), 4);
        let firsts: Vec<&str> = pairs.iter().map(|p| p.segment_a.as_str()).collect();
        assert_eq!(firsts, ["a0", "a1", "b0", "b1"]);
        for p in &pairs {
            if p.is_next {
                let next = format!(
                    "{}{}",
                    &p.segment_a[..1],
                    p.segment_a[1..].parse::<u32>().unwrap() + 1
                );
                assert_eq!(p.segment_b, next);
            } else {
                assert_ne!(p.segment_b[..1], p.segment_a[..1]);
            }
        }
        assert_eq!(pairs, make_nsp_pairs(&c, 9).unwrap());
    }

    #[test]
    fn adjacent_pairs_without_other_documents_are_rejected() {
        let c = Corpus::new(vec![doc("a", &["a0", "a1"]), doc("b", &[])]).unwrap();
        assert!(make_nsp_pairs(&c, 0).is_err());
    }

    #[test]
    fn is_next_fraction_is_balanced() {
        let docs: Vec<Document> = (0..100)
            .map(|d| {
                let ps: Vec<String> = (0..101).map(|i| format!("d{d}p{i}")).collect();
                Document {
                    doc_id: format!("d{d}"),
                    paragraphs: ps,
                    ..Default::default()
                }
            })
            .collect();
        let c = Corpus::new(docs).unwrap();
        let pairs = make_nsp_pairs(&c, 5).unwrap();
        assert_eq!(pairs.len(), 10_000);
        let frac = pairs.iter().filter(|p| p.is_next).count() as f64 / pairs.len() as f64;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
        assert!(pairs
            .iter()
            .filter(|p| !p.is_next)
            .all(|p| p.doc_a != p.doc_b));
    }

    #[test]
    fn masking_never_touches_specials_or_padding() {
        let v = vocab();
        let enc = v.encode_pair("alpha beta gamma", "red green", 12);
        for s in 0..200 {
            let ex = apply_masking(&enc, &v, s).unwrap();
            assert!(!ex.masked_positions.is_empty());
            for &p in &ex.masked_positions {
                assert!(![PAD, CLS, SEP].contains(&enc.ids[p]));
                assert_eq!(enc.attention_mask[p], 1);
            }
            assert_eq!(ex, apply_masking(&enc, &v, s).unwrap());
            let orig: Vec<TokenId> = ex.masked_positions.iter().map(|&p| enc.ids[p]).collect();
            assert_eq!(orig, ex.original_ids);
        }
    }

    #[test]
    fn lone_eligible_position_is_always_selected() {
        let v = vocab();
        let enc = v.encode("alpha", 6);
        for s in 0..50 {
            assert_eq!(
                apply_masking(&enc, &v, s).unwrap().masked_positions,
                vec![1]
            );
        }
    }

    #[test]
    fn nothing_to_mask_is_an_error() {
        let v = vocab();
        assert!(apply_masking(&v.encode("", 4), &v, 0).is_err());
    }

    #[test]
    fn trim_keeps_longest_used_prefix() {
        let v = vocab();
        let mut batch = vec![v.encode("alpha", 10), v.encode("alpha beta gamma", 10)];
        trim_padding(&mut batch);
        assert!(batch.iter().all(|e| e.len() == 5));
    }

    #[test]
    fn csv_has_header_and_one_line_per_step() {
        let log = TrainLog {
            entries: vec![
                LogEntry {
                    step: 0,
                    epoch: 0,
                    mlm_loss: 2.5,
                    nsp_loss: 0.5,
                    lr: 1e-3,
                },
                LogEntry {
                    step: 1,
                    epoch: 1,
                    mlm_loss: 2.0,
                    nsp_loss: 0.25,
                    lr: 5e-4,
                },
            ],
        };
        assert_eq!(
            log.to_csv(),
            "step,mlm_loss,nsp_loss,lr\n0,2.5,0.5,0.001\n1,2,0.25,0.0005\n"
        );
        assert_eq!(log.epoch_starts(), vec![0, 1]);
        assert_eq!(log.epoch_mean_mlm(1), Some(2.0));
    }
}
