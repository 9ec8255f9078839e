//! Citation-context sentence pairs and a siamese bi-encoder trained with
//! in-batch negatives.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{forward, mean_pool, mean_pool_backward, Checkpoint, Loss, Mode, Parameters};
use crate::optim::{linear_schedule, Adam, AdamConfig};
use crate::pretrain::trim_padding;
use crate::seed::{self, stream};
use crate::tensor::{dot, log_sum_exp, norm};
use crate::tokenizer::{Encoding, Vocabulary};

/// Which text around a citation marker becomes the query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// The whole paragraph holding the marker.
    #[default]
    Containing,
    /// The paragraph cut at the marker's offset.
    Prefix,
    /// The paragraph before the one holding the marker.
    Previous,
}

impl ContextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::Containing => "containing",
            ContextMode::Prefix => "prefix",
            ContextMode::Previous => "previous",
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "containing" => Ok(ContextMode::Containing),
            "prefix" => Ok(ContextMode::Prefix),
            "previous" => Ok(ContextMode::Previous),
            other => Err(Error::invalid(format!("unknown context mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningOptions {
    pub context_mode: ContextMode,
    /// Queries with fewer code points are dropped.
    pub min_chars: usize,
    /// Longer queries keep the code points nearest the marker: the tail in
    /// `prefix` mode, the head otherwise.
    pub max_chars: Option<usize>,
    /// When false, a cited document without an abstract contributes its
    /// title instead, if it has one.
    pub drop_missing_abstract: bool,
}

impl Default for MiningOptions {
    fn default() -> Self {
        MiningOptions {
            context_mode: ContextMode::Containing,
            min_chars: 0,
            max_chars: None,
            drop_missing_abstract: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationPair {
    pub query_text: String,
    pub positive_text: String,
    pub citing_doc_id: String,
    pub cited_doc_id: String,
    pub paragraph_index: usize,
}

/// Why citations did not become pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub citations: usize,
    pub dangling: usize,
    pub self_citations: usize,
    pub missing_abstract: usize,
    pub duplicates: usize,
    pub no_context: usize,
    pub too_short: usize,
    pub pairs: usize,
}

fn query_text(
    paragraphs: &[String],
    index: usize,
    offset: usize,
    opts: &MiningOptions,
) -> Option<String> {
    let text: String = match opts.context_mode {
        ContextMode::Containing => paragraphs[index].trim().to_string(),
        ContextMode::Prefix => paragraphs[index]
            .chars()
            .take(offset)
            .collect::<String>()
            .trim()
            .to_string(),
        ContextMode::Previous => paragraphs[index.checked_sub(1)?].trim().to_string(),
    };
    let text = match opts.max_chars {
        Some(max) if text.chars().count() > max => {
            let n = text.chars().count();
            let kept: String = if opts.context_mode == ContextMode::Prefix {
                text.chars().skip(n - max).collect()
            } else {
                text.chars().take(max).collect()
            };
            kept.trim().to_string()
        }
        _ => text,
    };
    (!text.is_empty()).then_some(text)
}

pub fn mine_pairs(corpus: &Corpus, opts: &MiningOptions) -> Vec<CitationPair> {
    mine_pairs_with_stats(corpus, opts).0
}

/// Pairs in corpus order, then paragraph, then marker offset.
pub fn mine_pairs_with_stats(
    corpus: &Corpus,
    opts: &MiningOptions,
) -> (Vec<CitationPair>, MiningStats) {
    let mut stats = MiningStats::default();
    let mut pairs = Vec::new();
    for doc in corpus.documents() {
        let mut citations: Vec<_> = doc.citations.iter().collect();
        citations.sort_by_key(|c| (c.paragraph_index, c.char_offset));
        let mut seen: HashSet<(usize, &str)> = HashSet::new();
        for c in citations {
            stats.citations += 1;
            let Some(cited) = corpus.get(&c.target_doc_id) else {
                stats.dangling += 1;
                continue;
            };
            if cited.doc_id == doc.doc_id {
                stats.self_citations += 1;
                continue;
            }
            let positive = if !cited.abstract_text.trim().is_empty() {
                cited.abstract_text.clone()
            } else if !opts.drop_missing_abstract && !cited.title.trim().is_empty() {
                cited.title.clone()
            } else {
                stats.missing_abstract += 1;
                continue;
            };
            if !seen.insert((c.paragraph_index, c.target_doc_id.as_str())) {
                stats.duplicates += 1;
                continue;
            }
            let Some(query) = query_text(&doc.paragraphs, c.paragraph_index, c.char_offset, opts)
            else {
                stats.no_context += 1;
                continue;
            };
            if query.chars().count() < opts.min_chars {
                stats.too_short += 1;
                continue;
            }
            pairs.push(CitationPair {
                query_text: query,
                positive_text: positive,
                citing_doc_id: doc.doc_id.clone(),
                cited_doc_id: cited.doc_id.clone(),
                paragraph_index: c.paragraph_index,
            });
        }
    }
    stats.pairs = pairs.len();
    (pairs, stats)
}

pub fn write_pairs<W: Write>(pairs: &[CitationPair], mut out: W) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io("<pairs>", e))?;
    }
    Ok(())
}

pub fn pairs_to_jsonl(pairs: &[CitationPair]) -> String {
    let mut buf = Vec::new();
    write_pairs(pairs, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_pairs<R: BufRead>(reader: R, path: &Path) -> Result<Vec<CitationPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: CitationPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<CitationPair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(std::io::BufReader::new(file), path)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSplits {
    pub train: Vec<CitationPair>,
    pub validation: Vec<CitationPair>,
    pub test: Vec<CitationPair>,
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier
/// share.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Partitions pairs by citing document into train / validation / test.
pub fn split_pairs(pairs: &[CitationPair], ratios: [f64; 3], seed: u64) -> Result<PairSplits> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let docs: BTreeSet<&str> = pairs.iter().map(|p| p.citing_doc_id.as_str()).collect();
    let mut docs: Vec<&str> = docs.into_iter().collect();
    let wanted = ratios.iter().filter(|&&r| r > 0.0).count();
    if docs.len() < wanted {
        return Err(Error::invalid(format!(
            "{} citing documents cannot fill {wanted} splits",
            docs.len()
        )));
    }
    docs.shuffle(&mut seed::rng(&[seed, stream::SPLIT]));
    let counts = apportion(docs.len(), &ratios);
    let mut assignment = std::collections::HashMap::new();
    let mut next = docs.into_iter();
    for (split, &count) in counts.iter().enumerate() {
        for doc in next.by_ref().take(count) {
            assignment.insert(doc, split);
        }
    }
    let mut out = PairSplits::default();
    for p in pairs {
        match assignment[p.citing_doc_id.as_str()] {
            0 => out.train.push(p.clone()),
            1 => out.validation.push(p.clone()),
            _ => out.test.push(p.clone()),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
}

/// An encoder whose L2-normalized mean-pooled output is the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub params: Parameters,
    pub vocab: Vocabulary,
    pub max_len: usize,
    pub pooling: Pooling,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    format: String,
    pooling: Pooling,
    max_len: usize,
    checkpoint: serde_json::Value,
}

const EMBEDDING_FORMAT: &str = "astrolm-embedding";

impl EmbeddingModel {
    pub fn new(checkpoint: &Checkpoint, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if checkpoint.params.config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "checkpoint expects {} tokens, vocabulary has {}",
                checkpoint.params.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(EmbeddingModel {
            params: checkpoint.params.clone(),
            vocab: vocab.clone(),
            max_len: max_len.min(checkpoint.params.config.max_positions),
            pooling: Pooling::Mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.config.hidden_dim
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint::new(self.params.clone(), Some(self.vocab.clone()));
        let file = EmbeddingFile {
            format: EMBEDDING_FORMAT.into(),
            pooling: self.pooling,
            max_len: self.max_len,
            checkpoint: serde_json::from_str(&ckpt.to_json()?)?,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EmbeddingFile = serde_json::from_str(text)?;
        if file.format != EMBEDDING_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not an embedding model: {}",
                file.format
            )));
        }
        let ckpt = Checkpoint::from_json(&file.checkpoint.to_string())?;
        let vocab = ckpt
            .vocab
            .clone()
            .ok_or_else(|| Error::Checkpoint("embedding model lacks a vocabulary".into()))?;
        EmbeddingModel::new(&ckpt, &vocab, file.max_len)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        EmbeddingModel::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn encode(&self, text: &str) -> Result<Encoding> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        Ok(self.vocab.encode(text, self.max_len))
    }

    /// One unit vector per text.
    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(32) {
            let mut batch: Vec<Encoding> = chunk
                .iter()
                .map(|t| self.encode(t.as_ref()))
                .collect::<Result<_>>()?;
            trim_padding(&mut batch);
            let fwd = forward(&self.params, &batch, Mode::Eval)?;
            for v in mean_pool(&fwd, &fwd.attention_masks)? {
                out.push(normalize(&v).0);
            }
        }
        Ok(out)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

pub fn embed(model: &EmbeddingModel, text: &str) -> Result<Vec<f64>> {
    model.embed(text)
}

/// Unit vector and the original norm. A zero vector stays zero.
fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(v);
    if n == 0.0 {
        return (v.to_vec(), 0.0);
    }
    (v.iter().map(|x| x / n).collect(), n)
}

/// Gradient through `u = x / |x|` given `du`.
fn normalize_backward(u: &[f64], n: f64, du: &[f64]) -> Vec<f64> {
    let proj = dot(u, du);
    u.iter()
        .zip(du)
        .map(|(ui, di)| (di - ui * proj) / n)
        .collect()
}

/// Cosine similarity.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// In-batch negatives loss over unit vectors: mean cross-entropy of matching
/// query `i` to positive `i` with logits `q_i . p_j / temperature`. Returns
/// the loss and its gradients with respect to the queries and positives.
pub fn contrastive_loss(
    queries: &[Vec<f64>],
    positives: &[Vec<f64>],
    temperature: f64,
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = queries.len();
    let dim = queries.first().map_or(0, Vec::len);
    let mut dq = vec![vec![0.0; dim]; b];
    let mut dp = vec![vec![0.0; dim]; b];
    let mut total = 0.0;
    for i in 0..b {
        let logits: Vec<f64> = positives
            .iter()
            .map(|p| dot(&queries[i], p) / temperature)
            .collect();
        let lse = log_sum_exp(&logits);
        total += lse - logits[i];
        for j in 0..b {
            let g =
                ((logits[j] - lse).exp() - f64::from(u8::from(i == j))) / (b as f64 * temperature);
            for d in 0..dim {
                dq[i][d] += g * positives[j][d];
                dp[j][d] += g * queries[i][d];
            }
        }
    }
    (total / b as f64, dq, dp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StsHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    pub max_len: usize,
    pub adam: AdamConfig,
}

impl Default for StsHyper {
    fn default() -> Self {
        StsHyper {
            lr: 1e-4,
            batch_size: 16,
            epochs: 1,
            temperature: 0.05,
            warmup_steps: 0,
            seed: 0,
            max_len: 128,
            adam: AdamConfig::default(),
        }
    }
}

/// Per-step training loss.
pub type StsLog = Vec<f64>;

pub fn train_biencoder(
    checkpoint: &Checkpoint,
    pairs: &[CitationPair],
    vocab: &Vocabulary,
    hyper: &StsHyper,
) -> Result<EmbeddingModel> {
    train_biencoder_logged(checkpoint, pairs, vocab, hyper).map(|(m, _)| m)
}

/// Queries and positives pass through one shared encoder in a single batch.
/// A trailing batch of one pair has no negatives and is skipped.
pub fn train_biencoder_logged(
    checkpoint: &Checkpoint,
    pairs: &[CitationPair],
    vocab: &Vocabulary,
    hyper: &StsHyper,
) -> Result<(EmbeddingModel, StsLog)> {
    if hyper.batch_size < 2 {
        return Err(Error::Config(
            "in-batch negatives need batch_size >= 2".into(),
        ));
    }
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two pairs"));
    }
    if hyper.temperature.is_nan() || hyper.temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let mut model = EmbeddingModel::new(checkpoint, vocab, hyper.max_len)?;
    let encode = |t: &str| model.encode(t);
    let queries: Vec<Encoding> = pairs
        .iter()
        .map(|p| encode(&p.query_text))
        .collect::<Result<_>>()?;
    let positives: Vec<Encoding> = pairs
        .iter()
        .map(|p| encode(&p.positive_text))
        .collect::<Result<_>>()?;

    let per_epoch =
        (pairs.len() / hyper.batch_size + usize::from(pairs.len() % hyper.batch_size >= 2)) as u64;
    let total = per_epoch * hyper.epochs as u64;
    let mut adam = Adam::new(&model.params, hyper.adam);
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut seed::rng(&[hyper.seed, stream::ORDER, epoch as u64]));
        for chunk in order.chunks(hyper.batch_size).filter(|c| c.len() >= 2) {
            let b = chunk.len();
            let mut batch: Vec<Encoding> = chunk.iter().map(|&i| queries[i].clone()).collect();
            batch.extend(chunk.iter().map(|&i| positives[i].clone()));
            trim_padding(&mut batch);
            let params = &model.params;
            let mut out = forward(params, &batch, Mode::Train { step })?;
            let pooled = mean_pool(&out, &out.attention_masks)?;
            let normed: Vec<(Vec<f64>, f64)> = pooled.iter().map(|v| normalize(v)).collect();
            let units: Vec<Vec<f64>> = normed.iter().map(|(u, _)| u.clone()).collect();
            let (value, dq, dp) = contrastive_loss(&units[..b], &units[b..], hyper.temperature);
            if !value.is_finite() {
                return Err(Error::Diverged { step });
            }
            let d_units = dq.into_iter().chain(dp);
            let d_pooled: Vec<Vec<f64>> = normed
                .iter()
                .zip(d_units)
                .map(|((u, n), du)| normalize_backward(u, *n, &du))
                .collect();
            let d_hidden = mean_pool_backward(&d_pooled, &out.attention_masks);
            let loss = Loss::from_hidden_gradient(params, &out, value, d_hidden)?;
            let grads = out.backward(params, &loss)?;
            let lr = linear_schedule(step, total, hyper.warmup_steps, hyper.lr);
            adam.step(&mut model.params, &grads, lr);
            log.push(value);
            step += 1;
        }
    }
    Ok((model, log))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub recall_at_k: f64,
    pub mean_reciprocal_rank: f64,
}

/// Rank of each query's own positive among all positives (1-based). Ties go
/// to the earlier pair.
pub fn own_positive_ranks(queries: &[Vec<f64>], positives: &[Vec<f64>]) -> Result<Vec<usize>> {
    if queries.len() != positives.len() {
        return Err(Error::Shape("queries and positives differ in count".into()));
    }
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let scores: Vec<f64> = positives
                .iter()
                .map(|p| similarity(q, p))
                .collect::<Result<_>>()?;
            let own = scores[i];
            Ok(1 + scores
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > own || (s == own && j < i))
                .count())
        })
        .collect()
}

pub fn retrieval_metrics(
    queries: &[Vec<f64>],
    positives: &[Vec<f64>],
    k: usize,
) -> Result<RetrievalMetrics> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if queries.len() < 2 {
        return Err(Error::invalid("retrieval needs at least two pairs"));
    }
    let ranks = own_positive_ranks(queries, positives)?;
    let n = ranks.len() as f64;
    Ok(RetrievalMetrics {
        recall_at_k: ranks.iter().filter(|&&r| r <= k).count() as f64 / n,
        mean_reciprocal_rank: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
    })
}

pub fn evaluate_retrieval(
    model: &EmbeddingModel,
    test_pairs: &[CitationPair],
    k: usize,
) -> Result<RetrievalMetrics> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let q: Vec<&str> = test_pairs.iter().map(|p| p.query_text.as_str()).collect();
    let p: Vec<&str> = test_pairs
        .iter()
        .map(|p| p.positive_text.as_str())
        .collect();
    retrieval_metrics(&model.embed_batch(&q)?, &model.embed_batch(&p)?, k)
}

/// Mean cosine to the own positive minus mean cosine to every other
/// positive.
pub fn similarity_margin(queries: &[Vec<f64>], positives: &[Vec<f64>]) -> Result<f64> {
    let n = queries.len();
    if n < 2 || positives.len() != n {
        return Err(Error::invalid("margin needs at least two aligned pairs"));
    }
    let (mut own, mut other) = (0.0, 0.0);
    for (i, q) in queries.iter().enumerate() {
        for (j, p) in positives.iter().enumerate() {
            let s = similarity(q, p)?;
            if i == j {
                own += s;
            } else {
                other += s;
            }
        }
    }
    Ok(own / n as f64 - other / (n * (n - 1)) as f64)
}
