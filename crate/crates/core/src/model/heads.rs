//! Output heads and their losses.
//!
//! Each loss returns a [`Loss`]: the scalar value, gradients for the head's
//! own parameters, and the gradient flowing back into the encoder outputs.
//! Losses can be summed before a single backward pass.

use std::ops::Add;

use crate::error::{Error, Result};
use crate::model::encoder::{layer_norm, layer_norm_backward};
use crate::model::{ForwardOutput, Gradients, Parameters};
use crate::tensor::{gelu, gelu_grad, log_sum_exp, Matrix};
use crate::tokenizer::TokenId;

pub struct Loss {
    pub value: f64,
    pub(crate) grads: Gradients,
    pub(crate) d_hidden: Vec<Matrix>,
    pub(crate) d_pooled: Matrix,
}

impl Loss {
    fn zero(params: &Parameters, output: &ForwardOutput) -> Self {
        Loss {
            value: 0.0,
            grads: params.zeros_like(),
            d_hidden: output
                .hidden_states
                .iter()
                .map(|h| Matrix::zeros(h.rows(), h.cols()))
                .collect(),
            d_pooled: Matrix::zeros(output.batch_size(), output.hidden_dim()),
        }
    }

    /// Wraps an externally computed objective given its gradient with
    /// respect to the final hidden states.
    pub fn from_hidden_gradient(
        params: &Parameters,
        output: &ForwardOutput,
        value: f64,
        d_hidden: Vec<Matrix>,
    ) -> Result<Self> {
        let mut loss = Loss::zero(params, output);
        if d_hidden.len() != loss.d_hidden.len()
            || d_hidden
                .iter()
                .zip(&loss.d_hidden)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("hidden-state gradient shape".into()));
        }
        loss.value = value;
        loss.d_hidden = d_hidden;
        Ok(loss)
    }

    /// Gradients of the head parameters only.
    pub fn head_gradients(&self) -> &Gradients {
        &self.grads
    }
}

impl Add for Loss {
    type Output = Loss;

    fn add(mut self, other: Loss) -> Loss {
        self.value += other.value;
        self.grads.add_assign(&other.grads);
        for (a, b) in self.d_hidden.iter_mut().zip(&other.d_hidden) {
            a.add_assign(b);
        }
        self.d_pooled.add_assign(&other.d_pooled);
        self
    }
}

/// Softmax cross-entropy of each row against its target; writes
/// `(softmax - onehot) * weight` into `logits` and returns the summed loss.
fn cross_entropy_rows(logits: &mut Matrix, targets: &[usize], weight: f64) -> f64 {
    let mut total = 0.0;
    for (r, &target) in targets.iter().enumerate() {
        let row = logits.row_mut(r);
        let lse = log_sum_exp(row);
        total += lse - row[target];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * weight;
        }
        row[target] -= weight;
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedTarget {
    pub sequence: usize,
    pub position: usize,
    pub target: TokenId,
}

fn gather_rows(output: &ForwardOutput, at: &[(usize, usize)]) -> Matrix {
    let h = output.hidden_dim();
    let mut x = Matrix::zeros(at.len(), h);
    for (r, &(b, pos)) in at.iter().enumerate() {
        x.row_mut(r)
            .copy_from_slice(output.hidden_states[b].row(pos));
    }
    x
}

fn scatter_rows(d_hidden: &mut [Matrix], at: &[(usize, usize)], dx: &Matrix) {
    for (r, &(b, pos)) in at.iter().enumerate() {
        for (o, v) in d_hidden[b].row_mut(pos).iter_mut().zip(dx.row(r)) {
            *o += v;
        }
    }
}

fn check_position(output: &ForwardOutput, b: usize, pos: usize) -> Result<()> {
    if b >= output.batch_size() || pos >= output.seq_len() {
        return Err(Error::Shape(format!(
            "position ({b}, {pos}) outside a {}x{} batch",
            output.batch_size(),
            output.seq_len()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of the MLM head over the masked positions only.
pub fn mlm_loss(
    params: &Parameters,
    output: &ForwardOutput,
    targets: &[MaskedTarget],
) -> Result<Loss> {
    if targets.is_empty() {
        return Err(Error::invalid(
            "mlm_loss needs at least one masked position",
        ));
    }
    let vocab = params.config.vocab_size;
    for t in targets {
        check_position(output, t.sequence, t.position)?;
        if t.target as usize >= vocab {
            return Err(Error::Shape(format!(
                "target id {} outside vocabulary",
                t.target
            )));
        }
    }
    let at: Vec<(usize, usize)> = targets.iter().map(|t| (t.sequence, t.position)).collect();
    let x = gather_rows(output, &at);

    let pre = params.mlm_transform.forward(&x);
    let mut act = pre.clone();
    for v in act.data_mut() {
        *v = gelu(*v);
    }
    let (normed, norm_cache) = layer_norm(&act, &params.mlm_norm);
    let mut logits = params.mlm_decoder.forward(&normed);

    let m = targets.len() as f64;
    let ids: Vec<usize> = targets.iter().map(|t| t.target as usize).collect();
    let total = cross_entropy_rows(&mut logits, &ids, 1.0 / m);
    let d_logits = logits;

    let mut loss = Loss::zero(params, output);
    loss.value = total / m;
    let d_normed = params
        .mlm_decoder
        .backward(&normed, &d_logits, &mut loss.grads.mlm_decoder);
    let mut d_act = layer_norm_backward(
        &d_normed,
        &norm_cache,
        &params.mlm_norm,
        &mut loss.grads.mlm_norm,
    );
    for (d, &p) in d_act.data_mut().iter_mut().zip(pre.data()) {
        *d *= gelu_grad(p);
    }
    let dx = params
        .mlm_transform
        .backward(&x, &d_act, &mut loss.grads.mlm_transform);
    scatter_rows(&mut loss.d_hidden, &at, &dx);
    Ok(loss)
}

/// Class 0 is "is next", class 1 is "not next".
pub fn nsp_logits(params: &Parameters, output: &ForwardOutput) -> Matrix {
    params.nsp_classifier.forward(&output.pooled)
}

/// Mean 2-way cross-entropy on the pooled vectors; `labels[i]` is true when
/// segment B followed segment A.
pub fn nsp_loss(params: &Parameters, output: &ForwardOutput, labels: &[bool]) -> Result<Loss> {
    if labels.len() != output.batch_size() {
        return Err(Error::Shape(format!(
            "{} NSP labels for a batch of {}",
            labels.len(),
            output.batch_size()
        )));
    }
    let mut logits = nsp_logits(params, output);
    let n = labels.len() as f64;
    let classes: Vec<usize> = labels.iter().map(|&next| usize::from(!next)).collect();
    let total = cross_entropy_rows(&mut logits, &classes, 1.0 / n);

    let mut loss = Loss::zero(params, output);
    loss.value = total / n;
    loss.d_pooled =
        params
            .nsp_classifier
            .backward(&output.pooled, &logits, &mut loss.grads.nsp_classifier);
    Ok(loss)
}

/// Per-position label logits, one `seq_len × num_labels` matrix per sequence.
pub fn token_logits(params: &Parameters, output: &ForwardOutput) -> Vec<Matrix> {
    output
        .hidden_states
        .iter()
        .map(|h| params.ner_classifier.forward(h))
        .collect()
}

/// Mean cross-entropy of the token-classification head over positions where
/// `label_mask` is set.
pub fn token_classification_loss(
    params: &Parameters,
    output: &ForwardOutput,
    gold_labels: &[Vec<usize>],
    label_mask: &[Vec<bool>],
) -> Result<Loss> {
    if gold_labels.len() != output.batch_size() || label_mask.len() != output.batch_size() {
        return Err(Error::Shape("label batch size".into()));
    }
    let num_labels = params.config.num_labels;
    let mut at = Vec::new();
    let mut targets = Vec::new();
    for (b, (gold, mask)) in gold_labels.iter().zip(label_mask).enumerate() {
        if gold.len() != output.seq_len() || mask.len() != output.seq_len() {
            return Err(Error::Shape(format!(
                "labels for sequence {b} have the wrong length"
            )));
        }
        for (pos, (&label, &on)) in gold.iter().zip(mask).enumerate() {
            if !on {
                continue;
            }
            if label >= num_labels {
                return Err(Error::Shape(format!("label id {label} >= {num_labels}")));
            }
            at.push((b, pos));
            targets.push(label);
        }
    }
    if at.is_empty() {
        return Err(Error::invalid("every position is masked out of the loss"));
    }
    let x = gather_rows(output, &at);
    let mut logits = params.ner_classifier.forward(&x);
    let m = at.len() as f64;
    let total = cross_entropy_rows(&mut logits, &targets, 1.0 / m);

    let mut loss = Loss::zero(params, output);
    loss.value = total / m;
    let dx = params
        .ner_classifier
        .backward(&x, &logits, &mut loss.grads.ner_classifier);
    scatter_rows(&mut loss.d_hidden, &at, &dx);
    Ok(loss)
}

/// Mean of the hidden states over attended positions, per sequence.
pub fn mean_pool(output: &ForwardOutput, attention_masks: &[Vec<u8>]) -> Result<Vec<Vec<f64>>> {
    if attention_masks.len() != output.batch_size() {
        return Err(Error::Shape("attention mask batch size".into()));
    }
    output
        .hidden_states
        .iter()
        .zip(attention_masks)
        .enumerate()
        .map(|(b, (h, mask))| {
            if mask.len() != h.rows() {
                return Err(Error::Shape(format!("mask length for sequence {b}")));
            }
            let count = mask.iter().filter(|&&m| m == 1).count();
            if count == 0 {
                return Err(Error::invalid(format!("sequence {b} is fully masked")));
            }
            let mut acc = vec![0.0; h.cols()];
            for (pos, _) in mask.iter().enumerate().filter(|(_, &m)| m == 1) {
                for (a, v) in acc.iter_mut().zip(h.row(pos)) {
                    *a += v;
                }
            }
            for a in &mut acc {
                *a /= count as f64;
            }
            Ok(acc)
        })
        .collect()
}

/// Spreads pooled-vector gradients evenly over the attended positions.
pub fn mean_pool_backward(d_pooled: &[Vec<f64>], attention_masks: &[Vec<u8>]) -> Vec<Matrix> {
    d_pooled
        .iter()
        .zip(attention_masks)
        .map(|(d, mask)| {
            let count = mask.iter().filter(|&&m| m == 1).count().max(1) as f64;
            let mut out = Matrix::zeros(mask.len(), d.len());
            for (pos, &m) in mask.iter().enumerate() {
                if m == 1 {
                    for (o, v) in out.row_mut(pos).iter_mut().zip(d) {
                        *o = v / count;
                    }
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, Mode, ModelConfig};
    use crate::tokenizer::{Encoding, CLS, PAD, SEP};

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 8,
            max_positions: 8,
            num_labels: 4,
            dropout_rate: 0.0,
            ..Default::default()
        }
    }

    fn enc(ids: &[u32], used: usize) -> Encoding {
        Encoding {
            ids: ids.to_vec(),
            segment_ids: vec![0; ids.len()],
            attention_mask: (0..ids.len()).map(|i| u8::from(i < used)).collect(),
            special_mask: vec![false; ids.len()],
            tokens: vec![String::new(); ids.len()],
        }
    }

    fn setup() -> (Parameters, ForwardOutput) {
        let p = init_params(&config()).unwrap();
        let batch = [
            enc(&[CLS, 5, 6, SEP, PAD], 4),
            enc(&[CLS, 7, SEP, PAD, PAD], 3),
        ];
        let out = forward(&p, &batch, Mode::Eval).unwrap();
        (p, out)
    }

    #[test]
    fn uniform_mlm_logits_give_ln_vocab() {
        let (mut p, out) = setup();
        p.mlm_decoder.weight.fill(0.0);
        let t = [MaskedTarget {
            sequence: 0,
            position: 1,
            target: 5,
        }];
        let loss = mlm_loss(&p, &out, &t).unwrap();
        assert!((loss.value - (10f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn crafted_mlm_logits_give_neg_ln_p() {
        let (mut p, out) = setup();
        p.mlm_decoder.weight.fill(0.0);
        // logits: target 5 gets ln 3, others 0 -> p = 3 / (3 + 9)
        p.mlm_decoder.bias.set(0, 5, 3f64.ln());
        let t = [MaskedTarget {
            sequence: 1,
            position: 1,
            target: 5,
        }];
        let loss = mlm_loss(&p, &out, &t).unwrap();
        assert!((loss.value + (0.25f64).ln()).abs() < 1e-12);
        assert!(mlm_loss(&p, &out, &[]).is_err());
    }

    #[test]
    fn nsp_hand_built_logits() {
        let (mut p, out) = setup();
        p.nsp_classifier.weight.fill(0.0);
        let uniform = nsp_loss(&p, &out, &[true, false]).unwrap();
        assert!((uniform.value - 2f64.ln()).abs() < 1e-12);

        // P(is_next) = 0.8 for both sequences: first is truly next (p = 0.8),
        // second is not (q = 0.2).
        p.nsp_classifier.bias.set(0, 0, 4f64.ln());
        let loss = nsp_loss(&p, &out, &[true, false]).unwrap();
        let expected = -(0.8f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((loss.value - expected).abs() < 1e-12);

        p.nsp_classifier.bias.set(0, 0, 60.0);
        let confident = nsp_loss(&p, &out, &[true, true]).unwrap();
        assert!(confident.value < 1e-20);
        assert!(nsp_loss(&p, &out, &[true]).is_err());
    }

    #[test]
    fn token_loss_respects_mask() {
        let (mut p, out) = setup();
        p.ner_classifier.weight.fill(0.0);
        let gold = vec![vec![0, 1, 2, 0, 0], vec![0, 3, 0, 0, 0]];
        let mask = vec![
            vec![false, true, true, false, false],
            vec![false, true, false, false, false],
        ];
        let loss = token_classification_loss(&p, &out, &gold, &mask).unwrap();
        assert!((loss.value - 4f64.ln()).abs() < 1e-12);

        p.ner_classifier.bias.set(0, 2, 2f64.ln());
        let one = vec![vec![false, false, true, false, false], vec![false; 5]];
        let mut other_gold = gold.clone();
        other_gold[1][1] = 1;
        let a = token_classification_loss(&p, &out, &gold, &one).unwrap();
        let b = token_classification_loss(&p, &out, &other_gold, &one).unwrap();
        assert_eq!(a.value, b.value);
        assert!((a.value + (2.0f64 / 5.0).ln()).abs() < 1e-12);

        let none = vec![vec![false; 5], vec![false; 5]];
        assert!(token_classification_loss(&p, &out, &gold, &none).is_err());
    }

    #[test]
    fn mean_pool_averages_attended_rows() {
        let (_, out) = setup();
        let pooled = mean_pool(&out, &out.attention_masks).unwrap();
        let h = &out.hidden_states[1];
        for (c, &got) in pooled[1].iter().enumerate() {
            let expected = (h.get(0, c) + h.get(1, c) + h.get(2, c)) / 3.0;
            assert!((got - expected).abs() < 1e-15);
        }
        let masks = vec![vec![0; 5], vec![1; 5]];
        assert!(mean_pool(&out, &masks).is_err());
    }
}
