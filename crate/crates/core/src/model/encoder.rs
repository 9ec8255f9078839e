use crate::error::{Error, Result};
use crate::model::{EncoderLayer, Gradients, LayerNorm, Loss, Parameters};
use crate::seed::{self, stream};
use crate::tensor::{gelu, gelu_grad, softmax_in_place, Matrix};
use crate::tokenizer::Encoding;

const LN_EPS: f64 = 1e-12;

/// Eval disables dropout. Train draws dropout masks keyed on
/// `(config.seed, step, site, sequence index, element)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { step: u64 },
}

pub(crate) struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, ln: &LayerNorm) -> (Matrix, NormCache) {
    let (rows, cols) = x.shape();
    let mut y = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    let gamma = ln.gamma.row(0);
    let beta = ln.beta.row(0);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for c in 0..cols {
            let h = (row[c] - mean) * inv;
            xhat.set(r, c, h);
            y.set(r, c, h * gamma[c] + beta[c]);
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    ln: &LayerNorm,
    grad: &mut LayerNorm,
) -> Matrix {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let gamma = ln.gamma.row(0);
    let mut dx = Matrix::zeros(rows, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        {
            let gg = grad.gamma.row_mut(0);
            for c in 0..cols {
                gg[c] += dyr[c] * xh[c];
            }
        }
        {
            let gb = grad.beta.row_mut(0);
            for c in 0..cols {
                gb[c] += dyr[c];
            }
        }
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        for c in 0..cols {
            dxhat[c] = dyr[c] * gamma[c];
            sum += dxhat[c];
            sum_xh += dxhat[c] * xh[c];
        }
        let inv = cache.inv_std[r];
        let out = dx.row_mut(r);
        for c in 0..cols {
            out[c] = inv / n * (n * dxhat[c] - sum - xh[c] * sum_xh);
        }
    }
    dx
}

/// Inverted-dropout scale factors, or `None` when dropout is inactive.
fn dropout_mask(
    params: &Parameters,
    mode: Mode,
    site: u64,
    seq: usize,
    len: usize,
) -> Option<Vec<f64>> {
    let rate = params.config.dropout_rate;
    let Mode::Train { step } = mode else {
        return None;
    };
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let base = seed::mix(&[params.config.seed, stream::DROPOUT, step, site, seq as u64]);
    Some(
        (0..len as u64)
            .map(|i| {
                if seed::unit(&[base, i]) < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect(),
    )
}

fn apply_mask(m: &mut Matrix, mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (v, k) in m.data_mut().iter_mut().zip(mask) {
            *v *= k;
        }
    }
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    context: Matrix,
    attention_dropout: Option<Vec<f64>>,
    norm1: NormCache,
    x1: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    ff_dropout: Option<Vec<f64>>,
    norm2: NormCache,
}

struct SequenceCache {
    ids: Vec<u32>,
    segments: Vec<u8>,
    embedding_norm: NormCache,
    embedding_dropout: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    cls: Matrix,
    pooled: Vec<f64>,
}

/// Final-layer hidden states and pooled `[CLS]` vectors for a batch.
///
/// Also holds what backward needs; the graph is consumed by the first
/// [`ForwardOutput::backward`] call.
pub struct ForwardOutput {
    /// One `seq_len × hidden` matrix per sequence.
    pub hidden_states: Vec<Matrix>,
    /// `batch × hidden`, `tanh` projection of the `[CLS]` state.
    pub pooled: Matrix,
    pub attention_masks: Vec<Vec<u8>>,
    graph: Option<Vec<SequenceCache>>,
}

impl ForwardOutput {
    pub fn batch_size(&self) -> usize {
        self.hidden_states.len()
    }

    pub fn seq_len(&self) -> usize {
        self.hidden_states.first().map_or(0, Matrix::rows)
    }

    pub fn hidden_dim(&self) -> usize {
        self.pooled.cols()
    }

    /// Attention probabilities (`seq_len × seq_len`) for one head, while the
    /// graph is still alive.
    pub fn attention(&self, layer: usize, sequence: usize, head: usize) -> Option<&Matrix> {
        self.graph
            .as_ref()?
            .get(sequence)?
            .layers
            .get(layer)?
            .probs
            .get(head)
    }

    pub fn backward(&mut self, params: &Parameters, loss: &Loss) -> Result<Gradients> {
        let graph = self.graph.take().ok_or(Error::GraphConsumed)?;
        if loss.d_hidden.len() != graph.len() || loss.d_pooled.rows() != graph.len() {
            return Err(Error::Shape(format!(
                "loss covers {} sequences, forward pass had {}",
                loss.d_hidden.len(),
                graph.len()
            )));
        }
        let mut grads = loss.grads.clone();
        for (b, cache) in graph.iter().enumerate() {
            backward_sequence(
                params,
                cache,
                &loss.d_hidden[b],
                loss.d_pooled.row(b),
                &mut grads,
            );
        }
        Ok(grads)
    }
}

pub fn forward(params: &Parameters, batch: &[Encoding], mode: Mode) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let len = batch.first().map_or(0, Encoding::len);
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for (i, enc) in batch.iter().enumerate() {
        if enc.len() != len {
            return Err(Error::Shape(format!(
                "sequence {i} has length {}, expected {len}",
                enc.len()
            )));
        }
        if len > cfg.max_positions {
            return Err(Error::Shape(format!(
                "sequence length {len} exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        if let Some(&bad) = enc.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {bad} in sequence {i} is outside the vocabulary ({})",
                cfg.vocab_size
            )));
        }
        if let Some(&bad) = enc
            .segment_ids
            .iter()
            .find(|&&s| s as usize >= cfg.type_vocab_size)
        {
            return Err(Error::Shape(format!("segment id {bad} in sequence {i}")));
        }
        if !enc.attention_mask.contains(&1) {
            return Err(Error::Shape(format!(
                "sequence {i} has no attended position"
            )));
        }
    }

    let mut hidden_states = Vec::with_capacity(batch.len());
    let mut pooled = Matrix::zeros(batch.len(), cfg.hidden_dim);
    let mut graph = Vec::with_capacity(batch.len());
    for (b, enc) in batch.iter().enumerate() {
        let (hidden, cache) = forward_sequence(params, enc, mode, b);
        pooled.row_mut(b).copy_from_slice(&cache.pooled);
        hidden_states.push(hidden);
        graph.push(cache);
    }
    Ok(ForwardOutput {
        hidden_states,
        pooled,
        attention_masks: batch.iter().map(|e| e.attention_mask.clone()).collect(),
        graph: Some(graph),
    })
}

pub fn backward(output: &mut ForwardOutput, params: &Parameters, loss: &Loss) -> Result<Gradients> {
    output.backward(params, loss)
}

fn forward_sequence(
    params: &Parameters,
    enc: &Encoding,
    mode: Mode,
    b: usize,
) -> (Matrix, SequenceCache) {
    let cfg = &params.config;
    let h = cfg.hidden_dim;
    let t = enc.len();

    let mut emb = Matrix::zeros(t, h);
    for (pos, (&id, &seg)) in enc.ids.iter().zip(&enc.segment_ids).enumerate() {
        let row = emb.row_mut(pos);
        let tok = params.token_embeddings.row(id as usize);
        let p = params.position_embeddings.row(pos);
        let s = params.segment_embeddings.row(seg as usize);
        for c in 0..h {
            row[c] = tok[c] + p[c] + s[c];
        }
    }
    let (mut x, embedding_norm) = layer_norm(&emb, &params.embedding_norm);
    let embedding_dropout = dropout_mask(params, mode, 0, b, t * h);
    apply_mask(&mut x, &embedding_dropout);

    let mask_add: Vec<f64> = enc
        .attention_mask
        .iter()
        .map(|&m| if m == 1 { 0.0 } else { f64::NEG_INFINITY })
        .collect();

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let (next, cache) = forward_layer(params, layer, x, &mask_add, mode, li, b);
        layers.push(cache);
        x = next;
    }

    let cls = Matrix::from_vec(1, h, x.row(0).to_vec());
    let pooled: Vec<f64> = params
        .pooler
        .forward(&cls)
        .into_vec()
        .into_iter()
        .map(f64::tanh)
        .collect();

    let cache = SequenceCache {
        ids: enc.ids.clone(),
        segments: enc.segment_ids.clone(),
        embedding_norm,
        embedding_dropout,
        layers,
        cls,
        pooled,
    };
    (x, cache)
}

fn forward_layer(
    params: &Parameters,
    layer: &EncoderLayer,
    input: Matrix,
    mask_add: &[f64],
    mode: Mode,
    li: usize,
    b: usize,
) -> (Matrix, LayerCache) {
    let cfg = &params.config;
    let (t, h) = input.shape();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let q = layer.query.forward(&input);
    let k = layer.key.forward(&input);
    let v = layer.value.forward(&input);

    let mut context = Matrix::zeros(t, h);
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let qh = q.columns(head * d, d);
        let kh = k.columns(head * d, d);
        let vh = v.columns(head * d, d);
        let mut scores = qh.matmul_nt(&kh);
        for r in 0..t {
            let row = scores.row_mut(r);
            for (s, &m) in row.iter_mut().zip(mask_add) {
                *s = *s * scale + m;
            }
            softmax_in_place(row);
        }
        context.add_columns(head * d, &scores.matmul(&vh));
        probs.push(scores);
    }

    let mut attn = layer.attention_output.forward(&context);
    let attention_dropout = dropout_mask(params, mode, 1 + 2 * li as u64, b, t * h);
    apply_mask(&mut attn, &attention_dropout);
    attn.add_assign(&input);
    let (x1, norm1) = layer_norm(&attn, &layer.attention_norm);

    let ff_pre = layer.intermediate.forward(&x1);
    let mut ff_act = ff_pre.clone();
    for v in ff_act.data_mut() {
        *v = gelu(*v);
    }
    let mut ff_out = layer.output.forward(&ff_act);
    let ff_dropout = dropout_mask(params, mode, 2 + 2 * li as u64, b, t * h);
    apply_mask(&mut ff_out, &ff_dropout);
    ff_out.add_assign(&x1);
    let (x2, norm2) = layer_norm(&ff_out, &layer.output_norm);

    let cache = LayerCache {
        input,
        q,
        k,
        v,
        probs,
        context,
        attention_dropout,
        norm1,
        x1,
        ff_pre,
        ff_act,
        ff_dropout,
        norm2,
    };
    (x2, cache)
}

fn backward_sequence(
    params: &Parameters,
    cache: &SequenceCache,
    d_hidden: &Matrix,
    d_pooled: &[f64],
    grads: &mut Gradients,
) {
    let h = params.config.hidden_dim;
    let mut dx = d_hidden.clone();

    // Pooler: pooled = tanh(cls · W + b)
    if d_pooled.iter().any(|&v| v != 0.0) {
        let dz: Vec<f64> = d_pooled
            .iter()
            .zip(&cache.pooled)
            .map(|(g, p)| g * (1.0 - p * p))
            .collect();
        let dz = Matrix::from_vec(1, h, dz);
        let d_cls = params.pooler.backward(&cache.cls, &dz, &mut grads.pooler);
        for (o, v) in dx.row_mut(0).iter_mut().zip(d_cls.row(0)) {
            *o += v;
        }
    }

    for (li, layer) in params.layers.iter().enumerate().rev() {
        dx = backward_layer(params, layer, &cache.layers[li], &dx, &mut grads.layers[li]);
    }

    apply_mask(&mut dx, &cache.embedding_dropout);
    let de = layer_norm_backward(
        &dx,
        &cache.embedding_norm,
        &params.embedding_norm,
        &mut grads.embedding_norm,
    );
    for (pos, (&id, &seg)) in cache.ids.iter().zip(&cache.segments).enumerate() {
        let row = de.row(pos);
        for (g, v) in grads
            .token_embeddings
            .row_mut(id as usize)
            .iter_mut()
            .zip(row)
        {
            *g += v;
        }
        for (g, v) in grads.position_embeddings.row_mut(pos).iter_mut().zip(row) {
            *g += v;
        }
        for (g, v) in grads
            .segment_embeddings
            .row_mut(seg as usize)
            .iter_mut()
            .zip(row)
        {
            *g += v;
        }
    }
}

fn backward_layer(
    params: &Parameters,
    layer: &EncoderLayer,
    c: &LayerCache,
    d_out: &Matrix,
    g: &mut EncoderLayer,
) -> Matrix {
    let cfg = &params.config;
    let (t, _) = d_out.shape();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    // x2 = LN2(x1 + drop(FFN(x1)))
    let d_r2 = layer_norm_backward(d_out, &c.norm2, &layer.output_norm, &mut g.output_norm);
    let mut d_ff = d_r2.clone();
    apply_mask(&mut d_ff, &c.ff_dropout);
    let mut d_act = layer.output.backward(&c.ff_act, &d_ff, &mut g.output);
    for (dv, &pre) in d_act.data_mut().iter_mut().zip(c.ff_pre.data()) {
        *dv *= gelu_grad(pre);
    }
    let mut d_x1 = layer
        .intermediate
        .backward(&c.x1, &d_act, &mut g.intermediate);
    d_x1.add_assign(&d_r2);

    // x1 = LN1(x + drop(Attn(x)))
    let d_r1 = layer_norm_backward(
        &d_x1,
        &c.norm1,
        &layer.attention_norm,
        &mut g.attention_norm,
    );
    let mut d_attn = d_r1.clone();
    apply_mask(&mut d_attn, &c.attention_dropout);
    let d_context = layer
        .attention_output
        .backward(&c.context, &d_attn, &mut g.attention_output);

    let h = cfg.hidden_dim;
    let mut dq = Matrix::zeros(t, h);
    let mut dk = Matrix::zeros(t, h);
    let mut dv = Matrix::zeros(t, h);
    for head in 0..cfg.num_heads {
        let p = &c.probs[head];
        let qh = c.q.columns(head * d, d);
        let kh = c.k.columns(head * d, d);
        let vh = c.v.columns(head * d, d);
        let dctx = d_context.columns(head * d, d);

        let dp = dctx.matmul_nt(&vh);
        let mut dvh = Matrix::zeros(t, d);
        p.matmul_tn_into(&dctx, &mut dvh);

        let mut ds = Matrix::zeros(t, t);
        for r in 0..t {
            let pr = p.row(r);
            let dpr = dp.row(r);
            let inner: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for (o, (&pv, &dpv)) in ds.row_mut(r).iter_mut().zip(pr.iter().zip(dpr)) {
                *o = pv * (dpv - inner) * scale;
            }
        }
        let dqh = ds.matmul(&kh);
        let mut dkh = Matrix::zeros(t, d);
        ds.matmul_tn_into(&qh, &mut dkh);

        dq.add_columns(head * d, &dqh);
        dk.add_columns(head * d, &dkh);
        dv.add_columns(head * d, &dvh);
    }

    let mut d_input = d_r1;
    d_input.add_assign(&layer.query.backward(&c.input, &dq, &mut g.query));
    d_input.add_assign(&layer.key.backward(&c.input, &dk, &mut g.key));
    d_input.add_assign(&layer.value.backward(&c.input, &dv, &mut g.value));
    d_input
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::tokenizer::{CLS, PAD, SEP};

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 12,
            max_positions: 10,
            num_labels: 3,
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

    #[test]
    fn padding_only_sequence_is_finite() {
        let p = init_params(&config()).unwrap();
        let out = forward(&p, &[enc(&[CLS, SEP, PAD, PAD, PAD], 2)], Mode::Eval).unwrap();
        assert!(out.hidden_states[0].is_finite());
        assert!(out.pooled.is_finite());
    }

    #[test]
    fn masked_positions_do_not_leak() {
        let p = init_params(&config()).unwrap();
        let a = enc(&[CLS, 6, 7, SEP, PAD, 9], 4);
        let b = enc(&[CLS, 6, 7, SEP, PAD, 11], 4);
        let oa = forward(&p, &[a], Mode::Eval).unwrap();
        let ob = forward(&p, &[b], Mode::Eval).unwrap();
        for pos in 0..4 {
            for (x, y) in oa.hidden_states[0]
                .row(pos)
                .iter()
                .zip(ob.hidden_states[0].row(pos))
            {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let p = init_params(&config()).unwrap();
        let a = enc(&[CLS, 5, 6, SEP, PAD], 4);
        let b = enc(&[CLS, 7, SEP, PAD, PAD], 3);
        let ab = forward(&p, &[a.clone(), b.clone()], Mode::Eval).unwrap();
        let ba = forward(&p, &[b, a], Mode::Eval).unwrap();
        assert_eq!(ab.hidden_states[0], ba.hidden_states[1]);
        assert_eq!(ab.hidden_states[1], ba.hidden_states[0]);
        assert_eq!(ab.pooled.row(0), ba.pooled.row(1));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = init_params(&config()).unwrap();
        let out = forward(&p, &[enc(&[CLS, 5, 6, SEP, PAD, PAD], 4)], Mode::Eval).unwrap();
        for layer in 0..2 {
            for head in 0..2 {
                let a = out.attention(layer, 0, head).unwrap();
                for r in 0..a.rows() {
                    let s: f64 = a.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                    assert_eq!(a.get(r, 4), 0.0);
                    assert_eq!(a.get(r, 5), 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let p = init_params(&config()).unwrap();
        let short = enc(&[CLS, SEP], 2);
        let long = enc(&[CLS, 5, SEP], 3);
        assert!(forward(&p, &[short.clone(), long], Mode::Eval).is_err());
        assert!(forward(&p, &[enc(&[CLS, 99], 2)], Mode::Eval).is_err());
        assert!(forward(&p, &[enc(&[CLS; 11], 11)], Mode::Eval).is_err());
        assert!(forward(&p, &[], Mode::Eval).is_err());
    }

    #[test]
    fn eval_mode_is_pure_and_train_mode_is_keyed() {
        let mut cfg = config();
        cfg.dropout_rate = 0.3;
        let p = init_params(&cfg).unwrap();
        let batch = [enc(&[CLS, 5, 6, SEP], 4)];
        let e1 = forward(&p, &batch, Mode::Eval).unwrap();
        let e2 = forward(&p, &batch, Mode::Eval).unwrap();
        assert_eq!(e1.hidden_states, e2.hidden_states);
        let t1 = forward(&p, &batch, Mode::Train { step: 3 }).unwrap();
        let t2 = forward(&p, &batch, Mode::Train { step: 3 }).unwrap();
        let t3 = forward(&p, &batch, Mode::Train { step: 4 }).unwrap();
        assert_eq!(t1.hidden_states, t2.hidden_states);
        assert_ne!(t1.hidden_states, t3.hidden_states);
        assert_ne!(t1.hidden_states, e1.hidden_states);
    }
}
