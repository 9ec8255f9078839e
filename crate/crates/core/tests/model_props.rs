//! Encoder behaviour on random inputs.

use astrolm::model::{
    forward, init_params, mlm_loss, nsp_loss, token_classification_loss, MaskedTarget, Mode,
};
use astrolm::tokenizer::{Encoding, PAD};
use astrolm::ModelConfig;
use proptest::prelude::*;

const VOCAB: usize = 30;

fn config(dropout: f64) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_dim: 16,
        num_heads: 4,
        ff_dim: 32,
        max_positions: 24,
        vocab_size: VOCAB,
        num_labels: 5,
        dropout_rate: dropout,
        seed: 9,
        ..Default::default()
    }
}

fn encoding(ids: &[u32], split: usize, len: usize) -> Encoding {
    let used = ids.len();
    let mut all = ids.to_vec();
    all.resize(len, PAD);
    Encoding {
        tokens: all.iter().map(|i| format!("t{i}")).collect(),
        segment_ids: (0..len).map(|i| u8::from(i >= split && i < used)).collect(),
        attention_mask: (0..len).map(|i| u8::from(i < used)).collect(),
        special_mask: (0..len).map(|i| i >= used).collect(),
        ids: all,
    }
}

fn batch() -> impl Strategy<Value = Vec<Encoding>> {
    (1usize..24).prop_flat_map(|len| {
        prop::collection::vec(
            (
                prop::collection::vec(0u32..VOCAB as u32, 1..=len),
                any::<prop::sample::Index>(),
            ),
            1..4,
        )
        .prop_map(move |seqs| {
            seqs.into_iter()
                .map(|(ids, s)| encoding(&ids, s.index(ids.len() + 1), len))
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_and_gradients_are_finite(b in batch(), step in 0u64..1000) {
        let params = init_params(&config(0.1)).unwrap();
        let mut out = forward(&params, &b, Mode::Train { step }).unwrap();
        prop_assert!(out.hidden_states.iter().all(|h| h.data().iter().all(|v| v.is_finite())));
        prop_assert!(out.pooled.data().iter().all(|v| v.is_finite()));
        let targets: Vec<MaskedTarget> =
            (0..b.len()).map(|s| MaskedTarget { sequence: s, position: 0, target: 7 }).collect();
        let labels: Vec<Vec<usize>> = b.iter().map(|e| vec![1; e.len()]).collect();
        let masks: Vec<Vec<bool>> = b.iter().map(|e| e.attention_mask.iter().map(|&m| m == 1).collect()).collect();
        let nsp: Vec<bool> = (0..b.len()).map(|i| i % 2 == 0).collect();
        let loss = mlm_loss(&params, &out, &targets).unwrap()
            + nsp_loss(&params, &out, &nsp).unwrap()
            + token_classification_loss(&params, &out, &labels, &masks).unwrap();
        prop_assert!(loss.value.is_finite());
        let grads = out.backward(&params, &loss).unwrap();
        prop_assert!(grads.is_finite());
    }

    #[test]
    fn eval_forward_is_pure_and_attention_is_normalized(b in batch()) {
        let params = init_params(&config(0.1)).unwrap();
        let x = forward(&params, &b, Mode::Eval).unwrap();
        let y = forward(&params, &b, Mode::Eval).unwrap();
        prop_assert_eq!(&x.hidden_states, &y.hidden_states);
        prop_assert_eq!(&x.pooled, &y.pooled);
        for (s, enc) in b.iter().enumerate() {
            for layer in 0..2 {
                for head in 0..4 {
                    let probs = x.attention(layer, s, head).unwrap();
                    for r in 0..probs.rows() {
                        let row_sum: f64 = (0..probs.cols())
                            .filter(|&c| enc.attention_mask[c] == 1)
                            .map(|c| probs.get(r, c))
                            .sum();
                        prop_assert!((row_sum - 1.0).abs() < 1e-6);
                    }
                }
            }
        }
    }
}

#[test]
fn padding_and_batch_mates_do_not_change_eval_outputs() {
    let params = init_params(&config(0.0)).unwrap();
    let a = encoding(&[2, 5, 6, 7, 3], 5, 5);
    let padded = encoding(&[2, 5, 6, 7, 3], 5, 12);
    let other = encoding(&[2, 9, 9, 9, 9, 9, 9, 3], 3, 12);
    let alone = forward(&params, std::slice::from_ref(&a), Mode::Eval).unwrap();
    let together = forward(&params, &[padded, other], Mode::Eval).unwrap();
    for r in 0..5 {
        for c in 0..16 {
            let (x, y) = (
                alone.hidden_states[0].get(r, c),
                together.hidden_states[0].get(r, c),
            );
            assert!((x - y).abs() < 1e-12, "{r},{c}: {x} vs {y}");
        }
    }
}
