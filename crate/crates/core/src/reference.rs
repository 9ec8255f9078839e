//! Published scores for the 32-type astrophysics NER task and the scale of
//! the original pretraining run. Kept as metadata for comparison tables; the
//! numbers need the original annotated data and full-scale weights.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PublishedScore {
    pub model: &'static str,
    pub split: &'static str,
    pub mcc: f64,
    pub micro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub accuracy: f64,
}

const fn row(
    model: &'static str,
    split: &'static str,
    [mcc, micro_f1, micro_precision, micro_recall, accuracy]: [f64; 5],
) -> PublishedScore {
    PublishedScore {
        model,
        split,
        mcc,
        micro_f1,
        micro_precision,
        micro_recall,
        accuracy,
    }
}

pub const PUBLISHED_SCORES: [PublishedScore; 15] = [
    row("Random", "train", [0.1037, 0.0170, 0.0122, 0.0278, 0.7146]),
    row("Random", "val", [0.1083, 0.0166, 0.0119, 0.0273, 0.7059]),
    row("Random", "test", [0.1057, 0.0162, 0.0116, 0.0269, 0.6876]),
    row("BERT", "train", [0.7542, 0.4920, 0.4995, 0.4848, 0.9256]),
    row("BERT", "val", [0.7405, 0.4739, 0.4780, 0.4698, 0.9188]),
    row("BERT", "test", [0.7229, 0.4513, 0.4622, 0.4409, 0.9094]),
    row("SciBERT", "train", [0.8159, 0.5867, 0.5753, 0.5986, 0.9430]),
    row("SciBERT", "val", [0.8019, 0.5601, 0.5463, 0.5745, 0.9366]),
    row("SciBERT", "test", [0.7844, 0.5355, 0.5313, 0.5398, 0.9280]),
    row(
        "astroBERT (WIESP)",
        "train",
        [0.8296, 0.6138, 0.5889, 0.6409, 0.9468],
    ),
    row(
        "astroBERT (WIESP)",
        "val",
        [0.8104, 0.5779, 0.5508, 0.6077, 0.9389],
    ),
    row(
        "astroBERT (WIESP)",
        "test",
        [0.7939, 0.5561, 0.5387, 0.5746, 0.9308],
    ),
    row(
        "astroBERT (public release)",
        "train",
        [0.8250, 0.5995, 0.5701, 0.6319, 0.9442],
    ),
    row(
        "astroBERT (public release)",
        "val",
        [0.8194, 0.5907, 0.5575, 0.6282, 0.9405],
    ),
    row(
        "astroBERT (public release)",
        "test",
        [0.8302, 0.6093, 0.5846, 0.6362, 0.9418],
    ),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PretrainingScale {
    pub papers: u64,
    pub tokens: u64,
    pub epochs: u32,
    pub wall_clock_days: u32,
    pub gpus: u32,
}

/// Approximate figures for the full-scale run.
pub const FULL_SCALE_PRETRAINING: PretrainingScale = PretrainingScale {
    papers: 400_000,
    tokens: 4_000_000_000,
    epochs: 40,
    wall_clock_days: 50,
    gpus: 2,
};
