//! IOB2 named-entity recognition: tag scheme, CoNLL I/O, finetuning, the
//! random baseline, and token-level metrics.

mod conll;
mod metrics;
mod tagger;
mod tags;

pub use conll::{load_conll, load_conll_predictions, parse_conll, to_conll, LabeledSequence};
pub use metrics::{
    accuracy, confusion_matrix, mcc, metrics_report, micro_metrics, per_label_report, span_metrics,
    spans, ConfusionMatrix, LabelStats, MetricsReport, MicroMetrics,
};
pub use tagger::{
    finetune, label_frequencies, predict, random_baseline, FinetuneHyper, RandomBaseline,
    SequenceLabeler, Tagger,
};
pub use tags::{is_valid_iob2, repair_iob2, Tag, TagSet};
