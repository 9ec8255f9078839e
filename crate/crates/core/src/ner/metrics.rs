//! Token-level metrics over IOB2 label ids, a span-level F1, and per-type
//! reports. Label id 0 is `O` in every tag set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Section;
use crate::error::{Error, Result};
use crate::ner::conll::LabeledSequence;
use crate::ner::tags::{Tag, TagSet};

/// `counts[gold * k + pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Shape(format!(
                "{} counts for a {k}x{k} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    /// Counts aligned id sequences.
    pub fn from_ids(k: usize, gold: &[usize], pred: &[usize]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} gold vs {} predicted labels",
                gold.len(),
                pred.len()
            )));
        }
        let mut m = ConfusionMatrix::new(k);
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= k || p >= k {
                return Err(Error::UnknownLabel(format!("id {}", g.max(p))));
            }
            m.add(g, p, 1);
        }
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k + pred]
    }

    pub fn add(&mut self, gold: usize, pred: usize, n: u64) {
        self.counts[gold * self.k + pred] += n;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Row sums: gold count per label.
    pub fn gold_counts(&self) -> Vec<u64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).sum())
            .collect()
    }

    /// Column sums: predicted count per label.
    pub fn predicted_counts(&self) -> Vec<u64> {
        (0..self.k)
            .map(|j| (0..self.k).map(|i| self.get(i, j)).sum())
            .collect()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::invalid("confusion matrix is empty"))
        } else {
            Ok(())
        }
    }
}

/// Token-level confusion matrix of aligned label sequences.
pub fn confusion_matrix<G, P>(tagset: &TagSet, gold: &[G], pred: &[P]) -> Result<ConfusionMatrix>
where
    G: AsRef<[String]>,
    P: AsRef<[String]>,
{
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold vs {} predicted sequences",
            gold.len(),
            pred.len()
        )));
    }
    let mut m = ConfusionMatrix::new(tagset.num_labels());
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(Error::Shape(format!(
                "sequence {i}: {} gold vs {} predicted labels",
                g.len(),
                p.len()
            )));
        }
        for (gl, pl) in g.iter().zip(p) {
            m.add(tagset.id(gl)?, tagset.id(pl)?, 1);
        }
    }
    Ok(m)
}

/// Multiclass Matthews correlation; 0 when either denominator factor is 0.
pub fn mcc(m: &ConfusionMatrix) -> Result<f64> {
    m.nonempty()?;
    let c = m.trace() as i128;
    let s = m.total() as i128;
    let p = m.predicted_counts();
    let t = m.gold_counts();
    let pt: i128 = p.iter().zip(&t).map(|(&a, &b)| a as i128 * b as i128).sum();
    let pp: i128 = p.iter().map(|&a| a as i128 * a as i128).sum();
    let tt: i128 = t.iter().map(|&a| a as i128 * a as i128).sum();
    let (dp, dt) = (s * s - pp, s * s - tt);
    if dp == 0 || dt == 0 {
        return Ok(0.0);
    }
    Ok((c * s - pt) as f64 / ((dp as f64) * (dt as f64)).sqrt())
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64> {
    m.nonempty()?;
    Ok(m.trace() as f64 / m.total() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MicroMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MicroMetrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged over every label except `O` (id 0).
pub fn micro_metrics(m: &ConfusionMatrix) -> Result<MicroMetrics> {
    m.nonempty()?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let gold = m.gold_counts();
    let pred = m.predicted_counts();
    for l in 1..m.k() {
        let hit = m.get(l, l);
        tp += hit;
        fp += pred[l] - hit;
        fn_ += gold[l] - hit;
    }
    Ok(MicroMetrics::from_counts(tp, fp, fn_))
}

/// The five headline scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcc: f64,
    pub micro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub accuracy: f64,
}

pub fn metrics_report(m: &ConfusionMatrix) -> Result<MetricsReport> {
    let micro = micro_metrics(m)?;
    Ok(MetricsReport {
        mcc: mcc(m)?,
        micro_f1: micro.f1,
        micro_precision: micro.precision,
        micro_recall: micro.recall,
        accuracy: accuracy(m)?,
    })
}

/// `(start, end_exclusive, type)` entity spans of a valid IOB2 sequence.
pub fn spans(tags: &[Tag]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::Inside(t) if open.is_some_and(|(_, ot)| ot == t) => {}
            _ => {
                if let Some((s, t)) = open.take() {
                    out.push((s, i, t));
                }
                if let Some(t) = tag.entity_type() {
                    open = Some((i, t));
                }
            }
        }
    }
    if let Some((s, t)) = open {
        out.push((s, tags.len(), t));
    }
    out
}

/// Exact-match entity span precision, recall, and F1. Orphan `I-t` tags
/// open a new span.
pub fn span_metrics<G, P>(tagset: &TagSet, gold: &[G], pred: &[P]) -> Result<MicroMetrics>
where
    G: AsRef<[String]>,
    P: AsRef<[String]>,
{
    if gold.len() != pred.len() {
        return Err(Error::Shape(
            "gold and predicted sequence counts differ".into(),
        ));
    }
    let (mut tp, mut n_gold, mut n_pred) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        let parse = |ls: &[String]| {
            ls.iter()
                .map(|l| tagset.parse_tag(l))
                .collect::<Result<Vec<Tag>>>()
        };
        let (g, p) = (parse(g.as_ref())?, parse(p.as_ref())?);
        if g.len() != p.len() {
            return Err(Error::Shape(
                "gold and predicted sequence lengths differ".into(),
            ));
        }
        let gs: BTreeSet<_> = spans(&g).into_iter().collect();
        let ps: BTreeSet<_> = spans(&p).into_iter().collect();
        tp += gs.intersection(&ps).count() as u64;
        n_gold += gs.len() as u64;
        n_pred += ps.len() as u64;
    }
    Ok(MicroMetrics::from_counts(tp, n_pred - tp, n_gold - tp))
}

/// Scores for one entity type with `B-` and `I-` pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub precision: f64,
    pub recall: f64,
    /// Gold tokens of this type.
    pub support: u64,
    /// Fraction of the gold tokens that sit in fulltext sequences. For a
    /// type that is only predicted, the fraction of predicted tokens.
    pub section_affinity: f64,
}

/// One row per entity type that occurs in gold or predictions, in tag-set
/// order.
pub fn per_label_report<P: AsRef<[String]>>(
    tagset: &TagSet,
    gold: &[LabeledSequence],
    pred: &[P],
) -> Result<Vec<LabelStats>> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(
            "gold and predicted sequence counts differ".into(),
        ));
    }
    let n = tagset.entity_types().len();
    #[derive(Clone, Default)]
    struct Tally {
        tp: u64,
        gold: u64,
        pred: u64,
        gold_fulltext: u64,
        pred_fulltext: u64,
    }
    let mut tally = vec![Tally::default(); n];
    for (seq, p) in gold.iter().zip(pred) {
        let p = p.as_ref();
        if seq.labels.len() != p.len() {
            return Err(Error::Shape(
                "gold and predicted sequence lengths differ".into(),
            ));
        }
        let fulltext = u64::from(seq.section == Section::Fulltext);
        for (gl, pl) in seq.labels.iter().zip(p) {
            let gt = tagset.parse_tag(gl)?.entity_type();
            let pt = tagset.parse_tag(pl)?.entity_type();
            if let Some(t) = gt {
                tally[t].gold += 1;
                tally[t].gold_fulltext += fulltext;
            }
            if let Some(t) = pt {
                tally[t].pred += 1;
                tally[t].pred_fulltext += fulltext;
                if gt == Some(t) {
                    tally[t].tp += 1;
                }
            }
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(tally
        .into_iter()
        .enumerate()
        .filter(|(_, t)| t.gold + t.pred > 0)
        .map(|(i, t)| LabelStats {
            entity_type: tagset.entity_types()[i].clone(),
            precision: ratio(t.tp, t.pred),
            recall: ratio(t.tp, t.gold),
            support: t.gold,
            section_affinity: if t.gold > 0 {
                ratio(t.gold_fulltext, t.gold)
            } else {
                ratio(t.pred_fulltext, t.pred)
            },
        })
        .collect())
}
