//! Metrics files and model comparison tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::{
    confusion_matrix, metrics_report, per_label_report, span_metrics, LabelStats, LabeledSequence,
    MetricsReport, MicroMetrics, TagSet,
};

/// Evaluation output for one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub model: String,
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Exact-match entity spans; supplementary to the token-level scores.
    pub span_level: MicroMetrics,
    pub token_count: u64,
    pub entity_types: TagSet,
    pub per_label: Vec<LabelStats>,
}

impl MetricsFile {
    pub fn evaluate<P: AsRef<[String]>>(
        model: &str,
        split: &str,
        tagset: &TagSet,
        gold: &[LabeledSequence],
        pred: &[P],
    ) -> Result<Self> {
        let gold_labels: Vec<&[String]> = gold.iter().map(|s| s.labels.as_slice()).collect();
        let m = confusion_matrix(tagset, &gold_labels, pred)?;
        Ok(MetricsFile {
            model: model.into(),
            split: split.into(),
            metrics: metrics_report(&m)?,
            span_level: span_metrics(tagset, &gold_labels, pred)?,
            token_count: m.total(),
            entity_types: tagset.clone(),
            per_label: per_label_report(tagset, gold, pred)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `type,precision,recall,support,section_affinity`, one row per type.
    pub fn bubble_csv(&self) -> Result<String> {
        csv_text(
            &["type", "precision", "recall", "support", "section_affinity"],
            self.per_label.iter().map(|r| {
                (
                    &r.entity_type,
                    r.precision,
                    r.recall,
                    r.support,
                    r.section_affinity,
                )
            }),
        )
    }
}

fn csv_text<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub model: String,
    pub split: String,
    pub metrics: MetricsReport,
    /// This row minus the first row.
    pub delta: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerLabelRow {
    pub model: String,
    pub stats: LabelStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<TableRow>,
    pub per_label: Vec<PerLabelRow>,
}

fn minus(a: &MetricsReport, b: &MetricsReport) -> MetricsReport {
    MetricsReport {
        mcc: a.mcc - b.mcc,
        micro_f1: a.micro_f1 - b.micro_f1,
        micro_precision: a.micro_precision - b.micro_precision,
        micro_recall: a.micro_recall - b.micro_recall,
        accuracy: a.accuracy - b.accuracy,
    }
}

/// Side-by-side table of at least two reports over the same tag set. Deltas
/// are taken against the first report.
pub fn compare_models(reports: &[MetricsFile]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::invalid(
            "comparison needs at least two metrics files",
        ));
    }
    let base = &reports[0];
    if let Some(r) = reports.iter().find(|r| r.entity_types != base.entity_types) {
        return Err(Error::invalid(format!(
            "{} ({}) uses a different tag set from {} ({})",
            r.model, r.split, base.model, base.split
        )));
    }
    let rows = reports
        .iter()
        .map(|r| TableRow {
            model: r.model.clone(),
            split: r.split.clone(),
            metrics: r.metrics,
            delta: minus(&r.metrics, &base.metrics),
        })
        .collect();
    let per_label = reports
        .iter()
        .flat_map(|r| {
            r.per_label.iter().map(|s| PerLabelRow {
                model: r.model.clone(),
                stats: s.clone(),
            })
        })
        .collect();
    Ok(Comparison { rows, per_label })
}

impl Comparison {
    /// `model,type,precision,recall,support,section_affinity`.
    pub fn per_label_csv(&self) -> Result<String> {
        csv_text(
            &[
                "model",
                "type",
                "precision",
                "recall",
                "support",
                "section_affinity",
            ],
            self.per_label.iter().map(|r| {
                let s = &r.stats;
                (
                    &r.model,
                    &s.entity_type,
                    s.precision,
                    s.recall,
                    s.support,
                    s.section_affinity,
                )
            }),
        )
    }

    pub fn table_csv(&self) -> Result<String> {
        csv_text(
            &[
                "model",
                "split",
                "mcc",
                "micro_f1",
                "micro_precision",
                "micro_recall",
                "accuracy",
                "delta_mcc",
                "delta_micro_f1",
                "delta_micro_precision",
                "delta_micro_recall",
                "delta_accuracy",
            ],
            self.rows.iter().map(|r| {
                let (m, d) = (&r.metrics, &r.delta);
                (
                    &r.model,
                    &r.split,
                    [
                        m.mcc,
                        m.micro_f1,
                        m.micro_precision,
                        m.micro_recall,
                        m.accuracy,
                    ],
                    [
                        d.mcc,
                        d.micro_f1,
                        d.micro_precision,
                        d.micro_recall,
                        d.accuracy,
                    ],
                )
            }),
        )
    }

    /// Fixed-width text table with four decimals.
    pub fn table_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:<5}  {:>7}  {:>7}  {:>9}  {:>7}  {:>8}\n",
            "model", "split", "MCC", "F1", "precision", "recall", "accuracy"
        );
        for r in &self.rows {
            let m = &r.metrics;
            s.push_str(&format!(
                "{:<width$}  {:<5}  {:>7.4}  {:>7.4}  {:>9.4}  {:>7.4}  {:>8.4}\n",
                r.model, r.split, m.mcc, m.micro_f1, m.micro_precision, m.micro_recall, m.accuracy
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Section;

    fn fixture(model: &str, pred: &[&str]) -> MetricsFile {
        let ts = TagSet::new(["A", "B"]).unwrap();
        let gold = vec![LabeledSequence {
            tokens: vec!["w".into(); 4],
            labels: ["B-A", "I-A", "O", "B-B"].map(String::from).to_vec(),
            section: Section::Fulltext,
        }];
        let pred = vec![pred.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        MetricsFile::evaluate(model, "test", &ts, &gold, &pred).unwrap()
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let a = fixture("m", &["B-A", "I-A", "O", "O"]);
        let c = compare_models(&[a.clone(), a]).unwrap();
        let d = c.rows[1].delta;
        assert_eq!(
            [
                d.mcc,
                d.micro_f1,
                d.micro_precision,
                d.micro_recall,
                d.accuracy
            ],
            [0.0; 5]
        );
    }

    #[test]
    fn two_fixture_reports() {
        let a = fixture("first", &["B-A", "I-A", "O", "B-B"]);
        let b = fixture("second", &["B-A", "O", "O", "O"]);
        let c = compare_models(&[a, b]).unwrap();
        assert_eq!(c.rows[0].metrics.accuracy, 1.0);
        assert_eq!(c.rows[1].metrics.accuracy, 0.5);
        assert_eq!(c.rows[1].delta.accuracy, -0.5);
        // second: tp 1 (B-A), fp 0, fn 2.
        assert_eq!(c.rows[1].metrics.micro_precision, 1.0);
        assert_eq!(c.rows[1].metrics.micro_recall, 1.0 / 3.0);
        assert_eq!(
            c.per_label_csv().unwrap(),
            "model,type,precision,recall,support,section_affinity\n\
             first,A,1.0,1.0,2,1.0\nfirst,B,1.0,1.0,1,1.0\nsecond,A,1.0,0.5,2,1.0\nsecond,B,0.0,0.0,1,1.0\n"
        );
        let table = c.table_csv().unwrap();
        // second: c = 2, s = 4, p = (3, 1, 0, 0, 0), t = (1, 1, 1, 1, 0); mcc = 4 / sqrt(6 * 12).
        assert_eq!(table.lines().nth(2).unwrap(), "second,test,0.47140452079103173,0.5,1.0,0.3333333333333333,0.5,-0.5285954792089682,-0.5,0.0,-0.6666666666666667,-0.5");
        assert!(c.table_text().contains("second"));
    }

    #[test]
    fn comparison_needs_two_matching_reports() {
        let a = fixture("m", &["O"; 4]);
        assert!(compare_models(std::slice::from_ref(&a)).is_err());
        let mut other = a.clone();
        other.entity_types = TagSet::new(["A", "C"]).unwrap();
        assert!(compare_models(&[a, other]).is_err());
    }

    #[test]
    fn metrics_json_exposes_headline_fields() {
        let a = fixture("m", &["B-A", "I-A", "O", "B-B"]);
        let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        for k in [
            "mcc",
            "micro_f1",
            "micro_precision",
            "micro_recall",
            "accuracy",
            "per_label",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(serde_json::from_value::<MetricsFile>(v).unwrap(), a);
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let mut a = fixture("a,\"b\"", &["O"; 4]);
        a.per_label.truncate(1);
        let csv = a.bubble_csv().unwrap();
        assert_eq!(csv.lines().count(), 2);
        let c = compare_models(&[a.clone(), a]).unwrap();
        assert!(c
            .per_label_csv()
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("\"a,\"\"b\"\"\",A,"));
    }
}
