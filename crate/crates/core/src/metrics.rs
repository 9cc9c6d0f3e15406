//! Accuracy series, the transferability score and the per-class confusion table.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Domain, EpochRecord, TensorModel};

/// Fraction of instances whose argmax prediction equals the label.
pub fn evaluate_accuracy(model: &TensorModel, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::precondition("cannot evaluate on an empty dataset"));
    }
    let predicted = model.predict(dataset.instances())?;
    let correct = predicted
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesKind {
    SourceTrain,
    TargetTrain,
    OwnVal,
    TargetVal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySeries {
    pub model: Domain,
    pub dataset: SeriesKind,
    pub values: Vec<f64>,
}

/// Split a training history into one series per recorded dataset.
pub fn series_from_history(model: Domain, history: &[EpochRecord]) -> Vec<AccuracySeries> {
    let kinds: [(SeriesKind, fn(&EpochRecord) -> Option<f64>); 4] = [
        (SeriesKind::SourceTrain, |r| r.source_train),
        (SeriesKind::TargetTrain, |r| r.target_train),
        (SeriesKind::OwnVal, |r| r.own_val),
        (SeriesKind::TargetVal, |r| r.target_val),
    ];
    kinds
        .iter()
        .filter_map(|(kind, get)| {
            let values: Option<Vec<f64>> = history.iter().map(get).collect();
            values
                .filter(|v| !v.is_empty())
                .map(|values| AccuracySeries {
                    model,
                    dataset: *kind,
                    values,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferabilityScore {
    pub score: f64,
    pub best_target: f64,
    pub best_source: f64,
}

/// Best target-model accuracy minus best source-model accuracy, both measured
/// on the target validation set over the training epochs.
pub fn transferability(source_series: &[f64], target_series: &[f64]) -> Result<TransferabilityScore> {
    let best = |s: &[f64], what: &str| {
        s.iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .ok_or_else(|| Error::precondition(format!("{what} accuracy series is empty")))
    };
    let best_source = best(source_series, "source")?;
    let best_target = best(target_series, "target")?;
    Ok(TransferabilityScore {
        score: best_target - best_source,
        best_target,
        best_source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub class: usize,
    pub name: String,
    pub count: usize,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub difference: f64,
    /// Up to three classes the target model confuses this class with, most frequent first.
    pub misclassified_into: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: Vec<ConfusionRow>,
    /// Target model on the target validation set: `matrix[true][predicted]`.
    pub matrix: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionColumn {
    Name,
    SourceAccuracy,
    TargetAccuracy,
    Difference,
    Misclassified,
}

pub const MISCLASSIFIED_LIMIT: usize = 3;

fn confusion_matrix(predicted: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<u32>> {
    let mut m = vec![vec![0u32; classes]; classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

pub fn confusion_table(
    source: &TensorModel,
    target: &TensorModel,
    target_val: &LabeledDataset,
) -> Result<ConfusionTable> {
    let classes = target_val.class_count();
    if source.class_count() != classes || target.class_count() != classes {
        return Err(Error::precondition(format!(
            "class sets differ: source {}, target {}, data {classes}",
            source.class_count(),
            target.class_count()
        )));
    }
    let labels = target_val.labels();
    let src = confusion_matrix(&source.predict(target_val.instances())?, labels, classes);
    let tgt = confusion_matrix(&target.predict(target_val.instances())?, labels, classes);
    let rows = (0..classes)
        .map(|c| {
            let count: u32 = tgt[c].iter().sum();
            let acc = |m: &[Vec<u32>]| if count == 0 { 0.0 } else { f64::from(m[c][c]) / f64::from(count) };
            let (source_accuracy, target_accuracy) = (acc(&src), acc(&tgt));
            let mut errors: Vec<(usize, u32)> = (0..classes)
                .filter(|&k| k != c && tgt[c][k] > 0)
                .map(|k| (k, tgt[c][k]))
                .collect();
            errors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ConfusionRow {
                class: c,
                name: target_val.class_names()[c].clone(),
                count: count as usize,
                source_accuracy,
                target_accuracy,
                difference: target_accuracy - source_accuracy,
                misclassified_into: errors.into_iter().take(MISCLASSIFIED_LIMIT).map(|e| e.0).collect(),
            }
        })
        .collect();
    Ok(ConfusionTable { rows, matrix: tgt })
}

impl ConfusionTable {
    /// Rows ordered by `column`; ties keep class order.
    pub fn sorted(&self, column: ConfusionColumn, descending: bool) -> Vec<ConfusionRow> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            let ord = match column {
                ConfusionColumn::Name => a.name.cmp(&b.name),
                ConfusionColumn::SourceAccuracy => a.source_accuracy.total_cmp(&b.source_accuracy),
                ConfusionColumn::TargetAccuracy => a.target_accuracy.total_cmp(&b.target_accuracy),
                ConfusionColumn::Difference => a.difference.total_cmp(&b.difference),
                ConfusionColumn::Misclassified => a.misclassified_into.len().cmp(&b.misclassified_into.len()),
            };
            if descending {
                ord.reverse()
            } else {
                ord
            }
        });
        rows
    }

    pub fn overall_accuracy(&self) -> f64 {
        let total: u32 = self.matrix.iter().flatten().sum();
        let trace: u32 = (0..self.matrix.len()).map(|i| self.matrix[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            f64::from(trace) / f64::from(total)
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(["class", "name", "source_accuracy", "target_accuracy", "difference", "misclassified_into"])
            .map_err(io)?;
        for r in &self.rows {
            let into: Vec<String> = r.misclassified_into.iter().map(usize::to_string).collect();
            w.write_record([
                r.class.to_string(),
                r.name.clone(),
                format!("{:.6}", r.source_accuracy),
                format!("{:.6}", r.target_accuracy),
                format!("{:.6}", r.difference),
                into.join(";"),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}
