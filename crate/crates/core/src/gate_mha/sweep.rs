use std::cmp::Ordering;

use serde::Serialize;

use super::config::{MhaGateConfig, TrainingConfig};
use super::model::MhaGateModel;
use super::train::{evaluate, train, GateExample};
use super::MhaError;
use crate::metrics::{aligned_table, ClassificationReport};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub config: MhaGateConfig,
    pub label: String,
    pub n_parameters: usize,
    /// Dev metrics at the trained model's threshold.
    pub report: Option<ClassificationReport>,
    /// Why the cell failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Index of the best row: highest F1, then AUC, then fewest parameters.
    pub best: Option<usize>,
}

impl SweepTable {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mark = if Some(i) == self.best { "*" } else { "" };
                let mut cells = vec![format!("{}{mark}", r.label), r.n_parameters.to_string()];
                match (&r.report, &r.error) {
                    (Some(m), _) => cells.extend(
                        [m.precision, m.recall, m.f1, m.auc, m.fdr].map(|v| format!("{v:.4}")),
                    ),
                    (None, e) => cells.push(format!("failed: {}", e.as_deref().unwrap_or("?"))),
                }
                cells
            })
            .collect();
        aligned_table(&["config", "params", "P", "R", "F1", "AUC", "FDR"], &rows)
    }
}

fn better(a: &SweepRow, b: &SweepRow) -> Ordering {
    let (Some(x), Some(y)) = (&a.report, &b.report) else {
        return Ordering::Equal;
    };
    x.f1.total_cmp(&y.f1)
        .then(x.auc.total_cmp(&y.auc))
        .then(b.n_parameters.cmp(&a.n_parameters))
}

/// Trains and evaluates every configuration; failing cells are recorded and skipped.
pub fn sweep(
    configs: &[MhaGateConfig],
    train_data: &[GateExample],
    dev: &[GateExample],
    tc: &TrainingConfig,
) -> Result<SweepTable, MhaError> {
    if configs.is_empty() {
        return Err(MhaError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        log::info!("sweep cell {}", config.label());
        let result = MhaGateModel::new(config.clone())
            .and_then(|m| train(m, train_data, Some(dev), tc))
            .and_then(|out| evaluate(&out.model, dev));
        if let Err(e) = &result {
            log::warn!("sweep cell {} failed: {e}", config.label());
        }
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(SweepRow {
            config: config.clone(),
            label: config.label(),
            n_parameters: config.n_parameters(),
            report,
            error,
        });
    }
    let best = (0..rows.len())
        .filter(|&i| rows[i].report.is_some())
        .reduce(|b, i| {
            if better(&rows[i], &rows[b]) == Ordering::Greater {
                i
            } else {
                b
            }
        });
    Ok(SweepTable { rows, best })
}
