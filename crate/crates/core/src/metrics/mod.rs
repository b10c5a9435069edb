//! Gate classification metrics, response overlap metrics and augmentation
//! frequency analyses. Every function here is pure.

mod classification;
mod frequency;
mod text;

use thiserror::Error;

pub use classification::{
    best_f1_threshold, classification_report, report_at_threshold, report_from_parts, roc_auc,
    ClassificationReport,
};
pub use frequency::{
    augmentation_frequency, decile_label, decile_of, FrequencyHistogram, HistogramAxis,
    POSITION_BINS,
};
pub use text::{bleu, rouge, RougeVariant, BLEU_MAX_ORDER, BLEU_SMOOTHING};

use crate::corpus::TurnKey;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction has a matching label")]
    NoOverlap,
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("decision references unknown turn {0}")]
    UnknownTurn(TurnKey),
}

/// Renders rows as left-aligned, space-padded columns.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

impl ClassificationReport {
    pub fn to_text(&self) -> String {
        let mut rows = vec![
            vec!["precision".into(), format!("{:.4}", self.precision)],
            vec!["recall".into(), format!("{:.4}", self.recall)],
            vec!["f1".into(), format!("{:.4}", self.f1)],
            vec!["auc".into(), format!("{:.4}", self.auc)],
            vec!["fdr".into(), format!("{:.4}", self.fdr)],
            vec![
                "tp/fp/fn/tn".into(),
                format!("{}/{}/{}/{}", self.tp, self.fp, self.fn_, self.tn),
            ],
            vec!["evaluated".into(), self.n_evaluated.to_string()],
        ];
        if let Some(t) = self.threshold {
            rows.push(vec!["threshold".into(), format!("{t:.4}")]);
        }
        if self.n_unparsed_excluded > 0 {
            rows.push(vec![
                "unparsed (excluded)".into(),
                self.n_unparsed_excluded.to_string(),
            ]);
        }
        if self.n_unlabeled_excluded > 0 {
            rows.push(vec![
                "unlabeled (excluded)".into(),
                self.n_unlabeled_excluded.to_string(),
            ]);
        }
        aligned_table(&["metric", "value"], &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = aligned_table(&["a", "bb"], &[vec!["long".into(), "x".into()]]);
        assert_eq!(t, "a     bb\nlong  x\n");
    }
}
