//! BLEU and ROUGE over [`tokenize`]d text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::retrieval::tokenize;

/// Substituted for a zero clipped n-gram count.
pub const BLEU_SMOOTHING: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Corpus BLEU in `[0, 100]`: clipped n-gram precisions up to 4-grams with
/// uniform weights, the brevity penalty, and [`BLEU_SMOOTHING`] in place of
/// zero match counts. When every hypothesis is shorter than `n` tokens,
/// order `n` is dropped and the weights spread over the remaining orders.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<f64, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricsError::Empty("references"));
    }
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize(h.as_ref());
        let r = tokenize(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, &count) in &hc {
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    // orders longer than every hypothesis have no n-grams and are left out
    let orders: Vec<usize> = (0..BLEU_MAX_ORDER).filter(|&i| totals[i] > 0).collect();
    let log_precision: f64 = orders
        .iter()
        .map(|&i| {
            let m = if matches[i] == 0 {
                BLEU_SMOOTHING
            } else {
                matches[i] as f64
            };
            (m / totals[i] as f64).ln()
        })
        .sum::<f64>()
        / orders.len() as f64;
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "rouge1")]
    R1,
    #[serde(rename = "rouge2")]
    R2,
    #[serde(rename = "rougeL")]
    RL,
}

fn f_measure(overlap: usize, hyp_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Balanced ROUGE F-measure; 0 when either side is empty.
pub fn rouge(hypothesis: &str, reference: &str, variant: RougeVariant) -> f64 {
    let h = tokenize(hypothesis);
    let r = tokenize(reference);
    match variant {
        RougeVariant::R1 | RougeVariant::R2 => {
            let n = if variant == RougeVariant::R1 { 1 } else { 2 };
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            let overlap = hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
            f_measure(
                overlap,
                h.len().saturating_sub(n - 1),
                r.len().saturating_sub(n - 1),
            )
        }
        RougeVariant::RL => f_measure(lcs_len(&h, &r), h.len(), r.len()),
    }
}
