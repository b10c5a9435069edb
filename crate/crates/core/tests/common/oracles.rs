//! Slow, obviously-correct reimplementations used as test oracles.

use std::collections::BTreeMap;

/// Cosine tf-idf recomputed from raw word counts over a dense vocabulary.
/// Returns `(doc index, score)` sorted by score, then index.
pub fn tfidf_ranking(docs: &[Vec<&str>], query: &[&str]) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let count = |words: &[&str]| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for w in words {
            *m.entry(w.to_string()).or_insert(0.0) += 1.0;
        }
        m
    };
    let counts: Vec<BTreeMap<String, f64>> = docs.iter().map(|d| count(d)).collect();
    let mut vocab: Vec<&String> = counts.iter().flat_map(|c| c.keys()).collect();
    vocab.sort();
    vocab.dedup();
    let idf: Vec<f64> = vocab
        .iter()
        .map(|t| {
            let df = counts.iter().filter(|c| c.contains_key(*t)).count() as f64;
            ((n + 1.0) / (df + 1.0)).ln() + 1.0
        })
        .collect();
    let unit = |tf: &BTreeMap<String, f64>| -> Vec<f64> {
        let v: Vec<f64> = vocab
            .iter()
            .zip(&idf)
            .map(|(t, i)| tf.get(*t).copied().unwrap_or(0.0) * i)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter().map(|x| x / norm).collect()
        } else {
            v
        }
    };
    let qv = unit(&count(query));
    let mut scored: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| (i, qv.iter().zip(&unit(c)).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Corpus BLEU by explicit enumeration: every hypothesis n-gram occurrence
/// is matched against reference occurrences not yet used.
pub fn bleu(hyps: &[Vec<&str>], refs: &[Vec<&str>], smoothing: f64) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hl, mut rl) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut used = vec![false; r.len().saturating_sub(n - 1)];
            for i in 0..=h.len() - n {
                total[n - 1] += 1;
                if r.len() < n {
                    continue;
                }
                if let Some(j) = (0..=r.len() - n).find(|&j| !used[j] && r[j..j + n] == h[i..i + n])
                {
                    used[j] = true;
                    matched[n - 1] += 1;
                }
            }
        }
    }
    if hl == 0 {
        return 0.0;
    }
    let orders: Vec<usize> = (0..4).filter(|&n| total[n] > 0).collect();
    let mut log_p = 0.0;
    for &n in &orders {
        let m = if matched[n] == 0 {
            smoothing
        } else {
            matched[n] as f64
        };
        log_p += (m / total[n] as f64).ln() / orders.len() as f64;
    }
    let bp = if hl >= rl {
        1.0
    } else {
        (1.0 - rl as f64 / hl as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs(ra, rb)
            } else {
                lcs(ra, b).max(lcs(a, rb))
            }
        }
        _ => 0,
    }
}

pub fn f1(overlap: usize, h: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let (p, r) = (overlap as f64 / h as f64, overlap as f64 / r as f64);
    2.0 * p * r / (p + r)
}
