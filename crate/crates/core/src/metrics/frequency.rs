use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{relative_position, Dialogue, TurnKey};

pub const POSITION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramAxis {
    PositionDecile,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub axis: HistogramAxis,
    /// `human` or the name of the gate that produced the decisions.
    pub source: String,
    pub counts: BTreeMap<String, usize>,
    /// Counts normalized over all augmentation events.
    pub bins: BTreeMap<String, f64>,
    pub n_events: usize,
    /// No augmented turns; all fractions are zero.
    pub empty: bool,
}

impl FrequencyHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,axis,bin,count,fraction\n");
        let axis = match self.axis {
            HistogramAxis::PositionDecile => "position_decile",
            HistogramAxis::Domain => "domain",
        };
        for (bin, fraction) in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.source, axis, bin, self.counts[bin], fraction
            ));
        }
        out
    }

    /// Bin with the largest fraction, earliest bin on ties.
    pub fn modal_bin(&self) -> Option<&str> {
        if self.empty {
            return None;
        }
        self.counts
            .iter()
            .fold(None::<(&String, usize)>, |best, (b, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((b, c)),
            })
            .map(|(b, _)| b.as_str())
    }
}

pub fn decile_label(bin: usize) -> String {
    let lo = bin as f64 / POSITION_BINS as f64;
    let hi = (bin + 1) as f64 / POSITION_BINS as f64;
    if bin + 1 == POSITION_BINS {
        format!("[{lo:.1},{hi:.1}]")
    } else {
        format!("[{lo:.1},{hi:.1})")
    }
}

/// Equal-width bin of a relative position; the last bin is closed on the right.
pub fn decile_of(position: f64) -> usize {
    ((position * POSITION_BINS as f64).floor() as usize).min(POSITION_BINS - 1)
}

/// Where augmentations happen, by relative turn position or by dialogue domain.
///
/// Position bins always include all ten deciles. A dialogue with several
/// domains contributes one event to each of them.
pub fn augmentation_frequency(
    decisions: &BTreeMap<TurnKey, bool>,
    corpus: &[Dialogue],
    axis: HistogramAxis,
    source: &str,
) -> Result<FrequencyHistogram, MetricsError> {
    let by_id: HashMap<&str, &Dialogue> =
        corpus.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    if axis == HistogramAxis::PositionDecile {
        for bin in 0..POSITION_BINS {
            counts.insert(decile_label(bin), 0);
        }
    }
    let mut n_events = 0;
    for (key, &augment) in decisions {
        let dialogue = by_id
            .get(key.dialogue_id.as_str())
            .filter(|d| key.turn_index < d.n_system_turns())
            .ok_or_else(|| MetricsError::UnknownTurn(key.clone()))?;
        if !augment {
            continue;
        }
        match axis {
            HistogramAxis::PositionDecile => {
                let pos = relative_position(key.turn_index, dialogue.n_system_turns())
                    .expect("turn index checked against the dialogue");
                *counts.entry(decile_label(decile_of(pos))).or_default() += 1;
                n_events += 1;
            }
            HistogramAxis::Domain => {
                let domains: BTreeSet<&String> = dialogue.domains.iter().collect();
                for domain in domains {
                    *counts.entry(domain.clone()).or_default() += 1;
                    n_events += 1;
                }
            }
        }
    }
    let bins = counts
        .iter()
        .map(|(b, &c)| {
            let f = if n_events == 0 {
                0.0
            } else {
                c as f64 / n_events as f64
            };
            (b.clone(), f)
        })
        .collect();
    Ok(FrequencyHistogram {
        axis,
        source: source.to_string(),
        counts,
        bins,
        n_events,
        empty: n_events == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Speaker, Turn};

    fn dialogue(id: &str, domain: &str, n_system: usize) -> Dialogue {
        let mut turns = Vec::new();
        for i in 0..n_system {
            for speaker in [Speaker::User, Speaker::System] {
                turns.push(Turn {
                    speaker,
                    text: format!("t{i}"),
                    augment_label: None,
                    gold_snippet_ids: vec![],
                });
            }
        }
        Dialogue {
            dialogue_id: id.into(),
            domains: vec![domain.into()],
            turns,
        }
    }

    #[test]
    fn first_turn_augmentations_fill_first_decile() {
        let corpus = [dialogue("a", "Hotels", 5), dialogue("b", "Trains", 3)];
        let decisions: BTreeMap<_, _> = [
            (TurnKey::new("a", 0), true),
            (TurnKey::new("a", 3), false),
            (TurnKey::new("b", 0), true),
        ]
        .into();
        let h = augmentation_frequency(&decisions, &corpus, HistogramAxis::PositionDecile, "human")
            .unwrap();
        assert_eq!(h.bins[&decile_label(0)], 1.0);
        assert_eq!(h.bins.len(), POSITION_BINS);
        assert_eq!(h.modal_bin(), Some("[0.0,0.1)"));
    }

    #[test]
    fn last_turn_lands_in_closed_last_bin() {
        assert_eq!(decile_of(1.0), 9);
        assert_eq!(decile_of(0.95), 9);
        assert_eq!(decile_of(0.0), 0);
    }

    #[test]
    fn domains_split_evenly() {
        let corpus = [dialogue("a", "Hotels", 2), dialogue("b", "Trains", 2)];
        let decisions: BTreeMap<_, _> =
            [(TurnKey::new("a", 1), true), (TurnKey::new("b", 0), true)].into();
        let h = augmentation_frequency(&decisions, &corpus, HistogramAxis::Domain, "mha").unwrap();
        assert_eq!(h.bins["Hotels"], 0.5);
        assert_eq!(h.bins["Trains"], 0.5);
        let total: f64 = h.bins.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_augmentations_flagged() {
        let corpus = [dialogue("a", "Hotels", 2)];
        let decisions: BTreeMap<_, _> = [(TurnKey::new("a", 1), false)].into();
        let h = augmentation_frequency(&decisions, &corpus, HistogramAxis::Domain, "mha").unwrap();
        assert!(h.empty && h.modal_bin().is_none());
    }

    #[test]
    fn unknown_turn_rejected() {
        let corpus = [dialogue("a", "Hotels", 2)];
        let decisions: BTreeMap<_, _> = [(TurnKey::new("a", 7), true)].into();
        assert!(augmentation_frequency(&decisions, &corpus, HistogramAxis::Domain, "x").is_err());
    }
}
