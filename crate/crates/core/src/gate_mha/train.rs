use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassWeighting, ThresholdPolicy, TrainingConfig};
use super::model::{Dropout, MhaGateModel, Params, PreparedInput};
use super::MhaError;
use crate::corpus::TurnKey;
use crate::metrics::{best_f1_threshold, report_at_threshold, ClassificationReport};

/// One labeled training or evaluation example in token-id form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateExample {
    pub key: Option<TurnKey>,
    pub context: Vec<usize>,
    pub knowledge: Option<Vec<usize>>,
    pub label: bool,
}

impl GateExample {
    pub fn new(context: Vec<usize>, knowledge: Option<Vec<usize>>, label: bool) -> Self {
        Self {
            key: None,
            context,
            knowledge,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Class-weighted mean cross-entropy on the training set, dropout off.
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub dev_auc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: MhaGateModel,
    /// Entry 0 is the untrained model.
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub threshold: f64,
}

/// `[w_negative, w_positive]` with `w_c = N / (2 · N_c)`.
pub fn class_weights(labels: &[bool], scheme: ClassWeighting) -> Result<[f64; 2], MhaError> {
    if scheme == ClassWeighting::None {
        return Ok([1.0, 1.0]);
    }
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MhaError::SingleClass(pos > 0));
    }
    Ok([n / (2.0 * neg as f64), n / (2.0 * pos as f64)])
}

fn prepare_all(model: &MhaGateModel, data: &[GateExample]) -> Result<Vec<PreparedInput>, MhaError> {
    data.iter()
        .map(|ex| model.prepare(&ex.context, ex.knowledge.as_deref()))
        .collect()
}

fn mean_loss(model: &MhaGateModel, inputs: &[PreparedInput], labels: &[bool], w: [f64; 2]) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    for (input, &y) in inputs.iter().zip(labels) {
        let wy = w[usize::from(y)];
        total += model.loss(input.clone(), y, wy, false);
        norm += wy;
    }
    total / norm
}

fn scores_of(model: &MhaGateModel, inputs: &[PreparedInput]) -> Vec<f64> {
    inputs
        .iter()
        .map(|input| model.score_prepared(input.clone()))
        .collect()
}

/// Augment probabilities for `data`, sharded across `workers` threads.
/// Output order matches input order.
pub fn score_examples(
    model: &MhaGateModel,
    data: &[GateExample],
    workers: usize,
) -> Result<Vec<f64>, MhaError> {
    let inputs = prepare_all(model, data)?;
    let workers = workers.max(1).min(inputs.len().max(1));
    let chunk = inputs.len().div_ceil(workers).max(1);
    let parts: Vec<Vec<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| scope.spawn(move || scores_of(model, part)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    });
    Ok(parts.concat())
}

/// Single-threaded [`score_examples`].
pub fn predict(model: &MhaGateModel, data: &[GateExample]) -> Result<Vec<f64>, MhaError> {
    score_examples(model, data, 1)
}

/// Metrics of `model` on `data` at the model's threshold.
pub fn evaluate(
    model: &MhaGateModel,
    data: &[GateExample],
) -> Result<ClassificationReport, MhaError> {
    if data.is_empty() {
        return Err(MhaError::EmptyData);
    }
    let scores = predict(model, data)?;
    let labels: Vec<bool> = data.iter().map(|e| e.label).collect();
    Ok(report_at_threshold(&labels, &scores, model.threshold))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let grads = grads.tensors();
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i].data);
            for j in 0..p.len() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
                p[j] -= step;
            }
        }
    }
}

/// Mini-batch training with Adam and early stopping.
///
/// Model selection tracks F1 on `dev` (on the training set when `dev` is
/// `None`), breaking ties by lower loss on that set. The weights of the best
/// epoch are restored and the decision threshold set per the policy.
pub fn train(
    mut model: MhaGateModel,
    train: &[GateExample],
    dev: Option<&[GateExample]>,
    tc: &TrainingConfig,
) -> Result<TrainingOutcome, MhaError> {
    tc.validate()?;
    if train.is_empty() || dev.is_some_and(|d| d.is_empty()) {
        return Err(MhaError::EmptyData);
    }
    let labels: Vec<bool> = train.iter().map(|e| e.label).collect();
    let weights = class_weights(&labels, tc.class_weighting)?;
    let inputs = prepare_all(&model, train)?;
    let (sel_inputs, sel_labels) = match dev {
        Some(d) => (prepare_all(&model, d)?, d.iter().map(|e| e.label).collect()),
        None => (inputs.clone(), labels.clone()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(&model.params);
    let evaluate_epoch = |model: &MhaGateModel, epoch: usize| {
        let train_loss = mean_loss(model, &inputs, &labels, weights);
        let scores = scores_of(model, &sel_inputs);
        let r = report_at_threshold(&sel_labels, &scores, 0.5);
        let sel_loss = mean_loss(model, &sel_inputs, &sel_labels, weights);
        let entry = EpochLog {
            epoch,
            train_loss,
            dev_precision: r.precision,
            dev_recall: r.recall,
            dev_f1: r.f1,
            dev_auc: r.auc,
        };
        (entry, sel_loss)
    };

    let (first, _) = evaluate_epoch(&model, 0);
    log::info!("epoch 0: train loss {:.5}", first.train_loss);
    let mut log = vec![first];
    let mut best: Option<(f64, f64, usize, Params)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(tc.batch_size).enumerate() {
            let mut grads = Params::zeros(&model.config);
            let scale = 1.0 / idx.len() as f64;
            let mut batch_loss = 0.0;
            for &i in idx {
                let dropout = Dropout {
                    rate: model.config.dropout_rate,
                    rng: &mut rng,
                };
                batch_loss += model.accumulate_gradients(
                    inputs[i].clone(),
                    labels[i],
                    weights[usize::from(labels[i])],
                    scale,
                    &mut grads,
                    Some(dropout),
                    false,
                ) * scale;
            }
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(MhaError::Diverged {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            adam.update(&mut model.params, &grads, tc.learning_rate);
        }

        let (entry, sel_loss) = evaluate_epoch(&model, epoch);
        if !entry.train_loss.is_finite() {
            return Err(MhaError::Diverged {
                epoch,
                batch: usize::MAX,
                loss: entry.train_loss,
            });
        }
        log::info!(
            "epoch {epoch}: train loss {:.5}, dev F1 {:.4}, AUC {:.4}",
            entry.train_loss,
            entry.dev_f1,
            entry.dev_auc
        );
        let improved = best.as_ref().is_none_or(|(f1, loss, _, _)| {
            entry.dev_f1 > *f1 || (entry.dev_f1 == *f1 && sel_loss < *loss)
        });
        if improved {
            best = Some((entry.dev_f1, sel_loss, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(entry);
        if stale >= tc.early_stop_patience.max(1) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }

    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    let threshold = match tc.threshold_policy {
        ThresholdPolicy::Fixed => 0.5,
        ThresholdPolicy::DevF1Max => {
            let scores = scores_of(&model, &sel_inputs);
            best_f1_threshold(&sel_labels, &scores).unwrap_or(0.5)
        }
    };
    model.threshold = threshold;
    Ok(TrainingOutcome {
        model,
        log,
        best_epoch,
        threshold,
    })
}

/// One JSON object per line.
pub fn write_training_log<W: Write>(log: &[EpochLog], mut out: W) -> std::io::Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
