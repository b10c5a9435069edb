//! The attention encoder classifier and its hand-written backward pass.
//!
//! Layout per layer (post-norm):
//!
//! ```text
//! A = MultiHead(X, S, S) · W_O        S = X (self) or knowledge memory (cross)
//! H = LayerNorm(X + Dropout(A))
//! Y = LayerNorm(H + Dropout(FFN(H)))
//! ```
//!
//! The final layer output is mean-pooled over non-pad positions and projected
//! to two logits.

use ndarray::{s, Array, Array1, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, MhaGateConfig};
use super::ops::{
    attention_backward, attention_weights, columns, layer_norm, layer_norm_backward,
    positional_table, softmax, Matrix, NormCache,
};
use super::vocab::{Vocabulary, PAD, SEP};
use super::MhaError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_1: Matrix,
    pub b_1: Array1<f64>,
    pub w_2: Matrix,
    pub b_2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `emb_dim × 2` classifier projection.
    pub head_w: Matrix,
    pub head_b: Array1<f64>,
}

/// A named, flattened view of one parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn view<'a, D: Dimension>(name: String, a: &'a Array<f64, D>) -> TensorView<'a> {
    TensorView {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are contiguous"),
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

impl Params {
    pub fn zeros(config: &MhaGateConfig) -> Self {
        let d = config.emb_dim;
        let f = config.ffn_dim;
        let layer = LayerParams {
            w_q: Matrix::zeros((d, d)),
            w_k: Matrix::zeros((d, d)),
            w_v: Matrix::zeros((d, d)),
            w_o: Matrix::zeros((d, d)),
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            w_1: Matrix::zeros((d, f)),
            b_1: Array1::zeros(f),
            w_2: Matrix::zeros((f, d)),
            b_2: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
        };
        Self {
            embedding: Matrix::zeros((config.vocab_size, d)),
            layers: vec![layer; config.n_layers],
            head_w: Matrix::zeros((d, 2)),
            head_b: Array1::zeros(2),
        }
    }

    /// Uniform fan-in/fan-out initialization; norm gains start at one.
    pub fn init(config: &MhaGateConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.emb_dim;
        let f = config.ffn_dim;
        let emb_limit = (3.0 / d as f64).sqrt();
        let embedding = Matrix::from_shape_fn((config.vocab_size, d), |_| {
            rng.gen_range(-emb_limit..emb_limit)
        });
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                w_q: xavier(&mut rng, d, d),
                w_k: xavier(&mut rng, d, d),
                w_v: xavier(&mut rng, d, d),
                w_o: xavier(&mut rng, d, d),
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_1: xavier(&mut rng, d, f),
                b_1: Array1::zeros(f),
                w_2: xavier(&mut rng, f, d),
                b_2: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
            })
            .collect();
        let head_w = xavier(&mut rng, d, 2);
        Self {
            embedding,
            layers,
            head_w,
            head_b: Array1::zeros(2),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = vec![view("embedding".into(), &self.embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layers.{i}.{s}");
            out.push(view(n("w_q"), &l.w_q));
            out.push(view(n("w_k"), &l.w_k));
            out.push(view(n("w_v"), &l.w_v));
            out.push(view(n("w_o"), &l.w_o));
            out.push(view(n("ln1_gain"), &l.ln1_gain));
            out.push(view(n("ln1_bias"), &l.ln1_bias));
            out.push(view(n("w_1"), &l.w_1));
            out.push(view(n("b_1"), &l.b_1));
            out.push(view(n("w_2"), &l.w_2));
            out.push(view(n("b_2"), &l.b_2));
            out.push(view(n("ln2_gain"), &l.ln2_gain));
            out.push(view(n("ln2_bias"), &l.ln2_bias));
        }
        out.push(view("head_w".into(), &self.head_w));
        out.push(view("head_b".into(), &self.head_b));
        out
    }

    /// Mutable flat slices in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn m<D: Dimension>(a: &mut Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are contiguous")
        }
        let mut out = vec![m(&mut self.embedding)];
        for l in &mut self.layers {
            out.push(m(&mut l.w_q));
            out.push(m(&mut l.w_k));
            out.push(m(&mut l.w_v));
            out.push(m(&mut l.w_o));
            out.push(m(&mut l.ln1_gain));
            out.push(m(&mut l.ln1_bias));
            out.push(m(&mut l.w_1));
            out.push(m(&mut l.b_1));
            out.push(m(&mut l.w_2));
            out.push(m(&mut l.b_2));
            out.push(m(&mut l.ln2_gain));
            out.push(m(&mut l.ln2_bias));
        }
        out.push(m(&mut self.head_w));
        out.push(m(&mut self.head_b));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Inputs after validation, pad trimming and truncation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedInput {
    /// The attended (query) sequence.
    pub sequence: Vec<usize>,
    /// Knowledge memory for cross-attention.
    pub memory: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    /// `[p(no augment), p(augment)]`.
    pub probabilities: [f64; 2],
    pub pooled: Array1<f64>,
}

impl GateOutput {
    pub fn augment_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Vec<Matrix>,
    concat: Matrix,
    attn_mask: Option<Matrix>,
    ln1: NormCache,
    hidden: Matrix,
    pre_relu: Matrix,
    activated: Matrix,
    ffn_mask: Option<Matrix>,
    ln2: NormCache,
}

pub(crate) struct ForwardCache {
    input: PreparedInput,
    embed_mask: Option<Matrix>,
    memory: Option<Matrix>,
    layers: Vec<LayerCache>,
    valid: Vec<bool>,
    pooled: Array1<f64>,
    logits: Array1<f64>,
}

/// Training-time state for dropout.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Matrix {
        let keep = 1.0 - self.rate;
        Matrix::from_shape_fn((rows, cols), |_| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
    }
}

/// Applies dropout to `x` when active, returning the mask used.
fn apply_dropout(x: &mut Matrix, dropout: &mut Option<Dropout<'_>>) -> Option<Matrix> {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let mask = d.mask(x.nrows(), x.ncols());
            *x *= &mask;
            Some(mask)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaGateModel {
    pub config: MhaGateConfig,
    pub params: Params,
    /// Decision threshold on the augment probability.
    pub threshold: f64,
    pub vocabulary: Option<Vocabulary>,
}

impl MhaGateModel {
    pub fn new(config: MhaGateConfig) -> Result<Self, MhaError> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(Self {
            config,
            params,
            threshold: 0.5,
            vocabulary: None,
        })
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = Some(vocabulary);
        self
    }

    pub fn n_parameters(&self) -> usize {
        self.params.n_parameters()
    }

    /// Validates token ids, drops trailing padding and truncates to `max_seq_len`.
    ///
    /// Context is truncated from the left (oldest tokens go first). In concat
    /// mode the joined `context ⊕ SEP ⊕ knowledge` sequence is truncated the
    /// same way; a cross-attention memory keeps its first `max_seq_len` tokens.
    pub fn prepare(
        &self,
        context: &[usize],
        knowledge: Option<&[usize]>,
    ) -> Result<PreparedInput, MhaError> {
        let vocab = self.config.vocab_size;
        for &id in context.iter().chain(knowledge.unwrap_or(&[])) {
            if id >= vocab {
                return Err(MhaError::TokenOutOfRange {
                    id,
                    vocab_size: vocab,
                });
            }
        }
        let trim = |ids: &[usize]| -> Vec<usize> {
            let end = ids.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
            ids[..end].to_vec()
        };
        let max = self.config.max_seq_len;
        let keep_last = |mut ids: Vec<usize>| {
            if ids.len() > max {
                ids.drain(..ids.len() - max);
            }
            ids
        };
        let mode = self.config.fusion_mode;
        let knowledge = match (mode.needs_knowledge(), knowledge) {
            (true, None) => return Err(MhaError::MissingKnowledge(mode)),
            (true, Some(k)) => Some(trim(k)),
            (false, _) => None,
        };
        let context = trim(context);
        Ok(match mode {
            FusionMode::ContextOnly => PreparedInput {
                sequence: keep_last(context),
                memory: None,
            },
            FusionMode::Concat => {
                let mut seq = context;
                seq.push(SEP);
                seq.extend(knowledge.unwrap_or_default());
                PreparedInput {
                    sequence: keep_last(seq),
                    memory: None,
                }
            }
            FusionMode::CrossAttention => {
                let mut memory = knowledge.unwrap_or_default();
                memory.truncate(max);
                PreparedInput {
                    sequence: keep_last(context),
                    memory: Some(memory),
                }
            }
        })
    }

    /// Deterministic inference: class probabilities and the pooled representation.
    pub fn forward(
        &self,
        context: &[usize],
        knowledge: Option<&[usize]>,
    ) -> Result<GateOutput, MhaError> {
        let input = self.prepare(context, knowledge)?;
        let cache = self.forward_cached(input, None, false);
        let probs = softmax(cache.logits.view());
        Ok(GateOutput {
            probabilities: [probs[0], probs[1]],
            pooled: cache.pooled,
        })
    }

    fn embed(&self, ids: &[usize]) -> Matrix {
        let d = self.config.emb_dim;
        let scale = (d as f64).sqrt();
        let mut x = positional_table(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i)
                .scaled_add(scale, &self.params.embedding.row(id));
        }
        x
    }

    pub(crate) fn forward_cached(
        &self,
        input: PreparedInput,
        mut dropout: Option<Dropout<'_>>,
        bypass_layers: bool,
    ) -> ForwardCache {
        let d = self.config.emb_dim;
        let mut x = self.embed(&input.sequence);
        let embed_mask = apply_dropout(&mut x, &mut dropout);
        let memory = input.memory.as_deref().map(|m| self.embed(m));
        let valid: Vec<bool> = input.sequence.iter().map(|&t| t != PAD).collect();
        let memory_valid: Option<Vec<bool>> = input
            .memory
            .as_ref()
            .map(|m| m.iter().map(|&t| t != PAD).collect());

        let mut layers = Vec::new();
        if !bypass_layers && !input.sequence.is_empty() {
            for layer in &self.params.layers {
                let (source, key_valid) = match (&memory, &memory_valid) {
                    (Some(m), Some(v)) => (m, v.as_slice()),
                    _ => (&x, valid.as_slice()),
                };
                let (out, cache) = self.layer_forward(layer, &x, source, key_valid, &mut dropout);
                layers.push(cache);
                x = out;
            }
        }

        let count = valid.iter().filter(|&&v| v).count();
        let mut pooled = Array1::zeros(d);
        if count > 0 {
            for (row, _) in x.rows().into_iter().zip(&valid).filter(|(_, &v)| v) {
                pooled += &row;
            }
            pooled /= count as f64;
        }
        let logits = pooled.dot(&self.params.head_w) + &self.params.head_b;
        ForwardCache {
            input,
            embed_mask,
            memory,
            layers,
            valid,
            pooled,
            logits,
        }
    }

    fn layer_forward(
        &self,
        p: &LayerParams,
        x: &Matrix,
        source: &Matrix,
        key_valid: &[bool],
        dropout: &mut Option<Dropout<'_>>,
    ) -> (Matrix, LayerCache) {
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let q = x.dot(&p.w_q);
        let k = source.dot(&p.w_k);
        let v = source.dot(&p.w_v);
        let mut concat = Matrix::zeros((x.nrows(), self.config.emb_dim));
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = (
                columns(&q, h * dh, dh),
                columns(&k, h * dh, dh),
                columns(&v, h * dh, dh),
            );
            let w = attention_weights(qh, kh, |_, j| key_valid[j]);
            concat
                .slice_mut(s![.., h * dh..(h + 1) * dh])
                .assign(&w.dot(&vh));
            weights.push(w);
        }
        let mut attn = concat.dot(&p.w_o);
        let attn_mask = apply_dropout(&mut attn, dropout);
        let (hidden, ln1) = layer_norm(&(x + &attn), &p.ln1_gain, &p.ln1_bias);
        let pre_relu = hidden.dot(&p.w_1) + &p.b_1;
        let activated = pre_relu.mapv(|z| z.max(0.0));
        let mut ffn = activated.dot(&p.w_2) + &p.b_2;
        let ffn_mask = apply_dropout(&mut ffn, dropout);
        let (out, ln2) = layer_norm(&(&hidden + &ffn), &p.ln2_gain, &p.ln2_bias);
        let cache = LayerCache {
            input: x.clone(),
            q,
            k,
            v,
            weights,
            concat,
            attn_mask,
            ln1,
            hidden,
            pre_relu,
            activated,
            ffn_mask,
            ln2,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients for upstream logit gradient `d_logits`.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Array1<f64>,
        grads: &mut Params,
    ) {
        let d = self.config.emb_dim;
        for i in 0..d {
            for c in 0..2 {
                grads.head_w[[i, c]] += cache.pooled[i] * d_logits[c];
            }
        }
        grads.head_b += d_logits;
        let d_pooled = self.params.head_w.dot(d_logits);

        let n = cache.input.sequence.len();
        let count = cache.valid.iter().filter(|&&v| v).count();
        let mut d_x = Matrix::zeros((n, d));
        if count > 0 {
            let share = &d_pooled / count as f64;
            for (i, _) in cache.valid.iter().enumerate().filter(|(_, &v)| v) {
                d_x.row_mut(i).assign(&share);
            }
        }

        let mut d_memory = cache.memory.as_ref().map(|m| Matrix::zeros(m.dim()));
        for (li, lc) in cache.layers.iter().enumerate().rev() {
            d_x = self.layer_backward(
                &self.params.layers[li],
                lc,
                cache.memory.as_ref(),
                d_x,
                &mut grads.layers[li],
                d_memory.as_mut(),
            );
        }
        if let Some(mask) = &cache.embed_mask {
            d_x *= mask;
        }
        let scale = (d as f64).sqrt();
        for (i, &id) in cache.input.sequence.iter().enumerate() {
            grads.embedding.row_mut(id).scaled_add(scale, &d_x.row(i));
        }
        if let (Some(ids), Some(dm)) = (&cache.input.memory, &d_memory) {
            for (i, &id) in ids.iter().enumerate() {
                grads.embedding.row_mut(id).scaled_add(scale, &dm.row(i));
            }
        }
    }

    fn layer_backward(
        &self,
        p: &LayerParams,
        c: &LayerCache,
        memory: Option<&Matrix>,
        d_out: Matrix,
        g: &mut LayerParams,
        d_memory: Option<&mut Matrix>,
    ) -> Matrix {
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();

        let (d_r2, d_gain2, d_bias2) = layer_norm_backward(&d_out, &c.ln2, &p.ln2_gain);
        g.ln2_gain += &d_gain2;
        g.ln2_bias += &d_bias2;
        let mut d_hidden = d_r2.clone();
        let mut d_ffn = d_r2;
        if let Some(mask) = &c.ffn_mask {
            d_ffn *= mask;
        }
        g.w_2 += &c.activated.t().dot(&d_ffn);
        g.b_2 += &d_ffn.sum_axis(ndarray::Axis(0));
        let mut d_pre = d_ffn.dot(&p.w_2.t());
        d_pre.zip_mut_with(&c.pre_relu, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        g.w_1 += &c.hidden.t().dot(&d_pre);
        g.b_1 += &d_pre.sum_axis(ndarray::Axis(0));
        d_hidden += &d_pre.dot(&p.w_1.t());

        let (d_r1, d_gain1, d_bias1) = layer_norm_backward(&d_hidden, &c.ln1, &p.ln1_gain);
        g.ln1_gain += &d_gain1;
        g.ln1_bias += &d_bias1;
        let mut d_x = d_r1.clone();
        let mut d_attn = d_r1;
        if let Some(mask) = &c.attn_mask {
            d_attn *= mask;
        }
        g.w_o += &c.concat.t().dot(&d_attn);
        let d_concat = d_attn.dot(&p.w_o.t());

        let mut d_q = Matrix::zeros(c.q.dim());
        let mut d_k = Matrix::zeros(c.k.dim());
        let mut d_v = Matrix::zeros(c.v.dim());
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let (dq, dk, dv) = attention_backward(
                c.q.slice(cols),
                c.k.slice(cols),
                c.v.slice(cols),
                &c.weights[h],
                d_concat.slice(cols),
            );
            d_q.slice_mut(cols).assign(&dq);
            d_k.slice_mut(cols).assign(&dk);
            d_v.slice_mut(cols).assign(&dv);
        }
        g.w_q += &c.input.t().dot(&d_q);
        d_x += &d_q.dot(&p.w_q.t());
        let source = memory.unwrap_or(&c.input);
        g.w_k += &source.t().dot(&d_k);
        g.w_v += &source.t().dot(&d_v);
        let d_source = d_k.dot(&p.w_k.t()) + d_v.dot(&p.w_v.t());
        match d_memory {
            Some(dm) => *dm += &d_source,
            None => d_x += &d_source,
        }
        d_x
    }

    /// Weighted cross-entropy of one example; accumulates `scale ·` its gradient into `grads`.
    pub(crate) fn accumulate_gradients(
        &self,
        input: PreparedInput,
        label: bool,
        weight: f64,
        scale: f64,
        grads: &mut Params,
        dropout: Option<Dropout<'_>>,
        bypass_layers: bool,
    ) -> f64 {
        let cache = self.forward_cached(input, dropout, bypass_layers);
        let (loss, probs) = cross_entropy(&cache.logits, label);
        let mut d_logits = probs;
        d_logits[usize::from(label)] -= 1.0;
        d_logits *= weight * scale;
        self.backward(&cache, &d_logits, grads);
        weight * loss
    }

    /// Augment probability for an already prepared input.
    pub(crate) fn score_prepared(&self, input: PreparedInput) -> f64 {
        softmax(self.forward_cached(input, None, false).logits.view())[1]
    }

    /// Weighted cross-entropy of one example without dropout.
    pub(crate) fn loss(
        &self,
        input: PreparedInput,
        label: bool,
        weight: f64,
        bypass_layers: bool,
    ) -> f64 {
        let cache = self.forward_cached(input, None, bypass_layers);
        weight * cross_entropy(&cache.logits, label).0
    }
}

/// Returns `(-log p_label, softmax(logits))`.
fn cross_entropy(logits: &Array1<f64>, label: bool) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + logits.mapv(|x| (x - max).exp()).sum().ln();
    let probs = logits.mapv(|x| (x - lse).exp());
    (lse - logits[usize::from(label)], probs)
}

/// Free-function form of [`MhaGateModel::forward`].
pub fn encoder_forward(
    model: &MhaGateModel,
    context_tokens: &[usize],
    knowledge_tokens: Option<&[usize]>,
) -> Result<GateOutput, MhaError> {
    model.forward(context_tokens, knowledge_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: FusionMode) -> MhaGateModel {
        let mut c = MhaGateConfig::new(2, 2, 8, 20);
        c.fusion_mode = mode;
        c.max_seq_len = 10;
        c.dropout_rate = 0.0;
        c.seed = 3;
        MhaGateModel::new(c).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = small(FusionMode::ContextOnly);
        let out = m.forward(&[4, 5, 6, 7], None).unwrap();
        let [p0, p1] = out.probabilities;
        assert!(p0 > 0.0 && p1 > 0.0 && p0 < 1.0 && p1 < 1.0);
        assert!((p0 + p1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_length_and_cap() {
        let m = small(FusionMode::Concat);
        let p = m.prepare(&[3, 4, 5], Some(&[6, 7])).unwrap();
        assert_eq!(p.sequence, [3, 4, 5, SEP, 6, 7]);
        let p = m
            .prepare(&[3, 4, 5, 6, 7, 8], Some(&[9, 10, 11, 12, 13]))
            .unwrap();
        assert_eq!(p.sequence.len(), 10);
        assert_eq!(p.sequence, [5, 6, 7, 8, SEP, 9, 10, 11, 12, 13]);
    }

    #[test]
    fn context_truncates_from_left() {
        let m = small(FusionMode::ContextOnly);
        let ctx: Vec<usize> = (3..18).collect();
        assert_eq!(
            m.prepare(&ctx, None).unwrap().sequence,
            (8..18).collect::<Vec<_>>()
        );
    }

    #[test]
    fn missing_knowledge_is_an_error() {
        for mode in [FusionMode::Concat, FusionMode::CrossAttention] {
            assert!(matches!(
                small(mode).forward(&[3, 4], None),
                Err(MhaError::MissingKnowledge(_))
            ));
        }
    }

    #[test]
    fn out_of_vocabulary_token_rejected() {
        assert!(matches!(
            small(FusionMode::ContextOnly).forward(&[3, 99], None),
            Err(MhaError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn trailing_padding_is_ignored() {
        for mode in [
            FusionMode::ContextOnly,
            FusionMode::Concat,
            FusionMode::CrossAttention,
        ] {
            let m = small(mode);
            let know = [8, 9, 10];
            let a = m.forward(&[3, 4, 5], Some(&know)).unwrap();
            let b = m
                .forward(&[3, 4, 5, PAD, PAD, PAD], Some(&[8, 9, 10, PAD]))
                .unwrap();
            assert!((a.augment_probability() - b.augment_probability()).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padding_gives_finite_output() {
        let m = small(FusionMode::ContextOnly);
        let out = m.forward(&[PAD, PAD, PAD], None).unwrap();
        assert!(out.probabilities.iter().all(|p| p.is_finite()));
        assert!(out.pooled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn internal_padding_is_masked_out_of_pooling() {
        let m = small(FusionMode::ContextOnly);
        let out = m.forward(&[3, PAD, 4], None).unwrap();
        assert!(out.probabilities.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn residual_norm_statistics() {
        let m = small(FusionMode::ContextOnly);
        let input = m.prepare(&[3, 4, 5, 6], None).unwrap();
        let cache = m.forward_cached(input, None, false);
        assert_eq!(cache.layers.len(), 2);
        for lc in &cache.layers {
            for cache in [&lc.ln1, &lc.ln2] {
                for row in cache.normalized.rows() {
                    let mean = row.mean().unwrap();
                    let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                    assert!(mean.abs() < 1e-5);
                    assert!((var - 1.0).abs() < 1e-5, "variance {var}");
                }
            }
        }
    }

    #[test]
    fn tensor_views_cover_all_parameters() {
        let mut m = small(FusionMode::ContextOnly);
        let n = m.n_parameters();
        assert_eq!(n, m.config.n_parameters());
        let names = m.params.tensors().len();
        assert_eq!(m.params.tensors_mut().len(), names);
    }
}
