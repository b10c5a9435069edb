//! Building blocks of the encoder, each with its forward and backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::MhaError;

pub type Matrix = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Sinusoidal encoding of one position: even dims `sin(pos / 10000^(i/d))`,
/// odd dims `cos` of the same angle, `i` the even index of the pair.
pub fn positional_encoding(position: usize, emb_dim: usize) -> Result<Vec<f64>, MhaError> {
    if !emb_dim.is_multiple_of(2) {
        return Err(MhaError::OddEmbeddingDim(emb_dim));
    }
    let mut out = vec![0.0; emb_dim];
    for pair in (0..emb_dim).step_by(2) {
        let angle = position as f64 / 10000f64.powf(pair as f64 / emb_dim as f64);
        out[pair] = angle.sin();
        out[pair + 1] = angle.cos();
    }
    Ok(out)
}

pub(crate) fn positional_table(len: usize, emb_dim: usize) -> Matrix {
    let mut table = Matrix::zeros((len, emb_dim));
    for pos in 0..len {
        let row = positional_encoding(pos, emb_dim).expect("embedding dim validated as even");
        table.row_mut(pos).assign(&Array1::from(row));
    }
    table
}

/// Output of [`scaled_attention`] together with the attention weights.
#[derive(Debug, Clone)]
pub struct Attention {
    pub output: Matrix,
    pub weights: Matrix,
}

/// `softmax(Q Kᵀ / √d_k) V`, row-wise, where `visible[i][j]` says whether
/// query `i` may attend to key `j` (`None` means every key is visible).
pub fn scaled_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    visible: Option<&Array2<bool>>,
) -> Result<Attention, MhaError> {
    if q.ncols() != k.ncols() {
        return Err(MhaError::Shape(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(MhaError::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if let Some(m) = visible {
        if m.dim() != (q.nrows(), k.nrows()) {
            return Err(MhaError::Shape(format!(
                "mask is {:?}, expected ({}, {})",
                m.dim(),
                q.nrows(),
                k.nrows()
            )));
        }
        if let Some(row) = m.rows().into_iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(MhaError::AllKeysMasked { row });
        }
    }
    if k.nrows() == 0 {
        return Err(MhaError::AllKeysMasked { row: 0 });
    }
    let weights = attention_weights(q.view(), k.view(), |i, j| visible.is_none_or(|m| m[[i, j]]));
    let output = weights.dot(v);
    Ok(Attention { output, weights })
}

/// Masked, scaled softmax weights. Rows with no visible key are all zero.
pub(crate) fn attention_weights(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    visible: impl Fn(usize, usize) -> bool,
) -> Matrix {
    let scale = 1.0 / (k.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t());
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for (j, x) in row.iter_mut().enumerate() {
            if visible(i, j) {
                *x *= scale;
                max = max.max(*x);
            }
        }
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            if visible(i, j) {
                *x = (*x - max).exp();
                sum += *x;
            } else {
                *x = 0.0;
            }
        }
        row.mapv_inplace(|x| x / sum);
    }
    scores
}

/// Gradients of `P V` with `P = softmax(Q Kᵀ · scale)` with respect to Q, K and V.
pub(crate) fn attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    weights: &Matrix,
    d_out: ArrayView2<f64>,
) -> (Matrix, Matrix, Matrix) {
    let scale = 1.0 / (k.ncols() as f64).sqrt();
    let d_v = weights.t().dot(&d_out);
    let d_p = d_out.dot(&v.t());
    let mut d_s = weights * &d_p;
    for (i, mut row) in d_s.rows_mut().into_iter().enumerate() {
        let dot: f64 = row.sum();
        for (j, x) in row.iter_mut().enumerate() {
            *x -= weights[[i, j]] * dot;
        }
    }
    d_s.mapv_inplace(|x| x * scale);
    let d_q = d_s.dot(&k);
    let d_k = d_s.t().dot(&q);
    (d_q, d_k, d_v)
}

/// `max(0, x W1 + b1) W2 + b2`, row-wise.
pub fn feed_forward(
    x: &Matrix,
    w1: &Matrix,
    b1: &Array1<f64>,
    w2: &Matrix,
    b2: &Array1<f64>,
) -> Result<Matrix, MhaError> {
    if x.ncols() != w1.nrows()
        || w1.ncols() != b1.len()
        || b1.len() != w2.nrows()
        || w2.ncols() != b2.len()
    {
        return Err(MhaError::Shape(format!(
            "x {:?}, W1 {:?}, b1 {}, W2 {:?}, b2 {}",
            x.dim(),
            w1.dim(),
            b1.len(),
            w2.dim(),
            b2.len()
        )));
    }
    let hidden = (x.dot(w1) + b1).mapv(|z| z.max(0.0));
    Ok(hidden.dot(w2) + b2)
}

/// Per-row normalization state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub normalized: Matrix,
    pub inv_std: Array1<f64>,
}

/// Normalizes each row to zero mean and unit variance; gain and bias are applied afterwards.
pub(crate) fn normalize_rows(x: &Matrix) -> NormCache {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in normalized.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        inv_std[i] = r;
    }
    NormCache {
        normalized,
        inv_std,
    }
}

pub(crate) fn layer_norm(
    x: &Matrix,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Matrix, NormCache) {
    let cache = normalize_rows(x);
    let y = &cache.normalized * gain + bias;
    (y, cache)
}

/// Returns `(dx, d_gain, d_bias)`.
pub(crate) fn layer_norm_backward(
    d_y: &Matrix,
    cache: &NormCache,
    gain: &Array1<f64>,
) -> (Matrix, Array1<f64>, Array1<f64>) {
    let d_gain = (d_y * &cache.normalized).sum_axis(Axis(0));
    let d_bias = d_y.sum_axis(Axis(0));
    let d_hat = d_y * gain;
    let d = d_y.ncols() as f64;
    let mut d_x = Matrix::zeros(d_y.dim());
    for i in 0..d_y.nrows() {
        let dh = d_hat.row(i);
        let xh = cache.normalized.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let r = cache.inv_std[i];
        d_x.row_mut(i)
            .assign(&((&dh - mean_dh - &(&xh * mean_dh_xh)) * r));
    }
    (d_x, d_gain, d_bias)
}

pub(crate) fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exp = logits.mapv(|x| (x - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// View of columns `[start, start + width)`.
pub(crate) fn columns(m: &Matrix, start: usize, width: usize) -> ArrayView2<'_, f64> {
    m.slice(s![.., start..start + width])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn positional_encoding_at_zero() {
        let pe = positional_encoding(0, 8).unwrap();
        for (i, v) in pe.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn positional_encoding_first_dim() {
        let pe = positional_encoding(1, 4).unwrap();
        assert!((pe[0] - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!(positional_encoding(1, 5).is_err());
    }

    #[test]
    fn positional_encoding_bounded() {
        for pos in [0, 1, 7, 100, 5000] {
            assert!(positional_encoding(pos, 64)
                .unwrap()
                .iter()
                .all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn attention_single_key_returns_value() {
        let q = array![[0.3, -1.2]];
        let k = array![[2.0, 0.5]];
        let v = array![[4.0, -7.0, 1.5]];
        let out = scaled_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.output, v);
    }

    #[test]
    fn attention_equal_scores_average_values() {
        let q = array![[1.0, 1.0]];
        let k = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[2.0, 0.0], [4.0, 6.0]];
        let out = scaled_attention(&q, &k, &v, None).unwrap();
        assert!((out.output[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((out.output[[0, 1]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn attention_hand_computed_weights() {
        // d_k = 4 and Q·Kᵀ = [2, 0] → softmax([1, 0])
        let q = array![[1.0, 1.0, 0.0, 0.0]];
        let k = array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
        let v = Matrix::eye(2);
        let out = scaled_attention(&q, &k, &v, None).unwrap();
        let e = std::f64::consts::E;
        assert!((out.weights[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out.weights[[0, 0]] - 0.7311).abs() < 1e-4);
        assert!((out.weights[[0, 1]] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn attention_mask_excludes_keys() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let k = array![[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let v = array![[1.0], [2.0], [100.0]];
        let mask = array![[true, true, false], [true, false, false]];
        let out = scaled_attention(&q, &k, &v, Some(&mask)).unwrap();
        assert_eq!(out.weights[[0, 2]], 0.0);
        assert_eq!(out.output[[1, 0]], 1.0);
        for row in out.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let all_masked = array![[true, false, false], [false, false, false]];
        assert!(matches!(
            scaled_attention(&q, &k, &v, Some(&all_masked)),
            Err(MhaError::AllKeysMasked { row: 1 })
        ));
    }

    #[test]
    fn feed_forward_identity_relu() {
        let eye = Matrix::eye(2);
        let zero = Array1::zeros(2);
        let out = feed_forward(&array![[1.0, -2.0]], &eye, &zero, &eye, &zero).unwrap();
        assert_eq!(out, array![[1.0, 0.0]]);
    }

    #[test]
    fn feed_forward_dead_hidden_layer_returns_bias() {
        let w1 = -Matrix::eye(2);
        let b2 = array![0.25, -3.0];
        let out = feed_forward(
            &array![[1.0, 2.0]],
            &w1,
            &Array1::zeros(2),
            &array![[9.0, 9.0], [9.0, 9.0]],
            &b2,
        )
        .unwrap();
        assert_eq!(out.row(0), b2);
    }

    #[test]
    fn feed_forward_shape_mismatch() {
        let eye = Matrix::eye(2);
        let zero = Array1::zeros(3);
        assert!(feed_forward(&array![[1.0, 2.0]], &eye, &zero, &eye, &zero).is_err());
    }

    #[test]
    fn feed_forward_matches_elementwise_oracle() {
        let x = array![[0.5, -1.5]];
        let w1 = array![[0.2, -0.7], [1.1, 0.4]];
        let b1 = array![0.1, 0.3];
        let w2 = array![[-0.5, 2.0], [0.9, 0.6]];
        let b2 = array![0.05, -0.2];
        let got = feed_forward(&x, &w1, &b1, &w2, &b2).unwrap();
        let mut hidden = [0.0; 2];
        for j in 0..2 {
            let mut z = b1[j];
            for i in 0..2 {
                z += x[[0, i]] * w1[[i, j]];
            }
            hidden[j] = if z > 0.0 { z } else { 0.0 };
        }
        for j in 0..2 {
            let mut y = b2[j];
            for (i, h) in hidden.iter().enumerate() {
                y += h * w2[[i, j]];
            }
            assert!((got[[0, j]] - y).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let x = array![[1.0, 4.0, -2.0, 7.0], [0.5, 0.5, 3.0, -9.0]];
        let cache = normalize_rows(&x);
        for row in cache.normalized.rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }
}
