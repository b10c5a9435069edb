use serde::Serialize;

use super::config::MhaGateConfig;
use super::model::{MhaGateModel, Params};
use super::train::GateExample;
use super::MhaError;

/// Central-difference step used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// `(tensor name, ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖))`.
    pub per_tensor: Vec<(String, f64)>,
}

/// Compares backpropagated gradients with central differences for every tensor.
pub fn gradient_check(
    config: &MhaGateConfig,
    example: &GateExample,
) -> Result<GradientCheck, MhaError> {
    check(config, example, false, GRADIENT_CHECK_STEP)
}

/// [`gradient_check`] with a custom step. A ReLU pre-activation closer to
/// zero than `step` makes the difference straddle the kink, so a smaller
/// step separates that artifact from a wrong gradient.
pub fn gradient_check_with_step(
    config: &MhaGateConfig,
    example: &GateExample,
    step: f64,
) -> Result<GradientCheck, MhaError> {
    check(config, example, false, step)
}

/// [`gradient_check`] with the attention/FFN stack bypassed: embedding,
/// pooling and the linear head only.
pub fn gradient_check_linear(
    config: &MhaGateConfig,
    example: &GateExample,
) -> Result<GradientCheck, MhaError> {
    check(config, example, true, GRADIENT_CHECK_STEP)
}

fn check(
    config: &MhaGateConfig,
    example: &GateExample,
    bypass: bool,
    step: f64,
) -> Result<GradientCheck, MhaError> {
    let mut config = config.clone();
    config.dropout_rate = 0.0;
    let mut model = MhaGateModel::new(config)?;
    let input = model.prepare(&example.context, example.knowledge.as_deref())?;

    let mut grads = Params::zeros(&model.config);
    model.accumulate_gradients(
        input.clone(),
        example.label,
        1.0,
        1.0,
        &mut grads,
        None,
        bypass,
    );
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let mut per_tensor = Vec::with_capacity(analytic.len());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let original = model.params.tensors_mut()[ti][j];
            model.params.tensors_mut()[ti][j] = original + step;
            let plus = model.loss(input.clone(), example.label, 1.0, bypass);
            model.params.tensors_mut()[ti][j] = original - step;
            let minus = model.loss(input.clone(), example.label, 1.0, bypass);
            model.params.tensors_mut()[ti][j] = original;
            *n = (plus - minus) / (2.0 * step);
        }
        per_tensor.push((name.clone(), relative_error(a, &numeric)));
    }
    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradientCheck {
        max_relative_error,
        per_tensor,
    })
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let denom = norm(a) + norm(n);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}
