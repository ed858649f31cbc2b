use super::TrainError;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        OptimizerState {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected update of a scalar; returns `(θ, m, v)`.
pub fn adam_update(
    theta: f64,
    g: f64,
    m: f64,
    v: f64,
    step: u64,
    c: &AdamConfig,
) -> (f64, f64, f64) {
    let m = c.beta1 * m + (1.0 - c.beta1) * g;
    let v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    let mh = m / (1.0 - c.beta1.powi(step as i32));
    let vh = v / (1.0 - c.beta2.powi(step as i32));
    (theta - c.lr * mh / (vh.sqrt() + c.eps), m, v)
}

/// Applies one Adam step to every parameter. Nothing is modified when any
/// gradient is non-finite or mis-shaped.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut OptimizerState,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Contract(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    let next = state.step + 1;
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(TrainError::Contract(format!(
                "gradient of {} has shape {:?}, parameter has {:?}",
                name(i),
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                parameter: name(i),
                step: next,
            });
        }
    }
    state.step = next;
    let c = state.config;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let (t, mj, vj) = adam_update(*theta, gj, m[j], v[j], next, &c);
            *theta = t;
            m[j] = mj;
            v[j] = vj;
        }
    }
    Ok(())
}
