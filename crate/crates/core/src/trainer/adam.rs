use crate::autodiff::{Params, Tensor};
use crate::error::{Error, Result};

/// Adam moments and step counter for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or mis-shaped.
pub fn adam_step(params: &mut Params, grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {name} at index {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
