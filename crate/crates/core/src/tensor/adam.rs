use super::Tensor;
use crate::error::{Error, Result};

/// Moment accumulators for the ADAM optimizer.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    shapes: Vec<Vec<usize>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero-initialized state for parameters with the given shapes.
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected ADAM update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.shapes.len() || grads.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, state for {}", params.len(), grads.len(), state.shapes.len()),
        ));
    }
    for ((p, g), s) in params.iter().zip(grads).zip(&state.shapes) {
        if p.shape() != s.as_slice() || g.shape() != s.as_slice() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?} / grad {:?} vs state {s:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((x, &g), mi), vi) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
