use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|(_, _, t)| vec![T::zero(); t.len()])
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ModelParams<T>) -> bool {
        let t = params.tensors();
        t.len() == self.m.len()
            && t.len() == self.v.len()
            && t.iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, _, p), (m, v))| p.len() == m.len() && p.len() == v.len())
    }
}

/// One bias-corrected Adam update of a flat buffer at step `t` (1-based).
pub fn adam_update<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, h: &AdamHyper) {
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let c1 = T::of(1.0 - h.beta1.powi(t as i32));
    let c2 = T::of(1.0 - h.beta2.powi(t as i32));
    let lr = T::of(h.learning_rate);
    let eps = T::of(h.eps);
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = b1 * m[i] + (T::one() - b1) * gi;
        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    h: &AdamHyper,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::numerical(
            name,
            "non-finite gradient reached the optimizer",
        ));
    }
    if !state.matches(params) {
        return Err(Error::validation(
            "optimizer state does not match the parameter shapes",
        ));
    }
    state.step += 1;
    let t = state.step;
    let g = grads.tensors();
    for (((p, (_, _, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        adam_update(p, g, m, v, t, h);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: AdamHyper = AdamHyper {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, mut m, mut v) = ([2.0f64], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &H);
        assert!((p[0] - (2.0 - 0.1)).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let (mut p, mut m, mut v) = ([0.5f32, -1.0], [0.0; 2], [0.0; 2]);
        for t in 1..5 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, &H);
        }
        assert_eq!(p, [0.5, -1.0]);
    }

    #[test]
    fn hand_evaluated_second_step() {
        let (mut p, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &H);
        adam_update(&mut p, &[-2.0], &mut m, &mut v, 2, &H);
        let m2: f64 = 0.9 * 0.1 + 0.1 * -2.0;
        let v2: f64 = 0.999 * 0.001 + 0.001 * 4.0;
        let step2 = 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let first = 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - (-first - step2)).abs() < 1e-12);
    }
}
