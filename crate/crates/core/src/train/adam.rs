use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }
}

/// One bias-corrected Adam update from the gradients currently stored in
/// `params`. Gradients are left in place.
///
/// When every gradient is exactly zero the moments decay and the step
/// counter advances, but parameter values are not touched.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState, cfg: &AdamConfig) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.value.shape() != m.shape() {
            return Err(Error::Contract(format!(
                "optimizer moment for `{}` has shape {:?}, parameter has {:?}",
                p.id,
                m.shape(),
                p.value.shape()
            )));
        }
    }

    let all_zero = params.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0));
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grads = p.grad.data();
        let values = p.value.data_mut();
        for i in 0..grads.len() {
            let g = grads[i];
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            let m_hat = *mi / c1;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let v_hat = *vi / c2;
            if !all_zero {
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: Vec<f64>, grad: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(value)).unwrap();
        s.get_mut(id).grad = Tensor::vector(grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = store_with(vec![1.0, -2.0], vec![0.5, -0.5]);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        let after_one = s.clone();
        s.zero_grads();
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.iter().next().unwrap().value, after_one.iter().next().unwrap().value);
        assert_eq!(st.step(), 2);
        assert!(st.first_moments()[0].data()[0].abs() < 0.05);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        let g = [0.3, -4.0, 1e-3];
        let mut s = store_with(vec![0.0; 3], g.to_vec());
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        adam_step(&mut s, &mut st, &cfg).unwrap();
        for (v, gi) in s.iter().next().unwrap().value.data().iter().zip(g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut s = store_with(vec![0.0], vec![2.0]);
        let mut st = OptimizerState::new(&s);
        let cfg = AdamConfig::default();
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            adam_step(&mut s, &mut st, &cfg).unwrap();
            let now = s.iter().next().unwrap().value.data()[0];
            last_step = prev - now;
            prev = now;
        }
        assert!((last_step - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0));
    }

    #[test]
    fn mismatched_state_is_contract_error() {
        let mut s = store_with(vec![0.0], vec![1.0]);
        let mut st = OptimizerState::new(&ParamStore::new());
        assert!(matches!(
            adam_step(&mut s, &mut st, &AdamConfig::default()),
            Err(Error::Contract(_))
        ));
    }
}
