use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per tensor in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one bias-corrected Adam step using the gradient buffers held
    /// in `params`. Gradients are left untouched.
    pub fn update(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.m.len() != params.len()
            || params.iter().zip(&self.m).any(|(t, m)| t.numel() != m.len())
        {
            return Err(Error::dims("Adam state does not match parameter shapes"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = &t.grad else { continue };
            for (((p, g), mi), vi) in t.data.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn store(vals: Vec<f64>, grad: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add(Tensor::new("w", vec![vals.len()], vals).unwrap());
        s.get_mut(id).grad = Some(grad);
        s
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut s = store(vec![1.0, -2.0], vec![0.0, 0.0]);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        st.update(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().data, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(vec![1.0, 1.0], vec![3.0, -0.2]);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        assert_eq!(st.config.lr, 0.001);
        st.update(&mut s).unwrap();
        let d = &s.iter().next().unwrap().data;
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        assert!((d[0] - (1.0 - 0.001 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert!((d[1] - (1.0 + 0.001 * 0.2 / (0.2 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let s1 = store(vec![1.0], vec![0.0]);
        let mut s2 = store(vec![1.0, 2.0], vec![0.0, 0.0]);
        let mut st = AdamState::new(AdamConfig::default(), &s1);
        assert!(st.update(&mut s2).is_err());
    }
}
