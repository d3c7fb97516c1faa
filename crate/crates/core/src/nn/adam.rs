use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = (usize, usize)>, config: AdamConfig) -> Self {
        let first: Vec<Matrix> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        let second = first.clone();
        Self { config, first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Every gradient is checked before any parameter is touched.
    pub fn update(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], names: &[String], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Structural(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("?", String::as_str);
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Structural(format!(
                    "tensor '{name}': parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in parameter block '{name}'")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                ms[j] = beta1 * ms[j] + (1.0 - beta1) * gj;
                vs[j] = beta2 * vs[j] + (1.0 - beta2) * gj * gj;
                let m_hat = ms[j] / c1;
                let v_hat = vs[j] / c2;
                ps[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Matrix], grads: &[Matrix], names: &[String], lr: f64) -> Result<()> {
    state.update(params, grads, names, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    fn names() -> Vec<String> {
        vec!["x".to_string()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let mut state = AdamState::new([(1, 1)], AdamConfig::default());
        state.update(&mut [&mut p], &[scalar(0.0)], &names(), 0.1).unwrap();
        assert_eq!(p[(0, 0)], 1.5);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, 42.0] {
            let mut p = scalar(0.0);
            let mut state = AdamState::new([(1, 1)], AdamConfig::default());
            state.update(&mut [&mut p], &[scalar(g)], &names(), 0.01).unwrap();
            // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
            let expected = -0.01 * g / (g + 1e-8);
            assert!((p[(0, 0)] - expected).abs() < 1e-15);
            assert!((p[(0, 0)] + 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut x = scalar(1.0);
        let mut state = AdamState::new([(1, 1)], AdamConfig::default());
        let mut last = 1.0;
        for _ in 0..1000 {
            let g = scalar(2.0 * x[(0, 0)]);
            state.update(&mut [&mut x], &[g], &names(), 0.01).unwrap();
            let f = x[(0, 0)].powi(2);
            // Strictly decreasing down to ~1e-13; below that, momentum leaves
            // ripples around 1e-12 (seen in direct simulation).
            if last > 1e-10 {
                assert!(f < last, "f rose from {last} to {f}");
            } else {
                assert!(f < 1e-10);
            }
            last = f;
        }
        assert!(last < 1e-4, "f = {last}");
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar(0.0);
        let mut state = AdamState::new([(1, 1)], AdamConfig::default());
        let err = state.update(&mut [&mut p], &[scalar(f64::NAN)], &["fc0.w".to_string()], 0.01).unwrap_err();
        assert!(err.to_string().contains("fc0.w"));
        assert_eq!(state.step_count(), 0);
        assert_eq!(p[(0, 0)], 0.0);
    }
}
