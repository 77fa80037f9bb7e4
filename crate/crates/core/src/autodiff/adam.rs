use ndarray::{Array2, Zip};

use super::TensorError;

/// First/second moment estimates for one parameter grid.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam update of `param` in place.
    pub fn step(
        &mut self,
        param: &mut Array2<f64>,
        grad: &Array2<f64>,
        lr: f64,
        name: &str,
    ) -> Result<(), TensorError> {
        if param.dim() != self.m.dim() || grad.dim() != self.m.dim() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!(
                    "`{name}`: state {:?}, param {:?}, grad {:?}",
                    self.m.dim(),
                    param.dim(),
                    grad.dim()
                ),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGradient { name: name.into() });
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let mut p = array![[0.3, -1.2]];
        let before = p.clone();
        let mut s = AdamState::new((1, 2));
        s.step(&mut p, &Array2::zeros((1, 2)), 1e-3, "w").unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g, v_hat = g^2 on the first step.
        let mut p = array![[0.0]];
        let mut s = AdamState::new((1, 1));
        s.step(&mut p, &array![[1.0]], 1e-3, "w").unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-18);
        assert!((p[[0, 0]] + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_steps_have_equal_size() {
        let mut p = array![[0.0]];
        let mut s = AdamState::new((1, 1));
        s.step(&mut p, &array![[0.7]], 1e-3, "w").unwrap();
        let d1 = p[[0, 0]];
        s.step(&mut p, &array![[0.7]], 1e-3, "w").unwrap();
        let d2 = p[[0, 0]] - d1;
        assert!(((d2.abs() - d1.abs()) / d1.abs()).abs() < 0.01);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_param() {
        let mut p = array![[1.0]];
        let mut s = AdamState::new((1, 1));
        let err = s.step(&mut p, &array![[f64::NAN]], 1e-3, "detector.w0").unwrap_err();
        assert!(err.to_string().contains("detector.w0"));
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(s.t, 0);
    }
}
