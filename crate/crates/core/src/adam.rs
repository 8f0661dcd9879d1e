use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Apply one update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape {
                context: "adam step",
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = AdamState::new(3, 1e-3);
        let mut p = vec![0.5, -1.0, 2.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_about_lr() {
        let lr = 1e-3;
        let grads = [1e-3, -2e-3, 0.5, -7.0, 1e3];
        let mut s = AdamState::new(grads.len(), lr);
        let mut p = vec![0.0; grads.len()];
        s.step(&mut p, &grads).unwrap();
        for (d, g) in p.iter().zip(grads) {
            assert!(d.abs() > 0.99 * lr && d.abs() <= lr, "{d}");
            assert_eq!(d.signum(), -g.signum());
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        // scalar recurrence simulated directly
        let (lr, b1, b2, eps, g) = (1e-2, 0.9f64, 0.999f64, 1e-8, 0.3);
        let (mut m, mut v) = (0.0, 0.0);
        let mut oracle = Vec::new();
        for t in 1..=100 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            oracle.push(lr * mh / (vh.sqrt() + eps));
        }
        let mut s = AdamState::new(1, lr);
        let mut p = [0.0];
        let mut deltas = Vec::new();
        for _ in 0..100 {
            let before = p[0];
            s.step(&mut p, &[g]).unwrap();
            deltas.push((p[0] - before).abs());
        }
        for (d, o) in deltas.iter().zip(&oracle) {
            assert!((d - o).abs() < 1e-15);
            assert!(*d <= lr);
        }
        // with a constant gradient the bias-corrected step is exactly
        // lr*g/(g + eps) up to rounding, i.e. it sits at lr from step 1 on
        assert!(deltas.windows(2).all(|w| (w[1] - lr).abs() <= (w[0] - lr).abs() + 1e-15));
        assert!((deltas[99] - lr).abs() < 1e-9);
    }

    #[test]
    fn vanishing_gradient_with_warm_moments() {
        let mut s = AdamState::new(1, 1e-2);
        let mut p = [0.0];
        for _ in 0..50 {
            s.step(&mut p, &[1.0]).unwrap();
        }
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let before = p[0];
            s.step(&mut p, &[0.0]).unwrap();
            last = (p[0] - before).abs();
        }
        assert!(last < 1e-6);
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn length_mismatch() {
        let mut s = AdamState::new(2, 1e-3);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(s.step(&mut [0.0; 2], &[0.0; 1]).is_err());
    }
}
