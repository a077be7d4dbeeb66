//! First-order optimization: Adam and global-norm gradient clipping.

use crate::nn::{Gradient, ParamVector};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut ParamVector, grad: &Gradient) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let g = grad.as_slice();
        let p = params.as_mut_slice();
        for i in 0..g.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` in place so its global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut Gradient, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_caps_the_norm_exactly() {
        let mut g = Gradient::from(vec![3.0, 4.0]);
        let pre = clip_global_norm(&mut g, 2.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!((g.norm() - 2.0).abs() < 1e-12);
        // Below the cap: untouched.
        let mut g2 = Gradient::from(vec![0.3, 0.4]);
        clip_global_norm(&mut g2, 2.0);
        assert_eq!(g2.as_slice(), &[0.3, 0.4]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = ParamVector::new(vec![1.0, -2.0, 0.5]);
        let mut opt = Adam::new(3, 0.05);
        for _ in 0..500 {
            let grad = Gradient::from(p.as_slice().to_vec()); // d(0.5||p||^2)
            opt.step(&mut p, &grad);
        }
        assert!(p.norm() < 1e-2, "norm {}", p.norm());
    }

    #[test]
    fn identical_gradients_give_identical_updates() {
        let mut p1 = ParamVector::new(vec![0.7; 4]);
        let mut p2 = p1.clone();
        let mut o1 = Adam::new(4, 0.01);
        let mut o2 = Adam::new(4, 0.01);
        let g = Gradient::from(vec![0.1, -0.2, 0.3, 0.0]);
        for _ in 0..10 {
            o1.step(&mut p1, &g);
            o2.step(&mut p2, &g);
        }
        assert_eq!(p1, p2);
    }
}
