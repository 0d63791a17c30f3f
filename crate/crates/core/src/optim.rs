//! Adam with coupled L2 weight decay (the decay term is added to the
//! gradient before the moment updates).

use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update of `params` from `grad` (same layout) at rate `lr`.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grad: &P, lr: f64) {
        let g = grad.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer state does not match parameter count");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut off = 0;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p| {
            for (k, x) in p.iter_mut().enumerate() {
                let i = off + k;
                let gi = g[i] + wd * *x;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
            off += p.len();
        });
    }
}

/// Step decay: `lr · factor^(epoch / every)`.
pub fn step_decay(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * factor.powi((epoch / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[derive(Clone)]
    struct One {
        x: Array1<f64>,
    }
    crate::impl_param_set!(One { x });

    #[test]
    fn minimizes_quadratic() {
        let mut p = One { x: array![3.0, -2.0] };
        let mut opt = Adam::new(2, 0.0);
        for _ in 0..3000 {
            let g = One { x: &p.x * 2.0 };
            opt.update(&mut p, &g, 0.01);
        }
        assert!(p.x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = One { x: array![1.0] };
        let mut opt = Adam::new(1, 0.0);
        opt.update(&mut p, &One { x: array![0.5] }, 0.1);
        assert!((p.x[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(step_decay(1e-3, 0.1, 3, 0), 1e-3);
        assert_eq!(step_decay(1e-3, 0.1, 3, 2), 1e-3);
        assert!((step_decay(1e-3, 0.1, 3, 3) - 1e-4).abs() < 1e-18);
        assert!((step_decay(1e-3, 0.1, 3, 6) - 1e-5).abs() < 1e-18);
    }
}
