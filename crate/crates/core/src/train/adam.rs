//! Adam optimizer over the flat parameter stream of a network.

use crate::models::SegNet;
use crate::scalar::{r, Real};

pub struct Adam<R: Real> {
    pub lr: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
    t: u64,
    m: Vec<R>,
    v: Vec<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: r(lr),
            beta1: r(0.9),
            beta2: r(0.999),
            eps: r(1e-7),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update step; `grad_scale` multiplies raw accumulated gradients
    /// (1/batch for batch means).
    pub fn step(&mut self, net: &mut dyn SegNet<R>, grad_scale: R) {
        if self.m.is_empty() {
            let n = net.param_count();
            self.m = vec![R::zero(); n];
            self.v = vec![R::zero(); n];
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = R::one() - b1.powi(self.t as i32);
        let bc2 = R::one() - b2.powi(self.t as i32);
        let lr = self.lr;
        let eps = self.eps;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0usize;
        net.visit_params(&mut |w, g| {
            for i in 0..w.len() {
                let gi = g[i] * grad_scale;
                let mi = b1 * m[off + i] + (R::one() - b1) * gi;
                let vi = b2 * v[off + i] + (R::one() - b2) * gi * gi;
                m[off + i] = mi;
                v[off + i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                w[i] = w[i] - lr * mhat / (vhat.sqrt() + eps);
            }
            off += w.len();
        });
        debug_assert_eq!(off, self.m.len());
    }
}
