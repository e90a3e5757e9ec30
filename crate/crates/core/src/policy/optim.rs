//! First-order optimizers over flat weight vectors.

use alloc::vec::Vec;

pub trait Optimizer {
    fn step(&mut self, theta: &mut [f64], grad: &[f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        for (w, g) in theta.iter_mut().zip(grad) {
            *w -= self.lr * g;
        }
    }
}

/// Adam with bias correction. Coordinates whose gradient and moments are all
/// zero are left untouched, so unused embedding rows stay put.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for i in 0..theta.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub fn make_optimizer(
    kind: OptimizerKind,
    lr: f64,
    len: usize,
) -> alloc::boxed::Box<dyn Optimizer> {
    match kind {
        OptimizerKind::Adam => alloc::boxed::Box::new(Adam::new(lr, len)),
        OptimizerKind::Sgd => alloc::boxed::Box::new(Sgd { lr }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_descend_a_quadratic() {
        for mut opt in [
            make_optimizer(OptimizerKind::Sgd, 0.1, 2),
            make_optimizer(OptimizerKind::Adam, 0.1, 2),
        ] {
            let mut x = [3.0, -2.0];
            for _ in 0..200 {
                let g = [2.0 * x[0], 2.0 * x[1]];
                opt.step(&mut x, &g);
            }
            assert!(x[0].abs() < 0.05 && x[1].abs() < 0.05, "{x:?}");
        }
    }
}
