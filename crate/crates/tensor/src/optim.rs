use std::collections::BTreeMap;

use crate::{Mat, Scalar};

/// Adam with decoupled weight decay.
///
/// Decay is applied only to matrices with more than one row; `1 × n` biases
/// and norm gains are left alone.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    step: u64,
    moments: BTreeMap<String, (Mat<F>, Mat<F>)>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(lr: F) -> Self {
        Self {
            lr,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            weight_decay: F::lit(0.01),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: F) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(name, parameter, gradient)` triple.
    pub fn step<'a, I>(&mut self, updates: I)
    where
        I: IntoIterator<Item = (&'a str, &'a mut Mat<F>, &'a Mat<F>)>,
        F: 'a,
    {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (name, param, grad) in updates {
            assert_eq!(param.dim(), grad.dim(), "gradient shape for {name}");
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Mat::zeros(param.dim()), Mat::zeros(param.dim())));
            let decay = if param.nrows() > 1 { F::one() - self.lr * self.weight_decay } else { F::one() };
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(&mut *param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
