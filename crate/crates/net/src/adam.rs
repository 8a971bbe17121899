//! Adam optimizer with bias correction, tracking first/second moments per
//! parameter tensor in visit order.

use hpqsm_core::{sc, Scalar};

use crate::{NetError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam update of one parameter slice.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<S: Scalar>(
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    w: &mut [S],
    g: &[S],
) {
    let bc1 = S::one() - beta1.powi(t as i32);
    let bc2 = S::one() - beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (S::one() - beta1) * g[i];
        v[i] = beta2 * v[i] + (S::one() - beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        w[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[derive(Clone, Debug)]
struct Slot<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state over a fixed list of parameter tensors; tensors are
/// identified by their position in the visit order, which is stable for a
/// given network configuration.
#[derive(Clone, Debug)]
pub struct Adam<S: Scalar> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    t: u64,
    slots: Vec<Slot<S>>,
    cursor: usize,
    error: Option<String>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: sc(lr),
            beta1: sc(ADAM_BETA1),
            beta2: sc(ADAM_BETA2),
            eps: sc(ADAM_EPS),
            t: 0,
            slots: Vec::new(),
            cursor: 0,
            error: None,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Start one optimization step; follow with one [`Self::update`] per
    /// parameter tensor (in visit order) and close with
    /// [`Self::finish_step`].
    pub fn begin_step(&mut self) {
        self.t += 1;
        self.cursor = 0;
        self.error = None;
    }

    pub fn update(&mut self, name: &str, w: &mut [S], g: &[S]) {
        if self.error.is_some() {
            return;
        }
        if g.iter().any(|x| !x.is_finite()) {
            self.error = Some(format!("non-finite gradient at adam step {} param {name}", self.t));
            return;
        }
        if self.cursor == self.slots.len() {
            self.slots.push(Slot { m: vec![S::zero(); w.len()], v: vec![S::zero(); w.len()] });
        }
        let slot = &mut self.slots[self.cursor];
        if slot.m.len() != w.len() {
            self.error = Some(format!(
                "adam slot {} shape changed: {} vs {}",
                self.cursor,
                slot.m.len(),
                w.len()
            ));
            return;
        }
        adam_update(&mut slot.m, &mut slot.v, self.t, self.lr, self.beta1, self.beta2, self.eps, w, g);
        self.cursor += 1;
    }

    pub fn finish_step(&mut self) -> Result<()> {
        match self.error.take() {
            Some(msg) => Err(NetError::NonFinite { what: "update".into(), context: msg }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::<f64>::new(1e-3);
        let mut w = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        adam.begin_step();
        adam.update("w", &mut w, &g);
        adam.finish_step().unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::<f64>::new(0.01);
        let mut w = vec![0.0, 0.0];
        let g = vec![5.0, -0.003];
        adam.begin_step();
        adam.update("w", &mut w, &g);
        adam.finish_step().unwrap();
        // bias-corrected moments cancel |g| up to eps
        assert!((w[0] + 0.01).abs() < 1e-6, "{}", w[0]);
        assert!((w[1] - 0.01).abs() < 1e-4, "{}", w[1]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(p) = (p - 3)^2 from p = 0 at lr 0.1
        let mut adam = Adam::<f64>::new(0.1);
        let mut p = vec![0.0f64];
        for _ in 0..200 {
            let g = vec![2.0 * (p[0] - 3.0)];
            adam.begin_step();
            adam.update("p", &mut p, &g);
            adam.finish_step().unwrap();
        }
        assert!((p[0] - 3.0).abs() < 0.1, "p = {}", p[0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut adam = Adam::<f64>::new(0.1);
        let mut w = vec![1.0];
        adam.begin_step();
        adam.update("w", &mut w, &[f64::NAN]);
        assert!(adam.finish_step().is_err());
        assert_eq!(w, vec![1.0]);
    }
}
