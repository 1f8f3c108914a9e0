//! Adam with a step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    /// Multiplicative decay in (0, 1]; 1.0 disables the schedule.
    pub decay_factor: f64,
    /// Apply the decay every this many iterations.
    pub decay_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            decay_factor: 1.0,
            decay_every: 1,
        }
    }
}

/// base_lr * factor^floor(t / decay_every)
pub fn current_lr(sched: &LrSchedule, base_lr: f64, t: usize) -> f64 {
    base_lr * sched.decay_factor.powi((t / sched.decay_every) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidArgument(
                "adam: lr and eps must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument(
                "adam: beta1, beta2 must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.schedule.decay_factor) || self.schedule.decay_factor == 0.0 {
            return Err(Error::InvalidArgument(
                "adam: decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.schedule.decay_every == 0 {
            return Err(Error::InvalidArgument(
                "adam: decay_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub cfg: AdamConfig,
    /// Effective learning rate used by the next step; the training loop
    /// refreshes it from the schedule each outer iteration.
    pub lr_now: f64,
    t: usize,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig, param_shapes: &[&[usize]]) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamState {
            cfg,
            lr_now: cfg.lr,
            t: 0,
            m: param_shapes
                .iter()
                .map(|s| Tensor::zeros(s.to_vec()))
                .collect(),
            v: param_shapes
                .iter()
                .map(|s| Tensor::zeros(s.to_vec()))
                .collect(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn set_lr_for_iteration(&mut self, outer_iter: usize) {
        self.lr_now = current_lr(&self.cfg.schedule, self.cfg.lr, outer_iter);
    }

    /// One bias-corrected Adam update over a flat list of parameter
    /// tensors. `Maximize` negates the gradients before the update.
    pub fn step(
        &mut self,
        params: &mut [Tensor<S>],
        grads: &[Tensor<S>],
        direction: Direction,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                details: format!(
                    "state tracks {} tensors, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    details: format!(
                        "tensor {i}: param shape {:?}, grad shape {:?}",
                        params[i].shape(),
                        g.shape()
                    ),
                });
            }
            g.check_finite("adam_step").map_err(|_| Error::NonFinite {
                op: "adam_step",
                context: Some(format!("gradient tensor {i} at step {}", self.t + 1)),
            })?;
        }
        self.t += 1;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one = S::one();
        let bc1 = S::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = S::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = S::from_f64(self.lr_now);
        let eps = S::from_f64(self.cfg.eps);
        let sign = match direction {
            Direction::Minimize => one,
            Direction::Maximize => -one,
        };
        for i in 0..params.len() {
            let shape = params[i].shape().to_vec();
            let mut p = params[i].data().to_vec();
            let mut m = self.m[i].data().to_vec();
            let mut v = self.v[i].data().to_vec();
            for ((pj, gj), (mj, vj)) in p
                .iter_mut()
                .zip(grads[i].data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = sign * *gj;
                *mj = b1 * *mj + (one - b1) * g;
                *vj = b2 * *vj + (one - b2) * g * g;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj = *pj - lr * m_hat / (v_hat.sqrt() + eps);
            }
            params[i] = Tensor::from_parts_unchecked(shape.clone(), p);
            self.m[i] = Tensor::from_parts_unchecked(shape.clone(), m);
            self.v[i] = Tensor::from_parts_unchecked(shape, v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, beta1: f64, beta2: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            schedule: LrSchedule::default(),
        }
    }

    #[test]
    fn first_step_bias_correction() {
        let shapes: &[&[usize]] = &[&[1]];
        let mut st = AdamState::<f64>::new(cfg(1e-4, 0.5, 0.9), shapes).unwrap();
        let mut p = vec![Tensor::scalar(0.0).unwrap()];
        let g = vec![Tensor::scalar(0.1).unwrap()];
        st.step(&mut p, &g, Direction::Minimize).unwrap();
        let expected = -1e-4 * 0.1 / (0.1 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let shapes: &[&[usize]] = &[&[3]];
        let mut st = AdamState::<f64>::new(cfg(1e-2, 0.5, 0.9), shapes).unwrap();
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()];
        let g = vec![Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap()];
        for _ in 0..5 {
            st.step(&mut p, &g, Direction::Minimize).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn maximize_flips_first_step_sign() {
        let shapes: &[&[usize]] = &[&[1]];
        let mut st = AdamState::<f64>::new(cfg(1e-4, 0.5, 0.9), shapes).unwrap();
        let mut p = vec![Tensor::scalar(0.0).unwrap()];
        let g = vec![Tensor::scalar(0.1).unwrap()];
        st.step(&mut p, &g, Direction::Maximize).unwrap();
        let expected = 1e-4 * 0.1 / (0.1 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let shapes: &[&[usize]] = &[&[1]];
        let mut st = AdamState::<f64>::new(cfg(1e-4, 0.5, 0.9), shapes).unwrap();
        let mut p = vec![Tensor::scalar(0.0).unwrap()];
        let g = vec![Tensor::from_parts_unchecked(vec![1], vec![f64::NAN])];
        assert!(st.step(&mut p, &g, Direction::Minimize).is_err());
    }

    #[test]
    fn schedule_hand_values() {
        let sched = LrSchedule {
            decay_factor: 0.5,
            decay_every: 2000,
        };
        assert_eq!(current_lr(&sched, 1e-4, 0), 1e-4);
        assert_eq!(current_lr(&sched, 1e-4, 1999), 1e-4);
        assert_eq!(current_lr(&sched, 1e-4, 2000), 5e-5);
        assert_eq!(current_lr(&sched, 1e-4, 4500), 2.5e-5);
    }

    /// On f(x) = 0.5||x - c||^2, minimization converges to c.
    #[test]
    fn quadratic_convergence_sanity() {
        let c = [0.7f64, -1.3, 2.2];
        let shapes: &[&[usize]] = &[&[3]];
        let mut st = AdamState::<f64>::new(cfg(1e-2, 0.9, 0.999), shapes).unwrap();
        let mut p = vec![Tensor::vector(vec![5.0, 5.0, -5.0]).unwrap()];
        for _ in 0..5000 {
            let g =
                Tensor::vector(p[0].data().iter().zip(&c).map(|(x, ci)| x - ci).collect()).unwrap();
            st.step(&mut p, &[g], Direction::Minimize).unwrap();
        }
        for (x, ci) in p[0].data().iter().zip(&c) {
            assert!((x - ci).abs() < 1e-3, "{x} vs {ci}");
        }
    }

    /// Identical gradient streams yield bit-identical trajectories.
    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let shapes: &[&[usize]] = &[&[2]];
            let mut st = AdamState::<f64>::new(cfg(3e-3, 0.5, 0.9), shapes).unwrap();
            let mut p = vec![Tensor::vector(vec![0.3, -0.4]).unwrap()];
            for k in 0..100 {
                let g = Tensor::vector(vec![(k as f64).sin(), (k as f64).cos()]).unwrap();
                st.step(&mut p, &[g], Direction::Minimize).unwrap();
            }
            p[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
