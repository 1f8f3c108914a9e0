//! Entry-wise activation functions of the convex network family.
//!
//! `SquaredLeakyRelu` (sigma_0) is convex; `LeakyRelu` and `Identity` are
//! convex and nondecreasing, so they are admissible for the hidden layers.
//! At the kink t = 0 all derivative values come from the t >= 0 branch.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    SquaredLeakyRelu,
    LeakyRelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    /// Slope parameter of the leaky branch; must be >= 0 so convexity holds.
    pub beta: f64,
}

impl Activation {
    pub fn squared_leaky_relu(beta: f64) -> Self {
        Activation {
            kind: ActivationKind::SquaredLeakyRelu,
            beta,
        }
    }

    pub fn leaky_relu(beta: f64) -> Self {
        Activation {
            kind: ActivationKind::LeakyRelu,
            beta,
        }
    }

    pub fn identity() -> Self {
        Activation {
            kind: ActivationKind::Identity,
            beta: 0.0,
        }
    }

    /// h(t) = max(beta*t, t), the leaky-relu kernel. h'(0) = 1 (right branch).
    #[inline]
    fn h<S: Scalar>(self, t: S) -> (S, S) {
        let beta = S::from_f64(self.beta);
        if t >= S::zero() {
            (t, S::one())
        } else {
            (beta * t, beta)
        }
    }

    /// sigma(t)
    #[inline]
    pub fn value<S: Scalar>(self, t: S) -> S {
        match self.kind {
            ActivationKind::Identity => t,
            ActivationKind::LeakyRelu => self.h(t).0,
            ActivationKind::SquaredLeakyRelu => {
                let (h, _) = self.h(t);
                h * h
            }
        }
    }

    /// sigma'(t)
    #[inline]
    pub fn prime<S: Scalar>(self, t: S) -> S {
        match self.kind {
            ActivationKind::Identity => S::one(),
            ActivationKind::LeakyRelu => self.h(t).1,
            ActivationKind::SquaredLeakyRelu => {
                let (h, hp) = self.h(t);
                S::from_f64(2.0) * h * hp
            }
        }
    }

    /// sigma''(t)
    #[inline]
    pub fn second<S: Scalar>(self, t: S) -> S {
        match self.kind {
            ActivationKind::Identity | ActivationKind::LeakyRelu => S::zero(),
            ActivationKind::SquaredLeakyRelu => {
                let (_, hp) = self.h(t);
                S::from_f64(2.0) * hp * hp
            }
        }
    }

    pub fn is_convex(self) -> bool {
        self.beta >= 0.0
    }

    pub fn is_nondecreasing(self) -> bool {
        match self.kind {
            ActivationKind::Identity | ActivationKind::LeakyRelu => self.beta >= 0.0,
            // sigma_0 decreases on t < 0
            ActivationKind::SquaredLeakyRelu => false,
        }
    }
}
