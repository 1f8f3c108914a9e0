//! Input convex neural networks: parameters, forward pass, analytic
//! input-gradient graph, convexity projection, non-negativity regularizer
//! and initialization.
//!
//! Layer l computes z_{l+1} = sigma_l(W_l z_l + A_l x + b_l) with W_0 = 0
//! (not stored). The first activation is the squared leaky ReLU, hidden
//! activations are leaky ReLU, and the final layer is affine so the scalar
//! output can take negative values.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::{gemm_into, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcnnConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Number of weight layers L (>= 1). L = 1 is a single affine layer.
    pub num_layers: usize,
    pub first_activation: Activation,
    pub hidden_activation: Activation,
}

impl IcnnConfig {
    /// Paper-default activations: squared leaky ReLU then leaky ReLU,
    /// beta = 0.2.
    pub fn new(input_dim: usize, hidden_width: usize, num_layers: usize) -> Self {
        IcnnConfig {
            input_dim,
            hidden_width,
            num_layers,
            first_activation: Activation::squared_leaky_relu(0.2),
            hidden_activation: Activation::leaky_relu(0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "icnn config: input_dim, hidden_width and num_layers must be positive".into(),
            ));
        }
        if !self.first_activation.is_convex() {
            return Err(Error::InvalidArgument(
                "first activation must be convex (beta >= 0)".into(),
            ));
        }
        if !self.hidden_activation.is_convex() || !self.hidden_activation.is_nondecreasing() {
            return Err(Error::InvalidArgument(
                "hidden activation must be convex and nondecreasing".into(),
            ));
        }
        Ok(())
    }

    /// Output width of weight layer l (0-based); the last layer is scalar.
    pub fn layer_width(&self, l: usize) -> usize {
        if l + 1 == self.num_layers {
            1
        } else {
            self.hidden_width
        }
    }

    /// Activation applied after weight layer l; the final layer is affine.
    pub fn layer_activation(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers {
            Activation::identity()
        } else if l == 0 {
            self.first_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Weights of one ICNN. `w[l-1]` is W_l (layer-to-layer, absent for l=0),
/// `a[l]` is A_l (input passthrough, shape [width_l, d]), `b[l]` the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams<S: Scalar> {
    pub w: Vec<Tensor<S>>,
    pub a: Vec<Tensor<S>>,
    pub b: Vec<Tensor<S>>,
}

impl<S: Scalar> IcnnParams<S> {
    pub fn zeros(cfg: &IcnnConfig) -> Self {
        let l_count = cfg.num_layers;
        let mut w = Vec::new();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for l in 0..l_count {
            let out = cfg.layer_width(l);
            if l > 0 {
                w.push(Tensor::zeros(vec![out, cfg.layer_width(l - 1)]));
            }
            a.push(Tensor::zeros(vec![out, cfg.input_dim]));
            b.push(Tensor::zeros(vec![out]));
        }
        IcnnParams { w, a, b }
    }

    pub fn validate(&self, cfg: &IcnnConfig) -> Result<()> {
        cfg.validate()?;
        let l_count = cfg.num_layers;
        if self.a.len() != l_count || self.b.len() != l_count || self.w.len() + 1 != l_count {
            return Err(Error::ShapeMismatch {
                op: "IcnnParams::validate",
                details: format!(
                    "expected {} layers, got a={}, b={}, w={}",
                    l_count,
                    self.a.len(),
                    self.b.len(),
                    self.w.len()
                ),
            });
        }
        for l in 0..l_count {
            let out = cfg.layer_width(l);
            if self.a[l].shape() != [out, cfg.input_dim] {
                return Err(Error::ShapeMismatch {
                    op: "IcnnParams::validate",
                    details: format!("A_{l} has shape {:?}", self.a[l].shape()),
                });
            }
            if self.b[l].shape() != [out] {
                return Err(Error::ShapeMismatch {
                    op: "IcnnParams::validate",
                    details: format!("b_{l} has shape {:?}", self.b[l].shape()),
                });
            }
            if l > 0 && self.w[l - 1].shape() != [out, cfg.layer_width(l - 1)] {
                return Err(Error::ShapeMismatch {
                    op: "IcnnParams::validate",
                    details: format!("W_{l} has shape {:?}", self.w[l - 1].shape()),
                });
            }
        }
        Ok(())
    }

    /// Flat view over all parameter tensors in a fixed order (W, A, b per
    /// layer) for optimizers and checkpoints.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        self.w
            .iter()
            .chain(self.a.iter())
            .chain(self.b.iter())
            .collect()
    }

    pub fn from_tensors(cfg: &IcnnConfig, flat: Vec<Tensor<S>>) -> Result<Self> {
        let n_w = cfg.num_layers - 1;
        let n = cfg.num_layers;
        if flat.len() != n_w + 2 * n {
            return Err(Error::ShapeMismatch {
                op: "IcnnParams::from_tensors",
                details: format!("expected {} tensors, got {}", n_w + 2 * n, flat.len()),
            });
        }
        let mut it = flat.into_iter();
        let w: Vec<_> = (&mut it).take(n_w).collect();
        let a: Vec<_> = (&mut it).take(n).collect();
        let b: Vec<_> = it.collect();
        let p = IcnnParams { w, a, b };
        p.validate(cfg)?;
        Ok(p)
    }

    pub fn cast<T: Scalar>(&self) -> IcnnParams<T> {
        IcnnParams {
            w: self.w.iter().map(Tensor::cast).collect(),
            a: self.a.iter().map(Tensor::cast).collect(),
            b: self.b.iter().map(Tensor::cast).collect(),
        }
    }

    /// Entry-wise clamp of every W_l to be nonnegative; A and b untouched.
    pub fn project_nonneg(&self) -> Self {
        IcnnParams {
            w: self.w.iter().map(|t| t.map(|v| v.max(S::zero()))).collect(),
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn min_w_entry(&self) -> S {
        self.w
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .fold(S::infinity(), |m, v| m.min(v))
    }

    /// R(theta) = lambda * sum_l || min(W_l, 0) ||_F^2 (plain evaluation;
    /// the differentiable version is built on the tape in the objective).
    pub fn nonneg_regularizer(&self, lambda: S) -> S {
        let s: S = self
            .w
            .iter()
            .map(|t| {
                t.data()
                    .iter()
                    .map(|&v| {
                        let neg = v.min(S::zero());
                        neg * neg
                    })
                    .sum::<S>()
            })
            .sum();
        lambda * s
    }
}

/// Fan-in-scaled zero-mean initialization. W entries take the absolute
/// value of the draw so a freshly initialized network is already feasible
/// for the nonnegativity constraint.
pub fn init_params<S: Scalar>(cfg: &IcnnConfig, scale: f64, rng: &mut impl Rng) -> IcnnParams<S> {
    let mut p = IcnnParams::zeros(cfg);
    for l in 0..cfg.num_layers {
        let fan_in = cfg.input_dim + if l > 0 { cfg.layer_width(l - 1) } else { 0 };
        let std = scale / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let mut draw = |len: usize, abs: bool| -> Vec<S> {
            (0..len)
                .map(|_| {
                    let v = normal.sample(rng) * std;
                    S::from_f64(if abs { v.abs() } else { v })
                })
                .collect()
        };
        if l > 0 {
            let shape = p.w[l - 1].shape().to_vec();
            let len = p.w[l - 1].len();
            p.w[l - 1] = Tensor::from_parts_unchecked(shape, draw(len, true));
        }
        let shape = p.a[l].shape().to_vec();
        let len = p.a[l].len();
        p.a[l] = Tensor::from_parts_unchecked(shape, draw(len, false));
        let shape = p.b[l].shape().to_vec();
        let len = p.b[l].len();
        p.b[l] = Tensor::from_parts_unchecked(shape, draw(len, false));
    }
    p
}

/// Exact ICNN representation of x -> (coeff/2)||x||^2, used as an analytic
/// fixture (coeff = 1 gives the identity transport map).
pub fn quadratic_icnn<S: Scalar>(
    input_dim: usize,
    coeff: f64,
    beta: f64,
) -> (IcnnConfig, IcnnParams<S>) {
    let cfg = IcnnConfig {
        input_dim,
        hidden_width: 2 * input_dim,
        num_layers: 2,
        first_activation: Activation::squared_leaky_relu(beta),
        hidden_activation: Activation::leaky_relu(beta),
    };
    let mut p = IcnnParams::zeros(&cfg);
    // A_0 rows: +e_i and -e_i, so sigma0(x_i) + sigma0(-x_i) = (1+beta^2) x_i^2
    let mut a0 = vec![S::zero(); 2 * input_dim * input_dim];
    for i in 0..input_dim {
        a0[2 * i * input_dim + i] = S::one();
        a0[(2 * i + 1) * input_dim + i] = -S::one();
    }
    p.a[0] = Tensor::from_parts_unchecked(vec![2 * input_dim, input_dim], a0);
    let c = coeff / (2.0 * (1.0 + beta * beta));
    p.w[0] =
        Tensor::from_parts_unchecked(vec![1, 2 * input_dim], vec![S::from_f64(c); 2 * input_dim]);
    (cfg, p)
}

fn check_batch_shape<S: Scalar>(
    cfg: &IcnnConfig,
    x: &Tensor<S>,
    op: &'static str,
) -> Result<usize> {
    if x.shape().len() != 2 || x.cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op,
            details: format!(
                "expected [n, {}] batch, got shape {:?}",
                cfg.input_dim,
                x.shape()
            ),
        });
    }
    Ok(x.rows())
}

/// Plain (non-differentiable) batched forward pass; returns f(x_i) per row.
pub fn forward_batch<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    x: &Tensor<S>,
) -> Result<Vec<S>> {
    let n = check_batch_shape(cfg, x, "icnn_forward")?;
    let mut z: Option<Vec<S>> = None;
    let mut z_width = 0usize;
    for l in 0..cfg.num_layers {
        let out = cfg.layer_width(l);
        let mut u = vec![S::zero(); n * out];
        // A_l x
        gemm_into(
            S::one(),
            x.data(),
            n,
            cfg.input_dim,
            false,
            params.a[l].data(),
            out,
            cfg.input_dim,
            true,
            S::zero(),
            &mut u,
        );
        if let Some(ref zv) = z {
            gemm_into(
                S::one(),
                zv,
                n,
                z_width,
                false,
                params.w[l - 1].data(),
                out,
                z_width,
                true,
                S::one(),
                &mut u,
            );
        }
        let bias = params.b[l].data();
        let act = cfg.layer_activation(l);
        for i in 0..n {
            for j in 0..out {
                let v = u[i * out + j] + bias[j];
                u[i * out + j] = act.value(v);
            }
        }
        z = Some(u);
        z_width = out;
    }
    let out = z.unwrap();
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            op: "icnn_forward",
            context: None,
        });
    }
    Ok(out)
}

/// Smallest |pre-activation| over all hidden units of a batch (the affine
/// output layer is excluded). Finite-difference harnesses use this to pick
/// probes whose hidden units stay safely on one side of the activation
/// kinks, where central differences are trustworthy.
pub fn min_abs_preactivation<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    x: &Tensor<S>,
) -> Result<f64> {
    let n = check_batch_shape(cfg, x, "icnn_preactivation")?;
    let mut min_abs = f64::INFINITY;
    let mut z: Option<Vec<S>> = None;
    let mut z_width = 0usize;
    for l in 0..cfg.num_layers {
        let out = cfg.layer_width(l);
        let mut u = vec![S::zero(); n * out];
        gemm_into(
            S::one(),
            x.data(),
            n,
            cfg.input_dim,
            false,
            params.a[l].data(),
            out,
            cfg.input_dim,
            true,
            S::zero(),
            &mut u,
        );
        if let Some(ref zv) = z {
            gemm_into(
                S::one(),
                zv,
                n,
                z_width,
                false,
                params.w[l - 1].data(),
                out,
                z_width,
                true,
                S::one(),
                &mut u,
            );
        }
        let bias = params.b[l].data();
        let act = cfg.layer_activation(l);
        let hidden = l + 1 < cfg.num_layers;
        for i in 0..n {
            for j in 0..out {
                let v = u[i * out + j] + bias[j];
                if hidden {
                    min_abs = min_abs.min(Scalar::to_f64(v).abs());
                }
                u[i * out + j] = act.value(v);
            }
        }
        z = Some(u);
        z_width = out;
    }
    Ok(min_abs)
}

/// f(x; theta) for a single input vector.
pub fn forward<S: Scalar>(params: &IcnnParams<S>, cfg: &IcnnConfig, x: &Tensor<S>) -> Result<S> {
    if x.shape().len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "icnn_forward",
            details: format!("expected a vector, got shape {:?}", x.shape()),
        });
    }
    let xm = Tensor::from_parts_unchecked(vec![1, x.len()], x.data().to_vec());
    Ok(forward_batch(params, cfg, &xm)?[0])
}

/// Plain batched input gradient via the layer-wise backward recursion;
/// returns an [n, d] tensor of rows grad_x f(x_i).
pub fn input_grad_batch<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let n = check_batch_shape(cfg, x, "icnn_input_grad")?;
    let d = cfg.input_dim;
    let l_count = cfg.num_layers;

    // forward, keeping sigma'(u_l) per layer
    let mut primes: Vec<Vec<S>> = Vec::with_capacity(l_count);
    let mut z: Option<Vec<S>> = None;
    let mut z_width = 0usize;
    for l in 0..l_count {
        let out = cfg.layer_width(l);
        let mut u = vec![S::zero(); n * out];
        gemm_into(
            S::one(),
            x.data(),
            n,
            d,
            false,
            params.a[l].data(),
            out,
            d,
            true,
            S::zero(),
            &mut u,
        );
        if let Some(ref zv) = z {
            gemm_into(
                S::one(),
                zv,
                n,
                z_width,
                false,
                params.w[l - 1].data(),
                out,
                z_width,
                true,
                S::one(),
                &mut u,
            );
        }
        let bias = params.b[l].data();
        let act = cfg.layer_activation(l);
        let mut prime = vec![S::zero(); n * out];
        for i in 0..n * out {
            let v = u[i] + bias[i % out];
            prime[i] = act.prime(v);
            u[i] = act.value(v);
        }
        primes.push(prime);
        z = Some(u);
        z_width = out;
    }

    // backward recursion: h_l = sigma'_l (.) g_{l+1}; grad += h_l A_l;
    // g_l = h_l W_l
    let mut grad = vec![S::zero(); n * d];
    let mut g: Option<Vec<S>> = None; // g_{l+1}, width of layer l output
    for l in (0..l_count).rev() {
        let out = cfg.layer_width(l);
        let h: Vec<S> = match g {
            None => primes[l].clone(), // g_L = 1
            Some(ref gv) => primes[l].iter().zip(gv).map(|(&p, &gv)| p * gv).collect(),
        };
        gemm_into(
            S::one(),
            &h,
            n,
            out,
            false,
            params.a[l].data(),
            out,
            d,
            false,
            S::one(),
            &mut grad,
        );
        if l > 0 {
            let prev = cfg.layer_width(l - 1);
            let mut gl = vec![S::zero(); n * prev];
            gemm_into(
                S::one(),
                &h,
                n,
                out,
                false,
                params.w[l - 1].data(),
                out,
                prev,
                false,
                S::zero(),
                &mut gl,
            );
            g = Some(gl);
        }
    }
    let t = Tensor::from_parts_unchecked(vec![n, d], grad);
    t.check_finite("icnn_input_grad")?;
    Ok(t)
}

/// grad_x f(x; theta) for a single input vector.
pub fn input_grad<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    if x.shape().len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "icnn_input_grad",
            details: format!("expected a vector, got shape {:?}", x.shape()),
        });
    }
    let xm = Tensor::from_parts_unchecked(vec![1, x.len()], x.data().to_vec());
    let g = input_grad_batch(params, cfg, &xm)?;
    Ok(Tensor::from_parts_unchecked(
        vec![x.len()],
        g.data().to_vec(),
    ))
}

/// Parameter nodes of one network on a tape.
pub struct IcnnNodes {
    pub w: Vec<NodeId>,
    pub a: Vec<NodeId>,
    pub b: Vec<NodeId>,
}

impl IcnnNodes {
    pub fn insert<S: Scalar>(tape: &mut Tape<S>, params: &IcnnParams<S>, trainable: bool) -> Self {
        let mut ins = |t: &Tensor<S>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        IcnnNodes {
            w: params.w.iter().map(&mut ins).collect(),
            a: params.a.iter().map(&mut ins).collect(),
            b: params.b.iter().map(&mut ins).collect(),
        }
    }

    /// Same fixed order as `IcnnParams::tensors`.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.w
            .iter()
            .chain(self.a.iter())
            .chain(self.b.iter())
            .copied()
            .collect()
    }
}

/// Differentiable batched forward pass; returns an [n, 1] node.
pub fn forward_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &IcnnConfig,
    nodes: &IcnnNodes,
    x: NodeId,
) -> Result<NodeId> {
    check_batch_shape(cfg, tape.value(x), "icnn_forward")?;
    let mut z: Option<NodeId> = None;
    for l in 0..cfg.num_layers {
        let mut u = tape.matmul_opt(x, nodes.a[l], false, true)?;
        if let Some(zn) = z {
            let wz = tape.matmul_opt(zn, nodes.w[l - 1], false, true)?;
            u = tape.add(u, wz)?;
        }
        let u = tape.add_row_broadcast(u, nodes.b[l])?;
        z = Some(tape.activation(u, cfg.layer_activation(l))?);
    }
    Ok(z.unwrap())
}

/// Differentiable batched input gradient built as an explicit composite of
/// tape primitives, so the result can itself be differentiated with respect
/// to the parameters. Returns an [n, d] node.
pub fn input_grad_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &IcnnConfig,
    nodes: &IcnnNodes,
    x: NodeId,
) -> Result<NodeId> {
    check_batch_shape(cfg, tape.value(x), "icnn_input_grad")?;
    let l_count = cfg.num_layers;

    // forward pre-activations, keeping sigma'(u_l) nodes
    let mut primes: Vec<NodeId> = Vec::with_capacity(l_count);
    let mut z: Option<NodeId> = None;
    for l in 0..l_count {
        let mut u = tape.matmul_opt(x, nodes.a[l], false, true)?;
        if let Some(zn) = z {
            let wz = tape.matmul_opt(zn, nodes.w[l - 1], false, true)?;
            u = tape.add(u, wz)?;
        }
        let u = tape.add_row_broadcast(u, nodes.b[l])?;
        let act = cfg.layer_activation(l);
        primes.push(tape.activation_prime(u, act)?);
        if l + 1 < l_count {
            z = Some(tape.activation(u, act)?);
        }
    }

    // backward recursion over the batch
    let mut grad: Option<NodeId> = None;
    let mut g: Option<NodeId> = None;
    for l in (0..l_count).rev() {
        let h = match g {
            None => primes[l], // g_L = 1
            Some(gn) => tape.mul(primes[l], gn)?,
        };
        let term = tape.matmul(h, nodes.a[l])?;
        grad = Some(match grad {
            None => term,
            Some(gr) => tape.add(gr, term)?,
        });
        if l > 0 {
            g = Some(tape.matmul(h, nodes.w[l - 1])?);
        }
    }
    Ok(grad.unwrap())
}

/// Max Jensen-inequality violation over random pairs: positive values mean
/// the network is not convex.
pub fn convexity_violation<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    pairs: usize,
    span: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let d = cfg.input_dim;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let x1: Vec<S> = (0..d)
            .map(|_| S::from_f64(rng.gen_range(-span..span)))
            .collect();
        let x2: Vec<S> = (0..d)
            .map(|_| S::from_f64(rng.gen_range(-span..span)))
            .collect();
        let t = rng.gen_range(0.0f64..1.0);
        let mid: Vec<S> = x1
            .iter()
            .zip(&x2)
            .map(|(&a, &b)| S::from_f64(t) * a + S::from_f64(1.0 - t) * b)
            .collect();
        let f1 = forward(params, cfg, &Tensor::from_parts_unchecked(vec![d], x1))?.to_f64();
        let f2 = forward(params, cfg, &Tensor::from_parts_unchecked(vec![d], x2))?.to_f64();
        let fm = forward(params, cfg, &Tensor::from_parts_unchecked(vec![d], mid))?.to_f64();
        worst = worst.max(fm - (t * f1 + (1.0 - t) * f2));
    }
    Ok(worst)
}
