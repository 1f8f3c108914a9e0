//! The minimax objective and its training loop: K inner minimization steps
//! over the g-network per outer iteration, one maximization step over the
//! f-network, then a nonnegativity projection of f's W weights.

use crate::data::{sample, DistributionSpec, RngStream};
use crate::error::{Error, Result};
use crate::icnn::{
    forward_batch, forward_on_tape, init_params, input_grad_batch, input_grad_on_tape, IcnnConfig,
    IcnnNodes, IcnnParams,
};
use crate::optim::{AdamConfig, AdamState, Direction};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Batch size M.
    pub batch_size: usize,
    /// Inner (generator) iterations K per outer iteration.
    pub inner_iters: usize,
    /// Outer iterations T.
    pub total_iters: usize,
    /// Regularization constant lambda for the g-network weight penalty.
    pub lambda: f64,
    pub f_opt: AdamConfig,
    pub g_opt: AdamConfig,
    pub seed: u64,
    /// Separate seed for the network initializations; defaults to `seed`.
    /// Lets two runs share identical data streams while starting from
    /// different weights.
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default)]
    pub precision: Precision,
    /// Emit a metrics record every this many outer iterations.
    pub eval_every: usize,
    /// Evaluation batch size for the reported W2 estimate.
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Std-dev multiplier of the fan-in-scaled initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_eval_batch() -> usize {
    8192
}

fn default_init_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidArgument(
                "train: batch_size and inner_iters must be >= 1".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument("train: lambda must be >= 0".into()));
        }
        if self.eval_every == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidArgument(
                "train: eval_every and eval_batch must be >= 1".into(),
            ));
        }
        self.f_opt.validate()?;
        self.g_opt.validate()?;
        Ok(())
    }
}

/// One evaluation-point record of the metrics stream. The wall clock is
/// kept out of serialization so metrics files stay byte-identical across
/// reruns of the same seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub j: f64,
    pub reg: f64,
    pub w2_estimate: f64,
    pub c_pq: f64,
    pub lr_f: f64,
    pub lr_g: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

pub struct TrainState<S: Scalar> {
    pub f: IcnnParams<S>,
    pub g: IcnnParams<S>,
    pub iteration: usize,
    pub f_opt: AdamState<S>,
    pub g_opt: AdamState<S>,
}

/// C_{P,Q} = 0.5 (mean ||X_i||^2 + mean ||Y_j||^2)
pub fn c_pq_estimate<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<S> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::InvalidArgument("c_pq_estimate: empty batch".into()));
    }
    let mean_sq = |t: &Tensor<S>| -> S {
        let n = S::from_f64(t.rows() as f64);
        t.data().iter().map(|&v| v * v).sum::<S>() / n
    };
    Ok(S::from_f64(0.5) * (mean_sq(x) + mean_sq(y)))
}

/// J(theta_f, theta_g) = mean_i [ f(grad g(Y_i)) - <Y_i, grad g(Y_i)> - f(X_i) ],
/// evaluated without a tape (for metrics and acceptance checks).
pub fn objective_value<S: Scalar>(
    f_params: &IcnnParams<S>,
    f_cfg: &IcnnConfig,
    g_params: &IcnnParams<S>,
    g_cfg: &IcnnConfig,
    x: &Tensor<S>,
    y: &Tensor<S>,
) -> Result<S> {
    let m = y.rows();
    if x.rows() != m {
        return Err(Error::ShapeMismatch {
            op: "objective_J",
            details: format!("X has {} rows, Y has {}", x.rows(), m),
        });
    }
    let grad_g = input_grad_batch(g_params, g_cfg, y)?;
    let f_at_grad = forward_batch(f_params, f_cfg, &grad_g)?;
    let f_at_x = forward_batch(f_params, f_cfg, x)?;
    let d = y.cols();
    let mut acc = S::zero();
    for i in 0..m {
        let mut dot = S::zero();
        for j in 0..d {
            dot = dot + y.data()[i * d + j] * grad_g.data()[i * d + j];
        }
        acc = acc + f_at_grad[i] - dot - f_at_x[i];
    }
    let j = acc / S::from_f64(m as f64);
    if !j.is_finite() {
        return Err(Error::NonFinite {
            op: "objective_J",
            context: None,
        });
    }
    Ok(j)
}

/// Differentiable objective evaluation: J plus the g-weight penalty R, with
/// gradients for whichever players are requested, from one reverse pass.
pub struct ObjectiveEval<S: Scalar> {
    pub j: S,
    pub reg: S,
    pub f_grads: Option<Vec<Tensor<S>>>,
    pub g_grads: Option<Vec<Tensor<S>>>,
}

#[allow(clippy::too_many_arguments)]
pub fn objective_with_grads<S: Scalar>(
    f_params: &IcnnParams<S>,
    f_cfg: &IcnnConfig,
    g_params: &IcnnParams<S>,
    g_cfg: &IcnnConfig,
    x: &Tensor<S>,
    y: &Tensor<S>,
    lambda: S,
    want_f: bool,
    want_g: bool,
) -> Result<ObjectiveEval<S>> {
    let m = y.rows();
    if x.rows() != m || x.cols() != f_cfg.input_dim || y.cols() != g_cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "objective_J",
            details: format!("X shape {:?}, Y shape {:?}", x.shape(), y.shape()),
        });
    }
    let mut tape = Tape::new();
    let f_nodes = IcnnNodes::insert(&mut tape, f_params, want_f);
    let g_nodes = IcnnNodes::insert(&mut tape, g_params, want_g);
    let xn = tape.constant(x.clone());
    let yn = tape.constant(y.clone());

    let grad_g = input_grad_on_tape(&mut tape, g_cfg, &g_nodes, yn)?;
    let f_at_grad = forward_on_tape(&mut tape, f_cfg, &f_nodes, grad_g)?;
    let ydot = tape.row_dot(yn, grad_g)?;
    let f_at_x = forward_on_tape(&mut tape, f_cfg, &f_nodes, xn)?;
    let t1 = tape.sub(f_at_grad, ydot)?;
    let per_sample = tape.sub(t1, f_at_x)?;
    let j = tape.mean_all(per_sample)?;

    // R(theta_g) = lambda * sum_l ||min(W_l, 0)||_F^2
    let mut loss = j;
    let mut reg_node = None;
    if lambda > S::zero() && !g_nodes.w.is_empty() {
        let mut acc: Option<crate::tape::NodeId> = None;
        for &w in &g_nodes.w {
            let sq = tape.sq_neg_part(w)?;
            let s = tape.sum_all(sq)?;
            acc = Some(match acc {
                None => s,
                Some(a) => tape.add(a, s)?,
            });
        }
        let r = tape.scale(acc.unwrap(), lambda)?;
        reg_node = Some(r);
        loss = tape.add(j, r)?;
    }

    let j_val = tape.value(j).scalar_value()?;
    let reg_val = match reg_node {
        Some(r) => tape.value(r).scalar_value()?,
        None => S::zero(),
    };

    let grads = tape.backward(loss)?;
    let extract = |nodes: &IcnnNodes, params: &IcnnParams<S>| {
        nodes
            .node_ids()
            .iter()
            .zip(params.tensors())
            .map(|(&id, t)| grads.get_or_zero(id, t.shape()))
            .collect::<Vec<_>>()
    };
    Ok(ObjectiveEval {
        j: j_val,
        reg: reg_val,
        f_grads: want_f.then(|| extract(&f_nodes, f_params)),
        g_grads: want_g.then(|| extract(&g_nodes, g_params)),
    })
}

/// Row-wise transport map: y -> grad g(y).
pub fn transport<S: Scalar>(
    g_params: &IcnnParams<S>,
    g_cfg: &IcnnConfig,
    y: &Tensor<S>,
) -> Result<Tensor<S>> {
    input_grad_batch(g_params, g_cfg, y)
}

fn adam_update<S: Scalar>(
    params: &IcnnParams<S>,
    cfg: &IcnnConfig,
    opt: &mut AdamState<S>,
    grads: &[Tensor<S>],
    dir: Direction,
) -> Result<IcnnParams<S>> {
    let mut flat: Vec<Tensor<S>> = params.tensors().into_iter().cloned().collect();
    opt.step(&mut flat, grads, dir)?;
    IcnnParams::from_tensors(cfg, flat)
}

fn sample_as<S: Scalar>(
    spec: &DistributionSpec,
    n: usize,
    stream: &mut RngStream,
) -> Result<Tensor<S>> {
    Ok(sample(spec, n, stream)?.cast())
}

const DIVERGENCE_LIMIT: f64 = 1e8;

/// Callback fired at every metrics record with the current parameter
/// snapshots (already in 64-bit form for sinks).
pub type EvalSink<'a> =
    &'a mut dyn FnMut(&MetricsRecord, &IcnnParams<f64>, &IcnnParams<f64>) -> Result<()>;

/// Run the alternating minimax loop: K inner minimization steps on g per
/// outer iteration, one maximization step on f, then the nonnegativity
/// projection of f's direct weights.
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    f_cfg: &IcnnConfig,
    g_cfg: &IcnnConfig,
    source: &DistributionSpec,
    target: &DistributionSpec,
    on_eval: EvalSink,
) -> Result<(TrainState<S>, Vec<MetricsRecord>)> {
    cfg.validate()?;
    f_cfg.validate()?;
    g_cfg.validate()?;
    source.validate()?;
    target.validate()?;
    if source.dim() != g_cfg.input_dim || target.dim() != f_cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "train",
            details: format!(
                "source dim {} vs g input {}, target dim {} vs f input {}",
                source.dim(),
                g_cfg.input_dim,
                target.dim(),
                f_cfg.input_dim
            ),
        });
    }

    let mut p_stream = RngStream::new(cfg.seed, "target-p");
    let mut q_stream = RngStream::new(cfg.seed, "source-q");
    let mut eval_p = RngStream::new(cfg.seed, "eval-p");
    let mut eval_q = RngStream::new(cfg.seed, "eval-q");

    let init_seed = cfg.init_seed.unwrap_or(cfg.seed);
    let mut f: IcnnParams<S> = init_params(
        f_cfg,
        cfg.init_scale,
        RngStream::new(init_seed, "init-f").rng(),
    );
    // init draws W nonnegative already; project anyway so the invariant
    // holds by construction
    f = f.project_nonneg();
    let mut g: IcnnParams<S> = init_params(
        g_cfg,
        cfg.init_scale,
        RngStream::new(init_seed, "init-g").rng(),
    );

    let f_shapes: Vec<&[usize]> = f.tensors().iter().map(|t| t.shape()).collect();
    let g_shapes: Vec<&[usize]> = g.tensors().iter().map(|t| t.shape()).collect();
    let mut f_opt = AdamState::<S>::new(cfg.f_opt, &f_shapes)?;
    let mut g_opt = AdamState::<S>::new(cfg.g_opt, &g_shapes)?;

    let lambda = S::from_f64(cfg.lambda);
    let mut metrics = Vec::new();
    let started = Instant::now();

    for t in 0..cfg.total_iters {
        f_opt.set_lr_for_iteration(t);
        g_opt.set_lr_for_iteration(t);

        let x: Tensor<S> = sample_as(target, cfg.batch_size, &mut p_stream)?;
        let mut last_y: Option<Tensor<S>> = None;
        for _ in 0..cfg.inner_iters {
            let y: Tensor<S> = sample_as(source, cfg.batch_size, &mut q_stream)?;
            let ev = objective_with_grads(&f, f_cfg, &g, g_cfg, &x, &y, lambda, false, true)
                .map_err(|e| diverged(e, t))?;
            check_magnitude(ev.j, t)?;
            g = adam_update(
                &g,
                g_cfg,
                &mut g_opt,
                &ev.g_grads.unwrap(),
                Direction::Minimize,
            )?;
            last_y = Some(y);
        }

        // f-update reuses the last inner-loop Y batch
        let y = last_y.unwrap();
        let ev = objective_with_grads(&f, f_cfg, &g, g_cfg, &x, &y, lambda, true, false)
            .map_err(|e| diverged(e, t))?;
        check_magnitude(ev.j, t)?;
        f = adam_update(
            &f,
            f_cfg,
            &mut f_opt,
            &ev.f_grads.unwrap(),
            Direction::Maximize,
        )?;
        f = f.project_nonneg();

        if (t + 1) % cfg.eval_every == 0 {
            let xe: Tensor<S> = sample_as(target, cfg.eval_batch, &mut eval_p)?;
            let ye: Tensor<S> = sample_as(source, cfg.eval_batch, &mut eval_q)?;
            let j = objective_value(&f, f_cfg, &g, g_cfg, &xe, &ye)?.to_f64();
            let c = c_pq_estimate(&xe, &ye)?.to_f64();
            let rec = MetricsRecord {
                iter: t + 1,
                j,
                reg: g.nonneg_regularizer(lambda).to_f64(),
                w2_estimate: j + c,
                c_pq: c,
                lr_f: f_opt.lr_now,
                lr_g: g_opt.lr_now,
                wall_clock_s: started.elapsed().as_secs_f64(),
            };
            on_eval(&rec, &f.cast(), &g.cast())?;
            metrics.push(rec);
        }
    }

    Ok((
        TrainState {
            f,
            g,
            iteration: cfg.total_iters,
            f_opt,
            g_opt,
        },
        metrics,
    ))
}

fn diverged(e: Error, iter: usize) -> Error {
    match e {
        Error::NonFinite { op, context } => Error::Diverged {
            iter,
            details: format!(
                "non-finite value in {op}{}",
                context.map(|c| format!(" ({c})")).unwrap_or_default()
            ),
        },
        other => other,
    }
}

fn check_magnitude<S: Scalar>(j: S, iter: usize) -> Result<()> {
    if j.to_f64().abs() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged {
            iter,
            details: format!("|J| = {} exceeds {DIVERGENCE_LIMIT}", j.to_f64()),
        });
    }
    Ok(())
}
