//! Independent oracles and evaluation metrics: the 1-D sorted-matching
//! distance, transported-mean error, support coverage for the 2-D
//! datasets, minimization-gap estimation and the strong-convexity
//! stability bound, plus displacement-field grid exports.

use crate::data::{
    eight_gaussian_centers, sample, DistributionSpec, RngStream, CHECKERBOARD_TARGET_CENTERS,
    EIGHT_GAUSSIAN_NOISE_VAR,
};
use crate::error::{Error, Result};
use crate::icnn::{
    forward_batch, forward_on_tape, init_params, input_grad_batch, input_grad_on_tape,
    quadratic_icnn, IcnnConfig, IcnnNodes, IcnnParams,
};
use crate::optim::{AdamConfig, AdamState, Direction, LrSchedule};
use crate::tape::Tape;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Exact empirical squared W2 between two 1-D samples under cost
/// 0.5|x - y|^2: sort both, pair by rank.
pub fn sorted_matching_w2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "sorted_matching_w2",
            details: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(0.5 * sum / a.len() as f64)
}

/// Squared distance between the transported batch mean and the target
/// mean, plus the percentage form when the target mean is nonzero.
pub fn mean_transport_error(transported: &Tensor<f64>, mu: &[f64]) -> Result<(f64, Option<f64>)> {
    let n = transported.rows();
    if n == 0 || transported.cols() != mu.len() {
        return Err(Error::ShapeMismatch {
            op: "mean_transport_error",
            details: format!(
                "batch shape {:?}, target mean has {} coords",
                transported.shape(),
                mu.len()
            ),
        });
    }
    let d = mu.len();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(transported.row(i)) {
            *m += v;
        }
    }
    let absolute: f64 = mean
        .iter()
        .zip(mu)
        .map(|(m, t)| {
            let e = m / n as f64 - t;
            e * e
        })
        .sum();
    let mu_sq: f64 = mu.iter().map(|v| v * v).sum();
    let relative = (mu_sq > 0.0).then(|| 100.0 * absolute / mu_sq);
    Ok((absolute, relative))
}

fn dist_to_box(p: &[f64], center: &[f64; 2], half: f64) -> f64 {
    let dx = ((p[0] - center[0]).abs() - half).max(0.0);
    let dy = ((p[1] - center[1]).abs() - half).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Euclidean distance from a point to the target support (checkerboard
/// cells, or mixture cores within 3 sigma of a component mean).
pub fn distance_to_support(p: &[f64], target: &DistributionSpec) -> Result<f64> {
    match target {
        DistributionSpec::CheckerboardTarget => Ok(CHECKERBOARD_TARGET_CENTERS
            .iter()
            .map(|c| dist_to_box(p, c, 0.5))
            .fold(f64::INFINITY, f64::min)),
        DistributionSpec::EightGaussianTarget => {
            let r = 3.0 * EIGHT_GAUSSIAN_NOISE_VAR.sqrt();
            Ok(eight_gaussian_centers()
                .iter()
                .map(|c| {
                    let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                    (d - r).max(0.0)
                })
                .fold(f64::INFINITY, f64::min))
        }
        other => Err(Error::UnsupportedDistribution(format!(
            "{other:?} has no decidable support membership test"
        ))),
    }
}

/// Fraction of transported points within distance tau of the target
/// support.
pub fn support_coverage(
    transported: &Tensor<f64>,
    target: &DistributionSpec,
    tau: f64,
) -> Result<f64> {
    let n = transported.rows();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "support_coverage: empty batch".into(),
        ));
    }
    let mut hits = 0usize;
    for i in 0..n {
        if distance_to_support(transported.row(i), target)? <= tau {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Fraction of points assigned (by nearest center) to each checkerboard
/// target cell.
pub fn checkerboard_cell_masses(transported: &Tensor<f64>) -> [f64; 4] {
    let n = transported.rows();
    let mut counts = [0usize; 4];
    for i in 0..n {
        let p = transported.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in CHECKERBOARD_TARGET_CENTERS.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        counts[best] += 1;
    }
    counts.map(|c| c as f64 / n as f64)
}

/// Analytic potentials with closed-form conjugates, used as stability-test
/// fixtures.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticPotential {
    /// f(x) = (alpha/2) ||x||^2, alpha-strongly convex;
    /// f*(y) = ||y||^2 / (2 alpha), grad f*(y) = y / alpha.
    Quadratic { alpha: f64 },
}

impl AnalyticPotential {
    pub fn alpha(&self) -> f64 {
        match self {
            AnalyticPotential::Quadratic { alpha } => *alpha,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticPotential::Quadratic { alpha } => {
                0.5 * alpha * x.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    pub fn conj_value(&self, y: &[f64]) -> f64 {
        match self {
            AnalyticPotential::Quadratic { alpha } => {
                y.iter().map(|v| v * v).sum::<f64>() / (2.0 * alpha)
            }
        }
    }

    pub fn conj_grad(&self, y: &[f64]) -> Vec<f64> {
        match self {
            AnalyticPotential::Quadratic { alpha } => y.iter().map(|v| v / alpha).collect(),
        }
    }
}

/// The maximizing player of the minimization gap: either an analytic
/// fixture or a trained ICNN.
pub enum Potential<'a> {
    Analytic(AnalyticPotential),
    Icnn {
        params: &'a IcnnParams<f64>,
        cfg: &'a IcnnConfig,
    },
}

impl Potential<'_> {
    fn value_batch(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
        match self {
            Potential::Analytic(p) => Ok((0..x.rows()).map(|i| p.value(x.row(i))).collect()),
            Potential::Icnn { params, cfg } => forward_batch(params, cfg, x),
        }
    }
}

/// Monte-Carlo estimate of V_Q(f, g) = E_Q[ f(grad g(Y)) - <Y, grad g(Y)> ]
/// (the part of the minimax functional that depends on g; the E_P term
/// cancels in the minimization gap).
fn v_q(
    f: &Potential,
    g_params: &IcnnParams<f64>,
    g_cfg: &IcnnConfig,
    y: &Tensor<f64>,
) -> Result<f64> {
    let grad = input_grad_batch(g_params, g_cfg, y)?;
    let f_vals = f.value_batch(&grad)?;
    let n = y.rows();
    let d = y.cols();
    let mut acc = 0.0;
    for (i, fv) in f_vals.iter().enumerate().take(n) {
        let mut dot = 0.0;
        for j in 0..d {
            dot += y.data()[i * d + j] * grad.data()[i * d + j];
        }
        acc += fv - dot;
    }
    Ok(acc / n as f64)
}

/// Upper-biased estimate of the minimization gap
/// eps1(f, g) = V(f, g) - inf_g~ V(f, g~): the infimum is replaced by the
/// best value found by Adam from `restarts` fresh initializations.
#[allow(clippy::too_many_arguments)]
pub fn eps1_estimate(
    f: &Potential,
    g_params: &IcnnParams<f64>,
    g_cfg: &IcnnConfig,
    q: &DistributionSpec,
    inner_budget: usize,
    restarts: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    if inner_budget == 0 || restarts == 0 {
        return Err(Error::InvalidArgument(
            "eps1_estimate: inner_budget and restarts must be >= 1".into(),
        ));
    }
    let d = q.dim();
    let y_mc = sample(q, mc_samples, &mut RngStream::new(seed, "eps1-mc"))?;
    let v_g = v_q(f, g_params, g_cfg, &y_mc)?;

    // the analytic quadratic fixture has an exact ICNN form, so the inner
    // player can always be expressed through the same tape machinery
    let f_icnn: (IcnnConfig, IcnnParams<f64>);
    let (f_cfg, f_params): (&IcnnConfig, &IcnnParams<f64>) = match f {
        Potential::Icnn { params, cfg } => (cfg, params),
        Potential::Analytic(AnalyticPotential::Quadratic { alpha }) => {
            f_icnn = quadratic_icnn(d, *alpha, 0.2);
            (&f_icnn.0, &f_icnn.1)
        }
    };

    let inner_cfg = IcnnConfig::new(d, (2 * d).max(16), 3);
    let adam = AdamConfig {
        lr: 1e-2,
        beta1: 0.9,
        beta2: 0.99,
        eps: 1e-8,
        schedule: LrSchedule::default(),
    };
    let batch = 128usize;
    let mut best = f64::INFINITY;
    for r in 0..restarts {
        let mut tilde: IcnnParams<f64> = init_params(
            &inner_cfg,
            0.5,
            RngStream::new(seed, &format!("eps1-init-{r}")).rng(),
        );
        let shapes: Vec<&[usize]> = tilde.tensors().iter().map(|t| t.shape()).collect();
        let mut opt = AdamState::<f64>::new(adam, &shapes)?;
        let mut q_stream = RngStream::new(seed, &format!("eps1-q-{r}"));
        for _ in 0..inner_budget {
            let y = sample(q, batch, &mut q_stream)?;
            let mut tape = Tape::new();
            let f_nodes = IcnnNodes::insert(&mut tape, f_params, false);
            let g_nodes = IcnnNodes::insert(&mut tape, &tilde, true);
            let yn = tape.constant(y.clone());
            let grad = input_grad_on_tape(&mut tape, &inner_cfg, &g_nodes, yn)?;
            let f_at = forward_on_tape(&mut tape, f_cfg, &f_nodes, grad)?;
            let dot = tape.row_dot(yn, grad)?;
            let per = tape.sub(f_at, dot)?;
            let loss = tape.mean_all(per)?;
            let grads = tape.backward(loss)?;
            let grad_list: Vec<Tensor<f64>> = g_nodes
                .node_ids()
                .iter()
                .zip(tilde.tensors())
                .map(|(&id, t)| grads.get_or_zero(id, t.shape()))
                .collect();
            let mut flat: Vec<Tensor<f64>> = tilde.tensors().into_iter().cloned().collect();
            opt.step(&mut flat, &grad_list, Direction::Minimize)?;
            tilde = IcnnParams::from_tensors(&inner_cfg, flat)?;
        }
        let v = v_q(f, &tilde, &inner_cfg, &y_mc)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "eps1_estimate",
                context: Some(format!("restart {r} diverged")),
            });
        }
        best = best.min(v);
    }
    Ok(v_g - best)
}

/// Outcome of the strong-convexity stability check on an analytic fixture
/// where the analytic f is itself optimal (so the maximization gap
/// vanishes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub alpha: f64,
    /// Monte-Carlo estimate of the minimization gap eps1(f, g).
    pub eps1: f64,
    pub eps1_stderr: f64,
    /// Monte-Carlo estimate of ||grad g - grad f*||^2 in L2(Q).
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// (2 / alpha) * eps1
    pub bound: f64,
    /// Standard error of the pointwise difference lhs_i - (2/alpha) eps1_i.
    pub gap_stderr: f64,
    pub holds: bool,
    pub samples: usize,
}

/// Check ||grad g - grad f*||^2_{L2(Q)} <= (2/alpha) eps1 on an analytic
/// alpha-strongly-convex fixture with known conjugate.
pub fn stability_check(
    f: AnalyticPotential,
    g_params: &IcnnParams<f64>,
    g_cfg: &IcnnConfig,
    q: &DistributionSpec,
    n: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let alpha = f.alpha();
    let y = sample(q, n, &mut RngStream::new(seed, "stability-mc"))?;
    let grad = input_grad_batch(g_params, g_cfg, &y)?;
    let d = y.cols();

    let mut lhs_mean = 0.0;
    let mut lhs_m2 = 0.0;
    let mut eps_mean = 0.0;
    let mut eps_m2 = 0.0;
    let mut gap_mean = 0.0;
    let mut gap_m2 = 0.0;
    for i in 0..n {
        let yi = y.row(i);
        let gi = &grad.data()[i * d..(i + 1) * d];
        let conj_grad = f.conj_grad(yi);
        let lhs_i: f64 = gi
            .iter()
            .zip(&conj_grad)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
        let eps_i = f.conj_value(yi) - dot + f.value(gi);
        let gap_i = lhs_i - (2.0 / alpha) * eps_i;
        let k = (i + 1) as f64;
        for (mean, m2, v) in [
            (&mut lhs_mean, &mut lhs_m2, lhs_i),
            (&mut eps_mean, &mut eps_m2, eps_i),
            (&mut gap_mean, &mut gap_m2, gap_i),
        ] {
            let delta = v - *mean;
            *mean += delta / k;
            *m2 += delta * (v - *mean);
        }
    }
    let stderr = |m2: f64| {
        if n > 1 {
            (m2 / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        }
    };
    let bound = (2.0 / alpha) * eps_mean;
    let gap_stderr = stderr(gap_m2);
    Ok(StabilityReport {
        alpha,
        eps1: eps_mean,
        eps1_stderr: stderr(eps_m2),
        lhs: lhs_mean,
        lhs_stderr: stderr(lhs_m2),
        bound,
        gap_stderr,
        holds: gap_mean <= 3.0 * gap_stderr + 1e-12,
        samples: n,
    })
}

/// Regular-grid evaluation of the transport map, displacement field and
/// dual potential g(y) - ||y||^2 / 2 for 2-D checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridExport {
    pub bounds: [f64; 2],
    pub resolution: usize,
    /// Rows (y1, y2, T1, T2, disp1, disp2, potential), resolution^2 of them.
    pub rows: Vec<[f64; 7]>,
}

pub fn export_grid(
    g_params: &IcnnParams<f64>,
    g_cfg: &IcnnConfig,
    bounds: [f64; 2],
    resolution: usize,
) -> Result<GridExport> {
    if g_cfg.input_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "export_grid requires a 2-D network, got input_dim {}",
            g_cfg.input_dim
        )));
    }
    if resolution < 2 || bounds[0] >= bounds[1] {
        return Err(Error::InvalidArgument(
            "export_grid: need resolution >= 2 and bounds lo < hi".into(),
        ));
    }
    let step = (bounds[1] - bounds[0]) / (resolution - 1) as f64;
    let mut pts = Vec::with_capacity(resolution * resolution * 2);
    for i in 0..resolution {
        for j in 0..resolution {
            pts.push(bounds[0] + i as f64 * step);
            pts.push(bounds[0] + j as f64 * step);
        }
    }
    let y = Tensor::matrix(resolution * resolution, 2, pts)?;
    let t = input_grad_batch(g_params, g_cfg, &y)?;
    let g_vals = forward_batch(g_params, g_cfg, &y)?;
    let rows = (0..y.rows())
        .map(|i| {
            let yi = y.row(i);
            let ti = t.row(i);
            let pot = g_vals[i] - 0.5 * (yi[0] * yi[0] + yi[1] * yi[1]);
            [
                yi[0],
                yi[1],
                ti[0],
                ti[1],
                ti[0] - yi[0],
                ti[1] - yi[1],
                pot,
            ]
        })
        .collect();
    Ok(GridExport {
        bounds,
        resolution,
        rows,
    })
}

pub fn write_grid(w: &mut impl Write, grid: &GridExport) -> Result<()> {
    writeln!(w, "y1\ty2\tT1\tT2\tdisp1\tdisp2\tpotential")?;
    for r in &grid.rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", cells.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_matching_hand_values() {
        assert_eq!(
            sorted_matching_w2(&[0.0, 1.0, 2.0], &[10.0, 11.0, 12.0]).unwrap(),
            50.0
        );
        assert_eq!(sorted_matching_w2(&[0.0], &[3.0]).unwrap(), 4.5);
        let a = [3.0, 1.0, 2.0];
        let b = [2.0, 3.0, 1.0];
        assert_eq!(sorted_matching_w2(&a, &b).unwrap(), 0.0);
        assert!(sorted_matching_w2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sorted_matching_translation_covariance() {
        let a = [0.4, -1.2, 2.2, 0.9];
        let b = [1.0, 0.1, -0.7, 3.0];
        let c = 1.7;
        let base = sorted_matching_w2(&a, &b).unwrap();
        let shifted_both = sorted_matching_w2(&a.map(|v| v + c), &b.map(|v| v + c)).unwrap();
        assert!((base - shifted_both).abs() < 1e-12);
        // shifting only b: 0.5 mean (x - y - c)^2 expands predictably
        let shifted_b = sorted_matching_w2(&a, &b.map(|v| v + c)).unwrap();
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let cross: f64 = sa.iter().zip(&sb).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
        let predicted = base - c * cross + 0.5 * c * c;
        assert!((shifted_b - predicted).abs() < 1e-12);
    }

    #[test]
    fn sorted_matching_converges_to_gaussian_closed_form() {
        // matched marginals of two unit Gaussians shifted by m
        let m = 3.0;
        let n = 100_000;
        let mut sa = RngStream::new(5, "a");
        let mut sb = RngStream::new(5, "b");
        let spec0 = DistributionSpec::IsotropicGaussian {
            dim: 1,
            mean: vec![0.0],
        };
        let spec1 = DistributionSpec::IsotropicGaussian {
            dim: 1,
            mean: vec![m],
        };
        let a = sample(&spec0, n, &mut sa).unwrap();
        let b = sample(&spec1, n, &mut sb).unwrap();
        let w2 = sorted_matching_w2(a.data(), b.data()).unwrap();
        let exact = 0.5 * m * m;
        assert!((w2 - exact).abs() / exact < 0.03, "w2 = {w2}");
    }

    #[test]
    fn mean_transport_error_cases() {
        let t = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (abs, rel) = mean_transport_error(&t, &[1.0, 1.0]).unwrap();
        assert_eq!(abs, 0.0);
        assert_eq!(rel, Some(0.0));

        let t = Tensor::matrix(1, 2, vec![1.1, 0.9]).unwrap();
        let (abs, rel) = mean_transport_error(&t, &[1.0, 1.0]).unwrap();
        assert!((abs - 0.02).abs() < 1e-12);
        assert!((rel.unwrap() - 1.0).abs() < 1e-9);

        let (abs, rel) = mean_transport_error(&t, &[0.0, 0.0]).unwrap();
        assert!(abs > 0.0);
        assert_eq!(rel, None);
    }

    #[test]
    fn support_coverage_cases() {
        // points exactly at target centers
        let mut pts = Vec::new();
        for c in &CHECKERBOARD_TARGET_CENTERS {
            pts.extend_from_slice(c);
        }
        let t = Tensor::matrix(4, 2, pts).unwrap();
        assert_eq!(
            support_coverage(&t, &DistributionSpec::CheckerboardTarget, 0.0).unwrap(),
            1.0
        );
        // source-only centers, tau = 0
        let src_only = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            support_coverage(&src_only, &DistributionSpec::CheckerboardTarget, 0.0).unwrap(),
            0.0
        );
        assert!(support_coverage(&t, &DistributionSpec::EightGaussianSource, 0.1).is_err());
    }

    #[test]
    fn eps1_quadratic_closed_form_cases() {
        // g(y) = (1+delta)/2 ||y||^2 against f(x) = ||x||^2/2, Q = N(0, I2)
        let f = Potential::Analytic(AnalyticPotential::Quadratic { alpha: 1.0 });
        let q = DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.0, 0.0],
        };
        for (delta, truth) in [(0.0, 0.0), (0.1, 0.01)] {
            let (g_cfg, g) = quadratic_icnn::<f64>(2, 1.0 + delta, 0.2);
            let est = eps1_estimate(&f, &g, &g_cfg, &q, 400, 2, 20_000, 3).unwrap();
            assert!(
                (est - truth).abs() < 0.005,
                "delta {delta}: estimate {est} vs {truth}"
            );
        }
        // g equal to f* analytically: the gap vanishes at the minimizer
        let (g_cfg, g) = quadratic_icnn::<f64>(2, 1.0, 0.2);
        let est = eps1_estimate(&f, &g, &g_cfg, &q, 400, 2, 20_000, 3).unwrap();
        assert!(est <= 1e-6, "estimate {est}");
    }

    #[test]
    fn stability_quadratic_saturates() {
        let q = DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.0, 0.0],
        };
        // alpha = 1, grad g = (1+delta) y: lhs = delta^2 E||Y||^2 = bound
        for delta in [0.0, 0.05, 0.1] {
            let (g_cfg, g) = quadratic_icnn::<f64>(2, 1.0 + delta, 0.2);
            let rep = stability_check(
                AnalyticPotential::Quadratic { alpha: 1.0 },
                &g,
                &g_cfg,
                &q,
                50_000,
                7,
            )
            .unwrap();
            assert!(rep.holds, "delta {delta}: {rep:?}");
            if delta > 0.0 {
                let expected = delta * delta * 2.0;
                assert!((rep.lhs - expected).abs() / expected < 0.05, "{rep:?}");
                // quadratic fixtures saturate the bound
                assert!((rep.lhs - rep.bound).abs() <= 0.01 * rep.bound.abs().max(1e-12));
            } else {
                assert!(rep.lhs.abs() < 1e-12 && rep.bound.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stability_alpha_two_fixture() {
        // f(x) = ||x||^2 (alpha = 2), grad g = (1+delta) y / 2
        let q = DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.0, 0.0],
        };
        let delta = 0.1;
        let (g_cfg, g) = quadratic_icnn::<f64>(2, (1.0 + delta) / 2.0, 0.2);
        let rep = stability_check(
            AnalyticPotential::Quadratic { alpha: 2.0 },
            &g,
            &g_cfg,
            &q,
            50_000,
            9,
        )
        .unwrap();
        let expected = (delta / 2.0) * (delta / 2.0) * 2.0;
        assert!(rep.holds, "{rep:?}");
        assert!((rep.lhs - expected).abs() / expected < 0.05, "{rep:?}");
        assert!((rep.lhs - rep.bound).abs() <= 0.01 * rep.bound);
    }

    #[test]
    fn export_grid_cases() {
        // grad g = identity -> zero displacement
        let (g_cfg, g) = quadratic_icnn::<f64>(2, 1.0, 0.2);
        let grid = export_grid(&g, &g_cfg, [-1.0, 1.0], 3).unwrap();
        assert_eq!(grid.rows.len(), 9);
        for r in &grid.rows {
            assert!(r[4].abs() < 1e-12 && r[5].abs() < 1e-12);
        }
        // zero parameters -> displacement -y, potential -||y||^2/2
        let cfg = IcnnConfig::new(2, 3, 2);
        let gz = IcnnParams::<f64>::zeros(&cfg);
        let grid = export_grid(&gz, &cfg, [-1.0, 1.0], 3).unwrap();
        for r in &grid.rows {
            assert!((r[4] + r[0]).abs() < 1e-12);
            assert!((r[5] + r[1]).abs() < 1e-12);
            let pot = -0.5 * (r[0] * r[0] + r[1] * r[1]);
            assert!((r[6] - pot).abs() < 1e-12);
        }
        // lattice points for resolution 3 over [-1, 1]
        let xs: Vec<f64> = grid.rows.iter().map(|r| r[0]).collect();
        assert_eq!(xs[0], -1.0);
        assert_eq!(xs[8], 1.0);
        // non-2-D network is rejected
        let cfg3 = IcnnConfig::new(3, 3, 2);
        let g3 = IcnnParams::<f64>::zeros(&cfg3);
        assert!(export_grid(&g3, &cfg3, [-1.0, 1.0], 3).is_err());
    }
}
