use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use w2ot::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use w2ot::config::RunConfig;
use w2ot::data::{closed_form_w2, sample, DistributionSpec, RngStream};
use w2ot::eval::{
    checkerboard_cell_masses, export_grid, mean_transport_error, support_coverage, write_grid,
};
use w2ot::icnn::{
    init_params, input_grad_batch, input_grad_on_tape, IcnnConfig, IcnnNodes, IcnnParams,
};
use w2ot::scalar::Scalar;
use w2ot::tape::Tape;
use w2ot::tensor::Tensor;
use w2ot::train::{c_pq_estimate, objective_value, train, transport, Precision, TrainState};

#[derive(Parser)]
#[command(
    name = "w2ot",
    about = "Optimal transport maps via input-convex networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the two networks on the configured distribution pair.
    Train(TrainArgs),
    /// Evaluate a checkpoint: transport-cost estimate and target-fit metrics.
    Eval(EvalArgs),
    /// Export the transport map on a regular 2-D grid.
    ExportGrid(ExportArgs),
    /// Fast internal diagnostics: analytic gradients against finite
    /// differences, including a deliberately corrupted negative control.
    Selfcheck,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the config echo, metrics and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run configuration naming the source/target pair.
    #[arg(long)]
    config: PathBuf,
    /// Evaluation sample count.
    #[arg(long, default_value_t = 8192)]
    samples: usize,
    /// Override the configured seed for evaluation sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output file (tab-separated grid).
    #[arg(long)]
    out: PathBuf,
    /// Grid bounds as `lo,hi`, applied to both axes.
    #[arg(long, default_value = "-2,2", allow_hyphen_values = true)]
    bounds: String,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    resolution: usize,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::ExportGrid(args) => cmd_export_grid(args),
        Cmd::Selfcheck => cmd_selfcheck(),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml_string()?)?;

    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics_file = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let latest_path = args.out.join("checkpoint-latest.txt");
    let precision = cfg.train.precision;

    let f_cfg = cfg.f_network.to_icnn();
    let g_cfg = cfg.g_network.to_icnn();
    let on_eval = &mut |rec: &w2ot::train::MetricsRecord,
                        f: &IcnnParams<f64>,
                        g: &IcnnParams<f64>|
     -> w2ot::Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| w2ot::Error::Config(e.to_string()))?;
        writeln!(metrics_file, "{line}")?;
        metrics_file.flush()?;
        save_checkpoint(
            &latest_path,
            &Checkpoint {
                precision,
                iteration: rec.iter,
                f_cfg,
                f: f.clone(),
                g_cfg,
                g: g.clone(),
            },
        )?;
        println!(
            "iter {:>8}  J {:+.6}  W2~ {:+.6}  reg {:.3e}  lr_g {:.3e}  [{:.1}s]",
            rec.iter, rec.j, rec.w2_estimate, rec.reg, rec.lr_g, rec.wall_clock_s
        );
        Ok(())
    };

    let (f, g, iters) = match precision {
        Precision::F64 => finish(train::<f64>(
            &cfg.train,
            &f_cfg,
            &g_cfg,
            &cfg.source,
            &cfg.target,
            on_eval,
        )?),
        Precision::F32 => finish(train::<f32>(
            &cfg.train,
            &f_cfg,
            &g_cfg,
            &cfg.source,
            &cfg.target,
            on_eval,
        )?),
    };
    save_checkpoint(
        &args.out.join("checkpoint-final.txt"),
        &Checkpoint {
            precision,
            iteration: iters,
            f_cfg,
            f,
            g_cfg,
            g,
        },
    )?;
    println!(
        "done: {} iterations, outputs in {}",
        iters,
        args.out.display()
    );
    Ok(())
}

fn finish<S: Scalar>(
    out: (TrainState<S>, Vec<w2ot::train::MetricsRecord>),
) -> (IcnnParams<f64>, IcnnParams<f64>, usize) {
    let (state, _) = out;
    (state.f.cast(), state.g.cast(), state.iteration)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let x = sample(
        &cfg.target,
        args.samples,
        &mut RngStream::new(seed, "cli-eval-p"),
    )?;
    let y = sample(
        &cfg.source,
        args.samples,
        &mut RngStream::new(seed, "cli-eval-q"),
    )?;
    let j = objective_value(&ck.f, &ck.f_cfg, &ck.g, &ck.g_cfg, &x, &y)?;
    let c = c_pq_estimate(&x, &y)?;
    let mapped = transport(&ck.g, &ck.g_cfg, &y)?;

    let mut report = serde_json::json!({
        "iteration": ck.iteration,
        "samples": args.samples,
        "j": j,
        "c_pq": c,
        "w2_estimate": j + c,
    });
    if let Some(exact) = closed_form_w2(&cfg.source, &cfg.target) {
        report["w2_closed_form"] = exact.into();
    }
    match &cfg.target {
        DistributionSpec::IsotropicGaussian { mean, .. } => {
            let (abs, rel) = mean_transport_error(&mapped, mean)?;
            report["mean_error_sq"] = abs.into();
            if let Some(rel) = rel {
                report["mean_error_rel_percent"] = rel.into();
            }
        }
        t @ DistributionSpec::CheckerboardTarget => {
            report["support_coverage"] = support_coverage(&mapped, t, 0.1)?.into();
            report["cell_masses"] = checkerboard_cell_masses(&mapped).to_vec().into();
        }
        t @ DistributionSpec::EightGaussianTarget => {
            report["support_coverage"] = support_coverage(&mapped, t, 0.1)?.into();
        }
        _ => {}
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_export_grid(args: ExportArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let parts: Vec<&str> = args.bounds.split(',').collect();
    if parts.len() != 2 {
        bail!("--bounds expects `lo,hi`, got {:?}", args.bounds);
    }
    let lo: f64 = parts[0].trim().parse().context("bad lower bound")?;
    let hi: f64 = parts[1].trim().parse().context("bad upper bound")?;
    let grid = export_grid(&ck.g, &ck.g_cfg, [lo, hi], args.resolution)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    write_grid(&mut file, &grid)?;
    file.flush()?;
    println!(
        "wrote {} grid rows to {}",
        grid.rows.len(),
        args.out.display()
    );
    Ok(())
}

/// Max relative error between tape gradients of mean ||grad g(x)||^2 with
/// respect to the network parameters and central finite differences.
/// `second_deriv_scale` != 1 corrupts the curvature term used by the
/// input-gradient graph and must be caught.
fn gradient_check(seed: u64, second_deriv_scale: f64) -> anyhow::Result<f64> {
    let cfg = IcnnConfig::new(2, 4, 3);
    let params: IcnnParams<f64> =
        init_params(&cfg, 0.8, RngStream::new(seed, "selfcheck-init").rng());
    let x = sample(
        &DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.4, 0.4],
        },
        6,
        &mut RngStream::new(seed, "selfcheck-x"),
    )?;

    let analytic = {
        let mut tape = Tape::new();
        tape.second_deriv_scale = second_deriv_scale;
        let nodes = IcnnNodes::insert(&mut tape, &params, true);
        let xn = tape.constant(x.clone());
        let grad = input_grad_on_tape(&mut tape, &cfg, &nodes, xn)?;
        let sq = tape.row_dot(grad, grad)?;
        let loss = tape.mean_all(sq)?;
        let grads = tape.backward(loss)?;
        nodes
            .node_ids()
            .iter()
            .zip(params.tensors())
            .map(|(&id, t)| grads.get_or_zero(id, t.shape()))
            .collect::<Vec<_>>()
    };

    let value = |p: &IcnnParams<f64>| -> f64 {
        let g = input_grad_batch(p, &cfg, &x).unwrap();
        g.data().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (which, tensor) in params.tensors().iter().enumerate() {
        for idx in 0..tensor.len() {
            let perturb = |delta: f64| {
                let mut flat: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
                let mut data = flat[which].data().to_vec();
                data[idx] += delta;
                flat[which] = Tensor::new(tensor.shape().to_vec(), data).unwrap();
                IcnnParams::from_tensors(&cfg, flat).unwrap()
            };
            let numeric = (value(&perturb(h)) - value(&perturb(-h))) / (2.0 * h);
            let a = analytic[which].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn cmd_selfcheck() -> anyhow::Result<()> {
    let started = std::time::Instant::now();
    let mut failed = false;
    let mut line = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed |= !ok;
    };

    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        worst = worst.max(gradient_check(seed, 1.0)?);
    }
    line(
        "parameter gradients vs finite differences",
        worst < 1e-4,
        format!("max rel err {worst:.3e} over 5 random networks"),
    );

    let corrupted = gradient_check(0, 1.5)?;
    line(
        "negative control (corrupted curvature term)",
        corrupted > 1e-3,
        format!("max rel err {corrupted:.3e}, expected the check to break"),
    );

    let act = w2ot::activation::Activation::squared_leaky_relu(0.2);
    let ok = (act.value(3.0f64) - 9.0).abs() < 1e-15
        && (act.prime(3.0f64) - 6.0).abs() < 1e-15
        && (act.second(3.0f64) - 2.0).abs() < 1e-15
        && (act.value(-5.0f64) - 1.0).abs() < 1e-15
        && (act.prime(-5.0f64) + 0.4).abs() < 1e-15;
    line(
        "activation derivative identities",
        ok,
        "frozen values".into(),
    );

    let (qcfg, q) = w2ot::icnn::quadratic_icnn::<f64>(2, 1.0, 0.2);
    let y = sample(
        &DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.0, 0.0],
        },
        512,
        &mut RngStream::new(1, "selfcheck-id"),
    )?;
    let mapped = transport(&q, &qcfg, &y)?;
    let max_dev = mapped
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    line(
        "quadratic potential yields the identity map",
        max_dev < 1e-12,
        format!("max |T(y) - y| = {max_dev:.3e}"),
    );

    let mut rng = RngStream::new(3, "selfcheck-convexity");
    let mut worst_violation = f64::NEG_INFINITY;
    for _ in 0..5 {
        use rand::Rng;
        let d = rng.rng().gen_range(1..=4usize);
        let m = rng.rng().gen_range(2..=8usize);
        let cfg = IcnnConfig::new(d, m, 3);
        let params: IcnnParams<f64> = init_params(&cfg, 1.0, rng.rng()).project_nonneg();
        let v = w2ot::icnn::convexity_violation(&params, &cfg, 1000, 3.0, rng.rng())?;
        worst_violation = worst_violation.max(v);
    }
    line(
        "convexity after weight projection",
        worst_violation < 1e-9,
        format!("max Jensen violation {worst_violation:.3e} over 5 networks"),
    );

    let delta = 0.1;
    let (g_cfg, g) = w2ot::icnn::quadratic_icnn::<f64>(2, 1.0 + delta, 0.2);
    let rep = w2ot::eval::stability_check(
        w2ot::eval::AnalyticPotential::Quadratic { alpha: 1.0 },
        &g,
        &g_cfg,
        &DistributionSpec::IsotropicGaussian {
            dim: 2,
            mean: vec![0.0, 0.0],
        },
        100_000,
        4,
    )?;
    line(
        "quadratic stability fixture",
        rep.holds && (rep.lhs - rep.bound).abs() <= 0.01 * rep.bound,
        format!("lhs {:.5} vs bound {:.5}", rep.lhs, rep.bound),
    );

    println!(
        "selfcheck finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    if failed {
        bail!("selfcheck failed");
    }
    Ok(())
}
