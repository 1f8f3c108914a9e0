//! Seedable samplers for the source/target distributions of the
//! experiments, plus the Gaussian closed-form distance.
//!
//! All sampling goes through labeled `RngStream`s split off one run seed,
//! so interleaved source/target/init draws stay reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const CHECKERBOARD_SOURCE_CENTERS: [[f64; 2]; 5] = [
    [0.0, 0.0],
    [1.0, 1.0],
    [1.0, -1.0],
    [-1.0, 1.0],
    [-1.0, -1.0],
];

pub const CHECKERBOARD_TARGET_CENTERS: [[f64; 2]; 4] =
    [[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]];

/// The 8 unit-circle mixture centers.
pub fn eight_gaussian_centers() -> [[f64; 2]; 8] {
    let r = 1.0 / 2.0f64.sqrt();
    [
        [1.0, 0.0],
        [r, r],
        [0.0, 1.0],
        [-r, r],
        [-1.0, 0.0],
        [-r, -r],
        [0.0, -1.0],
        [r, -r],
    ]
}

/// Per-axis variance of the eight-Gaussian mixture noise, N(0, 0.5 I_2).
pub const EIGHT_GAUSSIAN_NOISE_VAR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionSpec {
    CheckerboardSource,
    CheckerboardTarget,
    EightGaussianSource,
    EightGaussianTarget,
    IsotropicGaussian { dim: usize, mean: Vec<f64> },
    HighdimLowrankMixture { dim: usize },
}

impl DistributionSpec {
    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::CheckerboardSource
            | DistributionSpec::CheckerboardTarget
            | DistributionSpec::EightGaussianSource
            | DistributionSpec::EightGaussianTarget => 2,
            DistributionSpec::IsotropicGaussian { dim, .. } => *dim,
            DistributionSpec::HighdimLowrankMixture { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::IsotropicGaussian { dim, mean } => {
                if *dim == 0 || mean.len() != *dim {
                    return Err(Error::InvalidArgument(format!(
                        "isotropic-gaussian: mean has {} entries for dim {}",
                        mean.len(),
                        dim
                    )));
                }
            }
            DistributionSpec::HighdimLowrankMixture { dim } if *dim < 2 => {
                return Err(Error::InvalidArgument(
                    "highdim-lowrank-mixture needs dim >= 2".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// One independent, reproducible RNG stream: (seed, label) fully determine
/// the draw sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    pub seed: u64,
    pub label: String,
}

/// Stable 64-bit FNV-1a, so stream labels hash identically across builds.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label));
        RngStream {
            rng,
            seed,
            label: label.to_string(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draw n i.i.d. samples, returned as an [n, d] tensor.
pub fn sample(spec: &DistributionSpec, n: usize, stream: &mut RngStream) -> Result<Tensor<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample: n must be >= 1".into()));
    }
    spec.validate()?;
    let d = spec.dim();
    let rng = stream.rng();
    let std_normal = Normal::new(0.0f64, 1.0).unwrap();
    let mut data = Vec::with_capacity(n * d);
    match spec {
        DistributionSpec::CheckerboardSource => {
            for _ in 0..n {
                let c = CHECKERBOARD_SOURCE_CENTERS[rng.gen_range(0..5)];
                data.push(c[0] + rng.gen_range(-0.5..0.5));
                data.push(c[1] + rng.gen_range(-0.5..0.5));
            }
        }
        DistributionSpec::CheckerboardTarget => {
            for _ in 0..n {
                let c = CHECKERBOARD_TARGET_CENTERS[rng.gen_range(0..4)];
                data.push(c[0] + rng.gen_range(-0.5..0.5));
                data.push(c[1] + rng.gen_range(-0.5..0.5));
            }
        }
        DistributionSpec::EightGaussianSource => {
            for _ in 0..n * 2 {
                data.push(std_normal.sample(rng));
            }
        }
        DistributionSpec::EightGaussianTarget => {
            let centers = eight_gaussian_centers();
            let noise_std = EIGHT_GAUSSIAN_NOISE_VAR.sqrt();
            for _ in 0..n {
                let c = centers[rng.gen_range(0..8)];
                data.push(c[0] + noise_std * std_normal.sample(rng));
                data.push(c[1] + noise_std * std_normal.sample(rng));
            }
        }
        DistributionSpec::IsotropicGaussian { mean, .. } => {
            for _ in 0..n {
                for m in mean {
                    data.push(m + std_normal.sample(rng));
                }
            }
        }
        DistributionSpec::HighdimLowrankMixture { dim } => {
            let signs = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
            let std2 = 0.2f64.sqrt();
            for _ in 0..n {
                let s = signs[rng.gen_range(0..4)];
                data.push(1.4 * s[0] + std2 * std_normal.sample(rng));
                data.push(1.4 * s[1] + std2 * std_normal.sample(rng));
                data.extend(std::iter::repeat_n(0.0, dim - 2));
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, d], data))
}

/// Exact squared Wasserstein-2 distance (cost 0.5||x-y||^2) for the pairs
/// where it is known in closed form: identity-covariance Gaussians, where
/// it is half the squared distance between the means.
pub fn closed_form_w2(a: &DistributionSpec, b: &DistributionSpec) -> Option<f64> {
    match (a, b) {
        (
            DistributionSpec::IsotropicGaussian { dim: da, mean: ma },
            DistributionSpec::IsotropicGaussian { dim: db, mean: mb },
        ) if da == db => {
            let sq: f64 = ma.iter().zip(mb).map(|(x, y)| (x - y) * (x - y)).sum();
            Some(0.5 * sq)
        }
        _ => None,
    }
}

/// Delimited-text batch export: one sample per line, d columns, full
/// precision.
pub fn write_batch(w: &mut impl Write, batch: &Tensor<f64>) -> Result<()> {
    for i in 0..batch.rows() {
        let row: Vec<String> = batch.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join("\t"))?;
    }
    Ok(())
}
