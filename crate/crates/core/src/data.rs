//! Target functions, dataset generation, normalization, and parameter
//! initialization.
//!
//! Seed policy: a master seed derives per-component seeds through a
//! splitmix64 finisher over `(master, stream id)`, so dataset generation and
//! parameter initialization never share an RNG stream.

use crate::error::{Error, Result};
use crate::net::{ArchDescriptor, Dataset, NetworkParams};
use crate::pop::ErfTeacher;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Fixed constants of the modified rosenbrock target.
pub const ROSENBROCK_A: f64 = 1.0;
pub const ROSENBROCK_B: f64 = 3.0;
pub const ROSENBROCK_C: f64 = 1.0;
pub const ROSENBROCK_D: f64 = 0.1;

/// splitmix64 finisher.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Named RNG streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Dataset,
    Init,
    Optimizer,
    Perturbation,
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            SeedStream::Dataset => 0x11,
            SeedStream::Init => 0x22,
            SeedStream::Optimizer => 0x33,
            SeedStream::Perturbation => 0x44,
        }
    }
}

/// Derives a per-stream seed from a master seed and an index.
pub fn derive_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream.tag().wrapping_mul(0xa076_1d64_78bd_642f)).wrapping_add(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetKind {
    RosenbrockMod,
    GpMatern32 { scale: f64 },
    ErfPairTeacher,
}

/// Target-function and sampling specification for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target: TargetKind,
    pub dim: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// 2-D specs sample a regular grid on [-sqrt3, sqrt3]^2; higher
    /// dimensions draw i.i.d. standard normal inputs.
    pub grid_2d: bool,
}

impl TargetSpec {
    pub fn rosenbrock_2d_grid(n_per_axis: usize, seed: u64) -> TargetSpec {
        TargetSpec {
            target: TargetKind::RosenbrockMod,
            dim: 2,
            n_samples: n_per_axis * n_per_axis,
            seed,
            grid_2d: true,
        }
    }

    pub fn gp_2d_grid(scale: f64, n_per_axis: usize, seed: u64) -> TargetSpec {
        TargetSpec {
            target: TargetKind::GpMatern32 { scale },
            dim: 2,
            n_samples: n_per_axis * n_per_axis,
            seed,
            grid_2d: true,
        }
    }
}

/// Modified d-dimensional rosenbrock value before normalization:
/// `log10[ sum_{i=2}^d (a - x_{i-1})^2 + b (x_i - x_{i-1}^2 + c)^2 + d ]`
/// with the offset `d = 0.1` added once, keeping the argument >= 0.1.
pub fn rosenbrock_target(x: &DVector<f64>) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument("rosenbrock needs dim >= 2".into()));
    }
    let mut acc = 0.0;
    for i in 1..x.len() {
        let u = ROSENBROCK_A - x[i - 1];
        let v = x[i] - x[i - 1] * x[i - 1] + ROSENBROCK_C;
        acc += u * u + ROSENBROCK_B * v * v;
    }
    Ok((acc + ROSENBROCK_D).log10())
}

/// Normalizes to empirical mean zero and standard deviation one
/// (population convention).
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Regular 2-D grid on [-sqrt3, sqrt3]^2 with `n_per_axis` points per axis
/// (inclusive endpoints), row-major over (x1, x2).
pub fn grid_inputs(n_per_axis: usize) -> Result<DMatrix<f64>> {
    if n_per_axis < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    let s3 = 3.0f64.sqrt();
    let axis: Vec<f64> = (0..n_per_axis)
        .map(|i| -s3 + 2.0 * s3 * i as f64 / (n_per_axis - 1) as f64)
        .collect();
    let n = n_per_axis * n_per_axis;
    let mut inputs = DMatrix::zeros(n, 2);
    for (i, &x1) in axis.iter().enumerate() {
        for (j, &x2) in axis.iter().enumerate() {
            let row = i * n_per_axis + j;
            inputs[(row, 0)] = x1;
            inputs[(row, 1)] = x2;
        }
    }
    Ok(inputs)
}

/// i.i.d. standard normal inputs.
pub fn normal_inputs(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

/// Matern-3/2 kernel `(1 + sqrt3 s d) exp(-sqrt3 s d)` with Euclidean d.
pub fn matern32_kernel(x: &DVector<f64>, y: &DVector<f64>, scale: f64) -> f64 {
    let d = (x - y).norm();
    let t = 3.0f64.sqrt() * scale * d;
    (1.0 + t) * (-t).exp()
}

/// One zscored sample from the GP prior `N(0, K)` with Matern-3/2 kernel.
/// Cholesky jitter escalates by decades from 1e-10 to 1e-6.
pub fn sample_gp_target(inputs: &DMatrix<f64>, scale: f64, seed: u64) -> Result<DVector<f64>> {
    let n = inputs.nrows();
    if n > 4096 {
        return Err(Error::InvalidArgument(format!(
            "GP sampling capped at 4096 points, got {n}"
        )));
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| inputs.row(i).transpose()).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = matern32_kernel(&rows[i], &rows[j], scale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mut jitter = 1e-10;
    let chol = loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        match kj.cholesky() {
            Some(c) => break c,
            None => {
                jitter *= 10.0;
                if jitter > 1e-6 {
                    return Err(Error::CholeskyFailed { max_jitter: 1e-6 });
                }
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let raw = chol.l() * z;
    let values: Vec<f64> = raw.iter().copied().collect();
    Ok(DVector::from_vec(zscore(&values)?))
}

/// Glorot normal initialization: weights `N(0, 2/(fan_in + fan_out))`,
/// biases zero.
pub fn glorot_normal_init(arch: &ArchDescriptor, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = arch.zeros();
    for layer in &mut net.layers {
        let fan_out = layer.weights.nrows();
        let fan_in = layer.weights.ncols();
        let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
        for i in 0..fan_out {
            for j in 0..fan_in {
                let z: f64 = rng.sample(StandardNormal);
                layer.weights[(i, j)] = sd * z;
            }
        }
    }
    net
}

/// Builds the dataset of a target specification.
pub fn build_dataset(spec: &TargetSpec) -> Result<Dataset> {
    let data_seed = derive_seed(spec.seed, SeedStream::Dataset, 0);
    let inputs = if spec.grid_2d {
        if spec.dim != 2 {
            return Err(Error::InvalidArgument("grid sampling requires dim = 2".into()));
        }
        let n_axis = (spec.n_samples as f64).sqrt().round() as usize;
        if n_axis * n_axis != spec.n_samples {
            return Err(Error::InvalidArgument(
                "grid sampling requires a square sample count".into(),
            ));
        }
        grid_inputs(n_axis)?
    } else {
        normal_inputs(spec.n_samples, spec.dim, data_seed)
    };

    let targets = match &spec.target {
        TargetKind::RosenbrockMod => {
            let mut raw = Vec::with_capacity(inputs.nrows());
            for i in 0..inputs.nrows() {
                raw.push(rosenbrock_target(&inputs.row(i).transpose())?);
            }
            DVector::from_vec(zscore(&raw)?)
        }
        TargetKind::GpMatern32 { scale } => {
            sample_gp_target(&inputs, *scale, derive_seed(spec.seed, SeedStream::Dataset, 1))?
        }
        TargetKind::ErfPairTeacher => {
            let teacher = ErfTeacher::symmetric_pair_toy();
            if spec.dim != 1 {
                return Err(Error::InvalidArgument("erf pair teacher is one-dimensional".into()));
            }
            DVector::from_fn(inputs.nrows(), |i, _| {
                teacher.eval(&inputs.row(i).transpose())
            })
        }
    };
    Dataset::new(inputs, targets)
}

/// CSV export (`x1,...,xd,target`) with a sidecar JSON descriptor.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    let d = data.dim();
    let header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    writeln!(w, "{},target", header.join(","))?;
    for i in 0..data.len() {
        let row: Vec<String> = (0..d).map(|j| format!("{}", data.inputs[(i, j)])).collect();
        writeln!(w, "{},{}", row.join(","), data.targets[i])?;
    }
    Ok(())
}

pub fn dataset_descriptor_json(spec: &TargetSpec) -> Result<String> {
    Ok(serde_json::to_string_pretty(spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;

    #[test]
    fn rosenbrock_worked_examples() {
        let got = rosenbrock_target(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((got + 1.0).abs() < 1e-15);
        let got = rosenbrock_target(&DVector::from_vec(vec![0.0, -1.0])).unwrap();
        assert!((got - 1.1f64.log10()).abs() < 1e-15);
        assert!((got - 0.04139).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_always_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = rng.gen_range(2..6);
            let x = DVector::from_fn(d, |_, _| rng.gen_range(-50.0..50.0));
            let v = rosenbrock_target(&x).unwrap();
            assert!(v.is_finite());
            assert!(v >= ROSENBROCK_D.log10() - 1e-12);
        }
    }

    #[test]
    fn zscore_normalizes_and_is_idempotent() {
        let v = vec![3.0, -1.0, 4.5, 0.25, 9.0];
        let z = zscore(&v).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
        let zz = zscore(&z).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(zscore(&[2.0, 2.0, 2.0]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn grid_corners_and_count() {
        let g = grid_inputs(2).unwrap();
        let s3 = 3.0f64.sqrt();
        assert_eq!(g.nrows(), 4);
        assert_eq!(g[(0, 0)], -s3);
        assert_eq!(g[(3, 0)], s3);
        assert_eq!(g[(3, 1)], s3);

        let g = grid_inputs(40).unwrap();
        assert_eq!(g.nrows(), 1600);
        // per-axis variance approaches 1 (uniform on [-sqrt3, sqrt3])
        let col: Vec<f64> = (0..g.nrows()).map(|i| g[(i, 0)]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
        assert!((var - 1.0).abs() < 0.06, "variance {var}");
    }

    #[test]
    fn matern_values() {
        let x = DVector::from_vec(vec![0.0]);
        let y = DVector::from_vec(vec![1.0]);
        assert_eq!(matern32_kernel(&x, &x, 1.7), 1.0);
        let got = matern32_kernel(&x, &y, 1.0);
        let s3 = 3.0f64.sqrt();
        let expect = (1.0 + s3) * (-s3).exp();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.4834).abs() < 1e-4);
        // monotone decreasing in distance
        let mut prev = 1.0;
        for k in 1..20 {
            let y = DVector::from_vec(vec![0.2 * k as f64]);
            let v = matern32_kernel(&x, &y, 0.8);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn gp_sampling_deterministic_and_normalized() {
        let inputs = grid_inputs(5).unwrap();
        let a = sample_gp_target(&inputs, 0.5, 99).unwrap();
        let b = sample_gp_target(&inputs, 0.5, 99).unwrap();
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn gp_large_scale_decorrelates_neighbors() {
        // unit-spaced inputs, s = 10: near-white samples
        let n = 64;
        let inputs = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = sample_gp_target(&inputs, 10.0, 7).unwrap();
        let mut corr = 0.0;
        for i in 0..n - 1 {
            corr += y[i] * y[i + 1];
        }
        corr /= (n - 1) as f64;
        assert!(corr.abs() < 0.2, "lag-1 correlation {corr}");
    }

    #[test]
    fn gp_kernel_matrix_is_psd() {
        let inputs = normal_inputs(24, 2, 3);
        let rows: Vec<DVector<f64>> = (0..24).map(|i| inputs.row(i).transpose()).collect();
        let mut k = DMatrix::zeros(24, 24);
        for i in 0..24 {
            for j in 0..24 {
                k[(i, j)] = matern32_kernel(&rows[i], &rows[j], 0.5);
            }
        }
        let eig = crate::eigen::symmetric_eigen(&k).unwrap();
        assert!(eig.values[0] >= -1e-8, "min eigenvalue {}", eig.values[0]);
    }

    #[test]
    fn gp_empirical_covariance_matches_kernel() {
        let inputs = DMatrix::from_fn(6, 1, |i, _| 0.7 * i as f64);
        let rows: Vec<DVector<f64>> = (0..6).map(|i| inputs.row(i).transpose()).collect();
        let scale = 0.5;
        // raw (un-zscored) draws: reimplement the sampling core for the oracle
        let n = 6;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = matern32_kernel(&rows[i], &rows[j], scale);
            }
        }
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += 1e-10;
        }
        let chol = kj.cholesky().unwrap();
        let draws = 3000;
        let mut cov = DMatrix::zeros(n, n);
        for s in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let y = chol.l() * z;
            for i in 0..n {
                for j in 0..n {
                    cov[(i, j)] += y[i] * y[j];
                }
            }
        }
        cov /= draws as f64;
        // entrywise within 5 standard errors; se ~ sqrt((1 + k^2)/draws)
        for i in 0..n {
            for j in 0..n {
                let se = ((1.0 + k[(i, j)] * k[(i, j)]) / draws as f64).sqrt();
                assert!(
                    (cov[(i, j)] - k[(i, j)]).abs() < 5.0 * se,
                    "({i},{j}): {} vs {}",
                    cov[(i, j)],
                    k[(i, j)]
                );
            }
        }
    }

    #[test]
    fn glorot_variance_and_determinism() {
        let arch = ArchDescriptor::new(vec![4, 4, 1], ActivationKind::Softplus, true);
        // accumulate first-layer weights over many seeds
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut count = 0.0;
        for seed in 0..6250 {
            let net = glorot_normal_init(&arch, seed);
            for v in net.layers[0].weights.iter() {
                acc += v;
                acc2 += v * v;
                count += 1.0;
            }
        }
        let mean = acc / count;
        let var = acc2 / count - mean * mean;
        assert!((var - 0.25).abs() < 0.01, "variance {var} over {count} draws");
        // biases zero
        let net = glorot_normal_init(&arch, 0);
        assert!(net.layers[0].bias.as_ref().unwrap().amax() == 0.0);
        // determinism
        assert_eq!(glorot_normal_init(&arch, 42), glorot_normal_init(&arch, 42));
    }

    #[test]
    fn derived_streams_do_not_collide() {
        let a = derive_seed(7, SeedStream::Dataset, 0);
        let b = derive_seed(7, SeedStream::Init, 0);
        assert_ne!(a, b);
        // correlation check between two streams' normal draws
        let mut ra = ChaCha8Rng::seed_from_u64(a);
        let mut rb = ChaCha8Rng::seed_from_u64(b);
        let n = 10_000;
        let mut dot = 0.0;
        for _ in 0..n {
            let x: f64 = ra.sample(StandardNormal);
            let y: f64 = rb.sample(StandardNormal);
            dot += x * y;
        }
        assert!((dot / n as f64).abs() < 0.05);
    }

    #[test]
    fn build_dataset_rosenbrock_grid() {
        let spec = TargetSpec::rosenbrock_2d_grid(10, 5);
        let data = build_dataset(&spec).unwrap();
        assert_eq!(data.len(), 100);
        assert_eq!(data.dim(), 2);
        let mean = data.targets.iter().sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn dataset_csv_roundtrip_shape() {
        let spec = TargetSpec::rosenbrock_2d_grid(4, 5);
        let data = build_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "x1,x2,target");
    }
}
