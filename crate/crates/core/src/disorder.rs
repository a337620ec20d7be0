//! Reproducible Gaussian disorder, quenched averages and Gauss–Hermite
//! quadrature over the auxiliary Gaussian field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default number of disorder samples per quenched average.
pub const DEFAULT_SAMPLES: usize = 200;
/// Default Gauss–Hermite node count.
pub const DEFAULT_NODES: usize = 64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key of one disorder sample, derived from the master seed and the sample
/// index only.
pub fn sample_key(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

/// Stream of i.i.d. standard Gaussians for one disorder sample.
#[derive(Debug, Clone)]
pub struct DisorderStream {
    master: u64,
    index: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl DisorderStream {
    pub fn new(master: u64, index: u64) -> Self {
        DisorderStream {
            master,
            index,
            draws: 0,
            rng: ChaCha8Rng::seed_from_u64(sample_key(master, index)),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master
    }

    pub fn sample_index(&self) -> u64 {
        self.index
    }

    /// Number of Gaussians drawn so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    pub fn next_gaussian(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    pub fn next_uniform(&mut self, low: f64, high: f64) -> f64 {
        self.rng.random_range(low..high)
    }

    pub fn next_index(&mut self, low: usize, high_inclusive: usize) -> usize {
        self.rng.random_range(low..=high_inclusive)
    }
}

/// `count` standard normal variates from a copy of `stream`.
pub fn gaussian_draws(stream: &DisorderStream, count: usize) -> Vec<f64> {
    let mut s = stream.clone();
    (0..count).map(|_| s.next_gaussian()).collect()
}

/// Sample statistics of a quenched average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorResult {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub stderr: f64,
    pub count: usize,
}

impl EstimatorResult {
    /// Mean and unbiased variance of `values`, summed in slice order.
    pub fn from_samples(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return EstimatorResult {
                mean: f64::NAN,
                variance: f64::NAN,
                stderr: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        if count == 1 {
            return EstimatorResult::exact(mean);
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let variance = ss / (count - 1) as f64;
        EstimatorResult {
            mean,
            variance,
            stderr: (variance / count as f64).sqrt(),
            count,
        }
    }

    /// A deterministic value (no disorder): zero variance, count 1.
    pub fn exact(value: f64) -> Self {
        EstimatorResult {
            mean: value,
            variance: 0.0,
            stderr: 0.0,
            count: 1,
        }
    }

    /// An estimate with an externally computed standard error; the variance
    /// field is set so that `stderr = sqrt(variance / count)`.
    pub fn with_stderr(mean: f64, stderr: f64, count: usize) -> Self {
        EstimatorResult {
            mean,
            variance: stderr * stderr * count as f64,
            stderr,
            count,
        }
    }
}

/// Evaluates `observable` on disorder samples `0..samples` in parallel and
/// returns the per-sample values in ascending index order.
pub fn quenched_values<F>(master: u64, samples: usize, observable: F) -> Result<Vec<f64>>
where
    F: Fn(DisorderStream) -> Result<f64> + Sync,
{
    quenched_map(master, samples, observable)
}

/// Like [`quenched_values`] for any per-sample record.
pub fn quenched_map<T, F>(master: u64, samples: usize, observable: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(DisorderStream) -> Result<T> + Sync,
{
    (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            observable(DisorderStream::new(master, i)).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Same as [`quenched_values`] on the calling thread.
pub fn quenched_values_serial<F>(master: u64, samples: usize, observable: F) -> Result<Vec<f64>>
where
    F: Fn(DisorderStream) -> Result<f64>,
{
    (0..samples as u64)
        .map(|i| {
            observable(DisorderStream::new(master, i)).map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::invalid(format!(
            "quenched average needs at least 2 samples, got {samples}"
        )));
    }
    Ok(())
}

/// Quenched average over `samples` independent disorder realisations. The
/// reduction runs in ascending sample order, so the result does not depend
/// on the thread count.
pub fn quenched_average<F>(master: u64, samples: usize, observable: F) -> Result<EstimatorResult>
where
    F: Fn(DisorderStream) -> Result<f64> + Sync,
{
    check_samples(samples)?;
    Ok(EstimatorResult::from_samples(&quenched_values(
        master, samples, observable,
    )?))
}

pub fn quenched_average_serial<F>(
    master: u64,
    samples: usize,
    observable: F,
) -> Result<EstimatorResult>
where
    F: Fn(DisorderStream) -> Result<f64>,
{
    check_samples(samples)?;
    Ok(EstimatorResult::from_samples(&quenched_values_serial(
        master, samples, observable,
    )?))
}

/// Nodes and weights for `E[f(g)]`, `g ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Physicists' Gauss–Hermite rule (Newton iteration on the normalised
    /// recurrence), rescaled to the standard normal measure.
    pub fn new(count: usize) -> Result<Self> {
        if !(8..=128).contains(&count) {
            return Err(Error::invalid(format!(
                "quadrature node count must be in [8, 128], got {count}"
            )));
        }
        let n = count;
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => {
                    (2.0 * n as f64 + 1.0).sqrt()
                        - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0)
                }
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::numerical("Gauss-Hermite root iteration failed"));
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / sqrt_pi).collect();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i f(x_i)`, failing on any non-finite integrand value.
    pub fn expectation<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x)?;
            if !v.is_finite() {
                return Err(Error::numerical(format!("integrand not finite at g = {x}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// `E[f(g)]` for standard normal `g` with `nodes` Gauss–Hermite points.
pub fn gauss_hermite_expectation<F>(f: F, nodes: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    GaussHermite::new(nodes)?.expectation(f)
}

/// `|E[g F(g)] - E[F'(g)]|` with `F'` by central difference.
pub fn ibp_residual<F>(f: F, nodes: usize, diff_step: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let rule = GaussHermite::new(nodes)?;
    let lhs = rule.expectation(|g| Ok(g * f(g)?))?;
    let rhs = rule.expectation(|g| crate::gibbs::central_difference(&f, 1, g, diff_step))?;
    Ok((lhs - rhs).abs())
}
