//! Finite-size experiments: variance scans, derivative bounds, free-energy
//! variance bounds, the REM free-energy formula, overlap dichotomy and
//! limit-order probes.
//!
//! Every experiment returns [`ScanRow`]s. Rows that carry a bound also carry
//! a pass flag, set when `estimate <= bound + tolerance + 3 stderr`.

use crate::disorder::{quenched_map, DisorderStream, EstimatorResult, GaussHermite};
use crate::error::{Error, Result};
use crate::gibbs::{central_difference, default_step, harris_check, GibbsSpec, Observable};
use crate::models::{
    assemble, Family, ModelInstance, ModelSpec, PerturbationParams, Representation, ThermalPoint,
};
use crate::spin_algebra::{CMatrix, HermitianOperator};
use num_complex::Complex64;

/// Statistical slack, in standard errors, of every bound check.
pub const STDERR_SLACK: f64 = 3.0;

/// One line of experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub model: String,
    /// Sites per replica (matrix dimension for random instances).
    pub sites: usize,
    pub replicas: usize,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub observable: String,
    pub estimate: EstimatorResult,
    pub bound: Option<f64>,
    /// Absolute slack added to the bound before the pass test.
    pub tolerance: f64,
    pub pass: Option<bool>,
}

/// Coordinates shared by the rows of one parameter point.
#[derive(Debug, Clone)]
pub struct RowKey {
    pub model: String,
    pub sites: usize,
    pub replicas: usize,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl RowKey {
    pub fn new(family: Family, sites: usize, replicas: usize, beta: f64, lambda: f64) -> Self {
        RowKey {
            model: family.tag().to_string(),
            sites,
            replicas,
            beta,
            lambda,
            mu: 0.0,
            alpha: 0.0,
        }
    }

    pub fn with_field(mut self, mu: f64, alpha: f64) -> Self {
        self.mu = mu;
        self.alpha = alpha;
        self
    }

    pub fn row(&self, observable: &str, estimate: EstimatorResult) -> ScanRow {
        ScanRow {
            model: self.model.clone(),
            sites: self.sites,
            replicas: self.replicas,
            beta: self.beta,
            lambda: self.lambda,
            mu: self.mu,
            alpha: self.alpha,
            observable: observable.to_string(),
            estimate,
            bound: None,
            tolerance: 0.0,
            pass: None,
        }
    }

    pub fn checked(
        &self,
        observable: &str,
        estimate: EstimatorResult,
        bound: f64,
        tolerance: f64,
    ) -> ScanRow {
        let mut row = self.row(observable, estimate);
        row.bound = Some(bound);
        row.tolerance = tolerance;
        row.pass = Some(estimate.mean <= bound + tolerance + STDERR_SLACK * estimate.stderr);
        row
    }
}

impl ScanRow {
    /// `estimate / bound`, when a non-zero bound is present.
    pub fn ratio(&self) -> Option<f64> {
        match self.bound {
            Some(b) if b != 0.0 => Some(self.estimate.mean / b),
            _ => None,
        }
    }
}

fn check_samples(spec: &ModelSpec, samples: usize) -> Result<usize> {
    if spec.is_disordered() {
        if samples < 2 {
            return Err(Error::invalid(format!(
                "disordered models need at least 2 samples, got {samples}"
            )));
        }
        Ok(samples)
    } else {
        Ok(1)
    }
}

fn estimate_from(values: &[f64]) -> EstimatorResult {
    EstimatorResult::from_samples(values)
}

/// Thermal points of `h` for every disorder sample of one size.
pub fn thermal_samples(
    spec: &ModelSpec,
    size: usize,
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ThermalPoint>> {
    let count = check_samples(spec, samples)?;
    quenched_map(seed, count, |stream| {
        let model = spec.build(size, &stream)?;
        assemble(&model, PerturbationParams::plain(lambda))?.thermal(beta, lambda)
    })
}

/// Split of `V = E<h^2> - (E<h>)^2` into the thermal part
/// `E[<h^2> - <h>^2]` and the disorder part `E[<h>^2] - (E<h>)^2`, all with
/// 1/M normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    pub total: f64,
    pub thermal: f64,
    pub disorder: f64,
}

pub fn variance_decomposition(points: &[ThermalPoint]) -> VarianceDecomposition {
    let m = points.len() as f64;
    let mean_h = points.iter().map(|p| p.h_mean).sum::<f64>() / m;
    let mean_h2 = points.iter().map(|p| p.h_second).sum::<f64>() / m;
    let thermal = points.iter().map(|p| p.thermal_variance()).sum::<f64>() / m;
    let mean_sq = points.iter().map(|p| p.h_mean * p.h_mean).sum::<f64>() / m;
    VarianceDecomposition {
        total: mean_h2 - mean_h * mean_h,
        thermal,
        disorder: mean_sq - mean_h * mean_h,
    }
}

/// Leave-one-out standard error of a statistic of the samples.
fn jackknife<F>(points: &[ThermalPoint], stat: F) -> f64
where
    F: Fn(&[ThermalPoint]) -> f64,
{
    let m = points.len();
    if m < 2 {
        return 0.0;
    }
    let mut buf = Vec::with_capacity(m - 1);
    let leave_out: Vec<f64> = (0..m)
        .map(|i| {
            buf.clear();
            buf.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, p)| *p),
            );
            stat(&buf)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / m as f64;
    let ss: f64 = leave_out.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((m - 1) as f64 / m as f64 * ss).sqrt()
}

/// `V(N) = E<(h - E<h>)^2>` over the size ladder, with its thermal and
/// disorder parts and the first two moments of `h`.
pub fn variance_scan(
    spec: &ModelSpec,
    sizes: &[usize],
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        let points = thermal_samples(spec, size, beta, lambda, samples, seed)?;
        let key = RowKey::new(spec.family(), size, spec.replicas(), beta, lambda);
        let m = points.len();
        let dec = variance_decomposition(&points);
        let total_se = jackknife(&points, |p| variance_decomposition(p).total);
        let disorder_se = jackknife(&points, |p| variance_decomposition(p).disorder);
        let thermal_values: Vec<f64> = points.iter().map(|p| p.thermal_variance()).collect();
        let thermal_est = estimate_from(&thermal_values);
        rows.push(key.row(
            "variance_total",
            EstimatorResult::with_stderr(dec.total, total_se, m),
        ));
        rows.push(key.row(
            "variance_thermal",
            EstimatorResult {
                mean: dec.thermal,
                ..thermal_est
            },
        ));
        rows.push(key.row(
            "variance_disorder",
            EstimatorResult::with_stderr(dec.disorder, disorder_se, m),
        ));
        let h: Vec<f64> = points.iter().map(|p| p.h_mean).collect();
        let h2: Vec<f64> = points.iter().map(|p| p.h_second).collect();
        rows.push(key.row("h_mean", estimate_from(&h)));
        rows.push(key.row("h_second", estimate_from(&h2)));
    }
    Ok(rows)
}

/// Right-hand side `sqrt(k!) C_h |mu|^-k N^(k(1 - alpha))` of the
/// derivative bound.
pub fn lemma1_bound(order: usize, c_h: f64, mu: f64, alpha: f64, sites: usize) -> f64 {
    let k = order as f64;
    let factorial: f64 = (1..=order).map(|i| i as f64).product();
    factorial.sqrt() * c_h * mu.abs().powf(-k) * (sites as f64).powf(k * (1.0 - alpha))
}

/// Settings of a derivative-bound check.
#[derive(Debug, Clone, Copy)]
pub struct Lemma1Settings {
    pub order: usize,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub nodes: usize,
    pub step: Option<f64>,
}

/// `|E_g d^k<h>/d lambda^k|` against its bound for one frozen instance. The
/// derivative is a central difference in lambda at fixed `g`; `E_g` is
/// Gauss–Hermite quadrature. Passes when the ratio is at most `1 + 1e-3`.
pub fn lemma1_bound_check(model: &ModelInstance, s: &Lemma1Settings) -> Result<ScanRow> {
    if !(1..=2).contains(&s.order) {
        return Err(Error::invalid(format!(
            "derivative order must be 1 or 2, got {}",
            s.order
        )));
    }
    if s.mu == 0.0 {
        return Err(Error::invalid("the derivative bound needs mu != 0"));
    }
    let perturbed = assemble(
        model,
        PerturbationParams {
            lambda: s.lambda,
            mu: s.mu,
            alpha: s.alpha,
            g: 0.0,
        },
    )?;
    let rule = GaussHermite::new(s.nodes)?;
    let step = s.step.unwrap_or_else(|| default_step(s.order));
    let measured = rule.expectation(|g| {
        let at_g = perturbed.with_g(g);
        central_difference(|lam| at_g.h_mean(s.beta, lam), s.order, s.lambda, step)
    })?;
    let bound = lemma1_bound(s.order, model.c_h(), s.mu, s.alpha, model.sites());
    let key = RowKey::new(
        model.family(),
        model.sites(),
        model.replicas(),
        s.beta,
        s.lambda,
    )
    .with_field(s.mu, s.alpha);
    let name = format!("lemma1_derivative_k{}", s.order);
    Ok(key.checked(
        &name,
        EstimatorResult::exact(measured.abs()),
        bound,
        1e-3 * bound,
    ))
}

/// Analytic bound on `Var(psi_N)`: `beta^2 n^2 / N` for the REM and
/// `beta^2 |A| n^2 S^(2|A|) (sum_p K^p)^2 / N` for the EA chain. Zero for the
/// disorder-free chain.
pub fn psi_variance_bound(spec: &ModelSpec, sites: usize, beta: f64) -> f64 {
    let n = spec.replicas() as f64;
    let b2 = beta * beta;
    match spec {
        ModelSpec::Rem { .. } => b2 * n * n / sites as f64,
        ModelSpec::Ea {
            spin, k, base_set, ..
        } => {
            let a = *base_set as f64;
            let ksum: f64 = k.iter().sum();
            b2 * a * n * n * spin.powf(2.0 * a) * ksum * ksum / sites as f64
        }
        ModelSpec::Heisenberg { .. } => 0.0,
    }
}

/// Unbiased sample variance of `values` with the standard error of that
/// variance estimate (fourth-moment formula).
pub fn sample_variance_estimate(values: &[f64]) -> EstimatorResult {
    let m = values.len();
    if m < 2 {
        return EstimatorResult::exact(0.0);
    }
    let mf = m as f64;
    let mean = values.iter().sum::<f64>() / mf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mf;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / mf;
    let s2 = m2 * mf / (mf - 1.0);
    let var_s2 = if m > 3 {
        ((m4 - (mf - 3.0) / (mf - 1.0) * s2 * s2) / mf).max(0.0)
    } else {
        0.0
    };
    EstimatorResult::with_stderr(s2, var_s2.sqrt(), m)
}

/// Per-sample `psi_N` values.
pub fn psi_samples(
    spec: &ModelSpec,
    size: usize,
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let count = check_samples(spec, samples)?;
    quenched_map(seed, count, |stream| {
        let model = spec.build(size, &stream)?;
        assemble(&model, PerturbationParams::plain(lambda))?.psi(beta, lambda)
    })
}

/// Empirical `Var(psi_N)` against its analytic bound.
pub fn psi_variance_check(
    spec: &ModelSpec,
    size: usize,
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<ScanRow> {
    let psi = psi_samples(spec, size, beta, lambda, samples, seed)?;
    let estimate = sample_variance_estimate(&psi);
    let bound = psi_variance_bound(spec, size, beta);
    let key = RowKey::new(spec.family(), size, spec.replicas(), beta, lambda);
    Ok(key.checked("psi_variance", estimate, bound, 0.0))
}

/// `sqrt(2 log 2)`.
pub fn beta_critical() -> f64 {
    (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Single-replica REM limit `p_1(beta, 0)`.
pub fn rem_p1(beta: f64) -> f64 {
    let bc = beta_critical();
    if beta > bc {
        beta * bc
    } else {
        beta * beta / 2.0 + std::f64::consts::LN_2
    }
}

/// `p_n(beta, lambda) = max{n p_1(beta,0), p_1(2 beta,0) + beta lambda + (n-2) p_1(beta,0)}`.
pub fn guerra_formula(n: usize, beta: f64, lambda: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "replica count must be >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    let p1 = rem_p1(beta);
    Ok((nf * p1).max(rem_p1(2.0 * beta) + beta * lambda + (nf - 2.0) * p1))
}

/// Measured `p_{N,n}` against the analytic limit at one `(beta, lambda)`.
#[derive(Debug, Clone)]
pub struct GuerraReport {
    pub beta: f64,
    pub lambda: f64,
    pub replicas: usize,
    pub analytic: f64,
    pub sizes: Vec<usize>,
    pub measured: Vec<EstimatorResult>,
    /// `|p_{N,n} - p_n|` per size.
    pub gaps: Vec<f64>,
    /// Measured `dp_{N,n}/d lambda = beta E<h>` per size.
    pub slopes: Vec<EstimatorResult>,
}

impl GuerraReport {
    /// True when consecutive gaps do not increase by more than `sigmas`
    /// combined standard errors.
    pub fn gaps_decreasing(&self, sigmas: f64) -> bool {
        self.gaps
            .windows(2)
            .zip(self.measured.windows(2))
            .all(|(g, m)| {
                let slack = sigmas * (m[0].stderr.powi(2) + m[1].stderr.powi(2)).sqrt();
                g[1] <= g[0] + slack
            })
    }

    pub fn rows(&self) -> Vec<ScanRow> {
        let mut rows = Vec::new();
        for (i, &size) in self.sizes.iter().enumerate() {
            let key = RowKey::new(Family::Rem, size, self.replicas, self.beta, self.lambda);
            rows.push(key.row("p_Nn", self.measured[i]));
            rows.push(key.row("p_n_analytic", EstimatorResult::exact(self.analytic)));
            rows.push(key.row(
                "guerra_gap",
                EstimatorResult::with_stderr(
                    self.gaps[i],
                    self.measured[i].stderr,
                    self.measured[i].count,
                ),
            ));
            rows.push(key.row("dp_dlambda", self.slopes[i]));
        }
        rows
    }
}

pub fn guerra_compare(
    replicas: usize,
    betas: &[f64],
    lambdas: &[f64],
    sizes: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<GuerraReport>> {
    let spec = ModelSpec::Rem { replicas };
    let mut reports = Vec::new();
    for &beta in betas {
        for &lambda in lambdas {
            let analytic = guerra_formula(replicas, beta, lambda)?;
            let mut measured = Vec::new();
            let mut gaps = Vec::new();
            let mut slopes = Vec::new();
            for &size in sizes {
                let points = thermal_samples(&spec, size, beta, lambda, samples, seed)?;
                let psi: Vec<f64> = points.iter().map(|p| p.log_z / size as f64).collect();
                let slope: Vec<f64> = points.iter().map(|p| beta * p.h_mean).collect();
                let est = estimate_from(&psi);
                gaps.push((est.mean - analytic).abs());
                measured.push(est);
                slopes.push(estimate_from(&slope));
            }
            reports.push(GuerraReport {
                beta,
                lambda,
                replicas,
                analytic,
                sizes: sizes.to_vec(),
                measured,
                gaps,
                slopes,
            });
        }
    }
    Ok(reports)
}

/// `E<h>` and `E<h>(1 - E<h>)` for the two-replica REM across sizes and
/// lambdas.
pub fn overlap_dichotomy(
    sizes: &[usize],
    beta: f64,
    lambdas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    let spec = ModelSpec::Rem { replicas: 2 };
    let mut rows = Vec::new();
    for &size in sizes {
        for &lambda in lambdas {
            let points = thermal_samples(&spec, size, beta, lambda, samples, seed)?;
            let h: Vec<f64> = points.iter().map(|p| p.h_mean).collect();
            let est = estimate_from(&h);
            let key = RowKey::new(Family::Rem, size, 2, beta, lambda);
            let product = est.mean * (1.0 - est.mean);
            let se = (1.0 - 2.0 * est.mean).abs() * est.stderr;
            rows.push(key.row("overlap_mean", est));
            rows.push(key.row(
                "overlap_product",
                EstimatorResult::with_stderr(product, se, est.count),
            ));
        }
    }
    Ok(rows)
}

/// `E<h>`, `E<h^2>` and `V` over the `(N, lambda)` grid; descriptive only.
pub fn limit_order_probe(
    spec: &ModelSpec,
    sizes: &[usize],
    lambdas: &[f64],
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        for &lambda in lambdas {
            let points = thermal_samples(spec, size, beta, lambda, samples, seed)?;
            let key = RowKey::new(spec.family(), size, spec.replicas(), beta, lambda);
            let h: Vec<f64> = points.iter().map(|p| p.h_mean).collect();
            let h2: Vec<f64> = points.iter().map(|p| p.h_second).collect();
            let dec = variance_decomposition(&points);
            let se = jackknife(&points, |p| variance_decomposition(p).total);
            rows.push(key.row("h_mean", estimate_from(&h)));
            rows.push(key.row("h_second", estimate_from(&h2)));
            rows.push(key.row(
                "variance_total",
                EstimatorResult::with_stderr(dec.total, se, points.len()),
            ));
        }
    }
    Ok(rows)
}

/// Finite-size proxies of the three standing assumptions.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub rows: Vec<ScanRow>,
    pub sizes: Vec<usize>,
    pub p_values: Vec<EstimatorResult>,
    pub scaled_psi_variance: Vec<EstimatorResult>,
    pub commutator_norms: Vec<f64>,
}

impl AssumptionReport {
    /// `|p_{N_{k+1}} - p_{N_k}|` along the ladder.
    pub fn p_increments(&self) -> Vec<f64> {
        self.p_values
            .windows(2)
            .map(|w| (w[1].mean - w[0].mean).abs())
            .collect()
    }

    /// True when `||[h,[H,h]]||` does not grow along the ladder.
    pub fn commutator_nonincreasing(&self, tol: f64) -> bool {
        self.commutator_norms.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

pub fn assumption_suite(
    spec: &ModelSpec,
    sizes: &[usize],
    beta: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let mut rows = Vec::new();
    let mut p_values = Vec::new();
    let mut scaled = Vec::new();
    let mut norms = Vec::new();
    for &size in sizes {
        let key = RowKey::new(spec.family(), size, spec.replicas(), beta, lambda);
        let psi = psi_samples(spec, size, beta, lambda, samples, seed)?;
        let p = estimate_from(&psi);
        rows.push(key.row("p_N", p));
        p_values.push(p);

        let var = sample_variance_estimate(&psi);
        let n = size as f64;
        let scaled_var = EstimatorResult::with_stderr(var.mean * n, var.stderr * n, var.count);
        if spec.is_disordered() {
            let constant = psi_variance_bound(spec, size, beta) * n;
            rows.push(key.checked("psi_variance_times_N", scaled_var, constant, 0.0));
        } else {
            rows.push(key.row("psi_variance_times_N", scaled_var));
        }
        scaled.push(scaled_var);

        // the commutator does not depend on the coupling to h; sample 0
        let model = spec.build(size, &DisorderStream::new(seed, 0))?;
        let norm = model.double_commutator_norm()?;
        rows.push(key.row("double_commutator_norm", EstimatorResult::exact(norm)));
        norms.push(norm);
    }
    Ok(AssumptionReport {
        rows,
        sizes: sizes.to_vec(),
        p_values,
        scaled_psi_variance: scaled,
        commutator_norms: norms,
    })
}

/// Hermitian matrix `(X + X^dag)/2` with complex Gaussian entries.
pub fn random_hermitian(stream: &mut DisorderStream, dim: usize) -> HermitianOperator {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let x = CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(
            stream.next_gaussian() * scale,
            stream.next_gaussian() * scale,
        )
    });
    let h = (&x + x.adjoint()).map(|z| z * 0.5);
    HermitianOperator::new(h).expect("symmetrised matrix is Hermitian")
}

fn harris_rows(key: &RowKey, spec: &GibbsSpec, o: Observable<'_>) -> Result<Vec<ScanRow>> {
    let t = harris_check(spec, o)?;
    Ok(vec![
        key.checked("harris_lower", EstimatorResult::exact(t.lower), t.mid, 1e-9),
        key.checked(
            "harris_upper",
            EstimatorResult::exact(t.mid),
            t.lower + t.commutator_term,
            1e-9,
        ),
    ])
}

/// Harris sandwich on `count` random `(H, O)` pairs of dimension
/// `2..=max_dim`; instance `i` draws from disorder sample `i`.
pub fn harris_random(count: usize, max_dim: usize, beta: f64, seed: u64) -> Result<Vec<ScanRow>> {
    if max_dim < 2 {
        return Err(Error::invalid("max_dim must be at least 2"));
    }
    let per_instance = quenched_map(seed, count, |mut stream| {
        let dim = stream.next_index(2, max_dim);
        let h = random_hermitian(&mut stream, dim);
        let o = random_hermitian(&mut stream, dim);
        let spec = GibbsSpec::quantum(beta, h)?;
        let key = RowKey {
            model: "RANDOM".into(),
            sites: dim,
            replicas: 1,
            beta,
            lambda: 0.0,
            mu: 0.0,
            alpha: 0.0,
        };
        harris_rows(&key, &spec, Observable::Operator(&o))
    })?;
    Ok(per_instance.into_iter().flatten().collect())
}

/// Harris sandwich for `O = h` in a model's perturbed Gibbs state.
pub fn harris_model(model: &ModelInstance, beta: f64, lambda: f64) -> Result<Vec<ScanRow>> {
    let perturbed = assemble(model, PerturbationParams::plain(lambda))?;
    let spec = perturbed.gibbs(beta, lambda)?;
    let key = RowKey::new(
        model.family(),
        model.sites(),
        model.replicas(),
        beta,
        lambda,
    );
    match model.representation() {
        Representation::Quantum { h, h_diagonal, .. } => {
            let o = match h_diagonal {
                Some(d) => Observable::Diagonal(d),
                None => Observable::Operator(h),
            };
            harris_rows(&key, &spec, o)
        }
        Representation::Rem(t) => {
            let overlap = t
                .to_classical()?
                .1
                .ok_or_else(|| Error::invalid("single-replica REM has no overlap"))?;
            harris_rows(&key, &spec, Observable::Diagonal(&overlap))
        }
    }
}

/// `dpsi/dlambda` by central difference next to `beta <h>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub fd_derivative: f64,
    pub beta_h_mean: f64,
    /// `psi(l + d) - 2 psi(l) + psi(l - d)`.
    pub second_difference: f64,
}

pub fn thermodynamic_identity(
    model: &ModelInstance,
    beta: f64,
    lambda: f64,
    step: f64,
) -> Result<IdentityCheck> {
    let p = assemble(model, PerturbationParams::plain(lambda))?;
    let psi = |lam: f64| p.psi(beta, lam);
    let fd_derivative = central_difference(psi, 1, lambda, step)?;
    let beta_h_mean = beta * p.h_mean(beta, lambda)?;
    let second_difference = psi(lambda + step)? - 2.0 * psi(lambda)? + psi(lambda - step)?;
    Ok(IdentityCheck {
        fd_derivative,
        beta_h_mean,
        second_difference,
    })
}

/// Rows for the identity `dpsi/dlambda = beta <h>` (tolerance 1e-6) and
/// convexity of `psi` in lambda (second difference >= -1e-8).
pub fn thermodynamic_rows(
    model: &ModelInstance,
    beta: f64,
    lambdas: &[f64],
    step: f64,
) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let c = thermodynamic_identity(model, beta, lambda, step)?;
        let key = RowKey::new(
            model.family(),
            model.sites(),
            model.replicas(),
            beta,
            lambda,
        );
        rows.push(key.checked(
            "identity_residual",
            EstimatorResult::exact((c.fd_derivative - c.beta_h_mean).abs()),
            1e-6,
            0.0,
        ));
        rows.push(key.checked(
            "negative_second_difference",
            EstimatorResult::exact(-c.second_difference),
            1e-8,
            0.0,
        ));
    }
    Ok(rows)
}

/// Spectral `beta^2 N^2 (h; h)` and the finite-difference second derivative
/// of `N psi_N` in lambda.
pub fn derivative_equivalence(
    model: &ModelInstance,
    beta: f64,
    lambda: f64,
    step: f64,
) -> Result<(f64, f64)> {
    let p = assemble(model, PerturbationParams::plain(lambda))?;
    let n = model.sites() as f64;
    let spectral = beta * beta * n * n * p.h_truncated_duhamel(beta, lambda)?;
    let fd = crate::gibbs::logz_derivative(|lam| p.log_partition(beta, lam), 2, lambda, step)?;
    Ok((spectral, fd))
}
