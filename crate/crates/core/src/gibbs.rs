//! Spectral core: eigendecomposition, log-partition function, Gibbs
//! expectations and Duhamel products.
//!
//! All weights are evaluated after a global shift by the ground-state energy,
//! so `w_m = exp(-beta (E_m - E_min)) <= 1` and `log Z = -beta E_min + log sum w`.
//! Classical (commuting) models skip matrices and work directly on energy
//! tables indexed by configuration.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spin_algebra::{commutator, CMatrix, HermitianOperator};

/// Imaginary parts above this are treated as a numerical failure.
const IMAG_RESIDUE_TOL: f64 = 1e-9;
/// Relative degeneracy tolerance of the Duhamel kernel.
const DEGENERACY_REL_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with the matching eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(E) U^dag`.
    pub fn reconstruct(&self) -> CMatrix {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, &e) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(e);
        }
        scaled * u.adjoint()
    }

    /// `max |U^dag U - id|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        let g = self.eigenvectors.adjoint() * &self.eigenvectors;
        let defect = g - CMatrix::identity(n, n);
        defect.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
    }

    /// `U^dag A U`.
    pub fn rotate(&self, a: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * (a * &self.eigenvectors)
    }

    /// `U^dag diag(a) U`.
    pub fn rotate_diagonal(&self, a: &[f64]) -> CMatrix {
        let u = &self.eigenvectors;
        let mut au = u.clone();
        for (i, &v) in a.iter().enumerate() {
            au.row_mut(i).scale_mut(v);
        }
        u.adjoint() * au
    }
}

/// Full eigensystem of a Hermitian operator. Real-symmetric input takes the
/// real solver.
pub fn decompose(h: &HermitianOperator) -> Result<SpectralDecomposition> {
    let n = h.dim();
    let max_iter = 1_000_000;
    let (values, vectors): (Vec<f64>, CMatrix) = if h.is_real() {
        let real = h.matrix().map(|z| z.re);
        let eig = SymmetricEigen::try_new(real, f64::EPSILON, max_iter)
            .ok_or_else(|| Error::numerical("real symmetric eigensolver did not converge"))?;
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|v| Complex64::new(v, 0.0)),
        )
    } else {
        let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, max_iter)
            .ok_or_else(|| Error::numerical("Hermitian eigensolver did not converge"))?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite eigenvalue"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let eigenvalues = order.iter().map(|&k| values[k]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Energies of a commuting model, one per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalTable {
    energies: Vec<f64>,
}

impl ClassicalTable {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::invalid("empty energy table"));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("energy table has non-finite entries"));
        }
        Ok(ClassicalTable { energies })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

/// An observable handed to the engine: a dense operator, or a real vector
/// that is either a classical table or the diagonal of an operator in the
/// computational basis.
#[derive(Debug, Clone, Copy)]
pub enum Observable<'a> {
    Operator(&'a HermitianOperator),
    Diagonal(&'a [f64]),
}

impl Observable<'_> {
    fn dim(&self) -> usize {
        match self {
            Observable::Operator(op) => op.dim(),
            Observable::Diagonal(d) => d.len(),
        }
    }
}

#[derive(Debug)]
enum SpecKind {
    Quantum {
        hamiltonian: HermitianOperator,
        spectrum: OnceLock<SpectralDecomposition>,
    },
    Classical(ClassicalTable),
}

/// A Gibbs state `exp(-beta H) / Z` with a write-once spectral cache.
#[derive(Debug)]
pub struct GibbsSpec {
    beta: f64,
    kind: SpecKind,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Shifted Boltzmann weights.
struct Weights {
    energies: Vec<f64>,
    weights: Vec<f64>,
    sum: f64,
    ground: f64,
}

impl Weights {
    fn new(beta: f64, energies: &[f64]) -> Self {
        let ground = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = energies
            .iter()
            .map(|&e| (-beta * (e - ground)).exp())
            .collect();
        let sum = weights.iter().sum();
        Weights {
            energies: energies.to_vec(),
            weights,
            sum,
            ground,
        }
    }
}

impl GibbsSpec {
    pub fn quantum(beta: f64, hamiltonian: HermitianOperator) -> Result<Self> {
        check_beta(beta)?;
        Ok(GibbsSpec {
            beta,
            kind: SpecKind::Quantum {
                hamiltonian,
                spectrum: OnceLock::new(),
            },
        })
    }

    pub fn classical(beta: f64, table: ClassicalTable) -> Result<Self> {
        check_beta(beta)?;
        Ok(GibbsSpec {
            beta,
            kind: SpecKind::Classical(table),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SpecKind::Quantum { hamiltonian, .. } => hamiltonian.dim(),
            SpecKind::Classical(t) => t.len(),
        }
    }

    pub fn is_classical(&self) -> bool {
        matches!(self.kind, SpecKind::Classical(_))
    }

    pub fn hamiltonian(&self) -> Option<&HermitianOperator> {
        match &self.kind {
            SpecKind::Quantum { hamiltonian, .. } => Some(hamiltonian),
            SpecKind::Classical(_) => None,
        }
    }

    /// Eigensystem of a quantum spec, computed on first use.
    pub fn spectrum(&self) -> Result<&SpectralDecomposition> {
        match &self.kind {
            SpecKind::Quantum {
                hamiltonian,
                spectrum,
            } => {
                if let Some(s) = spectrum.get() {
                    return Ok(s);
                }
                let computed = decompose(hamiltonian)?;
                Ok(spectrum.get_or_init(|| computed))
            }
            SpecKind::Classical(_) => Err(Error::invalid(
                "classical spec has no spectral decomposition",
            )),
        }
    }

    fn weights(&self) -> Result<Weights> {
        Ok(match &self.kind {
            SpecKind::Quantum { .. } => Weights::new(self.beta, self.spectrum()?.eigenvalues()),
            SpecKind::Classical(t) => Weights::new(self.beta, t.energies()),
        })
    }

    fn check_observable(&self, a: &Observable<'_>) -> Result<()> {
        if a.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "observable dimension {} does not match state dimension {}",
                a.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Observable as a table when the spec is classical.
    fn classical_values<'a>(&self, a: &'a Observable<'a>) -> Result<std::borrow::Cow<'a, [f64]>> {
        match a {
            Observable::Diagonal(d) => Ok(std::borrow::Cow::Borrowed(*d)),
            Observable::Operator(op) => op
                .real_diagonal()
                .map(std::borrow::Cow::Owned)
                .ok_or_else(|| Error::invalid("classical state needs a diagonal observable")),
        }
    }

    fn rotated(&self, a: &Observable<'_>) -> Result<CMatrix> {
        let s = self.spectrum()?;
        Ok(match a {
            Observable::Operator(op) => s.rotate(op.matrix()),
            Observable::Diagonal(d) => s.rotate_diagonal(d),
        })
    }
}

/// `log Tr exp(-beta H)`.
pub fn log_partition(spec: &GibbsSpec) -> Result<f64> {
    let w = spec.weights()?;
    Ok(-spec.beta * w.ground + w.sum.ln())
}

fn real_part_checked(z: Complex64, what: &str) -> Result<f64> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::numerical(format!("{what} is not finite")));
    }
    if z.im.abs() > IMAG_RESIDUE_TOL * z.re.abs().max(1.0) {
        return Err(Error::numerical(format!(
            "{what} has imaginary residue {:e}",
            z.im
        )));
    }
    Ok(z.re)
}

/// `Tr(A exp(-beta H)) / Z`.
pub fn gibbs_expectation(spec: &GibbsSpec, a: Observable<'_>) -> Result<f64> {
    spec.check_observable(&a)?;
    let w = spec.weights()?;
    match &spec.kind {
        SpecKind::Classical(_) => {
            let values = spec.classical_values(&a)?;
            let total: f64 = values.iter().zip(&w.weights).map(|(x, p)| x * p).sum();
            Ok(total / w.sum)
        }
        SpecKind::Quantum { .. } => {
            let s = spec.spectrum()?;
            let u = s.eigenvectors();
            let total = match a {
                Observable::Diagonal(d) => {
                    let mut acc = 0.0;
                    for (m, &wm) in w.weights.iter().enumerate() {
                        let col = u.column(m);
                        let diag: f64 = col.iter().zip(d).map(|(z, v)| z.norm_sqr() * v).sum();
                        acc += wm * diag;
                    }
                    Complex64::new(acc, 0.0)
                }
                Observable::Operator(op) => {
                    let au = op.matrix() * u;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (m, &wm) in w.weights.iter().enumerate() {
                        acc += u.column(m).dotc(&au.column(m)) * wm;
                    }
                    acc
                }
            };
            real_part_checked(total / w.sum, "Gibbs expectation")
        }
    }
}

/// Expectation of a raw (not validated) matrix in a quantum state.
fn matrix_expectation(spec: &GibbsSpec, a: &CMatrix) -> Result<f64> {
    let s = spec.spectrum()?;
    let w = spec.weights()?;
    let u = s.eigenvectors();
    let au = a * u;
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, &wm) in w.weights.iter().enumerate() {
        acc += u.column(m).dotc(&au.column(m)) * wm;
    }
    real_part_checked(acc / w.sum, "Gibbs expectation")
}

/// Kernel matrix `K_{mn}` of the Duhamel product on shifted weights,
/// `K = (w_m - w_n) / (beta (E_n - E_m))` with the analytic limit on
/// (near-)degenerate pairs.
fn duhamel_kernel(beta: f64, w: &Weights) -> DMatrix<f64> {
    let n = w.energies.len();
    let spread = w
        .energies
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e - w.ground));
    let tau = DEGENERACY_REL_TOL * spread.max(1.0);
    DMatrix::from_fn(n, n, |m, k| {
        let (em, ek) = (w.energies[m], w.energies[k]);
        let gap = (em - ek).abs();
        // weight of the lower level of the pair
        let low = w.weights[m].max(w.weights[k]);
        if gap <= tau {
            low
        } else {
            let x = beta * gap;
            low * (-(-x).exp_m1()) / x
        }
    })
}

fn duhamel_sum(a: &CMatrix, b: &CMatrix, kernel: &DMatrix<f64>) -> Complex64 {
    let n = kernel.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..n {
        for k in 0..n {
            acc += a[(m, k)] * b[(k, m)] * kernel[(m, k)];
        }
    }
    acc
}

/// Duhamel product `(A, B) = int_0^1 ds <A(s) B>`, equal to
/// `(1 / beta^2 Z) d^2 Z / dx_A dx_B` for `Z = Tr exp(beta(-H + x_A A + x_B B))`.
pub fn duhamel(spec: &GibbsSpec, a: Observable<'_>, b: Observable<'_>) -> Result<f64> {
    spec.check_observable(&a)?;
    spec.check_observable(&b)?;
    match &spec.kind {
        SpecKind::Classical(_) => {
            let w = spec.weights()?;
            let av = spec.classical_values(&a)?;
            let bv = spec.classical_values(&b)?;
            let total: f64 = av
                .iter()
                .zip(bv.iter())
                .zip(&w.weights)
                .map(|((x, y), p)| x * y * p)
                .sum();
            Ok(total / w.sum)
        }
        SpecKind::Quantum { .. } => {
            let w = spec.weights()?;
            let kernel = duhamel_kernel(spec.beta, &w);
            let ar = spec.rotated(&a)?;
            let br = spec.rotated(&b)?;
            real_part_checked(duhamel_sum(&ar, &br, &kernel) / w.sum, "Duhamel product")
        }
    }
}

/// Truncated Duhamel product `(A; B) = (A, B) - <A><B>`.
pub fn truncated_duhamel(spec: &GibbsSpec, a: Observable<'_>, b: Observable<'_>) -> Result<f64> {
    let full = duhamel(spec, a, b)?;
    Ok(full - gibbs_expectation(spec, a)? * gibbs_expectation(spec, b)?)
}

/// The three terms of Harris's sandwich
/// `(O,O) <= <O^2> <= (O,O) + (beta/12) <[O,[H,O]]>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisTerms {
    pub lower: f64,
    pub mid: f64,
    pub commutator_term: f64,
}

impl HarrisTerms {
    /// `<O^2> - (O,O)`; non-negative when the left inequality holds.
    pub fn lower_slack(&self) -> f64 {
        self.mid - self.lower
    }

    /// `(O,O) + commutator term - <O^2>`; non-negative when the right
    /// inequality holds.
    pub fn upper_slack(&self) -> f64 {
        self.lower + self.commutator_term - self.mid
    }
}

pub fn harris_check(spec: &GibbsSpec, o: Observable<'_>) -> Result<HarrisTerms> {
    spec.check_observable(&o)?;
    match &spec.kind {
        SpecKind::Classical(_) => {
            let v = spec.classical_values(&o)?;
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let mid = gibbs_expectation(spec, Observable::Diagonal(&sq))?;
            Ok(HarrisTerms {
                lower: mid,
                mid,
                commutator_term: 0.0,
            })
        }
        SpecKind::Quantum { hamiltonian, .. } => {
            let w = spec.weights()?;
            let kernel = duhamel_kernel(spec.beta, &w);
            let rotated = spec.rotated(&o)?;
            let lower = real_part_checked(
                duhamel_sum(&rotated, &rotated, &kernel) / w.sum,
                "Duhamel product",
            )?;
            let mut mid = 0.0;
            for (m, &wm) in w.weights.iter().enumerate() {
                let row: f64 = rotated.row(m).iter().map(|z| z.norm_sqr()).sum();
                mid += wm * row;
            }
            mid /= w.sum;

            let dense = match o {
                Observable::Operator(op) => op.matrix().clone(),
                Observable::Diagonal(d) => HermitianOperator::from_real_diagonal(d).into_matrix(),
            };
            let inner = commutator(hamiltonian.matrix(), &dense)?;
            let double = commutator(&dense, &inner)?;
            let commutator_term = spec.beta / 12.0 * matrix_expectation(spec, &double)?;
            Ok(HarrisTerms {
                lower,
                mid,
                commutator_term,
            })
        }
    }
}

/// Default finite-difference step for a derivative of the given order.
pub fn default_step(order: usize) -> f64 {
    if order <= 2 {
        1e-4
    } else {
        1e-2
    }
}

/// Weights of the central stencil on offsets `-k..=k` for the k-th
/// derivative (stencil width `2k + 1`).
pub fn central_stencil(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order > 4 {
        return Err(Error::invalid(format!(
            "derivative order must be in 1..=4, got {order}"
        )));
    }
    let k = order as i32;
    let width = 2 * order + 1;
    let vander = DMatrix::from_fn(width, width, |p, j| f64::from(j as i32 - k).powi(p as i32));
    let mut rhs = nalgebra::DVector::zeros(width);
    rhs[order] = (1..=order).map(|i| i as f64).product();
    let weights = vander
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular stencil system"))?;
    Ok(weights.iter().copied().collect())
}

/// Central finite difference of order `order` of `f` at `at`.
pub fn central_difference<F>(f: F, order: usize, at: f64, step: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let weights = central_stencil(order)?;
    let k = order as i32;
    let mut acc = 0.0;
    for (j, wj) in weights.iter().enumerate() {
        if *wj == 0.0 {
            continue;
        }
        let x = at + f64::from(j as i32 - k) * step;
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::numerical(format!("non-finite value at {x}")));
        }
        acc += wj * v;
    }
    let d = acc / step.powi(k);
    if !d.is_finite() {
        return Err(Error::numerical("non-finite finite-difference estimate"));
    }
    Ok(d)
}

/// `d^k log Z / d lambda^k` by central differences of a lambda-parametrised
/// log-partition function. With `log Z = N psi_N` and coupling `N lambda h`
/// this is `(beta N)^k` times the order-k truncated Duhamel product of `h`.
pub fn logz_derivative<F>(log_z: F, order: usize, lambda: f64, step: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    central_difference(log_z, order, lambda, step)
}
