//! Spin-S matrices and the dense operator algebra on tensor-product spaces.
//!
//! Every local space uses the S^z eigenbasis ordered by descending `m`, and
//! site 0 is the leftmost Kronecker factor. With that convention the basis
//! index of a product state reads, in base `2S+1`, as the list of local
//! indices from site 0 (most significant) to the last site.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gibbs::decompose;

/// Default cap on the total Hilbert-space dimension of a quantum model.
pub const DEFAULT_DIM_CAP: usize = 4096;

const HERMITICITY_TOL: f64 = 1e-12;

pub type CMatrix = DMatrix<Complex64>;

/// A spin magnitude stored as the integer `2S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinMagnitude {
    two_s: u32,
}

impl SpinMagnitude {
    pub fn new(s: f64) -> Result<Self> {
        let two_s = 2.0 * s;
        if !two_s.is_finite() || two_s < 0.5 || (two_s - two_s.round()).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "spin magnitude {s} is not a positive half-integer"
            )));
        }
        Ok(SpinMagnitude {
            two_s: two_s.round() as u32,
        })
    }

    pub const fn half() -> Self {
        SpinMagnitude { two_s: 1 }
    }

    pub fn value(self) -> f64 {
        f64::from(self.two_s) / 2.0
    }

    pub fn dim(self) -> usize {
        self.two_s as usize + 1
    }
}

/// The three spin matrices of a single site.
#[derive(Debug, Clone)]
pub struct LocalSpin {
    magnitude: SpinMagnitude,
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
}

/// Standard spin-S matrices in the S^z eigenbasis, `m` descending.
pub fn local_spin(s: f64) -> Result<LocalSpin> {
    let magnitude = SpinMagnitude::new(s)?;
    let dim = magnitude.dim();
    let sv = magnitude.value();
    let casimir = sv * (sv + 1.0);

    let mut sz = CMatrix::zeros(dim, dim);
    let mut raise = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..dim {
        let m = sv - k as f64;
        sz[(k, k)] = Complex64::new(m, 0.0);
        if k > 0 {
            // <m+1| S^+ |m>
            raise[(k - 1, k)] = (casimir - m * (m + 1.0)).sqrt();
        }
    }
    let lower = raise.transpose();
    let sx = (&raise + &lower).map(|v| Complex64::new(0.5 * v, 0.0));
    // S^y = (S^+ - S^-) / 2i
    let sy = (&raise - &lower).map(|v| Complex64::new(0.0, -0.5 * v));

    Ok(LocalSpin {
        magnitude,
        sx,
        sy,
        sz,
    })
}

impl LocalSpin {
    pub fn magnitude(&self) -> SpinMagnitude {
        self.magnitude
    }

    pub fn dim(&self) -> usize {
        self.magnitude.dim()
    }

    /// Component by index 0, 1, 2 for x, y, z.
    pub fn component(&self, p: usize) -> &CMatrix {
        match p {
            0 => &self.sx,
            1 => &self.sy,
            _ => &self.sz,
        }
    }
}

/// Dense complex matrix that passed a Hermiticity check at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    entries: CMatrix,
}

impl HermitianOperator {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::invalid(format!(
                "operator must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = max_abs(&entries);
        let dim = entries.nrows();
        let mut defect = 0.0_f64;
        for j in 0..dim {
            for i in 0..=j {
                let d = (entries[(i, j)] - entries[(j, i)].conj()).norm();
                defect = defect.max(d);
            }
        }
        if !defect.is_finite() || defect > HERMITICITY_TOL * scale {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian: max |M - M^dag| = {defect:e}"
            )));
        }
        Ok(HermitianOperator { entries })
    }

    pub fn identity(dim: usize) -> Self {
        HermitianOperator {
            entries: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianOperator {
            entries: CMatrix::zeros(dim, dim),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = CMatrix::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            entries[(i, i)] = Complex64::new(v, 0.0);
        }
        HermitianOperator { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    /// True when every entry has an exactly zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    /// Diagonal entries when the operator is diagonal in the computational basis.
    pub fn real_diagonal(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if i != j && self.entries[(i, j)] != Complex64::new(0.0, 0.0) {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.entries[(i, i)].re).collect())
    }

    /// `self + c * other` for real `c`.
    pub fn add_scaled(&self, c: f64, other: &HermitianOperator) -> Result<HermitianOperator> {
        check_dims(self.dim(), other.dim())?;
        Ok(HermitianOperator {
            entries: &self.entries + other.entries.map(|z| z * c),
        })
    }

    pub fn scaled(&self, c: f64) -> HermitianOperator {
        HermitianOperator {
            entries: self.entries.map(|z| z * c),
        }
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// A chain of identical spins; `total_dim = (2S+1)^sites`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertSpace {
    sites: usize,
    spin: SpinMagnitude,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new(sites: usize, spin: SpinMagnitude) -> Result<Self> {
        Self::with_cap(sites, spin, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(sites: usize, spin: SpinMagnitude, cap: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::invalid("Hilbert space needs at least one site"));
        }
        let local = spin.dim();
        let mut total: usize = 1;
        for _ in 0..sites {
            total = match total.checked_mul(local) {
                Some(t) if t <= cap => t,
                _ => {
                    return Err(Error::Capacity {
                        what: format!("{sites} sites of spin {}", spin.value()),
                        requested: (local as f64).powi(sites as i32).min(usize::MAX as f64)
                            as usize,
                        cap,
                    })
                }
            };
        }
        Ok(HilbertSpace {
            sites,
            spin,
            total_dim: total,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn spin(&self) -> SpinMagnitude {
        self.spin
    }

    pub fn local_dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Local basis index of `site` inside the product-basis index `state`.
    pub fn local_index(&self, state: usize, site: usize) -> usize {
        let d = self.local_dim();
        let stride = d.pow((self.sites - 1 - site) as u32);
        (state / stride) % d
    }
}

/// Kronecker product of local factors placed on distinct sites, identity
/// elsewhere. Factors may be given in any order.
pub fn embed_product(space: &HilbertSpace, factors: &[(usize, &CMatrix)]) -> Result<CMatrix> {
    let d = space.local_dim();
    let mut placed: Vec<Option<&CMatrix>> = vec![None; space.sites()];
    for &(site, local) in factors {
        if site >= space.sites() {
            return Err(Error::invalid(format!(
                "site {site} out of range for {} sites",
                space.sites()
            )));
        }
        if local.nrows() != d || local.ncols() != d {
            return Err(Error::invalid(format!(
                "local operator is {}x{}, site dimension is {d}",
                local.nrows(),
                local.ncols()
            )));
        }
        if placed[site].is_some() {
            return Err(Error::invalid(format!("site {site} given twice")));
        }
        placed[site] = Some(local);
    }

    let mut result = CMatrix::identity(1, 1);
    let mut identity_run = 1usize;
    for slot in placed {
        match slot {
            None => identity_run *= d,
            Some(local) => {
                if identity_run > 1 {
                    result = result.kronecker(&CMatrix::identity(identity_run, identity_run));
                    identity_run = 1;
                }
                result = result.kronecker(local);
            }
        }
    }
    if identity_run > 1 {
        result = result.kronecker(&CMatrix::identity(identity_run, identity_run));
    }
    Ok(result)
}

/// `id ⊗ … ⊗ local ⊗ … ⊗ id` with `local` at `site`.
pub fn embed(space: &HilbertSpace, site: usize, local: &CMatrix) -> Result<HermitianOperator> {
    HermitianOperator::new(embed_product(space, &[(site, local)])?)
}

/// `AB - BA`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_dims(a.nrows(), b.nrows())?;
    check_dims(a.ncols(), b.ncols())?;
    Ok(a * b - b * a)
}

/// Largest absolute eigenvalue.
pub fn operator_norm(a: &HermitianOperator) -> Result<f64> {
    if let Some(diag) = a.real_diagonal() {
        return Ok(diag.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())));
    }
    let spectrum = decompose(a)?;
    Ok(spectrum
        .eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let s = local_spin(0.5).unwrap();
        assert_eq!(s.sz[(0, 0)], c(0.5, 0.0));
        assert_eq!(s.sz[(1, 1)], c(-0.5, 0.0));
        assert_eq!(s.sx[(0, 1)], c(0.5, 0.0));
        assert_eq!(s.sx[(1, 0)], c(0.5, 0.0));
        assert_eq!(s.sy[(0, 1)], c(0.0, -0.5));
        assert_eq!(s.sy[(1, 0)], c(0.0, 0.5));
        let comm = commutator(&s.sx, &s.sy).unwrap();
        let isz = s.sz.map(|z| z * c(0.0, 1.0));
        assert_eq!(max_diff(&comm, &isz), 0.0);
    }

    #[test]
    fn spin_one_basis() {
        let s = local_spin(1.0).unwrap();
        let diag: Vec<f64> = (0..3).map(|k| s.sz[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn rejects_non_half_integer() {
        assert!(matches!(local_spin(0.3), Err(Error::InvalidArgument(_))));
        assert!(matches!(local_spin(0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(local_spin(-1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn embed_sz_two_sites() {
        let space = HilbertSpace::new(2, SpinMagnitude::half()).unwrap();
        let s = local_spin(0.5).unwrap();
        let op = embed(&space, 0, &s.sz).unwrap();
        assert_eq!(op.real_diagonal().unwrap(), vec![0.5, 0.5, -0.5, -0.5]);
        let op1 = embed(&space, 1, &s.sz).unwrap();
        assert_eq!(op1.real_diagonal().unwrap(), vec![0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn embed_identity_gives_identity() {
        let space = HilbertSpace::new(3, SpinMagnitude::new(1.0).unwrap()).unwrap();
        let id = CMatrix::identity(3, 3);
        for site in 0..3 {
            let op = embed(&space, site, &id).unwrap();
            assert_eq!(op.matrix(), &CMatrix::identity(27, 27));
        }
    }

    #[test]
    fn embed_sz_three_sites_against_explicit_kronecker() {
        let space = HilbertSpace::new(3, SpinMagnitude::half()).unwrap();
        let s = local_spin(0.5).unwrap();
        let op = embed(&space, 2, &s.sz).unwrap();
        let id2 = CMatrix::identity(2, 2);
        let oracle = id2.kronecker(&id2).kronecker(&s.sz);
        assert_eq!(op.matrix(), &oracle);
        let trace: Complex64 = (0..8).map(|i| op.matrix()[(i, i)]).sum();
        assert_eq!(trace, c(0.0, 0.0));
        assert!((operator_norm(&op).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn embed_errors() {
        let space = HilbertSpace::new(2, SpinMagnitude::half()).unwrap();
        let s = local_spin(1.0).unwrap();
        assert!(embed(&space, 0, &s.sz).is_err());
        let h = local_spin(0.5).unwrap();
        assert!(embed(&space, 2, &h.sz).is_err());
    }

    #[test]
    fn capacity_error_beyond_cap() {
        let err = HilbertSpace::new(13, SpinMagnitude::half()).unwrap_err();
        assert!(matches!(err, Error::Capacity { cap: 4096, .. }));
        assert!(HilbertSpace::new(12, SpinMagnitude::half()).is_ok());
        assert!(HilbertSpace::with_cap(13, SpinMagnitude::half(), 8192).is_ok());
    }

    #[test]
    fn hermiticity_validated() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(HermitianOperator::new(m).is_err());
        let rect = CMatrix::zeros(2, 3);
        assert!(HermitianOperator::new(rect).is_err());
    }

    #[test]
    fn commutator_of_self_is_zero_and_dims_checked() {
        let s = local_spin(1.5).unwrap();
        let z = commutator(&s.sx, &s.sx).unwrap();
        assert_eq!(max_abs(&z), 0.0);
        let t = local_spin(0.5).unwrap();
        assert!(commutator(&s.sx, &t.sx).is_err());
    }

    #[test]
    fn identity_norm() {
        assert_eq!(operator_norm(&HermitianOperator::identity(4)).unwrap(), 1.0);
    }

    #[test]
    fn local_index_roundtrip() {
        let space = HilbertSpace::new(3, SpinMagnitude::new(1.0).unwrap()).unwrap();
        // state index = 9*i0 + 3*i1 + i2
        assert_eq!(space.local_index(9 * 2 + 3, 0), 2);
        assert_eq!(space.local_index(9 * 2 + 3, 1), 1);
        assert_eq!(space.local_index(9 * 2 + 3, 2), 0);
    }
}
