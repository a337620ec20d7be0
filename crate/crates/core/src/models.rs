//! Builders for the three perturbed model families and the perturbation
//! assembly `H = H0 - (N lambda + N^alpha mu g) h`.
//!
//! * REM: replicated random energy model with the replica-overlap indicator
//!   `h = prod_i delta(sigma1_i, sigma2_i)`.
//! * Heisenberg: antiferromagnetic chain with staggered magnetisation density.
//! * EA: replicated quantum Edwards–Anderson chain with the spin-overlap density.
//!
//! Classical configurations are encoded with bit `i` of a replica block set
//! when spin `i` points down; replica 1 occupies the low bits. Quantum
//! replicas occupy contiguous site blocks, replica 1 leftmost.

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderStream;
use crate::error::{Error, Result};
use crate::gibbs::{
    decompose, gibbs_expectation, log_partition, truncated_duhamel, ClassicalTable, GibbsSpec,
    Observable,
};
use crate::spin_algebra::{
    embed_product, local_spin, operator_norm, CMatrix, HermitianOperator, HilbertSpace,
};

/// Maximum number of configuration bits of an explicit classical table.
pub const TABLE_BITS_CAP: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rem,
    Heisenberg,
    Ea,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Rem => "REM",
            Family::Heisenberg => "HEISENBERG",
            Family::Ea => "EA",
        }
    }
}

/// Seed coordinates of the frozen disorder sample of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisorderRef {
    pub master_seed: u64,
    pub sample_index: u64,
}

/// Single-replica REM energies `-sqrt(N) J_sigma` for every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RemTable {
    sites: usize,
    replicas: usize,
    energies: Vec<f64>,
}

impl RemTable {
    pub fn single_energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    /// Explicit replicated energy table and overlap table over all
    /// `(sigma^1, ..., sigma^n)`.
    pub fn to_classical(&self) -> Result<(ClassicalTable, Option<Vec<f64>>)> {
        let bits = self.sites * self.replicas;
        if bits > TABLE_BITS_CAP {
            return Err(Error::Capacity {
                what: "replicated REM table bits".into(),
                requested: bits,
                cap: TABLE_BITS_CAP,
            });
        }
        let single = 1usize << self.sites;
        let mask = single - 1;
        let total = 1usize << bits;
        let energies: Vec<f64> = (0..total)
            .map(|idx| {
                (0..self.replicas)
                    .map(|a| self.energies[(idx >> (a * self.sites)) & mask])
                    .sum()
            })
            .collect();
        let overlap = (self.replicas >= 2).then(|| {
            (0..total)
                .map(|idx| {
                    let s1 = idx & mask;
                    let s2 = (idx >> self.sites) & mask;
                    if s1 == s2 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        });
        Ok((ClassicalTable::new(energies)?, overlap))
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    /// Dense unperturbed Hamiltonian and perturbation operator; `h_diagonal`
    /// is set when `h` is diagonal in the product basis.
    Quantum {
        h0: HermitianOperator,
        h: HermitianOperator,
        h_diagonal: Option<Vec<f64>>,
    },
    /// Factorised REM: only single-replica energies are stored.
    Rem(RemTable),
}

/// One model family with one frozen disorder sample.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    family: Family,
    sites: usize,
    replicas: usize,
    repr: Representation,
    c_h: f64,
    disorder: Option<DisorderRef>,
}

impl ModelInstance {
    pub fn family(&self) -> Family {
        self.family
    }

    /// Number of lattice sites `N` of one replica.
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    /// Stated bound on the operator norm of `h`.
    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    pub fn disorder(&self) -> Option<DisorderRef> {
        self.disorder
    }

    pub fn has_perturbation(&self) -> bool {
        match &self.repr {
            Representation::Quantum { .. } => true,
            Representation::Rem(t) => t.replicas >= 2,
        }
    }

    pub fn h0(&self) -> Option<&HermitianOperator> {
        match &self.repr {
            Representation::Quantum { h0, .. } => Some(h0),
            Representation::Rem(_) => None,
        }
    }

    pub fn h(&self) -> Option<&HermitianOperator> {
        match &self.repr {
            Representation::Quantum { h, .. } => Some(h),
            Representation::Rem(_) => None,
        }
    }

    /// Operator norm of `h` (max entry of the overlap table for the REM).
    pub fn h_norm(&self) -> Result<f64> {
        match &self.repr {
            Representation::Quantum { h, .. } => operator_norm(h),
            Representation::Rem(t) => Ok(if t.replicas >= 2 { 1.0 } else { 0.0 }),
        }
    }

    /// `||[h, [H0, h]]||`; identically zero for the classical REM.
    pub fn double_commutator_norm(&self) -> Result<f64> {
        match &self.repr {
            Representation::Quantum {
                h0,
                h_diagonal: Some(d),
                ..
            } => {
                // [h, [H0, h]]_{ij} = -(H0)_{ij} (h_i - h_j)^2 for diagonal h
                let m = h0.matrix();
                let dc = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                    let gap = d[i] - d[j];
                    -m[(i, j)] * (gap * gap)
                });
                operator_norm(&HermitianOperator::new(dc)?)
            }
            Representation::Quantum { h0, h, .. } => {
                let inner = crate::spin_algebra::commutator(h0.matrix(), h.matrix())?;
                let outer = crate::spin_algebra::commutator(h.matrix(), &inner)?;
                // [h, [H0, h]] is Hermitian; symmetrise away rounding
                let sym = (&outer + outer.adjoint()).map(|z| z * 0.5);
                operator_norm(&HermitianOperator::new(sym)?)
            }
            Representation::Rem(_) => Ok(0.0),
        }
    }
}

/// Perturbation strengths; `g` is a realised standard Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub g: f64,
}

impl PerturbationParams {
    pub fn plain(lambda: f64) -> Self {
        PerturbationParams {
            lambda,
            mu: 0.0,
            alpha: 0.5,
            g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.lambda, self.mu, self.alpha, self.g]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("perturbation parameters must be finite"));
        }
        if self.mu != 0.0 && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1) when mu != 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Replicated REM on `sites` spins with `replicas` copies sharing the couplings.
pub fn build_rem(sites: usize, replicas: usize, stream: &DisorderStream) -> Result<ModelInstance> {
    if !(1..=14).contains(&sites) {
        return Err(Error::invalid(format!(
            "REM size must be in 1..=14, got {sites}"
        )));
    }
    if !(1..=3).contains(&replicas) {
        return Err(Error::invalid(format!(
            "REM replica count must be in 1..=3, got {replicas}"
        )));
    }
    if sites * replicas > TABLE_BITS_CAP {
        return Err(Error::Capacity {
            what: "replicated REM configuration bits".into(),
            requested: sites * replicas,
            cap: TABLE_BITS_CAP,
        });
    }
    let mut s = stream.clone();
    let scale = (sites as f64).sqrt();
    let energies = (0..1usize << sites)
        .map(|_| -scale * s.next_gaussian())
        .collect();
    Ok(ModelInstance {
        family: Family::Rem,
        sites,
        replicas,
        repr: Representation::Rem(RemTable {
            sites,
            replicas,
            energies,
        }),
        c_h: 1.0,
        disorder: Some(DisorderRef {
            master_seed: stream.master_seed(),
            sample_index: stream.sample_index(),
        }),
    })
}

/// Antiferromagnetic Heisenberg chain of even length with open boundaries.
/// `couplings[r - 1]` is the coupling at distance `r`; only odd distances
/// connect the two sublattices, so nonzero even-distance couplings are rejected.
pub fn build_heisenberg(length: usize, couplings: &[f64], spin: f64) -> Result<ModelInstance> {
    if length < 2 || !length.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "Heisenberg chain length must be even and >= 2, got {length}"
        )));
    }
    if couplings.is_empty() || couplings.iter().any(|j| !j.is_finite() || *j < 0.0) {
        return Err(Error::invalid(
            "couplings must be a non-empty list of non-negative reals",
        ));
    }
    if let Some((r, _)) = couplings
        .iter()
        .enumerate()
        .find(|(i, j)| (i + 1) % 2 == 0 && **j != 0.0)
    {
        return Err(Error::invalid(format!(
            "coupling at even distance {} joins equal sublattices",
            r + 1
        )));
    }
    let s = local_spin(spin)?;
    let space = HilbertSpace::new(length, s.magnitude())?;
    let dim = space.total_dim();

    let mut h0 = CMatrix::zeros(dim, dim);
    for i in 0..length {
        for (r, &j) in couplings.iter().enumerate() {
            let k = i + r + 1;
            if j == 0.0 || k >= length {
                continue;
            }
            for p in 0..3 {
                let term = embed_product(&space, &[(i, s.component(p)), (k, s.component(p))])?;
                h0 += term.map(|z| z * j);
            }
        }
    }
    let h0 = HermitianOperator::new(h0)?;

    let sv = s.magnitude().value();
    let n = length as f64;
    let diag: Vec<f64> = (0..dim)
        .map(|state| {
            (0..length)
                .map(|site| {
                    let m = sv - space.local_index(state, site) as f64;
                    if site % 2 == 0 {
                        m
                    } else {
                        -m
                    }
                })
                .sum::<f64>()
                / n
        })
        .collect();

    Ok(ModelInstance {
        family: Family::Heisenberg,
        sites: length,
        replicas: 1,
        repr: Representation::Quantum {
            h0,
            h: HermitianOperator::from_real_diagonal(&diag),
            h_diagonal: Some(diag),
        },
        c_h: sv,
        disorder: None,
    })
}

/// Parameters of the replicated quantum Edwards–Anderson chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaParams {
    pub length: usize,
    pub replicas: usize,
    pub spin: f64,
    /// Anisotropy constants `(K^x, K^y, K^z)`.
    pub k: [f64; 3],
    /// Size of the base interaction range `A = {0, .., |A|-1}`.
    pub base_set: usize,
}

impl Default for EaParams {
    fn default() -> Self {
        EaParams {
            length: 3,
            replicas: 2,
            spin: 0.5,
            k: [0.3, 0.3, 0.4],
            base_set: 2,
        }
    }
}

/// `n` replicas of `H = -sum_X J_X sum_p K^p S_X^p` sharing one disorder
/// realisation, ranges `X` the translates of `A` inside the open chain.
pub fn build_ea(params: &EaParams, stream: &DisorderStream) -> Result<ModelInstance> {
    let EaParams {
        length,
        replicas,
        spin,
        k,
        base_set,
    } = *params;
    if length < 2 {
        return Err(Error::invalid(format!(
            "EA chain length must be >= 2, got {length}"
        )));
    }
    if replicas < 1 {
        return Err(Error::invalid("EA needs at least one replica"));
    }
    if !(1..=2).contains(&base_set) || base_set > length {
        return Err(Error::invalid(format!(
            "EA base set size must be 1 or 2, got {base_set}"
        )));
    }
    if k.iter().any(|v| !v.is_finite() || *v < 0.0) || k.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(
            "EA anisotropy constants must be non-negative, not all zero",
        ));
    }
    let s = local_spin(spin)?;
    let space = HilbertSpace::new(length * replicas, s.magnitude())?;
    let dim = space.total_dim();

    let mut draws = stream.clone();
    let ranges = length + 1 - base_set;
    let couplings: Vec<f64> = (0..ranges).map(|_| draws.next_gaussian()).collect();

    let mut h0 = CMatrix::zeros(dim, dim);
    for a in 0..replicas {
        let offset = a * length;
        for (v, &jx) in couplings.iter().enumerate() {
            for (p, &kp) in k.iter().enumerate() {
                if kp == 0.0 {
                    continue;
                }
                let factors: Vec<(usize, &CMatrix)> = (0..base_set)
                    .map(|t| (offset + v + t, s.component(p)))
                    .collect();
                let term = embed_product(&space, &factors)?;
                h0 -= term.map(|z| z * (jx * kp));
            }
        }
    }
    let h0 = HermitianOperator::new(h0)?;

    let sv = s.magnitude().value();
    let (h, h_diagonal) = if replicas >= 2 {
        let diag: Vec<f64> = (0..dim)
            .map(|state| {
                (0..length)
                    .map(|i| {
                        let m1 = sv - space.local_index(state, i) as f64;
                        let m2 = sv - space.local_index(state, length + i) as f64;
                        m1 * m2
                    })
                    .sum::<f64>()
                    / length as f64
            })
            .collect();
        (HermitianOperator::from_real_diagonal(&diag), Some(diag))
    } else {
        (HermitianOperator::zeros(dim), Some(vec![0.0; dim]))
    };

    Ok(ModelInstance {
        family: Family::Ea,
        sites: length,
        replicas,
        repr: Representation::Quantum { h0, h, h_diagonal },
        c_h: sv * sv,
        disorder: Some(DisorderRef {
            master_seed: stream.master_seed(),
            sample_index: stream.sample_index(),
        }),
    })
}

/// Family plus size-independent parameters; builds one instance per size
/// and disorder sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Rem {
        replicas: usize,
    },
    Heisenberg {
        spin: f64,
        couplings: Vec<f64>,
    },
    Ea {
        replicas: usize,
        spin: f64,
        k: [f64; 3],
        base_set: usize,
    },
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Rem { .. } => Family::Rem,
            ModelSpec::Heisenberg { .. } => Family::Heisenberg,
            ModelSpec::Ea { .. } => Family::Ea,
        }
    }

    pub fn is_disordered(&self) -> bool {
        !matches!(self, ModelSpec::Heisenberg { .. })
    }

    pub fn replicas(&self) -> usize {
        match self {
            ModelSpec::Rem { replicas } | ModelSpec::Ea { replicas, .. } => *replicas,
            ModelSpec::Heisenberg { .. } => 1,
        }
    }

    /// Builds the instance of linear size `size` for disorder sample `stream`
    /// (ignored by the Heisenberg chain).
    pub fn build(&self, size: usize, stream: &DisorderStream) -> Result<ModelInstance> {
        match self {
            ModelSpec::Rem { replicas } => build_rem(size, *replicas, stream),
            ModelSpec::Heisenberg { spin, couplings } => build_heisenberg(size, couplings, *spin),
            ModelSpec::Ea {
                replicas,
                spin,
                k,
                base_set,
            } => build_ea(
                &EaParams {
                    length: size,
                    replicas: *replicas,
                    spin: *spin,
                    k: *k,
                    base_set: *base_set,
                },
                stream,
            ),
        }
    }
}

/// Thermal data of `h` at one `(beta, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalPoint {
    pub log_z: f64,
    /// `<h>`.
    pub h_mean: f64,
    /// `<h^2>`.
    pub h_second: f64,
}

impl ThermalPoint {
    pub fn thermal_variance(&self) -> f64 {
        self.h_second - self.h_mean * self.h_mean
    }
}

/// A model with the perturbation attached; `lambda` stays a free parameter.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedModel<'a> {
    model: &'a ModelInstance,
    mu: f64,
    alpha: f64,
    g: f64,
}

/// Attaches `-(N lambda + N^alpha mu g) h` to `model`.
pub fn assemble(model: &ModelInstance, params: PerturbationParams) -> Result<PerturbedModel<'_>> {
    params.validate()?;
    if !model.has_perturbation() && (params.lambda != 0.0 || params.mu != 0.0) {
        return Err(Error::invalid(
            "model has no perturbation operator (single-replica REM)",
        ));
    }
    Ok(PerturbedModel {
        model,
        mu: params.mu,
        alpha: params.alpha,
        g: params.g,
    })
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<'a> PerturbedModel<'a> {
    pub fn model(&self) -> &'a ModelInstance {
        self.model
    }

    /// Same model and strengths with another realisation of `g`.
    pub fn with_g(&self, g: f64) -> Self {
        PerturbedModel { g, ..*self }
    }

    /// `N lambda + N^alpha mu g`.
    pub fn coefficient(&self, lambda: f64) -> f64 {
        let n = self.model.sites as f64;
        let random = if self.mu == 0.0 {
            0.0
        } else {
            n.powf(self.alpha) * self.mu * self.g
        };
        n * lambda + random
    }

    /// `H0 - coefficient(lambda) h` for quantum models.
    pub fn hamiltonian(&self, lambda: f64) -> Result<HermitianOperator> {
        match &self.model.repr {
            Representation::Quantum { h0, h, .. } => h0.add_scaled(-self.coefficient(lambda), h),
            Representation::Rem(_) => Err(Error::invalid("REM has no operator Hamiltonian")),
        }
    }

    /// Gibbs state at `(beta, lambda)`. REM instances are materialised as an
    /// explicit classical table, subject to the table cap.
    pub fn gibbs(&self, beta: f64, lambda: f64) -> Result<GibbsSpec> {
        match &self.model.repr {
            Representation::Quantum { .. } => GibbsSpec::quantum(beta, self.hamiltonian(lambda)?),
            Representation::Rem(t) => {
                let (table, overlap) = t.to_classical()?;
                let c = self.coefficient(lambda);
                let energies = match overlap {
                    Some(h) => table
                        .energies()
                        .iter()
                        .zip(&h)
                        .map(|(e, hv)| e - c * hv)
                        .collect(),
                    None => table.energies().to_vec(),
                };
                GibbsSpec::classical(beta, ClassicalTable::new(energies)?)
            }
        }
    }

    /// `log Z(beta, lambda)`.
    pub fn log_partition(&self, beta: f64, lambda: f64) -> Result<f64> {
        match &self.model.repr {
            Representation::Quantum { .. } => {
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::invalid(format!("beta must be positive, got {beta}")));
                }
                let h = self.hamiltonian(lambda)?;
                let values: Vec<f64> = if h.is_real() {
                    h.matrix()
                        .map(|z| z.re)
                        .symmetric_eigenvalues()
                        .iter()
                        .copied()
                        .collect()
                } else {
                    h.matrix().symmetric_eigenvalues().iter().copied().collect()
                };
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical("non-finite eigenvalue"));
                }
                let ground = values.iter().copied().fold(f64::INFINITY, f64::min);
                let sum: f64 = values.iter().map(|e| (-beta * (e - ground)).exp()).sum();
                Ok(-beta * ground + sum.ln())
            }
            Representation::Rem(t) => Ok(self.rem_point(t, beta, lambda)?.log_z),
        }
    }

    /// `psi_N = log Z / N`.
    pub fn psi(&self, beta: f64, lambda: f64) -> Result<f64> {
        Ok(self.log_partition(beta, lambda)? / self.model.sites as f64)
    }

    /// `log Z`, `<h>` and `<h^2>` at one point.
    pub fn thermal(&self, beta: f64, lambda: f64) -> Result<ThermalPoint> {
        match &self.model.repr {
            Representation::Quantum { h, h_diagonal, .. } => {
                let spec = GibbsSpec::quantum(beta, self.hamiltonian(lambda)?)?;
                let log_z = log_partition(&spec)?;
                let (h_mean, h_second) = match h_diagonal {
                    Some(d) => {
                        let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
                        (
                            gibbs_expectation(&spec, Observable::Diagonal(d))?,
                            gibbs_expectation(&spec, Observable::Diagonal(&sq))?,
                        )
                    }
                    None => {
                        let sq = HermitianOperator::new(h.matrix() * h.matrix())?;
                        (
                            gibbs_expectation(&spec, Observable::Operator(h))?,
                            gibbs_expectation(&spec, Observable::Operator(&sq))?,
                        )
                    }
                };
                Ok(ThermalPoint {
                    log_z,
                    h_mean,
                    h_second,
                })
            }
            Representation::Rem(t) => self.rem_point(t, beta, lambda),
        }
    }

    /// `<h>` at one point.
    pub fn h_mean(&self, beta: f64, lambda: f64) -> Result<f64> {
        Ok(self.thermal(beta, lambda)?.h_mean)
    }

    /// Spectral truncated Duhamel product `(h; h)`.
    pub fn h_truncated_duhamel(&self, beta: f64, lambda: f64) -> Result<f64> {
        match &self.model.repr {
            Representation::Quantum { h, h_diagonal, .. } => {
                let spec = GibbsSpec::quantum(beta, self.hamiltonian(lambda)?)?;
                let obs = match h_diagonal {
                    Some(d) => Observable::Diagonal(d),
                    None => Observable::Operator(h),
                };
                truncated_duhamel(&spec, obs, obs)
            }
            Representation::Rem(t) => {
                // classical and h^2 = h
                let p = self.rem_point(t, beta, lambda)?;
                Ok(p.thermal_variance())
            }
        }
    }

    /// Closed-form REM sums over the replicated configuration space. With
    /// single-replica weights `a_s`, `S1 = sum a`, `S2 = sum a^2`,
    /// `Z = S1^(n-2) (S1^2 - S2 + e^(beta c) S2)` up to the ground shift.
    fn rem_point(&self, t: &RemTable, beta: f64, lambda: f64) -> Result<ThermalPoint> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        let ground = t.energies.iter().copied().fold(f64::INFINITY, f64::min);
        let a: Vec<f64> = t
            .energies
            .iter()
            .map(|e| (-beta * (e - ground)).exp())
            .collect();
        let s1: f64 = a.iter().sum();
        let n = t.replicas as f64;
        if t.replicas == 1 {
            return Ok(ThermalPoint {
                log_z: -beta * ground + s1.ln(),
                h_mean: 0.0,
                h_second: 0.0,
            });
        }
        let s2: f64 = a.iter().map(|x| x * x).sum();
        let top = a
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let others: f64 = a
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, x)| x)
            .sum();
        // sum over sigma1 != sigma2 of a1 a2, without cancellation
        let off: f64 = a
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == top { x * others } else { x * (s1 - x) })
            .sum();
        let t_exp = beta * self.coefficient(lambda);
        let log_off = off.ln();
        let log_diag = t_exp + s2.ln();
        let log_pair = log_add_exp(log_off, log_diag);
        let log_z = -n * beta * ground + (n - 2.0) * s1.ln() + log_pair;
        let h_mean = (log_diag - log_pair).exp();
        if !(log_z.is_finite() && h_mean.is_finite()) {
            return Err(Error::numerical(format!(
                "REM sums not finite at beta={beta}, lambda={lambda}"
            )));
        }
        Ok(ThermalPoint {
            log_z,
            h_mean,
            h_second: h_mean,
        })
    }
}

/// Eigenvalues of the unperturbed Hamiltonian (quantum models only).
pub fn unperturbed_spectrum(model: &ModelInstance) -> Result<Vec<f64>> {
    match model.h0() {
        Some(h0) => Ok(decompose(h0)?.eigenvalues().to_vec()),
        None => Err(Error::invalid("classical model has no operator spectrum")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_algebra::{max_abs, SpinMagnitude};

    fn stream(index: u64) -> DisorderStream {
        DisorderStream::new(1234, index)
    }

    #[test]
    fn rem_single_site_overlap_table() {
        let m = build_rem(1, 2, &stream(0)).unwrap();
        let Representation::Rem(t) = m.representation() else {
            panic!()
        };
        let (_, h) = t.to_classical().unwrap();
        assert_eq!(h.unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    /// 16-term enumeration of the N = 2, n = 2 energies.
    #[test]
    fn rem_two_sites_energies_by_enumeration() {
        let st = stream(3);
        let m = build_rem(2, 2, &st).unwrap();
        let j = crate::disorder::gaussian_draws(&st, 4);
        let Representation::Rem(t) = m.representation() else {
            panic!()
        };
        let (table, _) = t.to_classical().unwrap();
        for s1 in 0..4 {
            for s2 in 0..4 {
                let idx = s1 | (s2 << 2);
                let expected = -(2f64).sqrt() * (j[s1] + j[s2]);
                assert!((table.energies()[idx] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rem_single_replica_counts_states() {
        let m = build_rem(5, 1, &stream(0)).unwrap();
        let p = assemble(&m, PerturbationParams::plain(0.0)).unwrap();
        // psi at vanishing beta tends to log 2
        let psi = p.psi(1e-12, 0.0).unwrap();
        assert!((psi - 2f64.ln()).abs() < 1e-10);
        assert!(assemble(&m, PerturbationParams::plain(0.3)).is_err());
    }

    #[test]
    fn rem_factorised_matches_enumeration() {
        for (n, rep) in [(3, 2), (4, 2), (3, 3)] {
            let m = build_rem(n, rep, &stream(7)).unwrap();
            let params = PerturbationParams {
                lambda: 0.4,
                mu: 0.8,
                alpha: 0.5,
                g: -0.3,
            };
            let p = assemble(&m, params).unwrap();
            for beta in [0.3, 1.0, 2.5] {
                let point = p.thermal(beta, 0.4).unwrap();
                let spec = p.gibbs(beta, 0.4).unwrap();
                let Representation::Rem(t) = m.representation() else {
                    panic!()
                };
                let (_, h) = t.to_classical().unwrap();
                let h = h.unwrap();
                let lz = log_partition(&spec).unwrap();
                let hm = gibbs_expectation(&spec, Observable::Diagonal(&h)).unwrap();
                assert!((point.log_z - lz).abs() < 1e-11 * lz.abs().max(1.0));
                assert!((point.h_mean - hm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rem_table_cap() {
        assert!(matches!(
            build_rem(15, 2, &stream(0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_rem(10, 3, &stream(0)),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn rem_overlap_idempotent() {
        let m = build_rem(3, 2, &stream(0)).unwrap();
        let Representation::Rem(t) = m.representation() else {
            panic!()
        };
        let h = t.to_classical().unwrap().1.unwrap();
        assert!(h.iter().all(|v| v * v == *v));
        assert_eq!(m.h_norm().unwrap(), 1.0);
        assert_eq!(m.double_commutator_norm().unwrap(), 0.0);
    }

    #[test]
    fn heisenberg_two_sites_singlet_triplet() {
        let m = build_heisenberg(2, &[1.0], 0.5).unwrap();
        let e = unperturbed_spectrum(&m).unwrap();
        for (a, b) in e.iter().zip([-0.75, 0.25, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(m.c_h(), 0.5);
        assert!(m.disorder().is_none());
    }

    #[test]
    fn heisenberg_rejects_bad_input() {
        assert!(build_heisenberg(3, &[1.0], 0.5).is_err());
        assert!(build_heisenberg(4, &[1.0, 0.5], 0.5).is_err());
        assert!(build_heisenberg(4, &[-1.0], 0.5).is_err());
        assert!(build_heisenberg(4, &[1.0, 0.0, 0.2], 0.5).is_ok());
        assert!(matches!(
            build_heisenberg(14, &[1.0], 0.5),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn heisenberg_symmetric_state_has_no_staggered_moment() {
        let m = build_heisenberg(4, &[1.0], 0.5).unwrap();
        let p = assemble(&m, PerturbationParams::plain(0.0)).unwrap();
        let t = p.thermal(1.0, 0.0).unwrap();
        assert!(t.h_mean.abs() < 1e-10);
        assert!(t.h_second > 0.0);
        let t = p.thermal(1.0, 0.3).unwrap();
        assert!(t.h_mean > 0.0);
    }

    #[test]
    fn heisenberg_conserves_total_sz() {
        let m = build_heisenberg(6, &[1.0, 0.0, 0.3], 0.5).unwrap();
        let space = HilbertSpace::new(6, SpinMagnitude::half()).unwrap();
        let s = local_spin(0.5).unwrap();
        let mut total = CMatrix::zeros(64, 64);
        for i in 0..6 {
            total += embed_product(&space, &[(i, &s.sz)]).unwrap();
        }
        let c = crate::spin_algebra::commutator(m.h0().unwrap().matrix(), &total).unwrap();
        assert!(max_abs(&c) <= 1e-11);
    }

    #[test]
    fn diagonal_double_commutator_matches_dense_route() {
        let m = build_heisenberg(4, &[1.0], 0.5).unwrap();
        let fast = m.double_commutator_norm().unwrap();
        let (h0, h) = (m.h0().unwrap(), m.h().unwrap());
        let inner = crate::spin_algebra::commutator(h0.matrix(), h.matrix()).unwrap();
        let outer = crate::spin_algebra::commutator(h.matrix(), &inner).unwrap();
        let dense = operator_norm(&HermitianOperator::new(outer).unwrap()).unwrap();
        assert!(fast > 0.0);
        assert!((fast - dense).abs() < 1e-13);
    }

    #[test]
    fn staggered_norm_bound() {
        for (l, s) in [(4, 0.5), (2, 1.0), (4, 1.0)] {
            let m = build_heisenberg(l, &[1.0], s).unwrap();
            assert!(m.h_norm().unwrap() <= m.c_h() + 1e-10);
        }
    }

    #[test]
    fn ea_overlap_norm_is_s_squared() {
        let m = build_ea(
            &EaParams {
                length: 2,
                ..EaParams::default()
            },
            &stream(0),
        )
        .unwrap();
        assert!((m.h_norm().unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(m.c_h(), 0.25);
    }

    #[test]
    fn ea_is_reproducible() {
        let params = EaParams::default();
        let a = build_ea(&params, &stream(5)).unwrap();
        let b = build_ea(&params, &stream(5)).unwrap();
        assert_eq!(a.h0().unwrap(), b.h0().unwrap());
        let pa = assemble(&a, PerturbationParams::plain(0.0)).unwrap();
        let pb = assemble(&b, PerturbationParams::plain(0.0)).unwrap();
        let x = pa.h_mean(1.0, 0.0).unwrap();
        let y = pb.h_mean(1.0, 0.0).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn ea_replica_swap_leaves_spectrum_fixed() {
        let params = EaParams {
            length: 2,
            ..EaParams::default()
        };
        let m = build_ea(&params, &stream(2)).unwrap();
        let h0 = m.h0().unwrap();
        let space = HilbertSpace::new(4, SpinMagnitude::half()).unwrap();
        let dim = space.total_dim();
        // permutation swapping replica blocks (sites 0,1) <-> (2,3)
        let perm: Vec<usize> = (0..dim).map(|s| ((s & 0b11) << 2) | (s >> 2)).collect();
        let swapped = CMatrix::from_fn(dim, dim, |i, j| h0.matrix()[(perm[i], perm[j])]);
        assert!(max_abs(&(&swapped - h0.matrix())) < 1e-14);
        let e1 = unperturbed_spectrum(&m).unwrap();
        let e2 = decompose(&HermitianOperator::new(swapped).unwrap())
            .unwrap()
            .eigenvalues()
            .to_vec();
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ea_ising_limit_is_diagonal() {
        let params = EaParams {
            length: 2,
            k: [0.0, 0.0, 0.7],
            ..EaParams::default()
        };
        let m = build_ea(&params, &stream(1)).unwrap();
        assert!(m.h0().unwrap().real_diagonal().is_some());
        assert!(m.double_commutator_norm().unwrap() < 1e-14);
    }

    #[test]
    fn ea_single_site_field_variant() {
        let params = EaParams {
            length: 3,
            base_set: 1,
            ..EaParams::default()
        };
        let m = build_ea(&params, &stream(1)).unwrap();
        assert!(!m.h0().unwrap().is_real());
        assert!(build_ea(
            &EaParams {
                base_set: 3,
                ..params
            },
            &stream(1)
        )
        .is_err());
    }

    #[test]
    fn coefficient_arithmetic() {
        let m = build_heisenberg(4, &[1.0], 0.5).unwrap();
        let p = assemble(
            &m,
            PerturbationParams {
                lambda: 0.0,
                mu: 1.0,
                alpha: 0.5,
                g: 0.3,
            },
        )
        .unwrap();
        assert!((p.coefficient(0.2) - (4.0 * 0.2 + 2.0 * 0.3)).abs() < 1e-15);
        let bad = PerturbationParams {
            lambda: 0.0,
            mu: 1.0,
            alpha: 1.0,
            g: 0.0,
        };
        assert!(assemble(&m, bad).is_err());
        let off = assemble(&m, PerturbationParams::plain(0.3)).unwrap();
        let direct = m.h0().unwrap().add_scaled(-1.2, m.h().unwrap()).unwrap();
        assert_eq!(off.hamiltonian(0.3).unwrap(), direct);
    }
}
