//! Finite-N reference dynamics.
//!
//! The environment Hamiltonian `M_N` is diagonal with a fixed spectrum and the
//! coupling `W_N` is drawn from the GUE. Evolution is exact: every draw is
//! diagonalised once and then propagated to any number of times.
//!
//! Layouts are qubit-outer: index `a * N + j` for qubit basis state `a` and
//! environment level `j`, with the two-qubit basis `|++>, |+->, |-+>, |-->`.
//!
//! For the common environment the singlet `(|+-> - |-+>)/sqrt2` is a dark
//! state, so only the 3N-dimensional triplet sector is diagonalised. The
//! full 4N matrix is still available through [`build_hamiltonian`] and
//! [`Propagator::dense`] for cross-checks.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use faer::{c64, Mat, Side};
use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bvh::BvhChannel;
use crate::dos::DensityOfStates;
use crate::error::{invalid, Error, Result};
use crate::quantifiers;
use crate::states::{Mat4, TwoQubitState};
use crate::C64;

/// Default memory budget for dense matrices, in bytes.
pub const DEFAULT_BUDGET_BYTES: u64 = 2 << 30;

/// Complex matrices of this many dimension-squared entries are alive at once
/// during one diagonalisation: the matrix, its eigenvectors and workspace.
const DENSE_COPIES: u64 = 3;

/// Qubit energies `<a|H_S|a> / s` in the product basis.
const HS_DIAG: [f64; 4] = [2.0, 0.0, 0.0, -2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Both qubits couple to one environment.
    Common,
    /// Each qubit has its own environment and coupling matrix.
    Independent,
    /// Only the second qubit is coupled.
    FreeAncilla,
}

impl Topology {
    pub fn label(self) -> &'static str {
        match self {
            Topology::Common => "common",
            Topology::Independent => "independent",
            Topology::FreeAncilla => "free-ancilla",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(Topology::Common),
            "independent" => Ok(Topology::Independent),
            "free-ancilla" | "free" => Ok(Topology::FreeAncilla),
            _ => Err(invalid(format!(
                "unknown topology '{s}' (expected common, independent or free-ancilla)"
            ))),
        }
    }
}

/// How an environment spectrum is generated from a density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvSampling {
    /// Independent draws from the density, sorted.
    Iid,
    /// The deterministic midpoint quantiles `F^{-1}((j + 1/2) / N)`.
    Quantile,
}

impl std::str::FromStr for EnvSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(EnvSampling::Iid),
            "quantile" => Ok(EnvSampling::Quantile),
            _ => Err(invalid(format!(
                "unknown env sampling '{s}' (expected iid or quantile)"
            ))),
        }
    }
}

impl EnvSampling {
    pub fn label(self) -> &'static str {
        match self {
            EnvSampling::Iid => "iid",
            EnvSampling::Quantile => "quantile",
        }
    }
}

/// Cumulative distribution of a normalisable density.
pub fn env_cdf(dos: &DensityOfStates, x: f64) -> Result<f64> {
    match dos {
        DensityOfStates::Lorentzian { gamma } => Ok(0.5 + (x / gamma).atan() / PI),
        DensityOfStates::Tabulated(t) => {
            let (g, v) = (t.grid(), t.values());
            if x <= g[0] {
                return Ok(0.0);
            }
            let mut acc = 0.0;
            for i in 0..g.len() - 1 {
                let h = g[i + 1] - g[i];
                if x < g[i + 1] {
                    let d = x - g[i];
                    let slope = (v[i + 1] - v[i]) / h;
                    return Ok(acc + v[i] * d + 0.5 * slope * d * d);
                }
                acc += 0.5 * h * (v[i] + v[i + 1]);
            }
            Ok(1.0)
        }
        DensityOfStates::Flat { .. } => Err(invalid(
            "flat density is not normalisable; supply an explicit environment spectrum",
        )),
    }
}

/// Inverse of [`env_cdf`] for `u` in `(0, 1)`.
pub fn env_quantile(dos: &DensityOfStates, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid(format!("quantile level {u} not in (0, 1)")));
    }
    match dos {
        DensityOfStates::Lorentzian { gamma } => Ok(gamma * (PI * (u - 0.5)).tan()),
        DensityOfStates::Tabulated(t) => {
            let (g, v) = (t.grid(), t.values());
            let mut acc = 0.0;
            for i in 0..g.len() - 1 {
                let h = g[i + 1] - g[i];
                let mass = 0.5 * h * (v[i] + v[i + 1]);
                if u <= acc + mass || i == g.len() - 2 {
                    let r = (u - acc).clamp(0.0, mass);
                    let slope = (v[i + 1] - v[i]) / h;
                    let disc = (v[i] * v[i] + 2.0 * slope * r).max(0.0);
                    let den = v[i] + disc.sqrt();
                    let d = if den > 0.0 { 2.0 * r / den } else { 0.0 };
                    return Ok(g[i] + d.min(h));
                }
                acc += mass;
            }
            unreachable!("tabulated grid has at least two points")
        }
        DensityOfStates::Flat { .. } => Err(invalid(
            "flat density is not normalisable; supply an explicit environment spectrum",
        )),
    }
}

/// A sorted environment spectrum of length `n` drawn from `dos`.
pub fn sample_env_spectrum(
    dos: &DensityOfStates,
    n: usize,
    sampling: EnvSampling,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("environment dimension must be positive"));
    }
    let mut out = match sampling {
        EnvSampling::Quantile => (0..n)
            .map(|j| env_quantile(dos, (j as f64 + 0.5) / n as f64))
            .collect::<Result<Vec<_>>>()?,
        EnvSampling::Iid => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            // stream 0 is reserved for the spectrum, draws start at 1
            rng.set_stream(0);
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                    env_quantile(dos, u)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Kolmogorov-Smirnov distance between the empirical measure of a sorted
/// spectrum and `dos`.
pub fn ks_distance(spectrum: &[f64], dos: &DensityOfStates) -> Result<f64> {
    let n = spectrum.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in spectrum.iter().enumerate() {
        let f = env_cdf(dos, x)?;
        worst = worst
            .max((f - i as f64 / n).abs())
            .max((f - (i + 1) as f64 / n).abs());
    }
    Ok(worst)
}

/// `n x n` GUE matrix with `E|W_jk|^2 = (1 + delta_jk) / n`.
pub fn sample_gue<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Mat<c64>> {
    if n < 2 {
        return Err(invalid(format!("GUE dimension must be at least 2, got {n}")));
    }
    let off = (2.0 * n as f64).sqrt().recip();
    let diag = (2.0 / n as f64).sqrt();
    let mut w = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        w[(j, j)] = c64::new(d * diag, 0.0);
        for k in j + 1..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let z = c64::new(a * off, b * off);
            w[(j, k)] = z;
            w[(k, j)] = z.conj();
        }
    }
    Ok(w)
}

/// [`sample_gue`] from a fresh generator.
pub fn sample_gue_seeded(n: usize, seed: u64) -> Result<Mat<c64>> {
    sample_gue(n, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Frame in which reduced states are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Picture {
    Schrodinger,
    /// Conjugated by `exp(+i t H_S)`, the frame of the weak-coupling channel.
    Interaction,
}

/// A finite-N model with a fixed environment spectrum.
#[derive(Clone, Debug)]
pub struct FiniteNModel {
    topology: Topology,
    env_spectrum: Vec<f64>,
    s: f64,
    v: f64,
    target_energy: f64,
    seed: u64,
    initial: TwoQubitState,
    budget_bytes: u64,
}

impl FiniteNModel {
    /// Defaults: `s = 1`, `v = 0.1`, `E = 0`, seed 0, 2 GiB budget.
    pub fn new(topology: Topology, mut env_spectrum: Vec<f64>, initial: TwoQubitState) -> Result<Self> {
        if env_spectrum.len() < 2 {
            return Err(invalid("environment spectrum needs at least two levels"));
        }
        if env_spectrum.iter().any(|x| !x.is_finite()) {
            return Err(invalid("environment spectrum must be finite"));
        }
        env_spectrum.sort_by(f64::total_cmp);
        Ok(Self {
            topology,
            env_spectrum,
            s: 1.0,
            v: 0.1,
            target_energy: 0.0,
            seed: 0,
            initial,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        })
    }

    pub fn with_s(mut self, s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(invalid(format!("splitting s = {s} must be finite")));
        }
        self.s = s;
        Ok(self)
    }

    pub fn with_v(mut self, v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(invalid(format!("coupling v = {v} must be finite")));
        }
        self.v = v;
        Ok(self)
    }

    pub fn with_target_energy(mut self, e: f64) -> Result<Self> {
        if !e.is_finite() {
            return Err(invalid(format!("target energy {e} must be finite")));
        }
        self.target_energy = e;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.budget_bytes = bytes;
        self
    }

    pub fn with_initial(mut self, initial: TwoQubitState) -> Self {
        self.initial = initial;
        self
    }

    /// Same parameters on a new spectrum.
    pub fn with_env_spectrum(&self, env_spectrum: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(self.topology, env_spectrum, self.initial.clone())?;
        m.s = self.s;
        m.v = self.v;
        m.target_energy = self.target_energy;
        m.seed = self.seed;
        m.budget_bytes = self.budget_bytes;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.env_spectrum.len()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn env_spectrum(&self) -> &[f64] {
        &self.env_spectrum
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn target_energy(&self) -> f64 {
        self.target_energy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &TwoQubitState {
        &self.initial
    }

    pub fn budget_bytes(&self) -> u64 {
        self.budget_bytes
    }

    /// Level nearest the target energy; ties go to the lower index.
    pub fn env_index(&self) -> usize {
        let e = self.target_energy;
        let mut best = 0;
        for (j, x) in self.env_spectrum.iter().enumerate() {
            if (x - e).abs() < (self.env_spectrum[best] - e).abs() {
                best = j;
            }
        }
        best
    }

    pub fn env_energy(&self) -> f64 {
        self.env_spectrum[self.env_index()]
    }

    /// Dimension of the matrix diagonalised per draw.
    pub fn working_dim(&self) -> usize {
        match self.topology {
            Topology::Common => 3 * self.n(),
            Topology::Independent | Topology::FreeAncilla => 2 * self.n(),
        }
    }

    /// Refuses work whose dense matrices would exceed the budget.
    pub fn check_budget(&self, dim: usize, concurrent: usize) -> Result<()> {
        let d = dim as u64;
        let required = d
            .saturating_mul(d)
            .saturating_mul(16 * DENSE_COPIES)
            .saturating_mul(concurrent.max(1) as u64);
        if required > self.budget_bytes {
            return Err(Error::Budget {
                required,
                budget: self.budget_bytes,
            });
        }
        Ok(())
    }

    /// Generator of draw `draw`, independent of scheduling.
    pub fn draw_rng(&self, draw: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(draw + 1);
        rng
    }

    /// The coupling matrices of one draw: one for common and free-ancilla,
    /// `W_A` then `W_B` for independent.
    pub fn sample_couplings(&self, draw: u64) -> Result<Vec<Mat<c64>>> {
        let mut rng = self.draw_rng(draw);
        let k = if self.topology == Topology::Independent {
            2
        } else {
            1
        };
        (0..k).map(|_| sample_gue(self.n(), &mut rng)).collect()
    }
}

/// A dense Hamiltonian, or the two commuting factors of the independent model.
#[derive(Clone, Debug)]
pub enum Hamiltonian {
    Full(Mat<c64>),
    Product { a: Mat<c64>, b: Mat<c64> },
}

/// `s sigma_z (x) 1 + 1 (x) M + v sigma_x (x) W` on `2N`.
fn single_qubit_hamiltonian(s: f64, v: f64, env: &[f64], w: &Mat<c64>) -> Mat<c64> {
    let n = env.len();
    let mut h = Mat::<c64>::zeros(2 * n, 2 * n);
    for (a, sign) in [(0, 1.0), (1, -1.0)] {
        for j in 0..n {
            h[(a * n + j, a * n + j)] = c64::new(sign * s + env[j], 0.0);
        }
    }
    for j in 0..n {
        for k in 0..n {
            let x = w[(j, k)] * v;
            h[(j, n + k)] = x;
            h[(n + j, k)] = x;
        }
    }
    h
}

/// Dense Hamiltonian of the model for given coupling matrices.
pub fn assemble_hamiltonian(model: &FiniteNModel, w: &[Mat<c64>]) -> Result<Hamiltonian> {
    let n = model.n();
    let need = if model.topology == Topology::Independent {
        2
    } else {
        1
    };
    if w.len() != need || w.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(invalid(format!(
            "{} model needs {need} coupling matrices of size {n}",
            model.topology.label()
        )));
    }
    let (s, v, env) = (model.s, model.v, &model.env_spectrum);
    match model.topology {
        Topology::Independent => {
            model.check_budget(2 * n, 2)?;
            Ok(Hamiltonian::Product {
                a: single_qubit_hamiltonian(s, v, env, &w[0]),
                b: single_qubit_hamiltonian(s, v, env, &w[1]),
            })
        }
        Topology::Common | Topology::FreeAncilla => {
            model.check_budget(4 * n, 1)?;
            // qubit-space coupling pattern: which (a, b) pairs carry v W
            let flips_a = |a: usize, b: usize| a ^ b == 2;
            let flips_b = |a: usize, b: usize| a ^ b == 1;
            let common = model.topology == Topology::Common;
            let mut h = Mat::<c64>::zeros(4 * n, 4 * n);
            for a in 0..4 {
                for j in 0..n {
                    h[(a * n + j, a * n + j)] = c64::new(s * HS_DIAG[a] + env[j], 0.0);
                }
                for b in 0..4 {
                    if !(flips_b(a, b) || (common && flips_a(a, b))) {
                        continue;
                    }
                    for j in 0..n {
                        for k in 0..n {
                            h[(a * n + j, b * n + k)] = w[0][(j, k)] * v;
                        }
                    }
                }
            }
            Ok(Hamiltonian::Full(h))
        }
    }
}

/// Samples draw `draw` and assembles its Hamiltonian.
pub fn build_hamiltonian(model: &FiniteNModel, draw: u64) -> Result<Hamiltonian> {
    assemble_hamiltonian(model, &model.sample_couplings(draw)?)
}

/// Eigendecomposition of one Hermitian block.
#[derive(Clone, Debug)]
struct Spectral {
    values: Vec<f64>,
    vectors: Mat<c64>,
}

impl Spectral {
    fn new(h: &Mat<c64>) -> Result<Self> {
        let e = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let values = e.S().column_vector().iter().map(|x| x.re).collect();
        Ok(Self {
            values,
            vectors: e.U().to_owned(),
        })
    }

    /// `exp(-i t H) e_r` for each row index `r` and time `t`, as columns
    /// ordered time-major.
    fn propagate(&self, rows: &[usize], times: &[f64]) -> Mat<c64> {
        let dim = self.values.len();
        let mut c = Mat::<c64>::zeros(dim, rows.len() * times.len());
        for (it, &t) in times.iter().enumerate() {
            for (ir, &r) in rows.iter().enumerate() {
                let col = it * rows.len() + ir;
                for m in 0..dim {
                    let ph = c64::from_polar(1.0, -self.values[m] * t);
                    c[(m, col)] = ph * self.vectors[(r, m)].conj();
                }
            }
        }
        &self.vectors * &c
    }
}

/// `X[c][d] = sum_ab rho_ab sum_j phi_a[c N + j] conj(phi_b[d N + j])` for
/// `q`-level systems; `col(a)` gives the column of `phi_a` in `phis`.
fn partial_trace<const Q: usize>(
    phis: &Mat<c64>,
    col: impl Fn(usize) -> usize,
    rho: &[[C64; Q]; Q],
    n: usize,
) -> [[C64; Q]; Q] {
    let mut g = vec![C64::new(0.0, 0.0); Q * Q * Q * Q];
    for a in 0..Q {
        for b in 0..Q {
            if rho[a][b] == C64::new(0.0, 0.0) {
                continue;
            }
            let (ca, cb) = (col(a), col(b));
            for c in 0..Q {
                for d in 0..Q {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..n {
                        acc += phis[(c * n + j, ca)] * phis[(d * n + j, cb)].conj();
                    }
                    g[((a * Q + b) * Q + c) * Q + d] = acc;
                }
            }
        }
    }
    let mut x = [[C64::new(0.0, 0.0); Q]; Q];
    for a in 0..Q {
        for b in 0..Q {
            if rho[a][b] == C64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..Q {
                for d in 0..Q {
                    x[c][d] += rho[a][b] * g[((a * Q + b) * Q + c) * Q + d];
                }
            }
        }
    }
    x
}

fn to_array(m: &Mat4) -> [[C64; 4]; 4] {
    let mut out = [[C64::new(0.0, 0.0); 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    out
}

/// Product basis to `(t1, t0, t-1, singlet)`, as columns.
fn triplet_basis() -> Mat4 {
    let r = C64::new(FRAC_1_SQRT_2, 0.0);
    let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    Mat4::new(o, z, z, z, z, r, z, r, z, r, z, -r, z, z, o, z)
}

/// One qubit's share of a product propagation.
#[derive(Clone, Debug)]
enum QubitPart {
    Free,
    Coupled(Spectral),
}

#[derive(Clone, Debug)]
enum Kind {
    Triplet(Spectral),
    Dense(Spectral),
    Product(QubitPart, QubitPart),
}

/// A diagonalised draw, ready to be evaluated at any time.
#[derive(Clone, Debug)]
pub struct Propagator {
    kind: Kind,
    n: usize,
    k: usize,
    s: f64,
    e_k: f64,
    rho0: Mat4,
}

impl Propagator {
    /// Fastest exact path for the model's topology.
    pub fn new(model: &FiniteNModel, draw: u64) -> Result<Self> {
        let n = model.n();
        let w = model.sample_couplings(draw)?;
        let kind = match model.topology {
            Topology::Common => {
                model.check_budget(3 * n, 1)?;
                let mut h = Mat::<c64>::zeros(3 * n, 3 * n);
                let energies = [2.0 * model.s, 0.0, -2.0 * model.s];
                for (c, e) in energies.iter().enumerate() {
                    for j in 0..n {
                        h[(c * n + j, c * n + j)] = c64::new(e + model.env_spectrum[j], 0.0);
                    }
                }
                let g = model.v * SQRT_2;
                for (a, b) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
                    for j in 0..n {
                        for k in 0..n {
                            h[(a * n + j, b * n + k)] = w[0][(j, k)] * g;
                        }
                    }
                }
                Kind::Triplet(Spectral::new(&h)?)
            }
            Topology::Independent => {
                model.check_budget(2 * n, 1)?;
                let env = &model.env_spectrum;
                let a = single_qubit_hamiltonian(model.s, model.v, env, &w[0]);
                let b = single_qubit_hamiltonian(model.s, model.v, env, &w[1]);
                Kind::Product(
                    QubitPart::Coupled(Spectral::new(&a)?),
                    QubitPart::Coupled(Spectral::new(&b)?),
                )
            }
            Topology::FreeAncilla => {
                model.check_budget(2 * n, 1)?;
                let b = single_qubit_hamiltonian(model.s, model.v, &model.env_spectrum, &w[0]);
                Kind::Product(QubitPart::Free, QubitPart::Coupled(Spectral::new(&b)?))
            }
        };
        Ok(Self::with_kind(model, kind))
    }

    /// Diagonalises the full `4N` Hamiltonian (common and free-ancilla only).
    pub fn dense(model: &FiniteNModel, draw: u64) -> Result<Self> {
        match build_hamiltonian(model, draw)? {
            Hamiltonian::Full(h) => Ok(Self::with_kind(model, Kind::Dense(Spectral::new(&h)?))),
            Hamiltonian::Product { .. } => Err(invalid(
                "the independent model has no single dense Hamiltonian; use Propagator::new",
            )),
        }
    }

    fn with_kind(model: &FiniteNModel, kind: Kind) -> Self {
        Self {
            kind,
            n: model.n(),
            k: model.env_index(),
            s: model.s,
            e_k: model.env_energy(),
            rho0: *model.initial.matrix(),
        }
    }

    /// Reduced two-qubit matrices at `times`, not validated.
    pub fn matrices(&self, times: &[f64], picture: Picture) -> Result<Vec<Mat4>> {
        if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(invalid("times must be finite and nonnegative"));
        }
        let (n, k) = (self.n, self.k);
        let mut out = match &self.kind {
            Kind::Dense(sp) => {
                let rows: Vec<usize> = (0..4).map(|a| a * n + k).collect();
                let phis = sp.propagate(&rows, times);
                let rho = to_array(&self.rho0);
                (0..times.len())
                    .map(|it| from_array(&partial_trace::<4>(&phis, |a| it * 4 + a, &rho, n)))
                    .collect::<Vec<_>>()
            }
            Kind::Triplet(sp) => {
                let b = triplet_basis();
                let rho = to_array(&(b.adjoint() * self.rho0 * b));
                let rows: Vec<usize> = (0..3).map(|c| c * n + k).collect();
                let trip = sp.propagate(&rows, times);
                // embed into four slots, the singlet only picks up a phase
                let mut phis = Mat::<c64>::zeros(4 * n, 4 * times.len());
                for (it, &t) in times.iter().enumerate() {
                    for a in 0..3 {
                        for r in 0..3 * n {
                            phis[(r, it * 4 + a)] = trip[(r, it * 3 + a)];
                        }
                    }
                    phis[(3 * n + k, it * 4 + 3)] = c64::from_polar(1.0, -self.e_k * t);
                }
                (0..times.len())
                    .map(|it| {
                        let x = from_array(&partial_trace::<4>(&phis, |a| it * 4 + a, &rho, n));
                        b * x * b.adjoint()
                    })
                    .collect()
            }
            Kind::Product(pa, pb) => {
                let ka = self.qubit_kernels(pa, times);
                let kb = self.qubit_kernels(pb, times);
                (0..times.len())
                    .map(|it| combine(&self.rho0, &ka[it], &kb[it]))
                    .collect()
            }
        };
        if picture == Picture::Interaction {
            for (m, &t) in out.iter_mut().zip(times) {
                *m = to_interaction(m, self.s, t);
            }
        }
        Ok(out)
    }

    /// Validated reduced states at `times`.
    pub fn states(&self, times: &[f64], picture: Picture) -> Result<Vec<TwoQubitState>> {
        self.matrices(times, picture)?
            .into_iter()
            .map(|m| TwoQubitState::new(hermitize(&m)))
            .collect()
    }

    /// `K_{cc'}[x][x'] = Tr_E U|c,k><c',k|U^dag` per time, for one qubit.
    fn qubit_kernels(&self, part: &QubitPart, times: &[f64]) -> Vec<[[[[C64; 2]; 2]; 2]; 2]> {
        let zero = C64::new(0.0, 0.0);
        match part {
            QubitPart::Free => times
                .iter()
                .map(|&t| {
                    let mut kern = [[[[zero; 2]; 2]; 2]; 2];
                    let e = [-self.s * t, self.s * t];
                    for c in 0..2 {
                        for cp in 0..2 {
                            kern[c][cp][c][cp] = C64::from_polar(1.0, e[c] - e[cp]);
                        }
                    }
                    kern
                })
                .collect(),
            QubitPart::Coupled(sp) => {
                let (n, k) = (self.n, self.k);
                let phis = sp.propagate(&[k, n + k], times);
                (0..times.len())
                    .map(|it| {
                        let mut kern = [[[[zero; 2]; 2]; 2]; 2];
                        for (c, row) in kern.iter_mut().enumerate() {
                            for (cp, blk) in row.iter_mut().enumerate() {
                                let mut unit = [[zero; 2]; 2];
                                unit[c][cp] = C64::new(1.0, 0.0);
                                *blk = partial_trace::<2>(&phis, |a| it * 2 + a, &unit, n);
                            }
                        }
                        kern
                    })
                    .collect()
            }
        }
    }
}

type Kernel = [[[[C64; 2]; 2]; 2]; 2];

/// `rho(t)[(x y),(x' y')] = sum rho0[(c d),(c' d')] K^A_{cc'}[x][x'] K^B_{dd'}[y][y']`.
fn combine(rho0: &Mat4, ka: &Kernel, kb: &Kernel) -> Mat4 {
    let mut out = Mat4::zeros();
    for c in 0..2 {
        for d in 0..2 {
            for cp in 0..2 {
                for dp in 0..2 {
                    let r = rho0[(2 * c + d, 2 * cp + dp)];
                    if r == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for x in 0..2 {
                        for y in 0..2 {
                            for xp in 0..2 {
                                for yp in 0..2 {
                                    out[(2 * x + y, 2 * xp + yp)] += r * ka[c][cp][x][xp] * kb[d][dp][y][yp];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn from_array(x: &[[C64; 4]; 4]) -> Mat4 {
    Mat4::from_fn(|i, j| x[i][j])
}

fn hermitize(m: &Mat4) -> Mat4 {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `exp(+i t H_S) rho exp(-i t H_S)`.
pub fn to_interaction(m: &Mat4, s: f64, t: f64) -> Mat4 {
    Mat4::from_fn(|i, j| m[(i, j)] * C64::from_polar(1.0, s * t * (HS_DIAG[i] - HS_DIAG[j])))
}

/// Keeps only the X entries; the average of `rho` and `P rho P` with
/// `P = sigma_z (x) sigma_z`.
pub fn x_projection(m: &Mat4) -> Mat4 {
    Mat4::from_fn(|i, j| {
        if i == j || i + j == 3 {
            m[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Reduced state of draw `draw` at fast time `t`.
pub fn reduced_state(model: &FiniteNModel, draw: u64, t: f64) -> Result<TwoQubitState> {
    let mut v = reduced_states(model, draw, &[t], Picture::Schrodinger)?;
    Ok(v.remove(0))
}

/// Reduced states of draw `draw` at several times from one diagonalisation.
pub fn reduced_states(
    model: &FiniteNModel,
    draw: u64,
    times: &[f64],
    picture: Picture,
) -> Result<Vec<TwoQubitState>> {
    Propagator::new(model, draw)?.states(times, picture)
}

/// Entrywise sample statistics over draws at one time.
#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub mean_state: TwoQubitState,
    /// Unbiased sample variance of each complex entry, `E|x - Ex|^2`.
    pub entry_variances: Matrix4<f64>,
    /// Standard error of each mean entry.
    pub stderr: Matrix4<f64>,
    pub draws: usize,
    pub time: f64,
}

impl EnsembleStats {
    pub fn max_variance(&self) -> f64 {
        self.entry_variances.max()
    }

    pub fn total_variance(&self) -> f64 {
        self.entry_variances.sum()
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.max()
    }
}

fn pairwise_sum(xs: &[Mat4]) -> Mat4 {
    match xs.len() {
        0 => Mat4::zeros(),
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn pairwise_sum_real(xs: &[Matrix4<f64>]) -> Matrix4<f64> {
    match xs.len() {
        0 => Matrix4::zeros(),
        1 => xs[0],
        n => pairwise_sum_real(&xs[..n / 2]) + pairwise_sum_real(&xs[n / 2..]),
    }
}

fn stats_of(samples: &[Mat4], time: f64) -> EnsembleStats {
    let d = samples.len() as f64;
    let mean = pairwise_sum(samples) / C64::new(d, 0.0);
    let sq: Vec<Matrix4<f64>> = samples.iter().map(|x| (x - mean).map(|z| z.norm_sqr())).collect();
    let var = pairwise_sum_real(&sq) / (d - 1.0);
    EnsembleStats {
        mean_state: TwoQubitState::from_matrix_unchecked(hermitize(&mean)),
        stderr: var.map(|x| (x / d).sqrt()),
        entry_variances: var,
        draws: samples.len(),
        time,
    }
}

/// Statistics at time `t` over draws `0..draws`.
pub fn ensemble(model: &FiniteNModel, draws: usize, t: f64) -> Result<EnsembleStats> {
    Ok(ensemble_series(model, draws, &[t], Picture::Schrodinger)?.remove(0))
}

/// Statistics at each of `times`, one diagonalisation per draw.
pub fn ensemble_series(
    model: &FiniteNModel,
    draws: usize,
    times: &[f64],
    picture: Picture,
) -> Result<Vec<EnsembleStats>> {
    if draws < 2 {
        return Err(invalid(format!("need at least 2 draws, got {draws}")));
    }
    let concurrent = rayon::current_num_threads().min(draws);
    model.check_budget(model.working_dim(), concurrent)?;
    let per_draw: Vec<Vec<Mat4>> = (0..draws as u64)
        .into_par_iter()
        .map(|d| Propagator::new(model, d)?.matrices(times, picture))
        .collect::<Result<_>>()?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(it, &t)| {
            let col: Vec<Mat4> = per_draw.iter().map(|row| row[it]).collect();
            stats_of(&col, t)
        })
        .collect())
}

/// `4^4 (v_A + v_B)^2 t^2 / N` for identical couplings.
pub fn self_averaging_bound(v: f64, t: f64, n: usize) -> f64 {
    256.0 * (2.0 * v).powi(2) * t * t / n as f64
}

/// Least-squares fit of `y = c N^{-p}` on log-log axes; returns `(p, c)`.
pub fn power_law_fit(ns: &[usize], ys: &[f64]) -> Result<(f64, f64)> {
    if ns.len() != ys.len() || ns.len() < 2 {
        return Err(invalid("power-law fit needs at least two points"));
    }
    if ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::IllConditioned(
            "power-law fit needs positive values".into(),
        ));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ls.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::IllConditioned("power-law fit needs distinct N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((-slope, (my - slope * mx).exp()))
}

#[derive(Clone, Debug)]
pub struct VariancePoint {
    pub n: usize,
    pub stats: EnsembleStats,
    pub bound: f64,
}

impl VariancePoint {
    pub fn within_bound(&self) -> bool {
        self.stats.max_variance() <= self.bound
    }
}

#[derive(Clone, Debug)]
pub struct VarianceScan {
    pub points: Vec<VariancePoint>,
    /// Fitted `p` in `total variance ~ N^{-p}`.
    pub exponent: f64,
    pub prefactor: f64,
}

/// Ensemble variances at time `t` for each `N`, each with a fresh spectrum
/// drawn from `dos`.
pub fn variance_scan(
    base: &FiniteNModel,
    dos: &DensityOfStates,
    sampling: EnvSampling,
    n_list: &[usize],
    draws: usize,
    t: f64,
) -> Result<VarianceScan> {
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let model = base.with_env_spectrum(sample_env_spectrum(dos, n, sampling, base.seed)?)?;
        let stats = ensemble(&model, draws, t)?;
        points.push(VariancePoint {
            n,
            bound: self_averaging_bound(base.v, t, n),
            stats,
        });
    }
    let totals: Vec<f64> = points.iter().map(|p| p.stats.total_variance()).collect();
    let (exponent, prefactor) = power_law_fit(n_list, &totals)?;
    Ok(VarianceScan {
        points,
        exponent,
        prefactor,
    })
}

/// Names of [`picture_invariants`], in order.
pub const INVARIANT_NAMES: [&str; 10] = [
    "rho11",
    "rho44",
    "A1",
    "A2",
    "|rho14|",
    "|A3|",
    "negativity",
    "concurrence",
    "discord",
    "entropy",
];

/// Quantities unaffected by local phase conventions.
pub fn picture_invariants(state: &TwoQubitState) -> Result<[f64; 10]> {
    let a = state.to_blocks()?.to_a_coords();
    let q = quantifiers::report(state)?;
    Ok([
        a.rho11,
        a.rho44,
        a.a1,
        a.a2,
        a.rho14.norm(),
        a.a3.norm(),
        q.negativity,
        q.concurrence,
        q.discord,
        q.entropy,
    ])
}

/// Oracle against channel at each slow time.
#[derive(Clone, Debug)]
pub struct BvhComparison {
    pub taus: Vec<f64>,
    /// Largest invariant deviation per `tau`.
    pub invariant_deviation: Vec<f64>,
    /// Largest entry deviation of the interaction-picture matrices per `tau`.
    pub entry_deviation: Vec<f64>,
    /// Largest standard error of the mean entries per `tau`.
    pub stderr: Vec<f64>,
    pub oracle: Vec<TwoQubitState>,
    pub analytic: Vec<TwoQubitState>,
    /// Frame the oracle matrices were brought into.
    pub alignment: &'static str,
}

impl BvhComparison {
    pub fn max_invariant_deviation(&self) -> f64 {
        self.invariant_deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_entry_deviation(&self) -> f64 {
        self.entry_deviation.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the ensemble mean at `t = tau / v^2` with the channel.
///
/// The mean is projected onto X form before the invariants are taken; the
/// dropped entries average to zero and carry only sampling noise.
pub fn bvh_compare(
    model: &FiniteNModel,
    channel: &BvhChannel,
    draws: usize,
    taus: &[f64],
) -> Result<BvhComparison> {
    if model.topology != Topology::Common {
        return Err(invalid(format!(
            "channel comparison needs the common topology, got {}",
            model.topology.label()
        )));
    }
    if model.v == 0.0 {
        return Err(invalid("channel comparison needs v != 0"));
    }
    let v2 = model.v * model.v;
    let times: Vec<f64> = taus.iter().map(|t| t / v2).collect();
    let stats = ensemble_series(model, draws, &times, Picture::Interaction)?;
    let rho0 = model.initial.clone();
    let mut out = BvhComparison {
        taus: taus.to_vec(),
        invariant_deviation: Vec::new(),
        entry_deviation: Vec::new(),
        stderr: Vec::new(),
        oracle: Vec::new(),
        analytic: Vec::new(),
        alignment: "exp(+i t H_S) rho exp(-i t H_S)",
    };
    for (st, &tau) in stats.iter().zip(taus) {
        let mc = TwoQubitState::from_matrix_unchecked(x_projection(st.mean_state.matrix()));
        let an = channel.evolve_state(&rho0, tau)?;
        let (a, b) = (picture_invariants(&mc)?, picture_invariants(&an)?);
        let dev = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        out.invariant_deviation.push(dev);
        out.entry_deviation.push(st.mean_state.max_abs_diff(&an));
        out.stderr.push(st.max_stderr());
        out.oracle.push(mc);
        out.analytic.push(an);
    }
    Ok(out)
}

/// `N^{-1} T`-traces of the two blocks of `(H_C - z)^{-1}` for one draw.
pub fn resolvent_traces(model: &FiniteNModel, draw: u64, zs: &[C64]) -> Result<Vec<(C64, C64)>> {
    if model.topology != Topology::Common {
        return Err(invalid("resolvent traces are defined for the common topology"));
    }
    if zs.iter().any(|z| z.im == 0.0 || !z.is_finite()) {
        return Err(invalid("resolvent needs finite z off the real axis"));
    }
    let Kind::Triplet(sp) = Propagator::new(model, draw)?.kind else {
        unreachable!("common topology propagates in the triplet sector")
    };
    let n = model.n();
    let dim = 3 * n;
    // weights of each eigenvector on the (t1, t-1) block and on t0
    let mut w_plus = vec![0.0; dim];
    let mut w_minus = vec![0.0; dim];
    for m in 0..dim {
        let (mut p, mut t0) = (C64::new(0.0, 0.0), 0.0);
        for j in 0..n {
            let x = sp.vectors[(j, m)];
            let y = sp.vectors[(2 * n + j, m)];
            p += (x + y) * (x + y).conj();
            t0 += sp.vectors[(n + j, m)].norm_sqr();
        }
        w_plus[m] = p.re;
        w_minus[m] = 2.0 * t0;
    }
    Ok(zs
        .iter()
        .map(|&z| {
            let mut gp = C64::new(0.0, 0.0);
            let mut gm = C64::new(0.0, 0.0);
            for m in 0..dim {
                let r = 1.0 / (sp.values[m] - z);
                gp += r * w_plus[m];
                gm += r * w_minus[m];
            }
            (gp / n as f64, gm / n as f64)
        })
        .collect())
}

/// Draw average of [`resolvent_traces`].
pub fn mean_resolvent_traces(model: &FiniteNModel, draws: usize, zs: &[C64]) -> Result<Vec<(C64, C64)>> {
    if draws == 0 {
        return Err(invalid("need at least one draw"));
    }
    let per: Vec<Vec<(C64, C64)>> = (0..draws as u64)
        .into_par_iter()
        .map(|d| resolvent_traces(model, d, zs))
        .collect::<Result<_>>()?;
    Ok((0..zs.len())
        .map(|i| {
            let (mut a, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for row in &per {
                a += row[i].0;
                b += row[i].1;
            }
            (a / draws as f64, b / draws as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::InitialCondition;
    use proptest::prelude::*;

    fn lor_model(topology: Topology, n: usize, v: f64, init: InitialCondition) -> FiniteNModel {
        let dos = DensityOfStates::lorentzian(0.8).unwrap();
        let env = sample_env_spectrum(&dos, n, EnvSampling::Quantile, 0).unwrap();
        FiniteNModel::new(topology, env, init.build().unwrap())
            .unwrap()
            .with_v(v)
            .unwrap()
            .with_target_energy(2.0)
            .unwrap()
            .with_seed(11)
    }

    fn hermitian_error(m: &Mat<c64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    fn eigenvalues(h: &Mat<c64>) -> Vec<f64> {
        Spectral::new(h).unwrap().values
    }

    #[test]
    fn gue_is_hermitian_with_unit_second_moment() {
        let mut acc = 0.0;
        for d in 0..100 {
            let w = sample_gue_seeded(200, d).unwrap();
            assert_eq!(hermitian_error(&w), 0.0);
            let mut tr = 0.0;
            for i in 0..200 {
                for j in 0..200 {
                    tr += w[(i, j)].norm_sqr();
                }
            }
            acc += tr / 200.0;
        }
        assert!((acc / 100.0 - 1.0).abs() < 0.05, "second moment {}", acc / 100.0);
    }

    #[test]
    fn gue_spectrum_follows_semicircle() {
        let n = 2000;
        let ev = eigenvalues(&sample_gue_seeded(n, 5).unwrap());
        // compare the empirical and semicircle distribution functions
        let cdf = |x: f64| {
            let x = x.clamp(-2.0, 2.0);
            0.5 + (x * (4.0 - x * x).sqrt() / 2.0 + 2.0 * (x / 2.0).asin()) / (2.0 * PI)
        };
        let mut worst: f64 = 0.0;
        for (i, &x) in ev.iter().enumerate() {
            worst = worst.max((cdf(x) - (i as f64 + 0.5) / n as f64).abs());
        }
        assert!(worst < 0.05, "sup deviation {worst}");
        // and a coarse histogram
        let bins = 20;
        let mut hist = vec![0.0; bins];
        for &x in &ev {
            let b = (((x + 2.0) / 4.0) * bins as f64).floor();
            if (0.0..bins as f64).contains(&b) {
                hist[b as usize] += 1.0;
            }
        }
        for (b, h) in hist.iter().enumerate() {
            let lo = -2.0 + 4.0 * b as f64 / bins as f64;
            let expect = cdf(lo + 4.0 / bins as f64) - cdf(lo);
            let got = h / n as f64;
            assert!(
                (got - expect).abs() * bins as f64 / 4.0 < 0.05,
                "bin {b}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn gue_is_deterministic() {
        let a = sample_gue_seeded(10, 3).unwrap();
        let b = sample_gue_seeded(10, 3).unwrap();
        assert_eq!(a, b);
        assert!(sample_gue_seeded(1, 0).is_err());
    }

    #[test]
    fn quantiles_invert_cdf() {
        let lor = DensityOfStates::lorentzian(0.3).unwrap();
        let grid: Vec<f64> = (0..=400).map(|i| -4.0 + 0.02 * i as f64).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|x| (-x * x).exp() * (1.0 + 0.3 * x).abs())
            .collect();
        let tab = DensityOfStates::Tabulated(crate::dos::Tabulated::new(grid, vals).unwrap());
        for dos in [lor, tab] {
            for u in [0.01, 0.2, 0.5, 0.77, 0.99] {
                let x = env_quantile(&dos, u).unwrap();
                assert!(
                    (env_cdf(&dos, x).unwrap() - u).abs() < 1e-12,
                    "{} {u}",
                    dos.label()
                );
            }
        }
        assert!(env_quantile(&DensityOfStates::flat(1.0).unwrap(), 0.5).is_err());
    }

    #[test]
    fn quantile_spectrum_has_minimal_ks_distance() {
        let dos = DensityOfStates::lorentzian(1.0).unwrap();
        let q = sample_env_spectrum(&dos, 500, EnvSampling::Quantile, 0).unwrap();
        assert!((ks_distance(&q, &dos).unwrap() - 0.5 / 500.0).abs() < 1e-12);
        let iid = sample_env_spectrum(&dos, 500, EnvSampling::Iid, 4).unwrap();
        assert!(iid.windows(2).all(|w| w[0] <= w[1]));
        assert!(ks_distance(&iid, &dos).unwrap() < 0.08);
    }

    #[test]
    fn nearest_level_breaks_ties_low() {
        let rho = InitialCondition::bell2(0.5).build().unwrap();
        let m = FiniteNModel::new(Topology::Common, vec![1.0, -1.0, 3.0], rho)
            .unwrap()
            .with_target_energy(2.0)
            .unwrap();
        assert_eq!(m.env_spectrum(), &[-1.0, 1.0, 3.0]);
        assert_eq!(m.env_index(), 1);
    }

    #[test]
    fn hand_assembled_two_level_environment() {
        let rho = InitialCondition::bell2(0.5).build().unwrap();
        let (s, v) = (0.7, 0.3);
        let env = vec![-0.4, 0.9];
        let m = FiniteNModel::new(Topology::Common, env.clone(), rho)
            .unwrap()
            .with_s(s)
            .unwrap()
            .with_v(v)
            .unwrap();
        let w = {
            let mut w = Mat::<c64>::zeros(2, 2);
            w[(0, 0)] = c64::new(0.01, 0.0);
            w[(1, 1)] = c64::new(-0.02, 0.0);
            w[(0, 1)] = c64::new(0.03, 0.04);
            w[(1, 0)] = c64::new(0.03, -0.04);
            w
        };
        let Hamiltonian::Full(h) = assemble_hamiltonian(&m, std::slice::from_ref(&w)).unwrap() else {
            panic!("expected a full matrix")
        };
        // sigma_x on either qubit connects product states differing in one bit
        let sz = [1.0, -1.0];
        for a in 0..4usize {
            for b in 0..4usize {
                for j in 0..2 {
                    for k in 0..2 {
                        let mut want = c64::new(0.0, 0.0);
                        if a == b && j == k {
                            want += s * (sz[a >> 1] + sz[a & 1]) + env[j];
                        }
                        if (a ^ b).count_ones() == 1 {
                            want += w[(j, k)] * v;
                        }
                        assert_eq!(h[(a * 2 + j, b * 2 + k)], want, "({a}{j},{b}{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn decoupled_spectrum_is_a_tensor_sum() {
        let s = 1.0;
        let m = lor_model(Topology::Common, 6, 0.0, InitialCondition::bell2(0.3));
        let Hamiltonian::Full(h) = build_hamiltonian(&m, 0).unwrap() else {
            panic!()
        };
        assert!(hermitian_error(&h) == 0.0);
        let mut want: Vec<f64> = m
            .env_spectrum()
            .iter()
            .flat_map(|e| [e + 2.0 * s, *e, *e, e - 2.0 * s])
            .collect();
        want.sort_by(f64::total_cmp);
        for (x, y) in eigenvalues(&h).iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_time_returns_initial_state() {
        for topo in [Topology::Common, Topology::Independent, Topology::FreeAncilla] {
            let m = lor_model(
                topo,
                40,
                0.2,
                InitialCondition::werner(crate::states::BellFamily::One, 0.6, 0.4),
            );
            let r = reduced_state(&m, 0, 0.0).unwrap();
            assert!(r.max_abs_diff(m.initial()) < 1e-12, "{}", topo.label());
            assert!((r.purity() - m.initial().purity()).abs() < 1e-12);
        }
    }

    #[test]
    fn decoupled_evolution_is_a_local_rotation() {
        let m = lor_model(Topology::Common, 30, 0.0, InitialCondition::bell2(0.35));
        let c0 = quantifiers::concurrence(m.initial()).unwrap();
        let p = Propagator::new(&m, 3).unwrap();
        let times = [0.0, 0.4, 3.0, 17.0];
        let sch = p.states(&times, Picture::Schrodinger).unwrap();
        let int = p.states(&times, Picture::Interaction).unwrap();
        for ((a, b), &t) in sch.iter().zip(&int).zip(&times) {
            assert!(b.max_abs_diff(m.initial()) < 1e-12);
            let rot = to_interaction(m.initial().matrix(), m.s(), -t);
            assert!((a.matrix() - rot).iter().all(|z| z.norm() < 1e-12));
            assert!((quantifiers::concurrence(a).unwrap() - c0).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_path_matches_dense_path() {
        let m = lor_model(Topology::Common, 24, 0.3, InitialCondition::product(0.6)).with_initial(
            InitialCondition::werner(crate::states::BellFamily::Two, 0.5, 0.8)
                .build()
                .unwrap(),
        );
        let times = [0.0, 1.0, 7.5, 40.0];
        let fast = Propagator::new(&m, 2)
            .unwrap()
            .matrices(&times, Picture::Schrodinger)
            .unwrap();
        let dense = Propagator::dense(&m, 2)
            .unwrap()
            .matrices(&times, Picture::Schrodinger)
            .unwrap();
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn factorised_ancilla_matches_dense_path() {
        let m = lor_model(Topology::FreeAncilla, 20, 0.25, InitialCondition::bell1(0.6));
        let times = [0.0, 2.0, 13.0];
        let fast = Propagator::new(&m, 1)
            .unwrap()
            .matrices(&times, Picture::Schrodinger)
            .unwrap();
        let dense = Propagator::dense(&m, 1)
            .unwrap()
            .matrices(&times, Picture::Schrodinger)
            .unwrap();
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn independent_qubits_do_not_see_each_other() {
        // with v_B changed, qubit A's marginal is untouched
        let base = lor_model(Topology::Independent, 25, 0.2, InitialCondition::bell1(0.7));
        let w = base.sample_couplings(0).unwrap();
        let times = [0.0, 5.0, 20.0];
        let run = |vb: f64| {
            let env = base.env_spectrum();
            let a = single_qubit_hamiltonian(base.s(), base.v(), env, &w[0]);
            let b = single_qubit_hamiltonian(base.s(), vb, env, &w[1]);
            let p = Propagator {
                kind: Kind::Product(
                    QubitPart::Coupled(Spectral::new(&a).unwrap()),
                    QubitPart::Coupled(Spectral::new(&b).unwrap()),
                ),
                n: base.n(),
                k: base.env_index(),
                s: base.s(),
                e_k: base.env_energy(),
                rho0: *base.initial().matrix(),
            };
            p.states(&times, Picture::Schrodinger).unwrap()
        };
        let (x, y) = (run(0.2), run(0.05));
        for (a, b) in x.iter().zip(&y) {
            assert!((a.reduced_a() - b.reduced_a()).iter().all(|z| z.norm() < 1e-12));
        }
        assert!((x[2].reduced_b() - y[2].reduced_b())
            .iter()
            .any(|z| z.norm() > 1e-4));
    }

    #[test]
    fn sign_flipped_coupling_restores_x_form() {
        // H(-W) = P H(W) P with P = sigma_z (x) sigma_z
        let m = lor_model(Topology::Common, 30, 0.3, InitialCondition::bell2(0.4));
        let mut w = m.sample_couplings(0).unwrap();
        let times = [0.0, 3.0, 25.0];
        let run = |w: &Mat<c64>| {
            let Hamiltonian::Full(h) = assemble_hamiltonian(&m, std::slice::from_ref(w)).unwrap() else {
                panic!()
            };
            let p = Propagator {
                kind: Kind::Dense(Spectral::new(&h).unwrap()),
                n: m.n(),
                k: m.env_index(),
                s: m.s(),
                e_k: m.env_energy(),
                rho0: *m.initial().matrix(),
            };
            p.matrices(&times, Picture::Schrodinger).unwrap()
        };
        let plus = run(&w[0]);
        w[0] = -&w[0];
        let minus = run(&w[0]);
        let mut seen: f64 = 0.0;
        for (a, b) in plus.iter().zip(&minus) {
            let avg = (a + b) * C64::new(0.5, 0.0);
            assert!((avg - x_projection(&avg)).iter().all(|z| z.norm() <= 1e-10));
            seen = seen.max((a - x_projection(a)).iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        // a single draw is not X-shaped
        assert!(seen > 1e-6);
    }

    #[test]
    fn zero_coupling_has_zero_variance() {
        let m = lor_model(Topology::Common, 20, 0.0, InitialCondition::bell2(0.2));
        let st = ensemble(&m, 2, 5.0).unwrap();
        assert!(st.max_variance() < 1e-28);
        assert!(ensemble(&m, 1, 5.0).is_err());
    }

    #[test]
    fn ensembles_are_reproducible() {
        let m = lor_model(Topology::Common, 30, 0.2, InitialCondition::bell2(0.2));
        let a = ensemble(&m, 6, 5.0).unwrap();
        let b = ensemble(&m, 6, 5.0).unwrap();
        assert_eq!(a.mean_state.matrix(), b.mean_state.matrix());
        assert_eq!(a.entry_variances, b.entry_variances);
        let c = ensemble(&m.clone().with_seed(12), 6, 5.0).unwrap();
        assert_ne!(a.mean_state.matrix(), c.mean_state.matrix());
    }

    #[test]
    fn budget_guard_refuses_large_dense_work() {
        let m = lor_model(Topology::Common, 100, 0.2, InitialCondition::bell2(0.2)).with_budget(1 << 20);
        assert!(matches!(reduced_state(&m, 0, 1.0), Err(Error::Budget { .. })));
        assert!(matches!(build_hamiltonian(&m, 0), Err(Error::Budget { .. })));
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let ns = [100, 200, 400, 800];
        let ys: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.9)).collect();
        let (p, c) = power_law_fit(&ns, &ys).unwrap();
        assert!((p - 0.9).abs() < 1e-12 && (c - 3.0).abs() < 1e-10);
    }

    #[test]
    fn decoupled_resolvent_traces_are_shifted_stieltjes_sums() {
        let m = lor_model(Topology::Common, 50, 0.0, InitialCondition::bell2(0.2));
        let zs = [C64::new(0.3, 0.5), C64::new(-1.0, -0.2)];
        let got = resolvent_traces(&m, 0, &zs).unwrap();
        for (z, (gp, gm)) in zs.iter().zip(got) {
            let st = |w: C64| m.env_spectrum().iter().map(|e| 1.0 / (e - w)).sum::<C64>() / m.n() as f64;
            let two = C64::new(2.0, 0.0);
            assert!((gp - st(z + two) - st(z - two)).norm() < 1e-12);
            assert!((gm - st(*z) * 2.0).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn evolved_states_are_states(seed in 0u64..1000, v in 0.05f64..0.5, t in 0.0f64..60.0) {
            let m = lor_model(Topology::Common, 16, v, InitialCondition::bell2(0.3)).with_seed(seed);
            for topo in [Topology::Common, Topology::Independent, Topology::FreeAncilla] {
                let mut mm = m.clone();
                mm.topology = topo;
                let r = Propagator::new(&mm, 0).unwrap().matrices(&[t], Picture::Schrodinger).unwrap()[0];
                let st = TwoQubitState::from_matrix_unchecked(r);
                prop_assert!((r.trace().re - 1.0).abs() < 1e-10);
                prop_assert!((r - r.adjoint()).iter().all(|z| z.norm() < 1e-10));
                prop_assert!(st.min_eigenvalue() > -1e-10);
            }
        }
    }
}
