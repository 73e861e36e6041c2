//! Environment density of states, decay rates and principal-value phases.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::quad::{self, Tol, Value};

/// Largest accepted spread between the last two Richardson estimates.
const PV_TOL: f64 = 1e-6;

/// Tabulated density, linearly interpolated and zero outside the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated {
    grid: Vec<f64>,
    values: Vec<f64>,
    raw_integral: f64,
}

impl Tabulated {
    /// Checks the table and rescales it to unit trapezoid integral.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(invalid(format!(
                "tabulated density needs matching grid and values with at least 2 points (got {} and {})",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(invalid("tabulated density contains non-finite numbers"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tabulated energies must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(invalid(format!("tabulated density has negative value {v}")));
        }
        let norm: f64 = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
            .sum();
        if norm <= 0.0 {
            return Err(invalid("tabulated density integrates to zero"));
        }
        let values = values.into_iter().map(|v| v / norm).collect();
        Ok(Self {
            grid,
            values,
            raw_integral: norm,
        })
    }

    /// Parses two whitespace-separated columns; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected 2 columns, found {}",
                    n + 1,
                    cols.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {s:?}: {e}", n + 1)))
            };
            grid.push(num(cols[0])?);
            values.push(num(cols[1])?);
        }
        Self::new(grid, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoid integral of the table as supplied, before rescaling.
    pub fn raw_integral(&self) -> f64 {
        self.raw_integral
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.grid[0] && e <= self.grid[self.grid.len() - 1]
    }

    pub fn eval(&self, e: f64) -> f64 {
        if !self.contains(e) {
            return 0.0;
        }
        let i = self
            .grid
            .partition_point(|&x| x <= e)
            .clamp(1, self.grid.len() - 1);
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (e - x0) / (x1 - x0)
    }
}

/// Spectral density `nu0` of the environment.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityOfStates {
    /// `gamma / (pi (e^2 + gamma^2))`.
    Lorentzian {
        gamma: f64,
    },
    /// Locally flat density, specified by its constant rate `gamma0 = 2 pi nu0`.
    Flat {
        gamma0: f64,
    },
    Tabulated(Tabulated),
}

impl DensityOfStates {
    pub fn lorentzian(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid(format!("lorentzian width must be positive, got {gamma}")));
        }
        Ok(Self::Lorentzian { gamma })
    }

    pub fn flat(gamma0: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(invalid(format!("flat rate must be positive, got {gamma0}")));
        }
        Ok(Self::Flat { gamma0 })
    }

    /// `nu0(e)`.
    pub fn eval(&self, e: f64) -> f64 {
        match self {
            Self::Lorentzian { gamma } => gamma / (PI * (e * e + gamma * gamma)),
            Self::Flat { gamma0 } => gamma0 / (2.0 * PI),
            Self::Tabulated(t) => t.eval(e),
        }
    }

    /// `2 pi nu0(e)`, written without the round trip through `pi` where possible.
    pub fn two_pi_nu(&self, e: f64) -> f64 {
        match self {
            Self::Lorentzian { gamma } => 2.0 * gamma / (e * e + gamma * gamma),
            Self::Flat { gamma0 } => *gamma0,
            Self::Tabulated(t) => 2.0 * PI * t.eval(e),
        }
    }

    /// Short label used in manifests.
    pub fn label(&self) -> String {
        match self {
            Self::Lorentzian { gamma } => format!("lorentzian(gamma={gamma})"),
            Self::Flat { gamma0 } => format!("flat(gamma0={gamma0})"),
            Self::Tabulated(t) => format!(
                "tabulated({} points on [{}, {}])",
                t.grid.len(),
                t.grid[0],
                t.grid[t.grid.len() - 1]
            ),
        }
    }

    /// `H(y) = pv ∫ nu0(x) / (x - y) dx`, closed form where one exists.
    pub fn hilbert(&self, y: f64) -> Result<f64> {
        match self {
            Self::Lorentzian { gamma } => Ok(-y / (y * y + gamma * gamma)),
            Self::Flat { .. } => Ok(0.0),
            Self::Tabulated(_) => self.hilbert_quadrature(y),
        }
    }

    /// `H(y)` by symmetric excision and Richardson extrapolation.
    ///
    /// The Lorentzian is mapped to a finite interval by `x = gamma tan(theta)`,
    /// under which `nu0(x) dx = dtheta / pi`.
    pub fn hilbert_quadrature(&self, y: f64) -> Result<f64> {
        match self {
            Self::Flat { .. } => Ok(0.0),
            Self::Lorentzian { gamma } => {
                let g = *gamma;
                let t = (y / g).atan();
                let f = |th: f64| 1.0 / (PI * (g * th.tan() - y));
                Ok(quad::principal_value(f, -FRAC_PI_2, FRAC_PI_2, t, &[], PV_TOL)?)
            }
            Self::Tabulated(tab) => {
                let (a, b) = (tab.grid[0], tab.grid[tab.grid.len() - 1]);
                let f = |x: f64| tab.eval(x) / (x - y);
                let inside = y > a && y < b && (y - a).min(b - y) > 1e-9 * (b - a);
                if inside {
                    Ok(quad::principal_value(f, a, b, y, &tab.grid, PV_TOL)?)
                } else if tab.contains(y) && tab.eval(y) > 0.0 {
                    Err(Error::Singular(format!(
                        "principal value at the edge of the table (y = {y}) diverges"
                    )))
                } else {
                    Ok(quad::integrate_with_breaks(f, a, b, &tab.grid, Tol::default())?.0)
                }
            }
        }
    }

    /// `(Psi_plus, Psi_minus)` at environment energy `e` and splitting `s`.
    pub fn pv_phases(&self, e: f64, s: f64) -> Result<(f64, f64)> {
        check_s(s)?;
        let hp = self.hilbert(e + 2.0 * s)?;
        let hm = self.hilbert(e - 2.0 * s)?;
        Ok(phases_from_hilbert(hp, hm))
    }

    /// Same as [`pv_phases`](Self::pv_phases) but always by quadrature.
    pub fn pv_phases_quadrature(&self, e: f64, s: f64) -> Result<(f64, f64)> {
        check_s(s)?;
        let hp = self.hilbert_quadrature(e + 2.0 * s)?;
        let hm = self.hilbert_quadrature(e - 2.0 * s)?;
        Ok(phases_from_hilbert(hp, hm))
    }

    /// Decay rates and phases of the weak-coupling channel.
    pub fn rates(&self, e: f64, s: f64) -> Result<RateSet> {
        check_s(s)?;
        if !e.is_finite() {
            return Err(invalid(format!("environment energy must be finite, got {e}")));
        }
        let pts = [e, e + 2.0 * s, e - 2.0 * s, e + 4.0 * s, e - 4.0 * s];
        let outside_grid = match self {
            Self::Tabulated(t) => pts.iter().any(|&x| !t.contains(x)),
            _ => false,
        };
        let [g0, gp, gm, g2p, g2m] = pts.map(|x| self.two_pi_nu(x));
        if [g0, gp, gm, g2p, g2m].iter().all(|&g| g == 0.0) {
            return Err(Error::DegenerateEnvironment(format!(
                "density vanishes at all of {pts:?}"
            )));
        }
        let (psi_plus, psi_minus) = self.pv_phases(e, s)?;
        Ok(RateSet::from_parts(
            g0,
            gp,
            gm,
            g2p,
            g2m,
            psi_plus,
            psi_minus,
            outside_grid,
        ))
    }

    /// `∫ f(x) nu0(x) dx` over the support of a normalizable density.
    ///
    /// `breaks` are energies where `f` is sharply peaked; panels are split
    /// there so that narrow features are not stepped over.
    pub(crate) fn integrate_against<T: Value, F: FnMut(f64) -> T>(
        &self,
        mut f: F,
        breaks: &[f64],
        tol: Tol,
    ) -> Result<T> {
        match self {
            Self::Lorentzian { gamma } => {
                let g = *gamma;
                let h = -FRAC_PI_2 * (1.0 - f64::EPSILON);
                let mut tb: Vec<f64> = breaks.iter().map(|&x| (x / g).atan()).collect();
                tb.extend((1..8).map(|k| h + (-2.0 * h) * k as f64 / 8.0));
                let (v, _) =
                    quad::integrate_with_breaks(|th: f64| f(g * th.tan()) * (1.0 / PI), h, -h, &tb, tol)?;
                Ok(v)
            }
            Self::Tabulated(t) => {
                let (a, b) = (t.grid[0], t.grid[t.grid.len() - 1]);
                let mut pts = t.grid.clone();
                pts.extend_from_slice(breaks);
                let (v, _) = quad::integrate_with_breaks(|x| f(x) * t.eval(x), a, b, &pts, tol)?;
                Ok(v)
            }
            Self::Flat { .. } => Err(invalid(
                "a flat density is not normalizable and cannot be integrated against",
            )),
        }
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("qubit splitting must be positive, got {s}")));
    }
    Ok(())
}

// Partial fractions of 1/(x^2 - 4s^2) and x/(x^2 - 4s^2) about x = ±2s.
fn phases_from_hilbert(h_plus: f64, h_minus: f64) -> (f64, f64) {
    (-2.0 * (h_plus - h_minus), 2.0 * (h_plus + h_minus))
}

/// Rates and phases of the weak-coupling channel at fixed `(E, s)`.
///
/// Rates are in units of the slow time `tau = v^2 t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSet {
    pub gamma0: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub gamma_2plus: f64,
    pub gamma_2minus: f64,
    pub gamma_tilde_plus: f64,
    pub gamma_tilde_minus: f64,
    /// `Gamma_+ + Gamma_-`.
    pub gamma_sum: f64,
    /// `Gamma_0 + Gamma_+ + Gamma_-`.
    pub gamma_tilde_sum: f64,
    pub psi_plus: f64,
    pub psi_minus: f64,
    /// Set when a tabulated density was evaluated outside its grid.
    pub outside_grid: bool,
}

impl RateSet {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        gamma0: f64,
        gamma_plus: f64,
        gamma_minus: f64,
        gamma_2plus: f64,
        gamma_2minus: f64,
        psi_plus: f64,
        psi_minus: f64,
        outside_grid: bool,
    ) -> Self {
        Self {
            gamma0,
            gamma_plus,
            gamma_minus,
            gamma_2plus,
            gamma_2minus,
            gamma_tilde_plus: gamma0 + gamma_plus + gamma_2plus,
            gamma_tilde_minus: gamma0 + gamma_minus + gamma_2minus,
            gamma_sum: gamma_plus + gamma_minus,
            gamma_tilde_sum: gamma0 + gamma_plus + gamma_minus,
            psi_plus,
            psi_minus,
            outside_grid,
        }
    }

    /// `Gamma_alpha` for `alpha = ±1`.
    pub fn gamma(&self, alpha: i8) -> f64 {
        if alpha > 0 {
            self.gamma_plus
        } else {
            self.gamma_minus
        }
    }

    /// `Gamma_{2 alpha}` for `alpha = ±1`.
    pub fn gamma2(&self, alpha: i8) -> f64 {
        if alpha > 0 {
            self.gamma_2plus
        } else {
            self.gamma_2minus
        }
    }

    /// `Gamma~_alpha` for `alpha = ±1`.
    pub fn gamma_tilde(&self, alpha: i8) -> f64 {
        if alpha > 0 {
            self.gamma_tilde_plus
        } else {
            self.gamma_tilde_minus
        }
    }
}
