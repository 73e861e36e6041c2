//! Self-consistent equations for the limiting block resolvents.
//!
//! For `eta = ±` the pair `G^eta(z)` solves
//!
//! ```text
//! G^eta(z) = ∫ 2(E - z) nu0(E) dE / ((E - z)^2 - s^2 (1 + eta)^2 - 2 (E - z) v^2 G^{-eta}(z))
//! ```
//!
//! and the 2x2 block resolvents are
//! `G^eta(E, z) = (E - z - v^2 G^{-eta} (1 + sx) + s (1 + eta) sz)^{-1}`,
//! whose entry sum `T(A) = Tr A (1 + sx)` integrates back to `G^eta(z)`.

use crate::dos::DensityOfStates;
use crate::error::{invalid, Error, Result};
use crate::quad::Tol;
use crate::states::Mat2;
use crate::C64;

/// Smallest accepted `|Im z|`.
pub const IM_Z_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Weight of the new iterate in the damped update.
    pub damping: f64,
    /// Stop once successive iterates differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-12,
            max_iter: 5000,
        }
    }
}

/// Which solver produced a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    FixedPoint,
    Newton,
}

/// A solved pair `(G^+(z), G^-(z))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolventSample {
    pub z: C64,
    pub v: f64,
    pub s: f64,
    pub g_plus: C64,
    pub g_minus: C64,
    /// `max_eta |G^eta - rhs^eta(G)|` at the returned pair.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolverMethod,
}

impl ResolventSample {
    pub fn g(&self, eta: i8) -> C64 {
        if eta > 0 {
            self.g_plus
        } else {
            self.g_minus
        }
    }

    /// `Z^eta(z) = z + v^2 G^eta(z)`.
    pub fn z_aux(&self, eta: i8) -> C64 {
        self.z + self.v * self.v * self.g(eta)
    }

    /// `G^eta(E, z)` for `eta = ±1`.
    pub fn block_resolvent(&self, e: f64, eta: i8) -> Result<Mat2> {
        block_resolvent(self.s, self.v, self.z, self.g(-eta), e, eta)
    }

    /// `(G^+(E, z), G^-(E, z))`.
    pub fn block_resolvents(&self, e: f64) -> Result<(Mat2, Mat2)> {
        Ok((self.block_resolvent(e, 1)?, self.block_resolvent(e, -1)?))
    }
}

fn shift2(s: f64, eta: i8) -> f64 {
    let c = s * (1.0 + eta as f64);
    c * c
}

fn denominator(s: f64, v: f64, z: C64, g_other: C64, e: f64, eta: i8) -> C64 {
    let w = e - z;
    w * w - shift2(s, eta) - w * g_other * (2.0 * v * v)
}

fn block_resolvent(s: f64, v: f64, z: C64, g_other: C64, e: f64, eta: i8) -> Result<Mat2> {
    let d = denominator(s, v, z, g_other, e, eta);
    if !(d.norm() > 0.0) || !d.norm().is_finite() {
        return Err(Error::Singular(format!(
            "block resolvent denominator vanishes at E = {e}, z = {z}"
        )));
    }
    let vg = g_other * (v * v);
    let c = C64::new(s * (1.0 + eta as f64), 0.0);
    let diag = e - z - vg;
    Ok(Mat2::new(diag - c, vg, vg, diag + c) / d)
}

/// `Σ_ab A_ab`.
pub fn t_trace(a: &Mat2) -> C64 {
    a.iter().copied().sum()
}

/// `∫ nu0(E) / (E - w) dE`.
pub fn stieltjes(dos: &DensityOfStates, w: C64) -> Result<C64> {
    match dos {
        DensityOfStates::Lorentzian { gamma } => {
            let pole = if w.im > 0.0 { -*gamma } else { *gamma };
            Ok(-1.0 / (w - C64::new(0.0, pole)))
        }
        _ => {
            check_z(dos, w)?;
            dos.integrate_against(|e| 1.0 / (e - w), &[w.re], quad_tol())
        }
    }
}

/// The `v = 0` pair: `S(z + 2s) + S(z - 2s)` and `2 S(z)`.
pub fn decoupled(dos: &DensityOfStates, s: f64, z: C64) -> Result<(C64, C64)> {
    check_z(dos, z)?;
    let two_s = C64::new(2.0 * s, 0.0);
    Ok((
        stieltjes(dos, z + two_s)? + stieltjes(dos, z - two_s)?,
        stieltjes(dos, z)? * 2.0,
    ))
}

fn quad_tol() -> Tol {
    Tol {
        abs: 1e-14,
        rel: 1e-13,
        max_panels: 20_000,
    }
}

fn check_z(dos: &DensityOfStates, z: C64) -> Result<()> {
    if matches!(dos, DensityOfStates::Flat { .. }) {
        return Err(invalid(
            "the self-consistent equations need a normalizable density (lorentzian or tabulated)",
        ));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(invalid(format!("z must be finite, got {z}")));
    }
    if z.im.abs() < IM_Z_FLOOR {
        return Err(Error::IllConditioned(format!(
            "|Im z| = {:e} is below the floor {IM_Z_FLOOR:e}",
            z.im.abs()
        )));
    }
    Ok(())
}

/// Real parts of the roots of the denominator in `E`, used as panel breaks.
fn pole_breaks(s: f64, v: f64, z: C64, g_other: C64, eta: i8) -> [f64; 2] {
    let b = g_other * (v * v);
    let r = (b * b + shift2(s, eta)).sqrt();
    [(z + b + r).re, (z + b - r).re]
}

/// Right-hand side of the self-consistent equation for one `eta`.
fn rhs_eta(dos: &DensityOfStates, s: f64, v: f64, z: C64, g_other: C64, eta: i8) -> Result<C64> {
    let br = pole_breaks(s, v, z, g_other, eta);
    dos.integrate_against(
        |e| {
            let w = e - z;
            w * 2.0 / denominator(s, v, z, g_other, e, eta)
        },
        &br,
        quad_tol(),
    )
}

/// `∂ rhs^eta / ∂ G^{-eta}`.
fn rhs_derivative(dos: &DensityOfStates, s: f64, v: f64, z: C64, g_other: C64, eta: i8) -> Result<C64> {
    let br = pole_breaks(s, v, z, g_other, eta);
    dos.integrate_against(
        |e| {
            let w = e - z;
            let d = denominator(s, v, z, g_other, e, eta);
            w * w * (4.0 * v * v) / (d * d)
        },
        &br,
        quad_tol(),
    )
}

/// Right-hand sides `(rhs^+, rhs^-)` at a trial pair.
pub fn rhs(dos: &DensityOfStates, s: f64, v: f64, z: C64, g_plus: C64, g_minus: C64) -> Result<(C64, C64)> {
    check_z(dos, z)?;
    Ok((
        rhs_eta(dos, s, v, z, g_minus, 1)?,
        rhs_eta(dos, s, v, z, g_plus, -1)?,
    ))
}

fn check_params(s: f64, v: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("qubit splitting must be positive, got {s}")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(invalid(format!(
            "coupling must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

fn finish(
    dos: &DensityOfStates,
    s: f64,
    v: f64,
    z: C64,
    g: (C64, C64),
    iterations: usize,
    method: SolverMethod,
) -> Result<ResolventSample> {
    let (rp, rm) = rhs(dos, s, v, z, g.0, g.1)?;
    let residual = (rp - g.0).norm().max((rm - g.1).norm());
    if g.0.im * z.im <= 0.0 || g.1.im * z.im <= 0.0 {
        return Err(Error::Convergence {
            what: "self-consistent resolvent (left the Nevanlinna class)",
            iterations,
            residual,
        });
    }
    Ok(ResolventSample {
        z,
        v,
        s,
        g_plus: g.0,
        g_minus: g.1,
        residual,
        iterations,
        method,
    })
}

/// Damped fixed-point iteration from the decoupled seed, with a Newton fallback.
pub fn solve(dos: &DensityOfStates, s: f64, v: f64, z: C64) -> Result<ResolventSample> {
    solve_with(dos, s, v, z, SolverOptions::default())
}

pub fn solve_with(
    dos: &DensityOfStates,
    s: f64,
    v: f64,
    z: C64,
    opts: SolverOptions,
) -> Result<ResolventSample> {
    check_params(s, v)?;
    let seed = decoupled(dos, s, z)?;
    if v == 0.0 {
        return finish(dos, s, v, z, seed, 0, SolverMethod::FixedPoint);
    }
    let d = opts.damping;
    let (mut gp, mut gm) = seed;
    let mut history: Vec<f64> = Vec::new();
    for it in 1..=opts.max_iter {
        let (rp, rm) = rhs(dos, s, v, z, gp, gm)?;
        let np = gp * (1.0 - d) + rp * d;
        let nm = gm * (1.0 - d) + rm * d;
        let step = (np - gp).norm().max((nm - gm).norm());
        gp = np;
        gm = nm;
        if !step.is_finite() {
            break;
        }
        if step < opts.tol {
            return finish(dos, s, v, z, (gp, gm), it, SolverMethod::FixedPoint);
        }
        history.push(step);
        // No progress over a long window: the damped map is oscillating.
        if history.len() > 200 && step >= 0.9 * history[history.len() - 200] {
            break;
        }
    }
    solve_newton(dos, s, v, z)
}

/// Newton's method on the residual `G - rhs(G)` with the analytic Jacobian.
pub fn solve_newton(dos: &DensityOfStates, s: f64, v: f64, z: C64) -> Result<ResolventSample> {
    check_params(s, v)?;
    let (mut gp, mut gm) = decoupled(dos, s, z)?;
    let mut last = f64::INFINITY;
    for it in 1..=100 {
        let (rp, rm) = rhs(dos, s, v, z, gp, gm)?;
        let (fp, fm) = (gp - rp, gm - rm);
        last = fp.norm().max(fm.norm());
        if last < 1e-14 {
            return finish(dos, s, v, z, (gp, gm), it, SolverMethod::Newton);
        }
        // rhs^+ depends on G^- only and rhs^- on G^+ only.
        let a = rhs_derivative(dos, s, v, z, gm, 1)?;
        let b = rhs_derivative(dos, s, v, z, gp, -1)?;
        let det = C64::new(1.0, 0.0) - a * b;
        if det.norm() < 1e-300 {
            break;
        }
        let dp = (fp + a * fm) / det;
        let dm = (fm + b * fp) / det;
        gp -= dp;
        gm -= dm;
        if dp.norm().max(dm.norm()) < 1e-15 {
            return finish(dos, s, v, z, (gp, gm), it, SolverMethod::Newton);
        }
    }
    Err(Error::Convergence {
        what: "self-consistent resolvent (Newton)",
        iterations: 100,
        residual: last,
    })
}

/// `(1/pi) Im G^eta(x + i eps)` for one `eta`, over `grid`.
pub fn spectral_density(
    dos: &DensityOfStates,
    s: f64,
    v: f64,
    eta: i8,
    grid: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&x| {
            let r = solve(dos, s, v, C64::new(x, eps))?;
            Ok((r.g(eta).im / std::f64::consts::PI).max(0.0))
        })
        .collect()
}

/// `eta`-averaged spectral density `(1/2pi) Σ_eta Im G^eta(x + 1e-3 i)`.
pub fn limiting_dos_probe(dos: &DensityOfStates, s: f64, v: f64, grid: &[f64]) -> Result<Vec<f64>> {
    const EPS: f64 = 1e-3;
    grid.iter()
        .map(|&x| {
            let r = solve(dos, s, v, C64::new(x, EPS))?;
            Ok(((r.g_plus.im + r.g_minus.im) / (2.0 * std::f64::consts::PI)).max(0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn lor(g: f64) -> DensityOfStates {
        DensityOfStates::lorentzian(g).unwrap()
    }

    /// Exact Lorentzian solution: the integrals collapse onto `E = ∓ i gamma`,
    /// leaving `a x^2 + b x + c = 0` for `x = G^+`.
    fn lorentzian_exact(g: f64, s: f64, v: f64, z: C64) -> (C64, C64) {
        let a = C64::new(0.0, if z.im > 0.0 { -g } else { g }) - z;
        let k = a * a - 4.0 * s * s;
        let (qa, qb, qc) = (k * (-2.0 * v * v), a * k, a * a * -2.0);
        let disc = (qb * qb - qa * qc * 4.0).sqrt();
        let roots = [(-qb + disc) / (qa * 2.0), (-qb - disc) / (qa * 2.0)];
        let gm = |x: C64| 2.0 / (a - x * (2.0 * v * v));
        let ok = |x: &C64| x.im * z.im > 0.0 && gm(*x).im * z.im > 0.0;
        let seed = 2.0 * a / k;
        let x = roots
            .into_iter()
            .filter(ok)
            .min_by(|p, q| (p - seed).norm().total_cmp(&(q - seed).norm()))
            .expect("a Nevanlinna root");
        (x, gm(x))
    }

    #[test]
    fn decoupled_closed_form_equals_quadrature() {
        let d = lor(1.0);
        for z in [C64::new(0.3, 0.5), C64::new(-2.0, 0.1), C64::new(1.0, -0.7)] {
            let (a, b) = decoupled(&d, 1.0, z).unwrap();
            let (qa, qb) = rhs(&d, 1.0, 0.0, z, C64::new(0.0, 0.0), C64::new(0.0, 0.0)).unwrap();
            assert!(
                (a - qa).norm() < 1e-10 && (b - qb).norm() < 1e-10,
                "{a} {qa} {b} {qb}"
            );
            let s = solve(&d, 1.0, 0.0, z).unwrap();
            assert!(s.residual < 1e-10);
        }
    }

    #[test]
    fn lorentzian_exact_solution() {
        for (g, s, v, z) in [
            (1.0, 1.0, 0.5, C64::new(0.0, 1.0)),
            (1.0, 1.0, 0.5, C64::new(0.3, 0.5)),
            (0.8, 1.0, 0.3, C64::new(2.0, 0.5)),
            (0.4, 0.7, 1.2, C64::new(-1.0, -0.2)),
        ] {
            let want = lorentzian_exact(g, s, v, z);
            let got = solve(&lor(g), s, v, z).unwrap();
            assert!((got.g_plus - want.0).norm() < 1e-10, "{got:?} vs {want:?}");
            assert!((got.g_minus - want.1).norm() < 1e-10);
            assert!(got.residual < 1e-10);
        }
    }

    #[test]
    fn two_solvers_agree() {
        let d = lor(1.0);
        let z = C64::new(0.0, 1.0);
        let a = solve(&d, 1.0, 0.5, z).unwrap();
        let b = solve_newton(&d, 1.0, 0.5, z).unwrap();
        assert_eq!(a.method, SolverMethod::FixedPoint);
        assert_eq!(b.method, SolverMethod::Newton);
        assert!((a.g_plus - b.g_plus).norm() < 1e-10);
        assert!((a.g_minus - b.g_minus).norm() < 1e-10);
    }

    #[test]
    fn block_resolvent_closes_the_loop() {
        let d = lor(0.8);
        let r = solve(&d, 1.0, 0.4, C64::new(0.5, 0.5)).unwrap();
        for eta in [1i8, -1] {
            let t: C64 = d
                .integrate_against(|e| t_trace(&r.block_resolvent(e, eta).unwrap()), &[], quad_tol())
                .unwrap();
            assert!((t - r.g(eta)).norm() < 1e-8);
        }
    }

    #[test]
    fn block_resolvent_inverts_its_operator() {
        let r = solve(&lor(0.8), 1.0, 0.4, C64::new(0.5, 0.5)).unwrap();
        for eta in [1i8, -1] {
            let e = 0.7;
            let g = r.block_resolvent(e, eta).unwrap();
            let vg = r.g(-eta) * (r.v * r.v);
            let c = r.s * (1.0 + eta as f64);
            let one = C64::new(1.0, 0.0);
            let op = Mat2::new(e - r.z - vg + c, -vg, -vg, e - r.z - vg - c);
            assert!((op * g - Mat2::identity() * one).norm() < 1e-13);
        }
    }

    #[test]
    fn decoupled_block_is_bare_resolvent() {
        let z = C64::new(0.2, 0.3);
        let r = solve(&lor(1.0), 1.0, 0.0, z).unwrap();
        assert_eq!(r.z_aux(1), z);
        let e = 0.4;
        let g = r.block_resolvent(e, 1).unwrap();
        let one = C64::new(1.0, 0.0);
        // |++> carries +2s, |--> carries -2s.
        assert!((g[(0, 0)] - one / (e - z + 2.0)).norm() < 1e-14);
        assert!((g[(1, 1)] - one / (e - z - 2.0)).norm() < 1e-14);
        assert!(g[(0, 1)].norm() == 0.0);
    }

    #[test]
    fn refuses_tiny_imaginary_part() {
        let e = solve(&lor(1.0), 1.0, 0.5, C64::new(0.0, 1e-7)).unwrap_err();
        assert!(matches!(e, Error::IllConditioned(_)));
        assert!(solve(&DensityOfStates::flat(1.0).unwrap(), 1.0, 0.5, C64::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn nevanlinna_decay() {
        let d = lor(1.0);
        for k in 0..=12 {
            let y = 10f64.powf(0.25 * k as f64);
            let r = solve(&d, 1.0, 0.5, C64::new(0.0, y)).unwrap();
            for eta in [1i8, -1] {
                let yg = (r.g(eta) * y).norm();
                assert!(yg < 2.5 && r.g(eta).im > 0.0, "y={y}: {yg}");
            }
        }
    }

    #[test]
    fn tabulated_tracks_lorentzian() {
        let g = 1.0;
        let grid: Vec<f64> = (0..=8000).map(|i| -400.0 + 0.1 * i as f64).collect();
        let vals = grid.iter().map(|&x| g / (PI * (x * x + g * g))).collect();
        let t = DensityOfStates::Tabulated(crate::dos::Tabulated::new(grid, vals).unwrap());
        let z = C64::new(0.3, 0.5);
        let a = solve(&t, 1.0, 0.5, z).unwrap();
        let b = lorentzian_exact(g, 1.0, 0.5, z);
        let d = (a.g_plus - b.0).norm().max((a.g_minus - b.1).norm());
        // The table drops a tail mass of about 1.6e-3 and is rescaled.
        assert!(d < 3e-3, "{a:?} vs {b:?}");
    }

    #[test]
    fn decoupled_probe_has_shifted_peaks() {
        let (g, s) = (0.5, 1.0);
        let d = lor(g);
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let got = spectral_density(&d, s, 0.0, 1, &xs, 1e-3).unwrap();
        let w = g + 1e-3;
        let l = |y: f64| w / (PI * (y * y + w * w));
        for (x, p) in xs.iter().zip(got) {
            assert!((p - (l(x + 2.0 * s) + l(x - 2.0 * s))).abs() < 1e-9);
        }
    }

    #[test]
    fn probe_sum_rule() {
        let d = lor(0.5);
        let grid: Vec<f64> = (0..=400).map(|i| -20.0 + 0.1 * i as f64).collect();
        let p = limiting_dos_probe(&d, 1.0, 0.3, &grid).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0));
        let integral: f64 = p.windows(2).map(|w| 0.05 * (w[0] + w[1])).sum();
        // Each eta carries weight 2; tails beyond |x| = 20 hold about 2 * 0.025.
        assert!((integral - 2.0).abs() < 0.1, "{integral}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn sign_and_reflection(re in -5.0..5.0f64, im in 0.01..5.0f64, g in 0.2..2.0f64, v in 0.0..1.0f64) {
            let d = lor(g);
            let z = C64::new(re, im);
            let a = solve(&d, 1.0, v, z).unwrap();
            let b = solve(&d, 1.0, v, z.conj()).unwrap();
            prop_assert!(a.g_plus.im > 0.0 && a.g_minus.im > 0.0);
            prop_assert!(a.residual <= 1e-10);
            prop_assert!((b.g_plus - a.g_plus.conj()).norm() < 1e-12);
            prop_assert!((b.g_minus - a.g_minus.conj()).norm() < 1e-12);
        }

        #[test]
        fn im_positivity(re in -4.0..4.0f64, im in 0.05..3.0f64, e in -6.0..6.0f64, v in 0.0..1.0f64) {
            let r = solve(&lor(0.8), 1.0, v, C64::new(re, im)).unwrap();
            for eta in [1i8, -1] {
                let g = r.block_resolvent(e, eta).unwrap();
                let img = (g - g.adjoint()) / C64::new(0.0, 2.0 * im);
                let tr = (img[(0, 0)] + img[(1, 1)]).re;
                let det = (img[(0, 0)] * img[(1, 1)] - img[(0, 1)] * img[(1, 0)]).re;
                prop_assert!(tr > 0.0 && det > 0.0, "eta={} tr={} det={}", eta, tr, det);
            }
        }
    }
}
