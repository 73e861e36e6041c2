//! The large-N, weak-coupling channel in the slow time `tau = v^2 t`.
//!
//! The X-state is tracked in the coordinates `(rho11, A1, rho44)`, which mix
//! through the 3x3 matrix [`BvhChannel::channel_matrix`], and `A2`, `A3`,
//! `rho14`, which evolve independently: `A2` is conserved and the two
//! coherences decay at rate `Gamma` while rotating with the phases `Psi`.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::dos::{DensityOfStates, RateSet};
use crate::error::{invalid, Error, Result};
use crate::quantifiers::{self, QuantifierReport};
use crate::states::{ABlockCoords, BlockState, InitialCondition, Mat2, TwoQubitState};
use crate::C64;

/// Concurrence below this counts as zero when locating events.
pub const EVENT_THRESHOLD: f64 = 1e-9;
/// Bisection stops once the bracket is this narrow.
pub const EVENT_RESOLUTION: f64 = 1e-4;

/// `(1 - e^{-2 d tau}) / d`, continuous at `d = 0`.
fn phi(d: f64, tau: f64) -> f64 {
    if d == 0.0 {
        2.0 * tau
    } else {
        -(-2.0 * d * tau).exp_m1() / d
    }
}

/// The weak-coupling channel for one rate set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvhChannel {
    pub rates: RateSet,
}

/// Markovianity diagnostics of the 3x3 block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkovDiagnostic {
    /// `det Phi3(inf)`, or `None` when the limit does not exist.
    pub det_phi3_inf: Option<f64>,
    /// Largest Frobenius norm of `Phi3(t + t1) - Phi3(t) Phi3(t1)` on the scan grid.
    pub max_semigroup_residual: f64,
    /// All five rates coincide.
    pub is_flat: bool,
    /// Upper end of the scanned `tau` range.
    pub tau_scan_max: f64,
}

impl MarkovDiagnostic {
    /// Residual below which the channel is called Markovian.
    pub const RESIDUAL_TOL: f64 = 1e-10;

    pub fn is_markovian(&self) -> bool {
        self.max_semigroup_residual <= Self::RESIDUAL_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Entanglement sudden death: concurrence reaches zero.
    Esd,
    /// Entanglement sudden birth: concurrence leaves zero.
    Esb,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Esd => "ESD",
            EventKind::Esb => "ESB",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntanglementEvent {
    pub kind: EventKind,
    pub tau: f64,
}

/// States and quantifiers sampled on a time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub taus: Vec<f64>,
    pub states: Vec<TwoQubitState>,
    pub reports: Vec<QuantifierReport>,
    pub events: Vec<EntanglementEvent>,
}

impl BvhChannel {
    pub fn new(rates: RateSet) -> Result<Self> {
        let r = &rates;
        let all = [
            r.gamma0,
            r.gamma_plus,
            r.gamma_minus,
            r.gamma_2plus,
            r.gamma_2minus,
        ];
        if all.iter().any(|g| !(g.is_finite() && *g >= 0.0))
            || !(r.psi_plus.is_finite() && r.psi_minus.is_finite())
        {
            return Err(invalid(format!("rates must be finite and nonnegative: {r:?}")));
        }
        Ok(Self { rates })
    }

    pub fn from_dos(dos: &DensityOfStates, env_energy: f64, s: f64) -> Result<Self> {
        Self::new(dos.rates(env_energy, s)?)
    }

    fn r_alpha(&self, alpha: i8, tau: f64) -> f64 {
        let r = &self.rates;
        let (ga, g2a, gta) = (r.gamma(alpha), r.gamma2(alpha), r.gamma_tilde(alpha));
        if gta == 0.0 {
            return 0.0;
        }
        (1.0 - (-2.0 * ga * tau).exp() * (1.0 + ga * phi(r.gamma0 + g2a, tau))) / gta
    }

    /// `q_alpha(tau)` for `alpha = ±1`.
    pub fn q(&self, alpha: i8, tau: f64) -> f64 {
        self.rates.gamma0 * self.r_alpha(alpha, tau)
    }

    /// `Phi3(tau)` acting on `(rho11, A1, rho44)`.
    pub fn channel_matrix(&self, tau: f64) -> Result<Matrix3<f64>> {
        if !(tau >= 0.0) {
            return Err(invalid(format!("tau must be nonnegative, got {tau}")));
        }
        if tau.is_infinite() {
            return self.channel_matrix_inf();
        }
        let r = &self.rates;
        let (gp, gm) = (r.gamma_plus, r.gamma_minus);
        let (rp, rm) = (self.r_alpha(1, tau), self.r_alpha(-1, tau));
        let ft = phi(r.gamma_tilde_sum, tau);
        Ok(Matrix3::new(
            r.gamma0 * rp + (-2.0 * gp * tau).exp(),
            gm * ft,
            r.gamma_2minus * rm,
            gp * phi(r.gamma_tilde_plus, tau),
            1.0 - r.gamma_sum * ft,
            gm * phi(r.gamma_tilde_minus, tau),
            r.gamma_2plus * rp,
            gp * ft,
            r.gamma0 * rm + (-2.0 * gm * tau).exp(),
        ))
    }

    fn check_stationary(&self) -> Result<()> {
        let r = &self.rates;
        for (name, g) in [
            ("Gamma~_+", r.gamma_tilde_plus),
            ("Gamma~_-", r.gamma_tilde_minus),
            ("Gamma", r.gamma_sum),
        ] {
            if g <= 0.0 {
                return Err(Error::NoStationaryState(format!("{name} = {g} does not decay")));
            }
        }
        Ok(())
    }

    /// The exact `tau -> inf` limit of `Phi3`.
    pub fn channel_matrix_inf(&self) -> Result<Matrix3<f64>> {
        self.check_stationary()?;
        let r = &self.rates;
        let (gp, gm) = (r.gamma_plus, r.gamma_minus);
        let decays = |g: f64| if g > 0.0 { 0.0 } else { 1.0 };
        let (rp, rm) = (
            (1.0 - decays(gp)) / r.gamma_tilde_plus,
            (1.0 - decays(gm)) / r.gamma_tilde_minus,
        );
        let ft = 1.0 / r.gamma_tilde_sum;
        Ok(Matrix3::new(
            r.gamma0 * rp + decays(gp),
            gm * ft,
            r.gamma_2minus * rm,
            gp / r.gamma_tilde_plus,
            r.gamma0 * ft,
            gm / r.gamma_tilde_minus,
            r.gamma_2plus * rp,
            gp * ft,
            r.gamma0 * rm + decays(gm),
        ))
    }

    fn apply(&self, phi3: &Matrix3<f64>, a: &ABlockCoords, decay: C64, rot: (C64, C64)) -> ABlockCoords {
        let v = phi3 * nalgebra::Vector3::new(a.rho11, a.a1, a.rho44);
        ABlockCoords {
            rho11: v[0],
            a1: v[1],
            rho44: v[2],
            a2: a.a2,
            a3: decay * rot.1 * a.a3,
            rho14: decay * rot.0 * a.rho14,
        }
    }

    pub fn evolve_coords(&self, a: &ABlockCoords, tau: f64) -> Result<ABlockCoords> {
        let m = self.channel_matrix(tau)?;
        if tau.is_infinite() {
            return Ok(self.apply(
                &m,
                a,
                C64::new(0.0, 0.0),
                (C64::new(1.0, 0.0), C64::new(1.0, 0.0)),
            ));
        }
        let r = &self.rates;
        let decay = C64::new((-r.gamma_sum * tau).exp(), 0.0);
        let rot = (
            C64::from_polar(1.0, r.psi_plus * tau),
            C64::from_polar(1.0, r.psi_minus * tau),
        );
        Ok(self.apply(&m, a, decay, rot))
    }

    pub fn evolve(&self, rho0: &BlockState, tau: f64) -> Result<BlockState> {
        Ok(self.evolve_coords(&rho0.to_a_coords(), tau)?.to_blocks())
    }

    pub fn evolve_state(&self, rho0: &TwoQubitState, tau: f64) -> Result<TwoQubitState> {
        Ok(self.evolve(&rho0.to_blocks()?, tau)?.to_state())
    }

    /// Evolution written with block projectors, used as an independent check.
    ///
    /// `p_a = (1 + a sz)/2` and `pi_a = (1 + a sx)/2` act on the two blocks.
    pub fn evolve_projector_form(&self, rho0: &BlockState, tau: f64) -> Result<BlockState> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be finite and nonnegative, got {tau}")));
        }
        let r = &self.rates;
        let a = rho0.to_a_coords();
        let one = C64::new(1.0, 0.0);
        let re = |x: f64| C64::new(x, 0.0);
        let p = |s: f64| Mat2::new(re(0.5 * (1.0 + s)), re(0.0), re(0.0), re(0.5 * (1.0 - s)));
        let pi = |s: f64| Mat2::new(re(0.5), re(0.5 * s), re(0.5 * s), re(0.5));
        let diag = |alpha: i8| if alpha > 0 { a.rho11 } else { a.rho44 };

        let mut plus = Mat2::zeros();
        for alpha in [1i8, -1] {
            let q_a = self.q(alpha, tau);
            // Gamma_{-2a} q_{-a} / Gamma_0, written to stay finite for Gamma_0 = 0.
            let cross = r.gamma2(-alpha) * self.r_alpha(-alpha, tau);
            let w = (q_a + (-2.0 * r.gamma(alpha) * tau).exp()) * diag(alpha)
                + cross * diag(-alpha)
                + r.gamma(-alpha) * phi(r.gamma_tilde_sum, tau) * a.a1;
            plus += p(alpha as f64) * re(w);
        }
        let c = C64::from_polar((-r.gamma_sum * tau).exp(), r.psi_plus * tau) * a.rho14;
        let sigma_plus = Mat2::new(re(0.0), one, re(0.0), re(0.0));
        let m = sigma_plus * c;
        plus += m + m.adjoint();

        let mut w = 0.0;
        for alpha in [1i8, -1] {
            w += r.gamma(alpha) * phi(r.gamma_tilde(alpha), tau) * diag(alpha);
        }
        w += (1.0 - r.gamma_sum * phi(r.gamma_tilde_sum, tau)) * a.a1;
        let mut minus = pi(1.0) * re(w) + pi(-1.0) * re(a.a2);
        let c3 = C64::from_polar((-r.gamma_sum * tau).exp(), r.psi_minus * tau) * a.a3;
        let sz_isy = Mat2::new(one, one, -one, -one);
        let m = sz_isy * c3;
        minus += (m + m.adjoint()) * re(0.5);
        Ok(BlockState { plus, minus })
    }

    /// Closed-form `tau -> inf` state.
    pub fn stationary(&self, rho0: &BlockState) -> Result<BlockState> {
        self.evolve(rho0, f64::INFINITY)
    }

    pub fn stationary_state(&self, rho0: &TwoQubitState) -> Result<TwoQubitState> {
        Ok(self.stationary(&rho0.to_blocks()?)?.to_state())
    }

    /// Semigroup residual scan and `det Phi3(inf)`.
    pub fn markov_diagnostic(&self) -> MarkovDiagnostic {
        let r = &self.rates;
        let all = [
            r.gamma0,
            r.gamma_plus,
            r.gamma_minus,
            r.gamma_2plus,
            r.gamma_2minus,
        ];
        let is_flat = all
            .iter()
            .all(|&g| (g - r.gamma0).abs() <= 1e-12 * r.gamma0.abs());
        let fastest = r.gamma_tilde_plus.max(r.gamma_tilde_minus).max(r.gamma_tilde_sum);
        let tau_max = if fastest > 0.0 { 4.0 / fastest } else { 1.0 };
        const N: usize = 20;
        let grid: Vec<f64> = (0..N).map(|i| tau_max * i as f64 / (N - 1) as f64).collect();
        let mats: Vec<Matrix3<f64>> = grid
            .iter()
            .map(|&t| self.channel_matrix(t).expect("finite tau"))
            .collect();
        let mut worst: f64 = 0.0;
        for (i, &t) in grid.iter().enumerate() {
            for (j, &t1) in grid.iter().enumerate() {
                let lhs = self.channel_matrix(t + t1).expect("finite tau");
                worst = worst.max((lhs - mats[i] * mats[j]).norm());
            }
        }
        MarkovDiagnostic {
            det_phi3_inf: self.channel_matrix_inf().ok().map(|m| m.determinant()),
            max_semigroup_residual: worst,
            is_flat,
            tau_scan_max: tau_max,
        }
    }

    /// Evolves `cond` over `taus` and locates entanglement events.
    pub fn trajectory(&self, cond: &InitialCondition, taus: &[f64]) -> Result<Trajectory> {
        let rho0 = cond.build()?;
        self.trajectory_from(&rho0, taus)
    }

    pub fn trajectory_from(&self, rho0: &TwoQubitState, taus: &[f64]) -> Result<Trajectory> {
        if taus.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(invalid("time grid must be finite and nonnegative"));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time grid must be strictly increasing"));
        }
        let a0 = rho0.to_blocks()?.to_a_coords();
        let rows: Vec<(TwoQubitState, QuantifierReport)> = taus
            .par_iter()
            .map(|&t| {
                let s = self.evolve_coords(&a0, t)?.to_state();
                let rep = quantifiers::report(&s)?;
                Ok((s, rep))
            })
            .collect::<Result<_>>()?;
        let (states, reports): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let conc: Vec<f64> = reports.iter().map(|r| r.concurrence).collect();
        let events = self.entanglement_events(rho0, taus, &conc)?;
        Ok(Trajectory {
            taus: taus.to_vec(),
            states,
            reports,
            events,
        })
    }

    /// Sudden deaths and births between grid points, located by bisection.
    /// `conc[i]` is the concurrence at `taus[i]`.
    pub fn entanglement_events(
        &self,
        rho0: &TwoQubitState,
        taus: &[f64],
        conc: &[f64],
    ) -> Result<Vec<EntanglementEvent>> {
        if conc.len() != taus.len() {
            return Err(invalid("one concurrence value per grid point expected"));
        }
        let a0 = rho0.to_blocks()?.to_a_coords();
        let at =
            |t: f64| -> Result<f64> { quantifiers::concurrence(&self.evolve_coords(&a0, t)?.to_state()) };
        let mut events = Vec::new();
        for i in 1..taus.len() {
            let alive0 = conc[i - 1] >= EVENT_THRESHOLD;
            let alive1 = conc[i] >= EVENT_THRESHOLD;
            if alive0 == alive1 {
                continue;
            }
            let (mut lo, mut hi) = (taus[i - 1], taus[i]);
            while hi - lo > EVENT_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                if (at(mid)? >= EVENT_THRESHOLD) == alive0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            events.push(EntanglementEvent {
                kind: if alive0 { EventKind::Esd } else { EventKind::Esb },
                tau: 0.5 * (lo + hi),
            });
        }
        Ok(events)
    }
}

/// `n + 1` evenly spaced points on `[0, tau_max]`.
pub fn uniform_grid(tau_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(tau_max > 0.0 && tau_max.is_finite()) || n == 0 {
        return Err(invalid(format!(
            "need tau_max > 0 and at least one step (got {tau_max}, {n})"
        )));
    }
    Ok((0..=n).map(|i| tau_max * i as f64 / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{tests::arb_x_state, BellFamily, InitialCondition as Ic};
    use proptest::prelude::*;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn flat(g0: f64) -> BvhChannel {
        BvhChannel::from_dos(&DensityOfStates::flat(g0).unwrap(), 0.0, 1.0).unwrap()
    }

    fn lorentz(g: f64, e: f64) -> BvhChannel {
        BvhChannel::from_dos(&DensityOfStates::lorentzian(g).unwrap(), e, 1.0).unwrap()
    }

    fn families() -> Vec<Ic> {
        vec![
            Ic::product(0.6),
            Ic::bell1(0.5),
            Ic::bell2(0.2),
            Ic::werner(BellFamily::One, 0.7, 0.3),
            Ic::werner(BellFamily::Two, -0.2, 0.8),
        ]
    }

    /// `Phi3` from the printed entries, with no stabilizing rewrites.
    fn phi3_reference(r: &RateSet, t: f64) -> Matrix3<f64> {
        let (g0, gp, gm, g2p, g2m) = (
            r.gamma0,
            r.gamma_plus,
            r.gamma_minus,
            r.gamma_2plus,
            r.gamma_2minus,
        );
        let (gtp, gtm, gt, gs) = (g0 + gp + g2p, g0 + gm + g2m, g0 + gp + gm, gp + gm);
        let q = |ga: f64, g2a: f64, gta: f64| {
            g0 / gta + ga * g0 / (gta * (g0 + g2a)) * (-2.0 * gta * t).exp()
                - g0 / (g0 + g2a) * (-2.0 * ga * t).exp()
        };
        let (qp, qm) = (q(gp, g2p, gtp), q(gm, g2m, gtm));
        let et = (-2.0 * gt * t).exp();
        Matrix3::new(
            qp + (-2.0 * gp * t).exp(),
            gm / gt * (1.0 - et),
            g2m / g0 * qm,
            gp / gtp * (1.0 - (-2.0 * gtp * t).exp()),
            g0 / gt + gs / gt * et,
            gm / gtm * (1.0 - (-2.0 * gtm * t).exp()),
            g2p / g0 * qp,
            gp / gt * (1.0 - et),
            qm + (-2.0 * gm * t).exp(),
        )
    }

    #[test]
    fn stable_form_matches_printed_entries() {
        for (g, e) in [(0.15, 1.1), (0.33, 1.3), (0.8, 2.0), (1.0, -0.4)] {
            let ch = lorentz(g, e);
            for t in [0.0, 0.01, 0.3, 2.0, 17.0] {
                let d = ch.channel_matrix(t).unwrap() - phi3_reference(&ch.rates, t);
                assert!(d.abs().max() < 1e-12, "g={g} e={e} t={t}: {d}");
            }
        }
    }

    #[test]
    fn identity_at_zero() {
        let ch = lorentz(0.33, 1.3);
        assert!(
            (ch.channel_matrix(0.0).unwrap() - Matrix3::identity())
                .abs()
                .max()
                < 1e-15
        );
        assert!(ch.q(1, 0.0).abs() < 1e-12 && ch.q(-1, 0.0).abs() < 1e-12);
        for ic in families() {
            let s = ic.build().unwrap();
            assert!(ch.evolve_state(&s, 0.0).unwrap().max_abs_diff(&s) < 1e-12);
        }
    }

    #[test]
    fn flat_channel_spectrum() {
        let g0 = 0.7;
        let ch = flat(g0);
        let t = 0.9;
        let m = ch.channel_matrix(t).unwrap();
        let s3 = 3f64.sqrt();
        let e = [
            nalgebra::Vector3::new(1.0, 1.0, 1.0) / s3,
            nalgebra::Vector3::new(1.0, -2.0, 1.0) / 6f64.sqrt(),
            nalgebra::Vector3::new(1.0, 0.0, -1.0) / 2f64.sqrt(),
        ];
        // (1, -2, 1) is the fast mode and (1, 0, -1) the slow one.
        for (v, lam) in e.iter().zip([0.0, 6.0 * g0, 2.0 * g0]) {
            let got = m * v;
            assert!((got - v * (-lam * t).exp()).norm() < 1e-13);
        }
    }

    #[test]
    fn flat_bell_stationary_triple() {
        let ch = flat(1.0);
        let b = Ic::bell1(S).build().unwrap().to_blocks().unwrap();
        let a = ch.stationary(&b).unwrap().to_a_coords();
        let third = 1.0 / 3.0;
        for x in [a.rho11, a.a1, a.rho44] {
            assert!((x - third).abs() < 1e-15);
        }
        assert!(a.a2.abs() < 1e-15 && a.a3.norm() == 0.0 && a.rho14.norm() == 0.0);
    }

    #[test]
    fn stationary_matches_large_tau() {
        for ch in [
            flat(1.0),
            lorentz(0.15, 1.1),
            lorentz(0.8, 2.0),
            lorentz(0.33, 1.3),
        ] {
            let r = ch.rates;
            let slow = [
                r.gamma_plus,
                r.gamma_minus,
                r.gamma_tilde_plus,
                r.gamma_tilde_minus,
                r.gamma_sum,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            for ic in families() {
                let b = ic.build().unwrap().to_blocks().unwrap();
                let inf = ch.stationary(&b).unwrap().to_state();
                let big = ch.evolve(&b, 50.0 / slow).unwrap().to_state();
                assert!(inf.max_abs_diff(&big) < 1e-8);
                if ch.markov_diagnostic().is_flat {
                    let again = ch.stationary(&inf.to_blocks().unwrap()).unwrap().to_state();
                    assert!(again.max_abs_diff(&inf) < 1e-12);
                }
                let a0 = b.to_a_coords();
                assert!((inf.to_blocks().unwrap().to_a_coords().a2 - a0.a2).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn no_stationary_state_without_decay() {
        let r = RateSet::from_parts(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, false);
        let ch = BvhChannel::new(r).unwrap();
        let b = Ic::bell1(0.4).build().unwrap().to_blocks().unwrap();
        assert!(matches!(ch.stationary(&b), Err(Error::NoStationaryState(_))));
        assert!(ch.markov_diagnostic().det_phi3_inf.is_none());
    }

    #[test]
    fn negative_tau_is_rejected() {
        let ch = flat(1.0);
        assert!(ch.channel_matrix(-1.0).is_err());
        assert!(ch.channel_matrix(f64::NAN).is_err());
    }

    #[test]
    fn markov_flat_and_lorentzian() {
        let d = flat(1.0).markov_diagnostic();
        assert!(d.is_flat && d.is_markovian());
        assert!(d.det_phi3_inf.unwrap().abs() < 1e-15);
        let d = lorentz(0.33, 1.3).markov_diagnostic();
        assert!(!d.is_flat);
        assert!(d.max_semigroup_residual > 1e-6, "{d:?}");
        // The limit is a projector onto the stationary ray, rank one for flat rates.
        let m = flat(2.0).channel_matrix_inf().unwrap();
        assert!((m * m - m).abs().max() < 1e-15);
    }

    #[test]
    fn product_state_starts_unentangled() {
        let ch = lorentz(0.15, 1.1);
        let tr = ch.trajectory(&Ic::product(0.6), &[0.0, 1.0]).unwrap();
        assert!(tr.reports[0].concurrence == 0.0 && tr.reports[0].discord.abs() < 1e-9);
    }

    #[test]
    fn events_are_bracketed() {
        // Flat channel, weakly entangled Werner state: one sudden death.
        let ch = flat(1.0);
        let taus = uniform_grid(2.0, 40).unwrap();
        let tr = ch
            .trajectory(&Ic::werner(BellFamily::One, 0.5, S), &taus)
            .unwrap();
        assert_eq!(tr.events.len(), 1);
        let ev = tr.events[0];
        assert_eq!(ev.kind, EventKind::Esd);
        let before = ch
            .evolve_state(
                &Ic::werner(BellFamily::One, 0.5, S).build().unwrap(),
                ev.tau - EVENT_RESOLUTION,
            )
            .unwrap();
        let after = ch
            .evolve_state(
                &Ic::werner(BellFamily::One, 0.5, S).build().unwrap(),
                ev.tau + EVENT_RESOLUTION,
            )
            .unwrap();
        assert!(quantifiers::concurrence(&before).unwrap() > 0.0);
        assert!(quantifiers::concurrence(&after).unwrap() < EVENT_THRESHOLD);
        assert_eq!(tr.taus.len(), tr.states.len());
        assert_eq!(tr.taus.len(), tr.reports.len());
    }

    #[test]
    fn grid_validation() {
        let ch = flat(1.0);
        assert!(ch.trajectory(&Ic::bell1(0.5), &[0.0, 0.0]).is_err());
        assert!(ch.trajectory(&Ic::bell1(0.5), &[-1.0]).is_err());
        assert!(uniform_grid(0.0, 5).is_err());
        assert_eq!(uniform_grid(1.0, 4).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    fn arb_channel() -> impl Strategy<Value = BvhChannel> {
        (0.05..2.0f64, -4.0..4.0f64, 0.3..2.0f64).prop_map(|(g, e, s)| {
            BvhChannel::from_dos(&DensityOfStates::lorentzian(g).unwrap(), e, s).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn outputs_are_states(a in arb_x_state(), ch in arb_channel(), t in 0.0..30.0f64) {
            let out = ch.evolve_coords(&a, t).unwrap();
            let s = out.to_state();
            prop_assert!((s.matrix().trace().re - 1.0).abs() < 1e-12);
            prop_assert!(s.min_eigenvalue() >= -1e-10, "{}", s.min_eigenvalue());
            prop_assert!(TwoQubitState::new(*s.matrix()).is_ok());
            prop_assert!(s.is_x_form(0.0));
            prop_assert!((out.a2 - a.a2).abs() <= 1e-14);
            let decay = (-ch.rates.gamma_sum * t).exp();
            prop_assert!((out.a3.norm() - decay * a.a3.norm()).abs() <= 1e-15);
            prop_assert!((out.rho14.norm() - decay * a.rho14.norm()).abs() <= 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn projector_form_agrees(a in arb_x_state(), ch in arb_channel(), t in 0.0..20.0f64) {
            let b = a.to_blocks();
            let x = ch.evolve(&b, t).unwrap();
            let y = ch.evolve_projector_form(&b, t).unwrap();
            prop_assert!((x.plus - y.plus).iter().all(|d| d.norm() < 1e-10));
            prop_assert!((x.minus - y.minus).iter().all(|d| d.norm() < 1e-10));
        }

        #[test]
        fn columns_sum_to_one(ch in arb_channel(), t in 0.0..50.0f64) {
            let m = ch.channel_matrix(t).unwrap();
            for j in 0..3 {
                prop_assert!((m.column(j).sum() - 1.0).abs() < 1e-12);
            }
            prop_assert!(m.iter().all(|&x| x >= -1e-15));
            let inf = ch.channel_matrix_inf().unwrap();
            for j in 0..3 {
                prop_assert!((inf.column(j).sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn flat_semigroup(g0 in 0.1..3.0f64, i in 0usize..20, j in 0usize..20) {
            let ch = flat(g0);
            let (t, t1) = (0.1 * i as f64, 0.1 * j as f64);
            let d = ch.channel_matrix(t + t1).unwrap() - ch.channel_matrix(t).unwrap() * ch.channel_matrix(t1).unwrap();
            prop_assert!(d.norm() <= 1e-10);
        }

        #[test]
        fn quantifiers_are_phase_invariant(a in arb_x_state(), x in 0.0..6.3f64, y in 0.0..6.3f64) {
            // Local z rotations relate the interaction and Schrödinger pictures.
            let s = a.to_state();
            let u = [C64::new(1.0, 0.0), C64::from_polar(1.0, y), C64::from_polar(1.0, x), C64::from_polar(1.0, x + y)];
            let m = crate::states::Mat4::from_fn(|i, j| u[i] * s.matrix()[(i, j)] * u[j].conj());
            let t = TwoQubitState::new(m).unwrap();
            prop_assert!((quantifiers::negativity(&s).unwrap() - quantifiers::negativity(&t).unwrap()).abs() < 1e-12);
            prop_assert!((quantifiers::concurrence(&s).unwrap() - quantifiers::concurrence(&t).unwrap()).abs() < 1e-12);
            prop_assert!((quantifiers::entropy(&s).unwrap() - quantifiers::entropy(&t).unwrap()).abs() < 1e-12);
        }
    }
}
