//! Negativity, concurrence, von Neumann entropy and quantum discord.
//!
//! Entropies are in bits. Discord is one-sided, with the projective
//! measurement performed on the second qubit unless stated otherwise.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::optimize::{golden, nelder_mead};
use crate::states::{Mat2, Mat4, TwoQubitState, PSD_TOL};
use crate::C64;

/// Grid resolution of the coarse discord search, per angle.
pub const DISCORD_GRID: usize = 64;
/// Values in `[-DISCORD_CLIP, 0)` are reported as zero.
pub const DISCORD_CLIP: f64 = 1e-9;

/// The four quantifiers of one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantifierReport {
    pub negativity: f64,
    pub concurrence: f64,
    pub entropy: f64,
    pub discord: f64,
}

/// Column header matching [`QuantifierReport::csv_fields`].
pub const CSV_COLUMNS: [&str; 4] = ["negativity", "concurrence", "discord", "entropy"];

impl QuantifierReport {
    /// Values in the order of [`CSV_COLUMNS`].
    pub fn csv_fields(&self) -> [f64; 4] {
        [self.negativity, self.concurrence, self.discord, self.entropy]
    }
}

struct XView {
    r11: f64,
    r22: f64,
    r33: f64,
    r44: f64,
    r14: f64,
    r23: f64,
}

fn x_view(state: &TwoQubitState) -> Result<XView> {
    let b = state.to_blocks()?;
    Ok(XView {
        r11: b.plus[(0, 0)].re,
        r44: b.plus[(1, 1)].re,
        r14: b.plus[(0, 1)].norm(),
        r22: b.minus[(0, 0)].re,
        r33: b.minus[(1, 1)].re,
        r23: b.minus[(0, 1)].norm(),
    })
}

/// Negativity of an X-state.
pub fn negativity(state: &TwoQubitState) -> Result<f64> {
    let x = x_view(state)?;
    let n1 = -x.r11 - x.r44 + ((x.r11 - x.r44).powi(2) + 4.0 * x.r23 * x.r23).sqrt();
    let n2 = -x.r22 - x.r33 + ((x.r22 - x.r33).powi(2) + 4.0 * x.r14 * x.r14).sqrt();
    Ok(n1.max(0.0) + n2.max(0.0))
}

/// Concurrence of an X-state.
pub fn concurrence(state: &TwoQubitState) -> Result<f64> {
    let x = x_view(state)?;
    let c1 = x.r23 - (x.r11 * x.r44).max(0.0).sqrt();
    let c2 = x.r14 - (x.r22 * x.r33).max(0.0).sqrt();
    Ok(2.0 * c1.max(c2).max(0.0))
}

/// Eigenvalues of an X-state from the two 2x2 blocks.
pub fn x_eigenvalues(state: &TwoQubitState) -> Result<[f64; 4]> {
    let b = state.to_blocks()?;
    let [p1, p4] = herm2_eigenvalues(&b.plus);
    let [p2, p3] = herm2_eigenvalues(&b.minus);
    Ok([p1, p2, p3, p4])
}

/// Eigenvalues `(larger, smaller)` of a Hermitian 2x2 matrix.
fn herm2_eigenvalues(m: &Mat2) -> [f64; 2] {
    let (a, d) = (m[(0, 0)].re, m[(1, 1)].re);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let r = ((a - d).powi(2) + 4.0 * off.norm_sqr()).sqrt();
    [0.5 * (a + d + r), 0.5 * (a + d - r)]
}

/// Shannon entropy in bits; eigenvalues down to `-PSD_TOL` are treated as 0.
pub fn shannon_bits(p: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &x in p {
        if x < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {x:e} in entropy"
            )));
        }
        if x > 0.0 {
            s -= x * x.log2();
        }
    }
    Ok(s.max(0.0))
}

/// Binary entropy `h(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Von Neumann entropy; closed-form spectrum for X-states.
pub fn entropy(state: &TwoQubitState) -> Result<f64> {
    match x_eigenvalues(state) {
        Ok(ev) => shannon_bits(&ev),
        Err(Error::NotXForm { .. }) => shannon_bits(&state.eigenvalues()),
        Err(e) => Err(e),
    }
}

/// Entropy of a 2x2 Hermitian PSD matrix with arbitrary trace.
fn entropy2_unnormalized(m: &Mat2) -> f64 {
    let [a, b] = herm2_eigenvalues(m);
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(a) + term(b)
}

/// `Σ_k p_k S(rho_A|k)` for the measurement along Bloch direction `(theta, phi)` on B.
///
/// Using unnormalized conditional states `M_k` with trace `p_k`,
/// `p_k S(M_k / p_k) = S_u(M_k) + p_k log2 p_k`, where `S_u` sums `-x log2 x`
/// over the eigenvalues of `M_k`.
fn conditional_entropy(m: &Mat4, theta: f64, phi: f64) -> f64 {
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let e = C64::from_polar(1.0, phi);
    let up = [C64::new(c, 0.0), e * s];
    let down = [-e.conj() * s, C64::new(c, 0.0)];
    let mut total = 0.0;
    for n in [up, down] {
        let mk = Mat2::from_fn(|a, a2| {
            let mut z = C64::new(0.0, 0.0);
            for b in 0..2 {
                for b2 in 0..2 {
                    z += n[b].conj() * m[(2 * a + b, 2 * a2 + b2)] * n[b2];
                }
            }
            z
        });
        let p = mk.trace().re;
        total += entropy2_unnormalized(&mk);
        if p > 0.0 {
            total += p * p.log2();
        }
    }
    total
}

/// Outcome of the discord minimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscordResult {
    pub discord: f64,
    /// Optimal Bloch polar angle.
    pub theta: f64,
    /// Optimal Bloch azimuth.
    pub phi: f64,
}

fn clip_discord(d: f64) -> f64 {
    if (-DISCORD_CLIP..0.0).contains(&d) {
        0.0
    } else {
        d
    }
}

/// Discord with measurement on the second qubit, by grid search and simplex refinement.
pub fn discord_detailed(state: &TwoQubitState) -> Result<DiscordResult> {
    let s_b = shannon_bits(&herm2_eigenvalues(&state.reduced_b()))?;
    let s_ab = shannon_bits(&state.eigenvalues())?;
    let m = *state.matrix();
    let f = |th: f64, ph: f64| conditional_entropy(&m, th, ph);

    let n = DISCORD_GRID;
    let mut cands: Vec<(f64, f64, f64)> = Vec::with_capacity(n * n);
    for i in 0..n {
        let th = PI * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let ph = TAU * j as f64 / n as f64;
            cands.push((f(th, ph), th, ph));
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &(_, th, ph) in cands.iter().take(4) {
        let r = nelder_mead(|x| f(x[0], x[1]), &[th, ph], PI / n as f64, 1e-14, 1e-9, 400);
        if r.f < best.0 {
            best = (r.f, r.x[0], r.x[1]);
        }
    }
    if cands[0].0 < best.0 {
        best = cands[0];
    }
    let d = s_b - s_ab + best.0;
    if d < -DISCORD_CLIP {
        return Err(Error::InvalidState(format!(
            "discord evaluated to {d:e}; the state is not physical"
        )));
    }
    let theta = best.1.rem_euclid(TAU);
    let (theta, phi) = if theta > PI {
        (TAU - theta, (best.2 + PI).rem_euclid(TAU))
    } else {
        (theta, best.2.rem_euclid(TAU))
    };
    Ok(DiscordResult {
        discord: clip_discord(d),
        theta,
        phi,
    })
}

/// Discord with measurement on the second qubit.
pub fn discord(state: &TwoQubitState) -> Result<f64> {
    Ok(discord_detailed(state)?.discord)
}

/// Discord with measurement on the first qubit.
pub fn discord_a(state: &TwoQubitState) -> Result<f64> {
    discord(&state.swapped())
}

/// Discord of an X-state by a one-angle search.
///
/// Local phase rotations make both coherences real and nonnegative, after
/// which the azimuth is fixed to zero and only the polar angle is scanned.
pub fn discord_x_fast(state: &TwoQubitState) -> Result<f64> {
    let b = state.to_blocks()?;
    let (a14, a23) = (b.plus[(0, 1)].arg(), b.minus[(0, 1)].arg());
    // diag(1, e^{ia}) ⊗ diag(1, e^{ib}) sends rho14 -> rho14 e^{-i(a+b)} and
    // rho23 -> rho23 e^{i(b-a)}.
    let (ra, rb) = (0.5 * (a14 + a23), 0.5 * (a14 - a23));
    let u = [
        C64::new(1.0, 0.0),
        C64::from_polar(1.0, rb),
        C64::from_polar(1.0, ra),
        C64::from_polar(1.0, ra + rb),
    ];
    let m = Mat4::from_fn(|i, j| u[i] * state.matrix()[(i, j)] * u[j].conj());
    let s_b = shannon_bits(&herm2_eigenvalues(&state.reduced_b()))?;
    let s_ab = shannon_bits(&x_eigenvalues(state)?)?;
    let f = |th: f64| conditional_entropy(&m, th, 0.0);
    let n = 4 * DISCORD_GRID;
    let (mut bi, mut bv) = (0, f64::INFINITY);
    for i in 0..n {
        let v = f(PI * i as f64 / (n - 1) as f64);
        if v < bv {
            bi = i;
            bv = v;
        }
    }
    let h = PI / (n - 1) as f64;
    let c = h * bi as f64;
    let (_, v) = golden(f, (c - h).max(0.0), (c + h).min(PI), 1e-10);
    let d = s_b - s_ab + v.min(bv);
    Ok(clip_discord(d.max(-DISCORD_CLIP)))
}

/// All four quantifiers.
pub fn report(state: &TwoQubitState) -> Result<QuantifierReport> {
    Ok(QuantifierReport {
        negativity: negativity(state)?,
        concurrence: concurrence(state)?,
        entropy: entropy(state)?,
        discord: discord(state)?,
    })
}
