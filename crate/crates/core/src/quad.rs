//! Adaptive Gauss–Kronrod quadrature and principal values.

// node tables are quoted at their published precision
#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::C64;

pub(crate) trait Value:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn abs(self) -> f64;
}

impl Value for f64 {
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl Value for C64 {
    fn abs(self) -> f64 {
        self.norm()
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One 15-point Kronrod panel and its embedded 7-point Gauss error estimate.
pub(crate) fn gk15<T: Value, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k = k + s * WGK[i];
        if i % 2 == 1 {
            g = g + s * WG[i / 2];
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).abs())
}

struct Panel<T> {
    a: f64,
    b: f64,
    val: T,
    err: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for Tol {
    fn default() -> Self {
        Self {
            abs: 1e-13,
            rel: 1e-12,
            max_panels: 4000,
        }
    }
}

/// Globally adaptive integration over `[a, b]`, bisecting the worst panel.
pub(crate) fn integrate<T: Value, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    tol: Tol,
) -> Result<(T, f64)> {
    if a == b {
        return Ok((T::default(), 0.0));
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, val: v, err: e });
    let (mut total, mut err) = (v, e);
    loop {
        if !err.is_finite() || !total.abs().is_finite() {
            return Err(Error::Convergence {
                what: "quadrature",
                iterations: heap.len(),
                residual: err,
            });
        }
        if err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok((total, err));
        }
        if heap.len() >= tol.max_panels {
            return Err(Error::Convergence {
                what: "quadrature",
                iterations: heap.len(),
                residual: err,
            });
        }
        let p = heap.pop().expect("nonempty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // Panel at floating-point resolution; accept it as is.
            heap.push(Panel { err: 0.0, ..p });
            err = heap.iter().map(|q| q.err).sum();
            continue;
        }
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        total = total - p.val + v1 + v2;
        err = err - p.err + e1 + e2;
        heap.push(Panel {
            a: p.a,
            b: m,
            val: v1,
            err: e1,
        });
        heap.push(Panel {
            a: m,
            b: p.b,
            val: v2,
            err: e2,
        });
        if heap.len() % 64 == 0 {
            // Refresh the running sums to stop drift.
            total = heap.iter().fold(T::default(), |s, q| s + q.val);
            err = heap.iter().map(|q| q.err).sum();
        }
    }
}

/// Integrates over `[a, b]` splitting at `breaks` (points outside are ignored).
pub(crate) fn integrate_with_breaks<T: Value, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tol,
) -> Result<(T, f64)> {
    let mut pts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let n = (pts.len() - 1) as f64;
    let sub = Tol {
        abs: tol.abs / n,
        ..tol
    };
    let mut total = T::default();
    let mut err = 0.0;
    for w in pts.windows(2) {
        let (v, e) = integrate(&mut f, w[0], w[1], sub)?;
        total = total + v;
        err += e;
    }
    Ok((total, err))
}

/// `pv ∫_a^b f(x) dx` where `f` has a single simple pole at `t`.
///
/// The pole is excised symmetrically with half-width `h`. The truncated
/// integral has an error series in odd powers of `h`, which is removed by
/// Richardson extrapolation while `h` is halved, until two successive
/// extrapolants agree to working precision. The last difference must not
/// exceed `tol`.
pub(crate) fn principal_value<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    t: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    const MAX_LEVELS: usize = 60;
    const COLUMNS: usize = 4;
    let reach = (t - a).min(b - t);
    if !(t > a && t < b) || reach <= 1e-9 * (b - a) {
        return Err(Error::Singular(format!(
            "pole at {t} is not interior to [{a}, {b}]"
        )));
    }
    let qt = Tol::default();
    // Tails beyond the symmetric window are regular.
    let (left, _) = integrate_with_breaks(&mut f, a, t - reach, breaks, qt)?;
    let (right, _) = integrate_with_breaks(&mut f, t + reach, b, breaks, qt)?;
    let ubreaks: Vec<f64> = breaks.iter().map(|&x| (x - t).abs()).collect();
    let mut h = 0.25 * reach;
    let (core, _) = integrate_with_breaks(|u| f(t + u) + f(t - u), h, reach, &ubreaks, qt)?;
    let mut acc = left + right + core;

    let mut prev: Vec<f64> = vec![acc];
    let mut best = acc;
    let mut spread = f64::INFINITY;
    for _ in 0..MAX_LEVELS {
        let (piece, _) = integrate_with_breaks(|u| f(t + u) + f(t - u), 0.5 * h, h, &ubreaks, qt)?;
        acc += piece;
        h *= 0.5;
        let mut row = vec![acc];
        for j in 1..=prev.len().min(COLUMNS - 1) {
            let p = 2.0f64.powi(2 * j as i32 - 1);
            row.push((p * row[j - 1] - prev[j - 1]) / (p - 1.0));
        }
        let est = *row.last().expect("row");
        spread = (est - best).abs();
        best = est;
        prev = row;
        if !best.is_finite() {
            break;
        }
        if prev.len() == COLUMNS && spread <= 1e-12 * best.abs().max(1.0) {
            break;
        }
    }
    if !best.is_finite() || spread > tol {
        return Err(Error::Convergence {
            what: "principal-value extrapolation",
            iterations: MAX_LEVELS,
            residual: spread,
        });
    }
    Ok(best)
}
