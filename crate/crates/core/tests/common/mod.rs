#![allow(dead_code)]

use rand::Rng;
use rmtq::dos::DensityOfStates;
use rmtq::states::{BellFamily, BlockState, InitialCondition, Mat2, TwoQubitState};
use rmtq::C64;

pub fn random_phase<R: Rng>(rng: &mut R) -> C64 {
    C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
}

/// A member of one of the four families, chosen uniformly.
pub fn random_condition<R: Rng>(rng: &mut R) -> InitialCondition {
    let alpha: f64 = rng.gen_range(0.0..=1.0);
    let beta = random_phase(rng) * (1.0 - alpha * alpha).max(0.0).sqrt();
    match rng.gen_range(0..4) {
        0 => InitialCondition::product(alpha),
        1 => InitialCondition::Bell1 {
            alpha1: alpha,
            beta1: beta,
        },
        2 => InitialCondition::Bell2 {
            alpha2: alpha,
            beta2: beta,
        },
        _ => InitialCondition::Werner {
            k: if rng.gen() {
                BellFamily::One
            } else {
                BellFamily::Two
            },
            alpha3: rng.gen_range(-1.0 / 3.0..=1.0),
            alpha,
            beta,
        },
    }
}

pub fn random_lorentzian<R: Rng>(rng: &mut R) -> (DensityOfStates, f64, f64) {
    let gamma = rng.gen_range(0.05..2.0);
    let e = rng.gen_range(-3.0..3.0);
    let s = rng.gen_range(0.5..1.5);
    (DensityOfStates::lorentzian(gamma).unwrap(), e, s)
}

fn random_psd2<R: Rng>(rng: &mut R) -> Mat2 {
    let mut g = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let a = Mat2::new(g(), g(), g(), g());
    a * a.adjoint()
}

/// A random X-state: two random positive blocks, normalised together.
pub fn random_x_state<R: Rng>(rng: &mut R) -> TwoQubitState {
    let plus = random_psd2(rng);
    let minus = random_psd2(rng);
    let tr = (plus.trace() + minus.trace()).re;
    BlockState {
        plus: plus / C64::new(tr, 0.0),
        minus: minus / C64::new(tr, 0.0),
    }
    .to_state()
}

/// A random pure X-state from either Bell-like family.
pub fn random_pure_x_state<R: Rng>(rng: &mut R) -> TwoQubitState {
    let alpha: f64 = rng.gen_range(0.0..=1.0);
    let beta = random_phase(rng) * (1.0 - alpha * alpha).max(0.0).sqrt();
    let c = if rng.gen() {
        InitialCondition::Bell1 {
            alpha1: alpha,
            beta1: beta,
        }
    } else {
        InitialCondition::Bell2 {
            alpha2: alpha,
            beta2: beta,
        }
    };
    c.build().unwrap()
}

pub fn max_hermitian_error(s: &TwoQubitState) -> f64 {
    let m = s.matrix();
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
