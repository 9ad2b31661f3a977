//! 1-D clamped-clamped beam eigenfunctions.
//!
//! Mode j solves phi'''' = kappa^4 phi on [0, L] with phi = phi' = 0 at both
//! ends; wavenumbers satisfy cos(kL) cosh(kL) = 1. The shape is
//!
//!   phi(x) = cosh(kx) - cos(kx) - sigma (sinh(kx) - sin(kx)),
//!   sigma  = (cosh(kL) - cos(kL)) / (sinh(kL) - sin(kL)).
//!
//! Direct evaluation cancels catastrophically near x = L once kL is large, so
//! the hyperbolic combination is carried in the equivalent exponential form
//! with beta = 1 - sigma computed from
//!
//!   beta = (cos(kL) - sin(kL) - exp(-kL)) / (sinh(kL) - sin(kL)),
//!
//! which stays accurate for every mode index used here.

// Under cfg(test) std's inherent float methods shadow this shim.
#[cfg_attr(test, allow(unused_imports))]
use crate::float::F64Ext;
use crate::quad::GaussRule;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMode {
    /// Physical wavenumber kappa (root of the frequency equation divided by L).
    pub kappa: f64,
    sigma: f64,
    beta: f64,
    /// L2 normalization factor.
    norm: f64,
}

impl BeamMode {
    /// Value of the deriv-th derivative (deriv <= 3) at x in [0, L].
    pub fn eval(&self, x: f64, deriv: usize) -> f64 {
        let t = self.kappa * x;
        let ep = t.exp();
        let em = (-t).exp();
        // cosh(t) - sigma sinh(t) and sinh(t) - sigma cosh(t), cancellation-free.
        let cosh_part = 0.5 * (self.beta * ep + (2.0 - self.beta) * em);
        let sinh_part = 0.5 * (self.beta * ep - (2.0 - self.beta) * em);
        let (c, s) = (t.cos(), t.sin());
        let k = self.kappa;
        match deriv {
            0 => self.norm * (cosh_part - c + self.sigma * s),
            1 => self.norm * k * (sinh_part + s + self.sigma * c),
            2 => self.norm * k * k * (cosh_part + c - self.sigma * s),
            3 => self.norm * k * k * k * (sinh_part - s - self.sigma * c),
            _ => panic!("beam derivative order {deriv} not supported"),
        }
    }
}

/// All modes in one direction, sharing the interval [0, length].
#[derive(Debug, Clone, PartialEq)]
pub struct BeamBasis {
    pub length: f64,
    pub modes: Vec<BeamMode>,
}

/// Scaled frequency residual cos(t) - sech(t); same roots as
/// cos(t) cosh(t) = 1 with no overflow for large t.
fn freq_residual(t: f64) -> f64 {
    t.cos() - 1.0 / t.cosh()
}

/// j-th positive root (j = 1, 2, ...) of the clamped-beam frequency equation,
/// by bisection around the asymptotic seed (j + 1/2) pi.
fn beam_root(j: usize) -> f64 {
    let seed = (j as f64 + 0.5) * core::f64::consts::PI;
    let mut lo = seed - 0.7;
    let mut hi = seed + 0.7;
    let flo = freq_residual(lo);
    debug_assert!(
        flo * freq_residual(hi) < 0.0,
        "root bracket failed for mode {j}"
    );
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fmid = freq_residual(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl BeamBasis {
    pub fn new(n_modes: usize, length: f64) -> Self {
        let mut modes = Vec::with_capacity(n_modes);
        for j in 1..=n_modes {
            let t = beam_root(j);
            let kappa = t / length;
            let (ch, sh) = (t.cosh(), t.sinh());
            let (c, s) = (t.cos(), t.sin());
            let sigma = (ch - c) / (sh - s);
            let beta = (c - s - (-t).exp()) / (sh - s);
            let mut mode = BeamMode {
                kappa,
                sigma,
                beta,
                norm: 1.0,
            };
            // L2-normalize with a rule fine enough for this mode's oscillation.
            let rule = GaussRule::legendre(2 * j + 24, 0.0, length);
            let nsq = rule.integrate(|x| {
                let v = mode.eval(x, 0);
                v * v
            });
            mode.norm = 1.0 / nsq.sqrt();
            modes.push(mode);
        }
        BeamBasis { length, modes }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    /// Values of every mode derivative (0..=2) at a batch of points:
    /// out[mode][deriv][point].
    pub fn tabulate(&self, points: &[f64]) -> Vec<[Vec<f64>; 3]> {
        self.modes
            .iter()
            .map(|m| {
                [
                    points.iter().map(|&x| m.eval(x, 0)).collect(),
                    points.iter().map(|&x| m.eval(x, 1)).collect(),
                    points.iter().map(|&x| m.eval(x, 2)).collect(),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_satisfy_frequency_equation() {
        for j in 1..=16 {
            let t = beam_root(j);
            assert!(
                freq_residual(t).abs() < 1e-12,
                "mode {j}: residual {}",
                freq_residual(t)
            );
            let seed = (j as f64 + 0.5) * core::f64::consts::PI;
            assert!((t - seed).abs() < 0.1, "mode {j} far from asymptotic seed");
        }
        // First root is well inside (3pi/2 - 0.1, 3pi/2 + 0.1) and matches the
        // classical value to bisection accuracy.
        assert!((beam_root(1) - 4.730040744862704).abs() < 1e-10);
    }

    #[test]
    fn modes_vanish_at_clamped_ends() {
        let basis = BeamBasis::new(12, 1.0);
        for (j, m) in basis.modes.iter().enumerate() {
            for &x in &[0.0, 1.0] {
                assert!(m.eval(x, 0).abs() < 1e-10, "mode {j} value at {x}");
                assert!(m.eval(x, 1).abs() < 1e-9 * m.kappa, "mode {j} slope at {x}");
            }
        }
    }

    #[test]
    fn modes_are_orthonormal() {
        let basis = BeamBasis::new(8, 1.3);
        let rule = GaussRule::legendre(60, 0.0, 1.3);
        for i in 0..8 {
            for j in 0..=i {
                let ip = rule.integrate(|x| basis.modes[i].eval(x, 0) * basis.modes[j].eval(x, 0));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-10, "({i},{j}): {ip}");
            }
        }
    }

    #[test]
    fn second_derivative_gram_is_diagonal_kappa4() {
        // Self-adjointness of the fourth-order operator makes the curvature
        // Gram matrix diagonal with entries kappa^4 for normalized modes.
        let basis = BeamBasis::new(6, 1.0);
        let rule = GaussRule::legendre(64, 0.0, 1.0);
        for i in 0..6 {
            for j in 0..=i {
                let ip = rule.integrate(|x| basis.modes[i].eval(x, 2) * basis.modes[j].eval(x, 2));
                let expect = if i == j {
                    basis.modes[i].kappa.powi(4)
                } else {
                    0.0
                };
                assert!(
                    (ip - expect).abs() < 1e-6 * basis.modes[i].kappa.powi(4).max(1.0),
                    "({i},{j}): {ip} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn third_derivative_matches_finite_difference() {
        let basis = BeamBasis::new(5, 1.0);
        let h = 1e-6;
        for m in &basis.modes {
            for p in 1..10 {
                let x = p as f64 / 10.0;
                let fd = (m.eval(x + h, 2) - m.eval(x - h, 2)) / (2.0 * h);
                let an = m.eval(x, 3);
                assert!(
                    (fd - an).abs() < 1e-4 * an.abs().max(m.kappa * m.kappa * m.kappa),
                    "x={x}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn stable_form_matches_naive_formula_for_low_modes() {
        let basis = BeamBasis::new(4, 1.0);
        for m in &basis.modes {
            let (k, sg) = (m.kappa, m.sigma);
            for p in 0..=20 {
                let x = p as f64 / 20.0;
                let t = k * x;
                let naive = m.norm * (t.cosh() - t.cos() - sg * (t.sinh() - t.sin()));
                assert!((m.eval(x, 0) - naive).abs() < 1e-9);
            }
        }
    }
}
