//! Flow-memory delay force.
//!
//! The reduced plate equation carries a delay potential
//!
//!   q(u^t) = (1/2π) ∫_0^{t*} ∫_0^{2π} M_θ² [u_ext](x - (U+sinθ)s, y - s cosθ, t - s) dθ ds,
//!
//! with M_θ = sinθ ∂x + cosθ ∂y. Galerkin-projected, the (θ, s) quadrature
//! collapses into precomputed translation-overlap tensors C[m] so that
//!
//!   <q(u^t), e_j> = Σ_m w_m (C[m] a(t - s_m))_j,
//!
//! a pure contraction against the displacement history. The s-nodes coincide
//! with the integration step, so history values are read exactly, never
//! interpolated.

use crate::basis::{BasisSet, Field, PlateDomain};
use crate::beam::BeamBasis;
use crate::float::F64Ext;
use crate::linalg::Mat;
use crate::quad::{periodic_trapezoid, trapezoid_weights, GaussRule};
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Excluded band around Mach 1.
pub const SPEED_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DelayParams {
    /// Unperturbed flow speed, Mach-normalized.
    pub flow_speed: f64,
    /// Delay horizon t*.
    pub t_star: f64,
    /// Angular quadrature count (periodic trapezoid).
    pub n_theta: usize,
    /// Temporal quadrature count; s-grid is {m t*/n_s : m = 0..n_s}.
    pub n_s: usize,
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        if self.flow_speed < 0.0 || (self.flow_speed - 1.0).abs() <= SPEED_GAP {
            return Err(Error::DegenerateSpeed(self.flow_speed));
        }
        if !(self.t_star > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_star must be positive, got {}",
                self.t_star
            )));
        }
        if self.n_theta < 8 {
            return Err(Error::InvalidArgument(format!(
                "n_theta must be >= 8, got {}",
                self.n_theta
            )));
        }
        if self.n_s < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_s must be >= 2, got {}",
                self.n_s
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_star / self.n_s as f64
    }
}

/// Largest backward-characteristic exit time over the plate: the smallest s
/// after which every trajectory (x - (U+sinθ)s, y - s cosθ) has left the
/// rectangle.
///
/// For a convex box the exit time of a straight ray is closed-form, and its
/// supremum over starting points factorizes per axis, so only θ is gridded.
/// A (1 + 1e-9) safety factor keeps the kernel support strictly inside.
pub fn compute_tstar(flow_speed: f64, domain: &PlateDomain, grid: usize) -> Result<f64> {
    if (flow_speed - 1.0).abs() <= SPEED_GAP {
        return Err(Error::DegenerateSpeed(flow_speed));
    }
    if grid < 64 {
        return Err(Error::InvalidArgument(format!(
            "theta grid must be >= 64, got {grid}"
        )));
    }
    let mut sup: f64 = 0.0;
    for i in 0..grid {
        let theta = core::f64::consts::TAU * i as f64 / grid as f64;
        sup = sup.max_f(ray_box_exit_sup(flow_speed, domain, theta));
    }
    Ok(sup * (1.0 + 1e-9))
}

/// sup over starting points in the box of the ray exit time for one angle.
pub fn ray_box_exit_sup(flow_speed: f64, domain: &PlateDomain, theta: f64) -> f64 {
    let vx = flow_speed + theta.sin();
    let vy = theta.cos();
    let tx = if vx == 0.0 {
        f64::INFINITY
    } else {
        domain.lx / vx.abs()
    };
    let ty = if vy == 0.0 {
        f64::INFINITY
    } else {
        domain.ly / vy.abs()
    };
    tx.min_f(ty)
}

/// Exit time of the single ray launched at (x, y); used by the brute-force
/// oracle and available for diagnostics.
pub fn ray_box_exit(flow_speed: f64, domain: &PlateDomain, x: f64, y: f64, theta: f64) -> f64 {
    let vx = -(flow_speed + theta.sin());
    let vy = -theta.cos();
    let tx = if vx > 0.0 {
        (domain.lx - x) / vx
    } else if vx < 0.0 {
        x / -vx
    } else {
        f64::INFINITY
    };
    let ty = if vy > 0.0 {
        (domain.ly - y) / vy
    } else if vy < 0.0 {
        y / -vy
    } else {
        f64::INFINITY
    };
    tx.min_f(ty)
}

/// Precomputed delay-force tensors.
#[derive(Debug, Clone)]
pub struct DelayKernel {
    pub params: DelayParams,
    /// Step between s-nodes; equals the intended integration step.
    pub dt: f64,
    /// Composite trapezoid weights over the s-grid.
    pub s_weights: Vec<f64>,
    /// C[m][j][k] = (1/2π) Σ_q w_q ∬ [M²_{θ_q} e_k](x - shift(θ_q, s_m)) e_j dx dy.
    pub slabs: Vec<Mat>,
    /// Fingerprint of the basis this kernel was assembled against.
    pub basis_hash: u64,
    /// Set when the per-step support shift outruns ~4 quadrature cells.
    pub coarse_shift_warning: bool,
}

/// Overlap Gram blocks for one direction and one scalar shift:
/// out[d][j][k] = ∫ phi_k^{(d)}(x - shift) phi_j(x) dx over the support overlap.
fn overlap_blocks(beam: &BeamBasis, shift: f64, order: usize) -> Option<[Mat; 3]> {
    let lo = 0.0f64.max_f(shift);
    let hi = beam.length.min_f(beam.length + shift);
    if hi - lo < 1e-14 {
        return None;
    }
    let rule = GaussRule::legendre(order, lo, hi);
    let shifted: Vec<f64> = rule.nodes.iter().map(|&x| x - shift).collect();
    let tab_test = beam.tabulate(&rule.nodes);
    let tab_shift = beam.tabulate(&shifted);
    let n = beam.len();
    let mut out = [Mat::zeros(n, n), Mat::zeros(n, n), Mat::zeros(n, n)];
    for j in 0..n {
        for k in 0..n {
            let mut acc = [0.0f64; 3];
            for (q, &w) in rule.weights.iter().enumerate() {
                let tj = w * tab_test[j][0][q];
                acc[0] += tj * tab_shift[k][0][q];
                acc[1] += tj * tab_shift[k][1][q];
                acc[2] += tj * tab_shift[k][2][q];
            }
            out[0][(j, k)] = acc[0];
            out[1][(j, k)] = acc[1];
            out[2][(j, k)] = acc[2];
        }
    }
    Some(out)
}

/// One s-slab of the kernel tensor. Exposed so callers may assemble slabs in
/// parallel; the result is identical to the serial path slab by slab.
pub fn kernel_slab(basis: &BasisSet, params: &DelayParams, m: usize) -> Mat {
    let n = basis.n();
    let s = m as f64 * params.dt();
    let theta = periodic_trapezoid(params.n_theta);
    let inv_2pi = 1.0 / core::f64::consts::TAU;
    let mut slab = Mat::zeros(n, n);
    for (q, &th) in theta.nodes.iter().enumerate() {
        let (sin_t, cos_t) = (th.sin(), th.cos());
        let ax = (params.flow_speed + sin_t) * s;
        let ay = cos_t * s;
        let Some(bx) = overlap_blocks(basis.beam_x(), ax, basis.quad_order) else {
            continue;
        };
        let Some(by) = overlap_blocks(basis.beam_y(), ay, basis.quad_order) else {
            continue;
        };
        let w = theta.weights[q] * inv_2pi;
        let (w_xx, w_xy, w_yy) = (
            w * sin_t * sin_t,
            2.0 * w * sin_t * cos_t,
            w * cos_t * cos_t,
        );
        let ny = basis.ny;
        for a in 0..n {
            let (jx, jy) = (a / ny, a % ny);
            for b in 0..n {
                let (kx, ky) = (b / ny, b % ny);
                slab[(a, b)] += w_xx * bx[2][(jx, kx)] * by[0][(jy, ky)]
                    + w_xy * bx[1][(jx, kx)] * by[1][(jy, ky)]
                    + w_yy * bx[0][(jx, kx)] * by[2][(jy, ky)];
            }
        }
    }
    slab
}

/// Assemble all translation-overlap tensors.
pub fn build_kernel(basis: &BasisSet, params: &DelayParams) -> Result<DelayKernel> {
    params.validate()?;
    let dt = params.dt();
    let mut slabs = Vec::with_capacity(params.n_s + 1);
    for m in 0..=params.n_s {
        slabs.push(kernel_slab(basis, params, m));
    }
    for (m, slab) in slabs.iter().enumerate() {
        for v in &slab.data {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample(format!("kernel slab {m}")));
            }
        }
    }
    let max_speed = params.flow_speed + 1.0;
    let cell = basis.domain.lx.min_f(basis.domain.ly) / basis.quad_order as f64;
    let coarse_shift_warning = dt * max_speed > 4.0 * cell;
    Ok(DelayKernel {
        params: params.clone(),
        dt,
        s_weights: trapezoid_weights(params.n_s, dt),
        slabs,
        basis_hash: basis.build_hash(),
        coarse_shift_warning,
    })
}

impl DelayKernel {
    pub fn n(&self) -> usize {
        self.slabs[0].rows
    }

    /// Modal delay force Σ_m w_m C[m] a(t - s_m); linear in the history.
    pub fn eval_q(&self, hist: &DelayHistory) -> Result<Field> {
        if !hist.filled() {
            return Err(Error::HistoryUnderfilled {
                have: hist.pushed().min(hist.len()),
                need: hist.len(),
            });
        }
        if hist.len() != self.params.n_s + 1 {
            return Err(Error::InvalidArgument(format!(
                "history has {} slots, kernel needs {}",
                hist.len(),
                self.params.n_s + 1
            )));
        }
        if (hist.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidArgument(format!(
                "history step {} does not match kernel spacing {}",
                hist.dt(),
                self.dt
            )));
        }
        let mut out = vec![0.0; self.n()];
        for m in 0..=self.params.n_s {
            let w = self.s_weights[m];
            let a = hist.slot(m);
            let slab = &self.slabs[m];
            for j in 0..out.len() {
                let row = slab.row(j);
                let mut s = 0.0;
                for k in 0..row.len() {
                    s += row[k] * a[k];
                }
                out[j] += w * s;
            }
        }
        Ok(Field::from_coeffs(out))
    }
}

/// Ratio |q|² / (t* Σ_m w_m a_mᵀ K a_m) for one history: the discrete form
/// of the delay-force energy bound. Calibrating its supremum over random
/// histories once fixes the constant c in |q|² <= c t* ∫ |Δu|².
pub fn q_bound_ratio(kernel: &DelayKernel, basis: &BasisSet, hist: &DelayHistory) -> Result<f64> {
    let q = kernel.eval_q(hist)?;
    let qq: f64 = q.coeffs.iter().map(|v| v * v).sum();
    let mut window = 0.0;
    for m in 0..=kernel.params.n_s {
        let a = hist.slot(m);
        window += kernel.s_weights[m] * basis.k.quad_form(a, a);
    }
    Ok(qq / (kernel.params.t_star * window).max_f(1e-300))
}

/// Ring buffer of displacement coefficients over the trailing delay window.
///
/// Slot m holds a(t_head - m dt); timestamps derive from an integer step
/// counter so the grid never drifts.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistory {
    dt: f64,
    t_origin: f64,
    slots: Vec<Vec<f64>>,
    head: usize,
    pushed: u64,
}

impl DelayHistory {
    /// `len` slots covering a window of (len-1) dt.
    pub fn new(len: usize, dt: f64, t_origin: f64) -> Self {
        assert!(len >= 1 && dt > 0.0);
        DelayHistory {
            dt,
            t_origin,
            slots: vec![Vec::new(); len],
            head: len - 1,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn pushed(&self) -> usize {
        self.pushed.min(usize::MAX as u64) as usize
    }

    pub fn filled(&self) -> bool {
        self.pushed >= self.slots.len() as u64
    }

    /// Time of slot 0; exact multiple of dt past the origin.
    pub fn t_head(&self) -> f64 {
        self.t_origin + (self.pushed as f64 - 1.0) * self.dt
    }

    /// Advance the ring; the oldest slot is overwritten.
    pub fn push(&mut self, coeffs: &[f64]) {
        self.head = (self.head + 1) % self.slots.len();
        let slot = &mut self.slots[self.head];
        slot.clear();
        slot.extend_from_slice(coeffs);
        self.pushed += 1;
    }

    /// Coefficients at t_head - m dt.
    pub fn slot(&self, m: usize) -> &[f64] {
        debug_assert!(m < self.slots.len());
        let len = self.slots.len();
        &self.slots[(self.head + len - m) % len]
    }

    /// Raw slots ordered oldest to newest, for checkpointing.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for m in (0..self.len()).rev() {
            out.push(self.slot(m).to_vec());
        }
        out
    }

    /// Rebuild from a snapshot produced by `snapshot`.
    pub fn restore(len: usize, dt: f64, t_origin: f64, pushed: u64, rows: &[Vec<f64>]) -> Self {
        assert_eq!(rows.len(), len);
        let mut h = DelayHistory::new(len, dt, t_origin);
        for row in rows {
            h.push(row);
        }
        h.pushed = pushed;
        h
    }
}
