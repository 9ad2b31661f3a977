//! Half-space flow potential driven by the plate history.
//!
//! For Neumann data [u_t + U u_x]_ext on z = 0 the responding potential has
//! the explicit retarded representation
//!
//!   φ**(x,t) = -χ(t-z)/(2π) ∫_z^{t*} ∫_0^{2π} ([u_t] + U [u_x])(x - κ₁, y - κ₂, t - s) dθ ds,
//!
//! with κ₁ = U s + √(s²-z²) sinθ, κ₂ = √(s²-z²) cosθ and extension of the
//! plate fields by zero outside the rectangle. Its time derivative has a
//! four-term form whose s-weight s/√(s²-z²) is integrable; the substitution
//! s = z cosh σ removes both the weight and the square-root kink exactly, so
//! plain Gauss-Legendre applies in σ.
//!
//! `reduction_residual` checks, point by point on z = 0, that
//!
//!   (∂_t + U ∂_x) φ** = -(u_t + U u_x) - q(u^t),
//!
//! with q evaluated pointwise by direct (θ, s) quadrature — the identity that
//! turns the coupled flow-plate problem into the delayed plate equation.

use crate::basis::{BasisSet, Field};
use crate::float::F64Ext;
use crate::quad::{periodic_trapezoid, GaussRule};
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Evaluation coordinates in the closed half space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

impl TracePoint {
    pub fn validate(&self) -> Result<()> {
        if self.z < 0.0 || self.t < 0.0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "trace point needs z >= 0 and t >= 0, got z={}, t={}",
                self.z,
                self.t
            )));
        }
        Ok(())
    }
}

/// Quadrature resolution and flow parameters for trace evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub flow_speed: f64,
    pub t_star: f64,
    /// Gauss-Legendre node count along s (or σ after substitution).
    pub n_s: usize,
    /// Periodic trapezoid node count along θ.
    pub n_theta: usize,
}

/// Plate displacement/velocity coefficients as a function of time.
pub trait Trajectory {
    fn dim(&self) -> usize;
    /// (a(t), a'(t)).
    fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>);
    fn covers(&self, t_lo: f64, t_hi: f64) -> bool;
}

/// Analytic single-frequency trajectory a(t) = mean + osc sin(ω t + phase).
#[derive(Debug, Clone)]
pub struct SyntheticTrajectory {
    pub mean: Vec<f64>,
    pub osc: Vec<f64>,
    pub omega: f64,
    pub phase: f64,
}

impl Trajectory for SyntheticTrajectory {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let arg = self.omega * t + self.phase;
        let (s, c) = (arg.sin(), arg.cos());
        let a = self
            .mean
            .iter()
            .zip(&self.osc)
            .map(|(m, o)| m + o * s)
            .collect();
        let v = self.osc.iter().map(|o| o * self.omega * c).collect();
        (a, v)
    }

    fn covers(&self, _t_lo: f64, _t_hi: f64) -> bool {
        true
    }
}

/// Uniform-step recorded trajectory with cubic Hermite interpolation between
/// nodes (stored velocities supply the slopes).
#[derive(Debug, Clone)]
pub struct StoredTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub rows: Vec<(Vec<f64>, Vec<f64>)>,
}

impl StoredTrajectory {
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.rows.len() - 1) as f64 * self.dt
    }
}

impl Trajectory for StoredTrajectory {
    fn dim(&self) -> usize {
        self.rows[0].0.len()
    }

    fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.rows.len();
        let pos = (t - self.t0) / self.dt;
        let i = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
        let th = pos - i as f64;
        let (a0, v0) = &self.rows[i];
        let (a1, v1) = &self.rows[i + 1];
        let h00 = (2.0 * th - 3.0) * th * th + 1.0;
        let h10 = ((th - 2.0) * th + 1.0) * th;
        let h01 = (3.0 - 2.0 * th) * th * th;
        let h11 = (th - 1.0) * th * th;
        let g00 = 6.0 * th * (th - 1.0);
        let g10 = (3.0 * th - 4.0) * th + 1.0;
        let g01 = -6.0 * th * (th - 1.0);
        let g11 = (3.0 * th - 2.0) * th;
        let dim = a0.len();
        let mut a = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        for k in 0..dim {
            a[k] = h00 * a0[k] + h10 * self.dt * v0[k] + h01 * a1[k] + h11 * self.dt * v1[k];
            v[k] = g00 / self.dt * a0[k] + g10 * v0[k] + g01 / self.dt * a1[k] + g11 * v1[k];
        }
        (a, v)
    }

    fn covers(&self, t_lo: f64, t_hi: f64) -> bool {
        t_lo >= self.t0 - 1e-12 && t_hi <= self.t_end() + 1e-12
    }
}

fn require_coverage(traj: &dyn Trajectory, point: &TracePoint, params: &FlowParams) -> Result<()> {
    let lo = point.t - params.t_star;
    let hi = point.t - point.z;
    if !traj.covers(lo, hi) {
        return Err(Error::InsufficientCoverage {
            have: hi - lo,
            need: params.t_star + point.z,
        });
    }
    Ok(())
}

/// (θ, s) quadrature on the plane z = 0: for each angle the backward ray is
/// integrated on [0, exit ∧ t*]; beyond the exit the extended integrand is
/// identically zero, and splitting there keeps Gauss-Legendre accurate even
/// for integrands whose derivatives jump across ∂Ω.
fn plane_integral<F>(
    x: f64,
    y: f64,
    t: f64,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
    f: F,
) -> f64
where
    F: Fn(&Field, &Field, f64, f64, f64, f64) -> f64,
{
    let theta = periodic_trapezoid(params.n_theta);
    let inside = basis.domain.contains(x, y);
    let mut total = 0.0;
    for (q, &th) in theta.nodes.iter().enumerate() {
        let (st, ct) = (th.sin(), th.cos());
        let s_hi = if inside {
            crate::delay::ray_box_exit(params.flow_speed, &basis.domain, x, y, th)
                .min_f(params.t_star)
        } else {
            params.t_star
        };
        if s_hi <= 0.0 {
            continue;
        }
        let rule = GaussRule::legendre(params.n_s, 0.0, s_hi);
        let mut s_sum = 0.0;
        for (s, w) in rule.nodes.iter().zip(rule.weights.iter()) {
            let (a, v) = traj.sample(t - s);
            let (fa, fv) = (Field::from_coeffs(a), Field::from_coeffs(v));
            let xp = x - (params.flow_speed + st) * s;
            let yp = y - ct * s;
            s_sum += w * f(&fa, &fv, xp, yp, st, ct);
        }
        total += theta.weights[q] * s_sum;
    }
    total
}

/// s-nodes and jacobians for the retarded integral: pairs (s, jac) such that
/// ∫_z^{t*} f(s) ds = Σ jac · f(s). For z > 0 the cosh substitution is used;
/// `rho` = √(s²-z²) comes out exactly as z sinh σ.
struct SGrid {
    nodes: Vec<(f64, f64, f64)>, // (s, rho, jacobian)
}

fn s_grid(z: f64, t_star: f64, n: usize) -> SGrid {
    let mut nodes = Vec::with_capacity(n);
    if z == 0.0 {
        let rule = GaussRule::legendre(n, 0.0, t_star);
        for (s, w) in rule.nodes.iter().zip(rule.weights.iter()) {
            nodes.push((*s, *s, *w));
        }
    } else {
        let sigma_max = (t_star / z).acosh();
        let rule = GaussRule::legendre(n, 0.0, sigma_max);
        for (sig, w) in rule.nodes.iter().zip(rule.weights.iter()) {
            let s = z * sig.cosh();
            let rho = z * sig.sinh();
            nodes.push((s, rho, w * rho)); // ds = z sinh σ dσ
        }
    }
    SGrid { nodes }
}

/// Flow potential φ** at a point, from the retarded representation.
pub fn eval_phi2(
    point: &TracePoint,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
) -> Result<f64> {
    point.validate()?;
    if point.t < point.z || point.z >= params.t_star {
        return Ok(0.0);
    }
    require_coverage(traj, point, params)?;
    let u = params.flow_speed;
    if point.z == 0.0 {
        let total = plane_integral(
            point.x,
            point.y,
            point.t,
            traj,
            basis,
            params,
            |fa, fv, xp, yp, _, _| {
                basis.eval_at(fv, xp, yp, (0, 0)) + u * basis.eval_at(fa, xp, yp, (1, 0))
            },
        );
        return Ok(-total / core::f64::consts::TAU);
    }
    let theta = periodic_trapezoid(params.n_theta);
    let grid = s_grid(point.z, params.t_star, params.n_s);
    let mut total = 0.0;
    for &(s, rho, jac) in &grid.nodes {
        let (a, v) = traj.sample(point.t - s);
        let (fa, fv) = (Field::from_coeffs(a), Field::from_coeffs(v));
        let mut th_sum = 0.0;
        for (q, &th) in theta.nodes.iter().enumerate() {
            let xp = point.x - u * s - rho * th.sin();
            let yp = point.y - rho * th.cos();
            let ut = basis.eval_at(&fv, xp, yp, (0, 0));
            let ux = basis.eval_at(&fa, xp, yp, (1, 0));
            th_sum += theta.weights[q] * (ut + u * ux);
        }
        total += jac * th_sum;
    }
    Ok(-total / core::f64::consts::TAU)
}

/// x-derivative of φ**, by differentiating under the integral.
pub fn eval_phi2_x(
    point: &TracePoint,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
) -> Result<f64> {
    point.validate()?;
    if point.t < point.z || point.z >= params.t_star {
        return Ok(0.0);
    }
    require_coverage(traj, point, params)?;
    let u = params.flow_speed;
    if point.z == 0.0 {
        let total = plane_integral(
            point.x,
            point.y,
            point.t,
            traj,
            basis,
            params,
            |fa, fv, xp, yp, _, _| {
                basis.eval_at(fv, xp, yp, (1, 0)) + u * basis.eval_at(fa, xp, yp, (2, 0))
            },
        );
        return Ok(-total / core::f64::consts::TAU);
    }
    let theta = periodic_trapezoid(params.n_theta);
    let grid = s_grid(point.z, params.t_star, params.n_s);
    let mut total = 0.0;
    for &(s, rho, jac) in &grid.nodes {
        let (a, v) = traj.sample(point.t - s);
        let (fa, fv) = (Field::from_coeffs(a), Field::from_coeffs(v));
        let mut th_sum = 0.0;
        for (q, &th) in theta.nodes.iter().enumerate() {
            let xp = point.x - u * s - rho * th.sin();
            let yp = point.y - rho * th.cos();
            let utx = basis.eval_at(&fv, xp, yp, (1, 0));
            let uxx = basis.eval_at(&fa, xp, yp, (2, 0));
            th_sum += theta.weights[q] * (utx + u * uxx);
        }
        total += jac * th_sum;
    }
    Ok(-total / core::f64::consts::TAU)
}

/// Time derivative of φ** via the four-term point-wise formula; the endpoint
/// weight s/√(s²-z²) is removed exactly by the cosh substitution.
pub fn eval_phi2_t(
    point: &TracePoint,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
) -> Result<f64> {
    point.validate()?;
    if point.t < point.z || point.z >= params.t_star {
        return Ok(0.0);
    }
    require_coverage(traj, point, params)?;
    let u = params.flow_speed;
    let t_star = params.t_star;
    let theta = periodic_trapezoid(params.n_theta);
    let z = point.z;
    let mut total = 0.0;

    // Boundary term at s = t*.
    {
        let rho = (t_star * t_star - z * z).sqrt();
        let (_, v) = traj.sample(point.t - t_star);
        let fv = Field::from_coeffs(v);
        for (q, &th) in theta.nodes.iter().enumerate() {
            let xp = point.x - u * t_star - rho * th.sin();
            let yp = point.y - rho * th.cos();
            total += theta.weights[q] * basis.eval_at(&fv, xp, yp, (0, 0));
        }
    }
    // Boundary term at s = z (shift collapses to the U-advection alone).
    {
        let (_, v) = traj.sample(point.t - z);
        let fv = Field::from_coeffs(v);
        let val = basis.eval_at(&fv, point.x - u * z, point.y, (0, 0));
        total -= core::f64::consts::TAU * val;
    }
    // Interior term: the weighted [M_θ u_t]. Differentiating the retarded
    // representation in t and moving ∂_t onto the s-dependence cancels the
    // U-advection pieces exactly, leaving the two boundary terms plus this
    // one volume term.
    if z == 0.0 {
        total += plane_integral(
            point.x,
            point.y,
            point.t,
            traj,
            basis,
            params,
            |_, fv, xp, yp, st, ct| {
                st * basis.eval_at(fv, xp, yp, (1, 0)) + ct * basis.eval_at(fv, xp, yp, (0, 1))
            },
        );
    } else {
        let grid = s_grid(z, t_star, params.n_s);
        for &(s, rho, jac) in &grid.nodes {
            let (_, v) = traj.sample(point.t - s);
            let fv = Field::from_coeffs(v);
            // weight s/√(s²-z²) combined with the jacobian gives s dσ, finite
            // all the way to the s = z endpoint.
            let weighted = jac * s / rho;
            let mut mth = 0.0;
            for (q, &th) in theta.nodes.iter().enumerate() {
                let xp = point.x - u * s - rho * th.sin();
                let yp = point.y - rho * th.cos();
                let utx = basis.eval_at(&fv, xp, yp, (1, 0));
                let uty = basis.eval_at(&fv, xp, yp, (0, 1));
                mth += theta.weights[q] * (th.sin() * utx + th.cos() * uty);
            }
            total += weighted * mth;
        }
    }
    Ok(total / core::f64::consts::TAU)
}

/// Delay potential q(u^t) at a single plate point by direct (θ, s)
/// quadrature of the defining integral — independent of the modal kernel.
///
/// The integrand's second derivatives jump where the backward ray crosses
/// ∂Ω, so for points inside the rectangle each θ-ray is integrated only up
/// to its closed-form exit time (the tail is identically zero); that keeps
/// Gauss-Legendre at full accuracy.
pub fn q_pointwise(
    x: f64,
    y: f64,
    t: f64,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
) -> Result<f64> {
    if !traj.covers(t - params.t_star, t) {
        return Err(Error::InsufficientCoverage {
            have: 0.0,
            need: params.t_star,
        });
    }
    let theta = periodic_trapezoid(params.n_theta);
    let mut total = 0.0;
    for (q, &th) in theta.nodes.iter().enumerate() {
        let (st, ct) = (th.sin(), th.cos());
        let s_hi = if basis.domain.contains(x, y) {
            crate::delay::ray_box_exit(params.flow_speed, &basis.domain, x, y, th)
                .min_f(params.t_star)
        } else {
            params.t_star
        };
        if s_hi <= 0.0 {
            continue;
        }
        let rule = GaussRule::legendre(params.n_s, 0.0, s_hi);
        let mut s_sum = 0.0;
        for (s, w) in rule.nodes.iter().zip(rule.weights.iter()) {
            let (a, _) = traj.sample(t - s);
            let fa = Field::from_coeffs(a);
            let xp = x - (params.flow_speed + st) * s;
            let yp = y - ct * s;
            let uxx = basis.eval_at(&fa, xp, yp, (2, 0));
            let uxy = basis.eval_at(&fa, xp, yp, (1, 1));
            let uyy = basis.eval_at(&fa, xp, yp, (0, 2));
            s_sum += w * (st * st * uxx + 2.0 * st * ct * uxy + ct * ct * uyy);
        }
        total += theta.weights[q] * s_sum;
    }
    Ok(total / core::f64::consts::TAU)
}

/// One reduction-identity sample on z = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionSample {
    pub x: f64,
    pub y: f64,
    /// (∂_t + U ∂_x) φ** at the point.
    pub flow_side: f64,
    /// -(u_t + U u_x) - q(u^t) at the point.
    pub plate_side: f64,
    pub residual: f64,
}

/// Compare the flow-side trace against the reduced plate forcing at sample
/// points on the plate; residuals are relative to the larger side.
pub fn reduction_residual(
    points: &[(f64, f64)],
    t: f64,
    traj: &dyn Trajectory,
    basis: &BasisSet,
    params: &FlowParams,
) -> Result<Vec<ReductionSample>> {
    let mut out = Vec::with_capacity(points.len());
    for &(x, y) in points {
        let tp = TracePoint { x, y, z: 0.0, t };
        let phi_t = eval_phi2_t(&tp, traj, basis, params)?;
        let phi_x = eval_phi2_x(&tp, traj, basis, params)?;
        let flow_side = phi_t + params.flow_speed * phi_x;
        let (a, v) = traj.sample(t);
        let (fa, fv) = (Field::from_coeffs(a), Field::from_coeffs(v));
        let ut = basis.eval_at(&fv, x, y, (0, 0));
        let ux = basis.eval_at(&fa, x, y, (1, 0));
        let q = q_pointwise(x, y, t, traj, basis, params)?;
        let plate_side = -(ut + params.flow_speed * ux) - q;
        let scale = flow_side.abs().max_f(plate_side.abs()).max_f(1e-12);
        out.push(ReductionSample {
            x,
            y,
            flow_side,
            plate_side,
            residual: (flow_side - plate_side).abs() / scale,
        });
    }
    Ok(out)
}
