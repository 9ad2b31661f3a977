//! Time integration of the reduced delayed plate and its energy bookkeeping.
//!
//! Modal system (mass matrix M is identity to quadrature tolerance but kept):
//!
//!   M a'' + d M a' + K a + f_B(a) = p0 - U Dx^T a + q(a-history),
//!
//! where d = k + 1 with flow coupling on (the reduction contributes one unit
//! of damping through the downwash) and d = k for the bare plate. The Berger
//! term is f_B(a) = -(b1 - b2 a^T G a) G a.
//!
//! Integrator: Crank-Nicolson on the stiff linear pair (K, damping), explicit
//! two-step Adams-Bashforth extrapolation on the Berger force, the transport
//! term and the delay force. With the s-grid of the delay kernel equal to the
//! step, history reads are exact. Second order in dt; unconditionally stable
//! on the linear part.

use crate::basis::{BasisSet, Field};
use crate::delay::{DelayHistory, DelayKernel, SPEED_GAP};
use crate::float::F64Ext;
use crate::linalg::{dot, norm2, Cholesky};
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Norm threshold that aborts a run as blown up.
pub const BLOWUP_NORM: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct PhysParams {
    /// Unperturbed flow speed U.
    pub flow_speed: f64,
    /// Imposed structural damping k >= 0.
    pub damping: f64,
    /// Prestress b1 (any sign).
    pub prestress: f64,
    /// Nonlinear stiffness b2 > 0.
    pub stiffness: f64,
    /// Static load as a dual vector <p0, e_j>.
    pub load: Field,
    /// Delay horizon carried for bookkeeping.
    pub t_star: f64,
    /// Flow coupling switch: delay force, transport and the inherited unit of
    /// damping. Off gives the bare plate (damping k only).
    pub flow_coupling: bool,
    /// Debug scale on the flow-inherited damping unit; 1 is the model.
    pub flow_damping_scale: f64,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "b2 must be positive, got {}",
                self.stiffness
            )));
        }
        if self.damping < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "damping must be >= 0, got {}",
                self.damping
            )));
        }
        if (self.flow_speed - 1.0).abs() <= SPEED_GAP {
            return Err(Error::DegenerateSpeed(self.flow_speed));
        }
        Ok(())
    }

    /// Total damping coefficient in front of u_t.
    pub fn total_damping(&self) -> f64 {
        if self.flow_coupling {
            self.damping + self.flow_damping_scale
        } else {
            self.damping
        }
    }
}

/// Displacement/velocity coefficients at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub t: f64,
    pub a: Vec<f64>,
    pub adot: Vec<f64>,
}

/// Scalar energies at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    /// Plate energy: kinetic + curvature + Π.
    pub e_pl: f64,
    /// Potential of nonlinear and nonconservative forces.
    pub pi: f64,
    /// Positive quartic part b2/4 |∇u|^4.
    pub pi_star: f64,
    /// Positive energy: kinetic + curvature + Π*.
    pub e_star: f64,
    /// Delayed Lyapunov function (equals E_pl when no history is attached).
    pub v_lyap: f64,
    /// Running d ∫ |u_t|^2, filled by the run driver.
    pub diss_accum: f64,
    /// Running energy-identity residual, filled by the run driver.
    pub identity_residual: f64,
}

/// Galerkin projection of the Berger restoring force:
/// <f_B(u), e_j> = -(b1 - b2 a^T G a) (G a)_j.
///
/// Equals the a-gradient of b2/4 (a^T G a)^2 - b1/2 a^T G a.
pub fn berger_force(basis: &BasisSet, a: &[f64], b1: f64, b2: f64) -> Vec<f64> {
    let ga = basis.g.matvec(a);
    let grad_sq = dot(a, &ga);
    let c = -(b1 - b2 * grad_sq);
    ga.iter().map(|v| c * v).collect()
}

/// Scalar potential whose a-gradient is `berger_force` (plus the load term):
/// Π(a) = b2/4 (a^T G a)^2 - b1/2 a^T G a - p0^T a.
pub fn berger_potential(basis: &BasisSet, a: &[f64], b1: f64, b2: f64, load: &Field) -> f64 {
    let grad_sq = basis.g.quad_form(a, a);
    0.25 * b2 * grad_sq * grad_sq - 0.5 * b1 * grad_sq - dot(&load.coeffs, a)
}

/// Lyapunov weights (μ, ν); the estimates only need them positive and small.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovWeights {
    pub mu: f64,
    pub nu: f64,
}

impl Default for LyapunovWeights {
    fn default() -> Self {
        LyapunovWeights { mu: 0.01, nu: 0.01 }
    }
}

/// All scalar energies of a state; the delay integrals of V use the history
/// grid and the kernel's trapezoid weights.
pub fn energies(
    state: &ModalState,
    hist: Option<(&DelayHistory, &DelayKernel)>,
    basis: &BasisSet,
    phys: &PhysParams,
    weights: LyapunovWeights,
) -> EnergyRecord {
    let a = &state.a;
    let v = &state.adot;
    let kinetic = basis.m.quad_form(v, v);
    let curvature = basis.k.quad_form(a, a);
    let grad_sq = basis.g.quad_form(a, a);
    let pi_star = 0.25 * phys.stiffness * grad_sq * grad_sq;
    let pi = pi_star - 0.5 * phys.prestress * grad_sq - dot(&phys.load.coeffs, a);
    let e_pl = 0.5 * (kinetic + curvature) + pi;
    let e_star = 0.5 * (kinetic + curvature) + pi_star;
    let mut v_lyap = e_pl;
    if let Some((h, kernel)) = hist {
        if h.filled() {
            // V subtracts the inner product with the delay force as applied
            // on the right-hand side, which is -q of the raw potential.
            let q = kernel.eval_q(h).expect("filled history");
            v_lyap += dot(&q.coeffs, a);
            let ma = basis.m.matvec(a);
            v_lyap += weights.nu * (dot(v, &ma) + 0.5 * (1.0 + phys.damping) * dot(a, &ma));
            // Window integral of Π* plus its triangular double integral,
            // both on the history grid (prefix sums keep it linear in n_s).
            let n_s = kernel.params.n_s;
            let mut single = 0.0;
            let mut double = 0.0;
            for m in 0..=n_s {
                let am = h.slot(m);
                let gs = basis.g.quad_form(am, am);
                let pi_m = 0.25 * phys.stiffness * gs * gs;
                single += kernel.s_weights[m] * pi_m;
                double += kernel.s_weights[m] * single;
            }
            v_lyap += weights.mu * (single + double);
        }
    }
    EnergyRecord {
        t: state.t,
        e_pl,
        pi,
        pi_star,
        e_star,
        v_lyap,
        diss_accum: 0.0,
        identity_residual: 0.0,
    }
}

/// Initial delay window choices.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialHistory {
    /// η(s) ≡ u0 on the whole window.
    Frozen,
    /// η(s) ≡ 0 for s < 0, u(0) = u0.
    Zero,
    /// Explicit rows oldest→newest covering the window excluding t = 0.
    Samples(Vec<Vec<f64>>),
}

/// Per-node log entries used by the energy identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLog {
    pub t: f64,
    pub e_pl: f64,
    /// |u_t|^2 at the node.
    pub diss: f64,
    /// <q - U u_x, u_t> at the node.
    pub cross: f64,
}

/// Time stepper owning the evolving state, history ring and force memory.
pub struct Stepper<'a> {
    pub basis: &'a BasisSet,
    pub kernel: Option<&'a DelayKernel>,
    pub phys: PhysParams,
    pub weights: LyapunovWeights,
    pub dt: f64,
    state: ModalState,
    history: DelayHistory,
    prev_force: Option<Vec<f64>>,
    /// Delay force -q at the current node, refreshed once per step.
    applied_q: Option<Vec<f64>>,
    lhs: Cholesky,
    rhs_m: f64,
    step_index: u64,
    // trapezoid accumulators for the identity over [0, t]
    acc_diss: f64,
    acc_cross: f64,
    last_diss: f64,
    last_cross: f64,
    e_pl0: f64,
    e_pl_max: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(
        basis: &'a BasisSet,
        kernel: Option<&'a DelayKernel>,
        phys: PhysParams,
        weights: LyapunovWeights,
        dt: f64,
        u0: &Field,
        v0: &Field,
        init: &InitialHistory,
    ) -> Result<Self> {
        phys.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if let Some(k) = kernel {
            if (k.dt - dt).abs() > 1e-12 * dt {
                return Err(Error::InvalidArgument(format!(
                    "dt {dt} does not match kernel s-spacing {}",
                    k.dt
                )));
            }
            if k.basis_hash != basis.build_hash() {
                return Err(Error::InvalidArgument(
                    "kernel was assembled against a different basis".into(),
                ));
            }
        }
        let n = basis.n();
        if u0.len() != n || v0.len() != n || phys.load.len() != n {
            return Err(Error::InvalidArgument(format!(
                "initial data or load has wrong length (basis has {n} modes)"
            )));
        }
        let d = phys.total_damping();
        // S = (1 + dt d / 2) M + dt^2/4 K
        let mut s = basis.k.scaled(dt * dt / 4.0);
        let mc = 1.0 + 0.5 * dt * d;
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += mc * basis.m[(i, j)];
            }
        }
        let lhs = Cholesky::new(&s)?;
        let slots = kernel.map(|k| k.params.n_s + 1).unwrap_or(1);
        let mut history = DelayHistory::new(slots, dt, -((slots - 1) as f64) * dt);
        match init {
            InitialHistory::Frozen => {
                for _ in 0..slots {
                    history.push(&u0.coeffs);
                }
            }
            InitialHistory::Zero => {
                let zero = vec![0.0; n];
                for _ in 0..slots - 1 {
                    history.push(&zero);
                }
                history.push(&u0.coeffs);
            }
            InitialHistory::Samples(rows) => {
                if rows.len() != slots - 1 {
                    return Err(Error::InvalidArgument(format!(
                        "history has {} rows, window needs {}",
                        rows.len(),
                        slots - 1
                    )));
                }
                for row in rows {
                    if row.len() != n {
                        return Err(Error::InvalidArgument("history row length mismatch".into()));
                    }
                    history.push(row);
                }
                history.push(&u0.coeffs);
            }
        }
        let state = ModalState {
            t: 0.0,
            a: u0.coeffs.clone(),
            adot: v0.coeffs.clone(),
        };
        let mut stepper = Stepper {
            basis,
            kernel,
            phys,
            weights,
            dt,
            state,
            history,
            prev_force: None,
            applied_q: None,
            lhs,
            rhs_m: 1.0 - 0.5 * dt * d,
            step_index: 0,
            acc_diss: 0.0,
            acc_cross: 0.0,
            last_diss: 0.0,
            last_cross: 0.0,
            e_pl0: 0.0,
            e_pl_max: 1.0,
        };
        stepper.refresh_applied_q();
        let (diss, cross) = stepper.node_identity_terms();
        stepper.last_diss = diss;
        stepper.last_cross = cross;
        let rec = stepper.energies();
        stepper.e_pl0 = rec.e_pl;
        stepper.e_pl_max = rec.e_pl.abs().max_f(1.0);
        Ok(stepper)
    }

    pub fn state(&self) -> &ModalState {
        &self.state
    }

    pub fn history(&self) -> &DelayHistory {
        &self.history
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Recompute the applied delay force -q at the current node.
    fn refresh_applied_q(&mut self) {
        self.applied_q = self.kernel.map(|kernel| {
            let q = kernel
                .eval_q(&self.history)
                .expect("history filled at init");
            q.coeffs.iter().map(|v| -v).collect()
        });
    }

    /// Explicit (non-stiff) modal force at the current node.
    fn explicit_force(&self) -> Vec<f64> {
        let n = self.basis.n();
        let a = &self.state.a;
        let mut f = self.phys.load.coeffs.clone();
        let fb = berger_force(self.basis, a, self.phys.prestress, self.phys.stiffness);
        for j in 0..n {
            f[j] -= fb[j];
        }
        if let Some(q) = &self.applied_q {
            let ux = self.basis.dx.tr_matvec(a);
            for j in 0..n {
                f[j] += q[j] - self.phys.flow_speed * ux[j];
            }
        }
        f
    }

    /// (|u_t|^2, <flow force, u_t>) at the current node; the flow force is
    /// the applied -q minus the transport term.
    fn node_identity_terms(&self) -> (f64, f64) {
        let v = &self.state.adot;
        let diss = self.basis.m.quad_form(v, v);
        let mut cross = 0.0;
        if let Some(q) = &self.applied_q {
            let ux = self.basis.dx.tr_matvec(&self.state.a);
            for j in 0..v.len() {
                cross += (q[j] - self.phys.flow_speed * ux[j]) * v[j];
            }
        }
        (diss, cross)
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<()> {
        let n = self.basis.n();
        let dt = self.dt;
        let f_now = self.explicit_force();
        let f_hat: Vec<f64> = match &self.prev_force {
            Some(prev) => f_now
                .iter()
                .zip(prev.iter())
                .map(|(f, p)| 1.5 * f - 0.5 * p)
                .collect(),
            None => f_now.clone(),
        };
        // rhs = (1 - dt d/2) M v - dt^2/4 K v - dt K a + dt F
        let mv = self.basis.m.matvec(&self.state.adot);
        let kv = self.basis.k.matvec(&self.state.adot);
        let ka = self.basis.k.matvec(&self.state.a);
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            rhs[j] = self.rhs_m * mv[j] - 0.25 * dt * dt * kv[j] - dt * ka[j] + dt * f_hat[j];
        }
        let v_next = self.lhs.solve(&rhs);
        let mut a_next = self.state.a.clone();
        for j in 0..n {
            a_next[j] += 0.5 * dt * (self.state.adot[j] + v_next[j]);
        }
        self.step_index += 1;
        let t_next = self.step_index as f64 * dt;
        let nrm = norm2(&a_next);
        if !(nrm < BLOWUP_NORM) {
            return Err(Error::BlowUp {
                step: self.step_index,
                time: t_next,
                norm: nrm,
            });
        }
        self.history.push(&a_next);
        self.prev_force = Some(f_now);
        self.state = ModalState {
            t: t_next,
            a: a_next,
            adot: v_next,
        };
        self.refresh_applied_q();
        let (diss, cross) = self.node_identity_terms();
        self.acc_diss += 0.5 * dt * (self.last_diss + diss);
        self.acc_cross += 0.5 * dt * (self.last_cross + cross);
        self.last_diss = diss;
        self.last_cross = cross;
        Ok(())
    }

    /// Energies at the current node with the running identity bookkeeping.
    pub fn energies(&self) -> EnergyRecord {
        let hist = self.kernel.map(|k| (&self.history, k));
        let mut rec = energies(&self.state, hist, self.basis, &self.phys, self.weights);
        let d = self.phys.total_damping();
        rec.diss_accum = d * self.acc_diss;
        rec.identity_residual =
            (rec.e_pl + d * self.acc_diss - self.e_pl0 - self.acc_cross) / self.e_pl_max;
        rec
    }

    /// Plate energy alone, cheap enough to log every node.
    pub fn e_pl_now(&self) -> f64 {
        let a = &self.state.a;
        let v = &self.state.adot;
        let kinetic = self.basis.m.quad_form(v, v);
        let curvature = self.basis.k.quad_form(a, a);
        0.5 * (kinetic + curvature)
            + berger_potential(
                self.basis,
                a,
                self.phys.prestress,
                self.phys.stiffness,
                &self.phys.load,
            )
    }

    pub fn node_log(&self) -> NodeLog {
        NodeLog {
            t: self.state.t,
            e_pl: self.e_pl_now(),
            diss: self.last_diss,
            cross: self.last_cross,
        }
    }

    fn update_peak(&mut self, e_pl: f64) {
        self.e_pl_max = self.e_pl_max.max_f(e_pl.abs());
    }

    /// Raw pieces needed for bit-exact checkpoint/resume.
    pub fn checkpoint(&self) -> StepperCheckpoint {
        StepperCheckpoint {
            step_index: self.step_index,
            t: self.state.t,
            a: self.state.a.clone(),
            adot: self.state.adot.clone(),
            prev_force: self.prev_force.clone(),
            history_rows: self.history.snapshot(),
            history_pushed: self.history.pushed() as u64,
            acc_diss: self.acc_diss,
            acc_cross: self.acc_cross,
            last_diss: self.last_diss,
            last_cross: self.last_cross,
            e_pl0: self.e_pl0,
            e_pl_max: self.e_pl_max,
        }
    }

    /// Rebuild a stepper mid-run from a checkpoint.
    pub fn resume(
        basis: &'a BasisSet,
        kernel: Option<&'a DelayKernel>,
        phys: PhysParams,
        weights: LyapunovWeights,
        dt: f64,
        ck: &StepperCheckpoint,
    ) -> Result<Self> {
        let u0 = Field::from_coeffs(ck.a.clone());
        let v0 = Field::from_coeffs(ck.adot.clone());
        let mut s = Stepper::new(
            basis,
            kernel,
            phys,
            weights,
            dt,
            &u0,
            &v0,
            &InitialHistory::Frozen,
        )?;
        let slots = s.history.len();
        // Place the origin so that t_head comes out at ck.t with the stored
        // push counter.
        let origin = ck.t - (ck.history_pushed as f64 - 1.0) * dt;
        s.history = DelayHistory::restore(slots, dt, origin, ck.history_pushed, &ck.history_rows);
        s.state = ModalState {
            t: ck.t,
            a: ck.a.clone(),
            adot: ck.adot.clone(),
        };
        s.prev_force = ck.prev_force.clone();
        s.step_index = ck.step_index;
        s.acc_diss = ck.acc_diss;
        s.acc_cross = ck.acc_cross;
        s.last_diss = ck.last_diss;
        s.last_cross = ck.last_cross;
        s.e_pl0 = ck.e_pl0;
        s.e_pl_max = ck.e_pl_max;
        s.refresh_applied_q();
        Ok(s)
    }
}

/// Everything needed to restart a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperCheckpoint {
    pub step_index: u64,
    pub t: f64,
    pub a: Vec<f64>,
    pub adot: Vec<f64>,
    pub prev_force: Option<Vec<f64>>,
    pub history_rows: Vec<Vec<f64>>,
    pub history_pushed: u64,
    pub acc_diss: f64,
    pub acc_cross: f64,
    pub last_diss: f64,
    pub last_cross: f64,
    pub e_pl0: f64,
    pub e_pl_max: f64,
}

/// Scenario-level inputs for a single run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub phys: PhysParams,
    pub weights: LyapunovWeights,
    pub dt: f64,
    pub n_steps: u64,
    pub output_stride: u64,
    pub u0: Field,
    pub v0: Field,
    pub init_history: InitialHistory,
}

/// Recorded output of a run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    /// States at the output stride (node 0 included).
    pub states: Vec<ModalState>,
    /// Energies at the output stride.
    pub energies: Vec<EnergyRecord>,
    /// Per-node identity log at full resolution.
    pub node_log: Vec<NodeLog>,
}

impl RunArtifacts {
    /// Residual of the energy identity over the node index range [i0, i1]:
    /// E_pl(t) + d ∫|u_t|^2 - E_pl(s) - ∫<q - U u_x, u_t>, trapezoid
    /// integrals at the run's dt, relative to max(|E_pl|, 1) on the range.
    pub fn identity_residual(&self, i0: usize, i1: usize, total_damping: f64) -> f64 {
        assert!(i1 > i0 && i1 < self.node_log.len());
        let dt = self.node_log[1].t - self.node_log[0].t;
        let mut diss = 0.0;
        let mut cross = 0.0;
        let mut peak = 1.0f64;
        for i in i0..=i1 {
            let w = if i == i0 || i == i1 { 0.5 * dt } else { dt };
            diss += w * self.node_log[i].diss;
            cross += w * self.node_log[i].cross;
            peak = peak.max_f(self.node_log[i].e_pl.abs());
        }
        let lhs = self.node_log[i1].e_pl + total_damping * diss;
        let rhs = self.node_log[i0].e_pl + cross;
        (lhs - rhs) / peak
    }
}

/// Deterministic run driver: records strided state/energy series and the
/// full-resolution identity log.
pub fn simulate(
    basis: &BasisSet,
    kernel: Option<&DelayKernel>,
    spec: &RunSpec,
) -> Result<RunArtifacts> {
    let mut stepper = Stepper::new(
        basis,
        kernel,
        spec.phys.clone(),
        spec.weights,
        spec.dt,
        &spec.u0,
        &spec.v0,
        &spec.init_history,
    )?;
    let stride = spec.output_stride.max(1);
    let mut states = Vec::new();
    let mut energy_series = Vec::new();
    let mut node_log = Vec::with_capacity(spec.n_steps as usize + 1);
    let rec0 = stepper.energies();
    stepper.update_peak(rec0.e_pl);
    states.push(stepper.state().clone());
    energy_series.push(rec0);
    node_log.push(stepper.node_log());
    for i in 1..=spec.n_steps {
        stepper.step()?;
        let nl = stepper.node_log();
        stepper.update_peak(nl.e_pl);
        node_log.push(nl);
        if i % stride == 0 || i == spec.n_steps {
            states.push(stepper.state().clone());
            energy_series.push(stepper.energies());
        }
    }
    Ok(RunArtifacts {
        states,
        energies: energy_series,
        node_log,
    })
}

/// Two-sided envelope constants tying E_pl to the positive energy E*:
///
///   c_lo E* - M <= E_pl <= C E* + M   along every state,
///
/// derived from Young's inequality on the loading terms: with
/// ε = (1 - c_lo)/2, M = b1²/(4 ε b2) + |p0|²/(2 ε λ1) and C = 1 + 2ε, where
/// λ1 is the smallest (K, M) eigenvalue and |p0| the dual norm of the load.
/// The constants depend on (p0, b1, b2) but not on the trajectory.
pub fn energy_envelope(basis: &BasisSet, phys: &PhysParams, c_lo: f64) -> Result<(f64, f64)> {
    if !(0.0 < c_lo && c_lo < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "c_lo must be in (0,1), got {c_lo}"
        )));
    }
    let eps = 0.5 * (1.0 - c_lo);
    let (vals, _) = crate::linalg::generalized_sym_eigen(&basis.k, &basis.m)?;
    let lam1 = vals[0];
    // dual L² norm of the load vector: sqrt(p0ᵀ M⁻¹ p0)
    let chol = crate::linalg::Cholesky::new(&basis.m)?;
    let minv_p = chol.solve(&phys.load.coeffs);
    let p_norm_sq = dot(&phys.load.coeffs, &minv_p);
    let m = phys.prestress * phys.prestress / (4.0 * eps * phys.stiffness)
        + p_norm_sq / (2.0 * eps * lam1);
    Ok((1.0 + 2.0 * eps, m))
}

/// Suggested s-node count so that dt = t*/n_s resolves the stiffest mode:
/// dt <= (2π/√λ_max)/20.
pub fn suggest_n_s(basis: &BasisSet, t_star: f64) -> Result<usize> {
    let (vals, _) = crate::linalg::generalized_sym_eigen(&basis.k, &basis.m)?;
    let lam_max = vals[vals.len() - 1];
    let dt_max = core::f64::consts::TAU / lam_max.sqrt() / 20.0;
    Ok((t_star / dt_max).ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, PlateDomain};
    use crate::delay::{build_kernel, compute_tstar, DelayParams};
    use crate::rng::Rng;

    fn plate_only(n: usize, u: f64) -> PhysParams {
        PhysParams {
            flow_speed: u,
            damping: 0.0,
            prestress: 0.0,
            stiffness: 1.0,
            load: Field::zeros(n),
            t_star: 0.0,
            flow_coupling: false,
            flow_damping_scale: 1.0,
        }
    }

    #[test]
    fn berger_force_zero_at_origin_and_linear_for_prestress_only() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let zero = vec![0.0; basis.n()];
        assert!(berger_force(&basis, &zero, 2.0, 1.0)
            .iter()
            .all(|&v| v == 0.0));
        // b2 -> 0 limit: f = -b1 G a
        let mut rng = Rng::seed_from(4);
        let a = basis.random_unit_field(&mut rng);
        let f = berger_force(&basis, &a.coeffs, 1.3, 1e-300);
        let ga = basis.g.matvec(&a.coeffs);
        for j in 0..basis.n() {
            assert!((f[j] + 1.3 * ga[j]).abs() < 1e-10 * ga[j].abs().max(1.0));
        }
    }

    #[test]
    fn berger_force_is_gradient_of_potential() {
        // Central finite differences of Π at random points, step 1e-5.
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let n = basis.n();
        let load = Field::zeros(n);
        let (b1, b2) = (0.7, 1.9);
        let mut rng = Rng::seed_from(12);
        let h = 1e-5;
        for _ in 0..20 {
            let mut a = vec![0.0; n];
            rng.fill_uniform(&mut a, -1.0, 1.0);
            let f = berger_force(&basis, &a, b1, b2);
            for j in 0..n {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[j] += h;
                am[j] -= h;
                let fd = (berger_potential(&basis, &ap, b1, b2, &load)
                    - berger_potential(&basis, &am, b1, b2, &load))
                    / (2.0 * h);
                let scale = f[j].abs().max(1e-3);
                assert!(
                    (f[j] - fd).abs() < 1e-6 * scale,
                    "slot {j}: {} vs fd {fd}",
                    f[j]
                );
            }
        }
    }

    #[test]
    fn pure_cubic_single_mode_force_matches_closed_form() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let alpha = 0.37;
        let mut a = vec![0.0; basis.n()];
        a[0] = alpha;
        let f = berger_force(&basis, &a, 0.0, 1.0);
        let g11 = basis.g[(0, 0)];
        // -(0 - b2 α² g11) G a = α³ g11 (G column 0)
        for j in 0..basis.n() {
            let expect = alpha * alpha * alpha * g11 * basis.g[(j, 0)];
            assert!((f[j] - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let spec = RunSpec {
            phys: plate_only(n, 0.0),
            weights: LyapunovWeights::default(),
            dt: 1e-3,
            n_steps: 50,
            output_stride: 10,
            u0: Field::zeros(n),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, None, &spec).unwrap();
        for s in &arts.states {
            assert!(s.a.iter().all(|&v| v == 0.0));
            assert!(s.adot.iter().all(|&v| v == 0.0));
        }
        for e in &arts.energies {
            assert_eq!(e.e_pl, 0.0);
            assert_eq!(e.e_star, 0.0);
        }
    }

    #[test]
    fn small_amplitude_mode_returns_after_ten_periods() {
        // Linear conservative limit against the exact oscillator oracle: the
        // lowest (K, M) eigenmode oscillates at ω = √λ1.
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let (vals, vecs) = crate::linalg::generalized_sym_eigen(&basis.k, &basis.m).unwrap();
        let omega = vals[0].sqrt();
        let amp = 1e-6;
        let mut u0 = vec![0.0; n];
        for i in 0..n {
            u0[i] = amp * vecs[(i, 0)];
        }
        let period = core::f64::consts::TAU / omega;
        let n_per_period = 400u64;
        let dt = period / n_per_period as f64;
        let spec = RunSpec {
            phys: plate_only(n, 0.0),
            weights: LyapunovWeights::default(),
            dt,
            n_steps: 10 * n_per_period,
            output_stride: n_per_period,
            u0: Field::from_coeffs(u0.clone()),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, None, &spec).unwrap();
        // CN phase error per period is (ω dt)²/12 ≈ 2e-5; over 10 periods the
        // return error stays well under 0.1% of the amplitude.
        let last = arts.states.last().unwrap();
        let err: f64 = last
            .a
            .iter()
            .zip(&u0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            / amp;
        assert!(err < 1e-3, "period return error {err}");
        let drift = (arts.energies.last().unwrap().e_pl - arts.energies[0].e_pl).abs()
            / arts.energies[0].e_pl;
        assert!(drift < 1e-9, "energy drift {drift}");
    }

    #[test]
    fn conservative_run_has_tiny_energy_drift() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let n = basis.n();
        let mut rng = Rng::seed_from(8);
        let mut u0 = vec![0.0; n];
        rng.fill_uniform(&mut u0, -1e-3, 1e-3);
        let spec = RunSpec {
            phys: plate_only(n, 0.0),
            weights: LyapunovWeights::default(),
            dt: 1e-3,
            n_steps: 10_000,
            output_stride: 1000,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, None, &spec).unwrap();
        let e0 = arts.energies[0].e_pl;
        for e in &arts.energies {
            assert!((e.e_pl - e0).abs() <= 1e-5 * e0.abs(), "drift at t={}", e.t);
        }
    }

    #[test]
    fn strong_damping_decays_energy_monotonically() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let mut phys = plate_only(n, 0.0);
        phys.damping = 10.0;
        let mut rng = Rng::seed_from(21);
        let mut u0 = vec![0.0; n];
        rng.fill_uniform(&mut u0, -0.5, 0.5);
        let spec = RunSpec {
            phys,
            weights: LyapunovWeights::default(),
            dt: 2e-3,
            n_steps: 2000,
            output_stride: 50,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, None, &spec).unwrap();
        for w in arts.energies.windows(2) {
            assert!(w[1].e_pl <= w[0].e_pl + 1e-12 * w[0].e_pl.abs().max(1.0));
        }
    }

    #[test]
    fn richardson_self_convergence_is_second_order() {
        // Nonlinear delayed run at dt, dt/2 and dt/8 (reference).
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 18).unwrap();
        let n = basis.n();
        // Coarse run must already resolve the stiffest mode (dt ω_max ≈ 0.26
        // here); below that the explicit terms sit too close to the AB2
        // stability edge for clean order measurement.
        let u = 0.5;
        let t_star = compute_tstar(u, &basis.domain, 1024).unwrap();
        let n_s0 = 1024usize;
        let run = |mult: usize| {
            let params = DelayParams {
                flow_speed: u,
                t_star,
                n_theta: 16,
                n_s: n_s0 * mult,
            };
            let kernel = build_kernel(&basis, &params).unwrap();
            let mut u0 = vec![0.0; n];
            u0[0] = 0.4;
            u0[1] = -0.2;
            let phys = PhysParams {
                flow_speed: u,
                damping: 0.0,
                prestress: 0.0,
                stiffness: 1.0,
                load: Field::zeros(n),
                t_star,
                flow_coupling: true,
                flow_damping_scale: 1.0,
            };
            let spec = RunSpec {
                phys,
                weights: LyapunovWeights::default(),
                dt: kernel.dt,
                n_steps: (n_s0 * mult) as u64, // integrate to t = t*
                output_stride: (n_s0 * mult) as u64,
                u0: Field::from_coeffs(u0),
                v0: Field::zeros(n),
                init_history: InitialHistory::Frozen,
            };
            let arts = simulate(&basis, Some(&kernel), &spec).unwrap();
            arts.states.last().unwrap().a.clone()
        };
        let coarse = run(1);
        let half = run(2);
        let reference = run(8);
        let err = |a: &[f64]| -> f64 {
            a.iter()
                .zip(&reference)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let e1 = err(&coarse);
        let e2 = err(&half);
        let ratio = e1 / e2;
        assert!(
            (ratio - 4.0).abs() <= 1.2,
            "halving dt changed error by x{ratio} (e1={e1:e}, e2={e2:e})"
        );
    }

    #[test]
    fn simulate_is_deterministic() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let mut phys = plate_only(n, 0.0);
        phys.load = basis.project(|_, _| 1.0).unwrap();
        let mut u0 = vec![0.0; n];
        u0[0] = 0.1;
        let spec = RunSpec {
            phys,
            weights: LyapunovWeights::default(),
            dt: 1e-3,
            n_steps: 500,
            output_stride: 100,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let a = simulate(&basis, None, &spec).unwrap();
        let b = simulate(&basis, None, &spec).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x.a, y.a);
            assert_eq!(x.adot, y.adot);
        }
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 18).unwrap();
        let n = basis.n();
        let u = 0.5;
        let t_star = compute_tstar(u, &basis.domain, 1024).unwrap();
        let params = DelayParams {
            flow_speed: u,
            t_star,
            n_theta: 16,
            n_s: 256,
        };
        let kernel = build_kernel(&basis, &params).unwrap();
        let phys = PhysParams {
            flow_speed: u,
            damping: 0.5,
            prestress: -0.3,
            stiffness: 1.0,
            load: basis.project(|_, _| 1.0).unwrap(),
            t_star,
            flow_coupling: true,
            flow_damping_scale: 1.0,
        };
        let mut u0 = vec![0.0; n];
        u0[0] = 0.2;
        u0[3] = -0.1;
        let mk = |p: PhysParams| {
            Stepper::new(
                &basis,
                Some(&kernel),
                p,
                LyapunovWeights::default(),
                kernel.dt,
                &Field::from_coeffs(u0.clone()),
                &Field::zeros(n),
                &InitialHistory::Frozen,
            )
            .unwrap()
        };
        let mut full = mk(phys.clone());
        for _ in 0..100 {
            full.step().unwrap();
        }
        let mut first = mk(phys.clone());
        for _ in 0..37 {
            first.step().unwrap();
        }
        let ck = first.checkpoint();
        let mut resumed = Stepper::resume(
            &basis,
            Some(&kernel),
            phys,
            LyapunovWeights::default(),
            kernel.dt,
            &ck,
        )
        .unwrap();
        for _ in 0..63 {
            resumed.step().unwrap();
        }
        assert_eq!(full.state().a, resumed.state().a);
        assert_eq!(full.state().adot, resumed.state().adot);
        assert_eq!(full.energies().diss_accum, resumed.energies().diss_accum);
        assert_eq!(full.energies().v_lyap, resumed.energies().v_lyap);
    }

    #[test]
    fn blow_up_is_reported_not_panicked() {
        // A strongly buckled linear part (large positive b1) with negligible
        // cubic restoring force grows until the norm guard trips.
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let mut phys = plate_only(n, 0.0);
        phys.prestress = 1e5;
        phys.stiffness = 1e-12;
        let mut u0 = vec![0.0; n];
        u0[0] = 1.0;
        let spec = RunSpec {
            phys,
            weights: LyapunovWeights::default(),
            dt: 1e-2,
            n_steps: 100_000,
            output_stride: 1000,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        match simulate(&basis, None, &spec) {
            Err(Error::BlowUp { norm, .. }) => assert!(norm >= BLOWUP_NORM),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn energies_match_pointwise_quadrature_oracle() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let n = basis.n();
        let mut rng = Rng::seed_from(3);
        let mut a = vec![0.0; n];
        let mut v = vec![0.0; n];
        rng.fill_uniform(&mut a, -0.5, 0.5);
        rng.fill_uniform(&mut v, -0.5, 0.5);
        let phys = PhysParams {
            flow_speed: 0.0,
            damping: 0.0,
            prestress: 0.4,
            stiffness: 1.7,
            load: basis.project(|x, y| x + y).unwrap(),
            t_star: 0.0,
            flow_coupling: false,
            flow_damping_scale: 1.0,
        };
        let state = ModalState {
            t: 0.0,
            a: a.clone(),
            adot: v.clone(),
        };
        let rec = energies(&state, None, &basis, &phys, LyapunovWeights::default());
        let fa = Field::from_coeffs(a);
        let fv = Field::from_coeffs(v);
        let kin = basis.quad.integrate(|x, y| {
            let w = basis.eval_at(&fv, x, y, (0, 0));
            w * w
        });
        let curv = basis.quad.integrate(|x, y| {
            let l = basis.eval_at(&fa, x, y, (2, 0)) + basis.eval_at(&fa, x, y, (0, 2));
            l * l
        });
        let grad = basis.quad.integrate(|x, y| {
            let gx = basis.eval_at(&fa, x, y, (1, 0));
            let gy = basis.eval_at(&fa, x, y, (0, 1));
            gx * gx + gy * gy
        });
        let load_work = basis
            .quad
            .integrate(|x, y| (x + y) * basis.eval_at(&fa, x, y, (0, 0)));
        let pi = 0.25 * phys.stiffness * grad * grad - 0.5 * phys.prestress * grad - load_work;
        let e_pl = 0.5 * (kin + curv) + pi;
        assert!(
            (rec.e_pl - e_pl).abs() < 1e-10 * e_pl.abs().max(1.0),
            "{} vs {e_pl}",
            rec.e_pl
        );
        assert!((rec.pi - pi).abs() < 1e-10 * pi.abs().max(1.0));
        assert!(rec.e_star >= 0.0);
        assert!(rec.pi_star >= 0.0);
        // b1 = 0 and no load makes Π and Π* coincide exactly
        let phys2 = PhysParams {
            prestress: 0.0,
            load: Field::zeros(n),
            ..phys
        };
        let rec2 = energies(&state, None, &basis, &phys2, LyapunovWeights::default());
        assert_eq!(rec2.pi, rec2.pi_star);
    }

    #[test]
    fn energy_envelope_holds_across_scenarios() {
        // Constants calibrated from (p0, b1, b2) alone must bracket E_pl by
        // E* on trajectories with different data and speeds.
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let n = basis.n();
        let phys = PhysParams {
            flow_speed: 0.0,
            damping: 0.0,
            prestress: -0.8,
            stiffness: 1.0,
            load: basis.project(|_, _| 3.0).unwrap(),
            t_star: 0.0,
            flow_coupling: false,
            flow_damping_scale: 1.0,
        };
        let c_lo = 0.5;
        let (c_hi, m) = energy_envelope(&basis, &phys, c_lo).unwrap();
        let mut rng = Rng::seed_from(6);
        for amp in [0.05, 0.3, 1.0] {
            let mut u0 = vec![0.0; n];
            rng.fill_uniform(&mut u0, -amp, amp);
            let spec = RunSpec {
                phys: phys.clone(),
                weights: LyapunovWeights::default(),
                dt: 2.5e-4,
                n_steps: 1600,
                output_stride: 80,
                u0: Field::from_coeffs(u0),
                v0: Field::zeros(n),
                init_history: InitialHistory::Frozen,
            };
            let arts = simulate(&basis, None, &spec).unwrap();
            for e in &arts.energies {
                assert!(
                    c_lo * e.e_star - m <= e.e_pl + 1e-9 && e.e_pl <= c_hi * e.e_star + m + 1e-9,
                    "amp {amp} at t={}: E_pl {} vs E* {} with (c,C,M)=({c_lo},{c_hi},{m})",
                    e.t,
                    e.e_pl,
                    e.e_star
                );
            }
        }
    }

    #[test]
    fn damped_delayed_run_stays_bounded_with_sublinear_dissipation() {
        // With k > 0 and the delay force on, sup E* stays finite over the
        // horizon and the dissipation integral flattens after the transient.
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 18).unwrap();
        let n = basis.n();
        let u = 0.5;
        let t_star = compute_tstar(u, &basis.domain, 1024).unwrap();
        let params = DelayParams {
            flow_speed: u,
            t_star,
            n_theta: 16,
            n_s: 512,
        };
        let kernel = build_kernel(&basis, &params).unwrap();
        let phys = PhysParams {
            flow_speed: u,
            damping: 1.0,
            prestress: 0.0,
            stiffness: 1.0,
            load: basis.project(|_, _| 1.0).unwrap(),
            t_star,
            flow_coupling: true,
            flow_damping_scale: 1.0,
        };
        let mut u0 = vec![0.0; n];
        u0[0] = 0.6;
        let steps = 8 * params.n_s as u64;
        let spec = RunSpec {
            phys,
            weights: LyapunovWeights::default(),
            dt: kernel.dt,
            n_steps: steps,
            output_stride: params.n_s as u64,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, Some(&kernel), &spec).unwrap();
        let sup_estar = arts.energies.iter().fold(0.0f64, |a, e| a.max(e.e_star));
        assert!(
            sup_estar.is_finite() && sup_estar < 1e3,
            "sup E* = {sup_estar}"
        );
        // dissipation increments over equal windows shrink after the transient
        let d: Vec<f64> = arts.energies.iter().map(|e| e.diss_accum).collect();
        let early = d[2] - d[1];
        let late = d[d.len() - 1] - d[d.len() - 2];
        assert!(
            late < 0.5 * early,
            "dissipation increments {early:.3e} -> {late:.3e}"
        );
    }

    #[test]
    fn identity_residual_small_for_conservative_single_mode() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let n = basis.n();
        let (vals, vecs) = crate::linalg::generalized_sym_eigen(&basis.k, &basis.m).unwrap();
        let omega = vals[0].sqrt();
        let mut u0 = vec![0.0; n];
        for i in 0..n {
            u0[i] = 0.01 * vecs[(i, 0)];
        }
        let period = core::f64::consts::TAU / omega;
        let steps = (period / 1e-3).ceil() as u64;
        let spec = RunSpec {
            phys: plate_only(n, 0.0),
            weights: LyapunovWeights::default(),
            dt: 1e-3,
            n_steps: steps,
            output_stride: steps,
            u0: Field::from_coeffs(u0),
            v0: Field::zeros(n),
            init_history: InitialHistory::Frozen,
        };
        let arts = simulate(&basis, None, &spec).unwrap();
        let r = arts.identity_residual(0, steps as usize, 0.0).abs();
        assert!(r <= 1e-6, "residual {r}");
    }
}
