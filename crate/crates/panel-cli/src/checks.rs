//! The `check` subcommand: a fast battery over the library's structural
//! identities and cheap oracles. One pass/fail line per check; nonzero exit
//! on any failure.

use panel_core::basis::{build_basis, Field, PlateDomain};
use panel_core::delay::{build_kernel, compute_tstar, kernel_slab, DelayHistory, DelayParams};
use panel_core::dynamics::{
    berger_force, berger_potential, simulate, InitialHistory, LyapunovWeights, PhysParams, RunSpec,
};
use panel_core::flowtrace::{
    eval_phi2, eval_phi2_t, reduction_residual, FlowParams, SyntheticTrajectory, TracePoint,
};
use panel_core::functionals::{completeness_defect, make_modes, make_nodes, WeakNorm};
use panel_core::linalg::generalized_sym_eigen;
use panel_core::longtime::{correlation_dimension, log_radii};
use panel_core::rng::Rng;

pub struct CheckRun {
    pub lines: Vec<(bool, String)>,
}

impl CheckRun {
    fn record(&mut self, pass: bool, name: &str, detail: String) {
        self.lines.push((pass, format!("{name}: {detail}")));
    }

    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|(p, _)| *p)
    }
}

pub fn run_battery() -> CheckRun {
    let mut run = CheckRun { lines: Vec::new() };
    basis_checks(&mut run);
    tstar_checks(&mut run);
    kernel_checks(&mut run);
    dynamics_checks(&mut run);
    defect_checks(&mut run);
    flowtrace_checks(&mut run);
    dimension_checks(&mut run);
    run
}

fn basis_checks(run: &mut CheckRun) {
    let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
    let n = basis.n();
    let mut mass_dev = 0.0f64;
    let mut antisym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { 1.0 } else { 0.0 };
            mass_dev = mass_dev.max((basis.m[(i, j)] - expect).abs());
            antisym = antisym.max((basis.dx[(i, j)] + basis.dx[(j, i)]).abs());
        }
    }
    run.record(
        mass_dev < 1e-8,
        "basis mass orthonormal",
        format!("max |M - I| = {mass_dev:.2e}"),
    );
    run.record(
        antisym < 1e-10,
        "basis Dx antisymmetric",
        format!("max |Dx + Dx^T| = {antisym:.2e}"),
    );
    let (kvals, _) = generalized_sym_eigen(&basis.k, &basis.m).unwrap();
    run.record(
        kvals[0] > 0.0,
        "biharmonic form positive definite",
        format!("lambda_1 = {:.4}", kvals[0]),
    );
    // Green identity on a random pair
    let mut rng = Rng::seed_from(3);
    let a = basis.random_unit_field(&mut rng);
    let b = basis.random_unit_field(&mut rng);
    let lhs = basis.quad.integrate(|x, y| {
        (basis.eval_at(&a, x, y, (2, 0)) + basis.eval_at(&a, x, y, (0, 2)))
            * basis.eval_at(&b, x, y, (0, 0))
    });
    let rhs = -basis.g.quad_form(&a.coeffs, &b.coeffs);
    run.record(
        (lhs - rhs).abs() < 1e-8,
        "Green identity <Δu, v> = -<∇u, ∇v>",
        format!("deviation {:.2e}", (lhs - rhs).abs()),
    );
}

fn tstar_checks(run: &mut CheckRun) {
    let dom = PlateDomain::unit_square();
    let balanced = |u: f64| 2.0 / ((2.0 - u * u).sqrt() - u);
    let cases = [
        (0.0, core::f64::consts::SQRT_2),
        (0.5, balanced(0.5)),
        (2.0, 1.0),
    ];
    let mut worst = 0.0f64;
    for (u, expect) in cases {
        let got = compute_tstar(u, &dom, 8192).unwrap();
        worst = worst.max((got - expect).abs() / expect);
    }
    run.record(
        worst < 1e-3,
        "delay horizon closed forms",
        format!("max rel dev {worst:.2e}"),
    );
}

fn kernel_checks(run: &mut CheckRun) {
    let basis = build_basis(PlateDomain::unit_square(), 3, 3, 22).unwrap();
    let u = 0.5;
    let t_star = compute_tstar(u, &basis.domain, 2048).unwrap();
    let params = DelayParams {
        flow_speed: u,
        t_star,
        n_theta: 16,
        n_s: 8,
    };
    let slab0 = kernel_slab(&basis, &params, 0);
    let mut dev = 0.0f64;
    for i in 0..basis.n() {
        for j in 0..basis.n() {
            dev = dev.max((slab0[(i, j)] + 0.5 * basis.g[(i, j)]).abs());
        }
    }
    run.record(
        dev < 1e-6,
        "kernel slab C[0] = -G/2",
        format!("max dev {dev:.2e}"),
    );
    let kernel = build_kernel(&basis, &params).unwrap();
    let tail = kernel.slabs[params.n_s].max_abs();
    let head = kernel.slabs[0].max_abs();
    run.record(
        tail <= 1e-6 * head,
        "kernel vanishes at the delay horizon",
        format!("|C[n_s]|/|C[0]| = {:.2e}", tail / head),
    );
    // linearity of eval_q
    let n = basis.n();
    let dt = params.dt();
    let mut h1 = DelayHistory::new(9, dt, 0.0);
    let mut h2 = DelayHistory::new(9, dt, 0.0);
    let mut h3 = DelayHistory::new(9, dt, 0.0);
    let mut rng = Rng::seed_from(9);
    for _ in 0..9 {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        rng.fill_uniform(&mut a, -1.0, 1.0);
        rng.fill_uniform(&mut b, -1.0, 1.0);
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        h1.push(&a);
        h2.push(&b);
        h3.push(&c);
    }
    let q1 = kernel.eval_q(&h1).unwrap();
    let q2 = kernel.eval_q(&h2).unwrap();
    let q3 = kernel.eval_q(&h3).unwrap();
    let mut lin_dev = 0.0f64;
    for j in 0..n {
        let expect = 2.0 * q1.coeffs[j] - 0.5 * q2.coeffs[j];
        lin_dev = lin_dev.max((q3.coeffs[j] - expect).abs() / expect.abs().max(1.0));
    }
    run.record(
        lin_dev < 1e-12,
        "delay force linear in the history",
        format!("max rel dev {lin_dev:.2e}"),
    );
}

fn dynamics_checks(run: &mut CheckRun) {
    let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
    let n = basis.n();
    // Berger gradient structure by central differences
    let mut rng = Rng::seed_from(12);
    let load = Field::zeros(n);
    let (b1, b2) = (0.7, 1.9);
    let h = 1e-5;
    let mut worst = 0.0f64;
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
            worst = worst.max((f[j] - fd).abs() / f[j].abs().max(1e-3));
        }
    }
    run.record(
        worst <= 1e-6,
        "Berger force is the potential gradient",
        format!("max rel dev {worst:.2e}"),
    );
    // conservation over a short run
    let phys = PhysParams {
        flow_speed: 0.0,
        damping: 0.0,
        prestress: 0.0,
        stiffness: 1.0,
        load: Field::zeros(n),
        t_star: 0.0,
        flow_coupling: false,
        flow_damping_scale: 1.0,
    };
    let mut u0 = vec![0.0; n];
    rng.fill_uniform(&mut u0, -1e-3, 1e-3);
    let spec = RunSpec {
        phys,
        weights: LyapunovWeights::default(),
        dt: 1e-3,
        n_steps: 2000,
        output_stride: 200,
        u0: Field::from_coeffs(u0),
        v0: Field::zeros(n),
        init_history: InitialHistory::Frozen,
    };
    let arts = simulate(&basis, None, &spec).unwrap();
    let e0 = arts.energies[0].e_pl;
    let drift = arts
        .energies
        .iter()
        .fold(0.0f64, |acc, e| acc.max((e.e_pl - e0).abs() / e0.abs()));
    run.record(
        drift <= 1e-5,
        "conservative run energy drift",
        format!("max rel drift {drift:.2e}"),
    );
    // determinism
    let arts2 = simulate(&basis, None, &spec).unwrap();
    let same = arts
        .states
        .iter()
        .zip(&arts2.states)
        .all(|(x, y)| x.a == y.a && x.adot == y.adot);
    run.record(
        same,
        "repeated runs bit-identical",
        "state series equal".into(),
    );
}

fn defect_checks(run: &mut CheckRun) {
    let basis = build_basis(PlateDomain::unit_square(), 4, 4, 24).unwrap();
    let (vals, _) = generalized_sym_eigen(&basis.k, &basis.m).unwrap();
    let mut worst = 0.0f64;
    for n_modes in [1usize, 3, 6] {
        let fs = make_modes(&basis, n_modes).unwrap();
        let d = completeness_defect(&fs, &basis, WeakNorm::L2).unwrap();
        worst = worst.max((d.epsilon - 1.0 / vals[n_modes].sqrt()).abs());
    }
    run.record(
        worst <= 1e-10,
        "modes defect matches spectral oracle",
        format!("max dev {worst:.2e}"),
    );
    // monotonicity under augmentation
    let base = make_nodes(&basis, 0.34).unwrap();
    let mut fs = base;
    let mut prev = completeness_defect(&fs, &basis, WeakNorm::L2)
        .unwrap()
        .epsilon;
    let mut rng = Rng::seed_from(42);
    let mut mono = true;
    for _ in 0..5 {
        let mut row = vec![0.0; basis.n()];
        rng.fill_uniform(&mut row, -1.0, 1.0);
        fs = fs.augmented(&[row]);
        let eps = completeness_defect(&fs, &basis, WeakNorm::L2)
            .unwrap()
            .epsilon;
        mono &= eps <= prev + 1e-12;
        prev = eps;
    }
    run.record(
        mono,
        "defect monotone under augmentation",
        "5 random rows".into(),
    );
}

fn flowtrace_checks(run: &mut CheckRun) {
    let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
    let u = 0.5;
    let t_star = compute_tstar(u, &basis.domain, 2048).unwrap();
    let params = FlowParams {
        flow_speed: u,
        t_star,
        n_s: 48,
        n_theta: 48,
    };
    let zero = SyntheticTrajectory {
        mean: vec![0.0; 4],
        osc: vec![0.0; 4],
        omega: 1.0,
        phase: 0.0,
    };
    let p = TracePoint {
        x: 0.4,
        y: 0.5,
        z: 0.2,
        t: 5.0,
    };
    let z_ok = eval_phi2(&p, &zero, &basis, &params).unwrap() == 0.0
        && eval_phi2_t(&p, &zero, &basis, &params).unwrap() == 0.0;
    run.record(
        z_ok,
        "flow potential vanishes for the zero trajectory",
        "both evaluators".into(),
    );
    let mut osc = vec![0.0; 4];
    osc[0] = 0.8;
    let traj = SyntheticTrajectory {
        mean: vec![0.0; 4],
        osc,
        omega: 2.0,
        phase: 0.3,
    };
    let pts = [(0.35, 0.45), (0.6, 0.65)];
    let samples = reduction_residual(&pts, 5.0, &traj, &basis, &params).unwrap();
    let worst = samples.iter().map(|s| s.residual).fold(0.0f64, f64::max);
    run.record(
        worst <= 2e-3,
        "flow-to-plate reduction identity",
        format!("max residual {worst:.2e}"),
    );
}

fn dimension_checks(run: &mut CheckRun) {
    let fixed: Vec<Vec<f64>> = (0..2100).map(|_| vec![0.3, -1.0]).collect();
    let radii = log_radii(1e-3, 1.0, 24);
    let d0 = correlation_dimension(&fixed, &radii).unwrap().dimension;
    run.record(
        d0 == 0.0,
        "fixed point has dimension 0",
        format!("got {d0}"),
    );
    let mut rng = Rng::seed_from(7);
    let circle: Vec<Vec<f64>> = (0..2200)
        .map(|_| {
            let t = rng.uniform(0.0, core::f64::consts::TAU);
            vec![t.cos(), t.sin(), 0.3 * t.cos()]
        })
        .collect();
    let radii = log_radii(0.02, 1.0, 26);
    let d1 = correlation_dimension(&circle, &radii).unwrap().dimension;
    run.record(
        (d1 - 1.0).abs() <= 0.1,
        "circle has dimension 1",
        format!("got {d1:.3}"),
    );
}
