//! Determining functionals: node/mode/average families, completeness
//! defects, interpolation errors and the determining experiment.
//!
//! A family of continuous linear functionals is represented by its evaluation
//! matrix L with L[i][j] = l_i(e_j). The completeness defect
//!
//!   ε = sup { |w|_weak : l_j(w) = 0 ∀j, |Δw| <= 1 }
//!
//! becomes a generalized symmetric eigenproblem on the null space of L: with
//! Z an orthonormal null basis, ε² is the top eigenvalue of
//! (Zᵀ W Z) x = μ (Zᵀ K Z) x.

use crate::basis::{BasisSet, Field};
use crate::float::F64Ext;
use crate::linalg::{generalized_sym_eigen, null_space, Mat};
use crate::quad::GaussRule;
use crate::{Error, Result};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Family kind, with the construction parameters that built it.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    /// Point evaluations at interior triangulation vertices of pitch h.
    Nodes {
        h: f64,
    },
    /// L² pairings with the first n discrete clamped-plate eigenvectors.
    Modes {
        n: usize,
    },
    /// Kernel averages l_j(w) = h^{-2} ∫ w λ(x/h - j) over the lattice in Ω.
    Averages {
        h: f64,
    },
    Custom(String),
}

/// A finite functional family with its evaluation matrix.
#[derive(Debug, Clone)]
pub struct FunctionalSet {
    pub kind: FunctionalKind,
    /// m×N evaluation matrix.
    pub matrix: Mat,
    /// Numerical rank of the evaluation matrix.
    pub rank: usize,
    /// Kind-specific anchor points (vertices, lattice cells) in row order.
    pub anchors: Vec<(f64, f64)>,
    /// For Modes: the (K, M) eigenvalues of the generating eigenvectors.
    pub eigenvalues: Vec<f64>,
    /// For Modes: M-orthonormal eigenvector coefficients, one per row.
    pub eigenvectors: Option<Mat>,
}

impl FunctionalSet {
    pub fn len(&self) -> usize {
        self.matrix.rows
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows == 0
    }

    /// Apply every functional to a coefficient vector.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        self.matrix.matvec(coeffs)
    }

    fn from_matrix(kind: FunctionalKind, matrix: Mat, anchors: Vec<(f64, f64)>) -> Self {
        let (rank, _) = null_space(&matrix);
        FunctionalSet {
            kind,
            matrix,
            rank,
            anchors,
            eigenvalues: Vec::new(),
            eigenvectors: None,
        }
    }

    /// Append extra rows (e.g. random probes); rank is recomputed.
    pub fn augmented(&self, rows: &[Vec<f64>]) -> Self {
        let n = self.matrix.cols;
        let mut m = Mat::zeros(self.matrix.rows + rows.len(), n);
        for i in 0..self.matrix.rows {
            m.data[i * n..(i + 1) * n].copy_from_slice(self.matrix.row(i));
        }
        for (k, row) in rows.iter().enumerate() {
            let i = self.matrix.rows + k;
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        FunctionalSet::from_matrix(FunctionalKind::Custom("augmented".into()), m, Vec::new())
    }
}

/// Interior vertices of the uniform right-triangulation with pitch <= h.
/// Boundary vertices are excluded: point values vanish there identically
/// under clamping.
pub fn make_nodes(basis: &BasisSet, h: f64) -> Result<FunctionalSet> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mesh size must be positive, got {h}"
        )));
    }
    let (lx, ly) = (basis.domain.lx, basis.domain.ly);
    let ncx = (lx / h).ceil() as usize;
    let ncy = (ly / h).ceil() as usize;
    let mut vertices = Vec::new();
    for i in 1..ncx {
        for j in 1..ncy {
            vertices.push((i as f64 * lx / ncx as f64, j as f64 * ly / ncy as f64));
        }
    }
    if vertices.is_empty() {
        return Err(Error::EmptySet(format!("no interior vertex at pitch {h}")));
    }
    let n = basis.n();
    let mut m = Mat::zeros(vertices.len(), n);
    for (row, &(x, y)) in vertices.iter().enumerate() {
        let vals = basis.eval_all_modes(x, y, (0, 0));
        m.data[row * n..(row + 1) * n].copy_from_slice(&vals);
    }
    Ok(FunctionalSet::from_matrix(
        FunctionalKind::Nodes { h },
        m,
        vertices,
    ))
}

/// L² pairings with the first n eigenvectors of K v = λ M v (ascending).
pub fn make_modes(basis: &BasisSet, n_modes: usize) -> Result<FunctionalSet> {
    let n = basis.n();
    if n_modes > n {
        return Err(Error::InvalidArgument(format!(
            "requested {n_modes} modes from an {n}-dimensional basis"
        )));
    }
    let (vals, vecs) = generalized_sym_eigen(&basis.k, &basis.m)?;
    let mut m = Mat::zeros(n_modes, n);
    let mut evs = Mat::zeros(n_modes, n);
    for row in 0..n_modes {
        let v: Vec<f64> = (0..n).map(|i| vecs[(i, row)]).collect();
        let mv = basis.m.matvec(&v);
        m.data[row * n..(row + 1) * n].copy_from_slice(&mv);
        evs.data[row * n..(row + 1) * n].copy_from_slice(&v);
    }
    let mut fs = FunctionalSet::from_matrix(FunctionalKind::Modes { n: n_modes }, m, Vec::new());
    fs.eigenvalues = vals;
    fs.eigenvectors = Some(evs);
    Ok(fs)
}

/// Kernel averages over the lattice {j : j h ∈ Ω}; the kernel λ must have
/// unit integral over its compact support within [0,1]².
pub fn make_averages<F: Fn(f64, f64) -> f64>(
    basis: &BasisSet,
    h: f64,
    kernel: F,
) -> Result<FunctionalSet> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cell size must be positive, got {h}"
        )));
    }
    // Validate unit integral of the kernel on its reference cell.
    let rule = GaussRule::legendre(24, 0.0, 1.0);
    let mut mass = 0.0;
    for (xi, wx) in rule.nodes.iter().zip(rule.weights.iter()) {
        for (yi, wy) in rule.nodes.iter().zip(rule.weights.iter()) {
            mass += wx * wy * kernel(*xi, *yi);
        }
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "kernel integral {mass} differs from 1"
        )));
    }
    let (lx, ly) = (basis.domain.lx, basis.domain.ly);
    // Lattice points j with j h inside the open domain; each carries the
    // scaled kernel on the cell j h + h·[0,1]², clipped to Ω by the
    // extension-by-zero evaluation.
    let jx_max = (lx / h).ceil() as isize;
    let jy_max = (ly / h).ceil() as isize;
    let mut cells = Vec::new();
    for jx in 1..=jx_max {
        for jy in 1..=jy_max {
            let (cx, cy) = (jx as f64 * h, jy as f64 * h);
            if cx < lx && cy < ly {
                cells.push((cx, cy));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptySet("no lattice point inside the domain".into()));
    }
    let n = basis.n();
    let cell_rule = GaussRule::legendre(basis.quad_order.min(24), 0.0, 1.0);
    let mut m = Mat::zeros(cells.len(), n);
    // l_j(w) = h^{-2} ∫ w λ(x/h - j) dx = ∫_cell w λ(ref) dref, accumulated
    // over all basis functions per quadrature point.
    for (row, &(cx, cy)) in cells.iter().enumerate() {
        let dst = &mut m.data[row * n..(row + 1) * n];
        for (xi, wx) in cell_rule.nodes.iter().zip(cell_rule.weights.iter()) {
            for (yi, wy) in cell_rule.nodes.iter().zip(cell_rule.weights.iter()) {
                let (x, y) = (cx + h * xi, cy + h * yi);
                let w = wx * wy * kernel(*xi, *yi);
                if w == 0.0 {
                    continue;
                }
                let vals = basis.eval_all_modes(x, y, (0, 0));
                for k in 0..n {
                    dst[k] += w * vals[k];
                }
            }
        }
    }
    Ok(FunctionalSet::from_matrix(
        FunctionalKind::Averages { h },
        m,
        cells,
    ))
}

/// Weak norm choices for the defect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeakNorm {
    /// L², Gram matrix M.
    L2,
    /// H^s via spectral interpolation of the (K, M) pencil, 0 <= s <= 2.
    Fractional(f64),
}

/// Result of a defect solve.
#[derive(Debug, Clone)]
pub struct DefectResult {
    pub epsilon: f64,
    /// Unit-curvature-norm maximizer annihilated by the family (zero field
    /// for complete families).
    pub maximizer: Field,
    pub weak_norm: WeakNorm,
    pub null_dim: usize,
}

/// Gram matrix of the chosen weak norm.
fn weak_gram(basis: &BasisSet, norm: WeakNorm) -> Result<Mat> {
    match norm {
        WeakNorm::L2 => Ok(basis.m.clone()),
        WeakNorm::Fractional(s) => {
            if !(0.0..=2.0).contains(&s) {
                return Err(Error::InvalidArgument(format!(
                    "fractional order {s} outside [0, 2]"
                )));
            }
            let n = basis.n();
            let (vals, vecs) = generalized_sym_eigen(&basis.k, &basis.m)?;
            // W_s = M V diag(λ^{s/2}) Vᵀ M with V M-orthonormal; s = 0 gives M,
            // s = 2 gives K.
            let mut core = Mat::zeros(n, n);
            for j in 0..n {
                let lam = vals[j].max_f(0.0).powf(s / 2.0);
                for i in 0..n {
                    core[(i, j)] = vecs[(i, j)] * lam;
                }
            }
            let vt = {
                let mut vt = Mat::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        vt[(i, j)] = vecs[(j, i)];
                    }
                }
                vt
            };
            let inner = core.matmul(&vt);
            Ok(basis.m.matmul(&inner).matmul(&basis.m))
        }
    }
}

/// Completeness defect of the family in the chosen weak norm.
pub fn completeness_defect(
    fs: &FunctionalSet,
    basis: &BasisSet,
    norm: WeakNorm,
) -> Result<DefectResult> {
    let n = basis.n();
    if fs.matrix.cols != n {
        return Err(Error::InvalidArgument(
            "functional matrix does not match the basis".into(),
        ));
    }
    let (rank, z) = null_space(&fs.matrix);
    let null_dim = n - rank;
    if null_dim == 0 {
        return Ok(DefectResult {
            epsilon: 0.0,
            maximizer: Field::zeros(n),
            weak_norm: norm,
            null_dim,
        });
    }
    let w = weak_gram(basis, norm)?;
    let wz = z.congruence(&w);
    let kz = z.congruence(&basis.k);
    let (vals, vecs) = generalized_sym_eigen(&wz, &kz)?;
    let top = null_dim - 1;
    let mu = vals[top].max_f(0.0);
    // Maximizer back in coefficient space, normalized to unit curvature norm.
    let y: Vec<f64> = (0..null_dim).map(|i| vecs[(i, top)]).collect();
    let mut coeffs = z.matvec(&y);
    let knorm = basis.k.quad_form(&coeffs, &coeffs).sqrt();
    for c in &mut coeffs {
        *c /= knorm;
    }
    Ok(DefectResult {
        epsilon: mu.sqrt(),
        maximizer: Field::from_coeffs(coeffs),
        weak_norm: norm,
        null_dim,
    })
}

/// One row of a defect scaling study.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    /// h for nodes/averages, functional count for modes.
    pub parameter: f64,
    pub functional_count: usize,
    pub epsilon: f64,
    /// Defect at doubled basis resolution, for the saturation guard.
    pub epsilon_refined: Option<f64>,
}

/// Scaling study output with the log-log fit.
#[derive(Debug, Clone)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
    pub fit_r2: f64,
    /// Worst relative change between the base and refined basis.
    pub saturation: f64,
}

/// Least-squares slope and R² of log y against log x.
pub fn loglog_fit(rows: &[(f64, f64)]) -> (f64, f64) {
    let n = rows.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in rows {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let r_num = n * sxy - sx * sy;
    let r_den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    let r = if r_den == 0.0 { 1.0 } else { r_num / r_den };
    (slope, r * r)
}

/// Defect scaling in h for nodes or averages. `refined` supplies a basis at
/// doubled resolution for the saturation guard; "under-resolved" surfaces as
/// an error when the guard trips.
pub fn defect_scaling_study<B>(
    basis: &BasisSet,
    refined: &BasisSet,
    h_values: &[f64],
    builder: B,
) -> Result<ScalingStudy>
where
    B: Fn(&BasisSet, f64) -> Result<FunctionalSet>,
{
    if h_values.len() < 3 {
        return Err(Error::InvalidArgument(
            "need at least 3 scale values".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut fit_pts = Vec::new();
    let mut saturation: f64 = 0.0;
    let finest = h_values.iter().cloned().fold(f64::INFINITY, f64::min);
    for &h in h_values {
        let fs = builder(basis, h)?;
        let base = completeness_defect(&fs, basis, WeakNorm::L2)?;
        // Saturation is worst at the finest functional scale; the doubled
        // basis is solved only there.
        let epsilon_refined = if h == finest {
            let fs_ref = builder(refined, h)?;
            let refd = completeness_defect(&fs_ref, refined, WeakNorm::L2)?;
            let change = (base.epsilon - refd.epsilon).abs() / refd.epsilon.max_f(1e-300);
            saturation = saturation.max_f(change);
            Some(refd.epsilon)
        } else {
            None
        };
        rows.push(ScalingRow {
            parameter: h,
            functional_count: fs.len(),
            epsilon: base.epsilon,
            epsilon_refined,
        });
        fit_pts.push((h, base.epsilon));
    }
    if saturation > 0.05 {
        return Err(Error::InsufficientQuadrature(format!(
            "basis saturation: defect moved {:.1}% under basis doubling",
            saturation * 100.0
        )));
    }
    let (slope, fit_r2) = loglog_fit(&fit_pts);
    Ok(ScalingStudy {
        rows,
        slope,
        fit_r2,
        saturation,
    })
}

/// Dual family for the interpolation operator R w = Σ l_j(w) φ_j, rows of
/// coefficients, one per functional.
pub struct DualFamily {
    pub rows: Mat,
}

/// Default dual families: eigenvectors for modes, projected bilinear hats
/// for nodes, and projected cell indicators for averages (the translate of
/// the constant kernel; families built with another kernel need their own
/// dual).
pub fn default_dual(fs: &FunctionalSet, basis: &BasisSet) -> Result<DualFamily> {
    let n = basis.n();
    let m = fs.len();
    let mut rows = Mat::zeros(m, n);
    match &fs.kind {
        FunctionalKind::Modes { .. } => {
            let evs = fs
                .eigenvectors
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("mode set lacks eigenvectors".into()))?;
            rows = evs.clone();
        }
        FunctionalKind::Nodes { h } => {
            for (row, &(vx, vy)) in fs.anchors.iter().enumerate() {
                let hat = |x: f64, y: f64| {
                    let tx = 1.0 - ((x - vx) / h).abs();
                    let ty = 1.0 - ((y - vy) / h).abs();
                    tx.max_f(0.0) * ty.max_f(0.0)
                };
                let proj = basis.project(hat)?;
                rows.data[row * n..(row + 1) * n].copy_from_slice(&proj.coeffs);
            }
        }
        FunctionalKind::Averages { h } => {
            for (row, &(cx, cy)) in fs.anchors.iter().enumerate() {
                let cell = |x: f64, y: f64| {
                    if x >= cx && x < cx + h && y >= cy && y < cy + h {
                        1.0
                    } else {
                        0.0
                    }
                };
                let proj = basis.project(cell)?;
                rows.data[row * n..(row + 1) * n].copy_from_slice(&proj.coeffs);
            }
        }
        FunctionalKind::Custom(_) => {
            return Err(Error::InvalidArgument(
                "no default dual family for custom sets".into(),
            ))
        }
    }
    Ok(DualFamily { rows })
}

/// Supremum of |w - Σ l_j(w) φ_j|_{L²} over unit-curvature-norm fields; a
/// generalized eigenproblem on (I - P)ᵀ M (I - P) against K.
pub fn interpolation_error(fs: &FunctionalSet, dual: &DualFamily, basis: &BasisSet) -> Result<f64> {
    let n = basis.n();
    // P = Φᵀ L : coefficients ↦ interpolant coefficients.
    let mut ip = Mat::identity(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for r in 0..fs.len() {
                acc += dual.rows[(r, i)] * fs.matrix[(r, j)];
            }
            ip[(i, j)] -= acc;
        }
    }
    let a = ip.congruence(&basis.m);
    let (vals, _) = generalized_sym_eigen(&a, &basis.k)?;
    Ok(vals[vals.len() - 1].max_f(0.0).sqrt())
}

/// Verdict of the determining experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum DeterminingVerdict {
    /// Functional differences and the state difference both decayed.
    ConsistentWithDetermining,
    /// Functionals decayed but the state stalled: defect too large.
    EpsilonTooLarge,
    /// Functional differences did not decay; no conclusion.
    Inconclusive,
}

/// Time series output of the determining experiment.
#[derive(Debug, Clone)]
pub struct DeterminingReport {
    pub times: Vec<f64>,
    /// max_j |l_j(u¹-u²)| per record.
    pub functional_gap: Vec<f64>,
    /// H-norm of the state difference per record (energy + window part).
    pub state_gap: Vec<f64>,
    pub verdict: DeterminingVerdict,
    pub functional_tol: f64,
    pub state_tol: f64,
}

/// Classify decay of the two recorded series against tolerances.
pub fn determining_verdict(report: &mut DeterminingReport) {
    let tail = report.functional_gap.len() / 5 + 1;
    let tail_max = |s: &[f64]| {
        s.iter()
            .rev()
            .take(tail)
            .fold(0.0f64, |acc, &v| acc.max_f(v))
    };
    let func_decayed = tail_max(&report.functional_gap) <= report.functional_tol;
    let state_decayed = tail_max(&report.state_gap) <= report.state_tol;
    report.verdict = if func_decayed && state_decayed {
        DeterminingVerdict::ConsistentWithDetermining
    } else if func_decayed {
        DeterminingVerdict::EpsilonTooLarge
    } else {
        DeterminingVerdict::Inconclusive
    };
}

/// Interpolation-inequality constant: |v|_weak <= ε |Δv| + C max_j |l_j(v)|,
/// reporting the smallest C consistent with a probe set.
pub fn interpolation_inequality_constant(
    fs: &FunctionalSet,
    basis: &BasisSet,
    epsilon: f64,
    probes: &[Field],
) -> f64 {
    let mut c: f64 = 0.0;
    for p in probes {
        let weak = basis.m.quad_form(&p.coeffs, &p.coeffs).sqrt();
        let strong = basis.k.quad_form(&p.coeffs, &p.coeffs).sqrt();
        let lmax = fs
            .apply(&p.coeffs)
            .iter()
            .fold(0.0f64, |acc, &v| acc.max_f(v.abs()));
        if lmax > 1e-14 {
            c = c.max_f((weak - epsilon * strong) / lmax);
        }
    }
    c.max_f(0.0)
}
