//! Clamped-plate Galerkin basis on a rectangle.
//!
//! Basis functions are tensor products of 1-D clamped-beam eigenfunctions,
//! L2-normalized. They conform to H_0^2 (value and normal derivative vanish on
//! the boundary) but are not exact plate eigenfunctions, so the biharmonic
//! form matrix K is full SPD rather than diagonal. All bilinear forms are
//! assembled from 1-D Gauss-Legendre blocks, which is the tensor quadrature of
//! the separable integrands.

use crate::beam::BeamBasis;
// Under cfg(test) std's inherent float methods shadow this shim.
#[cfg_attr(test, allow(unused_imports))]
use crate::float::F64Ext;
use crate::linalg::Mat;
use crate::quad::{GaussRule, TensorRule};
use crate::rng::Rng;
use crate::{fnv1a64, Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Rectangular plate domain [0, Lx] x [0, Ly].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateDomain {
    pub lx: f64,
    pub ly: f64,
}

impl PlateDomain {
    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "plate extents must be positive, got {lx} x {ly}"
            )));
        }
        Ok(PlateDomain { lx, ly })
    }

    pub fn unit_square() -> Self {
        PlateDomain { lx: 1.0, ly: 1.0 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.lx).contains(&x) && (0.0..=self.ly).contains(&y)
    }
}

/// Coefficient vector of a spatial field in the Galerkin basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field {
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Field { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Basis with all cached bilinear-form matrices.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub domain: PlateDomain,
    pub nx: usize,
    pub ny: usize,
    pub quad_order: usize,
    /// Mass matrix <e_i, e_j>; identity to quadrature tolerance.
    pub m: Mat,
    /// Biharmonic form <Δe_i, Δe_j>.
    pub k: Mat,
    /// Gradient form <∇e_i, ∇e_j>.
    pub g: Mat,
    /// x-derivative form <∂x e_i, e_j>; antisymmetric.
    pub dx: Mat,
    /// Tensor quadrature rule used for projections.
    pub quad: TensorRule,
    beam_x: BeamBasis,
    beam_y: BeamBasis,
}

/// Minimum quadrature order accepted for given mode counts.
pub fn quad_order_floor(nx: usize, ny: usize) -> usize {
    2 * nx.max(ny) + 4
}

/// Construct the basis and assemble M, K, G, Dx.
pub fn build_basis(
    domain: PlateDomain,
    nx: usize,
    ny: usize,
    quad_order: usize,
) -> Result<BasisSet> {
    if nx < 1 || ny < 1 {
        return Err(Error::InvalidArgument(format!(
            "mode counts must be at least 1, got nx={nx}, ny={ny}"
        )));
    }
    let floor = quad_order_floor(nx, ny);
    if quad_order < floor {
        return Err(Error::InsufficientQuadrature(format!(
            "order {quad_order} below floor {floor} for nx={nx}, ny={ny}"
        )));
    }
    let beam_x = BeamBasis::new(nx, domain.lx);
    let beam_y = BeamBasis::new(ny, domain.ly);
    let rule_x = GaussRule::legendre(quad_order, 0.0, domain.lx);
    let rule_y = GaussRule::legendre(quad_order, 0.0, domain.ly);

    // 1-D Gram blocks: s0 = <phi_i, phi_j>, s1 = <phi_i', phi_j'>,
    // s2 = <phi_i'', phi_j''>, a20[i][j] = <phi_i'', phi_j>, d10[i][j] = <phi_i', phi_j>.
    let gx = gram_blocks(&beam_x, &rule_x);
    let gy = gram_blocks(&beam_y, &rule_y);

    let n = nx * ny;
    let mut m = Mat::zeros(n, n);
    let mut k = Mat::zeros(n, n);
    let mut g = Mat::zeros(n, n);
    let mut dx = Mat::zeros(n, n);
    for a in 0..n {
        let (ix, iy) = (a / ny, a % ny);
        for b in 0..n {
            let (jx, jy) = (b / ny, b % ny);
            m[(a, b)] = gx.s0[(ix, jx)] * gy.s0[(iy, jy)];
            k[(a, b)] = gx.s2[(ix, jx)] * gy.s0[(iy, jy)]
                + gx.a20[(ix, jx)] * gy.a20[(jy, iy)]
                + gx.a20[(jx, ix)] * gy.a20[(iy, jy)]
                + gx.s0[(ix, jx)] * gy.s2[(iy, jy)];
            g[(a, b)] = gx.s1[(ix, jx)] * gy.s0[(iy, jy)] + gx.s0[(ix, jx)] * gy.s1[(iy, jy)];
            dx[(a, b)] = gx.d10[(ix, jx)] * gy.s0[(iy, jy)];
        }
    }
    Ok(BasisSet {
        domain,
        nx,
        ny,
        quad_order,
        m,
        k,
        g,
        dx,
        quad: TensorRule {
            x: rule_x,
            y: rule_y,
        },
        beam_x,
        beam_y,
    })
}

struct GramBlocks {
    s0: Mat,
    s1: Mat,
    s2: Mat,
    a20: Mat,
    d10: Mat,
}

fn gram_blocks(beam: &BeamBasis, rule: &GaussRule) -> GramBlocks {
    let n = beam.len();
    let tab = beam.tabulate(&rule.nodes);
    let mut s0 = Mat::zeros(n, n);
    let mut s1 = Mat::zeros(n, n);
    let mut s2 = Mat::zeros(n, n);
    let mut a20 = Mat::zeros(n, n);
    let mut d10 = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = [0.0f64; 5];
            for (q, &w) in rule.weights.iter().enumerate() {
                acc[0] += w * tab[i][0][q] * tab[j][0][q];
                acc[1] += w * tab[i][1][q] * tab[j][1][q];
                acc[2] += w * tab[i][2][q] * tab[j][2][q];
                acc[3] += w * tab[i][2][q] * tab[j][0][q];
                acc[4] += w * tab[i][1][q] * tab[j][0][q];
            }
            s0[(i, j)] = acc[0];
            s1[(i, j)] = acc[1];
            s2[(i, j)] = acc[2];
            a20[(i, j)] = acc[3];
            d10[(i, j)] = acc[4];
        }
    }
    GramBlocks {
        s0,
        s1,
        s2,
        a20,
        d10,
    }
}

impl BasisSet {
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of the (ix, iy) tensor mode; x-major ordering.
    pub fn mode_index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn mode_pair(&self, k: usize) -> (usize, usize) {
        (k / self.ny, k % self.ny)
    }

    pub(crate) fn beam_x(&self) -> &BeamBasis {
        &self.beam_x
    }

    pub(crate) fn beam_y(&self) -> &BeamBasis {
        &self.beam_y
    }

    /// Pointwise values of the (dx, dy)-derivative of the field, extension by
    /// zero outside the closed rectangle. Orders up to 3 are supported; the
    /// delay-force machinery needs 2, the rate-formula diagnostics need 3.
    pub fn evaluate(
        &self,
        field: &Field,
        points: &[(f64, f64)],
        deriv: (usize, usize),
    ) -> Vec<f64> {
        assert!(deriv.0 + deriv.1 <= 3, "derivative order above 3");
        assert_eq!(field.len(), self.n());
        let mut out = vec![0.0; points.len()];
        for (p, &(x, y)) in points.iter().enumerate() {
            if !self.domain.contains(x, y) {
                continue;
            }
            let vx: Vec<f64> = self
                .beam_x
                .modes
                .iter()
                .map(|m| m.eval(x, deriv.0))
                .collect();
            let vy: Vec<f64> = self
                .beam_y
                .modes
                .iter()
                .map(|m| m.eval(y, deriv.1))
                .collect();
            let mut s = 0.0;
            for ix in 0..self.nx {
                let mut row = 0.0;
                for iy in 0..self.ny {
                    row += field.coeffs[self.mode_index(ix, iy)] * vy[iy];
                }
                s += vx[ix] * row;
            }
            out[p] = s;
        }
        out
    }

    /// Single-point convenience wrapper over `evaluate`.
    pub fn eval_at(&self, field: &Field, x: f64, y: f64, deriv: (usize, usize)) -> f64 {
        self.evaluate(field, &[(x, y)], deriv)[0]
    }

    /// Values of every basis function at one point (one tensor pass instead
    /// of N separate evaluations); zero outside the closed rectangle.
    pub fn eval_all_modes(&self, x: f64, y: f64, deriv: (usize, usize)) -> Vec<f64> {
        assert!(deriv.0 + deriv.1 <= 2, "derivative order above 2");
        let mut out = vec![0.0; self.n()];
        if !self.domain.contains(x, y) {
            return out;
        }
        let vx: Vec<f64> = self
            .beam_x
            .modes
            .iter()
            .map(|m| m.eval(x, deriv.0))
            .collect();
        let vy: Vec<f64> = self
            .beam_y
            .modes
            .iter()
            .map(|m| m.eval(y, deriv.1))
            .collect();
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                out[self.mode_index(ix, iy)] = vx[ix] * vy[iy];
            }
        }
        out
    }

    /// L2 projection coefficients a_k = <f, e_k> via the stored quadrature.
    pub fn project<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> Result<Field> {
        let nqx = self.quad.x.len();
        let nqy = self.quad.y.len();
        let mut samples = Mat::zeros(nqx, nqy);
        for (i, &x) in self.quad.x.nodes.iter().enumerate() {
            for (j, &y) in self.quad.y.nodes.iter().enumerate() {
                let v = f(x, y);
                if !v.is_finite() {
                    return Err(Error::NonFiniteSample(format!("f({x}, {y}) = {v}")));
                }
                samples[(i, j)] = v;
            }
        }
        let tab_x = self.beam_x.tabulate(&self.quad.x.nodes);
        let tab_y = self.beam_y.tabulate(&self.quad.y.nodes);
        let mut coeffs = vec![0.0; self.n()];
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                let mut s = 0.0;
                for i in 0..nqx {
                    let wx = self.quad.x.weights[i] * tab_x[ix][0][i];
                    let mut inner = 0.0;
                    for j in 0..nqy {
                        inner += self.quad.y.weights[j] * tab_y[iy][0][j] * samples[(i, j)];
                    }
                    s += wx * inner;
                }
                coeffs[self.mode_index(ix, iy)] = s;
            }
        }
        Ok(Field { coeffs })
    }

    /// Random coefficient field, normalized so the curvature norm a^T K a = 1.
    pub fn random_unit_field(&self, rng: &mut Rng) -> Field {
        let mut coeffs = vec![0.0; self.n()];
        rng.fill_uniform(&mut coeffs, -1.0, 1.0);
        let kn = self.k.quad_form(&coeffs, &coeffs).sqrt();
        for c in &mut coeffs {
            *c /= kn;
        }
        Field { coeffs }
    }

    /// Fingerprint of the construction tuple; cache files store it and refuse
    /// mismatched loads.
    pub fn build_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(40);
        bytes.extend_from_slice(&self.domain.lx.to_le_bytes());
        bytes.extend_from_slice(&self.domain.ly.to_le_bytes());
        bytes.extend_from_slice(&(self.nx as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.ny as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.quad_order as u64).to_le_bytes());
        fnv1a64(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    #[test]
    fn rejects_bad_arguments() {
        let dom = PlateDomain::unit_square();
        assert!(matches!(
            build_basis(dom, 0, 1, 12),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_basis(dom, 3, 3, 9),
            Err(Error::InsufficientQuadrature(_))
        ));
        assert!(PlateDomain::new(-1.0, 1.0).is_err());
        assert!(PlateDomain::new(1.0, 0.0).is_err());
    }

    #[test]
    fn single_mode_mass_is_unity() {
        let basis = build_basis(PlateDomain::unit_square(), 1, 1, 12).unwrap();
        assert_eq!(basis.n(), 1);
        assert!((basis.m[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mass_matrix_is_identity_to_quadrature_tolerance() {
        let basis = build_basis(PlateDomain::new(1.0, 1.4).unwrap(), 4, 3, 20).unwrap();
        for i in 0..basis.n() {
            for j in 0..basis.n() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((basis.m[(i, j)] - expect).abs() < 1e-8, "M[{i}][{j}]");
            }
        }
    }

    #[test]
    fn dx_is_antisymmetric() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let s = basis.dx[(i, j)] + basis.dx[(j, i)];
                assert!(s.abs() < 1e-10, "Dx+Dx^T at ({i},{j}) = {s}");
            }
        }
    }

    #[test]
    fn k_and_g_are_positive_definite() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        for mat in [&basis.k, &basis.g, &basis.m] {
            let (vals, _) = sym_eigen(mat).unwrap();
            assert!(vals[0] > 0.0, "smallest eigenvalue {}", vals[0]);
        }
    }

    #[test]
    fn k11_matches_independent_quadrature() {
        // Oracle: high-order tensor quadrature of (Δe_1)^2 through the
        // pointwise evaluator.
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let mut e1 = Field::zeros(basis.n());
        e1.coeffs[0] = 1.0;
        let fine = TensorRule::new(64, 1.0, 1.0);
        let oracle = fine.integrate(|x, y| {
            let lap = basis.eval_at(&e1, x, y, (2, 0)) + basis.eval_at(&e1, x, y, (0, 2));
            lap * lap
        });
        assert!(
            (basis.k[(0, 0)] - oracle).abs() < 1e-8 * oracle.abs(),
            "K11 {} vs oracle {oracle}",
            basis.k[(0, 0)]
        );
    }

    #[test]
    fn greens_identity_links_laplacian_and_gradient_form() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 2, 18).unwrap();
        let mut rng = Rng::seed_from(5);
        let a = basis.random_unit_field(&mut rng);
        let b = basis.random_unit_field(&mut rng);
        let lhs = basis.quad.integrate(|x, y| {
            let lap_u = basis.eval_at(&a, x, y, (2, 0)) + basis.eval_at(&a, x, y, (0, 2));
            lap_u * basis.eval_at(&b, x, y, (0, 0))
        });
        let rhs = -basis.g.quad_form(&a.coeffs, &b.coeffs);
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn curvature_norm_matches_pointwise_quadrature() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let mut rng = Rng::seed_from(9);
        let a = basis.random_unit_field(&mut rng);
        let direct = basis.quad.integrate(|x, y| {
            let lap = basis.eval_at(&a, x, y, (2, 0)) + basis.eval_at(&a, x, y, (0, 2));
            lap * lap
        });
        let via_k = basis.k.quad_form(&a.coeffs, &a.coeffs);
        assert!((direct - via_k).abs() < 1e-8 * via_k.max(1.0));
    }

    #[test]
    fn evaluate_is_zero_outside_and_for_zero_fields() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        let zero = Field::zeros(4);
        assert_eq!(basis.eval_at(&zero, 0.3, 0.4, (0, 0)), 0.0);
        let mut f = Field::zeros(4);
        f.coeffs[2] = 1.7;
        for deriv in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
            assert_eq!(basis.eval_at(&f, 1.5, 0.5, deriv), 0.0);
            assert_eq!(basis.eval_at(&f, 0.5, -0.1, deriv), 0.0);
        }
    }

    #[test]
    fn single_mode_matches_beam_product() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let k = basis.mode_index(2, 1);
        let mut f = Field::zeros(basis.n());
        f.coeffs[k] = 1.0;
        let (x, y) = (0.37, 0.61);
        let direct = basis.beam_x.modes[2].eval(x, 0) * basis.beam_y.modes[1].eval(y, 0);
        assert!((basis.eval_at(&f, x, y, (0, 0)) - direct).abs() < 1e-10);
        let direct_dxy = basis.beam_x.modes[2].eval(x, 1) * basis.beam_y.modes[1].eval(y, 1);
        assert!((basis.eval_at(&f, x, y, (1, 1)) - direct_dxy).abs() < 1e-10);
    }

    #[test]
    fn clamped_conditions_hold_on_boundary_samples() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let mut rng = Rng::seed_from(3);
        let f = basis.random_unit_field(&mut rng);
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            for (x, y, normal) in [
                (t, 0.0, (0, 1)),
                (t, 1.0, (0, 1)),
                (0.0, t, (1, 0)),
                (1.0, t, (1, 0)),
            ] {
                assert!(basis.eval_at(&f, x, y, (0, 0)).abs() < 1e-9);
                assert!(basis.eval_at(&f, x, y, normal).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn project_zero_gives_zero_and_basis_gives_unit_vector() {
        let basis = build_basis(PlateDomain::unit_square(), 3, 3, 20).unwrap();
        let z = basis.project(|_, _| 0.0).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
        let mut e2 = Field::zeros(basis.n());
        e2.coeffs[2] = 1.0;
        let p = basis
            .project(|x, y| basis.eval_at(&e2, x, y, (0, 0)))
            .unwrap();
        for (k, &c) in p.coeffs.iter().enumerate() {
            let expect = if k == 2 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-8, "slot {k}: {c}");
        }
    }

    #[test]
    fn project_rejects_non_finite_samples() {
        let basis = build_basis(PlateDomain::unit_square(), 2, 2, 16).unwrap();
        assert!(matches!(
            basis.project(|x, _| if x > 0.5 { f64::NAN } else { 0.0 }),
            Err(Error::NonFiniteSample(_))
        ));
    }

    #[test]
    fn project_xy_matches_fine_quadrature_oracle() {
        let basis = build_basis(PlateDomain::unit_square(), 4, 4, 20).unwrap();
        let p = basis.project(|x, y| x * y).unwrap();
        let fine = TensorRule::new(64, 1.0, 1.0);
        for k in 0..basis.n() {
            let mut e = Field::zeros(basis.n());
            e.coeffs[k] = 1.0;
            let oracle = fine.integrate(|x, y| x * y * basis.eval_at(&e, x, y, (0, 0)));
            assert!(
                (p.coeffs[k] - oracle).abs() < 1e-6,
                "slot {k}: {} vs {oracle}",
                p.coeffs[k]
            );
        }
    }

    #[test]
    fn build_is_bit_reproducible() {
        let a = build_basis(PlateDomain::new(1.0, 2.0).unwrap(), 3, 2, 16).unwrap();
        let b = build_basis(PlateDomain::new(1.0, 2.0).unwrap(), 3, 2, 16).unwrap();
        assert_eq!(a.m.data, b.m.data);
        assert_eq!(a.k.data, b.k.data);
        assert_eq!(a.g.data, b.g.data);
        assert_eq!(a.dx.data, b.dx.data);
    }
}
