//! Gauss-Legendre quadrature, 1-D rules and the tensor rule on a rectangle.

// Under cfg(test) std's inherent float methods shadow this shim.
#[cfg_attr(test, allow(unused_imports))]
use crate::float::F64Ext;
use alloc::vec;
use alloc::vec::Vec;

/// Nodes and weights on a general interval [a, b].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// n-point Gauss-Legendre rule on [a, b].
    ///
    /// Newton iteration on the Legendre polynomial from the Chebyshev-like
    /// initial guess; converges to machine precision in a handful of steps.
    pub fn legendre(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1, "quadrature order must be at least 1");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Initial guess for the i-th root of P_n on [-1, 1].
            let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                // Legendre recurrence for P_n(x) and derivative.
                let mut p0 = 1.0;
                let mut p1 = 0.0;
                for j in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2.0 * j as f64 + 1.0) * x * p1 - j as f64 * p2) / (j as f64 + 1.0);
                }
                pp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
                let dx = p0 / pp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * pp * pp);
            // Map from [-1,1] to [a,b]; symmetric partner filled in the same pass.
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            nodes[i] = mid - half * x;
            nodes[n - 1 - i] = mid + half * x;
            weights[i] = half * w;
            weights[n - 1 - i] = half * w;
        }
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(self.weights.iter()) {
            s += w * f(*x);
        }
        s
    }
}

/// Tensor Gauss-Legendre rule on [0,Lx]×[0,Ly].
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRule {
    pub x: GaussRule,
    pub y: GaussRule,
}

impl TensorRule {
    pub fn new(order: usize, lx: f64, ly: f64) -> Self {
        TensorRule {
            x: GaussRule::legendre(order, 0.0, lx),
            y: GaussRule::legendre(order, 0.0, ly),
        }
    }

    pub fn integrate<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (xi, wx) in self.x.nodes.iter().zip(self.x.weights.iter()) {
            let mut row = 0.0;
            for (yj, wy) in self.y.nodes.iter().zip(self.y.weights.iter()) {
                row += wy * f(*xi, *yj);
            }
            s += wx * row;
        }
        s
    }
}

/// Trapezoid rule on the periodic interval [0, 2π); spectrally accurate for
/// smooth periodic integrands.
pub fn periodic_trapezoid(n: usize) -> GaussRule {
    let h = core::f64::consts::TAU / n as f64;
    let nodes = (0..n).map(|i| i as f64 * h).collect();
    let weights = vec![h; n];
    GaussRule { nodes, weights }
}

/// Composite trapezoid weights for a uniform grid of n+1 points with step h.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 1);
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}
