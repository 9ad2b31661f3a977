//! Dense linear algebra for the modal systems.
//!
//! Everything here is deterministic: fixed-order loops, no pivot ties broken
//! by address, so repeated builds produce identical bits.

use crate::float::F64Ext;
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for j in 0..self.cols {
                s += row[j] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// `self^T x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for j in 0..self.cols {
                y[j] += row[j] * xi;
            }
        }
        y
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for j in 0..other.cols {
                    dst[j] += a * orow[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    /// x^T A y.
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        dot(x, &ay)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for &v in &self.data {
            m = m.max_f(v.abs());
        }
        m
    }

    /// A^T B A for symmetric congruence transforms; B is rows×rows, A is rows×cols.
    pub fn congruence(&self, b: &Mat) -> Mat {
        let ba = b.matmul(self);
        self.transpose().matmul(&ba)
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for i in 0..y.len() {
        y[i] += alpha * x[i];
    }
}

/// Cholesky factorization A = L L^T of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn new(a: &Mat) -> Result<Self> {
        let n = a.rows;
        if a.cols != n {
            return Err(Error::LinAlg(format!(
                "cholesky needs square, got {}x{}",
                a.rows, a.cols
            )));
        }
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::LinAlg(format!(
                            "matrix not positive definite at pivot {i} (value {s:e})"
                        )));
                    }
                    l[(i, j)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// Solve L y = b in place.
    pub fn forward(&self, x: &mut [f64]) {
        let n = self.l.rows;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }

    /// Solve L^T x = y in place.
    pub fn backward(&self, x: &mut [f64]) {
        let n = self.l.rows;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }
}

fn sign_of(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigendecomposition of a real symmetric matrix.
///
/// Householder tridiagonalization followed by implicit-shift QL; eigenpairs
/// returned in ascending eigenvalue order with orthonormal column vectors.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::LinAlg(format!(
            "sym_eigen needs square, got {}x{}",
            a.rows, a.cols
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut z, &mut d, &mut e)?;
    // Sort ascending; insertion sort keeps it deterministic and cheap.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 1..n {
        let mut j = i;
        while j > 0 && d[order[j - 1]] > d[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (newcol, &oldcol) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, newcol)] = z[(r, oldcol)];
        }
    }
    Ok((vals, vecs))
}

/// Householder reduction to tridiagonal form with accumulated transform.
fn tred2(a: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = a.rows;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += a[(i, k)].abs();
            }
            if scale == 0.0 {
                e[i] = a[(i, l)];
            } else {
                for k in 0..=l {
                    let v = a[(i, k)] / scale;
                    a[(i, k)] = v;
                    h += v * v;
                }
                let f = a[(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[(i, l)] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    a[(j, i)] = a[(i, j)] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[(j, k)] * a[(i, k)];
                    }
                    for k in j + 1..=l {
                        g_acc += a[(k, j)] * a[(i, k)];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[(i, j)];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * a[(i, k)];
                        a[(j, k)] -= delta;
                    }
                }
            }
        } else {
            e[i] = a[(i, l)];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[(i, k)] * a[(k, j)];
                }
                for k in 0..i {
                    let delta = g * a[(k, i)];
                    a[(k, j)] -= delta;
                }
            }
        }
        d[i] = a[(i, i)];
        a[(i, i)] = 1.0;
        for j in 0..i {
            a[(j, i)] = 0.0;
            a[(i, j)] = 0.0;
        }
    }
}

/// Implicit-shift QL on the tridiagonal (d, e), rotating columns of `z`.
fn tql2(z: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::LinAlg(format!("QL failed to converge at index {l}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + sign_of(r, g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Solution of the pencil A x = λ B x with A symmetric and B SPD.
///
/// Reduced to a standard symmetric problem through the Cholesky factor of B;
/// returned vectors are B-orthonormal, eigenvalues ascending.
pub fn generalized_sym_eigen(a: &Mat, b: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows;
    let chol = Cholesky::new(b)?;
    // C = L^{-1} A L^{-T}, built column by column.
    let mut c = Mat::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|i| a[(i, j)]).collect();
        chol.forward(&mut col);
        for i in 0..n {
            c[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        let mut row: Vec<f64> = c.row(i).to_vec();
        chol.forward(&mut row);
        c.data[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    // Symmetrize to scrub rounding asymmetry before the eigensolve.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let (vals, y) = sym_eigen(&c)?;
    let mut x = Mat::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
        chol.backward(&mut col);
        for i in 0..n {
            x[(i, j)] = col[i];
        }
    }
    Ok((vals, x))
}

/// Orthonormal basis of the null space of `l` (acting on coefficient vectors),
/// together with the numerical rank.
///
/// Column-pivoted Householder QR of `l^T`; the trailing Q columns span the
/// orthogonal complement of the row space.
pub fn null_space(l: &Mat) -> (usize, Mat) {
    let m = l.rows; // functional count
    let n = l.cols; // coefficient dimension
    if m == 0 {
        return (0, Mat::identity(n));
    }
    let mut a = l.transpose(); // n×m
    let kmax = n.min(m);
    let mut betas = vec![0.0; kmax];
    let mut rdiag = vec![0.0; kmax];
    let mut colnorm = vec![0.0; m];
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            s += a[(i, j)] * a[(i, j)];
        }
        colnorm[j] = s;
    }
    let mut steps = 0;
    for k in 0..kmax {
        // Pivot: remaining column with the largest norm (first on ties).
        let mut piv = k;
        let mut best = colnorm[k];
        for j in k + 1..m {
            if colnorm[j] > best {
                best = colnorm[j];
                piv = j;
            }
        }
        if piv != k {
            for i in 0..n {
                let tmp = a[(i, k)];
                a[(i, k)] = a[(i, piv)];
                a[(i, piv)] = tmp;
            }
            colnorm.swap(k, piv);
        }
        // Householder vector for column k, rows k..n.
        let mut alpha = 0.0;
        for i in k..n {
            alpha += a[(i, k)] * a[(i, k)];
        }
        let alpha = alpha.sqrt();
        if alpha == 0.0 {
            betas[k] = 0.0;
            rdiag[k] = 0.0;
            steps = k + 1;
            continue;
        }
        let a_kk = a[(k, k)];
        let alpha = if a_kk > 0.0 { -alpha } else { alpha };
        rdiag[k] = alpha;
        // v = x - alpha e1, stored in place with v[k] implicit.
        let v0 = a_kk - alpha;
        for i in k + 1..n {
            a[(i, k)] /= v0;
        }
        betas[k] = -v0 / alpha;
        a[(k, k)] = alpha;
        // Apply H = I - beta v v^T to the remaining columns.
        for j in k + 1..m {
            let mut s = a[(k, j)];
            for i in k + 1..n {
                s += a[(i, k)] * a[(i, j)];
            }
            s *= betas[k];
            a[(k, j)] -= s;
            for i in k + 1..n {
                let d = s * a[(i, k)];
                a[(i, j)] -= d;
            }
            colnorm[j] -= a[(k, j)] * a[(k, j)];
            if colnorm[j] < 0.0 {
                colnorm[j] = 0.0;
            }
        }
        steps = k + 1;
    }
    // Numerical rank from the pivoted R diagonal.
    let rmax = rdiag.iter().fold(0.0f64, |acc, &v| acc.max_f(v.abs()));
    let tol = rmax * (n.max(m) as f64) * f64::EPSILON;
    let mut rank = 0;
    for k in 0..steps {
        if rdiag[k].abs() > tol {
            rank += 1;
        } else {
            break;
        }
    }
    // Accumulate Q explicitly and slice off the trailing columns.
    let mut q = Mat::identity(n);
    for k in (0..steps).rev() {
        if betas[k] == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut s = q[(k, j)];
            for i in k + 1..n {
                s += a[(i, k)] * q[(i, j)];
            }
            s *= betas[k];
            q[(k, j)] -= s;
            for i in k + 1..n {
                let d = s * a[(i, k)];
                q[(i, j)] -= d;
            }
        }
    }
    let null_dim = n - rank;
    let mut z = Mat::zeros(n, null_dim);
    for j in 0..null_dim {
        for i in 0..n {
            z[(i, j)] = q[(i, rank + j)];
        }
    }
    (rank, z)
}
