//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal threshold below which a QR factor is treated as rank deficient.
pub const RANK_EPS: f64 = 1e-14;

/// Thin QR with the positive-diagonal convention, returning the orthonormal
/// factor. Fails when a diagonal entry of R falls below `rank_eps`.
pub fn orthonormalize(m: &DMatrix<f64>, rank_eps: f64) -> Result<DMatrix<f64>> {
    let k = m.ncols();
    if k == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    if k > m.nrows() {
        return Err(Error::degenerate("basis wider than ambient space", k as f64));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..k {
        let rii = r[(i, i)];
        if rii.abs() < rank_eps || !rii.is_finite() {
            return Err(Error::degenerate("QR diagonal (rank collapse)", rii.abs()));
        }
        if rii < 0.0 {
            let mut col = q.column_mut(i);
            col.neg_mut();
        }
    }
    Ok(q)
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn orient_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            // ties resolved toward the lower index
            if x.abs() > best + 1e-12 {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            let mut col = m.column_mut(j);
            col.neg_mut();
        }
    }
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Euclidean operator norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Conorm `inf |Tx|/|x|` of a map whose domain has dimension `m.ncols()`.
pub fn conorm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return 1.0;
    }
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Inverse of a square matrix, reporting singularity as a degeneracy.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::degenerate("singular matrix", 0.0))
}

/// Solves `a x = b` for a square `a`.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::degenerate("singular system", 0.0))
}

/// Orthogonal projector `B Bᵀ` onto the span of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Spectral condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Horizontal concatenation of column blocks with a common row count.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Sine of the smallest principal angle between two subspaces given by
/// orthonormal bases.
pub fn min_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 1.0;
    }
    let residual = b - a * (a.transpose() * b);
    let s = singular_values(&residual);
    s.last().copied().unwrap_or(1.0).min(1.0)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// A `d × d × d` array holding second derivatives, index order
/// `(output, input_a, input_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, out: usize, a: usize, b: usize) -> f64 {
        self.data[(out * self.dim + a) * self.dim + b]
    }

    #[inline]
    pub fn set(&mut self, out: usize, a: usize, b: usize, value: f64) {
        self.data[(out * self.dim + a) * self.dim + b] = value;
    }

    /// Sets `(out, a, b)` and its mirror `(out, b, a)`.
    pub fn set_sym(&mut self, out: usize, a: usize, b: usize, value: f64) {
        self.set(out, a, b, value);
        self.set(out, b, a, value);
    }

    /// Matrix `M[out][j] = Σ_i T[out][i][j] v_i`, the derivative of the
    /// Jacobian in direction `v`.
    pub fn contract(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |o, j| (0..d).map(|i| self.get(o, i, j) * v[i]).sum())
    }

    /// Vector `Σ T[out][i][j] a_i b_j`.
    pub fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        DVector::from_fn(d, |o, _| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += self.get(o, i, j) * a[i] * b[j];
                }
            }
            s
        })
    }

    /// Largest `|T[o][i][j] - T[o][j][i]|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for o in 0..d {
            for i in 0..d {
                for j in 0..i {
                    worst = worst.max((self.get(o, i, j) - self.get(o, j, i)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Returns `S` with `S(a, b) = Σ L[o][p] T[p][i][j] R1[i][a] R2[j][b]`, i.e.
    /// the tensor expressed in new input and output frames.
    pub fn conjugate(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Tensor3 {
        let d = self.dim;
        let mut out = Tensor3::zeros(d);
        for o in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let mut s = 0.0;
                    for p in 0..d {
                        let l = left[(o, p)];
                        if l == 0.0 {
                            continue;
                        }
                        for i in 0..d {
                            let ri = right[(i, a)];
                            if ri == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                s += l * self.get(p, i, j) * ri * right[(j, b)];
                            }
                        }
                    }
                    out.set(o, a, b, s);
                }
            }
        }
        out
    }
}
