//! Matrix-valued samples on a periodic lattice with multilinear
//! interpolation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::TorusPoint;

/// Samples at the nodes `i/n` of `T^d`, in row-major index order.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorGrid {
    pub dim: usize,
    pub resolution: usize,
    pub rows: usize,
    pub cols: usize,
    pub interpolation: &'static str,
    pub values: Vec<DMatrix<f64>>,
}

impl OperatorGrid {
    /// Node coordinates for a flat index.
    pub fn node(dim: usize, n: usize, mut idx: usize) -> TorusPoint {
        let mut c = vec![0.0; dim];
        for k in (0..dim).rev() {
            c[k] = (idx % n) as f64 / n as f64;
            idx /= n;
        }
        TorusPoint::wrap(&c).expect("node coordinates are finite")
    }

    /// Evaluates `f` at every node in parallel.
    pub fn sample<F>(dim: usize, n: usize, f: F) -> Result<Self>
    where
        F: Fn(&TorusPoint) -> Result<DMatrix<f64>> + Sync,
    {
        if n == 0 || dim == 0 {
            return Err(Error::precondition("grid needs positive dimension and resolution"));
        }
        let values = (0..n.pow(dim as u32))
            .into_par_iter()
            .map(|i| f(&Self::node(dim, n, i)))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = values[0].shape();
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite {
                index: i,
                value: v.iter().copied().find(|x| !x.is_finite()).unwrap_or(f64::NAN),
            });
        }
        if values.iter().any(|v| v.shape() != (rows, cols)) {
            return Err(Error::precondition("grid samples have inconsistent shapes"));
        }
        Ok(Self {
            dim,
            resolution: n,
            rows,
            cols,
            interpolation: "multilinear",
            values,
        })
    }

    /// Periodic multilinear interpolation.
    pub fn interpolate(&self, p: &TorusPoint) -> Result<DMatrix<f64>> {
        if p.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: p.dim(),
            });
        }
        let n = self.resolution;
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &x in p.coords() {
            let s = x * n as f64;
            let i = s.floor();
            base.push(i as usize % n);
            frac.push(s - i);
        }
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..self.dim {
                let bit = (corner >> (self.dim - 1 - k)) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * n + (base[k] + bit) % n;
            }
            if w != 0.0 {
                out += &self.values[idx] * w;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_at_nodes() {
        let g = OperatorGrid::sample(2, 4, |p| Ok(DMatrix::from_element(1, 2, p.coords()[0] + 3.0 * p.coords()[1]))).unwrap();
        for i in 0..16 {
            let node = OperatorGrid::node(2, 4, i);
            assert_eq!(g.interpolate(&node).unwrap(), g.values[i]);
        }
    }

    #[test]
    fn midpoint_average() {
        let g = OperatorGrid::sample(1, 4, |p| Ok(DMatrix::from_element(1, 1, p.coords()[0]))).unwrap();
        let mid = g.interpolate(&TorusPoint::wrap(&[0.375]).unwrap()).unwrap();
        assert!((mid[(0, 0)] - 0.375).abs() < 1e-15);
        // wraps between the last node and the first
        let wrap = g.interpolate(&TorusPoint::wrap(&[0.875]).unwrap()).unwrap();
        assert!((wrap[(0, 0)] - 0.375).abs() < 1e-15);
    }
}
