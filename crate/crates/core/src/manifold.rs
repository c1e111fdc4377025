//! Flat torus geometry: points, minimal displacements, adapted frames and
//! affine charts.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::splitting::{Bundle, Splitting};

/// Minimum angle (radians) between chart blocks before a splitting is
/// treated as degenerate.
pub const CHART_MIN_ANGLE: f64 = 1e-8;

/// A point of `T^d`, every coordinate in `[0, 1)`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl fmt::Debug for TorusPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TorusPoint{:?}", self.coords)
    }
}

impl TorusPoint {
    /// Reduces raw coordinates modulo 1.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut coords = Vec::with_capacity(raw.len());
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            coords.push(wrap_unit(value));
        }
        Ok(Self { coords })
    }

    pub fn wrap_vector(raw: &DVector<f64>) -> Result<Self> {
        Self::wrap(raw.as_slice())
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    /// `wrap(self + v)`.
    pub fn translate(&self, v: &DVector<f64>) -> Result<Self> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let raw: Vec<f64> = self.coords.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        Self::wrap(&raw)
    }

    /// Representative of `other - self` with components in `[-1/2, 1/2)`.
    pub fn displacement_to(&self, other: &TorusPoint) -> Result<DVector<f64>> {
        displacement(self, other)
    }

    /// Euclidean length of the minimal displacement.
    pub fn distance(&self, other: &TorusPoint) -> Result<f64> {
        Ok(displacement(self, other)?.norm())
    }
}

fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Free-function form of [`TorusPoint::wrap`].
pub fn wrap(raw: &[f64]) -> Result<TorusPoint> {
    TorusPoint::wrap(raw)
}

/// Minimal representative of `q - p`, each component in `[-1/2, 1/2)`.
pub fn displacement(p: &TorusPoint, q: &TorusPoint) -> Result<DVector<f64>> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(DVector::from_iterator(
        p.dim(),
        p.coords
            .iter()
            .zip(&q.coords)
            .map(|(a, b)| minimal_rep(b - a)),
    ))
}

/// Representative of `x` modulo 1 in `[-1/2, 1/2)`.
pub fn minimal_rep(x: f64) -> f64 {
    let r = x - (x + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// Adapted frame at a point: orthonormal column blocks whose concatenation
/// is an invertible `d × d` matrix.
#[derive(Debug, Clone)]
pub struct Frame {
    pub point: TorusPoint,
    pub blocks: Vec<DMatrix<f64>>,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    condition: f64,
}

impl Frame {
    pub fn new(point: TorusPoint, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = point.dim();
        let total: usize = blocks.iter().map(|b| b.ncols()).sum();
        if total != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: total,
            });
        }
        if let Some(b) = blocks.iter().find(|b| b.nrows() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: b.nrows(),
            });
        }
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        let matrix = linalg::hcat(&refs);
        let inverse = linalg::inverse(&matrix)?;
        let condition = linalg::condition_number(&matrix);
        Ok(Self {
            point,
            blocks,
            matrix,
            inverse,
            condition,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    /// Largest within-block deviation of `FᵀF` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let k = b.ncols();
                linalg::max_abs(&(b.transpose() * b - DMatrix::identity(k, k)))
            })
            .fold(0.0, f64::max)
    }
}

/// Affine chart `x ↦ wrap(base + F x)`.
#[derive(Debug, Clone)]
pub struct Chart {
    pub base: TorusPoint,
    pub frame: Frame,
}

impl Chart {
    pub fn eval(&self, x: &DVector<f64>) -> Result<TorusPoint> {
        let step = self.frame.matrix() * x;
        self.base.translate(&step)
    }

    /// Chart coordinates of a tangent vector at any point of the chart.
    pub fn coords_of(&self, v: &DVector<f64>) -> DVector<f64> {
        self.frame.inverse() * v
    }
}

/// Builds the affine chart at `p` whose frame blocks are orthonormal bases of
/// the grouped splitting planes, e.g. `[[U], [C, S]]`.
pub fn build_chart(p: &TorusPoint, splitting: &Splitting, grouping: &[&[Bundle]]) -> Result<Chart> {
    if splitting.point.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: splitting.point.dim(),
        });
    }
    if grouping.len() < 2 || grouping.len() > 3 {
        return Err(Error::precondition("grouping must have two or three blocks"));
    }
    let mut seen = Vec::new();
    for group in grouping {
        for b in *group {
            if seen.contains(b) {
                return Err(Error::precondition(format!("bundle {b:?} grouped twice")));
            }
            seen.push(*b);
        }
    }
    if seen.len() != 3 {
        return Err(Error::precondition("grouping must cover u, c and s"));
    }
    let mut blocks = Vec::with_capacity(grouping.len());
    for group in grouping {
        let parts: Vec<&DMatrix<f64>> = group.iter().map(|b| &splitting.plane(*b).basis).collect();
        let joined = linalg::hcat(&parts);
        blocks.push(linalg::orthonormalize(&joined, linalg::RANK_EPS)?);
    }
    for i in 0..blocks.len() {
        if blocks[i].ncols() == 0 {
            continue;
        }
        let others: Vec<&DMatrix<f64>> = blocks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| b)
            .collect();
        let other = linalg::orthonormalize(&linalg::hcat(&others), linalg::RANK_EPS)
            .map_err(|_| Error::degenerate("splitting blocks (angle, radians)", 0.0))?;
        let angle = linalg::min_angle_sine(&other, &blocks[i]).asin();
        if angle < CHART_MIN_ANGLE {
            return Err(Error::degenerate("splitting blocks (angle, radians)", angle));
        }
    }
    let frame = Frame::new(p.clone(), blocks)?;
    Ok(Chart {
        base: p.clone(),
        frame,
    })
}
