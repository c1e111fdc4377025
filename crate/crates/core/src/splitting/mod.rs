//! Invariant planes and splittings by QR push-forward on the Grassmannian.
//!
//! Unstable-type planes (`u`, `cu`) are obtained by pushing a seed forward
//! from `f^{-N}p`; stable-type planes (`s`, `cs`) by pushing a seed through
//! the inverse from `f^{N}p`. The center is the intersection of `cu` and
//! `cs`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Diffeo};
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::TorusPoint;

pub mod bunching;

pub use bunching::{bunching_report, grid_points, BunchingCondition, BunchingPoint, BunchingReport};

/// Default orbit truncation.
pub const DEFAULT_N: usize = 60;
/// Largest orbit truncation accepted.
pub const N_CAP: usize = 200;
/// Principal-angle sine below which two directions are considered equal
/// when intersecting planes.
pub const INTERSECTION_EPS: f64 = 1e-6;

/// One of the three bundles of a partially hyperbolic splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bundle {
    U,
    C,
    S,
}

/// Declared dimensions `(u, c, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub u: usize,
    pub c: usize,
    pub s: usize,
}

impl Dims {
    pub fn new(u: usize, c: usize, s: usize) -> Self {
        Self { u, c, s }
    }

    pub fn total(&self) -> usize {
        self.u + self.c + self.s
    }

    /// `(1,0,1)` on `T²`, `(1,1,1)` on `T³`.
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => Self::new(1, 0, 1),
            _ => Self::new(1, dim.saturating_sub(2), 1),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.total() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.total(),
            });
        }
        if self.u == 0 || self.s == 0 {
            return Err(Error::precondition("u and s must be at least 1"));
        }
        Ok(())
    }
}

/// Which end of the orbit a plane is pushed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Push forward from `f^{-N}p` (unstable-type bundles).
    Forward,
    /// Push through the inverse from `f^{N}p` (stable-type bundles).
    Backward,
}

/// A `k`-plane at a point, stored as an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub point: TorusPoint,
    pub basis: DMatrix<f64>,
}

impl Plane {
    /// Orthonormalizes `basis` (positive-diagonal QR, oriented columns).
    pub fn new(point: TorusPoint, basis: &DMatrix<f64>) -> Result<Self> {
        let d = point.dim();
        if basis.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: basis.nrows(),
            });
        }
        let k = basis.ncols();
        if k == 0 || k >= d {
            return Err(Error::precondition(format!(
                "plane dimension {k} must satisfy 1 <= k < {d}"
            )));
        }
        Self::from_basis(point, basis)
    }

    fn from_basis(point: TorusPoint, basis: &DMatrix<f64>) -> Result<Self> {
        let mut q = linalg::orthonormalize(basis, linalg::RANK_EPS)?;
        linalg::orient_columns(&mut q);
        Ok(Self { point, basis: q })
    }

    /// Zero-dimensional plane, the center of an Anosov splitting.
    pub fn trivial(point: TorusPoint) -> Self {
        let d = point.dim();
        Self {
            point,
            basis: DMatrix::zeros(d, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        linalg::projector(&self.basis)
    }
}

/// `‖P_a − P_b‖₂`, the sine of the largest principal angle.
pub fn plane_distance(a: &Plane, b: &Plane) -> Result<f64> {
    if a.ambient() != b.ambient() {
        return Err(Error::DimensionMismatch {
            expected: a.ambient(),
            found: b.ambient(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(subspace_distance(&a.basis, &b.basis))
}

/// Projector distance between spans of orthonormal bases. `MᵀM` is
/// bit-identical for `M` and `−M`, so the result is exactly symmetric.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    let m = linalg::projector(a) - linalg::projector(b);
    let sq = m.transpose() * &m;
    let eig = SymmetricEigen::new(sq);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |acc, &x| acc.max(x));
    top.max(0.0).sqrt().min(1.0)
}

/// Image of a plane under `Tf^{steps}`, re-orthonormalized after each step.
pub fn push_plane(map: &dyn Diffeo, plane: &Plane, steps: usize) -> Result<Plane> {
    if steps == 0 {
        return Err(Error::precondition("push_plane needs steps >= 1"));
    }
    let mut point = plane.point.clone();
    let mut basis = plane.basis.clone();
    for _ in 0..steps {
        let jac = dynamics::jacobian_at(map, &point);
        basis = linalg::orthonormalize(&(jac * basis), linalg::RANK_EPS)?;
        point = dynamics::eval(map, &point);
    }
    Plane::from_basis(point, &basis)
}

/// One-step invariance residual `dist(Tf(E_p), E_{fp})`.
pub fn invariance_residual(map: &dyn Diffeo, at_p: &Plane, at_fp: &Plane) -> Result<f64> {
    let pushed = push_plane(map, at_p, 1)?;
    plane_distance(&pushed, at_fp)
}

/// Deterministic generic seed of `k` columns in `R^d`. Transverse to any
/// fixed subspace of complementary dimension for all shipped maps.
pub fn default_seed(d: usize, k: usize) -> DMatrix<f64> {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let raw = DMatrix::from_fn(d, k, |i, j| {
        let x = (i as f64 + 1.0) * (j as f64 + 1.3) * phi + 0.37 * j as f64;
        (2.0 * std::f64::consts::PI * x).sin() + if i == j { 0.5 } else { 0.0 }
    });
    linalg::orthonormalize(&raw, 1e-8).expect("seed matrix has full rank")
}

/// Alternative seed used for seed-independence checks.
pub fn alternate_seed(d: usize, k: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, k, |i, j| {
        let x = 0.713 * (i as f64 + 2.0) + 1.91 * (j as f64) * (i as f64 + 0.5);
        x.cos() + if (i + j) % d == 0 { 0.8 } else { 0.0 }
    });
    linalg::orthonormalize(&raw, 1e-8).expect("seed matrix has full rank")
}

/// An invariant-plane estimate with its Cauchy monitor: distances between
/// the results for truncations `N` vs `N−1` and `N−1` vs `N−2`.
#[derive(Debug, Clone)]
pub struct PlaneEstimate {
    pub plane: Plane,
    pub cauchy_last: f64,
    pub cauchy_prev: f64,
}

impl PlaneEstimate {
    /// False when the last-step motion exceeds the one before it, i.e.
    /// domination is violated numerically.
    pub fn contracting(&self) -> bool {
        self.cauchy_last <= self.cauchy_prev || self.cauchy_last < 1e-13
    }
}

/// Orbit with cached Jacobians, indexed from `-back` to `fwd`.
struct OrbitData {
    back: usize,
    points: Vec<TorusPoint>,
    jacobians: Vec<DMatrix<f64>>,
}

impl OrbitData {
    fn build(map: &dyn Diffeo, p: &TorusPoint, back: usize, fwd: usize) -> Result<Self> {
        let mut points = dynamics::orbit_uncapped(map, p, -(back as i64))?;
        points.reverse();
        let forward = dynamics::orbit_uncapped(map, p, fwd as i64)?;
        points.extend(forward.into_iter().skip(1));
        let jacobians = points
            .iter()
            .map(|q| dynamics::jacobian_at(map, q))
            .collect();
        Ok(Self {
            back,
            points,
            jacobians,
        })
    }

    fn len(&self) -> usize {
        self.points.len()
    }

    fn pos(&self, k: i64) -> usize {
        (k + self.back as i64) as usize
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > N_CAP {
        return Err(Error::precondition(format!("orbit truncation N = {n} outside [1, {N_CAP}]")));
    }
    Ok(())
}

/// Invariant `k`-plane at `p` from the chosen orbit end with `n` steps.
pub fn invariant_plane(
    map: &dyn Diffeo,
    p: &TorusPoint,
    k: usize,
    direction: Direction,
    n: usize,
    seed: Option<&DMatrix<f64>>,
) -> Result<PlaneEstimate> {
    check_n(n)?;
    let d = map.dim();
    if k == 0 || k >= d {
        return Err(Error::precondition(format!("plane dimension {k} must satisfy 1 <= k < {d}")));
    }
    let seed = match seed {
        Some(s) if s.shape() == (d, k) => s.clone(),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: d * k,
                found: s.nrows() * s.ncols(),
            })
        }
        None => default_seed(d, k),
    };
    let (back, fwd) = match direction {
        Direction::Forward => (n, 0),
        Direction::Backward => (0, n),
    };
    let orbit = OrbitData::build(map, p, back, fwd)?;
    // three truncations sharing one orbit: N, N-1, N-2
    let starts: Vec<usize> = (0..3).map(|j| n.saturating_sub(j).max(1)).collect();
    let mut results = Vec::with_capacity(3);
    for &len in &starts {
        let basis = match direction {
            Direction::Forward => {
                let mut b = seed.clone();
                for step in (1..=len).rev() {
                    let idx = orbit.pos(-(step as i64));
                    b = linalg::orthonormalize(&(&orbit.jacobians[idx] * b), linalg::RANK_EPS)?;
                }
                b
            }
            Direction::Backward => {
                let mut b = seed.clone();
                for step in (1..=len).rev() {
                    // from f^{step} p to f^{step-1} p
                    let idx = orbit.pos(step as i64 - 1);
                    b = linalg::orthonormalize(&linalg::solve(&orbit.jacobians[idx], &b)?, linalg::RANK_EPS)?;
                }
                b
            }
        };
        results.push(basis);
    }
    let plane = Plane::from_basis(p.clone(), &results[0])?;
    Ok(PlaneEstimate {
        plane,
        cauchy_last: subspace_distance(&results[0], &results[1]),
        cauchy_prev: subspace_distance(&results[1], &results[2]),
    })
}

/// Strong-unstable `u`-plane at `p`.
pub fn unstable_plane(map: &dyn Diffeo, p: &TorusPoint, u: usize, n: usize) -> Result<PlaneEstimate> {
    invariant_plane(map, p, u, Direction::Forward, n, None)
}

/// Strong-stable `s`-plane at `p`.
pub fn stable_plane(map: &dyn Diffeo, p: &TorusPoint, s: usize, n: usize) -> Result<PlaneEstimate> {
    invariant_plane(map, p, s, Direction::Backward, n, None)
}

pub fn cu_plane(map: &dyn Diffeo, p: &TorusPoint, dims: Dims, n: usize) -> Result<PlaneEstimate> {
    invariant_plane(map, p, dims.u + dims.c, Direction::Forward, n, None)
}

pub fn cs_plane(map: &dyn Diffeo, p: &TorusPoint, dims: Dims, n: usize) -> Result<PlaneEstimate> {
    invariant_plane(map, p, dims.c + dims.s, Direction::Backward, n, None)
}

/// Intersection of two subspaces of expected dimension `c`, by principal
/// vectors of `AᵀB`.
pub fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>, c: usize) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if c == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    let svd = (a.transpose() * b).svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sine = |i: usize| (1.0 - svd.singular_values[i].min(1.0).powi(2)).max(0.0).sqrt();
    let found = order.iter().filter(|&&i| sine(i) < INTERSECTION_EPS).count();
    if found != c {
        let worst = order.get(c.saturating_sub(1)).map(|&i| sine(i)).unwrap_or(1.0);
        return Err(Error::degenerate(
            format!("center intersection: {found} directions below threshold, expected {c}; largest kept sine"),
            worst,
        ));
    }
    let mut cols = DMatrix::zeros(d, c);
    for (slot, &i) in order.iter().take(c).enumerate() {
        let from_a = a * u.column(i);
        let from_b = b * vt.row(i).transpose();
        cols.set_column(slot, &((from_a + from_b) * 0.5));
    }
    let mut q = linalg::orthonormalize(&cols, 1e-10)?;
    linalg::orient_columns(&mut q);
    Ok(q)
}

/// Center plane at `p` as `E^{cu} ∩ E^{cs}`.
pub fn center_plane(map: &dyn Diffeo, p: &TorusPoint, dims: Dims, n: usize) -> Result<Plane> {
    dims.validate(map.dim())?;
    if dims.c == 0 {
        return Err(Error::precondition("center_plane needs c >= 1"));
    }
    let cu = cu_plane(map, p, dims, n)?;
    let cs = cs_plane(map, p, dims, n)?;
    let basis = intersect(&cu.plane.basis, &cs.plane.basis, dims.c)?;
    Ok(Plane {
        point: p.clone(),
        basis,
    })
}

/// The triple `(E^u, E^c, E^s)` at a point.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub point: TorusPoint,
    pub dims: Dims,
    pub eu: Plane,
    pub ec: Plane,
    pub es: Plane,
    /// Condition number of `[B_u | B_c | B_s]`.
    pub condition: f64,
    pub ecu: Plane,
    pub ecs: Plane,
}

impl Splitting {
    fn assemble(point: TorusPoint, dims: Dims, eu: Plane, es: Plane, ecu: Plane, ecs: Plane) -> Result<Self> {
        let ec = if dims.c == 0 {
            Plane::trivial(point.clone())
        } else {
            Plane {
                point: point.clone(),
                basis: intersect(&ecu.basis, &ecs.basis, dims.c)?,
            }
        };
        let full = linalg::hcat(&[&eu.basis, &ec.basis, &es.basis]);
        let condition = linalg::condition_number(&full);
        if !condition.is_finite() || condition > 1e12 {
            return Err(Error::degenerate("splitting condition number", condition));
        }
        Ok(Self {
            point,
            dims,
            eu,
            ec,
            es,
            condition,
            ecu,
            ecs,
        })
    }

    pub fn plane(&self, b: Bundle) -> &Plane {
        match b {
            Bundle::U => &self.eu,
            Bundle::C => &self.ec,
            Bundle::S => &self.es,
        }
    }

    /// `[B_u | B_c | B_s]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        linalg::hcat(&[&self.eu.basis, &self.ec.basis, &self.es.basis])
    }

    /// Oblique decomposition `v = v_u + v_c + v_s`.
    pub fn decompose(&self, v: &nalgebra::DVector<f64>) -> Result<[nalgebra::DVector<f64>; 3]> {
        let m = self.matrix();
        let coef = linalg::solve(&m, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        let (u, c) = (self.dims.u, self.dims.c);
        let part = |start: usize, len: usize, basis: &DMatrix<f64>| -> nalgebra::DVector<f64> {
            if len == 0 {
                return nalgebra::DVector::zeros(v.len());
            }
            basis * coef.view((start, 0), (len, 1)).column(0)
        };
        Ok([
            part(0, u, &self.eu.basis),
            part(u, c, &self.ec.basis),
            part(u + c, self.dims.s, &self.es.basis),
        ])
    }

    /// Orthonormal basis of `E^c ⊕ E^s` (the `cs` block of a chart).
    pub fn cs_block(&self) -> Result<DMatrix<f64>> {
        linalg::orthonormalize(&linalg::hcat(&[&self.ec.basis, &self.es.basis]), linalg::RANK_EPS)
    }
}

/// Full splitting at `p` with truncation `n`.
pub fn compute_splitting(map: &dyn Diffeo, p: &TorusPoint, dims: Dims, n: usize) -> Result<Splitting> {
    let mut all = orbit_splittings(map, p, dims, n, 0, 0)?;
    Ok(all.remove(0))
}

/// Splittings along the orbit segment `f^{-back}p, …, f^{fwd}p`, each with
/// at least `n` steps of history, computed by one forward and one backward
/// sweep over the extended orbit.
pub fn orbit_splittings(
    map: &dyn Diffeo,
    p: &TorusPoint,
    dims: Dims,
    n: usize,
    back: usize,
    fwd: usize,
) -> Result<Vec<Splitting>> {
    check_n(n)?;
    dims.validate(map.dim())?;
    let d = map.dim();
    let orbit = OrbitData::build(map, p, back + n, fwd + n)?;
    let total = orbit.len();
    let first = n; // position of f^{-back} p
    let last = total - 1 - n; // position of f^{fwd} p

    let forward_sweep = |k: usize| -> Result<Vec<DMatrix<f64>>> {
        let mut b = default_seed(d, k);
        let mut out = Vec::with_capacity(last - first + 1);
        for pos in 0..=last {
            if pos >= first {
                out.push(b.clone());
            }
            if pos < last {
                b = linalg::orthonormalize(&(&orbit.jacobians[pos] * b), linalg::RANK_EPS)?;
            }
        }
        Ok(out)
    };
    let backward_sweep = |k: usize| -> Result<Vec<DMatrix<f64>>> {
        let mut b = default_seed(d, k);
        let mut out = Vec::with_capacity(last - first + 1);
        for pos in (first..total).rev() {
            if pos <= last {
                out.push(b.clone());
            }
            if pos > first {
                b = linalg::orthonormalize(&linalg::solve(&orbit.jacobians[pos - 1], &b)?, linalg::RANK_EPS)?;
            }
        }
        out.reverse();
        Ok(out)
    };

    let us = forward_sweep(dims.u)?;
    let ss = backward_sweep(dims.s)?;
    let (cus, css) = if dims.c > 0 {
        (forward_sweep(dims.u + dims.c)?, backward_sweep(dims.c + dims.s)?)
    } else {
        (us.clone(), ss.clone())
    };
    let mut out = Vec::with_capacity(us.len());
    for i in 0..us.len() {
        let point = orbit.points[first + i].clone();
        let eu = Plane::from_basis(point.clone(), &us[i])?;
        let es = Plane::from_basis(point.clone(), &ss[i])?;
        let ecu = Plane::from_basis(point.clone(), &cus[i])?;
        let ecs = Plane::from_basis(point.clone(), &css[i])?;
        out.push(Splitting::assemble(point, dims, eu, es, ecu, ecs)?);
    }
    Ok(out)
}
