//! C² toral diffeomorphisms with analytic derivative data, Newton-based
//! inversion, one-parameter families and the shipped map zoo.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Tensor3};
use crate::manifold::{self, TorusPoint};

pub mod check;
pub mod zoo;

pub use zoo::{map_zoo, SineField, ZooItem, ZooParams};

/// Maximum `|n|` accepted by [`orbit`].
pub const ORBIT_CAP: usize = 200;
/// Default residual tolerance for inversion.
pub const INVERT_TOL: f64 = 1e-13;
const NEWTON_MAX_ITERS: usize = 50;

/// A C² diffeomorphism of `T^d` given through a lift to `R^d`.
pub trait Diffeo: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// The map on the universal cover. Must commute with integer
    /// translations modulo the lattice.
    fn lift(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Second derivatives, index order (output, input, input).
    fn hessian(&self, x: &DVector<f64>) -> Tensor3;

    /// Linear part of the lift, used to seed Newton inversion.
    fn linear_part(&self) -> DMatrix<f64>;

    /// Closed-form inverse when one is known.
    fn exact_inverse(&self, _q: &TorusPoint) -> Option<TorusPoint> {
        None
    }

    /// True when the lift is affine, so every invariant bundle is constant
    /// and in particular analytic.
    fn is_affine(&self) -> bool {
        false
    }
}

pub type MapSpec = Arc<dyn Diffeo>;

/// Image of a torus point.
pub fn eval(map: &dyn Diffeo, p: &TorusPoint) -> TorusPoint {
    let image = map.lift(&p.to_vector());
    TorusPoint::wrap(image.as_slice()).expect("diffeomorphism produced a non-finite image")
}

pub fn jacobian_at(map: &dyn Diffeo, p: &TorusPoint) -> DMatrix<f64> {
    map.jacobian(&p.to_vector())
}

pub fn hessian_at(map: &dyn Diffeo, p: &TorusPoint) -> Tensor3 {
    map.hessian(&p.to_vector())
}

fn residual(map: &dyn Diffeo, x: &DVector<f64>, q: &TorusPoint) -> DVector<f64> {
    let fx = map.lift(x);
    DVector::from_iterator(
        fx.len(),
        fx.iter()
            .zip(q.coords())
            .map(|(a, b)| manifold::minimal_rep(a - b)),
    )
}

/// Preimage of `q`, to residual `tol` measured as a torus displacement.
pub fn invert(map: &dyn Diffeo, q: &TorusPoint, tol: f64) -> Result<TorusPoint> {
    if !(tol > 0.0) {
        return Err(Error::precondition("inversion tolerance must be positive"));
    }
    if q.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: q.dim(),
        });
    }
    if let Some(p) = map.exact_inverse(q) {
        if residual(map, &p.to_vector(), q).norm() <= tol.max(1e-14) {
            return Ok(p);
        }
    }
    // seed with the inverse of the linear part applied to q - f(0)
    let linear = map.linear_part();
    let offset = map.lift(&DVector::zeros(map.dim()));
    let target = q.to_vector() - offset;
    let mut x = linalg::solve(&linear, &DMatrix::from_column_slice(q.dim(), 1, target.as_slice()))?
        .column(0)
        .into_owned();
    let mut res = residual(map, &x, q);
    for _ in 0..NEWTON_MAX_ITERS {
        if res.norm() <= tol {
            polish(map, &mut x, &mut res, q);
            return TorusPoint::wrap_vector(&x);
        }
        let jac = map.jacobian(&x);
        let step = jac
            .lu()
            .solve(&res)
            .ok_or_else(|| Error::degenerate("jacobian during Newton inversion", 0.0))?;
        x -= step;
        res = residual(map, &x, q);
    }
    if res.norm() <= tol {
        return TorusPoint::wrap_vector(&x);
    }
    Err(Error::NonConvergence {
        what: format!("Newton inversion of {}", map.name()),
        residual: res.norm(),
    })
}

/// One extra Newton step, kept only when it lowers the residual.
fn polish(map: &dyn Diffeo, x: &mut DVector<f64>, res: &mut DVector<f64>, q: &TorusPoint) {
    if let Some(step) = map.jacobian(x).lu().solve(res) {
        let candidate = &*x - step;
        let r = residual(map, &candidate, q);
        if r.norm() < res.norm() {
            *x = candidate;
            *res = r;
        }
    }
}

/// `[p, f^{±1}p, …, f^n p]`; negative `n` iterates the inverse.
pub fn orbit(map: &dyn Diffeo, p: &TorusPoint, n: i64) -> Result<Vec<TorusPoint>> {
    if n.unsigned_abs() as usize > ORBIT_CAP {
        return Err(Error::precondition(format!(
            "orbit length {} exceeds cap {ORBIT_CAP}",
            n.abs()
        )));
    }
    orbit_uncapped(map, p, n)
}

pub(crate) fn orbit_uncapped(map: &dyn Diffeo, p: &TorusPoint, n: i64) -> Result<Vec<TorusPoint>> {
    let mut out = Vec::with_capacity(n.unsigned_abs() as usize + 1);
    out.push(p.clone());
    let mut cur = p.clone();
    for _ in 0..n.unsigned_abs() {
        cur = if n > 0 {
            eval(map, &cur)
        } else {
            invert(map, &cur, INVERT_TOL)?
        };
        out.push(cur.clone());
    }
    Ok(out)
}

/// Regularity of a family in its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    C1,
    C2,
}

/// A one-parameter family `t ↦ f_t` on `(-ε₀, ε₀)`.
pub trait Family: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Half-width `ε₀` of the parameter interval.
    fn param_range(&self) -> f64;

    fn at(&self, t: f64) -> Result<MapSpec>;

    /// `d/ds f_s(p)` at `s = t`, a vector at `f_t(p)`.
    fn variation(&self, t: f64, p: &TorusPoint) -> Result<DVector<f64>> {
        fd_variation(self, t, p, 1e-5)
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C2
    }

    /// The field `w` when the family is `ψ_t ∘ f₀ ∘ ψ_t⁻¹` with
    /// `ψ_t = id + t·w`, which makes conjugacy oracles available.
    fn conjugating_field(&self) -> Option<SineField> {
        None
    }

    fn check_param(&self, t: f64) -> Result<()> {
        if t.abs() >= self.param_range() {
            return Err(Error::precondition(format!(
                "parameter {t} outside (-{r}, {r})",
                r = self.param_range()
            )));
        }
        Ok(())
    }
}

pub type FamilySpec = Arc<dyn Family>;

/// Central difference in `t` of `f_t(p)`, taken through torus displacement.
pub fn fd_variation<F: Family + ?Sized>(
    family: &F,
    t: f64,
    p: &TorusPoint,
    h: f64,
) -> Result<DVector<f64>> {
    let plus = eval(family.at(t + h)?.as_ref(), p);
    let minus = eval(family.at(t - h)?.as_ref(), p);
    Ok(manifold::displacement(&minus, &plus)? / (2.0 * h))
}
