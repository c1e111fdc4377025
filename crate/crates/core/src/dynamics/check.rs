//! Finite-difference checks for analytically supplied derivatives.

use nalgebra::{DMatrix, DVector};

use super::{eval, fd_variation, invert, Diffeo, Family};
use crate::error::Result;
use crate::linalg::{self, Tensor3};
use crate::manifold::{self, TorusPoint};

/// Central-difference Jacobian of the lift.
pub fn fd_jacobian(map: &dyn Diffeo, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let d = map.dim();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (map.lift(&xp) - map.lift(&xm)) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

/// Central-difference Hessian from the analytic Jacobian.
pub fn fd_hessian(map: &dyn Diffeo, x: &DVector<f64>, h: f64) -> Tensor3 {
    let d = map.dim();
    let mut out = Tensor3::zeros(d);
    for a in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[a] += h;
        xm[a] -= h;
        let dj = (map.jacobian(&xp) - map.jacobian(&xm)) / (2.0 * h);
        for o in 0..d {
            for b in 0..d {
                out.set(o, a, b, dj[(o, b)]);
            }
        }
    }
    out
}

/// Relative error `‖J − J_fd‖ / max(‖J‖, 1)`.
pub fn jacobian_error(map: &dyn Diffeo, x: &DVector<f64>, h: f64) -> f64 {
    let j = map.jacobian(x);
    let fd = fd_jacobian(map, x, h);
    linalg::max_abs(&(&j - fd)) / linalg::max_abs(&j).max(1.0)
}

/// Relative error of the analytic Hessian against differences of the
/// Jacobian, scaled by `max(‖H‖, 1)`.
pub fn hessian_error(map: &dyn Diffeo, x: &DVector<f64>, h: f64) -> f64 {
    let hs = map.hessian(x);
    let fd = fd_hessian(map, x, h);
    let d = map.dim();
    let mut worst = 0.0_f64;
    for o in 0..d {
        for a in 0..d {
            for b in 0..d {
                worst = worst.max((hs.get(o, a, b) - fd.get(o, a, b)).abs());
            }
        }
    }
    worst / hs.max_abs().max(1.0)
}

/// `‖Df(p) · D(f⁻¹)(fp) − I‖`, with the inverse Jacobian taken from a
/// five-point stencil on Newton inversion.
pub fn chain_rule_defect(map: &dyn Diffeo, p: &TorusPoint) -> Result<f64> {
    let d = map.dim();
    let q = eval(map, p);
    let h = 1e-3;
    let base = invert(map, &q, 1e-14)?;
    let mut dinv = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut col = DVector::zeros(d);
        for (k, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
            let mut step = DVector::zeros(d);
            step[j] = k * h;
            let pre = invert(map, &q.translate(&step)?, 1e-14)?;
            col += manifold::displacement(&base, &pre)? * w;
        }
        dinv.set_column(j, &(col / (12.0 * h)));
    }
    let prod = map.jacobian(&p.to_vector()) * dinv;
    Ok(linalg::max_abs(&(prod - DMatrix::identity(d, d))))
}

/// Relative error of the variation field against central differences in `t`.
pub fn variation_error(family: &dyn Family, t: f64, p: &TorusPoint, h: f64) -> Result<f64> {
    let analytic = family.variation(t, p)?;
    let fd = fd_variation(family, t, p, h)?;
    Ok((&analytic - &fd).norm() / analytic.norm().max(1.0))
}
