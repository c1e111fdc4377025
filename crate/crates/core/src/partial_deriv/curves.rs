//! Curves tangent to a bundle, the finite-difference oracle for the
//! derivative of `E^u` along them, and log-log regularity fits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{graph_coords, ucs_frame};
use crate::dynamics::Diffeo;
use crate::error::{Error, Result};
use crate::manifold::TorusPoint;
use crate::splitting::{self, Bundle, Dims};

/// Largest Euler step accepted.
pub const MAX_STEP: f64 = 1e-2;
/// Distances below this are treated as a constant bundle.
pub const FLAT_EPS: f64 = 1e-12;

/// Euler polyline; `points[origin]` is the curve at parameter 0 and
/// `points[i]` is at `(i − origin)·step`.
#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub points: Vec<TorusPoint>,
    pub step: f64,
    pub origin: usize,
}

impl Curve {
    /// The same polyline traversed backwards.
    pub fn reversed(&self) -> Curve {
        let mut points = self.points.clone();
        points.reverse();
        Curve {
            origin: points.len() - 1 - self.origin,
            points,
            step: self.step,
        }
    }

    pub fn param(&self, i: usize) -> f64 {
        (i as f64 - self.origin as f64) * self.step
    }
}

fn bundle_basis(map: &dyn Diffeo, q: &TorusPoint, bundle: Bundle, dims: Dims, n: usize) -> Result<DMatrix<f64>> {
    Ok(match bundle {
        Bundle::U => splitting::unstable_plane(map, q, dims.u, n)?.plane.basis,
        Bundle::S => splitting::stable_plane(map, q, dims.s, n)?.plane.basis,
        Bundle::C => splitting::center_plane(map, q, dims, n)?.basis,
    })
}

fn nearest_unit(basis: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let w = basis * (basis.transpose() * v);
    let norm = w.norm();
    if norm < 1e-12 {
        return Err(Error::degenerate("direction orthogonal to the bundle", norm));
    }
    Ok(w / norm)
}

fn integrate(
    map: &dyn Diffeo,
    p: &TorusPoint,
    v: &DVector<f64>,
    bundle: Bundle,
    dims: Dims,
    step: f64,
    n_steps: usize,
    n: usize,
) -> Result<Vec<TorusPoint>> {
    if !(step > 0.0 && step <= MAX_STEP) {
        return Err(Error::precondition(format!("step {step} outside (0, {MAX_STEP}]")));
    }
    if v.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: v.len(),
        });
    }
    let mut points = vec![p.clone()];
    if n_steps == 0 {
        return Ok(points);
    }
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::precondition("curve direction must be nonzero"));
    }
    let mut dir = v / norm;
    let mut q = p.clone();
    for _ in 0..n_steps {
        let basis = bundle_basis(map, &q, bundle, dims, n)?;
        dir = nearest_unit(&basis, &dir)?;
        q = q.translate(&(&dir * step))?;
        points.push(q.clone());
    }
    Ok(points)
}

/// Euler polyline tangent to `bundle` from `p`, starting along the
/// projection of `v` and continuing with the nearest unit vector of the
/// bundle at each step.
#[allow(clippy::too_many_arguments)]
pub fn bundle_curve(
    map: &dyn Diffeo,
    p: &TorusPoint,
    v: &DVector<f64>,
    bundle: Bundle,
    dims: Dims,
    step: f64,
    n_steps: usize,
    n: usize,
) -> Result<Curve> {
    Ok(Curve {
        points: integrate(map, p, v, bundle, dims, step, n_steps, n)?,
        step,
        origin: 0,
    })
}

pub fn center_curve(
    map: &dyn Diffeo,
    p: &TorusPoint,
    v: &DVector<f64>,
    dims: Dims,
    step: f64,
    n_steps: usize,
    n: usize,
) -> Result<Curve> {
    bundle_curve(map, p, v, Bundle::C, dims, step, n_steps, n)
}

/// Curve through `p` on both sides: forward along `v` and along `−v`.
#[allow(clippy::too_many_arguments)]
pub fn symmetric_curve(
    map: &dyn Diffeo,
    p: &TorusPoint,
    v: &DVector<f64>,
    bundle: Bundle,
    dims: Dims,
    step: f64,
    n_each: usize,
    n: usize,
) -> Result<Curve> {
    let ahead = integrate(map, p, v, bundle, dims, step, n_each, n)?;
    let behind = integrate(map, p, &-v, bundle, dims, step, n_each, n)?;
    let mut points: Vec<TorusPoint> = behind.into_iter().skip(1).rev().collect();
    points.extend(ahead);
    Ok(Curve {
        points,
        step,
        origin: n_each,
    })
}

/// Central difference `(P(γ(h)) − P(γ(−h)))/2h` of the graph coordinates of
/// `E^u` over the splitting at `γ(0)`.
pub fn fd_derivative_along_curve(map: &dyn Diffeo, curve: &Curve, dims: Dims, h: f64, n: usize) -> Result<DMatrix<f64>> {
    let k = (h / curve.step).round();
    if !(k >= 1.0) || (k * curve.step - h).abs() > 1e-9 * h {
        return Err(Error::precondition(format!(
            "h = {h} must be a positive multiple of the curve step {}",
            curve.step
        )));
    }
    let k = k as usize;
    if curve.origin < k || curve.points.len() - 1 - curve.origin < k {
        return Err(Error::precondition("curve shorter than h on one side"));
    }
    let base = &curve.points[curve.origin];
    let split = splitting::compute_splitting(map, base, dims, n)?;
    let frame = ucs_frame(&split)?;
    let graph_at = |q: &TorusPoint| -> Result<DMatrix<f64>> {
        let eu = splitting::unstable_plane(map, q, dims.u, n)?.plane.basis;
        Ok(graph_coords(&frame, dims.u, &eu)?.p)
    };
    let plus = graph_at(&curve.points[curve.origin + k])?;
    let minus = graph_at(&curve.points[curve.origin - k])?;
    Ok((plus - minus) / (2.0 * h))
}

/// Fitted exponent, or the sentinel for a bundle that does not move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Slope {
    Fitted(f64),
    Flat,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityFit {
    pub slope: Slope,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// `(t, dist(E^u_{γ(t)}, E^u_p))` per scale.
    pub table: Vec<(f64, f64)>,
}

/// Least-squares slope of `log dist(E^u_{γ(t)}, E^u_p)` against `log t`
/// along one curve tangent to `direction` (center or stable).
pub fn regularity_estimate(
    map: &dyn Diffeo,
    p: &TorusPoint,
    direction: Bundle,
    scales: &[f64],
    dims: Dims,
    n: usize,
) -> Result<RegularityFit> {
    if direction == Bundle::U {
        return Err(Error::precondition("regularity is measured along center or stable curves"));
    }
    if scales.len() < 3 {
        return Err(Error::precondition("fewer than 3 scales"));
    }
    if scales.iter().any(|s| !(*s > 0.0)) || scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::precondition("scales must be positive and decreasing"));
    }
    let smallest = *scales.last().expect("nonempty");
    let step = (smallest / 4.0).min(MAX_STEP);
    let index: Vec<usize> = scales.iter().map(|s| (s / step).round() as usize).collect();
    let start = bundle_basis(map, p, direction, dims, n)?.column(0).into_owned();
    let curve = bundle_curve(map, p, &start, direction, dims, step, index[0], n)?;
    let eu_p = splitting::unstable_plane(map, p, dims.u, n)?.plane.basis;
    let mut table = Vec::with_capacity(scales.len());
    for &i in &index {
        let eu = splitting::unstable_plane(map, &curve.points[i], dims.u, n)?.plane.basis;
        table.push((i as f64 * step, splitting::subspace_distance(&eu, &eu_p)));
    }
    if table.iter().all(|(_, d)| *d < FLAT_EPS) {
        return Ok(RegularityFit {
            slope: Slope::Flat,
            residual: 0.0,
            table,
        });
    }
    let valid: Vec<(f64, f64)> = table
        .iter()
        .filter(|(_, d)| *d >= FLAT_EPS)
        .map(|(t, d)| (t.ln(), d.ln()))
        .collect();
    if valid.len() < 3 {
        return Err(Error::precondition("fewer than 3 valid scales"));
    }
    let (slope, residual) = least_squares(&valid);
    Ok(RegularityFit {
        slope: Slope::Fitted(slope),
        residual,
        table,
    })
}

/// Slope and RMS residual of the least-squares line through `(x, y)`.
pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    (slope, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::zoo::SkewProduct;
    use crate::linalg;

    fn pt(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    const DIMS: Dims = Dims { u: 1, c: 1, s: 1 };

    #[test]
    fn product_center_curve_is_theta_line() {
        let m = SkewProduct::standard();
        let p = pt(&[0.1, 0.2, 0.3]);
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = center_curve(&m, &p, &e, DIMS, 1e-3, 100, 40).unwrap();
        assert_eq!(c.points.len(), 101);
        for q in &c.points {
            assert!((q.coords()[0] - 0.1).abs() < 1e-12);
            assert!((q.coords()[1] - 0.2).abs() < 1e-12);
        }
        assert!((c.points[100].coords()[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_integration() {
        let m = SkewProduct::standard();
        let p = pt(&[0.1, 0.2, 0.3]);
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = center_curve(&m, &p, &e, DIMS, 1e-3, 0, 40).unwrap();
        assert_eq!(c.points, vec![p]);
    }

    #[test]
    fn step_bound() {
        let m = SkewProduct::standard();
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!(center_curve(&m, &pt(&[0.0, 0.0, 0.0]), &e, DIMS, 0.02, 3, 40).is_err());
    }

    #[test]
    fn perturbed_center_curve_tangency() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let p = pt(&[0.1, 0.2, 0.3]);
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let step = 1e-3;
        let c = center_curve(&m, &p, &e, DIMS, step, 10, 60).unwrap();
        for w in c.points.windows(2) {
            let chord = w[0].displacement_to(&w[1]).unwrap() / step;
            let ec = splitting::center_plane(&m, &w[0], DIMS, 60).unwrap().basis;
            let defect = (&chord - &ec * (ec.transpose() * &chord)).norm();
            assert!(defect <= 1e-4);
        }
    }

    #[test]
    fn product_fd_derivative_vanishes() {
        let m = SkewProduct::standard();
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = symmetric_curve(&m, &pt(&[0.1, 0.2, 0.3]), &e, Bundle::C, DIMS, 1e-3, 2, 40).unwrap();
        let d = fd_derivative_along_curve(&m, &c, DIMS, 2e-3, 40).unwrap();
        assert!(linalg::max_abs(&d) <= 1e-12);
    }

    #[test]
    fn halving_h_converges_at_second_order() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = symmetric_curve(&m, &pt(&[0.1, 0.2, 0.3]), &e, Bundle::C, DIMS, 5e-4, 16, 60).unwrap();
        let d: Vec<_> = [8e-3, 4e-3, 2e-3]
            .iter()
            .map(|h| fd_derivative_along_curve(&m, &c, DIMS, *h, 60).unwrap())
            .collect();
        let ratio = linalg::max_abs(&(&d[1] - &d[2])) / linalg::max_abs(&(&d[0] - &d[1]));
        assert!((0.2..0.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn reversed_curve_flips_sign() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let e = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = symmetric_curve(&m, &pt(&[0.1, 0.2, 0.3]), &e, Bundle::C, DIMS, 1e-3, 1, 60).unwrap();
        let fwd = fd_derivative_along_curve(&m, &c, DIMS, 1e-3, 60).unwrap();
        let back = fd_derivative_along_curve(&m, &c.reversed(), DIMS, 1e-3, 60).unwrap();
        assert!(linalg::max_abs(&(fwd + back)) <= 1e-12);
    }

    #[test]
    fn product_regularity_is_flat() {
        let m = SkewProduct::standard();
        let scales: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
        let fit = regularity_estimate(&m, &pt(&[0.1, 0.2, 0.3]), Bundle::C, &scales, DIMS, 40).unwrap();
        assert_eq!(fit.slope, Slope::Flat);
    }

    #[test]
    fn regularity_needs_three_scales() {
        let m = SkewProduct::standard();
        assert!(regularity_estimate(&m, &pt(&[0.1, 0.2, 0.3]), Bundle::C, &[0.1, 0.05], DIMS, 40).is_err());
    }

    #[test]
    fn least_squares_exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let (s, r) = least_squares(&pts);
        assert!((s - 2.0).abs() < 1e-14);
        assert!(r < 1e-14);
    }
}
