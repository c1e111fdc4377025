//! Dynamically defined curves and the unstable bundle sampled along them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{ddc_velocity, LiftOptions};
use crate::dynamics::Family;
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{Frame, TorusPoint};
use crate::splitting;

/// Largest Euler step accepted.
pub const MAX_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct DDCurve {
    pub p: TorusPoint,
    pub v: DVector<f64>,
    pub times: Vec<f64>,
    pub points: Vec<TorusPoint>,
    pub velocities: Vec<DVector<f64>>,
}

/// Euler integration of the curve velocity from `t = 0` to `t_end` (either
/// sign). The center vector field is continued from `v` by nearest-vector
/// transport with its length kept.
pub fn dynamically_defined_curve(
    family: &dyn Family,
    p: &TorusPoint,
    v: &DVector<f64>,
    t_end: f64,
    step: f64,
    opts: &LiftOptions,
) -> Result<DDCurve> {
    if !(step > 0.0 && step <= MAX_STEP) {
        return Err(Error::precondition(format!("step {step} outside (0, {MAX_STEP}]")));
    }
    if !t_end.is_finite() || t_end.abs() >= family.param_range() {
        return Err(Error::precondition(format!(
            "t_end {t_end} outside the family range ±{}",
            family.param_range()
        )));
    }
    let steps = (t_end.abs() / step - 1e-9).ceil().max(0.0) as usize;
    let dir = t_end.signum();
    let speed = v.norm();
    let mut center = v.clone();
    let mut t = 0.0;
    let mut q = p.clone();
    let mut curve = DDCurve {
        p: p.clone(),
        v: v.clone(),
        times: vec![0.0],
        points: vec![p.clone()],
        velocities: Vec::with_capacity(steps + 1),
    };
    for i in 0..steps {
        let (vel, _) = ddc_velocity(family, t, &q, &center, opts)?;
        let dt = if i + 1 == steps { t_end - t } else { dir * step };
        q = q.translate(&(&vel * dt))?;
        t += dt;
        curve.velocities.push(vel);
        curve.times.push(t);
        curve.points.push(q.clone());
        if opts.dims.c > 0 && speed > 0.0 {
            let map = family.at(t)?;
            let ec = splitting::center_plane(map.as_ref(), &q, opts.dims, opts.split_n)?.basis;
            let near = &ec * (ec.transpose() * &center);
            let norm = near.norm();
            if norm < 1e-12 {
                return Err(Error::degenerate("center field lost along the curve", norm));
            }
            center = near * (speed / norm);
        }
    }
    let (vel, _) = ddc_velocity(family, t, &q, &center, opts)?;
    curve.velocities.push(vel);
    Ok(curve)
}

/// Deliberately non-dynamical comparison path `t ↦ p`.
pub fn constant_path(p: &TorusPoint, times: &[f64]) -> DDCurve {
    DDCurve {
        p: p.clone(),
        v: DVector::zeros(p.dim()),
        times: times.to_vec(),
        points: vec![p.clone(); times.len()],
        velocities: vec![DVector::zeros(p.dim()); times.len()],
    }
}

/// `E^u(f_t)` along a curve in graph coordinates over a fixed frame, with
/// forward difference quotients.
#[derive(Debug, Clone, Serialize)]
pub struct EuTable {
    pub times: Vec<f64>,
    pub graphs: Vec<DMatrix<f64>>,
    /// `(P_{i+1} − P_i)/(t_{i+1} − t_i)`.
    pub quotients: Vec<DMatrix<f64>>,
    /// Largest change between consecutive quotients.
    pub modulus: f64,
}

impl EuTable {
    /// `(P_k − P_0)/(t_k − t_0)`.
    pub fn quotient_from_start(&self, k: usize) -> DMatrix<f64> {
        (&self.graphs[k] - &self.graphs[0]) / (self.times[k] - self.times[0])
    }
}

/// Graph coordinates over the frame's first block, with the remaining
/// blocks as the complement.
pub fn graph_over(frame: &Frame, k: usize, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = basis.nrows();
    let coords = frame.inverse() * basis;
    let top = coords.view((0, 0), (k, k)).into_owned();
    let rest = coords.view((k, 0), (d - k, k)).into_owned();
    Ok(rest * linalg::inverse(&top)?)
}

/// Frame `[E^u | E^c | E^s]` of `f_0` at `p`.
pub fn reference_frame(family: &dyn Family, p: &TorusPoint, opts: &LiftOptions) -> Result<Frame> {
    let f0 = family.at(0.0)?;
    let s = splitting::compute_splitting(f0.as_ref(), p, opts.dims, opts.split_n)?;
    let mut blocks = vec![s.eu.basis.clone()];
    if opts.dims.c > 0 {
        blocks.push(s.ec.basis.clone());
    }
    blocks.push(s.es.basis.clone());
    Frame::new(p.clone(), blocks)
}

pub fn eu_along_ddc(family: &dyn Family, curve: &DDCurve, opts: &LiftOptions) -> Result<EuTable> {
    let frame = reference_frame(family, &curve.p, opts)?;
    let u = opts.dims.u;
    let graphs = curve
        .times
        .iter()
        .zip(&curve.points)
        .map(|(&t, q)| {
            let map = family.at(t)?;
            let eu = splitting::unstable_plane(map.as_ref(), q, u, opts.split_n)?.plane.basis;
            graph_over(&frame, u, &eu)
        })
        .collect::<Result<Vec<_>>>()?;
    let quotients: Vec<DMatrix<f64>> = graphs
        .windows(2)
        .zip(curve.times.windows(2))
        .map(|(g, t)| (&g[1] - &g[0]) / (t[1] - t[0]))
        .collect();
    let modulus = quotients
        .windows(2)
        .map(|q| linalg::max_abs(&(&q[1] - &q[0])))
        .fold(0.0, f64::max);
    Ok(EuTable {
        times: curve.times.clone(),
        graphs,
        quotients,
        modulus,
    })
}
