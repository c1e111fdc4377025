//! Parameter derivative of an invariant bundle at `t = 0` and the first-order
//! identity relating it to the bundle along dynamically defined curves.
//!
//! In the `t = 0` frame `[E | H]` the map `Df_t(y) : T_y → T_x` with
//! `y = f_t⁻¹x` has blocks `[[A, B], [C, K]]`. The tracked bundle `E_t` is
//! the graph of `P_t : E → H`, and differentiating the graph transform at
//! `t = 0` (where `B = C = P = 0`) gives
//! `X(x) = Z'(x) + K X(f⁻¹x) A⁻¹` with `Z_t = C_t A_t⁻¹`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ddc::{dynamically_defined_curve, graph_over, reference_frame};
use super::{ddc_velocity, LiftOptions};
use crate::dynamics::{self, Family};
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{Frame, TorusPoint};
use crate::partial_deriv::decay;
use crate::splitting::{self, Bundle, Dims, Splitting};

/// Tolerance for `Z_0`, which vanishes when the frame is the exact `t = 0`
/// splitting.
pub const Z0_TOL: f64 = 1e-10;
const BLOCK_ALIGN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tracked {
    Center,
    Unstable,
}

impl Tracked {
    pub fn bundle(self) -> Bundle {
        match self {
            Tracked::Center => Bundle::C,
            Tracked::Unstable => Bundle::U,
        }
    }

    /// Tracked bundle first, then the complement blocks.
    pub fn order(self, dims: Dims) -> Vec<Bundle> {
        let all = match self {
            Tracked::Center => [Bundle::C, Bundle::U, Bundle::S],
            Tracked::Unstable => [Bundle::U, Bundle::C, Bundle::S],
        };
        all.into_iter().filter(|b| *b != Bundle::C || dims.c > 0).collect()
    }
}

impl FromStr for Tracked {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Self::Center),
            "unstable" => Ok(Self::Unstable),
            other => Err(Error::UnknownName {
                kind: "tracked bundle",
                name: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for Tracked {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tracked::Center => "center",
            Tracked::Unstable => "unstable",
        })
    }
}

fn bundle_name(b: Bundle) -> &'static str {
    match b {
        Bundle::U => "u",
        Bundle::C => "c",
        Bundle::S => "s",
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThmDOptions {
    pub dims: Dims,
    /// Series truncation.
    pub n: usize,
    /// Orbit truncation for splittings.
    pub split_n: usize,
    /// Central-difference step in `t` for `Z'`.
    pub z_h: f64,
    /// Step of the splitting-recomputation cross-check.
    pub fd_h: f64,
}

impl ThmDOptions {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            n: splitting::DEFAULT_N,
            split_n: splitting::DEFAULT_N,
            z_h: 1e-4,
            fd_h: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// Forward series `Σ Q₀ᵏ Z'`.
    Contracting,
    /// Backward series `−Σ Q₀⁻ᵏ Z'`.
    Expanding,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub block: String,
    pub branch: Branch,
    /// Worst one-step gain along the orbit.
    pub gain: f64,
    pub ratio: f64,
    pub tail: f64,
}

/// `Q₀` restricted to one orbit: blocks for the steps `x_j → x_{j+1}`,
/// `j ∈ [−offset, …]`.
#[derive(Debug, Clone)]
pub struct OrbitOperator {
    pub offset: usize,
    pub a: Vec<DMatrix<f64>>,
    /// Full `H × H` block per step.
    pub k: Vec<DMatrix<f64>>,
    pub h_dims: Vec<usize>,
    pub h_names: Vec<String>,
}

impl OrbitOperator {
    fn step(&self, j: i64) -> usize {
        (j + self.offset as i64) as usize
    }

    fn k_block(&self, j: i64, r0: usize, len: usize) -> DMatrix<f64> {
        self.k[self.step(j)].view((r0, r0), (len, len)).into_owned()
    }

    /// Solves `X(x) − K X(f⁻¹x) A⁻¹ = Z'(x)` at `x_0` and `x_{−1}` given
    /// `z[offset + j] = Z'(x_j)`, one row block of `H` at a time.
    pub fn solve(&self, z: &[DMatrix<f64>], n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<BlockReport>)> {
        let rows: usize = self.h_dims.iter().sum();
        let ke = self.a[0].nrows();
        let zi = |j: i64, r0: usize, len: usize| z[self.step(j)].view((r0, 0), (len, ke)).into_owned();
        let mut x0 = DMatrix::zeros(rows, ke);
        let mut xm1 = DMatrix::zeros(rows, ke);
        let mut reports = Vec::with_capacity(self.h_dims.len());
        let lo = -(self.offset as i64);
        let hi = self.a.len() as i64 - self.offset as i64 - 1;
        let mut r0 = 0;
        for (len, name) in self.h_dims.iter().copied().zip(&self.h_names) {
            let mut contract = 0.0_f64;
            let mut expand = f64::INFINITY;
            for j in lo..=hi {
                let k = self.k_block(j, r0, len);
                let a = &self.a[self.step(j)];
                contract = contract.max(linalg::op_norm(&k) * linalg::op_norm(&linalg::inverse(a)?));
                expand = expand.min(linalg::conorm(&k) / linalg::op_norm(a));
            }
            let (branch, gain) = if contract < 1.0 {
                (Branch::Contracting, contract)
            } else if expand > 1.0 {
                (Branch::Expanding, expand)
            } else {
                return Err(Error::Solver(format!(
                    "block {name} is neither contracting ({contract}) nor expanding ({expand})"
                )));
            };
            let mut ratio = 0.0_f64;
            let mut tail = 0.0_f64;
            for (base, out) in [(0_i64, &mut x0), (-1, &mut xm1)] {
                let mut terms = Vec::with_capacity(n);
                match branch {
                    Branch::Contracting => {
                        let mut kprod = DMatrix::<f64>::identity(len, len);
                        let mut ainv = DMatrix::<f64>::identity(ke, ke);
                        terms.push(zi(base, r0, len));
                        for k in 1..n as i64 {
                            let j = base - k;
                            kprod *= self.k_block(j, r0, len);
                            ainv = linalg::inverse(&self.a[self.step(j)])? * ainv;
                            terms.push(&kprod * zi(j, r0, len) * &ainv);
                        }
                    }
                    Branch::Expanding => {
                        let mut kinv = DMatrix::<f64>::identity(len, len);
                        let mut aprod = DMatrix::<f64>::identity(ke, ke);
                        for k in 1..=n as i64 {
                            let j = base + k - 1;
                            kinv *= linalg::inverse(&self.k_block(j, r0, len))?;
                            aprod = &self.a[self.step(j)] * aprod;
                            let term: DMatrix<f64> = &kinv * zi(base + k, r0, len) * &aprod;
                            terms.push(-term);
                        }
                    }
                }
                let norms: Vec<f64> = terms.iter().map(linalg::op_norm).collect();
                let sum = terms.into_iter().fold(DMatrix::zeros(len, ke), |acc, t| acc + t);
                let (r, tl) = decay(&norms, linalg::op_norm(&sum)).map_err(|e| match e {
                    Error::Divergence { ratio, .. } => {
                        Error::Solver(format!("block {name}: terms grow with ratio {ratio} in the {branch:?} series"))
                    }
                    other => other,
                })?;
                ratio = ratio.max(r);
                tail = tail.max(tl);
                out.view_mut((r0, 0), (len, ke)).copy_from(&sum);
            }
            reports.push(BlockReport {
                block: name.clone(),
                branch,
                gain,
                ratio,
                tail,
            });
            r0 += len;
        }
        Ok((x0, xm1, reports))
    }

    /// `‖X(x_0) − K_{−1} X(x_{−1}) A_{−1}⁻¹ − Z'(x_0)‖`, using the full
    /// `K` block.
    pub fn residual(&self, x0: &DMatrix<f64>, xm1: &DMatrix<f64>, z0: &DMatrix<f64>) -> Result<f64> {
        let s = self.step(-1);
        let applied = &self.k[s] * xm1 * linalg::inverse(&self.a[s])?;
        Ok(linalg::max_abs(&(x0 - applied - z0)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThmDResult {
    pub point: TorusPoint,
    pub which: Tracked,
    /// `H` block names in row order.
    pub complement: Vec<String>,
    /// `dP/dt` at `t = 0`, an `H × E` matrix.
    pub derivative: DMatrix<f64>,
    /// Largest `‖Z_0‖` along the orbit.
    pub z0: f64,
    pub z_prime: DMatrix<f64>,
    pub residual: f64,
    /// Central difference of recomputed bundles.
    pub fd: DMatrix<f64>,
    pub fd_error: f64,
    pub blocks: Vec<BlockReport>,
}

fn frame_for(split: &Splitting, order: &[Bundle]) -> Result<Frame> {
    Frame::new(
        split.point.clone(),
        order.iter().map(|b| split.plane(*b).basis.clone()).collect(),
    )
}

fn z_at(
    family: &dyn Family,
    t: f64,
    frame_x: &Frame,
    order: &[Bundle],
    ke: usize,
    opts: &ThmDOptions,
) -> Result<DMatrix<f64>> {
    let f0 = family.at(0.0)?;
    let ft = family.at(t)?;
    let y = dynamics::invert(ft.as_ref(), &frame_x.point, dynamics::INVERT_TOL)?;
    let sy = splitting::compute_splitting(f0.as_ref(), &y, opts.dims, opts.split_n)?;
    let frame_y = frame_for(&sy, order)?;
    let m = frame_x.inverse() * dynamics::jacobian_at(ft.as_ref(), &y) * frame_y.matrix();
    let d = m.nrows();
    let a = m.view((0, 0), (ke, ke)).into_owned();
    let c = m.view((ke, 0), (d - ke, ke)).into_owned();
    Ok(c * linalg::inverse(&a)?)
}

/// Central difference in `t` of the graph of the recomputed bundle of `f_t`
/// at the fixed point `p`, over the `t = 0` frame.
pub fn fd_bundle_slope(family: &dyn Family, p: &TorusPoint, which: Tracked, dims: Dims, split_n: usize, h: f64) -> Result<DMatrix<f64>> {
    let f0 = family.at(0.0)?;
    let order = which.order(dims);
    let frame = frame_for(&splitting::compute_splitting(f0.as_ref(), p, dims, split_n)?, &order)?;
    let ke = frame.blocks[0].ncols();
    let graph = |t: f64| -> Result<DMatrix<f64>> {
        let ft = family.at(t)?;
        let s = splitting::compute_splitting(ft.as_ref(), p, dims, split_n)?;
        graph_over(&frame, ke, &s.plane(which.bundle()).basis)
    };
    Ok((graph(h)? - graph(-h)?) / (2.0 * h))
}

/// Exact `dP/dt` at `t = 0` for `ψ_t ∘ f₀ ∘ ψ_t⁻¹` over an affine `f₀`.
/// The bundles of `f_t` are the constant bundles of `f₀` pushed by `Dψ_t`,
/// so the slope is the complement part of `Dw(p)` on the tracked block.
/// `None` when the family is not of that form.
pub fn conjugacy_closed_form(
    family: &dyn Family,
    p: &TorusPoint,
    which: Tracked,
    dims: Dims,
    split_n: usize,
) -> Result<Option<DMatrix<f64>>> {
    let Some(field) = family.conjugating_field() else {
        return Ok(None);
    };
    let f0 = family.at(0.0)?;
    if !f0.is_affine() {
        return Ok(None);
    }
    let frame = frame_for(&splitting::compute_splitting(f0.as_ref(), p, dims, split_n)?, &which.order(dims))?;
    let ke = frame.blocks[0].ncols();
    let coords = frame.inverse() * field.jacobian(&p.to_vector()) * &frame.blocks[0];
    let d = coords.nrows();
    Ok(Some(coords.view((ke, 0), (d - ke, ke)).into_owned()))
}

/// `dP/dt` at `t = 0` for the tracked bundle by the split Neumann solver,
/// with its direct residual and the recomputation cross-check.
pub fn theorem_d_derivative(family: &dyn Family, p: &TorusPoint, which: Tracked, opts: &ThmDOptions) -> Result<ThmDResult> {
    let dims = opts.dims;
    let f0 = family.at(0.0)?;
    if !f0.is_affine() {
        return Err(Error::precondition(
            "the t = 0 map must be affine so that its bundles are analytic",
        ));
    }
    if which == Tracked::Center && dims.c == 0 {
        return Err(Error::precondition("tracking the center needs c >= 1"));
    }
    if opts.n == 0 || !(opts.z_h > 0.0) || !(opts.fd_h > 0.0) {
        return Err(Error::precondition("N, z_h and fd_h must be positive"));
    }
    family.check_param(opts.z_h.max(opts.fd_h))?;
    let n = opts.n;
    let order = which.order(dims);
    let splits = splitting::orbit_splittings(f0.as_ref(), p, dims, opts.split_n, n + 1, n)?;
    let frames = splits
        .iter()
        .map(|s| frame_for(s, &order))
        .collect::<Result<Vec<_>>>()?;
    let ke = frames[0].blocks[0].ncols();
    let d = family.dim();
    let h_dims: Vec<usize> = frames[0].blocks[1..].iter().map(|b| b.ncols()).collect();
    let h_names: Vec<String> = order[1..].iter().map(|b| bundle_name(*b).to_string()).collect();

    let mut a = Vec::with_capacity(splits.len() - 1);
    let mut k = Vec::with_capacity(splits.len() - 1);
    let mut z0 = 0.0_f64;
    for i in 0..splits.len() - 1 {
        let m = frames[i + 1].inverse() * dynamics::jacobian_at(f0.as_ref(), &splits[i].point) * frames[i].matrix();
        let ai = m.view((0, 0), (ke, ke)).into_owned();
        let ci = m.view((ke, 0), (d - ke, ke)).into_owned();
        let bi = m.view((0, ke), (ke, d - ke)).into_owned();
        let ki = m.view((ke, ke), (d - ke, d - ke)).into_owned();
        let mut off = linalg::max_abs(&bi);
        let mut r0 = 0;
        for &len in &h_dims {
            let mut masked = ki.clone();
            masked.view_mut((r0, r0), (len, len)).fill(0.0);
            off = off.max(linalg::max_abs(&masked.view((r0, 0), (len, d - ke)).into_owned()));
            r0 += len;
        }
        if off > BLOCK_ALIGN_TOL {
            return Err(Error::MisalignedSplitting {
                norm: off,
                tol: BLOCK_ALIGN_TOL,
            });
        }
        z0 = z0.max(linalg::max_abs(&(ci * linalg::inverse(&ai)?)));
        a.push(ai);
        k.push(ki);
    }
    if z0 > Z0_TOL {
        return Err(Error::Solver(format!(
            "Z_0 = {z0:e} exceeds {Z0_TOL:e}: complement not aligned with the t = 0 splitting"
        )));
    }
    let op = OrbitOperator {
        offset: n + 1,
        a,
        k,
        h_dims,
        h_names: h_names.clone(),
    };
    let z: Vec<DMatrix<f64>> = frames
        .par_iter()
        .map(|fr| {
            let plus = z_at(family, opts.z_h, fr, &order, ke, opts)?;
            let minus = z_at(family, -opts.z_h, fr, &order, ke, opts)?;
            Ok((plus - minus) / (2.0 * opts.z_h))
        })
        .collect::<Result<Vec<_>>>()?;
    let (x0, xm1, blocks) = op.solve(&z, n)?;
    let z_p = z[n + 1].clone();
    let residual = op.residual(&x0, &xm1, &z_p)?;
    let fd = fd_bundle_slope(family, p, which, dims, opts.split_n, opts.fd_h)?;
    let fd_error = linalg::max_abs(&(&x0 - &fd));
    Ok(ThmDResult {
        point: p.clone(),
        which,
        complement: h_names,
        derivative: x0,
        z0,
        z_prime: z_p,
        residual,
        fd,
        fd_error,
        blocks,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThmCOptions {
    pub lift: LiftOptions,
    /// Half-width of the central quotients in `t`.
    pub h: f64,
    /// Euler step of the curves.
    pub step: f64,
    /// Spatial difference step.
    pub spatial_h: f64,
}

impl ThmCOptions {
    pub fn new(dims: Dims) -> Self {
        Self {
            lift: LiftOptions::new(dims),
            h: 1e-3,
            step: 1e-4,
            spatial_h: 1e-4,
        }
    }
}

/// Both first-order coefficients of the unstable-bundle identity, in graph
/// coordinates over the `t = 0` frame `[E^u | E^c | E^s]` at `p`.
#[derive(Debug, Clone, Serialize)]
pub struct ThmCReport {
    /// `d/dt E^u_p(f_t)` at fixed `p`.
    pub left: DMatrix<f64>,
    /// `d/dt E^u_{φ(t)}(f_t)` along the curve.
    pub quotient: DMatrix<f64>,
    /// `D_p E^u(f_0)(φ̇(0))`.
    pub spatial: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub residual: f64,
    pub relative: f64,
}

pub fn theorem_c_check(family: &dyn Family, p: &TorusPoint, v: &DVector<f64>, opts: &ThmCOptions) -> Result<ThmCReport> {
    let lift = &opts.lift;
    let dims = lift.dims;
    let h = opts.h;
    let left = fd_bundle_slope(family, p, Tracked::Unstable, dims, lift.split_n, h)?;
    let frame = reference_frame(family, p, lift)?;
    let eu_graph = |t: f64, q: &TorusPoint| -> Result<DMatrix<f64>> {
        let map = family.at(t)?;
        let eu = splitting::unstable_plane(map.as_ref(), q, dims.u, lift.split_n)?.plane.basis;
        graph_over(&frame, dims.u, &eu)
    };
    let ahead = dynamically_defined_curve(family, p, v, h, opts.step, lift)?;
    let behind = dynamically_defined_curve(family, p, v, -h, opts.step, lift)?;
    let end = |c: &super::DDCurve| c.points.last().cloned().expect("curve has points");
    let quotient = (eu_graph(h, &end(&ahead))? - eu_graph(-h, &end(&behind))?) / (2.0 * h);
    let (vel, _) = ddc_velocity(family, 0.0, p, v, lift)?;
    let spatial = if vel.norm() == 0.0 {
        DMatrix::zeros(quotient.nrows(), quotient.ncols())
    } else {
        let s = opts.spatial_h;
        let plus = p.translate(&(&vel * s))?;
        let minus = p.translate(&(&vel * -s))?;
        (eu_graph(0.0, &plus)? - eu_graph(0.0, &minus)?) / (2.0 * s)
    };
    let right = &quotient - &spatial;
    let residual = linalg::max_abs(&(&left - &right));
    let relative = residual / linalg::max_abs(&left).max(1e-6);
    Ok(ThmCReport {
        left,
        quotient,
        spatial,
        right,
        residual,
        relative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::zoo::{ConjugatedFamily, ConstantFamily, RotationFamily, SineField, SkewProduct};
    use std::sync::Arc;

    const DIMS: Dims = Dims { u: 1, c: 1, s: 1 };

    fn pt(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    #[test]
    fn rotation_family_center_is_constant() {
        let f = RotationFamily::standard();
        let r = theorem_d_derivative(&f, &pt(&[0.1, 0.2, 0.3]), Tracked::Center, &ThmDOptions::new(DIMS)).unwrap();
        assert!(linalg::max_abs(&r.derivative) < 1e-12);
        assert!(linalg::max_abs(&r.fd) < 1e-8);
    }

    #[test]
    fn rejects_non_affine_base() {
        let f = ConstantFamily::new(Arc::new(SkewProduct::perturbed(0.02).unwrap()), 0.1);
        assert!(matches!(
            theorem_d_derivative(&f, &pt(&[0.1, 0.2, 0.3]), Tracked::Unstable, &ThmDOptions::new(DIMS)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn conjugated_unstable_closed_form() {
        let f = ConjugatedFamily::standard();
        let p = TorusPoint::origin(3);
        let r = theorem_d_derivative(&f, &p, Tracked::Unstable, &ThmDOptions::new(DIMS)).unwrap();
        // first-order expansion of Dψ_t E^u: project Dw e_u onto [E^c | E^s]
        let s = splitting::compute_splitting(&SkewProduct::standard(), &p, DIMS, 60).unwrap();
        let frame = frame_for(&s, &Tracked::Unstable.order(DIMS)).unwrap();
        let dw = f.field().jacobian(&p.to_vector());
        let closed = (frame.inverse() * dw * &s.eu.basis).rows(1, 2).into_owned();
        assert!((closed[(0, 0)] - std::f64::consts::TAU * 0.8506508083520399).abs() < 1e-9);
        assert!(linalg::max_abs(&(&r.derivative - &closed)) <= 1e-6);
        let lib = conjugacy_closed_form(&f, &p, Tracked::Unstable, DIMS, 60).unwrap().unwrap();
        assert!(linalg::max_abs(&(&lib - &closed)) <= 1e-14);
        assert!(r.residual <= 1e-8);
        assert!(r.z0 <= Z0_TOL);
    }

    #[test]
    fn center_tracking_on_shear_family() {
        let f = ConjugatedFamily::new(
            Arc::new(SkewProduct::standard()),
            SineField::new(2, 0, 1.0, 3).unwrap(),
            0.1,
        )
        .unwrap();
        let r = theorem_d_derivative(&f, &pt(&[0.3, 0.1, 0.7]), Tracked::Center, &ThmDOptions::new(DIMS)).unwrap();
        assert!(r.blocks.iter().any(|b| b.branch == Branch::Expanding));
        assert!(r.residual <= 1e-8);
        let scale = linalg::max_abs(&r.derivative);
        assert!(scale > 1e-3);
        assert!(r.fd_error <= 1e-3 * scale + 1e-6);
    }

    #[test]
    fn theorem_c_trivial_families() {
        let opts = ThmCOptions::new(DIMS);
        let p = pt(&[0.2, 0.6, 0.1]);
        for f in [
            Arc::new(ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1)) as Arc<dyn Family>,
            Arc::new(RotationFamily::standard()),
        ] {
            let r = theorem_c_check(f.as_ref(), &p, &DVector::zeros(3), &opts).unwrap();
            assert!(linalg::max_abs(&r.left) < 1e-10);
            assert!(linalg::max_abs(&r.right) < 1e-10);
        }
    }

    #[test]
    fn tracked_names() {
        assert_eq!("center".parse::<Tracked>().unwrap(), Tracked::Center);
        assert_eq!(Tracked::Unstable.to_string(), "unstable");
        assert!("stable".parse::<Tracked>().is_err());
    }
}
