//! Derivative of the unstable bundle along the center: chart blocks, the
//! backward-orbit series and graph coordinates.
//!
//! In the affine chart at `p` with frame `F_p = [E^u | E^{cs}]` the unstable
//! bundle near `p` is the graph of `P(x) : R^u → R^{cs}`. Invariance reads
//! `P(f_p x) = (J_csu + J_cscs P)(J_uu + J_ucs P)⁻¹` with `J` the chart
//! Jacobian, and differentiating at `x = 0` along a center vector gives
//! `DP_{fp}(Aξ) = C_p(ξ) + A_cscs DP_p(ξ) A_uu⁻¹`. Unrolling along the
//! backward orbit yields the series.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{self, Diffeo};
use crate::error::{Error, Result};
use crate::linalg::{self, Tensor3};
use crate::manifold::{build_chart, Frame, TorusPoint};
use crate::splitting::{self, bunching, Bundle, Dims, Splitting};

pub mod curves;

pub use curves::{
    bundle_curve, center_curve, fd_derivative_along_curve, regularity_estimate, symmetric_curve, Curve,
    RegularityFit, Slope,
};

/// Off-diagonal chart blocks above this size mean the splitting is not
/// aligned with the frames.
pub const ALIGN_TOL: f64 = 1e-8;
/// Terms below this are treated as exact zeros when judging decay.
const NEGLIGIBLE: f64 = 1e-300;
const DECAY_WINDOW: usize = 5;

/// Frame `[E^u | orth(E^c ⊕ E^s)]` at the splitting's point.
pub fn ucs_frame(split: &Splitting) -> Result<Frame> {
    Ok(build_chart(&split.point, split, &[&[Bundle::U], &[Bundle::C, Bundle::S]])?.frame)
}

/// Chart-coordinate derivatives of `f_p = φ_{fp}⁻¹ ∘ f ∘ φ_p` at the origin.
#[derive(Debug, Clone)]
pub struct ChartBlocks {
    pub point: TorusPoint,
    pub u: usize,
    /// Full chart Jacobian at 0.
    pub a: DMatrix<f64>,
    pub auu: DMatrix<f64>,
    pub acscs: DMatrix<f64>,
    /// `max(‖A_csu‖, ‖A_ucs‖)`.
    pub off_diagonal: f64,
    /// Chart Hessian: `dj.contract(ξ)` is the derivative of the chart
    /// Jacobian in direction `ξ`.
    pub dj: Tensor3,
    /// `c[a]` is the `cs × u` derivative of `J_csu J_uu⁻¹` along `e_a`.
    pub c: Vec<DMatrix<f64>>,
    /// Size of the second term of the `C` formula; small since `A_csu ≈ 0`.
    pub second_term: f64,
    pub frame_p: Frame,
    pub frame_fp: Frame,
}

impl ChartBlocks {
    /// `C_p(ξ) = Σ_a ξ_a c[a]`.
    pub fn c_apply(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.a.nrows() - self.u, self.u);
        for (k, ca) in self.c.iter().enumerate() {
            if xi[k] != 0.0 {
                out += ca * xi[k];
            }
        }
        out
    }

    /// Linearized graph transform `X ↦ A_cscs X A_uu⁻¹`.
    pub fn k_apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let inv = linalg::inverse(&self.auu)?;
        Ok(&self.acscs * x * inv)
    }

    /// Graph transform on `cs × u` matrices at the origin,
    /// `P ↦ (A_csu + A_cscs P)(A_uu + A_ucs P)⁻¹`.
    pub fn graph_transform(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        graph_transform(&self.a, self.u, p)
    }
}

/// `(J_csu + J_cscs P)(J_uu + J_ucs P)⁻¹` for a `u | cs` blocked `J`.
pub fn graph_transform(j: &DMatrix<f64>, u: usize, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = j.nrows();
    let cs = d - u;
    let num = j.view((u, 0), (cs, u)) + j.view((u, u), (cs, cs)) * p;
    let den = j.view((0, 0), (u, u)) + j.view((0, u), (u, cs)) * p;
    Ok(num * linalg::inverse(&den)?)
}

/// Chart Jacobian `F_fp⁻¹ Df(p + F_p x) F_p` on the lift.
pub fn chart_jacobian(map: &dyn Diffeo, blocks: &ChartBlocks, x: &DVector<f64>) -> DMatrix<f64> {
    let base = blocks.point.to_vector() + blocks.frame_p.matrix() * x;
    blocks.frame_fp.inverse() * map.jacobian(&base) * blocks.frame_p.matrix()
}

pub fn chart_blocks(map: &dyn Diffeo, p: &TorusPoint, at_p: &Splitting, at_fp: &Splitting) -> Result<ChartBlocks> {
    let d = map.dim();
    let u = at_p.dims.u;
    let cs = d - u;
    let frame_p = ucs_frame(at_p)?;
    let frame_fp = ucs_frame(at_fp)?;
    let a = frame_fp.inverse() * dynamics::jacobian_at(map, p) * frame_p.matrix();
    let off_diagonal = linalg::max_abs(&a.view((u, 0), (cs, u)).into_owned())
        .max(linalg::max_abs(&a.view((0, u), (u, cs)).into_owned()));
    if off_diagonal > ALIGN_TOL {
        return Err(Error::MisalignedSplitting {
            norm: off_diagonal,
            tol: ALIGN_TOL,
        });
    }
    let auu = a.view((0, 0), (u, u)).into_owned();
    let acscs = a.view((u, u), (cs, cs)).into_owned();
    let acsu = a.view((u, 0), (cs, u)).into_owned();
    let auu_inv = linalg::inverse(&auu)?;
    let dj = dynamics::hessian_at(map, p).conjugate(frame_fp.inverse(), frame_p.matrix());
    let mut c = Vec::with_capacity(d);
    let mut second_term = 0.0_f64;
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let djk = dj.contract(&e);
        let first = djk.view((u, 0), (cs, u)) * &auu_inv;
        let second = &acsu * &auu_inv * djk.view((0, 0), (u, u)) * &auu_inv;
        second_term = second_term.max(linalg::max_abs(&second));
        c.push(first - second);
    }
    if second_term > ALIGN_TOL {
        return Err(Error::MisalignedSplitting {
            norm: second_term,
            tol: ALIGN_TOL,
        });
    }
    Ok(ChartBlocks {
        point: p.clone(),
        u,
        a,
        auu,
        acscs,
        off_diagonal,
        dj,
        c,
        second_term,
        frame_p,
        frame_fp,
    })
}

/// Graph coordinates of a plane over a reference frame's `base` block.
#[derive(Debug, Clone, Serialize)]
pub struct GraphCoords {
    pub base: &'static str,
    pub complement: &'static str,
    pub p: DMatrix<f64>,
}

/// Writes the `u`-plane spanned by `basis` as the graph of `P : R^u → R^{cs}`
/// in the coordinates of `frame`.
pub fn graph_coords(frame: &Frame, u: usize, basis: &DMatrix<f64>) -> Result<GraphCoords> {
    let d = frame.matrix().nrows();
    let coords = frame.inverse() * basis;
    let cu = coords.view((0, 0), (u, basis.ncols())).into_owned();
    let ccs = coords.view((u, 0), (d - u, basis.ncols())).into_owned();
    let p = ccs * linalg::inverse(&cu)?;
    let norm = linalg::op_norm(&p);
    if norm >= 1.0 {
        return Err(Error::ChartOverflow { norm });
    }
    Ok(GraphCoords {
        base: "u",
        complement: "cs",
        p,
    })
}

/// Truncated series for `∂E^u/∂E^c(v)`.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesResult {
    /// `cs × u` matrix in the chart coordinates at `p`.
    pub value: DMatrix<f64>,
    /// Norm of each term.
    pub term_norms: Vec<f64>,
    /// Geometric-mean decay ratio over the last terms.
    pub ratio: f64,
    pub tail_estimate: f64,
    /// `‖v − v_c‖`, where `v_c` is the oblique projection onto `E^c_p`.
    pub projection_defect: f64,
    /// Largest pointwise thmA_u ratio along the orbit.
    pub bunching_sup: f64,
}

/// Series for the derivative of `E^u` along `v ∈ E^c_p`, truncated at `n`
/// terms, with splittings computed along the backward orbit using
/// truncation `split_n`.
pub fn deu_dec_series(
    map: &dyn Diffeo,
    p: &TorusPoint,
    dims: Dims,
    v: &DVector<f64>,
    n: usize,
    split_n: usize,
) -> Result<SeriesResult> {
    if n == 0 {
        return Err(Error::precondition("series needs N >= 1"));
    }
    if dims.c == 0 {
        return Err(Error::precondition("series needs c >= 1"));
    }
    if v.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: v.len(),
        });
    }
    // splits[k] is the splitting at f^{-n+k} p, so splits[n] is at p
    let splits = splitting::orbit_splittings(map, p, dims, split_n, n, 0)?;
    let at = |k: usize| &splits[n - k]; // splitting at f^{-k} p

    let mut bunching_sup = 0.0_f64;
    for s in &splits[..n] {
        let r = bunching::bunching_ratio(map, s, bunching::BunchingCondition::ThmAU)?;
        bunching_sup = bunching_sup.max(r);
    }
    if bunching_sup >= 1.0 {
        return Err(Error::precondition(format!(
            "thmA_u bunching fails along the orbit (ratio {bunching_sup})"
        )));
    }

    let [vu, vc, vs] = at(0).decompose(v)?;
    let projection_defect = (vu + vs).norm();
    let u = dims.u;
    let cs = map.dim() - u;
    // v is transported by T^c f⁻¹ with a fresh center projection at each
    // point; pulling back chart coordinates by A⁻¹ alone would amplify
    // round-off in the stable direction.
    let mut w = vc;
    let mut m_cs = DMatrix::identity(cs, cs);
    let mut m_uinv = DMatrix::identity(u, u);
    let mut value = DMatrix::zeros(cs, u);
    let mut term_norms = Vec::with_capacity(n);
    for k in 0..n {
        // chart blocks at f^{-k-1} p, mapping into the chart at f^{-k} p
        let q = at(k + 1);
        let blocks = chart_blocks(map, &q.point, q, at(k))?;
        let jac = dynamics::jacobian_at(map, &q.point);
        let pulled = linalg::solve(&jac, &DMatrix::from_column_slice(w.len(), 1, w.as_slice()))?
            .column(0)
            .into_owned();
        w = q.decompose(&pulled)?[1].clone();
        let xi = blocks.frame_p.inverse() * &w;
        let term = &m_cs * blocks.c_apply(&xi) * &m_uinv;
        term_norms.push(linalg::op_norm(&term));
        value += term;
        m_cs *= &blocks.acscs;
        m_uinv = linalg::inverse(&blocks.auu)? * m_uinv;
    }
    let (ratio, tail_estimate) = decay(&term_norms, linalg::op_norm(&value))?;
    Ok(SeriesResult {
        value,
        term_norms,
        ratio,
        tail_estimate,
        projection_defect,
        bunching_sup,
    })
}

/// Decay ratio over the last terms and the geometric tail bound. Growth
/// is only an error when the terms are not already negligible.
pub(crate) fn decay(norms: &[f64], scale: f64) -> Result<(f64, f64)> {
    let n = norms.len();
    let last = norms.last().copied().unwrap_or(0.0);
    if n <= DECAY_WINDOW || last <= NEGLIGIBLE {
        return Ok((0.0, last));
    }
    let earlier = norms[n - 1 - DECAY_WINDOW];
    if earlier <= NEGLIGIBLE {
        return Ok((0.0, last));
    }
    let ratio = (last / earlier).powf(1.0 / DECAY_WINDOW as f64);
    if ratio >= 1.0 {
        if last <= 1e-15 * scale.max(1e-300) {
            return Ok((ratio, last));
        }
        return Err(Error::Divergence {
            what: "series terms".into(),
            ratio,
        });
    }
    Ok((ratio, last * ratio / (1.0 - ratio)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::zoo::{LinearToral, SkewProduct};
    use crate::splitting::compute_splitting;

    fn pt(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    fn blocks_at(map: &dyn Diffeo, p: &TorusPoint) -> ChartBlocks {
        let dims = Dims::new(1, 1, 1);
        let s = splitting::orbit_splittings(map, p, dims, 60, 0, 1).unwrap();
        chart_blocks(map, p, &s[0], &s[1]).unwrap()
    }

    #[test]
    fn linear_maps_have_zero_curvature() {
        let m = SkewProduct::standard();
        let b = blocks_at(&m, &pt(&[0.1, 0.2, 0.3]));
        assert!(b.c.iter().all(|c| linalg::max_abs(c) == 0.0));
        assert!(b.off_diagonal < 1e-12);
    }

    #[test]
    fn c_tensor_matches_fd_on_blocks() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let p = pt(&[0.1, 0.2, 0.3]);
        let b = blocks_at(&m, &p);
        let h = 1e-5;
        let f = |x: &DVector<f64>| {
            let j = chart_jacobian(&m, &b, x);
            let juu = j.view((0, 0), (1, 1)).into_owned();
            j.view((1, 0), (2, 1)) * linalg::inverse(&juu).unwrap()
        };
        let scale = b.c.iter().map(linalg::max_abs).fold(0.0, f64::max);
        assert!(scale > 1e-3);
        for k in 0..3 {
            let mut e = DVector::zeros(3);
            e[k] = h;
            let fd = (f(&e) - f(&(-e.clone()))) / (2.0 * h);
            assert!(linalg::max_abs(&(fd - &b.c[k])) <= 1e-6 * scale);
        }
    }

    #[test]
    fn auu_conjugate_to_unstable_restriction() {
        let m = SkewProduct::perturbed(0.05).unwrap();
        let p = pt(&[0.4, 0.8, 0.15]);
        let s = compute_splitting(&m, &p, Dims::new(1, 1, 1), 60).unwrap();
        let b = blocks_at(&m, &p);
        let tu = dynamics::jacobian_at(&m, &p) * &s.eu.basis;
        let lhs = linalg::singular_values(&b.auu);
        let rhs = linalg::singular_values(&tu);
        assert!((lhs[0] - rhs[0]).abs() <= 1e-8);
    }

    #[test]
    fn k_action_is_linearized_graph_transform() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let b = blocks_at(&m, &pt(&[0.7, 0.25, 0.6]));
        let x = DMatrix::from_column_slice(2, 1, &[0.3, -0.8]);
        let h = 1e-6;
        let plus = b.graph_transform(&(&x * h)).unwrap();
        let minus = b.graph_transform(&(&x * -h)).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let k = b.k_apply(&x).unwrap();
        assert!(linalg::max_abs(&(fd - &k)) <= 1e-7 * linalg::max_abs(&k).max(1.0));
    }

    #[test]
    fn series_vanishes_on_affine_maps() {
        let m = SkewProduct::standard();
        let v = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let r = deu_dec_series(&m, &pt(&[0.3, 0.1, 0.9]), Dims::new(1, 1, 1), &v, 30, 60).unwrap();
        assert!(linalg::max_abs(&r.value) <= 1e-14);
    }

    #[test]
    fn series_zero_vector_is_zero() {
        let m = SkewProduct::perturbed(0.02).unwrap();
        let v = DVector::zeros(3);
        let r = deu_dec_series(&m, &pt(&[0.3, 0.1, 0.9]), Dims::new(1, 1, 1), &v, 20, 60).unwrap();
        assert_eq!(linalg::max_abs(&r.value), 0.0);
    }

    #[test]
    fn series_rejects_anosov() {
        let cat = LinearToral::cat();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(deu_dec_series(&cat, &pt(&[0.1, 0.2]), Dims::new(1, 0, 1), &v, 10, 40).is_err());
    }

    #[test]
    fn decay_flags_growth() {
        let growing: Vec<f64> = (0..10).map(|k| 1.1_f64.powi(k)).collect();
        assert!(matches!(decay(&growing, 1.0), Err(Error::Divergence { .. })));
        let shrinking: Vec<f64> = (0..10).map(|k| 0.5_f64.powi(k)).collect();
        let (ratio, tail) = decay(&shrinking, 1.0).unwrap();
        assert!((ratio - 0.5).abs() < 1e-12);
        assert!((tail - 0.5_f64.powi(9)).abs() < 1e-12);
    }
}
