//! Parameter dependence: the hyperbolic lift of the variation field, curves
//! integrated from it, and the parameter derivative of invariant bundles.
//!
//! The evaluation map `F(p, t) = (f_t p, t)` has derivative
//! `[[Df_t, g], [0, 1]]` with `g = ∂_t f_t`. Its center bundle at `p` is
//! spanned by `E^c_p × 0` and one vector `(h(p), 1)` with `h(p)` in
//! `E^u ⊕ E^s`. Invariance gives `h^u(fp) = Df h^u(p) + Π^u g(p)` and
//! `h^s(fp) = Df h^s(p) + Π^s g(p)`, solved by the series below.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{self, Diffeo, Family};
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::TorusPoint;
use crate::partial_deriv::decay;
use crate::splitting::{self, default_seed, Dims, Splitting};

pub mod ddc;
pub mod grid;
pub mod theorem_d;

pub use ddc::{constant_path, dynamically_defined_curve, eu_along_ddc, DDCurve, EuTable};
pub use grid::OperatorGrid;
pub use theorem_d::{conjugacy_closed_form, theorem_c_check, theorem_d_derivative, ThmCOptions, ThmCReport, ThmDOptions, ThmDResult, Tracked};

/// Truncations used by the lift series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LiftOptions {
    pub dims: Dims,
    /// Number of series terms.
    pub n: usize,
    /// Orbit truncation for the splittings.
    pub split_n: usize,
}

impl LiftOptions {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            n: splitting::DEFAULT_N,
            split_n: splitting::DEFAULT_N,
        }
    }
}

/// Which orbit point the `k`-th term reads `g` at, how many steps it is
/// transported, and its sign.
///
/// Unstable part: `sign · Tf^{-(k+transport)} Π^u g(f^{k+read} p)`.
/// Stable part: `sign · Tf^{k+transport} Π^s g(f^{-k-read} p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexConvention {
    pub read_shift: usize,
    pub transport_shift: usize,
    pub sign: i8,
}

/// Frozen by agreement with the graph-transform oracle.
pub const UNSTABLE_CONVENTION: IndexConvention = IndexConvention {
    read_shift: 0,
    transport_shift: 1,
    sign: -1,
};

/// Frozen by agreement with the graph-transform oracle.
pub const STABLE_CONVENTION: IndexConvention = IndexConvention {
    read_shift: 1,
    transport_shift: 0,
    sign: 1,
};

/// Every shift in `{0, 1}` with both signs.
pub fn candidate_conventions() -> Vec<IndexConvention> {
    let mut out = Vec::with_capacity(8);
    for read_shift in 0..2 {
        for transport_shift in 0..2 {
            for sign in [1, -1] {
                out.push(IndexConvention {
                    read_shift,
                    transport_shift,
                    sign,
                });
            }
        }
    }
    out
}

/// Hyperbolic components of the lifted parameter direction at `p`.
#[derive(Debug, Clone, Serialize)]
pub struct CenterLift {
    pub point: TorusPoint,
    pub t: f64,
    pub hu: DVector<f64>,
    pub hs: DVector<f64>,
    pub n: usize,
    pub tail_estimate: f64,
    pub ratio: f64,
    /// Distance of `hu`, `hs` from their planes.
    pub projection_defect: f64,
}

impl CenterLift {
    pub fn value(&self) -> DVector<f64> {
        &self.hu + &self.hs
    }
}

/// Orbit data for `f_t` on `f^{-m}p … f^{m}p`.
struct LiftOrbit {
    m: usize,
    splits: Vec<Splitting>,
    jac: Vec<DMatrix<f64>>,
    g: Vec<DVector<f64>>,
}

impl LiftOrbit {
    fn build(family: &dyn Family, t: f64, p: &TorusPoint, opts: &LiftOptions, m: usize) -> Result<Self> {
        let map = family.at(t)?;
        let splits = splitting::orbit_splittings(map.as_ref(), p, opts.dims, opts.split_n, m, m)?;
        let jac = splits
            .iter()
            .map(|s| dynamics::jacobian_at(map.as_ref(), &s.point))
            .collect();
        let g = splits
            .iter()
            .map(|s| family.variation(t, &s.point))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { m, splits, jac, g })
    }

    fn idx(&self, j: i64) -> usize {
        (j + self.m as i64) as usize
    }

    fn split(&self, j: i64) -> &Splitting {
        &self.splits[self.idx(j)]
    }

    fn part(&self, j: i64, v: &DVector<f64>, which: usize) -> Result<DVector<f64>> {
        Ok(self.split(j).decompose(v)?[which].clone())
    }
}

const U_PART: usize = 0;
const S_PART: usize = 2;

fn sum_terms(terms: Vec<DVector<f64>>) -> Result<(DVector<f64>, f64, f64)> {
    let norms: Vec<f64> = terms.iter().map(|v| v.norm()).collect();
    let d = terms.first().map(|v| v.len()).unwrap_or(0);
    let total = terms.into_iter().fold(DVector::zeros(d), |acc, v| acc + v);
    let (ratio, tail) = decay(&norms, total.norm())?;
    Ok((total, ratio, tail))
}

fn unstable_sum(orbit: &LiftOrbit, n: usize, conv: IndexConvention) -> Result<(DVector<f64>, f64, f64)> {
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let level = (k + conv.transport_shift) as i64;
        let g = &orbit.g[orbit.idx((k + conv.read_shift) as i64)];
        let mut w = orbit.part(level, g, U_PART)?;
        // pull back one step at a time, re-projecting onto E^u
        for j in (0..level).rev() {
            let pulled = linalg::solve(&orbit.jac[orbit.idx(j)], &DMatrix::from_column_slice(w.len(), 1, w.as_slice()))?
                .column(0)
                .into_owned();
            w = orbit.part(j, &pulled, U_PART)?;
        }
        terms.push(w * f64::from(conv.sign));
    }
    sum_terms(terms)
}

fn stable_sum(orbit: &LiftOrbit, n: usize, conv: IndexConvention) -> Result<(DVector<f64>, f64, f64)> {
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let level = -((k + conv.transport_shift) as i64);
        let g = &orbit.g[orbit.idx(-((k + conv.read_shift) as i64))];
        let mut w = orbit.part(level, g, S_PART)?;
        for j in level..0 {
            w = orbit.part(j + 1, &(&orbit.jac[orbit.idx(j)] * w), S_PART)?;
        }
        terms.push(w * f64::from(conv.sign));
    }
    sum_terms(terms)
}

fn lift_from_orbit(
    orbit: &LiftOrbit,
    t: f64,
    opts: &LiftOptions,
    conv_u: IndexConvention,
    conv_s: IndexConvention,
) -> Result<CenterLift> {
    let (hu, ratio_u, tail_u) = unstable_sum(orbit, opts.n, conv_u)?;
    let (hs, ratio_s, tail_s) = stable_sum(orbit, opts.n, conv_s)?;
    let at_p = orbit.split(0);
    let [_, hu_c, hu_s] = at_p.decompose(&hu)?;
    let [hs_u, hs_c, _] = at_p.decompose(&hs)?;
    let projection_defect = (hu_c + hu_s).norm().max((hs_u + hs_c).norm());
    Ok(CenterLift {
        point: at_p.point.clone(),
        t,
        hu,
        hs,
        n: opts.n,
        tail_estimate: tail_u + tail_s,
        ratio: ratio_u.max(ratio_s),
        projection_defect,
    })
}

/// Lift with explicit index conventions; used to select the frozen ones.
pub fn pc_series_with(
    family: &dyn Family,
    t: f64,
    p: &TorusPoint,
    opts: &LiftOptions,
    conv_u: IndexConvention,
    conv_s: IndexConvention,
) -> Result<CenterLift> {
    check_lift(family, t, opts)?;
    let orbit = LiftOrbit::build(family, t, p, opts, opts.n + 1)?;
    lift_from_orbit(&orbit, t, opts, conv_u, conv_s)
}

/// Hyperbolic lift `h^u + h^s` of the parameter direction at `(p, t)`.
pub fn pc_series(family: &dyn Family, t: f64, p: &TorusPoint, opts: &LiftOptions) -> Result<CenterLift> {
    pc_series_with(family, t, p, opts, UNSTABLE_CONVENTION, STABLE_CONVENTION)
}

fn check_lift(family: &dyn Family, t: f64, opts: &LiftOptions) -> Result<()> {
    family.check_param(t)?;
    if opts.n == 0 {
        return Err(Error::precondition("series needs N >= 1"));
    }
    if opts.dims.total() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: opts.dims.total(),
        });
    }
    Ok(())
}

/// Independent oracle: pushes `(u+c+1)`- and `(c+s+1)`-planes of the
/// evaluation map's derivative `[[Df_t, g], [0, 1]]` forward and backward
/// along the orbit, intersects them, and reads off the hyperbolic part of
/// the vector `(w, 1)` in the intersection.
pub fn graph_transform_lift(family: &dyn Family, t: f64, p: &TorusPoint, opts: &LiftOptions) -> Result<DVector<f64>> {
    check_lift(family, t, opts)?;
    let map = family.at(t)?;
    let dims = opts.dims;
    let d = family.dim();
    let m = opts.split_n;
    let mut points = dynamics::orbit_uncapped(map.as_ref(), p, -(m as i64))?;
    points.reverse();
    points.extend(dynamics::orbit_uncapped(map.as_ref(), p, m as i64)?.into_iter().skip(1));
    let ext = points
        .iter()
        .map(|q| extended_jacobian(map.as_ref(), family, t, q))
        .collect::<Result<Vec<_>>>()?;

    let mut cu = default_seed(d + 1, dims.u + dims.c + 1);
    for e in &ext[..m] {
        cu = linalg::orthonormalize(&(e * cu), linalg::RANK_EPS)?;
    }
    let mut cs = default_seed(d + 1, dims.c + dims.s + 1);
    for e in ext[m..2 * m].iter().rev() {
        cs = linalg::orthonormalize(&linalg::solve(e, &cs)?, linalg::RANK_EPS)?;
    }
    let center = splitting::intersect(&cu, &cs, dims.c + 1)?;
    let last = center.row(d).transpose();
    let weight = last.norm_squared();
    if weight < 1e-20 {
        return Err(Error::degenerate("extended center has no parameter component", weight.sqrt()));
    }
    let w_full = &center * (last / weight);
    let w = w_full.rows(0, d).into_owned();
    let split = splitting::compute_splitting(map.as_ref(), p, dims, opts.split_n)?;
    let [wu, _, ws] = split.decompose(&w)?;
    Ok(wu + ws)
}

/// `[[Df_t(q), g(q)], [0, 1]]`.
pub fn extended_jacobian(map: &dyn Diffeo, family: &dyn Family, t: f64, q: &TorusPoint) -> Result<DMatrix<f64>> {
    let d = map.dim();
    let mut e = DMatrix::zeros(d + 1, d + 1);
    e.view_mut((0, 0), (d, d)).copy_from(&dynamics::jacobian_at(map, q));
    e.view_mut((0, d), (d, 1)).copy_from(&family.variation(t, q)?);
    e[(d, d)] = 1.0;
    Ok(e)
}

/// `span(E^c × 0, (h, 1))` as an orthonormal basis of `R^{d+1}`.
pub fn extended_center(split: &Splitting, h: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = h.len();
    let c = split.dims.c;
    let mut b = DMatrix::zeros(d + 1, c + 1);
    b.view_mut((0, 0), (d, c)).copy_from(&split.ec.basis);
    b.view_mut((0, c), (d, 1)).copy_from(h);
    b[(d, c)] = 1.0;
    linalg::orthonormalize(&b, linalg::RANK_EPS)
}

/// One-step fixed-point residuals of the assembled lift.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedPointResidual {
    /// Plane distance between the pushed graph at `p` and the graph at `fp`.
    pub plane: f64,
    /// `‖Π^{hyp}_{fp}(Df h(p) + g(p)) − h(fp)‖`.
    pub vector: f64,
}

pub fn fixed_point_residual(family: &dyn Family, t: f64, p: &TorusPoint, opts: &LiftOptions) -> Result<FixedPointResidual> {
    check_lift(family, t, opts)?;
    let map = family.at(t)?;
    let orbit = LiftOrbit::build(family, t, p, opts, opts.n + 2)?;
    let here = lift_from_orbit(&orbit, t, opts, UNSTABLE_CONVENTION, STABLE_CONVENTION)?;
    // same orbit data, recentred at fp
    let shifted = LiftOrbit {
        m: orbit.m - 1,
        splits: orbit.splits[2..].to_vec(),
        jac: orbit.jac[2..].to_vec(),
        g: orbit.g[2..].to_vec(),
    };
    let there = lift_from_orbit(&shifted, t, opts, UNSTABLE_CONVENTION, STABLE_CONVENTION)?;
    let at_p = orbit.split(0);
    let at_fp = orbit.split(1);
    let ext = extended_jacobian(map.as_ref(), family, t, &at_p.point)?;
    let pushed = linalg::orthonormalize(&(ext * extended_center(at_p, &here.value())?), linalg::RANK_EPS)?;
    let target = extended_center(at_fp, &there.value())?;
    let image = &orbit.jac[orbit.idx(0)] * here.value() + &orbit.g[orbit.idx(0)];
    let [iu, _, is] = at_fp.decompose(&image)?;
    Ok(FixedPointResidual {
        plane: splitting::subspace_distance(&pushed, &target),
        vector: (iu + is - there.value()).norm(),
    })
}

/// Velocity of a dynamically defined curve: the center part of `v` plus
/// the hyperbolic lift at `(q, t)`. The lift does not depend on `v`.
pub fn ddc_velocity(
    family: &dyn Family,
    t: f64,
    q: &TorusPoint,
    v: &DVector<f64>,
    opts: &LiftOptions,
) -> Result<(DVector<f64>, CenterLift)> {
    let lift = pc_series(family, t, q, opts)?;
    if v.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: v.len(),
        });
    }
    let vc = if opts.dims.c == 0 || v.iter().all(|x| *x == 0.0) {
        DVector::zeros(v.len())
    } else {
        let map = family.at(t)?;
        let split = splitting::compute_splitting(map.as_ref(), q, opts.dims, opts.split_n)?;
        split.decompose(v)?[1].clone()
    };
    Ok((vc + lift.value(), lift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::zoo::{ConjugatedFamily, ConstantFamily, LinearToral, RotationFamily, SineField, SkewProduct};
    use std::sync::Arc;

    fn pt(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    const DIMS: Dims = Dims { u: 1, c: 1, s: 1 };

    /// Conjugation by an `x`-shear driven by `θ`, whose variation has
    /// hyperbolic components.
    fn shear_family() -> ConjugatedFamily {
        ConjugatedFamily::new(
            Arc::new(SkewProduct::standard()),
            SineField::new(2, 0, 1.0, 3).unwrap(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn rotation_family_lift_vanishes() {
        let f = RotationFamily::standard();
        let lift = pc_series(&f, 0.0, &pt(&[0.3, 0.6, 0.1]), &LiftOptions::new(DIMS)).unwrap();
        assert!(lift.value().norm() < 1e-14);
    }

    #[test]
    fn constant_family_lift_vanishes() {
        let f = ConstantFamily::new(Arc::new(SkewProduct::perturbed(0.02).unwrap()), 0.1);
        let lift = pc_series(&f, 0.0, &pt(&[0.3, 0.6, 0.1]), &LiftOptions::new(DIMS)).unwrap();
        assert_eq!(lift.value().norm(), 0.0);
    }

    #[test]
    fn oracle_selects_frozen_convention() {
        let f = shear_family();
        let opts = LiftOptions::new(DIMS);
        for (t, c) in [(0.0, [0.1, 0.2, 0.3]), (0.03, [0.6, 0.35, 0.8])] {
            let p = pt(&c);
            let oracle = graph_transform_lift(&f, t, &p, &opts).unwrap();
            assert!(oracle.norm() > 1e-2);
            let mut matches = Vec::new();
            for cu in candidate_conventions() {
                for cs in candidate_conventions() {
                    let lift = pc_series_with(&f, t, &p, &opts, cu, cs).unwrap();
                    if (lift.value() - &oracle).norm() <= 1e-9 * oracle.norm() {
                        matches.push((cu, cs));
                    }
                }
            }
            assert_eq!(matches, vec![(UNSTABLE_CONVENTION, STABLE_CONVENTION)]);
        }
    }

    #[test]
    fn lift_is_hyperbolic_part_of_conjugating_field() {
        // for a conjugacy ψ_t = id + t w the lift at t = 0 is the E^u ⊕ E^s part of w
        let f = shear_family();
        let q = pt(&[0.1, 0.2, 0.3]);
        let opts = LiftOptions::new(DIMS);
        let (vel, _) = ddc_velocity(&f, 0.0, &q, &DVector::zeros(3), &opts).unwrap();
        let split = splitting::compute_splitting(&SkewProduct::standard(), &q, DIMS, 60).unwrap();
        let w = f.field().value(&q.to_vector());
        let [wu, _, ws] = split.decompose(&w).unwrap();
        assert!(vel.norm() > 0.1);
        assert!((vel - wu - ws).norm() <= 1e-4);
    }

    #[test]
    fn lift_ignores_v() {
        let f = shear_family();
        let q = pt(&[0.4, 0.7, 0.2]);
        let opts = LiftOptions::new(DIMS);
        let (_, a) = ddc_velocity(&f, 0.02, &q, &DVector::from_vec(vec![0.0, 0.0, 1.0]), &opts).unwrap();
        let (_, b) = ddc_velocity(&f, 0.02, &q, &DVector::from_vec(vec![0.3, -2.0, 5.0]), &opts).unwrap();
        assert_eq!(a.hu, b.hu);
        assert_eq!(a.hs, b.hs);
    }

    #[test]
    fn constant_family_velocity_is_v() {
        let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
        let v = DVector::from_vec(vec![0.0, 0.0, 0.7]);
        let (vel, _) = ddc_velocity(&f, 0.0, &pt(&[0.2, 0.1, 0.5]), &v, &LiftOptions::new(DIMS)).unwrap();
        assert!((vel - v).norm() < 1e-15);
    }

    #[test]
    fn fixed_point_residual_small() {
        let f = ConjugatedFamily::standard();
        let r = fixed_point_residual(&f, 0.0, &pt(&[0.1, 0.2, 0.3]), &LiftOptions::new(DIMS)).unwrap();
        assert!(r.plane <= 1e-8 && r.vector <= 1e-8);
        let r = fixed_point_residual(&shear_family(), 0.04, &pt(&[0.8, 0.1, 0.45]), &LiftOptions::new(DIMS)).unwrap();
        assert!(r.plane <= 1e-8 && r.vector <= 1e-8);
    }

    #[test]
    fn anosov_lift_matches_oracle() {
        let base: crate::dynamics::MapSpec = Arc::new(LinearToral::cat());
        let f = ConjugatedFamily::new(base, SineField::new(0, 1, 1.0, 2).unwrap(), 0.1).unwrap();
        let opts = LiftOptions::new(Dims::new(1, 0, 1));
        let p = pt(&[0.15, 0.55]);
        let lift = pc_series(&f, 0.02, &p, &opts).unwrap();
        let oracle = graph_transform_lift(&f, 0.02, &p, &opts).unwrap();
        assert!((lift.value() - oracle).norm() <= 1e-9);
    }
}
