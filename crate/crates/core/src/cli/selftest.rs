//! Closed-form sanity cases across every module.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::report::{num, Csv, Relation};
use super::{CliError, Ctx};
use crate::dynamics::zoo::{ConstantFamily, LinearToral, RotationFamily, SkewProduct};
use crate::dynamics::{self, Diffeo};
use crate::error::Result;
use crate::family::{self, ddc, LiftOptions, ThmCOptions, ThmDOptions, Tracked};
use crate::linalg;
use crate::manifold::{self, Frame, TorusPoint};
use crate::partial_deriv::{self, curves};
use crate::splitting::{self, bunching, Bundle, Dims, Plane};

const T3: Dims = Dims { u: 1, c: 1, s: 1 };
const T2: Dims = Dims { u: 1, c: 0, s: 1 };

fn pt(c: &[f64]) -> TorusPoint {
    TorusPoint::wrap(c).expect("finite literal")
}

fn vec_err(a: &DVector<f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn col(c: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(c.len(), 1, c)
}

type Case = (&'static str, f64, fn() -> Result<f64>);

fn cases() -> Vec<Case> {
    vec![
        ("wrap_mod_one", 1e-15, || {
            Ok(vec_err(&pt(&[1.25, -0.5]).to_vector(), &[0.25, 0.5]))
        }),
        ("wrap_origin", 0.0, || Ok(vec_err(&pt(&[0.0, 0.0, 0.0]).to_vector(), &[0.0; 3]))),
        ("wrap_lattice", 0.0, || Ok(vec_err(&pt(&[2.0, 3.0]).to_vector(), &[0.0, 0.0]))),
        ("displacement_minimal", 1e-15, || {
            Ok(vec_err(&manifold::displacement(&pt(&[0.9, 0.1]), &pt(&[0.1, 0.2]))?, &[0.2, 0.1]))
        }),
        ("displacement_self", 0.0, || {
            let p = pt(&[0.3, 0.4]);
            Ok(manifold::displacement(&p, &p)?.norm())
        }),
        ("displacement_half", 0.0, || {
            Ok(vec_err(&manifold::displacement(&pt(&[0.0]), &pt(&[0.5]))?, &[-0.5]))
        }),
        ("frame_identity", 0.0, || {
            let f = Frame::new(
                pt(&[0.0, 0.0]),
                vec![col(&[1.0, 0.0]), col(&[0.0, 1.0])],
            )?;
            Ok(linalg::max_abs(&(f.matrix() - DMatrix::identity(2, 2))))
        }),
        ("invert_cat", 1e-14, || {
            let cat = LinearToral::cat();
            let q = pt(&[0.3, 0.7]);
            let p = dynamics::invert(&cat, &q, dynamics::INVERT_TOL)?;
            dynamics::eval(&cat, &p).distance(&q)
        }),
        ("invert_identity", 0.0, || {
            let id = LinearToral::new("identity", DMatrix::identity(2, 2))?;
            let q = pt(&[0.3, 0.7]);
            dynamics::invert(&id, &q, dynamics::INVERT_TOL)?.distance(&q)
        }),
        ("orbit_fixed_point", 0.0, || {
            let o = dynamics::orbit(&LinearToral::cat(), &pt(&[0.0, 0.0]), 5)?;
            let bad = if o.len() == 6 { 0.0 } else { 1.0 };
            Ok(o.iter().map(|q| q.to_vector().norm()).fold(bad, f64::max))
        }),
        ("orbit_rational_rotation", 1e-15, || {
            let o = dynamics::orbit(&LinearToral::rotation_1d(0.25), &pt(&[0.0]), 4)?;
            let want = [0.0, 0.25, 0.5, 0.75, 0.0];
            Ok(o.iter().zip(want).map(|(q, w)| (q.coords()[0] - w).abs()).fold(0.0, f64::max))
        }),
        ("linear_toral_derivatives", 0.0, || {
            let cat = LinearToral::cat();
            let x = DVector::from_vec(vec![0.3, 0.8]);
            let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
            Ok(linalg::max_abs(&(cat.jacobian(&x) - a)).max(cat.hessian(&x).max_abs()))
        }),
        ("perturbed_at_zero_is_skew", 1e-15, || {
            let a = SkewProduct::standard();
            let b = SkewProduct::perturbed(0.0)?;
            let mut worst = 0.0_f64;
            for c in [[0.1, 0.2, 0.3], [0.7, 0.5, 0.9], [0.33, 0.66, 0.01]] {
                let p = pt(&c);
                worst = worst.max(dynamics::eval(&a, &p).distance(&dynamics::eval(&b, &p))?);
            }
            Ok(worst)
        }),
        ("push_eigendirection", 1e-12, || {
            let cat = LinearToral::cat();
            let phi = (1.0 + 5f64.sqrt()) / 2.0;
            let plane = Plane::new(pt(&[0.0, 0.0]), &col(&[phi, 1.0]))?;
            splitting::plane_distance(&splitting::push_plane(&cat, &plane, 7)?, &plane)
        }),
        ("push_axis", 1e-15, || {
            let cat = LinearToral::cat();
            let plane = Plane::new(pt(&[0.0, 0.0]), &col(&[1.0, 0.0]))?;
            let image = splitting::push_plane(&cat, &plane, 1)?;
            let want = Plane::new(pt(&[0.0, 0.0]), &col(&[2.0, 1.0]))?;
            splitting::plane_distance(&image, &want)
        }),
        ("skew_unstable_flat", 1e-12, || {
            let eu = splitting::unstable_plane(&SkewProduct::standard(), &pt(&[0.1, 0.2, 0.3]), 1, 40)?;
            Ok(eu.plane.basis[(2, 0)].abs())
        }),
        ("skew_center_axis", 1e-12, || {
            let ec = splitting::center_plane(&SkewProduct::standard(), &pt(&[0.1, 0.2, 0.3]), T3, 40)?;
            Ok(splitting::subspace_distance(&ec.basis, &col(&[0.0, 0.0, 1.0])))
        }),
        ("center_needs_c", 0.0, || {
            let r = splitting::center_plane(&LinearToral::cat(), &pt(&[0.1, 0.2]), T2, 40);
            Ok(if r.is_err() { 0.0 } else { 1.0 })
        }),
        ("distance_self", 0.0, || {
            let p = Plane::new(pt(&[0.0, 0.0]), &col(&[0.6, 0.8]))?;
            splitting::plane_distance(&p, &p)
        }),
        ("distance_orthogonal", 1e-15, || {
            let o = pt(&[0.0, 0.0]);
            let d = splitting::plane_distance(
                &Plane::new(o.clone(), &col(&[1.0, 0.0]))?,
                &Plane::new(o, &col(&[0.0, 1.0]))?,
            )?;
            Ok((d - 1.0).abs())
        }),
        ("distance_rotation", 1e-15, || {
            let o = pt(&[0.0, 0.0]);
            let d = splitting::plane_distance(
                &Plane::new(o.clone(), &col(&[1.0, 0.0]))?,
                &Plane::new(o, &col(&[0.1_f64.cos(), 0.1_f64.sin()]))?,
            )?;
            Ok((d - 0.1_f64.sin()).abs())
        }),
        ("bunching_empty_center", 1e-12, || {
            let cat = LinearToral::cat();
            let s = splitting::compute_splitting(&cat, &pt(&[0.2, 0.4]), T2, 40)?;
            let r = bunching::bunching_ratio(&cat, &s, bunching::BunchingCondition::ThmAU)?;
            let lambda = (3.0 + 5f64.sqrt()) / 2.0;
            Ok((r - 1.0 / lambda).abs())
        }),
        ("chart_curvature_skew", 0.0, || {
            let m = SkewProduct::standard();
            let p = pt(&[0.1, 0.2, 0.3]);
            let s0 = splitting::compute_splitting(&m, &p, T3, 40)?;
            let s1 = splitting::compute_splitting(&m, &dynamics::eval(&m, &p), T3, 40)?;
            let b = partial_deriv::chart_blocks(&m, &p, &s0, &s1)?;
            Ok(b.c.iter().map(linalg::max_abs).fold(0.0, f64::max))
        }),
        ("series_vanishes_affine", 1e-14, || {
            let r = partial_deriv::deu_dec_series(
                &SkewProduct::standard(),
                &pt(&[0.1, 0.2, 0.3]),
                T3,
                &DVector::from_vec(vec![0.0, 0.0, 1.0]),
                30,
                40,
            )?;
            Ok(linalg::max_abs(&r.value))
        }),
        ("series_zero_vector", 0.0, || {
            let r = partial_deriv::deu_dec_series(
                &SkewProduct::perturbed(0.02)?,
                &pt(&[0.1, 0.2, 0.3]),
                T3,
                &DVector::zeros(3),
                30,
                40,
            )?;
            Ok(linalg::max_abs(&r.value))
        }),
        ("center_curve_theta_line", 1e-12, || {
            let p = pt(&[0.1, 0.2, 0.3]);
            let c = curves::center_curve(&SkewProduct::standard(), &p, &DVector::from_vec(vec![0.0, 0.0, 1.0]), T3, 1e-3, 100, 40)?;
            let mut worst = 0.0_f64;
            for q in &c.points {
                worst = worst.max((q.coords()[0] - 0.1).abs()).max((q.coords()[1] - 0.2).abs());
            }
            Ok(worst)
        }),
        ("center_curve_empty", 0.0, || {
            let p = pt(&[0.1, 0.2, 0.3]);
            let c = curves::center_curve(&SkewProduct::standard(), &p, &DVector::from_vec(vec![0.0, 0.0, 1.0]), T3, 1e-3, 0, 40)?;
            Ok(if c.points == vec![p] { 0.0 } else { 1.0 })
        }),
        ("fd_theta_line", 1e-12, || {
            let m = SkewProduct::standard();
            let v = DVector::from_vec(vec![0.0, 0.0, 1.0]);
            let c = curves::symmetric_curve(&m, &pt(&[0.1, 0.2, 0.3]), &v, Bundle::C, T3, 1e-4, 10, 40)?;
            let fwd = curves::fd_derivative_along_curve(&m, &c, T3, 1e-3, 40)?;
            let back = curves::fd_derivative_along_curve(&m, &c.reversed(), T3, 1e-3, 40)?;
            Ok(linalg::max_abs(&fwd).max(linalg::max_abs(&back)))
        }),
        ("regularity_flat_sentinel", 0.0, || {
            let scales: Vec<f64> = (4..=7).map(|k| 0.5_f64.powi(k)).collect();
            let fit = curves::regularity_estimate(&SkewProduct::standard(), &pt(&[0.1, 0.2, 0.3]), Bundle::C, &scales, T3, 40)?;
            Ok(if fit.slope == curves::Slope::Flat { 0.0 } else { 1.0 })
        }),
        ("lift_rotation_family", 1e-12, || {
            let l = family::pc_series(&RotationFamily::standard(), 0.0, &pt(&[0.1, 0.2, 0.3]), &LiftOptions::new(T3))?;
            Ok(l.value().norm())
        }),
        ("lift_constant_family", 0.0, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::perturbed(0.02)?), 0.1);
            Ok(family::pc_series(&f, 0.0, &pt(&[0.1, 0.2, 0.3]), &LiftOptions::new(T3))?.value().norm())
        }),
        ("lift_correction_constant_family", 0.0, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
            let v = DVector::from_vec(vec![0.0, 0.0, 1.0]);
            let (_, lift) = family::ddc_velocity(&f, 0.0, &pt(&[0.1, 0.2, 0.3]), &v, &LiftOptions::new(T3))?;
            Ok(lift.value().norm())
        }),
        // the center projection of a center vector is exact up to round-off
        ("velocity_constant_family", 1e-15, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
            let p = pt(&[0.1, 0.2, 0.3]);
            let ec = splitting::center_plane(&SkewProduct::standard(), &p, T3, 40)?.basis;
            let v = ec.column(0).into_owned();
            let (vel, _) = family::ddc_velocity(&f, 0.0, &p, &v, &LiftOptions::new(T3))?;
            Ok((vel - v).norm())
        }),
        ("velocity_rotation_family", 1e-12, || {
            let (vel, _) = family::ddc_velocity(&RotationFamily::standard(), 0.0, &pt(&[0.1, 0.2, 0.3]), &DVector::zeros(3), &LiftOptions::new(T3))?;
            Ok(vel.norm())
        }),
        ("ddc_constant_family", 0.0, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
            let p = pt(&[0.2, 0.3, 0.4]);
            let c = ddc::dynamically_defined_curve(&f, &p, &DVector::zeros(3), 0.01, 1e-3, &LiftOptions::new(T3))?;
            c.points.iter().map(|q| q.distance(&p)).try_fold(0.0, |a, d| d.map(|d| f64::max(a, d)))
        }),
        ("ddc_rotation_family", 1e-12, || {
            let p = pt(&[0.2, 0.3, 0.4]);
            let c = ddc::dynamically_defined_curve(&RotationFamily::standard(), &p, &DVector::zeros(3), 0.005, 1e-3, &LiftOptions::new(T3))?;
            c.points.iter().map(|q| q.distance(&p)).try_fold(0.0, |a, d| d.map(|d| f64::max(a, d)))
        }),
        ("eu_constant_family", 1e-10, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
            let opts = LiftOptions::new(T3);
            let c = ddc::dynamically_defined_curve(&f, &pt(&[0.2, 0.3, 0.4]), &DVector::zeros(3), 0.005, 1e-3, &opts)?;
            let t = ddc::eu_along_ddc(&f, &c, &opts)?;
            Ok(t.quotients.iter().map(linalg::max_abs).fold(0.0, f64::max))
        }),
        ("thmd_rotation_center", 1e-8, || {
            let r = family::theorem_d_derivative(&RotationFamily::standard(), &pt(&[0.1, 0.2, 0.3]), Tracked::Center, &ThmDOptions::new(T3))?;
            Ok(linalg::max_abs(&r.derivative).max(linalg::max_abs(&r.fd)))
        }),
        ("thmc_constant_family", 1e-10, || {
            let f = ConstantFamily::new(Arc::new(SkewProduct::standard()), 0.1);
            let r = family::theorem_c_check(&f, &pt(&[0.2, 0.6, 0.1]), &DVector::zeros(3), &ThmCOptions::new(T3))?;
            Ok(linalg::max_abs(&r.left).max(linalg::max_abs(&r.right)))
        }),
        ("thmc_rotation_family", 1e-10, || {
            let r = family::theorem_c_check(&RotationFamily::standard(), &pt(&[0.2, 0.6, 0.1]), &DVector::zeros(3), &ThmCOptions::new(T3))?;
            Ok(linalg::max_abs(&r.left).max(linalg::max_abs(&r.right)))
        }),
    ]
}

pub(super) fn run(ctx: &mut Ctx) -> std::result::Result<(), CliError> {
    ctx.cfg.restrict(&["seed"], &[])?;
    let mut csv = Csv::new(
        ["name", "value", "tolerance", "pass", "error"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (name, tol, case) in cases() {
        let (value, error) = match case() {
            Ok(v) => (v, String::new()),
            Err(e) => (f64::NAN, e.to_string()),
        };
        ctx.assert(name, value, Relation::AtMost, tol);
        let pass = ctx.results.last().expect("just pushed").pass;
        csv.push(vec![name.into(), num(value), num(tol), pass.to_string(), error]);
    }
    ctx.write("selftest.csv", &csv)?;
    Ok(())
}
