//! Subcommand pipelines. Each one validates its keys, sweeps its points in
//! parallel, writes its tables in point order and records assertions.

use nalgebra::{DMatrix, DVector};

use super::report::{coord_cells, coord_header, matrix_cells, matrix_header, num, Csv, Relation};
use super::{sweep, CliError, Ctx, PointDefault};
use crate::dynamics::{self, Family};
use crate::family::{
    self, conjugacy_closed_form, ddc, theorem_c_check, theorem_d_derivative, LiftOptions, OperatorGrid,
    ThmCOptions, ThmDOptions, Tracked,
};
use crate::linalg;
use crate::manifold::TorusPoint;
use crate::partial_deriv::{self, curves};
use crate::splitting::{self, bunching, Bundle, Dims, DEFAULT_N};

fn headed(lead: &[&str], d: usize, rest: Vec<String>) -> Vec<String> {
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    h.extend(coord_header(d));
    h.extend(rest);
    h
}

fn lead_cells(i: usize, p: &TorusPoint) -> Vec<String> {
    let mut r = vec![i.to_string()];
    r.extend(coord_cells(p));
    r
}

fn record_failures<T>(ctx: &mut Ctx, rows: &[crate::Result<T>]) {
    let failed = rows.iter().filter(|r| r.is_err()).count();
    ctx.assert("failed_points", failed as f64, Relation::AtMost, 0.0);
}

fn max_over<T>(rows: &[crate::Result<T>], f: impl Fn(&T) -> f64) -> Option<f64> {
    rows.iter()
        .filter_map(|r| r.as_ref().ok())
        .map(f)
        .reduce(f64::max)
}

fn min_over<T>(rows: &[crate::Result<T>], f: impl Fn(&T) -> Option<f64>) -> Option<f64> {
    rows.iter()
        .filter_map(|r| r.as_ref().ok())
        .filter_map(f)
        .reduce(f64::min)
}

/// Orthonormal bases of the `u` dominant, `c` middle and `s` weakest
/// eigenspaces of a matrix with real spectrum, each the kernel of the
/// product of `A − λI` over its eigenvalues.
pub(crate) fn linear_eigenspaces(a: &DMatrix<f64>, dims: Dims) -> Result<[DMatrix<f64>; 3], String> {
    let d = a.nrows();
    let ev = a.complex_eigenvalues();
    let scale = linalg::op_norm(a).max(1.0);
    if ev.iter().any(|z| z.im.abs() > 1e-12 * scale) {
        return Err("spectrum is not real".into());
    }
    let mut lam: Vec<f64> = ev.iter().map(|z| z.re).collect();
    lam.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let kernel = |bucket: &[f64]| -> DMatrix<f64> {
        let k = bucket.len();
        if k == 0 {
            return DMatrix::zeros(d, 0);
        }
        let mut prod = DMatrix::identity(d, d);
        for l in bucket {
            prod = (a - DMatrix::identity(d, d) * *l) * prod;
        }
        let svd = prod.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let cols: Vec<DVector<f64>> = idx[..k].iter().map(|&i| vt.row(i).transpose()).collect();
        DMatrix::from_columns(&cols)
    };
    Ok([
        kernel(&lam[..dims.u]),
        kernel(&lam[dims.u..dims.u + dims.c]),
        kernel(&lam[dims.u + dims.c..]),
    ])
}

struct SplitRow {
    split: splitting::Splitting,
    residuals: Vec<f64>,
    eigen: Vec<f64>,
}

const SPLITTING_KEYS: &[&str] = &[
    "map",
    "dims",
    "orbit.n",
    "points",
    "points.random",
    "seed",
    "tol.invariance",
    "tol.eigendirection",
];

pub(super) fn splitting(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(SPLITTING_KEYS, &["map"])?;
    let map = ctx.map()?;
    let d = map.dim();
    let dims = cfg.dims_or("dims", d)?;
    let n = cfg.positive_usize_or("orbit.n", DEFAULT_N)?;
    let tol_inv = ctx.tol("invariance", 1e-8)?;
    let tol_eig = ctx.tol("eigendirection", 1e-10)?;
    let points = ctx.points(d, PointDefault::Random(10))?;
    let oracle = if map.is_affine() {
        match linear_eigenspaces(&map.linear_part(), dims) {
            Ok(o) => Some(o),
            Err(e) => {
                ctx.warn(format!("no eigendecomposition oracle: {e}"));
                None
            }
        }
    } else {
        None
    };

    let mut bundles: Vec<(&str, fn(&splitting::Splitting) -> &splitting::Plane)> = vec![
        ("u", |s| &s.eu),
        ("s", |s| &s.es),
        ("cu", |s| &s.ecu),
        ("cs", |s| &s.ecs),
    ];
    if dims.c > 0 {
        bundles.push(("c", |s| &s.ec));
    }
    let rows = sweep(&points, |p| {
        let m = map.as_ref();
        let split = splitting::compute_splitting(m, p, dims, n)?;
        let image = splitting::compute_splitting(m, &dynamics::eval(m, p), dims, n)?;
        let residuals = bundles
            .iter()
            .map(|(_, get)| splitting::invariance_residual(m, get(&split), get(&image)))
            .collect::<crate::Result<Vec<_>>>()?;
        let eigen = match &oracle {
            None => Vec::new(),
            Some([ou, oc, os]) => {
                let mut e = vec![
                    splitting::subspace_distance(&split.eu.basis, ou),
                    splitting::subspace_distance(&split.es.basis, os),
                ];
                if dims.c > 0 {
                    e.push(splitting::subspace_distance(&split.ec.basis, oc));
                }
                e
            }
        };
        Ok(SplitRow { split, residuals, eigen })
    });

    let mut rest = vec!["status".to_string(), "condition".to_string()];
    rest.extend(bundles.iter().map(|(b, _)| format!("residual_{b}")));
    let eig_names: Vec<&str> = if dims.c > 0 { vec!["u", "s", "c"] } else { vec!["u", "s"] };
    if oracle.is_some() {
        rest.extend(eig_names.iter().map(|b| format!("eigen_distance_{b}")));
    }
    rest.extend(matrix_header("eu", d, dims.u));
    rest.extend(matrix_header("ec", d, dims.c));
    rest.extend(matrix_header("es", d, dims.s));
    let mut csv = Csv::new(headed(&["index"], d, rest));
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(r) => {
                row.push("ok".into());
                row.push(num(r.split.condition));
                row.extend(r.residuals.iter().map(|x| num(*x)));
                row.extend(r.eigen.iter().map(|x| num(*x)));
                row.extend(matrix_cells(&r.split.eu.basis));
                row.extend(matrix_cells(&r.split.ec.basis));
                row.extend(matrix_cells(&r.split.es.basis));
            }
        }
        csv.push(row);
    }
    ctx.write("splitting.csv", &csv)?;

    record_failures(ctx, &rows);
    let worst = max_over(&rows, |r| r.residuals.iter().copied().fold(0.0, f64::max));
    ctx.assert("invariance_residual", worst.unwrap_or(f64::NAN), Relation::AtMost, tol_inv);
    if oracle.is_some() {
        for (k, b) in eig_names.iter().enumerate() {
            let worst = max_over(&rows, |r| r.eigen[k]);
            ctx.assert(
                &format!("eigendirection_{b}"),
                worst.unwrap_or(f64::NAN),
                Relation::AtMost,
                tol_eig,
            );
        }
    }
    Ok(())
}

const BUNCHING_KEYS: &[&str] = &[
    "map",
    "dims",
    "orbit.n",
    "grid.resolution",
    "bunching.condition",
    "bunching.expect",
    "seed",
    "tol.bunching_expect",
];

pub(super) fn bunching(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(BUNCHING_KEYS, &["map"])?;
    let map = ctx.map()?;
    let d = map.dim();
    let dims = cfg.dims_or("dims", d)?;
    let n = cfg.positive_usize_or("orbit.n", DEFAULT_N)?;
    let res = cfg.positive_usize_or("grid.resolution", 8)?;
    let cond: bunching::BunchingCondition = cfg
        .str("bunching.condition")
        .unwrap_or("thmA_u")
        .parse()
        .map_err(|e: crate::Error| cfg.error("bunching.condition", e.to_string()))?;
    let expect = cfg.list_f64("bunching.expect")?;
    let tol_expect = ctx.tol("bunching_expect", 1e-10)?;
    let report = bunching::bunching_report(map.as_ref(), res, dims, n, cond)?;

    let mut csv = Csv::new(headed(
        &["index"],
        d,
        vec!["ratio".into(), "sup".into(), "status".into()],
    ));
    for (i, bp) in report.points.iter().enumerate() {
        let mut row = lead_cells(i, &bp.point);
        match &bp.ratio {
            Ok(r) => row.extend([num(*r), num(report.sup), "ok".into()]),
            Err(e) => row.extend([String::new(), num(report.sup), e.clone()]),
        }
        csv.push(row);
    }
    ctx.write("bunching.csv", &csv)?;

    ctx.measure("bunching_sup", report.sup);
    ctx.assert("failed_points", report.failures as f64, Relation::AtMost, 0.0);
    ctx.assert("bunching_sup", report.sup, Relation::Below, 1.0);
    if let Some(e) = expect {
        if e.len() != 1 {
            return Err(cfg.error("bunching.expect", "expected one number").into());
        }
        ctx.assert(
            "bunching_sup_expected",
            (report.sup - e[0]).abs(),
            Relation::AtMost,
            tol_expect,
        );
    }
    Ok(())
}

struct SeriesRow {
    series: partial_deriv::SeriesResult,
    fd: DMatrix<f64>,
    relative: f64,
}

const PARTIAL_KEYS: &[&str] = &[
    "map",
    "dims",
    "orbit.n",
    "series.n",
    "series.v",
    "points",
    "points.random",
    "seed",
    "fd.h",
    "curve.step",
    "tol.series_fd",
    "tol.series_vanishing",
];

pub(super) fn partial_derivative(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(PARTIAL_KEYS, &["map"])?;
    let map = ctx.map()?;
    let d = map.dim();
    let dims = cfg.dims_or("dims", d)?;
    if dims.c == 0 {
        return Err(cfg.error("dims", "the center derivative needs c >= 1").into());
    }
    let split_n = cfg.positive_usize_or("orbit.n", DEFAULT_N)?;
    let series_n = cfg.positive_usize_or("series.n", DEFAULT_N)?;
    let v_cfg = cfg.list_f64("series.v")?;
    if v_cfg.as_ref().is_some_and(|v| v.len() != d) {
        return Err(cfg.error("series.v", format!("expected {d} components")).into());
    }
    let h = cfg.positive_f64_or("fd.h", 1e-3)?;
    let step = cfg.positive_f64_or("curve.step", 1e-4)?;
    let k = (h / step).round();
    if k < 1.0 || (k * step - h).abs() > 1e-9 * h {
        return Err(cfg.error("fd.h", "must be a positive multiple of curve.step").into());
    }
    let tol_fd = ctx.tol("series_fd", 5e-2)?;
    let tol_zero = ctx.tol("series_vanishing", 1e-14)?;
    let points = ctx.points(d, PointDefault::Random(10))?;
    let affine = map.is_affine();

    let rows = sweep(&points, |p| {
        let m = map.as_ref();
        let split = splitting::compute_splitting(m, p, dims, split_n)?;
        // unit vector of E^c: the series is linear in v while the curve has unit speed
        let v = match &v_cfg {
            None => split.ec.basis.column(0).into_owned(),
            Some(raw) => {
                let vc = split.decompose(&DVector::from_column_slice(raw))?[1].clone();
                let norm = vc.norm();
                if norm < 1e-12 {
                    return Err(crate::Error::degenerate("center part of series.v", norm));
                }
                vc / norm
            }
        };
        let series = partial_deriv::deu_dec_series(m, p, dims, &v, series_n, split_n)?;
        let curve = curves::symmetric_curve(m, p, &v, Bundle::C, dims, step, k as usize, split_n)?;
        let fd = curves::fd_derivative_along_curve(m, &curve, dims, h, split_n)?;
        let relative = linalg::max_abs(&(&series.value - &fd)) / linalg::max_abs(&fd).max(1e-12);
        Ok(SeriesRow { series, fd, relative })
    });

    let (rows_cs, cols_u) = (d - dims.u, dims.u);
    let mut rest = vec!["status".to_string()];
    rest.extend(matrix_header("series", rows_cs, cols_u));
    rest.extend(matrix_header("fd", rows_cs, cols_u));
    rest.extend(
        ["relative_error", "ratio", "tail_estimate", "projection_defect", "bunching_sup"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut csv = Csv::new(headed(&["index"], d, rest));
    let mut terms = Csv::new(vec!["index".into(), "term".into(), "norm".into()]);
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(r) => {
                row.push("ok".into());
                row.extend(matrix_cells(&r.series.value));
                row.extend(matrix_cells(&r.fd));
                row.extend(
                    [
                        r.relative,
                        r.series.ratio,
                        r.series.tail_estimate,
                        r.series.projection_defect,
                        r.series.bunching_sup,
                    ]
                    .map(num),
                );
                for (t, norm) in r.series.term_norms.iter().enumerate() {
                    terms.push(vec![i.to_string(), t.to_string(), num(*norm)]);
                }
            }
        }
        csv.push(row);
    }
    ctx.write("partial_derivative.csv", &csv)?;
    ctx.write("series_terms.csv", &terms)?;

    record_failures(ctx, &rows);
    if affine {
        let worst = max_over(&rows, |r| linalg::max_abs(&r.series.value));
        ctx.assert("series_vanishing", worst.unwrap_or(f64::NAN), Relation::AtMost, tol_zero);
    } else {
        let worst = max_over(&rows, |r| r.relative);
        ctx.assert("series_fd_relative", worst.unwrap_or(f64::NAN), Relation::AtMost, tol_fd);
    }
    if let Some(r) = max_over(&rows, |r| r.series.ratio) {
        ctx.measure("series_ratio_max", r);
    }
    Ok(())
}

const HOLDER_KEYS: &[&str] = &[
    "map",
    "dims",
    "orbit.n",
    "points",
    "points.random",
    "seed",
    "holder.direction",
    "holder.min_exp",
    "holder.max_exp",
    "tol.holder_slope",
];

pub(super) fn holder(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(HOLDER_KEYS, &["map"])?;
    let map = ctx.map()?;
    let d = map.dim();
    let dims = cfg.dims_or("dims", d)?;
    let n = cfg.positive_usize_or("orbit.n", DEFAULT_N)?;
    let (direction, label) = match cfg.str("holder.direction").unwrap_or("center") {
        "center" => (Bundle::C, "center"),
        "stable" => (Bundle::S, "stable"),
        other => {
            return Err(cfg
                .error("holder.direction", format!("'{other}' is not center or stable"))
                .into())
        }
    };
    let lo = cfg.usize_or("holder.min_exp", 4)?;
    let hi = cfg.usize_or("holder.max_exp", 10)?;
    if hi < lo + 2 || hi > 40 {
        return Err(cfg.error("holder.max_exp", "need min_exp + 2 <= max_exp <= 40").into());
    }
    let scales: Vec<f64> = (lo..=hi).map(|k| 0.5_f64.powi(k as i32)).collect();
    let tol_slope = ctx.tol("holder_slope", 0.95)?;
    let default = [0.1, 0.2, 0.3];
    let points = ctx.points(
        d,
        if d == 3 { PointDefault::Fixed(&default) } else { PointDefault::Random(1) },
    )?;

    let rows = sweep(&points, |p| curves::regularity_estimate(map.as_ref(), p, direction, &scales, dims, n));

    let mut table = Csv::new(headed(&["index"], d, vec!["scale".into(), "distance".into()]));
    let mut fits = Csv::new(headed(
        &["index"],
        d,
        vec!["status".into(), "slope".into(), "residual".into()],
    ));
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(fit) => {
                for (t, dist) in &fit.table {
                    let mut line = lead_cells(i, p);
                    line.extend([num(*t), num(*dist)]);
                    table.push(line);
                }
                match fit.slope {
                    curves::Slope::Fitted(s) => row.extend(["ok".into(), num(s), num(fit.residual)]),
                    curves::Slope::Flat => row.extend(["flat".into(), String::new(), num(fit.residual)]),
                }
            }
        }
        fits.push(row);
    }
    ctx.write("holder.csv", &table)?;
    ctx.write("holder_fit.csv", &fits)?;

    record_failures(ctx, &rows);
    let slope = min_over(&rows, |f| match f.slope {
        curves::Slope::Fitted(s) => Some(s),
        curves::Slope::Flat => None,
    });
    match (slope, direction) {
        (Some(s), Bundle::C) => ctx.assert("holder_slope_center", s, Relation::AtLeast, tol_slope),
        (Some(s), _) => ctx.measure(&format!("holder_slope_{label}"), s),
        // a bundle that does not move is regular at every exponent
        (None, _) => ctx.measure(&format!("holder_flat_{label}"), 1.0),
    }
    Ok(())
}

struct DdcRow {
    curves: [ddc::DDCurve; 2],
    deviation: Option<f64>,
    lift: family::CenterLift,
    fixed_point: Option<family::FixedPointResidual>,
    eu: Option<ddc::EuTable>,
}

const DDC_KEYS: &[&str] = &[
    "family",
    "dims",
    "orbit.n",
    "series.n",
    "points",
    "points.random",
    "seed",
    "ddc.v",
    "ddc.t_end",
    "ddc.step",
    "ddc.eu",
    "lift.check",
    "tol.ddc_conjugacy",
    "tol.lift_fixed_point",
];

fn lift_options(ctx: &Ctx, dims: Dims) -> Result<LiftOptions, CliError> {
    Ok(LiftOptions {
        dims,
        n: ctx.cfg.positive_usize_or("series.n", DEFAULT_N)?,
        split_n: ctx.cfg.positive_usize_or("orbit.n", DEFAULT_N)?,
    })
}

/// `ψ_t(p) = p + t·w(p)` when the family is a conjugation.
fn conjugacy(fam: &dyn Family, t: f64, p: &TorusPoint) -> Option<crate::Result<TorusPoint>> {
    let w = fam.conjugating_field()?;
    Some(p.translate(&(w.value(&p.to_vector()) * t)))
}

pub(super) fn ddc(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(DDC_KEYS, &["family"])?;
    let fam = ctx.family()?;
    let d = fam.dim();
    let dims = cfg.dims_or("dims", d)?;
    let opts = lift_options(ctx, dims)?;
    let v = cfg.vector_or("ddc.v", d, DVector::zeros(d))?;
    let t_end = cfg.positive_f64_or("ddc.t_end", 0.05)?;
    let step = cfg.positive_f64_or("ddc.step", 1e-3)?;
    let want_eu = cfg.bool_or("ddc.eu", false)?;
    let check_lift = cfg.bool_or("lift.check", true)?;
    let tol_dev = ctx.tol("ddc_conjugacy", 10.0 * step)?;
    let tol_fp = ctx.tol("lift_fixed_point", 1e-8)?;
    let points = ctx.points(d, PointDefault::Random(5))?;
    // with a center the conjugacy moves along E^c too, so it is the curve only when c = 0
    let tracks_conjugacy = dims.c == 0 && fam.conjugating_field().is_some();

    let rows = sweep(&points, |p| {
        let f = fam.as_ref();
        let ahead = ddc::dynamically_defined_curve(f, p, &v, t_end, step, &opts)?;
        let behind = ddc::dynamically_defined_curve(f, p, &v, -t_end, step, &opts)?;
        let deviation = if tracks_conjugacy {
            let mut worst = 0.0_f64;
            for c in [&ahead, &behind] {
                for (t, q) in c.times.iter().zip(&c.points) {
                    let exact = conjugacy(f, *t, p).expect("field present")?;
                    worst = worst.max(q.distance(&exact)?);
                }
            }
            Some(worst)
        } else {
            None
        };
        let lift = family::pc_series(f, 0.0, p, &opts)?;
        let fixed_point = if check_lift {
            Some(family::fixed_point_residual(f, 0.0, p, &opts)?)
        } else {
            None
        };
        let eu = if want_eu {
            Some(ddc::eu_along_ddc(f, &ahead, &opts)?)
        } else {
            None
        };
        Ok(DdcRow {
            curves: [ahead, behind],
            deviation,
            lift,
            fixed_point,
            eu,
        })
    });

    let mut trace_rest = vec!["t".to_string()];
    trace_rest.extend(coord_header(d).into_iter().map(|c| format!("curve_{c}")));
    trace_rest.extend((0..d).map(|i| format!("velocity_{i}")));
    if tracks_conjugacy {
        trace_rest.push("conjugacy_deviation".into());
    }
    let mut trace = Csv::new(headed(&["index", "branch", "step"], 0, trace_rest));
    let mut lift_rest = vec!["status".to_string()];
    lift_rest.extend((0..d).map(|i| format!("lift_{i}")));
    lift_rest.extend(
        ["ratio", "tail_estimate", "plane_residual", "vector_residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut lift_csv = Csv::new(headed(&["index"], d, lift_rest));
    let cs = d - dims.u;
    let mut eu_rest = vec!["t".to_string()];
    eu_rest.extend(matrix_header("graph", cs, dims.u));
    let mut eu_csv = Csv::new(headed(&["index", "step"], 0, eu_rest));
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(r) => {
                for (branch, c) in ["1", "-1"].iter().zip(&r.curves) {
                    for k in 0..c.points.len() {
                        let mut line = vec![i.to_string(), branch.to_string(), k.to_string(), num(c.times[k])];
                        line.extend(coord_cells(&c.points[k]));
                        line.extend(c.velocities[k].iter().map(|x| num(*x)));
                        if let Some(Ok(exact)) = conjugacy(fam.as_ref(), c.times[k], p).filter(|_| tracks_conjugacy) {
                            line.push(num(c.points[k].distance(&exact).unwrap_or(f64::NAN)));
                        }
                        trace.push(line);
                    }
                }
                row.push("ok".into());
                row.extend(r.lift.value().iter().map(|x| num(*x)));
                row.extend([num(r.lift.ratio), num(r.lift.tail_estimate)]);
                if let Some(fp) = &r.fixed_point {
                    row.extend([num(fp.plane), num(fp.vector)]);
                }
                if let Some(eu) = &r.eu {
                    for (k, g) in eu.graphs.iter().enumerate() {
                        let mut line = vec![i.to_string(), k.to_string(), num(eu.times[k])];
                        line.extend(matrix_cells(g));
                        eu_csv.push(line);
                    }
                }
            }
        }
        lift_csv.push(row);
    }
    ctx.write("ddc.csv", &trace)?;
    ctx.write("lift.csv", &lift_csv)?;
    if want_eu {
        ctx.write("ddc_eu.csv", &eu_csv)?;
        if let Some(m) = max_over(&rows, |r| r.eu.as_ref().map_or(0.0, |e| e.modulus)) {
            ctx.measure("eu_quotient_modulus", m);
        }
    }

    record_failures(ctx, &rows);
    if tracks_conjugacy {
        let worst = max_over(&rows, |r| r.deviation.unwrap_or(f64::NAN));
        ctx.assert("ddc_conjugacy_deviation", worst.unwrap_or(f64::NAN), Relation::AtMost, tol_dev);
    }
    if check_lift {
        let worst = max_over(&rows, |r| r.fixed_point.map_or(f64::NAN, |f| f.plane.max(f.vector)));
        ctx.assert("lift_fixed_point", worst.unwrap_or(f64::NAN), Relation::AtMost, tol_fp);
    }
    Ok(())
}

struct ThmDRow {
    result: family::ThmDResult,
    closed: Option<DMatrix<f64>>,
    fd_relative: f64,
}

const PARAM_KEYS: &[&str] = &[
    "family",
    "dims",
    "orbit.n",
    "series.n",
    "points",
    "points.random",
    "seed",
    "thmd.which",
    "thmd.z_h",
    "thmd.fd_h",
    "thmd.grid",
    "tol.solver_residual",
    "tol.fd_relative",
    "tol.closed_form",
];

pub(super) fn param_derivative(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(PARAM_KEYS, &["family"])?;
    let fam = ctx.family()?;
    let d = fam.dim();
    let dims = cfg.dims_or("dims", d)?;
    let which: Tracked = cfg
        .str("thmd.which")
        .unwrap_or("unstable")
        .parse()
        .map_err(|e: crate::Error| cfg.error("thmd.which", e.to_string()))?;
    let opts = ThmDOptions {
        dims,
        n: cfg.positive_usize_or("series.n", DEFAULT_N)?,
        split_n: cfg.positive_usize_or("orbit.n", DEFAULT_N)?,
        z_h: cfg.positive_f64_or("thmd.z_h", 1e-4)?,
        fd_h: cfg.positive_f64_or("thmd.fd_h", 1e-3)?,
    };
    let grid = cfg.usize_or("thmd.grid", 0)?;
    let tol_res = ctx.tol("solver_residual", 1e-8)?;
    let tol_fd = ctx.tol("fd_relative", 1e-3)?;
    let tol_closed = ctx.tol("closed_form", 1e-6)?;
    let points = ctx.points(d, PointDefault::Origin)?;

    let rows = sweep(&points, |p| {
        let f = fam.as_ref();
        let result = theorem_d_derivative(f, p, which, &opts)?;
        let closed = conjugacy_closed_form(f, p, which, dims, opts.split_n)?;
        let fd_relative = result.fd_error / linalg::max_abs(&result.derivative).max(1e-6);
        Ok(ThmDRow {
            result,
            closed,
            fd_relative,
        })
    });

    let ke = match which {
        Tracked::Unstable => dims.u,
        Tracked::Center => dims.c,
    };
    let has_closed = rows.iter().any(|r| r.as_ref().is_ok_and(|r| r.closed.is_some()));
    let mut rest = vec!["status".to_string(), "complement".to_string()];
    rest.extend(matrix_header("derivative", d - ke, ke));
    rest.extend(matrix_header("fd", d - ke, ke));
    if has_closed {
        rest.extend(matrix_header("closed_form", d - ke, ke));
    }
    rest.extend(["residual", "z0", "fd_error"].iter().map(|s| s.to_string()));
    let mut csv = Csv::new(headed(&["index"], d, rest));
    let mut blocks = Csv::new(
        ["index", "block", "branch", "gain", "ratio", "tail"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(r) => {
                let res = &r.result;
                row.push("ok".into());
                row.push(res.complement.join("+"));
                row.extend(matrix_cells(&res.derivative));
                row.extend(matrix_cells(&res.fd));
                if has_closed {
                    match &r.closed {
                        Some(c) => row.extend(matrix_cells(c)),
                        None => row.extend(vec![String::new(); (d - ke) * ke]),
                    }
                }
                row.extend([num(res.residual), num(res.z0), num(res.fd_error)]);
                for b in &res.blocks {
                    blocks.push(vec![
                        i.to_string(),
                        b.block.clone(),
                        format!("{:?}", b.branch).to_lowercase(),
                        num(b.gain),
                        num(b.ratio),
                        num(b.tail),
                    ]);
                }
            }
        }
        csv.push(row);
    }
    ctx.write("param_derivative.csv", &csv)?;
    ctx.write("param_derivative_blocks.csv", &blocks)?;

    if grid > 0 {
        let g = OperatorGrid::sample(d, grid, |x| Ok(theorem_d_derivative(fam.as_ref(), x, which, &opts)?.derivative))?;
        let mut rest = vec![];
        rest.extend(matrix_header("derivative", g.rows, g.cols));
        let mut gcsv = Csv::new(headed(&["node"], d, rest));
        for (i, m) in g.values.iter().enumerate() {
            let mut row = lead_cells(i, &OperatorGrid::node(d, grid, i));
            row.extend(matrix_cells(m));
            gcsv.push(row);
        }
        ctx.write("param_derivative_grid.csv", &gcsv)?;
    }

    record_failures(ctx, &rows);
    let residual = max_over(&rows, |r| r.result.residual);
    ctx.assert("solver_residual", residual.unwrap_or(f64::NAN), Relation::AtMost, tol_res);
    let fd = max_over(&rows, |r| r.fd_relative);
    ctx.assert("fd_relative", fd.unwrap_or(f64::NAN), Relation::AtMost, tol_fd);
    if has_closed {
        let closed = max_over(&rows, |r| {
            r.closed
                .as_ref()
                .map_or(f64::NAN, |c| linalg::max_abs(&(&r.result.derivative - c)))
        });
        ctx.assert("closed_form", closed.unwrap_or(f64::NAN), Relation::AtMost, tol_closed);
    }
    if let Some(z) = max_over(&rows, |r| r.result.z0) {
        ctx.measure("z0_max", z);
    }
    Ok(())
}

const THMC_KEYS: &[&str] = &[
    "family",
    "dims",
    "orbit.n",
    "series.n",
    "points",
    "points.random",
    "seed",
    "ddc.v",
    "thmc.h",
    "thmc.step",
    "thmc.spatial_h",
    "tol.thmc_relative",
];

pub(super) fn thm_c_check(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    cfg.restrict(THMC_KEYS, &["family"])?;
    let fam = ctx.family()?;
    let d = fam.dim();
    let dims = cfg.dims_or("dims", d)?;
    let opts = ThmCOptions {
        lift: lift_options(ctx, dims)?,
        h: cfg.positive_f64_or("thmc.h", 1e-3)?,
        step: cfg.positive_f64_or("thmc.step", 1e-4)?,
        spatial_h: cfg.positive_f64_or("thmc.spatial_h", 1e-4)?,
    };
    let v = cfg.vector_or("ddc.v", d, DVector::zeros(d))?;
    let tol = ctx.tol("thmc_relative", 1e-3)?;
    let points = ctx.points(d, PointDefault::Random(3))?;

    let rows = sweep(&points, |p| theorem_c_check(fam.as_ref(), p, &v, &opts));

    let cs = d - dims.u;
    let mut rest = vec!["status".to_string()];
    for name in ["left", "right", "quotient", "spatial"] {
        rest.extend(matrix_header(name, cs, dims.u));
    }
    rest.extend(["residual".to_string(), "relative".to_string()]);
    let mut csv = Csv::new(headed(&["index"], d, rest));
    for (i, (p, r)) in points.iter().zip(&rows).enumerate() {
        let mut row = lead_cells(i, p);
        match r {
            Err(e) => row.push(e.to_string()),
            Ok(r) => {
                row.push("ok".into());
                for m in [&r.left, &r.right, &r.quotient, &r.spatial] {
                    row.extend(matrix_cells(m));
                }
                row.extend([num(r.residual), num(r.relative)]);
            }
        }
        csv.push(row);
    }
    ctx.write("thmc.csv", &csv)?;

    record_failures(ctx, &rows);
    let worst = max_over(&rows, |r| r.relative);
    ctx.assert("thmc_relative", worst.unwrap_or(f64::NAN), Relation::AtMost, tol);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenspaces_of_cat_map() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let [u, c, s] = linear_eigenspaces(&a, Dims::new(1, 0, 1)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let eu = DMatrix::from_column_slice(2, 1, &[phi, 1.0]);
        let es = DMatrix::from_column_slice(2, 1, &[-1.0, phi]);
        assert!(splitting::subspace_distance(&u, &linalg::orthonormalize(&eu, 1e-14).unwrap()) < 1e-14);
        assert!(splitting::subspace_distance(&s, &linalg::orthonormalize(&es, 1e-14).unwrap()) < 1e-14);
        assert_eq!(c.ncols(), 0);
    }

    #[test]
    fn rotation_spectrum_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(linear_eigenspaces(&a, Dims::new(1, 0, 1)).is_err());
    }
}
