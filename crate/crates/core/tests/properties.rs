//! Property tests for the structural invariants of each module.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use phlab::cli::{self, Config, RunOptions, Subcommand};
use phlab::dynamics::zoo::{ConjugatedFamily, LinearToral, RotationFamily, SkewProduct};
use phlab::dynamics::{self, check, Diffeo, Family, SineField};
use phlab::family::{self, theorem_d::OrbitOperator, LiftOptions};
use phlab::linalg;
use phlab::manifold::{self, build_chart, TorusPoint};
use phlab::partial_deriv;
use phlab::splitting::{self, Bundle, Dims, Direction, Plane};

const T3: Dims = Dims { u: 1, c: 1, s: 1 };

fn point3() -> impl Strategy<Value = TorusPoint> {
    prop::array::uniform3(0.0..1.0f64).prop_map(|c| TorusPoint::wrap(&c).unwrap())
}

fn unit3() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-1.0..1.0f64)
        .prop_filter("not tiny", |c| c.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|c| {
            let v = DVector::from_row_slice(&c);
            v.normalize()
        })
}

/// Random plane of dimension `k` in `R^3`.
fn plane3(k: usize) -> impl Strategy<Value = Plane> {
    prop::collection::vec(-1.0..1.0f64, 3 * k)
        .prop_filter_map("full rank", move |v| {
            let m = DMatrix::from_column_slice(3, k, &v);
            Plane::new(TorusPoint::origin(3), &m).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wrap_is_idempotent(c in prop::collection::vec(-50.0..50.0f64, 1..5)) {
        let once = TorusPoint::wrap(&c).unwrap();
        let twice = TorusPoint::wrap(once.coords()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn displacement_reaches_target(p in point3(), q in point3()) {
        let v = manifold::displacement(&q, &p).unwrap();
        prop_assert!(q.translate(&v).unwrap().distance(&p).unwrap() <= 1e-15);
        prop_assert!(v.iter().all(|x| (-0.5..0.5).contains(x)));
    }

    #[test]
    fn plane_distance_is_a_metric(a in plane3(1), b in plane3(1), c in plane3(1), a2 in plane3(2), b2 in plane3(2), c2 in plane3(2)) {
        for (x, y, z) in [(&a, &b, &c), (&a2, &b2, &c2)] {
            let xy = splitting::plane_distance(x, y).unwrap();
            prop_assert_eq!(xy, splitting::plane_distance(y, x).unwrap());
            let xz = splitting::plane_distance(x, z).unwrap();
            let zy = splitting::plane_distance(z, y).unwrap();
            prop_assert!(xy <= xz + zy + 1e-12);
            prop_assert!(splitting::plane_distance(x, x).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn config_round_trips(entries in prop::collection::btree_map("[a-z]{1,6}(\\.[a-z_]{1,6})?", "[a-z0-9.,;-]{1,12}", 0..8)) {
        let text: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let parsed = Config::parse(&text).unwrap();
        prop_assert_eq!(parsed.echo(), entries);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chart_frames_are_orthonormal_and_affine(p in point3(), eps in 0.0..0.05f64, x in prop::array::uniform3(-0.2..0.2f64), y in prop::array::uniform3(-0.2..0.2f64)) {
        let map = SkewProduct::perturbed(eps).unwrap();
        let s = splitting::compute_splitting(&map, &p, T3, 60).unwrap();
        for grouping in [&[&[Bundle::U][..], &[Bundle::C, Bundle::S][..]][..], &[&[Bundle::U][..], &[Bundle::C][..], &[Bundle::S][..]][..]] {
            let chart = build_chart(&p, &s, grouping).unwrap();
            prop_assert!(chart.frame.orthonormality_defect() <= 1e-12);
            let (x, y) = (DVector::from_row_slice(&x), DVector::from_row_slice(&y));
            let lhs = chart.eval(&(&x + &y)).unwrap();
            let rhs = chart.eval(&x).unwrap().translate(&(chart.frame.matrix() * &y)).unwrap();
            prop_assert!(lhs.distance(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn chain_rule_and_hessian_symmetry(p in point3(), eps in 0.0..0.05f64) {
        let maps: Vec<Arc<dyn Diffeo>> = vec![
            Arc::new(SkewProduct::perturbed(eps).unwrap()),
            ConjugatedFamily::standard().at(0.05).unwrap(),
        ];
        for m in &maps {
            prop_assert!(check::chain_rule_defect(m.as_ref(), &p).unwrap() <= 1e-10);
            prop_assert!(dynamics::hessian_at(m.as_ref(), &p).asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn families_start_at_their_base(p in point3()) {
        let conj = ConjugatedFamily::standard();
        let rot = RotationFamily::standard();
        let base = SkewProduct::standard();
        let want = dynamics::eval(&base, &p);
        for f in [&conj as &dyn Family, &rot] {
            let got = dynamics::eval(f.at(0.0).unwrap().as_ref(), &p);
            prop_assert!(got.distance(&want).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn every_bundle_is_invariant(p in point3(), eps in 0.0..0.05f64) {
        let map = SkewProduct::perturbed(eps).unwrap();
        let s = splitting::compute_splitting(&map, &p, T3, 60).unwrap();
        let t = splitting::compute_splitting(&map, &dynamics::eval(&map, &p), T3, 60).unwrap();
        for (a, b) in [(&s.eu, &t.eu), (&s.es, &t.es), (&s.ecu, &t.ecu), (&s.ecs, &t.ecs), (&s.ec, &t.ec)] {
            prop_assert!(splitting::invariance_residual(&map, a, b).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn planes_do_not_depend_on_the_seed(p in point3(), eps in 0.0..0.05f64) {
        let map = SkewProduct::perturbed(eps).unwrap();
        for (k, dir) in [(1, Direction::Forward), (2, Direction::Forward), (1, Direction::Backward), (2, Direction::Backward)] {
            let a = splitting::invariant_plane(&map, &p, k, dir, 60, None).unwrap();
            let alt = splitting::alternate_seed(3, k);
            let b = splitting::invariant_plane(&map, &p, k, dir, 60, Some(&alt)).unwrap();
            prop_assert!(splitting::plane_distance(&a.plane, &b.plane).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn unstable_plane_converges_exponentially(p in point3(), eps in 0.0..0.05f64) {
        let map = SkewProduct::perturbed(eps).unwrap();
        let gap = |n: usize| {
            let a = splitting::unstable_plane(&map, &p, 1, n).unwrap().plane;
            let b = splitting::unstable_plane(&map, &p, 1, 2 * n).unwrap().plane;
            splitting::plane_distance(&a, &b).unwrap()
        };
        for n in (10..=35).step_by(5) {
            let (now, next) = (gap(n), gap(n + 5));
            // below the round-off floor the gaps stop shrinking
            if now > 1e-13 {
                prop_assert!(next <= now / 2.0, "N={} gap {:e} -> {:e}", n, now, next);
            }
        }
    }

    #[test]
    fn series_is_linear_in_v(p in point3(), v in unit3(), w in unit3(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let map = SkewProduct::perturbed(0.02).unwrap();
        let s = |x: &DVector<f64>| partial_deriv::deu_dec_series(&map, &p, T3, x, 40, 40).unwrap().value;
        let combo = s(&(&v * a + &w * b));
        let separate = s(&v) * a + s(&w) * b;
        let scale = linalg::max_abs(&separate).max(1.0);
        prop_assert!(linalg::max_abs(&(combo - separate)) <= 1e-10 * scale);
    }

    #[test]
    fn lift_ignores_the_center_vector(p in point3(), v in unit3(), w in unit3()) {
        let f = ConjugatedFamily::new(
            Arc::new(SkewProduct::standard()),
            SineField::new(0, 1, 1.0, 3).unwrap(),
            0.1,
        ).unwrap();
        let opts = LiftOptions::new(T3);
        let (_, a) = family::ddc_velocity(&f, 0.0, &p, &v, &opts).unwrap();
        let (_, b) = family::ddc_velocity(&f, 0.0, &p, &w, &opts).unwrap();
        prop_assert_eq!(a.value(), b.value());
    }

    #[test]
    fn linear_maps_split_along_eigenvectors(word in prop::collection::vec(any::<bool>(), 2..6), p in prop::array::uniform2(0.0..1.0f64)) {
        prop_assume!(word.iter().any(|x| *x) && word.iter().any(|x| !*x));
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let a = word.iter().fold(DMatrix::identity(2, 2), |m, x| m * if *x { &l } else { &r });
        let map = LinearToral::new("linear_toral", a.clone()).unwrap();
        let tr = a.trace();
        let lu = (tr + (tr * tr - 4.0).sqrt()) / 2.0;
        let ls = 1.0 / lu;
        // (b, λ − a) spans the λ-eigenspace of a matrix with b ≠ 0
        let eig = |lam: f64| DMatrix::from_column_slice(2, 1, &[a[(0, 1)], lam - a[(0, 0)]]);
        let p = TorusPoint::wrap(&p).unwrap();
        let s = splitting::compute_splitting(&map, &p, Dims::new(1, 0, 1), 60).unwrap();
        prop_assert!(splitting::subspace_distance(&s.eu.basis, &linalg::orthonormalize(&eig(lu), 1e-14).unwrap()) <= 1e-10);
        prop_assert!(splitting::subspace_distance(&s.es.basis, &linalg::orthonormalize(&eig(ls), 1e-14).unwrap()) <= 1e-10);
    }
}

/// Operator with one contracting and one expanding block on a constant
/// orbit, as for a linear map.
fn toy_operator(n: usize) -> OrbitOperator {
    let steps = 2 * n + 2;
    OrbitOperator {
        offset: n + 1,
        a: vec![DMatrix::from_element(1, 1, 2.5); steps],
        k: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 6.0]); steps],
        h_dims: vec![1, 1],
        h_names: vec!["c".into(), "x".into()],
    }
}

fn orbit_rhs(base: &[f64; 2], n: usize) -> Vec<DMatrix<f64>> {
    (0..2 * n + 2)
        .map(|j| DMatrix::from_column_slice(2, 1, base) * (1.0 + 0.1 * (j as f64).sin()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_is_linear_and_exact(z1 in prop::array::uniform2(0.5..1.5f64), z2 in prop::array::uniform2(0.5..1.5f64), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let n = 40;
        let op = toy_operator(n);
        let solve = |z: &[DMatrix<f64>]| op.solve(z, n).unwrap();
        let (r1, r2) = (orbit_rhs(&z1, n), orbit_rhs(&z2, n));
        let combo: Vec<DMatrix<f64>> = r1.iter().zip(&r2).map(|(x, y)| x * a + y * b).collect();
        let (x1, _, _) = solve(&r1);
        let (x2, _, _) = solve(&r2);
        let (xc, xm1, reports) = solve(&combo);
        prop_assert!(linalg::max_abs(&(&xc - (x1 * a + x2 * b))) <= 1e-10);
        prop_assert_eq!(reports[0].branch, family::theorem_d::Branch::Contracting);
        prop_assert_eq!(reports[1].branch, family::theorem_d::Branch::Expanding);
        prop_assert!(op.residual(&xc, &xm1, &combo[n + 1]).unwrap() <= 1e-8);
    }
}

#[test]
fn config_echo_reproduces_a_run() {
    let text = "map = perturbed_skew\n[map]\neps = 0.03\n[points]\nrandom = 4\n";
    let first_dir = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(first_dir.path());
    opts.seed = Some(99);
    let first = cli::run(Subcommand::Splitting, &Config::parse(text).unwrap(), &opts).unwrap();
    // rebuild the run from nothing but the echoed report
    let echo = &first.config;
    let cfg = echo.entries.iter().fold(Config::default(), |c, (k, v)| c.with(k, v));
    let second_dir = tempfile::tempdir().unwrap();
    let mut again = RunOptions::new(second_dir.path());
    again.seed = Some(echo.seed);
    again.threads = 2;
    let cmd: Subcommand = echo.subcommand.parse().unwrap();
    cli::run(cmd, &cfg, &again).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("splitting.csv")).unwrap();
    assert_eq!(read(&first_dir), read(&second_dir));
}

#[test]
fn unknown_keys_are_rejected_with_their_line() {
    let cfg = Config::parse("map = skew_product\ngrid.resolutoin = 8\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    match cli::run(Subcommand::Bunching, &cfg, &RunOptions::new(dir.path())) {
        Err(cli::CliError::Config(e)) => assert_eq!((e.line, e.key.as_str()), (2, "grid.resolutoin")),
        other => panic!("expected a config error, got {other:?}"),
    }
    let cfg = Config::parse("map = skew_product\nmap.epz = 0.1\n").unwrap();
    match cli::run(Subcommand::Bunching, &cfg, &RunOptions::new(dir.path())) {
        Err(cli::CliError::Config(e)) => assert_eq!((e.line, e.key.as_str()), (2, "map.epz")),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn non_hyperbolic_maps_fail_their_assertions() {
    // a shear has no dominated splitting: the sweep finishes but cannot pass
    let cfg = Config::default()
        .with("map", "linear_toral")
        .with("map.a", "1,1;0,1")
        .with("points.random", "3");
    let dir = tempfile::tempdir().unwrap();
    let report = cli::run(Subcommand::Splitting, &cfg, &RunOptions::new(dir.path())).unwrap();
    assert!(!report.passed());
    assert!(!report.assertion("invariance_residual").unwrap().pass);
    let table = std::fs::read_to_string(dir.path().join("splitting.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}
