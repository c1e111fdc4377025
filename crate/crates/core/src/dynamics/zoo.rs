//! Shipped maps and families.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{eval, Diffeo, Family, FamilySpec, MapSpec, Smoothness};
use crate::error::{Error, Result};
use crate::linalg::{self, Tensor3};
use crate::manifold::TorusPoint;

const TAU: f64 = 2.0 * PI;

/// Newton-contraction bound `‖L⁻¹‖·sup‖Df − L‖` admitted for perturbations.
pub const NEWTON_CONTRACTION_BOUND: f64 = 0.9;
/// Samples per axis for the perturbation bound check.
pub const BOUND_GRID: usize = 32;

/// Golden rotation number `(√5 − 1)/2`.
pub fn golden_alpha() -> f64 {
    (5.0_f64.sqrt() - 1.0) / 2.0
}

fn cat_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0])
}

/// Affine toral map `x ↦ A x + b` with integer unimodular `A`.
#[derive(Debug, Clone)]
pub struct LinearToral {
    name: String,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    offset: DVector<f64>,
}

impl LinearToral {
    pub fn new(name: &str, a: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        Self::with_offset(name, a, DVector::zeros(d))
    }

    pub fn with_offset(name: &str, a: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 || offset.len() != a.nrows() {
            return Err(Error::InvalidParam {
                key: "a".into(),
                msg: "matrix must be square and match the offset".into(),
            });
        }
        if a.iter().any(|x| (x - x.round()).abs() > 0.0) {
            return Err(Error::InvalidParam {
                key: "a".into(),
                msg: "entries must be integers".into(),
            });
        }
        let det = a.determinant();
        if (det.abs() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam {
                key: "a".into(),
                msg: format!("determinant {det} is not ±1"),
            });
        }
        let a_inv = linalg::inverse(&a)?.map(f64::round);
        Ok(Self {
            name: name.to_string(),
            a,
            a_inv,
            offset,
        })
    }

    /// `[[2,1],[1,1]]` on `T²`.
    pub fn cat() -> Self {
        Self::new("linear_toral", cat_matrix()).expect("cat matrix is unimodular")
    }

    /// `θ ↦ θ + α` on `T¹`.
    pub fn rotation_1d(alpha: f64) -> Self {
        Self::with_offset(
            "rotation",
            DMatrix::identity(1, 1),
            DVector::from_element(1, alpha),
        )
        .expect("identity is unimodular")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl Diffeo for LinearToral {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.offset
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn hessian(&self, _x: &DVector<f64>) -> Tensor3 {
        Tensor3::zeros(self.dim())
    }

    fn linear_part(&self) -> DMatrix<f64> {
        self.a.clone()
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn exact_inverse(&self, q: &TorusPoint) -> Option<TorusPoint> {
        let x = &self.a_inv * (q.to_vector() - &self.offset);
        TorusPoint::wrap_vector(&x).ok()
    }
}

/// `(x, y, θ) ↦ (A(x,y) + (ε sin 2πθ, 0), θ + α + ε sin 2πx)` on `T³`.
#[derive(Debug, Clone)]
pub struct SkewProduct {
    name: String,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    alpha: f64,
    eps: f64,
}

impl SkewProduct {
    pub fn new(name: &str, a: DMatrix<f64>, alpha: f64, eps: f64) -> Result<Self> {
        if a.shape() != (2, 2) {
            return Err(Error::InvalidParam {
                key: "a".into(),
                msg: "skew products need a 2×2 base matrix".into(),
            });
        }
        let base = LinearToral::new("base", a.clone())?;
        if !alpha.is_finite() || !eps.is_finite() {
            return Err(Error::InvalidParam {
                key: "alpha/eps".into(),
                msg: "must be finite".into(),
            });
        }
        let map = Self {
            name: name.to_string(),
            a,
            a_inv: base.a_inv,
            alpha,
            eps,
        };
        if eps != 0.0 {
            let kappa = map.newton_contraction();
            if kappa > NEWTON_CONTRACTION_BOUND {
                let eps_max = NEWTON_CONTRACTION_BOUND * eps.abs() / kappa;
                return Err(Error::InvalidParam {
                    key: "eps".into(),
                    msg: format!(
                        "|eps| = {} breaks the diffeomorphism bound: ‖L⁻¹‖·sup‖Df − L‖ = {kappa:.4} > {NEWTON_CONTRACTION_BOUND} (eps_max = {eps_max:.6})",
                        eps.abs()
                    ),
                });
            }
        }
        Ok(map)
    }

    /// ε = 0 skew product over the cat map with golden rotation.
    pub fn standard() -> Self {
        Self::new("skew_product", cat_matrix(), golden_alpha(), 0.0).expect("valid defaults")
    }

    pub fn perturbed(eps: f64) -> Result<Self> {
        Self::new("perturbed_skew", cat_matrix(), golden_alpha(), eps)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `‖L⁻¹‖₂ · max ‖Df − L‖₂` over a cell-centred sample grid.
    pub fn newton_contraction(&self) -> f64 {
        let linear = self.linear_part();
        let inv_norm = linalg::op_norm(&linalg::inverse(&linear).expect("unimodular"));
        let n = BOUND_GRID;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = DVector::from_vec(vec![
                        (i as f64 + 0.5) / n as f64,
                        (j as f64 + 0.5) / n as f64,
                        (k as f64 + 0.5) / n as f64,
                    ]);
                    worst = worst.max(linalg::op_norm(&(self.jacobian(&x) - &linear)));
                }
            }
        }
        inv_norm * worst
    }
}

impl Diffeo for SkewProduct {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        3
    }

    fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, e) = (&self.a, self.eps);
        DVector::from_vec(vec![
            a[(0, 0)] * x[0] + a[(0, 1)] * x[1] + e * (TAU * x[2]).sin(),
            a[(1, 0)] * x[0] + a[(1, 1)] * x[1],
            x[2] + self.alpha + e * (TAU * x[0]).sin(),
        ])
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (a, e) = (&self.a, self.eps);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                a[(0, 0)],
                a[(0, 1)],
                e * TAU * (TAU * x[2]).cos(),
                a[(1, 0)],
                a[(1, 1)],
                0.0,
                e * TAU * (TAU * x[0]).cos(),
                0.0,
                1.0,
            ],
        )
    }

    fn hessian(&self, x: &DVector<f64>) -> Tensor3 {
        let mut h = Tensor3::zeros(3);
        h.set(0, 2, 2, -self.eps * TAU * TAU * (TAU * x[2]).sin());
        h.set(2, 0, 0, -self.eps * TAU * TAU * (TAU * x[0]).sin());
        h
    }

    fn linear_part(&self) -> DMatrix<f64> {
        let mut l = DMatrix::identity(3, 3);
        l.view_mut((0, 0), (2, 2)).copy_from(&self.a);
        l
    }

    fn is_affine(&self) -> bool {
        self.eps == 0.0
    }

    fn exact_inverse(&self, q: &TorusPoint) -> Option<TorusPoint> {
        if self.eps != 0.0 {
            return None;
        }
        let c = q.coords();
        let xy = &self.a_inv * DVector::from_vec(vec![c[0], c[1]]);
        TorusPoint::wrap(&[xy[0], xy[1], c[2] - self.alpha]).ok()
    }
}

/// Shear field `w(p) = amp · sin(2π p[src]) · e_tgt`, `src ≠ tgt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineField {
    pub src: usize,
    pub tgt: usize,
    pub amp: f64,
}

impl SineField {
    pub fn new(src: usize, tgt: usize, amp: f64, dim: usize) -> Result<Self> {
        if src >= dim || tgt >= dim || src == tgt {
            return Err(Error::InvalidParam {
                key: "w_src/w_tgt".into(),
                msg: format!("need distinct indices below {dim}, got {src}, {tgt}"),
            });
        }
        if !amp.is_finite() {
            return Err(Error::InvalidParam {
                key: "w_amp".into(),
                msg: "must be finite".into(),
            });
        }
        Ok(Self { src, tgt, amp })
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(x.len());
        w[self.tgt] = self.amp * (TAU * x[self.src]).sin();
        w
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let mut m = DMatrix::zeros(d, d);
        m[(self.tgt, self.src)] = self.amp * TAU * (TAU * x[self.src]).cos();
        m
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Tensor3 {
        let mut h = Tensor3::zeros(x.len());
        h.set(
            self.tgt,
            self.src,
            self.src,
            -self.amp * TAU * TAU * (TAU * x[self.src]).sin(),
        );
        h
    }
}

/// `f_t = ψ_t ∘ f₀ ∘ ψ_t⁻¹` with `ψ_t(p) = p + t·w(p)`.
#[derive(Debug, Clone)]
pub struct Conjugated {
    name: String,
    base: MapSpec,
    field: SineField,
    t: f64,
}

impl Conjugated {
    pub fn new(base: MapSpec, field: SineField, t: f64) -> Self {
        Self {
            name: format!("conjugated({})", base.name()),
            base,
            field,
            t,
        }
    }

    fn psi(&self, x: &DVector<f64>) -> DVector<f64> {
        x + self.field.value(x) * self.t
    }

    fn dpsi(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) + self.field.jacobian(x) * self.t
    }

    /// The shear is inverted exactly since `w` does not depend on its target
    /// coordinate.
    fn psi_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.field.value(x) * self.t
    }

    pub fn parameter(&self) -> f64 {
        self.t
    }
}

impl Diffeo for Conjugated {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        self.psi(&self.base.lift(&self.psi_inv(x)))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let r = self.psi_inv(x);
        let s = self.base.lift(&r);
        let dpsi_r_inv = linalg::inverse(&self.dpsi(&r)).expect("shear is invertible");
        self.dpsi(&s) * self.base.jacobian(&r) * dpsi_r_inv
    }

    fn hessian(&self, x: &DVector<f64>) -> Tensor3 {
        let d = self.dim();
        let t = self.t;
        let r = self.psi_inv(x);
        let s = self.base.lift(&r);
        let dphi = linalg::inverse(&self.dpsi(&r)).expect("shear is invertible");
        let df0 = self.base.jacobian(&r);
        let h0 = self.base.hessian(&r);
        let dpsi_s = self.dpsi(&s);
        let hw_s = self.field.hessian(&s);
        let hw_r = self.field.hessian(&r);
        let inner = &df0 * &dphi;
        let mut out = Tensor3::zeros(d);
        let e = |i: usize| {
            let mut v = DVector::zeros(d);
            v[i] = 1.0;
            v
        };
        for a in 0..d {
            for b in a..d {
                let (ea, eb) = (e(a), e(b));
                let pa = &dphi * &ea;
                let pb = &dphi * &eb;
                // D²φ[a,b] = -Dψ(r)⁻¹ D²ψ(r)[Dφ a, Dφ b]
                let d2phi = -(&dphi * (hw_r.bilinear(&pa, &pb) * t));
                let term1 = hw_s.bilinear(&(&inner * &ea), &(&inner * &eb)) * t;
                let term2 = &dpsi_s * h0.bilinear(&pa, &pb);
                let term3 = &dpsi_s * (&df0 * d2phi);
                let v = term1 + term2 + term3;
                for o in 0..d {
                    out.set_sym(o, a, b, v[o]);
                }
            }
        }
        out
    }

    fn linear_part(&self) -> DMatrix<f64> {
        self.base.linear_part()
    }

    fn is_affine(&self) -> bool {
        self.t == 0.0 && self.base.is_affine()
    }

    fn exact_inverse(&self, q: &TorusPoint) -> Option<TorusPoint> {
        let r = self.psi_inv(&q.to_vector());
        let rq = TorusPoint::wrap_vector(&r).ok()?;
        let back = self.base.exact_inverse(&rq)?;
        TorusPoint::wrap_vector(&self.psi(&back.to_vector())).ok()
    }
}

/// Conjugation family over a base map.
#[derive(Debug, Clone)]
pub struct ConjugatedFamily {
    base: MapSpec,
    field: SineField,
    range: f64,
}

impl ConjugatedFamily {
    pub fn new(base: MapSpec, field: SineField, range: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::InvalidParam {
                key: "t_max".into(),
                msg: "must be positive".into(),
            });
        }
        SineField::new(field.src, field.tgt, field.amp, base.dim())?;
        Ok(Self { base, field, range })
    }

    /// Default: skew product base with `w = (0, 0, sin 2πx)`.
    pub fn standard() -> Self {
        Self::new(
            Arc::new(SkewProduct::standard()),
            SineField {
                src: 0,
                tgt: 2,
                amp: 1.0,
            },
            0.1,
        )
        .expect("valid defaults")
    }

    pub fn field(&self) -> SineField {
        self.field
    }

    pub fn base(&self) -> &MapSpec {
        &self.base
    }
}

impl Family for ConjugatedFamily {
    fn name(&self) -> &str {
        "conjugated_family"
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn param_range(&self) -> f64 {
        self.range
    }

    fn at(&self, t: f64) -> Result<MapSpec> {
        Ok(Arc::new(Conjugated::new(self.base.clone(), self.field, t)))
    }

    fn variation(&self, t: f64, p: &TorusPoint) -> Result<DVector<f64>> {
        let map = Conjugated::new(self.base.clone(), self.field, t);
        let x = p.to_vector();
        let r = map.psi_inv(&x);
        let s = self.base.lift(&r);
        let r_dot = -linalg::solve(
            &map.dpsi(&r),
            &DMatrix::from_column_slice(x.len(), 1, self.field.value(&r).as_slice()),
        )?
        .column(0)
        .into_owned();
        Ok(self.field.value(&s) + map.dpsi(&s) * (self.base.jacobian(&r) * r_dot))
    }

    fn conjugating_field(&self) -> Option<SineField> {
        Some(self.field)
    }
}

/// Skew product with rotation number `α + t`.
#[derive(Debug, Clone)]
pub struct RotationFamily {
    a: DMatrix<f64>,
    alpha: f64,
    range: f64,
}

impl RotationFamily {
    pub fn new(a: DMatrix<f64>, alpha: f64, range: f64) -> Result<Self> {
        SkewProduct::new("check", a.clone(), alpha, 0.0)?;
        Ok(Self { a, alpha, range })
    }

    pub fn standard() -> Self {
        Self::new(cat_matrix(), golden_alpha(), 0.1).expect("valid defaults")
    }
}

impl Family for RotationFamily {
    fn name(&self) -> &str {
        "rotation_family"
    }

    fn dim(&self) -> usize {
        3
    }

    fn param_range(&self) -> f64 {
        self.range
    }

    fn at(&self, t: f64) -> Result<MapSpec> {
        Ok(Arc::new(SkewProduct::new(
            "rotation_family",
            self.a.clone(),
            self.alpha + t,
            0.0,
        )?))
    }

    fn variation(&self, _t: f64, _p: &TorusPoint) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![0.0, 0.0, 1.0]))
    }
}

/// `f_t = f₀` for every `t`.
#[derive(Debug, Clone)]
pub struct ConstantFamily {
    base: MapSpec,
    range: f64,
}

impl ConstantFamily {
    pub fn new(base: MapSpec, range: f64) -> Self {
        Self { base, range }
    }
}

impl Family for ConstantFamily {
    fn name(&self) -> &str {
        "constant_family"
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn param_range(&self) -> f64 {
        self.range
    }

    fn at(&self, _t: f64) -> Result<MapSpec> {
        Ok(self.base.clone())
    }

    fn variation(&self, _t: f64, _p: &TorusPoint) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.base.dim()))
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C2
    }
}

/// Result of a zoo lookup.
#[derive(Debug, Clone)]
pub enum ZooItem {
    Map(MapSpec),
    Family(FamilySpec),
}

impl ZooItem {
    pub fn into_map(self) -> Result<MapSpec> {
        match self {
            ZooItem::Map(m) => Ok(m),
            ZooItem::Family(f) => f.at(0.0),
        }
    }

    pub fn into_family(self) -> Result<FamilySpec> {
        match self {
            ZooItem::Family(f) => Ok(f),
            ZooItem::Map(_) => Err(Error::precondition("zoo entry is a map, not a family")),
        }
    }
}

/// String-valued zoo parameters, parsed on demand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZooParams(pub BTreeMap<String, String>);

impl ZooParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.0.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::InvalidParam {
                    key: key.clone(),
                    msg: format!("unknown parameter (allowed: {})", allowed.join(", ")),
                });
            }
        }
        Ok(())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s.trim().parse::<f64>().map_err(|e| Error::InvalidParam {
                key: key.into(),
                msg: e.to_string(),
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s.trim().parse::<usize>().map_err(|e| Error::InvalidParam {
                key: key.into(),
                msg: e.to_string(),
            }),
        }
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.0.get(key).map(|s| s.trim()).unwrap_or(default)
    }

    /// Matrix written row-wise as `"2,1;1,1"`.
    fn matrix_or(&self, key: &str, default: DMatrix<f64>) -> Result<DMatrix<f64>> {
        let Some(s) = self.0.get(key) else {
            return Ok(default);
        };
        let bad = |msg: &str| Error::InvalidParam {
            key: key.into(),
            msg: msg.into(),
        };
        let rows: Vec<Vec<f64>> = s
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(bad("expected a square matrix written as 'a,b;c,d'"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

const MAP_KEYS_LINEAR: &[&str] = &["a"];
const MAP_KEYS_SKEW: &[&str] = &["a", "alpha"];
const MAP_KEYS_PERTURBED: &[&str] = &["a", "alpha", "eps"];

fn base_map(name: &str, params: &ZooParams) -> Result<MapSpec> {
    match name {
        "linear_toral" => Ok(Arc::new(LinearToral::new(
            "linear_toral",
            params.matrix_or("a", cat_matrix())?,
        )?)),
        "skew_product" => Ok(Arc::new(SkewProduct::new(
            "skew_product",
            params.matrix_or("a", cat_matrix())?,
            params.f64_or("alpha", golden_alpha())?,
            0.0,
        )?)),
        "perturbed_skew" => Ok(Arc::new(SkewProduct::new(
            "perturbed_skew",
            params.matrix_or("a", cat_matrix())?,
            params.f64_or("alpha", golden_alpha())?,
            params.f64_or("eps", 0.0)?,
        )?)),
        other => Err(Error::UnknownName {
            kind: "map",
            name: other.to_string(),
        }),
    }
}

fn base_keys(name: &str) -> &'static [&'static str] {
    match name {
        "linear_toral" => MAP_KEYS_LINEAR,
        "skew_product" => MAP_KEYS_SKEW,
        _ => MAP_KEYS_PERTURBED,
    }
}

/// Looks up a named map or family.
///
/// Maps: `linear_toral`, `skew_product`, `perturbed_skew`.
/// Families: `conjugated_family`, `rotation_family`, `constant_family`.
pub fn map_zoo(name: &str, params: &ZooParams) -> Result<ZooItem> {
    match name {
        "linear_toral" | "skew_product" | "perturbed_skew" => {
            params.check_keys(base_keys(name))?;
            Ok(ZooItem::Map(base_map(name, params)?))
        }
        "conjugated_family" => {
            let base_name = params.str_or("base", "skew_product").to_string();
            if base_name != "skew_product" && base_name != "linear_toral" {
                return Err(Error::InvalidParam {
                    key: "base".into(),
                    msg: "conjugated_family needs an ε = 0 base (skew_product or linear_toral)".into(),
                });
            }
            let mut allowed = vec!["base", "w_src", "w_tgt", "w_amp", "t_max"];
            allowed.extend_from_slice(base_keys(&base_name));
            params.check_keys(&allowed)?;
            let base = base_map(&base_name, &strip(params, &["base", "w_src", "w_tgt", "w_amp", "t_max"]))?;
            let d = base.dim();
            let field = SineField::new(
                params.usize_or("w_src", 0)?,
                params.usize_or("w_tgt", d - 1)?,
                params.f64_or("w_amp", 1.0)?,
                d,
            )?;
            Ok(ZooItem::Family(Arc::new(ConjugatedFamily::new(
                base,
                field,
                params.f64_or("t_max", 0.1)?,
            )?)))
        }
        "rotation_family" => {
            params.check_keys(&["a", "alpha", "t_max"])?;
            Ok(ZooItem::Family(Arc::new(RotationFamily::new(
                params.matrix_or("a", cat_matrix())?,
                params.f64_or("alpha", golden_alpha())?,
                params.f64_or("t_max", 0.1)?,
            )?)))
        }
        "constant_family" => {
            let base_name = params.str_or("base", "perturbed_skew").to_string();
            let mut allowed = vec!["base", "t_max"];
            allowed.extend_from_slice(base_keys(&base_name));
            params.check_keys(&allowed)?;
            let base = base_map(&base_name, &strip(params, &["base", "t_max"]))?;
            Ok(ZooItem::Family(Arc::new(ConstantFamily::new(
                base,
                params.f64_or("t_max", 0.1)?,
            ))))
        }
        other => Err(Error::UnknownName {
            kind: "zoo entry",
            name: other.to_string(),
        }),
    }
}

fn strip(params: &ZooParams, keys: &[&str]) -> ZooParams {
    let mut out = params.clone();
    for k in keys {
        out.0.remove(*k);
    }
    out
}

/// Image of `p` under `f_t`; convenience for tests and curves.
pub fn eval_family(family: &dyn Family, t: f64, p: &TorusPoint) -> Result<TorusPoint> {
    Ok(eval(family.at(t)?.as_ref(), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::displacement;

    fn pt(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    #[test]
    fn linear_toral_default_is_constant() {
        let m = map_zoo("linear_toral", &ZooParams::new()).unwrap().into_map().unwrap();
        let x = DVector::from_vec(vec![0.3, 0.8]);
        assert_eq!(m.jacobian(&x), cat_matrix());
        assert_eq!(m.hessian(&x).max_abs(), 0.0);
    }

    #[test]
    fn perturbed_at_zero_matches_skew() {
        let a = SkewProduct::perturbed(0.0).unwrap();
        let b = SkewProduct::standard();
        for p in [[0.1, 0.2, 0.3], [0.9, 0.5, 0.05], [0.0, 0.0, 0.0]] {
            let q = pt(&p);
            assert!(eval(&a, &q).distance(&eval(&b, &q)).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn eps_bound_rejects_large_perturbations() {
        assert!(SkewProduct::perturbed(0.05).is_ok());
        let err = SkewProduct::perturbed(0.08).unwrap_err();
        assert!(matches!(err, Error::InvalidParam { ref key, .. } if key == "eps"));
    }

    #[test]
    fn unknown_names_and_keys() {
        assert!(matches!(
            map_zoo("henon", &ZooParams::new()),
            Err(Error::UnknownName { .. })
        ));
        assert!(map_zoo("skew_product", &ZooParams::new().with("eps", 0.1)).is_err());
        assert!(map_zoo("linear_toral", &ZooParams::new().with("a", "2,0;0,1")).is_err());
    }

    #[test]
    fn conjugated_variation_at_zero() {
        let fam = ConjugatedFamily::standard();
        let f0 = SkewProduct::standard();
        let field = fam.field();
        let p = pt(&[0.1, 0.2, 0.3]);
        let x = p.to_vector();
        let fx = f0.lift(&x);
        let expected = field.value(&fx) - f0.jacobian(&x) * field.value(&x);
        let got = fam.variation(0.0, &p).unwrap();
        assert!((&got - &expected).norm() < 1e-14);
        let fd = crate::dynamics::fd_variation(&fam, 0.0, &p, 1e-5).unwrap();
        assert!((&fd - &expected).norm() <= 1e-8 * expected.norm().max(1.0));
    }

    #[test]
    fn families_at_zero_are_base() {
        let fam = ConjugatedFamily::standard();
        let f0 = SkewProduct::standard();
        let m = fam.at(0.0).unwrap();
        let p = pt(&[0.7, 0.1, 0.9]);
        assert!(eval(m.as_ref(), &p).distance(&eval(&f0, &p)).unwrap() < 1e-15);
        let rot = RotationFamily::standard();
        assert!(eval(rot.at(0.0).unwrap().as_ref(), &p).distance(&eval(&f0, &p)).unwrap() < 1e-15);
    }

    #[test]
    fn conjugated_inverse_round_trip() {
        let fam = ConjugatedFamily::standard();
        let m = fam.at(0.04).unwrap();
        let q = pt(&[0.33, 0.61, 0.27]);
        let p = super::super::invert(m.as_ref(), &q, 1e-13).unwrap();
        assert!(displacement(&eval(m.as_ref(), &p), &q).unwrap().norm() < 1e-13);
    }
}
