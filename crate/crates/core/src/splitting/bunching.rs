//! Pointwise bunching ratios evaluated on grids.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_splitting, Dims, Splitting};
use crate::dynamics::{self, Diffeo};
use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::TorusPoint;

/// Which bunching ratio to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BunchingCondition {
    /// `‖T^c‖ / (m(T^u) m(T^c))`
    ThmAU,
    /// `‖T^s‖ · bol(T^c)`
    StableDual,
    /// `‖T^S‖ / (m(T^R) m(T^E))` with `R = E^u`, `S = E^{cs}`, `E = E^c`.
    DominatedRse,
}

impl FromStr for BunchingCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thmA_u" => Ok(Self::ThmAU),
            "stable_dual" => Ok(Self::StableDual),
            "dominated_RSE" => Ok(Self::DominatedRse),
            other => Err(Error::UnknownName {
                kind: "bunching condition",
                name: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for BunchingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThmAU => "thmA_u",
            Self::StableDual => "stable_dual",
            Self::DominatedRse => "dominated_RSE",
        })
    }
}

/// Norm and conorm of `Df` restricted to the span of `basis`. An empty
/// basis gives `(1, 1)`.
fn restricted(jac: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, f64) {
    if basis.ncols() == 0 {
        return (1.0, 1.0);
    }
    let image = jac * basis;
    (linalg::op_norm(&image), linalg::conorm(&image))
}

/// Bunching ratio at a point given its splitting.
pub fn bunching_ratio(map: &dyn Diffeo, split: &Splitting, condition: BunchingCondition) -> Result<f64> {
    let jac = dynamics::jacobian_at(map, &split.point);
    let (_, m_u) = restricted(&jac, &split.eu.basis);
    let (n_c, m_c) = restricted(&jac, &split.ec.basis);
    let (n_s, _) = restricted(&jac, &split.es.basis);
    Ok(match condition {
        BunchingCondition::ThmAU => n_c / (m_u * m_c),
        BunchingCondition::StableDual => n_s * n_c / m_c,
        BunchingCondition::DominatedRse => {
            let (n_cs, _) = restricted(&jac, &split.cs_block()?);
            n_cs / (m_u * m_c)
        }
    })
}

/// Cell centres `(i + 1/2)/n` on each axis, in row-major index order.
pub fn grid_points(dim: usize, n: usize) -> Vec<TorusPoint> {
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut c = vec![0.0; dim];
            for k in (0..dim).rev() {
                c[k] = ((idx % n) as f64 + 0.5) / n as f64;
                idx /= n;
            }
            TorusPoint::wrap(&c).expect("grid coordinates are finite")
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BunchingPoint {
    pub point: TorusPoint,
    /// Ratio or the error message for this point.
    pub ratio: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BunchingReport {
    pub condition: BunchingCondition,
    pub resolution: usize,
    pub metric: &'static str,
    pub points: Vec<BunchingPoint>,
    pub sup: f64,
    pub failures: usize,
}

impl BunchingReport {
    /// True when every point was evaluated and the supremum is below 1.
    pub fn passes(&self) -> bool {
        self.failures == 0 && self.sup < 1.0
    }
}

/// Evaluates a bunching condition on the cell-centred grid of resolution `n`
/// per axis. Points are processed in parallel and reduced in index order.
pub fn bunching_report(
    map: &dyn Diffeo,
    n: usize,
    dims: Dims,
    orbit_n: usize,
    condition: BunchingCondition,
) -> Result<BunchingReport> {
    if n == 0 {
        return Err(Error::precondition("grid resolution must be positive"));
    }
    let points: Vec<BunchingPoint> = grid_points(map.dim(), n)
        .into_par_iter()
        .map(|p| {
            let ratio = compute_splitting(map, &p, dims, orbit_n)
                .and_then(|s| bunching_ratio(map, &s, condition))
                .map_err(|e| format!("at {:?}: {e}", p.coords()));
            BunchingPoint { point: p, ratio }
        })
        .collect();
    let sup = points
        .iter()
        .filter_map(|b| b.ratio.as_ref().ok())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let failures = points.iter().filter(|b| b.ratio.is_err()).count();
    Ok(BunchingReport {
        condition,
        resolution: n,
        metric: "euclidean",
        points,
        sup,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::zoo::{LinearToral, SkewProduct};

    const INV_LAMBDA_U: f64 = 0.381_966_011_250_105_1;

    #[test]
    fn skew_product_closed_form() {
        let m = SkewProduct::standard();
        let r = bunching_report(&m, 3, Dims::new(1, 1, 1), 60, BunchingCondition::ThmAU).unwrap();
        assert_eq!(r.points.len(), 27);
        for p in &r.points {
            assert!((p.ratio.as_ref().unwrap() - INV_LAMBDA_U).abs() < 1e-10);
        }
        assert!((r.sup - INV_LAMBDA_U).abs() < 1e-10);
        assert!(r.passes());
    }

    #[test]
    fn anosov_empty_center_convention() {
        let cat = LinearToral::cat();
        let r = bunching_report(&cat, 4, Dims::new(1, 0, 1), 40, BunchingCondition::ThmAU).unwrap();
        assert!((r.sup - INV_LAMBDA_U).abs() < 1e-10);
        assert!(r.passes());
    }

    #[test]
    fn condition_names_round_trip() {
        for c in ["thmA_u", "stable_dual", "dominated_RSE"] {
            assert_eq!(c.parse::<BunchingCondition>().unwrap().to_string(), c);
        }
        assert!("nope".parse::<BunchingCondition>().is_err());
    }

    #[test]
    fn grid_is_cell_centred() {
        let g = grid_points(2, 2);
        assert_eq!(g[0].coords(), &[0.25, 0.25]);
        assert_eq!(g[1].coords(), &[0.25, 0.75]);
        assert_eq!(g[3].coords(), &[0.75, 0.75]);
    }
}
