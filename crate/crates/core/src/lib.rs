//! Numerical laboratory for partially hyperbolic diffeomorphisms of tori:
//! invariant splittings, bunching ratios, derivatives of the unstable
//! bundle along the center and parameter derivatives of invariant bundles
//! along dynamically defined curves.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod family;
pub mod linalg;
pub mod manifold;
pub mod partial_deriv;
pub mod splitting;

pub use dynamics::{Diffeo, Family, FamilySpec, MapSpec};
pub use error::{Error, Result};
pub use manifold::TorusPoint;
pub use splitting::{Bundle, Dims, Plane, Splitting};
