//! Numerical laboratory for tangency dynamics in the Henon family
//! `phi_{a,b}(x,y) = (y, a - b x + y^2)` near the parameter corner (-2, 0):
//! invariant manifolds with exact curve jets, quadratic and cubic tangency
//! detection with genericity certificates, continuation of the tangency
//! curve a = h(b), heteroclinic cycle assembly, rescaling asymptotics of
//! high iterates, eigenvalue resonance diagnostics and attractor statistics.

pub mod attractor;
pub mod continuation;
pub mod error;
pub mod geom;
pub mod henon;
pub mod jet;
pub mod leaves;
pub mod manifold;
pub mod pipeline;
pub mod rescale;
pub mod resonance;
pub mod tangency;

pub use error::{CoreError, Result};
pub use geom::{Mat2, Point2, Rect};
pub use henon::{FixedPointData, Params, Which};
