//! The Henon family `phi_{a,b}(x,y) = (y, a - b x + y^2)`, its inverse,
//! differential, fixed points with eigendata, and the conjugacy with the
//! classical formula `f_{a,b}(x,y) = (1 + y - a x^2, b x)`.

use crate::error::{CoreError, Result};
use crate::geom::{Mat2, Point2};
use crate::jet::CurveGerm;
use serde::{Deserialize, Serialize};

/// Parameter point of the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub b: f64,
}

impl Params {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }
}

/// Which fixed point, following the sign in `y± = (1 + b ± sqrt((1+b)^2 - 4a))/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Plus,
    Minus,
}

impl std::fmt::Display for Which {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Which::Plus => write!(f, "p+"),
            Which::Minus => write!(f, "p-"),
        }
    }
}

/// A fixed point together with its eigendata and dissipativity flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointData {
    pub which: Which,
    pub location: Point2,
    /// Contracting eigenvalue (|lambda| <= |sigma|).
    pub lambda: f64,
    /// Expanding eigenvalue.
    pub sigma: f64,
    /// Unit eigenvector for `lambda`, positive x-component.
    pub eig_vec_s: Point2,
    /// Unit eigenvector for `sigma`, positive x-component.
    pub eig_vec_u: Point2,
    /// True iff `0 < |lambda| < 1 < |sigma|` and `|lambda sigma| < 1`.
    pub dissipative: bool,
}

pub fn apply(params: Params, p: Point2) -> Point2 {
    Point2::new(p.y, params.a - params.b * p.x + p.y * p.y)
}

pub fn apply_inverse(params: Params, p: Point2) -> Result<Point2> {
    if params.b == 0.0 {
        return Err(CoreError::DegenerateParameter(
            "inverse map requires b != 0".into(),
        ));
    }
    Ok(Point2::new((params.a + p.x * p.x - p.y) / params.b, p.x))
}

pub fn apply_n(params: Params, p: Point2, n: usize) -> Point2 {
    let mut q = p;
    for _ in 0..n {
        q = apply(params, q);
    }
    q
}

/// Differential `[[0, 1], [-b, 2y]]`; its determinant equals `b` exactly.
pub fn jacobian(params: Params, p: Point2) -> Mat2 {
    Mat2::new(0.0, 1.0, -params.b, 2.0 * p.y)
}

/// Push a curve germ through the map: `(x, y) -> (y, a - b x + y^2)`.
pub fn apply_germ(params: Params, g: &CurveGerm) -> CurveGerm {
    let new_y = g
        .jet_y
        .square()
        .add(&g.jet_x.scale(-params.b))
        .add_const(params.a);
    CurveGerm { jet_x: g.jet_y.clone(), jet_y: new_y }
}

/// Push a curve germ through the inverse map.
pub fn apply_inverse_germ(params: Params, g: &CurveGerm) -> Result<CurveGerm> {
    if params.b == 0.0 {
        return Err(CoreError::DegenerateParameter(
            "inverse map requires b != 0".into(),
        ));
    }
    let new_x = g
        .jet_x
        .square()
        .sub(&g.jet_y)
        .add_const(params.a)
        .scale(1.0 / params.b);
    Ok(CurveGerm { jet_x: new_x, jet_y: g.jet_x.clone() })
}

/// Both fixed points with eigendata. Requires `(1+b)^2 - 4a > 0`.
pub fn fixed_points(params: Params) -> Result<(FixedPointData, FixedPointData)> {
    Ok((
        eigen_data(params, Which::Plus)?,
        eigen_data(params, Which::Minus)?,
    ))
}

fn fixed_point_y(params: Params, which: Which) -> Result<f64> {
    let disc = (1.0 + params.b) * (1.0 + params.b) - 4.0 * params.a;
    if disc <= 0.0 {
        return Err(CoreError::NoRealFixedPoints { discriminant: disc });
    }
    let root = disc.sqrt();
    Ok(match which {
        Which::Plus => (1.0 + params.b + root) / 2.0,
        Which::Minus => (1.0 + params.b - root) / 2.0,
    })
}

/// Eigendata of one fixed point from
/// `lambda± = y± ∓ sqrt(y±^2 - b)`, `sigma± = y± ± sqrt(y±^2 - b)`.
pub fn eigen_data(params: Params, which: Which) -> Result<FixedPointData> {
    let y = fixed_point_y(params, which)?;
    let radicand = y * y - params.b;
    if radicand < 0.0 {
        return Err(CoreError::ComplexEigenvalues { radicand });
    }
    let root = radicand.sqrt();
    let (lambda, sigma) = match which {
        Which::Plus => (y - root, y + root),
        Which::Minus => (y + root, y - root),
    };
    // Eigenvector of [[0,1],[-b,2y]] for eigenvalue m is (1, m).
    let unit = |m: f64| Point2::new(1.0, m).normalized();
    let dissipative =
        lambda.abs() > 0.0 && lambda.abs() < 1.0 && sigma.abs() > 1.0 && (lambda * sigma).abs() < 1.0;
    Ok(FixedPointData {
        which,
        location: Point2::new(y, y),
        lambda,
        sigma,
        eig_vec_s: unit(lambda),
        eig_vec_u: unit(sigma),
        dissipative,
    })
}

/// Classical Henon map `f_{a,b}(x,y) = (1 + y - a x^2, b x)`.
pub fn classical_apply(params: Params, p: Point2) -> Point2 {
    Point2::new(1.0 + p.y - params.a * p.x * p.x, params.b * p.x)
}

/// Residual of the conjugacy `h ∘ f_{a,b} = phi_{-a,-b} ∘ h` with
/// `h(x,y) = (-a b^{-1} y, -a x)`, relative to the magnitude of the operands.
pub fn conjugacy_residual(params: Params, p: Point2) -> Result<f64> {
    if params.a == 0.0 || params.b == 0.0 {
        return Err(CoreError::DegenerateParameter(
            "conjugacy requires a != 0 and b != 0".into(),
        ));
    }
    let h = |q: Point2| Point2::new(-params.a / params.b * q.y, -params.a * q.x);
    let lhs = h(classical_apply(params, p));
    let rhs = apply(Params::new(-params.a, -params.b), h(p));
    let scale = lhs.norm().max(rhs.norm()).max(1.0);
    Ok((lhs - rhs).norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn apply_examples() {
        // (2,2) is fixed at (a,b) = (-2,0).
        let p = apply(Params::new(-2.0, 0.0), Point2::new(2.0, 2.0));
        assert_eq!(p, Point2::new(2.0, 2.0));
        // Origin maps to (0, a).
        let p = apply(Params::new(0.7, 0.3), Point2::new(0.0, 0.0));
        assert_eq!(p, Point2::new(0.0, 0.7));
        // Direct evaluation at (-2, 0.3), (1, 1).
        let p = apply(Params::new(-2.0, 0.3), Point2::new(1.0, 1.0));
        assert!((p - Point2::new(1.0, -1.3)).norm() < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        // Solving the two map equations by hand at ((-2,1), (2,2)) gives (0,2).
        let q = apply_inverse(Params::new(-2.0, 1.0), Point2::new(2.0, 2.0)).unwrap();
        assert_eq!(q, Point2::new(0.0, 2.0));
        assert_eq!(apply(Params::new(-2.0, 1.0), q), Point2::new(2.0, 2.0));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let params = Params::new(rng.gen_range(-2.5..0.5), rng.gen_range(0.01..0.5));
            let p = Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let back = apply_inverse(params, apply(params, p)).unwrap();
            assert!((back - p).norm() < 1e-12);
        }

        assert!(matches!(
            apply_inverse(Params::new(-2.0, 0.0), Point2::new(1.0, 1.0)),
            Err(CoreError::DegenerateParameter(_))
        ));
    }

    #[test]
    fn jacobian_det_is_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let params = Params::new(rng.gen_range(-3.0..1.0), rng.gen_range(-0.5..0.5));
            let p = Point2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert_eq!(jacobian(params, p).det(), params.b);
        }
        let j = jacobian(Params::new(-2.0, 0.3), Point2::new(1.0, 1.0));
        assert_eq!(j, Mat2::new(0.0, 1.0, -0.3, 2.0));
    }

    #[test]
    fn fixed_points_at_limit() {
        let (pp, pm) = fixed_points(Params::new(-2.0, 0.0)).unwrap();
        assert!((pp.location - Point2::new(2.0, 2.0)).norm() < 1e-14);
        assert!((pm.location - Point2::new(-1.0, -1.0)).norm() < 1e-14);
        // (lambda+, sigma+) -> (0, 4), (lambda-, sigma-) -> (0, -2).
        assert!(pp.lambda.abs() < 1e-14 && (pp.sigma - 4.0).abs() < 1e-14);
        assert!(pm.lambda.abs() < 1e-14 && (pm.sigma + 2.0).abs() < 1e-14);
    }

    #[test]
    fn fixed_points_quadratic_formula() {
        // sqrt(9.21) = 3.03480...
        let (pp, pm) = fixed_points(Params::new(-2.0, 0.1)).unwrap();
        assert!((pp.location.y - 2.06740).abs() < 5e-6);
        assert!((pm.location.y - (-0.96740)).abs() < 5e-6);
        // Boundary: discriminant zero.
        let b = 0.2;
        let a = (1.0 + b) * (1.0 + b) / 4.0;
        assert!(matches!(
            fixed_points(Params::new(a, b)),
            Err(CoreError::NoRealFixedPoints { .. })
        ));
    }

    #[test]
    fn eigen_examples() {
        let fp = eigen_data(Params::new(-2.0, 0.1), Which::Plus).unwrap();
        assert!((fp.lambda - 0.02433).abs() < 5e-6);
        assert!((fp.sigma - 4.11047).abs() < 5e-6);
        assert!(fp.dissipative);

        let fp = eigen_data(Params::new(-2.0, 1e-4), Which::Plus).unwrap();
        assert!((fp.sigma - 4.0).abs() < 1e-3);

        // Radicand zero boundary: b = y^2 forces complex eigenvalues nearby.
        // Pick parameters with b > y^2: a near (1+b)^2/4 makes y ~ (1+b)/2.
        let params = Params::new(0.6, 0.9);
        match eigen_data(params, Which::Minus) {
            Err(CoreError::ComplexEigenvalues { .. }) => {}
            other => panic!("expected complex eigenvalues, got {other:?}"),
        }
    }

    #[test]
    fn eigen_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tried = 0;
        while tried < 100 {
            let params = Params::new(rng.gen_range(-2.5..0.5), rng.gen_range(-0.5..0.5));
            let Ok((pp, pm)) = fixed_points(params) else {
                continue;
            };
            for fp in [pp, pm] {
                if !fp.lambda.is_finite() {
                    continue;
                }
                // phi(fixed point) = fixed point
                let img = apply(params, fp.location);
                assert!((img - fp.location).norm() < 1e-12);
                // lambda*sigma = b, lambda+sigma = 2y
                assert!((fp.lambda * fp.sigma - params.b).abs() < 1e-10);
                assert!((fp.lambda + fp.sigma - 2.0 * fp.location.y).abs() < 1e-10);
                // Jacobian maps eigenvectors correctly.
                let j = jacobian(params, fp.location);
                let rs = j.apply(fp.eig_vec_s) - fp.eig_vec_s * fp.lambda;
                let ru = j.apply(fp.eig_vec_u) - fp.eig_vec_u * fp.sigma;
                assert!(rs.norm() < 1e-10 && ru.norm() < 1e-10);
                // |lambda sigma| = |b|
                assert!((fp.lambda * fp.sigma).abs() - params.b.abs() < 1e-10);
            }
            tried += 1;
        }
    }

    #[test]
    fn dissipative_near_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let params = Params::new(
                -2.0 + rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.2..0.2),
            );
            if params.b == 0.0 {
                continue;
            }
            let (pp, pm) = fixed_points(params).unwrap();
            assert!(pp.dissipative, "p+ at {params:?}");
            assert!(pm.dissipative, "p- at {params:?}");
        }
    }

    #[test]
    fn conjugacy_examples() {
        let r = conjugacy_residual(Params::new(1.4, 0.3), Point2::new(0.1, 0.2)).unwrap();
        assert!(r < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let params = Params::new(
                rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                rng.gen_range(0.05..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            );
            let p = Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            assert!(conjugacy_residual(params, p).unwrap() < 1e-12);
        }
        assert!(matches!(
            conjugacy_residual(Params::new(0.0, 0.3), Point2::new(0.1, 0.2)),
            Err(CoreError::DegenerateParameter(_))
        ));
    }

    #[test]
    fn germ_transport_matches_pointwise() {
        use crate::jet::{poly_germ, JET_ORDER};
        let params = Params::new(-1.9, 0.12);
        let coeffs = vec![
            Point2::new(0.3, -0.4),
            Point2::new(1.0, 0.5),
            Point2::new(-0.2, 0.8),
            Point2::new(0.05, -0.1),
        ];
        let g = poly_germ(&coeffs, 0.2, JET_ORDER);
        let img = apply_germ(params, &g);
        assert!((img.point() - apply(params, g.point())).norm() < 1e-15);
        // First derivative must follow the differential.
        let v = jacobian(params, g.point()).apply(g.velocity());
        assert!((img.velocity() - v).norm() < 1e-12);
        // Inverse transport undoes it.
        let back = apply_inverse_germ(params, &img).unwrap();
        for k in 0..=JET_ORDER {
            assert!((back.jet_x.coeffs[k] - g.jet_x.coeffs[k]).abs() < 1e-10);
            assert!((back.jet_y.coeffs[k] - g.jet_y.coeffs[k]).abs() < 1e-10);
        }
    }
}
