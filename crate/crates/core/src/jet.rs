//! Truncated univariate Taylor arithmetic (jets) and curve germs.
//!
//! A [`TaylorJet`] stores the Taylor coefficients `c_k = f^(k)(center)/k!`
//! of a scalar function of one variable, orders `0..=degree`. Pushing germs
//! of curves through the polynomial Henon map with this arithmetic carries
//! exact derivatives along iterates, which is what the tangency machinery
//! consumes (gap derivatives up to third order plus one order of safety).

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Default jet order carried by curve germs.
pub const JET_ORDER: usize = 4;

/// Taylor coefficients of a scalar function around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorJet {
    /// Base point of the expansion variable.
    pub center: f64,
    /// Taylor coefficients `f^(k)/k!`, orders `0..=degree`.
    pub coeffs: Vec<f64>,
}

impl TaylorJet {
    pub fn constant(value: f64, degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[0] = value;
        Self { center: 0.0, coeffs }
    }

    /// The identity function `center + eps` as a jet.
    pub fn variable(center: f64, degree: usize) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[0] = center;
        if degree >= 1 {
            coeffs[1] = 1.0;
        }
        Self { center, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// k-th derivative (not the Taylor coefficient).
    pub fn deriv(&self, k: usize) -> f64 {
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        self.coeffs.get(k).copied().unwrap_or(0.0) * fact
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn add(&self, other: &TaylorJet) -> TaylorJet {
        let d = self.degree().min(other.degree());
        let coeffs = (0..=d).map(|k| self.coeffs[k] + other.coeffs[k]).collect();
        TaylorJet { center: self.center, coeffs }
    }

    pub fn sub(&self, other: &TaylorJet) -> TaylorJet {
        let d = self.degree().min(other.degree());
        let coeffs = (0..=d).map(|k| self.coeffs[k] - other.coeffs[k]).collect();
        TaylorJet { center: self.center, coeffs }
    }

    pub fn scale(&self, s: f64) -> TaylorJet {
        TaylorJet {
            center: self.center,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_const(&self, s: f64) -> TaylorJet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    pub fn mul(&self, other: &TaylorJet) -> TaylorJet {
        let d = self.degree().min(other.degree());
        let mut coeffs = vec![0.0; d + 1];
        for i in 0..=d {
            for j in 0..=(d - i) {
                coeffs[i + j] += self.coeffs[i] * other.coeffs[j];
            }
        }
        TaylorJet { center: self.center, coeffs }
    }

    pub fn square(&self) -> TaylorJet {
        self.mul(self)
    }

    /// Jet of `sqrt(self)`; requires a positive constant term.
    pub fn sqrt(&self) -> Result<TaylorJet> {
        let x0 = self.coeffs[0];
        if x0 <= 0.0 {
            return Err(CoreError::OutOfDomain(format!(
                "jet sqrt of non-positive leading coefficient {x0}"
            )));
        }
        let d = self.degree();
        let mut y = vec![0.0; d + 1];
        y[0] = x0.sqrt();
        for k in 1..=d {
            let mut s = 0.0;
            for i in 1..k {
                s += y[i] * y[k - i];
            }
            y[k] = (self.coeffs[k] - s) / (2.0 * y[0]);
        }
        Ok(TaylorJet { center: self.center, coeffs: y })
    }

    /// Jet of the derivative function (one order lower).
    pub fn derivative(&self) -> TaylorJet {
        let d = self.degree();
        let coeffs = (1..=d).map(|k| self.coeffs[k] * k as f64).collect();
        TaylorJet { center: self.center, coeffs }
    }

    /// Jet of the antiderivative vanishing at the base point (one order higher).
    pub fn integrate(&self) -> TaylorJet {
        let mut coeffs = vec![0.0; self.coeffs.len() + 1];
        for (k, c) in self.coeffs.iter().enumerate() {
            coeffs[k + 1] = c / (k + 1) as f64;
        }
        TaylorJet { center: self.center, coeffs }
    }

    /// Substitute `eps -> s * eps` (chain rule through a linear reparametrization).
    pub fn rescale_var(&self, s: f64) -> TaylorJet {
        let mut coeffs = self.coeffs.clone();
        let mut p = 1.0;
        for c in coeffs.iter_mut() {
            *c *= p;
            p *= s;
        }
        TaylorJet { center: self.center, coeffs }
    }

    /// Compose `self(inner(eps))` where `inner.value()` must equal the
    /// expansion point of `self` (i.e. `self` describes `f` around that value).
    pub fn compose(&self, inner: &TaylorJet) -> TaylorJet {
        let d = self.degree().min(inner.degree());
        let mut delta = inner.clone();
        delta.coeffs.truncate(d + 1);
        delta.coeffs[0] = 0.0;
        let mut res = TaylorJet::constant(self.coeffs[d], d);
        res.center = inner.center;
        for k in (0..d).rev() {
            res = res.mul(&delta);
            res.coeffs[0] += self.coeffs[k];
        }
        res
    }

    /// Series reversion: for a jet `u(eps)` with `u'(0) != 0`, return the jet of
    /// the inverse function `eps(u)` around `u(0)` (its constant term is 0).
    pub fn invert_series(&self) -> Result<TaylorJet> {
        let d = self.degree();
        let a1 = self.coeffs[1];
        if a1 == 0.0 || !a1.is_finite() {
            return Err(CoreError::OutOfDomain(
                "series reversion needs a nonzero first-order coefficient".into(),
            ));
        }
        // Powers of (u - u0) as series in eps.
        let mut u = self.clone();
        u.coeffs[0] = 0.0;
        let mut powers: Vec<TaylorJet> = Vec::with_capacity(d + 1);
        let mut cur = TaylorJet::constant(1.0, d);
        for _ in 0..d {
            cur = cur.mul(&u);
            powers.push(cur.clone()); // powers[j-1] = (u-u0)^j
        }
        let mut b = vec![0.0; d + 1];
        if d >= 1 {
            b[1] = 1.0 / a1;
        }
        for k in 2..=d {
            let mut s = 0.0;
            for j in 1..k {
                s += b[j] * powers[j - 1].coeffs[k];
            }
            b[k] = -s / powers[k - 1].coeffs[k];
        }
        Ok(TaylorJet { center: self.coeffs[0], coeffs: b })
    }
}

/// Order-4 jets of one curve component pair `t -> (x(t), y(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGerm {
    pub jet_x: TaylorJet,
    pub jet_y: TaylorJet,
}

impl CurveGerm {
    pub fn point(&self) -> crate::geom::Point2 {
        crate::geom::Point2::new(self.jet_x.value(), self.jet_y.value())
    }

    pub fn velocity(&self) -> crate::geom::Point2 {
        crate::geom::Point2::new(self.jet_x.deriv(1), self.jet_y.deriv(1))
    }

    /// A germ is a regular curve point when its velocity does not vanish.
    pub fn is_regular(&self) -> bool {
        let v = self.velocity();
        v.norm() > 0.0
    }

    pub fn rescale_var(&self, s: f64) -> CurveGerm {
        CurveGerm {
            jet_x: self.jet_x.rescale_var(s),
            jet_y: self.jet_y.rescale_var(s),
        }
    }
}

/// Evaluate a polynomial curve `t -> p + sum coeffs[k] t^k` and its jet at `t`.
pub fn poly_germ(coeffs: &[crate::geom::Point2], t: f64, degree: usize) -> CurveGerm {
    // Horner evaluation of value and derivatives 0..=degree at t.
    let n = coeffs.len();
    let mut dx = vec![0.0; degree + 1];
    let mut dy = vec![0.0; degree + 1];
    for k in (0..n).rev() {
        for j in (1..=degree.min(n)).rev() {
            dx[j] = dx[j] * t + dx[j - 1];
            dy[j] = dy[j] * t + dy[j - 1];
        }
        dx[0] = dx[0] * t + coeffs[k].x;
        dy[0] = dy[0] * t + coeffs[k].y;
    }
    // Horner-with-derivatives already yields `f^(k)/k!` (Taylor coefficients).
    CurveGerm {
        jet_x: TaylorJet { center: t, coeffs: dx },
        jet_y: TaylorJet { center: t, coeffs: dy },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn mul_matches_product_rule() {
        // f = 1 + 2e + 3e^2, g = -1 + e; (fg)'' at 0 = 2*(f0 g2 + f1 g1 + f2 g0)
        let f = TaylorJet { center: 0.0, coeffs: vec![1.0, 2.0, 3.0, 0.0, 0.0] };
        let g = TaylorJet { center: 0.0, coeffs: vec![-1.0, 1.0, 0.0, 0.0, 0.0] };
        let p = f.mul(&g);
        assert_eq!(p.coeffs[0], -1.0);
        assert_eq!(p.coeffs[1], -1.0); // 1*1 + 2*(-1)
        assert_eq!(p.coeffs[2], -1.0); // 3*(-1) + 2*1
        assert_eq!(p.coeffs[3], 3.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let f = TaylorJet { center: 0.0, coeffs: vec![4.0, 1.0, -0.5, 0.25, 0.125] };
        let r = f.sqrt().unwrap();
        let back = r.square();
        for k in 0..=4 {
            assert!(close(back.coeffs[k], f.coeffs[k], 1e-14), "order {k}");
        }
    }

    #[test]
    fn reversion_composes_to_identity() {
        // u(e) = 2 + 3e - e^2 + 0.5 e^3 + 0.1 e^4
        let u = TaylorJet { center: 0.0, coeffs: vec![2.0, 3.0, -1.0, 0.5, 0.1] };
        let inv = u.invert_series().unwrap();
        // inv(u(e)) should be the identity jet e.
        let ident = inv.compose(&u);
        assert!(ident.coeffs[0].abs() < 1e-15);
        assert!(close(ident.coeffs[1], 1.0, 1e-14));
        for k in 2..=4 {
            assert!(ident.coeffs[k].abs() < 1e-12, "order {k}: {}", ident.coeffs[k]);
        }
    }

    #[test]
    fn compose_chain_rule_against_closed_form() {
        // f(x) = x^2 around x0 = 3; inner x(e) = 3 + e - 2e^2.
        let f = TaylorJet { center: 3.0, coeffs: vec![9.0, 6.0, 1.0, 0.0, 0.0] };
        let x = TaylorJet { center: 0.0, coeffs: vec![3.0, 1.0, -2.0, 0.0, 0.0] };
        let g = f.compose(&x);
        // g(e) = (3 + e - 2e^2)^2 = 9 + 6e - 11e^2 - 4e^3 + 4e^4
        let expect = [9.0, 6.0, -11.0, -4.0, 4.0];
        for k in 0..=4 {
            assert!(close(g.coeffs[k], expect[k], 1e-14), "order {k}: {}", g.coeffs[k]);
        }
    }

    #[test]
    fn poly_germ_derivatives() {
        use crate::geom::Point2;
        // x(t) = 1 + t + t^3, y(t) = 2 - t^2
        let coeffs = vec![
            Point2::new(1.0, 2.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, -1.0),
            Point2::new(1.0, 0.0),
        ];
        let g = poly_germ(&coeffs, 0.5, 4);
        assert!(close(g.jet_x.value(), 1.0 + 0.5 + 0.125, 1e-15));
        assert!(close(g.jet_x.deriv(1), 1.0 + 3.0 * 0.25, 1e-15));
        assert!(close(g.jet_x.deriv(3), 6.0, 1e-15));
        assert!(close(g.jet_y.deriv(2), -2.0, 1e-15));
        assert_eq!(g.jet_y.deriv(4), 0.0);
    }
}
