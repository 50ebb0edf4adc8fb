//! Deep preimage leaves of the primary stable segments.
//!
//! A leaf at depth d is the near-horizontal graph `y = eta_d(x)` whose image
//! under the map lands on the depth d-1 leaf:
//! `eta_d(x)^2 - b x + a = eta_{d-1}(eta_d(x))`.
//! Rung 0 is the primary local stable graph of the saddle. Solving the rung
//! equation pointwise (Newton against the previous rung's order-4 jet) gives
//! machine-accurate leaves with exact implicit derivatives, which is how the
//! stable side of every gap function is represented. Successive p- leaves
//! climb toward the p+ segment, the numerical face of the inclination lemma.

use crate::error::{CoreError, Result};
use crate::henon::{self, Params, Which};
use crate::jet::TaylorJet;
use crate::manifold::{
    holding_function, horizontal_stable_branch, local_parametrization, HoldingFunction,
    ManifoldKind, ScaleMode,
};

/// A ladder of stable leaves over a common x-domain.
#[derive(Debug, Clone)]
pub struct LeafLadder {
    pub params: Params,
    pub base: Which,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Sign of the square root taken at each rung, outermost last.
    pub signs: Vec<f64>,
    /// Approximate height of each rung (index 0 = primary) at the domain center.
    pub levels: Vec<f64>,
    primary: HoldingFunction,
}

impl LeafLadder {
    pub fn depth(&self) -> usize {
        self.signs.len()
    }

    /// Jet of the deepest rung at `x`.
    pub fn eval_jet(&self, x: f64, degree: usize) -> Result<TaylorJet> {
        self.eval_rung_jet(self.depth(), x, degree)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.eval_jet(x, 1)?.value())
    }

    /// Jet of rung `d` (0 = primary leaf) at `x`.
    pub fn eval_rung_jet(&self, d: usize, x: f64, degree: usize) -> Result<TaylorJet> {
        if d == 0 {
            return self.primary.eval_jet(x, degree);
        }
        if x < self.x_lo - 1e-9 || x > self.x_hi + 1e-9 {
            return Err(CoreError::OutOfDomain(format!(
                "x = {x} outside leaf domain [{}, {}]",
                self.x_lo, self.x_hi
            )));
        }
        let sign = self.signs[d - 1];
        let (a, b) = (self.params.a, self.params.b);
        let mut u0 = self.levels[d];
        for _refetch in 0..4 {
            let p_jet = self.eval_rung_jet(d - 1, u0, degree.max(4))?;
            // Newton on F(u) = u^2 - P(u) - b x + a with P from the jet.
            let p_at = |u: f64| -> f64 {
                let du = u - u0;
                let mut acc = 0.0;
                for &c in p_jet.coeffs.iter().rev() {
                    acc = acc * du + c;
                }
                acc
            };
            let dp_at = |u: f64| -> f64 {
                let du = u - u0;
                let mut acc = 0.0;
                for (k, &c) in p_jet.coeffs.iter().enumerate().rev() {
                    if k >= 1 {
                        acc = acc * du + c * k as f64;
                    }
                }
                acc
            };
            let mut u = {
                let rad = p_at(u0) + b * x - a;
                if rad <= 0.0 {
                    return Err(CoreError::OutOfDomain(format!(
                        "leaf radicand non-positive at x = {x} (depth {d})"
                    )));
                }
                sign * rad.sqrt()
            };
            let mut ok = false;
            for _ in 0..60 {
                let f = u * u - p_at(u) - b * x + a;
                let df = 2.0 * u - dp_at(u);
                if df.abs() < 1e-10 {
                    return Err(CoreError::OutOfDomain(format!(
                        "leaf rung ill-conditioned at x = {x} (depth {d})"
                    )));
                }
                let step = f / df;
                u -= step;
                if step.abs() <= 1e-15 * u.abs().max(1.0) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(CoreError::OutOfDomain(format!(
                    "leaf rung solve did not converge at x = {x} (depth {d})"
                )));
            }
            if (u - u0).abs() > 0.02 {
                u0 = u;
                continue;
            }
            // Recenter the previous rung's jet exactly at the solution.
            let p = self.eval_rung_jet(d - 1, u, degree.max(4))?;
            let (p1, p2, p3, p4) = (p.deriv(1), p.deriv(2), p.deriv(3), p.deriv(4));
            let denom = 2.0 * u - p1;
            if denom.abs() < 1e-10 {
                return Err(CoreError::OutOfDomain(format!(
                    "leaf rung ill-conditioned at x = {x} (depth {d})"
                )));
            }
            let g1 = b / denom;
            let g2 = (p2 * g1 * g1 - 2.0 * g1 * g1) / denom;
            let g3 = (p3 * g1.powi(3) + 3.0 * p2 * g1 * g2 - 6.0 * g1 * g2) / denom;
            let g4 = (p4 * g1.powi(4) + 6.0 * p3 * g1 * g1 * g2 + 3.0 * p2 * g2 * g2
                + 4.0 * p2 * g1 * g3
                - 6.0 * g2 * g2
                - 8.0 * g1 * g3)
                / denom;
            let derivs = [u, g1, g2 / 2.0, g3 / 6.0, g4 / 24.0];
            let coeffs = derivs[..=degree.min(4)].to_vec();
            return Ok(TaylorJet { center: x, coeffs });
        }
        Err(CoreError::OutOfDomain(format!(
            "leaf level estimate did not settle at x = {x} (depth {d})"
        )))
    }
}

/// Build a leaf ladder over `[x_lo, x_hi]`. `signs[k]` chooses the square-root
/// branch of rung k+1; the default (all +1) climbs the p- ladder toward the
/// p+ segment.
pub fn leaf_ladder(
    params: Params,
    base: Which,
    depth: usize,
    x_lo: f64,
    x_hi: f64,
    signs: Option<Vec<f64>>,
) -> Result<LeafLadder> {
    let signs = signs.unwrap_or_else(|| vec![1.0; depth]);
    if signs.len() != depth {
        return Err(CoreError::InvalidInput("signs length must equal depth".into()));
    }
    let fp = henon::eigen_data(params, base)?;
    // The primary graph must cover its own queries: levels live in roughly
    // [-2.2, 2.2] near the corner, so extend the domain a bit past the levels.
    let primary_branch = if params.b == 0.0 {
        horizontal_stable_branch(params, base)?
    } else {
        let iterate = if fp.sigma < 0.0 || fp.lambda < 0.0 { 2 } else { 1 };
        local_parametrization(params, base, ManifoldKind::Stable, 10, iterate, ScaleMode::Certify)?
    };
    let pad = 0.4;
    let lo = x_lo.min(-2.2) - pad;
    let hi = x_hi.max(2.2) + pad;
    let primary = holding_function(&primary_branch, lo, hi)?;

    // Level estimates by iterating the rung relation on heights.
    let mut levels = vec![fp.location.y];
    for k in 0..depth {
        let prev = levels[k];
        let mut u = signs[k] * (prev - params.a).abs().sqrt();
        for _ in 0..50 {
            // Height relation ignoring the b x term.
            let rad = levels[k] - params.a;
            if rad <= 0.0 {
                return Err(CoreError::OutOfDomain(format!(
                    "level estimate failed at rung {}",
                    k + 1
                )));
            }
            let next = signs[k] * rad.sqrt();
            if (next - u).abs() < 1e-14 {
                u = next;
                break;
            }
            u = next;
        }
        levels.push(u);
    }

    let ladder = LeafLadder {
        params,
        base,
        x_lo: lo,
        x_hi: hi,
        signs,
        levels,
        primary,
    };
    // Refine level estimates with one true evaluation at the domain center.
    let mut refined = ladder;
    let xc = 0.5 * (x_lo + x_hi);
    for d in 1..=refined.depth() {
        if let Ok(jet) = refined.eval_rung_jet(d, xc, 1) {
            refined.levels[d] = jet.value();
        }
    }
    Ok(refined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_levels_at_b0_match_chebyshev_preimages() {
        // At (a, b) = (-2, 0) the leaves are exact horizontal lines at the
        // preimage heights of -1 under y -> y^2 - 2: -1, 1, sqrt(3), ...
        let params = Params::new(-2.0, 0.0);
        let ladder = leaf_ladder(params, Which::Minus, 4, -2.4, 2.4, None).unwrap();
        let expected = [
            -1.0,
            1.0,
            3f64.sqrt(),
            (2.0 + 3f64.sqrt()).sqrt(),
            (2.0 + (2.0 + 3f64.sqrt()).sqrt()).sqrt(),
        ];
        for (d, want) in expected.iter().enumerate() {
            for x in [-2.0, 0.3, 1.9] {
                let jet = ladder.eval_rung_jet(d, x, 2).unwrap();
                assert!((jet.value() - want).abs() < 1e-12, "depth {d} x {x}");
                assert!(jet.deriv(1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leaf_forward_invariance() {
        let params = Params::new(-2.01, 0.012);
        let ladder = leaf_ladder(params, Which::Minus, 5, -2.4, 2.4, None).unwrap();
        for d in 1..=5usize {
            for x in [-2.2, -0.7, 0.9, 2.1] {
                let y = ladder.eval_rung_jet(d, x, 1).unwrap().value();
                let img = henon::apply(params, crate::geom::Point2::new(x, y));
                let on_prev = ladder.eval_rung_jet(d - 1, img.x, 1).unwrap().value();
                assert!(
                    (img.y - on_prev).abs() < 1e-11,
                    "depth {d} x {x}: {:e}",
                    (img.y - on_prev).abs()
                );
            }
        }
    }

    #[test]
    fn leaf_derivatives_match_finite_differences() {
        let params = Params::new(-2.01, 0.012);
        let ladder = leaf_ladder(params, Which::Minus, 3, -2.4, 2.4, None).unwrap();
        let h = 1e-4;
        for x in [-1.8, 0.2, 1.7] {
            let jet = ladder.eval_jet(x, 3).unwrap();
            let f = |xx: f64| ladder.eval(xx).unwrap();
            let d1 = (f(x - 2.0 * h) - f(x + 2.0 * h) + 8.0 * (f(x + h) - f(x - h)))
                / (12.0 * h);
            assert!(
                (d1 - jet.deriv(1)).abs() < 1e-9 + 1e-6 * d1.abs(),
                "x = {x}: {d1} vs {}",
                jet.deriv(1)
            );
            let d2 = (f(x + h) + f(x - h) - 2.0 * f(x)) / (h * h);
            assert!((d2 - jet.deriv(2)).abs() < 1e-6 + 1e-4 * d2.abs());
        }
    }

    #[test]
    fn deep_p_minus_leaves_converge_to_p_plus_segment() {
        // The inclination-lemma surrogate: deep leaves of W^s(p-) approach the
        // primary W^s(p+) segment in heights and slopes.
        let params = Params::new(-2.004, 0.008);
        let ladder = leaf_ladder(params, Which::Minus, 9, -2.4, 2.4, None).unwrap();
        let plus_branch = local_parametrization(
            params,
            Which::Plus,
            ManifoldKind::Stable,
            10,
            1,
            ScaleMode::Certify,
        )
        .unwrap();
        let eta_plus = holding_function(&plus_branch, -2.4, 2.4).unwrap();
        let mut sup_h: f64 = 0.0;
        let mut sup_s: f64 = 0.0;
        for i in 0..=24 {
            let x = -2.4 + 4.8 * (i as f64) / 24.0;
            let deep = ladder.eval_jet(x, 1).unwrap();
            let plus = eta_plus.eval_jet(x, 1).unwrap();
            sup_h = sup_h.max((deep.value() - plus.value()).abs());
            sup_s = sup_s.max((deep.deriv(1) - plus.deriv(1)).abs());
        }
        assert!(sup_h < 1e-3, "heights sup-distance {sup_h}");
        assert!(sup_s < 1e-3, "slopes sup-distance {sup_s}");
    }
}
