//! Gap functions between unstable curves and stable graphs, tangency
//! location, order classification and genericity certificates.
//!
//! The gap of a parametrized unstable arc `t -> (x(t), y(t))` over a stable
//! graph `y = eta(x)` is `g(t) = y(t) - eta(x(t))`. Its derivatives come from
//! exact jet composition. Pipelines report derivatives with respect to
//! arclength of the arc, so tolerances are parametrization-independent;
//! contexts built from explicit polynomial curves can opt out to match
//! closed-form expectations in raw parameter units.

use crate::error::{CoreError, Result};
use crate::geom::{Point2, Rect};
use crate::henon::{Params, Which};
use crate::jet::{poly_germ, CurveGerm, TaylorJet, JET_ORDER};
use crate::leaves::LeafLadder;
use crate::manifold::{HoldingFunction, ManifoldBranch};
use serde::{Deserialize, Serialize};

/// Default tolerance bands, relative to local feature scales.
pub const TOL_ZERO: f64 = 1e-9;
pub const TOL_NONZERO: f64 = 1e-4;
pub const TOL_GENERIC: f64 = 1e-6;

/// The unstable side of a gap: an analytic branch, an explicit polynomial
/// curve, or an affinely reparametrized branch window (used when a structure
/// rides a tracked point whose raw parameter is extremely stiff in the map
/// parameters; the relative coordinate stays well-conditioned).
#[derive(Debug, Clone)]
pub enum ArcSource {
    Branch(ManifoldBranch),
    Poly(Vec<Point2>),
    Reparam {
        branch: ManifoldBranch,
        center: f64,
        half: f64,
    },
    /// A high-order Taylor germ of a branch at a base point, evaluated in
    /// offset coordinates `delta = u * half` and pushed through `steps`
    /// forward map applications. Offsets are resolved to full relative f64
    /// precision, far below the ulp of the raw branch parameter at deep
    /// iterates.
    PolyJet {
        coeffs: Vec<Point2>,
        half: f64,
        steps: usize,
        params: Params,
    },
}

impl ArcSource {
    pub fn germ_at(&self, t: f64, degree: usize) -> Result<CurveGerm> {
        match self {
            ArcSource::Branch(b) => b.germ_at(t, degree),
            ArcSource::Poly(coeffs) => Ok(poly_germ(coeffs, t, degree)),
            ArcSource::Reparam { branch, center, half } => {
                Ok(branch.germ_at(center + t * half, degree)?.rescale_var(*half))
            }
            ArcSource::PolyJet { coeffs, half, steps, params } => {
                let mut g = poly_germ(coeffs, t * half, degree).rescale_var(*half);
                for _ in 0..*steps {
                    g = crate::henon::apply_germ(*params, &g);
                }
                Ok(g)
            }
        }
    }
}

/// The stable side of a gap: a manifold graph or a preimage leaf.
#[derive(Debug, Clone)]
pub enum StableSide {
    Graph(HoldingFunction),
    Ladder(LeafLadder),
}

impl StableSide {
    pub fn eval_jet(&self, x: f64, degree: usize) -> Result<TaylorJet> {
        match self {
            StableSide::Graph(h) => h.eval_jet(x, degree),
            StableSide::Ladder(l) => l.eval_jet(x, degree),
        }
    }

    pub fn x_lo(&self) -> f64 {
        match self {
            StableSide::Graph(h) => h.x_lo,
            StableSide::Ladder(l) => l.x_lo,
        }
    }

    pub fn x_hi(&self) -> f64 {
        match self {
            StableSide::Graph(h) => h.x_hi,
            StableSide::Ladder(l) => l.x_hi,
        }
    }

    /// Preimage depth of the leaf (0 for a primary graph).
    pub fn leaf_depth(&self) -> usize {
        match self {
            StableSide::Graph(_) => 0,
            StableSide::Ladder(l) => l.depth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TangencyKind {
    Homoclinic,
    Heteroclinic,
}

/// A gap context: unstable arc vs stable graph at fixed parameters, with a
/// working t-interval used for feature-scale normalization.
#[derive(Debug, Clone)]
pub struct GapContext {
    pub arc: ArcSource,
    pub stable: StableSide,
    pub params: Params,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Report derivatives with respect to arclength instead of the raw parameter.
    pub arc_units: bool,
    pub unstable_of: Which,
    pub stable_of: Which,
}

impl GapContext {
    /// Raw-parameter gap jet at `t` (order 4).
    pub fn gap_jet_raw(&self, t: f64) -> Result<TaylorJet> {
        let germ = self.arc.germ_at(t, JET_ORDER)?;
        let x0 = germ.jet_x.value();
        let lo = self.stable.x_lo();
        let hi = self.stable.x_hi();
        if x0 < lo || x0 > hi {
            return Err(CoreError::OutOfDomain(format!(
                "arc point x = {x0} outside stable domain [{lo}, {hi}]"
            )));
        }
        let eta = self.stable.eval_jet(x0, JET_ORDER)?;
        Ok(germ.jet_y.sub(&eta.compose(&germ.jet_x)))
    }

    /// Gap jet in the context's reporting units, plus the local curve speed
    /// (plane units per raw parameter unit).
    pub fn gap_jet(&self, t: f64) -> Result<(TaylorJet, f64)> {
        let germ = self.arc.germ_at(t, JET_ORDER)?;
        let x0 = germ.jet_x.value();
        let lo = self.stable.x_lo();
        let hi = self.stable.x_hi();
        if x0 < lo || x0 > hi {
            return Err(CoreError::OutOfDomain(format!(
                "arc point x = {x0} outside stable domain [{lo}, {hi}]"
            )));
        }
        let eta = self.stable.eval_jet(x0, JET_ORDER)?;
        let g_raw = germ.jet_y.sub(&eta.compose(&germ.jet_x));
        let dx = germ.jet_x.derivative();
        let dy = germ.jet_y.derivative();
        let speed_jet = dx.square().add(&dy.square()).sqrt()?;
        let speed = speed_jet.value();
        if !self.arc_units {
            return Ok((g_raw, speed));
        }
        let alpha = speed_jet.integrate();
        let eps_of_s = alpha.invert_series()?;
        Ok((g_raw.compose(&eps_of_s), speed))
    }

    /// Gap value and first three derivatives at `t`.
    pub fn gap_derivatives(&self, t: f64) -> Result<(f64, f64, f64, f64)> {
        let (j, _) = self.gap_jet(t)?;
        Ok((j.deriv(0), j.deriv(1), j.deriv(2), j.deriv(3)))
    }

    /// Feature scales of the gap over the working interval: the maximal
    /// magnitude of each derivative order, floored to avoid zero scales.
    pub fn feature_scales(&self, n_samples: usize) -> Result<[f64; 5]> {
        let mut scales = [0.0f64; 5];
        let n = n_samples.max(4);
        for i in 0..=n {
            let t = self.t_lo + (self.t_hi - self.t_lo) * (i as f64) / (n as f64);
            let (j, _) = match self.gap_jet(t) {
                Ok(v) => v,
                Err(CoreError::OutOfDomain(_)) => continue,
                Err(e) => return Err(e),
            };
            for (k, s) in scales.iter_mut().enumerate() {
                *s = s.max(j.deriv(k).abs());
            }
        }
        let floor = scales.iter().cloned().fold(0.0f64, f64::max) * 1e-12 + 1e-300;
        for s in scales.iter_mut() {
            *s = s.max(floor);
        }
        Ok(scales)
    }
}

/// Smallest order n >= 1 with derivatives 1..=n below `TOL_ZERO` (relative to
/// window feature scales) and derivative n+1 above `TOL_NONZERO`; returns 0
/// for a transverse crossing (|g| small but |g'| large).
pub fn classify_order(ctx: &GapContext, t_star: f64) -> Result<usize> {
    let scales = ctx.feature_scales(32)?;
    let (j, _) = ctx.gap_jet(t_star)?;
    if j.deriv(0).abs() > TOL_ZERO.sqrt() * scales[0] {
        return Err(CoreError::InvalidInput(format!(
            "not an intersection: |g| = {} exceeds the zero band",
            j.deriv(0).abs()
        )));
    }
    if j.deriv(1).abs() > TOL_NONZERO * scales[1] {
        return Ok(0);
    }
    for n in 1..=3usize {
        let next = j.deriv(n + 1).abs();
        if next > TOL_NONZERO * scales[n + 1] {
            return Ok(n);
        }
        if n + 2 > JET_ORDER {
            break;
        }
    }
    Err(CoreError::Unclassifiable)
}

/// Unfolding certificates attached to a tangency.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UnfoldingData {
    /// Quadratic case: velocity difference (0, d g(crit)/d s) along the family.
    pub velocity_diff: Point2,
    /// Cubic case: d_a g * d_b g' - d_b g * d_a g'.
    pub det_a1a4_a2a3: f64,
    pub fd_step: f64,
    /// Relative uncertainty of the certificate from Richardson differences.
    pub condition_estimate: f64,
}

/// Solver provenance kept with each record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// A located tangency with order and genericity certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyRecord {
    pub t_star: f64,
    pub location: Point2,
    pub params: Params,
    /// 1 = quadratic, 2 = cubic.
    pub order: usize,
    /// g, g', g'', g''' at t_star (context units).
    pub g_derivs: [f64; 4],
    pub kind: TangencyKind,
    /// (saddle owning the unstable side, saddle owning the stable side).
    pub saddle_pair: (Which, Which),
    pub genericity: UnfoldingData,
    /// Preimage depth of the stable leaf that realized the tangency.
    pub leaf_depth: usize,
    pub residual: f64,
    pub provenance: Provenance,
}

/// Options for the tangency Newton solvers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub residual_tol: f64,
    pub fd_step: f64,
    pub max_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            residual_tol: 1e-10,
            // Centered steps at 1e-5 of the parameter box, one Richardson
            // refinement: certificates need ~6 digits, not machine precision.
            fd_step: 1e-5,
            max_step: 0.5,
        }
    }
}

/// Track a zero of the n-th gap derivative inside the window, starting near
/// `t_seed`: bracket the sign change by local sampling, bisect, then polish
/// by Newton with the (n+1)-th derivative.
pub fn track_derivative_zero(
    ctx: &GapContext,
    n: usize,
    t_seed: f64,
) -> Result<f64> {
    let val = |t: f64| -> Result<f64> { Ok(ctx.gap_jet(t)?.0.deriv(n)) };
    // Find the sign-change bracket nearest the seed by expanding sampling.
    let width = (ctx.t_hi - ctx.t_lo).abs();
    let mut bracket: Option<(f64, f64, f64)> = None;
    let mut half = width * 1e-6;
    'expand: while half <= width {
        let m = 32;
        let lo = (t_seed - half).max(ctx.t_lo.min(ctx.t_hi));
        let hi = (t_seed + half).min(ctx.t_lo.max(ctx.t_hi));
        let mut prev: Option<(f64, f64)> = None;
        let mut nearest: Option<(f64, f64, f64)> = None;
        for i in 0..=m {
            let t = lo + (hi - lo) * (i as f64) / (m as f64);
            let Ok(v) = val(t) else {
                prev = None;
                continue;
            };
            if let Some((tp, vp)) = prev {
                if vp.signum() != v.signum() {
                    let mid = 0.5 * (tp + t);
                    if nearest.map_or(true, |(np, _, nq)| {
                        (mid - t_seed).abs() < (0.5 * (np + nq) - t_seed).abs()
                    }) {
                        nearest = Some((tp, vp, t));
                    }
                }
            }
            prev = Some((t, v));
        }
        if nearest.is_some() {
            bracket = nearest;
            break 'expand;
        }
        half *= 4.0;
    }
    let (mut lo, mut v_lo, mut hi) = bracket.ok_or_else(|| CoreError::OutOfDomain(format!(
        "no sign change of derivative {n} near the seed"
    )))?;
    // A few bisection steps to tighten, then Newton.
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        let Ok(v) = val(mid) else { break };
        if v.signum() == v_lo.signum() {
            lo = mid;
            v_lo = v;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..60 {
        let (j, speed) = ctx.gap_jet(t)?;
        let d = j.deriv(n);
        let dd = j.deriv(n + 1);
        if dd == 0.0 {
            break;
        }
        let step = -d / dd;
        t += if ctx.arc_units { step / speed } else { step };
        if step.abs() <= 1e-16 * (1.0 + t.abs()) || step.abs() < 1e-30 {
            break;
        }
    }
    Ok(t)
}

/// Newton solve of (g, g')(t, a) = 0 for a one-parameter family of contexts.
///
/// Structured as a nested solve: the inner stage tracks the critical point
/// t_c(a) of the gap, the outer stage drives the critical value g(t_c(a)) to
/// zero in `a`. The outer derivative is the unfolding velocity (the critical
/// point moves tangentially, so d/da g(t_c(a)) equals the partial in a).
/// `family(a)` rebuilds the full gap context at the perturbed parameter; the
/// manifolds are recomputed, never frozen.
pub fn solve_quadratic<F>(
    family: &F,
    seed_t: f64,
    seed_a: f64,
    opts: &SolveOptions,
) -> Result<(f64, f64, TaylorJet, Provenance)>
where
    F: Fn(f64) -> Result<GapContext>,
{
    let mut a = seed_a;
    let mut t = seed_t;
    let mut history = Vec::new();
    let crit = |aa: f64, t_seed: f64| -> Result<(f64, TaylorJet)> {
        let ctx = family(aa)?;
        let tc = track_derivative_zero(&ctx, 1, t_seed)?;
        let (j, _) = ctx.gap_jet(tc)?;
        Ok((tc, j))
    };
    for iter in 0..opts.max_iterations {
        let (tc, j) = crit(a, t)?;
        t = tc;
        let res = j.deriv(0).hypot(j.deriv(1));
        history.push(res);
        if res < opts.residual_tol {
            return Ok((
                t,
                a,
                j,
                Provenance {
                    seed: vec![seed_t, seed_a],
                    iterations: iter,
                    residual_history: history,
                },
            ));
        }
        let h = opts.fd_step * a.abs().max(1.0);
        let gp = crit(a + h, t)?.1.deriv(0);
        let gm = crit(a - h, t)?.1.deriv(0);
        let slope = (gp - gm) / (2.0 * h);
        if slope == 0.0 || !slope.is_finite() {
            return Err(CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: "vanishing unfolding slope".into(),
            });
        }
        let mut da = -j.deriv(0) / slope;
        if !da.is_finite() || da.abs() > opts.max_step {
            return Err(CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: format!("step explosion: da = {da}"),
            });
        }
        // Damped acceptance on the critical value.
        let mut accepted = false;
        for _ in 0..8 {
            match crit(a + da, t) {
                Ok((tn, jn)) => {
                    let rn = jn.deriv(0).hypot(jn.deriv(1));
                    if rn < res || da.abs() < 1e-15 * a.abs().max(1.0) {
                        a += da;
                        t = tn;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            da *= 0.5;
        }
        if !accepted {
            return Err(CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: "line search failed".into(),
            });
        }
    }
    let res = history.last().copied().unwrap_or(f64::NAN);
    Err(CoreError::NewtonDiverged {
        iterations: opts.max_iterations,
        residual: res,
        context: "max iterations".into(),
    })
}

/// Newton solve of (g, g', g'')(t, a, b) = 0 for a two-parameter family.
///
/// Nested like the quadratic solve: the inner stage tracks the inflection
/// t_i(a, b) (zero of g'', simple because g''' != 0 at a cubic tangency); the
/// outer stage drives (g, g')(t_i(a, b)) to zero by a 2x2 Newton with a
/// finite-difference Jacobian, every entry rebuilt from scratch.
pub fn solve_cubic<F>(
    family: &F,
    seed: (f64, f64, f64),
    opts: &SolveOptions,
) -> Result<(f64, f64, f64, TaylorJet, Provenance)>
where
    F: Fn(f64, f64) -> Result<GapContext>,
{
    let (mut t, mut a, mut b) = seed;
    let mut history = Vec::new();
    let inflect = |aa: f64, bb: f64, t_seed: f64| -> Result<(f64, TaylorJet)> {
        let ctx = family(aa, bb)?;
        let ti = track_derivative_zero(&ctx, 2, t_seed)?;
        let (j, _) = ctx.gap_jet(ti)?;
        Ok((ti, j))
    };
    for iter in 0..opts.max_iterations {
        let (ti, j) = inflect(a, b, t)?;
        t = ti;
        let f = [j.deriv(0), j.deriv(1), j.deriv(2)];
        let res = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
        history.push(res);
        if res < opts.residual_tol {
            return Ok((
                t,
                a,
                b,
                j,
                Provenance {
                    seed: vec![seed.0, seed.1, seed.2],
                    iterations: iter,
                    residual_history: history,
                },
            ));
        }
        let ha = opts.fd_step * a.abs().max(1.0);
        let hb = opts.fd_step * b.abs().max(0.01);
        let e_ap = inflect(a + ha, b, t)?.1;
        let e_am = inflect(a - ha, b, t)?.1;
        let e_bp = inflect(a, b + hb, t)?.1;
        let e_bm = inflect(a, b - hb, t)?.1;
        let jac = crate::geom::Mat2::new(
            (e_ap.deriv(0) - e_am.deriv(0)) / (2.0 * ha),
            (e_bp.deriv(0) - e_bm.deriv(0)) / (2.0 * hb),
            (e_ap.deriv(1) - e_am.deriv(1)) / (2.0 * ha),
            (e_bp.deriv(1) - e_bm.deriv(1)) / (2.0 * hb),
        );
        let delta = jac
            .solve(Point2::new(-f[0], -f[1]))
            .ok_or_else(|| CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: "singular cubic-tangency Jacobian".into(),
            })?;
        if !delta.x.is_finite()
            || !delta.y.is_finite()
            || delta.x.abs() > opts.max_step
            || delta.y.abs() > opts.max_step
        {
            return Err(CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: format!("step explosion: da = {}, db = {}", delta.x, delta.y),
            });
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            match inflect(a + lambda * delta.x, b + lambda * delta.y, t) {
                Ok((tn, jn)) => {
                    let rn =
                        (jn.deriv(0).powi(2) + jn.deriv(1).powi(2) + jn.deriv(2).powi(2)).sqrt();
                    if rn < res || lambda * delta.x.abs().max(delta.y.abs()) < 1e-16 {
                        a += lambda * delta.x;
                        b += lambda * delta.y;
                        t = tn;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(CoreError::NewtonDiverged {
                iterations: iter,
                residual: res,
                context: "line search failed".into(),
            });
        }
    }
    let res = history.last().copied().unwrap_or(f64::NAN);
    Err(CoreError::NewtonDiverged {
        iterations: opts.max_iterations,
        residual: res,
        context: "max iterations".into(),
    })
}

/// Locate a quadratic tangency of a b-fixed family and certify its unfolding.
pub fn find_quadratic_tangency<F>(
    family: &F,
    seed_t: f64,
    seed_a: f64,
    opts: &SolveOptions,
) -> Result<TangencyRecord>
where
    F: Fn(f64) -> Result<GapContext>,
{
    let (t, a, _, prov) = solve_quadratic(family, seed_t, seed_a, opts)?;
    // Re-verify from scratch at the converged parameters.
    let ctx = family(a)?;
    let (j, _) = ctx.gap_jet(t)?;
    let residual = j.deriv(0).hypot(j.deriv(1));
    let scales = ctx.feature_scales(32)?;
    if j.deriv(2).abs() < TOL_NONZERO * scales[2] {
        return Err(CoreError::OrderAmbiguous {
            g2: j.deriv(2).abs(),
            threshold: TOL_NONZERO * scales[2],
        });
    }
    // Unfolding velocity along a: d/da of the gap at the critical point equals
    // the partial derivative at fixed t there (the critical point moves
    // tangentially), measured with one Richardson refinement.
    let (vel, err, h) = richardson_partial(
        &|aa: f64| {
            let c = family(aa)?;
            Ok(c.gap_jet(t)?.0.deriv(0))
        },
        a,
        opts.fd_step * a.abs().max(1.0),
    )?;
    let germ = ctx.arc.germ_at(t, 1)?;
    Ok(TangencyRecord {
        t_star: t,
        location: germ.point(),
        params: ctx.params,
        order: 1,
        g_derivs: [j.deriv(0), j.deriv(1), j.deriv(2), j.deriv(3)],
        kind: if ctx.unstable_of == ctx.stable_of {
            TangencyKind::Homoclinic
        } else {
            TangencyKind::Heteroclinic
        },
        saddle_pair: (ctx.unstable_of, ctx.stable_of),
        genericity: UnfoldingData {
            velocity_diff: Point2::new(0.0, vel),
            det_a1a4_a2a3: 0.0,
            fd_step: h,
            condition_estimate: err / vel.abs().max(1e-300),
        },
        leaf_depth: ctx.stable.leaf_depth(),
        residual,
        provenance: prov,
    })
}

/// Locate a cubic tangency of an (a, b)-family and certify generic unfolding
/// through the determinant `d_a g * d_b g' - d_b g * d_a g'`.
pub fn find_cubic_tangency<F>(
    family: &F,
    seed: (f64, f64, f64),
    opts: &SolveOptions,
) -> Result<TangencyRecord>
where
    F: Fn(f64, f64) -> Result<GapContext>,
{
    let (t, a, b, _, prov) = solve_cubic(family, seed, opts)?;
    let ctx = family(a, b)?;
    let (j, _) = ctx.gap_jet(t)?;
    let residual = (j.deriv(0).powi(2) + j.deriv(1).powi(2) + j.deriv(2).powi(2)).sqrt();
    let scales = ctx.feature_scales(32)?;
    if j.deriv(3).abs() < TOL_NONZERO * scales[3] {
        return Err(CoreError::OrderTooHigh {
            g3: j.deriv(3).abs(),
            threshold: TOL_NONZERO * scales[3],
        });
    }
    let ha = opts.fd_step * a.abs().max(1.0);
    let hb = opts.fd_step * b.abs().max(0.01);
    let eval = |aa: f64, bb: f64| -> Result<(f64, f64)> {
        let c = family(aa, bb)?;
        let (jj, _) = c.gap_jet(t)?;
        Ok((jj.deriv(0), jj.deriv(1)))
    };
    let det_at = |step_a: f64, step_b: f64| -> Result<(f64, f64, f64)> {
        let (gp_a, g1p_a) = eval(a + step_a, b)?;
        let (gm_a, g1m_a) = eval(a - step_a, b)?;
        let (gp_b, g1p_b) = eval(a, b + step_b)?;
        let (gm_b, g1m_b) = eval(a, b - step_b)?;
        let da_g = (gp_a - gm_a) / (2.0 * step_a);
        let da_g1 = (g1p_a - g1m_a) / (2.0 * step_a);
        let db_g = (gp_b - gm_b) / (2.0 * step_b);
        let db_g1 = (g1p_b - g1m_b) / (2.0 * step_b);
        let grad_scale = da_g.hypot(db_g) * da_g1.hypot(db_g1);
        Ok((da_g * db_g1 - db_g * da_g1, grad_scale, 0.0))
    };
    let (d_h, scale, _) = det_at(ha, hb)?;
    let (d_h2, _, _) = det_at(ha / 2.0, hb / 2.0)?;
    let det = (4.0 * d_h2 - d_h) / 3.0;
    let det_err = (d_h2 - d_h).abs() / 3.0;
    if det.abs() < TOL_GENERIC * scale.max(1e-300) {
        return Err(CoreError::DegenerateUnfolding {
            det,
            threshold: TOL_GENERIC * scale,
        });
    }
    let germ = ctx.arc.germ_at(t, 1)?;
    Ok(TangencyRecord {
        t_star: t,
        location: germ.point(),
        params: ctx.params,
        order: 2,
        g_derivs: [j.deriv(0), j.deriv(1), j.deriv(2), j.deriv(3)],
        kind: if ctx.unstable_of == ctx.stable_of {
            TangencyKind::Homoclinic
        } else {
            TangencyKind::Heteroclinic
        },
        saddle_pair: (ctx.unstable_of, ctx.stable_of),
        genericity: UnfoldingData {
            velocity_diff: Point2::new(0.0, 0.0),
            det_a1a4_a2a3: det,
            fd_step: ha,
            condition_estimate: det_err / det.abs().max(1e-300),
        },
        leaf_depth: ctx.stable.leaf_depth(),
        residual,
        provenance: prov,
    })
}

/// Centered difference with one Richardson refinement; returns (value,
/// error estimate, step used).
pub fn richardson_partial<F>(f: &F, x: f64, h0: f64) -> Result<(f64, f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let d = |h: f64| -> Result<f64> { Ok((f(x + h)? - f(x - h)?) / (2.0 * h)) };
    let d1 = d(h0)?;
    let d2 = d(h0 / 2.0)?;
    let value = (4.0 * d2 - d1) / 3.0;
    let err = (d2 - d1).abs() / 3.0;
    Ok((value, err, h0))
}

/// Derivative of the gap at the moving critical point along a one-parameter
/// family, with step refinement. Returns the velocity difference
/// `v_u_perp - v_s_perp = (0, d g(crit)/d s)`.
pub fn unfolding_velocity<F>(
    family: &F,
    t_star: f64,
    s0: f64,
    h0: f64,
    target_rel: f64,
) -> Result<Point2>
where
    F: Fn(f64) -> Result<GapContext>,
{
    let crit_value = |s: f64| -> Result<f64> {
        let ctx = family(s)?;
        let mut t = t_star;
        for _ in 0..60 {
            let (j, speed) = ctx.gap_jet(t)?;
            let g1 = j.deriv(1);
            let g2 = j.deriv(2);
            if g2 == 0.0 {
                return Err(CoreError::StepUnderflow("flat critical point".into()));
            }
            let ds = -g1 / g2;
            t += if ctx.arc_units { ds / speed } else { ds };
            if ds.abs() <= 1e-14 {
                break;
            }
        }
        Ok(ctx.gap_jet(t)?.0.deriv(0))
    };
    let mut h = h0;
    for _ in 0..6 {
        let (v, err, _) = richardson_partial(&crit_value, s0, h)?;
        if err <= target_rel * v.abs().max(1e-12) {
            return Ok(Point2::new(0.0, v));
        }
        h /= 4.0;
        if h < 1e-12 {
            return Err(CoreError::StepUnderflow(format!(
                "differencing cannot reach relative accuracy {target_rel}"
            )));
        }
    }
    let (v, _, _) = richardson_partial(&crit_value, s0, h)?;
    Ok(Point2::new(0.0, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactClass {
    Making,
    Breaking,
}

/// Classify a quadratic tangency along a parameter path: contact-making when
/// the local intersection count goes 0 -> 1 -> 2 as s increases (the sign of
/// d g(crit)/ds opposite to the sign of g'').
pub fn classify_contact<F>(
    family: &F,
    tangency: &TangencyRecord,
    s_star: f64,
    h0: f64,
) -> Result<ContactClass>
where
    F: Fn(f64) -> Result<GapContext>,
{
    if tangency.order != 1 {
        return Err(CoreError::InvalidInput(
            "contact classification applies to quadratic tangencies".into(),
        ));
    }
    let v = unfolding_velocity(family, tangency.t_star, s_star, h0, 1e-4)?;
    let speed = v.y;
    let ctx = family(s_star)?;
    let scales = ctx.feature_scales(32)?;
    if speed.abs() < TOL_GENERIC * scales[0].max(1e-300) {
        return Err(CoreError::Indeterminate { speed });
    }
    let g2 = tangency.g_derivs[2];
    Ok(if speed.signum() != g2.signum() {
        ContactClass::Making
    } else {
        ContactClass::Breaking
    })
}

/// One candidate seed from a coarse scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seed {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub merit: f64,
}

/// Coarse grid scan of `min_t (|g| + w |g'|)` over a parameter box, used to
/// seed tangency hunts. Returns candidates sorted by merit.
pub fn seed_scan<F>(
    family: &F,
    a_range: (f64, f64),
    b_range: (f64, f64),
    resolution: usize,
    t_samples: usize,
) -> Vec<Seed>
where
    F: Fn(f64, f64) -> Result<GapContext> + Sync,
{
    use rayon::prelude::*;
    let n = resolution.max(2);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut seeds: Vec<Seed> = cells
        .par_iter()
        .filter_map(|&(i, j)| {
            let a = a_range.0 + (a_range.1 - a_range.0) * (i as f64) / ((n - 1) as f64);
            let b = b_range.0 + (b_range.1 - b_range.0) * (j as f64) / ((n - 1) as f64);
            let ctx = family(a, b).ok()?;
            let mut best: Option<(f64, f64)> = None;
            let m = t_samples.max(8);
            let w = (ctx.t_hi - ctx.t_lo).abs() / (m as f64);
            for k in 0..=m {
                let t = ctx.t_lo + (ctx.t_hi - ctx.t_lo) * (k as f64) / (m as f64);
                if let Ok((jet, _)) = ctx.gap_jet(t) {
                    let merit = jet.deriv(0).abs() + w * jet.deriv(1).abs();
                    if best.map_or(true, |(bm, _)| merit < bm) {
                        best = Some((merit, t));
                    }
                }
            }
            let (merit, t) = best?;
            Some(Seed { t, a, b, merit })
        })
        .collect();
    seeds.sort_by(|p, q| p.merit.total_cmp(&q.merit));
    seeds
}

/// t-subintervals of `[t_lo, t_hi]` whose arc points lie inside `rect`,
/// split at folds of x(t) so the stable side stays a graph over each window.
pub fn window_components(
    arc: &ArcSource,
    t_lo: f64,
    t_hi: f64,
    rect: Rect,
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut comps = Vec::new();
    let mut cur: Option<(f64, f64)> = None;
    let mut prev_dx: Option<f64> = None;
    for i in 0..=n {
        let t = t_lo + (t_hi - t_lo) * (i as f64) / (n as f64);
        let g = arc.germ_at(t, 1)?;
        let p = g.point();
        let dx = g.jet_x.deriv(1);
        let inside = rect.contains(p) && p.is_finite();
        let fold = prev_dx.map_or(false, |pd| pd.signum() != dx.signum());
        if inside {
            cur = match cur {
                None => Some((t, t)),
                Some((lo, _)) if fold => {
                    comps.push((lo, t));
                    Some((t, t))
                }
                Some((lo, _)) => Some((lo, t)),
            };
        } else if let Some((lo, hi)) = cur.take() {
            if hi > lo {
                comps.push((lo, hi));
            }
        }
        prev_dx = Some(dx);
    }
    if let Some((lo, hi)) = cur {
        if hi > lo {
            comps.push((lo, hi));
        }
    }
    Ok(comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{
        holding_function, horizontal_stable_branch, local_parametrization, ManifoldKind,
        ScaleMode,
    };

    /// Synthetic family: a gap context whose arc is the explicit polynomial
    /// curve x = t, y = p(t); the stable side is the zero graph.
    fn model_ctx(poly_y: Vec<f64>, params: Params) -> GapContext {
        let len = poly_y.len().max(2);
        let coeffs: Vec<Point2> = (0..len)
            .map(|k| {
                Point2::new(
                    if k == 1 { 1.0 } else { 0.0 },
                    poly_y.get(k).copied().unwrap_or(0.0),
                )
            })
            .collect();
        let mut line = horizontal_stable_branch(Params::new(-2.0, 0.0), Which::Plus).unwrap();
        line.local_coeffs = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let h = holding_function(&line, -100.0, 100.0).unwrap();
        GapContext {
            arc: ArcSource::Poly(coeffs),
            stable: StableSide::Graph(h),
            params,
            t_lo: -1.0,
            t_hi: 1.0,
            arc_units: false,
            unstable_of: Which::Plus,
            stable_of: Which::Minus,
        }
    }

    #[test]
    fn gap_parabola_vs_horizontal_line() {
        // Unstable parabola y = x^2 - 2 vs eta == 2, parametrized by x = t:
        // g(t) = t^2 - 4, g'(2) = 4, g'' = 2, g''' = 0.
        let params = Params::new(-2.0, 0.0);
        let line = horizontal_stable_branch(params, Which::Plus).unwrap();
        let eta = holding_function(&line, -3.0, 3.5).unwrap();
        let ctx = GapContext {
            arc: ArcSource::Poly(vec![
                Point2::new(0.0, -2.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ]),
            stable: StableSide::Graph(eta),
            params,
            t_lo: -2.5,
            t_hi: 2.5,
            arc_units: false,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        };
        let (g, g1, g2, g3) = ctx.gap_derivatives(2.0).unwrap();
        assert!((g - 0.0).abs() < 1e-12);
        assert!((g1 - 4.0).abs() < 1e-12);
        assert!((g2 - 2.0).abs() < 1e-12);
        assert!(g3.abs() < 1e-12);
        // The manifold-backed parabola agrees with the closed form pointwise.
        let branch = local_parametrization(
            params,
            Which::Plus,
            ManifoldKind::Unstable,
            10,
            1,
            ScaleMode::Certify,
        )
        .unwrap();
        let hb = holding_function(&branch, 1.5, 2.5).unwrap();
        let j = hb.eval_jet(2.0, 2).unwrap();
        assert!((j.value() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn self_gap_vanishes() {
        // eta taken from the same branch as the unstable curve.
        let params = Params::new(-2.0, 0.0);
        let branch = local_parametrization(
            params,
            Which::Plus,
            ManifoldKind::Unstable,
            10,
            1,
            ScaleMode::Certify,
        )
        .unwrap();
        let eta = holding_function(&branch, 0.3, 1.2).unwrap();
        let ctx = GapContext {
            arc: ArcSource::Branch(branch.clone()),
            stable: StableSide::Graph(eta),
            params,
            t_lo: -0.4,
            t_hi: -0.1,
            arc_units: false,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        };
        let mut found = 0;
        // Walk both t-directions until the arc enters the overlap window.
        for sign in [1.0, -1.0] {
            let mut t = 1e-3 * sign;
            for _ in 0..200 {
                let p = ctx.arc.germ_at(t, 0).unwrap().point();
                if p.x > 0.35 && p.x < 1.15 {
                    let g = ctx.gap_jet_raw(t).unwrap();
                    assert!(g.deriv(0).abs() < 1e-10, "self gap at t = {t}");
                    found += 1;
                }
                t *= 1.15;
            }
        }
        assert!(found > 10, "only {found} overlap samples");
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        use rand::prelude::*;
        let params = Params::new(-2.0, 0.05);
        let branch = local_parametrization(
            params,
            Which::Plus,
            ManifoldKind::Unstable,
            12,
            1,
            ScaleMode::Certify,
        )
        .unwrap();
        let stable = crate::leaves::leaf_ladder(params, Which::Plus, 0, -2.6, 2.6, None).unwrap();
        let ctx = GapContext {
            arc: ArcSource::Branch(branch),
            stable: StableSide::Ladder(stable),
            params,
            t_lo: -0.9,
            t_hi: 0.9,
            arc_units: false,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 20 {
            let t = rng.gen_range(-0.9..0.9);
            let Ok(j) = ctx.gap_jet_raw(t) else { continue };
            let h = 1e-5;
            let (Ok(jp), Ok(jm)) = (ctx.gap_jet_raw(t + h), ctx.gap_jet_raw(t - h)) else {
                continue;
            };
            let fd = (jp.deriv(0) - jm.deriv(0)) / (2.0 * h);
            let rel = (fd - j.deriv(1)).abs() / j.deriv(1).abs().max(1e-9);
            assert!(rel < 1e-7, "t = {t}: fd {fd} vs jet {}", j.deriv(1));
            checked += 1;
        }
    }

    #[test]
    fn quadratic_model_family() {
        // g(t; a) = t^2 + a: tangency at (0, 0), g'' = 2, dg/da = 1.
        let family =
            |a: f64| -> Result<GapContext> { Ok(model_ctx(vec![a, 0.0, 1.0], Params::new(a, 0.0))) };
        let rec = find_quadratic_tangency(&family, 0.1, -0.01, &SolveOptions::default()).unwrap();
        assert!(rec.t_star.abs() < 1e-9);
        assert!(rec.params.a.abs() < 1e-9);
        assert!((rec.g_derivs[2] - 2.0).abs() < 1e-8);
        assert!((rec.genericity.velocity_diff.y - 1.0).abs() < 1e-6);
        assert_eq!(rec.order, 1);
    }

    #[test]
    fn quadratic_model_degenerate_seed_is_ambiguous() {
        // g(t; a) = t^3 + a t: any critical value drives a -> 0 where the
        // tangency is cubic, so the quadratic hunt must refuse (ambiguous
        // order, divergence, or loss of the critical point as g'' -> 0).
        let family = |a: f64| -> Result<GapContext> {
            Ok(model_ctx(vec![0.0, a, 0.0, 1.0], Params::new(a, 0.0)))
        };
        let res = find_quadratic_tangency(&family, 1e-2, -1e-4, &SolveOptions::default());
        assert!(
            matches!(
                res,
                Err(CoreError::OrderAmbiguous { .. })
                    | Err(CoreError::NewtonDiverged { .. })
                    | Err(CoreError::OutOfDomain(_))
            ),
            "got {res:?}"
        );
    }

    #[test]
    fn cubic_model_family() {
        // g(t; u, v) = t^3 + u + v t: cubic tangency at (0, 0, 0), g''' = 6,
        // det = a1 a4 - a2 a3 = 1.
        let family = |u: f64, v: f64| -> Result<GapContext> {
            Ok(model_ctx(vec![u, v, 0.0, 1.0], Params::new(u, v)))
        };
        let rec =
            find_cubic_tangency(&family, (0.05, 0.02, -0.01), &SolveOptions::default()).unwrap();
        assert!(rec.t_star.abs() < 1e-8);
        assert!(rec.params.a.abs() < 1e-8 && rec.params.b.abs() < 1e-8);
        assert!((rec.g_derivs[3] - 6.0).abs() < 1e-6);
        assert!((rec.genericity.det_a1a4_a2a3 - 1.0).abs() < 1e-4);
        assert_eq!(rec.order, 2);
    }

    #[test]
    fn classify_orders_on_normal_forms() {
        // Parabola vs tangent line at vertex -> 1.
        let ctx = model_ctx(vec![0.0, 0.0, 1.0], Params::new(0.0, 0.0));
        assert_eq!(classify_order(&ctx, 0.0).unwrap(), 1);
        // Cubic normal form t^3 -> 2.
        let ctx = model_ctx(vec![0.0, 0.0, 0.0, 1.0], Params::new(0.0, 0.0));
        assert_eq!(classify_order(&ctx, 0.0).unwrap(), 2);
        // Transverse crossing: |g| < tol but |g'| large -> 0.
        let ctx = model_ctx(vec![0.0, 1.0], Params::new(0.0, 0.0));
        assert_eq!(classify_order(&ctx, 0.0).unwrap(), 0);
    }

    #[test]
    fn unfolding_velocity_translation_family() {
        // g(t; s) = t^2 - s -> velocity (0, -1) exactly.
        let family =
            |s: f64| -> Result<GapContext> { Ok(model_ctx(vec![-s, 0.0, 1.0], Params::new(s, 0.0))) };
        let v = unfolding_velocity(&family, 0.1, 0.0, 1e-4, 1e-8).unwrap();
        assert!((v.y + 1.0).abs() < 1e-8, "v = {v:?}");
        assert_eq!(v.x, 0.0);
    }

    #[test]
    fn contact_classification_mirror_pair() {
        let making_family =
            |s: f64| -> Result<GapContext> { Ok(model_ctx(vec![-s, 0.0, 1.0], Params::new(s, 0.0))) };
        let breaking_family =
            |s: f64| -> Result<GapContext> { Ok(model_ctx(vec![s, 0.0, 1.0], Params::new(s, 0.0))) };
        let rec =
            find_quadratic_tangency(&making_family, 0.1, 0.01, &SolveOptions::default()).unwrap();
        assert_eq!(
            classify_contact(&making_family, &rec, rec.params.a, 1e-4).unwrap(),
            ContactClass::Making
        );
        let rec2 = find_quadratic_tangency(&breaking_family, 0.1, -0.01, &SolveOptions::default())
            .unwrap();
        assert_eq!(
            classify_contact(&breaking_family, &rec2, rec2.params.a, 1e-4).unwrap(),
            ContactClass::Breaking
        );
    }

    #[test]
    fn order_and_certificates_survive_reparametrization() {
        // Replace t by a monotone C^4 reparametrization and multiply by the
        // positive factor of a graph-preserving shear; order and certificate
        // signs persist.
        let reparam_ctx = |u: f64, v: f64| -> GapContext {
            let mut ctx = model_ctx(vec![u, v, 0.0, 1.0], Params::new(u, v));
            let g = [u, v, 0.0, 1.0, 0.0, 0.0];
            let t_of_tau = [0.0, 1.0, 0.3, 0.05, 0.0, 0.0];
            let deg = 5usize;
            let mul = |p: &[f64], q: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; deg + 1];
                for i in 0..=deg {
                    for j in 0..=(deg - i) {
                        out[i + j] += p.get(i).unwrap_or(&0.0) * q.get(j).unwrap_or(&0.0);
                    }
                }
                out
            };
            let mut comp = vec![0.0; deg + 1];
            for k in (0..g.len()).rev() {
                comp = mul(&comp, &t_of_tau);
                comp[0] += g[k];
            }
            let sheared = mul(&comp, &[1.0, 0.2]);
            let coeffs: Vec<Point2> = (0..=deg)
                .map(|k| Point2::new(t_of_tau.get(k).copied().unwrap_or(0.0), sheared[k]))
                .collect();
            ctx.arc = ArcSource::Poly(coeffs);
            ctx
        };
        let plain = |u: f64, v: f64| -> Result<GapContext> {
            Ok(model_ctx(vec![u, v, 0.0, 1.0], Params::new(u, v)))
        };
        let warped = |u: f64, v: f64| -> Result<GapContext> { Ok(reparam_ctx(u, v)) };
        let r1 = find_cubic_tangency(&plain, (0.05, 0.02, -0.01), &SolveOptions::default()).unwrap();
        let r2 =
            find_cubic_tangency(&warped, (0.05, 0.02, -0.01), &SolveOptions::default()).unwrap();
        assert_eq!(r1.order, r2.order);
        assert_eq!(
            r1.genericity.det_a1a4_a2a3.signum(),
            r2.genericity.det_a1a4_a2a3.signum()
        );
        assert_eq!(classify_order(&reparam_ctx(0.0, 0.0), 0.0).unwrap(), 2);
    }

    #[test]
    fn affine_parameter_change_preserves_det_sign() {
        let plain = |u: f64, v: f64| -> Result<GapContext> {
            Ok(model_ctx(vec![u, v, 0.0, 1.0], Params::new(u, v)))
        };
        // (u, v) = (2p - q, p + 3q); det DF = 7 > 0.
        let changed = |p: f64, q: f64| -> Result<GapContext> {
            let (u, v) = (2.0 * p - q, p + 3.0 * q);
            Ok(model_ctx(vec![u, v, 0.0, 1.0], Params::new(p, q)))
        };
        let r1 = find_cubic_tangency(&plain, (0.02, 0.01, -0.01), &SolveOptions::default()).unwrap();
        let r2 =
            find_cubic_tangency(&changed, (0.02, 0.01, -0.01), &SolveOptions::default()).unwrap();
        assert!(r1.genericity.det_a1a4_a2a3.abs() > 1e-6);
        assert!(r2.genericity.det_a1a4_a2a3.abs() > 1e-6);
        assert_eq!(
            r1.genericity.det_a1a4_a2a3.signum(),
            r2.genericity.det_a1a4_a2a3.signum()
        );
    }
}
