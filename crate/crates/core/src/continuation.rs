//! Continuation of the quadratic-tangency curve a = h(b), detection of the
//! secondary tangency closing the heteroclinic cycle, the cubic homoclinic
//! hunt seeded from the cycle, and the antimonotone direction scan.
//!
//! Geometry near (-2, 0): both tangencies live in a window around (-2, 2).
//! The curve a = h(b) keeps the second-image tongue of W^u(p-) tangent to the
//! primary stable segment of p+ (the q+ tangency, unfolding in a). Marching b
//! down the curve, the corresponding tongue of W^u(p+) rises toward a deep
//! preimage leaf of W^s(p-); the sign change of its critical gap brackets b0
//! with the q- tangency closing the cycle (unfolding along the curve). The
//! cubic homoclinic tangency is then hunted on high forward images of the
//! W^u(p+) tongue against the stable segment of p+.

use crate::error::{CoreError, Result};
use crate::geom::{Point2, Rect};
use crate::henon::{self, Params, Which};
use crate::leaves::leaf_ladder;
use crate::manifold::{local_parametrization, ManifoldBranch, ManifoldKind, ScaleMode};
use crate::tangency::{
    classify_contact, find_cubic_tangency, find_quadratic_tangency, solve_quadratic, ArcSource,
    ContactClass, GapContext, SolveOptions, StableSide, TangencyRecord,
};
use serde::{Deserialize, Serialize};

/// Tuning knobs for the near-(-2, 0) pipelines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationConfig {
    /// Plane window around (-2, 2) where both tangencies are hunted.
    pub window: Rect,
    /// Domain of the stable graphs / leaves.
    pub eta_lo: f64,
    pub eta_hi: f64,
    /// Degree of local manifold parametrizations.
    pub degree: usize,
    /// Geometric sweep parameters for locating tongues.
    pub t_sweep_start: f64,
    pub t_sweep_ratio: f64,
    pub t_sweep_max: f64,
    /// Uniform samples used to refine one tongue component.
    pub refine_samples: usize,
    /// Newton options shared by the tangency solves.
    pub solve: SolveOptions,
    /// a-range scanned when anchoring h(b).
    pub a_scan: (f64, f64),
    /// x-ranges of the axis-crossing arcs anchoring the two tongues:
    /// W^u(p-) crosses near +sqrt(2), W^u(p+) near -sqrt(2).
    pub qp_crossing: (f64, f64),
    pub qm_crossing: (f64, f64),
    /// Leaf depths probed for the secondary tangency.
    pub leaf_depths: (usize, usize),
    /// Trust region around (a0, b0) for the cubic hunt.
    pub trust_radius: f64,
    /// Largest forward iterate count tried for the pinched curve.
    pub max_pinch_steps: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            window: Rect::new(-2.45, -1.35, 1.45, 2.45),
            eta_lo: -2.6,
            eta_hi: 2.6,
            degree: 12,
            t_sweep_start: 1e-3,
            t_sweep_ratio: 1.02,
            t_sweep_max: 5e3,
            refine_samples: 512,
            solve: SolveOptions::default(),
            a_scan: (-2.2, -1.8),
            qp_crossing: (1.2, 1.7),
            qm_crossing: (-1.7, -1.2),
            leaf_depths: (2, 6),
            trust_radius: 0.05,
            max_pinch_steps: 40,
        }
    }
}

/// A located tongue: the t-window of an arc inside the plane window, centered
/// on a critical point of the gap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TongueWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_crit: f64,
    pub gap_at_crit: f64,
}

fn unstable_branch(
    cfg: &ContinuationConfig,
    params: Params,
    which: Which,
    scale: ScaleMode,
) -> Result<ManifoldBranch> {
    local_parametrization(params, which, ManifoldKind::Unstable, cfg.degree, 1, scale)
}

fn stable_leaf(
    cfg: &ContinuationConfig,
    params: Params,
    which: Which,
    depth: usize,
) -> Result<StableSide> {
    Ok(StableSide::Ladder(leaf_ladder(
        params,
        which,
        depth,
        cfg.eta_lo,
        cfg.eta_hi,
        None,
    )?))
}

/// Signed gap at the interior critical point with the smallest |gap|.
fn critical_gap(ctx: &GapContext) -> Result<(f64, f64)> {
    let crits = interior_critical_points(ctx, 128);
    crits
        .into_iter()
        .min_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
        .ok_or_else(|| CoreError::OutOfDomain("no interior critical point in window".into()))
}

/// Interior critical points (t, g) of the gap on the context window.
fn interior_critical_points(ctx: &GapContext, n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let t = ctx.t_lo + (ctx.t_hi - ctx.t_lo) * (i as f64) / (n as f64);
        let Ok((j, _)) = ctx.gap_jet(t) else {
            prev = None;
            continue;
        };
        let g1 = j.deriv(1);
        if let Some((tp, g1p)) = prev {
            if g1p.signum() != g1.signum() {
                let seed = 0.5 * (tp + t);
                if let Ok(tc) = crate::tangency::track_derivative_zero(ctx, 1, seed) {
                    if tc >= ctx.t_lo && tc <= ctx.t_hi {
                        if let Ok((jj, _)) = ctx.gap_jet(tc) {
                            out.push((tc, jj.deriv(0)));
                        }
                    }
                }
            }
        }
        prev = Some((t, g1));
    }
    out
}

/// Smallest-|t| transversal crossing of the x-axis with x inside `x_range`.
fn axis_crossing(
    cfg: &ContinuationConfig,
    branch: &ManifoldBranch,
    x_range: (f64, f64),
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for sign in [1.0, -1.0] {
        let mut t = cfg.t_sweep_start * sign;
        let mut prev: Option<(f64, Point2)> = None;
        while t.abs() <= cfg.t_sweep_max {
            match branch.germ_at(t, 0) {
                Ok(g) => {
                    let p = g.point();
                    if !p.is_finite() {
                        prev = None;
                    } else {
                        if let Some((tp, pp)) = prev {
                            let in_range = |q: Point2| q.x >= x_range.0 && q.x <= x_range.1;
                            if pp.y.signum() != p.y.signum() && in_range(p) && in_range(pp) {
                                let (mut lo, mut hi, mut y_lo) = (tp, t, pp.y);
                                for _ in 0..80 {
                                    let mid = 0.5 * (lo + hi);
                                    let y = branch.point_at(mid)?.y;
                                    if y.signum() == y_lo.signum() {
                                        lo = mid;
                                        y_lo = y;
                                    } else {
                                        hi = mid;
                                    }
                                    if (hi - lo).abs() <= 1e-15 * hi.abs().max(1.0) {
                                        break;
                                    }
                                }
                                let tx = 0.5 * (lo + hi);
                                if best.map_or(true, |b: f64| tx.abs() < b.abs()) {
                                    best = Some(tx);
                                }
                                break;
                            }
                        }
                        prev = Some((t, p));
                    }
                }
                Err(_) => prev = None,
            }
            t *= cfg.t_sweep_ratio;
        }
    }
    best.ok_or_else(|| {
        CoreError::OutOfDomain(format!(
            "no x-axis crossing of the branch with x in [{}, {}]",
            x_range.0, x_range.1
        ))
    })
}

/// The tangency tongue anchored at an x-axis crossing arc: the second map
/// image of the branch arc crossing the x-axis inside `x_range`. This pins
/// the tongue family geometrically (first-return tongues only), independent
/// of the branch parametrization.
pub fn crossing_tongue(
    cfg: &ContinuationConfig,
    branch: &ManifoldBranch,
    stable: &StableSide,
    x_range: (f64, f64),
) -> Result<TongueWindow> {
    let tx = axis_crossing(cfg, branch, x_range)?;
    let m2 = branch.multiplier * branch.multiplier;
    let arc = ArcSource::Branch(branch.clone());
    for widen in [0.35, 0.6, 0.85] {
        let (lo, hi) = ((1.0 - widen) * m2 * tx, (1.0 + widen) * m2 * tx);
        let comp = (lo.min(hi), lo.max(hi));
        if let Some(w) = refine_tongue(cfg, &arc, stable, comp)? {
            return Ok(w);
        }
    }
    Err(CoreError::OutOfDomain(
        "crossing image carries no critical point of the gap".into(),
    ))
}

/// Sweep the arc parameter geometrically (both signs up to the budget),
/// refine every in-rect component, and return the tongue whose critical gap
/// is smallest in magnitude. Infinitely many tangency tongues stack up in
/// the window as the sweep goes deeper, each on its own tangency curve in
/// parameter space; the minimal-gap rule locks onto the family the caller's
/// parameter prediction is tracking, and the sweep budget keeps unrelated
/// deep families out of view.
pub fn find_first_tongue(
    cfg: &ContinuationConfig,
    arc: &ArcSource,
    stable: &StableSide,
    rect: Rect,
) -> Result<TongueWindow> {
    let mut best: Option<TongueWindow> = None;
    let mut consider = |w: TongueWindow| {
        if best.map_or(true, |b: TongueWindow| {
            w.gap_at_crit.abs() < b.gap_at_crit.abs()
        }) {
            best = Some(w);
        }
    };
    for sign in [1.0, -1.0] {
        let mut t = cfg.t_sweep_start * sign;
        let mut comp_start: Option<f64> = None;
        let mut prev_t = t;
        while t.abs() <= cfg.t_sweep_max {
            let inside = match arc.germ_at(t, 0) {
                Ok(g) => {
                    let p = g.point();
                    p.is_finite() && rect.contains(p)
                }
                Err(_) => false,
            };
            match (inside, comp_start) {
                (true, None) => comp_start = Some(t),
                (false, Some(start)) => {
                    if let Some(w) = refine_tongue(cfg, arc, stable, (start, prev_t))? {
                        consider(w);
                    }
                    comp_start = None;
                }
                _ => {}
            }
            prev_t = t;
            t *= cfg.t_sweep_ratio;
        }
        if let Some(start) = comp_start {
            if let Some(w) = refine_tongue(cfg, arc, stable, (start, prev_t))? {
                consider(w);
            }
        }
    }
    best.ok_or_else(|| {
        CoreError::OutOfDomain("no tangent tongue found inside the window".into())
    })
}

/// Refine one in-rect component: look for interior critical points of the
/// gap and build a window centered on the one with minimal |gap|.
fn refine_tongue(
    cfg: &ContinuationConfig,
    arc: &ArcSource,
    stable: &StableSide,
    comp: (f64, f64),
) -> Result<Option<TongueWindow>> {
    let (mut lo, mut hi) = comp;
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    // Expand slightly: the sweep is coarse.
    let w = (hi - lo).max(lo.abs().max(hi.abs()) * 1e-6);
    let (lo, hi) = (lo - 0.3 * w, hi + 0.3 * w);
    let probe = GapContext {
        arc: arc.clone(),
        stable: stable.clone(),
        params: Params::new(f64::NAN, f64::NAN),
        t_lo: lo,
        t_hi: hi,
        arc_units: true,
        unstable_of: Which::Plus,
        stable_of: Which::Plus,
    };
    let crits = interior_critical_points(&probe, cfg.refine_samples);
    let Some(&(tc, gc)) = crits
        .iter()
        .min_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
    else {
        return Ok(None);
    };
    // Keep the window clear of any competing critical point so the Newton
    // stages never jump tongue families.
    let mut half = ((hi - lo) * 0.5).min((tc - lo).min(hi - tc) * 0.9);
    for &(other, _) in &crits {
        if other != tc {
            half = half.min((other - tc).abs() * 0.45);
        }
    }
    if half <= 0.0 {
        return Ok(None);
    }
    Ok(Some(TongueWindow {
        t_lo: tc - half,
        t_hi: tc + half,
        t_crit: tc,
        gap_at_crit: gc,
    }))
}

/// Builder for the q+ gap: second-image tongue of W^u(p-) against the primary
/// stable segment of p+, at fixed b with a free.
#[derive(Debug, Clone)]
pub struct QPlusFamily {
    pub cfg: ContinuationConfig,
    pub b: f64,
    pub scale: f64,
    pub window: TongueWindow,
}

impl QPlusFamily {
    pub fn build(&self, a: f64) -> Result<GapContext> {
        let params = Params::new(a, self.b);
        let branch = unstable_branch(&self.cfg, params, Which::Minus, ScaleMode::Fixed(self.scale))?;
        let stable = stable_leaf(&self.cfg, params, Which::Plus, 0)?;
        Ok(GapContext {
            arc: ArcSource::Branch(branch),
            stable,
            params,
            t_lo: self.window.t_lo,
            t_hi: self.window.t_hi,
            arc_units: true,
            unstable_of: Which::Minus,
            stable_of: Which::Plus,
        })
    }
}

/// Anchor the q+ machinery at one b: locate the tongue, bracket the sign
/// change of the critical gap in a, and return the solved tangency family.
pub fn anchor_q_plus(cfg: &ContinuationConfig, b: f64) -> Result<(QPlusFamily, TangencyRecord)> {
    // Reference scale and tongue from the middle of the a-scan range.
    let mut bracket: Option<(f64, f64, f64, f64)> = None; // (a_lo, g_lo, a_hi, g_hi)
    let mut prev: Option<(f64, f64)> = None;
    let mut family: Option<QPlusFamily> = None;
    let n = 24;
    for i in 0..=n {
        let a = cfg.a_scan.0 + (cfg.a_scan.1 - cfg.a_scan.0) * (i as f64) / (n as f64);
        let params = Params::new(a, b);
        let Ok(branch) = unstable_branch(cfg, params, Which::Minus, ScaleMode::Certify) else {
            prev = None;
            continue;
        };
        let Ok(stable) = stable_leaf(cfg, params, Which::Plus, 0) else {
            prev = None;
            continue;
        };
        let Ok(win) = crossing_tongue(cfg, &branch, &stable, cfg.qp_crossing) else {
            prev = None;
            continue;
        };
        let g = win.gap_at_crit;
        if let Some((ap, gp)) = prev {
            if gp.signum() != g.signum() {
                bracket = Some((ap, gp, a, g));
                family = Some(QPlusFamily {
                    cfg: cfg.clone(),
                    b,
                    scale: branch.scale,
                    window: win,
                });
                break;
            }
        }
        prev = Some((a, g));
    }
    let (a_lo, _, a_hi, _) =
        bracket.ok_or_else(|| CoreError::NoSignChange("q+ gap over the a-scan".into()))?;
    let fam = family.expect("bracket implies family");
    let seed_a = 0.5 * (a_lo + a_hi);
    let seed_t = fam.window.t_crit;
    let rec = find_quadratic_tangency(&|a| fam.build(a), seed_t, seed_a, &cfg.solve)?;
    // Re-center the window on the converged tangency for downstream use.
    let mut fam = fam;
    fam.window.t_crit = rec.t_star;
    Ok((fam, rec))
}

/// One accepted sample of the tangency curve a = h(b).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HSample {
    pub b: f64,
    pub a: f64,
    pub t_star: f64,
    pub residual: f64,
    /// dg/da at the tangency (the a-unfolding speed).
    pub velocity_a: f64,
}

/// The sampled curve a = h(b).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationCurve {
    pub samples: Vec<HSample>,
    /// Sign of b-progression (-1: marching down).
    pub direction: f64,
}

impl ContinuationCurve {
    pub fn sample_nearest(&self, b: f64) -> &HSample {
        self.samples
            .iter()
            .min_by(|p, q| (p.b - b).abs().total_cmp(&(q.b - b).abs()))
            .expect("non-empty curve")
    }
}

/// Natural-parameter continuation of h(b) from `b_start` to `b_end` with
/// Newton correction in (t, a) at each accepted b.
pub fn continue_quadratic_curve(
    cfg: &ContinuationConfig,
    b_start: f64,
    b_end: f64,
    step0: f64,
) -> Result<ContinuationCurve> {
    if !(step0 > 0.0) {
        return Err(CoreError::InvalidInput("step0 must be positive".into()));
    }
    if b_start == b_end {
        return Err(CoreError::InvalidInput("empty b-range".into()));
    }
    let dir = (b_end - b_start).signum();
    let (fam0, rec0) = anchor_q_plus(cfg, b_start)?;
    let mut samples = vec![HSample {
        b: b_start,
        a: rec0.params.a,
        t_star: rec0.t_star,
        residual: rec0.residual,
        velocity_a: rec0.genericity.velocity_diff.y,
    }];
    drop(fam0);

    let mut db = step0 * dir;
    let mut clean_accepts = 0usize;
    let mut b = b_start;
    while (b - b_end) * dir < 0.0 {
        let mut b_next = b + db;
        if (b_next - b_end) * dir > 0.0 {
            b_next = b_end;
        }
        // Predict a by linear extrapolation from the last two samples.
        let a_pred = if samples.len() >= 2 {
            let s1 = &samples[samples.len() - 1];
            let s0 = &samples[samples.len() - 2];
            s1.a + (s1.a - s0.a) / (s1.b - s0.b) * (b_next - s1.b)
        } else {
            samples.last().unwrap().a
        };
        match correct_at_b(cfg, b_next, a_pred) {
            Ok(s) => {
                samples.push(s);
                b = b_next;
                clean_accepts += 1;
                if clean_accepts >= 4 {
                    db *= 2.0;
                    clean_accepts = 0;
                }
                if db.abs() > 8.0 * step0 {
                    db = 8.0 * step0 * dir;
                }
            }
            Err(_) => {
                clean_accepts = 0;
                db *= 0.5;
                if db.abs() < 1e-8 {
                    return Err(CoreError::ContinuationStalled {
                        last_b: b,
                        step: db.abs(),
                    });
                }
            }
        }
    }
    Ok(ContinuationCurve { samples, direction: dir })
}

/// Correct the tangency at one b: fresh scale certification, fresh tongue,
/// Newton in (t, a).
fn correct_at_b(cfg: &ContinuationConfig, b: f64, a_pred: f64) -> Result<HSample> {
    let params = Params::new(a_pred, b);
    let branch = unstable_branch(cfg, params, Which::Minus, ScaleMode::Certify)?;
    let stable = stable_leaf(cfg, params, Which::Plus, 0)?;
    let win = crossing_tongue(cfg, &branch, &stable, cfg.qp_crossing)?;
    let fam = QPlusFamily {
        cfg: cfg.clone(),
        b,
        scale: branch.scale,
        window: win,
    };
    let rec = find_quadratic_tangency(&|a| fam.build(a), win.t_crit, a_pred, &cfg.solve)?;
    Ok(HSample {
        b,
        a: rec.params.a,
        t_star: rec.t_star,
        residual: rec.residual,
        velocity_a: rec.genericity.velocity_diff.y,
    })
}

/// Independently re-verify one curve sample by rebuilding everything at
/// (h(b), b) from scratch and re-measuring the tangency residual.
pub fn verify_curve_sample(cfg: &ContinuationConfig, sample: &HSample) -> Result<f64> {
    let params = Params::new(sample.a, sample.b);
    let branch = unstable_branch(cfg, params, Which::Minus, ScaleMode::Certify)?;
    let stable = stable_leaf(cfg, params, Which::Plus, 0)?;
    let win = crossing_tongue(cfg, &branch, &stable, cfg.qp_crossing)?;
    let ctx = GapContext {
        arc: ArcSource::Branch(branch),
        stable,
        params,
        t_lo: win.t_lo,
        t_hi: win.t_hi,
        arc_units: true,
        unstable_of: Which::Minus,
        stable_of: Which::Plus,
    };
    let (_, g) = critical_gap(&ctx)?;
    Ok(g.abs())
}

/// Heteroclinic cycle configuration: the pair of quadratic tangencies
/// cyclically associated with p+ and p-.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleConfig {
    pub b0: f64,
    pub a0: f64,
    pub q_plus: TangencyRecord,
    pub q_minus: TangencyRecord,
    /// Depth of the W^s(p-) preimage leaf that realized q-.
    pub leaf_depth: usize,
}

/// The family of q- gap contexts along the curve a = h(b), parametrized by
/// s = b - b_ref. Each build resolves h(b) by an inner q+ Newton solve from
/// scratch at the perturbed parameter.
#[derive(Debug, Clone)]
pub struct CurveFamily {
    pub cfg: ContinuationConfig,
    pub b_ref: f64,
    pub qp_scale: f64,
    pub qp_window: TongueWindow,
    pub qp_seed: (f64, f64),
    pub qm_scale: f64,
    pub qm_window: TongueWindow,
    pub leaf_depth: usize,
}

impl CurveFamily {
    pub fn h_of(&self, b: f64) -> Result<f64> {
        let fam = QPlusFamily {
            cfg: self.cfg.clone(),
            b,
            scale: self.qp_scale,
            window: self.qp_window,
        };
        let (_, a, _, _) =
            solve_quadratic(&|a| fam.build(a), self.qp_seed.0, self.qp_seed.1, &self.cfg.solve)?;
        Ok(a)
    }

    pub fn build(&self, s: f64) -> Result<GapContext> {
        let b = self.b_ref + s;
        let a = self.h_of(b)?;
        let params = Params::new(a, b);
        let branch = unstable_branch(&self.cfg, params, Which::Plus, ScaleMode::Fixed(self.qm_scale))?;
        let stable = stable_leaf(&self.cfg, params, Which::Minus, self.leaf_depth)?;
        Ok(GapContext {
            arc: ArcSource::Branch(branch),
            stable,
            params,
            t_lo: self.qm_window.t_lo,
            t_hi: self.qm_window.t_hi,
            arc_units: true,
            unstable_of: Which::Plus,
            stable_of: Which::Minus,
        })
    }
}

/// Signed critical gap of the q- tongue at (h(b), b) for one leaf depth,
/// with everything rebuilt at that b.
fn q_minus_crit_gap(
    cfg: &ContinuationConfig,
    curve: &ContinuationCurve,
    b: f64,
    depth: usize,
) -> Result<(f64, f64)> {
    let near = curve.sample_nearest(b);
    let s = correct_at_b(cfg, b, near.a)?;
    let params = Params::new(s.a, b);
    let branch = unstable_branch(cfg, params, Which::Plus, ScaleMode::Certify)?;
    let stable = stable_leaf(cfg, params, Which::Minus, depth)?;
    let win = crossing_tongue(cfg, &branch, &stable, cfg.qm_crossing)?;
    Ok((win.t_crit, win.gap_at_crit))
}

/// Walk the continuation curve looking for a sign change of the q- critical
/// gap at some leaf depth; bisect, polish along the curve and assemble the
/// cycle. Returns the cycle whose q- unfolding velocity is best conditioned.
pub fn find_secondary_tangency(
    cfg: &ContinuationConfig,
    curve: &ContinuationCurve,
) -> Result<CycleConfig> {
    if curve.samples.len() < 2 {
        return Err(CoreError::InvalidInput("curve too short".into()));
    }
    let mut profile_report = String::new();
    for depth in cfg.leaf_depths.0..=cfg.leaf_depths.1 {
        // Probe the gap profile on the curve samples.
        let mut probes: Vec<(f64, f64)> = Vec::new();
        for s in curve.samples.iter() {
            match q_minus_crit_gap(cfg, curve, s.b, depth) {
                Ok((_, g)) => probes.push((s.b, g)),
                Err(_) => continue,
            }
        }
        profile_report.push_str(&format!(
            "depth {depth}: {} probes, gaps {:?}\n",
            probes.len(),
            probes
                .iter()
                .map(|(b, g)| format!("({b:.4}, {g:+.3e})"))
                .collect::<Vec<_>>()
        ));
        let Some(k) = probes
            .windows(2)
            .position(|w| w[0].1.signum() != w[1].1.signum())
        else {
            continue;
        };
        let (mut b_lo, mut g_lo) = probes[k];
        let (mut b_hi, _g_hi) = probes[k + 1];
        // Bisect the sign change.
        for _ in 0..48 {
            let mid = 0.5 * (b_lo + b_hi);
            let Ok((_, g)) = q_minus_crit_gap(cfg, curve, mid, depth) else {
                break;
            };
            if g.signum() == g_lo.signum() {
                b_lo = mid;
                g_lo = g;
            } else {
                b_hi = mid;
            }
            if (b_hi - b_lo).abs() < 1e-11 {
                break;
            }
        }
        let b0 = 0.5 * (b_lo + b_hi);
        match assemble_cycle(cfg, curve, b0, depth) {
            Ok(cycle) => return Ok(cycle),
            Err(_) => continue,
        }
    }
    Err(CoreError::NoSignChange(format!(
        "q- critical gap along the curve; profiles:\n{profile_report}"
    )))
}

fn assemble_cycle(
    cfg: &ContinuationConfig,
    curve: &ContinuationCurve,
    b0: f64,
    depth: usize,
) -> Result<CycleConfig> {
    // Fresh q+ anchor objects at b0.
    let near = curve.sample_nearest(b0);
    let base = correct_at_b(cfg, b0, near.a)?;
    let params0 = Params::new(base.a, b0);
    let qp_branch = unstable_branch(cfg, params0, Which::Minus, ScaleMode::Certify)?;
    let qp_stable = stable_leaf(cfg, params0, Which::Plus, 0)?;
    let qp_window = crossing_tongue(cfg, &qp_branch, &qp_stable, cfg.qp_crossing)?;
    let qm_branch = unstable_branch(cfg, params0, Which::Plus, ScaleMode::Certify)?;
    let qm_stable = stable_leaf(cfg, params0, Which::Minus, depth)?;
    let qm_window = crossing_tongue(cfg, &qm_branch, &qm_stable, cfg.qm_crossing)?;

    let fam = CurveFamily {
        cfg: cfg.clone(),
        b_ref: b0,
        qp_scale: qp_branch.scale,
        qp_window,
        qp_seed: (qp_window.t_crit, base.a),
        qm_scale: qm_branch.scale,
        qm_window,
        leaf_depth: depth,
    };
    // Polish the q- tangency along the curve (unknowns t and s = b - b0).
    let q_minus =
        find_quadratic_tangency(&|s| fam.build(s), qm_window.t_crit, 0.0, &cfg.solve)?;
    let b_star = q_minus.params.b;
    let a_star = q_minus.params.a;

    // q+ record at the settled parameters, unfolding in a.
    let qp_fam = QPlusFamily {
        cfg: cfg.clone(),
        b: b_star,
        scale: qp_branch.scale,
        window: qp_window,
    };
    let q_plus = find_quadratic_tangency(&|a| qp_fam.build(a), qp_window.t_crit, a_star, &cfg.solve)?;

    // Cycle consistency: forward orbits of the tangency points converge to
    // the owning saddles' fixed points.
    let params = Params::new(a_star, b_star);
    let (pp, pm) = henon::fixed_points(params)?;
    check_forward_convergence(params, q_plus.location, pp.location)?;
    check_forward_convergence(params, q_minus.location, pm.location)?;

    Ok(CycleConfig {
        b0: b_star,
        a0: a_star,
        q_plus,
        q_minus,
        leaf_depth: depth,
    })
}

fn check_forward_convergence(params: Params, from: Point2, to: Point2) -> Result<()> {
    let mut p = from;
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        p = henon::apply(params, p);
        best = best.min((p - to).norm());
        if best < 1e-6 {
            return Ok(());
        }
        if p.norm() > 1e3 {
            break;
        }
    }
    Err(CoreError::InvalidInput(format!(
        "tangency point does not converge to the saddle (closest {best:e})"
    )))
}

/// The (a, b)-family of homoclinic gap contexts for the cubic hunt: a high
/// forward image of the W^u(p+) tongue against the primary stable segment of
/// p+. The iterate count is encoded in the frozen t-window.
#[derive(Debug, Clone)]
pub struct CubicFamily {
    pub cfg: ContinuationConfig,
    pub scale: f64,
    pub window: (f64, f64),
}

impl CubicFamily {
    pub fn build(&self, a: f64, b: f64) -> Result<GapContext> {
        let params = Params::new(a, b);
        let branch = unstable_branch(&self.cfg, params, Which::Plus, ScaleMode::Fixed(self.scale))?;
        let stable = stable_leaf(&self.cfg, params, Which::Plus, 0)?;
        Ok(GapContext {
            arc: ArcSource::Branch(branch),
            stable,
            params,
            t_lo: self.window.0,
            t_hi: self.window.1,
            arc_units: true,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        })
    }
}

/// Diagnostics from the cubic hunt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubicHunt {
    pub record: TangencyRecord,
    pub pinch_steps: usize,
    pub window: (f64, f64),
    pub attempts: Vec<String>,
}

/// The hook family: the m-th forward image of the q- tongue vertex
/// neighborhood on W^u(p+), as a homoclinic gap context against the primary
/// stable segment of p+. Rebuilt from scratch at every parameter point; the
/// window is re-centered by tracking the tongue vertex.
#[derive(Debug, Clone)]
pub struct HookFamily {
    pub cfg: ContinuationConfig,
    pub scale: f64,
    pub leaf_depth: usize,
    pub qm_win: TongueWindow,
    pub m: usize,
    /// Relative halfwidth of the hook window around the vertex image.
    pub zoom: f64,
}

impl HookFamily {
    /// Build the hook context in vertex-relative coordinates: take a
    /// high-order Taylor germ of the W^u(p+) tongue at its tracked vertex,
    /// evaluate it at offsets `u * zoom * |t_vtx|`, and push everything
    /// through m forward map steps by jet transport. Offsets are resolved to
    /// full relative precision, so the deep-iterate phase stiffness never
    /// touches the window bookkeeping. Everything is rebuilt from scratch.
    pub fn build_window(&self, a: f64, b: f64, u_lo: f64, u_hi: f64) -> Result<GapContext> {
        let params = Params::new(a, b);
        let branch = unstable_branch(&self.cfg, params, Which::Plus, ScaleMode::Fixed(self.scale))?;
        let qm_stable = stable_leaf(&self.cfg, params, Which::Minus, self.leaf_depth)?;
        let qm_ctx = GapContext {
            arc: ArcSource::Branch(branch.clone()),
            stable: qm_stable,
            params,
            t_lo: self.qm_win.t_lo,
            t_hi: self.qm_win.t_hi,
            arc_units: true,
            unstable_of: Which::Plus,
            stable_of: Which::Minus,
        };
        let t_vtx = crate::tangency::track_derivative_zero(&qm_ctx, 1, self.qm_win.t_crit)?;
        let base = branch.germ_at(t_vtx, 8)?;
        let coeffs: Vec<Point2> = (0..base.jet_x.coeffs.len())
            .map(|k| Point2::new(base.jet_x.coeffs[k], base.jet_y.coeffs[k]))
            .collect();
        let half = t_vtx.abs() * self.zoom;
        let stable = stable_leaf(&self.cfg, params, Which::Plus, 0)?;
        Ok(GapContext {
            arc: ArcSource::PolyJet { coeffs, half, steps: self.m, params },
            stable,
            params,
            // Raw offset units: the image curve is regular in the base
            // offset (x strictly monotone at rate ~ tau^m) while its plane
            // speed swings over ten orders across the pinch, so arclength
            // normalization would wreck the conditioning here.
            t_lo: u_lo,
            t_hi: u_hi,
            arc_units: false,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        })
    }

    pub fn build(&self, a: f64, b: f64) -> Result<GapContext> {
        self.build_window(a, b, -1.0, 1.0)
    }
}

/// Seed and confirm the cubic homoclinic tangency from a cycle.
///
/// The pinched return curve only exists off the q- tangency, and the return
/// phase is exponentially sensitive in b (one power of sigma per dwell
/// step), so the hunt works at shallow return depths m and proceeds in
/// stages: (1) for each m, align the phase by minimizing the arrival gap
/// |T_m(b)| of the tongue-vertex orbit over b along the curve a = h(b);
/// (2) at an aligned b, solve the hook's homoclinic quadratic tangency in
/// (t, a); (3) march that tangency in b while |g''| at the tangency decays
/// (the cusp test function of the codimension-two point); (4) polish with
/// the full (g, g', g'') Newton and certify the unfolding determinant.
pub fn locate_cubic_from_cycle(
    cfg: &ContinuationConfig,
    cycle: &CycleConfig,
) -> Result<CubicHunt> {
    let trace = std::env::var("HENON_LAB_TRACE").is_ok();
    let params0 = Params::new(cycle.a0, cycle.b0);
    let base_branch = unstable_branch(cfg, params0, Which::Plus, ScaleMode::Certify)?;
    let scale = base_branch.scale;
    let qm_stable0 = stable_leaf(cfg, params0, Which::Minus, cycle.leaf_depth)?;
    let qm_win = crossing_tongue(cfg, &base_branch, &qm_stable0, cfg.qm_crossing)?;
    let mut attempts = Vec::new();

    // Arrival gap of the vertex orbit at step m, at b on the curve. Returns
    // (T, a) when the orbit point lies over the stable domain's upper part.
    let arrival = |b: f64, m: usize, a_seed: f64| -> Result<(f64, f64)> {
        let hs = correct_at_b(cfg, b, a_seed)?;
        let params = Params::new(hs.a, b);
        let branch = unstable_branch(cfg, params, Which::Plus, ScaleMode::Fixed(scale))?;
        let qm_stable = stable_leaf(cfg, params, Which::Minus, cycle.leaf_depth)?;
        let qm_ctx = GapContext {
            arc: ArcSource::Branch(branch.clone()),
            stable: qm_stable,
            params,
            t_lo: qm_win.t_lo,
            t_hi: qm_win.t_hi,
            arc_units: true,
            unstable_of: Which::Plus,
            stable_of: Which::Minus,
        };
        let t_vtx = crate::tangency::track_derivative_zero(&qm_ctx, 1, qm_win.t_crit)?;
        let plus_leaf = stable_leaf(cfg, params, Which::Plus, 0)?;
        let mut p = branch.germ_at(t_vtx, 0)?.point();
        for _ in 0..m {
            p = henon::apply(params, p);
            if !p.is_finite() || p.norm() > 1e3 {
                return Err(CoreError::OrbitEscaped { iterations: m });
            }
        }
        if p.x <= cfg.eta_lo || p.x >= cfg.eta_hi || p.y <= 1.0 {
            return Err(CoreError::OutOfDomain("arrival outside the upper window".into()));
        }
        let eta = plus_leaf.eval_jet(p.x, 0)?;
        Ok((p.y - eta.value(), hs.a))
    };

    let mut solve = cfg.solve;
    solve.max_iterations = 40;
    solve.max_step = cfg.trust_radius;

    let db_max = 2e-3_f64.min(cycle.b0 * 0.1);
    let m_lo = 6usize;
    let m_hi = 18usize.min(cfg.max_pinch_steps);
    'm_loop: for m in m_lo..=m_hi {
        // Stage 1: fine grid in db at this m, then golden-polish the dips.
        for sign in [1.0, -1.0] {
            let n_grid = 96;
            let mut grid: Vec<(f64, f64, f64)> = Vec::new(); // (b, |T|, a)
            for i in 0..n_grid {
                let frac = (i as f64 + 0.5) / (n_grid as f64);
                let db = db_max * 0.02f64.powf(frac) * sign;
                let b = cycle.b0 + db;
                if b <= 0.0 {
                    continue;
                }
                if let Ok((t, a)) = arrival(b, m, cycle.a0) {
                    grid.push((b, t.abs(), a));
                }
            }
            if grid.len() < 3 {
                continue;
            }
            grid.sort_by(|p, q| p.0.total_cmp(&q.0));
            // Local minima of |T| over the grid.
            let mut dips: Vec<(f64, f64, f64, f64)> = Vec::new(); // (b_lo, b_best, b_hi, a)
            for k in 1..grid.len() - 1 {
                if grid[k].1 < grid[k - 1].1 && grid[k].1 < grid[k + 1].1 && grid[k].1 < 0.2 {
                    dips.push((grid[k - 1].0, grid[k].0, grid[k + 1].0, grid[k].2));
                }
            }
            dips.sort_by(|p, q| {
                let tp = grid.iter().find(|g| g.0 == p.1).map(|g| g.1).unwrap_or(1.0);
                let tq = grid.iter().find(|g| g.0 == q.1).map(|g| g.1).unwrap_or(1.0);
                tp.total_cmp(&tq)
            });
            for &(dip_lo, dip_mid, dip_hi, a_near) in dips.iter().take(3) {
                let (mut b_lo, mut b_mid, mut b_hi) = (dip_lo, dip_mid, dip_hi);
                // Golden-section minimization of |T_m|.
                let mut f_mid = match arrival(b_mid, m, a_near) {
                    Ok((t, _)) => t.abs(),
                    Err(_) => continue,
                };
                for _ in 0..48 {
                    let left = (b_hi - b_mid).abs() > (b_mid - b_lo).abs();
                    let b_new = if left {
                        b_mid + 0.382 * (b_hi - b_mid)
                    } else {
                        b_mid - 0.382 * (b_mid - b_lo)
                    };
                    let f_new = match arrival(b_new, m, a_near) {
                        Ok((t, _)) => t.abs(),
                        Err(_) => break,
                    };
                    if f_new < f_mid {
                        if left {
                            b_lo = b_mid;
                        } else {
                            b_hi = b_mid;
                        }
                        b_mid = b_new;
                        f_mid = f_new;
                    } else if left {
                        b_hi = b_new;
                    } else {
                        b_lo = b_new;
                    }
                    if f_mid < 3e-6 || (b_hi - b_lo).abs() < b_mid.abs() * 1e-13 {
                        // Aligned enough; over-alignment pushes the pinch
                        // below the evaluation noise floor.
                        break;
                    }
                }
                let band = (dip_hi - dip_lo).abs();
                if trace {
                    eprintln!(
                        "[cubic] m = {m}: dip at b = {b_mid:.12} |T| = {f_mid:.3e} band {band:.2e}"
                    );
                }
                if f_mid > 0.05 {
                    continue;
                }
                // The pinch pocket (where g, g', g'' can vanish together)
                // lives where the tip pokes through the stable segment by a
                // resolvable amount. Solve T(b) = target by a local secant
                // on the signed arrival gap and hunt there; try both signs.
                let Ok((t_mid, a_mid)) = arrival(b_mid, m, a_near) else { continue };
                let h_loc = band.max(b_mid.abs() * 1e-9) * 1e-3;
                let slope = match (arrival(b_mid + h_loc, m, a_mid), arrival(b_mid - h_loc, m, a_mid)) {
                    (Ok((tp, _)), Ok((tm, _))) => (tp - tm) / (2.0 * h_loc),
                    _ => continue,
                };
                let mut targets = vec![(b_mid, a_mid)];
                if slope.is_finite() && slope != 0.0 {
                    for target in [1e-6, -1e-6, 8e-6, -8e-6] {
                        let b_w = b_mid + (target - t_mid) / slope;
                        if b_w <= 0.0 {
                            continue;
                        }
                        if let Ok((t_w, a_w)) = arrival(b_w, m, a_mid) {
                            if t_w.abs() < 3e-5 {
                                targets.push((b_w, a_w));
                                if trace {
                                    eprintln!(
                                        "[cubic]   poke target {target:+.0e}: b = {b_w:.14} (T = {t_w:+.2e})"
                                    );
                                }
                            }
                        }
                    }
                }
                for (b_try, a_try) in targets {
                    match hook_stages(
                        cfg, cycle, scale, qm_win, m, b_try, a_try, band, &solve, trace,
                        &mut attempts,
                    ) {
                        Ok(hunt) => return Ok(hunt),
                        Err(e) => {
                            attempts.push(format!("m = {m}, b = {b_try:.10}: {e}"));
                            if attempts.len() > 160 {
                                break 'm_loop;
                            }
                        }
                    }
                }
            }
        }
    }
    Err(CoreError::NewtonDiverged {
        iterations: 0,
        residual: f64::NAN,
        context: format!("cubic hunt exhausted; attempts:\n{}", attempts.join("\n")),
    })
}

/// Stages 2-4 of the cubic hunt at one aligned (m, b): direct Newton from
/// the hook's near-tangent inflections; if that fails, fall back to the
/// hook's quadratic tangency in (t, a) marched in b toward the cusp.
#[allow(clippy::too_many_arguments)]
fn hook_stages(
    cfg: &ContinuationConfig,
    cycle: &CycleConfig,
    scale: f64,
    qm_win: TongueWindow,
    m: usize,
    b_c: f64,
    a_c: f64,
    phase_band: f64,
    solve: &SolveOptions,
    trace: bool,
    attempts: &mut Vec<String>,
) -> Result<CubicHunt> {
    // FD steps must stay far inside the phase band; the jet-exact gap
    // evaluation keeps centered differences clean down to 1e-12 steps.
    let mut solve = *solve;
    let _ = phase_band;
    solve.fd_step = 1e-8;

    let finish = |fam: &HookFamily, rec: TangencyRecord, attempts: &mut Vec<String>| -> Result<CubicHunt> {
        let da = rec.params.a - cycle.a0;
        let db = rec.params.b - cycle.b0;
        if da.abs().max(db.abs()) > cfg.trust_radius {
            return Err(CoreError::SeedOutOfNeighborhood {
                a: rec.params.a,
                b: rec.params.b,
                a0: cycle.a0,
                b0: cycle.b0,
            });
        }
        if rec.params.b <= 0.0 {
            return Err(CoreError::InvalidInput(format!(
                "converged to non-positive b = {}",
                rec.params.b
            )));
        }
        let ctx = fam.build(rec.params.a, rec.params.b)?;
        Ok(CubicHunt {
            record: rec,
            pinch_steps: m,
            window: (ctx.t_lo, ctx.t_hi),
            attempts: std::mem::take(attempts),
        })
    };

    // Stage 2a: direct hunt from pinch inflections at the aligned point.
    if let Ok(h) =
        direct_inflection_hunt(cfg, cycle, scale, qm_win, m, a_c, b_c, &solve, trace, attempts)
    {
        return Ok(h);
    }

    // Stage 2b: hook quadratic tangency in (t, a), then march in b.
    let mut chosen: Option<(HookFamily, f64)> = None;
    for zoom_exp in 2..=11 {
        let fam = HookFamily {
            cfg: cfg.clone(),
            scale,
            leaf_depth: cycle.leaf_depth,
            qm_win,
            m,
            zoom: 10f64.powi(-zoom_exp),
        };
        let Ok(ctx) = fam.build(a_c, b_c) else { continue };
        let crits = interior_critical_points(&ctx, 512);
        if let Some(&(tc, _)) = crits.iter().min_by(|p, q| p.1.abs().total_cmp(&q.1.abs())) {
            chosen = Some((fam, tc));
            break;
        }
    }
    let Some((fam, t_seed)) = chosen else {
        return Err(CoreError::OutOfDomain(
            "no hook critical point at any zoom".into(),
        ));
    };
    let quad = |bb: f64| {
        let f = fam.clone();
        move |aa: f64| f.build(aa, bb)
    };
    let (t0, a0, j0, _) = solve_quadratic(&quad(b_c), t_seed, a_c, &solve)?;
    if trace {
        eprintln!(
            "[cubic]   hook quad tangency at a = {a0:.12}, g'' = {:+.4e}",
            j0.deriv(2)
        );
    }
    // March the quadratic-tangency branch in b until the curvature at the
    // tangency changes sign (the cusp) or the trust region is exhausted.
    let mut seed: Option<(f64, f64, f64)> = None;
    let mut closest: Option<(f64, f64, f64, f64)> = None;
    'direction: for dir in [1.0, -1.0] {
        let (mut b, mut a, mut t, mut g2_prev) = (b_c, a0, t0, j0.deriv(2));
        let mut db_step = phase_band * 0.05;
        let step_cap = 2e-4;
        let mut fails = 0usize;
        while (b - cycle.b0).abs() < cfg.trust_radius {
            let b_next = b + dir * db_step;
            if b_next <= 0.0 {
                continue 'direction;
            }
            match solve_quadratic(&quad(b_next), t, a, &solve) {
                Ok((tn, an, jn, _)) => {
                    fails = 0;
                    let g2 = jn.deriv(2);
                    if trace {
                        eprintln!(
                            "[cubic]   march b = {b_next:.14} g'' = {g2:+.5e} step {db_step:.2e}"
                        );
                    }
                    if g2.signum() != g2_prev.signum() {
                        seed = Some((0.5 * (b + b_next), 0.5 * (a + an), 0.5 * (t + tn)));
                        break 'direction;
                    }
                    if g2.abs() >= g2_prev.abs() {
                        // Receding from the cusp: abandon this direction.
                        continue 'direction;
                    }
                    if closest.map_or(true, |c| g2.abs() < c.3.abs()) {
                        closest = Some((b_next, an, tn, g2));
                    }
                    // Aim a fraction of the linear estimate of the remaining
                    // distance, clamped to the step cap.
                    let slope = (g2.abs() - g2_prev.abs()) / db_step;
                    let remaining = if slope < 0.0 { g2.abs() / (-slope) } else { step_cap };
                    b = b_next;
                    a = an;
                    t = tn;
                    g2_prev = g2;
                    db_step = (remaining * 0.5).clamp(phase_band * 1e-3, step_cap);
                }
                Err(_) => {
                    fails += 1;
                    db_step *= 0.4;
                    if fails > 24 || db_step < b.abs() * 2e-15 {
                        continue 'direction;
                    }
                }
            }
        }
    }
    let (b_s, a_s, t_s) = match (seed, closest) {
        (Some(x), _) => x,
        (None, Some((b, a, t, _))) => (b, a, t),
        (None, None) => {
            return Err(CoreError::OutOfDomain("cusp march failed".into()));
        }
    };
    if trace {
        eprintln!("[cubic]   cusp seed ({a_s:.12}, {b_s:.14})");
    }
    // Polish in the march coordinates first, then fall back to a fresh
    // zoomed inflection hunt anchored at the cusp seed.
    match find_cubic_tangency(&|aa, bb| fam.build(aa, bb), (t_s, a_s, b_s), &solve) {
        Ok(rec) => {
            if let Ok(h) = finish(&fam, rec, attempts) {
                return Ok(h);
            }
        }
        Err(e) => {
            if trace {
                eprintln!("[cubic]   march-coordinate Newton: {e}");
            }
        }
    }
    direct_inflection_hunt(cfg, cycle, scale, qm_win, m, a_s, b_s, &solve, trace, attempts)
}

/// Zoomed inflection hunt of the pinched curve at fixed aligned parameters:
/// scan physically sensible zoom levels and seed the nested cubic Newton
/// from the most nearly-tangent inflections.
#[allow(clippy::too_many_arguments)]
fn direct_inflection_hunt(
    cfg: &ContinuationConfig,
    cycle: &CycleConfig,
    scale: f64,
    qm_win: TongueWindow,
    m: usize,
    a_c: f64,
    b_c: f64,
    solve: &SolveOptions,
    trace: bool,
    attempts: &mut Vec<String>,
) -> Result<CubicHunt> {
    let mut solve_tight = *solve;
    solve_tight.residual_tol = 1e-13;
    let finish = |fam: &HookFamily, rec: TangencyRecord| -> Result<CubicHunt> {
        let da = rec.params.a - cycle.a0;
        let db = rec.params.b - cycle.b0;
        if da.abs().max(db.abs()) > cfg.trust_radius {
            return Err(CoreError::SeedOutOfNeighborhood {
                a: rec.params.a,
                b: rec.params.b,
                a0: cycle.a0,
                b0: cycle.b0,
            });
        }
        if rec.params.b <= 0.0 {
            return Err(CoreError::InvalidInput(format!(
                "converged to non-positive b = {}",
                rec.params.b
            )));
        }
        let ctx = fam.build(rec.params.a, rec.params.b)?;
        Ok(CubicHunt {
            record: rec,
            pinch_steps: m,
            window: (ctx.t_lo, ctx.t_hi),
            attempts: Vec::new(),
        })
    };
    for zoom_exp in 1..=6 {
        let fam = HookFamily {
            cfg: cfg.clone(),
            scale,
            leaf_depth: cycle.leaf_depth,
            qm_win,
            m,
            zoom: 10f64.powi(-zoom_exp),
        };
        let Ok(ctx) = fam.build(a_c, b_c) else { continue };
        let Ok(scales) = ctx.feature_scales(64) else { continue };
        let span = scales[0];
        if span < 1e-12 {
            continue;
        }
        let cands = pinch_inflections(&ctx, 1024);
        if cands.is_empty() {
            continue;
        }
        let mut scored: Vec<(f64, f64)> = cands
            .iter()
            .map(|&(u, g, g1)| (u, g / scales[0] + g1 / scales[1]))
            .collect();
        scored.sort_by(|p, q| p.1.total_cmp(&q.1));
        if trace {
            eprintln!(
                "[cubic]   zoom 1e-{zoom_exp}: span {span:.2e}, {} inflections, best rel score {:.2e}",
                scored.len(),
                scored[0].1
            );
        }
        for &(u0, _rel) in scored.iter().take(3) {
            let cubic_family = |aa: f64, bb: f64| -> Result<GapContext> { fam.build(aa, bb) };
            match find_cubic_tangency(&cubic_family, (u0, a_c, b_c), &solve_tight) {
                Ok(rec) => match finish(&fam, rec) {
                    Ok(h) => return Ok(h),
                    Err(e) => attempts.push(format!("m = {m} direct: {e}")),
                },
                Err(e) => {
                    if trace {
                        eprintln!("[cubic]   direct Newton: {e}");
                    }
                    attempts.push(format!("m = {m} direct u0 = {u0:.6e}: {e}"));
                }
            }
        }
    }
    Err(CoreError::OutOfDomain(
        "no convergent pinch inflection at this alignment".into(),
    ))
}

/// Inflections of the gap over the window, polished, with |g| and |g'| at
/// each, sorted by |g| + |g'| (near-tangent first).
fn pinch_inflections(probe: &GapContext, n: usize) -> Vec<(f64, f64, f64)> {
    let mut raw = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let t = probe.t_lo + (probe.t_hi - probe.t_lo) * (i as f64) / (n as f64);
        let Ok((j, _)) = probe.gap_jet(t) else {
            prev = None;
            continue;
        };
        let g2 = j.deriv(2);
        if let Some((tp, g2p)) = prev {
            if g2p.signum() != g2.signum() {
                raw.push(0.5 * (tp + t));
            }
        }
        prev = Some((t, g2));
    }
    let grid = (probe.t_hi - probe.t_lo) / (n as f64);
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for ti in raw {
        let local = GapContext {
            t_lo: (ti - 4.0 * grid).max(probe.t_lo),
            t_hi: (ti + 4.0 * grid).min(probe.t_hi),
            ..probe.clone()
        };
        if let Ok(tp) = crate::tangency::track_derivative_zero(&local, 2, ti) {
            if tp > probe.t_lo && tp < probe.t_hi {
                if let Ok((j, _)) = probe.gap_jet(tp) {
                    if !out.iter().any(|&(q, _, _)| (q - tp).abs() < grid * 0.01) {
                        out.push((tp, j.deriv(0).abs(), j.deriv(1).abs()));
                    }
                }
            }
        }
    }
    out.sort_by(|p, q| (p.1 + p.2).total_cmp(&(q.1 + q.2)));
    out
}

/// Re-verify a cubic record from scratch: rebuild branch and leaf at the
/// recorded parameters with fresh certification (a fresh t-normalization),
/// re-locate the inflection near the recorded plane location, and re-measure
/// (g, g', g'') there.
pub fn verify_cubic_record(cfg: &ContinuationConfig, hunt: &CubicHunt) -> Result<[f64; 3]> {
    let rec = &hunt.record;
    let params = rec.params;
    let branch = unstable_branch(cfg, params, Which::Plus, ScaleMode::Certify)?;
    let stable = stable_leaf(cfg, params, Which::Plus, 0)?;
    let arc = ArcSource::Branch(branch);

    // Find the arc parameter passing closest to the recorded location.
    let mut best: Option<(f64, f64)> = None;
    for sign in [1.0, -1.0] {
        let mut t = cfg.t_sweep_start * sign;
        while t.abs() <= cfg.t_sweep_max {
            if let Ok(g) = arc.germ_at(t, 0) {
                let d = (g.point() - rec.location).norm();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((t, d));
                }
            }
            t *= 1.0 + (cfg.t_sweep_ratio - 1.0) * 0.25;
        }
    }
    let (t_near, _) = best.ok_or_else(|| {
        CoreError::OutOfDomain("recorded location unreachable on the fresh branch".into())
    })?;

    // Grow a window around t_near until it contains a sign change of g''.
    let mut half = t_near.abs() * 1e-7;
    for _ in 0..40 {
        let ctx = GapContext {
            arc: arc.clone(),
            stable: stable.clone(),
            params,
            t_lo: t_near - half,
            t_hi: t_near + half,
            arc_units: true,
            unstable_of: Which::Plus,
            stable_of: Which::Plus,
        };
        if let Some(t_inf) = locate_inflection(&ctx) {
            let (j, _) = ctx.gap_jet(t_inf)?;
            return Ok([j.deriv(0).abs(), j.deriv(1).abs(), j.deriv(2).abs()]);
        }
        half *= 2.0;
    }
    Err(CoreError::OutOfDomain(
        "no inflection near the recorded location on the fresh branch".into(),
    ))
}

/// Newton-resolve the g'' = 0 point inside the context window, if any.
fn locate_inflection(ctx: &GapContext) -> Option<f64> {
    let n = 128;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let t = ctx.t_lo + (ctx.t_hi - ctx.t_lo) * (i as f64) / (n as f64);
        let Ok((j, _)) = ctx.gap_jet(t) else {
            prev = None;
            continue;
        };
        let g2 = j.deriv(2);
        if let Some((tp, g2p)) = prev {
            if g2p.signum() != g2.signum() {
                let mut tc = 0.5 * (tp + t);
                for _ in 0..50 {
                    let Ok((jj, speed)) = ctx.gap_jet(tc) else { return None };
                    if jj.deriv(3) == 0.0 {
                        break;
                    }
                    let step = -jj.deriv(2) / jj.deriv(3);
                    tc += step / speed;
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                return Some(tc);
            }
        }
        prev = Some((t, g2));
    }
    None
}

/// Report for one scan direction through the cubic point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionReport {
    pub angle: f64,
    pub events: Vec<(f64, ContactClass)>,
    pub antimonotone: bool,
    pub note: String,
}

/// Scan regular parameter lines through the cubic point for the pair of
/// quadratic tangencies born from the unfolding, classifying each as
/// contact-making or contact-breaking.
pub fn antimonotone_scan(
    cfg: &ContinuationConfig,
    hunt: &CubicHunt,
    radius: f64,
    n_directions: usize,
) -> Result<Vec<DirectionReport>> {
    if !(radius > 0.0) {
        return Err(CoreError::InvalidInput("radius must be positive".into()));
    }
    let center = hunt.record.params;
    let base_branch = unstable_branch(cfg, center, Which::Plus, ScaleMode::Certify)?;
    let fam = CubicFamily {
        cfg: cfg.clone(),
        scale: base_branch.scale,
        window: hunt.window,
    };
    let mut reports = Vec::new();
    for k in 0..n_directions {
        let angle = std::f64::consts::PI * (k as f64 + 0.5) / (n_directions as f64);
        let dir = (angle.cos(), angle.sin());
        let line = |s: f64| -> Result<GapContext> {
            fam.build(center.a + s * radius * dir.0, center.b + s * radius * dir.1)
        };
        let mut events = Vec::new();
        let mut note = String::new();
        // March s and track critical values crossing zero.
        let n = 40;
        let mut prev: Vec<(f64, f64)> = Vec::new();
        for i in 0..=n {
            let s = -1.0 + 2.0 * (i as f64) / (n as f64);
            let crits = match line(s) {
                Ok(ctx) => collect_critical_values(&ctx),
                Err(_) => Vec::new(),
            };
            for &(tc, gc) in &crits {
                if let Some(&(sp, gp)) = prev
                    .iter()
                    .min_by(|p, q| (p.0 - tc).abs().total_cmp(&(q.0 - tc).abs()))
                {
                    if gp.signum() != gc.signum() {
                        let s_prev = s - 2.0 / (n as f64);
                        let seed_s = 0.5 * (s_prev + s);
                        if let Ok(rec) =
                            find_quadratic_tangency(&line, tc, seed_s, &cfg.solve)
                        {
                            if let Ok(class) =
                                classify_contact(&line, &rec, rec.params.a, 1e-4)
                            {
                                // rec.params.a here is the line parameter s.
                                let s_star = rec.params.a;
                                if !events
                                    .iter()
                                    .any(|(se, _): &(f64, ContactClass)| (se - s_star).abs() < 1e-6)
                                {
                                    events.push((s_star, class));
                                }
                            }
                        }
                    }
                    let _ = sp;
                }
            }
            prev = crits;
        }
        events.sort_by(|p, q| p.0.total_cmp(&q.0));
        let making = events.iter().any(|(_, c)| *c == ContactClass::Making);
        let breaking = events.iter().any(|(_, c)| *c == ContactClass::Breaking);
        if events.is_empty() {
            note = "no tangency events on this line".into();
        }
        reports.push(DirectionReport {
            angle,
            events,
            antimonotone: making && breaking,
            note,
        });
    }
    Ok(reports)
}

fn collect_critical_values(ctx: &GapContext) -> Vec<(f64, f64)> {
    let n = 160;
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let t = ctx.t_lo + (ctx.t_hi - ctx.t_lo) * (i as f64) / (n as f64);
        let Ok((j, _)) = ctx.gap_jet(t) else {
            prev = None;
            continue;
        };
        let g1 = j.deriv(1);
        if let Some((tp, g1p)) = prev {
            if g1p.signum() != g1.signum() {
                let mut tc = 0.5 * (tp + t);
                for _ in 0..40 {
                    let Ok((jj, speed)) = ctx.gap_jet(tc) else { break };
                    if jj.deriv(2) == 0.0 {
                        break;
                    }
                    let step = -jj.deriv(1) / jj.deriv(2);
                    tc += step / speed;
                    if step.abs() < 1e-14 {
                        break;
                    }
                }
                if let Ok((jj, _)) = ctx.gap_jet(tc) {
                    out.push((tc, jj.deriv(0)));
                }
            }
        }
        prev = Some((t, g1));
    }
    out
}
