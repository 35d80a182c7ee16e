//! Canard-explosion branches parametrized by cycle width, saddle-node folds
//! along them, and the small-amplitude check near the Hopf-like value.
//!
//! Widths, not `a`, label branch points: `a` varies by an exponentially
//! small amount along the whole explosion.

use crate::canard::{cycle_for_width_with, hstar_root_in, maximal_canard, CanardError, Connection, Family, RContext};
use crate::linflow::{integrate_orbit_dir, Direction, FlowError, Heading, Orbit, Section, StopRule};
use crate::logspace::LogValue;
use crate::model::{equilibrium_stability, landmarks, Landmarks, MSign, ModelError, Params};
use crate::poincare::{phi, return_map, CycleKind, PoincareError, Stability, FIXED_TOL};
use crate::roots::{bisect, brent, geomspace, linspace};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuationError {
    #[error("no small cycle found at a = {a}")]
    NoHopfCycle { a: f64 },
    #[error("Hopf-like value undefined for these parameters")]
    NoHopfValue,
    #[error(transparent)]
    Canard(#[from] CanardError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub const DEFAULT_POINTS: usize = 200;

/// Widths to trace: an explicit list or an adaptive grid of about `n` points.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "grid", rename_all = "snake_case")]
pub enum Grid {
    Widths { widths: Vec<f64> },
    Adaptive { n: usize },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Adaptive { n: DEFAULT_POINTS }
    }
}

/// Geometric clustering toward both ends of `(lo, hi)` with a uniform core.
fn segment(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = hi - lo;
    if !(w > 0.0) || n < 4 {
        return Vec::new();
    }
    let g = n / 4;
    let mut xs: Vec<f64> = linspace(lo, hi, n - 2 * g + 2);
    xs.pop();
    xs.remove(0);
    for d in geomspace(1e-4 * w, 0.1 * w, g) {
        xs.push(lo + d);
        xs.push(hi - d);
    }
    xs
}

/// Default widths: the headless range `(-1, -sqrt(eps))` and the with-head
/// range down to `x_r`, each dense near its ends. A relative guard band is
/// kept off `-sqrt(eps)` (zero-size cycles) and `x_r` (capture by the left
/// slow line).
pub fn adaptive_widths(lm: &Landmarks, eps: f64, n: usize) -> Vec<f64> {
    let se = eps.sqrt();
    let guard_top = 1e-3 * (1.0 - se);
    let guard_bottom = 1e-2 * (-1.0 - lm.x_r).abs();
    let mut xs = segment(-1.0, -se - guard_top, n / 2);
    xs.extend(segment(lm.x_r + guard_bottom, -1.0, n - n / 2));
    xs.retain(|&x| x != -1.0);
    sort_desc(&mut xs);
    xs
}

fn sort_desc(xs: &mut Vec<f64>) {
    xs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    xs.dedup();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    pub x0: f64,
    pub h: f64,
    pub a: f64,
    pub log_multiplier: f64,
    pub stability: Stability,
    pub kind: CycleKind,
    /// Inside a transitory window.
    pub window: bool,
    /// Inside `(-1, x_s)` (headless) or `(x_r, x_u)` (with head).
    pub in_validity: bool,
    pub underflow_dominated: bool,
    pub gap_to_a_tilde: LogValue,
    /// Return-map displacement at the cycle's section point.
    pub residual: f64,
    pub verified: bool,
    pub verification: Verification,
    /// R-function of the point's family at its height; `None` off the family's interval.
    pub r_value: Option<f64>,
    pub r_sign: Option<i8>,
}

/// How a branch cycle was certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verification {
    /// Return-map displacement within `FIXED_TOL`.
    ReturnMap,
    /// Displacement changes sign within `ULP_BRACKET` doubles.
    UlpBracket,
    /// Repelling cycle: forward and backward legs from the width meet on
    /// `x = -sqrt(eps)` within `FIXED_TOL`.
    Closure,
    /// Underflow-dominated: the closure changes sign across `a_tilde`
    /// plus or minus 64 ulps, the finest bracket representable.
    ABracket,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub x0: f64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub k: f64,
    pub eps: f64,
    pub m_sign: MSign,
    pub a_h: Option<f64>,
    pub a_tilde: f64,
    pub points: Vec<BranchPoint>,
    pub failures: Vec<PointFailure>,
    #[serde(skip)]
    pub connection: Connection,
}

impl Branch {
    pub fn all_verified(&self) -> bool {
        self.points.iter().all(|p| p.verified)
    }
}

pub fn in_validity(x0: f64, lm: &Landmarks) -> bool {
    (-1.0 < x0 && x0 < lm.x_s) || (lm.x_r < x0 && x0 < lm.x_u)
}

/// Fixed-point check of a branch cycle on the return section: the
/// displacement is within `FIXED_TOL`, or it takes the opposite sign within
/// `ULP_BRACKET` doubles of `y_fix`. The second case covers repelling
/// canards, whose computed map jumps at the ulp scale.
pub fn verify_cycle(y_fix: f64, p: &Params) -> (f64, Verification) {
    let d = |y: f64| return_map(y, p).map(|r| r.displacement()).unwrap_or(f64::NAN);
    let d0 = d(y_fix);
    if !d0.is_finite() {
        return (d0, Verification::Failed);
    }
    if d0.abs() <= FIXED_TOL * (1.0 + y_fix.abs()) {
        return (d0, Verification::ReturnMap);
    }
    let mut j = 1;
    while j <= ULP_BRACKET {
        for y in [ulps_from(y_fix, -j), ulps_from(y_fix, j)] {
            let dj = d(y);
            if dj.is_finite() && (dj > 0.0) != (d0 > 0.0) {
                return (d0, Verification::UlpBracket);
            }
        }
        j *= 2;
    }
    (d0, Verification::Failed)
}

pub const ULP_BRACKET: i64 = 64;

/// `x` moved by `n` representable doubles (same sign throughout).
fn ulps_from(x: f64, n: i64) -> f64 {
    let s = if x < 0.0 { -n } else { n };
    f64::from_bits((x.to_bits() as i64 + s) as u64)
}

fn branch_point(x0: f64, ctx: &RContext) -> Result<BranchPoint, CanardError> {
    let ws = cycle_for_width_with(x0, &ctx.conn)?;
    let p = ctx.params.with_a(ws.a_hat);
    let (residual, mut verification) = verify_cycle(ws.cycle.y_fix, &p);
    if verification == Verification::Failed {
        if ws.underflow_dominated {
            verification = Verification::ABracket;
        } else if ws.cycle.residual.abs() <= FIXED_TOL * (1.0 + ws.cycle.h.abs()) {
            verification = Verification::Closure;
        }
    }
    let family = match ws.cycle.kind {
        CycleKind::Headless => Family::ThreeZone,
        CycleKind::WithHead => Family::FourZone,
    };
    let r = ctx.eval(family, ws.cycle.h).ok();
    Ok(BranchPoint {
        x0,
        h: ws.cycle.h,
        a: ws.a_hat,
        log_multiplier: ws.cycle.log_multiplier,
        stability: ws.cycle.stability,
        kind: ws.cycle.kind,
        window: ws.cycle.window,
        in_validity: in_validity(x0, &ctx.landmarks),
        underflow_dominated: ws.underflow_dominated,
        gap_to_a_tilde: ws.gap_to_a_tilde,
        residual,
        verified: verification != Verification::Failed,
        verification,
        r_value: r.map(|v| v.value),
        r_sign: r.map(|v| v.sign),
    })
}

/// Canard cycles along the width grid, solved independently and assembled
/// in decreasing width.
pub fn trace_branch(k: f64, eps: f64, sign: MSign, grid: &Grid) -> Result<Branch, CanardError> {
    let conn = maximal_canard(k, eps, sign)?;
    let ctx = RContext::from_connection(conn.clone())?;
    let mut widths = match grid {
        Grid::Widths { widths } => widths.clone(),
        Grid::Adaptive { n } => adaptive_widths(&ctx.landmarks, eps, *n),
    };
    widths.retain(|x| x.is_finite());
    sort_desc(&mut widths);
    let results: Vec<(f64, Result<BranchPoint, CanardError>)> =
        widths.par_iter().map(|&x0| (x0, branch_point(x0, &ctx))).collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (x0, r) in results {
        match r {
            Ok(pt) => points.push(pt),
            Err(e) => failures.push(PointFailure { x0, error: e.to_string() }),
        }
    }
    Ok(Branch {
        k,
        eps,
        m_sign: sign,
        a_h: ctx.landmarks.a_h,
        a_tilde: conn.a_tilde,
        points,
        failures,
        connection: conn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fold {
    pub x_star: f64,
    pub a_star: f64,
    pub side: CycleKind,
    /// `|multiplier - 1|` at the refined width.
    pub multiplier_residual: f64,
    /// Located from the a(x0) turn alone (multiplier not resolvable).
    pub coarse: bool,
    /// `a` is the maximal canard value up to an unrepresentable gap.
    pub underflow_dominated: bool,
    /// Whether a(x0) reverses among the neighbouring points; `None` when the
    /// a-values are underflow-dominated.
    pub a_reversal: Option<bool>,
    pub h_star: Option<f64>,
    /// `|phi(x*) - h*| / h*` against the R-function root of the fold's side.
    pub hstar_gap: Option<f64>,
}

/// Saddle-node folds: sign changes of the log-multiplier between neighbours
/// inside the validity windows, refined by Brent on the width.
pub fn detect_folds(branch: &Branch) -> Vec<Fold> {
    let ctx = match RContext::from_connection(branch.connection.clone()) {
        Ok(c) => c,
        Err(_) => return Vec::new(),
    };
    let pts: Vec<&BranchPoint> = branch
        .points
        .iter()
        .filter(|p| p.in_validity && !p.window && p.log_multiplier.is_finite())
        .collect();
    let mut folds = Vec::new();
    for i in 0..pts.len().saturating_sub(1) {
        let (p0, p1) = (pts[i], pts[i + 1]);
        if p0.kind != p1.kind || (p0.log_multiplier > 0.0) == (p1.log_multiplier > 0.0) {
            continue;
        }
        let lm_at = |x: f64| {
            cycle_for_width_with(x, &ctx.conn)
                .map(|w| w.cycle.log_multiplier)
                .unwrap_or(f64::NAN)
        };
        let x_star = brent(lm_at, p1.x0, p0.x0, 1e-13, 200)
            .or_else(|| bisect(lm_at, p1.x0, p0.x0, 200))
            .unwrap_or(0.5 * (p0.x0 + p1.x0));
        let ws = cycle_for_width_with(x_star, &ctx.conn).ok();
        let (a_star, mres, underflow) = match &ws {
            Some(w) => (w.a_hat, w.cycle.log_multiplier.exp_m1().abs(), w.underflow_dominated),
            None => (f64::NAN, f64::NAN, true),
        };
        let lo = i.saturating_sub(1);
        let hi = (i + 2).min(pts.len() - 1);
        let nb = &pts[lo..=hi];
        let a_reversal = if nb.iter().any(|p| p.underflow_dominated) || underflow {
            None
        } else {
            let d: Vec<f64> = nb.windows(2).map(|w| w[1].a - w[0].a).collect();
            Some(d.windows(2).any(|w| (w[0] > 0.0) != (w[1] > 0.0)))
        };
        let family = match p0.kind {
            CycleKind::Headless => Family::ThreeZone,
            CycleKind::WithHead => Family::FourZone,
        };
        let h_star = hstar_root_in(&ctx, family).map(|h| h.h);
        let hstar_gap = h_star.and_then(|hs| {
            let h = phi(x_star, &ctx.params.with_a(a_star)).ok()?;
            Some((h - hs).abs() / hs)
        });
        folds.push(Fold {
            x_star,
            a_star,
            side: p0.kind,
            multiplier_residual: mres,
            coarse: ws.is_none(),
            underflow_dominated: underflow,
            a_reversal,
            h_star,
            hstar_gap,
        });
    }
    folds
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HopfSample {
    pub a: f64,
    pub distance: f64,
    pub y_fix: f64,
    pub amplitude: f64,
    pub log_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopfCheck {
    pub k: f64,
    pub eps: f64,
    pub m_sign: MSign,
    pub a_h: f64,
    pub samples: Vec<HopfSample>,
    /// Least-squares fit `amplitude = slope * |a - a_H| + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Equilibrium stable above `a_H` and unstable below, at every probe.
    pub equilibrium_flip: bool,
    /// Small cycles attract (minus) or repel (plus).
    pub cycle_stability_ok: bool,
}

const HOPF_SAMPLES: usize = 10;
const HOPF_EVENTS: usize = 16;

/// Closed orbit crossing `x = c` leftward, found by a displacement scan from
/// the innermost start outward. Stable cycles are followed forward in time,
/// unstable ones backward.
fn small_cycle(c: f64, p: &Params, dir: Direction) -> Option<(f64, Orbit)> {
    let fc = p.nullcline(c);
    let section = Section {
        x: c,
        heading: Heading::Left,
    };
    let stop = StopRule::Section {
        section,
        max_events: HOPF_EVENTS,
    };
    let run = |s: f64| integrate_orbit_dir([c, fc - s], p, stop, dir, None).ok();
    let disp = |s: f64| run(s).and_then(|o| o.end_point()).map(|q| (fc - q[1]) - s);
    let ss = geomspace(1e-10, 1.0, 600);
    let ds: Vec<Option<f64>> = ss.iter().map(|&s| disp(s)).collect();
    for i in 0..ss.len() - 1 {
        if let (Some(d0), Some(d1)) = (ds[i], ds[i + 1]) {
            if (d0 > 0.0) != (d1 > 0.0) {
                let f = |s: f64| disp(s).unwrap_or(f64::NAN);
                let s = brent(f, ss[i], ss[i + 1], 0.0, 300).or_else(|| bisect(f, ss[i], ss[i + 1], 300))?;
                return Some((fc - s, run(s)?));
            }
        }
    }
    None
}

fn orbit_extent(o: &Orbit, p: &Params) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in &o.events {
        let zf = e.zone_flow(p);
        lo = lo.min(zf.min_x(e.flight_time).1);
        hi = hi.max(zf.max_x(e.flight_time).1);
    }
    hi - lo
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy * sxy / (sxx * syy))
}

/// Small cycles born at the Hopf-like value: below `a_H` for `m < 0`,
/// above it for `m > 0`, at distances up to `0.2 sqrt(eps)`.
pub fn hopf_check(k: f64, eps: f64, sign: MSign) -> Result<HopfCheck, ContinuationError> {
    let p0 = Params::with_sign(0.0, k, sign, eps)?;
    let se = p0.sqrt_eps();
    let a_h = landmarks(&p0)?.a_h.ok_or(ContinuationError::NoHopfValue)?;
    let (side, dir) = match sign {
        MSign::Minus => (-1.0, Direction::Forward),
        MSign::Plus => (1.0, Direction::Backward),
    };
    let mut samples = Vec::with_capacity(HOPF_SAMPLES);
    for i in 1..=HOPF_SAMPLES {
        let d = 0.2 * se * i as f64 / HOPF_SAMPLES as f64;
        let a = a_h + side * d;
        let p = p0.with_a(a);
        let (y_fix, orbit) = small_cycle(a_h, &p, dir).ok_or(ContinuationError::NoHopfCycle { a })?;
        samples.push(HopfSample {
            a,
            distance: d,
            y_fix,
            amplitude: orbit_extent(&orbit, &p),
            log_multiplier: orbit.log_divergence(&p),
        });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.distance).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.amplitude).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    let equilibrium_flip = [0.05, 0.1, 0.2].iter().all(|&f| {
        let above = equilibrium_stability(&p0.with_a(a_h + f * se)).classification.is_stable();
        let below = equilibrium_stability(&p0.with_a(a_h - f * se)).classification.is_stable();
        above == Some(true) && below == Some(false)
    });
    let cycle_stability_ok = samples.iter().all(|s| match sign {
        MSign::Minus => s.log_multiplier < 0.0,
        MSign::Plus => s.log_multiplier > 0.0,
    });
    Ok(HopfCheck {
        k,
        eps,
        m_sign: sign,
        a_h,
        samples,
        slope,
        intercept,
        r_squared,
        equilibrium_flip,
        cycle_stability_ok,
    })
}
