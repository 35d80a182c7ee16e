//! Poincaré half-maps between switching lines, the return map on the
//! section `x = sqrt(eps)` (leftward, below the tangency `p_R`), the
//! width-to-height maps, fixed points and cycle multipliers.

use crate::linflow::{
    integrate_orbit_dir, Direction, FlowError, Heading, Orbit, Section, StopRule, ZoneFlow,
};
use crate::logspace::LogValue;
use crate::model::{landmarks, ModelError, Params, Zone};
use crate::roots::{bisect, brent, geomspace, linspace};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// `|Pi(y) - y| <= FIXED_TOL (1 + |y|)` accepts a fixed point.
pub const FIXED_TOL: f64 = 1e-11;
/// Multipliers within `1 +- STABILITY_BAND` are not labelled.
pub const STABILITY_BAND: f64 = 1e-6;
const MAX_RETURN_EVENTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoincareError {
    #[error("ordinate {y} is outside the domain of half-map {kind:?}")]
    Domain { kind: HalfMapKind, y: f64 },
    #[error("half-map {kind:?} from y = {y} leaves through the wrong line")]
    NoCrossing { kind: HalfMapKind, y: f64 },
    #[error("ordinate {0} is not on the return section")]
    NotOnSection(f64),
    #[error("width {0} is outside the range of the width-to-height map")]
    OutOfRange(f64),
    #[error("height {0} is not attained on the requested branch")]
    NoPreimage(f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Passages between switching lines: `Cd` crosses C downward (right to
/// left), `Cu` upward, `L`, `R`, `LL` return to their own line, `Ld` runs
/// from `-sqrt(eps)` to `-1` and `Lu` back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HalfMapKind {
    Cd,
    Cu,
    L,
    R,
    LL,
    Ld,
    Lu,
}

impl HalfMapKind {
    pub const ALL: [HalfMapKind; 7] = [
        HalfMapKind::Cd,
        HalfMapKind::Cu,
        HalfMapKind::L,
        HalfMapKind::R,
        HalfMapKind::LL,
        HalfMapKind::Ld,
        HalfMapKind::Lu,
    ];

    pub fn zone(self) -> Zone {
        match self {
            HalfMapKind::Cd | HalfMapKind::Cu => Zone::C,
            HalfMapKind::L | HalfMapKind::Ld | HalfMapKind::Lu => Zone::L,
            HalfMapKind::R => Zone::R,
            HalfMapKind::LL => Zone::LL,
        }
    }

    /// `(source line, target line)`.
    pub fn lines(self, p: &Params) -> (f64, f64) {
        let se = p.sqrt_eps();
        match self {
            HalfMapKind::Cd => (se, -se),
            HalfMapKind::Cu => (-se, se),
            HalfMapKind::L => (-se, -se),
            HalfMapKind::R => (se, se),
            HalfMapKind::LL => (-1.0, -1.0),
            HalfMapKind::Ld => (-se, -1.0),
            HalfMapKind::Lu => (-1.0, -se),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfMapResult {
    pub y_out: f64,
    pub tau: f64,
    /// Exit offset from the zone's slow eigenline (real-pair zones only).
    pub slow_offset: Option<LogValue>,
}

/// Does the zone lie to the right of the line `x = c`?
fn zone_right_of(zone: Zone, c: f64, p: &Params) -> bool {
    zone.interval(p).0 == c
}

fn passage(
    kind: HalfMapKind,
    from: f64,
    to: f64,
    y: f64,
    p: &Params,
    dir: Direction,
) -> Result<HalfMapResult, PoincareError> {
    let zone = kind.zone();
    let v = dir.sign() * (y - p.nullcline(from));
    let inward = if zone_right_of(zone, from, p) { v > 0.0 } else { v < 0.0 };
    if !inward || !y.is_finite() {
        return Err(PoincareError::Domain { kind, y });
    }
    let (lo, hi) = zone.interval(p);
    let zf = ZoneFlow::new(zone, [from, y], p, dir);
    let ex = zf.first_exit(lo, hi).ok_or(PoincareError::NoCrossing { kind, y })?;
    if ex.c != to || ex.t <= 0.0 {
        return Err(PoincareError::NoCrossing { kind, y });
    }
    Ok(HalfMapResult {
        y_out: ex.point[1],
        tau: ex.t,
        slow_offset: zf.slow_line_offset(ex.t),
    })
}

/// Forward half-map from `(source, y)` to the target line.
pub fn half_map(kind: HalfMapKind, y: f64, p: &Params) -> Result<HalfMapResult, PoincareError> {
    let (from, to) = kind.lines(p);
    passage(kind, from, to, y, p, Direction::Forward)
}

/// Inverse half-map: backward flow from `(target, y)` to the source line.
pub fn half_map_inverse(kind: HalfMapKind, y: f64, p: &Params) -> Result<HalfMapResult, PoincareError> {
    let (from, to) = kind.lines(p);
    passage(kind, to, from, y, p, Direction::Backward)
}

/// The return section: `x = sqrt(eps)`, moving left.
pub fn return_section(p: &Params) -> Section {
    Section {
        x: p.sqrt_eps(),
        heading: Heading::Left,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnResult {
    pub y0: f64,
    pub y_out: f64,
    /// Zone visits in order with their flight times.
    pub times: Vec<(Zone, f64)>,
    pub visited_ll: bool,
    /// Sum of trace times flight time; the multiplier is its exponential.
    pub log_multiplier: f64,
    /// `y0 - (q1_R)_y`, exact by Sterbenz when both are close.
    pub offset_in: f64,
    /// `y_out - (q1_R)_y` from the closed-form exit of zone R.
    pub offset_out: LogValue,
    #[serde(skip)]
    pub orbit: Orbit,
}

impl ReturnResult {
    pub fn multiplier(&self) -> LogValue {
        LogValue::exp(self.log_multiplier)
    }

    /// `Pi(y0) - y0` without forming the rounded image.
    pub fn displacement(&self) -> f64 {
        self.offset_out.to_f64() - self.offset_in
    }
}

fn q1r_y(p: &Params) -> Result<f64, PoincareError> {
    Ok(landmarks(p)?.q1_r[1])
}

/// First return of `(sqrt(eps), y0)` to the section.
pub fn return_map(y0: f64, p: &Params) -> Result<ReturnResult, PoincareError> {
    let q1 = q1r_y(p)?;
    return_map_with(y0, q1, p)
}

fn return_map_with(y0: f64, q1: f64, p: &Params) -> Result<ReturnResult, PoincareError> {
    let se = p.sqrt_eps();
    if !(y0 < p.nullcline(se)) {
        return Err(PoincareError::NotOnSection(y0));
    }
    let orbit = integrate_orbit_dir(
        [se, y0],
        p,
        StopRule::Section {
            section: return_section(p),
            max_events: MAX_RETURN_EVENTS,
        },
        Direction::Forward,
        Some(Zone::C),
    )?;
    let last = orbit.events.last().expect("section stop needs one event");
    let offset_out = if last.zone == Zone::R {
        last.zone_flow(p)
            .slow_line_offset(last.flight_time)
            .unwrap_or_else(|| LogValue::from_f64(last.exit[1] - q1))
    } else {
        LogValue::from_f64(last.exit[1] - q1)
    };
    Ok(ReturnResult {
        y0,
        y_out: last.exit[1],
        times: orbit.events.iter().map(|e| (e.zone, e.flight_time)).collect(),
        visited_ll: orbit.visits(Zone::LL),
        log_multiplier: orbit.log_divergence(p),
        offset_in: y0 - q1,
        offset_out,
        orbit,
    })
}

/// Three-zone composition R . Cu . L . Cd.
pub fn compose_3z(y0: f64, p: &Params) -> Result<f64, PoincareError> {
    let y1 = half_map(HalfMapKind::Cd, y0, p)?.y_out;
    let y2 = half_map(HalfMapKind::L, y1, p)?.y_out;
    let y3 = half_map(HalfMapKind::Cu, y2, p)?.y_out;
    Ok(half_map(HalfMapKind::R, y3, p)?.y_out)
}

/// Four-zone composition R . Cu . Lu . LL . Ld . Cd.
pub fn compose_4z(y0: f64, p: &Params) -> Result<f64, PoincareError> {
    let mut y = y0;
    for kind in [
        HalfMapKind::Cd,
        HalfMapKind::Ld,
        HalfMapKind::LL,
        HalfMapKind::Lu,
        HalfMapKind::Cu,
        HalfMapKind::R,
    ] {
        y = half_map(kind, y, p)?.y_out;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Nonhyperbolic,
}

impl Stability {
    pub fn from_log_multiplier(lm: f64) -> Stability {
        if lm.abs() <= STABILITY_BAND {
            Stability::Nonhyperbolic
        } else if lm < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Nonhyperbolic => "nonhyperbolic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleKind {
    Headless,
    WithHead,
}

impl CycleKind {
    pub fn name(self) -> &'static str {
        match self {
            CycleKind::Headless => "headless",
            CycleKind::WithHead => "with-head",
        }
    }
}

/// Width inside `(x_u, -1)` or `(x_s, -sqrt(eps))`, where the asymptotic
/// theory does not apply.
pub fn in_window(x0: f64, p: &Params) -> bool {
    match landmarks(p) {
        Ok(lm) => (lm.x_u < x0 && x0 < -1.0) || (lm.x_s < x0 && x0 < -p.sqrt_eps()),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub y_fix: f64,
    pub x0: f64,
    pub h: f64,
    pub log_multiplier: f64,
    pub stability: Stability,
    pub kind: CycleKind,
    pub window: bool,
    pub residual: f64,
}

/// Leftmost point of an orbit: the nullcline crossing with x < a.
pub fn orbit_width(orbit: &Orbit, p: &Params) -> f64 {
    orbit
        .events
        .iter()
        .map(|e| e.zone_flow(p).min_x(e.flight_time).1)
        .fold(f64::INFINITY, f64::min)
}

/// Height of a closed orbit: ordinate where it crosses `x = -sqrt(eps)`
/// rightward (headless) or `x = -1` leftward (with head).
pub fn orbit_height(orbit: &Orbit, p: &Params) -> Option<f64> {
    let se = p.sqrt_eps();
    let with_head = orbit.visits(Zone::LL);
    orbit.events.iter().find_map(|e| match e.end {
        crate::linflow::EventEnd::Boundary { c, heading, .. } => {
            let hit = if with_head {
                c == -1.0 && heading == Heading::Left
            } else {
                c == -se && heading == Heading::Right && e.zone == Zone::L
            };
            hit.then_some(e.exit[1])
        }
        _ => None,
    })
}

pub fn cycle_record(r: &ReturnResult, p: &Params) -> CycleRecord {
    let x0 = orbit_width(&r.orbit, p);
    CycleRecord {
        y_fix: r.y0,
        x0,
        h: orbit_height(&r.orbit, p).unwrap_or(f64::NAN),
        log_multiplier: r.log_multiplier,
        stability: Stability::from_log_multiplier(r.log_multiplier),
        kind: if r.visited_ll {
            CycleKind::WithHead
        } else {
            CycleKind::Headless
        },
        window: in_window(x0, p),
        residual: r.displacement(),
    }
}

pub fn multiplier(cycle: &CycleRecord) -> LogValue {
    LogValue::exp(cycle.log_multiplier)
}

/// Scan grid on the section: uniform in y plus geometric in the distance
/// to `(q1_R)_y`, where all canard fixed points accumulate.
fn scan_grid(y_lo: f64, y_hi: f64, q1: f64, n: usize) -> Vec<f64> {
    let mut ys = linspace(y_lo, y_hi, n);
    let tiny = 8.0 * f64::EPSILON * q1.abs().max(1e-300);
    if q1 < y_hi {
        let top = y_hi - q1.max(y_lo);
        if top > tiny {
            ys.extend(geomspace(tiny, top, 2 * n).into_iter().map(|u| q1.max(y_lo) + u));
        }
    }
    if q1 > y_lo {
        let bottom = q1.min(y_hi) - y_lo;
        if bottom > tiny {
            ys.extend(geomspace(tiny, bottom, n).into_iter().map(|u| q1.min(y_hi) - u));
        }
    }
    ys.retain(|y| *y >= y_lo && *y <= y_hi);
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();
    ys
}

/// All simple zeros of `Pi(y) - y` on `[y_lo, y_hi]`, ordered by y.
pub fn fixed_points(p: &Params, y_lo: f64, y_hi: f64) -> Result<Vec<CycleRecord>, PoincareError> {
    fixed_points_with(p, y_lo, y_hi, 400)
}

pub fn fixed_points_with(
    p: &Params,
    y_lo: f64,
    y_hi: f64,
    n: usize,
) -> Result<Vec<CycleRecord>, PoincareError> {
    let q1 = q1r_y(p)?;
    let y_hi = y_hi.min(p.nullcline(p.sqrt_eps()).next_down_f());
    let ys = scan_grid(y_lo, y_hi, q1, n);
    let ds: Vec<Option<f64>> = ys
        .par_iter()
        .map(|&y| return_map_with(y, q1, p).ok().map(|r| r.displacement()))
        .collect();
    let brackets: Vec<(f64, f64)> = ys
        .windows(2)
        .zip(ds.windows(2))
        .filter_map(|(y, d)| match (d[0], d[1]) {
            (Some(d0), Some(d1)) if d0 == 0.0 || (d0 > 0.0) != (d1 > 0.0) && d1 != 0.0 => Some((y[0], y[1])),
            _ => None,
        })
        .collect();
    let mut out: Vec<CycleRecord> = brackets
        .par_iter()
        .filter_map(|&(a, b)| {
            let disp = |y: f64| return_map_with(y, q1, p).map(|r| r.displacement()).unwrap_or(f64::NAN);
            let y = brent(disp, a, b, 0.0, 400).or_else(|| bisect(disp, a, b, 2000))?;
            let r = return_map_with(y, q1, p).ok()?;
            let rec = cycle_record(&r, p);
            (rec.residual.abs() <= FIXED_TOL * (1.0 + y.abs())).then_some(rec)
        })
        .collect();
    out.sort_by(|a, b| a.y_fix.partial_cmp(&b.y_fix).unwrap());
    out.dedup_by(|a, b| (a.y_fix - b.y_fix).abs() <= 4.0 * f64::EPSILON * (1.0 + a.y_fix.abs()));
    Ok(out)
}

trait NextDown {
    fn next_down_f(self) -> f64;
}

impl NextDown for f64 {
    fn next_down_f(self) -> f64 {
        if self.is_nan() || self == f64::NEG_INFINITY {
            return self;
        }
        if self == 0.0 {
            return -f64::from_bits(1);
        }
        let bits = self.to_bits();
        if self > 0.0 {
            f64::from_bits(bits - 1)
        } else {
            f64::from_bits(bits + 1)
        }
    }
}

/// Central finite-difference derivative of the return map, Richardson
/// extrapolated once. Differences are taken on exact exit offsets, and the
/// step stays well below the distance to `(q1_R)_y`, whose neighbourhood
/// holds the separatrix of the repelling branch.
pub fn fd_derivative(y: f64, p: &Params) -> Result<LogValue, PoincareError> {
    let q1 = q1r_y(p)?;
    let u = (y - q1).abs();
    // Output offsets carry an absolute noise floor near 1e-17; a contracting map
    // needs a wider step to lift the difference above it, an expanding one a
    // narrower step to stay clear of the curvature near the slow line.
    let mult = return_map_with(y, q1, p)?.log_multiplier.exp();
    let base = (1e-11 / mult).clamp(u / 64.0, u / 4.0).min(1e-6 * (1.0 + y.abs()));
    fd_derivative_step(y, p, base)
}

pub fn fd_derivative_step(y: f64, p: &Params, base: f64) -> Result<LogValue, PoincareError> {
    let q1 = q1r_y(p)?;
    let central = |h: f64| -> Result<LogValue, PoincareError> {
        let (yp, ym) = (y + h, y - h);
        let rp = return_map_with(yp, q1, p)?;
        let rm = return_map_with(ym, q1, p)?;
        // Offsets are relative to the same q1, so their difference is Pi(yp) - Pi(ym).
        let num = rp.offset_out.add(rm.offset_out.neg());
        Ok(num.scale_exp(-(yp - ym).ln()))
    };
    let d1 = central(base)?;
    let d2 = central(0.5 * base)?;
    // d2 + (d2 - d1)/3
    let corr = d2.add(d1.neg()).scale_exp(-(3f64).ln());
    Ok(d2.add(corr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiBranch {
    /// Widths in `[-1, -sqrt(eps)]`: forward image on `x = -sqrt(eps)`.
    ThreeZone,
    /// Widths below -1: backward image on `x = -1`.
    FourZone,
}

/// Height of the orbit through `(x0, f(x0))`.
pub fn phi(x0: f64, p: &Params) -> Result<f64, PoincareError> {
    let se = p.sqrt_eps();
    if !(x0 < p.a) || !(x0 <= -se) || !x0.is_finite() {
        return Err(PoincareError::OutOfRange(x0));
    }
    if x0 == -se {
        return Ok(p.nullcline(-se));
    }
    let q = [x0, p.nullcline(x0)];
    if x0 >= -1.0 {
        // At the knot x0 = -1 the orbit enters L (y' > 0 pushes it right).
        let zf = ZoneFlow::new(Zone::L, q, p, Direction::Forward);
        let (lo, hi) = Zone::L.interval(p);
        match zf.first_exit(lo, hi) {
            Some(ex) if ex.c == -se => Ok(ex.point[1]),
            _ => Err(PoincareError::OutOfRange(x0)),
        }
    } else {
        let zf = ZoneFlow::new(Zone::LL, q, p, Direction::Backward);
        let (lo, hi) = Zone::LL.interval(p);
        match zf.first_exit(lo, hi) {
            Some(ex) if ex.c == -1.0 => Ok(ex.point[1]),
            _ => Err(PoincareError::OutOfRange(x0)),
        }
    }
}

/// Width whose height is `h` on the given branch (monotone on each branch).
pub fn phi_inverse(h: f64, branch: PhiBranch, p: &Params) -> Result<f64, PoincareError> {
    let se = p.sqrt_eps();
    let (lo, hi) = match branch {
        PhiBranch::ThreeZone => (-1.0, -se),
        PhiBranch::FourZone => {
            let lm = landmarks(p)?;
            // Extend left of x_r until the height range covers h.
            let mut lo = lm.x_r;
            for _ in 0..60 {
                match phi(lo, p) {
                    Ok(v) if v > h => break,
                    _ => lo = -1.0 - 2.0 * (-1.0 - lo),
                }
            }
            (lo, -1.0)
        }
    };
    let g = |x: f64| phi(x, p).map(|v| v - h).unwrap_or(f64::NAN);
    let hi_eval = if branch == PhiBranch::FourZone { (-1.0f64).next_down_f() } else { hi };
    let (glo, ghi) = (g(lo), g(hi_eval));
    if !(glo.is_finite() && ghi.is_finite()) || (glo > 0.0) == (ghi > 0.0) && glo != 0.0 && ghi != 0.0 {
        return Err(PoincareError::NoPreimage(h));
    }
    brent(g, lo, hi_eval, 1e-15, 300).ok_or(PoincareError::NoPreimage(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MSign;

    fn three_cycle_params() -> Params {
        Params::with_sign(0.2305968812, 2.5, MSign::Minus, 0.1).unwrap()
    }

    #[test]
    fn half_map_r_lands_exponentially_close_to_q1r() {
        let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
        let r = half_map(HalfMapKind::R, 0.5, &p).unwrap();
        let off = r.slow_offset.unwrap();
        assert_eq!(off.sign, 1);
        // 60-digit expm + root-solve oracle: ln(y_out - q1_R) = -32.37631308178979.
        assert!((off.log_abs + 32.37631308178979).abs() < 1e-9, "{off}");
    }

    #[test]
    fn half_map_domain_checked() {
        let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
        // Below p_R the flow at x = sqrt(eps) points into C, not R.
        assert!(matches!(
            half_map(HalfMapKind::R, -0.5, &p),
            Err(PoincareError::Domain { .. })
        ));
    }

    #[test]
    fn inverse_undoes_forward() {
        let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
        let f = half_map(HalfMapKind::Cd, -0.1, &p).unwrap();
        let b = half_map_inverse(HalfMapKind::Cd, f.y_out, &p).unwrap();
        assert!((b.y_out + 0.1).abs() < 1e-12);
        assert!((b.tau - f.tau).abs() < 1e-10 * f.tau);
    }

    #[test]
    fn phi_degenerate_width_is_tangency() {
        let p = three_cycle_params();
        let se = p.sqrt_eps();
        assert_eq!(phi(-se, &p).unwrap(), -p.m * (se + p.a));
    }

    #[test]
    fn phi_round_trip_three_zone() {
        let p = three_cycle_params();
        for x0 in [-0.9, -0.6, -0.4] {
            let h = phi(x0, &p).unwrap();
            let back = phi_inverse(h, PhiBranch::ThreeZone, &p).unwrap();
            assert!((back - x0).abs() < 1e-10, "{x0} {back}");
        }
    }

    #[test]
    fn supercritical_before_bifurcation_has_no_cycle() {
        let p = Params::new(0.5, 1.0, -0.1, 0.01).unwrap();
        let lm = landmarks(&p).unwrap();
        let fps = fixed_points(&p, lm.q1_r[1] - 0.5, lm.p_r[1]).unwrap();
        assert!(fps.is_empty(), "{fps:?}");
    }
}
