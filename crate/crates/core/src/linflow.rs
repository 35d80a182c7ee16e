//! Exact zone flows, switching-line crossing times and event-driven orbits.
//!
//! Inside a zone the solution is `x(t) = e_x + (sum of exponentials)`. Its
//! extrema are available in closed form, so the time axis splits into
//! monotone pieces; the first piece that reaches a boundary brackets the
//! crossing, which is then polished by safeguarded Newton-bisection.

use crate::logspace::LogValue;
use crate::model::{Params, Zone};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// `|x'| <= GRAZE_TOL (1 + |F|)` marks a tangential contact.
pub const GRAZE_TOL: f64 = 1e-10;
const MAX_PIECES: usize = 200_000;
const MAX_REFINE: usize = 300;
/// Real pairs closer than this (relative discriminant) use the hyperbolic form,
/// which avoids the cancellation in the eigenvector coefficients.
const NEAR_REPEATED: f64 = 1e-6;

/// `(cosh(dt), sinh(dt)/d)`, the second tending to t as d -> 0.
fn hyp(d: f64, t: f64) -> (f64, f64) {
    if d == 0.0 {
        (1.0, t)
    } else {
        ((d * t).cosh(), (d * t).sinh() / d)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("x = {c} is not a boundary of zone {zone}")]
    InvalidBoundary { zone: Zone, c: f64 },
    #[error("point ({}, {}) is not inside zone {zone}", .point[0], .point[1])]
    NotInZone { zone: Zone, point: [f64; 2] },
    #[error("orbit captured in zone {zone} from ({}, {}) without crossing", .point[0], .point[1])]
    Capture { zone: Zone, point: [f64; 2] },
    #[error("event budget of {0} exhausted before the stop rule fired")]
    Budget(usize),
    #[error("non-finite state reached in zone {0}")]
    NonFinite(Zone),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Orientation of a section crossing in forward time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Heading {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Section {
    pub x: f64,
    pub heading: Heading,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Form {
    /// `x - e_x = alpha ls e^{s ls t} + beta lq e^{s lq t}`,
    /// `y - e_y = -eps (alpha e^{s ls t} + beta e^{s lq t})`.
    Real {
        ls: f64,
        lq: f64,
        alpha: f64,
        beta: f64,
    },
    /// `x - e_x = e^{mu t} (px cos wt + qx sin wt)`, same shape for y.
    Complex {
        mu: f64,
        w: f64,
        px: f64,
        qx: f64,
        py: f64,
        qy: f64,
    },
    /// Nearly or exactly repeated real pair:
    /// `x - e_x = e^{mu t} (px cosh(dt) + qx sinh(dt)/d)`, same shape for y.
    Near {
        mu: f64,
        d: f64,
        px: f64,
        qx: f64,
        py: f64,
        qy: f64,
    },
}

/// Closed-form trajectory of one zone's affine system from a start point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneFlow {
    pub zone: Zone,
    pub start: [f64; 2],
    pub direction: Direction,
    e: [f64; 2],
    eps: f64,
    s: f64,
    form: Form,
}

impl ZoneFlow {
    pub fn new(zone: Zone, q: [f64; 2], p: &Params, direction: Direction) -> ZoneFlow {
        let t = zone.trace(p);
        let eps = p.eps;
        let s = direction.sign();
        let e = [p.a, p.piece(zone, p.a)];
        let z = [q[0] - e[0], q[1] - e[1]];
        let disc = t * t - 4.0 * eps;
        let form = if disc > NEAR_REPEATED * t * t {
            let lq = 0.5 * (t + t.signum() * disc.sqrt());
            let ls = eps / lq;
            let d = lq - ls;
            Form::Real {
                ls,
                lq,
                alpha: -(z[0] + lq * z[1] / eps) / d,
                beta: (z[0] + ls * z[1] / eps) / d,
            }
        } else if disc < 0.0 {
            let sigma = 0.5 * t;
            let w = 0.5 * (-disc).sqrt();
            Form::Complex {
                mu: s * sigma,
                w,
                px: z[0],
                qx: s * ((t - sigma) * z[0] + z[1]) / w,
                py: z[1],
                qy: s * (-eps * z[0] - sigma * z[1]) / w,
            }
        } else {
            let sigma = 0.5 * t;
            Form::Near {
                mu: s * sigma,
                d: 0.5 * disc.sqrt(),
                px: z[0],
                qx: s * ((t - sigma) * z[0] + z[1]),
                py: z[1],
                qy: s * (-eps * z[0] - sigma * z[1]),
            }
        };
        ZoneFlow {
            zone,
            start: q,
            direction,
            e,
            eps,
            s,
            form,
        }
    }

    /// Virtual or real equilibrium of the zone's affine system.
    pub fn equilibrium(&self) -> [f64; 2] {
        self.e
    }

    /// `(ls, lq, alpha, beta)` for real-pair zones: start - e = alpha v_s + beta v_q.
    pub fn real_coefficients(&self) -> Option<(f64, f64, f64, f64)> {
        match self.form {
            Form::Real {
                ls,
                lq,
                alpha,
                beta,
            } => Some((ls, lq, alpha, beta)),
            _ => None,
        }
    }

    /// Signed vertical distance at time t from the zone's slow eigenline,
    /// `eps beta (lq - ls)/ls e^{s lq t}`, kept in log space so that
    /// exponentially small offsets survive.
    pub fn slow_line_offset(&self, t: f64) -> Option<LogValue> {
        match self.form {
            Form::Real {
                ls,
                lq,
                beta,
                ..
            } => Some(LogValue::from_f64(self.eps * beta * (lq - ls) / ls).scale_exp(self.s * lq * t)),
            _ => None,
        }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        if t == 0.0 {
            return self.start;
        }
        match self.form {
            Form::Real {
                ls,
                lq,
                alpha,
                beta,
            } => {
                let es = (self.s * ls * t).exp();
                let eq = (self.s * lq * t).exp();
                [
                    self.e[0] + alpha * ls * es + beta * lq * eq,
                    self.e[1] - self.eps * (alpha * es + beta * eq),
                ]
            }
            Form::Complex {
                mu,
                w,
                px,
                qx,
                py,
                qy,
            } => {
                let g = (mu * t).exp();
                let (sn, cs) = (w * t).sin_cos();
                [
                    self.e[0] + g * (px * cs + qx * sn),
                    self.e[1] + g * (py * cs + qy * sn),
                ]
            }
            Form::Near {
                mu,
                d,
                px,
                qx,
                py,
                qy,
            } => {
                let g = (mu * t).exp();
                let (ch, sh) = hyp(d, t);
                [self.e[0] + g * (px * ch + qx * sh), self.e[1] + g * (py * ch + qy * sh)]
            }
        }
    }

    pub fn x(&self, t: f64) -> f64 {
        self.point(t)[0]
    }

    /// dx/dt along the (possibly reversed) time axis.
    pub fn dx(&self, t: f64) -> f64 {
        self.x_derivs(t).0
    }

    fn x_derivs(&self, t: f64) -> (f64, f64) {
        match self.form {
            Form::Real {
                ls,
                lq,
                alpha,
                beta,
            } => {
                let (ms, mq) = (self.s * ls, self.s * lq);
                let a = alpha * ls * (ms * t).exp();
                let b = beta * lq * (mq * t).exp();
                (a * ms + b * mq, a * ms * ms + b * mq * mq)
            }
            Form::Complex {
                mu, w, px, qx, ..
            } => {
                let g = (mu * t).exp();
                let (sn, cs) = (w * t).sin_cos();
                let c1 = mu * px + w * qx;
                let s1 = mu * qx - w * px;
                let c2 = mu * c1 + w * s1;
                let s2 = mu * s1 - w * c1;
                (g * (c1 * cs + s1 * sn), g * (c2 * cs + s2 * sn))
            }
            Form::Near { mu, d, px, qx, .. } => {
                let g = (mu * t).exp();
                let (ch, sh) = hyp(d, t);
                let a1 = mu * px + qx;
                let b1 = mu * qx + d * d * px;
                let a2 = mu * a1 + b1;
                let b2 = mu * b1 + d * d * a1;
                (g * (a1 * ch + b1 * sh), g * (a2 * ch + b2 * sh))
            }
        }
    }

    /// Smallest critical time of x(t) strictly greater than `after`.
    fn next_critical(&self, after: f64) -> Option<f64> {
        match self.form {
            Form::Real {
                ls,
                lq,
                alpha,
                beta,
            } => {
                let ratio = -beta * lq * lq / (alpha * ls * ls);
                if !(ratio > 0.0) || !ratio.is_finite() {
                    return None;
                }
                let t = ratio.ln() / (self.s * (ls - lq));
                (t > after).then_some(t)
            }
            Form::Complex {
                mu, w, px, qx, ..
            } => {
                let c1 = mu * px + w * qx;
                let s1 = mu * qx - w * px;
                if c1 == 0.0 && s1 == 0.0 {
                    return None;
                }
                // c1 cos + s1 sin = r cos(wt - phi), zero at wt = phi + pi/2 + n pi.
                let phi = s1.atan2(c1);
                let base = (phi + 0.5 * PI) / w;
                let half = PI / w;
                let n = ((after - base) / half).floor() + 1.0;
                let mut t = base + n * half;
                while t <= after {
                    t += half;
                }
                Some(t)
            }
            Form::Near { mu, d, px, qx, .. } => {
                // a1 cosh + b1 sinh/d = 0  <=>  tanh(dt)/d = -a1/b1.
                let a1 = mu * px + qx;
                let b1 = mu * qx + d * d * px;
                if b1 == 0.0 {
                    return None;
                }
                let r = -a1 / b1;
                if !(r > 0.0) {
                    return None;
                }
                let t = if d == 0.0 {
                    r
                } else if d * r < 1.0 {
                    (d * r).atanh() / d
                } else {
                    return None;
                };
                (t > after).then_some(t)
            }
        }
    }

    /// Limit of x(t) as t -> inf when the trajectory contracts.
    fn x_limit(&self) -> Option<f64> {
        match self.form {
            Form::Real { ls, lq, .. } if self.s * ls < 0.0 && self.s * lq < 0.0 => Some(self.e[0]),
            Form::Near { mu, d, .. } if mu + d < 0.0 => Some(self.e[0]),
            _ => None,
        }
    }

    fn rate_scale(&self) -> f64 {
        match self.form {
            Form::Real { ls, lq, .. } => ls.abs().max(lq.abs()),
            Form::Complex { mu, w, .. } => mu.abs().max(w),
            Form::Near { mu, d, .. } => mu.abs() + d,
        }
    }

    /// The spiral can no longer reach either boundary after time t.
    fn confined_after(&self, t: f64, lo: f64, hi: f64) -> bool {
        if let Form::Complex { mu, px, qx, .. } = self.form {
            if mu > 0.0 || !(lo < self.e[0] && self.e[0] < hi) {
                return false;
            }
            let env = (mu * t).exp() * px.hypot(qx);
            env < (self.e[0] - lo).min(hi - self.e[0])
        } else {
            false
        }
    }

    /// Root of x(t) = c in [ta, tb], given that x - c changes sign there.
    fn refine(&self, mut ta: f64, mut tb: f64, c: f64) -> f64 {
        let ga = self.x(ta) - c;
        let gb = self.x(tb) - c;
        if gb == 0.0 {
            return tb;
        }
        if ga == 0.0 {
            return ta;
        }
        let rising = gb > 0.0;
        let mut t = 0.5 * (ta + tb);
        for _ in 0..MAX_REFINE {
            let g = self.x(t) - c;
            if g == 0.0 {
                return t;
            }
            if (g > 0.0) == rising {
                tb = t;
            } else {
                ta = t;
            }
            let d = self.dx(t);
            let mut next = t - g / d;
            if !(next > ta && next < tb) || !next.is_finite() {
                next = 0.5 * (ta + tb);
            }
            let step = (next - t).abs();
            t = next;
            if step <= 1e-16 * (1.0 + t.abs()) || tb - ta <= 2.0 * f64::EPSILON * (1.0 + tb.abs()) {
                break;
            }
        }
        t
    }

    fn is_grazing(&self, t: f64) -> bool {
        let v = self.dx(t);
        let pt = self.point(t);
        let fy = self.eps * (self.e[0] - pt[0]);
        v.abs() <= GRAZE_TOL * (1.0 + v.hypot(fy))
    }

    /// First exit through `lo` or `hi` (either may be infinite).
    pub(crate) fn first_exit(&self, lo: f64, hi: f64) -> Option<Exit> {
        let x0 = self.x(0.0);
        let (d0, dd0) = self.x_derivs(0.0);
        // At a tangency the closed form's x'(0) is roundoff; curvature decides.
        let d0 = if self.is_grazing(0.0) { 0.0 } else { d0 };
        if lo.is_finite() && x0 <= lo && (d0 < 0.0 || (d0 == 0.0 && dd0 < 0.0)) {
            return Some(self.exit_at(0.0, lo, Heading::Left));
        }
        if hi.is_finite() && x0 >= hi && (d0 > 0.0 || (d0 == 0.0 && dd0 > 0.0)) {
            return Some(self.exit_at(0.0, hi, Heading::Right));
        }
        let mut ta = 0.0;
        let mut xa = x0;
        for _ in 0..MAX_PIECES {
            match self.next_critical(ta) {
                Some(tb) => {
                    let xb = self.x(tb);
                    if !xb.is_finite() {
                        return None;
                    }
                    if let Some(ex) = self.exit_on_piece(ta, xa, tb, xb, lo, hi) {
                        return Some(ex);
                    }
                    if self.confined_after(tb, lo, hi) {
                        return None;
                    }
                    ta = tb;
                    xa = xb;
                }
                None => return self.exit_on_tail(ta, xa, lo, hi),
            }
        }
        None
    }

    fn exit_on_piece(&self, ta: f64, xa: f64, tb: f64, xb: f64, lo: f64, hi: f64) -> Option<Exit> {
        let (c, heading) = if xb > xa {
            (hi, Heading::Right)
        } else if xb < xa {
            (lo, Heading::Left)
        } else {
            return None;
        };
        if !c.is_finite() {
            return None;
        }
        let reached = match heading {
            Heading::Right => xb >= c && xa < c,
            Heading::Left => xb <= c && xa > c,
        };
        if !reached {
            return None;
        }
        let t = self.refine(ta, tb, c);
        // A tangential touch pushed back inside is not an exit.
        if self.is_grazing(t) {
            let dd = self.x_derivs(t).1;
            let inward = match heading {
                Heading::Right => dd < 0.0,
                Heading::Left => dd > 0.0,
            };
            if inward {
                return None;
            }
        }
        Some(self.exit_at(t, c, heading))
    }

    fn exit_on_tail(&self, ta: f64, xa: f64, lo: f64, hi: f64) -> Option<Exit> {
        let scale = self.rate_scale().max(1e-300);
        let probe = (0.1 / scale).min(1.0);
        let xp = self.x(ta + probe);
        let heading = if xp > xa {
            Heading::Right
        } else if xp < xa {
            Heading::Left
        } else {
            return None;
        };
        let c = match heading {
            Heading::Right => hi,
            Heading::Left => lo,
        };
        if !c.is_finite() {
            return None;
        }
        if let Some(xl) = self.x_limit() {
            let beyond = match heading {
                Heading::Right => xl > c,
                Heading::Left => xl < c,
            };
            if !beyond {
                return None;
            }
        }
        let passed = |x: f64| match heading {
            Heading::Right => x >= c,
            Heading::Left => x <= c,
        };
        if passed(xa) {
            return Some(self.exit_at(ta, c, heading));
        }
        let mut t_prev = ta;
        let mut h = probe;
        for _ in 0..2000 {
            let tb = ta + h;
            let xb = self.x(tb);
            if !xb.is_finite() {
                return None;
            }
            if passed(xb) {
                let t = self.refine(t_prev, tb, c);
                return Some(self.exit_at(t, c, heading));
            }
            t_prev = tb;
            h *= 2.0;
            if h > 1e12 {
                return None;
            }
        }
        None
    }

    fn exit_at(&self, t: f64, c: f64, heading: Heading) -> Exit {
        let mut pt = self.point(t);
        pt[0] = c;
        Exit {
            t,
            point: pt,
            c,
            heading,
            grazing: self.is_grazing(t),
        }
    }

    /// First time in `(0, t_max]` at which x(t) passes `level` moving along `heading`.
    pub fn level_crossing(&self, level: f64, heading: Heading, t_max: f64) -> Option<f64> {
        let mut ta = 0.0;
        let mut xa = self.x(0.0);
        for _ in 0..MAX_PIECES {
            if ta >= t_max {
                return None;
            }
            let tb = match self.next_critical(ta) {
                Some(t) if t < t_max => t,
                _ => t_max,
            };
            let xb = self.x(tb);
            let hit = match heading {
                Heading::Right => xa < level && xb >= level,
                Heading::Left => xa > level && xb <= level,
            };
            if hit {
                return Some(self.refine(ta, tb, level));
            }
            ta = tb;
            xa = xb;
        }
        None
    }

    /// Minimum of x over `[0, t_max]` with its time.
    pub fn min_x(&self, t_max: f64) -> (f64, f64) {
        let mut best = (0.0, self.x(0.0));
        let end = self.x(t_max);
        if end < best.1 {
            best = (t_max, end);
        }
        let mut t = 0.0;
        for _ in 0..MAX_PIECES {
            match self.next_critical(t) {
                Some(tc) if tc < t_max => {
                    let xc = self.x(tc);
                    if xc < best.1 {
                        best = (tc, xc);
                    }
                    t = tc;
                }
                _ => break,
            }
        }
        best
    }

    /// Maximum of x over `[0, t_max]` with its time.
    pub fn max_x(&self, t_max: f64) -> (f64, f64) {
        let mut best = (0.0, self.x(0.0));
        let end = self.x(t_max);
        if end > best.1 {
            best = (t_max, end);
        }
        let mut t = 0.0;
        for _ in 0..MAX_PIECES {
            match self.next_critical(t) {
                Some(tc) if tc < t_max => {
                    let xc = self.x(tc);
                    if xc > best.1 {
                        best = (tc, xc);
                    }
                    t = tc;
                }
                _ => break,
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Exit {
    pub t: f64,
    pub point: [f64; 2],
    pub c: f64,
    pub heading: Heading,
    pub grazing: bool,
}

/// `e^{tA}(q - e) + e` for `zone`'s affine system; `t` may be negative.
pub fn flow(zone: Zone, q: [f64; 2], t: f64, p: &Params) -> [f64; 2] {
    if t >= 0.0 {
        ZoneFlow::new(zone, q, p, Direction::Forward).point(t)
    } else {
        ZoneFlow::new(zone, q, p, Direction::Backward).point(-t)
    }
}

/// The propagator `e^{tA}` of `zone`.
pub fn propagator(zone: Zone, t: f64, p: &Params) -> [[f64; 2]; 2] {
    let e = [p.a, p.piece(zone, p.a)];
    let c0 = flow(zone, [e[0] + 1.0, e[1]], t, p);
    let c1 = flow(zone, [e[0], e[1] + 1.0], t, p);
    [[c0[0] - e[0], c1[0] - e[0]], [c0[1] - e[1], c1[1] - e[1]]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingKind {
    Transversal,
    Grazing,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingResult {
    pub time: f64,
    pub point: [f64; 2],
    pub kind: CrossingKind,
}

/// Smallest t >= 0 at which the orbit of `zone`'s system from `q` reaches
/// the boundary `x = c` while staying inside the zone before.
pub fn crossing_time(zone: Zone, q: [f64; 2], c: f64, p: &Params) -> Result<CrossingResult, FlowError> {
    crossing_time_dir(zone, q, c, p, Direction::Forward)
}

pub fn crossing_time_dir(
    zone: Zone,
    q: [f64; 2],
    c: f64,
    p: &Params,
    dir: Direction,
) -> Result<CrossingResult, FlowError> {
    let (lo, hi) = zone.interval(p);
    if c != lo && c != hi {
        return Err(FlowError::InvalidBoundary { zone, c });
    }
    let tol = 1e-12 * (1.0 + q[0].abs());
    if q[0] < lo - tol || q[0] > hi + tol {
        return Err(FlowError::NotInZone { zone, point: q });
    }
    let zf = ZoneFlow::new(zone, q, p, dir);
    if q[0] == c && zf.is_grazing(0.0) {
        return Ok(CrossingResult {
            time: 0.0,
            point: q,
            kind: CrossingKind::Grazing,
        });
    }
    match zf.first_exit(lo, hi) {
        Some(ex) if ex.c == c => Ok(CrossingResult {
            time: ex.t,
            point: ex.point,
            kind: if ex.grazing {
                CrossingKind::Grazing
            } else {
                CrossingKind::Transversal
            },
        }),
        _ => Ok(CrossingResult {
            time: f64::INFINITY,
            point: q,
            kind: CrossingKind::None,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventEnd {
    /// Left the zone through x = c into `next`.
    Boundary { c: f64, next: Zone, heading: Heading },
    /// Cut short by a time budget.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitEvent {
    pub zone: Zone,
    pub entry: [f64; 2],
    pub exit: [f64; 2],
    pub flight_time: f64,
    pub end: EventEnd,
    pub direction: Direction,
}

impl OrbitEvent {
    pub fn zone_flow(&self, p: &Params) -> ZoneFlow {
        ZoneFlow::new(self.zone, self.entry, p, self.direction)
    }

    /// Trace times flight time: this event's share of the divergence integral.
    pub fn divergence(&self, p: &Params) -> f64 {
        self.zone.trace(p) * self.flight_time
    }
}

/// Zone entered from `q`; on a switching line the velocity decides, then
/// the second derivative, then `hint`.
pub fn zone_at(q: [f64; 2], p: &Params, dir: Direction, hint: Option<Zone>) -> Zone {
    let se = p.sqrt_eps();
    let x = q[0];
    let (left, right) = if x == -1.0 {
        (Zone::LL, Zone::L)
    } else if x == -se {
        (Zone::L, Zone::C)
    } else if x == se {
        (Zone::C, Zone::R)
    } else {
        return Zone::containing(x, p);
    };
    let v = dir.sign() * (q[1] - p.nullcline(x));
    if v > 0.0 {
        return right;
    }
    if v < 0.0 {
        return left;
    }
    if let Some(h) = hint {
        if h == left || h == right {
            return h;
        }
    }
    let acc = p.eps * (p.a - x);
    if acc < 0.0 {
        left
    } else {
        right
    }
}

/// One event from `q`: the zone it enters and where it leaves.
pub fn advance(q: [f64; 2], p: &Params) -> Result<OrbitEvent, FlowError> {
    advance_from(q, p, Direction::Forward, None)
}

pub fn advance_from(
    q: [f64; 2],
    p: &Params,
    dir: Direction,
    hint: Option<Zone>,
) -> Result<OrbitEvent, FlowError> {
    if !(q[0].is_finite() && q[1].is_finite()) {
        return Err(FlowError::NonFinite(Zone::containing(0.0, p)));
    }
    let mut zone = zone_at(q, p, dir, hint);
    for _ in 0..2 {
        let (lo, hi) = zone.interval(p);
        let zf = ZoneFlow::new(zone, q, p, dir);
        match zf.first_exit(lo, hi) {
            Some(ex) if ex.t > 0.0 => {
                let next = match ex.heading {
                    Heading::Left => zone.left(),
                    Heading::Right => zone.right(),
                }
                .expect("finite boundary has a neighbour");
                let heading = match dir {
                    Direction::Forward => ex.heading,
                    Direction::Backward => flip(ex.heading),
                };
                return Ok(OrbitEvent {
                    zone,
                    entry: q,
                    exit: ex.point,
                    flight_time: ex.t,
                    end: EventEnd::Boundary {
                        c: ex.c,
                        next,
                        heading,
                    },
                    direction: dir,
                });
            }
            Some(ex) => {
                // Leaves immediately: the neighbour across that line owns q.
                zone = match ex.heading {
                    Heading::Left => zone.left(),
                    Heading::Right => zone.right(),
                }
                .expect("finite boundary has a neighbour");
            }
            None => return Err(FlowError::Capture { zone, point: q }),
        }
    }
    Err(FlowError::Capture {
        zone,
        point: q,
    })
}

fn flip(h: Heading) -> Heading {
    match h {
        Heading::Left => Heading::Right,
        Heading::Right => Heading::Left,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    MaxEvents { n: usize },
    MaxTime { t: f64 },
    /// Stop on a crossing of a switching line with the given forward-time heading.
    Section { section: Section, max_events: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Orbit {
    pub events: Vec<OrbitEvent>,
    pub total_time: f64,
    pub truncated: bool,
    pub direction: Direction,
}

impl Orbit {
    /// Sum of trace times flight time over all events.
    pub fn log_divergence(&self, p: &Params) -> f64 {
        self.events.iter().map(|e| e.divergence(p)).sum()
    }

    pub fn end_point(&self) -> Option<[f64; 2]> {
        self.events.last().map(|e| e.exit)
    }

    pub fn visits(&self, zone: Zone) -> bool {
        self.events.iter().any(|e| e.zone == zone)
    }

    /// Points at times `0, dt, 2dt, ...` (signed time for backward orbits),
    /// plus the final point.
    pub fn sample(&self, p: &Params, dt: f64) -> Vec<(f64, [f64; 2], Zone)> {
        let mut out = Vec::new();
        let s = self.direction.sign();
        let mut t0 = 0.0;
        let mut next = 0.0;
        for ev in &self.events {
            let zf = ev.zone_flow(p);
            while next < t0 + ev.flight_time {
                out.push((s * next, zf.point(next - t0), ev.zone));
                next += dt;
            }
            t0 += ev.flight_time;
        }
        if let Some(ev) = self.events.last() {
            out.push((s * t0, ev.exit, ev.zone));
        }
        out
    }
}

pub fn integrate_orbit(q: [f64; 2], p: &Params, stop: StopRule) -> Result<Orbit, FlowError> {
    integrate_orbit_dir(q, p, stop, Direction::Forward, None)
}

pub fn integrate_orbit_dir(
    q: [f64; 2],
    p: &Params,
    stop: StopRule,
    dir: Direction,
    hint: Option<Zone>,
) -> Result<Orbit, FlowError> {
    let mut events = Vec::new();
    let mut total = 0.0;
    let mut pt = q;
    let mut hint = hint;
    let budget = match stop {
        StopRule::MaxEvents { n } => n,
        StopRule::MaxTime { .. } => usize::MAX,
        StopRule::Section { max_events, .. } => max_events,
    };
    loop {
        if events.len() >= budget {
            return match stop {
                StopRule::MaxEvents { .. } => Ok(Orbit {
                    events,
                    total_time: total,
                    truncated: false,
                    direction: dir,
                }),
                _ => Err(FlowError::Budget(budget)),
            };
        }
        let ev = match advance_from(pt, p, dir, hint) {
            Ok(ev) => ev,
            Err(FlowError::Capture { zone, point }) => {
                if let StopRule::MaxTime { t } = stop {
                    let zf = ZoneFlow::new(zone, point, p, dir);
                    let rest = t - total;
                    events.push(OrbitEvent {
                        zone,
                        entry: point,
                        exit: zf.point(rest),
                        flight_time: rest,
                        end: EventEnd::Truncated,
                        direction: dir,
                    });
                    return Ok(Orbit {
                        events,
                        total_time: t,
                        truncated: true,
                        direction: dir,
                    });
                }
                return Err(FlowError::Capture { zone, point });
            }
            Err(e) => return Err(e),
        };
        if let StopRule::MaxTime { t } = stop {
            if total + ev.flight_time >= t {
                let rest = t - total;
                let zf = ev.zone_flow(p);
                events.push(OrbitEvent {
                    exit: zf.point(rest),
                    flight_time: rest,
                    end: EventEnd::Truncated,
                    ..ev
                });
                return Ok(Orbit {
                    events,
                    total_time: t,
                    truncated: true,
                    direction: dir,
                });
            }
        }
        total += ev.flight_time;
        events.push(ev);
        if let (StopRule::Section { section, .. }, EventEnd::Boundary { c, heading, next }) = (stop, ev.end) {
            if c == section.x && heading == section.heading {
                return Ok(Orbit {
                    events,
                    total_time: total,
                    truncated: false,
                    direction: dir,
                });
            }
            hint = Some(next);
        } else if let EventEnd::Boundary { next, .. } = ev.end {
            hint = Some(next);
        }
        pt = ev.exit;
    }
}

/// Classical fixed-step RK4 on `zone`'s affine field, ignoring boundaries.
pub fn rk4_oracle(zone: Zone, q: [f64; 2], t: f64, n: usize, p: &Params) -> [f64; 2] {
    let n = n.max(1);
    let h = t / n as f64;
    let f = |u: [f64; 2]| p.field_in(zone, u);
    let mut u = q;
    for _ in 0..n {
        let k1 = f(u);
        let k2 = f([u[0] + 0.5 * h * k1[0], u[1] + 0.5 * h * k1[1]]);
        let k3 = f([u[0] + 0.5 * h * k2[0], u[1] + 0.5 * h * k2[1]]);
        let k4 = f([u[0] + h * k3[0], u[1] + h * k3[1]]);
        u[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        u[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{landmarks, MSign};

    fn p0() -> Params {
        Params::new(0.0, 1.0, -0.1, 0.01).unwrap()
    }

    #[test]
    fn identity_at_zero_time() {
        let p = p0();
        for z in Zone::ALL {
            let q = [0.3, -0.7];
            assert_eq!(flow(z, q, 0.0, &p), q);
        }
    }

    #[test]
    fn zone_r_matches_rk4() {
        let p = p0();
        let a = flow(Zone::R, [0.3, 0.1], 1.0, &p);
        let b = rk4_oracle(Zone::R, [0.3, 0.1], 1.0, 100_000, &p);
        assert!((a[0] - b[0]).abs() <= 1e-8 && (a[1] - b[1]).abs() <= 1e-8);
    }

    #[test]
    fn repeated_eigenvalue_form_matches_rk4() {
        // k = 2 sqrt(eps) makes zone L a degenerate node.
        let p = Params::new(0.0, 0.2, -0.1, 0.01).unwrap();
        let a = flow(Zone::L, [-0.5, 0.3], 1.5, &p);
        let b = rk4_oracle(Zone::L, [-0.5, 0.3], 1.5, 100_000, &p);
        assert!((a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9);
    }

    #[test]
    fn outgoing_boundary_point_crosses_at_zero() {
        let p = p0();
        let se = 0.1;
        // y below f(se) moves left, out of R.
        let q = [se, p.nullcline(se) - 0.5];
        let r = crossing_time(Zone::R, q, se, &p).unwrap();
        assert_eq!(r.time, 0.0);
        assert_eq!(r.kind, CrossingKind::Transversal);
    }

    #[test]
    fn tangency_is_grazing_at_zero() {
        let p = Params::with_sign(0.05, 1.0, MSign::Minus, 0.01).unwrap();
        let lm = landmarks(&p).unwrap();
        let r = crossing_time(Zone::C, lm.p_r, p.sqrt_eps(), &p).unwrap();
        assert_eq!(r.time, 0.0);
        assert_eq!(r.kind, CrossingKind::Grazing);
    }

    #[test]
    fn invalid_boundary_rejected() {
        let p = p0();
        assert!(matches!(
            crossing_time(Zone::C, [0.0, 0.0], -1.0, &p),
            Err(FlowError::InvalidBoundary { .. })
        ));
    }

    #[test]
    fn advance_from_zone_r() {
        let p = p0();
        let ev = advance([0.5, 2.0], &p).unwrap();
        assert_eq!(ev.zone, Zone::R);
        assert_eq!(ev.exit[0], 0.1);
        let via = crossing_time(Zone::R, [0.5, 2.0], 0.1, &p).unwrap();
        assert_eq!(ev.flight_time, via.time);
        let f = flow(Zone::R, [0.5, 2.0], ev.flight_time, &p);
        assert!((f[1] - ev.exit[1]).abs() < 1e-14);
        assert!(matches!(ev.end, EventEnd::Boundary { next: Zone::C, heading: Heading::Left, .. }));
    }

    #[test]
    fn boundary_point_enters_zone_velocity_points_into() {
        let p = p0();
        // On x = sqrt(eps) with y < f: moving left, into C.
        let ev = advance([0.1, p.nullcline(0.1) - 0.01], &p).unwrap();
        assert_eq!(ev.zone, Zone::C);
    }

    #[test]
    fn equilibrium_is_captured() {
        let p = Params::new(0.3, 1.0, -0.1, 0.01).unwrap();
        let e = [0.3, p.nullcline(0.3)];
        assert!(matches!(advance(e, &p), Err(FlowError::Capture { .. })));
    }

    #[test]
    fn max_time_bookkeeping() {
        let p = p0();
        let o = integrate_orbit([0.5, 2.0], &p, StopRule::MaxTime { t: 37.0 }).unwrap();
        assert!(o.truncated);
        assert!((o.total_time - 37.0).abs() < 1e-12);
        let s: f64 = o.events.iter().map(|e| e.flight_time).sum();
        assert!((s - 37.0).abs() < 1e-9);
    }

    #[test]
    fn consecutive_events_share_boundary_points() {
        let p = p0();
        let o = integrate_orbit([0.5, 2.0], &p, StopRule::MaxEvents { n: 20 }).unwrap();
        assert_eq!(o.events.len(), 20);
        for w in o.events.windows(2) {
            assert_eq!(w[0].exit, w[1].entry);
            assert_ne!(w[0].zone, w[1].zone);
        }
    }

    #[test]
    fn backward_event_retraces_forward_event() {
        // Strongly contracting events are ill-conditioned backwards; skip them.
        let p = p0();
        let fw = integrate_orbit([0.5, 2.0], &p, StopRule::MaxEvents { n: 12 }).unwrap();
        let mut checked = 0;
        for ev in fw.events.iter().filter(|e| e.divergence(&p).abs() < 8.0) {
            let bw = advance_from(ev.exit, &p, Direction::Backward, Some(ev.zone)).unwrap();
            assert_eq!(bw.zone, ev.zone);
            assert!((bw.flight_time - ev.flight_time).abs() <= 1e-9 * ev.flight_time);
            assert!((bw.exit[0] - ev.entry[0]).abs() < 1e-9 && (bw.exit[1] - ev.entry[1]).abs() < 1e-9);
            checked += 1;
        }
        assert!(checked >= 2);
    }

    #[test]
    fn rk4_is_exact_for_zero_matrix_like_fields() {
        // A trajectory sitting on an equilibrium stays put.
        let p = p0();
        let e = [p.a, p.piece(Zone::L, p.a)];
        assert_eq!(rk4_oracle(Zone::L, e, 3.0, 10, &p), e);
        assert_eq!(rk4_oracle(Zone::C, [0.01, 0.2], 0.0, 10, &p), [0.01, 0.2]);
    }
}
