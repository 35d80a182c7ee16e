//! Canard computations: the maximal canard connection through zone C, the
//! canard cycle of prescribed width, closed-form flight times, the
//! hyperbolicity functions of the three- and four-zone cycles with their
//! roots, and the inverse problem of finding `k` for a saddle-node width.

use crate::linflow::{
    flow, integrate_orbit_dir, propagator, Direction, EventEnd, FlowError, Heading, Orbit, Section, StopRule,
};
use crate::logspace::LogValue;
use crate::model::{landmarks, slow_fast, Landmarks, MSign, ModelError, Params, Zone, NU};
use crate::poincare::{in_window, phi, CycleKind, CycleRecord, HalfMapKind, PoincareError, Stability};
use crate::roots::{bisect, brent, geomspace, linspace};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanardError {
    #[error("connection Newton did not converge after {iterations} iterations (residual {residual:?})")]
    NoConvergence {
        iterations: usize,
        residual: [f64; 2],
        last: Box<Connection>,
    },
    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("closure has no sign change for a within {span} of the maximal canard value")]
    Bracket { span: f64 },
    #[error("no bracket for k in [{k_lo}, {k_hi}]")]
    NoBracketK { k_lo: f64, k_hi: f64 },
    #[error("asymptotic formula not available: {0}")]
    OutOfRange(&'static str),
    /// The orbit through the width turns back before reaching zone R.
    #[error("no canard cycle through width {x0}: the orbit never reaches zone R")]
    NoCycle { x0: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// `e^{pi/sqrt(3)}`, the half-turn expansion of the singular centre.
pub fn half_turn() -> f64 {
    (PI / 3f64.sqrt()).exp()
}

/// Rescaled singular seed `(tau_bar, |a_bar|)`.
pub fn singular_seed() -> (f64, f64) {
    let e = half_turn();
    (2.0 * PI / 3f64.sqrt(), (e - 1.0) / (e + 1.0))
}

/// Determinant of the singular Jacobian `d(3F/sqrt(eps), G/eps)/d(tau_bar, a_bar)`
/// at the seed, from its entries `0`, `3(1+E)`, `2E/(1+E)`, `-(1+E)` with `E = e^{pi/sqrt(3)}`.
pub fn singular_det() -> f64 {
    -6.0 * half_turn()
}

pub fn a_tilde_series(k: f64, eps: f64, sign: MSign) -> f64 {
    let e = half_turn();
    let lead = (e - 1.0) / (e + 1.0);
    let next = e / (e + 1.0).powi(2) * (1.0 - k * k) / (k * k);
    -sign.value() * lead * eps.sqrt() - next * eps.powf(1.5)
}

pub fn tau_c_series(k: f64, eps: f64, sign: MSign) -> f64 {
    let se = eps.sqrt();
    2.0 * PI / 3f64.sqrt() / se - (1.0 + k) / k + sign.value() * (1.0 - k * k) / (2.0 * k * k) * se
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Connection {
    pub k: f64,
    pub eps: f64,
    pub m_sign: MSign,
    pub a_tilde: f64,
    pub tau_c: f64,
    /// `(F, G)` at the returned iterate.
    pub residual: [f64; 2],
    /// The C-zone arc stays strictly inside `(-sqrt(eps), sqrt(eps))`.
    pub valid: bool,
    pub iterations: usize,
}

impl Connection {
    pub fn residual_norm(&self) -> f64 {
        self.residual[0].abs().max(self.residual[1].abs())
    }

    pub fn params(&self) -> Params {
        Params {
            a: self.a_tilde,
            k: self.k,
            m: self.m_sign.m(self.eps),
            eps: self.eps,
        }
    }
}

pub const CONNECTION_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 50;
const CORRIDOR_SAMPLES: usize = 1000;

/// `(F, G)` and their Jacobian in the original `(tau, a)`.
fn connection_system(tau: f64, a: f64, k: f64, eps: f64, m: f64) -> Result<([f64; 2], [[f64; 2]; 2]), ModelError> {
    let p = Params::new(a, k, m, eps)?;
    let se = p.sqrt_eps();
    let (ls_r, _) = slow_fast(Zone::R, &p)?;
    let (ls_l, _) = slow_fast(Zone::L, &p)?;
    let q = [se, (m + ls_r) * (se - a)];
    let z = flow(Zone::C, q, tau, &p);
    let f = z[0] + se;
    let g = z[1] + (m + ls_l) * (se + a);
    // d/dtau is the field; d/da moves the centre (a, 0) and q1_R.
    let dz_dt = p.field_in(Zone::C, z);
    let e = propagator(Zone::C, tau, &p);
    let v = [-1.0, -(m + ls_r)];
    let dz_da = [
        1.0 + e[0][0] * v[0] + e[0][1] * v[1],
        e[1][0] * v[0] + e[1][1] * v[1],
    ];
    Ok(([f, g], [[dz_dt[0], dz_da[0]], [dz_dt[1], dz_da[1] + (m + ls_l)]]))
}

/// Inequality check on the C arc from `q1_R`.
fn corridor_holds(p: &Params, tau: f64) -> bool {
    let se = p.sqrt_eps();
    let Ok((ls_r, _)) = slow_fast(Zone::R, p) else {
        return false;
    };
    let q = [se, (p.m + ls_r) * (se - p.a)];
    (1..=CORRIDOR_SAMPLES).all(|i| {
        let s = tau * i as f64 / (CORRIDOR_SAMPLES + 1) as f64;
        let x = flow(Zone::C, q, s, p)[0];
        -se < x && x < se
    })
}

/// Rescaled Jacobian `d(F/sqrt(eps), G/eps) / d(tau_bar, a_bar)`.
pub fn rescaled_jacobian(tau_bar: f64, a_bar: f64, k: f64, eps: f64, sign: MSign) -> Result<[[f64; 2]; 2], ModelError> {
    let se = eps.sqrt();
    let (_, j) = connection_system(tau_bar / se, a_bar * se, k, eps, sign.m(eps))?;
    Ok([[j[0][0] / eps, j[0][1]], [j[1][0] / (eps * se), j[1][1] / se]])
}

/// Newton in the rescaled unknowns `tau = tau_bar / sqrt(eps)`, `a = a_bar sqrt(eps)`
/// from the singular seed, halving the step while the residual grows.
pub fn maximal_canard(k: f64, eps: f64, sign: MSign) -> Result<Connection, CanardError> {
    let m = sign.m(eps);
    Params::new(0.0, k, m, eps)?;
    let se = eps.sqrt();
    let (tb0, ab0) = singular_seed();
    let mut tb = tb0;
    let mut ab = -sign.value() * ab0;
    let eval = |tb: f64, ab: f64| connection_system(tb / se, ab * se, k, eps, m);
    let norm = |r: [f64; 2]| (r[0] / se).abs().max((r[1] / eps).abs());
    let (mut r, mut j) = eval(tb, ab)?;
    let mut iterations = 0;
    while iterations < NEWTON_MAX {
        if r[0].abs().max(r[1].abs()) <= 0.01 * CONNECTION_TOL {
            break;
        }
        iterations += 1;
        // Rescaled residual and Jacobian.
        let rb = [r[0] / se, r[1] / eps];
        let jb = [[j[0][0] / eps, j[0][1]], [j[1][0] / (eps * se), j[1][1] / se]];
        let det = jb[0][0] * jb[1][1] - jb[0][1] * jb[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dt = (jb[1][1] * rb[0] - jb[0][1] * rb[1]) / det;
        let da = (jb[0][0] * rb[1] - jb[1][0] * rb[0]) / det;
        let old = norm(r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (nt, na) = (tb - lambda * dt, ab - lambda * da);
            if let Ok((nr, nj)) = eval(nt, na) {
                if norm(nr) <= old || norm(nr) < 1e-13 {
                    tb = nt;
                    ab = na;
                    r = nr;
                    j = nj;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if (lambda * dt).abs() <= 1e-16 * tb.abs() && (lambda * da).abs() <= 1e-16 * ab.abs().max(1e-300) {
            break;
        }
    }
    let a = ab * se;
    let tau = tb / se;
    let p = Params::new(a, k, m, eps)?;
    let conn = Connection {
        k,
        eps,
        m_sign: sign,
        a_tilde: a,
        tau_c: tau,
        residual: r,
        valid: tau > 0.0 && corridor_holds(&p, tau),
        iterations,
    };
    if conn.residual_norm() > CONNECTION_TOL || !conn.residual_norm().is_finite() {
        return Err(CanardError::NoConvergence {
            iterations,
            residual: r,
            last: Box::new(conn),
        });
    }
    Ok(conn)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthSolve {
    pub x0: f64,
    pub a_hat: f64,
    pub a_tilde: f64,
    pub cycle: CycleRecord,
    /// `a_hat - a_tilde`; an order-of-magnitude estimate when `gap_estimated`.
    pub gap_to_a_tilde: LogValue,
    pub gap_estimated: bool,
    /// The closure cannot separate `a_hat` from `a_tilde` in binary64.
    pub underflow_dominated: bool,
    /// Outside `(x_r, x_u) U [-1, x_s)`.
    pub outside_theory: bool,
}

const LEG_EVENTS: usize = 16;

/// The two legs of the cycle through `(x0, f(x0))`, both stopped on `x = -sqrt(eps)`
/// heading left (forward time). `None` when the forward leg falls back into R
/// before reaching the section.
struct Legs {
    fwd: Orbit,
    bwd: Orbit,
}

fn legs(x0: f64, p: &Params) -> Result<Option<Legs>, FlowError> {
    let se = p.sqrt_eps();
    let section = Section {
        x: -se,
        heading: Heading::Left,
    };
    let stop = StopRule::Section {
        section,
        max_events: LEG_EVENTS,
    };
    let start_zone = if x0 >= -1.0 { Zone::L } else { Zone::LL };
    let q = [x0, p.nullcline(x0)];
    let fwd = match integrate_orbit_dir(q, p, stop, Direction::Forward, Some(start_zone)) {
        Ok(o) => o,
        Err(FlowError::Budget(_)) | Err(FlowError::Capture { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if fwd.events.iter().filter(|e| e.zone == Zone::R).count() != 1 {
        return Ok(None);
    }
    let bwd = integrate_orbit_dir(q, p, stop, Direction::Backward, Some(start_zone))?;
    Ok(Some(Legs { fwd, bwd }))
}

/// `y_fwd - y_bwd` on the section; `+inf` when the forward leg turns back
/// before the section (it passes above the tangency there).
fn closure(x0: f64, p: &Params) -> Result<f64, FlowError> {
    Ok(match legs(x0, p)? {
        Some(l) => l.fwd.end_point().unwrap()[1] - l.bwd.end_point().unwrap()[1],
        None => f64::INFINITY,
    })
}

fn ulp(x: f64) -> f64 {
    let a = x.abs().max(f64::MIN_POSITIVE);
    f64::from_bits(a.to_bits() + 1) - a
}

/// Canard cycle through `(x0, f(x0))` by shooting on `a` around the
/// maximal canard value.
pub fn cycle_for_width(x0: f64, k: f64, eps: f64, sign: MSign) -> Result<WidthSolve, CanardError> {
    let conn = maximal_canard(k, eps, sign)?;
    cycle_for_width_with(x0, &conn)
}

pub fn cycle_for_width_with(x0: f64, conn: &Connection) -> Result<WidthSolve, CanardError> {
    let p0 = conn.params();
    let se = p0.sqrt_eps();
    if !(x0 < -se) || !x0.is_finite() {
        return Err(CanardError::Domain { what: "x0", value: x0 });
    }
    let at = conn.a_tilde;
    let c = |a: f64| closure(x0, &p0.with_a(a)).unwrap_or(f64::NAN);
    let d0 = 64.0 * ulp(at);
    let span_max = 0.5 * se;
    let mut delta = d0;
    let mut bracket = None;
    let mut prev_delta = 0.0;
    while delta <= span_max {
        let (cl, cr) = (c(at - delta), c(at + delta));
        if cl.is_nan() || cr.is_nan() {
            break;
        }
        if (cl > 0.0) != (cr > 0.0) || cl == 0.0 || cr == 0.0 {
            bracket = Some((at - delta, at + delta, prev_delta));
            break;
        }
        prev_delta = delta;
        delta *= 2.0;
    }
    let (lo, hi, inner) = bracket.ok_or(CanardError::Bracket { span: delta.min(span_max) })?;
    let underflow = inner == 0.0;
    let a_hat = if underflow {
        at
    } else {
        // The root sits in one of the two outer slices, or between them.
        let (l, r) = if (c(at - inner) > 0.0) != (c(lo) > 0.0) {
            (lo, at - inner)
        } else if (c(at + inner) > 0.0) != (c(hi) > 0.0) {
            (at + inner, hi)
        } else {
            (lo, hi)
        };
        let no_r = CanardError::NoCycle { x0 };
        match bisect(c, l, r, 200) {
            Some(a) if c(a).is_finite() => a,
            _ if c(l).is_infinite() || c(r).is_infinite() => return Err(no_r),
            _ => return Err(CanardError::Bracket { span: delta }),
        }
    };
    let p = p0.with_a(a_hat);
    // A jump of the closure to +inf is not a crossing: the cycle through x0
    // turns back inside zone C there and never visits R.
    let lg = legs(x0, &p)?.ok_or(CanardError::NoCycle { x0 })?;
    let residual = lg.fwd.end_point().unwrap()[1] - lg.bwd.end_point().unwrap()[1];
    let log_multiplier = lg.fwd.log_divergence(&p) + lg.bwd.log_divergence(&p);
    // Entry of the forward leg onto the return section x = sqrt(eps).
    let y_fix = lg
        .fwd
        .events
        .iter()
        .find_map(|e| match e.end {
            EventEnd::Boundary { c, heading: Heading::Left, .. } if e.zone == Zone::R && c == se => Some(e.exit[1]),
            _ => None,
        })
        .unwrap_or(f64::NAN);
    let lm = landmarks(&p)?;
    let cycle = CycleRecord {
        y_fix,
        x0,
        h: phi(x0, &p)?,
        log_multiplier,
        stability: Stability::from_log_multiplier(log_multiplier),
        kind: if x0 < -1.0 {
            CycleKind::WithHead
        } else {
            CycleKind::Headless
        },
        window: in_window(x0, &p),
        residual,
    };
    let (gap, estimated) = if underflow {
        (gap_estimate(x0, &lm, conn.eps), true)
    } else {
        (LogValue::from_f64(a_hat - at), false)
    };
    Ok(WidthSolve {
        x0,
        a_hat,
        a_tilde: at,
        cycle,
        gap_to_a_tilde: gap,
        gap_estimated: estimated,
        underflow_dominated: underflow,
        outside_theory: !((lm.x_r < x0 && x0 < lm.x_u) || (-1.0 <= x0 && x0 < lm.x_s)),
    })
}

/// Magnitude of the exponential closeness, read with `|x0|` in the exponent;
/// unsigned.
fn gap_estimate(x0: f64, lm: &Landmarks, eps: f64) -> LogValue {
    let log = if x0 >= -1.0 {
        x0.abs().ln() - x0.abs() / eps.powf(1.5)
    } else {
        let d = (x0 - lm.x_r).abs();
        d.ln() - d / eps
    };
    LogValue::new(log, 1)
}

/// Closed-form flight times; `None` where the logarithm's argument is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlightTimes {
    pub tau_r: Option<f64>,
    pub tau_l: Option<f64>,
    pub tau_ld: Option<f64>,
    pub tau_ll: Option<f64>,
    pub tau_rr: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    se: f64,
    ls_r: f64,
    lq_r: f64,
    ls_l: f64,
    lq_l: f64,
}

fn rates(p: &Params) -> Result<Rates, ModelError> {
    let (ls_r, lq_r) = slow_fast(Zone::R, p)?;
    let (ls_l, lq_l) = slow_fast(Zone::L, p)?;
    Ok(Rates {
        se: p.sqrt_eps(),
        ls_r,
        lq_r,
        ls_l,
        lq_l,
    })
}

fn log1p_checked(u: f64, what: &'static str) -> Result<f64, CanardError> {
    if u > -1.0 && u.is_finite() {
        Ok(u.ln_1p())
    } else {
        Err(CanardError::Domain { what, value: u })
    }
}

// Arguments of the logarithms; shared by the flight times and the R-functions.
fn u_r(h: f64, p: &Params, r: &Rates) -> f64 {
    ((p.m + r.ls_r) * (r.se - p.a) - h) / ((r.lq_r - r.ls_r) * (r.se - p.a))
}
fn u_l(h: f64, p: &Params, r: &Rates) -> f64 {
    (h + (p.m + r.ls_l) * (r.se + p.a)) / ((r.lq_l - r.ls_l) * (r.se + p.a))
}
fn u_ld(h: f64, p: &Params, r: &Rates) -> f64 {
    (h + p.m * (r.se + p.a) + r.ls_l * (2.0 * r.se + p.a - 1.0)) / ((r.lq_l - r.ls_l) * (r.se + p.a))
}
fn u_ll(h: f64, p: &Params, r: &Rates) -> f64 {
    (h + p.m * (r.se + p.a) + p.k * (r.se - 1.0) + r.ls_r * (1.0 + p.a)) / ((r.lq_r - r.ls_r) * (1.0 + p.a))
}
fn u_rr(p: &Params, r: &Rates) -> f64 {
    (r.ls_r * (r.se - p.a) + r.ls_r * (1.0 + p.a) + p.k * (r.se - 1.0) + 2.0 * p.m * r.se)
        / ((r.lq_r - r.ls_r) * (r.se - p.a))
}

pub fn tau_r(h: f64, p: &Params) -> Result<f64, CanardError> {
    let r = rates(p)?;
    Ok(-log1p_checked(u_r(h, p, &r), "tau_R log argument")? / r.ls_r)
}

pub fn tau_l(h: f64, p: &Params) -> Result<f64, CanardError> {
    let r = rates(p)?;
    Ok(log1p_checked(u_l(h, p, &r), "tau_L log argument")? / r.ls_l)
}

pub fn tau_ld(h: f64, p: &Params) -> Result<f64, CanardError> {
    let r = rates(p)?;
    Ok(log1p_checked(u_ld(h, p, &r), "tau_Ld log argument")? / r.ls_l)
}

/// LL shares its eigenvalues with R.
pub fn tau_ll(h: f64, p: &Params) -> Result<f64, CanardError> {
    let r = rates(p)?;
    Ok(-log1p_checked(u_ll(h, p, &r), "tau_LL log argument")? / r.ls_r)
}

pub fn tau_rr(p: &Params) -> Result<f64, CanardError> {
    let r = rates(p)?;
    Ok(-log1p_checked(u_rr(p, &r), "tau_RR log argument")? / r.ls_r)
}

pub fn flight_times(h: f64, p: &Params) -> FlightTimes {
    FlightTimes {
        tau_r: tau_r(h, p).ok(),
        tau_l: tau_l(h, p).ok(),
        tau_ld: tau_ld(h, p).ok(),
        tau_ll: tau_ll(h, p).ok(),
        tau_rr: tau_rr(p).ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    #[serde(rename = "3z")]
    ThreeZone,
    #[serde(rename = "4z")]
    FourZone,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::ThreeZone => "3z",
            Family::FourZone => "4z",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "3z" | "3" => Some(Family::ThreeZone),
            "4z" | "4" => Some(Family::FourZone),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RFunctionValue {
    pub family: Family,
    pub h: f64,
    /// Log of the product of powers.
    pub log_product: f64,
    /// `m tau_C`, the log of the subtracted exponential.
    pub log_target: f64,
    /// Product minus `e^{m tau_C}`; may overflow to infinity.
    pub value: f64,
    pub sign: i8,
}

impl RFunctionValue {
    /// Same sign as `value`, finite everywhere on the domain.
    pub fn log_gap(&self) -> f64 {
        self.log_product - self.log_target
    }
}

/// Everything the R-functions need at `a = a_tilde`.
#[derive(Debug, Clone)]
pub struct RContext {
    pub conn: Connection,
    pub params: Params,
    pub landmarks: Landmarks,
    rates: Rates,
}

impl RContext {
    pub fn new(k: f64, eps: f64, sign: MSign) -> Result<RContext, CanardError> {
        let conn = maximal_canard(k, eps, sign)?;
        Self::from_connection(conn)
    }

    pub fn from_connection(conn: Connection) -> Result<RContext, CanardError> {
        let params = conn.params();
        let landmarks = landmarks(&params)?;
        let rates = rates(&params)?;
        Ok(RContext {
            conn,
            params,
            landmarks,
            rates,
        })
    }

    /// Open/closed interval where the family is defined.
    pub fn interval(&self, family: Family) -> (f64, f64) {
        match family {
            Family::ThreeZone => (self.landmarks.h_s, self.landmarks.h_m),
            Family::FourZone => (self.landmarks.h_r, self.landmarks.h_u),
        }
    }

    fn finish(&self, family: Family, h: f64, log_product: f64) -> RFunctionValue {
        let log_target = self.params.m * self.conn.tau_c;
        let d = log_product - log_target;
        RFunctionValue {
            family,
            h,
            log_product,
            log_target,
            value: log_target.exp() * d.exp_m1(),
            sign: if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            },
        }
    }

    pub fn r3z(&self, h: f64) -> Result<RFunctionValue, CanardError> {
        let (lo, hi) = self.interval(Family::ThreeZone);
        if !(h > lo && h <= hi) {
            return Err(CanardError::Domain { what: "h (3z)", value: h });
        }
        self.eval_unchecked(Family::ThreeZone, h)
    }

    pub fn r4z(&self, h: f64) -> Result<RFunctionValue, CanardError> {
        let (lo, hi) = self.interval(Family::FourZone);
        if !(h > lo && h < hi) {
            return Err(CanardError::Domain { what: "h (4z)", value: h });
        }
        self.eval_unchecked(Family::FourZone, h)
    }

    /// The printed product without the height-interval restriction; only the
    /// logarithms' domains are checked.
    pub fn eval_unchecked(&self, family: Family, h: f64) -> Result<RFunctionValue, CanardError> {
        let (p, r) = (&self.params, &self.rates);
        let lp = match family {
            Family::ThreeZone => {
                p.k / r.ls_l * log1p_checked(u_l(h, p, r), "3z L factor")?
                    + log1p_checked(u_r(h, p, r), "3z R factor")? / r.ls_r
            }
            Family::FourZone => {
                p.k / r.ls_l * log1p_checked(u_ld(h, p, r), "4z L factor")?
                    + log1p_checked(u_ll(h, p, r), "4z LL factor")? / r.ls_r
                    + log1p_checked(u_rr(p, r), "4z R factor")? / r.ls_r
            }
        };
        Ok(self.finish(family, h, lp))
    }

    pub fn eval(&self, family: Family, h: f64) -> Result<RFunctionValue, CanardError> {
        match family {
            Family::ThreeZone => self.r3z(h),
            Family::FourZone => self.r4z(h),
        }
    }

    /// Sign scan of the family on its interval; returns the scanned heights
    /// and the log-gaps (NaN off-domain).
    pub fn scan(&self, family: Family, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.interval(family);
        let w = hi - lo;
        let mut hs: Vec<f64> = linspace(lo, hi, n).into_iter().skip(1).collect();
        hs.extend(geomspace(1e-9 * w, 0.01 * w, n / 4).into_iter().map(|d| lo + d));
        if family == Family::FourZone {
            hs.extend(geomspace(1e-9 * w, 0.01 * w, n / 4).into_iter().map(|d| hi - d));
            hs.retain(|&h| h < hi);
        }
        hs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        hs.dedup();
        hs.into_iter()
            .map(|h| (h, self.eval(family, h).map(|v| v.log_gap()).unwrap_or(f64::NAN)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HStar {
    pub family: Family,
    pub h: f64,
    /// Sign of dR/dh at the root.
    pub slope_sign: i8,
    /// Sign changes seen by the scan (the theory predicts at most one).
    pub sign_changes: usize,
}

const SCAN_POINTS: usize = 400;

pub fn hstar_root(family: Family, k: f64, eps: f64, sign: MSign) -> Result<Option<HStar>, CanardError> {
    let ctx = RContext::new(k, eps, sign)?;
    Ok(hstar_root_in(&ctx, family))
}

pub fn hstar_root_in(ctx: &RContext, family: Family) -> Option<HStar> {
    let pts: Vec<(f64, f64)> = ctx.scan(family, SCAN_POINTS).into_iter().filter(|p| p.1.is_finite()).collect();
    let mut changes = Vec::new();
    for w in pts.windows(2) {
        if (w[0].1 > 0.0) != (w[1].1 > 0.0) {
            changes.push((w[0], w[1]));
        }
    }
    let ((h0, g0), (h1, _)) = *changes.first()?;
    let g = |h: f64| ctx.eval(family, h).map(|v| v.log_gap()).unwrap_or(f64::NAN);
    let h = brent(g, h0, h1, 1e-15, 300).or_else(|| bisect(g, h0, h1, 200))?;
    Some(HStar {
        family,
        h,
        slope_sign: if g0 < 0.0 { 1 } else { -1 },
        sign_changes: changes.len(),
    })
}

/// Four-zone leading term for `k != 1`, evaluated at any `k`.
pub fn hstar_series_4z_generic(k: f64, eps: f64) -> f64 {
    (k + 1.0) * ((2.0 - k * k) / 2.0).exp() * eps.sqrt().powf((k * k - 1.0) / (k * k))
}

/// Printed leading terms of the saddle-node heights.
pub fn hstar_series(family: Family, k: f64, eps: f64, sign: MSign) -> Result<f64, CanardError> {
    let se = eps.sqrt();
    let c = PI / 3f64.sqrt();
    match family {
        Family::ThreeZone => {
            if k == 1.0 {
                return Err(CanardError::OutOfRange("3z series diverges at k = 1"));
            }
            let base = k.powf(k * k / (k * k - 1.0)) * se;
            match sign {
                MSign::Minus if k > 1.0 => Ok(2.0 / (1.0 + (-c).exp()) * base * (c * (1.0 - 2.0 * eps) / (k * k - 1.0)).exp()),
                MSign::Plus if k < 1.0 => Ok(2.0 / (1.0 + c.exp()) * base * (c * (1.0 - 2.0 * eps) / (1.0 - k * k)).exp()),
                _ => Err(CanardError::OutOfRange("3z series holds for k > 1 (minus) or k < 1 (plus)")),
            }
        }
        Family::FourZone => {
            if k == 1.0 {
                Ok(2.0 / (1.0 + (sign.value() * c).exp()))
            } else {
                Ok(hstar_series_4z_generic(k, eps))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleNodeK {
    pub k: f64,
    pub family: Family,
    pub h_star: f64,
    pub a_tilde: f64,
    /// x0 lies in the validity window of its side at the returned k.
    pub in_range: bool,
}

pub const K_SCAN: (f64, f64) = (0.3, 5.0);

pub fn saddle_node_k_for_width(x0: f64, eps: f64, sign: MSign) -> Result<SaddleNodeK, CanardError> {
    saddle_node_k_in(x0, eps, sign, K_SCAN.0, K_SCAN.1)
}

/// Solves `h*(k) = phi(x0)` for `k` on `[k_lo, k_hi]`.
pub fn saddle_node_k_in(x0: f64, eps: f64, sign: MSign, k_lo: f64, k_hi: f64) -> Result<SaddleNodeK, CanardError> {
    let family = if x0 >= -1.0 {
        Family::ThreeZone
    } else {
        Family::FourZone
    };
    let g = |k: f64| -> Option<(f64, f64, f64)> {
        let ctx = RContext::new(k, eps, sign).ok()?;
        let hs = hstar_root_in(&ctx, family)?;
        let h0 = phi(x0, &ctx.params).ok()?;
        Some((hs.h - h0, hs.h, ctx.conn.a_tilde))
    };
    let ks = linspace(k_lo, k_hi, 48);
    let vals: Vec<Option<f64>> = ks.iter().map(|&k| g(k).map(|v| v.0)).collect();
    let mut bracket = None;
    for i in 0..ks.len() - 1 {
        if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
            if (a > 0.0) != (b > 0.0) {
                bracket = Some((ks[i], ks[i + 1]));
                break;
            }
        }
    }
    let (l, r) = bracket.ok_or(CanardError::NoBracketK { k_lo, k_hi })?;
    let f = |k: f64| g(k).map(|v| v.0).unwrap_or(f64::NAN);
    let k = brent(f, l, r, 1e-12, 200).ok_or(CanardError::NoBracketK { k_lo, k_hi })?;
    let (_, h_star, a_tilde) = g(k).ok_or(CanardError::NoBracketK { k_lo, k_hi })?;
    let p = Params::with_sign(a_tilde, k, sign, eps)?;
    let lm = landmarks(&p)?;
    let in_range = match family {
        Family::ThreeZone => -1.0 < x0 && x0 < lm.x_s,
        Family::FourZone => lm.x_r < x0 && x0 < lm.x_u,
    };
    Ok(SaddleNodeK {
        k,
        family,
        h_star,
        a_tilde,
        in_range,
    })
}

/// Exponentially small correction of a half-map as displayed by the
/// asymptotic estimate, in log space. Only the R, L, LL and Ld passages have one.
pub fn halfmap_asymptotic(kind: HalfMapKind, h: f64, p: &Params) -> Result<LogValue, CanardError> {
    let r = rates(p)?;
    let lm = landmarks(p)?;
    let (se, a, k, eps, m) = (r.se, p.a, p.k, p.eps, p.m);
    let inv_nu = eps.powf(-NU);
    let bad = |what| Err(CanardError::Domain { what, value: h });
    match kind {
        HalfMapKind::R => {
            if !(h > (m - inv_nu * r.ls_r) * (se - a)) {
                return bad("h below the R threshold");
            }
            Ok(LogValue::from_f64(h).scale_exp(-h / (eps * (se - a))))
        }
        HalfMapKind::L => {
            if !(h > (-m + inv_nu * r.ls_l) * (se + a)) {
                return bad("h below the L threshold");
            }
            Ok(LogValue::from_f64(h).scale_exp(-k * h / (eps * (se - a))))
        }
        HalfMapKind::LL => {
            let p2 = lm.p_ll[1];
            if !(h < p2 + inv_nu * r.ls_r * (1.0 + a)) {
                return bad("h above the LL threshold");
            }
            Ok(LogValue::from_f64(k - h).scale_exp(-k * (k - h) / (eps * (1.0 + a))))
        }
        HalfMapKind::Ld => {
            let p2 = lm.p_ll[1];
            if !(h > p2 - r.lq_l * (1.0 + a) && h < p2) {
                return bad("h outside the Ld band");
            }
            Ok(LogValue::from_f64(k - h).scale_exp(-(k * k / eps) * ((1.0 + a) / (a + se)).ln()))
        }
        _ => Err(CanardError::OutOfRange("no asymptotic display for this passage")),
    }
}
