//! The four-zone piecewise-linear slow-fast system
//!
//! ```text
//! x' = y - f(x),   y' = eps (a - x)
//! ```
//!
//! with a continuous nullcline `f` made of four affine pieces on
//! `LL = (-inf, -1]`, `L = [-1, -sqrt(eps)]`, `C = [-sqrt(eps), sqrt(eps)]`
//! and `R = [sqrt(eps), inf)`. Every zone matrix has determinant `eps`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Largest admitted singular parameter; keeps `sqrt(eps) < 1` so zone L is nonempty.
pub const EPS_MAX: f64 = 0.25;

/// Exponent used in the exponential-closeness thresholds of the height bounds.
pub const NU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("eps must lie in (0, {EPS_MAX}], got {0}")]
    Eps(f64),
    #[error("k must be positive, got {0}")]
    K(f64),
    #[error("|m| must be below 2 sqrt(eps) = {bound}, got m = {m}")]
    M { m: f64, bound: f64 },
    #[error("parameter {name} is not finite")]
    NotFinite { name: &'static str },
    #[error("zone {0} has no real eigen-pair (k <= 2 sqrt(eps)); slow manifold undefined")]
    NoSlowManifold(Zone),
}

/// Which of the two distinguished central slopes `m = -sqrt(eps)` / `m = +sqrt(eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MSign {
    /// `m = -sqrt(eps)`: supercritical Hopf-like bifurcation.
    Minus,
    /// `m = +sqrt(eps)`: subcritical.
    Plus,
}

impl MSign {
    pub fn value(self) -> f64 {
        match self {
            MSign::Minus => -1.0,
            MSign::Plus => 1.0,
        }
    }

    pub fn m(self, eps: f64) -> f64 {
        self.value() * eps.sqrt()
    }

    pub fn name(self) -> &'static str {
        match self {
            MSign::Minus => "minus",
            MSign::Plus => "plus",
        }
    }

    pub fn parse(s: &str) -> Option<MSign> {
        match s {
            "minus" | "-" | "-1" | "super" | "supercritical" => Some(MSign::Minus),
            "plus" | "+" | "+1" | "1" | "sub" | "subcritical" => Some(MSign::Plus),
            _ => None,
        }
    }
}

impl fmt::Display for MSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub k: f64,
    pub m: f64,
    pub eps: f64,
}

impl Params {
    pub fn new(a: f64, k: f64, m: f64, eps: f64) -> Result<Self, ModelError> {
        for (name, v) in [("a", a), ("k", k), ("m", m), ("eps", eps)] {
            if !v.is_finite() {
                return Err(ModelError::NotFinite { name });
            }
        }
        if !(eps > 0.0 && eps <= EPS_MAX) {
            return Err(ModelError::Eps(eps));
        }
        if k <= 0.0 {
            return Err(ModelError::K(k));
        }
        let bound = 2.0 * eps.sqrt();
        if m.abs() >= bound {
            return Err(ModelError::M { m, bound });
        }
        Ok(Params { a, k, m, eps })
    }

    pub fn with_sign(a: f64, k: f64, sign: MSign, eps: f64) -> Result<Self, ModelError> {
        if !(eps > 0.0 && eps <= EPS_MAX) {
            return Err(ModelError::Eps(eps));
        }
        Params::new(a, k, sign.m(eps), eps)
    }

    pub fn sqrt_eps(&self) -> f64 {
        self.eps.sqrt()
    }

    /// `Some` only when `m` is exactly one of the two distinguished slopes.
    pub fn m_sign(&self) -> Option<MSign> {
        let se = self.sqrt_eps();
        if self.m == -se {
            Some(MSign::Minus)
        } else if self.m == se {
            Some(MSign::Plus)
        } else {
            None
        }
    }

    pub fn with_a(&self, a: f64) -> Params {
        Params { a, ..*self }
    }

    /// Slope and intercept of the affine piece of `f` owned by `zone`.
    pub fn piece_coeffs(&self, zone: Zone) -> (f64, f64) {
        let se = self.sqrt_eps();
        let (a, k, m) = (self.a, self.k, self.m);
        match zone {
            Zone::LL => (1.0, 1.0 - k * (se - 1.0) - m * (se + a)),
            Zone::L => (-k, -k * se - m * (se + a)),
            Zone::C => (m, -m * a),
            Zone::R => (1.0, -se + m * (se - a)),
        }
    }

    /// The affine extension of `zone`'s piece, evaluated anywhere.
    pub fn piece(&self, zone: Zone, x: f64) -> f64 {
        let (s, c) = self.piece_coeffs(zone);
        s * x + c
    }

    pub fn nullcline(&self, x: f64) -> f64 {
        self.piece(Zone::containing(x, self), x)
    }

    /// Vector field of `zone`'s affine system (ignores zone membership).
    pub fn field_in(&self, zone: Zone, q: [f64; 2]) -> [f64; 2] {
        [q[1] - self.piece(zone, q[0]), self.eps * (self.a - q[0])]
    }

    pub fn field(&self, q: [f64; 2]) -> [f64; 2] {
        [q[1] - self.nullcline(q[0]), self.eps * (self.a - q[0])]
    }
}

pub fn nullcline_f(x: f64, p: &Params) -> f64 {
    p.nullcline(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    LL,
    L,
    C,
    R,
}

impl Zone {
    pub const ALL: [Zone; 4] = [Zone::LL, Zone::L, Zone::C, Zone::R];

    /// Closed x-interval; lateral zones are unbounded.
    pub fn interval(self, p: &Params) -> (f64, f64) {
        let se = p.sqrt_eps();
        match self {
            Zone::LL => (f64::NEG_INFINITY, -1.0),
            Zone::L => (-1.0, -se),
            Zone::C => (-se, se),
            Zone::R => (se, f64::INFINITY),
        }
    }

    /// Zone whose closed interval contains `x`; knots go to the right-hand zone.
    pub fn containing(x: f64, p: &Params) -> Zone {
        let se = p.sqrt_eps();
        if x < -1.0 {
            Zone::LL
        } else if x < -se {
            Zone::L
        } else if x < se {
            Zone::C
        } else {
            Zone::R
        }
    }

    pub fn left(self) -> Option<Zone> {
        match self {
            Zone::LL => None,
            Zone::L => Some(Zone::LL),
            Zone::C => Some(Zone::L),
            Zone::R => Some(Zone::C),
        }
    }

    pub fn right(self) -> Option<Zone> {
        match self {
            Zone::LL => Some(Zone::L),
            Zone::L => Some(Zone::C),
            Zone::C => Some(Zone::R),
            Zone::R => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::LL => "LL",
            Zone::L => "L",
            Zone::C => "C",
            Zone::R => "R",
        }
    }

    pub fn trace(self, p: &Params) -> f64 {
        -p.piece_coeffs(self).0
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Eigen {
    /// `|slow| < |fast|`, `slow + fast = trace`, `slow * fast = eps`;
    /// eigenvectors are `(lambda, -eps)`.
    Real { slow: f64, fast: f64 },
    /// `sigma ± i omega` with `sigma^2 + omega^2 = eps`.
    Complex { sigma: f64, omega: f64 },
    /// Double eigenvalue (`trace^2 = 4 eps`).
    Repeated { lambda: f64 },
}

impl Eigen {
    /// Eigen-data of `[[t, 1], [-eps, 0]]` from the quadratic formula.
    pub fn of(t: f64, eps: f64) -> Eigen {
        let disc = t * t - 4.0 * eps;
        if disc > 0.0 {
            // Larger root without cancellation, smaller one from the product.
            let fast = 0.5 * (t + t.signum() * disc.sqrt());
            Eigen::Real {
                slow: eps / fast,
                fast,
            }
        } else if disc < 0.0 {
            Eigen::Complex {
                sigma: 0.5 * t,
                omega: 0.5 * (-disc).sqrt(),
            }
        } else {
            Eigen::Repeated { lambda: 0.5 * t }
        }
    }

    pub fn real_pair(&self) -> Option<(f64, f64)> {
        match *self {
            Eigen::Real { slow, fast } => Some((slow, fast)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneData {
    pub zone: Zone,
    pub matrix: [[f64; 2]; 2],
    pub offset: [f64; 2],
    pub trace: f64,
    pub det: f64,
    pub discriminant: f64,
    pub eigen: Eigen,
    pub equilibrium: [f64; 2],
    /// Equilibrium lies outside the zone's closed interval.
    pub is_virtual: bool,
}

pub fn zone_data(zone: Zone, p: &Params) -> ZoneData {
    let (s, c) = p.piece_coeffs(zone);
    let t = -s;
    let (lo, hi) = zone.interval(p);
    ZoneData {
        zone,
        matrix: [[t, 1.0], [-p.eps, 0.0]],
        offset: [-c, p.eps * p.a],
        trace: t,
        det: p.eps,
        discriminant: t * t - 4.0 * p.eps,
        eigen: Eigen::of(t, p.eps),
        equilibrium: [p.a, p.piece(zone, p.a)],
        is_virtual: !(lo <= p.a && p.a <= hi),
    }
}

/// Slow/fast eigenvalues of a real-pair zone.
pub fn slow_fast(zone: Zone, p: &Params) -> Result<(f64, f64), ModelError> {
    Eigen::of(zone.trace(p), p.eps)
        .real_pair()
        .ok_or(ModelError::NoSlowManifold(zone))
}

/// Straight slow-manifold piece `base + r * direction`, `r` in `[r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowSegment {
    pub base: [f64; 2],
    pub direction: [f64; 2],
    pub r_min: f64,
    pub r_max: f64,
}

impl SlowSegment {
    pub fn at(&self, r: f64) -> [f64; 2] {
        [
            self.base[0] + r * self.direction[0],
            self.base[1] + r * self.direction[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowManifold {
    pub mu_ll: SlowSegment,
    pub mu_l: SlowSegment,
    pub mu_r: SlowSegment,
}

pub fn slow_manifold(p: &Params) -> Result<SlowManifold, ModelError> {
    let (ls_r, _) = slow_fast(Zone::R, p)?;
    let (ls_l, _) = slow_fast(Zone::L, p)?;
    let se = p.sqrt_eps();
    let a = p.a;
    let e = |z| zone_data(z, p).equilibrium;
    Ok(SlowManifold {
        mu_ll: SlowSegment {
            base: e(Zone::LL),
            direction: [ls_r, -p.eps],
            r_min: -(1.0 + a) / ls_r,
            r_max: f64::INFINITY,
        },
        mu_l: SlowSegment {
            base: e(Zone::L),
            direction: [-ls_l, p.eps],
            r_min: (se + a) / ls_l,
            r_max: (1.0 + a) / ls_l,
        },
        mu_r: SlowSegment {
            base: e(Zone::R),
            direction: [-ls_r, p.eps],
            r_min: (a - se) / ls_r,
            r_max: f64::INFINITY,
        },
    })
}

/// Parallelogram bounded by the slow lines and horizontals through the two
/// lateral equilibria; vertices counter-clockwise from bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rhomboid {
    pub vertices: [[f64; 2]; 4],
}

impl Rhomboid {
    /// `n` points per edge with unit inward normals.
    pub fn boundary_samples(&self, n: usize) -> Vec<([f64; 2], [f64; 2])> {
        let mut out = Vec::with_capacity(4 * n);
        for i in 0..4 {
            let p0 = self.vertices[i];
            let p1 = self.vertices[(i + 1) % 4];
            let d = [p1[0] - p0[0], p1[1] - p0[1]];
            let len = d[0].hypot(d[1]);
            let normal = [-d[1] / len, d[0] / len];
            for j in 0..n {
                let s = (j as f64 + 0.5) / n as f64;
                out.push(([p0[0] + s * d[0], p0[1] + s * d[1]], normal));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Landmarks {
    pub p_ll: [f64; 2],
    pub p_l: [f64; 2],
    pub p_r: [f64; 2],
    pub q1_ll: [f64; 2],
    pub q1_r: [f64; 2],
    pub q0_l: [f64; 2],
    pub q1_l: [f64; 2],
    pub q0_rr: [f64; 2],
    pub x_r: f64,
    pub x_s: f64,
    pub x_u: f64,
    pub h_r: f64,
    pub h_s: f64,
    pub h_u: f64,
    pub h_m: f64,
    pub a_h: Option<f64>,
    pub equilibrium: [f64; 2],
    pub rhomboid: Rhomboid,
}

pub fn landmarks(p: &Params) -> Result<Landmarks, ModelError> {
    let (ls_r, _) = slow_fast(Zone::R, p)?;
    let ls_ll = ls_r;
    let (ls_l, lq_l) = slow_fast(Zone::L, p)?;
    let se = p.sqrt_eps();
    let (a, k, m, eps) = (p.a, p.k, p.m, p.eps);
    let inv_nu = eps.powf(-NU);

    let q1_ll_y = -ls_ll * (1.0 + a) - k * (se - 1.0) - m * (se + a);
    let h_m = -m * (se + a) + k * (1.0 - se);

    let a_h = match p.m_sign() {
        Some(MSign::Minus) => Some(se),
        Some(MSign::Plus) => Some(-se),
        None => None,
    };

    let e_ll = zone_data(Zone::LL, p).equilibrium;
    let e_r = zone_data(Zone::R, p).equilibrium;
    let span = (e_ll[1] - e_r[1]) / eps;
    let rhomboid = Rhomboid {
        vertices: [
            [a + ls_r * span, e_r[1]],
            e_r,
            [a - ls_r * span, e_ll[1]],
            e_ll,
        ],
    };

    Ok(Landmarks {
        p_ll: [-1.0, k * (1.0 - se) - m * (se + a)],
        p_l: [-se, -m * (se + a)],
        p_r: [se, m * (se - a)],
        q1_ll: [-1.0, q1_ll_y],
        q1_r: [se, (m + ls_r) * (se - a)],
        q0_l: [-se, -(m + ls_l) * (se + a)],
        q1_l: [-1.0, -(m + k) * (se + a) + (1.0 + a) * lq_l],
        q0_rr: [se, q1_ll_y],
        x_r: -(1.0 + k) + k * se - ls_l * (se + a),
        x_s: -se - ls_l * (se + a),
        x_u: -1.0 + ls_ll * (1.0 + a),
        h_r: -(m + ls_l) * (se + a),
        h_s: -(m - inv_nu * ls_l) * (se + a),
        h_u: h_m + inv_nu * ls_ll * (1.0 + a),
        h_m,
        a_h,
        equilibrium: [a, p.nullcline(a)],
        rhomboid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumClass {
    StableFocus,
    UnstableFocus,
    Center,
    StableNode,
    UnstableNode,
    /// Equilibrium sits on a switching line.
    NonGeneric,
}

impl EquilibriumClass {
    pub fn is_stable(self) -> Option<bool> {
        match self {
            EquilibriumClass::StableFocus | EquilibriumClass::StableNode => Some(true),
            EquilibriumClass::UnstableFocus | EquilibriumClass::UnstableNode => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub point: [f64; 2],
    /// `None` on a switching line.
    pub zone: Option<Zone>,
    pub classification: EquilibriumClass,
}

pub fn equilibrium_stability(p: &Params) -> EquilibriumReport {
    let point = [p.a, p.nullcline(p.a)];
    let se = p.sqrt_eps();
    if p.a == -1.0 || p.a == -se || p.a == se {
        return EquilibriumReport {
            point,
            zone: None,
            classification: EquilibriumClass::NonGeneric,
        };
    }
    let zone = Zone::containing(p.a, p);
    let zd = zone_data(zone, p);
    let classification = match zd.eigen {
        Eigen::Complex { sigma, .. } if sigma == 0.0 => EquilibriumClass::Center,
        Eigen::Complex { sigma, .. } if sigma < 0.0 => EquilibriumClass::StableFocus,
        Eigen::Complex { .. } => EquilibriumClass::UnstableFocus,
        _ if zd.trace < 0.0 => EquilibriumClass::StableNode,
        _ => EquilibriumClass::UnstableNode,
    };
    EquilibriumReport {
        point,
        zone: Some(zone),
        classification,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(matches!(Params::new(0.0, 1.0, 0.0, 0.0), Err(ModelError::Eps(_))));
        assert!(matches!(Params::new(0.0, 1.0, 0.0, 0.3), Err(ModelError::Eps(_))));
        assert!(matches!(Params::new(0.0, 0.0, 0.0, 0.1), Err(ModelError::K(_))));
        assert!(matches!(Params::new(0.0, 1.0, 0.2, 0.01), Err(ModelError::M { .. })));
        assert!(Params::new(f64::NAN, 1.0, 0.0, 0.01).is_err());
    }

    #[test]
    fn nullcline_values_and_knots() {
        let p = Params::new(0.1, 2.0, -0.2, 0.04).unwrap();
        let se = 0.2;
        assert!(close(p.nullcline(-se), 0.06, 1e-15));
        assert!(close(p.piece(Zone::L, -se), p.piece(Zone::C, -se), 1e-15));
        assert!(close(p.nullcline(0.0), 0.02, 1e-15));
        assert!(close(p.piece(Zone::LL, -1.0), 1.66, 1e-14));
        assert!(close(p.piece(Zone::L, -1.0), 1.66, 1e-14));
    }

    #[test]
    fn eigen_values_match_quadratic_formula() {
        let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
        let (ls, lq) = slow_fast(Zone::L, &p).unwrap();
        assert!(close(ls, (2.0 - 3.84f64.sqrt()) / 2.0, 1e-15));
        assert!(close(ls, 0.020204, 5e-7));
        // Two-term series eps/k + eps^2/k^3 agrees to four digits.
        assert!(close(ls, 0.04 / 2.0 + 0.0016 / 8.0, 5e-6));
        assert!(close(ls + lq, 2.0, 1e-15));
        let (rs, _) = slow_fast(Zone::R, &p).unwrap();
        assert!(close(rs, (-1.0 + 0.84f64.sqrt()) / 2.0, 1e-15));
        assert!(close(rs, -0.041742, 5e-7));
        let c = zone_data(Zone::C, &p);
        assert_eq!(c.trace, 0.2);
        match c.eigen {
            Eigen::Complex { sigma, omega } => assert!(close(sigma * sigma + omega * omega, 0.04, 1e-16)),
            _ => panic!("zone C must be complex"),
        }
    }

    #[test]
    fn landmark_examples() {
        let p = Params::new(0.0, 1.0, -0.1, 0.01).unwrap();
        let lm = landmarks(&p).unwrap();
        assert_eq!(lm.a_h, Some(0.1));
        assert!(close(lm.x_s, -0.101010, 5e-7));
        let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
        let lm = landmarks(&p).unwrap();
        assert_eq!(lm.q1_r[0], 0.2);
        assert!(close(lm.q1_r[1], -0.048348, 5e-7));
        assert_eq!(landmarks(&Params::new(0.0, 2.0, -0.1, 0.04).unwrap()).unwrap().a_h, None);
    }

    #[test]
    fn slow_manifold_endpoints() {
        let p = Params::with_sign(0.05, 1.7, MSign::Minus, 0.02).unwrap();
        let sm = slow_manifold(&p).unwrap();
        let lm = landmarks(&p).unwrap();
        let q = sm.mu_r.at(sm.mu_r.r_min);
        assert!(close(q[0], lm.q1_r[0], 1e-14) && close(q[1], lm.q1_r[1], 1e-14));
        let q = sm.mu_l.at(sm.mu_l.r_min);
        assert!(close(q[0], lm.q0_l[0], 1e-14) && close(q[1], lm.q0_l[1], 1e-14));
        let q = sm.mu_l.at(sm.mu_l.r_max);
        assert!(close(q[0], lm.q1_l[0], 1e-14) && close(q[1], lm.q1_l[1], 1e-14));
        let q = sm.mu_ll.at(sm.mu_ll.r_min);
        assert!(close(q[0], lm.q1_ll[0], 1e-14) && close(q[1], lm.q1_ll[1], 1e-14));
    }

    #[test]
    fn equilibrium_examples() {
        let r = equilibrium_stability(&Params::new(0.3, 1.0, -0.1, 0.01).unwrap());
        assert_eq!(r.zone, Some(Zone::R));
        assert_eq!(r.classification.is_stable(), Some(true));
        let r = equilibrium_stability(&Params::new(0.05, 1.0, -0.1, 0.01).unwrap());
        assert_eq!(r.zone, Some(Zone::C));
        assert_eq!(r.classification, EquilibriumClass::UnstableFocus);
        let r = equilibrium_stability(&Params::new(0.1, 1.0, -0.1, 0.01).unwrap());
        assert_eq!(r.classification, EquilibriumClass::NonGeneric);
    }
}
