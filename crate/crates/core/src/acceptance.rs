//! The acceptance suite: ten end-to-end checks, each timed and reported as
//! a single pass/fail line. Shared by the `acceptance` test target and the
//! CLI's `verify` command.

use crate::canard::{
    a_tilde_series, cycle_for_width_with, hstar_root, hstar_series, maximal_canard, tau_c_series, Family,
    RContext, CONNECTION_TOL,
};
use crate::continuation::{detect_folds, hopf_check, trace_branch, Grid};
use crate::linflow::{flow, rk4_oracle, Heading};
use crate::model::{landmarks, MSign, Params, Zone};
use crate::poincare::{fd_derivative, fixed_points, return_map, CycleKind, CycleRecord, Stability};
use crate::roots::linspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {} ({:.2} s of {:.0} s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const TITLES: [&str; 10] = [
    "maximal-canard value asymptotics",
    "connection time asymptotics",
    "three coexisting cycles near the double saddle-node",
    "fold structure of canard branches",
    "R-function sign vs multiplier",
    "saddle-node height anchors",
    "multiplier identity vs finite differences",
    "exact flow vs RK4",
    "Hopf-like bifurcation",
    "rhomboid invariance",
];

const BUDGETS: [f64; 10] = [5.0, 5.0, 10.0, 300.0, 120.0, 60.0, 60.0, 30.0, 60.0, 5.0];

/// Runs one criterion (1-based id).
pub fn run_criterion(id: u8) -> CriterionResult {
    let t = Instant::now();
    let (passed, detail) = match id {
        1 => c1_a_tilde(),
        2 => c2_tau_c(),
        3 => c3_three_cycles(),
        4 => c4_folds(),
        5 => c5_r_signs(),
        6 => c6_hstar(),
        7 => c7_multiplier(),
        8 => c8_flow(),
        9 => c9_hopf(),
        10 => c10_rhomboid(),
        _ => (false, format!("no criterion {id}")),
    };
    let i = (id as usize).clamp(1, 10) - 1;
    let seconds = t.elapsed().as_secs_f64();
    let budget = BUDGETS[i];
    CriterionResult {
        id,
        title: TITLES[i],
        passed: passed && seconds < budget,
        detail: if seconds < budget {
            detail
        } else {
            format!("{detail}; over time budget")
        },
        seconds,
        budget_seconds: budget,
    }
}

pub fn run_all() -> Vec<CriterionResult> {
    (1..=10).map(run_criterion).collect()
}

const SWEEP_K: [f64; 3] = [0.75, 1.0, 2.5];
const SWEEP_EPS: [f64; 3] = [0.04, 0.01, 0.0025];
const SIGNS: [MSign; 2] = [MSign::Minus, MSign::Plus];

fn band(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
    mx / mn
}

/// Per (k, sign): remainder `|numeric - series| / eps^order` along the sweep.
fn sweep(which: fn(&crate::canard::Connection) -> (f64, f64), order: f64) -> (bool, String) {
    let mut ok = true;
    let mut worst_band: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut fails = Vec::new();
    for &k in &SWEEP_K {
        for &s in &SIGNS {
            let mut rem = Vec::new();
            for &eps in &SWEEP_EPS {
                match maximal_canard(k, eps, s) {
                    Ok(c) => {
                        worst_res = worst_res.max(c.residual_norm());
                        if c.residual_norm() > CONNECTION_TOL {
                            ok = false;
                            fails.push(format!("residual k={k} eps={eps} {}", s.name()));
                        }
                        let (num, ser) = which(&c);
                        rem.push((num - ser).abs() / eps.powf(order));
                    }
                    Err(e) => {
                        ok = false;
                        fails.push(format!("k={k} eps={eps} {}: {e}", s.name()));
                    }
                }
            }
            if rem.len() == SWEEP_EPS.len() {
                let b = band(&rem);
                worst_band = worst_band.max(b);
                if !(b <= 3.0) {
                    ok = false;
                    fails.push(format!("band {b:.3} at k={k} {}", s.name()));
                }
            }
        }
    }
    let mut d = format!("max residual {worst_res:.2e}, widest remainder band x{worst_band:.3}");
    if !fails.is_empty() {
        d.push_str(&format!("; {}", fails.join(", ")));
    }
    (ok, d)
}

fn c1_a_tilde() -> (bool, String) {
    sweep(|c| (c.a_tilde, a_tilde_series(c.k, c.eps, c.m_sign)), 2.0)
}

fn c2_tau_c() -> (bool, String) {
    sweep(|c| (c.tau_c, tau_c_series(c.k, c.eps, c.m_sign)), 1.0)
}

pub const THREE_CYCLE_A: f64 = 0.2305968812;
pub const THREE_CYCLE_SEEDS: [f64; 3] = [0.595, 0.642, 2.12361];

pub fn three_cycle_params() -> Params {
    Params::with_sign(THREE_CYCLE_A, 2.5, MSign::Minus, 0.1).expect("valid parameters")
}

/// Ordinate where the closed orbit through `(sqrt(eps), y_fix)` crosses
/// `x = 0` moving right.
pub fn top_crossing(cycle: &CycleRecord, p: &Params) -> Option<f64> {
    let r = return_map(cycle.y_fix, p).ok()?;
    r.orbit.events.iter().find_map(|e| {
        if e.zone != Zone::C {
            return None;
        }
        let zf = e.zone_flow(p);
        let t = zf.level_crossing(0.0, Heading::Right, e.flight_time)?;
        Some(zf.point(t)[1])
    })
}

/// Fixed points of the return map at the three-cycle parameters over the
/// whole section below the tangency.
pub fn three_cycles() -> Vec<CycleRecord> {
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    fixed_points(&p, top - 3.0, top).unwrap_or_default()
}

fn c3_three_cycles() -> (bool, String) {
    let p = three_cycle_params();
    let cycles = three_cycles();
    let tops: Vec<(f64, &CycleRecord)> = cycles
        .iter()
        .filter_map(|c| top_crossing(c, &p).map(|y| (y, c)))
        .collect();
    let mut ok = cycles.len() >= 3;
    let mut parts = vec![format!("{} fixed points", cycles.len())];
    let expected = [Stability::Stable, Stability::Unstable, Stability::Stable];
    for (seed, want) in THREE_CYCLE_SEEDS.iter().zip(expected) {
        let best = tops
            .iter()
            .min_by(|a, b| (a.0 - seed).abs().partial_cmp(&(b.0 - seed).abs()).unwrap());
        match best {
            Some((y, c)) => {
                let hit = (y - seed).abs() <= 5e-3 && c.stability == want;
                ok &= hit;
                parts.push(format!(
                    "seed {seed}: {y:.5} (width {:.4}, {})",
                    c.x0,
                    c.stability.name()
                ));
            }
            None => {
                ok = false;
                parts.push(format!("seed {seed}: no match"));
            }
        }
    }
    (ok, parts.join("; "))
}

struct FoldCase {
    k: f64,
    eps: f64,
    sign: MSign,
    headless: usize,
    with_head: usize,
}

const FOLD_CASES: [FoldCase; 5] = [
    FoldCase { k: 2.5, eps: 0.1, sign: MSign::Minus, headless: 1, with_head: 1 },
    FoldCase { k: 0.8, eps: 0.1, sign: MSign::Minus, headless: 0, with_head: 0 },
    FoldCase { k: 0.8, eps: 0.05, sign: MSign::Minus, headless: 0, with_head: 0 },
    FoldCase { k: 0.75, eps: 0.05, sign: MSign::Plus, headless: 1, with_head: 0 },
    FoldCase { k: 2.5, eps: 0.05, sign: MSign::Plus, headless: 0, with_head: 1 },
];

fn c4_folds() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for case in &FOLD_CASES {
        let label = format!("k={} eps={} {}", case.k, case.eps, case.sign.name());
        let branch = match trace_branch(case.k, case.eps, case.sign, &Grid::default()) {
            Ok(b) => b,
            Err(e) => {
                ok = false;
                parts.push(format!("{label}: {e}"));
                continue;
            }
        };
        let folds = detect_folds(&branch);
        let nh = folds.iter().filter(|f| f.side == CycleKind::Headless).count();
        let nw = folds.len() - nh;
        let mut hit = nh == case.headless && nw == case.with_head;
        let mut extra = String::new();
        if case.headless == 1 && case.with_head == 1 && hit {
            let gap = (folds[0].a_star - folds[1].a_star).abs();
            hit &= (5e-10..=1e-8).contains(&gap);
            extra = format!(", |a1-a2| = {gap:.3e}");
        }
        ok &= hit;
        parts.push(format!(
            "{label}: {nh} headless + {nw} with-head (want {}+{}){extra}",
            case.headless, case.with_head
        ));
    }
    (ok, parts.join("; "))
}

/// Widths spread through both validity windows.
pub fn validity_widths(lm: &crate::model::Landmarks, n: usize) -> Vec<f64> {
    let half = n / 2;
    let inner = |lo: f64, hi: f64, m: usize| -> Vec<f64> {
        let v = linspace(lo, hi, m + 2);
        v[1..=m].to_vec()
    };
    let mut xs = inner(-1.0, lm.x_s, half);
    xs.extend(inner(lm.x_r, lm.x_u, n - half));
    xs
}

fn c5_r_signs() -> (bool, String) {
    let mut agree = 0;
    let mut total = 0;
    let mut parts = Vec::new();
    for &k in &[0.8, 2.5] {
        for &s in &SIGNS {
            let ctx = match RContext::new(k, 0.1, s) {
                Ok(c) => c,
                Err(e) => {
                    parts.push(format!("k={k} {}: {e}", s.name()));
                    continue;
                }
            };
            let (mut a, mut t) = (0, 0);
            for x0 in validity_widths(&ctx.landmarks, 40) {
                let Ok(ws) = cycle_for_width_with(x0, &ctx.conn) else { continue };
                let family = if x0 >= -1.0 { Family::ThreeZone } else { Family::FourZone };
                let Ok(r) = ctx.eval(family, ws.cycle.h) else { continue };
                if r.value.abs() <= 0.1 {
                    continue;
                }
                t += 1;
                if (r.value > 0.0) == (ws.cycle.log_multiplier > 0.0) {
                    a += 1;
                }
            }
            parts.push(format!("k={k} {}: {a}/{t}", s.name()));
            agree += a;
            total += t;
        }
    }
    let frac = agree as f64 / total.max(1) as f64;
    (total > 0 && frac >= 0.95, format!("{:.1}% agree ({})", 100.0 * frac, parts.join(", ")))
}

pub const HSTAR_EPS: [f64; 3] = [0.05, 0.01, 0.005];

/// Branches whose monotone approach to the printed series is asserted,
/// fixed in advance as representative branch values.
pub const HSTAR_CASES: [(Family, MSign, f64); 4] = [
    (Family::ThreeZone, MSign::Minus, 2.5),
    (Family::ThreeZone, MSign::Plus, 0.75),
    (Family::FourZone, MSign::Minus, 1.3),
    (Family::FourZone, MSign::Plus, 0.75),
];

/// Relative gaps `|root - series| / series` along `HSTAR_EPS`; `None` where
/// no root exists.
pub fn hstar_gaps(family: Family, sign: MSign, k: f64) -> Vec<Option<f64>> {
    HSTAR_EPS
        .iter()
        .map(|&eps| {
            let root = hstar_root(family, k, eps, sign).ok()??;
            let s = hstar_series(family, k, eps, sign).ok()?;
            Some((root.h - s).abs() / s)
        })
        .collect()
}

fn c6_hstar() -> (bool, String) {
    let anchor = 2.0 / (1.0 + (std::f64::consts::PI / 3f64.sqrt()).exp());
    let root = hstar_root(Family::FourZone, 1.0, 0.005, MSign::Plus).ok().flatten();
    let anchor_ok = root.map(|r| (r.h - anchor).abs() / anchor <= 0.15).unwrap_or(false);
    let mut parts = vec![match root {
        Some(r) => format!("4z k=1 plus root {:.5} vs {anchor:.6}", r.h),
        None => "4z k=1 plus: no root".to_string(),
    }];
    let mut ok = anchor_ok;
    for (family, sign, k) in HSTAR_CASES {
        let g = hstar_gaps(family, sign, k);
        let mono = g.iter().all(|x| x.is_some())
            && g.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
        ok &= mono;
        let shown: Vec<String> = g
            .iter()
            .map(|x| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "none".into()))
            .collect();
        parts.push(format!(
            "{} {} k={k}: gaps [{}]{}",
            family.name(),
            sign.name(),
            shown.join(", "),
            if mono { "" } else { " not decreasing" }
        ));
    }
    (ok, parts.join("; "))
}

/// Parameter sets with resolvable fixed points at eps >= 0.05: the three
/// The three coexisting cycles and small cycles below the Hopf-like value.
fn multiplier_sets() -> Vec<Params> {
    let mut v = vec![three_cycle_params()];
    for &(k, eps, f) in &[(1.0, 0.05, 0.1), (2.5, 0.1, 0.15), (0.8, 0.05, 0.05)] {
        let se: f64 = f64::sqrt(eps);
        v.push(Params::with_sign(se * (1.0 - f), k, MSign::Minus, eps).expect("valid"));
    }
    v
}

fn c7_multiplier() -> (bool, String) {
    let mut ok = true;
    let mut n = 0;
    let mut worst: f64 = 0.0;
    for p in multiplier_sets() {
        let top = p.nullcline(p.sqrt_eps());
        for c in fixed_points(&p, top - 3.0, top).unwrap_or_default() {
            n += 1;
            let m = c.log_multiplier.exp();
            match fd_derivative(c.y_fix, &p) {
                Ok(fd) => {
                    let err = (m - fd.to_f64()).abs();
                    let tol = (1e-3 * m).max(1e-8);
                    worst = worst.max(err / tol);
                    ok &= err <= tol;
                }
                Err(_) => ok = false,
            }
        }
    }
    (ok && n > 0, format!("{n} fixed points, worst error/tolerance {worst:.3}"))
}

fn c8_flow() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &eps in &[0.1, 0.01] {
        for zone in Zone::ALL {
            let mut done = 0;
            while done < 20 {
                let k = rng.gen_range(0.5..3.0);
                let se: f64 = f64::sqrt(eps);
                let sign = if rng.gen_bool(0.5) { MSign::Minus } else { MSign::Plus };
                let a = rng.gen_range(-1.5..1.5);
                let p = Params::with_sign(a, k, sign, eps).expect("valid");
                let (lo, hi) = zone.interval(&p);
                let (lo, hi) = (lo.max(-3.0), hi.min(3.0));
                let x = rng.gen_range(lo..hi);
                let y = p.nullcline(x) + rng.gen_range(-0.5..0.5) * (hi - lo).min(1.0) * se;
                let q = [x, y];
                let inside = (0..=50).all(|i| {
                    let xi = flow(zone, q, i as f64 / 50.0, &p)[0];
                    xi > lo && xi < hi
                });
                if !inside {
                    continue;
                }
                let e = flow(zone, q, 1.0, &p);
                let r = rk4_oracle(zone, q, 1.0, 100_000, &p);
                worst = worst.max((e[0] - r[0]).abs().max((e[1] - r[1]).abs()));
                done += 1;
                cases += 1;
            }
        }
    }
    (worst <= 1e-8, format!("{cases} segments, max deviation {worst:.2e}"))
}

fn c9_hopf() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &eps in &[0.04, 0.01] {
        for &s in &SIGNS {
            for &k in &[0.75, 2.5] {
                match hopf_check(k, eps, s) {
                    Ok(h) => {
                        let hit = h.equilibrium_flip && h.cycle_stability_ok && h.r_squared >= 0.999;
                        ok &= hit;
                        parts.push(format!(
                            "eps={eps} {} k={k}: R2 {:.6}{}",
                            s.name(),
                            h.r_squared,
                            if hit { "" } else { " (stability mismatch)" }
                        ));
                    }
                    Err(e) => {
                        ok = false;
                        parts.push(format!("eps={eps} {} k={k}: {e}", s.name()));
                    }
                }
            }
        }
    }
    (ok, parts.join("; "))
}

fn c10_rhomboid() -> (bool, String) {
    let mut worst = f64::INFINITY;
    let mut n = 0;
    let sets = [
        three_cycle_params(),
        Params::with_sign(0.05, 1.0, MSign::Minus, 0.01).expect("valid"),
        Params::with_sign(-0.15, 0.75, MSign::Plus, 0.05).expect("valid"),
    ];
    for p in &sets {
        let Ok(lm) = landmarks(p) else { return (false, "landmarks failed".into()) };
        for (q, nrm) in lm.rhomboid.boundary_samples(100) {
            let f = p.field(q);
            worst = worst.min(f[0] * nrm[0] + f[1] * nrm[1]);
            n += 1;
        }
    }
    (worst >= -1e-12, format!("{n} boundary points, min inward component {worst:.3e}"))
}
