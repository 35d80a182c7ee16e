//! Data sets behind the reference plots, one CSV per panel group.

use crate::commands::{branch_table, fold_table};
use crate::error::CliError;
use crate::output::{opt_real, real, write_atomic, Table};
use pwl_canard::canard::{hstar_root_in, hstar_series, Family, RContext};
use pwl_canard::continuation::{detect_folds, trace_branch, Grid};
use pwl_canard::poincare::{fixed_points, return_map};
use pwl_canard::{MSign, Params};
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;

const SIGNS: [MSign; 2] = [MSign::Minus, MSign::Plus];
const SCAN_EPS: [f64; 3] = [0.05, 0.01, 0.005];
const SCAN_POINTS: usize = 400;
const K_GRID: (f64, f64, usize) = (0.3, 4.0, 75);
/// Parameters of the three-cycle panels: k, eps and the two values of a.
const THREE_CYCLE: (f64, f64) = (2.5, 0.1);
const THREE_CYCLE_A: [f64; 2] = [0.2305968812, 0.23059688315966];

fn k_grid() -> Vec<f64> {
    let (lo, hi, n) = K_GRID;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn eps_list(eps: Option<f64>, default: &[f64]) -> Vec<f64> {
    eps.map(|e| vec![e]).unwrap_or_else(|| default.to_vec())
}

fn check_eps(eps: Option<f64>) -> Result<(), CliError> {
    if let Some(e) = eps {
        Params::new(0.0, 1.0, 0.0, e).map_err(|err| CliError::Usage(err.to_string()))?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, t: &Table) -> Result<(), CliError> {
    let path = dir.join(name);
    write_atomic(&path, &t.to_bytes()?)?;
    eprintln!("wrote {} ({} rows)", path.display(), t.len());
    Ok(())
}

pub fn run(id: &str, eps: Option<f64>, dir: &Path) -> Result<(), CliError> {
    check_eps(eps)?;
    match id {
        "fig3" => branches(eps.unwrap_or(0.1), dir),
        "fig4" => r_panels(Family::ThreeZone, &[(2.5, MSign::Minus), (0.75, MSign::Plus)], eps, dir, "fig4"),
        "fig5" => r_panels(Family::FourZone, &[(1.3, MSign::Minus), (0.75, MSign::Plus)], eps, dir, "fig5"),
        "fig6a" => three_cycles(THREE_CYCLE_A[0], eps.unwrap_or(THREE_CYCLE.1), dir, "fig6a"),
        "fig6b" => three_cycles(THREE_CYCLE_A[1], eps.unwrap_or(THREE_CYCLE.1), dir, "fig6b"),
        "fig7" => hstar_curves(eps.unwrap_or(1e-5), dir),
        other => Err(CliError::Usage(format!(
            "unknown figure id {other:?}; expected fig3, fig4, fig5, fig6a, fig6b or fig7"
        ))),
    }
}

/// Explosion branches for a sub-unit, unit and large k, on both signs.
fn branches(eps: f64, dir: &Path) -> Result<(), CliError> {
    let cases: Vec<(f64, MSign)> = [0.75, 1.0, 2.5].iter().flat_map(|&k| SIGNS.map(|s| (k, s))).collect();
    let traced: Vec<_> = cases
        .par_iter()
        .map(|&(k, s)| trace_branch(k, eps, s, &Grid::default()).map(|b| (format!("k={k} {}", s.name()), b)))
        .collect();
    let mut done = Vec::new();
    for (r, &(k, s)) in traced.into_iter().zip(&cases) {
        done.push(r.map_err(|e| CliError::numerical("branch", e, json!({ "k": k, "eps": eps, "m_sign": s.name() })))?);
    }
    let rows: Vec<_> = done.iter().map(|(l, b)| (l.clone(), b)).collect();
    write(dir, "fig3_branches.csv", &branch_table(&rows))?;
    let folds: Vec<_> = done.iter().map(|(l, b)| (l.clone(), detect_folds(b))).collect();
    write(dir, "fig3_folds.csv", &fold_table(&folds))
}

/// Root and series of one family over the k grid.
fn hstar_rows(family: Family, eps: f64, sign: MSign) -> Vec<Vec<String>> {
    k_grid()
        .par_iter()
        .map(|&k| {
            let ctx = RContext::new(k, eps, sign).ok();
            let root = ctx.as_ref().and_then(|c| hstar_root_in(c, family)).map(|h| h.h);
            vec![
                family.name().to_string(),
                sign.name().to_string(),
                real(eps),
                real(k),
                opt_real(root),
                opt_real(hstar_series(family, k, eps, sign).ok()),
                opt_real(ctx.map(|c| c.landmarks.h_m)),
            ]
        })
        .collect()
}

const HSTAR_HEADER: [&str; 7] = ["family", "sign", "eps", "k", "h_star", "series", "h_m"];

/// R-function scans at fixed k over several eps, plus h* against k.
fn r_panels(family: Family, cases: &[(f64, MSign)], eps: Option<f64>, dir: &Path, stem: &str) -> Result<(), CliError> {
    let epss = eps_list(eps, &SCAN_EPS);
    let jobs: Vec<(f64, MSign, f64)> = cases.iter().flat_map(|&(k, s)| epss.iter().map(move |&e| (k, s, e))).collect();
    let scans: Vec<_> = jobs
        .par_iter()
        .map(|&(k, s, e)| RContext::new(k, e, s).map(|c| c.scan(family, SCAN_POINTS)))
        .collect();
    let mut t = Table::new(&["sign", "k", "eps", "h", "log_gap"]);
    for (scan, &(k, s, e)) in scans.into_iter().zip(&jobs) {
        let scan = scan.map_err(|err| CliError::numerical("connection", err, json!({ "k": k, "eps": e, "m_sign": s.name() })))?;
        for (h, g) in scan {
            t.push(vec![s.name().into(), real(k), real(e), real(h), real(g)]);
        }
    }
    write(dir, &format!("{stem}_scan.csv"), &t)?;
    let mut t = Table::new(&HSTAR_HEADER);
    for &(_, s) in cases {
        for &e in &epss {
            for row in hstar_rows(family, e, s) {
                t.push(row);
            }
        }
    }
    write(dir, &format!("{stem}_hstar.csv"), &t)
}

/// Cycles at one value of a and their orbits.
fn three_cycles(a: f64, eps: f64, dir: &Path, stem: &str) -> Result<(), CliError> {
    let (k, _) = THREE_CYCLE;
    let p = Params::with_sign(a, k, MSign::Minus, eps).map_err(|e| CliError::Usage(e.to_string()))?;
    let top = p.nullcline(p.sqrt_eps());
    let ctx = json!({ "a": a, "k": k, "eps": eps, "m_sign": "minus" });
    let cycles = fixed_points(&p, top - 3.0, top).map_err(|e| CliError::numerical("cycles", e, ctx.clone()))?;
    let mut t = Table::new(&["cycle", "x0", "h", "y_fix", "log_multiplier", "stability", "kind", "residual"]);
    let mut o = Table::new(&["cycle", "t", "x", "y", "zone"]);
    for (i, c) in cycles.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            real(c.x0),
            real(c.h),
            real(c.y_fix),
            real(c.log_multiplier),
            c.stability.name().into(),
            c.kind.name().into(),
            real(c.residual),
        ]);
        let r = return_map(c.y_fix, &p).map_err(|e| CliError::numerical("return map", e, ctx.clone()))?;
        let dt = r.orbit.total_time / 2000.0;
        for (time, q, z) in r.orbit.sample(&p, dt) {
            o.push(vec![i.to_string(), real(time), real(q[0]), real(q[1]), z.name().into()]);
        }
    }
    write(dir, &format!("{stem}_cycles.csv"), &t)?;
    write(dir, &format!("{stem}_orbits.csv"), &o)
}

/// h* against k for both families and signs at one small eps.
fn hstar_curves(eps: f64, dir: &Path) -> Result<(), CliError> {
    let mut t = Table::new(&HSTAR_HEADER);
    for fam in [Family::ThreeZone, Family::FourZone] {
        for s in SIGNS {
            for row in hstar_rows(fam, eps, s) {
                t.push(row);
            }
        }
    }
    write(dir, "fig7_hstar.csv", &t)
}
