use crate::error::CliError;
use crate::output::{emit, json_bytes, opt_real, real, Table};
use crate::{figures, Command, ParamArgs, SignArgs};
use pwl_canard::acceptance::{run_all, run_criterion};
use pwl_canard::canard::{
    a_tilde_series, hstar_root_in, hstar_series, maximal_canard, saddle_node_k_in, tau_c_series, Family, RContext,
    K_SCAN,
};
use pwl_canard::continuation::{detect_folds, hopf_check, trace_branch, Branch, Fold, Grid};
use pwl_canard::linflow::{integrate_orbit, StopRule};
use pwl_canard::model::{equilibrium_stability, landmarks};
use pwl_canard::{MSign, Params};
use serde_json::{json, Value};
use std::path::Path;

fn need(v: Option<f64>, flag: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn parse_sign(s: &str) -> Result<MSign, CliError> {
    match s {
        "minus" => Ok(MSign::Minus),
        "plus" => Ok(MSign::Plus),
        _ => Err(CliError::Usage(format!("--sign must be minus or plus, got {s:?}"))),
    }
}

fn check_eps(eps: f64) -> Result<f64, CliError> {
    // Reuse the model's own domain check.
    Params::new(0.0, 1.0, 0.0, eps).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(eps)
}

/// Sign of m from either flag; `--m` must then equal plus or minus sqrt(eps).
fn resolve_sign(m: Option<f64>, sign: Option<&str>, eps: f64) -> Result<MSign, CliError> {
    match (m, sign) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either --m or --sign, not both".into())),
        (None, Some(s)) => parse_sign(s),
        (Some(m), None) => {
            let se = eps.sqrt();
            if (m.abs() - se).abs() <= 1e-12 * se {
                Ok(if m < 0.0 { MSign::Minus } else { MSign::Plus })
            } else {
                Err(CliError::Usage(format!("this command needs |m| = sqrt(eps) = {se}, got m = {m}")))
            }
        }
        (None, None) => Err(CliError::Usage("missing --sign (or --m)".into())),
    }
}

fn full_params(p: &ParamArgs) -> Result<Params, CliError> {
    let a = need(p.a, "a")?;
    let k = need(p.k, "k")?;
    let eps = need(p.eps, "eps")?;
    let m = match (p.m, p.sign.as_deref()) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --m or --sign, not both".into())),
        (Some(m), None) => m,
        (None, Some(s)) => parse_sign(s)?.m(eps),
        (None, None) => return Err(CliError::Usage("missing --m (or --sign)".into())),
    };
    Params::new(a, k, m, eps).map_err(|e| CliError::Usage(e.to_string()))
}

struct Resolved {
    k: f64,
    eps: f64,
    sign: MSign,
}

fn sign_params(p: &SignArgs) -> Result<Resolved, CliError> {
    let k = need(p.k, "k")?;
    let eps = check_eps(need(p.eps, "eps")?)?;
    let sign = resolve_sign(p.m, p.sign.as_deref(), eps)?;
    Params::with_sign(0.0, k, sign, eps).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Resolved { k, eps, sign })
}

fn inputs(r: &Resolved) -> Value {
    json!({ "k": r.k, "eps": r.eps, "m_sign": r.sign.name(), "m": r.sign.m(r.eps) })
}

pub fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Model { params, out } => model(params, out.as_deref()),
        Command::Simulate {
            x0,
            y0,
            params,
            crossings,
            dt,
            out,
        } => simulate(*x0, *y0, params, *crossings, *dt, out.as_deref()),
        Command::Connect { params, out } => connect(params, out.as_deref()),
        Command::Branch {
            params,
            points,
            widths,
            out,
            folds,
        } => branch(params, *points, widths.as_deref(), out.as_deref(), folds.as_deref()),
        Command::Rzero { params, family, out } => rzero(params, family.as_deref(), out.as_deref()),
        Command::Snk {
            x0,
            eps,
            m,
            sign,
            k_lo,
            k_hi,
            out,
        } => snk(*x0, *eps, *m, sign.as_deref(), *k_lo, *k_hi, out.as_deref()),
        Command::Hopf { params, out } => hopf(params, out.as_deref()),
        Command::Figures { id, eps, out_dir } => figures::run(id, *eps, out_dir),
        Command::Verify { criterion } => verify(*criterion),
    }
}

fn model(args: &ParamArgs, out: Option<&Path>) -> Result<(), CliError> {
    let p = full_params(args)?;
    let lm = landmarks(&p).map_err(|e| CliError::numerical("landmarks", e, json!({ "params": p })))?;
    let report = json!({
        "params": p,
        "m_sign": p.m_sign().map(|s| s.name()),
        "landmarks": lm,
        "equilibrium": equilibrium_stability(&p),
    });
    emit(out, &json_bytes(&report)?)
}

fn simulate(
    x0: Option<f64>,
    y0: Option<f64>,
    args: &ParamArgs,
    crossings: usize,
    dt: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let q = [need(x0, "x0")?, need(y0, "y0")?];
    let p = full_params(args)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::Usage(format!("--dt must be positive, got {dt}")));
    }
    if crossings == 0 {
        return Err(CliError::Usage("--crossings must be at least 1".into()));
    }
    let orbit = integrate_orbit(q, &p, StopRule::MaxEvents { n: crossings })
        .map_err(|e| CliError::numerical("orbit", e, json!({ "start": q, "params": p })))?;
    let mut t = Table::new(&["t", "x", "y", "zone"]);
    for (time, pt, zone) in orbit.sample(&p, dt) {
        t.push(vec![real(time), real(pt[0]), real(pt[1]), zone.name().to_string()]);
    }
    emit(out, &t.to_bytes()?)
}

fn connect(args: &SignArgs, out: Option<&Path>) -> Result<(), CliError> {
    let r = sign_params(args)?;
    let c = maximal_canard(r.k, r.eps, r.sign).map_err(|e| CliError::numerical("connection", e, inputs(&r)))?;
    let a_s = a_tilde_series(r.k, r.eps, r.sign);
    let t_s = tau_c_series(r.k, r.eps, r.sign);
    let report = json!({
        "inputs": inputs(&r),
        "a_tilde": c.a_tilde,
        "tau_c": c.tau_c,
        "residual": c.residual,
        "residual_norm": c.residual_norm(),
        "valid": c.valid,
        "iterations": c.iterations,
        "series": {
            "a_tilde": a_s,
            "a_tilde_gap": c.a_tilde - a_s,
            "a_tilde_gap_over_eps2": (c.a_tilde - a_s) / (r.eps * r.eps),
            "tau_c": t_s,
            "tau_c_gap": c.tau_c - t_s,
            "tau_c_gap_over_eps": (c.tau_c - t_s) / r.eps,
        },
    });
    emit(out, &json_bytes(&report)?)
}

pub fn branch_table(rows: &[(String, &Branch)]) -> Table {
    let mut t = Table::new(&[
        "label",
        "x0",
        "h",
        "a",
        "log_multiplier",
        "stability",
        "kind",
        "window_flag",
        "in_validity",
        "underflow_dominated",
        "gap_log_abs",
        "verification",
        "r_sign",
    ]);
    for (label, b) in rows {
        for p in &b.points {
            t.push(vec![
                label.clone(),
                real(p.x0),
                real(p.h),
                real(p.a),
                real(p.log_multiplier),
                p.stability.name().into(),
                p.kind.name().into(),
                u8::from(p.window).to_string(),
                u8::from(p.in_validity).to_string(),
                u8::from(p.underflow_dominated).to_string(),
                real(p.gap_to_a_tilde.log_abs),
                serde_json::to_value(p.verification).unwrap().as_str().unwrap_or("").to_string(),
                p.r_sign.map(|s| s.to_string()).unwrap_or_default(),
            ]);
        }
    }
    t
}

pub fn fold_table(rows: &[(String, Vec<Fold>)]) -> Table {
    let mut t = Table::new(&[
        "label",
        "x_star",
        "a_star",
        "side",
        "residual",
        "coarse",
        "underflow_dominated",
        "h_star",
        "hstar_gap",
    ]);
    for (label, folds) in rows {
        for f in folds {
            t.push(vec![
                label.clone(),
                real(f.x_star),
                real(f.a_star),
                f.side.name().into(),
                real(f.multiplier_residual),
                u8::from(f.coarse).to_string(),
                u8::from(f.underflow_dominated).to_string(),
                opt_real(f.h_star),
                opt_real(f.hstar_gap),
            ]);
        }
    }
    t
}

fn branch(
    args: &SignArgs,
    points: Option<usize>,
    widths: Option<&[f64]>,
    out: Option<&Path>,
    folds_out: Option<&Path>,
) -> Result<(), CliError> {
    let r = sign_params(args)?;
    let grid = match (points, widths) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --points or --widths".into())),
        (Some(n), None) if n >= 2 => Grid::Adaptive { n },
        (Some(n), None) => return Err(CliError::Usage(format!("--points must be at least 2, got {n}"))),
        (None, Some(w)) if !w.is_empty() => Grid::Widths { widths: w.to_vec() },
        (None, Some(_)) => return Err(CliError::Usage("--widths is empty".into())),
        (None, None) => Grid::default(),
    };
    let b = trace_branch(r.k, r.eps, r.sign, &grid).map_err(|e| CliError::numerical("branch", e, inputs(&r)))?;
    if b.points.is_empty() {
        let ctx = json!({ "inputs": inputs(&r), "failures": b.failures });
        return Err(CliError::numerical("branch", "no width produced a cycle", ctx));
    }
    let label = format!("k={} {}", r.k, r.sign.name());
    emit(out, &branch_table(&[(label.clone(), &b)]).to_bytes()?)?;
    if let Some(path) = folds_out {
        emit(Some(path), &fold_table(&[(label, detect_folds(&b))]).to_bytes()?)?;
    }
    Ok(())
}

fn rzero(args: &SignArgs, family: Option<&str>, out: Option<&Path>) -> Result<(), CliError> {
    let r = sign_params(args)?;
    let fams = match family {
        None => vec![Family::ThreeZone, Family::FourZone],
        Some(s) => vec![Family::parse(s).ok_or_else(|| CliError::Usage(format!("--family must be 3z or 4z, got {s:?}")))?],
    };
    let ctx = RContext::new(r.k, r.eps, r.sign).map_err(|e| CliError::numerical("connection", e, inputs(&r)))?;
    let mut per = serde_json::Map::new();
    for fam in fams {
        let root = hstar_root_in(&ctx, fam);
        let series = hstar_series(fam, r.k, r.eps, r.sign);
        let gap = match (&root, &series) {
            (Some(h), Ok(s)) => Some((h.h - s).abs() / h.h.abs()),
            _ => None,
        };
        per.insert(
            fam.name().into(),
            json!({
                "interval": ctx.interval(fam),
                "root": root,
                "series": series.as_ref().ok(),
                "series_note": series.as_ref().err().map(|e| e.to_string()),
                "relative_gap": gap,
            }),
        );
    }
    let report = json!({
        "inputs": inputs(&r),
        "a_tilde": ctx.conn.a_tilde,
        "tau_c": ctx.conn.tau_c,
        "h_m": ctx.landmarks.h_m,
        "families": per,
    });
    emit(out, &json_bytes(&report)?)
}

fn snk(
    x0: Option<f64>,
    eps: Option<f64>,
    m: Option<f64>,
    sign: Option<&str>,
    k_lo: Option<f64>,
    k_hi: Option<f64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let x0 = need(x0, "x0")?;
    let eps = check_eps(need(eps, "eps")?)?;
    let sign = resolve_sign(m, sign, eps)?;
    let lo = k_lo.unwrap_or(K_SCAN.0);
    let hi = k_hi.unwrap_or(K_SCAN.1);
    if !(lo > 0.0 && lo < hi) {
        return Err(CliError::Usage(format!("need 0 < k-lo < k-hi, got {lo}, {hi}")));
    }
    if !(x0 < -eps.sqrt()) {
        return Err(CliError::Usage(format!("--x0 must be below -sqrt(eps), got {x0}")));
    }
    let ctx = json!({ "x0": x0, "eps": eps, "m_sign": sign.name(), "k_lo": lo, "k_hi": hi });
    let sn = saddle_node_k_in(x0, eps, sign, lo, hi).map_err(|e| CliError::numerical("saddle-node k", e, ctx.clone()))?;
    emit(out, &json_bytes(&json!({ "inputs": ctx, "result": sn }))?)
}

fn hopf(args: &SignArgs, out: Option<&Path>) -> Result<(), CliError> {
    let r = sign_params(args)?;
    let h = hopf_check(r.k, r.eps, r.sign).map_err(|e| CliError::numerical("hopf", e, inputs(&r)))?;
    emit(out, &json_bytes(&h)?)
}

fn verify(criterion: Option<u8>) -> Result<(), CliError> {
    let results = match criterion {
        Some(id) if (1..=10).contains(&id) => vec![run_criterion(id)],
        Some(id) => return Err(CliError::Usage(format!("--criterion must be 1 to 10, got {id}"))),
        None => run_all(),
    };
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        Err(CliError::VerifyFailed(failed))
    } else {
        Ok(())
    }
}
