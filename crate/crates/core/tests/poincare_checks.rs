use pwl_canard::canard::halfmap_asymptotic;
use pwl_canard::model::{landmarks, Zone};
use pwl_canard::poincare::{
    compose_3z, compose_4z, fd_derivative, fixed_points, fixed_points_with, half_map, half_map_inverse, phi,
    phi_inverse, return_map, return_section, CycleKind, HalfMapKind, PhiBranch, Stability,
};
use pwl_canard::{MSign, Params};

fn three_cycle_params() -> Params {
    Params::with_sign(0.2305968812, 2.5, MSign::Minus, 0.1).unwrap()
}

fn three_cycles() -> Vec<pwl_canard::poincare::CycleRecord> {
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    fixed_points(&p, top - 3.0, top).unwrap()
}

#[test]
fn three_cycle_set_has_three_cycles_stable_unstable_stable() {
    let cs = three_cycles();
    assert_eq!(cs.len(), 3, "{cs:?}");
    let st: Vec<Stability> = cs.iter().map(|c| c.stability).collect();
    assert_eq!(st, [Stability::Stable, Stability::Unstable, Stability::Stable]);
    // Widths found by the shooting solver at the same a.
    let widths = [-0.4462, -0.46449, -1.8878];
    let mut got: Vec<f64> = cs.iter().map(|c| c.x0).collect();
    got.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (g, w) in got.iter().zip(widths) {
        assert!((g - w).abs() < 2e-3, "{got:?}");
    }
}

#[test]
fn three_cycle_count_is_mesh_independent() {
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    let coarse = fixed_points_with(&p, top - 3.0, top, 400).unwrap();
    let fine = fixed_points_with(&p, top - 3.0, top, 800).unwrap();
    assert_eq!(coarse.len(), fine.len());
}

#[test]
fn head_iff_width_below_minus_one() {
    let p = three_cycle_params();
    for c in three_cycles() {
        match c.kind {
            CycleKind::WithHead => assert!(c.x0 < -1.0),
            CycleKind::Headless => assert!(-1.0 < c.x0 && c.x0 < -p.sqrt_eps()),
        }
    }
}

#[test]
fn divergence_multiplier_matches_finite_differences() {
    let p = three_cycle_params();
    for c in three_cycles() {
        let m = c.log_multiplier.exp();
        let fd = fd_derivative(c.y_fix, &p).unwrap().to_f64();
        assert!((m - fd).abs() <= 1e-4 * m, "{m} vs {fd}");
    }
    let mid = &three_cycles()[1];
    assert!(mid.log_multiplier > 0.0);
}

#[test]
fn section_returns_below_the_tangency() {
    let p = three_cycle_params();
    let lm = landmarks(&p).unwrap();
    let top = p.nullcline(p.sqrt_eps());
    for i in 1..60 {
        let y = top - 3.0 * i as f64 / 60.0;
        if let Ok(r) = return_map(y, &p) {
            assert!(r.y_out < top, "y={y}: {}", r.y_out);
            let last = r.orbit.events.last().unwrap();
            assert_eq!(last.exit[0], return_section(&p).x);
            assert!(r.y_out <= lm.p_r[1]);
        }
    }
}

#[test]
fn return_map_equals_half_map_compositions() {
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    let (mut n3, mut n4) = (0, 0);
    // Three-zone returns only exist in a thin band under the tangency.
    let ys = (1..200).map(|i| top - 3.0 * i as f64 / 200.0).chain((1..200).map(|i| top - 0.02 * i as f64 / 200.0));
    for y in ys {
        let Ok(r) = return_map(y, &p) else { continue };
        let composed = if r.visited_ll { compose_4z(y, &p) } else { compose_3z(y, &p) };
        if let Ok(c) = composed {
            assert!((c - r.y_out).abs() <= 1e-10, "y={y}: {c} vs {}", r.y_out);
            if r.visited_ll {
                n4 += 1
            } else {
                n3 += 1
            }
        }
    }
    assert!(n3 > 0 && n4 > 0, "{n3} {n4}");
}

#[test]
fn phi_is_monotone_on_both_branches_and_round_trips() {
    let p = three_cycle_params();
    let lm = landmarks(&p).unwrap();
    let se = p.sqrt_eps();
    let three: Vec<f64> = (0..100).map(|i| -1.0 + (lm.x_s + 1.0) * i as f64 / 100.0).collect();
    let four: Vec<f64> = (1..100).map(|i| lm.x_r + (-1.0 - lm.x_r) * i as f64 / 100.0).collect();
    // Headless heights shrink towards -sqrt(eps); heights with a head grow towards -1.
    let h3: Vec<f64> = three.iter().map(|&x| phi(x, &p).unwrap()).collect();
    assert!(h3.windows(2).all(|w| w[1] < w[0]));
    let h4: Vec<f64> = four.iter().map(|&x| phi(x, &p).unwrap()).collect();
    assert!(h4.windows(2).all(|w| w[1] > w[0]));
    // The closed-form top height is the nullcline knot f(-1); the orbit through it
    // still climbs across L, so the true maximum phi(-1) sits strictly above.
    let top = phi(-1.0, &p).unwrap();
    assert!(lm.h_m == p.nullcline(-1.0) && lm.h_m < top);
    for &x in three.iter().step_by(2) {
        let h = phi(x, &p).unwrap();
        assert!(h > lm.h_s && h <= top, "x={x} h={h}");
        let back = phi_inverse(h, PhiBranch::ThreeZone, &p).unwrap();
        assert!((back - x).abs() <= 1e-10, "{x} -> {back}");
    }
    for &x in four.iter().step_by(2) {
        let back = phi_inverse(phi(x, &p).unwrap(), PhiBranch::FourZone, &p).unwrap();
        assert!((back - x).abs() <= 1e-10, "{x} -> {back}");
    }
    assert_eq!(phi(-se, &p).unwrap(), -p.m * (se + p.a));
}

#[test]
fn r_half_map_lands_exponentially_close_to_q1r() {
    let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
    let r = half_map(HalfMapKind::R, 0.5, &p).unwrap();
    let off = r.slow_offset.unwrap();
    // Independent 60-digit oracle (matrix exponential plus root solve).
    assert!((off.log_abs + 32.37631308178979).abs() < 1e-9);
    // The asymptotic display is far smaller at this eps.
    let disp = halfmap_asymptotic(HalfMapKind::R, 0.5, &p).unwrap();
    assert!((disp.log_abs - (0.5f64.ln() - 62.5)).abs() < 1e-9);
}

#[test]
fn grazing_r_passage_has_vanishing_flight_time() {
    // Just above the tangency ordinate the orbit dips into R and comes straight back.
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    let taus: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8]
        .iter()
        .map(|d| half_map(HalfMapKind::R, top + d, &p).unwrap().tau)
        .collect();
    assert!(taus.windows(2).all(|w| w[1] < w[0]), "{taus:?}");
    assert!(taus[3] < 1e-5, "{taus:?}");
}

#[test]
fn downward_c_passage_fails_near_the_tangency_below_the_hopf_like_value() {
    // Orbits starting close under the tangency spiral in C and return to the
    // right line, so they never reach the left line.
    let p = three_cycle_params();
    let top = p.nullcline(p.sqrt_eps());
    assert!(half_map(HalfMapKind::Cd, top - 1e-2, &p).is_ok());
    assert!(half_map(HalfMapKind::Cd, top - 1e-6, &p).is_err());
}

#[test]
fn inverse_l_passage_lands_near_q0l() {
    let p = Params::new(0.0, 2.0, -0.2, 0.04).unwrap();
    let lm = landmarks(&p).unwrap();
    let h = 0.5;
    let b = half_map_inverse(HalfMapKind::L, h, &p).unwrap();
    let gap = (b.y_out - lm.q0_l[1]).abs();
    let bound = (-p.k * h / (p.eps * (p.sqrt_eps() - p.a))).exp();
    assert!(gap <= bound.max(4.0 * f64::EPSILON), "{gap:e} vs {bound:e}");
}

#[test]
fn small_cycle_in_c_and_r_has_the_two_zone_multiplier() {
    // Just below the Hopf-like value a small attracting cycle visits C and R only.
    let eps: f64 = 0.05;
    let se = eps.sqrt();
    let p = Params::with_sign(0.9 * se, 1.0, MSign::Minus, eps).unwrap();
    let lm = landmarks(&p).unwrap();
    let cs = fixed_points(&p, lm.q1_r[1] - 0.5, p.nullcline(se)).unwrap();
    assert_eq!(cs.len(), 1, "{cs:?}");
    let r = return_map(cs[0].y_fix, &p).unwrap();
    let (mut tc, mut tr) = (0.0, 0.0);
    for &(z, t) in &r.times {
        match z {
            Zone::C => tc += t,
            Zone::R => tr += t,
            other => panic!("unexpected zone {other:?}"),
        }
    }
    assert!((r.log_multiplier - (-p.m * tc - tr)).abs() < 1e-12);
    assert_eq!(cs[0].stability, Stability::Stable);
}

#[test]
fn no_cycle_before_the_hopf_like_value() {
    let p = Params::new(0.5, 1.0, -0.1, 0.01).unwrap();
    let lm = landmarks(&p).unwrap();
    assert!(fixed_points(&p, lm.q1_r[1] - 0.5, lm.p_r[1]).unwrap().is_empty());
}
