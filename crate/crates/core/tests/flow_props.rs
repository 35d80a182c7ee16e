use proptest::prelude::*;
use pwl_canard::linflow::{crossing_time, flow, integrate_orbit, propagator, rk4_oracle, CrossingKind, StopRule};
use pwl_canard::model::Zone;
use pwl_canard::Params;

fn params() -> impl Strategy<Value = Params> {
    (-1.2f64..1.2, 0.3f64..3.0, -1.0f64..1.0, 1e-3f64..0.25)
        .prop_map(|(a, k, mf, eps)| Params::new(a, k, mf * eps.sqrt(), eps).unwrap())
}

fn zone() -> impl Strategy<Value = Zone> {
    prop_oneof![Just(Zone::LL), Just(Zone::L), Just(Zone::C), Just(Zone::R)]
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

/// A start point inside the zone's x-interval (clipped to |x| <= 3).
fn inside(z: Zone, p: &Params, s: f64, dy: f64) -> [f64; 2] {
    let (lo, hi) = z.interval(p);
    let (lo, hi) = (lo.max(-3.0), hi.min(3.0));
    let x = lo + s * (hi - lo);
    [x, p.nullcline(x) + dy]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn flow_is_a_semigroup(p in params(), z in zone(), s in 0.01f64..0.99, dy in -1.0f64..1.0,
                           t in 0.0f64..1.5, u in 0.0f64..1.5) {
        let q = inside(z, &p, s, dy);
        let direct = flow(z, q, t + u, &p);
        let stepped = flow(z, flow(z, q, t, &p), u, &p);
        let scale = 1.0 + norm(direct);
        prop_assert!(norm([direct[0] - stepped[0], direct[1] - stepped[1]]) <= 1e-12 * scale,
            "{direct:?} vs {stepped:?}");
    }

    #[test]
    fn flow_is_reversible(p in params(), z in zone(), s in 0.01f64..0.99, dy in -1.0f64..1.0, t in 0.0f64..1.5) {
        let q = inside(z, &p, s, dy);
        let mid = flow(z, q, t, &p);
        let back = flow(z, mid, -t, &p);
        let scale = 1.0 + norm(q).max(norm(mid));
        prop_assert!(norm([back[0] - q[0], back[1] - q[1]]) <= 1e-11 * scale, "{q:?} -> {back:?}");
    }

    #[test]
    fn monodromy_determinant_is_exp_trace_time(p in params(), z in zone(), t in 0.0f64..3.0) {
        let m = propagator(z, t, &p);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let want = (z.trace(&p) * t).exp();
        prop_assert!((det - want).abs() <= 1e-10 * want, "{det} vs {want}");
    }

    #[test]
    fn first_crossing_is_the_earliest(p in params(), z in zone(), s in 0.05f64..0.95, dy in -1.0f64..1.0) {
        let q = inside(z, &p, s, dy);
        let (lo, hi) = z.interval(&p);
        for c in [lo, hi] {
            if !c.is_finite() {
                continue;
            }
            let r = crossing_time(z, q, c, &p).unwrap();
            if r.kind == CrossingKind::None || r.time == 0.0 {
                continue;
            }
            for i in 1..1000 {
                let x = flow(z, q, r.time * i as f64 / 1000.0, &p)[0];
                prop_assert!(x > lo - 1e-12 && x < hi + 1e-12, "left the zone at step {i}: {x}");
            }
        }
    }

    #[test]
    fn orbit_events_chain_and_account_for_time(p in params(), s in 0.05f64..0.95, dy in -0.5f64..0.5) {
        let q = inside(Zone::C, &p, s, dy);
        if let Ok(o) = integrate_orbit(q, &p, StopRule::MaxEvents { n: 12 }) {
            let total: f64 = o.events.iter().map(|e| e.flight_time).sum();
            prop_assert!((total - o.total_time).abs() <= 1e-12 * (1.0 + total));
            for w in o.events.windows(2) {
                prop_assert_eq!(w[0].exit, w[1].entry);
            }
        }
    }
}

#[test]
fn exact_flow_matches_rk4_on_fixed_cases() {
    let cases = [
        (Params::new(0.2, 2.5, -0.316, 0.1).unwrap(), Zone::C, [0.1, 0.05]),
        (Params::new(0.0, 1.0, 0.1, 0.01).unwrap(), Zone::L, [-0.5, 0.6]),
        (Params::new(-0.1, 0.75, -0.2, 0.05).unwrap(), Zone::LL, [-1.5, 1.2]),
        (Params::new(0.05, 1.3, 0.1, 0.01).unwrap(), Zone::R, [0.4, -0.2]),
    ];
    for (p, z, q) in cases {
        let e = flow(z, q, 1.0, &p);
        let r = rk4_oracle(z, q, 1.0, 100_000, &p);
        assert!(norm([e[0] - r[0], e[1] - r[1]]) <= 1e-8, "{z:?}: {e:?} vs {r:?}");
    }
}
