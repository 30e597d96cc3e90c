use crcsf::barrier::{
    certificate, constraint_coefficients, estimate_lipschitz, eta, h_value, hocbf_terms, BarrierSpec, LipschitzBundle,
    SampleBox,
};
use crcsf::dynamics::{AgentModel, ControlBox, ControlInput, DynamicsConfig, HumanState, JointState, UnicycleState};
use crcsf::dynamics::substep_trajectory;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> BarrierSpec<f64> {
    BarrierSpec { safety_radius: 1.0, kappa: 1.5, hocbf_gain: 3.0, neighborhood_radius: 20.0 }
}

fn dyn_cfg() -> DynamicsConfig<f64> {
    DynamicsConfig {
        dt: 0.1,
        horizon_steps: 80,
        robot_control_bounds: ControlBox::symmetric(0.3, 1.0),
        human_control_bounds: ControlBox::symmetric(0.3, 1.0),
    }
}

fn joint(r: [f64; 4], h: [f64; 4]) -> JointState<f64> {
    JointState::new(
        UnicycleState::new(r[0], r[1], r[2], r[3]),
        vec![HumanState::Unicycle(UnicycleState::new(h[0], h[1], h[2], h[3]))],
    )
}

/// psi1 written from positions and velocities, independently of the library.
fn psi1_oracle(z: &[f64; 8], s: &BarrierSpec<f64>) -> f64 {
    let (dx, dy) = (z[0] - z[4], z[1] - z[5]);
    let (wx, wy) = (z[3] * z[2].cos() - z[7] * z[6].cos(), z[3] * z[2].sin() - z[7] * z[6].sin());
    let h = dx * dx + dy * dy - s.safety_radius * s.safety_radius;
    2.0 * (dx * wx + dy * wy) + s.kappa * h
}

fn flow(z: &[f64; 8], ur: [f64; 2], uh: [f64; 2]) -> [f64; 8] {
    [z[3] * z[2].cos(), z[3] * z[2].sin(), ur[0], ur[1], z[7] * z[6].cos(), z[7] * z[6].sin(), uh[0], uh[1]]
}

fn state_strategy() -> impl Strategy<Value = [f64; 8]> {
    (
        -3.0..3.0f64, -3.0..3.0f64, -3.1..3.1f64, 0.0..1.5f64,
        -3.0..3.0f64, -3.0..3.0f64, -3.1..3.1f64, 0.0..1.5f64,
    )
        .prop_map(|t| [t.0, t.1, t.2, t.3, t.4, t.5, t.6, t.7])
}

proptest! {
    #[test]
    fn certificate_is_affine_in_robot_control(
        z in state_strategy(),
        u1 in (-0.3..0.3f64, -1.0..1.0f64),
        u2 in (-0.3..0.3f64, -1.0..1.0f64),
        uh in (-0.3..0.3f64, -1.0..1.0f64),
        t in 0.0..1.0f64,
        eta_v in 0.0..20.0f64,
    ) {
        let x = joint([z[0], z[1], z[2], z[3]], [z[4], z[5], z[6], z[7]]);
        let s = spec();
        let uh = ControlInput::new(uh.0, uh.1);
        let a = ControlInput::new(u1.0, u1.1);
        let b = ControlInput::new(u2.0, u2.1);
        let mix = ControlInput::new(t * a.u1 + (1.0 - t) * b.u1, t * a.u2 + (1.0 - t) * b.u2);
        let c = |u| certificate(&x, 0, u, uh, &s, eta_v);
        let lhs = c(mix);
        let rhs = t * c(a) + (1.0 - t) * c(b);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn coefficients_match_finite_differences(
        z in state_strategy(),
        u in (-0.3..0.3f64, -1.0..1.0f64),
        uh in (-0.3..0.3f64, -1.0..1.0f64),
    ) {
        let x = joint([z[0], z[1], z[2], z[3]], [z[4], z[5], z[6], z[7]]);
        let s = spec();
        let uh = ControlInput::new(uh.0, uh.1);
        let hs = constraint_coefficients(&x, 0, uh, &s, 0.0);
        let c = |u1: f64, u2: f64| certificate(&x, 0, ControlInput::new(u1, u2), uh, &s, 0.0);
        let step = 1e-4;
        let g1 = (c(u.0 + step, u.1) - c(u.0 - step, u.1)) / (2.0 * step);
        let g2 = (c(u.0, u.1 + step) - c(u.0, u.1 - step)) / (2.0 * step);
        prop_assert!((g1 - hs.a.x).abs() <= 1e-5 * (1.0 + g1.abs()));
        prop_assert!((g2 - hs.a.y).abs() <= 1e-5 * (1.0 + g2.abs()));
        prop_assert!((c(0.0, 0.0) - hs.b).abs() <= 1e-9 * (1.0 + hs.b.abs()));
    }

    #[test]
    fn constraint_equals_lie_derivative_along_flow(
        z in state_strategy(),
        ur in (-0.3..0.3f64, -1.0..1.0f64),
        uh in (-0.3..0.3f64, -1.0..1.0f64),
    ) {
        let s = spec();
        let x = joint([z[0], z[1], z[2], z[3]], [z[4], z[5], z[6], z[7]]);
        let f = flow(&z, [ur.0, ur.1], [uh.0, uh.1]);
        let eps = 1e-5;
        let shifted = |sign: f64| {
            let mut y = z;
            for i in 0..8 {
                y[i] += sign * eps * f[i];
            }
            psi1_oracle(&y, &s)
        };
        let psi1_dot = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let expected = psi1_dot + s.hocbf_gain * psi1_oracle(&z, &s);
        let got = certificate(&x, 0, ControlInput::new(ur.0, ur.1), ControlInput::new(uh.0, uh.1), &s, 0.0);
        prop_assert!((got - expected).abs() <= 1e-5 * (1.0 + expected.abs()), "got {} expected {}", got, expected);

        let t = hocbf_terms(&x.robot, &x.humans[0], ControlInput::new(uh.0, uh.1), &s);
        prop_assert!((t.psi1 - psi1_oracle(&z, &s)).abs() <= 1e-9 * (1.0 + t.psi1.abs()));
    }

    #[test]
    fn eta_is_monotone_in_every_constant(
        base in proptest::array::uniform6(0.0..10.0f64),
        idx in 0usize..6,
        bump in 0.0..5.0f64,
        dt in 0.01..0.5f64,
    ) {
        let make = |v: [f64; 6]| LipschitzBundle { l_x: v[0], l_f: v[1], l_g: v[2], l_h: v[3], l_kh: v[4], b_u: v[5] };
        let mut up = base;
        up[idx] += bump;
        prop_assert!(eta(&make(up), dt) >= eta(&make(base), dt));
        prop_assert!(eta(&make(base), dt * 2.0) >= eta(&make(base), dt));
    }

    #[test]
    fn barrier_is_symmetric_in_robot_and_human(
        a in (-5.0..5.0f64, -5.0..5.0f64),
        b in (-5.0..5.0f64, -5.0..5.0f64),
    ) {
        let s = spec();
        let r1 = UnicycleState::new(a.0, a.1, 0.3, 1.0);
        let r2 = UnicycleState::new(b.0, b.1, -1.0, 0.2);
        let h1 = h_value(&r1, &HumanState::integrator(b.0, b.1), &s);
        let h2 = h_value(&r2, &HumanState::integrator(a.0, a.1), &s);
        prop_assert!((h1 - h2).abs() <= 1e-12 * (1.0 + h1.abs()));
    }
}

#[test]
fn integrator_human_uses_held_velocity() {
    let s = spec();
    let robot = UnicycleState::new(0.0, 0.0, 0.4, 0.8);
    let human = HumanState::integrator(1.5, -0.7);
    let u_h = ControlInput::new(-0.6, 0.9);
    let t = hocbf_terms(&robot, &human, u_h, &s);
    let d = [-1.5, 0.7];
    let w = [0.8 * 0.4f64.cos() + 0.6, 0.8 * 0.4f64.sin() - 0.9];
    let h = d[0] * d[0] + d[1] * d[1] - 1.0;
    let h_dot = 2.0 * (d[0] * w[0] + d[1] * w[1]);
    let b = 2.0 * (w[0] * w[0] + w[1] * w[1]) + (s.kappa + s.hocbf_gain) * h_dot + s.kappa * s.hocbf_gain * h;
    assert!((t.h - h).abs() < 1e-12);
    assert!((t.h_dot - h_dot).abs() < 1e-12);
    assert!((t.b - b).abs() < 1e-12);
    let e = [0.4f64.cos(), 0.4f64.sin()];
    assert!((t.a.x - 2.0 * 0.8 * (-d[0] * e[1] + d[1] * e[0])).abs() < 1e-12);
    assert!((t.a.y - 2.0 * (d[0] * e[0] + d[1] * e[1])).abs() < 1e-12);
}

#[test]
fn estimated_constants_bound_sampled_dynamics() {
    let s = spec();
    let sb = SampleBox {
        position_half_extent: 0.5,
        speed_min: 0.0,
        speed_max: 1.25,
        human_model: AgentModel::Unicycle,
        robot_control_bounds: ControlBox::symmetric(0.3, 1.0),
        human_control_bounds: ControlBox::symmetric(0.3, 1.0),
    };
    let bundle = estimate_lipschitz(&sb, &s, 2000, 7).unwrap();
    let (lo, hi) = sb.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_speed = 0.0f64;
    let mut worst_psi_ratio = 0.0f64;
    for _ in 0..5000 {
        let mut z = [0.0; 8];
        let mut y = [0.0; 8];
        for i in 0..8 {
            z[i] = rng.random_range(lo[i]..hi[i]);
            y[i] = (z[i] + rng.random_range(-1e-3..1e-3)).clamp(lo[i], hi[i]);
        }
        let f = flow(&z, [0.3, 1.0], [-0.3, -1.0]);
        worst_speed = worst_speed.max(f.iter().map(|v| v * v).sum::<f64>().sqrt());
        let dist = z.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist > 0.0 {
            worst_psi_ratio = worst_psi_ratio.max((psi1_oracle(&z, &s) - psi1_oracle(&y, &s)).abs() / dist);
        }
    }
    assert!(worst_speed <= bundle.l_x * 1.05, "{worst_speed} vs {}", bundle.l_x);
    assert!(worst_psi_ratio <= bundle.l_h * 1.05, "{worst_psi_ratio} vs {}", bundle.l_h);
    assert!(bundle.l_g.abs() < 1e-6);
}

#[test]
fn nonnegative_certificate_keeps_barrier_between_samples() {
    let s = spec();
    let cfg = dyn_cfg();
    let sb = SampleBox {
        position_half_extent: 1.0,
        speed_min: 0.0,
        speed_max: 1.5,
        human_model: AgentModel::Unicycle,
        robot_control_bounds: cfg.robot_control_bounds,
        human_control_bounds: cfg.human_control_bounds,
    };
    let e = eta(&estimate_lipschitz(&sb, &s, 1000, 3).unwrap(), cfg.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lo, hi) = sb.bounds();
    let mut accepted = 0;
    while accepted < 100 {
        let mut z = [0.0; 8];
        for i in 0..8 {
            z[i] = rng.random_range(lo[i]..hi[i]);
        }
        let x = joint([z[0], z[1], z[2], z[3]], [z[4], z[5], z[6], z[7]]);
        let ur = ControlInput::new(rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0));
        let uh = ControlInput::new(rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0));
        let t = hocbf_terms(&x.robot, &x.humans[0], uh, &s);
        if t.h < 0.0 || t.psi1 < 0.0 || certificate(&x, 0, ur, uh, &s, e) < 0.0 {
            continue;
        }
        accepted += 1;
        for y in substep_trajectory(&x, ur, &[uh], &cfg, 50).unwrap() {
            let h = h_value(&y.robot, &y.humans[0], &s);
            assert!(h >= -1e-6, "h = {h} from {z:?}");
        }
    }
}
