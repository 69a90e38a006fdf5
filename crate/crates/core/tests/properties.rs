//! Property tests across module boundaries: the matching solve on random
//! designs, the plant-side identity behind the matched controller, and
//! invariants along closed-loop trajectories.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrac::controller::tuning_gain;
use mrac::lti::{CompanionFilter, Rk4};
use mrac::matching::solve_matching;
use mrac::poly::{is_hurwitz, Polynomial, RationalTf};
use mrac::sim::{boeing_model, boeing_scenario, BoeingCase, ClosedLoop, ProposedLoop};
use mrac::suite::{random_polynomial, relative_matching_residual};

struct Design {
    p: Polynomial,
    z: Polynomial,
    kp: f64,
    omega: Polynomial,
    rm: Polynomial,
}

fn design(seed: u64, kp: f64) -> Design {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let m = rng.gen_range(0..n);
    Design {
        p: random_polynomial(&mut rng, n, -3.0, 1.0),
        z: random_polynomial(&mut rng, m, -3.0, -0.2),
        omega: random_polynomial(&mut rng, n - 1, -4.0, -0.5),
        rm: random_polynomial(&mut rng, n - m, -4.0, -0.5),
        kp,
    }
}

fn nonzero_gain() -> impl Strategy<Value = f64> {
    (0.05f64..5.0, any::<bool>()).prop_map(|(k, neg)| if neg { -k } else { k })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matching_residual_vanishes(seed in any::<u64>(), kp in nonzero_gain()) {
        let d = design(seed, kp);
        let g = solve_matching(&d.p, &d.z, d.kp, &d.omega, &d.rm).unwrap();
        let r = relative_matching_residual(&g, &d.p, &d.z, d.kp, &d.omega, &d.rm);
        prop_assert!(r <= 1e-8, "relative residual {r:e}");
        prop_assert_eq!(g.theta4, 1.0 / kp);
    }

    #[test]
    fn gain_scaling_moves_only_the_zero_block(seed in any::<u64>(), kp in nonzero_gain(), alpha in 0.1f64..10.0) {
        let d = design(seed, kp);
        let a = solve_matching(&d.p, &d.z, kp, &d.omega, &d.rm).unwrap();
        let b = solve_matching(&d.p, &d.z, alpha * kp, &d.omega, &d.rm).unwrap();
        let close = |x: f64, y: f64, scale: f64| (x - y).abs() <= 1e-7 * (1.0 + scale);
        let s1 = a.theta1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.theta1.iter().zip(&b.theta1) {
            prop_assert!(close(*x, *y, s1), "theta1 {x} vs {y}");
        }
        let s2 = a.theta2.iter().chain([&a.theta3]).fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.theta2.iter().chain([&a.theta3]).zip(b.theta2.iter().chain([&b.theta3])) {
            prop_assert!(close(*x, alpha * *y, s2), "theta2/theta3 {x} vs {alpha}·{y}");
        }
    }
}

/// With the ideal gains, `θ4·y = (1/Rm)[u − θ1ᵀφ1 − θ2ᵀφ2 − θ3·y]` for any
/// input when every filter starts at rest. The plant runs open loop here.
#[test]
fn matched_gains_reconstruct_output_from_any_input() {
    let plant = boeing_model();
    assert!(is_hurwitz(&plant.p), "open-loop check needs a stable plant");
    let cfg = boeing_scenario(BoeingCase::I);
    let g = solve_matching(&plant.p, &plant.z, plant.kp, &cfg.omega, &cfg.reference.rm).unwrap();
    let pf = CompanionFilter::from_tf(&plant.transfer()).unwrap();
    let of = CompanionFilter::from_tf(&RationalTf::all_pole(cfg.omega.clone()).unwrap()).unwrap();
    let rf = CompanionFilter::from_tf(&RationalTf::all_pole(cfg.reference.rm.clone()).unwrap()).unwrap();
    let (np, no, nr) = (pf.order(), of.order(), rf.order());
    let (i1, i2, ir) = (np, np + no, np + 2 * no);
    let input = |t: f64| t.sin() + 0.5 * (3.1 * t).sin() + 0.2 * (0.3 * t).cos();
    let w = |x: &[f64], t: f64| {
        let y = pf.state_output(&x[..np]);
        let th1: f64 = g.theta1.iter().zip(&x[i1..i2]).map(|(a, b)| a * b).sum();
        let th2: f64 = g.theta2.iter().zip(&x[i2..ir]).map(|(a, b)| a * b).sum();
        input(t) - th1 - th2 - g.theta3 * y
    };
    let mut x = vec![0.0; ir + nr];
    let mut rk = Rk4::new(x.len());
    let dt = 1e-3;
    let mut worst: f64 = 0.0;
    let mut y_max: f64 = 0.0;
    for k in 0..40_000 {
        let t = k as f64 * dt;
        let y = pf.state_output(&x[..np]);
        let lhs = g.theta4 * y;
        let rhs = rf.state_output(&x[ir..]);
        worst = worst.max((lhs - rhs).abs());
        y_max = y_max.max(y.abs());
        rk.step(
            |t, x, dx| {
                let u = input(t);
                let y = pf.state_output(&x[..np]);
                let wv = w(x, t);
                pf.derivative(&x[..np], u, &mut dx[..np]);
                of.derivative(&x[i1..i2], u, &mut dx[i1..i2]);
                of.derivative(&x[i2..ir], y, &mut dx[i2..ir]);
                rf.derivative(&x[ir..], wv, &mut dx[ir..]);
            },
            t,
            &mut x,
            dt,
        )
        .unwrap();
    }
    assert!(y_max > 1e-3, "trajectory too small to be informative");
    assert!(worst <= 1e-4 * (1.0 + g.theta4.abs() * y_max), "max mismatch {worst:e}");
}

struct TrajectoryChecks {
    steps: usize,
    max_asymmetry: f64,
    max_quad_increase: f64,
    min_margin_u: f64,
    sign_rule_violations: usize,
}

/// Steps the proposed loop the same way the harness does and checks the
/// per-step invariants on `ϒ`, `σ` and the two divisors.
fn check_trajectory(case: BoeingCase, t_final: f64) -> TrajectoryChecks {
    let mut cfg = boeing_scenario(case);
    cfg.sim.t_final = t_final;
    let mut lp = ProposedLoop::new(&cfg).unwrap();
    let ups = lp.layout().range("upsilon").unwrap();
    let p = lp.structure().param_len();
    let (ri, li) = (lp.structure().rho_index(), lp.structure().lambda_index());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probes: Vec<Vec<f64>> = (0..10).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let quad = |x: &[f64], z: &[f64]| -> f64 {
        let u = &x[ups.clone()];
        (0..p).map(|i| z[i] * (0..p).map(|j| u[i * p + j] * z[j]).sum::<f64>()).sum()
    };
    let mut x = lp.initial_state();
    let mut rk = Rk4::new(x.len());
    let dt = cfg.sim.dt;
    let mut out = TrajectoryChecks {
        steps: 0,
        max_asymmetry: 0.0,
        max_quad_increase: 0.0,
        min_margin_u: f64::INFINITY,
        sign_rule_violations: 0,
    };
    let mut prev: Vec<f64> = probes.iter().map(|z| quad(&x, z)).collect();
    for k in 0..cfg.sim.steps() {
        let t = k as f64 * dt;
        lp.begin_step(&x);
        let sigma = lp.sigma();
        let (rho, lambda) = (x[ups.start - p + ri], x[ups.start - p + li]);
        assert_eq!(sigma, tuning_gain(rho, lambda));
        out.min_margin_u = out.min_margin_u.min(1.0 + sigma * rho);
        let sum = sigma + lambda;
        let expected = if lambda != 0.0 { lambda.signum() } else { sigma.signum() };
        if sum == 0.0 || sum.signum() != expected {
            out.sign_rule_violations += 1;
        }
        rk.step(|t, x, dx| lp.derivative(t, x, dx), t, &mut x, dt).unwrap();
        lp.end_step(&mut x);
        let u = &x[ups.clone()];
        for i in 0..p {
            for j in 0..i {
                out.max_asymmetry = out.max_asymmetry.max((u[i * p + j] - u[j * p + i]).abs());
            }
        }
        for (z, pv) in probes.iter().zip(prev.iter_mut()) {
            let q = quad(&x, z);
            out.max_quad_increase = out.max_quad_increase.max((q - *pv) / (1.0 + pv.abs()));
            *pv = q;
        }
        out.steps += 1;
    }
    out
}

#[test]
fn trajectory_invariants_correct_sign_case() {
    let c = check_trajectory(BoeingCase::I, 20.0);
    assert_eq!(c.steps, 20_000);
    assert!(c.max_asymmetry <= 1e-10, "asymmetry {:e}", c.max_asymmetry);
    assert!(c.max_quad_increase <= 1e-10, "zᵀϒz grew by {:e}", c.max_quad_increase);
    assert!(c.min_margin_u >= 1.0, "1+σρ = {}", c.min_margin_u);
    assert_eq!(c.sign_rule_violations, 0);
}

#[test]
fn trajectory_invariants_wrong_sign_case() {
    let c = check_trajectory(BoeingCase::II, 20.0);
    assert_eq!(c.steps, 20_000);
    assert!(c.max_asymmetry <= 1e-10, "asymmetry {:e}", c.max_asymmetry);
    assert!(c.max_quad_increase <= 1e-10, "zᵀϒz grew by {:e}", c.max_quad_increase);
    assert!(c.min_margin_u >= 1.0, "1+σρ = {}", c.min_margin_u);
    assert_eq!(c.sign_rule_violations, 0);
}
