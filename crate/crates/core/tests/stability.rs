use std::sync::Arc;

use hygame_core::error::Error;
use hygame_core::hybrid_domain::TerminalStatus;
use hygame_core::linalg::Mat;
use hygame_core::scenarios::{builtin_scenario, Scenario, BUILTIN_SCENARIOS};
use hygame_core::simulator::{simulate, simulate_one, BranchPolicy, SimConfig};
use hygame_core::stability::*;
use hygame_core::system::*;

const RATE: f64 = 1.231_613_237_036_762_3;

fn closed(s: &Scenario) -> ClosedLoopSystem {
    close_loop(&s.system, s.saddle_law.as_ref().unwrap()).unwrap()
}

fn opts(s: &Scenario) -> ConvergenceOptions {
    ConvergenceOptions { cfg: s.sim.clone(), ..ConvergenceOptions::default() }
}

fn ball_alpha1(s: f64) -> f64 {
    (s / 2f64.sqrt()).min(s * s / 4.0)
}

fn ball_alpha2(s: f64) -> f64 {
    s + s * s / 2.0
}

/// `α1⁻¹(α2(d))` for the piecewise `α1` above.
fn ball_bound(d: f64) -> f64 {
    let a = ball_alpha2(d);
    (2.0 * a.sqrt()).max(2f64.sqrt() * a)
}

#[test]
fn ball_converges_geometrically() {
    let s = builtin_scenario("bouncing_ball_zeno").unwrap();
    let cfg = SimConfig { t_budget: 60.0, ..s.sim.clone() };
    let o = ConvergenceOptions { persistence: Some(Persistence::Jumping), analytic_bound: Some(Arc::new(ball_bound)), cfg, ..opts(&s) };
    let reps = check_trajectory_convergence(&closed(&s), &s.target, &[vec![1.0, 1.0], vec![2.0, -3.0], vec![0.0, 0.5]], &o);
    for r in &reps {
        assert!(r.passed, "{r:?}");
        assert_eq!(r.status, Some(TerminalStatus::ZenoTruncated));
        assert!(r.caveat.is_some());
        let q = r.geometric_ratio.unwrap();
        assert!((q - 0.7805).abs() < 1e-3, "ratio {q}");
        assert!(r.persistence_slope.unwrap() > 0.0);
    }
}

#[test]
fn ball_battery_selects_persistent_jumping() {
    let s = builtin_scenario("bouncing_ball_zeno").unwrap();
    let pts = s.grid.points();
    let rep = check_stability(
        s.certificate.as_ref(),
        &s.system,
        s.saddle_law.as_ref().unwrap(),
        &s.costs,
        &s.target,
        &pts,
        &[s.default_x0.clone()],
        ConvergenceOptions { analytic_bound: Some(Arc::new(ball_bound)), ..opts(&s) },
        1e-8,
    )
    .unwrap();
    assert_eq!(rep.condition, Some(4));
    assert!(rep.flow_pd.identically_zero && rep.jump_pd.positive_definite);
    assert!(rep.passed, "{rep:?}");
    let e = &rep.lyapunov.envelopes;
    for ((s, a1), a2) in e.s.iter().zip(&e.alpha1).zip(&e.alpha2) {
        assert!(ball_alpha1(*s) <= a1 + 1e-12 && *a2 <= ball_alpha2(*s) + 1e-12, "s={s}: {a1} {a2}");
    }
}

#[test]
fn robust_decays_at_the_closed_loop_rate() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let law = s.saddle_law.as_ref().unwrap();
    let kc = law.flow(&[1.0]);
    let lc = s.costs.flow.eval(&[1.0], &kc);
    assert!((lc - 1.1038).abs() < 1e-4, "{lc}");

    let cfg = SimConfig { branch_policy: BranchPolicy::FlowPriority, ..s.sim.clone() };
    let o = ConvergenceOptions { cfg, ..ConvergenceOptions::default() };
    let reps = check_trajectory_convergence(&closed(&s), &s.target, &[vec![2.0], vec![0.5]], &o);
    for r in &reps {
        assert!(r.passed, "{r:?}");
        assert!((r.exp_rate.unwrap() - RATE).abs() < 1e-3, "{r:?}");
    }

    // the reset branch ends on the same exponential
    let cfg = SimConfig { branch_policy: BranchPolicy::EnumerateBoth(2), ..s.sim.clone() };
    for pair in simulate(&closed(&s), &[2.0], &cfg).unwrap() {
        let r = analyse_solution(&pair, &s.target, &ConvergenceOptions::default());
        assert!(r.passed && (r.exp_rate.unwrap() - RATE).abs() < 1e-3);
    }

    let rep = check_stability(
        s.certificate.as_ref(),
        &s.system,
        law,
        &s.costs,
        &s.target,
        &s.grid.points(),
        &[vec![2.0]],
        opts(&s),
        1e-8,
    )
    .unwrap();
    assert!(matches!(rep.condition, Some(1) | Some(5)));
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn unstable_drift_fails() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let mut sys = s.system.clone();
    sys.flow_map = VectorField::linear(Mat::scalar(1.0), Mat::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let cl = close_loop(&sys, s.saddle_law.as_ref().unwrap()).unwrap();
    let reps = check_trajectory_convergence(&cl, &s.target, &[vec![1.5]], &opts(&s));
    assert!(!reps[0].passed && !reps[0].converged);
    assert!(reps[0].final_distance > 1.0);
}

#[test]
fn missing_certificate() {
    let s = builtin_scenario("security_jump").unwrap();
    let law = s.saddle_law.as_ref().unwrap();
    let pts = s.grid.points();
    assert!(matches!(
        check_lyapunov_decrease(None, &s.system, law, &s.costs, &s.target, &pts, 1e-8),
        Err(Error::CertificateMissing)
    ));
    assert!(matches!(
        check_stability(None, &s.system, law, &s.costs, &s.target, &pts, &[], opts(&s), 1e-8),
        Err(Error::CertificateMissing)
    ));
}

#[test]
fn saddle_certificates_are_lyapunov() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let rep = check_lyapunov_decrease(
            s.certificate.as_ref(),
            &s.system,
            s.saddle_law.as_ref().unwrap(),
            &s.costs,
            &s.target,
            &s.grid.points(),
            1e-8,
        )
        .unwrap();
        assert!(rep.passed, "{name}: {rep:?}");
        assert!(rep.flow_samples + rep.jump_samples > 0);
    }
}

#[test]
fn value_never_increases_along_saddle_runs() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let v = s.certificate.as_ref().unwrap();
        let pair = simulate_one(&closed(&s), &s.default_x0, &s.sim).unwrap();
        let vs: Vec<f64> = pair.arc.samples().map(|(_, x)| v.value(x)).collect();
        for w in vs.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{name}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn pd_detection() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let law = s.saddle_law.clone().unwrap();
    let on_d: Vec<Vec<f64>> = (0..=30).map(|k| vec![0.0, -3.0 + 0.1 * k as f64]).collect();
    let rep = check_pd(&s.costs.jump, &move |x| law.jump(x), &s.target, &on_d);
    assert!(rep.positive_definite && !rep.identically_zero);
    let zero = hygame_core::cost::StageCost::zero(2);
    let rep = check_pd(&zero, &|_| vec![0.0, 0.0], &s.target, &on_d);
    assert!(!rep.positive_definite && rep.identically_zero);
    assert!(!rep.witnesses.is_empty());
}

#[test]
fn periodic_game_uses_condition_one() {
    let s = builtin_scenario("lq_periodic_1d").unwrap();
    let rep = check_stability(
        s.certificate.as_ref(),
        &s.system,
        s.saddle_law.as_ref().unwrap(),
        &s.costs,
        &s.target,
        &s.grid.points(),
        &[vec![1.0, 0.0], vec![-1.5, 0.5]],
        opts(&s),
        1e-8,
    )
    .unwrap();
    assert_eq!(rep.condition, Some(1));
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn dwell_bound() {
    let s = builtin_scenario("lq_periodic_1d").unwrap();
    let pair = simulate_one(&closed(&s), &[1.0, 0.0], &s.sim).unwrap();
    // one jump per unit of flow: j ≤ t + 2
    let ok = Dwell { lambda_c: -1.0, lambda_d: 0.0, gamma: 0.5, m: 1.0 };
    assert!(ok.holds(&pair));
    let bad = Dwell { lambda_c: 0.0, lambda_d: 1.0, gamma: 0.5, m: 1.0 };
    assert!(!bad.holds(&pair));
    let o = ConvergenceOptions { dwell: Some(bad), ..opts(&s) };
    let r = analyse_solution(&pair, &s.target, &o);
    assert_eq!(r.dwell_ok, Some(false));
    assert!(!r.passed);
    assert!(select_condition(
        &check_pd(&hygame_core::cost::StageCost::zero(0), &|_| vec![], &s.target, &[vec![1.0, 0.0]]),
        &check_pd(&hygame_core::cost::StageCost::zero(0), &|_| vec![], &s.target, &[vec![1.0, 0.0]]),
        true
    ) == Some(6));
}
