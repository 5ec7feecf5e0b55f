use hygame_core::cost::*;
use hygame_core::error::Error;
use hygame_core::hjbi::ValueCertificate;
use hygame_core::hybrid_domain::*;
use hygame_core::linalg::Mat;
use hygame_core::scenarios::{builtin_scenario, Scenario, BUILTIN_SCENARIOS};
use hygame_core::simulator::*;
use hygame_core::system::*;
use proptest::prelude::*;
use std::sync::Arc;

fn closed(s: &Scenario) -> ClosedLoopSystem {
    close_loop(&s.system, s.saddle_law.as_ref().unwrap()).unwrap()
}

fn run(s: &Scenario, x0: &[f64], cfg: &SimConfig) -> SolutionPair {
    simulate_one(&closed(s), x0, cfg).unwrap()
}

fn total(pair: &SolutionPair, costs: &StageCosts) -> f64 {
    evaluate_cost(pair, costs).unwrap().total_with_tail()
}

#[test]
fn saddle_cost_equals_value_at_start() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let v0 = s.value(&s.default_x0).unwrap();
        let pair = run(&s, &s.default_x0, &s.sim);
        let j = total(&pair, &s.costs);
        assert!((j - v0).abs() < 5e-3, "{name}: cost {j} vs V {v0}");
    }
}

#[test]
fn known_totals() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let cfg = SimConfig { branch_policy: BranchPolicy::EnumerateBoth(2), ..SimConfig::default() };
    let pairs = simulate(&closed(&s), &[2.0], &cfg).unwrap();
    for p in &pairs {
        let rep = evaluate_cost(p, &s.costs).unwrap();
        assert!((rep.total - 1.792425).abs() < 1e-5, "{}", rep.total);
        assert!(rep.truncation_tail_bound.is_none());
    }

    let ball = builtin_scenario("bouncing_ball").unwrap();
    let rep = evaluate_cost(&run(&ball, &[1.0, 1.0], &ball.sim), &ball.costs).unwrap();
    assert!((rep.total - 1.5).abs() < 1e-6);
    assert_eq!(rep.flow_cost, 0.0);

    let zeno = builtin_scenario("bouncing_ball_zeno").unwrap();
    let rep = evaluate_cost(&run(&zeno, &[1.0, 1.0], &zeno.sim), &zeno.costs).unwrap();
    let tail = rep.truncation_tail_bound.expect("Zeno tail");
    assert!(tail >= 0.0 && tail < 1e-6);
    assert!((rep.total_with_tail() - 1.5).abs() < 5e-3);

    let sec = builtin_scenario("security_jump").unwrap();
    let rep = evaluate_cost(&run(&sec, &[0.0, 1.0], &sec.sim), &sec.costs).unwrap();
    assert!((rep.total - 1.0).abs() < 1e-4, "{}", rep.total);
}

#[test]
fn zero_state_costs_nothing() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let cfg = SimConfig { t_budget: 2.0, ..SimConfig::default() };
    let rep = evaluate_cost(&run(&s, &[0.0], &cfg), &s.costs).unwrap();
    assert_eq!(rep.total, 0.0);
    assert_eq!(rep.negative_samples, 0);
}

#[test]
fn empty_domain_is_an_error() {
    let arc = HybridArc { dim: 1, intervals: vec![] };
    let input = HybridInputSignal::zero(InputDims::default(), HybridTimeDomain::empty());
    let pair = SolutionPair { arc, input, terminal_status: TerminalStatus::BudgetExhausted, branch: vec![] };
    let costs = StageCosts { flow: StageCost::zero(0), jump: StageCost::zero(0), terminal: Arc::new(|_| 0.0) };
    assert!(matches!(evaluate_cost(&pair, &costs), Err(Error::EmptyDomain)));
}

#[test]
fn certificate_residuals_along_saddle_runs() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let v = s.certificate.as_ref().unwrap();
        let pair = run(&s, &s.default_x0, &s.sim);
        let fr = check_flow_certificate(&pair, &s.system, &s.costs, v, Sense::Exact, 1e-8);
        let jr = check_jump_certificate(&pair, &s.costs, v, Sense::Exact, 1e-8);
        assert!(fr.passed, "{name} flow {:e}", fr.max_abs);
        assert!(jr.passed, "{name} jump {:e}", jr.max_abs);
    }
}

#[test]
fn deviating_minimizer_cannot_gain() {
    // player 2 switches off: the value can only drop below V
    let s = builtin_scenario("bouncing_ball").unwrap();
    let law = s.saddle_law.clone().unwrap().with_d2(Arc::new(|_| vec![0.0]));
    let pair = simulate_one(&close_loop(&s.system, &law).unwrap(), &[1.0, 1.0], &s.sim).unwrap();
    let v = s.certificate.as_ref().unwrap();
    let jr = check_jump_certificate(&pair, &s.costs, v, Sense::UpperBound, 1e-9);
    assert!(jr.passed && jr.samples > 0);
    assert!(jr.max < -1e-6);
    let ub = telescoped_bound(&pair, &s.system, &s.costs, v, Sense::UpperBound, 1e-9).unwrap();
    assert!(total(&pair, &s.costs) <= ub + 1e-9);
    assert!(ub <= 1.5 + 1e-9);
}

#[test]
fn zero_certificate_is_not_an_upper_bound() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let pair = run(&s, &[2.0], &s.sim);
    let zero = ValueCertificate::quadratic(Mat::zeros(1, 1), vec![0.0], 0.0);
    let rep = check_flow_certificate(&pair, &s.system, &s.costs, &zero, Sense::UpperBound, 1e-9);
    assert!(!rep.passed && rep.max > 0.0);
    assert!(matches!(
        telescoped_bound(&pair, &s.system, &s.costs, &zero, Sense::UpperBound, 1e-9),
        Err(Error::CertificateViolated(_))
    ));
}

#[test]
fn quadrature_converges() {
    for name in ["robust_1d_nonunique", "lq_periodic_1d", "security_jump"] {
        let s = builtin_scenario(name).unwrap();
        let coarse = SimConfig { dt_max: 1e-3, ..s.sim.clone() };
        let fine = SimConfig { dt_max: 5e-4, ..s.sim.clone() };
        let a = evaluate_cost(&run(&s, &s.default_x0, &coarse), &s.costs).unwrap();
        let b = evaluate_cost(&run(&s, &s.default_x0, &fine), &s.costs).unwrap();
        assert!((a.flow_cost - b.flow_cost).abs() < 1e-6, "{name}: {} vs {}", a.flow_cost, b.flow_cost);
    }
}

#[test]
fn simpson_is_exact_on_quadratics() {
    let t: Vec<f64> = [0.0, 0.1, 0.25, 0.35, 0.6, 0.9, 1.2].to_vec();
    let f: Vec<f64> = t.iter().map(|s| 3.0 * s * s - s + 2.0).collect();
    let exact = 1.2f64.powi(3) - 0.72 + 2.4;
    assert!((integrate_samples(&t, &f) - exact).abs() < 1e-12);
}

fn cut_points(pair: &SolutionPair, fracs: &[f64]) -> Vec<HybridTime> {
    let all: Vec<HybridTime> = pair.arc.samples().map(|(h, _)| h).collect();
    fracs.iter().map(|f| all[((all.len() - 1) as f64 * f) as usize]).collect()
}

#[test]
fn cost_is_additive_over_cuts() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let pair = run(&s, &s.default_x0, &s.sim);
        let whole = evaluate_cost(&pair, &s.costs).unwrap();
        for at in cut_points(&pair, &[0.1, 0.37, 0.5, 0.82]) {
            let head = evaluate_cost(&truncate(&pair, at).unwrap(), &s.costs).unwrap();
            let tail = evaluate_cost(&remainder(&pair, at).unwrap(), &s.costs).unwrap();
            let (a, b) = (whole.flow_cost + whole.jump_cost, head.flow_cost + head.jump_cost + tail.flow_cost + tail.jump_cost);
            assert!((a - b).abs() < 1e-9, "{name} at {at:?}: {a} vs {b}");
        }
    }
}

#[test]
fn telescoping_recovers_the_value() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let v = s.certificate.as_ref().unwrap();
        let pair = run(&s, &s.default_x0, &s.sim);
        let v0 = v.value(&s.default_x0);
        for at in cut_points(&pair, &[0.0, 0.25, 0.6, 0.95]) {
            let part = truncate(&pair, at).unwrap();
            let b = telescoped_bound(&part, &s.system, &s.costs, v, Sense::Exact, 1e-7).unwrap();
            assert!((b - v0).abs() < 1e-5 * (1.0 + v0), "{name} at {at:?}: {b} vs {v0}");
        }
    }
}

#[test]
fn report_json_keys() {
    let s = builtin_scenario("bouncing_ball_zeno").unwrap();
    let js = evaluate_cost(&run(&s, &[1.0, 1.0], &s.sim), &s.costs).unwrap().to_json();
    for key in ["flow_cost", "jump_cost", "terminal_cost", "total", "tail_bound", "total_with_tail"] {
        assert!(js.get(key).is_some(), "{key}");
    }
    assert!(js["tail_bound"].is_number());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn robust_value_matches_cost(x0 in 0.05f64..2.0) {
        let s = builtin_scenario("robust_1d_nonunique").unwrap();
        let pair = run(&s, &[x0], &s.sim);
        let j = total(&pair, &s.costs);
        prop_assert!((j - s.value(&[x0]).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn ball_value_matches_cost(h in 0.0f64..2.0, v in -3.0f64..3.0) {
        prop_assume!(h > 0.0 || v > 0.0);
        let s = builtin_scenario("bouncing_ball_zeno").unwrap();
        let pair = run(&s, &[h, v], &s.sim);
        let j = total(&pair, &s.costs);
        let v0 = s.value(&[h, v]).unwrap();
        prop_assert!((j - v0).abs() < 5e-3 * (1.0 + v0), "{} vs {}", j, v0);
    }
}
