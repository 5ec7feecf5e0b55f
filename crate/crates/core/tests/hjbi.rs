use std::sync::Arc;

use hygame_core::cost::{StageCost, StageCosts};
use hygame_core::error::Error;
use hygame_core::hjbi::*;
use hygame_core::hybrid_domain::InputDims;
use hygame_core::linalg::Mat;
use hygame_core::scenarios::{ball, builtin_scenario, robust_1d, Scenario, BUILTIN_SCENARIOS};
use hygame_core::simulator::SimConfig;
use hygame_core::system::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P_ROBUST: f64 = 0.448_106_25;

fn general(c: &StageCost) -> StageCost {
    let c = c.clone();
    StageCost::General(Arc::new(move |x, u| c.eval(x, u)))
}

fn numeric_costs(s: &Scenario) -> StageCosts {
    StageCosts { flow: general(&s.costs.flow), jump: general(&s.costs.jump), terminal: s.costs.terminal.clone() }
}

fn random_points(s: &Scenario, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| s.grid.axes.iter().map(|a| if a.lo == a.hi { a.lo } else { rng.gen_range(a.lo..a.hi) }).collect())
        .collect()
}

#[test]
fn robust_hamiltonian_at_one() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let v = s.certificate.as_ref().unwrap();
    for order in [Order::MinMax, Order::MaxMin] {
        let r = hamiltonian_minmax(&[1.0], v, &s.system, &s.costs, order, None).unwrap();
        assert_eq!(r.method, Method::Analytic);
        assert!(r.value.abs() < 1e-12);
        assert!((r.u1[0] + 0.3436).abs() < 1e-4 && (r.u2[0] - 0.1120).abs() < 1e-4, "{r:?}");
        assert!((r.u1[0] + P_ROBUST / robust_1d::R_C1).abs() < 1e-6);
    }
    // jump at the reset surface
    let r = jump_minmax(&[robust_1d::MU], v, &s.system, &s.costs, Order::MinMax, None).unwrap();
    assert!((r.value - 0.4481).abs() < 1e-4);
    assert!((r.value - v.value(&[robust_1d::MU])).abs() < 1e-12);
}

#[test]
fn ball_hamiltonians() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let v = s.certificate.as_ref().unwrap();
    for x in [[0.3, 1.0], [1.7, -2.5], [0.0, 0.0]] {
        let r = hamiltonian_minmax(&x, v, &s.system, &s.costs, Order::MinMax, None).unwrap();
        assert!(r.value.abs() < 1e-14 && r.u1.is_empty() && r.u2.is_empty());
    }
    let r = jump_minmax(&[0.0, -1.0], v, &s.system, &s.costs, Order::MinMax, None).unwrap();
    assert!((r.value - 0.5).abs() < 1e-12);
    let (k1, k2) = ball::gains(ball::LAMBDA, ball::R_D1, ball::R_D2);
    assert!((r.u1[0] + k1).abs() < 1e-12 && (r.u2[0] + k2).abs() < 1e-12);
    assert!((r.u1[0] + 0.0390).abs() < 1e-4 && (r.u2[0] - 0.0195).abs() < 1e-4);
}

fn inert_system(d: InputDims) -> GameSystem {
    GameSystem {
        n: 1,
        dims: d,
        flow_set: Region::All,
        flow_map: VectorField::linear(Mat::scalar(0.5), Mat::zeros(1, d.flow())),
        jump_set: Region::All,
        jump_map: VectorField::linear(Mat::scalar(1.0), Mat::zeros(1, d.jump())),
        terminal_set: Region::Empty,
    }
}

#[test]
fn decoupled_inputs_are_zero() {
    let d = InputDims::new(1, 1, 1, 1);
    let sys = inert_system(d);
    let costs = StageCosts {
        flow: StageCost::quadratic(Mat::zeros(1, 1), Mat::diag(&[1.0, -1.0])),
        jump: StageCost::quadratic(Mat::zeros(1, 1), Mat::diag(&[1.0, -1.0])),
        terminal: Arc::new(|_| 0.0),
    };
    let v = ValueCertificate::from_p(Mat::scalar(2.0));
    let r = hamiltonian_minmax(&[1.5], &v, &sys, &costs, Order::MinMax, None).unwrap();
    assert_eq!((r.u1[0], r.u2[0]), (0.0, 0.0));
    assert!((r.value - 4.0 * 1.5 * 0.5 * 1.5).abs() < 1e-12);
    let r = jump_minmax(&[1.5], &v, &sys, &costs, Order::MinMax, None).unwrap();
    assert_eq!((r.u1[0], r.u2[0]), (0.0, 0.0));
    assert!((r.value - v.value(&[1.5])).abs() < 1e-12);

    let law = synthesize_feedback(&ValueCertificate::from_p(Mat::zeros(1, 1)), &sys, &StageCosts { flow: costs.flow.clone(), jump: costs.jump.clone(), terminal: Arc::new(|_| 0.0) }, &GridSpec::parse("0,0,1").unwrap(), 1e-9).unwrap();
    for x in [-1.0, 0.0, 2.0] {
        assert_eq!(law.flow(&[x]), vec![0.0, 0.0]);
        assert_eq!(law.jump(&[x]), vec![0.0, 0.0]);
    }
}

#[test]
fn singular_jump_blocks() {
    // identity jump map without input weights: every input is optimal
    let d = InputDims::new(0, 0, 1, 0);
    let sys = inert_system(d);
    let costs = StageCosts { flow: StageCost::zero(0), jump: StageCost::zero(1), terminal: Arc::new(|_| 0.0) };
    let v = ValueCertificate::from_p(Mat::scalar(1.0));
    assert!(matches!(jump_minmax(&[0.7], &v, &sys, &costs, Order::MinMax, None), Err(Error::SingularRv(_))));
    let bx = InputBox::uniform(1, -1.0, 1.0, 11);
    let r = jump_minmax(&[0.7], &v, &sys, &costs, Order::MinMax, Some(&bx)).unwrap();
    assert_eq!(r.method, Method::Numeric);
    assert!((r.value - 0.49).abs() < 1e-12);
}

#[test]
fn general_costs_need_a_box() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let costs = numeric_costs(&s);
    let v = s.certificate.as_ref().unwrap();
    assert!(matches!(hamiltonian_minmax(&[1.0], v, &s.system, &costs, Order::MinMax, None), Err(Error::NoInputBox)));
    let bare = GridSpec::parse("0,2,11").unwrap();
    assert!(matches!(synthesize_feedback(v, &s.system, &costs, &bare, 1e-6), Err(Error::NoInputBox)));
}

#[test]
fn numeric_search_lands_within_one_cell() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let v = s.certificate.as_ref().unwrap();
    let costs = numeric_costs(&s);
    let bx = InputBox::uniform(2, -2.0, 2.0, 201);
    let cell = 4.0 / 200.0;
    for x in [0.3, 1.0, 1.7] {
        let a = hamiltonian_minmax(&[x], v, &s.system, &s.costs, Order::MinMax, None).unwrap();
        let n = hamiltonian_minmax(&[x], v, &s.system, &costs, Order::MinMax, Some(&bx)).unwrap();
        assert_eq!(n.method, Method::Numeric);
        assert!((a.u1[0] - n.u1[0]).abs() <= cell, "{x}: {a:?} {n:?}");
        assert!((a.u2[0] - n.u2[0]).abs() <= cell, "{x}: {a:?} {n:?}");
        assert!(n.value.abs() < 1e-3);
    }

    let s = builtin_scenario("bouncing_ball").unwrap();
    let v = s.certificate.as_ref().unwrap();
    let costs = numeric_costs(&s);
    let bx = InputBox::uniform(2, -1.0, 1.0, 201);
    for x in [[0.0, -1.0], [0.0, -2.5], [0.0, -0.4]] {
        let a = jump_minmax(&x, v, &s.system, &s.costs, Order::MinMax, None).unwrap();
        let n = jump_minmax(&x, v, &s.system, &costs, Order::MinMax, Some(&bx)).unwrap();
        assert!((a.u1[0] - n.u1[0]).abs() <= 0.01 && (a.u2[0] - n.u2[0]).abs() <= 0.01, "{a:?} {n:?}");
    }
}

#[test]
fn builtins_satisfy_hjbi() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let rep = check_hjbi(s.certificate.as_ref().unwrap(), &s.system, &s.costs, &s.grid);
        assert!(rep.errors.is_empty(), "{name}: {:?}", rep.errors);
        assert!(rep.flow_points + rep.jump_points > 0);
        assert!(rep.max_flow_residual < 1e-8, "{name} flow {:e}", rep.max_flow_residual);
        assert!(rep.max_jump_residual < 1e-8, "{name} jump {:e}", rep.max_jump_residual);
        assert!(rep.max_isaacs_gap < 1e-10, "{name} gap {:e}", rep.max_isaacs_gap);
    }
}

#[test]
fn perturbed_certificates_fail() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let bad = s.certificate.as_ref().unwrap().scaled(1.1);
    let rep = check_hjbi(&bad, &s.system, &s.costs, &s.grid);
    assert!(rep.max_flow_residual > 0.01);
    assert!(matches!(
        synthesize_feedback(&bad, &s.system, &s.costs, &s.grid, 1e-6),
        Err(Error::ResidualTooLarge { .. })
    ));

    let b = builtin_scenario("bouncing_ball").unwrap();
    let bad = b.certificate.as_ref().unwrap().scaled(1.1);
    assert!(check_hjbi(&bad, &b.system, &b.costs, &b.grid).max_jump_residual > 0.01);
}

#[test]
fn synthesized_laws_match_saddle_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let law = synthesize_feedback(s.certificate.as_ref().unwrap(), &s.system, &s.costs, &s.grid, 1e-7).unwrap();
        let saddle = s.saddle_law.as_ref().unwrap();
        for x in random_points(&s, 50, &mut rng) {
            for (a, b) in law.flow(&x).iter().zip(saddle.flow(&x)) {
                assert!((a - b).abs() < 1e-8, "{name} flow at {x:?}: {a} vs {b}");
            }
            for (a, b) in law.jump(&x).iter().zip(saddle.jump(&x)) {
                assert!((a - b).abs() < 1e-8, "{name} jump at {x:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn equivalence_battery_passes_at_the_saddle() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let v = s.certificate.as_ref().unwrap();
        let law = synthesize_feedback(v, &s.system, &s.costs, &s.grid, 1e-7).unwrap();
        let rep = check_equivalent_conditions(v, &s.system, &s.costs, &law, &s.grid, 21, 1e-7);
        for c in &rep.conditions {
            assert!(c.passed, "{name} ({}): {:e} at {:?}", c.label, c.worst_violation, c.worst_at);
        }
        assert!(rep.passed);
    }
}

#[test]
fn flipped_laws_break_the_battery() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let law = s.saddle_law.as_ref().unwrap().flip_c1();
    let rep = check_equivalent_conditions(s.certificate.as_ref().unwrap(), &s.system, &s.costs, &law, &s.grid, 21, 1e-7);
    assert!(!rep.passed);
    assert!(!rep.get('a').passed && !rep.get('c').passed);
    // (b) perturbs u_C1 against the fixed κ_C2 and never reads κ_C1
    assert!(rep.get('b').passed);

    let b = builtin_scenario("bouncing_ball").unwrap();
    let law = b.saddle_law.as_ref().unwrap().flip_d1();
    let rep = check_equivalent_conditions(b.certificate.as_ref().unwrap(), &b.system, &b.costs, &law, &b.grid, 21, 1e-7);
    assert!(!rep.get('d').passed && !rep.get('f').passed);
    assert!(rep.get('e').passed);
}

#[test]
fn certificate_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let pts = random_points(&s, 100, &mut rng);
        let err = s.certificate.as_ref().unwrap().gradient_check(&pts, 1e-6);
        assert!(err < 1e-5, "{name}: {err:e}");
    }
}

#[test]
fn saddle_sweeps_order_costs() {
    let eps = parse_eps("0.8:1.2:3").unwrap();
    for (name, center) in [("robust_1d_nonunique", 4.0 * P_ROBUST), ("bouncing_ball", 1.5)] {
        let s = builtin_scenario(name).unwrap();
        let sw = saddle_sweep(&s.system, &s.costs, s.saddle_law.as_ref().unwrap(), &s.default_x0, &eps, &eps, &s.sim);
        let chk = sw.check(1e-6).unwrap();
        assert!(chk.passed, "{name}: {chk:?}");
        assert!((chk.center - center).abs() < 1e-4, "{name}: {}", chk.center);
        let csv = sw.to_csv();
        assert!(csv.starts_with("eps_u,eps_w,cost,status\n"));
        assert_eq!(csv.lines().count(), 10);
    }
}

#[test]
fn sweep_without_unit_scale_has_no_center() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let eps = [0.5, 1.5];
    let sw = saddle_sweep(&s.system, &s.costs, s.saddle_law.as_ref().unwrap(), &s.default_x0, &eps, &eps, &SimConfig::default());
    assert!(sw.check(1e-6).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn isaacs_optimizers_ignore_scale(c in 0.05f64..20.0, x in 0.0f64..2.0) {
        let s = builtin_scenario("robust_1d_nonunique").unwrap();
        let v = s.certificate.as_ref().unwrap();
        let a = hamiltonian_minmax(&[x], v, &s.system, &s.costs, Order::MinMax, None).unwrap();
        let b = hamiltonian_minmax(&[x], &v.scaled(c), &s.system, &s.costs.scaled(c), Order::MinMax, None).unwrap();
        prop_assert!((a.u1[0] - b.u1[0]).abs() < 1e-10 && (a.u2[0] - b.u2[0]).abs() < 1e-10);
        prop_assert!((c * a.value - b.value).abs() < 1e-10 * (1.0 + c));
    }
}
