use std::sync::Arc;

use hygame_core::error::Error;
use hygame_core::hybrid_domain::*;
use hygame_core::linalg::Mat;
use hygame_core::scenarios::{builtin_scenario, Scenario, BUILTIN_SCENARIOS};
use hygame_core::simulator::*;
use hygame_core::system::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RATE: f64 = 1.231_613_237_036_762_3;

fn closed(s: &Scenario) -> ClosedLoopSystem {
    close_loop(&s.system, s.saddle_law.as_ref().unwrap()).unwrap()
}

fn both(n: usize) -> SimConfig {
    SimConfig { branch_policy: BranchPolicy::EnumerateBoth(n), ..SimConfig::default() }
}

#[test]
fn robust_branches() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let pairs = simulate(&closed(&s), &[2.0], &both(2)).unwrap();
    assert_eq!(pairs.len(), 2);
    let (cont, hyb) = (&pairs[0], &pairs[1]);
    assert_eq!(cont.branch, vec![false]);
    assert_eq!(hyb.branch, vec![true]);
    assert_eq!(cont.arc.num_jumps(), 0);
    let xs: Vec<f64> = cont.arc.samples().map(|(_, x)| x[0]).collect();
    assert!(xs.windows(2).all(|w| w[1] <= w[0]));
    assert!(xs.last().unwrap().abs() < 1e-9);

    assert_eq!(hyb.arc.num_jumps(), 1);
    let th = hyb.arc.intervals[0].end();
    assert!((th - 2f64.ln() / RATE).abs() < 1e-6, "jump at {th}");
    assert!((th - 0.5628).abs() < 1e-4);
    assert!((hyb.arc.pre_jump(0)[0] - 1.0).abs() < 1e-7);
    assert_eq!(hyb.arc.post_jump(0), &[0.5]);
    // closed-form decay along the first interval
    let iv = &cont.arc.intervals[0];
    for (t, x) in iv.times.iter().zip(&iv.states).step_by(997) {
        assert!((x[0] - 2.0 * (-RATE * t).exp()).abs() < 1e-9);
    }
}

#[test]
fn branch_limit() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    assert!(matches!(simulate(&closed(&s), &[2.0], &both(1)), Err(Error::BranchLimitExceeded(1))));
}

#[test]
fn start_inside_terminal_set() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let pairs = simulate(&closed(&s), &[0.1, 0.1], &SimConfig::default()).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].terminal_status, TerminalStatus::ReachedTerminalSet(HybridTime::new(0.0, 0)));
    assert_eq!(pairs[0].arc.num_samples(), 1);
}

#[test]
fn invalid_initial_states() {
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let cl = closed(&s);
    for x0 in [vec![3.0], vec![-0.5], vec![f64::NAN], vec![1.0, 1.0]] {
        assert!(matches!(simulate(&cl, &x0, &SimConfig::default()), Err(Error::InvalidInitialState(_))), "{x0:?}");
    }
}

#[test]
fn ball_bounces_geometrically() {
    let s = builtin_scenario("bouncing_ball_zeno").unwrap();
    let pair = simulate_one(&closed(&s), &[1.0, 1.0], &s.sim).unwrap();
    assert_eq!(pair.terminal_status, TerminalStatus::ZenoTruncated);
    let ratio: f64 = -0.8 + 0.8 * (-20.0 + 10.0) / (10.0 - 20.0 - 400.0);
    assert!((ratio + 0.780488).abs() < 1e-6);
    let jumps = pair.arc.num_jumps();
    assert!(jumps > 40, "only {jumps} bounces");
    for k in 0..jumps {
        let (pre, post) = (pair.arc.pre_jump(k), pair.arc.post_jump(k));
        assert!(pre[0].abs() < 1e-8 && pre[1] <= 0.0, "bounce {k}: {pre:?}");
        assert!((post[1] - ratio * pre[1]).abs() <= 1e-15 * (1.0 + pre[1].abs()));
        assert_eq!(post[0], 0.0);
        if k + 1 < jumps && post[1] > 1e-3 {
            // parabolic flight lasts 2v
            let flight = pair.arc.intervals[k + 1].end() - pair.arc.intervals[k + 1].start();
            assert!((flight - 2.0 * post[1]).abs() < 1e-8, "bounce {k}: {flight} vs {}", 2.0 * post[1]);
        }
    }
    // first impact from (1, 1): x₁ = 1 + t − t²/2 = 0
    let t1 = 1.0 + 3f64.sqrt();
    assert!((pair.arc.intervals[0].end() - t1).abs() < 1e-8);
}

#[test]
fn ball_with_terminal_set_stops_on_entry() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let pair = simulate_one(&closed(&s), &[1.0, 1.0], &s.sim).unwrap();
    assert!(matches!(pair.terminal_status, TerminalStatus::ReachedTerminalSet(_)));
    let xf = pair.arc.final_state().unwrap();
    assert!(s.system.in_terminal(xf));
    // the sample before the last is still outside
    let all: Vec<&[f64]> = pair.arc.samples().map(|(_, x)| x).collect();
    assert!(!s.system.in_terminal(all[all.len() - 2]));
}

#[test]
fn open_loop_examples() {
    let sys = GameSystem {
        n: 1,
        dims: InputDims::default(),
        flow_set: Region::All,
        flow_map: VectorField::linear(Mat::scalar(-1.0), Mat::zeros(1, 0)),
        jump_set: Region::Empty,
        jump_map: VectorField::linear(Mat::scalar(1.0), Mat::zeros(1, 0)),
        terminal_set: Region::Empty,
    };
    let dom = HybridTimeDomain::new(vec![0.0, 2f64.ln()]).unwrap();
    let pair = simulate_open_loop(&sys, &[2.0], &HybridInputSignal::zero(InputDims::default(), dom), &SimConfig::default()).unwrap();
    assert!((pair.arc.final_state().unwrap()[0] - 1.0).abs() < 1e-6);

    let empty = HybridInputSignal::zero(InputDims::default(), HybridTimeDomain::empty());
    assert!(matches!(simulate_open_loop(&sys, &[2.0], &empty, &SimConfig::default()), Err(Error::InfeasibleInput(_))));

    let ball = builtin_scenario("bouncing_ball").unwrap();
    let u = HybridInputSignal::zero(ball.system.dims, HybridTimeDomain::discrete(1));
    let pair = simulate_open_loop(&ball.system, &[0.0, -1.0], &u, &SimConfig::default()).unwrap();
    assert_eq!(pair.arc.final_state().unwrap(), &[0.0, 0.8]);

    // a scheduled jump away from D is refused
    let dom = HybridTimeDomain::new(vec![0.0, 0.5, 0.5]).unwrap();
    let u = HybridInputSignal::zero(ball.system.dims, dom);
    assert!(matches!(
        simulate_open_loop(&ball.system, &[1.0, 0.0], &u, &SimConfig::default()),
        Err(Error::InfeasibleInput(_))
    ));
}

#[test]
fn determinism() {
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let cl = closed(&s);
        let a = simulate_one(&cl, &s.default_x0, &s.sim).unwrap();
        let b = simulate_one(&cl, &s.default_x0, &s.sim).unwrap();
        assert_eq!(write_csv(&a, None), write_csv(&b, None), "{name}");
    }
}

#[test]
fn jump_localization_on_structured_sets() {
    let cfg = SimConfig::default();
    let s = builtin_scenario("robust_1d_nonunique").unwrap();
    let hyb = simulate_one(&closed(&s), &[2.0], &cfg).unwrap();
    let lq = builtin_scenario("lq_periodic_1d").unwrap();
    let per = simulate_one(&closed(&lq), &lq.default_x0, &lq.sim).unwrap();
    let cases: [(&SolutionPair, Box<dyn Fn(&[f64]) -> f64>); 2] =
        [(&hyb, Box::new(|x: &[f64]| x[0] - 1.0)), (&per, Box::new(|x: &[f64]| 1.0 - x[1]))];
    for (pair, g) in cases {
        assert!(pair.arc.num_jumps() > 0);
        for k in 0..pair.arc.num_jumps() {
            let iv = &pair.arc.intervals[k];
            let pre = pair.arc.pre_jump(k);
            // g > 0 before the surface; the crossing is bracketed to event_tol
            assert!(g(pre).abs() <= 2.0 * cfg.event_tol * 3.0, "g(pre) = {}", g(pre));
            let earlier = eval_arc(&pair.arc, HybridTime::new(iv.end() - 2.0 * cfg.event_tol, k)).unwrap();
            assert!(g(&earlier) > 0.0);
        }
    }
}

#[test]
fn timer_stays_in_range() {
    let lq = builtin_scenario("lq_periodic_1d").unwrap();
    let pair = simulate_one(&closed(&lq), &[1.0, 0.0], &lq.sim).unwrap();
    assert_eq!(pair.arc.num_jumps(), 10);
    for (_, x) in pair.arc.samples() {
        assert!(x[1] >= 0.0 && x[1] <= 1.0 + 1e-9);
    }
}

fn endpoint_errors(sys: &GameSystem, x0: &[f64], exact: &[f64], dts: &[f64]) -> Vec<f64> {
    dts.iter()
        .map(|dt| {
            let cfg = SimConfig { dt_max: *dt, t_budget: 1.0, ..SimConfig::default() };
            let cl = ClosedLoopSystem::autonomous(sys.clone()).unwrap();
            let p = simulate_one(&cl, x0, &cfg).unwrap();
            assert!((p.arc.final_time().unwrap().t - 1.0).abs() < 1e-12);
            let xf = p.arc.final_state().unwrap();
            xf.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect()
}

fn linear(a: Mat) -> GameSystem {
    let n = a.rows();
    GameSystem {
        n,
        dims: InputDims::default(),
        flow_set: Region::All,
        flow_map: VectorField::linear(a, Mat::zeros(n, 0)),
        jump_set: Region::Empty,
        jump_map: VectorField::linear(Mat::identity(n), Mat::zeros(n, 0)),
        terminal_set: Region::Empty,
    }
}

#[test]
fn rk4_error_drops_sixteenfold() {
    let dts = [0.1, 0.05, 0.025];
    let e = endpoint_errors(&linear(Mat::scalar(-RATE)), &[2.0], &[2.0 * (-RATE).exp()], &dts);
    let rot = Mat::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
    let r = endpoint_errors(&linear(rot), &[1.0, 0.0], &[1f64.cos(), -1f64.sin()], &dts);
    for errs in [e, r] {
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 8.0, "{errs:?}");
            assert!((w[0] / w[1]).log2() >= 3.9, "{errs:?}");
        }
    }
}

#[test]
fn closing_the_loop_substitutes_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).unwrap();
        let law = s.saddle_law.clone().unwrap();
        // input-dependent regions exercise the wrapped predicate path
        let mut open = s.system.clone();
        let base = open.jump_set.clone();
        let d1 = open.dims.d1;
        open.jump_set = Region::custom(move |x, u| base.contains(x, u) && u.iter().take(d1).all(|v| v.abs() < 0.1));
        for sys in [&s.system, &open] {
            let cl = close_loop(sys, &law).unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = s.grid.axes.iter().map(|a| {
                    // snap a third of the samples onto grid lines so equality sets get hit
                    if rng.gen_bool(0.3) { a.lo } else { rng.gen_range(a.lo - 0.5..=a.hi + 0.5) }
                }).collect();
                assert_eq!(cl.system.flow_set.contains(&x, &[]), sys.flow_set.contains(&x, &law.flow(&x)), "{name} {x:?}");
                assert_eq!(cl.system.jump_set.contains(&x, &[]), sys.jump_set.contains(&x, &law.jump(&x)), "{name} {x:?}");
                let f = cl.system.flow_map.eval(&x, &[]);
                assert_eq!(f, sys.flow_map.eval(&x, &law.flow(&x)));
                assert_eq!(cl.system.jump_map.eval(&x, &[]), sys.jump_map.eval(&x, &law.jump(&x)));
            }
        }
    }
}

#[test]
fn dimension_mismatch_when_closing() {
    let s = builtin_scenario("bouncing_ball").unwrap();
    let law = FeedbackLaw::zero(InputDims::new(1, 0, 0, 0));
    assert!(matches!(close_loop(&s.system, &law), Err(Error::DimensionMismatch(_))));
}

#[test]
fn flow_stall_ends_the_solution() {
    // ẋ = 1 on C = [0, 1], nowhere to jump
    let sys = GameSystem {
        n: 1,
        dims: InputDims::default(),
        flow_set: Region::Box { lo: vec![0.0], hi: vec![1.0] },
        flow_map: VectorField::Affine { drift: Arc::new(|_| vec![1.0]), input: Arc::new(|_| Mat::zeros(1, 0)) },
        jump_set: Region::Empty,
        jump_map: VectorField::linear(Mat::identity(1), Mat::zeros(1, 0)),
        terminal_set: Region::Empty,
    };
    let p = simulate_one(&ClosedLoopSystem::autonomous(sys).unwrap(), &[0.5], &SimConfig::default()).unwrap();
    assert_eq!(p.terminal_status, TerminalStatus::FlowStalled);
    let xf = p.arc.final_state().unwrap()[0];
    assert!((xf - 1.0).abs() < 1e-8, "{xf}");
}
