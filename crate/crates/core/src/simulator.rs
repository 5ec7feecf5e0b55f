//! Solution pairs of closed-loop and input-driven hybrid systems.
//!
//! Flows are integrated with fixed-step classical RK4. Entry into the jump
//! set or the terminal set and exit from the flow set are localized by
//! bisection on the step length down to `event_tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_domain::{
    ArcInterval, FlowInput, HybridArc, HybridInputSignal, HybridTime, SolutionPair, TerminalStatus,
};
use crate::system::{ClosedLoopSystem, GameSystem, Region, Surface};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchPolicy {
    JumpPriority,
    FlowPriority,
    EnumerateBoth(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt_max: f64,
    pub event_tol: f64,
    pub t_budget: f64,
    pub j_budget: usize,
    pub min_flow_interval: f64,
    pub branch_policy: BranchPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_max: 1e-3,
            event_tol: 1e-9,
            t_budget: 20.0,
            j_budget: 1000,
            min_flow_interval: 1e-7,
            branch_policy: BranchPolicy::JumpPriority,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_max > 0.0 && self.event_tol > 0.0 && self.min_flow_interval > 0.0 && self.t_budget >= 0.0;
        if !ok {
            return Err(Error::InvalidSpec(format!("bad simulation config {self:?}")));
        }
        Ok(())
    }
}

/// One classical Runge–Kutta step of `ẋ = f(x)`.
pub fn rk4_step(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], k: &[f64], s: f64| -> Vec<f64> { a.iter().zip(k).map(|(a, k)| a + s * k).collect() };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Clone)]
struct Branch {
    t: f64,
    j: usize,
    x: Vec<f64>,
    intervals: Vec<ArcInterval>,
    flow_inputs: Vec<FlowInput>,
    jumps: Vec<Vec<f64>>,
    decisions: Vec<bool>,
    force_flow: bool,
    exited_c: bool,
}

enum FlowEvent {
    Terminal,
    Jump,
    ExitC,
    Budget,
}

struct Sim<'a> {
    cl: &'a ClosedLoopSystem,
    cfg: SimConfig,
    d_surfaces: Vec<Surface>,
}

impl Sim<'_> {
    fn sys(&self) -> &GameSystem {
        &self.cl.system
    }

    fn field(&self, x: &[f64]) -> Vec<f64> {
        self.sys().flow_map.eval(x, &[])
    }

    fn step(&self, x: &[f64], h: f64) -> Vec<f64> {
        rk4_step(&|y| self.field(y), x, h)
    }

    fn in_c(&self, x: &[f64]) -> bool {
        self.sys().flow_set.contains(x, &[])
    }

    fn in_d(&self, x: &[f64]) -> bool {
        self.sys().jump_set.contains(x, &[])
    }

    fn can_flow(&self, x: &[f64]) -> bool {
        if !self.in_c(x) {
            return false;
        }
        let probe = (10.0 * self.cfg.event_tol).min(self.cfg.dt_max);
        self.in_c(&self.step(x, probe))
    }

    /// Smallest `s ∈ (0, h]` where `pred` switches from false to true,
    /// returning the state on the requested side.
    fn bisect(&self, x: &[f64], h: f64, pred: &dyn Fn(&[f64]) -> bool, high_side: bool) -> (f64, Vec<f64>) {
        let (mut lo, mut hi) = (0.0, h);
        let mut x_hi = self.step(x, h);
        let mut x_lo = x.to_vec();
        while hi - lo > self.cfg.event_tol {
            let mid = 0.5 * (lo + hi);
            let xm = self.step(x, mid);
            if pred(&xm) {
                hi = mid;
                x_hi = xm;
            } else {
                lo = mid;
                x_lo = xm;
            }
        }
        if high_side {
            (hi, x_hi)
        } else {
            (lo, x_lo)
        }
    }

    fn d_entry(&self, x: &[f64], xb: &[f64], h: f64) -> Option<(f64, Vec<f64>)> {
        if self.d_surfaces.is_empty() {
            if self.in_d(xb) && !self.in_d(x) {
                let (s, xs) = self.bisect(x, h, &|y| self.in_d(y), true);
                return Some((s, xs));
            }
            return None;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for surf in &self.d_surfaces {
            let mut g0 = surf.eval(x);
            if g0 == 0.0 {
                let probe = (10.0 * self.cfg.event_tol).min(h);
                g0 = surf.eval(&self.step(x, probe));
            }
            if g0 == 0.0 {
                continue;
            }
            let side = g0.signum();
            let gb = surf.eval(xb);
            if gb * side > 0.0 {
                continue;
            }
            let crossed = |y: &[f64]| surf.eval(y) * side <= 0.0;
            let (s, xs) = self.bisect(x, h, &crossed, true);
            if self.in_d(&xs) && best.as_ref().map_or(true, |(bs, _)| s < *bs) {
                best = Some((s, xs));
            }
        }
        best
    }

    fn flow(&self, br: &mut Branch) -> FlowEvent {
        let cfg = &self.cfg;
        let sys = self.sys();
        loop {
            let remaining = cfg.t_budget - br.t;
            if remaining <= 1e-12 {
                return FlowEvent::Budget;
            }
            let h = cfg.dt_max.min(remaining);
            let x = br.x.clone();
            let xb = self.step(&x, h);
            if xb.iter().any(|v| !v.is_finite()) {
                return FlowEvent::ExitC;
            }

            let mut event: Option<(f64, Vec<f64>, FlowEvent)> = None;
            if sys.in_terminal(&xb) {
                let (s, xs) = self.bisect(&x, h, &|y| sys.in_terminal(y), true);
                event = Some((s, xs, FlowEvent::Terminal));
            }
            let d_hit = self.d_entry(&x, &xb, h);
            let c_exit = (!self.in_c(&xb)).then(|| self.bisect(&x, h, &|y| !self.in_c(y), false));

            if let Some((sd, xd)) = d_hit {
                let before_c = c_exit.as_ref().map_or(true, |(sc, _)| sd <= sc + 2.0 * cfg.event_tol);
                let before_x = event.as_ref().map_or(true, |(sx, _, _)| sd < *sx);
                if before_c && before_x {
                    event = Some((sd, xd, FlowEvent::Jump));
                }
            }
            if let Some((sc, xc)) = c_exit {
                if event.as_ref().map_or(true, |(s, _, _)| sc + 2.0 * cfg.event_tol < *s) {
                    event = Some((sc, xc, FlowEvent::ExitC));
                }
            }

            match event {
                Some((s, xs, kind)) => {
                    self.record(br, br.t + s, xs);
                    return kind;
                }
                None => {
                    let t_new = if h == remaining { cfg.t_budget } else { br.t + h };
                    self.record(br, t_new, xb);
                }
            }
        }
    }

    fn record(&self, br: &mut Branch, t: f64, x: Vec<f64>) {
        let u = self.cl.law.flow(&x);
        let iv = br.intervals.last_mut().unwrap();
        let fi = br.flow_inputs.last_mut().unwrap();
        let record_u = self.cl.open.dims.flow() > 0;
        if t > iv.end() {
            iv.times.push(t);
            iv.states.push(x.clone());
            if record_u {
                fi.times.push(t);
                fi.values.push(u);
            }
        } else {
            // zero-length event step: overwrite the state at this time
            *iv.states.last_mut().unwrap() = x.clone();
            if record_u {
                *fi.values.last_mut().unwrap() = u;
            }
        }
        br.t = iv.end();
        br.x = x;
    }

    fn start_interval(&self, br: &mut Branch) {
        let record_u = self.cl.open.dims.flow() > 0;
        br.intervals.push(ArcInterval { j: br.j, times: vec![br.t], states: vec![br.x.clone()] });
        br.flow_inputs.push(if record_u {
            FlowInput { times: vec![br.t], values: vec![self.cl.law.flow(&br.x)] }
        } else {
            FlowInput { times: Vec::new(), values: Vec::new() }
        });
    }

    fn run(&self, mut br: Branch, pending: &mut Vec<Branch>, spawned: &mut usize) -> Result<SolutionPair> {
        let cfg = &self.cfg;
        let status = loop {
            if self.sys().in_terminal(&br.x) {
                break TerminalStatus::ReachedTerminalSet(HybridTime { t: br.t, j: br.j });
            }
            let in_d = !br.force_flow && self.in_d(&br.x);
            let can_flow = !br.exited_c && br.t < cfg.t_budget && self.can_flow(&br.x);
            let jump = match (in_d, can_flow) {
                (true, true) => match cfg.branch_policy {
                    BranchPolicy::JumpPriority => true,
                    BranchPolicy::FlowPriority => false,
                    BranchPolicy::EnumerateBoth(max) => {
                        *spawned += 1;
                        if *spawned > max {
                            return Err(Error::BranchLimitExceeded(max));
                        }
                        let mut alt = br.clone();
                        alt.decisions.push(false);
                        alt.force_flow = true;
                        pending.push(alt);
                        br.decisions.push(true);
                        true
                    }
                },
                (true, false) => true,
                (false, true) => false,
                (false, false) => {
                    break if br.t >= cfg.t_budget - 1e-12 && self.in_c(&br.x) {
                        TerminalStatus::BudgetExhausted
                    } else {
                        TerminalStatus::FlowStalled
                    };
                }
            };
            if jump {
                if br.j >= cfg.j_budget {
                    break TerminalStatus::BudgetExhausted;
                }
                let cur = br.intervals.last().unwrap();
                let len = cur.end() - cur.start();
                if cur.j >= 1 && len > 0.0 && len < cfg.min_flow_interval {
                    break TerminalStatus::ZenoTruncated;
                }
                let ud = self.cl.law.jump(&br.x);
                let xp = self.sys().jump_map.eval(&br.x, &[]);
                br.jumps.push(ud);
                br.j += 1;
                br.x = xp;
                br.force_flow = false;
                br.exited_c = false;
                self.start_interval(&mut br);
            } else {
                let before = br.t;
                match self.flow(&mut br) {
                    FlowEvent::Terminal => {
                        break TerminalStatus::ReachedTerminalSet(HybridTime { t: br.t, j: br.j });
                    }
                    FlowEvent::Budget => break TerminalStatus::BudgetExhausted,
                    FlowEvent::Jump => {}
                    FlowEvent::ExitC => br.exited_c = true,
                }
                if br.t > before {
                    br.force_flow = false;
                }
            }
        };
        finish(br, self.cl, status)
    }
}

fn finish(br: Branch, cl: &ClosedLoopSystem, status: TerminalStatus) -> Result<SolutionPair> {
    let arc = HybridArc::new(cl.system.n, br.intervals)?;
    let domain = arc.domain();
    let input = HybridInputSignal::new(cl.open.dims, domain, br.flow_inputs, br.jumps)?;
    let mut pair = SolutionPair::new(arc, input, status)?;
    pair.branch = br.decisions;
    Ok(pair)
}

fn check_state(sys: &GameSystem, x0: &[f64]) -> Result<()> {
    if x0.len() != sys.n {
        return Err(Error::InvalidInitialState(format!("expected {} components, got {}", sys.n, x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInitialState("non-finite component".into()));
    }
    Ok(())
}

/// Maximal solutions of the closed loop from `x0`, sorted by their
/// flow/jump decision strings.
pub fn simulate(cl: &ClosedLoopSystem, x0: &[f64], cfg: &SimConfig) -> Result<Vec<SolutionPair>> {
    cfg.validate()?;
    let sys = &cl.system;
    check_state(sys, x0)?;
    if !sys.in_terminal(x0) && !sys.flow_set.contains(x0, &[]) && !sys.jump_set.contains(x0, &[]) {
        return Err(Error::InvalidInitialState(format!("{x0:?} is in neither C nor D")));
    }
    let sim = Sim { cl, cfg: *cfg, d_surfaces: sys.jump_set.surfaces() };
    let mut root = Branch {
        t: 0.0,
        j: 0,
        x: x0.to_vec(),
        intervals: Vec::new(),
        flow_inputs: Vec::new(),
        jumps: Vec::new(),
        decisions: Vec::new(),
        force_flow: false,
        exited_c: false,
    };
    sim.start_interval(&mut root);
    let mut pending = vec![root];
    let mut spawned = 1usize;
    let mut out = Vec::new();
    while let Some(br) = pending.pop() {
        out.push(sim.run(br, &mut pending, &mut spawned)?);
    }
    out.sort_by(|a, b| a.branch.cmp(&b.branch));
    Ok(out)
}

/// The unique solution driven by `u`; the input's domain schedules flows
/// and jumps.
pub fn simulate_open_loop(sys: &GameSystem, x0: &[f64], u: &HybridInputSignal, cfg: &SimConfig) -> Result<SolutionPair> {
    cfg.validate()?;
    check_state(sys, x0)?;
    if u.domain.is_empty() {
        return Err(Error::InfeasibleInput("input has an empty domain".into()));
    }
    if u.dims != sys.dims {
        return Err(Error::DimensionMismatch(format!("input dims {:?} vs system {:?}", u.dims, sys.dims)));
    }
    let record_u = sys.dims.flow() > 0;
    let mut intervals = Vec::new();
    let mut flow = Vec::new();
    let mut jumps = Vec::new();
    let mut x = x0.to_vec();
    let mut status = TerminalStatus::BudgetExhausted;
    let jn = u.domain.num_jumps();
    'outer: for j in 0..=jn {
        let (a, b) = u.domain.interval(j).unwrap();
        let mut times = vec![a];
        let mut states = vec![x.clone()];
        let mut values = vec![u.flow_at(HybridTime { t: a, j })];
        if sys.in_terminal(&x) {
            status = TerminalStatus::ReachedTerminalSet(HybridTime { t: a, j });
            intervals.push(ArcInterval { j, times, states });
            flow.push(FlowInput { times: if record_u { vec![a] } else { vec![] }, values: if record_u { values } else { vec![] } });
            break;
        }
        if b > a {
            let steps = ((b - a) / cfg.dt_max).ceil().max(1.0) as usize;
            let h = (b - a) / steps as f64;
            for k in 0..steps {
                let t0 = a + k as f64 * h;
                let uat = |s: f64| u.flow_at(HybridTime { t: s, j });
                let (u0, um, u1) = (uat(t0), uat(t0 + 0.5 * h), uat(t0 + h));
                let f = |y: &[f64], uu: &[f64]| sys.flow_map.eval(y, uu);
                let add = |p: &[f64], q: &[f64], s: f64| -> Vec<f64> { p.iter().zip(q).map(|(p, q)| p + s * q).collect() };
                let k1 = f(&x, &u0);
                let k2 = f(&add(&x, &k1, h / 2.0), &um);
                let k3 = f(&add(&x, &k2, h / 2.0), &um);
                let k4 = f(&add(&x, &k3, h), &u1);
                x = (0..x.len())
                    .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect();
                let t1 = if k + 1 == steps { b } else { t0 + h };
                if k + 1 < steps && !sys.flow_set.contains(&x, &u1) {
                    return Err(Error::InfeasibleInput(format!("state leaves C at ({t1}, {j})")));
                }
                times.push(t1);
                states.push(x.clone());
                values.push(u1);
                if sys.in_terminal(&x) {
                    status = TerminalStatus::ReachedTerminalSet(HybridTime { t: t1, j });
                    intervals.push(ArcInterval { j, times, states });
                    flow.push(if record_u { FlowInput { times: intervals.last().unwrap().times.clone(), values } } else { FlowInput { times: vec![], values: vec![] } });
                    break 'outer;
                }
            }
        }
        let fi = if record_u {
            FlowInput { times: times.clone(), values }
        } else {
            FlowInput { times: Vec::new(), values: Vec::new() }
        };
        intervals.push(ArcInterval { j, times, states });
        flow.push(fi);
        if j < jn {
            let ud = &u.jumps[j];
            if !sys.jump_set.contains(&x, ud) {
                return Err(Error::InfeasibleInput(format!("scheduled jump {j} from {x:?} is not in D")));
            }
            x = sys.jump_map.eval(&x, ud);
            jumps.push(ud.clone());
        }
    }
    let arc = HybridArc::new(sys.n, intervals)?;
    let domain = arc.domain();
    let input = HybridInputSignal::new(sys.dims, domain, flow, jumps)?;
    SolutionPair::new(arc, input, status)
}

/// Convenience: closed-loop pair with the default single-branch policy.
pub fn simulate_one(cl: &ClosedLoopSystem, x0: &[f64], cfg: &SimConfig) -> Result<SolutionPair> {
    let mut cfg = *cfg;
    if matches!(cfg.branch_policy, BranchPolicy::EnumerateBoth(_)) {
        cfg.branch_policy = BranchPolicy::JumpPriority;
    }
    Ok(simulate(cl, x0, &cfg)?.remove(0))
}

/// Whether `x` lies on a structured event surface of `region` within `tol`.
pub fn on_surface(region: &Region, x: &[f64], tol: f64) -> bool {
    region.surfaces().iter().any(|s| s.eval(x).abs() <= tol)
}
