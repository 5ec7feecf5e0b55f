//! Hybrid cost functional and certificate-based cost bounds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjbi::ValueCertificate;
use crate::hybrid_domain::{HybridTime, SolutionPair, TerminalStatus};
use crate::linalg::{dot, Mat};
use crate::system::GameSystem;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type StageFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Stage cost `ℓ(x) + uᵀ R u` or a general function of `(x, u)`.
#[derive(Clone)]
pub enum StageCost {
    InputQuadratic { state: ScalarFn, r: Mat },
    General(StageFn),
}

impl fmt::Debug for StageCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageCost::InputQuadratic { r, .. } => write!(f, "InputQuadratic(R = {r:?})"),
            StageCost::General(_) => write!(f, "General"),
        }
    }
}

impl StageCost {
    pub fn zero(m: usize) -> Self {
        StageCost::InputQuadratic { state: Arc::new(|_| 0.0), r: Mat::zeros(m, m) }
    }

    /// `xᵀ Q x + uᵀ R u`; `Q` acts on the leading `Q.rows()` state entries.
    pub fn quadratic(q: Mat, r: Mat) -> Self {
        StageCost::InputQuadratic {
            state: Arc::new(move |x| q.quad_form(&x[..q.rows()])),
            r,
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            StageCost::InputQuadratic { state, r } => state(x) + if u.is_empty() { 0.0 } else { r.quad_form(u) },
            StageCost::General(f) => f(x, u),
        }
    }
}

#[derive(Clone)]
pub struct StageCosts {
    pub flow: StageCost,
    pub jump: StageCost,
    pub terminal: ScalarFn,
}

impl fmt::Debug for StageCosts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageCosts").field("flow", &self.flow).field("jump", &self.jump).finish()
    }
}

impl StageCosts {
    /// Multiplies every term by `c`.
    pub fn scaled(&self, c: f64) -> StageCosts {
        let sc = |s: &StageCost| match s {
            StageCost::InputQuadratic { state, r } => {
                let st = state.clone();
                StageCost::InputQuadratic { state: Arc::new(move |x| c * st(x)), r: r.scale(c) }
            }
            StageCost::General(f) => {
                let f = f.clone();
                StageCost::General(Arc::new(move |x, u| c * f(x, u)))
            }
        };
        let q = self.terminal.clone();
        StageCosts { flow: sc(&self.flow), jump: sc(&self.jump), terminal: Arc::new(move |x| c * q(x)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalCost {
    pub j: usize,
    pub flow: f64,
    /// Cost of the jump that ends this interval, if any.
    pub jump: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flow_cost: f64,
    pub jump_cost: f64,
    pub terminal_cost: f64,
    pub total: f64,
    /// Geometric estimate of the cost after a Zeno truncation.
    pub truncation_tail_bound: Option<f64>,
    /// Terminal cost at the extrapolated Zeno limit state.
    pub limit_terminal_cost: Option<f64>,
    /// Spread of `q` over the last 10% of samples.
    pub terminal_variation: f64,
    /// Stage-cost samples that came out negative.
    pub negative_samples: usize,
    pub per_interval: Vec<IntervalCost>,
}

impl CostReport {
    /// Total with the Zeno tail added and the terminal term taken at the
    /// limit state; equals `total` when no tail was estimated.
    pub fn total_with_tail(&self) -> f64 {
        match (self.truncation_tail_bound, self.limit_terminal_cost) {
            (Some(tail), Some(q)) => self.flow_cost + self.jump_cost + tail + q,
            _ => self.total,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "flow_cost": self.flow_cost,
            "jump_cost": self.jump_cost,
            "terminal_cost": self.terminal_cost,
            "total": self.total,
            "tail_bound": self.truncation_tail_bound,
            "total_with_tail": self.total_with_tail(),
        })
    }
}

/// Integral over `[a, b]` of the quadratic through three samples.
fn quad3(t: [f64; 3], f: [f64; 3], a: f64, b: f64) -> f64 {
    let d1 = (f[1] - f[0]) / (t[1] - t[0]);
    let d12 = (f[2] - f[1]) / (t[2] - t[1]);
    let d2 = (d12 - d1) / (t[2] - t[0]);
    let h0 = t[1] - t[0];
    let prim = |s: f64| {
        let u = s - t[0];
        f[0] * u + d1 * u * u / 2.0 + d2 * (u * u * u / 3.0 - h0 * u * u / 2.0)
    };
    prim(b) - prim(a)
}

/// Composite Simpson quadrature on nonuniform samples. Pairs of steps whose
/// ratio leaves `[1/4, 4]` fall back to the trapezoid rule.
pub fn integrate_samples(t: &[f64], f: &[f64]) -> f64 {
    let n = t.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (t[1] - t[0]) * (f[0] + f[1]);
    }
    let ok = |h0: f64, h1: f64| h1 >= 0.25 * h0 && h1 <= 4.0 * h0;
    let trap = |i: usize| 0.5 * (t[i + 1] - t[i]) * (f[i] + f[i + 1]);
    let mut sum = 0.0;
    let mut i = 0;
    while i + 2 < n {
        let (h0, h1) = (t[i + 1] - t[i], t[i + 2] - t[i + 1]);
        sum += if ok(h0, h1) {
            quad3([t[i], t[i + 1], t[i + 2]], [f[i], f[i + 1], f[i + 2]], t[i], t[i + 2])
        } else {
            trap(i) + trap(i + 1)
        };
        i += 2;
    }
    if i + 1 < n {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        sum += if ok(h0, h1) {
            quad3([t[i - 1], t[i], t[i + 1]], [f[i - 1], f[i], f[i + 1]], t[i], t[i + 1])
        } else {
            trap(i)
        };
    }
    sum
}

fn aitken(a: f64, b: f64, c: f64) -> f64 {
    let den = c - 2.0 * b + a;
    if den.abs() < 1e-300 || !den.is_finite() {
        return c;
    }
    let lim = c - (c - b).powi(2) / den;
    if lim.is_finite() {
        lim
    } else {
        c
    }
}

pub fn evaluate_cost(pair: &SolutionPair, costs: &StageCosts) -> Result<CostReport> {
    let arc = &pair.arc;
    if arc.intervals.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut negative = 0usize;
    let mut per_interval = Vec::with_capacity(arc.intervals.len());
    let (mut flow_cost, mut jump_cost) = (0.0, 0.0);
    for (j, iv) in arc.intervals.iter().enumerate() {
        let vals: Vec<f64> = (0..iv.len())
            .map(|i| {
                let v = costs.flow.eval(&iv.states[i], &pair.flow_input_at(j, i));
                if v < 0.0 {
                    negative += 1;
                }
                v
            })
            .collect();
        let fc = integrate_samples(&iv.times, &vals);
        flow_cost += fc;
        let jc = pair.input.jumps.get(j).map(|ud| {
            let v = costs.jump.eval(arc.pre_jump(j), ud);
            if v < 0.0 {
                negative += 1;
            }
            v
        });
        jump_cost += jc.unwrap_or(0.0);
        per_interval.push(IntervalCost { j, flow: fc, jump: jc });
    }
    let xf = arc.final_state().unwrap();
    let terminal_cost = (costs.terminal)(xf);

    let qs: Vec<f64> = arc.samples().map(|(_, x)| (costs.terminal)(x)).collect();
    let tail_start = qs.len() - (qs.len() / 10).max(1).min(qs.len());
    let tail = &qs[tail_start..];
    let terminal_variation = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().cloned().fold(f64::INFINITY, f64::min);

    let (mut tail_bound, mut limit_terminal) = (None, None);
    if pair.terminal_status == TerminalStatus::ZenoTruncated {
        if let Some((bound, xlim)) = zeno_tail(pair, &per_interval) {
            tail_bound = Some(bound);
            limit_terminal = Some((costs.terminal)(&xlim));
        }
    }
    Ok(CostReport {
        flow_cost,
        jump_cost,
        terminal_cost,
        total: flow_cost + jump_cost + terminal_cost,
        truncation_tail_bound: tail_bound,
        limit_terminal_cost: limit_terminal,
        terminal_variation,
        negative_samples: negative,
        per_interval,
    })
}

/// Fits a geometric ratio to the last per-period costs (flow interval plus
/// the jump closing it) and extrapolates the post-jump states.
fn zeno_tail(pair: &SolutionPair, per: &[IntervalCost]) -> Option<(f64, Vec<f64>)> {
    let periods: Vec<f64> = per.iter().filter_map(|c| c.jump.map(|jc| jc + c.flow)).collect();
    if periods.len() < 4 {
        return None;
    }
    let last = &periods[periods.len() - 4..];
    if last.iter().any(|c| *c <= 0.0) {
        return None;
    }
    let rho = (last[3] / last[0]).powf(1.0 / 3.0);
    if !(rho > 0.0 && rho < 1.0) {
        return None;
    }
    // the truncated pair stops before the last jump it would take, so the
    // tail starts with the period that is in progress
    let bound = last[3] * rho / (1.0 - rho);
    let k = pair.arc.num_jumps();
    let xlim = if k >= 3 {
        let (a, b, c) = (pair.arc.post_jump(k - 3), pair.arc.post_jump(k - 2), pair.arc.post_jump(k - 1));
        (0..a.len()).map(|i| aitken(a[i], b[i], c[i])).collect()
    } else {
        pair.arc.final_state()?.to_vec()
    };
    Some((bound, xlim))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    UpperBound,
    LowerBound,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub sense: Sense,
    pub samples: usize,
    pub max: f64,
    pub min: f64,
    pub max_abs: f64,
    pub worst_at: Option<HybridTime>,
    pub tol: f64,
    pub passed: bool,
}

impl ResidualReport {
    fn from_samples(sense: Sense, tol: f64, rs: &[(HybridTime, f64)]) -> Self {
        let max = rs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let min = rs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let max_abs = rs.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        let key = |r: f64| match sense {
            Sense::UpperBound => r,
            Sense::LowerBound => -r,
            Sense::Exact => r.abs(),
        };
        let worst_at = rs
            .iter()
            .max_by(|a, b| key(a.1).total_cmp(&key(b.1)))
            .map(|r| r.0);
        let passed = rs.is_empty()
            || match sense {
                Sense::UpperBound => max <= tol,
                Sense::LowerBound => min >= -tol,
                Sense::Exact => max_abs <= tol,
            };
        ResidualReport {
            sense,
            samples: rs.len(),
            max: if rs.is_empty() { 0.0 } else { max },
            min: if rs.is_empty() { 0.0 } else { min },
            max_abs,
            worst_at,
            tol,
            passed,
        }
    }
}

/// `r = L_C + ⟨∇V, F(x, u_C)⟩` at every stored flow sample.
pub fn flow_residuals(pair: &SolutionPair, sys: &GameSystem, costs: &StageCosts, v: &ValueCertificate) -> Vec<(HybridTime, f64)> {
    let mut out = Vec::new();
    for (j, iv) in pair.arc.intervals.iter().enumerate() {
        if iv.len() < 2 {
            continue;
        }
        for (i, x) in iv.states.iter().enumerate() {
            let u = pair.flow_input_at(j, i);
            let r = costs.flow.eval(x, &u) + dot(&v.gradient(x), &sys.flow_map.eval(x, &u));
            out.push((HybridTime { t: iv.times[i], j }, r));
        }
    }
    out
}

/// `r_j = L_D + V(x⁺) − V(x)` at every stored jump.
pub fn jump_residuals(pair: &SolutionPair, costs: &StageCosts, v: &ValueCertificate) -> Vec<(HybridTime, f64)> {
    let arc = &pair.arc;
    (0..arc.num_jumps())
        .map(|k| {
            let (x, xp) = (arc.pre_jump(k), arc.post_jump(k));
            let r = costs.jump.eval(x, &pair.input.jumps[k]) + v.value(xp) - v.value(x);
            (HybridTime { t: arc.intervals[k].end(), j: k }, r)
        })
        .collect()
}

pub fn check_flow_certificate(
    pair: &SolutionPair,
    sys: &GameSystem,
    costs: &StageCosts,
    v: &ValueCertificate,
    sense: Sense,
    tol: f64,
) -> ResidualReport {
    ResidualReport::from_samples(sense, tol, &flow_residuals(pair, sys, costs, v))
}

pub fn check_jump_certificate(pair: &SolutionPair, costs: &StageCosts, v: &ValueCertificate, sense: Sense, tol: f64) -> ResidualReport {
    ResidualReport::from_samples(sense, tol, &jump_residuals(pair, costs, v))
}

/// Partial cost plus `V` at the final state, after checking the residual
/// sign conditions for `sense`.
pub fn telescoped_bound(
    pair: &SolutionPair,
    sys: &GameSystem,
    costs: &StageCosts,
    v: &ValueCertificate,
    sense: Sense,
    tol: f64,
) -> Result<f64> {
    let fr = check_flow_certificate(pair, sys, costs, v, sense, tol);
    let jr = check_jump_certificate(pair, costs, v, sense, tol);
    for (name, r) in [("flow", &fr), ("jump", &jr)] {
        if !r.passed {
            return Err(Error::CertificateViolated(format!(
                "{name} residual (max {:e}, min {:e}) fails {:?} at tol {:e}",
                r.max, r.min, sense, tol
            )));
        }
    }
    let rep = evaluate_cost(pair, costs)?;
    Ok(rep.flow_cost + rep.jump_cost + v.value(pair.arc.final_state().unwrap()))
}
