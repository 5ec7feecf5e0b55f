//! Pre-asymptotic stability checks for closed loops: positive definiteness
//! of stage costs, Lyapunov decrease of a certificate, sampled comparison
//! envelopes and trajectory convergence.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{ScalarFn, StageCost};
use crate::error::{Error, Result};
use crate::hjbi::ValueCertificate;
use crate::hybrid_domain::{SolutionPair, TerminalStatus};
use crate::linalg::{dot, norm};
use crate::simulator::{simulate_one, SimConfig};
use crate::system::{ClosedLoopSystem, FeedbackLaw, GameSystem};

const ZERO_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum TargetSet {
    Origin,
    /// Coordinates may have infinite bounds.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Custom(ScalarFn),
}

impl std::fmt::Debug for TargetSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetSet::Origin => write!(f, "Origin"),
            TargetSet::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            TargetSet::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TargetSet {
    /// Origin in the leading `n` coordinates, anything in the rest.
    pub fn origin_in(n: usize, dim: usize) -> Self {
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        lo.resize(dim, f64::NEG_INFINITY);
        hi.resize(dim, f64::INFINITY);
        TargetSet::Box { lo, hi }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            TargetSet::Origin => norm(x),
            TargetSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (l - v).max(v - h).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            TargetSet::Custom(d) => d(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdReport {
    pub samples: usize,
    /// Smallest cost seen away from the target.
    pub off_target_min: f64,
    /// Largest absolute cost seen on the target.
    pub on_target_max: f64,
    /// Largest absolute cost seen anywhere.
    pub max_abs: f64,
    pub witnesses: Vec<Vec<f64>>,
    pub positive_definite: bool,
    pub identically_zero: bool,
}

/// Samples `x ↦ ℓ(x, κ(x))` at `points`: zero on the target, positive off it.
pub fn check_pd(cost: &StageCost, kappa: &dyn Fn(&[f64]) -> Vec<f64>, target: &TargetSet, points: &[Vec<f64>]) -> PdReport {
    let mut rep = PdReport {
        samples: 0,
        off_target_min: f64::INFINITY,
        on_target_max: 0.0,
        max_abs: 0.0,
        witnesses: Vec::new(),
        positive_definite: true,
        identically_zero: true,
    };
    for x in points {
        let c = cost.eval(x, &kappa(x));
        rep.samples += 1;
        rep.max_abs = rep.max_abs.max(c.abs());
        let bad = if target.distance(x) <= ZERO_TOL {
            rep.on_target_max = rep.on_target_max.max(c.abs());
            c.abs() > ZERO_TOL
        } else {
            rep.off_target_min = rep.off_target_min.min(c);
            !(c > 0.0)
        };
        if bad {
            rep.positive_definite = false;
            if rep.witnesses.len() < 5 {
                rep.witnesses.push(x.clone());
            }
        }
    }
    rep.identically_zero = rep.max_abs <= ZERO_TOL;
    rep.positive_definite &= rep.samples > 0;
    rep
}

/// Sampled comparison functions: `α1(s) = min{V : |x|_A ≥ s}`,
/// `α2(s) = max{V : |x|_A ≤ s}` at the sampled distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub s: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

impl Envelopes {
    pub fn from_samples(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut alpha2 = Vec::with_capacity(s.len());
        let mut run = f64::NEG_INFINITY;
        for p in &pairs {
            run = run.max(p.1);
            alpha2.push(run);
        }
        let mut alpha1 = vec![0.0; s.len()];
        let mut run = f64::INFINITY;
        for (k, p) in pairs.iter().enumerate().rev() {
            run = run.min(p.1);
            alpha1[k] = run;
        }
        // ties in s share the envelope value of the whole tie group
        for k in (0..s.len().saturating_sub(1)).rev() {
            if s[k] == s[k + 1] {
                alpha1[k] = alpha1[k].min(alpha1[k + 1]);
            }
        }
        for k in 1..s.len() {
            if s[k] == s[k - 1] {
                alpha2[k - 1] = alpha2[k - 1].max(alpha2[k]);
            }
        }
        for k in (0..s.len().saturating_sub(1)).rev() {
            if s[k] == s[k + 1] {
                alpha2[k] = alpha2[k].max(alpha2[k + 1]);
            }
        }
        Envelopes { s, alpha1, alpha2 }
    }

    /// Both envelopes are positive away from the target.
    pub fn positive(&self) -> bool {
        self.s.iter().zip(&self.alpha1).all(|(s, a)| *s <= ZERO_TOL || *a > 0.0)
    }

    /// `α2(s)` at the smallest sampled distance `≥ s` (conservative).
    pub fn alpha2_at(&self, s: f64) -> Option<f64> {
        let k = self.s.iter().position(|v| *v >= s)?;
        Some(self.alpha2[k])
    }

    /// Smallest sampled `s` with `α1(s) > v`, i.e. any state with
    /// `V ≤ v` lies within that distance of the target (given sampling).
    pub fn alpha1_inverse(&self, v: f64) -> Option<f64> {
        let k = self.alpha1.iter().position(|a| *a > v)?;
        Some(self.s[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub flow_samples: usize,
    pub jump_samples: usize,
    /// Largest `⟨∇V, F_κ⟩ + L_C(x, κ_C)`.
    pub max_flow_increase: f64,
    /// Largest `V(G_κ) − V + L_D(x, κ_D)`.
    pub max_jump_increase: f64,
    pub envelopes: Envelopes,
    pub passed: bool,
}

pub fn check_lyapunov_decrease(
    v: Option<&ValueCertificate>,
    open: &GameSystem,
    law: &FeedbackLaw,
    costs: &crate::cost::StageCosts,
    target: &TargetSet,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<LyapunovReport> {
    let v = v.ok_or(Error::CertificateMissing)?;
    let mut rep = LyapunovReport {
        flow_samples: 0,
        jump_samples: 0,
        max_flow_increase: f64::NEG_INFINITY,
        max_jump_increase: f64::NEG_INFINITY,
        envelopes: Envelopes { s: vec![], alpha1: vec![], alpha2: vec![] },
        passed: false,
    };
    let mut pairs = Vec::new();
    for x in points {
        let (uc, ud) = (law.flow(x), law.jump(x));
        let in_c = open.flow_set.contains(x, &uc);
        let in_d = open.jump_set.contains(x, &ud);
        if in_c {
            rep.flow_samples += 1;
            let inc = dot(&v.gradient(x), &open.flow_map.eval(x, &uc)) + costs.flow.eval(x, &uc);
            rep.max_flow_increase = rep.max_flow_increase.max(inc);
        }
        if in_d {
            rep.jump_samples += 1;
            let inc = v.value(&open.jump_map.eval(x, &ud)) - v.value(x) + costs.jump.eval(x, &ud);
            rep.max_jump_increase = rep.max_jump_increase.max(inc);
        }
        if in_c || in_d {
            pairs.push((target.distance(x), v.value(x)));
        }
    }
    rep.envelopes = Envelopes::from_samples(pairs);
    rep.passed = rep.max_flow_increase.max(rep.max_jump_increase) <= tol && rep.envelopes.positive();
    Ok(rep)
}

pub type BoundFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Class-K bound `d ↦ α1⁻¹(α2(d))` on the distance reachable from distance `d`.
#[derive(Clone)]
pub struct KBound(pub BoundFn);

impl std::fmt::Debug for KBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KBound(..)")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Persistence {
    Jumping,
    Flowing,
}

/// `λ_C t + λ_D j ≤ M − γ(t + j)` along solutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub gamma: f64,
    pub m: f64,
}

impl Dwell {
    pub fn holds(&self, pair: &SolutionPair) -> bool {
        pair.arc
            .samples()
            .all(|(ht, _)| self.lambda_c * ht.t + self.lambda_d * ht.j as f64 <= self.m - self.gamma * ht.elapsed() + 1e-12)
    }
}

#[derive(Clone)]
pub struct ConvergenceOptions {
    pub cfg: SimConfig,
    /// Comparison functions for the bound `|x|_A ≤ α1⁻¹(α2(|x0|_A))`.
    pub envelopes: Option<Envelopes>,
    pub analytic_bound: Option<BoundFn>,
    pub final_tol: f64,
    pub persistence: Option<Persistence>,
    pub dwell: Option<Dwell>,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            cfg: SimConfig::default(),
            envelopes: None,
            analytic_bound: None,
            final_tol: 1e-3,
            persistence: None,
            dwell: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub x0: Vec<f64>,
    pub status: Option<TerminalStatus>,
    pub error: Option<String>,
    pub initial_distance: f64,
    pub max_distance: f64,
    pub final_distance: f64,
    pub bound: Option<f64>,
    pub bounded: bool,
    pub converged: bool,
    /// Least-squares ratio of successive post-jump distances.
    pub geometric_ratio: Option<f64>,
    /// Least-squares decay rate of the distance over the last flow interval.
    pub exp_rate: Option<f64>,
    /// Share of hybrid time spent jumping (or flowing) over the second half.
    pub persistence_slope: Option<f64>,
    pub dwell_ok: Option<bool>,
    pub caveat: Option<String>,
    pub passed: bool,
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx)
}

fn analyse(pair: &SolutionPair, target: &TargetSet, opts: &ConvergenceOptions) -> TrajectoryReport {
    let x0 = pair.arc.initial_state().unwrap_or(&[]).to_vec();
    let d0 = target.distance(&x0);
    let dists: Vec<f64> = pair.arc.samples().map(|(_, x)| target.distance(x)).collect();
    let max_distance = dists.iter().copied().fold(0.0, f64::max);
    let final_distance = target.distance(pair.arc.final_state().unwrap_or(&[]));
    let bound = match (&opts.analytic_bound, &opts.envelopes) {
        (Some(b), _) => Some(b(d0)),
        (None, Some(e)) => e.alpha2_at(d0).and_then(|a| e.alpha1_inverse(a)),
        _ => None,
    };
    let bounded = bound.map_or(true, |b| max_distance <= b * (1.0 + 1e-9) + 1e-12);

    let post: Vec<f64> = (0..pair.arc.num_jumps()).map(|k| target.distance(pair.arc.post_jump(k))).collect();
    let mut ks = Vec::new();
    let mut lds = Vec::new();
    for (k, d) in post.iter().enumerate() {
        if *d > 1e-6 * d0 {
            ks.push((k + 1) as f64);
            lds.push(d.ln());
        }
    }
    // x0 is off the post-jump sequence; only use it when there is nothing else
    if ks.len() < 2 {
        ks.insert(0, 0.0);
        lds.insert(0, d0.max(f64::MIN_POSITIVE).ln());
    }
    let geometric_ratio = if post.is_empty() { None } else { ls_slope(&ks, &lds).map(f64::exp) };

    let exp_rate = pair.arc.intervals.last().and_then(|iv| {
        let (ts, ls): (Vec<f64>, Vec<f64>) = iv
            .times
            .iter()
            .zip(&iv.states)
            .map(|(t, x)| (*t, target.distance(x)))
            .filter(|(_, d)| *d > 1e-12)
            .map(|(t, d)| (t, d.ln()))
            .unzip();
        ls_slope(&ts, &ls).map(|s| -s)
    });

    let persistence_slope = opts.persistence.map(|p| {
        let samples: Vec<_> = pair.arc.samples().map(|(ht, _)| ht).collect();
        let end = *samples.last().unwrap();
        let half = end.elapsed() / 2.0;
        let mid = samples.iter().copied().find(|h| h.elapsed() >= half).unwrap_or(end);
        let span = end.elapsed() - mid.elapsed();
        if span <= 0.0 {
            return 0.0;
        }
        match p {
            Persistence::Jumping => (end.j - mid.j) as f64 / span,
            Persistence::Flowing => (end.t - mid.t) / span,
        }
    });

    let dwell_ok = opts.dwell.map(|d| d.holds(pair));
    let caveat = match pair.terminal_status {
        TerminalStatus::ZenoTruncated => Some("Zeno: convergence judged on a truncated solution".to_string()),
        _ => None,
    };
    let decreasing = geometric_ratio.map_or(false, |r| r < 1.0) || exp_rate.map_or(false, |r| r > 0.0);
    let converged = final_distance < opts.final_tol || (pair.terminal_status == TerminalStatus::BudgetExhausted && decreasing);
    let persistent = persistence_slope.map_or(true, |s| s > 0.0);
    let passed = bounded && converged && persistent && dwell_ok.unwrap_or(true);
    TrajectoryReport {
        x0,
        status: Some(pair.terminal_status),
        error: None,
        initial_distance: d0,
        max_distance,
        final_distance,
        bound,
        bounded,
        converged,
        geometric_ratio,
        exp_rate,
        persistence_slope,
        dwell_ok,
        caveat,
        passed,
    }
}

/// Simulates from every `x0` and checks boundedness and convergence.
pub fn check_trajectory_convergence(
    cl: &ClosedLoopSystem,
    target: &TargetSet,
    x0s: &[Vec<f64>],
    opts: &ConvergenceOptions,
) -> Vec<TrajectoryReport> {
    x0s.par_iter()
        .map(|x0| match simulate_one(cl, x0, &opts.cfg) {
            Ok(pair) => analyse(&pair, target, opts),
            Err(e) => TrajectoryReport {
                x0: x0.clone(),
                status: None,
                error: Some(e.to_string()),
                initial_distance: target.distance(x0),
                max_distance: f64::NAN,
                final_distance: f64::NAN,
                bound: None,
                bounded: false,
                converged: false,
                geometric_ratio: None,
                exp_rate: None,
                persistence_slope: None,
                dwell_ok: None,
                caveat: None,
                passed: false,
            },
        })
        .collect()
}

/// Analyses an already computed solution.
pub fn analyse_solution(pair: &SolutionPair, target: &TargetSet, opts: &ConvergenceOptions) -> TrajectoryReport {
    analyse(pair, target, opts)
}

/// Which sufficient condition the cost structure supports: 1 (both PD),
/// 4 (`L_C ≡ 0`, `L_D` PD, persistent jumping), 5 (`L_C` PD, `L_D ≡ 0`,
/// persistent flowing), 6 (dwell bound supplied).
pub fn select_condition(flow: &PdReport, jump: &PdReport, dwell: bool) -> Option<u8> {
    let flow_pd = flow.positive_definite || flow.samples == 0;
    let jump_pd = jump.positive_definite || jump.samples == 0;
    if flow_pd && jump_pd && (flow.samples > 0 || jump.samples > 0) {
        Some(1)
    } else if flow.identically_zero && jump.positive_definite {
        Some(4)
    } else if flow.positive_definite && jump.identically_zero {
        Some(5)
    } else if dwell {
        Some(6)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub condition: Option<u8>,
    pub flow_pd: PdReport,
    pub jump_pd: PdReport,
    pub lyapunov: LyapunovReport,
    pub trajectories: Vec<TrajectoryReport>,
    pub passed: bool,
}

/// Full battery: PD classification on the grid points of `C` and `D`,
/// Lyapunov decrease, then trajectories from `x0s` using the sampled
/// envelopes (or the analytic bound in `opts`).
#[allow(clippy::too_many_arguments)]
pub fn check_stability(
    v: Option<&ValueCertificate>,
    open: &GameSystem,
    law: &FeedbackLaw,
    costs: &crate::cost::StageCosts,
    target: &TargetSet,
    points: &[Vec<f64>],
    x0s: &[Vec<f64>],
    mut opts: ConvergenceOptions,
    tol: f64,
) -> Result<StabilityReport> {
    let lyapunov = check_lyapunov_decrease(v, open, law, costs, target, points, tol)?;
    let in_c: Vec<Vec<f64>> = points.iter().filter(|x| open.flow_set.contains(x, &law.flow(x))).cloned().collect();
    let in_d: Vec<Vec<f64>> = points.iter().filter(|x| open.jump_set.contains(x, &law.jump(x))).cloned().collect();
    let lf = law.clone();
    let lj = law.clone();
    let flow_pd = check_pd(&costs.flow, &move |x| lf.flow(x), target, &in_c);
    let jump_pd = check_pd(&costs.jump, &move |x| lj.jump(x), target, &in_d);
    let condition = select_condition(&flow_pd, &jump_pd, opts.dwell.is_some());
    match condition {
        Some(4) => opts.persistence = opts.persistence.or(Some(Persistence::Jumping)),
        Some(5) => opts.persistence = opts.persistence.or(Some(Persistence::Flowing)),
        _ => {}
    }
    if opts.envelopes.is_none() && opts.analytic_bound.is_none() {
        opts.envelopes = Some(lyapunov.envelopes.clone());
    }
    let cl = crate::system::close_loop(open, law)?;
    let trajectories = check_trajectory_convergence(&cl, target, x0s, &opts);
    let passed = condition.is_some() && lyapunov.passed && trajectories.iter().all(|t| t.passed);
    Ok(StabilityReport { condition, flow_pd, jump_pd, lyapunov, trajectories, passed })
}
