//! Hybrid time, hybrid arcs, input signals and solution pairs.
//!
//! Arcs are stored as dense samples per flow interval. Interval `j` covers
//! `[t_j, t_{j+1}] × {j}`; the last sample of interval `j` and the first
//! sample of interval `j + 1` share the same `t` (pre- and post-jump state).

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when matching a requested time against stored interval ends.
const TIME_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Self {
        assert!(t >= 0.0, "hybrid time needs t >= 0, got {t}");
        HybridTime { t, j }
    }

    pub fn elapsed(&self) -> f64 {
        self.t + self.j as f64
    }
}

impl Eq for HybridTime {}

impl Ord for HybridTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.elapsed()
            .total_cmp(&other.elapsed())
            .then(self.j.cmp(&other.j))
            .then(self.t.total_cmp(&other.t))
    }
}

impl PartialOrd for HybridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for HybridTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.t, self.j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTimeDomain {
    /// `t_0 = 0, t_1, ..., t_{J+1}`; empty for the empty domain.
    pub jump_times: Vec<f64>,
    pub complete: bool,
}

impl HybridTimeDomain {
    pub fn new(jump_times: Vec<f64>) -> Result<Self> {
        if jump_times.len() == 1 {
            return Err(Error::InvalidSpec("a domain needs both ends of its first interval".into()));
        }
        if jump_times.windows(2).any(|w| w[1] < w[0]) || jump_times.first().is_some_and(|t0| *t0 < 0.0) {
            return Err(Error::InvalidSpec("jump times must be nonnegative and nondecreasing".into()));
        }
        Ok(HybridTimeDomain { jump_times, complete: false })
    }

    pub fn empty() -> Self {
        HybridTimeDomain { jump_times: Vec::new(), complete: false }
    }

    /// Purely discrete domain `{0} × {0, ..., jumps}`.
    pub fn discrete(jumps: usize) -> Self {
        HybridTimeDomain { jump_times: vec![0.0; jumps + 2], complete: false }
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// Number of jumps `J`.
    pub fn num_jumps(&self) -> usize {
        self.jump_times.len().saturating_sub(2)
    }

    pub fn num_intervals(&self) -> usize {
        self.jump_times.len().saturating_sub(1)
    }

    pub fn interval(&self, j: usize) -> Option<(f64, f64)> {
        (j + 1 < self.jump_times.len()).then(|| (self.jump_times[j], self.jump_times[j + 1]))
    }

    pub fn contains(&self, at: HybridTime) -> bool {
        self.interval(at.j)
            .is_some_and(|(a, b)| at.t >= a - TIME_EPS && at.t <= b + TIME_EPS)
    }

    /// Last point of the domain.
    pub fn end(&self) -> Option<HybridTime> {
        (!self.is_empty()).then(|| HybridTime { t: *self.jump_times.last().unwrap(), j: self.num_jumps() })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub c1: usize,
    pub c2: usize,
    pub d1: usize,
    pub d2: usize,
}

impl InputDims {
    pub fn new(c1: usize, c2: usize, d1: usize, d2: usize) -> Self {
        InputDims { c1, c2, d1, d2 }
    }

    pub fn flow(&self) -> usize {
        self.c1 + self.c2
    }

    pub fn jump(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn is_autonomous(&self) -> bool {
        self.flow() == 0 && self.jump() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcInterval {
    pub j: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl ArcInterval {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    pub dim: usize,
    pub intervals: Vec<ArcInterval>,
}

impl HybridArc {
    pub fn new(dim: usize, intervals: Vec<ArcInterval>) -> Result<Self> {
        let arc = HybridArc { dim, intervals };
        arc.validate()?;
        Ok(arc)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, iv) in self.intervals.iter().enumerate() {
            if iv.j != k || iv.times.is_empty() || iv.times.len() != iv.states.len() {
                return Err(Error::InvalidSpec(format!("malformed interval {k}")));
            }
            if iv.times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidSpec(format!("interval {k}: sample times not increasing")));
            }
            if iv.states.iter().any(|x| x.len() != self.dim) {
                return Err(Error::DimensionMismatch(format!("interval {k}: state dimension")));
            }
            if k > 0 && self.intervals[k - 1].end() != iv.start() {
                return Err(Error::InvalidSpec(format!("jump {k}: interval ends do not match")));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> HybridTimeDomain {
        if self.intervals.is_empty() {
            return HybridTimeDomain::empty();
        }
        let mut jt: Vec<f64> = self.intervals.iter().map(ArcInterval::start).collect();
        jt.push(self.intervals.last().unwrap().end());
        HybridTimeDomain { jump_times: jt, complete: false }
    }

    pub fn num_jumps(&self) -> usize {
        self.intervals.len().saturating_sub(1)
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.intervals.first().map(|iv| iv.states[0].as_slice())
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.intervals.last().map(|iv| iv.states.last().unwrap().as_slice())
    }

    pub fn final_time(&self) -> Option<HybridTime> {
        self.intervals.last().map(|iv| HybridTime { t: iv.end(), j: iv.j })
    }

    /// State just before jump `k` (end of interval `k`).
    pub fn pre_jump(&self, k: usize) -> &[f64] {
        self.intervals[k].states.last().unwrap()
    }

    /// State just after jump `k` (start of interval `k + 1`).
    pub fn post_jump(&self, k: usize) -> &[f64] {
        &self.intervals[k + 1].states[0]
    }

    /// All samples in traversal order with their hybrid times.
    pub fn samples(&self) -> impl Iterator<Item = (HybridTime, &[f64])> {
        self.intervals.iter().flat_map(|iv| {
            iv.times
                .iter()
                .zip(&iv.states)
                .map(move |(t, x)| (HybridTime { t: *t, j: iv.j }, x.as_slice()))
        })
    }

    pub fn num_samples(&self) -> usize {
        self.intervals.iter().map(ArcInterval::len).sum()
    }
}

/// Linear interpolation in a sampled interval; `t` is clamped to its ends.
fn interp(times: &[f64], values: &[Vec<f64>], t: f64) -> Vec<f64> {
    let k = times.partition_point(|s| *s <= t);
    if k == 0 {
        return values[0].clone();
    }
    if k >= times.len() {
        return values[times.len() - 1].clone();
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    values[k - 1]
        .iter()
        .zip(&values[k])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

pub fn eval_arc(arc: &HybridArc, at: HybridTime) -> Result<Vec<f64>> {
    let iv = arc
        .intervals
        .get(at.j)
        .filter(|iv| at.t >= iv.start() - TIME_EPS && at.t <= iv.end() + TIME_EPS)
        .ok_or_else(|| Error::OutOfDomain(at.to_string()))?;
    Ok(interp(&iv.times, &iv.states, at.t))
}

/// Flow input samples on one interval. Empty `times` means the flow input
/// has dimension zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowInput {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridInputSignal {
    pub dims: InputDims,
    pub domain: HybridTimeDomain,
    pub flow: Vec<FlowInput>,
    /// `u_D = (u_D1, u_D2)` for each jump.
    pub jumps: Vec<Vec<f64>>,
}

impl HybridInputSignal {
    pub fn new(dims: InputDims, domain: HybridTimeDomain, flow: Vec<FlowInput>, jumps: Vec<Vec<f64>>) -> Result<Self> {
        if jumps.len() != domain.num_jumps() {
            return Err(Error::InvalidSpec(format!(
                "{} jump inputs for {} jumps",
                jumps.len(),
                domain.num_jumps()
            )));
        }
        if flow.len() != domain.num_intervals() {
            return Err(Error::InvalidSpec("one flow input block per interval required".into()));
        }
        if jumps.iter().any(|u| u.len() != dims.jump())
            || flow.iter().flat_map(|f| &f.values).any(|u| u.len() != dims.flow())
        {
            return Err(Error::DimensionMismatch("input vector length".into()));
        }
        Ok(HybridInputSignal { dims, domain, flow, jumps })
    }

    /// Zero input on `domain`.
    pub fn zero(dims: InputDims, domain: HybridTimeDomain) -> Self {
        let flow = (0..domain.num_intervals())
            .map(|j| {
                let (a, b) = domain.interval(j).unwrap();
                FlowInput { times: vec![a, b], values: vec![vec![0.0; dims.flow()]; 2] }
            })
            .collect();
        let jumps = vec![vec![0.0; dims.jump()]; domain.num_jumps()];
        HybridInputSignal { dims, domain, flow, jumps }
    }

    /// `u_C` at hybrid time `at`, linearly interpolated.
    pub fn flow_at(&self, at: HybridTime) -> Vec<f64> {
        match self.flow.get(at.j) {
            Some(f) if !f.times.is_empty() && self.dims.flow() > 0 => interp(&f.times, &f.values, at.t),
            _ => vec![0.0; self.dims.flow()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TerminalStatus {
    ReachedTerminalSet(HybridTime),
    BudgetExhausted,
    ZenoTruncated,
    FlowStalled,
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalStatus::ReachedTerminalSet(h) => write!(f, "reached:{:e}:{}", h.t, h.j),
            TerminalStatus::BudgetExhausted => write!(f, "budget"),
            TerminalStatus::ZenoTruncated => write!(f, "zeno"),
            TerminalStatus::FlowStalled => write!(f, "stalled"),
        }
    }
}

impl TerminalStatus {
    fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad status `{s}`"));
        Ok(match s {
            "budget" => TerminalStatus::BudgetExhausted,
            "zeno" => TerminalStatus::ZenoTruncated,
            "stalled" => TerminalStatus::FlowStalled,
            _ => {
                let rest = s.strip_prefix("reached:").ok_or_else(bad)?;
                let (t, j) = rest.split_once(':').ok_or_else(bad)?;
                TerminalStatus::ReachedTerminalSet(HybridTime {
                    t: t.parse().map_err(|_| bad())?,
                    j: j.parse().map_err(|_| bad())?,
                })
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPair {
    pub arc: HybridArc,
    pub input: HybridInputSignal,
    pub terminal_status: TerminalStatus,
    /// Flow (`false`) / jump (`true`) choices taken at overlap points.
    pub branch: Vec<bool>,
}

impl SolutionPair {
    pub fn new(arc: HybridArc, input: HybridInputSignal, terminal_status: TerminalStatus) -> Result<Self> {
        if arc.domain().jump_times != input.domain.jump_times {
            return Err(Error::InvalidSpec("arc and input domains differ".into()));
        }
        Ok(SolutionPair { arc, input, terminal_status, branch: Vec::new() })
    }

    pub fn domain(&self) -> HybridTimeDomain {
        self.arc.domain()
    }

    pub fn branch_label(&self) -> String {
        self.branch.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }

    /// `u_C` at stored sample `i` of interval `j`.
    pub fn flow_input_at(&self, j: usize, i: usize) -> Vec<f64> {
        let f = &self.input.flow[j];
        if f.times.len() == self.arc.intervals[j].times.len() {
            f.values[i].clone()
        } else {
            self.input.flow_at(HybridTime { t: self.arc.intervals[j].times[i], j })
        }
    }
}

/// Restricts `pair` to hybrid times `≤ upto`.
pub fn truncate(pair: &SolutionPair, upto: HybridTime) -> Result<SolutionPair> {
    let arc = &pair.arc;
    let iv = arc
        .intervals
        .get(upto.j)
        .filter(|iv| upto.t >= iv.start() - TIME_EPS && upto.t <= iv.end() + TIME_EPS)
        .ok_or_else(|| Error::OutOfDomain(upto.to_string()))?;
    if Some(upto) == arc.final_time() {
        return Ok(pair.clone());
    }
    let t = upto.t.clamp(iv.start(), iv.end());
    let mut intervals = arc.intervals[..upto.j].to_vec();
    let mut flow = pair.input.flow[..upto.j].to_vec();

    let k = iv.times.partition_point(|s| *s < t);
    let mut times = iv.times[..k].to_vec();
    let mut states = iv.states[..k].to_vec();
    times.push(t);
    states.push(interp(&iv.times, &iv.states, t));
    let fin = &pair.input.flow[upto.j];
    let cut_flow = if fin.times.is_empty() {
        fin.clone()
    } else if fin.times == iv.times {
        let mut values = fin.values[..k].to_vec();
        values.push(interp(&fin.times, &fin.values, t));
        FlowInput { times: times.clone(), values }
    } else {
        let kk = fin.times.partition_point(|s| *s < t);
        let mut ft = fin.times[..kk].to_vec();
        let mut fv = fin.values[..kk].to_vec();
        ft.push(t);
        fv.push(interp(&fin.times, &fin.values, t));
        FlowInput { times: ft, values: fv }
    };
    intervals.push(ArcInterval { j: upto.j, times, states });
    flow.push(cut_flow);

    let new_arc = HybridArc { dim: arc.dim, intervals };
    let domain = new_arc.domain();
    let input = HybridInputSignal {
        dims: pair.input.dims,
        domain,
        flow,
        jumps: pair.input.jumps[..upto.j].to_vec(),
    };
    Ok(SolutionPair {
        arc: new_arc,
        input,
        terminal_status: TerminalStatus::BudgetExhausted,
        branch: pair.branch.clone(),
    })
}

/// Restricts `pair` to hybrid times `≥ from`, re-indexed so that `from`
/// becomes `(0, 0)`.
pub fn remainder(pair: &SolutionPair, from: HybridTime) -> Result<SolutionPair> {
    let arc = &pair.arc;
    let iv = arc
        .intervals
        .get(from.j)
        .filter(|iv| from.t >= iv.start() - TIME_EPS && from.t <= iv.end() + TIME_EPS)
        .ok_or_else(|| Error::OutOfDomain(from.to_string()))?;
    let t = from.t.clamp(iv.start(), iv.end());
    let k = iv.times.partition_point(|s| *s <= t);
    let mut times = vec![t];
    let mut states = vec![interp(&iv.times, &iv.states, t)];
    times.extend_from_slice(&iv.times[k..]);
    states.extend_from_slice(&iv.states[k..]);
    let fin = &pair.input.flow[from.j];
    let first_flow = if fin.times.is_empty() {
        fin.clone()
    } else {
        let kk = fin.times.partition_point(|s| *s <= t);
        let mut ft = vec![t];
        let mut fv = vec![interp(&fin.times, &fin.values, t)];
        ft.extend_from_slice(&fin.times[kk..]);
        fv.extend_from_slice(&fin.values[kk..]);
        FlowInput { times: ft, values: fv }
    };
    let shift = |ts: &[f64]| -> Vec<f64> { ts.iter().map(|s| s - t).collect() };
    let mut intervals = vec![ArcInterval { j: 0, times: shift(&times), states }];
    let mut flow = vec![FlowInput { times: shift(&first_flow.times), values: first_flow.values }];
    for (off, (iv, f)) in arc.intervals[from.j + 1..].iter().zip(&pair.input.flow[from.j + 1..]).enumerate() {
        intervals.push(ArcInterval { j: off + 1, times: shift(&iv.times), states: iv.states.clone() });
        flow.push(FlowInput { times: shift(&f.times), values: f.values.clone() });
    }
    let new_arc = HybridArc::new(arc.dim, intervals)?;
    let input = HybridInputSignal {
        dims: pair.input.dims,
        domain: new_arc.domain(),
        flow,
        jumps: pair.input.jumps[from.j..].to_vec(),
    };
    Ok(SolutionPair { arc: new_arc, input, terminal_status: pair.terminal_status, branch: pair.branch.clone() })
}

fn push_floats(line: &mut String, v: &[f64]) {
    for x in v {
        let _ = write!(line, ",{x:.16e}");
    }
}

fn push_blanks(line: &mut String, n: usize) {
    for _ in 0..n {
        line.push(',');
    }
}

/// Trajectory CSV. Columns: `t,j,phase,x0..,uC0..,uD0..`. Flow rows carry
/// every stored sample and its flow input; jump rows carry the post-jump
/// `j`, the post-jump state and the jump input.
pub fn write_csv(pair: &SolutionPair, manifest: Option<&str>) -> String {
    let d = pair.input.dims;
    let n = pair.arc.dim;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# status={}; branch={}; dims={},{},{},{}; manifest={}",
        pair.terminal_status,
        pair.branch_label(),
        d.c1,
        d.c2,
        d.d1,
        d.d2,
        manifest.unwrap_or("-")
    );
    let mut header = String::from("t,j,phase");
    for i in 0..n {
        let _ = write!(header, ",x{i}");
    }
    for i in 0..d.flow() {
        let _ = write!(header, ",uC{i}");
    }
    for i in 0..d.jump() {
        let _ = write!(header, ",uD{i}");
    }
    out.push_str(&header);
    out.push('\n');
    for (j, iv) in pair.arc.intervals.iter().enumerate() {
        if j > 0 {
            let mut line = format!("{:.16e},{},jump", iv.start(), j);
            push_floats(&mut line, &iv.states[0]);
            push_blanks(&mut line, d.flow());
            push_floats(&mut line, &pair.input.jumps[j - 1]);
            out.push_str(&line);
            out.push('\n');
        }
        for (i, (t, x)) in iv.times.iter().zip(&iv.states).enumerate() {
            let mut line = format!("{t:.16e},{j},flow");
            push_floats(&mut line, x);
            push_floats(&mut line, &pair.flow_input_at(j, i));
            push_blanks(&mut line, d.jump());
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// Manifest hash recorded in a trajectory CSV, if any.
pub fn csv_manifest(text: &str) -> Option<String> {
    let first = text.lines().next()?.strip_prefix('#')?;
    first
        .split(';')
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, _)| *k == "manifest")
        .map(|(_, v)| v.to_string())
        .filter(|v| v != "-")
}

pub fn read_csv(text: &str) -> Result<SolutionPair> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| Error::Parse("missing metadata line".into()))?;
    let mut status = None;
    let mut branch = Vec::new();
    let mut dims = None;
    for kv in meta.split(';') {
        let Some((k, v)) = kv.trim().split_once('=') else { continue };
        match k {
            "status" => status = Some(TerminalStatus::parse(v)?),
            "branch" => branch = v.chars().map(|c| c == '1').collect(),
            "dims" => {
                let d: Vec<usize> = v
                    .split(',')
                    .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad dims `{v}`"))))
                    .collect::<Result<_>>()?;
                if d.len() != 4 {
                    return Err(Error::Parse(format!("bad dims `{v}`")));
                }
                dims = Some(InputDims::new(d[0], d[1], d[2], d[3]));
            }
            _ => {}
        }
    }
    let status = status.ok_or_else(|| Error::Parse("missing status".into()))?;
    let dims = dims.ok_or_else(|| Error::Parse("missing dims".into()))?;
    let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with('x')).count();
    if cols.len() != 3 + n + dims.flow() + dims.jump() {
        return Err(Error::Parse("header does not match dims".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`")));
    let nums = |fields: &[&str]| fields.iter().map(|s| num(s)).collect::<Result<Vec<f64>>>();

    let mut intervals: Vec<ArcInterval> = Vec::new();
    let mut flow: Vec<FlowInput> = Vec::new();
    let mut jumps = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse(format!("row has {} fields, expected {}", f.len(), cols.len())));
        }
        let t = num(f[0])?;
        let j: usize = f[1].parse().map_err(|_| Error::Parse(format!("bad j `{}`", f[1])))?;
        let x = nums(&f[3..3 + n])?;
        match f[2] {
            "flow" => {
                if j == intervals.len() {
                    intervals.push(ArcInterval { j, times: Vec::new(), states: Vec::new() });
                    flow.push(FlowInput { times: Vec::new(), values: Vec::new() });
                } else if j + 1 != intervals.len() {
                    return Err(Error::Parse(format!("flow row for interval {j} out of order")));
                }
                let iv = intervals.last_mut().unwrap();
                iv.times.push(t);
                iv.states.push(x);
                if dims.flow() > 0 {
                    let fl = flow.last_mut().unwrap();
                    fl.times.push(t);
                    fl.values.push(nums(&f[3 + n..3 + n + dims.flow()])?);
                }
            }
            "jump" => {
                if j != intervals.len() {
                    return Err(Error::Parse(format!("jump row {j} out of order")));
                }
                jumps.push(nums(&f[3 + n + dims.flow()..])?);
            }
            other => return Err(Error::Parse(format!("bad phase `{other}`"))),
        }
    }
    let arc = HybridArc::new(n, intervals)?;
    let domain = arc.domain();
    let input = HybridInputSignal::new(dims, domain, flow, jumps)?;
    let mut pair = SolutionPair::new(arc, input, status)?;
    pair.branch = branch;
    Ok(pair)
}
