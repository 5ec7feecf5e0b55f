//! Pointwise HJBI residuals, min-max / max-min Hamiltonians, feedback
//! synthesis from a value certificate and the equivalent-conditions battery.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{ScalarFn, StageCost, StageCosts};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::riccati::PGrid;
use crate::system::{FeedbackLaw, GameSystem, StateFn};

#[derive(Clone)]
pub enum CertificateForm {
    /// `xᵀWx + wᵀx + c`.
    Quadratic { w: Mat, lin: Vec<f64>, c: f64 },
    /// `x_pᵀP(τ)x_p` with `τ = x[tau_index]` and `x_p` the leading entries.
    TimerQuadratic { grid: Arc<PGrid>, tau_index: usize },
    General,
}

#[derive(Clone)]
pub struct ValueCertificate {
    value: ScalarFn,
    gradient: StateFn,
    pub form: CertificateForm,
}

impl fmt::Debug for ValueCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.form {
            CertificateForm::Quadratic { .. } => "Quadratic",
            CertificateForm::TimerQuadratic { .. } => "TimerQuadratic",
            CertificateForm::General => "General",
        };
        write!(f, "ValueCertificate({kind})")
    }
}

impl ValueCertificate {
    pub fn quadratic(w: Mat, lin: Vec<f64>, c: f64) -> Self {
        let w = w.symmetrize();
        let (w1, l1) = (w.clone(), lin.clone());
        let (w2, l2) = (w.clone(), lin.clone());
        ValueCertificate {
            value: Arc::new(move |x| w1.quad_form(x) + dot(&l1, x) + c),
            gradient: Arc::new(move |x| w2.mul_vec(x).iter().zip(&l2).map(|(a, b)| 2.0 * a + b).collect()),
            form: CertificateForm::Quadratic { w, lin, c },
        }
    }

    pub fn from_p(p: Mat) -> Self {
        let n = p.rows();
        ValueCertificate::quadratic(p, vec![0.0; n], 0.0)
    }

    pub fn timer(grid: PGrid, tau_index: usize) -> Self {
        let grid = Arc::new(grid);
        let (g1, g2) = (grid.clone(), grid.clone());
        ValueCertificate {
            value: Arc::new(move |x| g1.eval(x[tau_index]).quad_form(&x[..tau_index])),
            gradient: Arc::new(move |x| {
                let xp = &x[..tau_index];
                let mut g: Vec<f64> = g2.eval(x[tau_index]).mul_vec(xp).into_iter().map(|v| 2.0 * v).collect();
                g.push(g2.deriv(x[tau_index]).quad_form(xp));
                g.extend(std::iter::repeat(0.0).take(x.len() - tau_index - 1));
                g
            }),
            form: CertificateForm::TimerQuadratic { grid, tau_index },
        }
    }

    pub fn general(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ValueCertificate { value: Arc::new(value), gradient: Arc::new(gradient), form: CertificateForm::General }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    /// `c·V`.
    pub fn scaled(&self, c: f64) -> Self {
        let (v, g) = (self.value.clone(), self.gradient.clone());
        let form = match &self.form {
            CertificateForm::Quadratic { w, lin, c: c0 } => {
                CertificateForm::Quadratic { w: w.scale(c), lin: lin.iter().map(|v| v * c).collect(), c: c0 * c }
            }
            _ => CertificateForm::General,
        };
        ValueCertificate {
            value: Arc::new(move |x| c * v(x)),
            gradient: Arc::new(move |x| g(x).into_iter().map(|d| c * d).collect()),
            form,
        }
    }

    /// Quadratic model `(W, w, c)` of `V` valid on `{y : y[τ] = τ⁺}` for the
    /// timer form, or everywhere for the quadratic form.
    pub fn jump_model(&self, n: usize, tau_plus: Option<f64>) -> Option<(Mat, Vec<f64>, f64)> {
        match &self.form {
            CertificateForm::Quadratic { w, lin, c } => Some((w.clone(), lin.clone(), *c)),
            CertificateForm::TimerQuadratic { grid, tau_index } => {
                let p = grid.eval(tau_plus?);
                let mut w = Mat::zeros(n, n);
                w.set_block(0, 0, &p);
                let _ = tau_index;
                Some((w, vec![0.0; n], 0.0))
            }
            CertificateForm::General => None,
        }
    }

    /// Largest relative error between the gradient and central differences
    /// with step `h_rel·max(1, |x|)`.
    pub fn gradient_check(&self, points: &[Vec<f64>], h_rel: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for x in points {
            let g = self.gradient(x);
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let h = h_rel * scale;
            let fd: Vec<f64> = (0..x.len())
                .map(|i| {
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[i] += h;
                    b[i] -= h;
                    (self.value(&a) - self.value(&b)) / (2.0 * h)
                })
                .collect();
            let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            let fdn = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            let den = gn.max(fdn).max(1e-8 * scale);
            worst = worst.max(diff / den);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    MinMax,
    MaxMin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Analytic,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxResult {
    pub value: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub method: Method,
}

/// `f(u) = c + gᵀu + uᵀMu` with `u = (u1, u2)`, `u1 ∈ R^{m1}`.
#[derive(Clone, Debug)]
pub struct QuadraticInU {
    pub c: f64,
    pub g: Vec<f64>,
    pub m: Mat,
    pub m1: usize,
}

impl QuadraticInU {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.c + dot(&self.g, u) + if u.is_empty() { 0.0 } else { self.m.quad_form(u) }
    }

    fn blocks(&self) -> (Mat, Mat, Mat, Vec<f64>, Vec<f64>) {
        let m = self.g.len();
        let (a, b) = (self.m1, m - self.m1);
        (
            self.m.block(0, 0, a, a),
            self.m.block(0, a, a, b),
            self.m.block(a, a, b, b),
            self.g[..a].to_vec(),
            self.g[a..].to_vec(),
        )
    }

    /// Hessian blocks `(M11, M22)` of the two players.
    pub fn hessians(&self) -> (Mat, Mat) {
        let (m11, _, m22, _, _) = self.blocks();
        (m11, m22)
    }

    /// Stationary saddle in the given order, or `None` when the
    /// second-order conditions for that order fail.
    pub fn solve(&self, order: Order) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let (m11, m12, m22, g1, g2) = self.blocks();
        let m21 = m12.transpose();
        const TOL: f64 = 1e-12;
        // eliminate the inner player, then optimize the outer one
        let (inner_m, cross, outer_m, g_in, g_out, inner_max) = match order {
            Order::MinMax => (&m22, &m21, &m11, &g2, &g1, true),
            Order::MaxMin => (&m11, &m12, &m22, &g1, &g2, false),
        };
        let inner_ok = if inner_max { inner_m.is_nd(TOL) } else { inner_m.is_pd(TOL) };
        if !inner_ok {
            return None;
        }
        let inv_g = inner_m.solve_vec(g_in).ok()?;
        let inv_c = inner_m.solve(cross).ok()?;
        let schur = (outer_m - &(&cross.transpose() * &inv_c)).symmetrize();
        let outer_ok = if inner_max { schur.is_pd(TOL) } else { schur.is_nd(TOL) };
        if !outer_ok {
            return None;
        }
        let g_red: Vec<f64> = g_out
            .iter()
            .zip(cross.tr_mul_vec(&inv_g))
            .map(|(a, b)| a - b)
            .collect();
        let u_out: Vec<f64> = schur.solve_vec(&g_red).ok()?.into_iter().map(|v| -0.5 * v).collect();
        let rhs: Vec<f64> = g_in
            .iter()
            .zip(cross.mul_vec(&u_out))
            .map(|(a, b)| a + 2.0 * b)
            .collect();
        let u_in: Vec<f64> = inner_m.solve_vec(&rhs).ok()?.into_iter().map(|v| -0.5 * v).collect();
        let (u1, u2) = match order {
            Order::MinMax => (u_out, u_in),
            Order::MaxMin => (u_in, u_out),
        };
        let mut u = u1.clone();
        u.extend(&u2);
        Some((self.eval(&u), u1, u2))
    }
}

/// Box of inputs for the numeric nested search, per input coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
}

impl InputBox {
    pub fn uniform(m: usize, lo: f64, hi: f64, points: usize) -> Self {
        InputBox { lo: vec![lo; m], hi: vec![hi; m], points }
    }

    fn axis(&self, i: usize) -> Vec<f64> {
        linspace(self.lo[i], self.hi[i], self.points)
    }

    /// Cartesian grid over coordinates `range`.
    fn grid(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = range.map(|i| self.axis(i)).collect();
        cartesian(&axes)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// State grid for residual checks. A degenerate axis (`lo == hi`,
/// `points == 1`) pins a coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    pub flow_inputs: Option<InputBox>,
    pub jump_inputs: Option<InputBox>,
    #[serde(default)]
    pub jitter: Option<Jitter>,
}

/// Seeded uniform shift of interior grid nodes by up to `frac` of a cell.
/// Axis end points stay put, so boundaries and pinned coordinates survive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub seed: u64,
    pub frac: f64,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        for a in &axes {
            let ok = a.points >= 1 && a.lo <= a.hi && ((a.points == 1) == (a.lo == a.hi));
            if !ok {
                return Err(Error::InvalidSpec(format!("bad grid axis {a:?}")));
            }
        }
        Ok(GridSpec { axes, flow_inputs: None, jump_inputs: None, jitter: None })
    }

    pub fn with_inputs(mut self, flow: Option<InputBox>, jump: Option<InputBox>) -> Self {
        self.flow_inputs = flow;
        self.jump_inputs = jump;
        self
    }

    pub fn with_jitter(mut self, seed: u64, frac: f64) -> Self {
        self.jitter = (frac > 0.0).then_some(Jitter { seed, frac: frac.min(0.5) });
        self
    }

    /// Parses `"lo,hi,n;lo,hi,n;..."`.
    pub fn parse(s: &str) -> Result<Self> {
        let axes = s
            .split(';')
            .filter(|a| !a.trim().is_empty())
            .map(|a| {
                let f: Vec<&str> = a.split(',').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(Error::Parse(format!("grid axis `{a}` needs lo,hi,n")));
                }
                let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{v}`")));
                Ok(Axis {
                    lo: num(f[0])?,
                    hi: num(f[1])?,
                    points: f[2].parse().map_err(|_| Error::Parse(format!("bad count `{}`", f[2])))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(axes)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self.axes.iter().map(|a| linspace(a.lo, a.hi, a.points)).collect();
        let mut pts = cartesian(&axes);
        if let Some(j) = self.jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
            for p in &mut pts {
                for (v, a) in p.iter_mut().zip(&self.axes) {
                    if *v > a.lo && *v < a.hi {
                        let cell = (a.hi - a.lo) / (a.points - 1) as f64;
                        *v += cell * j.frac * rng.gen_range(-1.0..=1.0);
                    }
                }
            }
        }
        pts
    }
}

fn flow_form(x: &[f64], v: &ValueCertificate, sys: &GameSystem, costs: &StageCosts) -> Option<QuadraticInU> {
    let (f, b) = sys.flow_map.affine_parts(x)?;
    let StageCost::InputQuadratic { state, r } = &costs.flow else { return None };
    let grad = v.gradient(x);
    Some(QuadraticInU { c: state(x) + dot(&grad, &f), g: b.tr_mul_vec(&grad), m: r.symmetrize(), m1: sys.dims.c1 })
}

fn timer_index(v: &ValueCertificate) -> Option<usize> {
    match &v.form {
        CertificateForm::TimerQuadratic { tau_index, .. } => Some(*tau_index),
        _ => None,
    }
}

fn jump_form(x: &[f64], v: &ValueCertificate, sys: &GameSystem, costs: &StageCosts) -> Option<QuadraticInU> {
    let (g0, e) = sys.jump_map.affine_parts(x)?;
    let StageCost::InputQuadratic { state, r } = &costs.jump else { return None };
    let tau_plus = match timer_index(v) {
        Some(ti) => {
            if e.cols() > 0 && (0..e.cols()).any(|c| e[(ti, c)] != 0.0) {
                return None;
            }
            Some(g0[ti])
        }
        None => None,
    };
    let (w, lin, c0) = v.jump_model(sys.n, tau_plus)?;
    let wg: Vec<f64> = w.mul_vec(&g0);
    let grad: Vec<f64> = wg.iter().zip(&lin).map(|(a, b)| 2.0 * a + b).collect();
    Some(QuadraticInU {
        c: state(x) + dot(&g0, &wg) + dot(&lin, &g0) + c0,
        g: e.tr_mul_vec(&grad),
        m: (r + &(&(&e.transpose() * &w) * &e)).symmetrize(),
        m1: sys.dims.d1,
    })
}

fn nested_search(
    f: &dyn Fn(&[f64]) -> f64,
    m1: usize,
    m: usize,
    bx: Option<&InputBox>,
    order: Order,
) -> Result<MinMaxResult> {
    if m == 0 {
        return Ok(MinMaxResult { value: f(&[]), u1: vec![], u2: vec![], method: Method::Numeric });
    }
    let bx = bx.ok_or(Error::NoInputBox)?;
    if bx.lo.len() != m || bx.hi.len() != m {
        return Err(Error::DimensionMismatch(format!("input box has {} coordinates, expected {m}", bx.lo.len())));
    }
    let g1 = bx.grid(0..m1);
    let g2 = bx.grid(m1..m);
    let join = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().chain(b).copied().collect() };
    // outer loop over the outer player's grid; lowest index wins ties
    let (outer, inner, outer_is_p1) = match order {
        Order::MinMax => (&g1, &g2, true),
        Order::MaxMin => (&g2, &g1, false),
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for (oi, uo) in outer.iter().enumerate() {
        let mut inner_best: Option<(f64, usize)> = None;
        for (ii, ui) in inner.iter().enumerate() {
            let val = if outer_is_p1 { f(&join(uo, ui)) } else { f(&join(ui, uo)) };
            let better = match inner_best {
                None => true,
                Some((b, _)) => if outer_is_p1 { val > b } else { val < b },
            };
            if better {
                inner_best = Some((val, ii));
            }
        }
        let (val, ii) = inner_best.unwrap();
        let better = match best {
            None => true,
            Some((b, _, _)) => if outer_is_p1 { val < b } else { val > b },
        };
        if better {
            best = Some((val, oi, ii));
        }
    }
    let (value, oi, ii) = best.unwrap();
    let (u1, u2) = if outer_is_p1 { (g1[oi].clone(), g2[ii].clone()) } else { (g1[ii].clone(), g2[oi].clone()) };
    Ok(MinMaxResult { value, u1, u2, method: Method::Numeric })
}

/// `min_{u_C1} max_{u_C2} L_C + ⟨∇V, F⟩` (or the reversed order).
pub fn hamiltonian_minmax(
    x: &[f64],
    v: &ValueCertificate,
    sys: &GameSystem,
    costs: &StageCosts,
    order: Order,
    input_box: Option<&InputBox>,
) -> Result<MinMaxResult> {
    if let Some(q) = flow_form(x, v, sys, costs) {
        if let Some((value, u1, u2)) = q.solve(order) {
            return Ok(MinMaxResult { value, u1, u2, method: Method::Analytic });
        }
    }
    let grad = v.gradient(x);
    let f = |u: &[f64]| costs.flow.eval(x, u) + dot(&grad, &sys.flow_map.eval(x, u));
    nested_search(&f, sys.dims.c1, sys.dims.flow(), input_box, order)
}

/// `min_{u_D1} max_{u_D2} L_D + V(G)` (or the reversed order).
pub fn jump_minmax(
    x: &[f64],
    v: &ValueCertificate,
    sys: &GameSystem,
    costs: &StageCosts,
    order: Order,
    input_box: Option<&InputBox>,
) -> Result<MinMaxResult> {
    if let Some(q) = jump_form(x, v, sys, costs) {
        if let Some((value, u1, u2)) = q.solve(order) {
            return Ok(MinMaxResult { value, u1, u2, method: Method::Analytic });
        }
        let (m11, m22) = q.hessians();
        let singular = |m: &Mat| m.rows() > 0 && m.lu().is_err();
        if input_box.is_none() && (singular(&m11) || singular(&m22)) {
            return Err(Error::SingularRv("jump Hessian block is singular".into()));
        }
    }
    let f = |u: &[f64]| costs.jump.eval(x, u) + v.value(&sys.jump_map.eval(x, u));
    nested_search(&f, sys.dims.d1, sys.dims.jump(), input_box, order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub x: Vec<f64>,
    pub flow_residual: Option<f64>,
    pub jump_residual: Option<f64>,
    pub isaacs_gap: f64,
    pub numeric: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbiReport {
    pub points: Vec<PointResidual>,
    pub flow_points: usize,
    pub jump_points: usize,
    pub max_flow_residual: f64,
    pub max_jump_residual: f64,
    pub max_isaacs_gap: f64,
    pub errors: Vec<String>,
}

impl HjbiReport {
    pub fn max_residual(&self) -> f64 {
        self.max_flow_residual.max(self.max_jump_residual)
    }
}

/// HJBI residuals over `grid`: the min-max Hamiltonian on `Π(C)` and the
/// min-max Bellman value minus `V` on `Π(D)`, with the Isaacs gap.
pub fn check_hjbi(v: &ValueCertificate, sys: &GameSystem, costs: &StageCosts, grid: &GridSpec) -> HjbiReport {
    report(point_residuals(v, sys, costs, grid))
}

fn point_residuals(v: &ValueCertificate, sys: &GameSystem, costs: &StageCosts, grid: &GridSpec) -> Vec<Result<PointResidual>> {
    grid.points()
        .par_iter()
        .map(|x| {
            let mut pr = PointResidual { x: x.clone(), flow_residual: None, jump_residual: None, isaacs_gap: 0.0, numeric: false };
            if sys.in_flow_projection(x) {
                let a = hamiltonian_minmax(x, v, sys, costs, Order::MinMax, grid.flow_inputs.as_ref())?;
                let b = hamiltonian_minmax(x, v, sys, costs, Order::MaxMin, grid.flow_inputs.as_ref())?;
                pr.flow_residual = Some(a.value);
                pr.isaacs_gap = pr.isaacs_gap.max((a.value - b.value).abs());
                pr.numeric |= a.method == Method::Numeric;
            }
            if sys.in_jump_projection(x) {
                let a = jump_minmax(x, v, sys, costs, Order::MinMax, grid.jump_inputs.as_ref())?;
                let b = jump_minmax(x, v, sys, costs, Order::MaxMin, grid.jump_inputs.as_ref())?;
                pr.jump_residual = Some(a.value - v.value(x));
                pr.isaacs_gap = pr.isaacs_gap.max((a.value - b.value).abs());
                pr.numeric |= a.method == Method::Numeric;
            }
            Ok(pr)
        })
        .collect()
}

fn report(results: Vec<Result<PointResidual>>) -> HjbiReport {
    let mut points = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let fmax = points.iter().filter_map(|p| p.flow_residual).map(f64::abs).fold(0.0, f64::max);
    let jmax = points.iter().filter_map(|p| p.jump_residual).map(f64::abs).fold(0.0, f64::max);
    let gap = points.iter().map(|p| p.isaacs_gap).fold(0.0, f64::max);
    HjbiReport {
        flow_points: points.iter().filter(|p| p.flow_residual.is_some()).count(),
        jump_points: points.iter().filter(|p| p.jump_residual.is_some()).count(),
        points,
        max_flow_residual: fmax,
        max_jump_residual: jmax,
        max_isaacs_gap: gap,
        errors,
    }
}

/// Selectors of the min-max problems as a feedback law, after checking the
/// HJBI residuals on `grid`.
pub fn synthesize_feedback(v: &ValueCertificate, sys: &GameSystem, costs: &StageCosts, grid: &GridSpec, tol: f64) -> Result<FeedbackLaw> {
    let mut results = point_residuals(v, sys, costs, grid);
    if let Some(i) = results.iter().position(|r| r.is_err()) {
        return Err(results.swap_remove(i).unwrap_err());
    }
    let rep = report(results);
    if rep.max_residual() > tol {
        return Err(Error::ResidualTooLarge { max_residual: rep.max_residual(), tol });
    }
    let d = sys.dims;
    let make = |jump: bool, player: usize| -> StateFn {
        let (v, sys, costs) = (v.clone(), sys.clone(), costs.clone());
        let bx = if jump { grid.jump_inputs.clone() } else { grid.flow_inputs.clone() };
        let m = match (jump, player) {
            (false, 1) => d.c1,
            (false, _) => d.c2,
            (true, 1) => d.d1,
            (true, _) => d.d2,
        };
        Arc::new(move |x: &[f64]| {
            if m == 0 {
                return Vec::new();
            }
            let r = if jump {
                jump_minmax(x, &v, &sys, &costs, Order::MinMax, bx.as_ref())
            } else {
                hamiltonian_minmax(x, &v, &sys, &costs, Order::MinMax, bx.as_ref())
            };
            match r {
                Ok(r) if player == 1 => r.u1,
                Ok(r) => r.u2,
                Err(_) => vec![f64::NAN; m],
            }
        })
    };
    Ok(FeedbackLaw::new(d, make(false, 1), make(false, 2), make(true, 1), make(true, 2)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub label: char,
    pub samples: usize,
    /// Largest amount by which the condition fails (0 when it holds).
    pub worst_violation: f64,
    pub worst_at: Option<Vec<f64>>,
    /// The global optimum over the deviating player was evaluated exactly.
    pub proved_by_convexity: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub conditions: Vec<ConditionReport>,
    pub passed: bool,
}

impl EquivalenceReport {
    pub fn get(&self, label: char) -> &ConditionReport {
        self.conditions.iter().find(|c| c.label == label).expect("labels a..f")
    }
}

struct Acc {
    label: char,
    samples: usize,
    worst: f64,
    at: Option<Vec<f64>>,
    proved: bool,
    any_point: bool,
}

impl Acc {
    fn new(label: char) -> Self {
        Acc { label, samples: 0, worst: 0.0, at: None, proved: true, any_point: false }
    }

    fn push(&mut self, violation: f64, x: &[f64]) {
        self.samples += 1;
        if violation > self.worst {
            self.worst = violation;
            self.at = Some(x.to_vec());
        }
    }

    fn finish(self, tol: f64) -> ConditionReport {
        ConditionReport {
            label: self.label,
            samples: self.samples,
            worst_violation: self.worst,
            worst_at: self.at,
            proved_by_convexity: self.any_point && self.proved,
            passed: self.worst <= tol,
        }
    }
}

/// Deviation samples for one player: the box grid (or `κ ± 1`) plus the
/// exact best response when the quadratic structure gives one.
fn deviations(kappa: &[f64], bx: Option<&InputBox>, offset: usize, per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..kappa.len())
        .map(|i| match bx {
            Some(b) => linspace(b.lo[offset + i], b.hi[offset + i], per_dim),
            None => linspace(kappa[i] - 1.0, kappa[i] + 1.0, per_dim),
        })
        .collect();
    cartesian(&axes)
}

/// The six conditions at each grid point: (a) flow equality at `κ`,
/// (b) `≥ 0` under `u_C1` deviations, (c) `≤ 0` under `u_C2` deviations,
/// (d)–(f) the jump analogues against `V(x)`.
pub fn check_equivalent_conditions(
    v: &ValueCertificate,
    sys: &GameSystem,
    costs: &StageCosts,
    law: &FeedbackLaw,
    grid: &GridSpec,
    per_dim: usize,
    tol: f64,
) -> EquivalenceReport {
    let mut acc: Vec<Acc> = "abcdef".chars().map(Acc::new).collect();
    let d = sys.dims;
    for x in grid.points() {
        let uc = law.flow(&x);
        if sys.flow_set.contains(&x, &uc) {
            let grad = v.gradient(&x);
            let h = |u: &[f64]| costs.flow.eval(&x, u) + dot(&grad, &sys.flow_map.eval(&x, u));
            let (k1, k2) = (uc[..d.c1].to_vec(), uc[d.c1..].to_vec());
            let form = flow_form(&x, v, sys, costs);
            acc[0].any_point = true;
            acc[0].push(h(&uc).abs(), &x);
            battery(&mut acc[1..3], &h, &k1, &k2, form.as_ref(), grid.flow_inputs.as_ref(), per_dim, &x);
        }
        let ud = law.jump(&x);
        if sys.jump_set.contains(&x, &ud) {
            let vx = v.value(&x);
            let h = |u: &[f64]| costs.jump.eval(&x, u) + v.value(&sys.jump_map.eval(&x, u)) - vx;
            let (k1, k2) = (ud[..d.d1].to_vec(), ud[d.d1..].to_vec());
            let form = jump_form(&x, v, sys, costs).map(|mut q| {
                q.c -= vx;
                q
            });
            acc[3].any_point = true;
            acc[3].push(h(&ud).abs(), &x);
            battery(&mut acc[4..6], &h, &k1, &k2, form.as_ref(), grid.jump_inputs.as_ref(), per_dim, &x);
        }
    }
    let conditions: Vec<ConditionReport> = acc.into_iter().map(|a| a.finish(tol)).collect();
    let passed = conditions.iter().all(|c| c.passed);
    EquivalenceReport { conditions, passed }
}

#[allow(clippy::too_many_arguments)]
fn battery(
    acc: &mut [Acc],
    h: &dyn Fn(&[f64]) -> f64,
    k1: &[f64],
    k2: &[f64],
    form: Option<&QuadraticInU>,
    bx: Option<&InputBox>,
    per_dim: usize,
    x: &[f64],
) {
    let join = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().chain(b).copied().collect() };
    let m1 = k1.len();
    // (b)/(e): player 1 deviates, must not go below zero
    let mut dev1 = deviations(k1, bx, 0, per_dim);
    let mut dev2 = deviations(k2, bx, m1, per_dim);
    let mut proved1 = false;
    let mut proved2 = false;
    if let Some(q) = form {
        let (m11, m22) = q.hessians();
        // best response of player 1 to κ2: minimize over u1
        if m1 == 0 || m11.is_pd(1e-12) {
            let mut g1: Vec<f64> = q.g[..m1].to_vec();
            let cross = q.m.block(0, m1, m1, k2.len());
            for (gi, ci) in g1.iter_mut().zip(cross.mul_vec(k2)) {
                *gi += 2.0 * ci;
            }
            if let Ok(s) = m11.solve_vec(&g1) {
                dev1.push(s.into_iter().map(|v| -0.5 * v).collect());
                proved1 = true;
            }
        }
        if k2.is_empty() || m22.is_nd(1e-12) {
            let mut g2: Vec<f64> = q.g[m1..].to_vec();
            let cross = q.m.block(m1, 0, k2.len(), m1);
            for (gi, ci) in g2.iter_mut().zip(cross.mul_vec(k1)) {
                *gi += 2.0 * ci;
            }
            if let Ok(s) = m22.solve_vec(&g2) {
                dev2.push(s.into_iter().map(|v| -0.5 * v).collect());
                proved2 = true;
            }
        }
    }
    acc[0].any_point = true;
    acc[1].any_point = true;
    acc[0].proved &= proved1;
    acc[1].proved &= proved2;
    for u1 in &dev1 {
        acc[0].push((-h(&join(u1, k2))).max(0.0), x);
    }
    for u2 in &dev2 {
        acc[1].push(h(&join(k1, u2)).max(0.0), x);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub eps_u: f64,
    pub eps_w: f64,
    pub cost: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSweep {
    pub eps_u: Vec<f64>,
    pub eps_w: Vec<f64>,
    /// `cells[i][k]` is `(eps_u[i], eps_w[k])`.
    pub cells: Vec<Vec<SweepCell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleCheck {
    pub center: f64,
    /// Largest `J(1, ε_w) − J(1, 1)` over the row.
    pub worst_row_excess: f64,
    /// Largest `J(1, 1) − J(ε_u, 1)` over the column.
    pub worst_column_excess: f64,
    pub passed: bool,
}

impl SaddleSweep {
    pub fn cost(&self, i: usize, k: usize) -> Option<f64> {
        self.cells[i][k].cost
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps_u,eps_w,cost,status\n");
        for row in &self.cells {
            for c in row {
                let cost = c.cost.map_or(String::new(), |v| format!("{v:.16e}"));
                s.push_str(&format!("{:.16e},{:.16e},{},{}\n", c.eps_u, c.eps_w, cost, c.status));
            }
        }
        s
    }

    /// `J(1, ε_w) ≤ J(1, 1) ≤ J(ε_u, 1)` with relative slack.
    pub fn check(&self, rel_slack: f64) -> Option<SaddleCheck> {
        let one = |v: &[f64]| v.iter().position(|e| (e - 1.0).abs() < 1e-12);
        let (iu, iw) = (one(&self.eps_u)?, one(&self.eps_w)?);
        let center = self.cost(iu, iw)?;
        let slack = rel_slack * center.abs().max(1e-12);
        let mut row: f64 = f64::NEG_INFINITY;
        for k in 0..self.eps_w.len() {
            row = row.max(self.cost(iu, k).map_or(f64::INFINITY, |c| c - center));
        }
        let mut col: f64 = f64::NEG_INFINITY;
        for i in 0..self.eps_u.len() {
            col = col.max(self.cost(i, iw).map_or(f64::INFINITY, |c| center - c));
        }
        Some(SaddleCheck { center, worst_row_excess: row, worst_column_excess: col, passed: row <= slack && col <= slack })
    }
}

/// Costs of `(ε_u κ_1, ε_w κ_2)` from `x0` over the grid, one simulation per
/// cell. Failed cells are marked, not fatal.
pub fn saddle_sweep(
    sys: &GameSystem,
    costs: &StageCosts,
    law: &FeedbackLaw,
    x0: &[f64],
    eps_u: &[f64],
    eps_w: &[f64],
    cfg: &crate::simulator::SimConfig,
) -> SaddleSweep {
    let pairs: Vec<(usize, usize)> = (0..eps_u.len()).flat_map(|i| (0..eps_w.len()).map(move |k| (i, k))).collect();
    let flat: Vec<SweepCell> = pairs
        .par_iter()
        .map(|&(i, k)| {
            let (eu, ew) = (eps_u[i], eps_w[k]);
            let run = || -> Result<(f64, String)> {
                let cl = crate::system::close_loop(sys, &law.scaled(eu, ew))?;
                let pair = crate::simulator::simulate_one(&cl, x0, cfg)?;
                let rep = crate::cost::evaluate_cost(&pair, costs)?;
                Ok((rep.total_with_tail(), format!("{:?}", pair.terminal_status)))
            };
            match run() {
                Ok((c, st)) => SweepCell { eps_u: eu, eps_w: ew, cost: Some(c), status: st },
                Err(e) => SweepCell { eps_u: eu, eps_w: ew, cost: None, status: format!("invalid: {e}") },
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(eps_u.len());
    let mut it = flat.into_iter();
    for _ in 0..eps_u.len() {
        cells.push(it.by_ref().take(eps_w.len()).collect());
    }
    SaddleSweep { eps_u: eps_u.to_vec(), eps_w: eps_w.to_vec(), cells }
}

/// Parses `"lo:hi:n"` into a linspace.
pub fn parse_eps(s: &str) -> Result<Vec<f64>> {
    let f: Vec<&str> = s.split(':').collect();
    if f.len() != 3 {
        return Err(Error::Parse(format!("eps range `{s}` needs lo:hi:n")));
    }
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{v}`")));
    let n: usize = f[2].trim().parse().map_err(|_| Error::Parse(format!("bad count `{}`", f[2])))?;
    if n == 0 {
        return Err(Error::Parse("eps range needs at least one point".into()));
    }
    Ok(linspace(num(f[0])?, num(f[1])?, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn both_orders_agree_on_a_strict_saddle() {
        let m = Mat::from_rows(&[vec![2.0, 0.3], vec![0.3, -1.5]]).unwrap();
        let q = QuadraticInU { c: 1.0, g: vec![0.4, -0.7], m, m1: 1 };
        let (a, u1, u2) = q.solve(Order::MinMax).unwrap();
        let (b, w1, w2) = q.solve(Order::MaxMin).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!((u1[0] - w1[0]).abs() < 1e-14 && (u2[0] - w2[0]).abs() < 1e-14);
        // stationarity
        let grad = |u: [f64; 2]| [0.4 + 4.0 * u[0] + 0.6 * u[1], -0.7 + 0.6 * u[0] - 3.0 * u[1]];
        let g = grad([u1[0], u2[0]]);
        assert!(g[0].abs() < 1e-13 && g[1].abs() < 1e-13);
    }

    #[test]
    fn wrong_curvature_is_refused() {
        let q = QuadraticInU { c: 0.0, g: vec![1.0, 1.0], m: Mat::diag(&[-1.0, -1.0]), m1: 1 };
        assert!(q.solve(Order::MinMax).is_none());
    }

    #[test]
    fn grid_parsing_and_degenerate_axes() {
        let g = GridSpec::parse("0,0,1; -3,0,4").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0], vec![0.0, -3.0]);
        assert_eq!(pts[3], vec![0.0, 0.0]);
        assert!(GridSpec::parse("0,1,1").is_err());
        assert!(GridSpec::parse("1,0,3").is_err());
        assert!(GridSpec::parse("0,1").is_err());
    }

    #[test]
    fn eps_parsing_hits_one_exactly() {
        let e = parse_eps("0.5:1.5:11").unwrap();
        assert_eq!(e.len(), 11);
        assert_eq!(e[5], 1.0);
        assert_eq!(e[10], 1.5);
    }

    proptest! {
        #[test]
        fn optimizers_invariant_under_positive_scaling(
            c in 0.1..10.0f64, m11 in 0.5..5.0f64, m22 in -5.0..-0.5f64, m12 in -0.4..0.4f64,
            g1 in -3.0..3.0f64, g2 in -3.0..3.0f64,
        ) {
            let q = QuadraticInU { c: 0.3, g: vec![g1, g2], m: Mat::from_rows(&[vec![m11, m12], vec![m12, m22]]).unwrap(), m1: 1 };
            let qs = QuadraticInU { c: 0.3 * c, g: vec![c * g1, c * g2], m: q.m.scale(c), m1: 1 };
            let (a, u1, u2) = q.solve(Order::MinMax).unwrap();
            let (b, w1, w2) = qs.solve(Order::MinMax).unwrap();
            prop_assert!((u1[0] - w1[0]).abs() < 1e-9 && (u2[0] - w2[0]).abs() < 1e-9);
            prop_assert!((b - c * a).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }
}
