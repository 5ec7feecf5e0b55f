//! Game data `(C, F, D, G)` with the two-player input split, terminal set,
//! feedback laws and the closed loop.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_domain::InputDims;
use crate::linalg::{dot, Mat};

pub use crate::scenarios::{builtin_scenario, load_scenario, Scenario, BUILTIN_SCENARIOS};

/// Tolerance for equality constraints (hyperplanes, timer levels).
pub const EQ_TOL: f64 = 1e-7;
/// Tolerance for inequality constraints and box bounds.
pub const INEQ_TOL: f64 = 1e-10;

pub type StateFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;
pub type MapFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type Predicate = Arc<dyn Fn(&[f64], &[f64]) -> bool + Send + Sync>;

/// `a·x ≥ b` (inequality) or `a·x = b` (equality).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Halfspace { a, b }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) - self.b
    }
}

/// Zero set of a scalar function of the state; used for event localization.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    Hyperplane(Halfspace),
    Level { index: usize, level: f64 },
}

impl Surface {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Surface::Hyperplane(h) => h.slack(x),
            Surface::Level { index, level } => x[*index] - level,
        }
    }
}

#[derive(Clone)]
pub enum Region {
    All,
    Empty,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Polyhedron { ineq: Vec<Halfspace>, eq: Vec<Halfspace> },
    /// `x[index]` equal to one of `levels`.
    TimerLevels { index: usize, levels: Vec<f64> },
    Intersection(Vec<Region>),
    /// Predicate on `(x, u)`; the only variant that may depend on the input.
    Custom(Predicate),
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::All => write!(f, "All"),
            Region::Empty => write!(f, "Empty"),
            Region::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            Region::Polyhedron { ineq, eq } => write!(f, "Polyhedron(ineq {ineq:?}, eq {eq:?})"),
            Region::TimerLevels { index, levels } => write!(f, "TimerLevels(x[{index}] in {levels:?})"),
            Region::Intersection(rs) => f.debug_tuple("Intersection").field(rs).finish(),
            Region::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Region {
    pub fn custom(p: impl Fn(&[f64], &[f64]) -> bool + Send + Sync + 'static) -> Self {
        Region::Custom(Arc::new(p))
    }

    pub fn contains(&self, x: &[f64], u: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Empty => false,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - INEQ_TOL && *v <= h + INEQ_TOL),
            Region::Polyhedron { ineq, eq } => {
                ineq.iter().all(|h| h.slack(x) >= -INEQ_TOL) && eq.iter().all(|h| h.slack(x).abs() <= EQ_TOL)
            }
            Region::TimerLevels { index, levels } => levels.iter().any(|l| (x[*index] - l).abs() <= EQ_TOL),
            Region::Intersection(rs) => rs.iter().all(|r| r.contains(x, u)),
            Region::Custom(p) => p(x, u),
        }
    }

    /// Membership of the projection onto the state space. Input-dependent
    /// regions are probed with `u = 0`.
    pub fn contains_state(&self, x: &[f64], m: usize) -> bool {
        self.contains(x, &vec![0.0; m])
    }

    pub fn is_input_free(&self) -> bool {
        match self {
            Region::Custom(_) => false,
            Region::Intersection(rs) => rs.iter().all(Region::is_input_free),
            _ => true,
        }
    }

    pub fn is_empty_set(&self) -> bool {
        matches!(self, Region::Empty)
    }

    /// Equality surfaces the region lives on, if it has any.
    pub fn surfaces(&self) -> Vec<Surface> {
        match self {
            Region::Polyhedron { eq, .. } => eq.iter().cloned().map(Surface::Hyperplane).collect(),
            Region::TimerLevels { index, levels } => {
                levels.iter().map(|l| Surface::Level { index: *index, level: *l }).collect()
            }
            Region::Intersection(rs) => rs.iter().flat_map(Region::surfaces).collect(),
            _ => Vec::new(),
        }
    }
}

/// `f(x) + B(x) u` or a general map `(x, u) -> R^n`.
#[derive(Clone)]
pub enum VectorField {
    Affine { drift: StateFn, input: MatFn },
    General(MapFn),
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Affine { .. } => write!(f, "Affine"),
            VectorField::General(_) => write!(f, "General"),
        }
    }
}

impl VectorField {
    pub fn linear(a: Mat, b: Mat) -> Self {
        let a2 = a.clone();
        VectorField::Affine {
            drift: Arc::new(move |x| a2.mul_vec(x)),
            input: Arc::new(move |_| b.clone()),
        }
    }

    pub fn general(f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        VectorField::General(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Affine { drift, input } => {
                let mut out = drift(x);
                if !u.is_empty() {
                    let bu = input(x).mul_vec(u);
                    out.iter_mut().zip(bu).for_each(|(o, v)| *o += v);
                }
                out
            }
            VectorField::General(f) => f(x, u),
        }
    }

    pub fn affine_parts(&self, x: &[f64]) -> Option<(Vec<f64>, Mat)> {
        match self {
            VectorField::Affine { drift, input } => Some((drift(x), input(x))),
            VectorField::General(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GameSystem {
    pub n: usize,
    pub dims: InputDims,
    pub flow_set: Region,
    pub flow_map: VectorField,
    pub jump_set: Region,
    pub jump_map: VectorField,
    pub terminal_set: Region,
}

impl GameSystem {
    pub fn in_terminal(&self, x: &[f64]) -> bool {
        self.terminal_set.contains(x, &[])
    }

    pub fn in_flow_projection(&self, x: &[f64]) -> bool {
        self.flow_set.contains_state(x, self.dims.flow())
    }

    pub fn in_jump_projection(&self, x: &[f64]) -> bool {
        self.jump_set.contains_state(x, self.dims.jump())
    }

    /// Spot check of local Lipschitz continuity of `F(·, u)` on `C` by
    /// difference quotients; returns the largest quotient seen.
    pub fn lipschitz_estimate(&self, points: &[Vec<f64>], h: f64) -> f64 {
        let u = vec![0.0; self.dims.flow()];
        let mut worst: f64 = 0.0;
        for x in points.iter().filter(|x| self.flow_set.contains(x, &u)) {
            let fx = self.flow_map.eval(x, &u);
            for i in 0..self.n {
                let mut y = x.clone();
                y[i] += h;
                let fy = self.flow_map.eval(&y, &u);
                let q = fx.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / h;
                worst = worst.max(q);
            }
        }
        worst
    }
}

#[derive(Clone)]
pub struct FeedbackLaw {
    pub dims: InputDims,
    pub kappa_c1: StateFn,
    pub kappa_c2: StateFn,
    pub kappa_d1: StateFn,
    pub kappa_d2: StateFn,
}

impl fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FeedbackLaw({:?})", self.dims)
    }
}

fn zero_fn(m: usize) -> StateFn {
    Arc::new(move |_| vec![0.0; m])
}

fn scale_fn(f: StateFn, s: f64) -> StateFn {
    Arc::new(move |x| f(x).into_iter().map(|v| v * s).collect())
}

impl FeedbackLaw {
    pub fn new(dims: InputDims, c1: StateFn, c2: StateFn, d1: StateFn, d2: StateFn) -> Self {
        FeedbackLaw { dims, kappa_c1: c1, kappa_c2: c2, kappa_d1: d1, kappa_d2: d2 }
    }

    pub fn zero(dims: InputDims) -> Self {
        FeedbackLaw::new(dims, zero_fn(dims.c1), zero_fn(dims.c2), zero_fn(dims.d1), zero_fn(dims.d2))
    }

    /// Static linear gains acting on the full state.
    pub fn linear(kc1: Mat, kc2: Mat, kd1: Mat, kd2: Mat) -> Self {
        let dims = InputDims::new(kc1.rows(), kc2.rows(), kd1.rows(), kd2.rows());
        let lin = |k: Mat| -> StateFn { Arc::new(move |x| k.mul_vec(x)) };
        FeedbackLaw::new(dims, lin(kc1), lin(kc2), lin(kd1), lin(kd2))
    }

    pub fn flow(&self, x: &[f64]) -> Vec<f64> {
        let mut u = (self.kappa_c1)(x);
        u.extend((self.kappa_c2)(x));
        u
    }

    pub fn jump(&self, x: &[f64]) -> Vec<f64> {
        let mut u = (self.kappa_d1)(x);
        u.extend((self.kappa_d2)(x));
        u
    }

    /// `(ε_u κ_1, ε_w κ_2)` on both flows and jumps.
    pub fn scaled(&self, eps_u: f64, eps_w: f64) -> Self {
        FeedbackLaw::new(
            self.dims,
            scale_fn(self.kappa_c1.clone(), eps_u),
            scale_fn(self.kappa_c2.clone(), eps_w),
            scale_fn(self.kappa_d1.clone(), eps_u),
            scale_fn(self.kappa_d2.clone(), eps_w),
        )
    }

    pub fn with_c1(mut self, f: StateFn) -> Self {
        self.kappa_c1 = f;
        self
    }

    pub fn with_c2(mut self, f: StateFn) -> Self {
        self.kappa_c2 = f;
        self
    }

    pub fn with_d1(mut self, f: StateFn) -> Self {
        self.kappa_d1 = f;
        self
    }

    pub fn with_d2(mut self, f: StateFn) -> Self {
        self.kappa_d2 = f;
        self
    }

    /// Same law with player 1's flow component negated.
    pub fn flip_c1(&self) -> Self {
        self.clone().with_c1(scale_fn(self.kappa_c1.clone(), -1.0))
    }

    /// Same law with player 1's jump component negated.
    pub fn flip_d1(&self) -> Self {
        self.clone().with_d1(scale_fn(self.kappa_d1.clone(), -1.0))
    }
}

/// Autonomous closed loop together with the open system and law it came from
/// (the simulator records inputs through the law).
#[derive(Clone, Debug)]
pub struct ClosedLoopSystem {
    pub system: GameSystem,
    pub open: GameSystem,
    pub law: FeedbackLaw,
}

impl ClosedLoopSystem {
    /// Wraps a system that already has no inputs.
    pub fn autonomous(sys: GameSystem) -> Result<Self> {
        if !sys.dims.is_autonomous() {
            return Err(Error::DimensionMismatch("system has inputs; close the loop first".into()));
        }
        Ok(ClosedLoopSystem { system: sys.clone(), open: sys, law: FeedbackLaw::zero(InputDims::default()) })
    }
}

pub fn close_loop(sys: &GameSystem, law: &FeedbackLaw) -> Result<ClosedLoopSystem> {
    if sys.dims != law.dims {
        return Err(Error::DimensionMismatch(format!("system inputs {:?} vs law {:?}", sys.dims, law.dims)));
    }
    let close_region = |r: &Region, kappa: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>| -> Region {
        if r.is_input_free() {
            r.clone()
        } else {
            let r = r.clone();
            Region::custom(move |x, _| r.contains(x, &kappa(x)))
        }
    };
    let lf = law.clone();
    let kc: StateFn = Arc::new(move |x| lf.flow(x));
    let lj = law.clone();
    let kd: StateFn = Arc::new(move |x| lj.jump(x));
    let (f, kc2) = (sys.flow_map.clone(), kc.clone());
    let (g, kd2) = (sys.jump_map.clone(), kd.clone());
    let closed = GameSystem {
        n: sys.n,
        dims: InputDims::default(),
        flow_set: close_region(&sys.flow_set, kc),
        flow_map: VectorField::general(move |x, _| f.eval(x, &kc2(x))),
        jump_set: close_region(&sys.jump_set, kd),
        jump_map: VectorField::general(move |x, _| g.eval(x, &kd2(x))),
        terminal_set: sys.terminal_set.clone(),
    };
    Ok(ClosedLoopSystem { system: closed, open: sys.clone(), law: law.clone() })
}

fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.to_rows()
}

/// Matrices of the linear-quadratic game families. Signs are stored as
/// written: `R_C2`, `R_D2` are negative definite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticGameSpec {
    pub a_c: Mat,
    pub b_c1: Mat,
    pub b_c2: Mat,
    pub a_d: Mat,
    pub b_d1: Mat,
    pub b_d2: Mat,
    pub q_c: Mat,
    pub r_c1: Mat,
    pub r_c2: Mat,
    pub q_d: Mat,
    pub r_d1: Mat,
    pub r_d2: Mat,
    /// `(T1, T2)` for timer-driven jumps.
    pub timer: Option<(f64, f64)>,
    pub terminal: Option<Mat>,
    pub has_flows: bool,
    pub has_jumps: bool,
}

impl QuadraticGameSpec {
    /// Spec with every block zero-sized for the given input dimensions and
    /// zero matrices elsewhere.
    pub fn zeros(n: usize, dims: InputDims) -> Self {
        QuadraticGameSpec {
            a_c: Mat::zeros(n, n),
            b_c1: Mat::zeros(n, dims.c1),
            b_c2: Mat::zeros(n, dims.c2),
            a_d: Mat::zeros(n, n),
            b_d1: Mat::zeros(n, dims.d1),
            b_d2: Mat::zeros(n, dims.d2),
            q_c: Mat::zeros(n, n),
            r_c1: Mat::identity(dims.c1),
            r_c2: Mat::identity(dims.c2).scale(-1.0),
            q_d: Mat::zeros(n, n),
            r_d1: Mat::identity(dims.d1),
            r_d2: Mat::identity(dims.d2).scale(-1.0),
            timer: None,
            terminal: None,
            has_flows: true,
            has_jumps: true,
        }
    }

    pub fn n(&self) -> usize {
        self.a_c.rows()
    }

    pub fn dims(&self) -> InputDims {
        InputDims::new(self.b_c1.cols(), self.b_c2.cols(), self.b_d1.cols(), self.b_d2.cols())
    }

    pub fn b_c(&self) -> Mat {
        self.b_c1.hstack(&self.b_c2)
    }

    pub fn b_d(&self) -> Mat {
        self.b_d1.hstack(&self.b_d2)
    }

    pub fn r_c(&self) -> Mat {
        Mat::block_diag(&self.r_c1, &self.r_c2)
    }

    pub fn r_d(&self) -> Mat {
        Mat::block_diag(&self.r_d1, &self.r_d2)
    }

    /// `B_C1 R_C1⁻¹ B_C1ᵀ + B_C2 R_C2⁻¹ B_C2ᵀ`.
    pub fn s_c(&self) -> Result<Mat> {
        let t1 = &self.b_c1 * &self.r_c1.solve(&self.b_c1.transpose())?;
        let t2 = &self.b_c2 * &self.r_c2.solve(&self.b_c2.transpose())?;
        Ok((&t1 + &t2).symmetrize())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let sq = |m: &Mat, name: &str, k: usize| -> Result<()> {
            if m.shape() != (k, k) {
                return Err(Error::DimensionMismatch(format!("{name} is {:?}, expected {k}x{k}", m.shape())));
            }
            Ok(())
        };
        let d = self.dims();
        sq(&self.a_c, "A_C", n)?;
        sq(&self.a_d, "A_D", n)?;
        sq(&self.q_c, "Q_C", n)?;
        sq(&self.q_d, "Q_D", n)?;
        sq(&self.r_c1, "R_C1", d.c1)?;
        sq(&self.r_c2, "R_C2", d.c2)?;
        sq(&self.r_d1, "R_D1", d.d1)?;
        sq(&self.r_d2, "R_D2", d.d2)?;
        for (m, name) in [(&self.b_c1, "B_C1"), (&self.b_c2, "B_C2"), (&self.b_d1, "B_D1"), (&self.b_d2, "B_D2")] {
            if m.rows() != n {
                return Err(Error::DimensionMismatch(format!("{name} has {} rows, expected {n}", m.rows())));
            }
        }
        let tol = 1e-12;
        if !self.q_c.is_psd(tol) || !self.q_d.is_psd(tol) {
            return Err(Error::InvalidSpec("Q_C and Q_D must be positive semidefinite".into()));
        }
        if !self.r_c1.is_pd(0.0) || !self.r_d1.is_pd(0.0) {
            return Err(Error::InvalidSpec("R_C1 and R_D1 must be positive definite".into()));
        }
        if !self.r_c2.is_nd(0.0) || !self.r_d2.is_nd(0.0) {
            return Err(Error::InvalidSpec("R_C2 and R_D2 must be negative definite".into()));
        }
        if let Some((t1, t2)) = self.timer {
            if !(0.0 <= t1 && t1 <= t2) {
                return Err(Error::InvalidSpec(format!("timer thresholds need 0 <= T1 <= T2, got ({t1}, {t2})")));
            }
        }
        Ok(())
    }

    /// Plain linear game on `x_p` without a timer. Flow and jump sets are the
    /// whole space when the respective dynamics are present.
    pub fn linear_system(&self) -> GameSystem {
        GameSystem {
            n: self.n(),
            dims: self.dims(),
            flow_set: if self.has_flows { Region::All } else { Region::Empty },
            flow_map: VectorField::linear(self.a_c.clone(), self.b_c()),
            jump_set: if self.has_jumps { Region::All } else { Region::Empty },
            jump_map: VectorField::linear(self.a_d.clone(), self.b_d()),
            terminal_set: Region::Empty,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "A_C": mat_rows(&self.a_c), "B_C1": mat_rows(&self.b_c1), "B_C2": mat_rows(&self.b_c2),
            "A_D": mat_rows(&self.a_d), "B_D1": mat_rows(&self.b_d1), "B_D2": mat_rows(&self.b_d2),
            "Q_C": mat_rows(&self.q_c), "R_C1": mat_rows(&self.r_c1), "R_C2": mat_rows(&self.r_c2),
            "Q_D": mat_rows(&self.q_d), "R_D1": mat_rows(&self.r_d1), "R_D2": mat_rows(&self.r_d2),
            "timer": self.timer.map(|(t1, t2)| serde_json::json!({"T1": t1, "T2": t2})),
        })
    }
}

/// Timer-driven linear game on `(x_p, τ)`: flows while `τ ∈ [0, T2]`, jumps
/// when `τ ∈ {T1, T2}` and resets `τ` to zero.
pub fn build_timer_lq_system(spec: &QuadraticGameSpec) -> Result<GameSystem> {
    let (t1, t2) = spec.timer.ok_or(Error::MissingTimer)?;
    let n = spec.n();
    let embed = |a: &Mat, tau_rate: f64| -> (Mat, Vec<f64>) {
        let mut big = Mat::zeros(n + 1, n + 1);
        big.set_block(0, 0, a);
        let mut c = vec![0.0; n + 1];
        c[n] = tau_rate;
        (big, c)
    };
    let pad = |b: &Mat| -> Mat { b.vstack(&Mat::zeros(1, b.cols())) };
    let (ac, cc) = embed(&spec.a_c, 1.0);
    let (ad, _) = embed(&spec.a_d, 0.0);
    let bc = pad(&spec.b_c());
    let bd = pad(&spec.b_d());
    let mut lo = vec![f64::NEG_INFINITY; n + 1];
    let mut hi = vec![f64::INFINITY; n + 1];
    lo[n] = 0.0;
    hi[n] = t2;
    let levels = if t1 == t2 { vec![t2] } else { vec![t1, t2] };
    Ok(GameSystem {
        n: n + 1,
        dims: spec.dims(),
        flow_set: Region::Box { lo, hi },
        flow_map: VectorField::Affine {
            drift: Arc::new(move |x| {
                let mut v = ac.mul_vec(x);
                v.iter_mut().zip(&cc).for_each(|(a, b)| *a += b);
                v
            }),
            input: Arc::new(move |_| bc.clone()),
        },
        jump_set: Region::TimerLevels { index: n, levels },
        jump_map: VectorField::Affine { drift: Arc::new(move |x| ad.mul_vec(x)), input: Arc::new(move |_| bd.clone()) },
        terminal_set: Region::Empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn robust_spec() -> QuadraticGameSpec {
        let mut s = QuadraticGameSpec::zeros(1, InputDims::new(1, 1, 0, 0));
        s.a_c = Mat::scalar(-1.0);
        s.b_c1 = Mat::scalar(1.0);
        s.b_c2 = Mat::scalar(1.0);
        s.q_c = Mat::scalar(1.0);
        s.r_c1 = Mat::scalar(1.304);
        s.r_c2 = Mat::scalar(-4.0);
        s
    }

    #[test]
    fn zero_feedback_leaves_linear_flow() {
        let spec = robust_spec();
        let sys = spec.linear_system();
        let cl = close_loop(&sys, &FeedbackLaw::zero(sys.dims)).unwrap();
        assert_eq!(cl.system.flow_map.eval(&[3.0], &[]), vec![-3.0]);
        assert!(cl.system.dims.is_autonomous());
    }

    #[test]
    fn close_loop_rejects_mismatched_law() {
        let sys = robust_spec().linear_system();
        let law = FeedbackLaw::zero(InputDims::new(2, 1, 0, 0));
        assert!(matches!(close_loop(&sys, &law), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn timer_system_layout() {
        let mut spec = QuadraticGameSpec::zeros(1, InputDims::new(1, 1, 1, 1));
        spec.a_c = Mat::scalar(1.8);
        spec.b_c1 = Mat::scalar(1.0);
        spec.b_c2 = Mat::scalar(1.0);
        spec.a_d = Mat::scalar(2.0);
        spec.b_d1 = Mat::scalar(1.0);
        spec.b_d2 = Mat::scalar(1.0);
        assert!(matches!(build_timer_lq_system(&spec), Err(Error::MissingTimer)));
        spec.timer = Some((1.0, 1.0));
        let sys = build_timer_lq_system(&spec).unwrap();
        assert_eq!(sys.flow_map.eval(&[2.0, 0.3], &[0.5, -0.25]), vec![3.6 + 0.25, 1.0]);
        assert_eq!(sys.jump_map.eval(&[2.0, 1.0], &[0.5, 0.25]), vec![4.75, 0.0]);
        assert!(sys.jump_set.contains(&[5.0, 1.0], &[0.0, 0.0]));
        assert!(!sys.jump_set.contains(&[5.0, 0.5], &[0.0, 0.0]));
        assert!(!sys.flow_set.contains(&[5.0, 1.01], &[]));
        spec.timer = Some((0.5, 1.0));
        let sys = build_timer_lq_system(&spec).unwrap();
        assert!(sys.jump_set.contains(&[5.0, 0.5], &[0.0, 0.0]));
        assert_eq!(sys.jump_set.surfaces().len(), 2);
    }

    #[test]
    fn spec_validation_catches_signs() {
        let mut s = robust_spec();
        assert!(s.validate().is_ok());
        s.r_c2 = Mat::scalar(4.0);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    proptest! {
        #[test]
        fn closed_loop_membership_matches_substitution(x in -3.0..3.0f64, y in -3.0..3.0f64) {
            // input-dependent flow set: C = {(x, u): x0 + u0 >= 0}
            let sys = GameSystem {
                n: 2,
                dims: InputDims::new(1, 0, 1, 0),
                flow_set: Region::custom(|x, u| x[0] + u[0] >= 0.0),
                flow_map: VectorField::linear(Mat::identity(2), Mat::from_rows(&[vec![1.0], vec![0.0]]).unwrap()),
                jump_set: Region::custom(|x, u| x[1] * u[0] <= 0.0),
                jump_map: VectorField::linear(Mat::identity(2), Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap()),
                terminal_set: Region::Empty,
            };
            let law = FeedbackLaw::linear(
                Mat::from_rows(&[vec![0.5, -1.0]]).unwrap(),
                Mat::zeros(0, 2),
                Mat::from_rows(&[vec![1.0, 1.0]]).unwrap(),
                Mat::zeros(0, 2),
            );
            let cl = close_loop(&sys, &law).unwrap();
            let p = [x, y];
            prop_assert_eq!(cl.system.flow_set.contains(&p, &[]), sys.flow_set.contains(&p, &law.flow(&p)));
            prop_assert_eq!(cl.system.jump_set.contains(&p, &[]), sys.jump_set.contains(&p, &law.jump(&p)));
            prop_assert_eq!(cl.system.jump_map.eval(&p, &[]), sys.jump_map.eval(&p, &law.jump(&p)));
        }
    }
}
