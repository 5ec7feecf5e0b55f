//! Hybrid Riccati equations of the linear-quadratic game families and the
//! saddle-point gains they produce.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_domain::InputDims;
use crate::linalg::Mat;
use crate::system::{FeedbackLaw, QuadraticGameSpec, StateFn};

pub const ODE_STEPS: usize = 2000;
const BLOWUP: f64 = 1e9;
const DEF_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiccatiKind {
    PeriodicTimer,
    ConstantP,
    SecurityJump,
    #[serde(rename = "CAREonly")]
    CareOnly,
    #[serde(rename = "DAREonly")]
    DareOnly,
}

/// Riccati ODE solution on a uniform grid over `[0, T̄]`, evaluated between
/// nodes by cubic Hermite interpolation with the ODE right-hand side as
/// node derivatives.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PGrid {
    pub tau: Vec<f64>,
    pub p: Vec<Mat>,
    pub dp: Vec<Mat>,
}

impl PGrid {
    pub fn constant(p: Mat) -> Self {
        let z = Mat::zeros(p.rows(), p.cols());
        PGrid { tau: vec![0.0], p: vec![p], dp: vec![z] }
    }

    pub fn horizon(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    fn locate(&self, tau: f64) -> (usize, f64, f64) {
        let n = self.tau.len();
        let tau = tau.clamp(0.0, self.horizon());
        let h = if n > 1 { self.tau[1] - self.tau[0] } else { 1.0 };
        let k = ((tau / h).floor() as usize).min(n.saturating_sub(2));
        let s = if n > 1 { (tau - self.tau[k]) / h } else { 0.0 };
        (k, s, h)
    }

    pub fn eval(&self, tau: f64) -> Mat {
        if self.tau.len() == 1 {
            return self.p[0].clone();
        }
        let (k, s, h) = self.locate(tau);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &(&self.p[k].scale(h00) + &self.dp[k].scale(h10 * h)) + &(&self.p[k + 1].scale(h01) + &self.dp[k + 1].scale(h11 * h))
    }

    pub fn deriv(&self, tau: f64) -> Mat {
        if self.tau.len() == 1 {
            return self.dp[0].clone();
        }
        let (k, s, h) = self.locate(tau);
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        &(&self.p[k].scale(d00) + &self.dp[k].scale(d10)) + &(&self.p[k + 1].scale(d01) + &self.dp[k + 1].scale(d11))
    }
}

/// `dP/dτ = −(Q_C + P A_C + A_Cᵀ P − P S P)`.
fn ode_rhs(spec: &QuadraticGameSpec, s: &Mat, p: &Mat) -> Mat {
    let pa = p * &spec.a_c;
    let r = &(&(&spec.q_c + &pa) + &pa.transpose()) - &(&(p * s) * p);
    r.scale(-1.0)
}

/// Continuous game Riccati residual `Q_C + PA_C + A_CᵀP − PSP`.
pub fn care_residual(spec: &QuadraticGameSpec, p: &Mat) -> Result<Mat> {
    Ok(ode_rhs(spec, &spec.s_c()?, p).scale(-1.0))
}

/// Backward RK4 from `P(T̄) = p_t` to `τ = 0` with symmetric projection.
pub fn integrate_riccati_ode(spec: &QuadraticGameSpec, p_t: &Mat, t_bar: f64) -> Result<PGrid> {
    let s = spec.s_c()?;
    let f = |p: &Mat| ode_rhs(spec, &s, p);
    if t_bar <= 0.0 {
        let p = p_t.symmetrize();
        let dp = f(&p);
        return Ok(PGrid { tau: vec![0.0], p: vec![p], dp: vec![dp] });
    }
    let n = ODE_STEPS;
    let h = t_bar / n as f64;
    let mut ps = vec![Mat::zeros(0, 0); n + 1];
    let mut p = p_t.symmetrize();
    ps[n] = p.clone();
    for k in (0..n).rev() {
        let hh = -h;
        let k1 = f(&p);
        let k2 = f(&(&p + &k1.scale(hh / 2.0)));
        let k3 = f(&(&p + &k2.scale(hh / 2.0)));
        let k4 = f(&(&p + &k3.scale(hh)));
        let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
        p = (&p + &incr.scale(hh / 6.0)).symmetrize();
        let norm = p.frobenius();
        if !norm.is_finite() || norm > BLOWUP {
            return Err(Error::BlowUp { tau: k as f64 * h, norm });
        }
        ps[k] = p.clone();
    }
    let tau: Vec<f64> = (0..=n).map(|k| if k == n { t_bar } else { k as f64 * h }).collect();
    let dp = ps.iter().map(|p| f(p)).collect();
    Ok(PGrid { tau, p: ps, dp })
}

/// Blocks of the jump Riccati map at `P0`.
struct JumpBlocks {
    rv: Mat,
    n_mat: Mat,
}

fn jump_blocks(spec: &QuadraticGameSpec, p0: &Mat) -> JumpBlocks {
    let bd = spec.b_d();
    let rv = (&spec.r_d() + &(&(&bd.transpose() * p0) * &bd)).symmetrize();
    let n_mat = &(&bd.transpose() * p0) * &spec.a_d;
    JumpBlocks { rv, n_mat }
}

/// Second-order conditions at jumps: `R_D1 + B_D1ᵀP0B_D1 ⪰ 0` and
/// `−R_D2 − B_D2ᵀP0B_D2 ⪰ 0`. Returns the two extreme eigenvalues.
pub fn jump_definiteness(spec: &QuadraticGameSpec, p0: &Mat) -> (f64, f64) {
    let b1 = &spec.b_d1;
    let b2 = &spec.b_d2;
    let m1 = &spec.r_d1 + &(&(&b1.transpose() * p0) * b1);
    let m2 = (&spec.r_d2 + &(&(&b2.transpose() * p0) * b2)).scale(-1.0);
    (m1.min_eigenvalue(), m2.min_eigenvalue())
}

fn check_jump_definiteness(spec: &QuadraticGameSpec, p0: &Mat) -> Result<()> {
    let (e1, e2) = jump_definiteness(spec, p0);
    if e1 < -DEF_TOL || e2 < -DEF_TOL {
        return Err(Error::DefinitenessViolated(format!(
            "jump blocks have min eigenvalues {e1:e} (player 1) and {e2:e} (player 2)"
        )));
    }
    Ok(())
}

/// `Q_D + A_DᵀP0A_D − NᵀR_v⁻¹N` with `N = [B_D1ᵀP0A_D; B_D2ᵀP0A_D]`.
pub fn jump_update(spec: &QuadraticGameSpec, p0: &Mat) -> Result<Mat> {
    check_jump_definiteness(spec, p0)?;
    let JumpBlocks { rv, n_mat } = jump_blocks(spec, p0);
    let k = rv.solve(&n_mat).map_err(|e| Error::SingularRv(e.to_string()))?;
    let base = &spec.q_d + &(&(&spec.a_d.transpose() * p0) * &spec.a_d);
    Ok((&base - &(&n_mat.transpose() * &k)).symmetrize())
}

/// Jump gains `[K_D1; K_D2] = −R_v⁻¹ N` at `P0`.
pub fn jump_gains(spec: &QuadraticGameSpec, p0: &Mat) -> Result<(Mat, Mat)> {
    let JumpBlocks { rv, n_mat } = jump_blocks(spec, p0);
    let k = rv.solve(&n_mat).map_err(|e| Error::SingularRv(e.to_string()))?.scale(-1.0);
    let d1 = spec.b_d1.cols();
    let n = spec.n();
    Ok((k.block(0, 0, d1, n), k.block(d1, 0, spec.b_d2.cols(), n)))
}

/// Flow gains `(−R_C1⁻¹B_C1ᵀP, −R_C2⁻¹B_C2ᵀP)`.
pub fn flow_gains(spec: &QuadraticGameSpec, p: &Mat) -> Result<(Mat, Mat)> {
    let k1 = spec.r_c1.solve(&(&spec.b_c1.transpose() * p))?.scale(-1.0);
    let k2 = spec.r_c2.solve(&(&spec.b_c2.transpose() * p))?.scale(-1.0);
    Ok((k1, k2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub r_c1_min_eig: Option<f64>,
    pub neg_r_c2_min_eig: Option<f64>,
    /// Minimum eigenvalue of `R_D1 + B_D1ᵀP0B_D1`.
    pub jump_block1_min_eig: Option<f64>,
    /// Minimum eigenvalue of `−R_D2 − B_D2ᵀP0B_D2`.
    pub jump_block2_min_eig: Option<f64>,
    pub rv_condition: Option<f64>,
    /// Smallest eigenvalue of `P` over the grid.
    pub p_min_eig: f64,
    pub iterations: usize,
    pub residual: f64,
    pub flow_check_max: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub kind: RiccatiKind,
    pub spec: QuadraticGameSpec,
    /// `P(0)`, or the constant `P`.
    pub p0: Mat,
    pub grid: Option<PGrid>,
    pub kc1: Mat,
    pub kc2: Mat,
    pub kd1: Mat,
    pub kd2: Mat,
    pub conditions: ConditionsReport,
}

fn conditions(spec: &QuadraticGameSpec, p0: &Mat, grid: Option<&PGrid>, jumps: bool, iterations: usize, residual: f64) -> ConditionsReport {
    let opt_eig = |m: &Mat| (m.rows() > 0).then(|| m.min_eigenvalue());
    let (j1, j2, cond) = if jumps {
        let (e1, e2) = jump_definiteness(spec, p0);
        let rv = jump_blocks(spec, p0).rv;
        (Some(e1), Some(e2), Some(rv.condition_number()))
    } else {
        (None, None, None)
    };
    let p_min = grid
        .map(|g| g.p.iter().map(Mat::min_eigenvalue).fold(f64::INFINITY, f64::min))
        .unwrap_or_else(|| p0.min_eigenvalue());
    let r1 = opt_eig(&spec.r_c1);
    let r2 = opt_eig(&spec.r_c2.scale(-1.0));
    let passed = r1.map_or(true, |e| e > 0.0)
        && r2.map_or(true, |e| e > 0.0)
        && j1.map_or(true, |e| e >= -DEF_TOL)
        && j2.map_or(true, |e| e >= -DEF_TOL)
        && cond.map_or(true, f64::is_finite);
    ConditionsReport {
        r_c1_min_eig: r1,
        neg_r_c2_min_eig: r2,
        jump_block1_min_eig: j1,
        jump_block2_min_eig: j2,
        rv_condition: cond,
        p_min_eig: p_min,
        iterations,
        residual,
        flow_check_max: None,
        passed,
    }
}

/// Value iteration of the jump map, used as a warm start.
fn dare_value_iteration(spec: &QuadraticGameSpec, start: &Mat, iters: usize) -> Mat {
    let mut p = start.clone();
    for _ in 0..iters {
        match jump_update(spec, &p) {
            Ok(next) if next.is_finite() && next.frobenius() < BLOWUP => {
                let done = (&next - &p).frobenius() < 1e-13 * (1.0 + p.frobenius());
                p = next;
                if done {
                    break;
                }
            }
            _ => return start.clone(),
        }
    }
    p
}

/// `Φ(P0)`: value at `τ = 0` of the backward ODE started from the jump
/// update of `P0` at `τ = T̄`.
fn periodic_map(spec: &QuadraticGameSpec, p0: &Mat, t_bar: f64) -> Result<(Mat, PGrid)> {
    let pt = jump_update(spec, p0)?;
    let grid = integrate_riccati_ode(spec, &pt, t_bar)?;
    Ok((grid.p[0].clone(), grid))
}

pub fn solve_periodic(spec: &QuadraticGameSpec) -> Result<RiccatiSolution> {
    spec.validate()?;
    let (t1, t2) = spec.timer.ok_or(Error::MissingTimer)?;
    let alpha = 0.5;
    let max_iter = 500;
    let mut p0 = dare_value_iteration(spec, &spec.q_d, 200);
    let mut res = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let (phi, _) = periodic_map(spec, &p0, t2)?;
        res = (&phi - &p0).frobenius();
        if res < 1e-12 {
            break;
        }
        p0 = (&p0.scale(1.0 - alpha) + &phi.scale(alpha)).symmetrize();
    }
    if !(res < 1e-8) {
        return Err(Error::NoConvergence { iterations, residual: res });
    }
    let (_, grid) = periodic_map(spec, &p0, t2)?;
    if t1 < t2 {
        let mismatch = (&grid.eval(t1) - &jump_update(spec, &p0)?).frobenius();
        if mismatch > 1e-6 {
            return Err(Error::InconsistentEquations { residual: mismatch });
        }
    }
    let (kc1, kc2) = flow_gains(spec, &p0)?;
    let (kd1, kd2) = jump_gains(spec, &p0)?;
    let conditions = conditions(spec, &p0, Some(&grid), true, iterations, res);
    Ok(RiccatiSolution { kind: RiccatiKind::PeriodicTimer, spec: spec.clone(), p0, grid: Some(grid), kc1, kc2, kd1, kd2, conditions })
}

fn sym_basis(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn basis_mat(n: usize, (i, j): (usize, usize)) -> Mat {
    let mut e = Mat::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn upper(m: &Mat, basis: &[(usize, usize)]) -> Vec<f64> {
    basis.iter().map(|&(i, j)| m[(i, j)]).collect()
}

struct Residual {
    r: Vec<f64>,
    jac: Mat,
}

fn stacked_residual(spec: &QuadraticGameSpec, s: &Mat, p: &Mat, flows: bool, jumps: bool) -> Result<Residual> {
    let n = spec.n();
    let basis = sym_basis(n);
    let mut r = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); basis.len()];
    if flows {
        let res = ode_rhs(spec, s, p).scale(-1.0);
        r.extend(upper(&res, &basis));
        let acl = &spec.a_c - &(s * p);
        for (c, &b) in basis.iter().enumerate() {
            let e = basis_mat(n, b);
            let ea = &e * &acl;
            cols[c].extend(upper(&(&ea + &ea.transpose()), &basis));
        }
    }
    if jumps {
        let next = jump_update(spec, p)?;
        r.extend(upper(&(&next - p), &basis));
        let JumpBlocks { rv, n_mat } = jump_blocks(spec, p);
        let k = rv.solve(&n_mat).map_err(|e| Error::SingularRv(e.to_string()))?;
        let acl = &spec.a_d - &(&spec.b_d() * &k);
        for (c, &b) in basis.iter().enumerate() {
            let e = basis_mat(n, b);
            let d = &(&(&acl.transpose() * &e) * &acl) - &e;
            cols[c].extend(upper(&d, &basis));
        }
    }
    let rows = r.len();
    let mut jac = Mat::zeros(rows, basis.len());
    for (c, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac[(i, c)] = *v;
        }
    }
    Ok(Residual { r, jac })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Warm start for flows: integrate the Riccati ODE backward from zero until
/// it settles.
fn care_warm_start(spec: &QuadraticGameSpec, s: &Mat) -> Mat {
    let n = spec.n();
    let mut p = Mat::zeros(n, n);
    let h = 1e-2;
    let f = |p: &Mat| ode_rhs(spec, s, p).scale(-1.0);
    for _ in 0..100_000 {
        let k1 = f(&p);
        if k1.frobenius() < 1e-9 {
            break;
        }
        let k2 = f(&(&p + &k1.scale(h / 2.0)));
        let k3 = f(&(&p + &k2.scale(h / 2.0)));
        let k4 = f(&(&p + &k3.scale(h)));
        let next = (&p + &(&(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4)).scale(h / 6.0)).symmetrize();
        if !next.is_finite() || next.frobenius() > BLOWUP {
            return spec.q_c.clone();
        }
        p = next;
    }
    p
}

/// Gauss–Newton on the stacked algebraic equations over symmetric `P`.
fn newton_constant(spec: &QuadraticGameSpec, start: Mat, flows: bool, jumps: bool) -> Result<(Mat, usize, f64)> {
    let s = spec.s_c()?;
    let n = spec.n();
    let basis = sym_basis(n);
    let mut p = start;
    let mut res = stacked_residual(spec, &s, &p, flows, jumps)?;
    let mut rn = norm(&res.r);
    let scale = 1.0 + spec.q_c.frobenius() + spec.q_d.frobenius();
    let mut best = rn;
    let mut stall = 0;
    for it in 1..=100 {
        if rn < 1e-13 * scale {
            return Ok((p, it - 1, rn));
        }
        let jt = res.jac.transpose();
        let step = if res.jac.rows() == res.jac.cols() {
            res.jac.solve_vec(&res.r)
        } else {
            (&jt * &res.jac).solve_vec(&jt.mul_vec(&res.r))
        };
        let step = match step {
            Ok(s) => s,
            Err(_) => break,
        };
        // backtracking keeps the iteration inside the definiteness region
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = p.clone();
            for (c, &(i, j)) in basis.iter().enumerate() {
                cand[(i, j)] -= t * step[c];
                if i != j {
                    cand[(j, i)] -= t * step[c];
                }
            }
            if let Ok(r2) = stacked_residual(spec, &s, &cand, flows, jumps) {
                let n2 = norm(&r2.r);
                if n2.is_finite() && (n2 < rn || t < 1e-6) {
                    p = cand;
                    res = r2;
                    rn = n2;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if rn < best * 0.999 {
            best = rn;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 8 {
                break;
            }
        }
        if it == 100 && rn >= 1e-6 {
            return Err(Error::NoConvergence { iterations: it, residual: rn });
        }
    }
    if rn < 1e-9 * scale {
        return Ok((p, 100, rn));
    }
    if rn > 1e-6 {
        return Err(Error::InconsistentEquations { residual: rn });
    }
    Ok((p, 100, rn))
}

pub fn solve_constant_robust(spec: &QuadraticGameSpec) -> Result<RiccatiSolution> {
    spec.validate()?;
    let (flows, jumps) = (spec.has_flows, spec.has_jumps);
    if !flows && !jumps {
        return Err(Error::InvalidSpec("neither flows nor jumps are present".into()));
    }
    let s = spec.s_c()?;
    let start = if flows {
        care_warm_start(spec, &s)
    } else {
        dare_value_iteration(spec, &spec.q_d, 200)
    };
    let (p, iterations, residual) = newton_constant(spec, start, flows, jumps)?;
    let kind = match (flows, jumps) {
        (true, false) => RiccatiKind::CareOnly,
        (false, true) => RiccatiKind::DareOnly,
        _ => RiccatiKind::ConstantP,
    };
    finish_constant(spec, p, kind, iterations, residual)
}

fn finish_constant(spec: &QuadraticGameSpec, p: Mat, kind: RiccatiKind, iterations: usize, residual: f64) -> Result<RiccatiSolution> {
    let n = spec.n();
    let d = spec.dims();
    let (kc1, kc2) = if spec.has_flows { flow_gains(spec, &p)? } else { (Mat::zeros(d.c1, n), Mat::zeros(d.c2, n)) };
    let (kd1, kd2) = if spec.has_jumps {
        check_jump_definiteness(spec, &p)?;
        jump_gains(spec, &p)?
    } else {
        (Mat::zeros(d.d1, n), Mat::zeros(d.d2, n))
    };
    let conditions = conditions(spec, &p, None, spec.has_jumps, iterations, residual);
    Ok(RiccatiSolution { kind, spec: spec.clone(), p0: p, grid: None, kc1, kc2, kd1, kd2, conditions })
}

/// Box sampler for the flow orthogonality check.
#[derive(Clone, Debug)]
pub struct CheckBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

/// Jump-only Riccati solve followed by the sampled check `2xᵀPF(x) = 0`.
pub fn solve_security(
    spec: &QuadraticGameSpec,
    flow: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    check: &CheckBox,
) -> Result<RiccatiSolution> {
    let mut js = spec.clone();
    js.has_flows = false;
    js.has_jumps = true;
    js.validate()?;
    let start = dare_value_iteration(&js, &js.q_d, 200);
    let (p, iterations, residual) = newton_constant(&js, start, false, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..check.samples {
        let x: Vec<f64> = check.lo.iter().zip(&check.hi).map(|(l, h)| l + (h - l) * rng.gen::<f64>()).collect();
        let f = flow(&x);
        let px = p.mul_vec(&x);
        let r = 2.0 * px.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        let sc = 2.0 * crate::linalg::norm(&px) * crate::linalg::norm(&f);
        worst = worst.max(r.abs());
        scale = scale.max(sc);
    }
    if worst > check.tol * scale.max(1.0) {
        return Err(Error::FlowConditionViolated { max_residual: worst });
    }
    let mut sol = finish_constant(&js, p, RiccatiKind::SecurityJump, iterations, residual)?;
    sol.spec = spec.clone();
    sol.conditions.flow_check_max = Some(worst);
    Ok(sol)
}

impl RiccatiSolution {
    /// `P(τ)`; constant kinds ignore `τ`.
    pub fn p_at(&self, tau: f64) -> Mat {
        match &self.grid {
            Some(g) => g.eval(tau),
            None => self.p0.clone(),
        }
    }

    /// Saddle-point law. For the timer kind the state is `(x_p, τ)` and the
    /// flow gains follow `P(τ)`.
    pub fn law(&self) -> FeedbackLaw {
        let d: InputDims = self.spec.dims();
        let n = self.spec.n();
        let lin = |k: Mat| -> StateFn { Arc::new(move |x: &[f64]| k.mul_vec(&x[..n])) };
        match (&self.kind, &self.grid) {
            (RiccatiKind::PeriodicTimer, Some(grid)) => {
                let flow_gain = |player: usize| -> StateFn {
                    let grid = grid.clone();
                    let spec = self.spec.clone();
                    Arc::new(move |x: &[f64]| {
                        let p = grid.eval(x[n]);
                        let (b, r) = if player == 1 { (&spec.b_c1, &spec.r_c1) } else { (&spec.b_c2, &spec.r_c2) };
                        let k = r.solve(&(&b.transpose() * &p)).expect("R_C blocks are invertible").scale(-1.0);
                        k.mul_vec(&x[..n])
                    })
                };
                FeedbackLaw::new(d, flow_gain(1), flow_gain(2), lin(self.kd1.clone()), lin(self.kd2.clone()))
            }
            _ => FeedbackLaw::new(
                d,
                lin(self.kc1.clone()),
                lin(self.kc2.clone()),
                lin(self.kd1.clone()),
                lin(self.kd2.clone()),
            ),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &Mat| m.to_rows();
        let grid = self.grid.as_ref().map(|g| {
            serde_json::json!({
                "tau": g.tau,
                "P": g.p.iter().map(rows).collect::<Vec<_>>(),
            })
        });
        serde_json::json!({
            "kind": self.kind,
            "P0": rows(&self.p0),
            "P_grid": grid,
            "gains": {
                "KC1": rows(&self.kc1),
                "KC2": rows(&self.kc2),
                "KD1": rows(&self.kd1),
                "KD2": rows(&self.kd2),
            },
            "conditions": self.conditions,
        })
    }
}
