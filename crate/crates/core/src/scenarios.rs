//! Builtin example games and the JSON loader for linear ones.

use std::sync::Arc;

use serde_json::Value;

use crate::cost::{StageCost, StageCosts};
use crate::error::{Error, Result};
use crate::hjbi::{GridSpec, InputBox, ValueCertificate};
use crate::hybrid_domain::InputDims;
use crate::linalg::Mat;
use crate::riccati::{solve_constant_robust, solve_periodic, RiccatiSolution};
use crate::simulator::SimConfig;
use crate::stability::{KBound, TargetSet};
use crate::system::{
    build_timer_lq_system, FeedbackLaw, GameSystem, Halfspace, QuadraticGameSpec, Region, VectorField,
};

pub const BUILTIN_SCENARIOS: &[&str] =
    &["lq_periodic_1d", "robust_1d_nonunique", "bouncing_ball", "bouncing_ball_zeno", "security_jump"];

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub system: GameSystem,
    pub costs: StageCosts,
    pub spec: Option<QuadraticGameSpec>,
    pub certificate: Option<ValueCertificate>,
    pub saddle_law: Option<FeedbackLaw>,
    pub default_x0: Vec<f64>,
    pub grid: GridSpec,
    pub target: TargetSet,
    pub sim: SimConfig,
    /// `α1⁻¹∘α2` for the certificate, when known in closed form.
    pub stability_bound: Option<KBound>,
}

impl Scenario {
    /// The four-part view: system, costs, optional spec, optional certificate.
    pub fn parts(&self) -> (&GameSystem, &StageCosts, Option<&QuadraticGameSpec>, Option<&ValueCertificate>) {
        (&self.system, &self.costs, self.spec.as_ref(), self.certificate.as_ref())
    }

    pub fn value(&self, x: &[f64]) -> Option<f64> {
        self.certificate.as_ref().map(|v| v.value(x))
    }
}

/// Parameters of the robust 1-D example.
pub mod robust_1d {
    pub const A: f64 = -1.0;
    pub const B1: f64 = 1.0;
    pub const B2: f64 = 1.0;
    pub const DELTA: f64 = 2.0;
    pub const MU: f64 = 1.0;
    pub const SIGMA: f64 = 0.5;
    pub const Q_C: f64 = 1.0;
    pub const R_C1: f64 = 1.304;
    pub const R_C2: f64 = -4.0;
}

/// Parameters of the bouncing-ball example.
pub mod ball {
    pub const LAMBDA: f64 = 0.8;
    pub const R_D1: f64 = 10.0;
    pub const R_D2: f64 = -20.0;

    /// State weight that makes `x₁ + x₂²/2` the value of the jump game.
    pub fn q_d(lambda: f64, r1: f64, r2: f64) -> f64 {
        0.5 - lambda * lambda * r1 * r2 / (r1 + r2 + 2.0 * r1 * r2)
    }

    /// `α1⁻¹(α2(d))` for `V = x₁ + x₂²/2` on `x₁ ≥ 0`, with
    /// `α1(s) = min(s/√2, s²/4)` and `α2(s) = s + s²/2`.
    pub fn bound(d: f64) -> f64 {
        let a = d + d * d / 2.0;
        (2.0 * a.sqrt()).max(std::f64::consts::SQRT_2 * a)
    }

    /// `(κ_D1, κ_D2)` coefficients of `x₂`.
    pub fn gains(lambda: f64, r1: f64, r2: f64) -> (f64, f64) {
        let den = r1 + r2 + 2.0 * r1 * r2;
        (r2 * lambda / den, r1 * lambda / den)
    }
}

/// Parameters of the security example: rotation on the first quadrant,
/// jumps on the positive `x₁` axis.
pub mod security {
    pub const LAMBDA: f64 = 0.8;
    pub const R_D1: f64 = 10.0;
    pub const R_D2: f64 = -20.0;

    /// `Q_D[0][0]` for which the jump Riccati equation has `P = I`.
    pub fn q11(lambda: f64, r1: f64, r2: f64) -> f64 {
        // 1ᵀ(R + 11ᵀ)⁻¹1 = s/(1+s) with s = 1/r1 + 1/r2
        let s = 1.0 / r1 + 1.0 / r2;
        1.0 - lambda * lambda * (1.0 - s / (1.0 + s))
    }
}

/// `d ↦ √(λmax/λmin)·d` over a family of positive definite `P`.
fn quadratic_bound<'a>(ps: impl IntoIterator<Item = &'a Mat>) -> Option<KBound> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in ps {
        lo = lo.min(p.min_eigenvalue());
        hi = hi.max(p.max_eigenvalue());
    }
    let gain = (hi / lo).sqrt();
    (lo > 0.0 && gain.is_finite()).then(|| KBound(Arc::new(move |d| gain * d)))
}

fn grid(s: &str, flow: Option<InputBox>, jump: Option<InputBox>) -> GridSpec {
    GridSpec::parse(s).expect("builtin grid").with_inputs(flow, jump)
}

fn costs_with_terminal(flow: StageCost, jump: StageCost, v: Option<&ValueCertificate>) -> StageCosts {
    let terminal: crate::cost::ScalarFn = match v {
        Some(v) => {
            let v = v.clone();
            Arc::new(move |x| v.value(x))
        }
        None => Arc::new(|_| 0.0),
    };
    StageCosts { flow, jump, terminal }
}

fn lq_periodic_1d() -> Result<Scenario> {
    let dims = InputDims::new(1, 1, 1, 1);
    let mut spec = QuadraticGameSpec::zeros(1, dims);
    spec.a_c = Mat::scalar(1.8);
    spec.b_c1 = Mat::scalar(1.0);
    spec.b_c2 = Mat::scalar(1.0);
    spec.a_d = Mat::scalar(2.0);
    spec.b_d1 = Mat::scalar(1.0);
    spec.b_d2 = Mat::scalar(1.0);
    spec.q_c = Mat::scalar(0.1);
    spec.r_c1 = Mat::scalar(1.304);
    spec.r_c2 = Mat::scalar(-4.0);
    spec.q_d = Mat::scalar(1.0);
    spec.r_d1 = Mat::scalar(1.304);
    spec.r_d2 = Mat::scalar(-8.0);
    spec.timer = Some((1.0, 1.0));
    let system = build_timer_lq_system(&spec)?;
    let sol = solve_periodic(&spec)?;
    let v = ValueCertificate::timer(sol.grid.clone().expect("periodic grid"), 1);
    let costs = costs_with_terminal(
        StageCost::quadratic(spec.q_c.clone(), spec.r_c()),
        StageCost::quadratic(spec.q_d.clone(), spec.r_d()),
        Some(&v),
    );
    Ok(Scenario {
        name: "lq_periodic_1d".into(),
        system,
        costs,
        saddle_law: Some(sol.law()),
        spec: Some(spec),
        certificate: Some(v),
        default_x0: vec![1.0, 0.0],
        grid: grid(
            "-1.5,1.5,31;0,1,21",
            Some(InputBox::uniform(2, -20.0, 20.0, 41)),
            Some(InputBox::uniform(2, -20.0, 20.0, 41)),
        ),
        target: TargetSet::origin_in(1, 2),
        sim: SimConfig { t_budget: 10.0, ..SimConfig::default() },
        stability_bound: sol.grid.as_ref().and_then(|g| quadratic_bound(&g.p)),
    })
}

/// Flow-only spec of the robust example (no jump inputs).
pub fn robust_1d_spec() -> QuadraticGameSpec {
    use robust_1d::*;
    let mut spec = QuadraticGameSpec::zeros(1, InputDims::new(1, 1, 0, 0));
    spec.a_c = Mat::scalar(A);
    spec.b_c1 = Mat::scalar(B1);
    spec.b_c2 = Mat::scalar(B2);
    spec.q_c = Mat::scalar(Q_C);
    spec.r_c1 = Mat::scalar(R_C1);
    spec.r_c2 = Mat::scalar(R_C2);
    spec.has_jumps = false;
    spec
}

fn robust_1d_nonunique() -> Result<Scenario> {
    use robust_1d::*;
    let spec = robust_1d_spec();
    let sol: RiccatiSolution = solve_constant_robust(&spec)?;
    let p = sol.p0[(0, 0)];
    let v = ValueCertificate::from_p(sol.p0.clone());
    let system = GameSystem {
        n: 1,
        dims: spec.dims(),
        flow_set: Region::Box { lo: vec![0.0], hi: vec![DELTA] },
        flow_map: VectorField::linear(spec.a_c.clone(), spec.b_c()),
        jump_set: Region::Polyhedron { ineq: vec![], eq: vec![Halfspace::new(vec![1.0], MU)] },
        jump_map: VectorField::Affine {
            drift: Arc::new(|_| vec![SIGMA]),
            input: Arc::new(|_| Mat::zeros(1, 0)),
        },
        terminal_set: Region::Empty,
    };
    let costs = costs_with_terminal(
        StageCost::quadratic(spec.q_c.clone(), spec.r_c()),
        StageCost::InputQuadratic { state: Arc::new(move |x| p * (x[0] * x[0] - SIGMA * SIGMA)), r: Mat::zeros(0, 0) },
        Some(&v),
    );
    Ok(Scenario {
        name: "robust_1d_nonunique".into(),
        system,
        costs,
        saddle_law: Some(sol.law()),
        spec: Some(spec),
        certificate: Some(v),
        default_x0: vec![DELTA],
        grid: grid("0,2,51", Some(InputBox::uniform(2, -2.0, 2.0, 41)), None),
        target: TargetSet::Origin,
        sim: SimConfig::default(),
        stability_bound: quadratic_bound([&sol.p0]),
    })
}

fn bouncing_ball_with(name: &str, terminal_set: Region) -> Scenario {
    use ball::*;
    let qd = q_d(LAMBDA, R_D1, R_D2);
    let (k1, k2) = gains(LAMBDA, R_D1, R_D2);
    let system = GameSystem {
        n: 2,
        dims: InputDims::new(0, 0, 1, 1),
        flow_set: Region::Polyhedron { ineq: vec![Halfspace::new(vec![1.0, 0.0], 0.0)], eq: vec![] },
        flow_map: VectorField::Affine {
            drift: Arc::new(|x| vec![x[1], -1.0]),
            input: Arc::new(|_| Mat::zeros(2, 0)),
        },
        jump_set: Region::Polyhedron {
            ineq: vec![Halfspace::new(vec![0.0, -1.0], 0.0)],
            eq: vec![Halfspace::new(vec![1.0, 0.0], 0.0)],
        },
        jump_map: VectorField::linear(
            Mat::from_rows(&[vec![0.0, 0.0], vec![0.0, -LAMBDA]]).unwrap(),
            Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
        ),
        terminal_set,
    };
    let v = ValueCertificate::quadratic(Mat::diag(&[0.0, 0.5]), vec![1.0, 0.0], 0.0);
    let costs = costs_with_terminal(
        StageCost::zero(0),
        StageCost::InputQuadratic { state: Arc::new(move |x| qd * x[1] * x[1]), r: Mat::diag(&[R_D1, R_D2]) },
        Some(&v),
    );
    let mut spec = QuadraticGameSpec::zeros(2, system.dims);
    spec.a_c = Mat::zeros(2, 2);
    spec.a_d = Mat::from_rows(&[vec![0.0, 0.0], vec![0.0, -LAMBDA]]).unwrap();
    spec.b_d1 = Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    spec.b_d2 = Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    spec.q_d = Mat::diag(&[0.0, qd]);
    spec.r_d1 = Mat::scalar(R_D1);
    spec.r_d2 = Mat::scalar(R_D2);
    let law = FeedbackLaw::linear(
        Mat::zeros(0, 2),
        Mat::zeros(0, 2),
        Mat::from_rows(&[vec![0.0, k1]]).unwrap(),
        Mat::from_rows(&[vec![0.0, k2]]).unwrap(),
    );
    Scenario {
        name: name.into(),
        system,
        costs,
        spec: Some(spec),
        certificate: Some(v),
        saddle_law: Some(law),
        default_x0: vec![1.0, 1.0],
        grid: grid("0,2,21;-3,3,31", None, Some(InputBox::uniform(2, -1.0, 1.0, 41))),
        target: TargetSet::Origin,
        sim: SimConfig::default(),
        stability_bound: Some(KBound(Arc::new(bound))),
    }
}

fn security_jump() -> Result<Scenario> {
    use security::*;
    let dims = InputDims::new(0, 0, 1, 1);
    let mut spec = QuadraticGameSpec::zeros(2, dims);
    spec.a_c = Mat::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]])?;
    spec.a_d = Mat::from_rows(&[vec![0.0, 0.0], vec![LAMBDA, 0.0]])?;
    spec.b_d1 = Mat::from_rows(&[vec![0.0], vec![1.0]])?;
    spec.b_d2 = Mat::from_rows(&[vec![0.0], vec![1.0]])?;
    spec.q_d = Mat::diag(&[q11(LAMBDA, R_D1, R_D2), 1.0]);
    spec.r_d1 = Mat::scalar(R_D1);
    spec.r_d2 = Mat::scalar(R_D2);
    let a_c = spec.a_c.clone();
    let check = crate::riccati::CheckBox { lo: vec![0.0, 0.0], hi: vec![2.0, 2.0], samples: 200, seed: 7, tol: 1e-9 };
    let sol = crate::riccati::solve_security(&spec, &move |x: &[f64]| a_c.mul_vec(x), &check)?;
    let v = ValueCertificate::from_p(sol.p0.clone());
    let system = GameSystem {
        n: 2,
        dims,
        flow_set: Region::Polyhedron {
            ineq: vec![Halfspace::new(vec![1.0, 0.0], 0.0), Halfspace::new(vec![0.0, 1.0], 0.0)],
            eq: vec![],
        },
        flow_map: VectorField::linear(spec.a_c.clone(), Mat::zeros(2, 0)),
        jump_set: Region::Polyhedron {
            ineq: vec![Halfspace::new(vec![1.0, 0.0], 0.0)],
            eq: vec![Halfspace::new(vec![0.0, 1.0], 0.0)],
        },
        jump_map: VectorField::linear(spec.a_d.clone(), spec.b_d()),
        terminal_set: Region::Empty,
    };
    let costs = costs_with_terminal(
        StageCost::zero(0),
        StageCost::quadratic(spec.q_d.clone(), spec.r_d()),
        Some(&v),
    );
    Ok(Scenario {
        name: "security_jump".into(),
        system,
        costs,
        saddle_law: Some(sol.law()),
        spec: Some(spec),
        certificate: Some(v),
        default_x0: vec![0.0, 1.0],
        grid: grid("0,2,21;0,2,21", None, Some(InputBox::uniform(2, -2.0, 2.0, 41))),
        target: TargetSet::Origin,
        sim: SimConfig::default(),
        stability_bound: quadratic_bound([&sol.p0]),
    })
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    match name {
        "lq_periodic_1d" => lq_periodic_1d(),
        "robust_1d_nonunique" => robust_1d_nonunique(),
        "bouncing_ball" => Ok(bouncing_ball_with(
            "bouncing_ball",
            Region::Box { lo: vec![0.0, -0.37], hi: vec![0.3, 0.37] },
        )),
        "bouncing_ball_zeno" => Ok(bouncing_ball_with("bouncing_ball_zeno", Region::Empty)),
        "security_jump" => security_jump(),
        _ => Err(Error::UnknownScenario(name.to_string())),
    }
}

/// Builtin name first, then a JSON file path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if BUILTIN_SCENARIOS.contains(&name_or_path) {
        return builtin_scenario(name_or_path);
    }
    let path = std::path::Path::new(name_or_path);
    if !path.is_file() {
        return Err(Error::UnknownScenario(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let json: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    scenario_from_json(&json)
}

fn num(v: &Value) -> Result<f64> {
    match v {
        Value::Null => Ok(f64::NAN),
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Parse(format!("bad number {n}"))),
        _ => Err(Error::Parse(format!("expected a number, got {v}"))),
    }
}

fn mat_field(obj: &Value, key: &str, rows: usize, cols: usize) -> Result<Mat> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(Mat::zeros(rows, cols)),
        Some(Value::Number(n)) if rows == 1 && cols == 1 => Ok(Mat::scalar(n.as_f64().unwrap_or(f64::NAN))),
        Some(Value::Array(rs)) => {
            let rows_v: Vec<Vec<f64>> = rs
                .iter()
                .map(|r| match r {
                    Value::Array(c) => c.iter().map(num).collect::<Result<Vec<f64>>>(),
                    other => Ok(vec![num(other)?]),
                })
                .collect::<Result<_>>()?;
            let m = if rows_v.is_empty() { Mat::zeros(rows, cols) } else { Mat::from_rows(&rows_v)? };
            if m.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch(format!("{key} is {:?}, expected {rows}x{cols}", m.shape())));
            }
            Ok(m)
        }
        Some(other) => Err(Error::Parse(format!("{key}: expected a matrix, got {other}"))),
    }
}

fn bounds(v: &Value, key: &str, inf: f64) -> Result<Vec<f64>> {
    let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| Error::Parse(format!("terminal_set needs `{key}`")))?;
    arr.iter().map(|x| if x.is_null() { Ok(inf) } else { num(x) }).collect()
}

/// Linear scenarios from the JSON schema. Custom maps are builtin-only.
pub fn scenario_from_json(json: &Value) -> Result<Scenario> {
    let name = json.get("name").and_then(Value::as_str).unwrap_or("custom").to_string();
    let n = json.get("n").and_then(Value::as_u64).ok_or_else(|| Error::Parse("scenario needs `n`".into()))? as usize;
    let d = json.get("dims").cloned().unwrap_or(Value::Null);
    let dim = |k: &str| d.get(k).and_then(Value::as_u64).unwrap_or(0) as usize;
    let dims = InputDims::new(dim("c1"), dim("c2"), dim("d1"), dim("d2"));
    let mut spec = QuadraticGameSpec::zeros(n, dims);
    let empty = Value::Null;
    let flow = json.get("flow").unwrap_or(&empty);
    let jump = json.get("jump").unwrap_or(&empty);
    for (part, label) in [(flow, "flow"), (jump, "jump")] {
        if let Some(kind) = part.get("kind").and_then(Value::as_str) {
            if kind != "linear" {
                return Err(Error::InvalidSpec(format!("{label} kind `{kind}` is only available for builtin scenarios")));
            }
        }
    }
    spec.has_flows = !flow.is_null();
    spec.has_jumps = !jump.is_null();
    spec.a_c = mat_field(flow, "A_C", n, n)?;
    spec.b_c1 = mat_field(flow, "B_C1", n, dims.c1)?;
    spec.b_c2 = mat_field(flow, "B_C2", n, dims.c2)?;
    spec.a_d = mat_field(jump, "A_D", n, n)?;
    spec.b_d1 = mat_field(jump, "B_D1", n, dims.d1)?;
    spec.b_d2 = mat_field(jump, "B_D2", n, dims.d2)?;
    let c = json.get("costs").unwrap_or(&empty);
    spec.q_c = mat_field(c, "Q_C", n, n)?;
    spec.q_d = mat_field(c, "Q_D", n, n)?;
    let or_default = |key: &str, m: usize, sign: f64| -> Result<Mat> {
        if c.get(key).is_some() {
            mat_field(c, key, m, m)
        } else {
            Ok(Mat::identity(m).scale(sign))
        }
    };
    spec.r_c1 = or_default("R_C1", dims.c1, 1.0)?;
    spec.r_c2 = or_default("R_C2", dims.c2, -1.0)?;
    spec.r_d1 = or_default("R_D1", dims.d1, 1.0)?;
    spec.r_d2 = or_default("R_D2", dims.d2, -1.0)?;
    if let Some(t) = json.get("timer").filter(|t| !t.is_null()) {
        let t1 = num(t.get("T1").unwrap_or(&Value::Null))?;
        let t2 = num(t.get("T2").unwrap_or(&Value::Null))?;
        spec.timer = Some((t1, t2));
    }
    spec.validate()?;

    let (mut system, sol, certificate) = if spec.timer.is_some() {
        let sys = build_timer_lq_system(&spec)?;
        let sol = solve_periodic(&spec).ok();
        let v = sol.as_ref().and_then(|s| s.grid.clone()).map(|g| ValueCertificate::timer(g, n));
        (sys, sol, v)
    } else {
        let sol = solve_constant_robust(&spec).ok();
        let v = sol.as_ref().map(|s| ValueCertificate::from_p(s.p0.clone()));
        (spec.linear_system(), sol, v)
    };
    if let Some(ts) = json.get("terminal_set").filter(|t| !t.is_null()) {
        match ts.get("kind").and_then(Value::as_str) {
            Some("box") => {
                let mut lo = bounds(ts, "lo", f64::NEG_INFINITY)?;
                let mut hi = bounds(ts, "hi", f64::INFINITY)?;
                if lo.len() != n || hi.len() != n {
                    return Err(Error::DimensionMismatch(format!("terminal box needs {n} bounds")));
                }
                lo.resize(system.n, f64::NEG_INFINITY);
                hi.resize(system.n, f64::INFINITY);
                system.terminal_set = Region::Box { lo, hi };
            }
            other => return Err(Error::InvalidSpec(format!("terminal_set kind {other:?} not supported"))),
        }
    }
    let q_t = if c.get("Q_T").is_some() { Some(mat_field(c, "Q_T", n, n)?) } else { None };
    let terminal: crate::cost::ScalarFn = match (q_t, &certificate) {
        (Some(q), _) => Arc::new(move |x| q.quad_form(&x[..n])),
        (None, Some(v)) => {
            let v = v.clone();
            Arc::new(move |x| v.value(x))
        }
        (None, None) => Arc::new(|_| 0.0),
    };
    let costs = StageCosts {
        flow: StageCost::quadratic(spec.q_c.clone(), spec.r_c()),
        jump: StageCost::quadratic(spec.q_d.clone(), spec.r_d()),
        terminal,
    };
    let mut axes = vec!["-1,1,11"; n].join(";");
    let mut target = TargetSet::Origin;
    if spec.timer.is_some() {
        axes.push_str(&format!(";0,{},11", spec.timer.unwrap().1));
        target = TargetSet::origin_in(n, n + 1);
    }
    let grid = GridSpec::parse(&axes)?;
    let mut x0 = vec![1.0; n];
    if spec.timer.is_some() {
        x0.push(0.0);
    }
    Ok(Scenario {
        name,
        system,
        costs,
        saddle_law: sol.as_ref().map(RiccatiSolution::law),
        spec: Some(spec),
        certificate,
        default_x0: x0,
        grid,
        target,
        sim: SimConfig::default(),
        stability_bound: sol.as_ref().and_then(|s| match &s.grid {
            Some(g) => quadratic_bound(&g.p),
            None => quadratic_bound([&s.p0]),
        }),
    })
}
