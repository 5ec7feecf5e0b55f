use std::path::{Path, PathBuf};

use hygame_core::cost::{evaluate_cost, CostReport};
use hygame_core::hjbi::{check_equivalent_conditions, check_hjbi, parse_eps, saddle_sweep, synthesize_feedback, GridSpec};
use hygame_core::hybrid_domain::{read_csv, write_csv};
use hygame_core::riccati::{solve_constant_robust, solve_periodic, solve_security, CheckBox, RiccatiSolution};
use hygame_core::scenarios::{load_scenario, Scenario};
use hygame_core::simulator::{simulate, BranchPolicy, SimConfig};
use hygame_core::stability::{check_stability, ConvergenceOptions, TargetSet};
use hygame_core::{close_loop, Error, FeedbackLaw};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{CheckCmd, Cli, Command, GridArgs, LawChoice, Policy, SolveCmd, SweepCmd};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimensionMismatch(_)
            | Error::OutOfDomain(_)
            | Error::EmptyDomain
            | Error::InvalidInitialState(_)
            | Error::InfeasibleInput(_)
            | Error::MissingTimer
            | Error::UnknownScenario(_)
            | Error::NoInputBox
            | Error::CertificateMissing
            | Error::InvalidSpec(_)
            | Error::Parse(_) => EXIT_USAGE,
            Error::CertificateViolated(_) | Error::FlowConditionViolated { .. } | Error::ResidualTooLarge { .. } => {
                EXIT_CHECK_FAILED
            }
            _ => EXIT_NUMERIC,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(format!("i/o: {e}"))
    }
}

type Outcome = Result<u8, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Solve { which } => cmd_solve(cli, which),
        Command::Check { which: CheckCmd::Hjbi { scenario, grid, out } } => cmd_check_hjbi(cli, &scenario.scenario, grid, out),
        Command::Check { which: CheckCmd::Stability { scenario, grid, set, x0_batch, out } } => {
            cmd_check_stability(cli, &scenario.scenario, grid, set, x0_batch.as_deref(), out)
        }
        Command::Check { which: CheckCmd::Equivalent { scenario, grid, law, per_dim, out } } => {
            cmd_check_equivalent(cli, &scenario.scenario, grid, *law, *per_dim, out)
        }
        Command::Sweep { which: SweepCmd::Saddle { scenario, x0, eps, eps_w, out } } => {
            cmd_sweep(cli, &scenario.scenario, x0.as_deref(), eps, eps_w.as_deref(), out)
        }
        Command::EvaluateCost(a) => cmd_evaluate_cost(cli, &a.scenario.scenario, &a.traj, &a.out),
    }
}

fn manifest(cli: &Cli, name: &str, scenario: &str) -> RunManifest {
    // out-dir is left out so identical runs in different places hash alike
    let args = [("command", format!("{:?}", cli.command)), ("seed", cli.seed.to_string()), ("tol", format!("{:?}", cli.tol))];
    RunManifest::new(name, scenario, &args)
}

fn out_path(cli: &Cli, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        cli.out_dir.join(p)
    }
}

fn load(name: &str) -> Result<Scenario, Failure> {
    load_scenario(name).map_err(Failure::from)
}

fn parse_vec(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Failure::usage(format!("bad number `{v}` in `{s}`"))))
        .collect()
}

fn law_of(s: &Scenario) -> Result<&FeedbackLaw, Failure> {
    s.saddle_law.as_ref().ok_or_else(|| Failure::usage(format!("scenario `{}` has no feedback law", s.name)))
}

fn grid_of(cli: &Cli, s: &Scenario, g: &GridArgs) -> Result<GridSpec, Failure> {
    let grid = match &g.grid {
        Some(text) => GridSpec::parse(text)?.with_inputs(s.grid.flow_inputs.clone(), s.grid.jump_inputs.clone()),
        None => s.grid.clone(),
    };
    if grid.axes.len() != s.system.n {
        return Err(Failure::usage(format!("grid has {} axes, state has {}", grid.axes.len(), s.system.n)));
    }
    Ok(grid.with_jitter(cli.seed, g.jitter))
}

fn cost_json(rep: &CostReport, label: &str) -> serde_json::Value {
    let mut js = rep.to_json();
    js["branch"] = json!(label);
    js
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map_or("traj".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn cmd_simulate(cli: &Cli, a: &crate::SimulateArgs) -> Outcome {
    let s = load(&a.scenario.scenario)?;
    let x0 = match &a.x0 {
        Some(v) => parse_vec(v)?,
        None => s.default_x0.clone(),
    };
    let mut cfg = SimConfig {
        branch_policy: match a.policy {
            Policy::Jump => BranchPolicy::JumpPriority,
            Policy::Flow => BranchPolicy::FlowPriority,
            Policy::Both => BranchPolicy::EnumerateBoth(a.max_branches),
        },
        ..s.sim
    };
    if let Some(t) = a.tmax {
        cfg.t_budget = t;
    }
    if let Some(j) = a.jmax {
        cfg.j_budget = j;
    }
    if let Some(dt) = a.dt {
        cfg.dt_max = dt;
    }
    let cl = close_loop(&s.system, law_of(&s)?)?;
    let pairs = simulate(&cl, &x0, &cfg)?;
    let mut m = manifest(cli, "simulate", &s.name);
    let base = out_path(cli, &a.out);
    for (k, pair) in pairs.iter().enumerate() {
        let traj = if pairs.len() == 1 { base.clone() } else { with_suffix(&base, &format!("_{k}"), "csv") };
        m.write_text(&traj, &write_csv(pair, Some(&m.config_hash.clone())))?;
        let rep = evaluate_cost(pair, &s.costs)?;
        m.write_json(&with_suffix(&traj, "_cost", "json"), cost_json(&rep, &pair.branch_label()))?;
        println!(
            "branch {} status {} jumps {} total {:.16e} total_with_tail {:.16e}",
            pair.branch_label(),
            pair.terminal_status,
            pair.arc.num_jumps(),
            rep.total,
            rep.total_with_tail()
        );
    }
    m.finish(&cli.out_dir)?;
    Ok(EXIT_OK)
}

fn cmd_evaluate_cost(cli: &Cli, scenario: &str, traj: &Path, out: &Path) -> Outcome {
    let s = load(scenario)?;
    let text = std::fs::read_to_string(traj)?;
    let pair = read_csv(&text)?;
    if pair.arc.dim != s.system.n || pair.input.dims != s.system.dims {
        return Err(Failure::usage("trajectory dimensions do not match the scenario"));
    }
    let rep = evaluate_cost(&pair, &s.costs)?;
    let mut m = manifest(cli, "evaluate-cost", &s.name);
    m.write_json(&out_path(cli, out), cost_json(&rep, &pair.branch_label()))?;
    m.finish(&cli.out_dir)?;
    println!("total {:.16e} total_with_tail {:.16e}", rep.total, rep.total_with_tail());
    Ok(EXIT_OK)
}

fn cmd_solve(cli: &Cli, which: &SolveCmd) -> Outcome {
    let (kind, args) = match which {
        SolveCmd::Riccati(a) => ("riccati", a),
        SolveCmd::Security(a) => ("security", a),
        SolveCmd::Robust(a) => ("robust", a),
    };
    let s = load(&args.scenario.scenario)?;
    let spec = s.spec.as_ref().ok_or_else(|| Failure::usage(format!("scenario `{}` has no linear-quadratic spec", s.name)))?;
    let sol: RiccatiSolution = match kind {
        "riccati" if spec.timer.is_some() => solve_periodic(spec)?,
        "riccati" | "robust" => solve_constant_robust(spec)?,
        _ => {
            let sys = s.system.clone();
            let zero = vec![0.0; sys.dims.flow()];
            let check = CheckBox {
                lo: s.grid.axes.iter().map(|a| a.lo).collect(),
                hi: s.grid.axes.iter().map(|a| a.hi).collect(),
                samples: 200,
                seed: cli.seed,
                tol: cli.tol.unwrap_or(1e-9),
            };
            solve_security(spec, &move |x: &[f64]| sys.flow_map.eval(x, &zero), &check)?
        }
    };
    let mut m = manifest(cli, &format!("solve {kind}"), &s.name);
    m.write_json(&out_path(cli, &args.out), sol.to_json())?;
    m.finish(&cli.out_dir)?;
    let p0 = sol.p0.to_rows();
    println!("kind {:?} P0 {:?} conditions {}", sol.kind, p0, if sol.conditions.passed { "ok" } else { "FAILED" });
    Ok(if sol.conditions.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_check_hjbi(cli: &Cli, scenario: &str, g: &GridArgs, out: &Path) -> Outcome {
    let s = load(scenario)?;
    let v = s.certificate.as_ref().ok_or(Error::CertificateMissing)?;
    let grid = grid_of(cli, &s, g)?;
    let tol = cli.tol.unwrap_or(1e-8);
    let rep = check_hjbi(v, &s.system, &s.costs, &grid);
    let passed = rep.errors.is_empty() && rep.max_residual() <= tol && rep.max_isaacs_gap <= tol;
    let mut m = manifest(cli, "check hjbi", &s.name);
    let mut body = serde_json::to_value(&rep).unwrap();
    body["tol"] = json!(tol);
    body["passed"] = json!(passed);
    m.write_json(&out_path(cli, out), body)?;
    m.finish(&cli.out_dir)?;
    println!(
        "flow {:e} jump {:e} isaacs {:e} points {}/{} {}",
        rep.max_flow_residual,
        rep.max_jump_residual,
        rep.max_isaacs_gap,
        rep.flow_points,
        rep.jump_points,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn read_batch(path: &Path, n: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match parse_vec(line) {
            Ok(x) if x.len() == n => out.push(x),
            Ok(x) => return Err(Failure::usage(format!("initial state {x:?} needs {n} entries"))),
            // header row
            Err(_) if out.is_empty() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn cmd_check_stability(cli: &Cli, scenario: &str, g: &GridArgs, set: &str, batch: Option<&Path>, out: &Path) -> Outcome {
    let s = load(scenario)?;
    let target = match set {
        "origin" => TargetSet::Origin,
        "scenario" => s.target.clone(),
        other => return Err(Failure::usage(format!("unknown target set `{other}`"))),
    };
    let grid = grid_of(cli, &s, g)?;
    let x0s = match batch {
        Some(p) => read_batch(p, s.system.n)?,
        None => vec![s.default_x0.clone()],
    };
    let opts = ConvergenceOptions {
        cfg: s.sim,
        analytic_bound: s.stability_bound.as_ref().map(|k| k.0.clone()),
        ..ConvergenceOptions::default()
    };
    let rep = check_stability(
        s.certificate.as_ref(),
        &s.system,
        law_of(&s)?,
        &s.costs,
        &target,
        &grid.points(),
        &x0s,
        opts,
        cli.tol.unwrap_or(1e-8),
    )?;
    let mut m = manifest(cli, "check stability", &s.name);
    m.write_json(&out_path(cli, out), serde_json::to_value(&rep).unwrap())?;
    m.finish(&cli.out_dir)?;
    let ok = rep.trajectories.iter().filter(|t| t.passed).count();
    println!(
        "condition {:?} lyapunov {} trajectories {}/{} {}",
        rep.condition,
        if rep.lyapunov.passed { "ok" } else { "FAILED" },
        ok,
        rep.trajectories.len(),
        if rep.passed { "PASS" } else { "FAIL" }
    );
    Ok(if rep.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_check_equivalent(cli: &Cli, scenario: &str, g: &GridArgs, law: LawChoice, per_dim: usize, out: &Path) -> Outcome {
    let s = load(scenario)?;
    let v = s.certificate.as_ref().ok_or(Error::CertificateMissing)?;
    let grid = grid_of(cli, &s, g)?;
    let tol = cli.tol.unwrap_or(1e-7);
    let law = match law {
        LawChoice::Synthesized => synthesize_feedback(v, &s.system, &s.costs, &grid, 1e-6)?,
        LawChoice::Saddle => law_of(&s)?.clone(),
        LawChoice::Flipped => law_of(&s)?.flip_c1().flip_d1(),
    };
    let rep = check_equivalent_conditions(v, &s.system, &s.costs, &law, &grid, per_dim, tol);
    let mut m = manifest(cli, "check equivalent", &s.name);
    m.write_json(&out_path(cli, out), serde_json::to_value(&rep).unwrap())?;
    m.finish(&cli.out_dir)?;
    for c in &rep.conditions {
        println!("({}) samples {} worst {:e} {}", c.label, c.samples, c.worst_violation, if c.passed { "ok" } else { "VIOLATED" });
    }
    Ok(if rep.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_sweep(cli: &Cli, scenario: &str, x0: Option<&str>, eps: &str, eps_w: Option<&str>, out: &Path) -> Outcome {
    let s = load(scenario)?;
    let x0 = match x0 {
        Some(v) => parse_vec(v)?,
        None => s.default_x0.clone(),
    };
    let eu = parse_eps(eps)?;
    let ew = match eps_w {
        Some(e) => parse_eps(e)?,
        None => eu.clone(),
    };
    let sweep = saddle_sweep(&s.system, &s.costs, law_of(&s)?, &x0, &eu, &ew, &s.sim);
    let mut m = manifest(cli, "sweep saddle", &s.name);
    let csv = format!("# manifest={}\n{}", m.config_hash, sweep.to_csv());
    m.write_text(&out_path(cli, out), &csv)?;
    m.finish(&cli.out_dir)?;
    match sweep.check(cli.tol.unwrap_or(1e-6)) {
        Some(c) => {
            println!(
                "center {:.16e} row excess {:e} column excess {:e} {}",
                c.center,
                c.worst_row_excess,
                c.worst_column_excess,
                if c.passed { "PASS" } else { "FAIL" }
            );
            Ok(if c.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        None => {
            println!("no (1, 1) cell or its simulation failed; ordering not checked");
            Ok(EXIT_CHECK_FAILED)
        }
    }
}
