//! The five config-driven commands plus the `describe` subcommand.

use std::path::{Path, PathBuf};

use serde::Serialize;

use penlab_core::limits::to_csv;
use penlab_core::{
    build_grid, check_c_stationarity, fit_record_rates, run_all, run_sweep, solve_derivative,
    solve_oc_path_with, solve_pdas, solve_penalized, verify_assumptions, ControlProblem,
    CStationarityReport, DiscreteField, EllipticOperators, FamilyKind, FamilySpec, Grid,
    OcOptions, OcPathRow, RateSummary, RegKind, SweepConfig,
};

use crate::config::{Command, ExperimentConfig, FamilyConfig, GridSpec, OcConfig};
use crate::error::{CliError, Result};
use crate::fields::{nodal_csv, resolve_density, resolve_directions, resolve_field};
use crate::output::{csv_float, write_atomic, write_json, SCHEMA_VERSION};

/// Run a validated config; returns the process exit code (0, or 4 when a
/// verify run finds failing criteria).
pub fn execute(config: &ExperimentConfig, out_dir: &Path, seed_flag: Option<u64>) -> Result<u8> {
    let seed = seed_flag.unwrap_or(config.seed);
    match config.command {
        Command::Solve => run_solve(config, out_dir),
        Command::Sweep => run_sweep_cmd(config, out_dir, seed),
        Command::Derivative => run_derivative(config, out_dir, seed),
        Command::Oc => run_oc(config, out_dir),
        Command::Verify => run_verify(config, out_dir),
    }
}

/// Pull the pieces every instance-based command starts from.
struct Instance {
    grid: Grid,
    ops: EllipticOperators,
    label: String,
    psi: DiscreteField,
}

fn build_instance(config: &ExperimentConfig) -> Result<Instance> {
    let spec: &GridSpec = config.grid.as_ref().expect("checked by config");
    let (grid, ops) = build_grid(spec.extent, spec.n)?;
    let psi = resolve_field(config.psi.as_ref().expect("checked by config"), grid, "psi")?;
    Ok(Instance {
        grid,
        ops,
        label: spec.label.clone(),
        psi,
    })
}

fn build_family_spec(fam: &FamilyConfig, grid: Grid) -> Result<FamilySpec> {
    let lambda_bar = fam
        .lambda_bar
        .as_ref()
        .map(|s| resolve_field(s, grid, "family.lambda_bar"))
        .transpose()?;
    Ok(FamilySpec::new(fam.kind, fam.reg, lambda_bar))
}

/// `‖(u − ψ)⁺‖_{L²}` — how far the state presses through the obstacle.
fn violation_l2(ops: &EllipticOperators, u: &DiscreteField, psi: &DiscreteField) -> Result<f64> {
    let values: Vec<f64> = u
        .values()
        .iter()
        .zip(psi.values())
        .map(|(&u, &p)| (u - p).max(0.0))
        .collect();
    let excess = DiscreteField::from_values(ops.grid(), values)?;
    Ok(ops.norm_l2(&excess)?)
}

fn out_path(dir: &Path, name: &Option<String>, default: &str) -> PathBuf {
    dir.join(name.as_deref().unwrap_or(default))
}

// ---------------------------------------------------------------- solve --

#[derive(Serialize)]
struct SolveSummary {
    schema_version: u32,
    command: &'static str,
    grid: String,
    nodes: usize,
    family: String,
    rho: f64,
    solver_tol: f64,
    newton_iterations: usize,
    gateaux_differentiable: bool,
    kink_nodes: usize,
    violation_l2: f64,
    u_h10: f64,
    u_linf: f64,
}

fn run_solve(config: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let inst = build_instance(config)?;
    let fam_cfg = config.family.as_ref().expect("checked by config");
    let spec = build_family_spec(fam_cfg, inst.grid)?;
    let rho = fam_cfg.rho.expect("checked by config");
    let fam = spec.instantiate(inst.grid, rho)?;
    let f = resolve_density(config.f.as_ref().expect("checked by config"), &inst.ops, "f")?;

    let sol = solve_penalized(&inst.ops, &fam, &inst.psi, &f, config.solver_tol)?;
    let summary = SolveSummary {
        schema_version: SCHEMA_VERSION,
        command: "solve",
        grid: inst.label,
        nodes: inst.grid.node_count(),
        family: spec.label(),
        rho,
        solver_tol: config.solver_tol,
        newton_iterations: sol.newton_iters(),
        gateaux_differentiable: sol.is_gateaux(),
        kink_nodes: sol.kink_nodes().len(),
        violation_l2: violation_l2(&inst.ops, sol.u_rho(), &inst.psi)?,
        u_h10: inst.ops.norm_h10(sol.u_rho())?,
        u_linf: sol.u_rho().linf_norm(),
    };

    let csv_path = out_path(out_dir, &config.out_csv, "u.csv");
    let json_path = out_path(out_dir, &config.out_json, "solve.json");
    write_atomic(&csv_path, &nodal_csv("u", sol.u_rho()))?;
    write_json(&json_path, &summary)?;
    println!(
        "solve: {} nodes, {}, rho = {rho:e}: {} newton iterations, violation_l2 = {:.3e}",
        summary.nodes, summary.family, summary.newton_iterations, summary.violation_l2
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(0)
}

// ---------------------------------------------------------------- sweep --

#[derive(Serialize)]
struct SweepSummary {
    schema_version: u32,
    command: &'static str,
    grid: String,
    nodes: usize,
    family: String,
    schedule: Vec<f64>,
    directions: usize,
    solver_tol: f64,
    final_u_err_h10: f64,
    final_violation_l2: f64,
    final_scaled_violation_l2: f64,
    rates: Vec<RateSummary>,
}

fn run_sweep_cmd(config: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<u8> {
    let inst = build_instance(config)?;
    let fam_cfg = config.family.as_ref().expect("checked by config");
    let spec = build_family_spec(fam_cfg, inst.grid)?;
    let f = resolve_density(config.f.as_ref().expect("checked by config"), &inst.ops, "f")?;
    let directions = resolve_directions(&config.directions, &inst.ops, seed)?;

    let sweep = SweepConfig::new(
        inst.psi.clone(),
        f,
        spec.clone(),
        fam_cfg.schedule.clone(),
        directions,
    )?
    .with_solver_tol(config.solver_tol)?;
    let record = run_sweep(&inst.ops, &sweep)?;

    let last = record.rows().last().expect("schedule is non-empty");
    let summary = SweepSummary {
        schema_version: SCHEMA_VERSION,
        command: "sweep",
        grid: inst.label,
        nodes: inst.grid.node_count(),
        family: spec.label(),
        schedule: fam_cfg.schedule.clone(),
        directions: config.directions.len(),
        solver_tol: config.solver_tol,
        final_u_err_h10: last.u_err_h10(),
        final_violation_l2: last.violation_l2(),
        final_scaled_violation_l2: last.scaled_violation_l2(),
        rates: fit_record_rates(&record),
    };

    let csv_path = out_path(out_dir, &config.out_csv, "sweep.csv");
    let json_path = out_path(out_dir, &config.out_json, "sweep.json");
    write_atomic(&csv_path, &to_csv(&record))?;
    write_json(&json_path, &summary)?;
    println!(
        "sweep: {} schedule points, {}, final u_err_h10 = {:.3e}, final violation_l2 = {:.3e}",
        summary.schedule.len(),
        summary.family,
        summary.final_u_err_h10,
        summary.final_violation_l2
    );
    for rate in &summary.rates {
        println!(
            "  {}: fitted slope {:.4} (r^2 {:.4}, {} points{})",
            rate.metric,
            rate.slope,
            rate.r_squared,
            rate.points_used,
            if rate.decreasing { ", decreasing" } else { "" }
        );
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(0)
}

// ----------------------------------------------------------- derivative --

#[derive(Serialize)]
struct DirectionSummary {
    index: usize,
    d_hminus1: f64,
    alpha_h10: f64,
    alpha_linf: f64,
    csv: String,
}

#[derive(Serialize)]
struct DerivativeSummary {
    schema_version: u32,
    command: &'static str,
    grid: String,
    nodes: usize,
    family: String,
    rho: f64,
    solver_tol: f64,
    gateaux_differentiable: bool,
    kink_nodes: usize,
    directions: Vec<DirectionSummary>,
}

fn run_derivative(config: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<u8> {
    let inst = build_instance(config)?;
    let fam_cfg = config.family.as_ref().expect("checked by config");
    let spec = build_family_spec(fam_cfg, inst.grid)?;
    let rho = fam_cfg.rho.expect("checked by config");
    let fam = spec.instantiate(inst.grid, rho)?;
    let f = resolve_density(config.f.as_ref().expect("checked by config"), &inst.ops, "f")?;
    let directions = resolve_directions(&config.directions, &inst.ops, seed)?;

    let sol = solve_penalized(&inst.ops, &fam, &inst.psi, &f, config.solver_tol)?;

    // Per-direction nodal output: alpha_1.csv, alpha_2.csv, ... with the
    // stem taken from out.csv when given.
    let stem = config
        .out_csv
        .as_deref()
        .map(|name| name.strip_suffix(".csv").unwrap_or(name).to_string())
        .unwrap_or_else(|| "alpha".to_string());

    let mut dir_summaries = Vec::with_capacity(directions.len());
    for (i, d) in directions.iter().enumerate() {
        let alpha = solve_derivative(&inst.ops, &fam, &sol, &inst.psi, d)?;
        let csv_name = format!("{stem}_{}.csv", i + 1);
        write_atomic(
            &out_dir.join(&csv_name),
            &nodal_csv(&format!("alpha_{}", i + 1), &alpha),
        )?;
        dir_summaries.push(DirectionSummary {
            index: i + 1,
            d_hminus1: inst.ops.norm_hminus1(d)?,
            alpha_h10: inst.ops.norm_h10(&alpha)?,
            alpha_linf: alpha.linf_norm(),
            csv: csv_name,
        });
    }

    let summary = DerivativeSummary {
        schema_version: SCHEMA_VERSION,
        command: "derivative",
        grid: inst.label,
        nodes: inst.grid.node_count(),
        family: spec.label(),
        rho,
        solver_tol: config.solver_tol,
        gateaux_differentiable: sol.is_gateaux(),
        kink_nodes: sol.kink_nodes().len(),
        directions: dir_summaries,
    };
    let json_path = out_path(out_dir, &config.out_json, "derivative.json");
    write_json(&json_path, &summary)?;
    println!(
        "derivative: {} at rho = {rho:e}, {} directions, gateaux = {}",
        summary.family,
        summary.directions.len(),
        summary.gateaux_differentiable
    );
    for d in &summary.directions {
        println!(
            "  direction {}: |d|_H-1 = {:.3e}, |alpha|_H10 = {:.3e} -> {}",
            d.index, d.d_hminus1, d.alpha_h10, d.csv
        );
    }
    println!("wrote {}", json_path.display());
    Ok(0)
}

// ------------------------------------------------------------------- oc --

#[derive(Serialize)]
struct OcSummary {
    schema_version: u32,
    command: &'static str,
    grid: String,
    nodes: usize,
    family: String,
    schedule: Vec<f64>,
    nu: f64,
    objective: f64,
    converged: bool,
    multiplier_residual: f64,
    contact_nodes: usize,
    stationarity: CStationarityReport,
    path: Vec<OcPathRow>,
}

fn run_oc(config: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let inst = build_instance(config)?;
    let fam_cfg = config.family.as_ref().expect("checked by config");
    let spec = build_family_spec(fam_cfg, inst.grid)?;
    let oc: &OcConfig = config.oc.as_ref().expect("checked by config");

    let y_d = resolve_field(&oc.target, inst.grid, "oc.target")?;
    let mut prob = ControlProblem::new(inst.psi.clone(), y_d, oc.nu)?;
    if oc.lower.is_some() || oc.upper.is_some() {
        let lower = oc
            .lower
            .as_ref()
            .map(|s| resolve_field(s, inst.grid, "oc.lower"))
            .transpose()?;
        let upper = oc
            .upper
            .as_ref()
            .map(|s| resolve_field(s, inst.grid, "oc.upper"))
            .transpose()?;
        prob = prob.with_bounds(lower, upper)?;
    }

    let start = match &oc.start {
        Some(spec) => resolve_field(spec, inst.grid, "oc.start")?,
        None => DiscreteField::constant(inst.grid, 0.0),
    };
    let f0 = prob.project(&start)?;

    let defaults = OcOptions::default();
    let opts = OcOptions {
        tol_inner: oc.tol_inner.unwrap_or(defaults.tol_inner),
        max_inner: oc.max_inner.unwrap_or(defaults.max_inner),
        solver_tol: oc.solver_tol.unwrap_or(defaults.solver_tol),
    };

    let cert = solve_oc_path_with(&inst.ops, &prob, &spec, &fam_cfg.schedule, &f0, opts)?;

    // Cross-check the certificate against the exact reference solution at
    // the computed control.
    let load = inst.ops.load_from_density(cert.control())?;
    let vi = solve_pdas(&inst.ops, &inst.psi, &load)?;
    let stationarity = check_c_stationarity(&inst.ops, &prob, &cert, &vi)?;

    let summary = OcSummary {
        schema_version: SCHEMA_VERSION,
        command: "oc",
        grid: inst.label,
        nodes: inst.grid.node_count(),
        family: spec.label(),
        schedule: fam_cfg.schedule.clone(),
        nu: oc.nu,
        objective: cert.objective(),
        converged: cert.converged(),
        multiplier_residual: cert.multiplier_residual(),
        contact_nodes: vi.strictly_active().len(),
        stationarity,
        path: cert.path().to_vec(),
    };

    let mut path_csv = String::from("rho,objective,inner_iterations,proj_grad_norm,converged\n");
    for row in cert.path() {
        path_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_float(row.rho),
            csv_float(row.objective),
            row.inner_iterations,
            csv_float(row.proj_grad_norm),
            row.converged
        ));
    }

    let csv_path = out_path(out_dir, &config.out_csv, "oc_path.csv");
    let json_path = out_path(out_dir, &config.out_json, "oc.json");
    write_atomic(&csv_path, &path_csv)?;
    write_json(&json_path, &summary)?;
    write_atomic(&out_dir.join("control.csv"), &nodal_csv("control", cert.control()))?;
    write_atomic(&out_dir.join("state.csv"), &nodal_csv("state", cert.state()))?;
    write_atomic(&out_dir.join("adjoint.csv"), &nodal_csv("adjoint", cert.adjoint()))?;

    println!(
        "oc: objective {:.6e}, converged = {}, multiplier residual {:.3e}, {} contact nodes",
        summary.objective, summary.converged, summary.multiplier_residual, summary.contact_nodes
    );
    println!(
        "  stationarity: inactive multiplier {:.3e}, strict-contact adjoint {:.3e}, sign {:.3e}",
        summary.stationarity.max_multiplier_inactive,
        summary.stationarity.max_adjoint_strictly_active,
        summary.stationarity.sign_functional
    );
    println!(
        "wrote {}, {}, and nodal control/state/adjoint CSVs",
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

// --------------------------------------------------------------- verify --

#[derive(Serialize)]
struct VerifySummary {
    schema_version: u32,
    command: &'static str,
    all_passed: bool,
    criteria: Vec<penlab_core::CriterionResult>,
}

fn run_verify(config: &ExperimentConfig, out_dir: &Path) -> Result<u8> {
    let results = run_all()?;
    for r in &results {
        println!("{}", r.line());
    }
    let all_passed = penlab_core::all_passed(&results);
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );

    let summary = VerifySummary {
        schema_version: SCHEMA_VERSION,
        command: "verify",
        all_passed,
        criteria: results,
    };
    let json_path = out_path(out_dir, &config.out_json, "verify.json");
    write_json(&json_path, &summary)?;
    println!("wrote {}", json_path.display());
    Ok(if all_passed { 0 } else { 4 })
}

// -------------------------------------------------------------- describe --

#[derive(Debug, clap::Args)]
pub struct DescribeArgs {
    /// Family to describe: a kind (m, c, sm, sc, sc_tilde), kind/reg
    /// (sc/kw_cubic), or a bare regularization name (huber_global, meaning
    /// sm/huber_global).
    pub family: String,
    /// Penalty parameter the formula and parameters are reported at.
    #[arg(long, default_value_t = 0.25)]
    pub rho: f64,
    /// Uniform multiplier shift for the composed kinds (defaults to 8).
    #[arg(long)]
    pub lambda_bar: Option<f64>,
}

fn parse_family_arg(text: &str) -> Result<(FamilyKind, Option<RegKind>)> {
    if let Some((kind_word, reg_word)) = text.split_once('/') {
        let kind = FamilyKind::parse(kind_word).map_err(|_| {
            CliError::validation(format!("unknown family kind '{kind_word}'"))
        })?;
        let reg = RegKind::parse(reg_word).map_err(|_| {
            CliError::validation(format!("unknown regularization '{reg_word}'"))
        })?;
        return Ok((kind, Some(reg)));
    }
    if let Ok(kind) = FamilyKind::parse(text) {
        return Ok((kind, None));
    }
    if let Ok(reg) = RegKind::parse(text) {
        return Ok((FamilyKind::SmoothMax, Some(reg)));
    }
    Err(CliError::validation(format!(
        "unknown family '{text}' (try m, c, sm/huber_global, sc/kw_cubic, ...)"
    )))
}

/// Recover the width parameter a regularization was built with from its
/// upper kink, so the printed formula matches the profile actually in use
/// (the scaled composed kind narrows its profile by rho).
fn reg_width(kind: RegKind, big_theta: f64) -> f64 {
    match kind {
        RegKind::HuberGlobal | RegKind::Local => big_theta,
        RegKind::KwCubic | RegKind::KwQuadratic => 2.0 * big_theta,
    }
}

fn slice_summary(values: &[f64]) -> String {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        format!("{first} (uniform)")
    } else {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("{min} .. {max}")
    }
}

pub fn describe(args: &DescribeArgs) -> Result<u8> {
    let (kind, reg) = parse_family_arg(&args.family)?;
    if kind.needs_regularization() && reg.is_none() {
        return Err(CliError::validation(format!(
            "family '{}' needs a regularization (e.g. {}/huber_global)",
            args.family,
            kind.name()
        )));
    }
    if !kind.needs_regularization() && reg.is_some() {
        return Err(CliError::validation(format!(
            "kind '{}' is not regularized",
            kind.name()
        )));
    }
    if !(args.rho.is_finite() && args.rho > 0.0 && args.rho <= 1.0) {
        return Err(CliError::validation(format!(
            "--rho: must lie in (0, 1], got {}",
            args.rho
        )));
    }
    if args.lambda_bar.is_some() && !kind.needs_multiplier_shift() {
        return Err(CliError::validation(format!(
            "--lambda-bar: kind '{}' takes no multiplier shift",
            kind.name()
        )));
    }

    // Parameters of all shipped families are spatially uniform, so a tiny
    // grid is enough to instantiate and sample one.
    let (grid, _ops) = build_grid(penlab_core::Extent::unit_interval(), 3)?;
    let lambda_bar = kind
        .needs_multiplier_shift()
        .then(|| DiscreteField::constant(grid, args.lambda_bar.unwrap_or(8.0)));
    let spec = FamilySpec::new(kind, reg, lambda_bar);
    let fam = spec.instantiate(grid, args.rho)?;

    println!("family {} at rho = {}", spec.label(), args.rho);
    match kind {
        FamilyKind::Max => println!("  lambda(r) = max(0, r) / rho"),
        FamilyKind::CompMax => {
            println!("  lambda(x, r) = max(0, rho*lambda_bar(x) + r) / rho")
        }
        FamilyKind::SmoothMax => println!("  lambda(r) = m(r) / rho"),
        FamilyKind::SmoothCompMax | FamilyKind::ScaledCompMax => {
            println!("  lambda(x, r) = m(rho*lambda_bar(x) + r) / rho")
        }
    }
    if let Some(reg) = fam.regularization() {
        if let Some(reg_kind) = reg.kind() {
            println!("  {}", reg_kind.formula(reg_width(reg_kind, reg.big_theta())));
        }
        println!(
            "  theta = {}, big_theta = {}, ell = {}",
            reg.theta(),
            reg.big_theta(),
            reg.ell()
        );
    } else {
        println!("  nonsmooth: kink at r = k0(x)");
    }
    println!(
        "  k0 = {}, k1 = {}, j = {}",
        slice_summary(fam.k0()),
        slice_summary(fam.k1()),
        slice_summary(fam.offset_j())
    );

    let schedule = [args.rho, args.rho / 4.0, args.rho / 16.0];
    let report = verify_assumptions(&fam, &schedule, 512)?;
    println!("  checks over rho in {schedule:?} (512 sample points):");
    let mut failed = 0usize;
    for check in &report.checks {
        let status = if check.passed { "pass" } else { "FAIL" };
        let fitted = check
            .fitted
            .map(|c| format!(", fitted constant {c:.6e}"))
            .unwrap_or_default();
        println!(
            "    {status}  {} (worst violation {:.3e}{fitted})",
            check.name, check.worst_violation
        );
        if !check.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("  all {} property checks passed", report.checks.len());
    } else {
        println!(
            "  {failed} of {} property checks FAILED",
            report.checks.len()
        );
    }
    Ok(0)
}
