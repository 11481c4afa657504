//! Subcommand drivers. Each returns a JSON report and its exit status.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::basis::{build_basis, SpectralBasis};
use crate::checkpoint::Checkpoint;
use crate::diagnostics::{
    apriori_fit, barotropic_l4_functionals, compute_record, cumulative_trapezoid, energy_residual_from_records,
    gronwall_envelope, lq_preservation_from_records, DiagnosticsRecord, GronwallSpec, Omega,
};
use crate::dynamics::{simulate, EventKind, Forcing, Sample};
use crate::error::Error;
use crate::field::{Norm, VelocityField};
use crate::periodic::solve_periodic;
use crate::profiles::initial_field;

use super::config::{ForcingKind, Regularity, RunConfig, VerifySection};
use super::csv::{read_records, CsvWriter};
use super::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Periodic,
    /// `None` runs the checks listed in the config.
    Verify(Option<Vec<String>>),
    Basis,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub json: Value,
    pub exit_code: i32,
}

impl Report {
    fn ok(json: Value) -> Self {
        Self { json, exit_code: 0 }
    }
}

pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<Report, CliError> {
    match cmd {
        Command::Basis => basis_cmd(cfg),
        Command::Simulate => simulate_cmd(cfg),
        Command::Periodic => periodic_cmd(cfg),
        Command::Verify(checks) => verify_cmd(cfg, checks.as_deref()),
    }
}

fn basis_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let basis = build_basis(cfg.spec())?;
    let (c1, c2) = basis.poincare_constants();
    Ok(Report::ok(json!({
        "command": "basis",
        "status": "ok",
        "spec": basis.spec(),
        "report": basis.report(),
        "active_coefficients": basis.active_coefficients(),
        "poincare_constants": { "l2_over_gradient": c1, "gradient_over_laplacian": c2 },
    })))
}

/// Initial field and start time from `[initial]`.
fn initial_state(cfg: &RunConfig, basis: &Arc<SpectralBasis>) -> Result<(VelocityField, f64), CliError> {
    let (v, t0) = match cfg.initial_checkpoint() {
        Some(path) => {
            let cp = Checkpoint::read(&path)?;
            let t0 = cp.time;
            let v = if cp.spec == *basis.spec() {
                cp.into_field(basis.clone())?
            } else {
                log::info!("transferring {} onto the configured resolution", path.display());
                let source = build_basis(cp.spec)?;
                cp.into_field(source)?.transfer_to(basis)?
            };
            (v, t0)
        }
        None => (
            initial_field(basis, cfg.initial.profile()?, cfg.initial.amplitude, cfg.initial.seed)?,
            0.0,
        ),
    };
    if !v.is_finite() {
        return Err(Error::NonFinite("initial data").into());
    }
    if cfg.initial.regularity == Regularity::Strong && !(v.grad_norm().is_finite() && v.dz_norm().is_finite()) {
        return Err(Error::NonFinite("initial H¹ norms").into());
    }
    Ok((v, t0))
}

fn max_of(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    records.iter().map(f).fold(0.0, f64::max)
}

fn simulate_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let basis = build_basis(cfg.spec())?;
    let forcing = Forcing::new(&cfg.forcing_spec(&basis)?, &basis)?;
    let (v0, t0) = initial_state(cfg, &basis)?;
    let icfg = cfg.integrator.config();
    let dcfg = cfg.diagnostics();
    let csv_path = cfg.csv_path();
    let mut csv = CsvWriter::create(&csv_path)?;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let outcome = simulate(v0, t0, &forcing, &icfg, |e| {
        let s = e.state;
        match e.kind {
            EventKind::Sample => {
                let sample = Sample {
                    t: s.t,
                    step: s.step_index,
                    v: s.v.clone(),
                    dissipation: e.dissipation,
                };
                let r = compute_record(&sample, &forcing, &dcfg)?;
                csv.write(&r)?;
                if !r.is_finite() {
                    return Err(Error::BlowUp {
                        time: s.t,
                        reason: "non-finite diagnostics".into(),
                    });
                }
                records.push(r);
            }
            EventKind::Checkpoint => {
                let path = cfg.checkpoint_path(s.step_index);
                Checkpoint::from_field(&s.v, s.t).write(&path)?;
                checkpoints.push(path);
            }
        }
        Ok(())
    })?;
    let final_path = cfg.final_checkpoint_path();
    Checkpoint::from_field(&outcome.final_state.v, outcome.final_state.t).write(&final_path)?;
    let energy = if forcing.is_zero() {
        let res = energy_residual_from_records(&records);
        let last = res.last().copied();
        json!({
            "max_abs_midpoint": res.iter().map(|r| r.midpoint.abs()).fold(0.0, f64::max),
            "final_midpoint": last.map(|r| r.midpoint),
            "final_trapezoid": last.map(|r| r.trapezoid),
        })
    } else {
        Value::Null
    };
    let v = &outcome.final_state.v;
    let h_norm = v.norm(Norm::H)?;
    Ok(Report::ok(json!({
        "command": "simulate",
        "status": "ok",
        "spec": basis.spec(),
        "t_start": t0,
        "t_final": outcome.final_state.t,
        "steps": outcome.final_state.step_index,
        "samples": records.len(),
        "csv": csv_path,
        "checkpoints": checkpoints,
        "final_checkpoint": final_path,
        "final": { "l2": v.l2_norm(), "grad_l2": v.grad_norm(), "h_norm": h_norm },
        "energy_residual": energy,
        "max_cancellation_rel": max_of(&records, |r| r.cancellation_rel.abs()),
        "max_w_boundary": max_of(&records, |r| r.w_bottom_max.max(r.w_top_max)),
        "max_continuity": max_of(&records, |r| r.continuity),
        "cfl_warnings": outcome.cfl_warnings,
        "max_w": outcome.max_w,
    })))
}

fn periodic_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let basis = build_basis(cfg.spec())?;
    let forcing = Forcing::new(&cfg.forcing_spec(&basis)?, &basis)?;
    let (v0, _) = initial_state(cfg, &basis)?;
    let pcfg = cfg.periodic_config();
    let report = solve_periodic(v0, &forcing, &pcfg)?;
    let path = cfg.periodic_checkpoint_path();
    Checkpoint::from_field(&report.v0, 0.0).write(&path)?;
    let converged = report.converged;
    let below_one = report.contraction.as_ref().map(|c| c.rho < 1.0);
    let mut out = json!({
        "command": "periodic",
        "status": if converged { "converged" } else { "not-converged" },
        "period": pcfg.period,
        "dt": pcfg.period_integrator().dt,
        "checkpoint": path,
        "report": report,
    });
    if let Some(b) = below_one {
        out["contraction_below_one"] = json!(b);
    }
    Ok(Report {
        json: out,
        exit_code: if converged { 0 } else { 5 },
    })
}

struct CheckResult {
    name: String,
    pass: bool,
    details: Value,
}

impl CheckResult {
    fn new(name: &str, pass: bool, details: Value) -> Self {
        Self {
            name: name.into(),
            pass,
            details,
        }
    }
}

fn verify_cmd(cfg: &RunConfig, checks: Option<&[String]>) -> Result<Report, CliError> {
    let checks: Vec<String> = checks.map(<[String]>::to_vec).unwrap_or_else(|| cfg.verify.checks.clone());
    let bad = VerifySection::check_violations(&checks);
    if !bad.is_empty() {
        return Err(CliError::Invalid(bad));
    }
    let csv_path = cfg.csv_path();
    let records = read_records(&csv_path).map_err(|e| match e {
        Error::Io(io) => CliError::MissingFile {
            path: csv_path.clone(),
            reason: io.to_string(),
        },
        other => CliError::Runtime(other),
    })?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no samples", csv_path.display())).into());
    }
    let results = checks
        .iter()
        .map(|c| run_check(c, cfg, &records))
        .collect::<Result<Vec<_>, CliError>>()?;
    let all = results.iter().all(|r| r.pass);
    let list: Vec<Value> = results
        .into_iter()
        .map(|r| {
            let mut v = json!({ "check": r.name, "pass": r.pass });
            if let (Value::Object(dst), Value::Object(src)) = (&mut v, r.details) {
                dst.extend(src);
            }
            v
        })
        .collect();
    Ok(Report {
        json: json!({
            "command": "verify",
            "status": if all { "pass" } else { "fail" },
            "csv": csv_path,
            "samples": records.len(),
            "checks": list,
        }),
        exit_code: if all { 0 } else { 6 },
    })
}

fn run_check(name: &str, cfg: &RunConfig, records: &[DiagnosticsRecord]) -> Result<CheckResult, CliError> {
    let tol = &cfg.verify;
    Ok(match name {
        "energy" => {
            if cfg.forcing.kind != ForcingKind::Zero && cfg.forcing.amplitude != 0.0 {
                return Ok(CheckResult::new(
                    name,
                    false,
                    json!({ "note": "the energy identity is checked for zero forcing only" }),
                ));
            }
            let res = energy_residual_from_records(records);
            let max_mid = res.iter().map(|r| r.midpoint.abs()).fold(0.0, f64::max);
            let max_trap = res.iter().map(|r| r.trapezoid.abs()).fold(0.0, f64::max);
            CheckResult::new(
                name,
                max_mid <= tol.energy_tol,
                json!({ "max_residual": max_mid, "max_residual_trapezoid": max_trap, "tolerance": tol.energy_tol }),
            )
        }
        "cancellation" => {
            let m = max_of(records, |r| r.cancellation_rel.abs());
            CheckResult::new(
                name,
                m <= tol.cancellation_tol,
                json!({ "max_residual": m, "tolerance": tol.cancellation_tol }),
            )
        }
        "kinematics" => {
            let w = max_of(records, |r| r.w_bottom_max.max(r.w_top_max));
            let c = max_of(records, |r| r.continuity);
            CheckResult::new(
                name,
                w.max(c) <= tol.kinematics_tol,
                json!({ "max_w_boundary": w, "max_continuity": c, "tolerance": tol.kinematics_tol }),
            )
        }
        "pressure" => {
            let orth = max_of(records, |r| r.pressure_orthogonality);
            let ratio = max_of(records, |r| r.pressure_ratio);
            CheckResult::new(
                name,
                orth <= tol.pressure_tol && ratio <= tol.pressure_bound,
                json!({
                    "max_orthogonality": orth,
                    "fitted_constant": ratio,
                    "tolerance": tol.pressure_tol,
                    "bound": tol.pressure_bound,
                }),
            )
        }
        "lq" => {
            let fit = lq_preservation_from_records(records, tol.lq_q)?;
            CheckResult::new(name, fit.fitted_c.is_finite(), json!({ "q": fit.q, "fitted_constant": fit.fitted_c }))
        }
        "apriori" => {
            if records.len() < 3 {
                return Ok(CheckResult::new(name, false, json!({ "note": "needs at least three samples" })));
            }
            let fit = apriori_fit(records);
            CheckResult::new(name, fit.fitted_c.is_finite(), json!({ "fitted_constant": fit.fitted_c }))
        }
        "barotropic" => {
            let r = barotropic_l4_functionals(records);
            CheckResult::new(name, r.all_finite, serde_json::to_value(&r).expect("plain data"))
        }
        "sqrt-q" => {
            let first = records[0].sqrt_q_sup;
            let m = max_of(records, |r| r.sqrt_q_sup);
            let finite = records.iter().all(|r| r.sqrt_q_sup.is_finite());
            CheckResult::new(
                name,
                finite,
                json!({ "max": m, "growth": if first > 0.0 { m / first } else { 1.0 } }),
            )
        }
        "gronwall" => gronwall_check(records, tol.gronwall_tol)?,
        "checkpoint" => checkpoint_check(&cfg.final_checkpoint_path(), records)?,
        other => unreachable!("check {other} passed validation"),
    })
}

/// `Φ⁻¹ ∘ Φ` on `[0, 10]` for the cubic nonlinearity, and the linear
/// envelope against `M e^{∫Ψ}` with `Ψ = ‖∇_H v‖²` from the run.
fn gronwall_check(records: &[DiagnosticsRecord], tol: f64) -> Result<CheckResult, CliError> {
    let roundtrip = (0..=1000)
        .map(|i| {
            let u = 10.0 * i as f64 / 1000.0;
            Omega::Cubic.phi_inv(Omega::Cubic.phi(u)).map_or(f64::INFINITY, |back| (back - u).abs())
        })
        .fold(0.0, f64::max);
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let psi: Vec<f64> = records.iter().map(|r| r.grad_l2 * r.grad_l2).collect();
    let spec = GronwallSpec {
        m: 1.0,
        times: times.clone(),
        psi: psi.clone(),
        omega: Omega::Linear,
    };
    let env = gronwall_envelope(&spec, &vec![0.0; times.len()], 0.0)?;
    let linear = cumulative_trapezoid(&times, &psi)
        .iter()
        .zip(&env.envelope)
        .map(|(i, e)| e.map_or(f64::INFINITY, |e| (e - i.exp()).abs() / i.exp()))
        .fold(0.0, f64::max);
    Ok(CheckResult::new(
        "gronwall",
        roundtrip <= tol && linear <= tol,
        json!({ "roundtrip_error": roundtrip, "linear_closed_form_error": linear, "tolerance": tol }),
    ))
}

/// The final checkpoint loads and agrees with the last CSV sample.
fn checkpoint_check(path: &Path, records: &[DiagnosticsRecord]) -> Result<CheckResult, CliError> {
    let cp = match Checkpoint::read(path) {
        Ok(cp) => cp,
        Err(e) => return Ok(CheckResult::new("checkpoint", false, json!({ "note": e.to_string() }))),
    };
    let last = records.last().expect("records checked non-empty");
    let (time, spec) = (cp.time, cp.spec);
    let v = cp.into_field(build_basis(spec)?)?;
    let dt = (time - last.t).abs();
    let dl2 = (v.l2_norm() - last.l2).abs() / last.l2.max(f64::MIN_POSITIVE);
    Ok(CheckResult::new(
        "checkpoint",
        dt <= 1e-12 * time.abs().max(1.0) && (dl2 <= 1e-12 || v.l2_norm() == last.l2),
        json!({ "path": path, "time_mismatch": dt, "l2_mismatch": dl2 }),
    ))
}
