//! Projected Galerkin ODE `dv/dt = Δ_H v − 𝕡(v·∇_H v + w ∂_z v) + 𝕡f`
//! and its IMEX time integration.
//!
//! Every coefficient slot is a `−Δ_H` eigenvector of the Galerkin
//! stiffness, so the diffusion solve is a diagonal division.

use std::sync::Arc;

use ndarray::{Array3, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{SpectralBasis, VerticalOp};
use crate::error::{Error, Result};
use crate::field::{GridVectorField, Norm, RawField, VelocityField};

/// Forcing in the raw sine ⊗ cosine basis; projected once per basis.
#[derive(Debug, Clone, PartialEq)]
pub enum ForcingSpec {
    Zero,
    Steady(RawField),
    /// `f(t) = A ∘ cos(2πt/T − θ)` coefficient-wise.
    Periodic {
        amplitude: RawField,
        period: f64,
        phase: RawField,
    },
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        if let ForcingSpec::Periodic { period, .. } = self {
            if !(period.is_finite() && *period > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "forcing period must be positive (got {period})"
                )));
            }
        }
        Ok(())
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            ForcingSpec::Periodic { period, .. } => Some(*period),
            _ => None,
        }
    }
}

/// Forcing compiled against a basis: `𝕡f(t) = P_c cos ωt + P_s sin ωt + P_0`.
#[derive(Debug, Clone)]
pub struct Forcing {
    basis: Arc<SpectralBasis>,
    spec: ForcingSpec,
    steady: Option<Array3<f64>>,
    oscillating: Option<(f64, Array3<f64>, Array3<f64>)>,
}

impl Forcing {
    pub fn new(spec: &ForcingSpec, basis: &Arc<SpectralBasis>) -> Result<Self> {
        spec.validate()?;
        let project = |raw: &RawField| -> Result<Array3<f64>> {
            Ok(basis.hydrostatic_project(raw)?.into_coeffs())
        };
        let (steady, oscillating) = match spec {
            ForcingSpec::Zero => (None, None),
            ForcingSpec::Steady(raw) => (Some(project(raw)?), None),
            ForcingSpec::Periodic {
                amplitude,
                period,
                phase,
            } => {
                phase.check_shape(basis.spec())?;
                let (a, th) = (amplitude.coeffs(), phase.coeffs());
                let cos_part = RawField::new(basis.spec(), Zip::from(a).and(th).map_collect(|a, t| a * t.cos()))?;
                let sin_part = RawField::new(basis.spec(), Zip::from(a).and(th).map_collect(|a, t| a * t.sin()))?;
                let omega = 2.0 * std::f64::consts::PI / period;
                (None, Some((omega, project(&cos_part)?, project(&sin_part)?)))
            }
        };
        Ok(Self {
            basis: basis.clone(),
            spec: spec.clone(),
            steady,
            oscillating,
        })
    }

    pub fn zero(basis: &Arc<SpectralBasis>) -> Self {
        Self::new(&ForcingSpec::Zero, basis).expect("zero forcing is valid")
    }

    pub fn spec(&self) -> &ForcingSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn is_zero(&self) -> bool {
        self.steady.is_none() && self.oscillating.is_none()
    }

    /// Coefficients of `𝕡f(t)`, or `None` for zero forcing.
    pub fn projected(&self, t: f64) -> Option<Array3<f64>> {
        match (&self.steady, &self.oscillating) {
            (None, None) => None,
            (Some(p), _) => Some(p.clone()),
            (None, Some((omega, pc, ps))) => {
                let (s, c) = (omega * t).sin_cos();
                Some(pc * c + &(ps * s))
            }
        }
    }

    /// Unprojected raw coefficients of `f(t)`.
    pub fn raw(&self, t: f64) -> RawField {
        match &self.spec {
            ForcingSpec::Zero => RawField::zeros(self.basis.spec()),
            ForcingSpec::Steady(raw) => raw.clone(),
            ForcingSpec::Periodic {
                amplitude,
                period,
                phase,
            } => {
                let omega = 2.0 * std::f64::consts::PI / period;
                let c = Zip::from(amplitude.coeffs())
                    .and(phase.coeffs())
                    .map_collect(|a, th| a * (omega * t - th).cos());
                RawField::new(self.basis.spec(), c).expect("finite forcing")
            }
        }
    }
}

/// Grid-level pieces of the nonlinear term.
#[derive(Debug, Clone)]
pub struct NonlinearEval {
    /// `𝕡(v·∇_H v + w ∂_z v)` in coefficients.
    pub coeffs: Array3<f64>,
    /// `v·∇_H v + w ∂_z v` on the grid, before projection.
    pub advection: GridVectorField,
    pub w_max: f64,
}

/// Evaluates `𝕡(v·∇_H v + w ∂_z v)` on the quadrature grid.
pub fn nonlinear_eval(v: &VelocityField) -> Result<NonlinearEval> {
    let basis = v.basis();
    // (component, ∂x order, ∂y order, vertical op)
    let tasks: [(usize, usize, usize, VerticalOp); 10] = [
        (0, 0, 0, VerticalOp::Value),
        (1, 0, 0, VerticalOp::Value),
        (0, 1, 0, VerticalOp::Value),
        (0, 0, 1, VerticalOp::Value),
        (1, 1, 0, VerticalOp::Value),
        (1, 0, 1, VerticalOp::Value),
        (0, 0, 0, VerticalOp::Derivative),
        (1, 0, 0, VerticalOp::Derivative),
        (0, 1, 0, VerticalOp::Integral),
        (1, 0, 1, VerticalOp::Integral),
    ];
    let g: Vec<Array3<f64>> = tasks
        .par_iter()
        .map(|&(c, px, py, op)| v.eval(c, px, py, op))
        .collect();
    let (u1, u2) = (&g[0], &g[1]);
    let (u1x, u1y, u2x, u2y) = (&g[2], &g[3], &g[4], &g[5]);
    let (u1z, u2z) = (&g[6], &g[7]);
    let mut w = g[8].clone();
    w += &g[9];
    w.mapv_inplace(|x| -x);

    let advect = |dx: &Array3<f64>, dy: &Array3<f64>, dz: &Array3<f64>| {
        let mut b = Zip::from(u1)
            .and(u2)
            .and(dx)
            .and(dy)
            .map_collect(|&a1, &a2, &x, &y| a1 * x + a2 * y);
        Zip::from(&mut b)
            .and(&w)
            .and(dz)
            .for_each(|b, &ww, &z| *b += ww * z);
        b
    };
    let b1 = advect(u1x, u1y, u1z);
    let b2 = advect(u2x, u2y, u2z);
    if b1.iter().chain(b2.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("nonlinear grid products"));
    }
    let coeffs = basis.analyze([&b1, &b2]);
    let w_max = w.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    Ok(NonlinearEval {
        coeffs,
        advection: GridVectorField {
            components: [b1, b2],
        },
        w_max,
    })
}

/// `𝕡(v·∇_H v + w ∂_z v)`.
pub fn nonlinear_term(v: &VelocityField) -> Result<VelocityField> {
    let eval = nonlinear_eval(v)?;
    v.with_coeffs(eval.coeffs)
}

/// `⟨𝕡(v·∇_H v + w ∂_z v), v⟩_{L²}`.
pub fn cancellation_residual(v: &VelocityField) -> Result<f64> {
    let n = nonlinear_term(v)?;
    n.l2_inner(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImexEuler,
    #[default]
    Cnab2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_end: f64,
    /// Steps between observer samples.
    pub diag_every: usize,
    /// Steps between checkpoint events; `None` disables them.
    pub checkpoint_every: Option<usize>,
    /// Drop the advection term (linear Stokes-type problem).
    pub nonlinear: bool,
    /// Abort once `‖v‖_H` exceeds this.
    pub blowup_ceiling: f64,
    /// Warn when `dt > cfl · Δz_min / max|w|`.
    pub cfl: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::Cnab2,
            t_end: 1.0,
            diag_every: 10,
            checkpoint_every: None,
            nonlinear: true,
            blowup_ceiling: 1e6,
            cfl: 0.5,
        }
    }
}

impl IntegratorConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            out.push(format!("t_end must be non-negative (got {})", self.t_end));
        }
        if self.diag_every < 1 {
            out.push("diagnostics cadence must be at least 1".into());
        }
        if self.checkpoint_every == Some(0) {
            out.push("checkpoint cadence must be at least 1".into());
        }
        if !(self.blowup_ceiling > 0.0) {
            out.push("blow-up ceiling must be positive".into());
        }
        if !(self.cfl > 0.0) {
            out.push("CFL constant must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }

    /// Number of steps to reach `t_end` (the last step is not shortened).
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub v: VelocityField,
    pub dt: f64,
    pub step_index: usize,
    /// Explicit tendency of the previous step, for Adams–Bashforth.
    prev_explicit: Option<Array3<f64>>,
}

impl SimulationState {
    pub fn new(v: VelocityField, dt: f64) -> Self {
        Self {
            t: 0.0,
            v,
            dt,
            step_index: 0,
            prev_explicit: None,
        }
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

/// Right-hand side pieces at one state.
#[derive(Debug, Clone)]
pub struct RhsParts {
    /// `Δ_H v` projected: `−λ ∘ c`.
    pub diffusion: Array3<f64>,
    /// `−𝕡(v·∇_H v + w ∂_z v)`, zero when the nonlinearity is off.
    pub advection: Array3<f64>,
    pub forcing: Array3<f64>,
    pub w_max: f64,
}

impl RhsParts {
    pub fn total(&self) -> Array3<f64> {
        &self.diffusion + &self.advection + &self.forcing
    }
}

pub fn rhs_parts(v: &VelocityField, t: f64, forcing: &Forcing, nonlinear: bool) -> Result<RhsParts> {
    let lam = v.basis().diffusion_eigenvalues();
    let diffusion = -(lam * v.coeffs());
    let (advection, w_max) = if nonlinear {
        let e = nonlinear_eval(v)?;
        (-e.coeffs, e.w_max)
    } else {
        (Array3::zeros(v.coeffs().raw_dim()), 0.0)
    };
    let forcing = forcing
        .projected(t)
        .unwrap_or_else(|| Array3::zeros(v.coeffs().raw_dim()));
    Ok(RhsParts {
        diffusion,
        advection,
        forcing,
        w_max,
    })
}

/// `dv/dt` at the state.
pub fn rhs(state: &SimulationState, forcing: &Forcing, nonlinear: bool) -> Result<Array3<f64>> {
    Ok(rhs_parts(&state.v, state.t, forcing, nonlinear)?.total())
}

/// Per-step information for observers.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub w_max: f64,
    pub cfl_violated: bool,
}

/// Advances one step. IMEX-Euler:
/// `(1 + dt λ) c⁺ = c + dt (E(c, t) + 𝕡f(t))`; CNAB2:
/// `(1 + dt λ/2) c⁺ = (1 − dt λ/2) c + dt (3/2 E − 1/2 E⁻ + 𝕡f(t + dt/2))`,
/// with `E = −𝕡(v·∇_H v + w ∂_z v)`. The first CNAB2 step replaces the
/// Adams–Bashforth combination by `(E(c) + E(c*))/2`, `c*` a Crank–Nicolson
/// predictor with `E(c)`.
pub fn step(
    state: &SimulationState,
    forcing: &Forcing,
    config: &IntegratorConfig,
) -> Result<(SimulationState, StepInfo)> {
    let dt = config.dt;
    let basis = state.v.basis();
    let lam = basis.diffusion_eigenvalues();
    let c = state.v.coeffs();
    let (explicit, w_max) = if config.nonlinear {
        let e = nonlinear_eval(&state.v).map_err(|e| blowup(state.t, e))?;
        (-e.coeffs, e.w_max)
    } else {
        (Array3::zeros(c.raw_dim()), 0.0)
    };
    let dz_min = basis.rules()[2].min_spacing();
    let cfl_violated = config.nonlinear && w_max > 0.0 && dt > config.cfl * dz_min / w_max;

    let next = match config.scheme {
        Scheme::ImexEuler => {
            let mut rhs = c + &(&explicit * dt);
            if let Some(f) = forcing.projected(state.t) {
                rhs.scaled_add(dt, &f);
            }
            Zip::from(&mut rhs).and(lam).for_each(|x, &l| *x /= 1.0 + dt * l);
            rhs
        }
        Scheme::Cnab2 => {
            let forcing_mid = forcing.projected(state.t + 0.5 * dt);
            let crank_nicolson = |ex: &Array3<f64>| {
                let mut rhs = Zip::from(c)
                    .and(lam)
                    .map_collect(|&x, &l| (1.0 - 0.5 * dt * l) * x);
                rhs.scaled_add(dt, ex);
                if let Some(f) = &forcing_mid {
                    rhs.scaled_add(dt, f);
                }
                Zip::from(&mut rhs)
                    .and(lam)
                    .for_each(|x, &l| *x /= 1.0 + 0.5 * dt * l);
                rhs
            };
            match &state.prev_explicit {
                Some(prev) => crank_nicolson(&(&explicit * 1.5 - &(prev * 0.5))),
                None if config.nonlinear => {
                    // Heun predictor–corrector keeps the startup second order
                    let predicted = state
                        .v
                        .with_coeffs(crank_nicolson(&explicit))
                        .map_err(|e| blowup(state.t + dt, e))?;
                    let e1 = nonlinear_eval(&predicted).map_err(|e| blowup(state.t + dt, e))?;
                    crank_nicolson(&((&explicit - &e1.coeffs) * 0.5))
                }
                None => crank_nicolson(&explicit),
            }
        }
    };
    let t_next = state.t + dt;
    let v = state
        .v
        .with_coeffs(next)
        .map_err(|e| blowup(t_next, e))?;
    let h_norm = v.norm(Norm::H)?;
    if !(h_norm <= config.blowup_ceiling) {
        return Err(Error::BlowUp {
            time: t_next,
            reason: format!("‖v‖_H = {h_norm:e} exceeds {:e}", config.blowup_ceiling),
        });
    }
    let next_state = SimulationState {
        t: t_next,
        v,
        dt,
        step_index: state.step_index + 1,
        prev_explicit: (config.scheme == Scheme::Cnab2).then_some(explicit),
    };
    Ok((
        next_state,
        StepInfo {
            w_max,
            cfl_violated,
        },
    ))
}

fn blowup(time: f64, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::BlowUp {
            time,
            reason: format!("non-finite values in {what}"),
        },
        other => other,
    }
}

/// Running time integrals of `2‖∇_H v‖²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dissipation {
    /// Midpoint values `2‖∇_H (v⁺ + v)/2‖² dt`; exact for the CN diffusion.
    pub midpoint: f64,
    /// Trapezoid rule `(‖∇_H v‖² + ‖∇_H v⁺‖²) dt`.
    pub trapezoid: f64,
}

/// What the observer is told.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Initial state, every `diag_every` steps, and the final state.
    Sample,
    Checkpoint,
}

pub struct Event<'a> {
    pub kind: EventKind,
    pub state: &'a SimulationState,
    pub dissipation: Dissipation,
    pub last_step: StepInfo,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub final_state: SimulationState,
    pub dissipation: Dissipation,
    pub cfl_warnings: usize,
    pub max_w: f64,
}

/// Integrates from `t0` to `t0 + t_end`, calling `observer` on each event.
pub fn simulate<F>(
    v0: VelocityField,
    t0: f64,
    forcing: &Forcing,
    config: &IntegratorConfig,
    mut observer: F,
) -> Result<SimulationOutcome>
where
    F: FnMut(&Event<'_>) -> Result<()>,
{
    config.validate()?;
    if !Arc::ptr_eq(v0.basis(), forcing.basis()) && v0.basis().spec() != forcing.basis().spec() {
        return Err(Error::BasisMismatch);
    }
    let steps = config.steps();
    let mut state = SimulationState::new(v0, config.dt).at_time(t0);
    let mut dissipation = Dissipation::default();
    let mut info = StepInfo::default();
    let mut cfl_warnings = 0;
    let mut max_w: f64 = 0.0;
    observer(&Event {
        kind: EventKind::Sample,
        state: &state,
        dissipation,
        last_step: info,
    })?;
    for n in 1..=steps {
        let (next, step_info) = step(&state, forcing, config)?;
        let g0 = state.v.grad_norm().powi(2);
        let g1 = next.v.grad_norm().powi(2);
        let mid = state.v.axpy(1.0, &next.v)?.scaled(0.5).grad_norm().powi(2);
        dissipation.midpoint += 2.0 * config.dt * mid;
        dissipation.trapezoid += config.dt * (g0 + g1);
        if step_info.cfl_violated {
            if cfl_warnings == 0 {
                log::warn!(
                    "CFL guard: dt = {} exceeds {} Δz_min / max|w| (max|w| = {:e}) at t = {}",
                    config.dt,
                    config.cfl,
                    step_info.w_max,
                    state.t
                );
            }
            cfl_warnings += 1;
        }
        max_w = max_w.max(step_info.w_max);
        info = step_info;
        state = next;
        if n % config.diag_every == 0 || n == steps {
            observer(&Event {
                kind: EventKind::Sample,
                state: &state,
                dissipation,
                last_step: info,
            })?;
        }
        if config.checkpoint_every.is_some_and(|c| n % c == 0) {
            observer(&Event {
                kind: EventKind::Checkpoint,
                state: &state,
                dissipation,
                last_step: info,
            })?;
        }
    }
    Ok(SimulationOutcome {
        final_state: state,
        dissipation,
        cfl_warnings,
        max_w,
    })
}

/// One stored sample of a trajectory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub step: usize,
    pub v: VelocityField,
    pub dissipation: Dissipation,
}

/// Runs [`simulate`] and keeps every sampled state.
pub fn simulate_collect(
    v0: VelocityField,
    forcing: &Forcing,
    config: &IntegratorConfig,
) -> Result<(Vec<Sample>, SimulationOutcome)> {
    let mut samples = Vec::new();
    let outcome = simulate(v0, 0.0, forcing, config, |e| {
        if e.kind == EventKind::Sample {
            samples.push(Sample {
                t: e.state.t,
                step: e.state.step_index,
                v: e.state.v.clone(),
                dissipation: e.dissipation,
            });
        }
        Ok(())
    })?;
    Ok((samples, outcome))
}
