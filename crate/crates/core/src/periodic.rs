//! Time-periodic solutions as fixed points of the period map
//! `v(0) ↦ v(T)`, found by damped Picard or Anderson iteration.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::SpectralBasis;
use crate::dynamics::{simulate, Forcing, IntegratorConfig};
use crate::error::{Error, Result};
use crate::field::{Norm, VelocityField};

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolveConfig {
    pub period: f64,
    /// Initial damping `θ ∈ (0, 1]`; halved whenever the residual grows.
    pub damping: f64,
    /// Target for `‖v₀ − map(v₀)‖_{L²}`.
    pub tol: f64,
    pub max_iter: usize,
    /// Anderson mixing with this window instead of plain damping.
    pub anderson: Option<usize>,
    /// `dt`, scheme and nonlinearity for one period; `t_end` is ignored.
    pub integrator: IntegratorConfig,
    pub ensemble: usize,
    /// Perturbation size; default `max(1e−4 ‖v₀*‖, 1e−6)`.
    pub delta: Option<f64>,
    /// Power iterations per ensemble member.
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for PeriodicSolveConfig {
    fn default() -> Self {
        Self {
            period: 1.0,
            damping: 1.0,
            tol: 1e-8,
            max_iter: 50,
            anderson: None,
            integrator: IntegratorConfig::default(),
            ensemble: 10,
            delta: None,
            power_iterations: 2,
            seed: 0,
        }
    }
}

impl PeriodicSolveConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.period.is_finite() && self.period > 0.0) {
            out.push(format!("period must be positive (got {})", self.period));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            out.push(format!("damping must lie in (0, 1] (got {})", self.damping));
        }
        if !(self.tol > 0.0) {
            out.push(format!("tol must be positive (got {})", self.tol));
        }
        if self.max_iter < 1 {
            out.push("max_iter must be at least 1".into());
        }
        if self.anderson == Some(0) {
            out.push("Anderson window must be at least 1".into());
        }
        if self.delta.is_some_and(|d| !(d > 0.0)) {
            out.push("perturbation delta must be positive".into());
        }
        out.extend(
            self.integrator
                .violations()
                .into_iter()
                .filter(|v| !v.starts_with("t_end")),
        );
        out
    }

    /// Integrator for exactly one period: `dt` shrunk so that it divides `T`.
    pub fn period_integrator(&self) -> IntegratorConfig {
        let steps = (self.period / self.integrator.dt).round().max(1.0);
        IntegratorConfig {
            dt: self.period / steps,
            t_end: self.period,
            diag_every: usize::MAX,
            checkpoint_every: None,
            ..self.integrator.clone()
        }
    }
}

/// `v(0) ↦ v(T)` starting at `t = 0`.
pub fn poincare_map(v0: &VelocityField, forcing: &Forcing, cfg: &IntegratorConfig) -> Result<VelocityField> {
    let out = simulate(v0.clone(), 0.0, forcing, cfg, |_| Ok(()))?;
    Ok(out.final_state.v)
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodSummary {
    pub iteration: usize,
    pub l2: f64,
    pub h_norm: f64,
    pub residual: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionEstimate {
    pub rho: f64,
    pub delta: f64,
    /// Final power-iteration ratio of each ensemble member.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicSolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub periods: Vec<PeriodSummary>,
    pub final_residual: f64,
    pub v0_l2: f64,
    pub contraction: Option<ContractionEstimate>,
    #[serde(skip)]
    pub v0: VelocityField,
}

fn flatten(v: &VelocityField) -> DVector<f64> {
    DVector::from_iterator(v.coeffs().len(), v.coeffs().iter().copied())
}

fn unflatten(basis: &Arc<SpectralBasis>, x: &DVector<f64>) -> Result<VelocityField> {
    let coeffs = Array3::from_shape_vec(basis.spec().coeff_shape(), x.iter().copied().collect())
        .expect("length preserved");
    VelocityField::from_coeffs(basis.clone(), coeffs)
}

/// Damped Picard (or Anderson) iteration on the period map from `start`.
pub fn fixed_point_solve(
    start: VelocityField,
    forcing: &Forcing,
    cfg: &PeriodicSolveConfig,
) -> Result<PeriodicSolveReport> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidArgument(violations.join("; ")));
    }
    let basis = start.basis().clone();
    let icfg = cfg.period_integrator();
    let mut v = start;
    let mut theta = cfg.damping;
    let mut history = Vec::new();
    let mut periods = Vec::new();
    let mut converged = false;
    // Anderson memory: differences of iterates and residuals
    let mut xs: Vec<DVector<f64>> = Vec::new();
    let mut gs: Vec<DVector<f64>> = Vec::new();
    for iteration in 1..=cfg.max_iter {
        let mapped = poincare_map(&v, forcing, &icfg)?;
        let g = mapped.axpy(-1.0, &v)?;
        let r = g.l2_norm();
        if history.last().is_some_and(|&prev| r > prev) {
            theta = (theta * 0.5).max(1e-6);
        }
        history.push(r);
        periods.push(PeriodSummary {
            iteration,
            l2: mapped.l2_norm(),
            h_norm: mapped.norm(Norm::H)?,
            residual: r,
            damping: theta,
        });
        log::info!("periodic iteration {iteration}: residual {r:e}, θ = {theta}");
        if r <= cfg.tol {
            converged = true;
            break;
        }
        v = match cfg.anderson {
            None => v.axpy(theta, &g)?,
            Some(window) => {
                let (x, gk) = (flatten(&v), flatten(&g));
                xs.push(x.clone());
                gs.push(gk.clone());
                if xs.len() > window + 1 {
                    xs.remove(0);
                    gs.remove(0);
                }
                let m = xs.len() - 1;
                let mut next = &x + &gk * theta;
                if m > 0 {
                    let dg = DMatrix::from_fn(gk.len(), m, |r, c| gs[c + 1][r] - gs[c][r]);
                    let dx = DMatrix::from_fn(gk.len(), m, |r, c| xs[c + 1][r] - xs[c][r]);
                    if let Ok(gamma) = dg.clone().svd(true, true).solve(&gk, 1e-12) {
                        next -= (&dx + &dg * theta) * gamma;
                    }
                }
                unflatten(&basis, &next)?
            }
        };
    }
    let final_residual = history.last().copied().unwrap_or(f64::INFINITY);
    Ok(PeriodicSolveReport {
        converged,
        iterations: history.len(),
        residual_history: history,
        periods,
        final_residual,
        v0_l2: v.l2_norm(),
        contraction: None,
        v0: v,
    })
}

/// `ρ = max ‖map(v* + δu) − map(v*)‖ / δ` over random unit directions `u`,
/// each refined by a few power iterations.
pub fn contraction_estimate(
    v_star: &VelocityField,
    forcing: &Forcing,
    cfg: &PeriodicSolveConfig,
) -> Result<ContractionEstimate> {
    let icfg = cfg.period_integrator();
    let delta = cfg
        .delta
        .unwrap_or_else(|| (1e-4 * v_star.l2_norm()).max(1e-6));
    let base = poincare_map(v_star, forcing, &icfg)?;
    let ratios: Vec<f64> = (0..cfg.ensemble)
        .into_par_iter()
        .map(|member| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(member as u64));
            let mut u = VelocityField::random(v_star.basis().clone(), &mut rng, 1.0);
            u = u.scaled(1.0 / u.l2_norm());
            let mut ratio = 0.0;
            for _ in 0..=cfg.power_iterations {
                let image = poincare_map(&v_star.axpy(delta, &u)?, forcing, &icfg)?;
                let diff = image.axpy(-1.0, &base)?;
                let n = diff.l2_norm();
                ratio = n / delta;
                if n == 0.0 {
                    break;
                }
                u = diff.scaled(1.0 / n);
            }
            Ok(ratio)
        })
        .collect::<Result<_>>()?;
    Ok(ContractionEstimate {
        rho: ratios.iter().copied().fold(0.0, f64::max),
        delta,
        ratios,
    })
}

/// Fixed-point solve followed by the contraction ensemble when converged.
pub fn solve_periodic(
    start: VelocityField,
    forcing: &Forcing,
    cfg: &PeriodicSolveConfig,
) -> Result<PeriodicSolveReport> {
    let mut report = fixed_point_solve(start, forcing, cfg)?;
    if report.converged && cfg.ensemble > 0 {
        report.contraction = Some(contraction_estimate(&report.v0, forcing, cfg)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, DomainSpec};
    use crate::dynamics::ForcingSpec;
    use crate::field::RawField;
    use std::f64::consts::PI;

    fn basis() -> Arc<SpectralBasis> {
        build_basis(DomainSpec::unit(3, 3, 2)).unwrap()
    }

    fn linear(dt: f64) -> IntegratorConfig {
        IntegratorConfig {
            dt,
            nonlinear: false,
            ..Default::default()
        }
    }

    #[test]
    fn zero_forcing_converges_immediately() {
        let b = basis();
        let cfg = PeriodicSolveConfig {
            integrator: linear(1e-2),
            ensemble: 0,
            ..Default::default()
        };
        let r = solve_periodic(VelocityField::zeros(b.clone()), &Forcing::zero(&b), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert_eq!(r.v0.l2_norm(), 0.0);
    }

    #[test]
    fn linear_contraction_is_slowest_decay() {
        let b = basis();
        let period = 0.05;
        let cfg = PeriodicSolveConfig {
            period,
            integrator: linear(1e-4),
            ensemble: 3,
            power_iterations: 6,
            ..Default::default()
        };
        let est = contraction_estimate(&VelocityField::zeros(b.clone()), &Forcing::zero(&b), &cfg).unwrap();
        let want = (-2.0 * PI * PI * period).exp();
        assert!((est.rho - want).abs() < 1e-4 * want, "{} vs {want}", est.rho);
    }

    #[test]
    fn anderson_and_picard_agree() {
        let b = basis();
        let mut a = RawField::zeros(b.spec());
        a.coeffs_mut()[[0, 1, 0]] = 0.1;
        let spec = ForcingSpec::Periodic {
            amplitude: a,
            period: 0.1,
            phase: RawField::zeros(b.spec()),
        };
        let f = Forcing::new(&spec, &b).unwrap();
        let base = PeriodicSolveConfig {
            period: 0.1,
            integrator: linear(1e-3),
            ensemble: 0,
            tol: 1e-12,
            ..Default::default()
        };
        let picard = fixed_point_solve(VelocityField::zeros(b.clone()), &f, &base).unwrap();
        let anderson = fixed_point_solve(
            VelocityField::zeros(b.clone()),
            &f,
            &PeriodicSolveConfig {
                anderson: Some(3),
                damping: 0.5,
                ..base.clone()
            },
        )
        .unwrap();
        assert!(picard.converged && anderson.converged);
        let d = picard.v0.axpy(-1.0, &anderson.v0).unwrap().l2_norm();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn period_integrator_divides_period() {
        let cfg = PeriodicSolveConfig {
            period: 1.0,
            integrator: linear(0.3),
            ..Default::default()
        };
        let i = cfg.period_integrator();
        assert_eq!(i.steps(), 3);
        assert!((i.dt * 3.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_lists_all_problems() {
        let cfg = PeriodicSolveConfig {
            period: 0.0,
            damping: 1.5,
            tol: -1.0,
            ..Default::default()
        };
        assert_eq!(cfg.violations().len(), 3);
    }
}
