//! Tracked norms, functionals and trajectory-level inequality checks.
//!
//! Inequalities whose constants are not explicit are reported as fitted
//! constants: the smallest value for which the sampled inequality holds.

use std::f64::consts::{E, PI};

use ndarray::{Array2, Array3, Axis, Zip};
use serde::Serialize;

use crate::basis::SpectralBasis;
use crate::dynamics::{nonlinear_eval, Forcing, Sample};
use crate::error::{Error, Result};
use crate::field::{lq_norm, GridVectorField, Norm, PlaneVectorField, VelocityField};

/// Exponents with their own CSV columns.
pub const Q_COLUMNS: [f64; 5] = [2.0, 3.0, 4.0, 6.0, 8.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    /// Exponents scanned by [`sqrt_q_growth`]; each in `[2, 8]`.
    pub q_list: Vec<f64>,
    /// `η > 0` of the a priori functionals.
    pub eta: f64,
    /// Additive constant in `A₁`, `A₂`, `B₂`.
    pub e: f64,
    /// Skip the nonlinear evaluation (cancellation, pressure, RHS).
    pub nonlinear: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            q_list: Q_COLUMNS.to_vec(),
            eta: 2.0,
            e: E,
            nonlinear: true,
        }
    }
}

impl DiagnosticsConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.q_list.is_empty() {
            out.push("q_list must not be empty".into());
        }
        for q in &self.q_list {
            if !(2.0..=8.0).contains(q) {
                out.push(format!("q_list entries must lie in [2, 8] (got {q})"));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            out.push(format!("eta must be positive (got {})", self.eta));
        }
        if !(self.e.is_finite() && self.e > 0.0) {
            out.push(format!("e must be positive (got {})", self.e));
        }
        out
    }
}

/// One time sample of every tracked quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: usize,
    pub l2: f64,
    pub grad_l2: f64,
    pub h_norm: f64,
    pub grad_h: f64,
    pub dz_l2: f64,
    pub grad_dz_l2: f64,
    /// `‖v‖_{L^q}` for [`Q_COLUMNS`].
    pub v_lq: [f64; 5],
    /// `‖∂_z v‖_{L^q}` for [`Q_COLUMNS`].
    pub dz_lq: [f64; 5],
    /// `‖∂_z v‖_{L^{2+η}}`.
    pub dz_l2eta: f64,
    pub fluct_l4: f64,
    /// `‖∇_H v̄‖_{L²(G)}`.
    pub grad_vbar: f64,
    pub lap_l2: f64,
    /// `‖Δ_H v̄‖_{L²(G)}`.
    pub lap_vbar: f64,
    pub sqrt_q_sup: f64,
    /// `⟨N(v), v⟩_{L²}`.
    pub cancellation: f64,
    /// `|⟨N(v), v⟩| / ‖v‖²_V` (0 for v = 0).
    pub cancellation_rel: f64,
    pub a_functional: f64,
    pub b_functional: f64,
    pub linf: f64,
    /// `‖∇_H p‖_{L²(G)}`.
    pub grad_p: f64,
    /// `‖∇_H p‖ / (‖f̄ − avg(adv)‖ + ‖Δ_H v̄‖)` (0 when the denominator is).
    pub pressure_ratio: f64,
    /// `max_j |⟨∇_H p, φ̃_j⟩_G|`.
    pub pressure_orthogonality: f64,
    /// `‖|ṽ| ∇_H ṽ‖²_{L²}`.
    pub fluct_weighted_grad: f64,
    /// `‖div_H avg(ṽ ⊗ ṽ)‖_{L²(G)}`.
    pub div_avg_fluct: f64,
    /// `‖dv/dt‖_{L²}` from the Galerkin right-hand side.
    pub rhs_l2: f64,
    pub w_bottom_max: f64,
    pub w_top_max: f64,
    /// `max |∂_z w + div_H v|`.
    pub continuity: f64,
    /// In-loop `2∫‖∇_H v‖²` (midpoint rule).
    pub dissipation: f64,
    /// In-loop `2∫‖∇_H v‖²` (trapezoid rule).
    pub dissipation_trapezoid: f64,
}

fn q_label(q: f64) -> String {
    format!("{}", q as u32)
}

impl DiagnosticsRecord {
    /// Column names in CSV order.
    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = [
            "t",
            "step",
            "l2",
            "grad_l2",
            "h_norm",
            "grad_h",
            "dz_l2",
            "grad_dz_l2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(Q_COLUMNS.iter().map(|&q| format!("v_l{}", q_label(q))));
        h.extend(Q_COLUMNS.iter().map(|&q| format!("dz_l{}", q_label(q))));
        h.extend(
            [
                "dz_l2eta",
                "fluct_l4",
                "grad_vbar",
                "lap_l2",
                "lap_vbar",
                "sqrt_q_sup",
                "cancellation",
                "cancellation_rel",
                "a_functional",
                "b_functional",
                "linf",
                "grad_p",
                "pressure_ratio",
                "pressure_orthogonality",
                "fluct_weighted_grad",
                "div_avg_fluct",
                "rhs_l2",
                "w_bottom_max",
                "w_top_max",
                "continuity",
                "dissipation",
                "dissipation_trapezoid",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    /// Values in [`Self::header`] order; `step` as a float.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![
            self.t,
            self.step as f64,
            self.l2,
            self.grad_l2,
            self.h_norm,
            self.grad_h,
            self.dz_l2,
            self.grad_dz_l2,
        ];
        v.extend(self.v_lq);
        v.extend(self.dz_lq);
        v.extend([
            self.dz_l2eta,
            self.fluct_l4,
            self.grad_vbar,
            self.lap_l2,
            self.lap_vbar,
            self.sqrt_q_sup,
            self.cancellation,
            self.cancellation_rel,
            self.a_functional,
            self.b_functional,
            self.linf,
            self.grad_p,
            self.pressure_ratio,
            self.pressure_orthogonality,
            self.fluct_weighted_grad,
            self.div_avg_fluct,
            self.rhs_l2,
            self.w_bottom_max,
            self.w_top_max,
            self.continuity,
            self.dissipation,
            self.dissipation_trapezoid,
        ]);
        v
    }

    /// Inverse of [`Self::values`].
    pub fn from_values(v: &[f64]) -> Result<Self> {
        let n = Self::header().len();
        if v.len() != n {
            return Err(Error::InvalidArgument(format!(
                "diagnostics row has {} values, expected {n}",
                v.len()
            )));
        }
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("length checked");
        let (t, step) = (next(), next() as usize);
        let (l2, grad_l2, h_norm, grad_h, dz_l2, grad_dz_l2) =
            (next(), next(), next(), next(), next(), next());
        let v_lq = std::array::from_fn(|_| next());
        let dz_lq = std::array::from_fn(|_| next());
        Ok(Self {
            t,
            step,
            l2,
            grad_l2,
            h_norm,
            grad_h,
            dz_l2,
            grad_dz_l2,
            v_lq,
            dz_lq,
            dz_l2eta: next(),
            fluct_l4: next(),
            grad_vbar: next(),
            lap_l2: next(),
            lap_vbar: next(),
            sqrt_q_sup: next(),
            cancellation: next(),
            cancellation_rel: next(),
            a_functional: next(),
            b_functional: next(),
            linf: next(),
            grad_p: next(),
            pressure_ratio: next(),
            pressure_orthogonality: next(),
            fluct_weighted_grad: next(),
            div_avg_fluct: next(),
            rhs_l2: next(),
            w_bottom_max: next(),
            w_top_max: next(),
            continuity: next(),
            dissipation: next(),
            dissipation_trapezoid: next(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }
}

/// `(1/2h) ∫ g dz` of grid values on the basis grid.
pub fn depth_average(basis: &SpectralBasis, values: &Array3<f64>) -> Array2<f64> {
    let wz = &basis.rules()[2].weights;
    let h = basis.spec().h;
    let mut out = Array2::zeros((values.shape()[0], values.shape()[1]));
    for (q, &w) in wz.iter().enumerate() {
        out.scaled_add(w / (2.0 * h), &values.index_axis(Axis(2), q));
    }
    out
}

/// `A = A₁ + A₁^λ + A₂`, `B = A₁ + B₁ + B₂` with `λ = 4/η`.
pub fn ab_functionals(
    dz_l2: f64,
    dz_l2eta: f64,
    grad_l2: f64,
    grad_dz_l2: f64,
    lap_l2: f64,
    eta: f64,
    e: f64,
) -> (f64, f64) {
    let lambda = 4.0 / eta;
    let a1 = dz_l2 * dz_l2 + dz_l2eta.powf(2.0 + eta) + e;
    let a2 = grad_l2 * grad_l2 + e;
    let b1 = grad_dz_l2 * grad_dz_l2;
    let b2 = lap_l2 * lap_l2 + e;
    (a1 + a1.powf(lambda) + a2, a1 + b1 + b2)
}

/// `max_{q ∈ q_list} ‖v‖_{L^q} / √q`.
pub fn sqrt_q_growth(v: &VelocityField, q_list: &[f64]) -> Result<f64> {
    let grid = v.to_grid();
    let mag = grid.magnitude();
    let mut best: f64 = 0.0;
    for &q in q_list {
        if q < 2.0 {
            return Err(Error::InvalidArgument(format!("q_list entries must be >= 2 (got {q})")));
        }
        best = best.max(lq_norm(&mag, v.basis().weights(), q)? / q.sqrt());
    }
    Ok(best)
}

/// Horizontal pressure gradient recovered from the depth-averaged balance.
#[derive(Debug, Clone)]
pub struct PressureReport {
    pub grad_p: PlaneVectorField,
    pub norm: f64,
    /// `‖F − Δ_H v̄‖ + ‖Δ_H v̄‖` for `F = f̄ − avg(adv) + Δ_H v̄`.
    pub bound: f64,
    /// `max_j |⟨∇_H p, φ̃_j⟩_G|`.
    pub orthogonality: f64,
}

impl PressureReport {
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.norm / self.bound
        } else {
            0.0
        }
    }
}

/// `(1 − 𝕡_G) F` on the horizontal grid, with `𝕡_G` the projection onto the
/// barotropic span.
pub fn gradient_part(basis: &SpectralBasis, f: &PlaneVectorField) -> (PlaneVectorField, f64) {
    let w = basis.weights_xy();
    let t = basis.tables();
    // ⟨F, g_ab⟩ = −B0xᵀ F1 B1y + B1xᵀ F2 B0y, then rotate into φ̃_j
    let g = -t.x.beam[0].t().dot(&(&f.components[0] * w)).dot(&t.y.beam[1])
        + t.x.beam[1].t().dot(&(&f.components[1] * w)).dot(&t.y.beam[0]);
    let (mx, my) = (basis.spec().mx, basis.spec().my);
    let flat = g.into_shape_with_order(mx * my).expect("generator shape");
    let a = basis.barotropic_generator_coeffs().dot(&flat);
    let psi = basis.stream_function(&a);
    let mut out = f.clone();
    for c in 0..2 {
        out.components[c] -= &basis.stream_component(&psi, t, c, 0, 0);
    }
    // residual overlaps after the subtraction
    let g2 = -t.x.beam[0].t().dot(&(&out.components[0] * w)).dot(&t.y.beam[1])
        + t.x.beam[1].t().dot(&(&out.components[1] * w)).dot(&t.y.beam[0]);
    let flat2 = g2.into_shape_with_order(mx * my).expect("generator shape");
    let ortho = basis
        .barotropic_generator_coeffs()
        .dot(&flat2)
        .iter()
        .fold(0.0, |m: f64, x| m.max(x.abs()));
    (out, ortho)
}

fn pressure_from_parts(
    v: &VelocityField,
    forcing_avg: &PlaneVectorField,
    advection: &GridVectorField,
) -> PressureReport {
    let basis = v.basis();
    let w = basis.weights_xy();
    let c0 = 1.0 / (2.0 * basis.spec().h).sqrt();
    let t = basis.tables();
    let psi = basis.stream_function(&v.barotropic_coeffs().to_owned());
    let lap = PlaneVectorField {
        components: [0, 1].map(|c| {
            (basis.stream_component(&psi, t, c, 2, 0) + basis.stream_component(&psi, t, c, 0, 2)) * c0
        }),
    };
    let mut rest = forcing_avg.clone();
    for c in 0..2 {
        rest.components[c] -= &depth_average(basis, &advection.components[c]);
    }
    let mut total = rest.clone();
    for c in 0..2 {
        total.components[c] += &lap.components[c];
    }
    let (grad_p, orthogonality) = gradient_part(basis, &total);
    PressureReport {
        norm: grad_p.l2_norm(w),
        bound: rest.l2_norm(w) + lap.l2_norm(w),
        grad_p,
        orthogonality,
    }
}

/// `∇_H p = (1 − 𝕡_G)(f̄ − avg(v·∇_H v + w ∂_z v) + Δ_H v̄)` at time `t`.
pub fn pressure_gradient(v: &VelocityField, forcing: &Forcing, t: f64) -> Result<PressureReport> {
    let eval = nonlinear_eval(v)?;
    Ok(pressure_from_parts(v, &forcing_average(v.basis(), forcing, t), &eval.advection))
}

fn forcing_average(basis: &SpectralBasis, forcing: &Forcing, t: f64) -> PlaneVectorField {
    let (nx, ny, _) = basis.spec().grid_shape();
    if forcing.is_zero() {
        return PlaneVectorField::zeros((nx, ny));
    }
    let grid = forcing.raw(t).to_grid(basis);
    PlaneVectorField {
        components: [0, 1].map(|c| depth_average(basis, &grid.components[c])),
    }
}

/// `(‖|ṽ| ∇_H ṽ‖², ‖div_H avg(ṽ ⊗ ṽ)‖_{L²(G)})`.
pub fn fluctuation_coupling(v: &VelocityField) -> (f64, f64) {
    let fl = v.fluctuation();
    let basis = v.basis();
    let g = fl.to_grid();
    let ops = fl.diff_ops();
    let mag2 = Zip::from(&g.components[0])
        .and(&g.components[1])
        .map_collect(|a, b| a * a + b * b);
    let mut grad2 = Array3::<f64>::zeros(mag2.raw_dim());
    for row in ops.grad.iter() {
        for d in row.iter() {
            Zip::from(&mut grad2).and(d).for_each(|s, x| *s += x * x);
        }
    }
    let mut weighted = 0.0;
    Zip::from(&mag2)
        .and(&grad2)
        .and(basis.weights())
        .for_each(|m, g2, w| weighted += w * m * g2);
    // ∂_d(ṽ_d ṽ_c) = ṽ·∇ṽ_c + (div ṽ) ṽ_c
    let comps = [0, 1].map(|c| {
        let mut s = Zip::from(&g.components[0])
            .and(&g.components[1])
            .and(&ops.grad[c][0])
            .and(&ops.grad[c][1])
            .map_collect(|a1, a2, dx, dy| a1 * dx + a2 * dy);
        Zip::from(&mut s)
            .and(&ops.div)
            .and(&g.components[c])
            .for_each(|s, d, u| *s += d * u);
        depth_average(basis, &s)
    });
    let avg = PlaneVectorField { components: comps };
    (weighted, avg.l2_norm(basis.weights_xy()))
}

/// Every tracked quantity at one state.
pub fn compute_record(
    sample: &Sample,
    forcing: &Forcing,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsRecord> {
    let v = &sample.v;
    let basis = v.basis();
    let weights = basis.weights();
    let grid = v.to_grid();
    let mag = grid.magnitude();
    let dz = v.dz();
    let dz_mag = dz.magnitude();
    let mut v_lq = [0.0; 5];
    let mut dz_lq = [0.0; 5];
    for (j, &q) in Q_COLUMNS.iter().enumerate() {
        v_lq[j] = lq_norm(&mag, weights, q)?;
        dz_lq[j] = lq_norm(&dz_mag, weights, q)?;
    }
    let dz_l2eta = lq_norm(&dz_mag, weights, 2.0 + cfg.eta)?;
    let fluct_l4 = v.fluctuation().norm(Norm::Lq(4.0))?;
    let c0sq = 1.0 / (2.0 * basis.spec().h);
    let grad_vbar = {
        let mu = basis.barotropic_eigenvalues();
        let a = v.barotropic_coeffs();
        (a.iter().zip(mu).map(|(a, m)| m * a * a).sum::<f64>() * c0sq).sqrt()
    };
    let (_, lap_bar_omega) = v.laplacian_norm_parts();
    let lap_vbar = lap_bar_omega * c0sq.sqrt();
    let (l2, grad_l2, dz_l2, grad_dz_l2, lap_l2) = (
        v.l2_norm(),
        v.grad_norm(),
        v.dz_norm(),
        v.grad_dz_norm(),
        v.laplacian_norm(),
    );
    let mut sqrt_q_sup: f64 = 0.0;
    for &q in &cfg.q_list {
        sqrt_q_sup = sqrt_q_sup.max(lq_norm(&mag, weights, q)? / q.sqrt());
    }
    let (a_functional, b_functional) =
        ab_functionals(dz_l2, dz_l2eta, grad_l2, grad_dz_l2, lap_l2, cfg.eta, cfg.e);
    let linf = lq_norm(&mag, weights, f64::INFINITY)?;

    let v_norm2 = v.norm(Norm::V)?.powi(2);
    let (cancellation, rhs_l2, pressure) = if cfg.nonlinear {
        let eval = nonlinear_eval(v)?;
        let canc = eval
            .coeffs
            .iter()
            .zip(v.coeffs().iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let lam = basis.diffusion_eigenvalues();
        let mut rhs = -(lam * v.coeffs()) - &eval.coeffs;
        if let Some(f) = forcing.projected(sample.t) {
            rhs += &f;
        }
        let rhs_l2 = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p = pressure_from_parts(v, &forcing_average(basis, forcing, sample.t), &eval.advection);
        (canc, rhs_l2, Some(p))
    } else {
        let lam = basis.diffusion_eigenvalues();
        let mut rhs = -(lam * v.coeffs());
        if let Some(f) = forcing.projected(sample.t) {
            rhs += &f;
        }
        (0.0, rhs.iter().map(|x| x * x).sum::<f64>().sqrt(), None)
    };
    let (fluct_weighted_grad, div_avg_fluct) = fluctuation_coupling(v);
    let (w_bottom_max, w_top_max) = v.w_boundary_residuals();
    Ok(DiagnosticsRecord {
        t: sample.t,
        step: sample.step,
        l2,
        grad_l2,
        h_norm: v.norm(Norm::H)?,
        grad_h: v.grad_norm_h(),
        dz_l2,
        grad_dz_l2,
        v_lq,
        dz_lq,
        dz_l2eta,
        fluct_l4,
        grad_vbar,
        lap_l2,
        lap_vbar,
        sqrt_q_sup,
        cancellation,
        cancellation_rel: if v_norm2 > 0.0 {
            cancellation.abs() / v_norm2
        } else {
            0.0
        },
        a_functional,
        b_functional,
        linf,
        grad_p: pressure.as_ref().map_or(0.0, |p| p.norm),
        pressure_ratio: pressure.as_ref().map_or(0.0, |p| p.ratio()),
        pressure_orthogonality: pressure.as_ref().map_or(0.0, |p| p.orthogonality),
        fluct_weighted_grad,
        div_avg_fluct,
        rhs_l2,
        w_bottom_max,
        w_top_max,
        continuity: v.continuity_residual(),
        dissipation: sample.dissipation.midpoint,
        dissipation_trapezoid: sample.dissipation.trapezoid,
    })
}

/// Relative energy-identity residual `(‖v‖² + 2∫‖∇_H v‖² − ‖v₀‖²)/‖v₀‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyResidual {
    pub t: f64,
    /// With the in-loop midpoint dissipation integral.
    pub midpoint: f64,
    /// With the in-loop trapezoid dissipation integral.
    pub trapezoid: f64,
}

/// Series from `(t, ‖v‖, D_mid, D_trap)` samples; zero when `v₀ = 0`.
pub fn energy_identity_residual(samples: &[(f64, f64, f64, f64)]) -> Vec<EnergyResidual> {
    let Some(&(_, n0, _, _)) = samples.first() else {
        return Vec::new();
    };
    let e0 = n0 * n0;
    samples
        .iter()
        .map(|&(t, n, dm, dt)| {
            let rel = |d: f64| {
                if e0 > 0.0 {
                    (n * n + d - e0) / e0
                } else {
                    0.0
                }
            };
            EnergyResidual {
                t,
                midpoint: rel(dm),
                trapezoid: rel(dt),
            }
        })
        .collect()
}

pub fn energy_residual_from_records(records: &[DiagnosticsRecord]) -> Vec<EnergyResidual> {
    let s: Vec<_> = records
        .iter()
        .map(|r| (r.t, r.l2, r.dissipation, r.dissipation_trapezoid))
        .collect();
    energy_identity_residual(&s)
}

/// Nonlinearity `ω` of the Grönwall inequality `x ≤ M + ∫ Ψ ω(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Omega {
    /// `ω(s) = s`, `Φ = ln`.
    Linear,
    /// `ω(s) = 1 + s + s²`, `Φ(0) = 0`.
    Cubic,
}

/// `c₀` with `Φ(0) = 0` for the cubic nonlinearity.
pub const CUBIC_OFFSET: f64 = -PI / (3.0 * 1.732_050_807_568_877_2);

impl Omega {
    pub fn phi(self, u: f64) -> f64 {
        match self {
            Omega::Linear => u.ln(),
            Omega::Cubic => {
                let r3 = 3f64.sqrt();
                (2.0 / r3) * ((1.0 + 2.0 * u) / r3).atan() + CUBIC_OFFSET
            }
        }
    }

    /// `(inf, sup)` of `Φ` over its domain.
    pub fn phi_range(self) -> (f64, f64) {
        match self {
            Omega::Linear => (f64::NEG_INFINITY, f64::INFINITY),
            Omega::Cubic => (0.0, 2.0 * PI / (3.0 * 3f64.sqrt())),
        }
    }

    pub fn phi_inv(self, y: f64) -> Option<f64> {
        let (lo, hi) = self.phi_range();
        if !(y >= lo && y < hi) {
            return None;
        }
        Some(match self {
            Omega::Linear => y.exp(),
            Omega::Cubic => {
                let r3 = 3f64.sqrt();
                (r3 * (r3 * y / 2.0 + PI / 6.0).tan() - 1.0) / 2.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallSpec {
    pub m: f64,
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    pub omega: Omega,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    /// `Φ⁻¹(Φ(M) + ∫₀ᵗ Ψ)`; `None` once the argument leaves the range of `Φ`.
    pub envelope: Vec<Option<f64>>,
    pub holds: bool,
    pub envelope_escapes: bool,
    pub escape_time: Option<f64>,
}

/// Running trapezoid integral, starting at 0.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        if i > 0 {
            acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Envelope and pointwise check `x ≤ envelope · (1 + tol)`.
pub fn gronwall_envelope(spec: &GronwallSpec, x: &[f64], tol: f64) -> Result<GronwallReport> {
    let n = spec.times.len();
    if spec.psi.len() != n || x.len() != n {
        return Err(Error::InvalidArgument(
            "Grönwall series must share the time grid".into(),
        ));
    }
    if spec.m < 0.0 || spec.psi.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument("Grönwall needs M ≥ 0 and Ψ ≥ 0".into()));
    }
    let integral = cumulative_trapezoid(&spec.times, &spec.psi);
    let base = spec.omega.phi(spec.m);
    let envelope: Vec<Option<f64>> = integral
        .iter()
        .map(|i| spec.omega.phi_inv(base + i))
        .collect();
    let escape = envelope.iter().position(Option::is_none);
    let holds = x
        .iter()
        .zip(&envelope)
        .all(|(x, e)| e.is_none_or(|e| *x <= e * (1.0 + tol)));
    Ok(GronwallReport {
        holds,
        envelope_escapes: escape.is_some(),
        escape_time: escape.map(|i| spec.times[i]),
        envelope,
    })
}

/// `‖∂_z v‖^q_{L^q}(t)` against `exp(c ∫₀ᵗ ‖∇_H v‖²_{H¹_z L²})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqPreservation {
    pub q: f64,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub integral: Vec<f64>,
    /// Smallest `c` (possibly negative) for which every sample satisfies
    /// `lhs ≤ lhs₀ e^{c I}`; 0 for a vanishing initial lhs.
    pub fitted_c: f64,
}

impl LqPreservation {
    pub fn rhs(&self, c: f64) -> Vec<f64> {
        self.integral
            .iter()
            .map(|i| self.lhs[0] * (c * i).exp())
            .collect()
    }
}

/// `integrand = ‖∇_H v‖² + ‖∇_H ∂_z v‖²`.
pub fn lq_preservation_fit(q: f64, times: &[f64], lhs: &[f64], integrand: &[f64]) -> Result<LqPreservation> {
    if !(q > 2.0) {
        return Err(Error::InvalidArgument(format!("L^q preservation needs q > 2 (got {q})")));
    }
    let integral = cumulative_trapezoid(times, integrand);
    let lhs0 = lhs.first().copied().unwrap_or(0.0);
    let mut fitted = f64::NEG_INFINITY;
    if lhs0 > 0.0 {
        for (l, i) in lhs.iter().zip(&integral).skip(1) {
            if *i > 0.0 {
                fitted = fitted.max((l / lhs0).ln() / i);
            }
        }
    }
    if !fitted.is_finite() {
        fitted = 0.0;
    }
    Ok(LqPreservation {
        q,
        times: times.to_vec(),
        lhs: lhs.to_vec(),
        integral,
        fitted_c: fitted,
    })
}

pub fn lq_preservation_check(samples: &[Sample], q: f64) -> Result<LqPreservation> {
    let mut times = Vec::new();
    let mut lhs = Vec::new();
    let mut integrand = Vec::new();
    for s in samples {
        times.push(s.t);
        lhs.push(s.v.dz_lq_norm(q)?.powf(q));
        integrand.push(s.v.grad_norm().powi(2) + s.v.grad_dz_norm().powi(2));
    }
    lq_preservation_fit(q, &times, &lhs, &integrand)
}

/// Records carry `‖∂_z v‖_{L^q}` for [`Q_COLUMNS`] only.
pub fn lq_preservation_from_records(records: &[DiagnosticsRecord], q: f64) -> Result<LqPreservation> {
    let j = Q_COLUMNS
        .iter()
        .position(|&x| x == q)
        .ok_or_else(|| Error::InvalidArgument(format!("q = {q} has no diagnostics column")))?;
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let lhs: Vec<f64> = records.iter().map(|r| r.dz_lq[j].powf(q)).collect();
    let integrand: Vec<f64> = records
        .iter()
        .map(|r| r.grad_l2 * r.grad_l2 + r.grad_dz_l2 * r.grad_dz_l2)
        .collect();
    lq_preservation_fit(q, &times, &lhs, &integrand)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrilinearVariant {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrilinearReport {
    pub lhs: f64,
    /// Right-hand side with `c = 1`.
    pub rhs: f64,
    /// `lhs / rhs` (0 when both vanish).
    pub ratio: f64,
}

struct ScalarNorms {
    l2: f64,
    grad: f64,
    dz: f64,
}

fn scalar_norms(v: &VelocityField, c: usize) -> ScalarNorms {
    use crate::basis::VerticalOp;
    let w = v.basis().weights();
    let norm = |a: &Array3<f64>| lq_norm(a, w, 2.0).expect("q = 2");
    let gx = v.eval(c, 1, 0, VerticalOp::Value);
    let gy = v.eval(c, 0, 1, VerticalOp::Value);
    ScalarNorms {
        l2: norm(&v.eval(c, 0, 0, VerticalOp::Value)),
        grad: norm(&gx).hypot(norm(&gy)),
        dz: norm(&v.eval(c, 0, 0, VerticalOp::Derivative)),
    }
}

/// Both sides of the trilinear estimates for the scalar functions given by
/// the first components of `f`, `g`, `h`.
pub fn trilinear_check(
    f: &VelocityField,
    g: &VelocityField,
    h: &VelocityField,
    variant: TrilinearVariant,
) -> Result<TrilinearReport> {
    use crate::basis::VerticalOp;
    if !(f.same_basis(g) && g.same_basis(h)) {
        return Err(Error::BasisMismatch);
    }
    let (fv, gv, hv) = (
        f.eval(0, 0, 0, VerticalOp::Value),
        g.eval(0, 0, 0, VerticalOp::Value),
        h.eval(0, 0, 0, VerticalOp::Value),
    );
    let mut lhs = 0.0;
    Zip::from(&fv)
        .and(&gv)
        .and(&hv)
        .and(f.basis().weights())
        .for_each(|a, b, c, w| lhs += w * a * b * c);
    let lhs = lhs.abs();
    let (nf, ng, nh) = (scalar_norms(f, 0), scalar_norms(g, 0), scalar_norms(h, 0));
    let rhs = match variant {
        TrilinearVariant::A => {
            (nf.grad * nf.l2 * ng.grad * ng.l2).sqrt() * ((nh.dz * nh.l2).sqrt() + nh.l2)
        }
        TrilinearVariant::B => {
            nf.l2 * (nh.grad * nh.l2).sqrt() * ((ng.l2 + ng.dz) * (ng.l2 + ng.grad)).sqrt()
        }
    };
    Ok(TrilinearReport {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
    })
}

/// Smallest `C` with `dA/dt + B ≤ C (1 + ‖v‖²_∞) A` at every interior
/// sample, `dA/dt` by centered differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriFit {
    pub fitted_c: f64,
    pub ratios: Vec<f64>,
}

pub fn apriori_fit(records: &[DiagnosticsRecord]) -> AprioriFit {
    let mut ratios = Vec::new();
    for i in 1..records.len().saturating_sub(1) {
        let (p, r, n) = (&records[i - 1], &records[i], &records[i + 1]);
        let da = (n.a_functional - p.a_functional) / (n.t - p.t);
        ratios.push((da + r.b_functional) / ((1.0 + r.linf * r.linf) * r.a_functional));
    }
    AprioriFit {
        fitted_c: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0),
        ratios,
    }
}

/// Lemma-style bookkeeping of the barotropic/fluctuation coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarotropicReport {
    /// `sup_t (‖∇_H v̄‖² + ‖ṽ‖⁴_{L⁴})`.
    pub sup_energy: f64,
    pub int_lap_vbar: f64,
    pub int_fluct_weighted_grad: f64,
    pub int_div_avg_fluct: f64,
    /// `sup_t [energy(t) + ∫₀ᵗ(‖Δ_H v̄‖² + ‖|ṽ|∇ṽ‖²)] / (1 + energy(0))`.
    pub fitted_constant: f64,
    pub all_finite: bool,
}

pub fn barotropic_l4_functionals(records: &[DiagnosticsRecord]) -> BarotropicReport {
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let energy: Vec<f64> = records
        .iter()
        .map(|r| r.grad_vbar * r.grad_vbar + r.fluct_l4.powi(4))
        .collect();
    let lap: Vec<f64> = records.iter().map(|r| r.lap_vbar * r.lap_vbar).collect();
    let wg: Vec<f64> = records.iter().map(|r| r.fluct_weighted_grad).collect();
    let dv: Vec<f64> = records.iter().map(|r| r.div_avg_fluct * r.div_avg_fluct).collect();
    let (il, iw, id) = (
        cumulative_trapezoid(&times, &lap),
        cumulative_trapezoid(&times, &wg),
        cumulative_trapezoid(&times, &dv),
    );
    let e0 = energy.first().copied().unwrap_or(0.0);
    let fitted = (0..records.len())
        .map(|i| (energy[i] + il[i] + iw[i]) / (1.0 + e0))
        .fold(0.0, f64::max);
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let report = BarotropicReport {
        sup_energy: energy.iter().copied().fold(0.0, f64::max),
        int_lap_vbar: last(&il),
        int_fluct_weighted_grad: last(&iw),
        int_div_avg_fluct: last(&id),
        fitted_constant: fitted,
        all_finite: true,
    };
    BarotropicReport {
        all_finite: [
            report.sup_energy,
            report.int_lap_vbar,
            report.int_fluct_weighted_grad,
            report.int_div_avg_fluct,
            report.fitted_constant,
        ]
        .iter()
        .all(|x| x.is_finite()),
        ..report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, DomainSpec};
    use crate::dynamics::Dissipation;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn basis() -> Arc<SpectralBasis> {
        build_basis(DomainSpec::unit(4, 4, 3)).unwrap()
    }

    fn sample(v: VelocityField) -> Sample {
        Sample {
            t: 0.0,
            step: 0,
            v,
            dissipation: Dissipation::default(),
        }
    }

    #[test]
    fn cubic_offset_makes_phi_vanish_at_zero() {
        let want = -(2.0 / 3f64.sqrt()) * (1.0 / 3f64.sqrt()).atan();
        assert!((CUBIC_OFFSET - want).abs() < 1e-15);
        assert!(Omega::Cubic.phi(0.0).abs() < 1e-15);
    }

    #[test]
    fn zero_psi_gives_constant_envelope() {
        let spec = GronwallSpec {
            m: 0.7,
            times: vec![0.0, 0.5, 1.0],
            psi: vec![0.0; 3],
            omega: Omega::Cubic,
        };
        let r = gronwall_envelope(&spec, &[0.7, 0.6, 0.7], 1e-12).unwrap();
        assert!(r.holds);
        for e in r.envelope {
            assert!((e.unwrap() - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_gronwall_is_exponential() {
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();
        let spec = GronwallSpec {
            m: 2.0,
            psi: vec![1.5; times.len()],
            times: times.clone(),
            omega: Omega::Linear,
        };
        let r = gronwall_envelope(&spec, &vec![0.0; times.len()], 0.0).unwrap();
        for (t, e) in times.iter().zip(&r.envelope) {
            let want = 2.0 * (1.5 * t).exp();
            assert!((e.unwrap() - want).abs() <= 1e-10 * want);
        }
    }

    #[test]
    fn cubic_envelope_escapes() {
        let spec = GronwallSpec {
            m: 1.0,
            times: vec![0.0, 1.0, 2.0],
            psi: vec![1.0; 3],
            omega: Omega::Cubic,
        };
        let r = gronwall_envelope(&spec, &[1.0; 3], 0.0).unwrap();
        assert!(r.envelope_escapes);
        assert_eq!(r.escape_time, Some(1.0));
    }

    #[test]
    fn zero_field_diagnostics() {
        let b = basis();
        let rec = compute_record(&sample(VelocityField::zeros(b.clone())), &Forcing::zero(&b), &DiagnosticsConfig::default()).unwrap();
        assert_eq!(rec.l2, 0.0);
        assert_eq!(rec.sqrt_q_sup, 0.0);
        assert_eq!(rec.grad_p, 0.0);
        // A = 2e + e^λ with λ = 2, B = 2e
        assert!((rec.a_functional - (2.0 * E + E * E)).abs() < 1e-12);
        assert!((rec.b_functional - 2.0 * E).abs() < 1e-12);
        assert!(rec.is_finite());
    }

    #[test]
    fn record_values_round_trip() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = VelocityField::random(b.clone(), &mut rng, 0.5);
        let rec = compute_record(&sample(v), &Forcing::zero(&b), &DiagnosticsConfig::default()).unwrap();
        assert_eq!(DiagnosticsRecord::header().len(), rec.values().len());
        assert_eq!(DiagnosticsRecord::from_values(&rec.values()).unwrap(), rec);
    }

    #[test]
    fn pressure_of_pure_gradient_is_itself() {
        let b = basis();
        let (xs, ys, _) = b.nodes();
        let pi = PI;
        // q = sin²(πx) sin²(πy)
        let f = PlaneVectorField {
            components: [
                Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| {
                    pi * (2.0 * pi * xs[i]).sin() * (pi * ys[j]).sin().powi(2)
                }),
                Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| {
                    pi * (pi * xs[i]).sin().powi(2) * (2.0 * pi * ys[j]).sin()
                }),
            ],
        };
        let (gp, ortho) = gradient_part(&b, &f);
        let w = b.weights_xy();
        let mut diff = gp.clone();
        for c in 0..2 {
            diff.components[c] -= &f.components[c];
        }
        assert!(diff.l2_norm(w) < 1e-8, "{}", diff.l2_norm(w));
        assert!(ortho < 1e-12);
    }

    #[test]
    fn z_independent_field_has_no_vertical_diagnostics() {
        let b = basis();
        let mut c = Array3::zeros(b.spec().coeff_shape());
        c[[0, 0, 0]] = 0.4;
        c[[0, 0, 3]] = -0.2;
        let v = VelocityField::from_coeffs(b.clone(), c).unwrap();
        let rec = compute_record(&sample(v), &Forcing::zero(&b), &DiagnosticsConfig::default()).unwrap();
        assert_eq!(rec.dz_l2, 0.0);
        assert!(rec.dz_lq.iter().all(|&x| x == 0.0));
        assert_eq!(rec.fluct_l4, 0.0);
        assert!(rec.grad_vbar > 0.0);
    }

    #[test]
    fn sqrt_q_decreasing_for_bounded_profile() {
        let b = basis();
        let mut c = Array3::zeros(b.spec().coeff_shape());
        c[[0, 0, 0]] = 1.0;
        let v = VelocityField::from_coeffs(b, c).unwrap();
        let ratios: Vec<f64> = [2.0, 4.0, 6.0, 8.0]
            .iter()
            .map(|&q| v.norm(Norm::Lq(q)).unwrap() / q.sqrt())
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
        assert_eq!(sqrt_q_growth(&v, &[2.0, 4.0]).unwrap(), ratios[0]);
    }

    #[test]
    fn lq_fit_zero_lhs_is_zero() {
        let fit = lq_preservation_fit(4.0, &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(fit.fitted_c, 0.0);
        assert!(lq_preservation_fit(2.0, &[0.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn trilinear_with_zero_factor() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = VelocityField::random(b.clone(), &mut rng, 1.0);
        let h = VelocityField::random(b.clone(), &mut rng, 1.0);
        let r = trilinear_check(&VelocityField::zeros(b), &g, &h, TrilinearVariant::A).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cubic_phi_round_trip(u in 0.0f64..10.0) {
            let y = Omega::Cubic.phi(u);
            let back = Omega::Cubic.phi_inv(y).unwrap();
            prop_assert!((back - u).abs() <= 1e-12);
        }

        #[test]
        fn cubic_phi_is_increasing(u in 0.0f64..50.0, du in 1e-6f64..1.0) {
            prop_assert!(Omega::Cubic.phi(u + du) > Omega::Cubic.phi(u));
        }
    }
}
