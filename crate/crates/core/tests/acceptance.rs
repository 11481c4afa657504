//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Reference scale is Mx = My = K = 8, dt = 1e−3, T = 1.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use hydroprim::basis::{build_basis, DomainSpec, SpectralBasis};
use hydroprim::diagnostics::{
    apriori_fit, compute_record, energy_residual_from_records, gronwall_envelope, lq_preservation_from_records,
    DiagnosticsConfig, DiagnosticsRecord, GronwallSpec, Omega,
};
use hydroprim::dynamics::{rhs, simulate_collect, Forcing, ForcingSpec, IntegratorConfig, SimulationState};
use hydroprim::field::{lq_norm, RawField, VelocityField};
use hydroprim::periodic::{solve_periodic, PeriodicSolveConfig};
use hydroprim::profiles::{initial_field, random_raw, single_mode_raw, Profile};
use hydroprim::quadrature::GaussRule;
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const AMPLITUDE: f64 = 0.05;
const SEED: u64 = 11;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Diagnostics of one run, sampled every 10 steps.
fn trajectory(spec: DomainSpec, dt: f64, forcing: ForcingSpec, t_end: f64) -> Vec<DiagnosticsRecord> {
    let basis = build_basis(spec).unwrap();
    let forcing = Forcing::new(&forcing, &basis).unwrap();
    let v0 = initial_field(&basis, Profile::Random, AMPLITUDE, SEED).unwrap();
    let cfg = IntegratorConfig {
        dt,
        t_end,
        diag_every: ((1e-2 / dt).round() as usize).max(1),
        ..Default::default()
    };
    let (samples, _) = simulate_collect(v0, &forcing, &cfg).unwrap();
    let dcfg = DiagnosticsConfig::default();
    samples
        .iter()
        .map(|s| compute_record(s, &forcing, &dcfg).unwrap())
        .collect()
}

fn max_of(r: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    r.iter().map(f).fold(0.0, f64::max)
}

struct Runs {
    reference: Vec<DiagnosticsRecord>,
    half_step: Vec<DiagnosticsRecord>,
}

fn criterion_1() -> Outcome {
    let basis = build_basis(DomainSpec::unit(8, 8, 8)).unwrap();
    let rep = basis.report();
    let gram = rep
        .scalar_gram_residual
        .max(rep.vertical_gram_residual)
        .max(rep.barotropic_gram_residual);
    let mut div: f64 = 0.0;
    for j in 0..basis.barotropic_count() {
        let mut c = Array3::zeros(basis.spec().coeff_shape());
        c[[0, 0, j]] = 1.0;
        let v = VelocityField::from_coeffs(basis.clone(), c).unwrap();
        div = div.max(v.div_h().iter().fold(0.0, |m, x| m.max(x.abs())));
    }
    let nu = basis.vertical_eigenvalues();
    let w = basis.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut h_err: f64 = 0.0;
    for _ in 0..100 {
        let v = VelocityField::random(basis.clone(), &mut rng, 1.0);
        let grid = lq_norm(&v.to_grid().magnitude(), w, 2.0).unwrap().powi(2)
            + lq_norm(&v.dz().magnitude(), w, 2.0).unwrap().powi(2);
        let spectral: f64 = v
            .coeffs()
            .indexed_iter()
            .map(|((_, k, _), a)| (1.0 + nu[k]) * a * a)
            .sum();
        h_err = h_err.max((grid - spectral).abs() / spectral);
    }
    outcome(
        gram <= 1e-10 && div <= 1e-10 && h_err <= 1e-10,
        format!("gram {gram:.1e}, max |div_H φ̃| {div:.1e}, H-weight identity {h_err:.1e} (tol 1e-10)"),
    )
}

fn criterion_2(runs: &Runs) -> Outcome {
    let r = &runs.reference;
    let cont = max_of(r, |x| x.continuity);
    let w = max_of(r, |x| x.w_bottom_max.max(x.w_top_max));
    outcome(
        cont <= 1e-10 && w <= 1e-10,
        format!("continuity {cont:.1e}, w(±h) {w:.1e} over {} samples (tol 1e-10)", r.len()),
    )
}

fn criterion_3(runs: &Runs) -> Outcome {
    let c = max_of(&runs.reference, |x| x.cancellation_rel);
    outcome(c <= 1e-10, format!("max |<N(v),v>| / |v|_V^2 = {c:.1e} (tol 1e-10)"))
}

fn criterion_4(runs: &Runs) -> Outcome {
    let last = |r: &[DiagnosticsRecord]| energy_residual_from_records(r).last().unwrap().midpoint.abs();
    let (r1, r2) = (last(&runs.reference), last(&runs.half_step));
    let order = (r1 / r2).log2();
    outcome(
        r1 <= 1e-6 && order >= 1.8,
        format!("|r(T)| = {r1:.2e} at dt 1e-3, {r2:.2e} at dt 5e-4, order {order:.2} (need <= 1e-6, >= 1.8)"),
    )
}

/// Independent Galerkin assembly of the right-hand side by pointwise
/// evaluation of every basis function on a dense Gauss grid.
mod oracle {
    use super::*;

    pub struct Slot {
        pub index: (usize, usize, usize),
        kind: Kind,
    }

    enum Kind {
        /// `e_c s_mn(x, y) c_k(z)`.
        Fluct { c: usize, k: usize, m: usize, n: usize },
        Baro { j: usize },
    }

    /// Value, x-, y- and z-derivative of both components, and the mode's
    /// contribution to w.
    #[derive(Clone, Copy, Default)]
    pub struct Eval {
        pub v: [f64; 2],
        pub dx: [f64; 2],
        pub dy: [f64; 2],
        pub dz: [f64; 2],
        pub w: f64,
    }

    pub fn slots(basis: &SpectralBasis) -> Vec<Slot> {
        let s = basis.spec();
        let mut out = Vec::new();
        for j in 0..basis.barotropic_count() {
            out.push(Slot {
                index: (0, 0, j),
                kind: Kind::Baro { j },
            });
        }
        for c in 0..2 {
            for k in 1..=s.k {
                for m in 1..=s.mx {
                    for n in 1..=s.my {
                        out.push(Slot {
                            index: (c, k, (m - 1) * s.my + (n - 1)),
                            kind: Kind::Fluct { c, k, m, n },
                        });
                    }
                }
            }
        }
        out
    }

    pub fn eval(basis: &SpectralBasis, slot: &Slot, x: f64, y: f64, z: f64) -> Eval {
        let s = basis.spec();
        let mut e = Eval::default();
        match slot.kind {
            Kind::Fluct { c, k, m, n } => {
                let (a, b) = (m as f64 * PI / s.lx, n as f64 * PI / s.ly);
                let norm = 2.0 / (s.lx * s.ly).sqrt();
                let g = k as f64 * PI / (2.0 * s.h);
                let zeta = g * (z + s.h);
                let ck = zeta.cos() / s.h.sqrt();
                let dck = -g * zeta.sin() / s.h.sqrt();
                let ick = zeta.sin() / (g * s.h.sqrt());
                let (sx, cx) = (a * x).sin_cos();
                let (sy, cy) = (b * y).sin_cos();
                let sxy = norm * sx * sy;
                let (sdx, sdy) = (norm * a * cx * sy, norm * b * sx * cy);
                e.v[c] = sxy * ck;
                e.dx[c] = sdx * ck;
                e.dy[c] = sdy * ck;
                e.dz[c] = sxy * dck;
                e.w = -(if c == 0 { sdx } else { sdy }) * ick;
            }
            Kind::Baro { j } => {
                let r = basis.barotropic_generator_coeffs();
                let (bx, by) = basis.beam_modes();
                let c0 = 1.0 / (2.0 * s.h).sqrt();
                for (g, &coef) in r.row(j).iter().enumerate() {
                    if coef == 0.0 {
                        continue;
                    }
                    let (ia, ib) = (g / s.my, g % s.my);
                    let cx: Vec<f64> = (0..3).map(|d| bx[ia].eval_on(d, x, s.lx)).collect();
                    let cy: Vec<f64> = (0..3).map(|d| by[ib].eval_on(d, y, s.ly)).collect();
                    let f = coef * c0;
                    e.v[0] -= f * cx[0] * cy[1];
                    e.v[1] += f * cx[1] * cy[0];
                    e.dx[0] -= f * cx[1] * cy[1];
                    e.dx[1] += f * cx[2] * cy[0];
                    e.dy[0] -= f * cx[0] * cy[2];
                    e.dy[1] += f * cx[1] * cy[1];
                }
            }
        }
        e
    }

    /// Raw forcing `Σ f[c,k,i] e_c s_i c_k` at a point.
    pub fn raw_value(basis: &SpectralBasis, raw: &RawField, x: f64, y: f64, z: f64) -> [f64; 2] {
        let s = basis.spec();
        let mut out = [0.0; 2];
        for ((c, k, i), &f) in raw.coeffs().indexed_iter() {
            if f == 0.0 {
                continue;
            }
            let (m, n) = (i / s.my + 1, i % s.my + 1);
            let sxy = 2.0 / (s.lx * s.ly).sqrt()
                * (m as f64 * PI * x / s.lx).sin()
                * (n as f64 * PI * y / s.ly).sin();
            let ck = if k == 0 {
                1.0 / (2.0 * s.h).sqrt()
            } else {
                (k as f64 * PI * (z + s.h) / (2.0 * s.h)).cos() / s.h.sqrt()
            };
            out[c] += f * sxy * ck;
        }
        out
    }

    /// `⟨Δ_H v − v·∇_H v − w ∂_z v + f, Φ_j⟩` for every slot and state.
    pub fn assemble(basis: &SpectralBasis, states: &[VelocityField], forcing: &RawField, nodes: usize) -> Vec<Array3<f64>> {
        let s = basis.spec();
        let rules = [
            GaussRule::new(nodes, 0.0, s.lx),
            GaussRule::new(nodes, 0.0, s.ly),
            GaussRule::new(nodes, -s.h, s.h),
        ];
        let slots = slots(basis);
        let mut out = vec![Array3::zeros(s.coeff_shape()); states.len()];
        let mut evals = vec![Eval::default(); slots.len()];
        for (ix, &x) in rules[0].nodes.iter().enumerate() {
            for (iy, &y) in rules[1].nodes.iter().enumerate() {
                for (iz, &z) in rules[2].nodes.iter().enumerate() {
                    let wq = rules[0].weights[ix] * rules[1].weights[iy] * rules[2].weights[iz];
                    for (e, slot) in evals.iter_mut().zip(&slots) {
                        *e = eval(basis, slot, x, y, z);
                    }
                    let f = raw_value(basis, forcing, x, y, z);
                    for (state, acc) in states.iter().zip(out.iter_mut()) {
                        let mut v = Eval::default();
                        for (e, slot) in evals.iter().zip(&slots) {
                            let (c, k, i) = slot.index;
                            let a = state.coeffs()[[c, k, i]];
                            for d in 0..2 {
                                v.v[d] += a * e.v[d];
                                v.dx[d] += a * e.dx[d];
                                v.dy[d] += a * e.dy[d];
                                v.dz[d] += a * e.dz[d];
                            }
                            v.w += a * e.w;
                        }
                        let adv: [f64; 2] =
                            std::array::from_fn(|d| v.v[0] * v.dx[d] + v.v[1] * v.dy[d] + v.w * v.dz[d]);
                        for (e, slot) in evals.iter().zip(&slots) {
                            let mut b = 0.0;
                            for d in 0..2 {
                                b -= v.dx[d] * e.dx[d] + v.dy[d] * e.dy[d];
                                b += (f[d] - adv[d]) * e.v[d];
                            }
                            acc[slot.index] += wq * b;
                        }
                    }
                }
            }
        }
        out
    }
}

fn criterion_5() -> Outcome {
    let basis = build_basis(DomainSpec::new(0.7, 1.3, 0.9, 3, 3, 3)).unwrap();
    let raw = random_raw(&basis, 0.5, 3);
    let forcing = Forcing::new(&ForcingSpec::Steady(raw.clone()), &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states: Vec<VelocityField> = (0..20)
        .map(|_| VelocityField::random(basis.clone(), &mut rng, 1.0))
        .collect();
    let oracle = oracle::assemble(&basis, &states, &raw, 40);
    let mut worst: f64 = 0.0;
    for (v, expected) in states.iter().zip(&oracle) {
        let got = rhs(&SimulationState::new(v.clone(), 1e-3), &forcing, true).unwrap();
        let diff = (&got - expected).iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    outcome(worst <= 1e-8, format!("max relative RHS mismatch {worst:.1e} over 20 states (tol 1e-8)"))
}

fn criterion_6(runs: &Runs) -> Outcome {
    let coarse = lq_preservation_from_records(&runs.reference, 4.0).unwrap().fitted_c;
    let fine_records = trajectory(DomainSpec::unit(12, 12, 12), 1e-3, ForcingSpec::Zero, 1.0);
    let fine = lq_preservation_from_records(&fine_records, 4.0).unwrap().fitted_c;
    let change = (fine - coarse).abs() / coarse.abs();
    outcome(
        coarse.is_finite() && fine.is_finite() && change <= 0.2,
        format!("fitted c = {coarse:.4} at (8,8,8), {fine:.4} at (12,12,12), change {:.2}% (tol 20%)", 100.0 * change),
    )
}

fn criterion_7() -> Outcome {
    let roundtrip = (0..=10_000)
        .map(|i| {
            let u = 10.0 * i as f64 / 10_000.0;
            [Omega::Cubic, Omega::Linear]
                .iter()
                .filter(|o| **o == Omega::Cubic || u > 0.0)
                .map(|o| (o.phi_inv(o.phi(u)).unwrap() - u).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    // Ψ constant and Ψ linear: the trapezoid integral is exact
    let times: Vec<f64> = (0..=1000).map(|i| 2.0 * i as f64 / 1000.0).collect();
    let m = 1.7;
    let mut linear: f64 = 0.0;
    for (psi, integral) in [
        (
            times.iter().map(|_| 0.8).collect::<Vec<_>>(),
            times.iter().map(|t| 0.8 * t).collect::<Vec<_>>(),
        ),
        (
            times.iter().map(|t| 1.0 + 2.0 * t).collect(),
            times.iter().map(|t| t + t * t).collect(),
        ),
    ] {
        let spec = GronwallSpec {
            m,
            times: times.clone(),
            psi,
            omega: Omega::Linear,
        };
        let env = gronwall_envelope(&spec, &vec![0.0; times.len()], 0.0).unwrap();
        for (e, i) in env.envelope.iter().zip(&integral) {
            let exact = m * i.exp();
            linear = linear.max((e.unwrap() - exact).abs() / exact);
        }
    }
    outcome(
        roundtrip <= 1e-12 && linear <= 1e-10,
        format!("Φ⁻¹∘Φ error {roundtrip:.1e} on [0,10] (tol 1e-12), linear envelope vs M·e^∫Ψ {linear:.1e} (tol 1e-10)"),
    )
}

fn criterion_8() -> Outcome {
    // (a) zero forcing
    let basis = build_basis(DomainSpec::unit(8, 8, 8)).unwrap();
    let start = initial_field(&basis, Profile::Random, AMPLITUDE, SEED).unwrap();
    let cfg = PeriodicSolveConfig {
        integrator: IntegratorConfig {
            dt: 1e-2,
            ..Default::default()
        },
        ensemble: 0,
        ..Default::default()
    };
    let a = solve_periodic(start, &Forcing::zero(&basis), &cfg).unwrap();
    let pass_a = a.converged && a.iterations <= 2 && a.v0_l2 <= cfg.tol;

    // (b) linear, one forced fluctuation mode: x' = −μx + A cos ωt
    let small = build_basis(DomainSpec::unit(3, 3, 2)).unwrap();
    let (amp, period) = (0.1, 1.0);
    let raw = single_mode_raw(&small, 1, 1, 1, 1, amp).unwrap();
    let spec = ForcingSpec::Periodic {
        amplitude: raw,
        period,
        phase: RawField::zeros(small.spec()),
    };
    let forcing = Forcing::new(&spec, &small).unwrap();
    let cfg_b = PeriodicSolveConfig {
        period,
        tol: 1e-13,
        integrator: IntegratorConfig {
            dt: 1e-5,
            nonlinear: false,
            ..Default::default()
        },
        ensemble: 0,
        ..Default::default()
    };
    let b = solve_periodic(VelocityField::zeros(small.clone()), &forcing, &cfg_b).unwrap();
    let mu = small.diffusion_eigenvalues()[[0, 1, 0]];
    let omega = 2.0 * PI / period;
    let mut exact = Array3::zeros(small.spec().coeff_shape());
    exact[[0, 1, 0]] = amp * mu / (mu * mu + omega * omega);
    let err_b = (b.v0.coeffs() - &exact).iter().map(|x| x * x).sum::<f64>().sqrt();
    let pass_b = b.converged && err_b <= 1e-8;

    // (c) nonlinear, small periodic forcing, 10-member contraction ensemble
    let spec_c = ForcingSpec::Periodic {
        amplitude: random_raw(&basis, 0.1, 21),
        period: 1.0,
        phase: RawField::zeros(basis.spec()),
    };
    let forcing_c = Forcing::new(&spec_c, &basis).unwrap();
    let cfg_c = PeriodicSolveConfig {
        integrator: IntegratorConfig {
            dt: 1e-2,
            ..Default::default()
        },
        ensemble: 10,
        ..Default::default()
    };
    let c = solve_periodic(VelocityField::zeros(basis.clone()), &forcing_c, &cfg_c).unwrap();
    let rho = c.contraction.as_ref().map_or(f64::INFINITY, |e| e.rho);
    let pass_c = c.converged && c.final_residual <= 1e-8 && rho < 1.0;

    outcome(
        pass_a && pass_b && pass_c,
        format!(
            "(a) {} iterations, |v0| {:.1e}; (b) |v0 − exact| {err_b:.1e} (tol 1e-8, dt 1e-5); \
             (c) residual {:.1e} after {} iterations, ρ = {rho:.2e} over 10 members",
            a.iterations, a.v0_l2, c.final_residual, c.iterations
        ),
    )
}

fn criterion_9(runs: &Runs) -> Outcome {
    let forced = trajectory(
        DomainSpec::unit(8, 8, 8),
        1e-3,
        ForcingSpec::Steady(random_raw(&build_basis(DomainSpec::unit(8, 8, 8)).unwrap(), 1.0, 4)),
        0.2,
    );
    let all: Vec<&DiagnosticsRecord> = runs.reference.iter().chain(&forced).collect();
    let orth = all.iter().map(|r| r.pressure_orthogonality).fold(0.0, f64::max);
    let ratio = all.iter().map(|r| r.pressure_ratio).fold(0.0, f64::max);
    outcome(
        orth <= 1e-10 && ratio <= 1.0 + 1e-8,
        format!("max |<∇p, φ̃>| {orth:.1e} (tol 1e-10), fitted bound constant {ratio:.4} (tol 1 + 1e-8), free and forced runs"),
    )
}

fn criterion_10(runs: &Runs) -> Outcome {
    let c1 = apriori_fit(&runs.reference).fitted_c;
    let c2 = apriori_fit(&runs.half_step).fitted_c;
    let change = (c1 - c2).abs() / c1;
    outcome(
        c1.is_finite() && c2.is_finite() && change <= 0.2,
        format!("fitted C = {c1:.4} at dt 1e-3, {c2:.4} at dt 5e-4, change {:.2}% (tol 20%)", 100.0 * change),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let spec = DomainSpec::unit(8, 8, 8);
    let runs = Runs {
        reference: trajectory(spec, 1e-3, ForcingSpec::Zero, 1.0),
        half_step: trajectory(spec, 5e-4, ForcingSpec::Zero, 1.0),
    };
    println!("reference trajectories ready after {:.1}s", started.elapsed().as_secs_f64());
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("basis integrity", &criterion_1),
        ("kinematics", &|| criterion_2(&runs)),
        ("cancellation", &|| criterion_3(&runs)),
        ("energy identity", &|| criterion_4(&runs)),
        ("RHS oracle", &criterion_5),
        ("L^q preservation", &|| criterion_6(&runs)),
        ("nonlinear Grönwall", &criterion_7),
        ("periodic solver", &criterion_8),
        ("pressure", &|| criterion_9(&runs)),
        ("A/B inequality", &|| criterion_10(&runs)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {name:<20} {}  {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of 10 criteria passed in {:.1}s", 10 - failed, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
