//! Spectral bases on Ω = (−h, h) × (0, Lx) × (0, Ly).
//!
//! Three families of functions are built here:
//!
//! * horizontal scalar modes `s_mn(x, y) = (2/√(Lx Ly)) sin(mπx/Lx) sin(nπy/Ly)`,
//!   eigenfunctions of the Dirichlet Laplacian with eigenvalue
//!   `μ_mn = π²(m²/Lx² + n²/Ly²)`;
//! * vertical modes `c_0 = 1/√(2h)` and `c_k = cos(kπ(z+h)/(2h))/√h`,
//!   eigenfunctions of the Neumann Laplacian on (−h, h) with eigenvalue
//!   `k²π²/(4h²)`;
//! * barotropic solenoidal modes `φ̃_j`, linear combinations of
//!   `∇⊥(C_a(x) C_b(y))` with clamped beam functions `C_a`.
//!
//! Fluctuation modes (k ≥ 1) are `s_mn c_k e_c` for both components `c`;
//! the depth-independent modes are `φ̃_j c_0`. All of them are orthonormal in
//! the discrete `L²(Ω)` inner product of the tensor Gauss–Legendre grid.
//!
//! The barotropic family is orthonormalized by modified Gram–Schmidt and then
//! rotated onto the eigenvectors of its Galerkin stiffness matrix
//! `⟨∇φ̃_i, ∇φ̃_j⟩`, so that the horizontal Laplacian is diagonal on every
//! basis function.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::beam::BeamMode;
use crate::error::{Error, Result};
use crate::field::{GridVectorField, RawField, VelocityField};
use crate::quadrature::GaussRule;

/// Modes whose norm after Gram–Schmidt falls below this are dropped.
pub const ORTHONORMALIZATION_DROP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub h: f64,
    pub lx: f64,
    pub ly: f64,
    pub mx: usize,
    pub my: usize,
    pub k: usize,
    pub nq_x: usize,
    pub nq_y: usize,
    pub nq_z: usize,
}

impl DomainSpec {
    /// Domain with default quadrature resolution for the given mode counts.
    pub fn new(h: f64, lx: f64, ly: f64, mx: usize, my: usize, k: usize) -> Self {
        Self {
            h,
            lx,
            ly,
            mx,
            my,
            k,
            nq_x: Self::default_nodes(mx),
            nq_y: Self::default_nodes(my),
            nq_z: Self::default_nodes(k),
        }
    }

    /// Unit square, h = 1.
    pub fn unit(mx: usize, my: usize, k: usize) -> Self {
        Self::new(1.0, 1.0, 1.0, mx, my, k)
    }

    /// Minimum node count per direction: the 3/2 rule for quadratic
    /// nonlinearities plus two.
    pub fn dealias_floor(modes: usize) -> usize {
        (3 * modes).div_ceil(2) + 2
    }

    /// Default node count per direction. Integrates every `cos(pπx)` and
    /// `sin(pπx)` with `p ≤ 3(modes + 1)` (triple products of the sine and
    /// beam families) to round-off.
    pub fn default_nodes(modes: usize) -> usize {
        (2.75 * (modes + 1) as f64).ceil() as usize + 16
    }

    pub fn horizontal_modes(&self) -> usize {
        self.mx * self.my
    }

    /// `(component, vertical mode, horizontal mode)`.
    pub fn coeff_shape(&self) -> (usize, usize, usize) {
        (2, self.k + 1, self.mx * self.my)
    }

    pub fn grid_shape(&self) -> (usize, usize, usize) {
        (self.nq_x, self.nq_y, self.nq_z)
    }

    pub fn volume(&self) -> f64 {
        2.0 * self.h * self.lx * self.ly
    }

    /// Every violated constraint, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in [("h", self.h), ("Lx", self.lx), ("Ly", self.ly)] {
            if !(value.is_finite() && value > 0.0) {
                out.push(format!("{name} must be positive and finite (got {value})"));
            }
        }
        for (name, value) in [("Mx", self.mx), ("My", self.my), ("K", self.k)] {
            if value < 1 {
                out.push(format!("{name} must be at least 1 (got {value})"));
            }
        }
        for (name, nodes, modes, mode_name) in [
            ("Nq_x", self.nq_x, self.mx, "Mx"),
            ("Nq_y", self.nq_y, self.my, "My"),
            ("Nq_z", self.nq_z, self.k, "K"),
        ] {
            let floor = Self::dealias_floor(modes);
            if nodes < floor {
                out.push(format!(
                    "{name} = {nodes} violates the dealiasing rule {name} >= ceil(3/2 * {mode_name}) + 2 = {floor}"
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDomain(v))
        }
    }
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self::unit(8, 8, 8)
    }
}

/// One-dimensional tables for a horizontal direction: rows are points,
/// columns are modes.
#[derive(Debug, Clone)]
pub struct HorizontalTables {
    /// `∂^d s_m` for d = 0, 1, 2.
    pub sine: [Array2<f64>; 3],
    /// `∂^d C_a` for d = 0..=3.
    pub beam: [Array2<f64>; 4],
}

impl HorizontalTables {
    fn new(points: &[f64], len: f64, modes: &[BeamMode]) -> Self {
        let m = modes.len();
        let norm = (2.0 / len).sqrt();
        let sine = std::array::from_fn(|d| {
            Array2::from_shape_fn((points.len(), m), |(i, j)| {
                let kx = (j + 1) as f64 * PI / len;
                let arg = kx * points[i];
                norm * match d {
                    0 => arg.sin(),
                    1 => kx * arg.cos(),
                    _ => -kx * kx * arg.sin(),
                }
            })
        });
        let beam = std::array::from_fn(|d| {
            Array2::from_shape_fn((points.len(), m), |(i, j)| {
                modes[j].eval_on(d as u32, points[i], len)
            })
        });
        Self { sine, beam }
    }
}

/// Vertical tables, columns k = 0..=K.
#[derive(Debug, Clone)]
pub struct VerticalTables {
    pub cos: Array2<f64>,
    /// `∂_z c_k`.
    pub dcos: Array2<f64>,
    /// `∫_{−h}^{z} c_k dξ`.
    pub icos: Array2<f64>,
}

impl VerticalTables {
    fn new(points: &[f64], h: f64, k: usize) -> Self {
        let shape = (points.len(), k + 1);
        let c0 = 1.0 / (2.0 * h).sqrt();
        let ck = 1.0 / h.sqrt();
        let freq = |kk: usize| kk as f64 * PI / (2.0 * h);
        let cos = Array2::from_shape_fn(shape, |(i, kk)| {
            if kk == 0 {
                c0
            } else {
                ck * (freq(kk) * (points[i] + h)).cos()
            }
        });
        let dcos = Array2::from_shape_fn(shape, |(i, kk)| {
            if kk == 0 {
                0.0
            } else {
                -ck * freq(kk) * (freq(kk) * (points[i] + h)).sin()
            }
        });
        let icos = Array2::from_shape_fn(shape, |(i, kk)| {
            if kk == 0 {
                c0 * (points[i] + h)
            } else {
                ck / freq(kk) * (freq(kk) * (points[i] + h)).sin()
            }
        });
        Self { cos, dcos, icos }
    }
}

/// Which vertical profile to apply when synthesizing grid values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalOp {
    Value,
    Derivative,
    /// Antiderivative from the bottom, `∫_{−h}^{z}`.
    Integral,
}

/// Basis functions sampled on a tensor grid of points.
#[derive(Debug, Clone)]
pub struct GridTables {
    pub x: HorizontalTables,
    pub y: HorizontalTables,
    pub z: VerticalTables,
}

impl GridTables {
    pub fn shape(&self) -> (usize, usize, usize) {
        (
            self.x.sine[0].nrows(),
            self.y.sine[0].nrows(),
            self.z.cos.nrows(),
        )
    }
}

/// Residuals and ranges reported by the `basis` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct BasisReport {
    pub horizontal_modes: usize,
    pub vertical_modes: usize,
    pub barotropic_modes: usize,
    pub barotropic_dropped: usize,
    pub total_coefficients: usize,
    pub grid: [usize; 3],
    pub scalar_eigenvalue_range: [f64; 2],
    pub vertical_eigenvalue_range: [f64; 2],
    pub barotropic_eigenvalue_range: [f64; 2],
    pub scalar_gram_residual: f64,
    pub vertical_gram_residual: f64,
    pub barotropic_gram_residual: f64,
    pub barotropic_divergence_residual: f64,
    pub barotropic_trace_residual: f64,
    pub poincare_c1: f64,
    pub poincare_c2: f64,
}

#[derive(Debug)]
pub struct SpectralBasis {
    spec: DomainSpec,
    rules: [GaussRule; 3],
    tables: GridTables,
    beams_x: Vec<BeamMode>,
    beams_y: Vec<BeamMode>,
    weights: Array3<f64>,
    weights_xy: Array2<f64>,
    scalar_mu: Array1<f64>,
    vertical_mu: Array1<f64>,
    /// Rows: barotropic modes in generator coordinates `(a, b) ↦ a·My + b`.
    baro_coeffs: Array2<f64>,
    baro_mu: Array1<f64>,
    baro_lap_gram: Array2<f64>,
    /// `⟨φ̃_j, s_i e_c⟩_G`, columns `c·MxMy + i`.
    baro_overlap: Array2<f64>,
    diffusion: Array3<f64>,
    dropped: Vec<usize>,
    report: BasisReport,
}

/// Builds the basis; rejects specs whose quadrature cannot resolve the modes.
pub fn build_basis(spec: DomainSpec) -> Result<Arc<SpectralBasis>> {
    SpectralBasis::new(spec).map(Arc::new)
}

/// Scalar-mode Poincaré constants `(C1, C2)`.
pub fn poincare_constants(basis: &SpectralBasis) -> (f64, f64) {
    basis.poincare_constants()
}

impl SpectralBasis {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        spec.validate()?;
        let rules = [
            GaussRule::new(spec.nq_x, 0.0, spec.lx),
            GaussRule::new(spec.nq_y, 0.0, spec.ly),
            GaussRule::new(spec.nq_z, -spec.h, spec.h),
        ];
        let beams_x: Vec<_> = (1..=spec.mx).map(BeamMode::new).collect();
        let beams_y: Vec<_> = (1..=spec.my).map(BeamMode::new).collect();
        let tables = make_tables(&spec, &beams_x, &beams_y, &rules[0].nodes, &rules[1].nodes, &rules[2].nodes);

        let wx = Array1::from(rules[0].weights.clone());
        let wy = Array1::from(rules[1].weights.clone());
        let wz = Array1::from(rules[2].weights.clone());
        let weights_xy = Array2::from_shape_fn((spec.nq_x, spec.nq_y), |(i, j)| wx[i] * wy[j]);
        let weights = Array3::from_shape_fn(spec.grid_shape(), |(i, j, k)| weights_xy[[i, j]] * wz[k]);

        let (mx, my) = (spec.mx, spec.my);
        let scalar_mu = Array1::from_shape_fn(mx * my, |i| {
            let (m, n) = ((i / my + 1) as f64, (i % my + 1) as f64);
            PI * PI * (m * m / (spec.lx * spec.lx) + n * n / (spec.ly * spec.ly))
        });
        let vertical_mu = Array1::from_shape_fn(spec.k + 1, |k| {
            let k = k as f64;
            k * k * PI * PI / (4.0 * spec.h * spec.h)
        });

        // moments of the beam tables: mom[d][e] = Σ_q w_q C_a^{(d)} C_b^{(e)}
        let moments = |t: &HorizontalTables, w: &Array1<f64>| -> Vec<Vec<Array2<f64>>> {
            (0..4)
                .map(|d| {
                    let weighted = &t.beam[d] * &w.view().insert_axis(Axis(1));
                    (0..4).map(|e| weighted.t().dot(&t.beam[e])).collect()
                })
                .collect()
        };
        let ax = moments(&tables.x, &wx);
        let ay = moments(&tables.y, &wy);
        let n_gen = mx * my;
        let kron_sum = |terms: &[(&Array2<f64>, &Array2<f64>, f64)]| {
            Array2::from_shape_fn((n_gen, n_gen), |(p, q)| {
                let (a, b) = (p / my, p % my);
                let (a2, b2) = (q / my, q % my);
                terms
                    .iter()
                    .map(|(x, y, c)| c * x[[a, a2]] * y[[b, b2]])
                    .sum()
            })
        };
        // generators: g = (−C_a C_b', C_a' C_b)
        let gram = kron_sum(&[(&ax[0][0], &ay[1][1], 1.0), (&ax[1][1], &ay[0][0], 1.0)]);
        let stiffness = kron_sum(&[
            (&ax[1][1], &ay[1][1], 2.0),
            (&ax[0][0], &ay[2][2], 1.0),
            (&ax[2][2], &ay[0][0], 1.0),
        ]);
        // Δg = (−(C_a'' C_b' + C_a C_b'''), C_a''' C_b + C_a' C_b'')
        let lap_gram = kron_sum(&[
            (&ax[2][2], &ay[1][1], 1.0),
            (&ax[2][0], &ay[1][3], 1.0),
            (&ax[0][2], &ay[3][1], 1.0),
            (&ax[0][0], &ay[3][3], 1.0),
            (&ax[3][3], &ay[0][0], 1.0),
            (&ax[3][1], &ay[0][2], 1.0),
            (&ax[1][3], &ay[2][0], 1.0),
            (&ax[1][1], &ay[2][2], 1.0),
        ]);

        let (ortho, dropped) = orthonormalize(&gram, ORTHONORMALIZATION_DROP_TOL);
        if !dropped.is_empty() {
            log::warn!(
                "dropped {} nearly dependent barotropic generators: {:?}",
                dropped.len(),
                dropped
            );
        }
        let j = ortho.nrows();
        let reduced = ortho.dot(&stiffness).dot(&ortho.t());
        let eig = SymmetricEigen::new(DMatrix::from_fn(j, j, |r, c| {
            0.5 * (reduced[[r, c]] + reduced[[c, r]])
        }));
        let mut order: Vec<usize> = (0..j).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
        let rotation = Array2::from_shape_fn((j, j), |(r, c)| eig.eigenvectors[(c, order[r])]);
        let baro_coeffs = rotation.dot(&ortho);
        let baro_mu = Array1::from_shape_fn(j, |r| eig.eigenvalues[order[r]]);
        let baro_lap_gram = baro_coeffs.dot(&lap_gram).dot(&baro_coeffs.t());

        // ⟨g_ab, s_mn e_1⟩ = −P0x[a,m] P1y[b,n], ⟨g_ab, s_mn e_2⟩ = P1x[a,m] P0y[b,n]
        let proj = |t: &HorizontalTables, w: &Array1<f64>, d: usize| {
            let weighted = &t.beam[d] * &w.view().insert_axis(Axis(1));
            weighted.t().dot(&t.sine[0])
        };
        let (p0x, p1x) = (proj(&tables.x, &wx, 0), proj(&tables.x, &wx, 1));
        let (p0y, p1y) = (proj(&tables.y, &wy, 0), proj(&tables.y, &wy, 1));
        let gen_overlap = Array2::from_shape_fn((n_gen, 2 * n_gen), |(g, col)| {
            let (a, b) = (g / my, g % my);
            let (c, i) = (col / n_gen, col % n_gen);
            let (m, n) = (i / my, i % my);
            if c == 0 {
                -p0x[[a, m]] * p1y[[b, n]]
            } else {
                p1x[[a, m]] * p0y[[b, n]]
            }
        });
        let baro_overlap = baro_coeffs.dot(&gen_overlap);
        let diffusion = Array3::from_shape_fn(spec.coeff_shape(), |(c, k, i)| match k {
            0 if c == 0 && i < j => baro_mu[i],
            0 => 0.0,
            _ => scalar_mu[i],
        });

        let mut basis = Self {
            spec,
            rules,
            tables,
            beams_x,
            beams_y,
            weights,
            weights_xy,
            scalar_mu,
            vertical_mu,
            baro_coeffs,
            baro_mu,
            baro_lap_gram,
            baro_overlap,
            diffusion,
            dropped,
            report: BasisReport {
                horizontal_modes: mx * my,
                vertical_modes: spec.k + 1,
                barotropic_modes: j,
                barotropic_dropped: 0,
                total_coefficients: 0,
                grid: [spec.nq_x, spec.nq_y, spec.nq_z],
                scalar_eigenvalue_range: [0.0; 2],
                vertical_eigenvalue_range: [0.0; 2],
                barotropic_eigenvalue_range: [0.0; 2],
                scalar_gram_residual: 0.0,
                vertical_gram_residual: 0.0,
                barotropic_gram_residual: 0.0,
                barotropic_divergence_residual: 0.0,
                barotropic_trace_residual: 0.0,
                poincare_c1: 0.0,
                poincare_c2: 0.0,
            },
        };
        basis.report = basis.compute_report(&gram);
        Ok(basis)
    }

    fn compute_report(&self, generator_gram: &Array2<f64>) -> BasisReport {
        let spec = &self.spec;
        let gram_1d = |t: &Array2<f64>, w: &[f64]| {
            let weighted = t * &Array1::from(w.to_vec()).insert_axis(Axis(1));
            weighted.t().dot(t)
        };
        let gx = gram_1d(&self.tables.x.sine[0], &self.rules[0].weights);
        let gy = gram_1d(&self.tables.y.sine[0], &self.rules[1].weights);
        let mut scalar_res: f64 = 0.0;
        for p in 0..spec.mx * spec.my {
            for q in 0..spec.mx * spec.my {
                let g = gx[[p / spec.my, q / spec.my]] * gy[[p % spec.my, q % spec.my]];
                let want = if p == q { 1.0 } else { 0.0 };
                scalar_res = scalar_res.max((g - want).abs());
            }
        }
        let gz = gram_1d(&self.tables.z.cos, &self.rules[2].weights);
        let vertical_res = max_identity_deviation(&gz);
        let baro_gram = self.baro_coeffs.dot(generator_gram).dot(&self.baro_coeffs.t());
        let baro_res = max_identity_deviation(&baro_gram);

        let mut div_res: f64 = 0.0;
        for j in 0..self.barotropic_count() {
            let psi = self.stream_function(&Array1::from_shape_fn(self.barotropic_count(), |r| {
                if r == j {
                    1.0
                } else {
                    0.0
                }
            }));
            let d1 = self.stream_component(&psi, &self.tables, 0, 1, 0);
            let d2 = self.stream_component(&psi, &self.tables, 1, 0, 1);
            div_res = div_res.max((&d1 + &d2).iter().fold(0.0, |m, v| m.max(v.abs())));
        }

        let minmax = |v: &Array1<f64>| {
            [
                v.iter().cloned().fold(f64::INFINITY, f64::min),
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ]
        };
        let (c1, c2) = self.poincare_constants();
        BasisReport {
            horizontal_modes: spec.mx * spec.my,
            vertical_modes: spec.k + 1,
            barotropic_modes: self.barotropic_count(),
            barotropic_dropped: self.dropped.len(),
            total_coefficients: self.active_coefficients(),
            grid: [spec.nq_x, spec.nq_y, spec.nq_z],
            scalar_eigenvalue_range: minmax(&self.scalar_mu),
            vertical_eigenvalue_range: minmax(&self.vertical_mu),
            barotropic_eigenvalue_range: minmax(&self.baro_mu),
            scalar_gram_residual: scalar_res,
            vertical_gram_residual: vertical_res,
            barotropic_gram_residual: baro_res,
            barotropic_divergence_residual: div_res,
            barotropic_trace_residual: self.barotropic_trace_residual(),
            poincare_c1: c1,
            poincare_c2: c2,
        }
    }

    /// Largest `L²(∂G)` trace norm over the barotropic modes.
    pub fn barotropic_trace_residual(&self) -> f64 {
        let (lx, ly) = (self.spec.lx, self.spec.ly);
        let xs = &self.rules[0];
        let ys = &self.rules[1];
        let side_x = self.tables_at(&[0.0, lx], &ys.nodes, &[0.0]);
        let side_y = self.tables_at(&xs.nodes, &[0.0, ly], &[0.0]);
        let mut worst: f64 = 0.0;
        for j in 0..self.barotropic_count() {
            let mut a = Array1::zeros(self.barotropic_count());
            a[j] = 1.0;
            let psi = self.stream_function(&a);
            let mut total = 0.0;
            for c in 0..2 {
                let vx = self.stream_component(&psi, &side_x, c, 0, 0);
                for ((i, q), v) in vx.indexed_iter() {
                    let _ = i;
                    total += ys.weights[q] * v * v;
                }
                let vy = self.stream_component(&psi, &side_y, c, 0, 0);
                for ((p, _), v) in vy.indexed_iter() {
                    total += xs.weights[p] * v * v;
                }
            }
            worst = worst.max(total.sqrt());
        }
        worst
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn report(&self) -> &BasisReport {
        &self.report
    }

    pub fn tables(&self) -> &GridTables {
        &self.tables
    }

    pub fn rules(&self) -> &[GaussRule; 3] {
        &self.rules
    }

    /// Tensor-product quadrature weights on the 3D grid.
    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    pub fn weights_xy(&self) -> &Array2<f64> {
        &self.weights_xy
    }

    pub fn scalar_eigenvalues(&self) -> &Array1<f64> {
        &self.scalar_mu
    }

    pub fn vertical_eigenvalues(&self) -> &Array1<f64> {
        &self.vertical_mu
    }

    /// Galerkin Stokes eigenvalues of the barotropic modes, ascending.
    pub fn barotropic_eigenvalues(&self) -> &Array1<f64> {
        &self.baro_mu
    }

    pub fn barotropic_count(&self) -> usize {
        self.baro_coeffs.nrows()
    }

    /// Generator indices removed by the orthonormalization.
    pub fn dropped_generators(&self) -> &[usize] {
        &self.dropped
    }

    /// `⟨Δ_H φ̃_i, Δ_H φ̃_j⟩_G`.
    pub fn barotropic_laplacian_gram(&self) -> &Array2<f64> {
        &self.baro_lap_gram
    }

    /// Rows are barotropic modes expressed in the generators
    /// `∇⊥(C_a C_b)`, index `a·My + b`.
    pub fn barotropic_generator_coeffs(&self) -> &Array2<f64> {
        &self.baro_coeffs
    }

    pub fn beam_modes(&self) -> (&[BeamMode], &[BeamMode]) {
        (&self.beams_x, &self.beams_y)
    }

    pub fn active_coefficients(&self) -> usize {
        self.barotropic_count() + 2 * self.spec.k * self.spec.mx * self.spec.my
    }

    /// Whether a slot of the coefficient tensor carries a basis function.
    pub fn is_active(&self, c: usize, k: usize, i: usize) -> bool {
        if k == 0 {
            c == 0 && i < self.barotropic_count()
        } else {
            true
        }
    }

    /// `−Δ_H` eigenvalue attached to each coefficient slot (0 on inactive slots).
    pub fn diffusion_eigenvalues(&self) -> &Array3<f64> {
        &self.diffusion
    }

    pub fn poincare_constants(&self) -> (f64, f64) {
        let mu_min = self
            .scalar_mu
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let c1 = self
            .scalar_mu
            .iter()
            .map(|mu| 1.0 / mu.sqrt())
            .fold(0.0, f64::max);
        // ‖∇φ‖/‖Δφ‖ = √μ/μ for an eigenfunction
        let c2 = self
            .scalar_mu
            .iter()
            .map(|mu| mu.sqrt() / mu)
            .fold(0.0, f64::max);
        debug_assert!((c1 - 1.0 / mu_min.sqrt()).abs() < 1e-15);
        (c1, c2)
    }

    /// Basis functions sampled on an arbitrary tensor grid.
    pub fn tables_at(&self, xs: &[f64], ys: &[f64], zs: &[f64]) -> GridTables {
        make_tables(&self.spec, &self.beams_x, &self.beams_y, xs, ys, zs)
    }

    /// Generator-space stream function `ψ[a, b]` of a barotropic
    /// coefficient vector.
    pub fn stream_function(&self, baro: &Array1<f64>) -> Array2<f64> {
        let flat = self.baro_coeffs.t().dot(baro);
        flat.into_shape_with_order((self.spec.mx, self.spec.my))
            .expect("generator count is Mx·My")
    }

    /// 2D values of `∂_x^px ∂_y^py` of component `c` of `∇⊥ψ`.
    pub fn stream_component(
        &self,
        psi: &Array2<f64>,
        tables: &GridTables,
        c: usize,
        px: usize,
        py: usize,
    ) -> Array2<f64> {
        let (bx, by) = (&tables.x.beam, &tables.y.beam);
        if c == 0 {
            -bx[px].dot(psi).dot(&by[py + 1].t())
        } else {
            bx[px + 1].dot(psi).dot(&by[py].t())
        }
    }

    /// Grid values of `∂_x^px ∂_y^py (vertical op)` applied to component `c`
    /// of the field with coefficient tensor `coeffs`.
    pub fn synthesize(
        &self,
        coeffs: &Array3<f64>,
        tables: &GridTables,
        c: usize,
        px: usize,
        py: usize,
        vert: VerticalOp,
    ) -> Array3<f64> {
        let (mx, my, k) = (self.spec.mx, self.spec.my, self.spec.k);
        let zt = match vert {
            VerticalOp::Value => &tables.z.cos,
            VerticalOp::Derivative => &tables.z.dcos,
            VerticalOp::Integral => &tables.z.icos,
        };
        let fluct = coeffs
            .slice(s![c, 1.., ..])
            .to_shape((k, mx, my))
            .expect("contiguous coefficient block")
            .to_owned();
        let mut out = eval_sine_tensor(
            fluct.view(),
            &tables.x.sine[px],
            &tables.y.sine[py],
            zt.slice(s![.., 1..]),
        );
        let baro = coeffs.slice(s![0, 0, ..self.barotropic_count()]).to_owned();
        if vert != VerticalOp::Derivative && baro.iter().any(|&a| a != 0.0) {
            let psi = self.stream_function(&baro);
            let plane = self.stream_component(&psi, tables, c, px, py);
            let col = zt.column(0);
            Zip::indexed(&mut out).for_each(|(i, j, q), v| *v += plane[[i, j]] * col[q]);
        }
        out
    }

    /// Grid values of a raw (non-solenoidal) sine–cosine expansion.
    pub fn synthesize_raw(
        &self,
        raw: &Array3<f64>,
        tables: &GridTables,
        c: usize,
        px: usize,
        py: usize,
        vert: VerticalOp,
    ) -> Array3<f64> {
        let (mx, my, k) = (self.spec.mx, self.spec.my, self.spec.k);
        let zt = match vert {
            VerticalOp::Value => &tables.z.cos,
            VerticalOp::Derivative => &tables.z.dcos,
            VerticalOp::Integral => &tables.z.icos,
        };
        let block = raw
            .slice(s![c, .., ..])
            .to_shape((k + 1, mx, my))
            .expect("contiguous coefficient block")
            .to_owned();
        eval_sine_tensor(block.view(), &tables.x.sine[px], &tables.y.sine[py], zt.view())
    }

    /// Discrete `L²(Ω)` projection of grid values onto the Galerkin span.
    /// Both grids must live on this basis' quadrature nodes.
    pub fn analyze(&self, grid: [&Array3<f64>; 2]) -> Array3<f64> {
        let (mx, my, k) = (self.spec.mx, self.spec.my, self.spec.k);
        let t = &self.tables;
        let mut coeffs = Array3::zeros(self.spec.coeff_shape());
        let mut mean = [Array2::zeros((self.spec.nq_x, self.spec.nq_y)), Array2::zeros((self.spec.nq_x, self.spec.nq_y))];
        let c0 = t.z.cos[[0, 0]];
        for c in 0..2 {
            let weighted = grid[c] * &self.weights;
            let block = project_sine_tensor(
                &weighted,
                &t.x.sine[0],
                &t.y.sine[0],
                t.z.cos.slice(s![.., 1..]),
            );
            coeffs
                .slice_mut(s![c, 1.., ..])
                .assign(&block.into_shape_with_order((k, mx * my)).expect("block shape"));
            mean[c] = weighted.sum_axis(Axis(2)) * c0;
        }
        // ⟨ū, g_ab⟩ = −B0x^T ū1 B1y + B1x^T ū2 B0y
        let g = -t.x.beam[0].t().dot(&mean[0]).dot(&t.y.beam[1])
            + t.x.beam[1].t().dot(&mean[1]).dot(&t.y.beam[0]);
        let flat = g.into_shape_with_order(mx * my).expect("generator shape");
        let baro = self.baro_coeffs.dot(&flat);
        coeffs
            .slice_mut(s![0, 0, ..self.barotropic_count()])
            .assign(&baro);
        coeffs
    }

    /// Hydrostatic Leray projection of a raw expansion: fluctuation modes
    /// pass through, the depth-average block is projected onto the
    /// solenoidal span.
    pub fn hydrostatic_project(self: &Arc<Self>, raw: &RawField) -> Result<VelocityField> {
        raw.check_shape(&self.spec)?;
        let mut coeffs = Array3::zeros(self.spec.coeff_shape());
        coeffs
            .slice_mut(s![.., 1.., ..])
            .assign(&raw.coeffs().slice(s![.., 1.., ..]));
        let n = self.spec.mx * self.spec.my;
        let flat = Array1::from_shape_fn(2 * n, |col| raw.coeffs()[[col / n, 0, col % n]]);
        let baro = self.baro_overlap.dot(&flat);
        coeffs
            .slice_mut(s![0, 0, ..self.barotropic_count()])
            .assign(&baro);
        VelocityField::from_coeffs(self.clone(), coeffs)
    }

    /// Hydrostatic Leray projection of arbitrary grid values.
    pub fn hydrostatic_project_grid(self: &Arc<Self>, grid: &GridVectorField) -> Result<VelocityField> {
        grid.check_shape(&self.spec)?;
        let coeffs = self.analyze([&grid.components[0], &grid.components[1]]);
        VelocityField::from_coeffs(self.clone(), coeffs)
    }

    /// Coordinates of the quadrature grid.
    pub fn nodes(&self) -> (&[f64], &[f64], &[f64]) {
        (
            &self.rules[0].nodes,
            &self.rules[1].nodes,
            &self.rules[2].nodes,
        )
    }

    /// Samples `f(i, j, q) -> [v1, v2]` by grid index.
    pub fn sample_indexed<F: Fn(usize, usize, usize) -> [f64; 2]>(&self, f: F) -> GridVectorField {
        let shape = self.spec.grid_shape();
        let mut a = Array3::zeros(shape);
        let mut b = Array3::zeros(shape);
        Zip::indexed(&mut a).and(&mut b).for_each(|(i, j, q), a, b| {
            [*a, *b] = f(i, j, q);
        });
        GridVectorField {
            components: [a, b],
        }
    }

    /// Samples `f(x, y, z) -> [v1, v2]` on the quadrature grid.
    pub fn sample<F: Fn(f64, f64, f64) -> [f64; 2]>(&self, f: F) -> GridVectorField {
        let (xs, ys, zs) = self.nodes();
        let shape = self.spec.grid_shape();
        let mut a = Array3::zeros(shape);
        let mut b = Array3::zeros(shape);
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                for (q, &z) in zs.iter().enumerate() {
                    let [u, v] = f(x, y, z);
                    a[[i, j, q]] = u;
                    b[[i, j, q]] = v;
                }
            }
        }
        GridVectorField {
            components: [a, b],
        }
    }
}

fn make_tables(
    spec: &DomainSpec,
    beams_x: &[BeamMode],
    beams_y: &[BeamMode],
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
) -> GridTables {
    GridTables {
        x: HorizontalTables::new(xs, spec.lx, beams_x),
        y: HorizontalTables::new(ys, spec.ly, beams_y),
        z: VerticalTables::new(zs, spec.h, spec.k),
    }
}

fn max_identity_deviation(m: &Array2<f64>) -> f64 {
    m.indexed_iter().fold(0.0, |acc: f64, ((i, j), v)| {
        let want = if i == j { 1.0 } else { 0.0 };
        acc.max((v - want).abs())
    })
}

/// Modified Gram–Schmidt (two passes) of the generators whose Gram matrix
/// is `gram`. Returns the orthonormal combinations as rows, plus the indices
/// of generators whose residual norm fell below `drop_tol`.
pub fn orthonormalize(gram: &Array2<f64>, drop_tol: f64) -> (Array2<f64>, Vec<usize>) {
    let n = gram.nrows();
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut gram_basis: Vec<Array1<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..n {
        let diag = gram[[i, i]];
        if !(diag > 0.0) {
            dropped.push(i);
            continue;
        }
        let mut v = Array1::zeros(n);
        v[i] = 1.0 / diag.sqrt();
        let mut gv = gram.column(i).to_owned() / diag.sqrt();
        for _pass in 0..2 {
            for (q, gq) in basis.iter().zip(&gram_basis) {
                let coef = q.dot(&gv);
                v.scaled_add(-coef, q);
                gv.scaled_add(-coef, gq);
            }
        }
        let norm = v.dot(&gv).max(0.0).sqrt();
        if norm < drop_tol {
            dropped.push(i);
            continue;
        }
        basis.push(v / norm);
        gram_basis.push(gv / norm);
    }
    let mut out = Array2::zeros((basis.len(), n));
    for (r, q) in basis.iter().enumerate() {
        out.row_mut(r).assign(q);
    }
    (out, dropped)
}

/// `u[x, y, z] = Σ c[k, m, n] X[x, m] Y[y, n] Z[z, k]` by sum factorization.
pub fn eval_sine_tensor(
    coef: ArrayView3<f64>,
    tx: &Array2<f64>,
    ty: &Array2<f64>,
    tz: ArrayView2<f64>,
) -> Array3<f64> {
    let (nk, mx, my) = coef.dim();
    let (nx, ny, nz) = (tx.nrows(), ty.nrows(), tz.nrows());
    let flat = coef.to_shape((nk * mx, my)).expect("contiguous");
    let t1 = flat.dot(&ty.t()); // (k·m, y)
    let t1 = t1.into_shape_with_order((nk, mx, ny)).expect("shape");
    let mut t2 = Array3::zeros((nk, nx, ny));
    for k in 0..nk {
        let prod = tx.dot(&t1.index_axis(Axis(0), k));
        t2.index_axis_mut(Axis(0), k).assign(&prod);
    }
    let t2 = t2.into_shape_with_order((nk, nx * ny)).expect("shape");
    let mut u = Array2::zeros((nx * ny, nz));
    general_mat_mul(1.0, &t2.t(), &tz.t(), 0.0, &mut u);
    u.into_shape_with_order((nx, ny, nz)).expect("shape")
}

/// Adjoint of [`eval_sine_tensor`]: `c[k, m, n] = Σ u[x, y, z] X[x, m] Y[y, n] Z[z, k]`.
/// Quadrature weights must already be folded into `u`.
pub fn project_sine_tensor(
    u: &Array3<f64>,
    tx: &Array2<f64>,
    ty: &Array2<f64>,
    tz: ArrayView2<f64>,
) -> Array3<f64> {
    let (nx, ny, nz) = u.dim();
    let (mx, my, nk) = (tx.ncols(), ty.ncols(), tz.ncols());
    let flat = u.to_shape((nx * ny, nz)).expect("contiguous");
    let mut s1 = Array2::zeros((nk, nx * ny));
    general_mat_mul(1.0, &tz.t(), &flat.t(), 0.0, &mut s1);
    let s1 = s1.into_shape_with_order((nk, nx, ny)).expect("shape");
    let mut s2 = Array3::zeros((nk, mx, ny));
    for k in 0..nk {
        let prod = tx.t().dot(&s1.index_axis(Axis(0), k));
        s2.index_axis_mut(Axis(0), k).assign(&prod);
    }
    let s2 = s2.into_shape_with_order((nk * mx, ny)).expect("shape");
    s2.dot(ty)
        .into_shape_with_order((nk, mx, my))
        .expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dealiasing_floor_and_defaults() {
        assert_eq!(DomainSpec::dealias_floor(8), 14);
        assert_eq!(DomainSpec::dealias_floor(3), 7);
        for m in 1..30 {
            assert!(DomainSpec::default_nodes(m) >= DomainSpec::dealias_floor(m));
        }
    }

    #[test]
    fn violations_are_all_reported() {
        let mut spec = DomainSpec::unit(8, 8, 8);
        spec.h = -1.0;
        spec.nq_x = 10;
        spec.nq_z = 3;
        let v = spec.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v[1].contains("dealiasing rule"));
        assert!(matches!(SpectralBasis::new(spec), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn single_mode_unit_square() {
        let basis = build_basis(DomainSpec::unit(1, 1, 2)).unwrap();
        let mu = basis.scalar_eigenvalues()[0];
        assert!((mu - 2.0 * PI * PI).abs() < 1e-12);
        // s_11 = 2 sin(πx) sin(πy)
        let (xs, ys, _) = basis.nodes();
        let t = basis.tables();
        let v = t.x.sine[0][[3, 0]] * t.y.sine[0][[5, 0]];
        let want = 2.0 * (PI * xs[3]).sin() * (PI * ys[5]).sin();
        assert!((v - want).abs() < 1e-14);
        assert!((basis.vertical_eigenvalues()[2] - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn gram_residuals_are_small() {
        let basis = build_basis(DomainSpec::unit(4, 4, 4)).unwrap();
        let r = basis.report();
        assert_eq!(r.barotropic_modes, 16);
        assert!(r.scalar_gram_residual < 1e-12, "{}", r.scalar_gram_residual);
        assert!(r.vertical_gram_residual < 1e-12);
        assert!(r.barotropic_gram_residual < 1e-10);
        assert!(r.barotropic_divergence_residual < 1e-10);
        assert!(r.barotropic_trace_residual < 1e-8);
    }

    #[test]
    fn gram_schmidt_drops_dependent_generators() {
        // third generator is the sum of the first two
        let v = Array2::from_shape_vec((3, 3), vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap();
        let gram = v.t().dot(&v);
        let (q, dropped) = orthonormalize(&gram, ORTHONORMALIZATION_DROP_TOL);
        assert_eq!(dropped, vec![2]);
        let g = q.dot(&gram).dot(&q.t());
        assert!(max_identity_deviation(&g) < 1e-14);
    }

    #[test]
    fn poincare_constants_lowest_mode() {
        for m in [1, 3, 6] {
            let basis = build_basis(DomainSpec::unit(m, m, 1)).unwrap();
            let (c1, c2) = poincare_constants(&basis);
            let want = 1.0 / (PI * 2f64.sqrt());
            assert!((c1 - want).abs() < 1e-14);
            assert!((c2 - want).abs() < 1e-14);
        }
    }

    #[test]
    fn barotropic_eigenvalues_bound_the_scalar_spectrum() {
        let basis = build_basis(DomainSpec::unit(6, 6, 1)).unwrap();
        let mu = basis.barotropic_eigenvalues();
        assert!(mu.windows(2).into_iter().all(|w| w[0] <= w[1]));
        // the first Stokes eigenvalue of the unit square is ≈ 52.34
        assert!((mu[0] - 52.3447).abs() < 0.05, "{}", mu[0]);
        assert!(mu[0] > 2.0 * PI * PI);
    }

    #[test]
    fn sum_factorization_matches_direct_sum() {
        let tx = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 1) * (j + 2)) as f64 * 0.1);
        let ty = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - j as f64).sin());
        let tz = Array2::from_shape_fn((6, 3), |(i, j)| (0.3 * (i * j) as f64).cos());
        let c = Array3::from_shape_fn((3, 3, 2), |(k, m, n)| (k + 2 * m + 3 * n) as f64 - 2.5);
        let u = eval_sine_tensor(c.view(), &tx, &ty, tz.view());
        for ((x, y, z), val) in u.indexed_iter() {
            let mut want = 0.0;
            for ((k, m, n), cc) in c.indexed_iter() {
                want += cc * tx[[x, m]] * ty[[y, n]] * tz[[z, k]];
            }
            assert!((val - want).abs() < 1e-12);
        }
        let back = project_sine_tensor(&u, &tx, &ty, tz.view());
        for ((k, m, n), val) in back.indexed_iter() {
            let mut want = 0.0;
            for ((x, y, z), uu) in u.indexed_iter() {
                want += uu * tx[[x, m]] * ty[[y, n]] * tz[[z, k]];
            }
            assert!((val - want).abs() < 1e-10);
        }
    }
}
