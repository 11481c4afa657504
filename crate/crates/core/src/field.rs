//! Velocity fields as Galerkin coefficients, plus grid-resident helpers.
//!
//! Coefficient tensors have shape `(2, K+1, Mx·My)`. Slot `[c, k, i]` with
//! `k ≥ 1` multiplies `s_i c_k e_c`; slot `[0, 0, j]` multiplies the
//! barotropic mode `φ̃_j c_0`. All other `k = 0` slots are inactive and
//! stay zero.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{DomainSpec, GridTables, SpectralBasis, VerticalOp};
use crate::error::{Error, Result};

/// Absolute tolerance on `|w(+h)|` for a field to count as projected.
pub const W_TOP_TOLERANCE: f64 = 1e-10;

fn check_coeff_shape(spec: &DomainSpec, found: &[usize]) -> Result<()> {
    let (a, b, c) = spec.coeff_shape();
    if found != [a, b, c] {
        return Err(Error::ShapeMismatch {
            expected: vec![a, b, c],
            found: found.to_vec(),
        });
    }
    Ok(())
}

/// Vector field in the full sine ⊗ cosine tensor basis, including a
/// non-solenoidal depth average. Input to the hydrostatic projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawField {
    coeffs: Array3<f64>,
}

impl RawField {
    pub fn new(spec: &DomainSpec, coeffs: Array3<f64>) -> Result<Self> {
        check_coeff_shape(spec, coeffs.shape())?;
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw field coefficients"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(spec: &DomainSpec) -> Self {
        Self {
            coeffs: Array3::zeros(spec.coeff_shape()),
        }
    }

    pub fn coeffs(&self) -> &Array3<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array3<f64> {
        &mut self.coeffs
    }

    pub fn check_shape(&self, spec: &DomainSpec) -> Result<()> {
        check_coeff_shape(spec, self.coeffs.shape())
    }

    /// Grid values of component `c` on the basis grid.
    pub fn to_grid(&self, basis: &SpectralBasis) -> GridVectorField {
        let t = basis.tables();
        GridVectorField {
            components: [0, 1].map(|c| basis.synthesize_raw(&self.coeffs, t, c, 0, 0, VerticalOp::Value)),
        }
    }
}

/// Two grid arrays `[v1, v2]` on a 3D tensor grid `[x][y][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    pub components: [Array3<f64>; 2],
}

impl GridVectorField {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            components: [Array3::zeros(shape), Array3::zeros(shape)],
        }
    }

    pub fn check_shape(&self, spec: &DomainSpec) -> Result<()> {
        let (a, b, c) = spec.grid_shape();
        for comp in &self.components {
            if comp.shape() != [a, b, c] {
                return Err(Error::ShapeMismatch {
                    expected: vec![a, b, c],
                    found: comp.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Array3<f64> {
        let mut out = self.components[0].clone();
        Zip::from(&mut out)
            .and(&self.components[1])
            .for_each(|a, &b| *a = a.hypot(b));
        out
    }

    /// `(∫|v|^q)^{1/q}` with the given quadrature weights; `q = ∞` gives the
    /// grid maximum.
    pub fn lq_norm(&self, weights: &Array3<f64>, q: f64) -> Result<f64> {
        lq_norm(&self.magnitude(), weights, q)
    }
}

/// `(Σ w |f|^q)^{1/q}`, or `max |f|` for infinite `q`.
pub fn lq_norm(values: &Array3<f64>, weights: &Array3<f64>, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "L^q norms need q >= 1 (got {q})"
        )));
    }
    if q.is_infinite() {
        return Ok(values.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    }
    let mut total = 0.0;
    Zip::from(values)
        .and(weights)
        .for_each(|v, w| total += w * v.abs().powf(q));
    Ok(total.powf(1.0 / q))
}

/// 2D vector field on the horizontal quadrature grid `[x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneVectorField {
    pub components: [Array2<f64>; 2],
}

impl PlaneVectorField {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            components: [Array2::zeros(shape), Array2::zeros(shape)],
        }
    }

    pub fn inner(&self, other: &Self, weights: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for c in 0..2 {
            Zip::from(&self.components[c])
                .and(&other.components[c])
                .and(weights)
                .for_each(|a, b, w| total += w * a * b);
        }
        total
    }

    pub fn l2_norm(&self, weights: &Array2<f64>) -> f64 {
        self.inner(self, weights).sqrt()
    }
}

/// Grid-resident scalar on the basis quadrature grid (w, work arrays).
#[derive(Debug, Clone)]
pub struct ScalarField {
    basis: Arc<SpectralBasis>,
    pub values: Array3<f64>,
}

impl ScalarField {
    pub fn new(basis: Arc<SpectralBasis>, values: Array3<f64>) -> Result<Self> {
        let (a, b, c) = basis.spec().grid_shape();
        if values.shape() != [a, b, c] {
            return Err(Error::ShapeMismatch {
                expected: vec![a, b, c],
                found: values.shape().to_vec(),
            });
        }
        Ok(Self { basis, values })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn l2_norm(&self) -> f64 {
        let mut total = 0.0;
        Zip::from(&self.values)
            .and(self.basis.weights())
            .for_each(|v, w| total += w * v * v);
        total.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Inner products and norms of [`VelocityField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    /// `L²(Ω)`.
    L2,
    /// `⟨u, v⟩ + ⟨∂_z u, ∂_z v⟩`.
    H,
    /// `⟨u, v⟩_H + ⟨∇_H u, ∇_H v⟩_H`.
    V,
    /// `⟨u, v⟩ + ⟨∇_H u, ∇_H v⟩ + ⟨∂_z u, ∂_z v⟩`.
    H1,
    /// `L^q(Ω)` of the pointwise magnitude, `q ≥ 1`; not an inner product.
    Lq(f64),
}

/// Horizontal derivatives of both components on the grid:
/// `grad[c][d] = ∂_d v_c` with `d = 0` for x.
#[derive(Debug, Clone)]
pub struct DiffOps {
    pub grad: [[Array3<f64>; 2]; 2],
    pub div: Array3<f64>,
    pub laplacian: [Array3<f64>; 2],
    pub dz: [Array3<f64>; 2],
}

#[derive(Debug, Clone)]
pub struct VelocityField {
    basis: Arc<SpectralBasis>,
    coeffs: Array3<f64>,
}

impl PartialEq for VelocityField {
    fn eq(&self, other: &Self) -> bool {
        self.same_basis(other) && self.coeffs == other.coeffs
    }
}

impl VelocityField {
    pub fn zeros(basis: Arc<SpectralBasis>) -> Self {
        let coeffs = Array3::zeros(basis.spec().coeff_shape());
        Self { basis, coeffs }
    }

    /// Rejects wrong shapes, non-finite entries and nonzero inactive slots.
    pub fn from_coeffs(basis: Arc<SpectralBasis>, coeffs: Array3<f64>) -> Result<Self> {
        check_coeff_shape(basis.spec(), coeffs.shape())?;
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("velocity coefficients"));
        }
        let j = basis.barotropic_count();
        let stray = coeffs
            .slice(s![0, 0, j..])
            .iter()
            .chain(coeffs.slice(s![1, 0, ..]).iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()));
        if stray != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "coefficient tensor has {stray:e} in inactive depth-average slots"
            )));
        }
        Ok(Self { basis, coeffs })
    }

    /// Random field with coefficients `amplitude · N(0,1) / (1 + λ/λ₁)²`,
    /// where `λ` is the slot's combined horizontal and vertical eigenvalue.
    pub fn random<R: Rng + ?Sized>(basis: Arc<SpectralBasis>, rng: &mut R, amplitude: f64) -> Self {
        let lam = basis.diffusion_eigenvalues();
        let nu = basis.vertical_eigenvalues().clone();
        let lam1 = basis.scalar_eigenvalues()[0];
        let mut coeffs = Array3::zeros(basis.spec().coeff_shape());
        for ((c, k, i), slot) in coeffs.indexed_iter_mut() {
            if basis.is_active(c, k, i) {
                let z: f64 = rng.sample(StandardNormal);
                let decay = 1.0 + (lam[[c, k, i]] + nu[k]) / lam1;
                *slot = amplitude * z / (decay * decay);
            }
        }
        Self { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &Array3<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Array3<f64> {
        self.coeffs
    }

    /// Barotropic coefficient vector `a_j`.
    pub fn barotropic_coeffs(&self) -> ndarray::ArrayView1<'_, f64> {
        self.coeffs.slice(s![0, 0, ..self.basis.barotropic_count()])
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || self.basis.spec() == other.basis.spec()
    }

    fn require_same(&self, other: &Self) -> Result<()> {
        if self.same_basis(other) {
            Ok(())
        } else {
            Err(Error::BasisMismatch)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.require_same(other)?;
        let mut coeffs = self.coeffs.clone();
        coeffs.scaled_add(alpha, &other.coeffs);
        Ok(Self {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            coeffs: &self.coeffs * alpha,
        }
    }

    pub fn with_coeffs(&self, coeffs: Array3<f64>) -> Result<Self> {
        Self::from_coeffs(self.basis.clone(), coeffs)
    }

    /// Grid values of `∂_x^px ∂_y^py` (vertical op) of component `c`.
    pub fn eval(&self, c: usize, px: usize, py: usize, vert: VerticalOp) -> Array3<f64> {
        self.basis
            .synthesize(&self.coeffs, self.basis.tables(), c, px, py, vert)
    }

    /// Same as [`Self::eval`] on a caller-supplied tensor grid.
    pub fn eval_on(&self, tables: &GridTables, c: usize, px: usize, py: usize, vert: VerticalOp) -> Array3<f64> {
        self.basis.synthesize(&self.coeffs, tables, c, px, py, vert)
    }

    pub fn to_grid(&self) -> GridVectorField {
        GridVectorField {
            components: [0, 1].map(|c| self.eval(c, 0, 0, VerticalOp::Value)),
        }
    }

    /// `v̄ = (1/2h) ∫ v dz` on the horizontal quadrature grid.
    pub fn vertical_average(&self) -> PlaneVectorField {
        self.vertical_average_on(self.basis.tables())
    }

    pub fn vertical_average_on(&self, tables: &GridTables) -> PlaneVectorField {
        let c0 = 1.0 / (2.0 * self.basis.spec().h).sqrt();
        let psi = self.basis.stream_function(&self.barotropic_coeffs().to_owned());
        PlaneVectorField {
            components: [0, 1].map(|c| self.basis.stream_component(&psi, tables, c, 0, 0) * c0),
        }
    }

    /// The depth-average part `v̄` as a 3D field (the `k = 0` block).
    pub fn barotropic_part(&self) -> Self {
        let mut coeffs = Array3::zeros(self.coeffs.raw_dim());
        coeffs
            .slice_mut(s![.., 0, ..])
            .assign(&self.coeffs.slice(s![.., 0, ..]));
        Self {
            basis: self.basis.clone(),
            coeffs,
        }
    }

    /// `ṽ = v − v̄`: the `k = 0` block zeroed.
    pub fn fluctuation(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.slice_mut(s![.., 0, ..]).fill(0.0);
        Self {
            basis: self.basis.clone(),
            coeffs,
        }
    }

    /// `w = −div_H ∫_{−h}^{z} v dξ` on the grid. Fails when `|w(+h)|`
    /// exceeds [`W_TOP_TOLERANCE`].
    pub fn reconstruct_w(&self) -> Result<ScalarField> {
        let residual = self.w_top_residual();
        if residual > W_TOP_TOLERANCE {
            return Err(Error::NotProjected {
                residual,
                tolerance: W_TOP_TOLERANCE,
            });
        }
        Ok(self.reconstruct_w_unchecked())
    }

    pub fn reconstruct_w_unchecked(&self) -> ScalarField {
        let mut w = self.eval(0, 1, 0, VerticalOp::Integral);
        w += &self.eval(1, 0, 1, VerticalOp::Integral);
        w.mapv_inplace(|v| -v);
        ScalarField {
            basis: self.basis.clone(),
            values: w,
        }
    }

    /// `w` on a caller-supplied grid.
    pub fn w_on(&self, tables: &GridTables) -> Array3<f64> {
        let mut w = self.eval_on(tables, 0, 1, 0, VerticalOp::Integral);
        w += &self.eval_on(tables, 1, 0, 1, VerticalOp::Integral);
        w.mapv(|v| -v)
    }

    /// `max |w|` over horizontal nodes at `z = −h` and `z = +h`.
    pub fn w_boundary_residuals(&self) -> (f64, f64) {
        let (xs, ys, _) = self.basis.nodes();
        let h = self.basis.spec().h;
        let t = self.basis.tables_at(xs, ys, &[-h, h]);
        let w = self.w_on(&t);
        let max_at = |q: usize| {
            w.slice(s![.., .., q])
                .iter()
                .fold(0.0, |m: f64, v| m.max(v.abs()))
        };
        (max_at(0), max_at(1))
    }

    pub fn w_top_residual(&self) -> f64 {
        self.w_boundary_residuals().1
    }

    /// Max over grid nodes of `|∂_z w + div_H v|`, with `∂_z w` obtained by
    /// spectral differentiation of the grid values of `w` in z.
    pub fn continuity_residual(&self) -> f64 {
        let w = self.reconstruct_w_unchecked().values;
        let dmat = crate::quadrature::differentiation_matrix(&self.basis.rules()[2].nodes);
        let div = self.div_h();
        let (nx, ny, _) = w.dim();
        let mut worst: f64 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let dzw = dmat.dot(&w.slice(s![i, j, ..]));
                for (q, d) in dzw.iter().enumerate() {
                    worst = worst.max((d + div[[i, j, q]]).abs());
                }
            }
        }
        worst
    }

    pub fn div_h(&self) -> Array3<f64> {
        let mut d = self.eval(0, 1, 0, VerticalOp::Value);
        d += &self.eval(1, 0, 1, VerticalOp::Value);
        d
    }

    pub fn laplacian_h(&self) -> GridVectorField {
        GridVectorField {
            components: [0, 1].map(|c| {
                let mut l = self.eval(c, 2, 0, VerticalOp::Value);
                l += &self.eval(c, 0, 2, VerticalOp::Value);
                l
            }),
        }
    }

    pub fn dz(&self) -> GridVectorField {
        GridVectorField {
            components: [0, 1].map(|c| self.eval(c, 0, 0, VerticalOp::Derivative)),
        }
    }

    pub fn diff_ops(&self) -> DiffOps {
        let grad = [0, 1].map(|c| {
            [
                self.eval(c, 1, 0, VerticalOp::Value),
                self.eval(c, 0, 1, VerticalOp::Value),
            ]
        });
        let div = &grad[0][0] + &grad[1][1];
        DiffOps {
            div,
            laplacian: self.laplacian_h().components,
            dz: self.dz().components,
            grad,
        }
    }

    /// `Δ_H` in coefficients on the fluctuation block (`−μ_i` per slot).
    /// The barotropic image leaves the span and is reported by
    /// [`Self::laplacian_h`] instead.
    pub fn laplacian_h_fluctuation_coeffs(&self) -> Array3<f64> {
        let mu = self.basis.scalar_eigenvalues();
        let mut out = self.coeffs.clone();
        out.slice_mut(s![.., 0, ..]).fill(0.0);
        Zip::indexed(&mut out).for_each(|(_, _, i), v| *v *= -mu[i]);
        out
    }

    fn weighted_dot(&self, other: &Self, weight: impl Fn(usize, usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        Zip::indexed(&self.coeffs)
            .and(&other.coeffs)
            .for_each(|(c, k, i), a, b| total += weight(c, k, i) * a * b);
        total
    }

    /// Inner product for `L²`, `H`, `V` or `H¹`; exact in coefficients.
    pub fn inner(&self, other: &Self, which: Norm) -> Result<f64> {
        self.require_same(other)?;
        let lam = self.basis.diffusion_eigenvalues();
        let nu = self.basis.vertical_eigenvalues();
        Ok(match which {
            Norm::L2 => self.weighted_dot(other, |_, _, _| 1.0),
            Norm::H => self.weighted_dot(other, |_, k, _| 1.0 + nu[k]),
            Norm::V => self.weighted_dot(other, |c, k, i| (1.0 + nu[k]) * (1.0 + lam[[c, k, i]])),
            Norm::H1 => self.weighted_dot(other, |c, k, i| 1.0 + nu[k] + lam[[c, k, i]]),
            Norm::Lq(_) => {
                return Err(Error::InvalidArgument(
                    "L^q is a norm, not an inner product".into(),
                ))
            }
        })
    }

    pub fn norm(&self, which: Norm) -> Result<f64> {
        match which {
            Norm::Lq(q) => self.to_grid().lq_norm(self.basis.weights(), q),
            other => Ok(self.inner(self, other)?.sqrt()),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l2_inner(&self, other: &Self) -> Result<f64> {
        self.inner(other, Norm::L2)
    }

    /// `‖∇_H v‖_{L²}`.
    pub fn grad_norm(&self) -> f64 {
        let lam = self.basis.diffusion_eigenvalues();
        self.weighted_dot(self, |c, k, i| lam[[c, k, i]]).sqrt()
    }

    /// `‖∇_H v‖_H`.
    pub fn grad_norm_h(&self) -> f64 {
        let lam = self.basis.diffusion_eigenvalues();
        let nu = self.basis.vertical_eigenvalues();
        self.weighted_dot(self, |c, k, i| lam[[c, k, i]] * (1.0 + nu[k]))
            .sqrt()
    }

    /// `‖∂_z v‖_{L²}`.
    pub fn dz_norm(&self) -> f64 {
        let nu = self.basis.vertical_eigenvalues();
        self.weighted_dot(self, |_, k, _| nu[k]).sqrt()
    }

    /// `‖∇_H ∂_z v‖_{L²}`.
    pub fn grad_dz_norm(&self) -> f64 {
        let lam = self.basis.diffusion_eigenvalues();
        let nu = self.basis.vertical_eigenvalues();
        self.weighted_dot(self, |c, k, i| lam[[c, k, i]] * nu[k]).sqrt()
    }

    /// `‖Δ_H v‖_{L²}`; the barotropic block uses the exact Laplacian Gram matrix.
    pub fn laplacian_norm(&self) -> f64 {
        self.laplacian_norm_parts().0.hypot(self.laplacian_norm_parts().1)
    }

    /// `(‖Δ_H ṽ‖, ‖Δ_H v̄‖)` both in `L²(Ω)`.
    pub fn laplacian_norm_parts(&self) -> (f64, f64) {
        let mu = self.basis.scalar_eigenvalues();
        let mut fl = 0.0;
        for ((_, k, i), v) in self.coeffs.indexed_iter() {
            if k > 0 {
                fl += mu[i] * mu[i] * v * v;
            }
        }
        let a = self.barotropic_coeffs();
        let bar = a.dot(&self.basis.barotropic_laplacian_gram().dot(&a));
        (fl.sqrt(), bar.max(0.0).sqrt())
    }

    /// `L^q` norm of `∂_z v`.
    pub fn dz_lq_norm(&self, q: f64) -> Result<f64> {
        self.dz().lq_norm(self.basis.weights(), q)
    }

    /// Moves the field to another basis by `L²` projection through the
    /// target grid. Exact when the target span contains the source span.
    pub fn transfer_to(&self, target: &Arc<SpectralBasis>) -> Result<Self> {
        if Arc::ptr_eq(target, &self.basis) {
            return Ok(self.clone());
        }
        let (xs, ys, zs) = target.nodes();
        let t = self.basis.tables_at(xs, ys, zs);
        let grid = [0, 1].map(|c| self.eval_on(&t, c, 0, 0, VerticalOp::Value));
        let coeffs = target.analyze([&grid[0], &grid[1]]);
        Self::from_coeffs(target.clone(), coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, DomainSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_basis() -> Arc<SpectralBasis> {
        build_basis(DomainSpec::unit(4, 3, 3)).unwrap()
    }

    fn random_field(basis: &Arc<SpectralBasis>, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VelocityField::random(basis.clone(), &mut rng, 1.0)
    }

    #[test]
    fn rejects_inactive_slots_and_nan() {
        let basis = small_basis();
        let mut c = Array3::zeros(basis.spec().coeff_shape());
        c[[1, 0, 0]] = 1.0;
        assert!(VelocityField::from_coeffs(basis.clone(), c.clone()).is_err());
        c[[1, 0, 0]] = 0.0;
        c[[0, 2, 1]] = f64::NAN;
        assert!(matches!(
            VelocityField::from_coeffs(basis, c),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn single_mode_h_norm() {
        let basis = small_basis();
        let mut c = Array3::zeros(basis.spec().coeff_shape());
        c[[1, 2, 4]] = 1.0;
        let v = VelocityField::from_coeffs(basis, c).unwrap();
        assert!((v.norm(Norm::L2).unwrap() - 1.0).abs() < 1e-15);
        let want = 1.0 + 4.0 * PI * PI / 4.0;
        assert!((v.norm(Norm::H).unwrap().powi(2) - want).abs() < 1e-12);
    }

    #[test]
    fn l2_in_coefficients_matches_grid_quadrature() {
        let basis = small_basis();
        let v = random_field(&basis, 3);
        let grid = v.to_grid();
        let quad = grid.lq_norm(basis.weights(), 2.0).unwrap();
        assert!((quad - v.l2_norm()).abs() < 1e-12 * v.l2_norm());
    }

    #[test]
    fn vertical_average_of_k_mode_vanishes() {
        let basis = small_basis();
        let mut c = Array3::zeros(basis.spec().coeff_shape());
        c[[0, 2, 3]] = 1.0;
        let v = VelocityField::from_coeffs(basis.clone(), c).unwrap();
        let vbar = v.vertical_average();
        let max = vbar.components[0].iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        assert_eq!(max, 0.0);
        // the discrete z-average of the grid values vanishes as well
        let g = v.to_grid();
        let wz = &basis.rules()[2].weights;
        for i in 0..g.components[0].shape()[0] {
            let s: f64 = (0..wz.len()).map(|q| wz[q] * g.components[0][[i, 2, q]]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_average_matches_dense_z_quadrature() {
        let basis = small_basis();
        let v = random_field(&basis, 9);
        let vbar = v.vertical_average();
        let g = v.to_grid();
        let wz = &basis.rules()[2].weights;
        let h = basis.spec().h;
        for c in 0..2 {
            for ((i, j), want) in vbar.components[c].indexed_iter() {
                let s: f64 = (0..wz.len())
                    .map(|q| wz[q] * g.components[c][[i, j, q]])
                    .sum::<f64>()
                    / (2.0 * h);
                assert!((s - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn w_single_mode_matches_hand_antiderivative() {
        let basis = small_basis();
        let mut c = Array3::zeros(basis.spec().coeff_shape());
        // v1 = s_{2,1}(x,y) c_1(z)
        let i = 3;
        c[[0, 1, i]] = 1.0;
        let v = VelocityField::from_coeffs(basis.clone(), c).unwrap();
        let w = v.reconstruct_w().unwrap();
        let (xs, ys, zs) = basis.nodes();
        let h = basis.spec().h;
        for (a, &x) in xs.iter().enumerate().step_by(5) {
            for (b, &y) in ys.iter().enumerate().step_by(5) {
                for (q, &z) in zs.iter().enumerate().step_by(3) {
                    let ds = 2.0 * 2.0 * PI * (2.0 * PI * x).cos() * (PI * y).sin();
                    let ic = (2.0 * h / PI) * (PI * (z + h) / (2.0 * h)).sin() / h.sqrt();
                    assert!((w.values[[a, b, q]] + ds * ic).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projected_raw_input_has_no_top_residual() {
        let basis = small_basis();
        let mut raw = RawField::zeros(basis.spec());
        raw.coeffs_mut()[[0, 0, 0]] = 1.0;
        let v = basis.hydrostatic_project(&raw).unwrap();
        assert!(v.reconstruct_w().is_ok());
    }

    #[test]
    fn lq_rejects_small_q() {
        let basis = small_basis();
        let v = random_field(&basis, 1);
        assert!(v.norm(Norm::Lq(0.5)).is_err());
        assert!(v.norm(Norm::Lq(1.0)).is_ok());
    }

    #[test]
    fn l4_matches_refined_quadrature() {
        let spec = DomainSpec::unit(4, 3, 3);
        let basis = build_basis(spec).unwrap();
        let mut fine_spec = spec;
        fine_spec.nq_x *= 2;
        fine_spec.nq_y *= 2;
        fine_spec.nq_z *= 2;
        let fine = build_basis(fine_spec).unwrap();
        let v = random_field(&basis, 5);
        let vf = v.transfer_to(&fine).unwrap();
        let a = v.norm(Norm::Lq(4.0)).unwrap();
        let b = vf.norm(Norm::Lq(4.0)).unwrap();
        assert!((a - b).abs() <= 1e-6 * b);
    }

    #[test]
    fn laplacian_norm_matches_grid() {
        let basis = small_basis();
        let v = random_field(&basis, 13);
        let lap = v.laplacian_h();
        let quad = lap.lq_norm(basis.weights(), 2.0).unwrap();
        assert!((quad - v.laplacian_norm()).abs() < 1e-9 * quad);
        let grad2: f64 = v
            .diff_ops()
            .grad
            .iter()
            .flatten()
            .map(|g| {
                let mut t = 0.0;
                Zip::from(g).and(basis.weights()).for_each(|a, w| t += w * a * a);
                t
            })
            .sum();
        assert!((grad2.sqrt() - v.grad_norm()).abs() < 1e-10 * v.grad_norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn splitting_is_orthogonal(seed in any::<u64>()) {
            let basis = small_basis();
            let v = random_field(&basis, seed);
            let bar = v.barotropic_part();
            let fl = v.fluctuation();
            let lhs = v.l2_norm().powi(2);
            let rhs = bar.l2_norm().powi(2) + fl.l2_norm().powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
            let avg = fl.vertical_average();
            let m = avg.components.iter().flatten().fold(0.0, |m: f64, x| m.max(x.abs()));
            prop_assert!(m <= 1e-14);
        }

        #[test]
        fn poincare_inequality(seed in any::<u64>()) {
            let basis = small_basis();
            let v = random_field(&basis, seed);
            let (c1, _) = basis.poincare_constants();
            prop_assert!(v.l2_norm() <= c1 * v.grad_norm() * (1.0 + 1e-12));
        }

        #[test]
        fn kinematics_of_projected_fields(seed in any::<u64>()) {
            let basis = small_basis();
            let v = random_field(&basis, seed);
            let (bottom, top) = v.w_boundary_residuals();
            prop_assert!(bottom <= 1e-13);
            prop_assert!(top <= 1e-10);
            prop_assert!(v.continuity_residual() <= 1e-10 * (1.0 + v.grad_norm()));
            let h = basis.spec().h;
            let w = v.reconstruct_w().unwrap();
            let mut div2 = 0.0;
            Zip::from(&v.div_h()).and(basis.weights()).for_each(|d, wt| div2 += wt * d * d);
            prop_assert!(w.l2_norm() <= 2.0 * h * (2.0 * h).sqrt() * div2.sqrt() + 1e-14);
        }

        #[test]
        fn h_weight_identity(seed in any::<u64>(), k in 1usize..=3, i in 0usize..12, c in 0usize..2) {
            let basis = small_basis();
            let g = random_field(&basis, seed);
            let mut e = Array3::zeros(basis.spec().coeff_shape());
            e[[c, k, i]] = 1.0;
            let phi = VelocityField::from_coeffs(basis.clone(), e).unwrap();
            // ⟨g, Φ⟩_H via grid quadrature of values and z-derivatives
            let (gv, pv) = (g.to_grid(), phi.to_grid());
            let (gz, pz) = (g.dz(), phi.dz());
            let mut lhs = 0.0;
            for comp in 0..2 {
                Zip::from(&gv.components[comp]).and(&pv.components[comp]).and(&gz.components[comp])
                    .and(&pz.components[comp]).and(basis.weights())
                    .for_each(|a, b, da, db, w| lhs += w * (a * b + da * db));
            }
            let nu = basis.vertical_eigenvalues()[k];
            let rhs = (1.0 + nu) * g.l2_inner(&phi).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }
}
