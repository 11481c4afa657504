//! Clamped–clamped Euler–Bernoulli beam eigenfunctions.
//!
//! On `[0, 1]` the n-th mode is
//! `C(ξ) = cosh λξ − cos λξ − σ (sinh λξ − sin λξ)` with
//! `cos λ · cosh λ = 1` and `σ = (cosh λ − cos λ) / (sinh λ − sin λ)`.
//! Both `C` and `C'` vanish at the end points, so `∇⊥(C_a(x) C_b(y))` is a
//! divergence-free velocity that vanishes on the boundary of a rectangle.
//!
//! The hyperbolic part is evaluated as
//! `A e^{λ(ξ−1)} + B e^{−λξ}`, which stays O(1) for large λ instead of
//! cancelling two ~e^λ terms.

use std::f64::consts::PI;

/// λ_n for n = 1, 2, ... (the n-th positive root of `cos λ cosh λ = 1`),
/// located by bisection inside `[nπ, (n+1)π]`.
pub fn clamped_root(n: usize) -> f64 {
    assert!(n >= 1, "beam modes are numbered from 1");
    let g = |x: f64| x.cos() - 1.0 / x.cosh();
    let mut lo = n as f64 * PI;
    let mut hi = (n + 1) as f64 * PI;
    let mut g_lo = g(lo);
    debug_assert!(g_lo * g(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return mid;
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamMode {
    pub lambda: f64,
    sigma: f64,
    a: f64,
    b: f64,
}

impl BeamMode {
    pub fn new(n: usize) -> Self {
        let lambda = clamped_root(n);
        let e = (-lambda).exp();
        let (s, c) = lambda.sin_cos();
        let den = 1.0 - e * e - 2.0 * s * e;
        let sigma = (1.0 + e * e - 2.0 * c * e) / den;
        let a = (c - s - e) / den;
        let b = 0.5 * (1.0 + sigma);
        Self {
            lambda,
            sigma,
            a,
            b,
        }
    }

    /// `d`-th derivative of the unit-interval mode at `xi`.
    pub fn eval(&self, d: u32, xi: f64) -> f64 {
        let l = self.lambda;
        let ld = l.powi(d as i32);
        let grow = self.a * (l * (xi - 1.0)).exp();
        let decay = self.b * (-l * xi).exp();
        let sign = if d.is_multiple_of(2) { 1.0 } else { -1.0 };
        let (s, c) = (l * xi).sin_cos();
        let (dcos, dsin) = match d % 4 {
            0 => (c, s),
            1 => (-s, c),
            2 => (-c, -s),
            _ => (s, -c),
        };
        ld * (grow + sign * decay - dcos + self.sigma * dsin)
    }

    /// `d`-th derivative of the mode stretched to `[0, len]` and scaled to
    /// unit `L²(0, len)` norm.
    pub fn eval_on(&self, d: u32, x: f64, len: f64) -> f64 {
        self.eval(d, x / len) / (len.powi(d as i32) * len.sqrt())
    }
}
