//! One-dimensional Gauss–Legendre rules mapped onto physical intervals.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use ndarray::Array2;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[a, b]`,
/// nodes sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        let n = NonZeroUsize::new(n).expect("quadrature needs at least one node");
        let rule = GaussLegendre::new(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (mid + half * x, half * w))
            .collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Smallest gap between neighbouring nodes.
    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Matrix mapping values at distinct `nodes` to the derivative of their
/// interpolating polynomial at the same nodes (barycentric form).
pub fn differentiation_matrix(nodes: &[f64]) -> Array2<f64> {
    let n = nodes.len();
    let bary: Vec<f64> = (0..n)
        .map(|j| {
            1.0 / (0..n)
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product::<f64>()
        })
        .collect();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                d[[i, j]] = v;
                diag -= v;
            }
        }
        d[[i, i]] = diag;
    }
    d
}
