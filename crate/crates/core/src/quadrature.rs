//! Gauss-Hermite and Gauss-Legendre rules.
//!
//! Gauss-Hermite nodes come from the Golub-Welsch eigenproblem and are then
//! polished by Newton steps on `h_Q`, which is bounded for every `t` and so
//! avoids the overflow of the monomial-scaled Hermite polynomials. Weights are
//! computed from the Christoffel function of the Hermite functions, which also
//! yields the scaled weights `w e^(t^2)` used when integrating against
//! products of Hermite functions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hermite::hermite_values_into;

/// Largest supported Gauss-Hermite order.
pub const MAX_ORDER: usize = 200;

/// A Gauss-Hermite rule for the weight `e^(-t^2)`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `weights[i] * e^(nodes[i]^2)`. Integrates `h_m h_n` exactly for `m + n < 2Q`.
    pub scaled_weights: Vec<f64>,
}

static GH_CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule>>>> = OnceLock::new();

/// The `order`-point Gauss-Hermite rule, nodes ascending. Cached.
pub fn gauss_hermite_rule(order: usize) -> Result<Arc<QuadratureRule>> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::UnsupportedOrder { order, max: MAX_ORDER });
    }
    let cache = GH_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("quadrature cache poisoned").get(&order) {
        return Ok(Arc::clone(r));
    }
    let rule = Arc::new(build_gauss_hermite(order));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    Ok(Arc::clone(guard.entry(order).or_insert(rule)))
}

fn build_gauss_hermite(q: usize) -> QuadratureRule {
    let mut jacobi = DMatrix::<f64>::zeros(q, q);
    for k in 1..q {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));

    let mut h = vec![0.0; q + 1];
    for t in nodes.iter_mut() {
        for _ in 0..8 {
            hermite_values_into(*t, &mut h);
            // h_Q' = sqrt(2Q) h_{Q-1} - t h_Q; at a root the second term vanishes.
            let deriv = (2.0 * q as f64).sqrt() * h[q - 1] - *t * h[q];
            if deriv == 0.0 {
                break;
            }
            let step = h[q] / deriv;
            *t -= step;
            if step.abs() <= 1e-16 * t.abs().max(1.0) {
                break;
            }
        }
    }
    // Exact symmetry of the rule.
    for i in 0..q / 2 {
        let m = 0.5 * (nodes[q - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[q - 1 - i] = m;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }

    let mut scaled_weights = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    let mut hq = vec![0.0; q];
    for &t in &nodes {
        hermite_values_into(t, &mut hq);
        let christoffel: f64 = hq.iter().map(|v| v * v).sum();
        let sw = 1.0 / christoffel;
        scaled_weights.push(sw);
        weights.push(sw * (-t * t).exp());
    }
    QuadratureRule {
        nodes,
        weights,
        scaled_weights,
    }
}

/// `order`-point Gauss-Legendre rule on `[a, b]`, as `(nodes, weights)`.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::UnsupportedOrder { order, max: usize::MAX });
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid - half * x;
        nodes[n - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
