//! Hermite functions on `R^d` and the multi-index bookkeeping behind every
//! coefficient vector in the crate.
//!
//! The one-dimensional Hermite functions are
//!
//! ```text
//! h_n(t) = (2^n n! sqrt(pi))^(-1/2) e^(-t^2/2) H_n(t)
//! ```
//!
//! and are evaluated with the normalized three-term recurrence
//!
//! ```text
//! h_{n+1}(t) = sqrt(2/(n+1)) t h_n(t) - sqrt(n/(n+1)) h_{n-1}(t)
//! ```
//!
//! which never forms `H_n` or a factorial. In `d` dimensions,
//! `h_n(x) = h_{n_1}(x_1) ... h_{n_d}(x_d)`.
//!
//! Multi-indices with `|n| <= N` are enumerated in graded-lex order: degree
//! shell by degree shell, and inside a shell ascending lexicographically with
//! the leftmost coordinate most significant.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multi-index `n = (n_1, ..., n_d)` of nonnegative integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|n| = n_1 + ... + n_d`.
    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// `h_0(t), ..., h_N(t)`.
pub fn hermite_values(n_max: usize, t: f64) -> Result<Vec<f64>> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("hermite_values: non-finite argument {t}")));
    }
    let mut out = vec![0.0; n_max + 1];
    hermite_values_into(t, &mut out);
    Ok(out)
}

/// Fills `out[n] = h_n(t)` for `n < out.len()`.
pub(crate) fn hermite_values_into(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * t * t).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * t * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * t * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// Number of multi-indices in `d` variables with total degree at most `n_max`,
/// i.e. `C(n_max + d, d)`.
pub fn basis_size(d: usize, n_max: usize) -> usize {
    let mut acc: u128 = 1;
    for k in 1..=d as u128 {
        acc = acc * (n_max as u128 + k) / k;
    }
    acc as usize
}

/// All multi-indices with `|n| <= n_max`, in graded-lex order.
pub fn multi_indices(d: usize, n_max: usize) -> Result<Vec<MultiIndex>> {
    if d == 0 {
        return Err(Error::invalid("multi_indices: dimension must be at least 1"));
    }
    let mut out = Vec::with_capacity(basis_size(d, n_max));
    let mut scratch = vec![0u32; d];
    for deg in 0..=n_max {
        compositions(deg as u32, 0, &mut scratch, &mut out);
    }
    Ok(out)
}

// Ascending lex over compositions of `remaining` into scratch[pos..].
fn compositions(remaining: u32, pos: usize, scratch: &mut [u32], out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for first in 0..=remaining {
        scratch[pos] = first;
        compositions(remaining - first, pos + 1, scratch, out);
    }
}

/// `h_n(x)` for a multi-index `n` and a point `x` in `R^d`.
pub fn eval_hd(n: &MultiIndex, x: &[f64]) -> Result<f64> {
    if n.dim() != x.len() {
        return Err(Error::invalid(format!(
            "eval_hd: multi-index has dimension {} but point has dimension {}",
            n.dim(),
            x.len()
        )));
    }
    let mut value = 1.0;
    for (&k, &xi) in n.entries().iter().zip(x) {
        let h = hermite_values(k as usize, xi)?;
        value *= h[k as usize];
    }
    Ok(value)
}

/// The truncated index set `{n : |n| <= N}` in `d` variables together with
/// the neighbour tables used by the ladder operators.
#[derive(Debug)]
pub struct Basis {
    dim: usize,
    max_degree: usize,
    indices: Vec<MultiIndex>,
    degrees: Vec<usize>,
    lookup: HashMap<Vec<u32>, usize>,
    raise: Vec<Vec<Option<usize>>>,
    lower: Vec<Vec<Option<usize>>>,
}

impl PartialEq for Basis {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.max_degree == other.max_degree
    }
}

type BasisCache = Mutex<HashMap<(usize, usize), Arc<Basis>>>;

static BASIS_CACHE: OnceLock<BasisCache> = OnceLock::new();

impl Basis {
    /// Shared basis for `(d, N)`. Bases are immutable and cached process-wide.
    pub fn new(d: usize, n_max: usize) -> Result<Arc<Basis>> {
        if d == 0 {
            return Err(Error::invalid("basis dimension must be at least 1"));
        }
        let cache = BASIS_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(b) = cache.lock().expect("basis cache poisoned").get(&(d, n_max)) {
            return Ok(Arc::clone(b));
        }
        let built = Arc::new(Self::build(d, n_max)?);
        let mut guard = cache.lock().expect("basis cache poisoned");
        Ok(Arc::clone(guard.entry((d, n_max)).or_insert(built)))
    }

    fn build(d: usize, n_max: usize) -> Result<Basis> {
        let indices = multi_indices(d, n_max)?;
        let degrees: Vec<usize> = indices.iter().map(MultiIndex::degree).collect();
        let lookup: HashMap<Vec<u32>, usize> = indices
            .iter()
            .enumerate()
            .map(|(k, n)| (n.entries().to_vec(), k))
            .collect();
        let mut raise = vec![vec![None; indices.len()]; d];
        let mut lower = vec![vec![None; indices.len()]; d];
        for (k, n) in indices.iter().enumerate() {
            let mut e = n.entries().to_vec();
            for axis in 0..d {
                e[axis] += 1;
                raise[axis][k] = lookup.get(&e).copied();
                e[axis] -= 1;
                if e[axis] > 0 {
                    e[axis] -= 1;
                    lower[axis][k] = lookup.get(&e).copied();
                    e[axis] += 1;
                }
            }
        }
        Ok(Basis {
            dim: d,
            max_degree: n_max,
            indices,
            degrees,
            lookup,
            raise,
            lower,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn multi_index(&self, k: usize) -> &MultiIndex {
        &self.indices[k]
    }

    /// `|n|` of the `k`-th basis element.
    pub fn degree(&self, k: usize) -> usize {
        self.degrees[k]
    }

    pub fn position(&self, entries: &[u32]) -> Option<usize> {
        self.lookup.get(entries).copied()
    }

    /// Position of `n + e_axis`, if it lies inside the truncation.
    pub fn raised(&self, axis: usize, k: usize) -> Option<usize> {
        self.raise[axis][k]
    }

    /// Position of `n - e_axis`, if `n_axis > 0`.
    pub fn lowered(&self, axis: usize, k: usize) -> Option<usize> {
        self.lower[axis][k]
    }

    /// `(2|n| + d)^(2p)`, the weight of the `k`-th element in `<.,.>_p`.
    pub fn weight(&self, k: usize, p: f64) -> f64 {
        ((2 * self.degrees[k] + self.dim) as f64).powf(2.0 * p)
    }

    /// Positions of all elements with degree at most `max_degree`.
    pub fn positions_up_to(&self, max_degree: usize) -> std::ops::Range<usize> {
        0..basis_size(self.dim, max_degree.min(self.max_degree))
    }
}
