//! Linear operators on Hermite coefficient vectors.
//!
//! Every operator is a single matrix `M` acting on coefficients,
//! `(O f)_m = sum_n M[m, n] f_n`. The same matrix serves test functions and
//! distributions; the dual action is the transpose. For translations
//! `T(x)^T = T(-x)`, and the derivative matrix is antisymmetric.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hermite::{hermite_values_into, Basis};
use crate::quadrature::gauss_hermite_rule;
use crate::sobolev::HermiteRep;

/// Sparse (CSR) matrix over the graded-lex index set of one [`Basis`].
#[derive(Clone, Debug)]
pub struct CoeffOperator {
    basis: Arc<Basis>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CoeffOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(basis: Arc<Basis>, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = basis.len();
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(Error::invalid(format!("operator entry ({r}, {c}) outside a {n}x{n} truncation")));
        }
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::invalid("operator entry is not finite"));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry present") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut op = CoeffOperator {
            basis,
            row_ptr,
            cols,
            vals,
        };
        op.prune();
        Ok(op)
    }

    fn prune(&mut self) {
        if self.vals.iter().all(|&v| v != 0.0) {
            return;
        }
        let n = self.basis.len();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn identity(basis: Arc<Basis>) -> Self {
        let n = basis.len();
        CoeffOperator {
            basis,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Row-major dense matrix of size `len x len`.
    pub fn from_dense(basis: Arc<Basis>, dense: &[f64]) -> Result<Self> {
        let n = basis.len();
        if dense.len() != n * n {
            return Err(Error::invalid("dense operator has the wrong size"));
        }
        let triplets = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = dense[r * n + c];
                (v != 0.0).then_some((r, c, v))
            })
            .collect();
        Self::from_triplets(basis, triplets)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.size()).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n * n];
        for (r, c, v) in self.triplets() {
            out[r * n + c] = v;
        }
        out
    }

    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, f: &HermiteRep) -> Result<HermiteRep> {
        if *f.basis().as_ref() != *self.basis {
            return Err(Error::invalid("operator and representation have different shapes"));
        }
        let mut out = vec![0.0; self.size()];
        self.apply_slice(f.coeffs(), &mut out);
        Ok(HermiteRep::from_parts(Arc::clone(&self.basis), out, f.nominal_index))
    }

    pub fn transpose(&self) -> CoeffOperator {
        let t = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(Arc::clone(&self.basis), t).expect("transpose of a valid operator")
    }

    /// `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &CoeffOperator) -> Result<CoeffOperator> {
        if *self.basis != *other.basis {
            return Err(Error::invalid("compose: operators have different shapes"));
        }
        let n = self.size();
        let mut triplets = Vec::new();
        let mut acc = vec![0.0; n];
        let mut touched = Vec::new();
        for r in 0..n {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if acc[c] == 0.0 {
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &c in &touched {
                triplets.push((r, c, acc[c]));
                acc[c] = 0.0;
            }
            touched.clear();
        }
        Self::from_triplets(Arc::clone(&self.basis), triplets)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &CoeffOperator) -> Result<CoeffOperator> {
        if *self.basis != *other.basis {
            return Err(Error::invalid("add: operators have different shapes"));
        }
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, alpha * v)));
        Self::from_triplets(Arc::clone(&self.basis), t)
    }

    pub fn scale(&self, alpha: f64) -> CoeffOperator {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= alpha);
        out.prune();
        out
    }

    /// Writes `row col value` lines, one per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        Ok(())
    }
}

/// Matrix of `d/dx_axis` (0-based axis). Coefficients pushed to degree
/// `N + 1` are dropped.
pub fn derivative_op(axis: usize, d: usize, n_max: usize) -> Result<CoeffOperator> {
    if axis >= d {
        return Err(Error::invalid(format!("derivative axis {axis} out of range for d = {d}")));
    }
    let basis = Basis::new(d, n_max)?;
    let mut t = Vec::with_capacity(2 * basis.len());
    for k in 0..basis.len() {
        let m = basis.multi_index(k).entries()[axis] as f64;
        if let Some(j) = basis.raised(axis, k) {
            t.push((k, j, ((m + 1.0) / 2.0).sqrt()));
        }
        if let Some(j) = basis.lowered(axis, k) {
            t.push((k, j, -(m / 2.0).sqrt()));
        }
    }
    CoeffOperator::from_triplets(basis, t)
}

/// Overflow of `d/dx_axis f` into degree `N + 1`, as a squared L2 mass.
pub fn derivative_tail(f: &HermiteRep, axis: usize) -> f64 {
    let b = f.basis();
    let n = b.max_degree();
    b.positions_up_to(n)
        .skip(if n == 0 { 0 } else { crate::hermite::basis_size(b.dim(), n - 1) })
        .map(|k| {
            let m = b.multi_index(k).entries()[axis] as f64;
            (m + 1.0) / 2.0 * f.coeffs()[k] * f.coeffs()[k]
        })
        .sum()
}

/// `d^2 / dx_i dx_j`, assembled on the `N + 1` basis and restricted, so
/// that it is exact on the truncation.
pub fn second_derivative_op(i: usize, j: usize, d: usize, n_max: usize) -> Result<CoeffOperator> {
    let big_i = derivative_op(i, d, n_max + 1)?;
    let big_j = derivative_op(j, d, n_max + 1)?;
    let prod = big_i.compose(&big_j)?;
    let basis = Basis::new(d, n_max)?;
    let n = basis.len();
    let t = prod.triplets().into_iter().filter(|&(r, c, _)| r < n && c < n).collect();
    CoeffOperator::from_triplets(basis, t)
}

/// Default quadrature order for translations at truncation `N`.
pub fn default_translation_order(n_max: usize) -> usize {
    (2 * n_max + 8).min(crate::quadrature::MAX_ORDER)
}

/// One-dimensional `T_{mn}(x) = <tau_x h_n, h_m>`, row-major `(N+1)^2`.
///
/// Uses `y = s + x/2`, so the integrand is a polynomial in `s` of degree
/// `m + n` times `e^(-s^2)`: exact for `Q >= N + 1`.
pub fn translation_matrix_1d(x: f64, n_max: usize, q: usize) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::invalid("translation by a non-finite shift"));
    }
    let n = n_max + 1;
    let mut out = vec![0.0; n * n];
    if x == 0.0 {
        for k in 0..n {
            out[k * n + k] = 1.0;
        }
        return Ok(out);
    }
    let rule = gauss_hermite_rule(q)?;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for (s, w) in rule.nodes.iter().zip(&rule.scaled_weights) {
        hermite_values_into(s + 0.5 * x, &mut a);
        hermite_values_into(s - 0.5 * x, &mut b);
        for m in 0..n {
            let wa = w * a[m];
            let row = &mut out[m * n..(m + 1) * n];
            for (o, bn) in row.iter_mut().zip(&b) {
                *o += wa * bn;
            }
        }
    }
    Ok(out)
}

/// Dense matrix of `tau_x` on the truncation, as a tensor product of
/// one-dimensional matrices.
pub fn translation_matrix(x: &[f64], d: usize, n_max: usize, q: usize) -> Result<CoeffOperator> {
    if x.len() != d {
        return Err(Error::invalid("translation shift has the wrong dimension"));
    }
    let basis = Basis::new(d, n_max)?;
    if x.iter().all(|&v| v == 0.0) {
        return Ok(CoeffOperator::identity(basis));
    }
    let n1 = n_max + 1;
    let mats: Vec<Vec<f64>> = x.iter().map(|&xi| translation_matrix_1d(xi, n_max, q)).collect::<Result<_>>()?;
    let len = basis.len();
    let mut dense = vec![0.0; len * len];
    for (r, m) in basis.indices().iter().enumerate() {
        for (c, nn) in basis.indices().iter().enumerate() {
            let mut v = 1.0;
            for a in 0..d {
                v *= mats[a][m.entries()[a] as usize * n1 + nn.entries()[a] as usize];
            }
            dense[r * len + c] = v;
        }
    }
    CoeffOperator::from_dense(basis, &dense)
}

/// `O*_p = W^(-2p) O^T W^(2p)`, the adjoint of `O` in `<.,.>_p`.
pub fn adjoint_in_p(op: &CoeffOperator, p: f64) -> CoeffOperator {
    let b = Arc::clone(op.basis());
    let t = op
        .triplets()
        .into_iter()
        .map(|(r, c, v)| (c, r, v * b.weight(r, p) / b.weight(c, p)))
        .collect();
    CoeffOperator::from_triplets(b, t).expect("adjoint of a valid operator")
}

/// Applies translations without forming the full matrix: one-dimensional
/// matrices act axis by axis on the `(N+1)^d` grid and the result is
/// restricted back to `|n| <= N`.
#[derive(Clone, Debug)]
pub struct Translator {
    basis: Arc<Basis>,
    order: usize,
    grid_pos: Vec<usize>,
}

impl Translator {
    pub fn new(basis: Arc<Basis>, order: usize) -> Result<Self> {
        gauss_hermite_rule(order)?;
        let d = basis.dim();
        let n1 = basis.max_degree() + 1;
        let total = n1
            .checked_pow(d as u32)
            .filter(|&t| t <= 1 << 26)
            .ok_or_else(|| Error::Unsupported(format!("translation grid (N+1)^d too large for d = {d}")))?;
        let _ = total;
        let grid_pos = basis
            .indices()
            .iter()
            .map(|n| n.entries().iter().fold(0usize, |acc, &e| acc * n1 + e as usize))
            .collect();
        Ok(Translator { basis, order, grid_pos })
    }

    pub fn with_default_order(basis: Arc<Basis>) -> Result<Self> {
        let q = default_translation_order(basis.max_degree());
        Self::new(basis, q)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `tau_x f`.
    pub fn apply(&self, x: &[f64], f: &HermiteRep) -> Result<HermiteRep> {
        if x.len() != self.basis.dim() || *f.basis().as_ref() != *self.basis {
            return Err(Error::invalid("translate: shape mismatch"));
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(f.clone());
        }
        let out = self.apply_coeffs(x, f.coeffs())?;
        Ok(HermiteRep::from_parts(Arc::clone(&self.basis), out, f.nominal_index))
    }

    pub(crate) fn apply_coeffs(&self, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let d = self.basis.dim();
        let n_max = self.basis.max_degree();
        let n1 = n_max + 1;
        let total = n1.pow(d as u32);
        let mut grid = vec![0.0; total];
        for (k, &g) in self.grid_pos.iter().enumerate() {
            grid[g] = c[k];
        }
        let mut scratch = vec![0.0; total];
        for (axis, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            let t = translation_matrix_1d(xa, n_max, self.order)?;
            // grid index = (outer * n1 + i) * stride + inner
            let stride = n1.pow((d - 1 - axis) as u32);
            let outer = total / (n1 * stride);
            scratch.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..outer {
                let base = o * n1 * stride;
                for m in 0..n1 {
                    let dst = base + m * stride;
                    for nn in 0..n1 {
                        let tv = t[m * n1 + nn];
                        let src = base + nn * stride;
                        for inner in 0..stride {
                            scratch[dst + inner] += tv * grid[src + inner];
                        }
                    }
                }
            }
            std::mem::swap(&mut grid, &mut scratch);
        }
        Ok(self.grid_pos.iter().map(|&g| grid[g]).collect())
    }
}

/// Precomputed derivative matrices and a translator for one truncation,
/// with the SPDE operators built on top.
#[derive(Clone, Debug)]
pub struct SpaceOperators {
    basis: Arc<Basis>,
    first: Vec<CoeffOperator>,
    second: Vec<Vec<CoeffOperator>>,
    translator: Translator,
}

impl SpaceOperators {
    pub fn new(d: usize, n_max: usize) -> Result<Self> {
        let basis = Basis::new(d, n_max)?;
        let translator = Translator::with_default_order(Arc::clone(&basis))?;
        Self::with_translator(translator)
    }

    pub fn with_translator(translator: Translator) -> Result<Self> {
        let basis = Arc::clone(translator.basis());
        let d = basis.dim();
        let n_max = basis.max_degree();
        let first = (0..d).map(|i| derivative_op(i, d, n_max)).collect::<Result<Vec<_>>>()?;
        let second = (0..d)
            .map(|i| (0..d).map(|j| second_derivative_op(i, j, d, n_max)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(SpaceOperators {
            basis,
            first,
            second,
            translator,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn derivative(&self, axis: usize) -> &CoeffOperator {
        &self.first[axis]
    }

    pub fn second_derivative(&self, i: usize, j: usize) -> &CoeffOperator {
        &self.second[i][j]
    }

    pub fn translator(&self) -> &Translator {
        &self.translator
    }

    pub fn translate(&self, x: &[f64], f: &HermiteRep) -> Result<HermiteRep> {
        self.translator.apply(x, f)
    }

    fn check(&self, rho: &HermiteRep, sigma: &[Vec<HermiteRep>], b: Option<&[HermiteRep]>) -> Result<()> {
        let d = self.dim();
        let ok_rep = |r: &HermiteRep| *r.basis().as_ref() == *self.basis;
        let sigma_ok = sigma.len() == d && sigma.iter().all(|row| row.len() == d && row.iter().all(ok_rep));
        let b_ok = b.is_none_or(|b| b.len() == d && b.iter().all(ok_rep));
        if ok_rep(rho) && sigma_ok && b_ok {
            Ok(())
        } else {
            Err(Error::invalid("SPDE operator: coefficient shapes do not match the truncation"))
        }
    }

    /// The pairing matrix `M_ij = sigma_ij[rho]`.
    pub fn pairing_matrix(sigma: &[Vec<HermiteRep>], rho: &HermiteRep) -> Vec<Vec<f64>> {
        sigma
            .iter()
            .map(|row| row.iter().map(|s| dot(s.coeffs(), rho.coeffs())).collect())
            .collect()
    }

    /// `A_j rho = -sum_i sigma_ij[rho] d_i rho`, for `j = 1..d`.
    pub fn op_a(&self, rho: &HermiteRep, sigma: &[Vec<HermiteRep>]) -> Result<Vec<HermiteRep>> {
        self.check(rho, sigma, None)?;
        let m = Self::pairing_matrix(sigma, rho);
        let grads = self.gradient(rho);
        let d = self.dim();
        Ok((0..d)
            .map(|j| {
                let mut out = vec![0.0; self.basis.len()];
                for i in 0..d {
                    axpy(&mut out, -m[i][j], &grads[i]);
                }
                HermiteRep::from_parts(Arc::clone(&self.basis), out, rho.nominal_index)
            })
            .collect())
    }

    fn gradient(&self, rho: &HermiteRep) -> Vec<Vec<f64>> {
        self.first
            .iter()
            .map(|op| {
                let mut g = vec![0.0; self.basis.len()];
                op.apply_slice(rho.coeffs(), &mut g);
                g
            })
            .collect()
    }

    /// `L rho = 1/2 sum_ij (M M^T)_ij d_i d_j rho - sum_i b_i[rho] d_i rho`.
    pub fn op_l(&self, rho: &HermiteRep, sigma: &[Vec<HermiteRep>], b: &[HermiteRep]) -> Result<HermiteRep> {
        self.check(rho, sigma, Some(b))?;
        let d = self.dim();
        let m = Self::pairing_matrix(sigma, rho);
        let grads = self.gradient(rho);
        let mut out = vec![0.0; self.basis.len()];
        let mut tmp = vec![0.0; self.basis.len()];
        for i in 0..d {
            for j in 0..d {
                let a: f64 = (0..d).map(|k| m[i][k] * m[j][k]).sum();
                if a != 0.0 {
                    self.second[i][j].apply_slice(rho.coeffs(), &mut tmp);
                    axpy(&mut out, 0.5 * a, &tmp);
                }
            }
            let bi = dot(b[i].coeffs(), rho.coeffs());
            axpy(&mut out, -bi, &grads[i]);
        }
        Ok(HermiteRep::from_parts(Arc::clone(&self.basis), out, rho.nominal_index))
    }

    /// `sum_nu w (tau_F - Id + F . grad) rho` over weighted marks `(w, F)`,
    /// where `F` is the jump coefficient already evaluated at `rho`.
    pub fn jump_correction(&self, rho: &HermiteRep, jumps: &[(f64, Vec<f64>)]) -> Result<HermiteRep> {
        let grads = self.gradient(rho);
        let mut out = vec![0.0; self.basis.len()];
        for (w, shift) in jumps {
            if shift.len() != self.dim() {
                return Err(Error::invalid("jump shift has the wrong dimension"));
            }
            if shift.iter().all(|&s| s == 0.0) {
                continue;
            }
            let moved = self.translator.apply_coeffs(shift, rho.coeffs())?;
            for (o, (a, c)) in out.iter_mut().zip(moved.iter().zip(rho.coeffs())) {
                *o += w * (a - c);
            }
            for (i, g) in grads.iter().enumerate() {
                axpy(&mut out, w * shift[i], g);
            }
        }
        Ok(HermiteRep::from_parts(Arc::clone(&self.basis), out, rho.nominal_index))
    }

    /// `L~ rho = L rho + sum_nu w (tau_F - Id + F . grad) rho`.
    pub fn op_ltilde(
        &self,
        rho: &HermiteRep,
        sigma: &[Vec<HermiteRep>],
        b: &[HermiteRep],
        jumps: &[(f64, Vec<f64>)],
    ) -> Result<HermiteRep> {
        let l = self.op_l(rho, sigma, b)?;
        let j = self.jump_correction(rho, jumps)?;
        l.axpy(1.0, &j)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    if alpha == 0.0 {
        return;
    }
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobolev::{inner_p, norm_p, project};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn unit(d: usize, n: usize, idx: &[u32]) -> HermiteRep {
        HermiteRep::unit(d, n, idx, 0.0).unwrap()
    }

    fn assert_coeffs(f: &HermiteRep, expect: &[f64], tol: f64) {
        for (a, b) in f.coeffs().iter().zip(expect) {
            assert_abs_diff_eq!(*a, *b, epsilon = tol);
        }
    }

    #[test]
    fn derivative_examples() {
        let d = derivative_op(0, 1, 4).unwrap();
        assert_coeffs(&d.apply(&unit(1, 4, &[0])).unwrap(), &[0.0, -R2, 0.0, 0.0, 0.0], 1e-15);
        assert_coeffs(&d.apply(&unit(1, 4, &[1])).unwrap(), &[R2, 0.0, -1.0, 0.0, 0.0], 1e-15);
        let z = HermiteRep::zeros(1, 4, 0.0).unwrap();
        assert!(d.apply(&z).unwrap().coeffs().iter().all(|&c| c == 0.0));
        assert!(derivative_op(1, 1, 4).is_err());
    }

    #[test]
    fn derivative_matches_pointwise_derivative() {
        // d/dt of h_3 evaluated against a finite difference
        let f = unit(1, 6, &[3]);
        let df = derivative_op(0, 1, 6).unwrap().apply(&f).unwrap();
        for &t in &[-1.3, 0.2, 0.9] {
            let e = 1e-6;
            let fd = (f.eval(&[t + e]).unwrap() - f.eval(&[t - e]).unwrap()) / (2.0 * e);
            assert_abs_diff_eq!(df.eval(&[t]).unwrap(), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn derivative_is_antisymmetric_and_banded() {
        let d = derivative_op(1, 2, 6).unwrap();
        let t = d.transpose();
        for (r, c, v) in d.triplets() {
            assert_eq!(t.get(r, c), -v);
            let b = d.basis();
            assert_eq!(b.degree(r).abs_diff(b.degree(c)), 1);
        }
    }

    #[test]
    fn second_derivative_exact_on_truncation() {
        // d^2 h_0 = -1/2 h_0 + 1/sqrt(2) h_2, at N = 2 the top shell is kept
        let dd = second_derivative_op(0, 0, 1, 2).unwrap();
        assert_coeffs(&dd.apply(&unit(1, 2, &[0])).unwrap(), &[-0.5, 0.0, R2], 1e-15);
        // on the top shell the naive composition loses the N+1 round trip
        let naive = derivative_op(0, 1, 2).unwrap();
        let naive = naive.compose(&naive).unwrap();
        let h2 = unit(1, 2, &[2]);
        assert!((dd.apply(&h2).unwrap().coeffs()[2] - naive.apply(&h2).unwrap().coeffs()[2]).abs() > 0.5);
    }

    #[test]
    fn translation_examples() {
        let t = translation_matrix(&[1.0], 1, 10, 28).unwrap();
        assert_abs_diff_eq!(t.get(0, 0), (-0.25f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(t.get(0, 0), 0.778_800_783_071_404_9, epsilon = 1e-14);
        let id = translation_matrix(&[0.0, 0.0], 2, 5, 18).unwrap();
        assert_eq!(id.triplets(), CoeffOperator::identity(Basis::new(2, 5).unwrap()).triplets());
    }

    #[test]
    fn translation_matches_pointwise_shift() {
        // tau_x f (y) = f(y - x), checked pointwise for a low-degree f at N = 40
        let f = project(|y| (1.0 + y[0] - 0.5 * y[1]) * (-(y[0] * y[0] + y[1] * y[1]) / 2.0).exp(), 2, 30, 40).unwrap();
        let tr = Translator::with_default_order(Arc::clone(f.basis())).unwrap();
        let x = [0.4, -0.3];
        let g = tr.apply(&x, &f).unwrap();
        for y in [[0.0, 0.0], [1.0, -0.5], [-0.7, 0.9]] {
            let expect = f.eval(&[y[0] - x[0], y[1] - x[1]]).unwrap();
            assert_abs_diff_eq!(g.eval(&y).unwrap(), expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn translator_agrees_with_dense_matrix() {
        let basis = Basis::new(2, 8).unwrap();
        let tr = Translator::new(Arc::clone(&basis), 24).unwrap();
        let c: Vec<f64> = (0..basis.len()).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let f = HermiteRep::new(2, 8, c, 0.0).unwrap();
        let x = [0.7, -1.2];
        let dense = translation_matrix(&x, 2, 8, 24).unwrap().apply(&f).unwrap();
        let fast = tr.apply(&x, &f).unwrap();
        for (a, b) in dense.coeffs().iter().zip(fast.coeffs()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
        }
    }

    #[test]
    fn translation_transpose_is_reverse_shift() {
        let t = translation_matrix(&[0.6], 1, 12, 32).unwrap();
        let u = translation_matrix(&[-0.6], 1, 12, 32).unwrap();
        let tt = t.transpose();
        for (r, c, v) in tt.triplets() {
            assert_abs_diff_eq!(v, u.get(r, c), epsilon = 1e-13);
        }
    }

    #[test]
    fn l2_isometry_at_n40() {
        let basis = Basis::new(1, 40).unwrap();
        let tr = Translator::with_default_order(Arc::clone(&basis)).unwrap();
        let mut c = vec![0.0; 41];
        for (k, v) in c.iter_mut().take(21).enumerate() {
            *v = 1.0 / (1.0 + k as f64);
        }
        let f = HermiteRep::new(1, 40, c, 0.0).unwrap();
        for x in [-1.0, -0.4, 0.3, 1.0] {
            let g = tr.apply(&[x], &f).unwrap();
            assert_abs_diff_eq!(norm_p(&g, 0.0).unwrap(), norm_p(&f, 0.0).unwrap(), epsilon = 1e-6);
        }
    }

    #[test]
    fn adjoint_examples() {
        let b = Basis::new(2, 4).unwrap();
        let id = CoeffOperator::identity(Arc::clone(&b));
        assert_eq!(adjoint_in_p(&id, 1.7).triplets(), id.triplets());
        let d = derivative_op(0, 2, 4).unwrap();
        let a0 = adjoint_in_p(&d, 0.0);
        assert_eq!(a0.triplets(), d.transpose().triplets());
    }

    #[test]
    fn spde_operator_examples() {
        let ops = SpaceOperators::new(1, 6).unwrap();
        let h0 = unit(1, 6, &[0]);
        let sigma = vec![vec![h0.clone()]];
        let zero = HermiteRep::zeros(1, 6, 0.0).unwrap();
        let a = ops.op_a(&h0, &sigma).unwrap();
        assert_coeffs(&a[0], &[0.0, R2, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-15);
        assert!(ops.op_a(&zero, &sigma).unwrap()[0].coeffs().iter().all(|&c| c == 0.0));
        let l = ops.op_l(&h0, &sigma, std::slice::from_ref(&zero)).unwrap();
        assert_coeffs(&l, &[-0.25, 0.0, 0.5 * R2, 0.0, 0.0, 0.0, 0.0], 1e-15);
        let l0 = ops.op_l(&h0, &[vec![zero.clone()]], std::slice::from_ref(&zero)).unwrap();
        assert!(l0.coeffs().iter().all(|&c| c == 0.0));
        let lt = ops.op_ltilde(&h0, &sigma, std::slice::from_ref(&zero), &[(1.0, vec![0.0])]).unwrap();
        assert_eq!(lt, l);
        assert!(ops.op_l(&h0, &sigma, &[]).is_err());
    }

    #[test]
    fn jump_correction_is_second_order_small() {
        // (tau_x - Id + x d) h_0: matrix oracle with the dense translation
        let ops = SpaceOperators::new(1, 30).unwrap();
        let h0 = unit(1, 30, &[0]);
        let mut prev = f64::INFINITY;
        for x in [0.5, 0.25, 0.125] {
            let corr = ops.jump_correction(&h0, &[(1.0, vec![x])]).unwrap();
            let t = translation_matrix(&[x], 1, 30, 68).unwrap().apply(&h0).unwrap();
            let dh = derivative_op(0, 1, 30).unwrap().apply(&h0).unwrap();
            let oracle = t.sub(&h0).unwrap().axpy(x, &dh).unwrap();
            for (a, b) in corr.coeffs().iter().zip(oracle.coeffs()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
            }
            let n = norm_p(&corr, -2.0).unwrap();
            assert!(n / (x * x) < 1.0);
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn coo_export() {
        let d = derivative_op(0, 1, 1).unwrap();
        let mut buf = Vec::new();
        d.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("0 1 "));
        assert!(lines[1].starts_with("1 0 -"));
    }

    fn low_degree_rep(d: usize, n: usize, head: usize, seed: Vec<f64>) -> HermiteRep {
        let b = Basis::new(d, n).unwrap();
        let keep = b.positions_up_to(head).end;
        let mut c = vec![0.0; b.len()];
        for (k, v) in c.iter_mut().take(keep).enumerate() {
            *v = seed[k % seed.len()] * (1.0 + k as f64).powf(-0.5);
        }
        HermiteRep::new(d, n, c, 0.0).unwrap()
    }

    proptest! {
        #[test]
        fn adjoint_identity(fs in prop::collection::vec(-1.0f64..1.0, 8..16),
                            gs in prop::collection::vec(-1.0f64..1.0, 8..16),
                            p in -2.0f64..2.0, axis in 0usize..2) {
            let n = 12;
            let f = low_degree_rep(2, n, n - 2, fs);
            let g = low_degree_rep(2, n, n - 2, gs);
            let d = derivative_op(axis, 2, n).unwrap();
            let lhs = inner_p(&d.apply(&f).unwrap(), &g, p).unwrap();
            let rhs = inner_p(&f, &adjoint_in_p(&d, p).apply(&g).unwrap(), p).unwrap();
            let scale = norm_p(&f, p).unwrap() * norm_p(&g, p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn translation_commutes_with_derivative(x in -1.0f64..1.0, fs in prop::collection::vec(-1.0f64..1.0, 4..10)) {
            let n = 40;
            let f = low_degree_rep(1, n, n - 2, fs);
            let ops = SpaceOperators::new(1, n).unwrap();
            let a = ops.translate(&[x], &ops.derivative(0).apply(&f).unwrap()).unwrap();
            let b = ops.derivative(0).apply(&ops.translate(&[x], &f).unwrap()).unwrap();
            let diff = a.sub(&b).unwrap().truncate_to_degree(n - 2);
            prop_assert!(norm_p(&diff, 0.0).unwrap() <= 1e-6 * (1.0 + norm_p(&f, 0.0).unwrap()));
        }

        #[test]
        fn derivative_pairing_matches_correction_operator(fs in prop::collection::vec(-1.0f64..1.0, 8..20), p in -1.5f64..1.5) {
            let n = 14;
            let phi = low_degree_rep(1, n, n - 2, fs);
            let d = derivative_op(0, 1, n).unwrap();
            let tt = d.add_scaled(1.0, &adjoint_in_p(&d, -p - 1.0)).unwrap();
            let lhs = 2.0 * inner_p(&phi, &d.apply(&phi).unwrap(), -p - 1.0).unwrap();
            let rhs = inner_p(&tt.apply(&phi).unwrap(), &phi, -p - 1.0).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn translation_continuity() {
        let n = 30;
        let ops = SpaceOperators::new(1, n).unwrap();
        let phi = low_degree_rep(1, n, 10, vec![0.3, -0.8, 0.5]);
        let base = ops.translate(&[0.4], &phi).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-3, 1e-4] {
            let moved = ops.translate(&[0.4 + delta], &phi).unwrap();
            let gap = norm_p(&moved.sub(&base).unwrap(), 1.0).unwrap();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-2);
    }
}
