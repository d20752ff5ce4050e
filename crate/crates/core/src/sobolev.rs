//! Truncated Hermite-coefficient representations of test functions and
//! tempered distributions, and the weighted inner products
//!
//! ```text
//! <f, g>_p = sum_{|n| <= N} (2|n| + d)^(2p) f_n g_n
//! ```
//!
//! The pairing between a distribution and a test function is the plain dot
//! product of coefficient vectors, whatever their nominal indices.

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hermite::{hermite_values_into, Basis, MultiIndex};
use crate::quadrature::gauss_hermite_rule;

/// Coefficients `c_n = <f, h_n>` for `|n| <= N`, in graded-lex order.
///
/// `nominal_index` records which space `S_p` the object is meant to live in.
/// It never affects arithmetic.
#[derive(Clone, Debug)]
pub struct HermiteRep {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
    pub nominal_index: f64,
}

impl PartialEq for HermiteRep {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.coeffs == other.coeffs && self.nominal_index == other.nominal_index
    }
}

impl HermiteRep {
    pub fn new(d: usize, n_max: usize, coeffs: Vec<f64>, p: f64) -> Result<Self> {
        let basis = Basis::new(d, n_max)?;
        Self::from_basis(basis, coeffs, p)
    }

    pub fn from_basis(basis: Arc<Basis>, coeffs: Vec<f64>, p: f64) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::invalid(format!(
                "coefficient vector has length {} but (d, N) = ({}, {}) needs {}",
                coeffs.len(),
                basis.dim(),
                basis.max_degree(),
                basis.len()
            )));
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("coefficient {} is not finite", basis.multi_index(k))));
        }
        Ok(HermiteRep {
            basis,
            coeffs,
            nominal_index: p,
        })
    }

    /// Wraps a vector already known to have the right length. Finite values
    /// are not re-checked; used on hot paths whose inputs were validated.
    pub(crate) fn from_parts(basis: Arc<Basis>, coeffs: Vec<f64>, p: f64) -> Self {
        debug_assert_eq!(coeffs.len(), basis.len());
        HermiteRep {
            basis,
            coeffs,
            nominal_index: p,
        }
    }

    pub fn zeros(d: usize, n_max: usize, p: f64) -> Result<Self> {
        let basis = Basis::new(d, n_max)?;
        let len = basis.len();
        Ok(Self::from_parts(basis, vec![0.0; len], p))
    }

    /// The single basis function `h_n`.
    pub fn unit(d: usize, n_max: usize, n: &[u32], p: f64) -> Result<Self> {
        let mut rep = Self::zeros(d, n_max, p)?;
        let k = rep
            .basis
            .position(n)
            .ok_or_else(|| Error::invalid(format!("multi-index {} outside the truncation", MultiIndex::new(n.to_vec()))))?;
        rep.coeffs[k] = 1.0;
        Ok(rep)
    }

    /// Truncated point mass at `x0`: `c_n = h_n(x0)`.
    pub fn delta(x0: &[f64], n_max: usize, p: f64) -> Result<Self> {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("delta: non-finite location"));
        }
        let basis = Basis::new(x0.len(), n_max)?;
        let coeffs = eval_basis_at(&basis, x0);
        Ok(Self::from_parts(basis, coeffs, p))
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn with_index(mut self, p: f64) -> Self {
        self.nominal_index = p;
        self
    }

    pub fn coeff(&self, n: &[u32]) -> Option<f64> {
        self.basis.position(n).map(|k| self.coeffs[k])
    }

    pub fn same_shape(&self, other: &HermiteRep) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis
    }

    fn check_shape(&self, other: &HermiteRep, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: shape mismatch (d, N) = ({}, {}) vs ({}, {})",
                self.dim(),
                self.max_degree(),
                other.dim(),
                other.max_degree()
            )))
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &HermiteRep) -> Result<HermiteRep> {
        self.check_shape(other, "axpy")?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + alpha * b).collect();
        Ok(Self::from_parts(Arc::clone(&self.basis), coeffs, self.nominal_index))
    }

    pub fn sub(&self, other: &HermiteRep) -> Result<HermiteRep> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> HermiteRep {
        let coeffs = self.coeffs.iter().map(|a| alpha * a).collect();
        Self::from_parts(Arc::clone(&self.basis), coeffs, self.nominal_index)
    }

    /// Zeroes every coefficient of degree above `max_degree`.
    pub fn truncate_to_degree(&self, max_degree: usize) -> HermiteRep {
        let keep = self.basis.positions_up_to(max_degree).end;
        let mut coeffs = self.coeffs.clone();
        coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
        Self::from_parts(Arc::clone(&self.basis), coeffs, self.nominal_index)
    }

    /// Pointwise value `sum_n c_n h_n(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid("eval: point dimension mismatch"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("eval: non-finite point"));
        }
        let values = eval_basis_at(&self.basis, x);
        Ok(values.iter().zip(&self.coeffs).map(|(h, c)| h * c).sum())
    }
}

/// `h_n(x)` for every `n` in the basis.
pub(crate) fn eval_basis_at(basis: &Basis, x: &[f64]) -> Vec<f64> {
    let n_max = basis.max_degree();
    let tables: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| {
            let mut h = vec![0.0; n_max + 1];
            hermite_values_into(xi, &mut h);
            h
        })
        .collect();
    basis
        .indices()
        .iter()
        .map(|n| n.entries().iter().zip(&tables).map(|(&k, t)| t[k as usize]).product())
        .collect()
}

/// `<f, g>_p`.
pub fn inner_p(f: &HermiteRep, g: &HermiteRep, p: f64) -> Result<f64> {
    f.check_shape(g, "inner_p")?;
    Ok(weighted_dot(&f.basis, &f.coeffs, &g.coeffs, p))
}

pub(crate) fn weighted_dot(basis: &Basis, a: &[f64], b: &[f64], p: f64) -> f64 {
    let d = basis.dim();
    let mut total = 0.0;
    let mut k = 0;
    for deg in 0..=basis.max_degree() {
        let end = crate::hermite::basis_size(d, deg);
        let w = ((2 * deg + d) as f64).powf(2.0 * p);
        let shell: f64 = a[k..end].iter().zip(&b[k..end]).map(|(x, y)| x * y).sum();
        total += w * shell;
        k = end;
    }
    total
}

/// `||f||_p`.
pub fn norm_p(f: &HermiteRep, p: f64) -> Result<f64> {
    Ok(weighted_dot(&f.basis, &f.coeffs, &f.coeffs, p).max(0.0).sqrt())
}

/// The pairing `u[phi] = sum_n u_n phi_n`.
pub fn duality(u: &HermiteRep, phi: &HermiteRep) -> Result<f64> {
    u.check_shape(phi, "duality")?;
    Ok(u.coeffs.iter().zip(&phi.coeffs).map(|(a, b)| a * b).sum())
}

/// Weighted mass of the two highest degree shells.
pub fn tail_mass(f: &HermiteRep, p: f64) -> f64 {
    let n_max = f.max_degree();
    let d = f.dim();
    let start = if n_max >= 2 { crate::hermite::basis_size(d, n_max - 2) } else { 0 };
    (start..f.coeffs.len())
        .map(|k| f.basis.weight(k, p) * f.coeffs[k] * f.coeffs[k])
        .sum()
}

/// `c_n = <f, h_n>` by `Q`-point tensor Gauss-Hermite quadrature.
pub fn project<F>(f: F, d: usize, n_max: usize, q: usize) -> Result<HermiteRep>
where
    F: Fn(&[f64]) -> f64,
{
    let basis = Basis::new(d, n_max)?;
    let rule = gauss_hermite_rule(q)?;
    let tables: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .map(|&t| {
            let mut h = vec![0.0; n_max + 1];
            hermite_values_into(t, &mut h);
            h
        })
        .collect();
    let mut coeffs = vec![0.0; basis.len()];
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let total = q.checked_pow(d as u32).ok_or_else(|| Error::invalid("project: quadrature grid too large"))?;
    for _ in 0..total {
        let mut w = 1.0;
        for a in 0..d {
            point[a] = rule.nodes[idx[a]];
            w *= rule.scaled_weights[idx[a]];
        }
        let value = f(&point);
        if !value.is_finite() {
            return Err(Error::Projection { node: point.clone() });
        }
        let fw = value * w;
        if fw != 0.0 {
            for (c, n) in coeffs.iter_mut().zip(basis.indices()) {
                let mut h = fw;
                for (a, &k) in n.entries().iter().enumerate() {
                    h *= tables[idx[a]][k as usize];
                }
                *c += h;
            }
        }
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < q {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(HermiteRep::from_parts(basis, coeffs, 0.0))
}

#[derive(Serialize, Deserialize)]
struct RepJson {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    p: f64,
    coeffs: Vec<f64>,
}

impl Serialize for HermiteRep {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RepJson {
            d: self.dim(),
            n: self.max_degree(),
            p: self.nominal_index,
            coeffs: self.coeffs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermiteRep {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = RepJson::deserialize(de)?;
        HermiteRep::new(raw.d, raw.n, raw.coeffs, raw.p).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite_values;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rep1(coeffs: &[f64]) -> HermiteRep {
        HermiteRep::new(1, coeffs.len() - 1, coeffs.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(HermiteRep::new(2, 2, vec![0.0; 5], 0.0).is_err());
        assert!(HermiteRep::new(1, 1, vec![0.0, f64::NAN], 0.0).is_err());
        assert!(HermiteRep::new(2, 2, vec![0.0; 6], 0.0).is_ok());
    }

    #[test]
    fn inner_product_examples() {
        let h2 = HermiteRep::unit(1, 4, &[2], 1.0).unwrap();
        assert_abs_diff_eq!(inner_p(&h2, &h2, 1.0).unwrap(), 25.0, epsilon = 1e-12);
        let f = rep1(&[1.0, 1.0]);
        let g = rep1(&[1.0, -1.0]);
        assert_abs_diff_eq!(inner_p(&f, &g, -1.0).unwrap(), 1.0 - 1.0 / 9.0, epsilon = 1e-15);
        let other = HermiteRep::zeros(1, 2, 0.0).unwrap();
        assert!(inner_p(&f, &other, 0.0).is_err());
    }

    #[test]
    fn norm_examples() {
        let h2 = HermiteRep::unit(1, 4, &[2], 1.0).unwrap();
        assert_abs_diff_eq!(norm_p(&h2, 1.0).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(norm_p(&HermiteRep::zeros(1, 4, 0.0).unwrap(), 3.0).unwrap(), 0.0);
        let f = rep1(&[1.0, 0.0, 0.0, 1.0]);
        let (a, b, c) = (norm_p(&f, -1.0).unwrap(), norm_p(&f, 0.0).unwrap(), norm_p(&f, 1.0).unwrap());
        assert!(a <= b && b <= c);
    }

    #[test]
    fn duality_examples() {
        let u = rep1(&[1.0, 2.0]);
        let phi = rep1(&[3.0, -1.0]);
        assert_eq!(duality(&u, &phi).unwrap(), 1.0);
        let a = HermiteRep::unit(2, 3, &[1, 1], 0.0).unwrap();
        let b = HermiteRep::unit(2, 3, &[0, 2], 0.0).unwrap();
        assert_eq!(duality(&a, &b).unwrap(), 0.0);
        assert_eq!(duality(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn tail_mass_examples() {
        let h0 = HermiteRep::unit(1, 6, &[0], 0.0).unwrap();
        assert_eq!(tail_mass(&h0, 1.0), 0.0);
        let mut c = vec![0.0; 7];
        c[0] = 1.0;
        c[6] = 1.0;
        assert_abs_diff_eq!(tail_mass(&rep1(&c), 0.0), 1.0, epsilon = 1e-15);
        let top = HermiteRep::new(2, 3, vec![0., 0., 0., 0., 0., 0., 1., 2., 3., 4.], 0.0).unwrap();
        assert_abs_diff_eq!(tail_mass(&top, 0.7), inner_p(&top, &top, 0.7).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let f = project(|x| hermite_values(3, x[0]).unwrap()[3], 1, 6, 8).unwrap();
        for (k, c) in f.coeffs().iter().enumerate() {
            assert_abs_diff_eq!(*c, if k == 3 { 1.0 } else { 0.0 }, epsilon = 1e-10);
        }
        let z = project(|_| 0.0, 2, 4, 6).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
        // <e^{-t^2/2}, h_0> = pi^{-1/4} sqrt(pi) = pi^{1/4}
        let g = project(|x| (-0.5 * x[0] * x[0]).exp(), 1, 8, 20).unwrap();
        assert_abs_diff_eq!(g.coeffs()[0], 1.331_335_363_800_389_7, epsilon = 1e-12);
        for k in (1..=8).step_by(2) {
            assert_abs_diff_eq!(g.coeffs()[k], 0.0, epsilon = 1e-14);
        }
        let err = project(|x| if x[0] > 0.0 { f64::NAN } else { 1.0 }, 1, 2, 4).unwrap_err();
        assert!(matches!(err, Error::Projection { .. }));
    }

    #[test]
    fn delta_matches_pointwise_values() {
        let d = HermiteRep::delta(&[0.3, -1.1], 5, -1.0).unwrap();
        for (k, n) in d.basis().indices().iter().enumerate() {
            assert_abs_diff_eq!(d.coeffs()[k], crate::hermite::eval_hd(n, &[0.3, -1.1]).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn json_round_trip() {
        let r = HermiteRep::new(2, 1, vec![1.0, -2.0, 0.5], -1.5).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"d":2,"N":1,"p":-1.5,"coeffs":[1.0,-2.0,0.5]}"#);
        let back: HermiteRep = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<HermiteRep>(r#"{"d":2,"N":1,"p":0,"coeffs":[1.0]}"#).is_err());
    }

    fn arb_rep(d: usize, n: usize) -> impl Strategy<Value = HermiteRep> {
        let len = crate::hermite::basis_size(d, n);
        prop::collection::vec(-3.0f64..3.0, len).prop_map(move |c| HermiteRep::new(d, n, c, 0.0).unwrap())
    }

    proptest! {
        #[test]
        fn norms_monotone_in_index(f in arb_rep(2, 6), p in -3.0f64..3.0, dq in 0.0f64..2.0) {
            prop_assert!(norm_p(&f, p).unwrap() <= norm_p(&f, p + dq).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn duality_is_reweighted_inner_product(u in arb_rep(2, 5), phi in arb_rep(2, 5), p in -2.0f64..2.0) {
            let b = u.basis();
            let wu: Vec<f64> = (0..b.len()).map(|k| b.weight(k, -0.5 * p) * u.coeffs()[k]).collect();
            let wphi: Vec<f64> = (0..b.len()).map(|k| b.weight(k, 0.5 * p) * phi.coeffs()[k]).collect();
            let lhs = duality(&u, &phi).unwrap();
            let rhs = weighted_dot(b, &wu, &wphi, 0.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let cs = norm_p(&u, -p).unwrap() * norm_p(&phi, p).unwrap();
            prop_assert!(lhs.abs() <= cs * (1.0 + 1e-12));
        }

        #[test]
        fn inner_product_symmetric_bilinear(f in arb_rep(1, 8), g in arb_rep(1, 8), h in arb_rep(1, 8), a in -2.0f64..2.0) {
            let fg = inner_p(&f, &g, 0.5).unwrap();
            prop_assert!((fg - inner_p(&g, &f, 0.5).unwrap()).abs() <= 1e-12 * (1.0 + fg.abs()));
            let lhs = inner_p(&f.axpy(a, &h).unwrap(), &g, 0.5).unwrap();
            let rhs = fg + a * inner_p(&h, &g, 0.5).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn projection_inverts_synthesis(f in arb_rep(2, 5)) {
            let g = project(|x| f.eval(x).unwrap(), 2, 5, 6).unwrap();
            for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
