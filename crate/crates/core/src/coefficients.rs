//! SDE/SPDE coefficients and checks of their standing hypotheses.
//!
//! Diffusion and drift are test functions `sigma_ij, b_i`; the SDE sees them
//! through the pairings `sigma_bar(z) = sigma[tau_z xi]`. Jump coefficients
//! are either separable, `F(y, x) = h f1(x) (gamma_1[y], ..., gamma_d[y])`,
//! or the built-in identity `F(y, x) = x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{norm, JumpMeasure, LevyModel};
use crate::operators::{dot, SpaceOperators};
use crate::sobolev::{norm_p, HermiteRep};

/// Scalar function of the jump mark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MarkFunction {
    Constant { value: f64 },
    /// `scale / |x|`.
    InverseNorm { scale: f64 },
    /// `scale / (1 - |x|)`, unbounded near the unit sphere.
    InverseGap { scale: f64 },
    /// `scale * |x|`.
    Norm { scale: f64 },
    /// `scale * |x|^exponent`.
    Power { scale: f64, exponent: f64 },
}

impl MarkFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        match *self {
            MarkFunction::Constant { value } => value,
            MarkFunction::InverseNorm { scale } => scale / r,
            MarkFunction::InverseGap { scale } => scale / (1.0 - r),
            MarkFunction::Norm { scale } => scale * r,
            MarkFunction::Power { scale, exponent } => scale * r.powf(exponent),
        }
    }
}

/// A jump coefficient `F` (small marks) or `G` (large marks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpCoefficient {
    Zero,
    /// `h * mark(x) * (gamma_i[y])_i`.
    Separable { h: f64, mark: MarkFunction, gamma: Vec<HermiteRep> },
    /// `F(y, x) = x`.
    IdentityMark,
}

impl JumpCoefficient {
    fn is_zero(&self) -> bool {
        matches!(self, JumpCoefficient::Zero)
    }
}

/// Diffusion, drift and jump coefficients on one truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// `sigma[i][j]`, a `d x d` array.
    pub sigma: Vec<Vec<HermiteRep>>,
    pub b: Vec<HermiteRep>,
    pub f: JumpCoefficient,
    pub g: JumpCoefficient,
}

/// All pairings of a coefficient set against one distribution `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frozen {
    pub sigma: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    f_pairs: Vec<f64>,
    g_pairs: Vec<f64>,
}

impl Frozen {
    fn jump(coef: &JumpCoefficient, pairs: &[f64], x: &[f64]) -> Vec<f64> {
        match coef {
            JumpCoefficient::Zero => vec![0.0; x.len()],
            JumpCoefficient::IdentityMark => x.to_vec(),
            JumpCoefficient::Separable { h, mark, .. } => {
                let s = h * mark.eval(x);
                pairs.iter().map(|g| s * g).collect()
            }
        }
    }
}

impl CoefficientSet {
    /// All coefficients zero on the `(d, N)` truncation.
    pub fn zero(d: usize, n_max: usize, p: f64) -> Result<Self> {
        let z = HermiteRep::zeros(d, n_max, p)?;
        Ok(CoefficientSet {
            sigma: vec![vec![z.clone(); d]; d],
            b: vec![z; d],
            f: JumpCoefficient::Zero,
            g: JumpCoefficient::Zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Checks shapes against the truncation of `xi`.
    pub fn validate(&self, xi: &HermiteRep) -> Result<()> {
        let d = xi.dim();
        let same = |r: &HermiteRep| r.same_shape(xi);
        if self.sigma.len() != d || self.sigma.iter().any(|row| row.len() != d) {
            return Err(Error::config("coefficients.sigma", format!("must be a {d}x{d} array")));
        }
        if self.b.len() != d {
            return Err(Error::config("coefficients.b", format!("must have {d} entries")));
        }
        if !self.sigma.iter().flatten().all(same) || !self.b.iter().all(same) {
            return Err(Error::config("coefficients", "sigma and b must share the (d, N) of the initial condition"));
        }
        for (name, c) in [("f", &self.f), ("g", &self.g)] {
            if let JumpCoefficient::Separable { h, gamma, .. } = c {
                if gamma.len() != d || !gamma.iter().all(same) {
                    return Err(Error::config(format!("coefficients.{name}.gamma"), format!("must have {d} entries on the same truncation")));
                }
                if !h.is_finite() {
                    return Err(Error::config(format!("coefficients.{name}.h"), "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Pairs every coefficient with `y`.
    pub fn frozen(&self, y: &HermiteRep) -> Frozen {
        let c = y.coeffs();
        let pairs = |coef: &JumpCoefficient| match coef {
            JumpCoefficient::Separable { gamma, .. } => gamma.iter().map(|g| dot(g.coeffs(), c)).collect(),
            _ => Vec::new(),
        };
        Frozen {
            sigma: self.sigma.iter().map(|row| row.iter().map(|s| dot(s.coeffs(), c)).collect()).collect(),
            b: self.b.iter().map(|s| dot(s.coeffs(), c)).collect(),
            f_pairs: pairs(&self.f),
            g_pairs: pairs(&self.g),
        }
    }

    /// `F(y, x)` for a frozen `y`; no range check on `x`.
    pub fn f_frozen(&self, fr: &Frozen, x: &[f64]) -> Vec<f64> {
        Frozen::jump(&self.f, &fr.f_pairs, x)
    }

    /// `G(y, x)` for a frozen `y`; no range check on `x`.
    pub fn g_frozen(&self, fr: &Frozen, x: &[f64]) -> Vec<f64> {
        Frozen::jump(&self.g, &fr.g_pairs, x)
    }

    pub fn has_small_jumps(&self) -> bool {
        !self.f.is_zero()
    }

    /// `F(y, x)` for `0 < |x| < 1`.
    pub fn f_eval(&self, y: &HermiteRep, x: &[f64]) -> Result<Vec<f64>> {
        let r = norm(x);
        if !(r > 0.0 && r < 1.0) || x.len() != self.dim() {
            return Err(Error::invalid(format!("small-jump mark {x:?} outside 0 < |x| < 1")));
        }
        Ok(self.f_frozen(&self.frozen(y), x))
    }

    /// `G(y, x)` for `|x| >= 1`.
    pub fn g_eval(&self, y: &HermiteRep, x: &[f64]) -> Result<Vec<f64>> {
        if norm(x) < 1.0 || x.len() != self.dim() {
            return Err(Error::invalid(format!("large-jump mark {x:?} outside |x| >= 1")));
        }
        Ok(self.g_frozen(&self.frozen(y), x))
    }
}

/// `sigma_bar(z; xi) = sigma[tau_z xi]`.
pub fn bar_sigma(z: &[f64], xi: &HermiteRep, set: &CoefficientSet, ops: &SpaceOperators) -> Result<Vec<Vec<f64>>> {
    let y = ops.translate(z, xi)?;
    Ok(set.frozen(&y).sigma)
}

/// `b_bar(z; xi) = b[tau_z xi]`.
pub fn bar_b(z: &[f64], xi: &HermiteRep, set: &CoefficientSet, ops: &SpaceOperators) -> Result<Vec<f64>> {
    let y = ops.translate(z, xi)?;
    Ok(set.frozen(&y).b)
}

/// Options for [`hypothesis_report`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisOptions {
    /// Any supremum above this is treated as unbounded.
    pub bound: f64,
    /// Radius `n` of the `|z| <= n` region for the bounded set and the
    /// Lipschitz grid.
    pub radius: f64,
    /// Grid points per axis on `[-n, n]`.
    pub grid_points: usize,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            bound: 1e3,
            radius: 2.0,
            grid_points: 401,
        }
    }
}

/// Outcome of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

/// Numbers behind the checks, plus their verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub p: f64,
    pub beta: f64,
    pub sup_c_x: f64,
    pub int_c_x_sq: f64,
    pub sup_f_at_zero: f64,
    pub int_f_at_zero_sq: f64,
    pub g_sup_sampled: f64,
    pub g_sup_certificate: f64,
    pub loc_lip_b: f64,
    pub loc_lip_sigma: f64,
    pub loc_lip_f: f64,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect()
    }
}

/// Lipschitz constant of `y -> F(y, x)` in `||.||_{-p-1/2}`.
pub fn lipschitz_certificate(coef: &JumpCoefficient, x: &[f64], p: f64) -> f64 {
    match coef {
        JumpCoefficient::Zero | JumpCoefficient::IdentityMark => 0.0,
        JumpCoefficient::Separable { h, mark, gamma } => {
            let g: f64 = gamma.iter().map(|r| norm_p(r, p + 0.5).map_or(f64::INFINITY, |n| n * n)).sum();
            h.abs() * mark.eval(x).abs() * g.sqrt()
        }
    }
}

fn z_grid(d: usize, radius: f64, points: usize) -> Vec<Vec<f64>> {
    let points = points.max(2);
    let axis: Vec<f64> = (0..points).map(|k| -radius + 2.0 * radius * k as f64 / (points - 1) as f64).collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

fn sup_over<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, |m, v| if v.is_nan() || v > m { v } else { m })
}

fn is_bounded(v: f64, bound: f64) -> bool {
    v.is_finite() && v <= bound
}

/// Evaluates the standing hypotheses for `set` with initial condition `xi`
/// and jump measure `model`. Never fails on a violation; it is recorded in
/// the report.
pub fn hypothesis_report(
    set: &CoefficientSet,
    xi: &HermiteRep,
    model: &LevyModel,
    p: f64,
    ops: &SpaceOperators,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    set.validate(xi)?;
    let d = xi.dim();
    let bound = opts.bound;
    let mut checks = Vec::new();
    let mut push = |id: &str, passed: bool, detail: String| {
        checks.push(HypothesisCheck {
            id: id.to_string(),
            passed,
            detail,
        })
    };

    let beta = sup_over(set.sigma.iter().flatten().chain(&set.b).map(|r| norm_p(r, p).unwrap_or(f64::INFINITY)));
    push("sigma-b", is_bounded(beta, bound), format!("beta = {beta:e}"));

    // Small-jump hypotheses, on the support of the small-jump measure.
    let small_nodes = model.small.nodes(d);
    let c_x: Vec<f64> = small_nodes.iter().map(|(_, x)| lipschitz_certificate(&set.f, x, p)).collect();
    let sup_c_x = sup_over(c_x.iter().copied());
    let int_c_x_sq: f64 = small_nodes.iter().zip(&c_x).map(|((w, _), c)| w * c * c).sum();
    push(
        "F1",
        c_x.iter().all(|c| c.is_finite()),
        "C_x = |h| |f1(x)| (sum_i ||gamma_i||_{p+1/2}^2)^(1/2) on the support".to_string(),
    );
    push(
        "F2",
        is_bounded(sup_c_x, bound) && is_bounded(int_c_x_sq, bound),
        format!("sup C_x = {sup_c_x:e}, int C_x^2 dnu = {int_c_x_sq:e}"),
    );
    let zero = HermiteRep::zeros(d, xi.max_degree(), -p)?;
    let fz = set.frozen(&zero);
    let f0: Vec<f64> = small_nodes.iter().map(|(_, x)| norm(&set.f_frozen(&fz, x))).collect();
    let sup_f_at_zero = sup_over(f0.iter().copied());
    let int_f_at_zero_sq: f64 = small_nodes.iter().zip(&f0).map(|((w, _), v)| w * v * v).sum();
    push(
        "F3",
        is_bounded(sup_f_at_zero, bound) && is_bounded(int_f_at_zero_sq, bound),
        format!("sup |F(0,x)| = {sup_f_at_zero:e}, int |F(0,x)|^2 dnu = {int_f_at_zero_sq:e}"),
    );

    push("G1", true, "G is continuous in y by construction".to_string());

    // Bounded set K = {tau_z xi : |z| <= n}, sampled on the grid.
    let grid: Vec<Vec<f64>> = z_grid(d, opts.radius, opts.grid_points)
        .into_iter()
        .filter(|z| norm(z) <= opts.radius + 1e-12)
        .collect();
    let translates: Vec<HermiteRep> = grid.iter().map(|z| ops.translate(z, xi)).collect::<Result<_>>()?;
    let frozen: Vec<Frozen> = translates.iter().map(|y| set.frozen(y)).collect();
    let large_nodes = model.large.nodes(d);
    let large_support: Vec<Vec<f64>> = match &model.large {
        JumpMeasure::Atoms { atoms } => atoms.iter().filter(|a| a.rate > 0.0).map(|a| a.mark.clone()).collect(),
        JumpMeasure::Radial { .. } => large_nodes.iter().map(|(_, x)| x.clone()).collect(),
    };
    let g_sup_sampled = sup_over(
        frozen
            .iter()
            .flat_map(|fr| large_support.iter().map(move |x| norm(&set.g_frozen(fr, x)))),
    );
    let k_radius = sup_over(translates.iter().map(|y| norm_p(y, -p).unwrap_or(f64::INFINITY)));
    let g_sup_certificate = match &set.g {
        JumpCoefficient::Zero => 0.0,
        JumpCoefficient::IdentityMark => match &model.large {
            JumpMeasure::Radial { r_max, .. } => *r_max,
            JumpMeasure::Atoms { .. } => sup_over(large_support.iter().map(|x| norm(x))),
        },
        JumpCoefficient::Separable { h, mark, gamma } => {
            let g: f64 = gamma.iter().map(|r| norm_p(r, p).map_or(f64::INFINITY, |n| n * n)).sum();
            let m = sup_over(large_support.iter().map(|x| mark.eval(x).abs()));
            h.abs() * m * g.sqrt() * k_radius
        }
    };
    push(
        "G2",
        is_bounded(g_sup_sampled, bound) && is_bounded(g_sup_certificate, bound),
        format!("sup over K of |G| = {g_sup_sampled:e} sampled, {g_sup_certificate:e} certified (K radius {k_radius:e})"),
    );

    // loc-Lip ratios between grid neighbours along each axis.
    let points = opts.grid_points.max(2);
    let stride = |axis: usize| points.pow((d - 1 - axis) as u32);
    let full = z_grid(d, opts.radius, points);
    let mut index_of = vec![usize::MAX; full.len()];
    {
        let mut k = 0;
        for (i, z) in full.iter().enumerate() {
            if norm(z) <= opts.radius + 1e-12 {
                index_of[i] = k;
                k += 1;
            }
        }
    }
    let (mut lb, mut ls, mut lf) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..full.len() {
        let Some(a) = (index_of[i] != usize::MAX).then_some(index_of[i]) else {
            continue;
        };
        for axis in 0..d {
            let coord = (i / stride(axis)) % points;
            if coord + 1 == points {
                continue;
            }
            let j = i + stride(axis);
            if index_of[j] == usize::MAX {
                continue;
            }
            let bidx = index_of[j];
            let dz = norm(&full[i].iter().zip(&full[j]).map(|(x, y)| x - y).collect::<Vec<_>>());
            let (fa, fb) = (&frozen[a], &frozen[bidx]);
            let db = norm(&fa.b.iter().zip(&fb.b).map(|(x, y)| x - y).collect::<Vec<_>>());
            let dsig: f64 = fa
                .sigma
                .iter()
                .flatten()
                .zip(fb.sigma.iter().flatten())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let df: f64 = small_nodes
                .iter()
                .map(|(w, x)| {
                    let u = set.f_frozen(fa, x);
                    let v = set.f_frozen(fb, x);
                    w * u.iter().zip(&v).map(|(s, t)| (s - t) * (s - t)).sum::<f64>()
                })
                .sum::<f64>()
                .sqrt();
            lb = lb.max(db / dz);
            ls = ls.max(dsig / dz);
            lf = lf.max(df / dz);
        }
    }
    push(
        "loc-Lip",
        is_bounded(lb, bound) && is_bounded(ls, bound) && is_bounded(lf, bound),
        format!("max grid ratios: b {lb:e}, sigma {ls:e}, F (L2(nu)) {lf:e} on |z| <= {}", opts.radius),
    );

    Ok(HypothesisReport {
        p,
        beta,
        sup_c_x,
        int_c_x_sq,
        sup_f_at_zero,
        int_f_at_zero_sq,
        g_sup_sampled,
        g_sup_certificate,
        loc_lip_b: lb,
        loc_lip_sigma: ls,
        loc_lip_f: lf,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h0(n: usize) -> HermiteRep {
        HermiteRep::unit(1, n, &[0], 1.0).unwrap()
    }

    fn set_with(sigma: HermiteRep, b: HermiteRep) -> CoefficientSet {
        CoefficientSet {
            sigma: vec![vec![sigma]],
            b: vec![b],
            f: JumpCoefficient::Zero,
            g: JumpCoefficient::Zero,
        }
    }

    #[test]
    fn barred_coefficients() {
        let ops = SpaceOperators::new(1, 20).unwrap();
        let zero = HermiteRep::zeros(1, 20, 0.0).unwrap();
        let set = set_with(h0(20), h0(20));
        assert_eq!(bar_sigma(&[0.7], &zero, &set, &ops).unwrap(), vec![vec![0.0]]);
        assert_eq!(bar_sigma(&[0.0], &h0(20), &set, &ops).unwrap(), vec![vec![1.0]]);
        assert_abs_diff_eq!(bar_sigma(&[1.0], &h0(20), &set, &ops).unwrap()[0][0], 0.778_800_783_071_404_9, epsilon = 1e-13);
        assert_abs_diff_eq!(bar_b(&[1.0], &h0(20), &set, &ops).unwrap()[0], (-0.25f64).exp(), epsilon = 1e-13);
        assert_eq!(bar_b(&[0.0], &h0(20), &set, &ops).unwrap(), vec![1.0]);
    }

    #[test]
    fn jump_evaluation() {
        let mut set = set_with(h0(6), h0(6));
        let y = h0(6);
        let zero = HermiteRep::zeros(1, 6, 0.0).unwrap();
        set.f = JumpCoefficient::Separable {
            h: 1.0,
            mark: MarkFunction::Constant { value: 1.0 },
            gamma: vec![h0(6)],
        };
        assert_eq!(set.f_eval(&y, &[0.3]).unwrap(), vec![1.0]);
        assert_eq!(set.f_eval(&y, &[-0.9]).unwrap(), vec![1.0]);
        assert_eq!(set.f_eval(&zero, &[0.3]).unwrap(), vec![0.0]);
        assert!(set.f_eval(&y, &[1.0]).is_err());
        assert!(set.f_eval(&y, &[0.0]).is_err());
        set.f = JumpCoefficient::Separable {
            h: 1.0,
            mark: MarkFunction::Constant { value: 0.0 },
            gamma: vec![h0(6)],
        };
        assert_eq!(set.f_eval(&y, &[0.3]).unwrap(), vec![0.0]);
        set.f = JumpCoefficient::IdentityMark;
        assert_eq!(set.f_eval(&y, &[0.4]).unwrap(), vec![0.4]);
        set.g = JumpCoefficient::IdentityMark;
        assert_eq!(set.g_eval(&y, &[-1.5]).unwrap(), vec![-1.5]);
        assert!(set.g_eval(&y, &[0.5]).is_err());
        set.g = JumpCoefficient::Separable {
            h: 2.0,
            mark: MarkFunction::Constant { value: 1.0 },
            gamma: vec![h0(6)],
        };
        assert_eq!(set.g_eval(&zero, &[2.0]).unwrap(), vec![0.0]);
        assert_eq!(set.g_eval(&y, &[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn zero_set_passes_everything() {
        let ops = SpaceOperators::new(1, 10).unwrap();
        let set = CoefficientSet::zero(1, 10, 1.0).unwrap();
        let model = LevyModel::new(1, JumpMeasure::atom(vec![0.5], 1.0), JumpMeasure::empty()).unwrap();
        let opts = HypothesisOptions {
            grid_points: 21,
            ..Default::default()
        };
        let r = hypothesis_report(&set, &h0(10), &model, 1.0, &ops, &opts).unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
        assert_eq!(r.sup_c_x, 0.0);
        assert_eq!(r.int_c_x_sq, 0.0);
    }

    #[test]
    fn inverse_norm_mark_certificate() {
        let n = 10;
        let p = 1.0;
        let ops = SpaceOperators::new(1, n).unwrap();
        let gamma = HermiteRep::new(1, n, (0..=n).map(|k| 0.5f64.powi(k as i32)).collect(), p + 0.5).unwrap();
        let lip = norm_p(&gamma, p + 0.5).unwrap();
        let mut set = CoefficientSet::zero(1, n, p).unwrap();
        set.f = JumpCoefficient::Separable {
            h: 1.0,
            mark: MarkFunction::InverseNorm { scale: 1.0 },
            gamma: vec![gamma],
        };
        let model = LevyModel::new(1, JumpMeasure::atom(vec![0.5], 1.0), JumpMeasure::empty()).unwrap();
        let opts = HypothesisOptions {
            grid_points: 21,
            ..Default::default()
        };
        let r = hypothesis_report(&set, &h0(n), &model, p, &ops, &opts).unwrap();
        assert_abs_diff_eq!(r.sup_c_x, 2.0 * lip, epsilon = 1e-12);
        assert_abs_diff_eq!(r.int_c_x_sq, 4.0 * lip * lip, epsilon = 1e-10);
        assert!(r.all_passed(), "{:?}", r.checks);
    }

    #[test]
    fn loc_lip_gaussian_overlap() {
        // sigma = xi = h_0: sigma_bar(z) = e^{-z^2/4}, max slope |z/2| e^{-z^2/4} at z = sqrt(2)
        let ops = SpaceOperators::new(1, 30).unwrap();
        let set = set_with(h0(30), HermiteRep::zeros(1, 30, 1.0).unwrap());
        let model = LevyModel::brownian(1);
        let r = hypothesis_report(&set, &h0(30), &model, 1.0, &ops, &HypothesisOptions::default()).unwrap();
        let oracle = (0.5f64).sqrt() * (-0.5f64).exp();
        assert_abs_diff_eq!(r.loc_lip_sigma, oracle, epsilon = 1e-4);
        assert!(r.loc_lip_sigma <= oracle);
        assert_eq!(r.loc_lip_b, 0.0);
    }

    #[test]
    fn near_boundary_atom_is_flagged() {
        let ops = SpaceOperators::new(1, 10).unwrap();
        let mut set = CoefficientSet::zero(1, 10, 1.0).unwrap();
        set.f = JumpCoefficient::Separable {
            h: 1.0,
            mark: MarkFunction::InverseGap { scale: 1.0 },
            gamma: vec![h0(10)],
        };
        let model = LevyModel::new(1, JumpMeasure::atom(vec![0.9999], 1.0), JumpMeasure::empty()).unwrap();
        let opts = HypothesisOptions {
            grid_points: 21,
            ..Default::default()
        };
        let r = hypothesis_report(&set, &h0(10), &model, 1.0, &ops, &opts).unwrap();
        assert!(r.failed_ids().contains(&"F2"));
    }

    fn arb_rep(n: usize) -> impl Strategy<Value = HermiteRep> {
        prop::collection::vec(-2.0f64..2.0, n + 1).prop_map(move |c| HermiteRep::new(1, n, c, -1.0).unwrap())
    }

    proptest! {
        #[test]
        fn separable_lipschitz_bound(y1 in arb_rep(8), y2 in arb_rep(8), g in arb_rep(8), x in 0.05f64..0.95, p in -1.0f64..2.0) {
            let set = CoefficientSet {
                f: JumpCoefficient::Separable { h: -1.5, mark: MarkFunction::InverseNorm { scale: 0.3 }, gamma: vec![g] },
                ..CoefficientSet::zero(1, 8, p).unwrap()
            };
            let a = set.f_eval(&y1, &[x]).unwrap();
            let b = set.f_eval(&y2, &[x]).unwrap();
            let dist = norm_p(&y1.sub(&y2).unwrap(), -p - 0.5).unwrap();
            let cx = lipschitz_certificate(&set.f, &[x], p);
            prop_assert!((a[0] - b[0]).abs() <= cx * dist * (1.0 + 1e-8) + 1e-12);
        }

        #[test]
        fn top_shell_perturbation(y in arb_rep(8), g in arb_rep(8), eps in -1.0f64..1.0, p in -1.0f64..2.0) {
            let set = CoefficientSet {
                f: JumpCoefficient::Separable { h: 1.0, mark: MarkFunction::Constant { value: 1.0 }, gamma: vec![g] },
                ..CoefficientSet::zero(1, 8, p).unwrap()
            };
            // coefficient on h_8 with weighted size |eps| in ||.||_{-p-1/2}
            let w = (17.0f64).powf(-p - 0.5);
            let mut c = vec![0.0; 9];
            c[8] = eps / w;
            let bump = HermiteRep::new(1, 8, c, -p).unwrap();
            let moved = y.axpy(1.0, &bump).unwrap();
            let a = set.f_eval(&y, &[0.5]).unwrap()[0];
            let b = set.f_eval(&moved, &[0.5]).unwrap()[0];
            prop_assert!((a - b).abs() <= lipschitz_certificate(&set.f, &[0.5], p) * eps.abs() * (1.0 + 1e-8) + 1e-12);
        }
    }
}
