//! Experiment configuration: one JSON document describing the truncation,
//! initial condition, coefficients, noise and run settings. Its canonical
//! serialization is hashed and the hash is embedded in every output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{CoefficientSet, HypothesisOptions, JumpCoefficient, MarkFunction};
use crate::error::{Error, Result};
use crate::hermite::Basis;
use crate::inequalities::TranslationFitOptions;
use crate::noise::{JumpMeasure, LevyModel};
use crate::operators::{SpaceOperators, Translator};
use crate::quadrature::MAX_ORDER;
use crate::sobolev::HermiteRep;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub space: SpaceConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub hypotheses: HypothesisOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inequalities: Option<InequalityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Coefficients live in `S_p`, the solution in `S_{-p}`.
    pub p: f64,
    /// Translation quadrature order; `min(2N + 8, 200)` when absent.
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub xi: FunctionSpec,
    /// Starting point of the SDE; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
}

/// One term `coeff * h_index` of a Hermite sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HermiteTerm {
    pub index: Vec<u32>,
    pub coeff: f64,
}

/// A named constructor for an element of the truncated space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionSpec {
    #[default]
    Zero,
    HermiteSum { terms: Vec<HermiteTerm> },
    Delta { x0: Vec<f64> },
    /// A JSON file holding `{d, N, p, coeffs}`, relative to the config file.
    File { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpSpec {
    #[default]
    Zero,
    IdentityMark,
    Separable { h: f64, mark: MarkFunction, gamma: Vec<FunctionSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    /// `d x d` array; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<FunctionSpec>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<FunctionSpec>>,
    #[serde(default)]
    pub f: JumpSpec,
    #[serde(default)]
    pub g: JumpSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "JumpMeasure::empty")]
    pub small: JumpMeasure,
    #[serde(default = "JumpMeasure::empty")]
    pub large: JumpMeasure,
    #[serde(default)]
    pub seed: u64,
    pub paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest admissible Ito residual when it does not refine at first order.
    pub ito: f64,
    /// Accepted band for the first-order residual ratio per halving.
    pub first_order_band: [f64; 2],
    /// Smallest admissible weak-residual reduction per halving.
    pub weak_residual_factor: f64,
    /// Allowed `|Z - (U - kappa)|` when `kappa != 0`.
    pub correspondence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ito: 1e-8,
            first_order_band: [1.7, 2.3],
            weak_residual_factor: 1.3,
            correspondence: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Correspondence,
    WeakResidual,
    Ito,
    Uniqueness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Explosion threshold: paths stop once `|U| >= m`.
    pub m: f64,
    pub tolerances: Tolerances,
    /// Output directory used when `--out` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Number of `dt` halvings in refinement studies.
    pub refinements: usize,
    /// Residuals are paired with `h_j` for every index of degree `<= test_degree`.
    pub test_degree: usize,
    pub suites: Vec<Suite>,
    /// Every `snapshot_stride`-th base grid point is written to the snapshot file.
    pub snapshot_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 1e6,
            tolerances: Tolerances::default(),
            output_dir: None,
            refinements: 3,
            test_degree: 5,
            suites: vec![Suite::Correspondence, Suite::WeakResidual, Suite::Ito, Suite::Uniqueness],
            snapshot_stride: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicitySpec {
    pub p: f64,
    pub sigma: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderSpec {
    pub p: f64,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorSpec {
    pub p: f64,
    pub z: Vec<f64>,
    pub psi: FunctionSpec,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSpec {
    pub p: f64,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<TranslationFitOptions>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_legendre")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub monotonicity: Vec<MonotonicitySpec>,
    #[serde(default)]
    pub second_order: Vec<SecondOrderSpec>,
    #[serde(default)]
    pub taylor: Vec<TaylorSpec>,
    #[serde(default)]
    pub translation: Vec<TranslationSpec>,
}

fn default_samples() -> usize {
    1000
}

fn default_levels() -> Vec<usize> {
    vec![20, 30, 40]
}

fn default_legendre() -> usize {
    32
}

/// Everything a command needs, built from a validated config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub xi: HermiteRep,
    pub kappa: Vec<f64>,
    pub set: CoefficientSet,
    pub model: LevyModel,
    pub ops: SpaceOperators,
}

impl FunctionSpec {
    /// Builds on the `(d, N)` truncation with nominal index `p`.
    pub fn build(&self, d: usize, n: usize, p: f64, base: &Path, path: &str) -> Result<HermiteRep> {
        match self {
            FunctionSpec::Zero => HermiteRep::zeros(d, n, p),
            FunctionSpec::HermiteSum { terms } => {
                let basis = Basis::new(d, n)?;
                let mut c = vec![0.0; basis.len()];
                for (k, t) in terms.iter().enumerate() {
                    let at = format!("{path}.terms[{k}]");
                    if !t.coeff.is_finite() {
                        return Err(Error::config(format!("{at}.coeff"), "must be finite"));
                    }
                    let pos = basis
                        .position(&t.index)
                        .ok_or_else(|| Error::config(format!("{at}.index"), format!("not a multi-index of length {d} and degree <= {n}")))?;
                    c[pos] += t.coeff;
                }
                HermiteRep::from_basis(basis, c, p)
            }
            FunctionSpec::Delta { x0 } => {
                if x0.len() != d || x0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("{path}.x0"), format!("must be {d} finite numbers")));
                }
                HermiteRep::delta(x0, n, p)
            }
            FunctionSpec::File { path: file } => {
                let full = base.join(file);
                let text = fs::read_to_string(&full).map_err(|e| Error::config(format!("{path}.path"), format!("{}: {e}", full.display())))?;
                let rep: HermiteRep = serde_json::from_str(&text).map_err(|e| Error::config(format!("{path}.path"), e.to_string()))?;
                if rep.dim() != d || rep.max_degree() != n {
                    return Err(Error::config(format!("{path}.path"), format!("file holds d = {}, N = {}; expected d = {d}, N = {n}", rep.dim(), rep.max_degree())));
                }
                Ok(rep.with_index(p))
            }
        }
    }
}

impl JumpSpec {
    fn build(&self, d: usize, n: usize, p: f64, base: &Path, path: &str) -> Result<JumpCoefficient> {
        Ok(match self {
            JumpSpec::Zero => JumpCoefficient::Zero,
            JumpSpec::IdentityMark => JumpCoefficient::IdentityMark,
            JumpSpec::Separable { h, mark, gamma } => {
                if gamma.len() != d {
                    return Err(Error::config(format!("{path}.gamma"), format!("must have {d} entries")));
                }
                let gamma = gamma
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g.build(d, n, p, base, &format!("{path}.gamma[{i}]")))
                    .collect::<Result<_>>()?;
                JumpCoefficient::Separable { h: *h, mark: mark.clone(), gamma }
            }
        })
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    /// Reads a config file; relative `file` paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical compact serialization.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }

    /// Checks scalar fields; shapes of built objects are checked in [`Self::build`].
    pub fn validate(&self) -> Result<()> {
        let s = &self.space;
        if s.d == 0 {
            return Err(Error::config("space.d", "must be at least 1"));
        }
        if s.n < 2 {
            return Err(Error::config("space.N", "must be at least 2"));
        }
        if !s.p.is_finite() {
            return Err(Error::config("space.p", "must be finite"));
        }
        if let Some(q) = s.q {
            if q == 0 || q > MAX_ORDER {
                return Err(Error::config("space.Q", format!("must be in 1..={MAX_ORDER}")));
            }
        }
        if let Some(k) = &self.initial.kappa {
            if k.len() != s.d || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("initial.kappa", format!("must be {} finite numbers", s.d)));
            }
        }
        let nz = &self.noise;
        if !(nz.horizon.is_finite() && nz.horizon > 0.0) {
            return Err(Error::config("noise.horizon", "must be positive"));
        }
        if !(nz.dt.is_finite() && nz.dt > 0.0) {
            return Err(Error::config("noise.dt", "must be positive"));
        }
        if nz.paths == 0 {
            return Err(Error::config("noise.paths", "must be at least 1"));
        }
        let r = &self.run;
        if !(r.m.is_finite() && r.m > 0.0) {
            return Err(Error::config("run.m", "must be positive"));
        }
        if r.refinements > 12 {
            return Err(Error::config("run.refinements", "at most 12 halvings"));
        }
        if r.test_degree + 2 > s.n {
            return Err(Error::config("run.test_degree", format!("must be <= N - 2 = {}", s.n - 2)));
        }
        if r.snapshot_stride == 0 {
            return Err(Error::config("run.snapshot_stride", "must be at least 1"));
        }
        let t = &r.tolerances;
        if !(t.ito >= 0.0 && t.correspondence >= 0.0 && t.weak_residual_factor > 0.0 && t.first_order_band[0] <= t.first_order_band[1]) {
            return Err(Error::config("run.tolerances", "tolerances must be non-negative and the band ordered"));
        }
        let h = &self.hypotheses;
        if !(h.bound > 0.0 && h.radius > 0.0 && h.grid_points >= 2) {
            return Err(Error::config("hypotheses", "bound and radius must be positive, grid_points >= 2"));
        }
        if let Some(iq) = &self.inequalities {
            if iq.levels.is_empty() || iq.levels.iter().any(|&n| n < 2) {
                return Err(Error::config("inequalities.levels", "each level must be at least 2"));
            }
            if iq.quadrature_order == 0 {
                return Err(Error::config("inequalities.quadrature_order", "must be positive"));
            }
            for (k, m) in iq.monotonicity.iter().enumerate() {
                let d = m.b.len();
                if d == 0 || m.sigma.len() != d || m.sigma.iter().any(|row| row.is_empty() || row.len() != m.sigma[0].len()) {
                    return Err(Error::config(format!("inequalities.monotonicity[{k}]"), "sigma must be d x r with d = len(b)"));
                }
            }
            for (k, t) in iq.taylor.iter().enumerate() {
                if t.z.is_empty() || t.n < 2 {
                    return Err(Error::config(format!("inequalities.taylor[{k}]"), "z must be non-empty and N >= 2"));
                }
            }
            for (k, t) in iq.second_order.iter().enumerate() {
                if t.d == 0 {
                    return Err(Error::config(format!("inequalities.second_order[{k}].d"), "must be at least 1"));
                }
            }
            for (k, t) in iq.translation.iter().enumerate() {
                if t.d == 0 || t.n < 2 {
                    return Err(Error::config(format!("inequalities.translation[{k}]"), "d must be >= 1 and N >= 2"));
                }
            }
        }
        Ok(())
    }

    /// Validates and builds the initial condition, coefficients, noise model
    /// and operators.
    pub fn build(&self, base: &Path) -> Result<Experiment> {
        self.validate()?;
        let (d, n, p) = (self.space.d, self.space.n, self.space.p);
        let xi = self.initial.xi.build(d, n, -p, base, "initial.xi")?;
        let kappa = self.initial.kappa.clone().unwrap_or_else(|| vec![0.0; d]);
        let c = &self.coefficients;
        let mut set = CoefficientSet::zero(d, n, p)?;
        if let Some(sigma) = &c.sigma {
            if sigma.len() != d || sigma.iter().any(|row| row.len() != d) {
                return Err(Error::config("coefficients.sigma", format!("must be a {d}x{d} array")));
            }
            for (i, row) in sigma.iter().enumerate() {
                for (j, spec) in row.iter().enumerate() {
                    set.sigma[i][j] = spec.build(d, n, p, base, &format!("coefficients.sigma[{i}][{j}]"))?;
                }
            }
        }
        if let Some(b) = &c.b {
            if b.len() != d {
                return Err(Error::config("coefficients.b", format!("must have {d} entries")));
            }
            for (i, spec) in b.iter().enumerate() {
                set.b[i] = spec.build(d, n, p, base, &format!("coefficients.b[{i}]"))?;
            }
        }
        set.f = c.f.build(d, n, p, base, "coefficients.f")?;
        set.g = c.g.build(d, n, p, base, "coefficients.g")?;
        set.validate(&xi)?;
        let model = LevyModel::new(d, self.noise.small.clone(), self.noise.large.clone())?;
        let basis = Basis::new(d, n)?;
        let ops = match self.space.q {
            Some(q) => SpaceOperators::with_translator(Translator::new(basis, q)?)?,
            None => SpaceOperators::with_translator(Translator::with_default_order(basis)?)?,
        };
        Ok(Experiment {
            config: self.clone(),
            hash: self.hash()?,
            xi,
            kappa,
            set,
            model,
            ops,
        })
    }

    /// Overrides the base seed, as the `--seed` flag does.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.noise.seed = s;
        }
        self
    }
}
