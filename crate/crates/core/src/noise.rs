//! Seeded driving noise: Brownian increments, finite-activity small jumps
//! on `0 < |x| < 1` and large jumps on `|x| >= 1`.
//!
//! Each path owns four ChaCha8 streams derived from one per-path seed:
//! Brownian base increments, small-jump events, large-jump events, and the
//! bridge draws that place the Brownian path at jump times. Jump times are
//! inserted into the time grid, so the base increments never depend on how
//! many jumps occurred.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

const STREAM_BROWNIAN: u64 = 0;
const STREAM_SMALL: u64 = 1;
const STREAM_LARGE: u64 = 2;
const STREAM_BRIDGE: u64 = 3;

/// Relative slack used when counting grid cells, so `T / dt` that is an
/// integer up to rounding does not produce a spurious sliver cell.
const GRID_SLACK: f64 = 1e-9;

/// splitmix64 finalizer applied to `base + golden * (index + 1)`.
pub fn path_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A point mass `rate * delta_mark`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub rate: f64,
}

/// A jump measure restricted to one region of `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpMeasure {
    /// Finite list of weighted atoms.
    Atoms { atoms: Vec<Atom> },
    /// Rotation-invariant density `c |x|^(-d-alpha)` on `r_min <= |x| < r_max`
    /// (`r_max` may be infinite). Supported for `d <= 2` and `alpha > 0`.
    Radial {
        c: f64,
        alpha: f64,
        r_min: f64,
        r_max: f64,
        #[serde(default = "default_radial_nodes")]
        radial_nodes: usize,
        #[serde(default = "default_angular_nodes")]
        angular_nodes: usize,
    },
}

fn default_radial_nodes() -> usize {
    16
}

fn default_angular_nodes() -> usize {
    16
}

impl JumpMeasure {
    pub fn empty() -> Self {
        JumpMeasure::Atoms { atoms: Vec::new() }
    }

    pub fn atom(mark: Vec<f64>, rate: f64) -> Self {
        JumpMeasure::Atoms {
            atoms: vec![Atom { mark, rate }],
        }
    }

    /// Surface area of the unit sphere in `R^d`, for `d <= 2`.
    fn sphere_area(d: usize) -> f64 {
        if d == 1 {
            2.0
        } else {
            2.0 * PI
        }
    }

    /// Total mass.
    pub fn total_mass(&self, d: usize) -> f64 {
        match self {
            JumpMeasure::Atoms { atoms } => atoms.iter().map(|a| a.rate).sum(),
            JumpMeasure::Radial {
                c, alpha, r_min, r_max, ..
            } => c * Self::sphere_area(d) * (r_min.powf(-alpha) - r_max.powf(-alpha)) / alpha,
        }
    }

    /// `(weight, mark)` pairs such that `sum w g(x)` is the measure's
    /// integral of `g`. Exact for atoms; a fixed-order rule for densities.
    pub fn nodes(&self, d: usize) -> Vec<(f64, Vec<f64>)> {
        match self {
            JumpMeasure::Atoms { atoms } => atoms.iter().map(|a| (a.rate, a.mark.clone())).collect(),
            JumpMeasure::Radial {
                c,
                alpha,
                r_min,
                r_max,
                radial_nodes,
                angular_nodes,
            } => {
                // Radial factor r^(-1-alpha) dr. Finite annuli use v = ln r
                // (smooth integrand); an infinite outer radius uses u = r^(-alpha).
                let radial: Vec<(f64, f64)> = if r_max.is_finite() {
                    let (vs, ws) = gauss_legendre(*radial_nodes, r_min.ln(), r_max.ln()).expect("positive order");
                    vs.iter().zip(&ws).map(|(v, w)| (v.exp(), w * (-alpha * v).exp())).collect()
                } else {
                    let (us, ws) = gauss_legendre(*radial_nodes, 0.0, r_min.powf(-alpha)).expect("positive order");
                    us.iter().zip(&ws).map(|(u, w)| (u.powf(-1.0 / alpha), w / alpha)).collect()
                };
                let dirs = directions(d, *angular_nodes);
                let mut out = Vec::with_capacity(radial.len() * dirs.len());
                for (r, w) in &radial {
                    for (dw, dir) in &dirs {
                        out.push((c * w * dw, dir.iter().map(|v| r * v).collect()));
                    }
                }
                out
            }
        }
    }

    /// `int g d(measure)`.
    pub fn integrate<G: FnMut(&[f64]) -> f64>(&self, d: usize, mut g: G) -> f64 {
        self.nodes(d).iter().map(|(w, x)| w * g(x)).sum()
    }

    /// One mark from the normalized measure.
    pub fn sample_mark<R: Rng>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        match self {
            JumpMeasure::Atoms { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.rate).sum();
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.rate;
                    if target < acc {
                        return a.mark.clone();
                    }
                }
                atoms.iter().rev().find(|a| a.rate > 0.0).expect("positive total mass").mark.clone()
            }
            JumpMeasure::Radial {
                alpha, r_min, r_max, ..
            } => {
                let u_hi = r_min.powf(-alpha);
                let u_lo = r_max.powf(-alpha);
                let u = u_lo + (u_hi - u_lo) * (1.0 - rng.random::<f64>());
                let r = u.powf(-1.0 / alpha);
                if d == 1 {
                    vec![if rng.random::<bool>() { r } else { -r }]
                } else {
                    let theta = 2.0 * PI * rng.random::<f64>();
                    vec![r * theta.cos(), r * theta.sin()]
                }
            }
        }
    }

    fn validate(&self, d: usize, small: bool, path: &str) -> Result<()> {
        let in_region = |x: &[f64]| {
            let r = norm(x);
            if small {
                r > 0.0 && r < 1.0
            } else {
                r >= 1.0
            }
        };
        match self {
            JumpMeasure::Atoms { atoms } => {
                for (k, a) in atoms.iter().enumerate() {
                    if a.mark.len() != d {
                        return Err(Error::config(format!("{path}.atoms[{k}].mark"), "wrong dimension"));
                    }
                    if !(a.rate.is_finite() && a.rate >= 0.0) {
                        return Err(Error::config(format!("{path}.atoms[{k}].rate"), "rate must be finite and >= 0"));
                    }
                    if a.mark.iter().any(|v| !v.is_finite()) || !in_region(&a.mark) {
                        let region = if small { "0 < |x| < 1" } else { "|x| >= 1" };
                        return Err(Error::config(format!("{path}.atoms[{k}].mark"), format!("mark must satisfy {region}")));
                    }
                }
            }
            JumpMeasure::Radial {
                c,
                alpha,
                r_min,
                r_max,
                radial_nodes,
                angular_nodes,
            } => {
                if d > 2 {
                    return Err(Error::config(path, "radial densities are supported for d <= 2"));
                }
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(Error::config(format!("{path}.c"), "must be finite and >= 0"));
                }
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::config(format!("{path}.alpha"), "must be > 0"));
                }
                let ok = if small {
                    *r_min > 0.0 && r_min < r_max && *r_max <= 1.0
                } else {
                    *r_min >= 1.0 && r_min < r_max
                };
                if !ok || r_min.is_nan() || r_max.is_nan() {
                    let region = if small { "0 < r_min < r_max <= 1" } else { "1 <= r_min < r_max" };
                    return Err(Error::config(format!("{path}.r_min"), format!("radii must satisfy {region}")));
                }
                if *radial_nodes == 0 || *angular_nodes == 0 {
                    return Err(Error::config(path, "quadrature node counts must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn directions(d: usize, angular: usize) -> Vec<(f64, Vec<f64>)> {
    if d == 1 {
        vec![(1.0, vec![-1.0]), (1.0, vec![1.0])]
    } else {
        let w = 2.0 * PI / angular as f64;
        (0..angular)
            .map(|k| {
                let th = w * (k as f64 + 0.5);
                (w, vec![th.cos(), th.sin()])
            })
            .collect()
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A jump measure split into its small-jump and large-jump parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    pub d: usize,
    pub small: JumpMeasure,
    pub large: JumpMeasure,
}

impl LevyModel {
    pub fn new(d: usize, small: JumpMeasure, large: JumpMeasure) -> Result<Self> {
        let m = LevyModel { d, small, large };
        m.validate("noise")?;
        Ok(m)
    }

    /// Brownian motion only.
    pub fn brownian(d: usize) -> Self {
        LevyModel {
            d,
            small: JumpMeasure::empty(),
            large: JumpMeasure::empty(),
        }
    }

    /// Truncation of `c |x|^(-d-alpha) dx`: marks with `|x| < eps` are
    /// discarded. Returns the model and the discarded second moment
    /// `int_{|x|<eps} |x|^2 nu(dx)`.
    pub fn truncated_stable(d: usize, c: f64, alpha: f64, eps: f64, with_large: bool) -> Result<(Self, f64)> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::invalid("truncated_stable: alpha must lie in (0, 2)"));
        }
        let radial = |r_min: f64, r_max: f64| JumpMeasure::Radial {
            c,
            alpha,
            r_min,
            r_max,
            radial_nodes: default_radial_nodes(),
            angular_nodes: default_angular_nodes(),
        };
        let large = if with_large {
            radial(1.0, f64::INFINITY)
        } else {
            JumpMeasure::empty()
        };
        let model = LevyModel::new(d, radial(eps, 1.0), large)?;
        let discarded = c * JumpMeasure::sphere_area(d) * eps.powf(2.0 - alpha) / (2.0 - alpha);
        Ok((model, discarded))
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config(format!("{path}.d"), "dimension must be at least 1"));
        }
        self.small.validate(self.d, true, &format!("{path}.small"))?;
        self.large.validate(self.d, false, &format!("{path}.large"))?;
        Ok(())
    }

    pub fn small_rate(&self) -> f64 {
        self.small.total_mass(self.d)
    }

    pub fn large_rate(&self) -> f64 {
        self.large.total_mass(self.d)
    }
}

/// A jump at `time` with mark `mark`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// Number of base cells and the base grid `t_k = min(k dt, T)`.
pub fn base_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(horizon.is_finite() && horizon > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("time horizon and step must be positive and finite"));
    }
    let k = ((horizon / dt) * (1.0 - GRID_SLACK)).ceil().max(1.0) as usize;
    Ok((0..=k).map(|i| if i == k { horizon } else { (i as f64 * dt).min(horizon) }).collect())
}

/// `K = ceil(T/dt)` i.i.d. `N(0, (t_{k+1} - t_k) I_d)` increments.
pub fn sample_brownian(horizon: f64, dt: f64, d: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let grid = base_grid(horizon, dt)?;
    let mut rng = stream_rng(seed, STREAM_BROWNIAN);
    Ok(grid
        .windows(2)
        .map(|w| {
            let s = (w[1] - w[0]).sqrt();
            (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect())
}

fn sample_poisson_events(measure: &JumpMeasure, d: usize, horizon: f64, rng: &mut ChaCha8Rng) -> Vec<JumpEvent> {
    let rate = measure.total_mass(d);
    let mut events = Vec::new();
    if rate <= 0.0 {
        return events;
    }
    let mut t = 0.0;
    loop {
        let gap: f64 = rng.sample(Exp1);
        t += gap / rate;
        if t > horizon {
            break;
        }
        let mark = measure.sample_mark(d, rng);
        events.push(JumpEvent { time: t, mark });
    }
    events
}

/// Small-jump events on `(0, T]` together with the quadrature form of the
/// small-jump measure used for compensation.
#[derive(Clone, Debug)]
pub struct SmallJumpSample {
    pub events: Vec<JumpEvent>,
    pub mean_measure: Vec<(f64, Vec<f64>)>,
}

impl SmallJumpSample {
    /// `int g(x) nu(dx)` over `0 < |x| < 1`.
    pub fn compensator<G: FnMut(&[f64]) -> f64>(&self, mut g: G) -> f64 {
        self.mean_measure.iter().map(|(w, x)| w * g(x)).sum()
    }
}

pub fn sample_small_jumps(model: &LevyModel, horizon: f64, seed: u64) -> Result<SmallJumpSample> {
    let rate = model.small_rate();
    if !rate.is_finite() {
        return Err(Error::Unsupported("infinite small-jump activity; use the truncated constructor".into()));
    }
    let mut rng = stream_rng(seed, STREAM_SMALL);
    Ok(SmallJumpSample {
        events: sample_poisson_events(&model.small, model.d, horizon, &mut rng),
        mean_measure: model.small.nodes(model.d),
    })
}

/// Arrival times and marks of the large-jump compound Poisson process.
pub fn sample_large_jumps(model: &LevyModel, horizon: f64, seed: u64) -> Result<Vec<JumpEvent>> {
    if !model.large_rate().is_finite() {
        return Err(Error::Unsupported("infinite large-jump rate".into()));
    }
    let mut rng = stream_rng(seed, STREAM_LARGE);
    Ok(sample_poisson_events(&model.large, model.d, horizon, &mut rng))
}

/// What a grid point is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum PointKind {
    /// Base grid point `t_k`.
    Grid(usize),
    /// Time of small-jump event `i`.
    SmallJump(usize),
    /// Arrival `i` of the large-jump process.
    LargeJump(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub t: f64,
    pub kind: PointKind,
}

/// A complete noise realization on the refined grid.
///
/// `increments[i]` is the Brownian increment over `[points[i].t, points[i+1].t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub d: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub points: Vec<GridPoint>,
    pub increments: Vec<Vec<f64>>,
    pub small_jumps: Vec<JumpEvent>,
    pub large_jumps: Vec<JumpEvent>,
}

/// Samples every stream for one path and merges jump times into the grid.
pub fn sample_noise_path(model: &LevyModel, horizon: f64, dt: f64, seed: u64) -> Result<NoisePath> {
    let grid = base_grid(horizon, dt)?;
    let base = sample_brownian(horizon, dt, model.d, seed)?;
    let small = sample_small_jumps(model, horizon, seed)?.events;
    let large = sample_large_jumps(model, horizon, seed)?;

    let mut jumps: Vec<GridPoint> = small
        .iter()
        .enumerate()
        .map(|(i, e)| GridPoint {
            t: e.time,
            kind: PointKind::SmallJump(i),
        })
        .chain(large.iter().enumerate().map(|(i, e)| GridPoint {
            t: e.time,
            kind: PointKind::LargeJump(i),
        }))
        .collect();
    jumps.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite jump times"));

    let mut bridge = stream_rng(seed, STREAM_BRIDGE);
    let mut points = vec![GridPoint {
        t: 0.0,
        kind: PointKind::Grid(0),
    }];
    let mut increments = Vec::with_capacity(base.len() + jumps.len());
    let mut next_jump = 0;
    for (k, cell) in base.iter().enumerate() {
        let (a, b) = (grid[k], grid[k + 1]);
        let start = next_jump;
        while next_jump < jumps.len() && (jumps[next_jump].t <= b || k + 1 == base.len()) {
            next_jump += 1;
        }
        let inner = &jumps[start..next_jump];
        // Brownian bridge from W(a) = 0 to W(b) = cell through the jump times.
        let mut prev_t = a;
        let mut prev_w = vec![0.0; model.d];
        for jp in inner {
            let s = jp.t;
            let frac = if b > prev_t { (s - prev_t) / (b - prev_t) } else { 0.0 };
            let var = if b > prev_t { (s - prev_t) * (b - s) / (b - prev_t) } else { 0.0 };
            let sd = var.max(0.0).sqrt();
            let w: Vec<f64> = (0..model.d)
                .map(|i| prev_w[i] + frac * (cell[i] - prev_w[i]) + sd * bridge.sample::<f64, _>(StandardNormal))
                .collect();
            increments.push(w.iter().zip(&prev_w).map(|(x, y)| x - y).collect());
            points.push(*jp);
            prev_t = s;
            prev_w = w;
        }
        increments.push(cell.iter().zip(&prev_w).map(|(x, y)| x - y).collect());
        points.push(GridPoint {
            t: b,
            kind: PointKind::Grid(k + 1),
        });
    }
    Ok(NoisePath {
        d: model.d,
        horizon,
        dt,
        seed,
        points,
        increments,
        small_jumps: small,
        large_jumps: large,
    })
}

/// One line of the JSONL noise export.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum NoiseRecord {
    Header {
        d: usize,
        horizon: f64,
        dt: f64,
        seed: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        config_hash: Option<String>,
    },
    Step {
        t: f64,
        #[serde(flatten)]
        kind: PointKind,
        #[serde(rename = "dB")]
        db: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        mark: Option<Vec<f64>>,
    },
}

impl NoisePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps base points `Grid(k)` with `k % factor == 0` (and the final
    /// point) plus every jump point, summing increments in between.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 {
            return Err(Error::invalid("coarsen: factor must be positive"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let last = self.points.len() - 1;
        let mut points = vec![self.points[0]];
        let mut increments = Vec::new();
        let mut acc = vec![0.0; self.d];
        for i in 1..self.points.len() {
            for (a, v) in acc.iter_mut().zip(&self.increments[i - 1]) {
                *a += v;
            }
            let keep = match self.points[i].kind {
                PointKind::Grid(k) => k % factor == 0 || i == last,
                _ => true,
            };
            if keep {
                let kind = match self.points[i].kind {
                    PointKind::Grid(k) => PointKind::Grid(k.div_ceil(factor)),
                    other => other,
                };
                points.push(GridPoint { t: self.points[i].t, kind });
                increments.push(std::mem::replace(&mut acc, vec![0.0; self.d]));
            }
        }
        Ok(NoisePath {
            d: self.d,
            horizon: self.horizon,
            dt: self.dt * factor as f64,
            seed: self.seed,
            points,
            increments,
            small_jumps: self.small_jumps.clone(),
            large_jumps: self.large_jumps.clone(),
        })
    }

    /// Copy with the large jumps removed (their grid points included).
    pub fn without_large_jumps(&self) -> NoisePath {
        let mut points = vec![self.points[0]];
        let mut increments: Vec<Vec<f64>> = Vec::new();
        let mut carry: Option<Vec<f64>> = None;
        for i in 1..self.points.len() {
            let inc = match carry.take() {
                Some(c) => c.iter().zip(&self.increments[i - 1]).map(|(a, b)| a + b).collect(),
                None => self.increments[i - 1].clone(),
            };
            if matches!(self.points[i].kind, PointKind::LargeJump(_)) {
                carry = Some(inc);
            } else {
                points.push(self.points[i]);
                increments.push(inc);
            }
        }
        NoisePath {
            points,
            increments,
            large_jumps: Vec::new(),
            ..self.clone()
        }
    }

    /// One header record (optionally tagged with a config hash), then one
    /// record per grid step.
    pub fn write_jsonl<W: Write>(&self, mut w: W, config_hash: Option<&str>) -> Result<()> {
        let header = NoiseRecord::Header {
            d: self.d,
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
            config_hash: config_hash.map(str::to_string),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for (p, db) in self.points[1..].iter().zip(&self.increments) {
            let mark = match p.kind {
                PointKind::SmallJump(i) => Some(self.small_jumps[i].mark.clone()),
                PointKind::LargeJump(i) => Some(self.large_jumps[i].mark.clone()),
                PointKind::Grid(_) => None,
            };
            let rec = NoiseRecord::Step {
                t: p.t,
                kind: p.kind,
                db: db.clone(),
                mark,
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<NoisePath> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::invalid("empty noise file"))??;
        let NoiseRecord::Header { d, horizon, dt, seed, .. } = serde_json::from_str(&first)? else {
            return Err(Error::invalid("noise file must start with a header record"));
        };
        let mut path = NoisePath {
            d,
            horizon,
            dt,
            seed,
            points: vec![GridPoint {
                t: 0.0,
                kind: PointKind::Grid(0),
            }],
            increments: Vec::new(),
            small_jumps: Vec::new(),
            large_jumps: Vec::new(),
        };
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let NoiseRecord::Step { t, kind, db, mark } = serde_json::from_str(&line)? else {
                return Err(Error::invalid("duplicate header record"));
            };
            if db.len() != d {
                return Err(Error::invalid("increment has the wrong dimension"));
            }
            let event = |mark: Option<Vec<f64>>| -> Result<JumpEvent> {
                let mark = mark.ok_or_else(|| Error::invalid("jump record without a mark"))?;
                Ok(JumpEvent { time: t, mark })
            };
            match kind {
                PointKind::SmallJump(i) if i == path.small_jumps.len() => path.small_jumps.push(event(mark)?),
                PointKind::LargeJump(i) if i == path.large_jumps.len() => path.large_jumps.push(event(mark)?),
                PointKind::Grid(_) => {}
                _ => return Err(Error::invalid("jump records out of order")),
            }
            path.points.push(GridPoint { t, kind });
            path.increments.push(db);
        }
        Ok(path)
    }
}
