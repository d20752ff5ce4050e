//! Euler scheme for the finite-dimensional SDE
//!
//! ```text
//! dU = b_bar(U-) dt + sigma_bar(U-) dB + int_{|x|<1} F_bar(U-, x) N~(dt dx)
//!      + int_{|x|>=1} G_bar(U-, x) N(dt dx),   U_0 = kappa
//! ```
//!
//! with barred coefficients frozen at the left endpoint of each interval.
//! Jump times are grid points: the continuous step runs up to the jump time,
//! then the jump is applied to the pre-jump state. The path stops at the
//! first state with `|U| >= m`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Frozen};
use crate::error::{Error, Result};
use crate::noise::{norm, LevyModel, NoisePath, PointKind};
use crate::operators::SpaceOperators;
use crate::sobolev::HermiteRep;

/// Everything the scheme needs besides the noise.
#[derive(Clone, Debug)]
pub struct System<'a> {
    pub set: &'a CoefficientSet,
    pub xi: &'a HermiteRep,
    pub model: &'a LevyModel,
    pub ops: &'a SpaceOperators,
    small_nodes: Vec<(f64, Vec<f64>)>,
}

impl<'a> System<'a> {
    pub fn new(set: &'a CoefficientSet, xi: &'a HermiteRep, model: &'a LevyModel, ops: &'a SpaceOperators) -> Result<Self> {
        set.validate(xi)?;
        if model.d != xi.dim() || *ops.basis().as_ref() != *xi.basis().as_ref() {
            return Err(Error::invalid("system: noise, operators and initial condition disagree on (d, N)"));
        }
        Ok(System {
            set,
            xi,
            model,
            ops,
            small_nodes: model.small.nodes(model.d),
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.dim()
    }

    /// Weighted nodes of the small-jump measure used for compensation.
    pub fn small_nodes(&self) -> &[(f64, Vec<f64>)] {
        &self.small_nodes
    }

    /// `tau_z xi`.
    pub fn translate(&self, z: &[f64]) -> Result<HermiteRep> {
        self.ops.translate(z, self.xi)
    }

    /// All coefficient pairings at the state `z`.
    pub fn frozen_at(&self, z: &[f64]) -> Result<Frozen> {
        Ok(self.set.frozen(&self.translate(z)?))
    }
}

/// Summation order inside one step. Both orders are mathematically equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumOrder {
    Forward,
    Reverse,
}

/// Increment of the continuous part over one interval with coefficients
/// frozen at `fr`:
/// `b dt + sigma dB - dt sum_nu w F(., x)`.
/// Also returns the covariation increment `sigma sigma^T dt` (row-major).
pub fn continuous_increment(
    set: &CoefficientSet,
    fr: &Frozen,
    small_nodes: &[(f64, Vec<f64>)],
    dt: f64,
    db: &[f64],
    order: SumOrder,
) -> (Vec<f64>, Vec<f64>) {
    let d = db.len();
    let mut comp = vec![0.0; d];
    if set.has_small_jumps() {
        let mut add = |(w, x): &(f64, Vec<f64>)| {
            let f = set.f_frozen(fr, x);
            for (c, v) in comp.iter_mut().zip(&f) {
                *c += w * v;
            }
        };
        match order {
            SumOrder::Forward => small_nodes.iter().for_each(&mut add),
            SumOrder::Reverse => small_nodes.iter().rev().for_each(&mut add),
        }
    }
    let inc = (0..d)
        .map(|i| {
            let row = &fr.sigma[i];
            let noise = match order {
                SumOrder::Forward => (0..d).fold(0.0, |a, j| a + row[j] * db[j]),
                SumOrder::Reverse => (0..d).rev().fold(0.0, |a, j| a + row[j] * db[j]),
            };
            fr.b[i] * dt + noise - dt * comp[i]
        })
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = (0..d).map(|k| fr.sigma[i][k] * fr.sigma[j][k]).sum::<f64>() * dt;
        }
    }
    (inc, cov)
}

fn check_finite(t: f64, u: &[f64]) -> Result<()> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup { time: t, state: u.to_vec() })
    }
}

/// One binned Euler step: every small event in the step is evaluated at
/// the left endpoint `u`.
pub fn euler_step(sys: &System, u: &[f64], dt: f64, db: &[f64], small_marks: &[Vec<f64>], order: SumOrder) -> Result<Vec<f64>> {
    if u.iter().chain(db).any(|v| !v.is_finite()) || !dt.is_finite() {
        return Err(Error::invalid("euler_step: non-finite input"));
    }
    let fr = sys.frozen_at(u)?;
    let (inc, _) = continuous_increment(sys.set, &fr, &sys.small_nodes, dt, db, order);
    let mut jump = vec![0.0; u.len()];
    let mut add = |x: &Vec<f64>| {
        for (j, v) in jump.iter_mut().zip(sys.set.f_frozen(&fr, x)) {
            *j += v;
        }
    };
    match order {
        SumOrder::Forward => small_marks.iter().for_each(&mut add),
        SumOrder::Reverse => small_marks.iter().rev().for_each(&mut add),
    }
    let out: Vec<f64> = (0..u.len()).map(|i| u[i] + inc[i] + jump[i]).collect();
    check_finite(f64::NAN, &out)?;
    Ok(out)
}

/// Where a path stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    /// `theta_m`.
    pub time: f64,
    /// Index of the grid point at which the threshold was reached.
    pub point: usize,
    /// The first state with `|U| >= m`.
    pub state: Vec<f64>,
    /// Whether that state is a pre-jump (left-limit) state.
    pub pre_jump: bool,
}

/// A solved path on the noise grid.
///
/// `states[i]` is `U` at `times[i]` (post-jump at jump points) and
/// `pre_jump[i]` the left limit at jump points. `covariation[i]` is the
/// continuous covariation increment over `[times[i], times[i+1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    pub times: Vec<f64>,
    pub kinds: Vec<PointKind>,
    pub states: Vec<Vec<f64>>,
    pub pre_jump: Vec<Option<Vec<f64>>>,
    pub covariation: Vec<Vec<f64>>,
    pub stopped: Option<StopRecord>,
    pub threshold: f64,
    pub seed: u64,
}

impl Trajectory {
    /// A path given directly by its states, for driving the Ito check with
    /// processes that are not SDE solutions. Jumps are points whose
    /// `pre_jump` entry is set; covariation increments are per interval.
    pub fn from_states(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        pre_jump: Vec<Option<Vec<f64>>>,
        covariation: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 || states.len() != n || pre_jump.len() != n || covariation.len() + 1 != n {
            return Err(Error::invalid("trajectory: inconsistent lengths"));
        }
        let d = states[0].len();
        let kinds = (0..n)
            .map(|i| if pre_jump[i].is_some() { PointKind::LargeJump(i) } else { PointKind::Grid(i) })
            .collect();
        Ok(Trajectory {
            d,
            times,
            kinds,
            states,
            pre_jump,
            covariation,
            stopped: None,
            threshold: f64::INFINITY,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    /// Largest `|U|` over all stored states.
    pub fn sup_norm(&self) -> f64 {
        self.states
            .iter()
            .chain(self.pre_jump.iter().flatten())
            .map(|u| norm(u))
            .fold(0.0, f64::max)
    }

    /// Writes `t, U_1..U_d, flags`. Jump points produce a `pre-jump` row
    /// followed by a `post-jump` row; a stopped path ends with a `stopped`
    /// row holding the first state past the threshold.
    pub fn write_csv<W: Write>(&self, w: W, comment: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|i| format!("U_{i}")));
        header.push("flags".to_string());
        out.write_record(&header)?;
        let row = |t: f64, u: &[f64], flag: &str| -> Vec<String> {
            let mut r = vec![format!("{t:e}")];
            r.extend(u.iter().map(|v| format!("{v:e}")));
            r.push(flag.to_string());
            r
        };
        for i in 0..self.len() {
            if let Some(pre) = &self.pre_jump[i] {
                out.write_record(row(self.times[i], pre, "pre-jump"))?;
                out.write_record(row(self.times[i], &self.states[i], "post-jump"))?;
            } else {
                out.write_record(row(self.times[i], &self.states[i], "grid"))?;
            }
        }
        if let Some(s) = &self.stopped {
            out.write_record(row(s.time, &s.state, "stopped"))?;
        }
        out.flush()?;
        Ok(())
    }
}

struct PathBuilder {
    traj: Trajectory,
}

impl PathBuilder {
    fn new(d: usize, kappa: &[f64], m: f64, seed: u64) -> Self {
        PathBuilder {
            traj: Trajectory {
                d,
                times: vec![0.0],
                kinds: vec![PointKind::Grid(0)],
                states: vec![kappa.to_vec()],
                pre_jump: vec![None],
                covariation: Vec::new(),
                stopped: None,
                threshold: m,
                seed,
            },
        }
    }

    fn current(&self) -> &[f64] {
        self.traj.final_state()
    }
}

/// Continuous step over interval `i` of `noise`, then the jump at point
/// `i + 1` if there is one. Returns `false` once the path has stopped.
fn advance(sys: &System, noise: &NoisePath, i: usize, b: &mut PathBuilder, order: SumOrder) -> Result<bool> {
    let (t0, t1) = (noise.points[i].t, noise.points[i + 1].t);
    let kind = noise.points[i + 1].kind;
    let m = b.traj.threshold;
    let u = b.current().to_vec();
    let fr = sys.frozen_at(&u)?;
    let (inc, cov) = continuous_increment(sys.set, &fr, &sys.small_nodes, t1 - t0, &noise.increments[i], order);
    let pre: Vec<f64> = u.iter().zip(&inc).map(|(a, v)| a + v).collect();
    check_finite(t1, &pre)?;
    let stop = |b: &mut PathBuilder, state: Vec<f64>, pre_jump: bool| {
        b.traj.stopped = Some(StopRecord {
            time: t1,
            point: i + 1,
            state,
            pre_jump,
        });
        false
    };
    if norm(&pre) >= m {
        return Ok(stop(b, pre, matches!(kind, PointKind::SmallJump(_) | PointKind::LargeJump(_))));
    }
    let (post, pre_record) = match kind {
        PointKind::Grid(_) => (pre, None),
        PointKind::SmallJump(k) => {
            let f = sys.set.f_frozen(&sys.frozen_at(&pre)?, &noise.small_jumps[k].mark);
            (pre.iter().zip(&f).map(|(a, v)| a + v).collect::<Vec<_>>(), Some(pre))
        }
        PointKind::LargeJump(k) => (jump_large(sys, &pre, &noise.large_jumps[k].mark)?, Some(pre)),
    };
    check_finite(t1, &post)?;
    if norm(&post) >= m {
        return Ok(stop(b, post, false));
    }
    b.traj.times.push(t1);
    b.traj.kinds.push(kind);
    b.traj.states.push(post);
    b.traj.pre_jump.push(pre_record);
    b.traj.covariation.push(cov);
    Ok(true)
}

/// `U + G_bar(U, x)` at a large-jump arrival.
pub fn jump_large(sys: &System, pre: &[f64], mark: &[f64]) -> Result<Vec<f64>> {
    let g = sys.set.g_frozen(&sys.frozen_at(pre)?, mark);
    Ok(pre.iter().zip(&g).map(|(a, v)| a + v).collect())
}

fn validate_start(sys: &System, kappa: &[f64], noise: &NoisePath, m: f64) -> Result<()> {
    if kappa.len() != sys.dim() || noise.d != sys.dim() {
        return Err(Error::invalid("solve_sde: dimension mismatch between kappa, noise and system"));
    }
    if kappa.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("solve_sde: non-finite initial state"));
    }
    if m.is_nan() || m <= norm(kappa) {
        return Err(Error::invalid("solve_sde: threshold m must exceed |kappa|"));
    }
    Ok(())
}

fn solve_with(sys: &System, kappa: &[f64], noise: &NoisePath, m: f64, order: SumOrder) -> Result<Trajectory> {
    validate_start(sys, kappa, noise, m)?;
    let mut b = PathBuilder::new(sys.dim(), kappa, m, noise.seed);
    for i in 0..noise.increments.len() {
        if !advance(sys, noise, i, &mut b, order)? {
            break;
        }
    }
    Ok(b.traj)
}

/// Solves on the full noise grid with large jumps applied inline.
pub fn solve_sde(sys: &System, kappa: &[f64], noise: &NoisePath, m: f64) -> Result<Trajectory> {
    solve_with(sys, kappa, noise, m, SumOrder::Forward)
}

/// Solves the reduced equation (no large jumps) from `u0` over the noise
/// intervals `from..to`, appending to `b`. Fails if a large jump lies
/// strictly inside the segment.
fn solve_reduced_segment(sys: &System, noise: &NoisePath, from: usize, to: usize, b: &mut PathBuilder) -> Result<bool> {
    for i in from..to {
        if i + 1 < to && matches!(noise.points[i + 1].kind, PointKind::LargeJump(_)) {
            return Err(Error::invalid("reduced segment contains a large jump"));
        }
        if i + 1 == to {
            break;
        }
        if !advance(sys, noise, i, b, SumOrder::Forward)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Interlacing: solve the reduced equation between consecutive large-jump
/// arrivals and apply `G_bar` at each arrival.
pub fn solve_interlaced(sys: &System, kappa: &[f64], noise: &NoisePath, m: f64) -> Result<Trajectory> {
    validate_start(sys, kappa, noise, m)?;
    let mut b = PathBuilder::new(sys.dim(), kappa, m, noise.seed);
    let arrivals: Vec<usize> = noise
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p.kind, PointKind::LargeJump(_)))
        .map(|(i, _)| i)
        .collect();
    let mut start = 0;
    for &a in arrivals.iter().chain(std::iter::once(&noise.points.len())) {
        // reduced dynamics on [pi_n, pi_{n+1}) ...
        if !solve_reduced_segment(sys, noise, start, a, &mut b)? {
            return Ok(b.traj);
        }
        if a == noise.points.len() {
            break;
        }
        // ... then the step into the arrival, where G_bar acts on U(pi-)
        if !advance(sys, noise, a - 1, &mut b, SumOrder::Forward)? {
            return Ok(b.traj);
        }
        start = a;
    }
    Ok(b.traj)
}

/// Reformulations compared by [`pathwise_uniqueness_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Solve twice.
    Identical,
    /// Reverse every summation inside a step.
    ReverseSummation,
    /// Compare `noise` with `noise.coarsen(2)` at the common times.
    Refine,
}

/// Largest state difference over common grid times between the solution on
/// `noise` and a reformulated solve.
pub fn pathwise_uniqueness_probe(sys: &System, kappa: &[f64], noise: &NoisePath, m: f64, perturbation: Perturbation) -> Result<f64> {
    let base = solve_sde(sys, kappa, noise, m)?;
    let other = match perturbation {
        Perturbation::Identical => solve_sde(sys, kappa, noise, m)?,
        Perturbation::ReverseSummation => solve_with(sys, kappa, noise, m, SumOrder::Reverse)?,
        Perturbation::Refine => solve_sde(sys, kappa, &noise.coarsen(2)?, m)?,
    };
    let mut gap = 0.0f64;
    let mut j = 0;
    for (t, u) in other.times.iter().zip(&other.states) {
        while j < base.len() && base.times[j] < *t {
            j += 1;
        }
        // first matching time: for jump points this is the post-jump state on both sides
        let mut k = j;
        while k + 1 < base.len() && base.times[k + 1] == *t {
            k += 1;
        }
        if k < base.len() && base.times[k] == *t {
            let diff = norm(&u.iter().zip(&base.states[k]).map(|(a, b)| a - b).collect::<Vec<_>>());
            gap = gap.max(diff);
        }
    }
    Ok(gap)
}
