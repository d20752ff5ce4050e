//! The SPDE solution `Y_t = tau_{U_t} xi` and its consistency checks:
//! reconstruction of the driving process from `Y`, weak residuals of the
//! SPDE paired with test functions, and the Ito formula for `tau_X xi`.

use std::sync::Arc;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::noise::{NoisePath, PointKind};
use crate::operators::{dot, SpaceOperators};
use crate::sde::{continuous_increment, SumOrder, Trajectory};
use crate::sobolev::{norm_p, tail_mass, HermiteRep};

/// Snapshots of `Y` on a trajectory's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdePath {
    pub times: Vec<f64>,
    pub kinds: Vec<PointKind>,
    pub snapshots: Vec<HermiteRep>,
    /// `Y` at the left limit of each jump point.
    pub pre_snapshots: Vec<Option<HermiteRep>>,
    /// `tail_mass` of each snapshot at the initial condition's index.
    pub tails: Vec<f64>,
    /// Explosion time; no snapshot exists from here on.
    pub stopped_at: Option<f64>,
    pub seed: u64,
}

impl SpdePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Y_t` at a grid time, post-jump at jump times.
    pub fn snapshot_at(&self, t: f64) -> Result<&HermiteRep> {
        if let Some(theta) = self.stopped_at {
            if t >= theta {
                return Err(Error::invalid(format!("Y is not defined at t = {t} >= explosion time {theta}")));
            }
        }
        self.times
            .iter()
            .rposition(|&s| s == t)
            .map(|i| &self.snapshots[i])
            .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid time")))
    }

    /// Keeps only the (post-jump) snapshots at `times`.
    pub fn restrict_to(&self, times: &[f64]) -> Result<SpdePath> {
        let mut idx = Vec::with_capacity(times.len());
        for &t in times {
            let i = self
                .times
                .iter()
                .rposition(|&s| s == t)
                .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid time")))?;
            idx.push(i);
        }
        Ok(SpdePath {
            times: times.to_vec(),
            kinds: idx.iter().map(|&i| self.kinds[i]).collect(),
            snapshots: idx.iter().map(|&i| self.snapshots[i].clone()).collect(),
            pre_snapshots: vec![None; idx.len()],
            tails: idx.iter().map(|&i| self.tails[i]).collect(),
            stopped_at: self.stopped_at,
            seed: self.seed,
        })
    }

    pub fn max_tail(&self) -> f64 {
        self.tails.iter().copied().fold(0.0, f64::max)
    }
}

/// `Y_t = tau_{U_t} xi` at every trajectory state, including left limits.
pub fn translate_solution(traj: &Trajectory, xi: &HermiteRep, ops: &SpaceOperators) -> Result<SpdePath> {
    if traj.d != xi.dim() {
        return Err(Error::invalid("translate_solution: dimension mismatch"));
    }
    let p = xi.nominal_index;
    let snapshots: Vec<HermiteRep> = traj.states.iter().map(|u| ops.translate(u, xi)).collect::<Result<_>>()?;
    let pre_snapshots = traj
        .pre_jump
        .iter()
        .map(|pre| pre.as_ref().map(|u| ops.translate(u, xi)).transpose())
        .collect::<Result<_>>()?;
    let tails = snapshots.iter().map(|y| tail_mass(y, p)).collect();
    Ok(SpdePath {
        times: traj.times.clone(),
        kinds: traj.kinds.clone(),
        snapshots,
        pre_snapshots,
        tails,
        stopped_at: traj.stopped.as_ref().map(|s| s.time),
        seed: traj.seed,
    })
}

fn check_noise(path: &SpdePath, noise: &NoisePath) -> Result<()> {
    if path.len() > noise.points.len() {
        return Err(Error::NoiseMismatch("path is longer than the noise grid".into()));
    }
    for (i, (t, k)) in path.times.iter().zip(&path.kinds).enumerate() {
        if noise.points[i].t != *t || noise.points[i].kind != *k {
            return Err(Error::NoiseMismatch(format!("grid point {i} differs from the noise path")));
        }
    }
    Ok(())
}

/// `Z_t` rebuilt from the `Y` snapshots with the same step formula as the
/// SDE scheme: `sigma[Y] dB + b[Y] dt` with compensated `F(Y, x)` and
/// `G(Y, x)` jumps, all integrands at the left limit. `Z_0 = 0`.
pub fn reconstruct_z(path: &SpdePath, set: &CoefficientSet, noise: &NoisePath, small_nodes: &[(f64, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
    check_noise(path, noise)?;
    let d = noise.d;
    let mut z = vec![vec![0.0; d]];
    for i in 0..path.len().saturating_sub(1) {
        let fr = set.frozen(&path.snapshots[i]);
        let (inc, _) = continuous_increment(set, &fr, small_nodes, noise.points[i + 1].t - noise.points[i].t, &noise.increments[i], SumOrder::Forward);
        let pre: Vec<f64> = z[i].iter().zip(&inc).map(|(a, v)| a + v).collect();
        let next = match path.kinds[i + 1] {
            PointKind::Grid(_) => pre,
            PointKind::SmallJump(k) => {
                let fr = set.frozen(pre_snapshot(path, i + 1)?);
                let f = set.f_frozen(&fr, &noise.small_jumps[k].mark);
                pre.iter().zip(&f).map(|(a, v)| a + v).collect()
            }
            PointKind::LargeJump(k) => {
                let fr = set.frozen(pre_snapshot(path, i + 1)?);
                let g = set.g_frozen(&fr, &noise.large_jumps[k].mark);
                pre.iter().zip(&g).map(|(a, v)| a + v).collect()
            }
        };
        z.push(next);
    }
    Ok(z)
}

fn pre_snapshot(path: &SpdePath, i: usize) -> Result<&HermiteRep> {
    path.pre_snapshots[i]
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("jump point {i} has no left-limit snapshot")))
}

fn check_headroom(phis: &[HermiteRep], like: &HermiteRep) -> Result<()> {
    let n = like.max_degree();
    for phi in phis {
        if !phi.same_shape(like) {
            return Err(Error::invalid("test function has a different truncation"));
        }
        let keep = phi.basis().positions_up_to(n.saturating_sub(2)).end;
        if phi.coeffs()[keep..].iter().any(|&c| c != 0.0) {
            return Err(Error::invalid("test functions must have degree <= N - 2"));
        }
    }
    Ok(())
}

/// `(tau_s - Id) y`, with an exact zero for a zero shift.
fn shift_minus_identity(ops: &SpaceOperators, s: &[f64], y: &HermiteRep) -> Result<Vec<f64>> {
    if s.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; y.coeffs().len()]);
    }
    let moved = ops.translate(s, y)?;
    Ok(moved.coeffs().iter().zip(y.coeffs()).map(|(a, b)| a - b).collect())
}

/// Weak residual of the SPDE for each test function, at every grid time:
///
/// ```text
/// R_t(phi) = (Y_t - Y_0)[phi]
///   - sum_k [ sum_j A_j(Y_k) dB^j_k + L~(Y_k) dt_k - dt_k sum_nu w (tau_F - Id) Y_k ][phi]
///   - sum_{small jumps} (tau_F - Id) Y_-[phi] - sum_{large jumps} (tau_G - Id) Y_-[phi]
/// ```
///
/// Returns `r[j][i] = R_{t_i}(phis[j])`.
pub fn weak_residual(
    path: &SpdePath,
    set: &CoefficientSet,
    noise: &NoisePath,
    small_nodes: &[(f64, Vec<f64>)],
    ops: &SpaceOperators,
    phis: &[HermiteRep],
) -> Result<Vec<Vec<f64>>> {
    check_noise(path, noise)?;
    let Some(y0) = path.snapshots.first() else {
        return Ok(vec![Vec::new(); phis.len()]);
    };
    check_headroom(phis, y0)?;
    let len = y0.coeffs().len();
    let mut acc = vec![0.0; phis.len()];
    let mut out: Vec<Vec<f64>> = vec![vec![0.0]; phis.len()];
    for i in 0..path.len().saturating_sub(1) {
        let y = &path.snapshots[i];
        let dt = noise.points[i + 1].t - noise.points[i].t;
        let db = &noise.increments[i];
        let fr = set.frozen(y);
        let mut v = vec![0.0; len];
        for (j, a) in ops.op_a(y, &set.sigma)?.iter().enumerate() {
            for (vv, c) in v.iter_mut().zip(a.coeffs()) {
                *vv += db[j] * c;
            }
        }
        let jumps: Vec<(f64, Vec<f64>)> = if set.has_small_jumps() {
            small_nodes.iter().map(|(w, x)| (*w, set.f_frozen(&fr, x))).collect()
        } else {
            Vec::new()
        };
        let lt = ops.op_ltilde(y, &set.sigma, &set.b, &jumps)?;
        for (vv, c) in v.iter_mut().zip(lt.coeffs()) {
            *vv += dt * c;
        }
        for (w, s) in &jumps {
            let delta = shift_minus_identity(ops, s, y)?;
            for (vv, c) in v.iter_mut().zip(&delta) {
                *vv -= dt * w * c;
            }
        }
        match path.kinds[i + 1] {
            PointKind::Grid(_) => {}
            PointKind::SmallJump(k) => {
                let ym = pre_snapshot(path, i + 1)?;
                let s = set.f_frozen(&set.frozen(ym), &noise.small_jumps[k].mark);
                let delta = shift_minus_identity(ops, &s, ym)?;
                v.iter_mut().zip(&delta).for_each(|(vv, c)| *vv += c);
            }
            PointKind::LargeJump(k) => {
                let ym = pre_snapshot(path, i + 1)?;
                let s = set.g_frozen(&set.frozen(ym), &noise.large_jumps[k].mark);
                let delta = shift_minus_identity(ops, &s, ym)?;
                v.iter_mut().zip(&delta).for_each(|(vv, c)| *vv += c);
            }
        }
        let yn = &path.snapshots[i + 1];
        for (j, phi) in phis.iter().enumerate() {
            acc[j] += dot(&v, phi.coeffs());
            let change = dot(yn.coeffs(), phi.coeffs()) - dot(y0.coeffs(), phi.coeffs());
            out[j].push(change - acc[j]);
        }
    }
    Ok(out)
}

/// Ito-formula residual for `tau_{X_t} xi` along any trajectory:
///
/// ```text
/// R_t = tau_{X_t} xi - tau_{X_0} xi + sum_k grad tau_{X_k} xi . dX^c_k
///       - 1/2 sum_k sum_ij d_i d_j tau_{X_k} xi d[X^i, X^j]^c_k
///       - sum_{jumps} [tau_{X_s} xi - tau_{X_s-} xi]
/// ```
///
/// where `dX^c` is the increment up to the next left limit. The jump part
/// of the `dX` integral and the first-order jump correction are both
/// evaluated and cancel. Returns `r[j][i] = R_{t_i}(phis[j])`.
pub fn ito_residual(traj: &Trajectory, xi: &HermiteRep, ops: &SpaceOperators, phis: &[HermiteRep]) -> Result<Vec<Vec<f64>>> {
    check_headroom(phis, xi)?;
    let d = traj.d;
    let basis = Arc::clone(xi.basis());
    let ys: Vec<HermiteRep> = traj.states.iter().map(|u| ops.translate(u, xi)).collect::<Result<_>>()?;
    let mut acc = vec![0.0; phis.len()];
    let mut out: Vec<Vec<f64>> = vec![vec![0.0]; phis.len()];
    let mut grad = vec![vec![0.0; basis.len()]; d];
    let mut tmp = vec![0.0; basis.len()];
    for i in 0..traj.len().saturating_sub(1) {
        let x0 = &traj.states[i];
        let left = traj.pre_jump[i + 1].as_ref().unwrap_or(&traj.states[i + 1]);
        let y = &ys[i];
        let mut v = vec![0.0; basis.len()];
        for (a, g) in grad.iter_mut().enumerate() {
            ops.derivative(a).apply_slice(y.coeffs(), g);
            let dx = left[a] - x0[a];
            v.iter_mut().zip(g.iter()).for_each(|(vv, c)| *vv += dx * c);
        }
        let cov = &traj.covariation[i];
        for a in 0..d {
            for b in 0..d {
                let c = cov[a * d + b];
                if c != 0.0 {
                    ops.second_derivative(a, b).apply_slice(y.coeffs(), &mut tmp);
                    v.iter_mut().zip(&tmp).for_each(|(vv, s)| *vv -= 0.5 * c * s);
                }
            }
        }
        if let Some(pre) = &traj.pre_jump[i + 1] {
            let ym = ops.translate(pre, xi)?;
            let post = &ys[i + 1];
            let jump: Vec<f64> = traj.states[i + 1].iter().zip(pre).map(|(a, b)| a - b).collect();
            // dX integral over the jump, then the jump correction
            for (a, g) in grad.iter_mut().enumerate() {
                ops.derivative(a).apply_slice(ym.coeffs(), g);
                v.iter_mut().zip(g.iter()).for_each(|(vv, c)| *vv += jump[a] * c);
            }
            for (vv, (p, m)) in v.iter_mut().zip(post.coeffs().iter().zip(ym.coeffs())) {
                *vv -= p - m;
            }
            for (a, g) in grad.iter().enumerate() {
                v.iter_mut().zip(g.iter()).for_each(|(vv, c)| *vv -= jump[a] * c);
            }
        }
        for (j, phi) in phis.iter().enumerate() {
            acc[j] += dot(&v, phi.coeffs());
            let change = dot(ys[i + 1].coeffs(), phi.coeffs()) - dot(ys[0].coeffs(), phi.coeffs());
            out[j].push(change + acc[j]);
        }
    }
    Ok(out)
}

/// Mean over paths of `||Y^A_t - Y^B_t||_{-p-1}^2` at each grid time.
pub fn uniqueness_gap(a: &[SpdePath], b: &[SpdePath], p: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch("path collections differ in size or are empty".into()));
    }
    let len = a[0].len();
    let mut sums = vec![0.0; len];
    for (pa, pb) in a.iter().zip(b) {
        if pa.times != pb.times || pa.len() != len {
            return Err(Error::GridMismatch("paths are on different grids".into()));
        }
        for (k, (ya, yb)) in pa.snapshots.iter().zip(&pb.snapshots).enumerate() {
            let n = norm_p(&ya.sub(yb)?, -p - 1.0)?;
            sums[k] += n * n;
        }
    }
    Ok(sums.into_iter().map(|s| s / a.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{JumpCoefficient, MarkFunction};
    use crate::noise::{path_seed, sample_noise_path, JumpMeasure, LevyModel};
    use crate::sde::{solve_sde, System};
    use approx::assert_abs_diff_eq;

    fn h(n: usize, k: u32) -> HermiteRep {
        HermiteRep::unit(1, n, &[k], -1.0).unwrap()
    }

    fn phis(n: usize) -> Vec<HermiteRep> {
        (0..=5).map(|k| h(n, k)).collect()
    }

    fn example_three(n: usize) -> (CoefficientSet, LevyModel) {
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.f = JumpCoefficient::IdentityMark;
        (set, LevyModel::new(1, JumpMeasure::atom(vec![0.5], 2.0), JumpMeasure::empty()).unwrap())
    }

    #[test]
    fn constant_solution() {
        let n = 12;
        let ops = SpaceOperators::new(1, n).unwrap();
        let set = CoefficientSet::zero(1, n, 1.0).unwrap();
        let model = LevyModel::brownian(1);
        let xi = h(n, 0);
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let noise = sample_noise_path(&model, 1.0, 0.1, 1).unwrap();
        let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
        let path = translate_solution(&tr, &xi, &ops).unwrap();
        assert!(path.snapshots.iter().all(|y| *y == xi));
        let tr2 = solve_sde(&sys, &[0.7], &noise, 1e6).unwrap();
        let path2 = translate_solution(&tr2, &xi, &ops).unwrap();
        let moved = ops.translate(&[0.7], &xi).unwrap();
        assert!(path2.snapshots.iter().all(|y| *y == moved));
        let z = reconstruct_z(&path, &set, &noise, sys.small_nodes()).unwrap();
        assert!(z.iter().all(|v| v[0] == 0.0));
        let r = weak_residual(&path2, &set, &noise, sys.small_nodes(), &ops, &phis(n)).unwrap();
        assert!(r.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_overlap_along_drift() {
        let n = 30;
        let ops = SpaceOperators::new(1, n).unwrap();
        let xi = h(n, 0);
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.2).collect();
        let states = times.iter().map(|&t| vec![t]).collect();
        let tr = Trajectory::from_states(times.clone(), states, vec![None; 11], vec![vec![0.0]; 10]).unwrap();
        let path = translate_solution(&tr, &xi, &ops).unwrap();
        for (t, y) in times.iter().zip(&path.snapshots) {
            assert_abs_diff_eq!(y.coeffs()[0], (-t * t / 4.0).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_bitwise() {
        let n = 20;
        let ops = SpaceOperators::new(1, n).unwrap();
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.b = vec![h(n, 0).scale(0.4)];
        set.sigma = vec![vec![h(n, 1).scale(0.5)]];
        set.f = JumpCoefficient::Separable {
            h: 0.5,
            mark: MarkFunction::Constant { value: 1.0 },
            gamma: vec![h(n, 0)],
        };
        set.g = JumpCoefficient::IdentityMark;
        let model = LevyModel::new(1, JumpMeasure::atom(vec![-0.4], 2.0), JumpMeasure::atom(vec![1.5], 0.7)).unwrap();
        let xi = HermiteRep::delta(&[0.2], n, -1.0).unwrap();
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        for i in 0..10 {
            let noise = sample_noise_path(&model, 1.0, 0.05, path_seed(1, i)).unwrap();
            let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
            let path = translate_solution(&tr, &xi, &ops).unwrap();
            let z = reconstruct_z(&path, &set, &noise, sys.small_nodes()).unwrap();
            assert_eq!(z, tr.states);
            // tau_Z xi reproduces Y
            let again: Vec<HermiteRep> = z.iter().map(|u| ops.translate(u, &xi).unwrap()).collect();
            assert_eq!(again, path.snapshots);
        }
        let noise = sample_noise_path(&model, 1.0, 0.05, 99).unwrap();
        let other = sample_noise_path(&model, 1.0, 0.05, 98).unwrap();
        let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
        let path = translate_solution(&tr, &xi, &ops).unwrap();
        assert!(matches!(reconstruct_z(&path, &set, &other, sys.small_nodes()), Err(Error::NoiseMismatch(_))));
    }

    #[test]
    fn drift_only_reconstruction_is_riemann_sum() {
        let n = 24;
        let ops = SpaceOperators::new(1, n).unwrap();
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.b = vec![h(n, 0)];
        let model = LevyModel::brownian(1);
        let xi = h(n, 0);
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let noise = sample_noise_path(&model, 1.0, 0.1, 3).unwrap();
        let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
        let path = translate_solution(&tr, &xi, &ops).unwrap();
        let z = reconstruct_z(&path, &set, &noise, sys.small_nodes()).unwrap();
        let mut sum = 0.0;
        for (k, y) in path.snapshots.iter().enumerate().take(path.len() - 1) {
            sum += y.coeffs()[0] * 0.1;
            assert_abs_diff_eq!(z[k + 1][0], sum, epsilon = 1e-14);
        }
    }

    #[test]
    fn jump_identity() {
        let n = 30;
        let ops = SpaceOperators::new(1, n).unwrap();
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.g = JumpCoefficient::IdentityMark;
        let model = LevyModel::new(1, JumpMeasure::empty(), JumpMeasure::atom(vec![1.3], 2.0)).unwrap();
        let xi = h(n, 0);
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let noise = sample_noise_path(&model, 2.0, 0.1, 8).unwrap();
        let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
        let path = translate_solution(&tr, &xi, &ops).unwrap();
        for i in 0..path.len() {
            if let Some(ym) = &path.pre_snapshots[i] {
                let composed = ops.translate(&[1.3], ym).unwrap();
                let lhs = path.snapshots[i].truncate_to_degree(10);
                let rhs = composed.truncate_to_degree(10);
                assert!(norm_p(&lhs.sub(&rhs).unwrap(), 0.0).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn ito_pure_jump_and_drift() {
        let n = 40;
        let ops = SpaceOperators::new(1, n).unwrap();
        let xi = h(n, 0);
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.g = JumpCoefficient::IdentityMark;
        let model = LevyModel::new(1, JumpMeasure::empty(), JumpMeasure::atom(vec![1.1], 2.0)).unwrap();
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let noise = sample_noise_path(&model, 2.0, 0.1, 4).unwrap();
        let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
        let r = ito_residual(&tr, &xi, &ops, &phis(n)).unwrap();
        assert!(r.iter().flatten().all(|v| v.abs() <= 1e-12));

        let mut maxes = Vec::new();
        for k in [10, 20, 40] {
            let dt = 1.0 / k as f64;
            let times: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
            let states = times.iter().map(|&t| vec![t]).collect();
            let tr = Trajectory::from_states(times, states, vec![None; k + 1], vec![vec![0.0]; k]).unwrap();
            let r = ito_residual(&tr, &xi, &ops, &phis(n)).unwrap();
            maxes.push(r.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        for w in maxes.windows(2) {
            assert!((1.7..2.3).contains(&(w[0] / w[1])), "{maxes:?}");
        }
    }

    #[test]
    fn headroom_and_stopping_contracts() {
        let n = 10;
        let ops = SpaceOperators::new(1, n).unwrap();
        let xi = h(n, 0);
        let times = vec![0.0, 0.5];
        let tr = Trajectory::from_states(times, vec![vec![0.0], vec![0.1]], vec![None, None], vec![vec![0.0]]).unwrap();
        assert!(ito_residual(&tr, &xi, &ops, &[h(n, 9)]).is_err());
        assert!(ito_residual(&tr, &xi, &ops, &[h(n, 8)]).is_ok());
        let mut path = translate_solution(&tr, &xi, &ops).unwrap();
        path.stopped_at = Some(0.7);
        assert!(path.snapshot_at(0.5).is_ok());
        assert!(path.snapshot_at(0.7).is_err());
    }

    #[test]
    fn example_three_residual_shrinks() {
        let n = 40;
        let ops = SpaceOperators::new(1, n).unwrap();
        let (set, model) = example_three(n);
        let xi = h(n, 0);
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let fine = sample_noise_path(&model, 1.0, 0.025, 6).unwrap();
        let mut maxes = Vec::new();
        for factor in [4, 2, 1] {
            let noise = fine.coarsen(factor).unwrap();
            let tr = solve_sde(&sys, &[0.0], &noise, 1e6).unwrap();
            let path = translate_solution(&tr, &xi, &ops).unwrap();
            let r = weak_residual(&path, &set, &noise, sys.small_nodes(), &ops, &phis(n)).unwrap();
            maxes.push(r.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        assert!(maxes[0] > 1.3 * maxes[1] && maxes[1] > 1.3 * maxes[2], "{maxes:?}");
    }

    #[test]
    fn gap_between_identical_and_refined() {
        let n = 24;
        let ops = SpaceOperators::new(1, n).unwrap();
        let mut set = CoefficientSet::zero(1, n, 1.0).unwrap();
        set.b = vec![h(n, 0)];
        let model = LevyModel::brownian(1);
        let xi = h(n, 0);
        let sys = System::new(&set, &xi, &model, &ops).unwrap();
        let fine = sample_noise_path(&model, 1.0, 0.025, 0).unwrap();
        let solve = |noise: &NoisePath| translate_solution(&solve_sde(&sys, &[0.0], noise, 1e6).unwrap(), &xi, &ops).unwrap();
        let a = solve(&fine);
        assert!(uniqueness_gap(std::slice::from_ref(&a), std::slice::from_ref(&a), 1.0).unwrap().iter().all(|&g| g == 0.0));
        let coarse_times = fine.coarsen(4).unwrap().points.iter().map(|p| p.t).collect::<Vec<_>>();
        let mut finals = Vec::new();
        for factor in [4, 2, 1] {
            finals.push(solve(&fine.coarsen(factor).unwrap()).restrict_to(&coarse_times).unwrap());
        }
        let g1 = uniqueness_gap(&[finals[0].clone()], &[finals[1].clone()], 1.0).unwrap();
        let g2 = uniqueness_gap(&[finals[1].clone()], &[finals[2].clone()], 1.0).unwrap();
        assert!(g1.last().unwrap() > g2.last().unwrap());
        assert!(uniqueness_gap(std::slice::from_ref(&a), &[finals[0].clone()], 1.0).is_err());
    }
}
