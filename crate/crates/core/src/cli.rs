//! Command-line entry points. Each command reads one JSON config, writes
//! its artifacts under the output directory and reports pass/fail through
//! the exit code: 0 success, 1 tolerance failure or runtime error,
//! 2 configuration error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::coefficients::hypothesis_report;
use crate::config::{Experiment, ExperimentConfig, Suite};
use crate::error::{Error, Result};
use crate::hermite::Basis;
use crate::inequalities::{
    first_order_identity_check, monotonicity_check, spl_mono_check, taylor_jump_check, translation_bound_fit, InequalityReport,
    TranslationFitOptions,
};
use crate::noise::{path_seed, sample_noise_path, NoisePath, PointKind};
use crate::sde::{pathwise_uniqueness_probe, solve_sde, Perturbation, System, Trajectory};
use crate::sobolev::HermiteRep;
use crate::spde::{ito_residual, reconstruct_z, translate_solution, uniqueness_gap, weak_residual, SpdePath};

#[derive(Debug, Parser)]
#[command(name = "levy-spde", version, about = "Levy-driven SDE and translated SPDE solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths: trajectories, noise replays, SPDE snapshots, summary.
    Simulate(CommonArgs),
    /// Run verification suites and write a report.
    Verify(VerifyArgs),
    /// Certify the inequalities configured under `inequalities`.
    Inequalities(CommonArgs),
    /// Evaluate the standing hypotheses on the configured coefficients.
    Hypotheses(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `run.output_dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `noise.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Suites to run; defaults to `run.suites` of the config.
    #[arg(long, value_enum)]
    pub suite: Vec<Suite>,
}

/// Parses arguments from the process and runs; returns the exit code.
pub fn main_exit_code() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let common = match &cli.command {
        Command::Simulate(a) | Command::Inequalities(a) | Command::Hypotheses(a) => a,
        Command::Verify(v) => &v.common,
    };
    let (cfg, base) = ExperimentConfig::load(&common.config)?;
    let cfg = cfg.with_seed(common.seed);
    let out = match (&common.out, &cfg.run.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(Error::config("run.output_dir", "no --out given and no output_dir configured")),
    };
    let threads = common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("--threads", e.to_string()))?;
    let ex = cfg.build(&base)?;
    fs::create_dir_all(&out)?;
    pool.install(|| match &cli.command {
        Command::Simulate(_) => simulate(&ex, &out),
        Command::Verify(v) => {
            let suites = if v.suite.is_empty() { ex.config.run.suites.clone() } else { v.suite.clone() };
            verify(&ex, &suites, &out)
        }
        Command::Inequalities(_) => inequalities(&ex, &out),
        Command::Hypotheses(_) => hypotheses(&ex, &out),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn provenance(ex: &Experiment) -> String {
    format!("config_hash={} base_seed={}", ex.hash, ex.config.noise.seed)
}

/// `h_n` for every multi-index of degree `<= degree`, as test functions.
pub fn test_functions(d: usize, n: usize, degree: usize) -> Result<Vec<HermiteRep>> {
    let basis = Basis::new(d, n)?;
    Ok(basis
        .positions_up_to(degree)
        .map(|k| {
            let mut c = vec![0.0; basis.len()];
            c[k] = 1.0;
            HermiteRep::from_parts(basis.clone(), c, 0.0)
        })
        .collect())
}

fn max_abs(r: &[Vec<f64>]) -> f64 {
    r.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// One simulated path and everything derived from it.
pub struct PathRun {
    pub noise: NoisePath,
    pub traj: Trajectory,
    pub spde: SpdePath,
    pub residual: Vec<Vec<f64>>,
}

fn run_path(ex: &Experiment, sys: &System, noise: NoisePath, phis: &[HermiteRep]) -> Result<PathRun> {
    let traj = solve_sde(sys, &ex.kappa, &noise, ex.config.run.m)?;
    let spde = translate_solution(&traj, &ex.xi, &ex.ops)?;
    let residual = weak_residual(&spde, &ex.set, &noise, sys.small_nodes(), &ex.ops, phis)?;
    Ok(PathRun {
        noise,
        traj,
        spde,
        residual,
    })
}

fn path_noise(ex: &Experiment, index: usize, dt: f64) -> Result<NoisePath> {
    let nz = &ex.config.noise;
    sample_noise_path(&ex.model, nz.horizon, dt, path_seed(nz.seed, index as u64))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum SnapshotRecord<'a> {
    Header {
        config_hash: &'a str,
        seed: u64,
        d: usize,
        #[serde(rename = "N")]
        n: usize,
        p: f64,
        stopped_at: Option<f64>,
    },
    Snapshot {
        t: f64,
        #[serde(flatten)]
        kind: PointKind,
        tail: f64,
        coeffs: &'a [f64],
    },
}

fn write_snapshots(path: &Path, ex: &Experiment, spde: &SpdePath) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = SnapshotRecord::Header {
        config_hash: &ex.hash,
        seed: spde.seed,
        d: ex.config.space.d,
        n: ex.config.space.n,
        p: ex.xi.nominal_index,
        stopped_at: spde.stopped_at,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    let stride = ex.config.run.snapshot_stride;
    let last = spde.len().saturating_sub(1);
    for (i, y) in spde.snapshots.iter().enumerate() {
        let keep = match spde.kinds[i] {
            PointKind::Grid(k) => k % stride == 0 || i == last,
            _ => i == last,
        };
        if keep {
            let rec = SnapshotRecord::Snapshot {
                t: spde.times[i],
                kind: spde.kinds[i],
                tail: spde.tails[i],
                coeffs: y.coeffs(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn hypothesis_warnings(ex: &Experiment) -> Result<Value> {
    let rep = hypothesis_report(&ex.set, &ex.xi, &ex.model, ex.config.space.p, &ex.ops, &ex.config.hypotheses)?;
    for c in rep.checks.iter().filter(|c| !c.passed) {
        eprintln!("warning: hypothesis ({}) not satisfied: {}", c.id, c.detail);
    }
    Ok(json!({ "all_passed": rep.all_passed(), "failed": rep.failed_ids() }))
}

/// Simulates every path at the configured step and writes trajectories,
/// noise replays, SPDE snapshots and a summary. Always succeeds unless a
/// runtime error occurs; hypothesis violations are warnings.
pub fn simulate(ex: &Experiment, out: &Path) -> Result<bool> {
    let cfg = &ex.config;
    let sys = System::new(&ex.set, &ex.xi, &ex.model, &ex.ops)?;
    let phis = test_functions(cfg.space.d, cfg.space.n, cfg.run.test_degree)?;
    let runs: Vec<PathRun> = (0..cfg.noise.paths)
        .into_par_iter()
        .map(|i| run_path(ex, &sys, path_noise(ex, i, cfg.noise.dt)?, &phis))
        .collect::<Result<_>>()?;

    for sub in ["trajectories", "noise", "snapshots"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let comment = provenance(ex);
    for (i, r) in runs.iter().enumerate() {
        let c = format!("{comment} seed={}", r.traj.seed);
        let mut w = BufWriter::new(File::create(out.join(format!("trajectories/path_{i:04}.csv")))?);
        r.traj.write_csv(&mut w, Some(&c))?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(out.join(format!("noise/path_{i:04}.jsonl")))?);
        r.noise.write_jsonl(&mut w, Some(&ex.hash))?;
        w.flush()?;
        write_snapshots(&out.join(format!("snapshots/path_{i:04}.jsonl")), ex, &r.spde)?;
    }

    let survivors: Vec<&PathRun> = runs.iter().filter(|r| r.traj.stopped.is_none()).collect();
    let per_path: Vec<f64> = survivors.iter().map(|r| max_abs(&r.residual)).collect();
    let summary = json!({
        "command": "simulate",
        "config_hash": ex.hash,
        "seed": cfg.noise.seed,
        "paths": runs.len(),
        "survivors": survivors.len(),
        "survival_fraction": survivors.len() as f64 / runs.len() as f64,
        "explosion_times": runs.iter().map(|r| r.traj.stopped.as_ref().map(|s| s.time)).collect::<Vec<_>>(),
        "path_seeds": runs.iter().map(|r| r.traj.seed).collect::<Vec<_>>(),
        "tail_mass_max": runs.iter().map(|r| r.spde.max_tail()).fold(0.0, f64::max),
        "tail_mass_by_path": runs.iter().map(|r| r.spde.max_tail()).collect::<Vec<_>>(),
        "final_states": runs.iter().map(|r| r.traj.final_state().to_vec()).collect::<Vec<_>>(),
        "weak_residual": {
            "test_functions": phis.len(),
            "rms_of_path_max": rms(&per_path),
            "max": per_path.iter().copied().fold(0.0, f64::max),
        },
        "hypotheses": hypothesis_warnings(ex)?,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(true)
}

/// Refinement levels: level `l` uses step `dt / 2^l` and all levels share
/// the finest noise path.
fn refinement_noises(ex: &Experiment, index: usize) -> Result<Vec<NoisePath>> {
    let r = ex.config.run.refinements;
    let fine = path_noise(ex, index, ex.config.noise.dt / (1u64 << r) as f64)?;
    (0..=r).map(|l| fine.coarsen(1 << (r - l))).collect()
}

fn ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

fn correspondence_suite(ex: &Experiment, sys: &System) -> Result<Value> {
    let cfg = &ex.config;
    let tol = &cfg.run.tolerances;
    let exact = ex.kappa.iter().all(|&k| k == 0.0);
    let checks: Vec<(bool, f64)> = (0..cfg.noise.paths)
        .into_par_iter()
        .map(|i| {
            let noise = path_noise(ex, i, cfg.noise.dt)?;
            let traj = solve_sde(sys, &ex.kappa, &noise, cfg.run.m)?;
            let spde = translate_solution(&traj, &ex.xi, &ex.ops)?;
            let z = reconstruct_z(&spde, &ex.set, &noise, sys.small_nodes())?;
            let mut dev = 0.0f64;
            for (zk, uk) in z.iter().zip(&traj.states) {
                for ((a, b), k) in zk.iter().zip(uk).zip(&ex.kappa) {
                    dev = dev.max((a - (b - k)).abs());
                }
            }
            Ok((z == traj.states, dev))
        })
        .collect::<Result<_>>()?;
    let bitwise = checks.iter().filter(|c| c.0).count();
    let max_dev = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    let passed = if exact { bitwise == checks.len() } else { max_dev <= tol.correspondence };
    Ok(json!({
        "suite": "correspondence",
        "passed": passed,
        "kappa_zero": exact,
        "bitwise_equal_paths": bitwise,
        "paths": checks.len(),
        "max_deviation": max_dev,
    }))
}

fn weak_residual_suite(ex: &Experiment, sys: &System, phis: &[HermiteRep]) -> Result<Value> {
    let cfg = &ex.config;
    let tol = &cfg.run.tolerances;
    let levels: Vec<Vec<Option<f64>>> = (0..cfg.noise.paths)
        .into_par_iter()
        .map(|i| {
            refinement_noises(ex, i)?
                .into_iter()
                .map(|noise| {
                    let run = run_path(ex, sys, noise, phis)?;
                    Ok(run.traj.stopped.is_none().then(|| max_abs(&run.residual)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let surviving: Vec<&Vec<Option<f64>>> = levels.iter().filter(|l| l.iter().all(Option::is_some)).collect();
    let rms_by_level: Vec<f64> = (0..=cfg.run.refinements)
        .map(|l| rms(&surviving.iter().map(|p| p[l].expect("survivor")).collect::<Vec<_>>()))
        .collect();
    let factors = ratios(&rms_by_level);
    let vanishing = rms_by_level.iter().all(|&v| v <= 1e-14);
    Ok(json!({
        "suite": "weak-residual",
        "passed": vanishing || factors.iter().all(|&f| f >= tol.weak_residual_factor),
        "dt_by_level": (0..=cfg.run.refinements).map(|l| cfg.noise.dt / (1u64 << l) as f64).collect::<Vec<_>>(),
        "paths": levels.len(),
        "surviving_paths": surviving.len(),
        "rms_of_path_max": rms_by_level,
        "reduction_factors": factors,
        "required_factor": tol.weak_residual_factor,
        "identically_zero": vanishing,
    }))
}

fn ito_suite(ex: &Experiment, sys: &System, phis: &[HermiteRep]) -> Result<Value> {
    let cfg = &ex.config;
    let tol = &cfg.run.tolerances;
    let per_path: Vec<Vec<f64>> = (0..cfg.noise.paths)
        .into_par_iter()
        .map(|i| {
            refinement_noises(ex, i)?
                .iter()
                .map(|noise| {
                    let traj = solve_sde(sys, &ex.kappa, noise, cfg.run.m)?;
                    Ok(max_abs(&ito_residual(&traj, &ex.xi, &ex.ops, phis)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let max_by_level: Vec<f64> = (0..=cfg.run.refinements)
        .map(|l| per_path.iter().map(|p| p[l]).fold(0.0, f64::max))
        .collect();
    let factors = ratios(&max_by_level);
    let [lo, hi] = tol.first_order_band;
    let small = max_by_level.iter().all(|&v| v <= tol.ito);
    let first_order = !factors.is_empty() && factors.iter().all(|&f| (lo..=hi).contains(&f));
    Ok(json!({
        "suite": "ito",
        "passed": small || first_order,
        "max_residual_by_level": max_by_level,
        "reduction_factors": factors,
        "within_tolerance": small,
        "first_order": first_order,
        "tolerance": tol.ito,
        "band": tol.first_order_band,
    }))
}

fn uniqueness_suite(ex: &Experiment, sys: &System) -> Result<Value> {
    let cfg = &ex.config;
    let r = cfg.run.refinements;
    let per_path: Vec<Option<(Vec<SpdePath>, f64, f64)>> = (0..cfg.noise.paths)
        .into_par_iter()
        .map(|i| {
            let noises = refinement_noises(ex, i)?;
            let coarse: Vec<f64> = noises[0]
                .points
                .iter()
                .filter(|p| matches!(p.kind, PointKind::Grid(_)))
                .map(|p| p.t)
                .collect();
            let mut paths = Vec::with_capacity(noises.len());
            for noise in &noises {
                let traj = solve_sde(sys, &ex.kappa, noise, cfg.run.m)?;
                if traj.stopped.is_some() {
                    return Ok(None);
                }
                paths.push(translate_solution(&traj, &ex.xi, &ex.ops)?.restrict_to(&coarse)?);
            }
            let identical = pathwise_uniqueness_probe(sys, &ex.kappa, &noises[0], cfg.run.m, Perturbation::Identical)?;
            let reversed = pathwise_uniqueness_probe(sys, &ex.kappa, &noises[0], cfg.run.m, Perturbation::ReverseSummation)?;
            Ok(Some((paths, identical, reversed)))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&(Vec<SpdePath>, f64, f64)> = per_path.iter().flatten().collect();
    let p = cfg.space.p;
    let mut gaps = Vec::with_capacity(r);
    for l in 0..r {
        let a: Vec<SpdePath> = kept.iter().map(|k| k.0[l].clone()).collect();
        let b: Vec<SpdePath> = kept.iter().map(|k| k.0[l + 1].clone()).collect();
        let g = if a.is_empty() { vec![0.0] } else { uniqueness_gap(&a, &b, p)? };
        gaps.push(g.iter().copied().fold(0.0, f64::max));
    }
    let identical = kept.iter().map(|k| k.1).fold(0.0, f64::max);
    let reversed = kept.iter().map(|k| k.2).fold(0.0, f64::max);
    let vanishing = gaps.iter().all(|&g| g <= 1e-28);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok(json!({
        "suite": "uniqueness",
        "passed": identical == 0.0 && (vanishing || decreasing) && !kept.is_empty(),
        "surviving_paths": kept.len(),
        "max_gap_between_levels": gaps,
        "identical_rerun_gap": identical,
        "reversed_summation_gap": reversed,
    }))
}

/// Runs the requested suites and writes `verify.json`; returns whether
/// every suite passed.
pub fn verify(ex: &Experiment, suites: &[Suite], out: &Path) -> Result<bool> {
    let cfg = &ex.config;
    let sys = System::new(&ex.set, &ex.xi, &ex.model, &ex.ops)?;
    let phis = test_functions(cfg.space.d, cfg.space.n, cfg.run.test_degree)?;
    let mut reports = Vec::new();
    for s in suites {
        reports.push(match s {
            Suite::Correspondence => correspondence_suite(ex, &sys)?,
            Suite::WeakResidual => weak_residual_suite(ex, &sys, &phis)?,
            Suite::Ito => ito_suite(ex, &sys, &phis)?,
            Suite::Uniqueness => uniqueness_suite(ex, &sys)?,
        });
    }
    let passed = reports.iter().all(|r| r["passed"] == Value::Bool(true));
    for r in &reports {
        println!("{}: {}", r["suite"].as_str().unwrap_or("?"), if r["passed"] == Value::Bool(true) { "pass" } else { "FAIL" });
    }
    write_json(
        &out.join("verify.json"),
        &json!({
            "command": "verify",
            "config_hash": ex.hash,
            "seed": cfg.noise.seed,
            "passed": passed,
            "suites": reports,
        }),
    )?;
    Ok(passed)
}

/// Runs the configured inequality checks; writes `inequalities.json` and
/// one CSV of per-sample values per report.
pub fn inequalities(ex: &Experiment, out: &Path) -> Result<bool> {
    let cfg = &ex.config;
    let iq = cfg
        .inequalities
        .as_ref()
        .ok_or_else(|| Error::config("inequalities", "section missing"))?;
    let seed = cfg.noise.seed;
    let mut reports: Vec<InequalityReport> = Vec::new();
    for m in &iq.monotonicity {
        reports.push(monotonicity_check(m.p, &m.sigma, &m.b, iq.samples, &iq.levels, seed)?);
    }
    for s in &iq.second_order {
        reports.push(spl_mono_check(s.p, s.d, iq.samples, &iq.levels, seed)?);
        let n = *iq.levels.last().expect("validated");
        reports.push(first_order_identity_check(s.p, s.d, iq.samples, n, seed)?);
    }
    for (k, t) in iq.taylor.iter().enumerate() {
        let psi = t.psi.build(t.z.len(), t.n, 0.0, Path::new("."), &format!("inequalities.taylor[{k}].psi"))?;
        reports.push(taylor_jump_check(t.p, &t.z, &psi, iq.quadrature_order)?);
    }
    for t in &iq.translation {
        let mut opts = t.options.clone().unwrap_or_else(|| TranslationFitOptions::standard(t.n));
        if t.options.is_none() {
            opts.seed = seed;
        }
        reports.push(translation_bound_fit(t.p, t.d, t.n, &opts)?);
    }
    let dir = out.join("inequality_samples");
    fs::create_dir_all(&dir)?;
    for (k, r) in reports.iter().enumerate() {
        let mut w = BufWriter::new(File::create(dir.join(format!("{k:02}_{}.csv", r.id)))?);
        writeln!(w, "# {} seed={}", provenance(ex), r.seed)?;
        writeln!(w, "sample,value")?;
        for (i, v) in r.sample_ratios.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
        w.flush()?;
    }
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        println!("{} (p = {}, d = {}): {}", r.id, r.p, r.d, if r.passed { "pass" } else { "FAIL" });
    }
    write_json(
        &out.join("inequalities.json"),
        &json!({
            "command": "inequalities",
            "config_hash": ex.hash,
            "seed": seed,
            "passed": passed,
            "reports": reports,
        }),
    )?;
    Ok(passed)
}

/// Writes `hypotheses.json`. Violations are warnings, not failures.
pub fn hypotheses(ex: &Experiment, out: &Path) -> Result<bool> {
    let rep = hypothesis_report(&ex.set, &ex.xi, &ex.model, ex.config.space.p, &ex.ops, &ex.config.hypotheses)?;
    for c in rep.checks.iter().filter(|c| !c.passed) {
        eprintln!("warning: hypothesis ({}) not satisfied: {}", c.id, c.detail);
    }
    write_json(
        &out.join("hypotheses.json"),
        &json!({
            "command": "hypotheses",
            "config_hash": ex.hash,
            "seed": ex.config.noise.seed,
            "all_passed": rep.all_passed(),
            "report": rep,
        }),
    )?;
    Ok(true)
}
