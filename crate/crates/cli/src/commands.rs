//! Subcommand implementations. Every command validates its configuration
//! before creating the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bvsol_core::diagnostics::{
    convergence_sweep, discrete_energy_inequality, energy_balance_residual, energy_scale, BalanceQuadrature,
};
use bvsol_core::export::{write_curve, write_path, write_states, write_trajectory};
use bvsol_core::numerics::GridFunction;
use bvsol_core::presets::front_position;
use bvsol_core::reparam::{energy_dissipation_arclength, normalization_residual, work_identity};
use bvsol_core::solver::{SchemeParams, Trajectory, ViscousSolver};
use bvsol_core::transitions::{
    classify_transition, optimize_transition, viscous_transition_ode, FlowOptions, TransitionOptions,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Built, Diagnostic, ExperimentConfig};
use crate::CliError;

/// Version of the CSV and JSON layouts.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    /// `None` for informational diagnostics.
    pub pass: Option<bool>,
    pub details: Value,
}

impl Verdict {
    fn check(name: &str, pass: bool, details: Value) -> Self {
        Self {
            name: name.into(),
            pass: Some(pass),
            details,
        }
    }

    fn info(name: &str, details: Value) -> Self {
        Self {
            name: name.into(),
            pass: None,
            details,
        }
    }
}

pub fn all_pass(v: &[Verdict]) -> bool {
    v.iter().all(|x| x.pass != Some(false))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let w = create(path)?;
    serde_json::to_writer_pretty(w, v).map_err(|e| CliError::Output(e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Output(e.to_string()))
}

struct Manifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    artifacts: Artifacts,
    workers: Option<usize>,
    started: Instant,
    pass: bool,
}

impl Manifest<'_> {
    fn write(self, dir: &Path) -> Result<(), CliError> {
        let artifacts: Vec<Value> = self
            .artifacts
            .iter()
            .map(|(f, cols)| json!({ "file": f, "columns": cols }))
            .collect();
        let m = json!({
            "format_version": FORMAT_VERSION,
            "tool": env!("CARGO_PKG_NAME"),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "core_version": bvsol_core::VERSION,
            "command": self.command,
            "workers": self.workers,
            "wall_seconds": self.started.elapsed().as_secs_f64(),
            "verdict": if self.pass { "PASS" } else { "FAIL" },
            "artifacts": artifacts,
            "config": self.config,
        });
        write_json(&dir.join("manifest.json"), &m)
    }
}

type Artifacts = Vec<(String, Vec<&'static str>)>;

const TRAJECTORY_COLUMNS: [&str; 7] = [
    "n",
    "t_n",
    "energy",
    "dissipation_increment",
    "inner_residual",
    "l1_increment",
    "l2_increment",
];
const CURVE_COLUMNS: [&str; 7] = ["s", "t", "dt_ds", "psi_rate", "slack", "viscous_rate", "energy"];
const PATH_COLUMNS: [&str; 6] = ["r", "theta", "energy", "slack", "label", "cumulative_action"];

/// Runs the configured diagnostics on one trajectory and writes their
/// artifacts into `dir`.
fn diagnose_trajectory(
    cfg: &ExperimentConfig,
    built: &Built,
    params: &SchemeParams,
    traj: &Trajectory,
    dir: &Path,
    artifacts: &mut Artifacts,
) -> Result<Vec<Verdict>, CliError> {
    let n = traj.n_steps();
    let mut out = vec![Verdict::info(
        "summary",
        json!({
            "n_steps": n,
            "bv_total": traj.bv_total(),
            "dissipation_total": traj.dissipation.iter().sum::<f64>(),
            "max_inner_residual": traj.residuals.iter().cloned().fold(0.0, f64::max),
            "final_energy": traj.energies.last(),
            "energy_scale": energy_scale(traj),
        }),
    )];
    for d in &cfg.run.diagnostics {
        match d {
            Diagnostic::Inequality => {
                let (res, budget) = discrete_energy_inequality(&built.model, params, traj, 0, n)?;
                out.push(Verdict::check(
                    "energy_inequality",
                    res >= -budget,
                    json!({ "residual": res, "budget": budget }),
                ));
            }
            Diagnostic::Balance => {
                let solver = ViscousSolver::new(&built.model, &built.diss, params.clone())?;
                let q = BalanceQuadrature::Variational {
                    tol: cfg.run.balance_tol,
                };
                let b = energy_balance_residual(&solver, traj, 0, n, q)?;
                out.push(Verdict::check(
                    "energy_balance",
                    b.within_budget(),
                    serde_json::to_value(&b).unwrap(),
                ));
            }
            Diagnostic::Reparam => {
                let c = energy_dissipation_arclength(traj, &built.diss)?;
                write_curve(create(&dir.join("curve.csv"))?, &c, &built.model)?;
                artifacts.push(("curve.csv".into(), CURVE_COLUMNS.to_vec()));
                let norm = normalization_residual(&c, None)
                    .iter()
                    .fold(0.0, |a: f64, x| a.max(x.abs()));
                let (a, b) = work_identity(&c, &built.model)?;
                let rel = (a - b).abs() / a.abs().max(1.0);
                out.push(Verdict::check(
                    "reparameterization",
                    norm <= 1e-3 && rel <= 1e-6,
                    json!({ "normalization": norm, "work_identity": rel, "length": c.length() }),
                ));
            }
            Diagnostic::Front => {
                let level = cfg.run.front_level.expect("validated");
                let mut w = csv::Writer::from_writer(create(&dir.join("front.csv"))?);
                w.write_record(["t", "front"])?;
                let mut missing = 0;
                for (t, u) in traj.times.iter().zip(&traj.states) {
                    match front_position(u, level) {
                        Some(a) => w.write_record([t.to_string(), a.to_string()])?,
                        None => {
                            missing += 1;
                            w.write_record([t.to_string(), String::new()])?
                        }
                    }
                }
                w.flush()?;
                artifacts.push(("front.csv".into(), vec!["t", "front"]));
                out.push(Verdict::info(
                    "front",
                    json!({ "level": level, "samples_without_crossing": missing }),
                ));
            }
        }
    }
    Ok(out)
}

fn write_trajectory_artifacts(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    dir: &Path,
    artifacts: &mut Artifacts,
) -> Result<(), CliError> {
    write_trajectory(create(&dir.join("trajectory.csv"))?, traj)?;
    artifacts.push(("trajectory.csv".into(), TRAJECTORY_COLUMNS.to_vec()));
    write_states(create(&dir.join("states.csv"))?, traj, cfg.run.stride)?;
    artifacts.push(("states.csv".into(), vec!["t", "x=<cell centre>..."]));
    if cfg.run.store_trajectory {
        let w = create(&dir.join("trajectory.json"))?;
        serde_json::to_writer(w, traj).map_err(|e| CliError::Output(e.to_string()))?;
        artifacts.push(("trajectory.json".into(), Vec::new()));
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, out: &Path, workers: Option<usize>) -> Result<bool, CliError> {
    let started = Instant::now();
    let built = cfg.build()?;
    let params = cfg.scheme_params()?;
    let pool = pool(workers)?;
    let traj = ViscousSolver::new(&built.model, &built.diss, params.clone())?.solve(&built.u0)?;
    prepare_dir(out)?;
    let mut artifacts = Vec::new();
    write_trajectory_artifacts(cfg, &traj, out, &mut artifacts)?;
    let verdicts = pool.install(|| diagnose_trajectory(cfg, &built, &params, &traj, out, &mut artifacts))?;
    write_json(&out.join("diagnostics.json"), &json!({ "verdicts": verdicts }))?;
    artifacts.push(("diagnostics.json".into(), Vec::new()));
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    artifacts.push(("config.toml".into(), Vec::new()));
    let pass = all_pass(&verdicts);
    Manifest {
        command: "run",
        config: cfg,
        artifacts,
        workers,
        started,
        pass,
    }
    .write(out)?;
    Ok(pass)
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path, workers: Option<usize>) -> Result<bool, CliError> {
    let started = Instant::now();
    let built = cfg.build()?;
    let base = cfg.scheme_params()?;
    let schedule = cfg.schedule();
    bvsol_core::diagnostics::validate_schedule(&schedule)
        .map_err(|e| CliError::Config(format!("scheme.sweep: {e}")))?;
    for &(eps, tau) in &schedule {
        SchemeParams {
            eps,
            tau,
            ..base.clone()
        }
        .validate()
        .map_err(|e| CliError::Config(format!("scheme.sweep: {e}")))?;
    }
    let t = cfg.scheme.horizon;
    let m = cfg.run.samples - 1;
    let sample_times: Vec<f64> = (0..=m).map(|k| t * k as f64 / m as f64).collect();
    let pool = pool(workers)?;
    let report = pool.install(|| {
        convergence_sweep(
            &built.model,
            &built.diss,
            &built.u0,
            &base,
            &schedule,
            &sample_times,
            true,
        )
    })?;
    prepare_dir(out)?;
    let mut artifacts = Vec::new();
    let cell_results: Vec<Result<(Vec<Verdict>, Artifacts), CliError>> = pool.install(|| {
        report
            .cells
            .par_iter()
            .enumerate()
            .map(|(k, cell)| {
                let dir = out.join(format!("cell_{k}"));
                prepare_dir(&dir)?;
                let mut arts = Vec::new();
                let Some(traj) = &cell.trajectory else {
                    return Ok((Vec::new(), arts));
                };
                let params = SchemeParams {
                    eps: cell.eps,
                    tau: cell.tau,
                    ..base.clone()
                };
                write_trajectory_artifacts(cfg, traj, &dir, &mut arts)?;
                let v = diagnose_trajectory(cfg, &built, &params, traj, &dir, &mut arts)?;
                write_json(&dir.join("diagnostics.json"), &json!({ "verdicts": v }))?;
                arts.push(("diagnostics.json".into(), Vec::new()));
                let arts = arts.into_iter().map(|(f, c)| (format!("cell_{k}/{f}"), c)).collect();
                Ok((v, arts))
            })
            .collect()
    });
    let mut pass = true;
    let mut per_cell = Vec::new();
    for r in cell_results {
        let (v, a) = r?;
        pass &= all_pass(&v);
        per_cell.push(v);
        artifacts.extend(a);
    }
    let mut w = csv::Writer::from_writer(create(&out.join("convergence.csv"))?);
    w.write_record([
        "cell",
        "eps",
        "tau",
        "n_steps",
        "bv_total",
        "dissipation_total",
        "max_inner_residual",
        "sup_distance_to_previous",
        "error",
    ])?;
    for (k, (c, d)) in report.cells.iter().zip(&report.successive_distances).enumerate() {
        w.write_record([
            k.to_string(),
            c.eps.to_string(),
            c.tau.to_string(),
            c.n_steps.to_string(),
            c.bv_total.to_string(),
            c.dissipation_total.to_string(),
            c.max_residual.to_string(),
            d.map(|x| x.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    artifacts.push((
        "convergence.csv".into(),
        vec![
            "cell",
            "eps",
            "tau",
            "n_steps",
            "bv_total",
            "dissipation_total",
            "max_inner_residual",
            "sup_distance_to_previous",
            "error",
        ],
    ));
    let mut w = csv::Writer::from_writer(create(&out.join("energies.csv"))?);
    let mut header = vec!["t".to_string()];
    header.extend(report.cells.iter().map(|c| format!("eps={}", c.eps)));
    w.write_record(&header)?;
    for (j, t) in sample_times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(
            report
                .cells
                .iter()
                .map(|c| c.sample_energies.get(j).map(|e| e.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    artifacts.push(("energies.csv".into(), vec!["t", "eps=<viscosity>..."]));
    write_json(
        &out.join("sweep.json"),
        &json!({ "report": report, "verdicts": per_cell }),
    )?;
    artifacts.push(("sweep.json".into(), Vec::new()));
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    artifacts.push(("config.toml".into(), Vec::new()));
    let failed = report.cells.iter().find_map(|c| c.error.clone());
    Manifest {
        command: "sweep",
        config: cfg,
        artifacts,
        workers,
        started,
        pass: pass && failed.is_none(),
    }
    .write(out)?;
    if let Some(e) = failed {
        return Err(CliError::Solver(e));
    }
    Ok(pass)
}

fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn endpoint(
    name: &str,
    values: &Option<Vec<f64>>,
    step: Option<usize>,
    snapshot: Option<&Trajectory>,
    grid: bvsol_core::numerics::Grid1D,
) -> Result<GridFunction, CliError> {
    match (values, step, snapshot) {
        (Some(v), None, _) if v.len() == 1 => Ok(GridFunction::constant(grid, v[0])),
        (Some(v), None, _) => {
            GridFunction::new(grid, v.clone()).map_err(|e| CliError::Config(format!("transition.{name}: {e}")))
        }
        (None, Some(k), Some(tr)) => tr
            .states
            .get(k)
            .cloned()
            .ok_or_else(|| CliError::Config(format!("transition.{name}_step: no node {k} in the snapshot"))),
        (None, Some(_), None) => Err(CliError::Config(format!(
            "transition.{name}_step needs transition.snapshot"
        ))),
        _ => Err(CliError::Config(format!(
            "transition: give exactly one of {name} and {name}_step"
        ))),
    }
}

pub fn transition(cfg: &ExperimentConfig, out: &Path) -> Result<bool, CliError> {
    let started = Instant::now();
    let tc = cfg
        .transition
        .as_ref()
        .ok_or_else(|| CliError::Config("transition: section missing".into()))?;
    let built = cfg.build()?;
    let grid = *built.model.grid();
    let snapshot = match &tc.snapshot {
        Some(p) => Some(load_trajectory(Path::new(p))?),
        None => None,
    };
    let from = endpoint("from", &tc.from, tc.from_step, snapshot.as_ref(), grid)?;
    let to = endpoint("to", &tc.to, tc.to_step, snapshot.as_ref(), grid)?;
    if !built.model.is_smooth() {
        return Err(CliError::Config(
            "transition: the energy is nonsmooth; costs need subgradient witnesses, which the runner cannot supply"
                .into(),
        ));
    }
    let opts = TransitionOptions {
        segments: tc.segments,
        restarts: tc.restarts,
        seed: tc.seed,
        ..Default::default()
    };
    let opt = optimize_transition(&from, &to, tc.t, &built.model, &built.diss.gauge, None, &opts)?;
    let class = classify_transition(&opt.path, &built.model, &built.diss, tc.regime_tol)?;
    let flow = if tc.flow {
        match viscous_transition_ode(
            &from,
            Some(&to),
            tc.t,
            &built.model,
            &built.diss,
            &FlowOptions::default(),
        ) {
            Ok(f) => {
                let miss = (&f.arrival - &to).max_abs();
                json!({
                    "action": f.action,
                    "energy_drop": f.energy_drop,
                    "arrival_distance_to_target": miss,
                    "relative_difference_to_optimum": (f.action - opt.cost).abs() / opt.cost.max(1e-300),
                })
            }
            Err(e) => json!({ "error": e.to_string() }),
        }
    } else {
        Value::Null
    };
    prepare_dir(out)?;
    let mut artifacts = Vec::new();
    write_path(create(&out.join("path.csv"))?, &opt.path, &built.model, Some(&class))?;
    artifacts.push(("path.csv".into(), PATH_COLUMNS.to_vec()));
    let verdicts = vec![
        Verdict::check(
            "psi_lower_bound",
            opt.psi_bound_gap >= -1e-9,
            json!({ "gap": opt.psi_bound_gap }),
        ),
        Verdict::check(
            "energy_lower_bound",
            opt.energy_bound_gap >= -1e-9,
            json!({ "gap": opt.energy_bound_gap }),
        ),
    ];
    let report = json!({
        "cost": opt.cost,
        "seed_cost": opt.seed_cost,
        "restart_costs": opt.restart_costs,
        "runs": class.runs,
        "flow": flow,
        "verdicts": verdicts,
    });
    write_json(&out.join("transition.json"), &report)?;
    artifacts.push(("transition.json".into(), Vec::new()));
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    artifacts.push(("config.toml".into(), Vec::new()));
    let pass = all_pass(&verdicts);
    Manifest {
        command: "transition",
        config: cfg,
        artifacts,
        workers: None,
        started,
        pass,
    }
    .write(out)?;
    Ok(pass)
}

fn stored_run(dir: &Path) -> Result<(ExperimentConfig, Trajectory), CliError> {
    let manifest = dir.join("manifest.json");
    let cfg = ExperimentConfig::load(Some(&manifest), None, &[])?;
    let traj = load_trajectory(&dir.join("trajectory.json"))?;
    Ok((cfg, traj))
}

fn stored_params(cfg: &ExperimentConfig, traj: &Trajectory) -> Result<SchemeParams, CliError> {
    let base = cfg.scheme_params()?;
    Ok(SchemeParams {
        eps: traj.eps,
        tau: traj.tau,
        ..base
    })
}

/// Recomputes the diagnostics of a stored run into `diagnose.json`.
pub fn diagnose(dir: &Path, workers: Option<usize>) -> Result<bool, CliError> {
    let (cfg, traj) = stored_run(dir)?;
    let built = cfg.build()?;
    let params = stored_params(&cfg, &traj)?;
    let mut artifacts = Vec::new();
    let verdicts = pool(workers)?.install(|| diagnose_trajectory(&cfg, &built, &params, &traj, dir, &mut artifacts))?;
    write_json(&dir.join("diagnose.json"), &json!({ "verdicts": verdicts }))?;
    Ok(all_pass(&verdicts))
}

/// Rewrites the CSV artifacts of a stored run into `target`.
pub fn export(dir: &Path, target: Option<&PathBuf>, stride: Option<usize>) -> Result<(), CliError> {
    let (mut cfg, traj) = stored_run(dir)?;
    if let Some(s) = stride {
        if s == 0 {
            return Err(CliError::Config("--stride must be at least 1".into()));
        }
        cfg.run.stride = s;
    }
    cfg.run.store_trajectory = false;
    let built = cfg.build()?;
    let target = target.map(PathBuf::as_path).unwrap_or(dir);
    prepare_dir(target)?;
    let mut artifacts = Vec::new();
    write_trajectory_artifacts(&cfg, &traj, target, &mut artifacts)?;
    let c = energy_dissipation_arclength(&traj, &built.diss)?;
    write_curve(create(&target.join("curve.csv"))?, &c, &built.model)?;
    Ok(())
}
