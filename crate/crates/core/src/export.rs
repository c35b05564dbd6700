//! CSV writers for trajectories, transition paths and parameterised curves.

use std::io::Write;

use serde::Serialize;

use crate::dissipation::Gauge;
use crate::energy::EnergyModel;
use crate::error::Result;
use crate::numerics::{l1_norm, l2_norm};
use crate::reparam::ParameterizedCurve;
use crate::solver::Trajectory;
use crate::transitions::{Classification, Regime, TransitionPath};

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    n: usize,
    t_n: f64,
    energy: f64,
    dissipation_increment: f64,
    inner_residual: f64,
    l1_increment: f64,
    l2_increment: f64,
}

/// One row per node `n = 0..=N`.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for n in 0..traj.len() {
        let (l1, l2) = if n == 0 {
            (0.0, 0.0)
        } else {
            let du = &traj.states[n] - &traj.states[n - 1];
            (l1_norm(&du), l2_norm(&du))
        };
        w.serialize(TrajectoryRow {
            n,
            t_n: traj.times[n],
            energy: traj.energies[n],
            dissipation_increment: traj.dissipation[n],
            inner_residual: traj.residuals[n],
            l1_increment: l1,
            l2_increment: l2,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PathRow {
    r: f64,
    theta: String,
    energy: f64,
    slack: Option<f64>,
    label: Option<Regime>,
    cumulative_action: f64,
}

/// One row per node. `theta` is the value for scalar states and
/// `min/mean/max` otherwise; slack and label describe the segment ending at
/// the node.
pub fn write_path<W: Write>(
    out: W,
    path: &TransitionPath,
    model: &EnergyModel,
    labels: Option<&Classification>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut acc = 0.0;
    for (m, node) in path.nodes.iter().enumerate() {
        let v = node.values();
        let theta = if v.len() == 1 {
            format!("{}", v[0])
        } else {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            format!("{lo}/{mean}/{hi}")
        };
        if m > 0 {
            acc += path.actions[m - 1];
        }
        w.serialize(PathRow {
            r: path.r[m],
            theta,
            energy: model.energy(path.t, node)?,
            slack: (m > 0).then(|| path.slack[m - 1]),
            label: if m > 0 { labels.map(|c| c.labels[m - 1]) } else { None },
            cumulative_action: acc,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CurveRow {
    s: f64,
    t: f64,
    dt_ds: Option<f64>,
    psi_rate: Option<f64>,
    slack: Option<f64>,
    viscous_rate: Option<f64>,
    energy: f64,
}

/// One row per sample; rates belong to the interval ending at the sample.
pub fn write_curve<W: Write>(out: W, curve: &ParameterizedCurve, model: &EnergyModel) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for k in 0..curve.len() {
        let rate = |v: &[f64]| (k > 0).then(|| v[k - 1]);
        w.serialize(CurveRow {
            s: curve.s[k],
            t: curve.t[k],
            dt_ds: rate(&curve.dt_ds),
            psi_rate: rate(&curve.psi_rate),
            slack: rate(&curve.slack),
            viscous_rate: rate(&curve.viscous_rate),
            energy: model.energy(curve.t[k], &curve.states[k])?,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Cell values at every node, one row per node: `t, u_0, ..., u_{N-1}`.
pub fn write_states<W: Write>(out: W, traj: &Trajectory, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let g = traj.grid;
    let mut header = vec!["t".to_string()];
    header.extend(g.centers().iter().map(|x| format!("x={x}")));
    w.write_record(&header)?;
    for n in (0..traj.len()).step_by(stride.max(1)) {
        let mut rec = vec![traj.times[n].to_string()];
        rec.extend(traj.states[n].values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `Psi`-length of each step, handy for plotting jump locations.
pub fn step_psi_lengths(traj: &Trajectory, gauge: &Gauge) -> Vec<f64> {
    (1..traj.len())
        .map(|n| gauge.psi(&(&traj.states[n] - &traj.states[n - 1])))
        .collect()
}
