//! Certificates for computed limits: variations, jump detection, energy
//! balances, local stability, jump conditions and chain-rule defects.

use std::cell::RefCell;
use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissipation::{DissipationPair, Gauge};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, l2_norm, median, GridFunction};
use crate::solver::{stability_slack, SchemeParams, Trajectory, ViscousSolver};

/// One detected jump. The jump happens inside `(t_left, t_right]`, the
/// bracket of the above-threshold increments. `middle` is `u(t)`, taken equal
/// to `u(t-)` for left-continuous sampled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTriple {
    pub t: f64,
    pub t_left: f64,
    pub t_right: f64,
    /// Sample indices bracketing the jump.
    pub first_sample: usize,
    pub last_sample: usize,
    pub left: GridFunction,
    pub middle: GridFunction,
    pub right: GridFunction,
    /// `Psi(u(t+) - u(t-))`.
    pub size: f64,
    pub uncertain: bool,
}

/// A sampled curve `t_k -> u(t_k)` with its detected jumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitCurve {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    pub jumps: Vec<JumpTriple>,
}

impl LimitCurve {
    pub fn new(times: Vec<f64>, states: Vec<GridFunction>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidParameter(format!(
                "curve needs matching nonempty samples, got {} times and {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidParameter("sample times must be nondecreasing".into()));
        }
        let g = *states[0].grid();
        if states.iter().any(|s| *s.grid() != g) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            times,
            states,
            jumps: Vec::new(),
        })
    }

    /// Samples `f` at the given times.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> GridFunction) -> Result<Self> {
        let states = times.iter().map(|&t| f(t)).collect();
        Self::new(times, states)
    }

    /// Every `stride`-th node of a trajectory, always including the last one.
    pub fn from_trajectory(traj: &Trajectory, stride: usize) -> Result<Self> {
        let stride = stride.max(1);
        let n = traj.len();
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        Self::new(
            idx.iter().map(|&k| traj.times[k]).collect(),
            idx.iter().map(|&k| traj.states[k].clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Runs [`detect_jumps`] and stores the result.
    pub fn with_jumps(mut self, gauge: &Gauge, threshold: Option<f64>) -> Result<Self> {
        self.jumps = detect_jumps(&self, gauge, threshold)?;
        Ok(self)
    }

    /// Whether sample `k` lies strictly inside a jump bracket.
    pub fn is_jump_sample(&self, k: usize) -> bool {
        self.jumps.iter().any(|j| k > j.first_sample && k < j.last_sample)
    }
}

fn increments(states: &[GridFunction], gauge: &Gauge) -> Vec<f64> {
    states.windows(2).map(|w| gauge.psi(&(&w[1] - &w[0]))).collect()
}

/// `sum_m Psi(u(t_m) - u(t_{m-1}))` over the sampled partition.
pub fn psi_variation(states: &[GridFunction], gauge: &Gauge) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::InvalidParameter("variation needs at least two samples".into()));
    }
    Ok(increments(states, gauge).iter().sum())
}

/// Cumulative `Var_Psi(u; [t_0, t_k])` for every sample.
pub fn psi_variation_profile(states: &[GridFunction], gauge: &Gauge) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(increments(states, gauge).into_iter().map(|d| {
            acc += d;
            acc
        }))
        .collect()
}

/// Five times the median `Psi`-increment.
pub fn default_jump_threshold(states: &[GridFunction], gauge: &Gauge) -> f64 {
    let inc = increments(states, gauge);
    if inc.is_empty() {
        return 0.0;
    }
    let max = inc.iter().cloned().fold(0.0, f64::max);
    (5.0 * median(&inc)).max(1e-12 * max)
}

fn plateau(states: &[GridFunction], range: std::ops::RangeInclusive<usize>) -> GridFunction {
    let grid = *states[0].grid();
    let members: Vec<&GridFunction> = range.map(|k| &states[k]).collect();
    let vals = (0..grid.n_cells())
        .map(|i| median(&members.iter().map(|s| s.values()[i]).collect::<Vec<_>>()))
        .collect();
    GridFunction::from_raw(grid, vals)
}

/// Times where the `Psi`-increment exceeds `threshold` (default
/// [`default_jump_threshold`]). Consecutive exceeding increments form one
/// jump; one-sided limits are cellwise medians over windows of five samples.
pub fn detect_jumps(curve: &LimitCurve, gauge: &Gauge, threshold: Option<f64>) -> Result<Vec<JumpTriple>> {
    const WINDOW: usize = 5;
    let states = &curve.states;
    if states.len() < 2 {
        return Ok(Vec::new());
    }
    gauge.check_len(states[0].len())?;
    let inc = increments(states, gauge);
    let thr = threshold.unwrap_or_else(|| default_jump_threshold(states, gauge));
    // runs of increments, increment k joins samples k and k+1
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < inc.len() {
        if inc[k] > thr {
            let start = k;
            while k + 1 < inc.len() && inc[k + 1] > thr {
                k += 1;
            }
            runs.push((start, k + 1));
        }
        k += 1;
    }
    let last = states.len() - 1;
    let mut out = Vec::with_capacity(runs.len());
    for (r, &(a, b)) in runs.iter().enumerate() {
        let floor = if r == 0 { 0 } else { runs[r - 1].1 };
        let ceil = if r + 1 == runs.len() { last } else { runs[r + 1].0 };
        let lo = a.saturating_sub(WINDOW - 1).max(floor);
        let hi = (b + WINDOW - 1).min(ceil);
        // a window cut short by a neighbouring jump leaves an ambiguous plateau
        let uncertain =
            (r > 0 && lo == floor && a - lo + 1 < WINDOW) || (r + 1 < runs.len() && hi == ceil && hi - b + 1 < WINDOW);
        let left = plateau(states, lo..=a);
        let right = plateau(states, b..=hi);
        let size = gauge.psi(&(&right - &left));
        out.push(JumpTriple {
            t: 0.5 * (curve.times[a] + curve.times[b]),
            t_left: curve.times[a],
            t_right: curve.times[b],
            first_sample: a,
            last_sample: b,
            middle: left.clone(),
            left,
            right,
            size,
            uncertain,
        });
    }
    Ok(out)
}

/// Groups jumps whose brackets are at most `max_gap` apart in time.
pub fn jump_families(jumps: &[JumpTriple], max_gap: f64) -> Vec<Vec<usize>> {
    let mut fams: Vec<Vec<usize>> = Vec::new();
    for (k, j) in jumps.iter().enumerate() {
        match fams.last_mut() {
            Some(f) if j.t_left - jumps[*f.last().unwrap()].t_right <= max_gap => f.push(k),
            _ => fams.push(vec![k]),
        }
    }
    fams
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceQuadrature {
    /// Right-endpoint multipliers, work at the previous state.
    Rectangle,
    /// Variational interpolant with adaptive quadrature in each step.
    Variational { tol: f64 },
    /// Sampled limit curve with `Var_f` as dissipation.
    Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub s: f64,
    pub t: f64,
    pub quadrature: BalanceQuadrature,
    /// `int Psi_eps(u') + Psi_eps^*(xi)`, or `Var_f` for limit curves.
    pub dissipation: f64,
    pub energy_drop: f64,
    pub work: f64,
    /// `dissipation - energy_drop - work`.
    pub residual: f64,
    pub budget: f64,
    pub jump_costs: Vec<f64>,
    pub incomplete: bool,
}

impl BalanceReport {
    pub fn within_budget(&self) -> bool {
        !self.incomplete && self.residual.abs() <= self.budget
    }
}

/// `max(1, max_n |E_n|)`.
pub fn energy_scale(traj: &Trajectory) -> f64 {
    traj.energies.iter().fold(1.0_f64, |a, e| a.max(e.abs()))
}

fn check_range(traj: &Trajectory, n0: usize, n1: usize) -> Result<()> {
    if n0 > n1 || n1 >= traj.len() {
        return Err(Error::InvalidParameter(format!(
            "node range {n0}..={n1} is outside 0..={}",
            traj.n_steps()
        )));
    }
    if traj.multipliers.len() != traj.len() {
        return Err(Error::WitnessRequired("trajectory carries no multipliers".into()));
    }
    Ok(())
}

/// Work over `(t_{n-1}, t_n]` at the frozen state `U^{n-1}`, which is exact
/// for the rectangle rule since `E_t(u)` is affine in the loading.
fn frozen_work(model: &EnergyModel, traj: &Trajectory, n: usize) -> Result<f64> {
    let u = &traj.states[n - 1];
    Ok(model.energy(traj.times[n], u)? - model.energy(traj.times[n - 1], u)?)
}

/// Viscous energy balance over the nodes `n0..=n1`.
pub fn energy_balance_residual(
    solver: &ViscousSolver,
    traj: &Trajectory,
    n0: usize,
    n1: usize,
    quadrature: BalanceQuadrature,
) -> Result<BalanceReport> {
    check_range(traj, n0, n1)?;
    let model = solver.model;
    let diss = solver.diss;
    let eps = traj.eps;
    let steps: Vec<usize> = (n0 + 1..=n1).collect();
    let per_step = |n: usize| -> Result<(f64, f64)> {
        match quadrature {
            BalanceQuadrature::Rectangle | BalanceQuadrature::Curve => {
                let tau = traj.times[n] - traj.times[n - 1];
                let d = traj.dissipation[n] + tau * diss.psi_eps_conj(&traj.multipliers[n], eps)?;
                Ok((d, frozen_work(model, traj, n)?))
            }
            BalanceQuadrature::Variational { tol } => variational_step_integrals(solver, traj, n, tol),
        }
    };
    let parts: Vec<(f64, f64)> = steps.par_iter().map(|&n| per_step(n)).collect::<Result<_>>()?;
    let dissipation: f64 = parts.iter().map(|p| p.0).sum();
    let work: f64 = parts.iter().map(|p| p.1).sum();
    let energy_drop = traj.energies[n0] - traj.energies[n1];
    let scale = energy_scale(traj);
    let budget = match quadrature {
        BalanceQuadrature::Variational { .. } => 10.0 * (n1 - n0).max(1) as f64 * solver.params.tol_inner * scale,
        _ => f64::INFINITY,
    };
    Ok(BalanceReport {
        s: traj.times[n0],
        t: traj.times[n1],
        quadrature,
        dissipation,
        energy_drop,
        work,
        residual: dissipation - energy_drop - work,
        budget,
        jump_costs: Vec::new(),
        incomplete: false,
    })
}

/// `(d_n + int_0^tau Psi_eps^*(xi~(r)) dr, int_0^tau P(t_{n-1}+r, U~(r)) dr)`.
fn variational_step_integrals(solver: &ViscousSolver, traj: &Trajectory, n: usize, tol: f64) -> Result<(f64, f64)> {
    let model = solver.model;
    let diss = solver.diss;
    let eps = traj.eps;
    let t0 = traj.times[n - 1];
    let tau = traj.times[n] - t0;
    let up = &traj.states[n - 1];
    let err: RefCell<Option<Error>> = RefCell::new(None);
    let cache: RefCell<HashMap<u64, (f64, f64)>> = RefCell::new(HashMap::new());
    let eval = |r: f64| -> (f64, f64) {
        if err.borrow().is_some() {
            return (0.0, 0.0);
        }
        if let Some(v) = cache.borrow().get(&r.to_bits()) {
            return *v;
        }
        let res = solver
            .step_with(up, t0 + r, r, n)
            .and_then(|o| Ok((diss.psi_eps_conj(&o.multiplier, eps)?, model.power(t0 + r, &o.state)?)));
        match res {
            Ok(v) => {
                cache.borrow_mut().insert(r.to_bits(), v);
                v
            }
            Err(e) => {
                *err.borrow_mut() = Some(e);
                (0.0, 0.0)
            }
        }
    };
    let r0 = 1e-9 * tau;
    // integrate conj - power in one pass, and power on its own
    let g = |r: f64| {
        let (a, b) = eval(r);
        a - b
    };
    let p = |r: f64| eval(r).1;
    let head = r0 * g(r0);
    let combined = head + adaptive_simpson(&g, r0, tau, tol, 24);
    let work = r0 * p(r0) + adaptive_simpson(&p, r0, tau, tol, 24);
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok((traj.dissipation[n] + combined + work, work))
}

/// Discrete energy inequality
/// `E_s + W - sum d_n - E_t >= -N tol_inner scale`, with `W` the frozen work.
/// Returns `(residual, budget)`.
pub fn discrete_energy_inequality(
    model: &EnergyModel,
    params: &SchemeParams,
    traj: &Trajectory,
    n0: usize,
    n1: usize,
) -> Result<(f64, f64)> {
    check_range(traj, n0, n1)?;
    let mut w = 0.0;
    let mut d = 0.0;
    for n in n0 + 1..=n1 {
        w += frozen_work(model, traj, n)?;
        d += traj.dissipation[n];
    }
    let res = traj.energies[n0] + w - d - traj.energies[n1];
    let budget = (n1 - n0).max(1) as f64 * params.tol_inner * energy_scale(traj);
    Ok((res, budget))
}

/// `Var_Psi - Jmp_Psi + Jmp_f` with `Jmp_Psi = Psi(u - u-) + Psi(u+ - u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinslerVariation {
    pub value: f64,
    pub psi_variation: f64,
    pub psi_jumps: f64,
    pub finsler_jumps: f64,
    pub incomplete: bool,
}

pub fn finsler_total_variation(curve: &LimitCurve, gauge: &Gauge, costs: &[Option<f64>]) -> Result<FinslerVariation> {
    let var = psi_variation(&curve.states, gauge)?;
    if costs.len() != curve.jumps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} jump costs supplied for {} jumps",
            costs.len(),
            curve.jumps.len()
        )));
    }
    let mut pj = 0.0;
    let mut fj = 0.0;
    let mut incomplete = false;
    for (j, c) in curve.jumps.iter().zip(costs) {
        let psi_j = gauge.psi(&(&j.middle - &j.left)) + gauge.psi(&(&j.right - &j.middle));
        pj += psi_j;
        match c {
            Some(c) => fj += c,
            None => {
                incomplete = true;
                fj += psi_j;
            }
        }
    }
    Ok(FinslerVariation {
        value: var - pj + fj,
        psi_variation: var,
        psi_jumps: pj,
        finsler_jumps: fj,
        incomplete,
    })
}

/// Trapezoidal `int_{t_0}^{t_k} P(r, u(r)) dr` for every sample.
pub fn work_profile(curve: &LimitCurve, model: &EnergyModel) -> Result<Vec<f64>> {
    let p: Vec<f64> = curve
        .times
        .iter()
        .zip(&curve.states)
        .map(|(&t, u)| model.power(t, u))
        .collect::<Result<_>>()?;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(p.len());
    out.push(0.0);
    for k in 1..p.len() {
        acc += 0.5 * (curve.times[k] - curve.times[k - 1]) * (p[k] + p[k - 1]);
        out.push(acc);
    }
    Ok(out)
}

/// Energy balance of a limit curve with `Var_f` as the dissipation.
pub fn curve_balance_residual(
    curve: &LimitCurve,
    model: &EnergyModel,
    gauge: &Gauge,
    costs: &[Option<f64>],
    budget: f64,
) -> Result<BalanceReport> {
    let fv = finsler_total_variation(curve, gauge, costs)?;
    let last = curve.len() - 1;
    let e0 = model.energy(curve.times[0], &curve.states[0])?;
    let e1 = model.energy(curve.times[last], &curve.states[last])?;
    let work = work_profile(curve, model)?[last];
    Ok(BalanceReport {
        s: curve.times[0],
        t: curve.times[last],
        quadrature: BalanceQuadrature::Curve,
        dissipation: fv.value,
        energy_drop: e0 - e1,
        work,
        residual: fv.value - (e0 - e1) - work,
        budget,
        jump_costs: costs.iter().map(|c| c.unwrap_or(f64::NAN)).collect(),
        incomplete: fv.incomplete,
    })
}

/// `E_0 + int P - Var_Psi - E_T`; nonnegative (up to tolerance) for BV
/// solutions.
pub fn psi_dissipation_inequality(curve: &LimitCurve, model: &EnergyModel, gauge: &Gauge) -> Result<f64> {
    let last = curve.len() - 1;
    let d = chain_rule_defect(curve, model, gauge)?;
    Ok(-d.defect[last])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectProfile {
    pub times: Vec<f64>,
    pub variation: Vec<f64>,
    pub energy: Vec<f64>,
    pub work: Vec<f64>,
    /// `Var_Psi(u; [0,t]) + E_t(u(t)) - E_0(u(0)) - int_0^t P`.
    pub defect: Vec<f64>,
}

impl DefectProfile {
    /// Defect at `t` by linear interpolation between samples.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.defect[0];
        }
        if k >= self.times.len() {
            return *self.defect.last().unwrap();
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        if b == a {
            return self.defect[k];
        }
        let th = (t - a) / (b - a);
        self.defect[k - 1] * (1.0 - th) + self.defect[k] * th
    }

    /// Least-squares slope of the defect over samples in `[a, b]`.
    pub fn rate(&self, a: f64, b: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.defect)
            .filter(|(t, _)| **t >= a && **t <= b)
            .map(|(t, d)| (*t, *d))
            .collect();
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let md = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum();
        let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        cov / var
    }
}

pub fn chain_rule_defect(curve: &LimitCurve, model: &EnergyModel, gauge: &Gauge) -> Result<DefectProfile> {
    let variation = psi_variation_profile(&curve.states, gauge);
    let energy: Vec<f64> = curve
        .times
        .iter()
        .zip(&curve.states)
        .map(|(&t, u)| model.energy(t, u))
        .collect::<Result<_>>()?;
    let work = work_profile(curve, model)?;
    let defect = (0..curve.len())
        .map(|k| variation[k] + energy[k] - energy[0] - work[k])
        .collect();
    Ok(DefectProfile {
        times: curve.times.clone(),
        variation,
        energy,
        work,
        defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub times: Vec<f64>,
    pub slack: Vec<f64>,
    pub upper_bound_only: bool,
    /// Worst Frechet-inequality gap of the supplied witnesses.
    pub witness_gap: f64,
    pub max_slack: f64,
    pub pass: bool,
}

/// Witness callback: `xi in dE_t(u)` for a sample.
pub type WitnessFn<'a> = dyn Fn(f64, &GridFunction) -> Option<GridFunction> + Sync + 'a;

/// Slack at every non-jump sample. Nonsmooth models use `witness` when
/// given and the computed stationarity distance otherwise.
pub fn local_stability_profile(
    curve: &LimitCurve,
    model: &EnergyModel,
    gauge: &Gauge,
    witness: Option<&WitnessFn>,
    tol: f64,
) -> Result<StabilityProfile> {
    let idx: Vec<usize> = (0..curve.len()).filter(|&k| !curve.is_jump_sample(k)).collect();
    let rows: Vec<(f64, f64, bool, f64)> = idx
        .par_iter()
        .map(|&k| {
            let t = curve.times[k];
            let u = &curve.states[k];
            let w = match witness {
                Some(f) if !model.is_smooth() => match f(t, u) {
                    Some(xi) => Some(model.validate_witness(t, u, xi)?),
                    None => None,
                },
                _ => None,
            };
            if !model.is_smooth() && w.is_none() {
                let (s, _) = stability_slack(model, gauge, t, u)?;
                return Ok((t, s, !model.is_decoupled(), 0.0));
            }
            let s = model.slack(t, u, gauge, w.as_ref())?;
            let gap = w.map(|w| w.residual_gap).unwrap_or(0.0);
            Ok((t, s.value, s.upper_bound_only, gap))
        })
        .collect::<Result<_>>()?;
    let max_slack = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let witness_gap = rows.iter().map(|r| r.3).fold(0.0, f64::min);
    Ok(StabilityProfile {
        times: rows.iter().map(|r| r.0).collect(),
        slack: rows.iter().map(|r| r.1).collect(),
        upper_bound_only: rows.iter().any(|r| r.2),
        witness_gap,
        max_slack,
        pass: max_slack <= tol && witness_gap >= -tol,
    })
}

/// Residuals of `E(u) - E(u-) = -D(u-,u)`, `E(u+) - E(u) = -D(u,u+)`,
/// `E(u+) - E(u-) = -D(u-,u+)` and of the additivity of the costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConditionReport {
    pub left: f64,
    pub right: f64,
    pub total: f64,
    pub additivity: f64,
    pub scale: f64,
}

impl JumpConditionReport {
    pub fn max_relative(&self) -> f64 {
        [self.left, self.right, self.total, self.additivity]
            .iter()
            .map(|r| r.abs())
            .fold(0.0, f64::max)
            / self.scale
    }

    pub fn pass(&self, rel_tol: f64) -> bool {
        self.max_relative() <= rel_tol
    }
}

/// `costs = [D(u-,u), D(u,u+), D(u-,u+)]`.
pub fn jump_conditions_check(
    model: &EnergyModel,
    t: f64,
    left: &GridFunction,
    middle: &GridFunction,
    right: &GridFunction,
    costs: [f64; 3],
) -> Result<JumpConditionReport> {
    let em = model.energy(t, left)?;
    let e0 = model.energy(t, middle)?;
    let ep = model.energy(t, right)?;
    let scale = [costs[2], em - ep, 1e-300].iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    Ok(JumpConditionReport {
        left: e0 - em + costs[0],
        right: ep - e0 + costs[1],
        total: ep - em + costs[2],
        additivity: costs[2] - costs[0] - costs[1],
        scale: if scale > 1e-12 { scale } else { 1.0 },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub eps: f64,
    pub tau: f64,
    pub n_steps: usize,
    pub bv_total: f64,
    pub dissipation_total: f64,
    pub max_residual: f64,
    pub sample_energies: Vec<f64>,
    pub wall_seconds: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub samples: Vec<GridFunction>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub sample_times: Vec<f64>,
    pub cells: Vec<SweepCell>,
    /// `sup_k |u_j(s_k) - u_{j-1}(s_k)|_{L^2}` between successive cells.
    pub successive_distances: Vec<Option<f64>>,
}

/// Checks that `eps_k` and `tau_k / eps_k` strictly decrease.
pub fn validate_schedule(schedule: &[(f64, f64)]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty sweep schedule".into()));
    }
    for w in schedule.windows(2) {
        let (e0, t0) = w[0];
        let (e1, t1) = w[1];
        if !(e1 < e0 && t1 / e1 < t0 / e0) {
            return Err(Error::InvalidParameter(format!(
                "schedule must decrease in eps and tau/eps: ({e0}, {t0}) -> ({e1}, {t1})"
            )));
        }
    }
    Ok(())
}

/// Runs every `(eps, tau)` cell of the schedule in parallel.
pub fn convergence_sweep(
    model: &EnergyModel,
    diss: &DissipationPair,
    u0: &GridFunction,
    base: &SchemeParams,
    schedule: &[(f64, f64)],
    sample_times: &[f64],
    keep_trajectories: bool,
) -> Result<SweepReport> {
    validate_schedule(schedule)?;
    let cells: Vec<SweepCell> = schedule
        .par_iter()
        .map(|&(eps, tau)| {
            let start = Instant::now();
            let params = SchemeParams {
                eps,
                tau,
                ..base.clone()
            };
            let run = || -> Result<(Trajectory, Vec<GridFunction>, Vec<f64>)> {
                let traj = ViscousSolver::new(model, diss, params.clone())?.solve(u0)?;
                let samples: Vec<GridFunction> = sample_times
                    .iter()
                    .map(|&t| traj.piecewise_affine(t.min(traj.end_time())))
                    .collect::<Result<_>>()?;
                let energies = sample_times
                    .iter()
                    .zip(&samples)
                    .map(|(&t, u)| model.energy(t, u))
                    .collect::<Result<_>>()?;
                Ok((traj, samples, energies))
            };
            match run() {
                Ok((traj, samples, sample_energies)) => SweepCell {
                    eps,
                    tau,
                    n_steps: traj.n_steps(),
                    bv_total: traj.bv_total(),
                    dissipation_total: traj.dissipation.iter().sum(),
                    max_residual: traj.residuals.iter().cloned().fold(0.0, f64::max),
                    sample_energies,
                    wall_seconds: start.elapsed().as_secs_f64(),
                    error: None,
                    samples,
                    trajectory: keep_trajectories.then_some(traj),
                },
                Err(e) => SweepCell {
                    eps,
                    tau,
                    n_steps: params.n_steps(),
                    bv_total: f64::NAN,
                    dissipation_total: f64::NAN,
                    max_residual: f64::NAN,
                    sample_energies: Vec::new(),
                    wall_seconds: start.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                    samples: Vec::new(),
                    trajectory: None,
                },
            }
        })
        .collect();
    let successive_distances = std::iter::once(None)
        .chain(cells.windows(2).map(|w| {
            if w[0].error.is_some() || w[1].error.is_some() {
                return None;
            }
            Some(
                w[0].samples
                    .iter()
                    .zip(&w[1].samples)
                    .map(|(a, b)| l2_norm(&(a - b)))
                    .fold(0.0, f64::max),
            )
        }))
        .collect();
    Ok(SweepReport {
        sample_times: sample_times.to_vec(),
        cells,
        successive_distances,
    })
}
