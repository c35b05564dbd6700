//! Finsler jump costs at frozen time: discrete transition paths, their
//! optimisation, regime classification and the viscous transition flow.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::WitnessFn;
use crate::dissipation::{DissipationPair, Gauge};
use crate::energy::{EnergyModel, SubgradientWitness};
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, golden_section_min, l2_norm, GridFunction};
use crate::solver::{InitStrategy, SchemeParams, ViscousSolver};

/// Segment regime: `Sliding` where the slack vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sliding,
    Viscous,
}

/// A discrete transition `theta_0 = u-, ..., theta_M = u+` at frozen time `t`,
/// with parameters `r_m` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPath {
    pub t: f64,
    pub r: Vec<f64>,
    pub nodes: Vec<GridFunction>,
    /// Per segment: `Psi(d theta) + slack(midpoint) |d theta|`.
    pub actions: Vec<f64>,
    pub slack: Vec<f64>,
}

impl TransitionPath {
    /// Uniform parameters; actions are filled in by [`finsler_action`].
    pub fn new(t: f64, nodes: Vec<GridFunction>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("a path needs at least two nodes".into()));
        }
        let g = *nodes[0].grid();
        if nodes.iter().any(|n| *n.grid() != g) {
            return Err(Error::GridMismatch);
        }
        let m = nodes.len() - 1;
        Ok(Self {
            t,
            r: (0..=m).map(|k| k as f64 / m as f64).collect(),
            nodes,
            actions: vec![0.0; m],
            slack: vec![0.0; m],
        })
    }

    /// Straight segment from `a` to `b` with `m` pieces.
    pub fn linear(t: f64, a: &GridFunction, b: &GridFunction, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("need at least one segment".into()));
        }
        Self::new(t, (0..=m).map(|k| a.lerp(b, k as f64 / m as f64)).collect())
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn total_action(&self) -> f64 {
        self.actions.iter().sum()
    }

    pub fn start(&self) -> &GridFunction {
        &self.nodes[0]
    }

    pub fn end(&self) -> &GridFunction {
        self.nodes.last().unwrap()
    }
}

/// Slack evaluator at frozen time: exact for smooth models, from a witness
/// callback otherwise.
struct SlackEval<'a> {
    model: &'a EnergyModel,
    gauge: &'a Gauge,
    witness: Option<&'a WitnessFn<'a>>,
}

impl SlackEval<'_> {
    fn at(&self, t: f64, u: &GridFunction) -> Result<f64> {
        if self.model.is_smooth() {
            return Ok(self.model.slack(t, u, self.gauge, None)?.value);
        }
        let f = self
            .witness
            .ok_or_else(|| Error::WitnessRequired("transition costs of a nonsmooth energy need subgradients".into()))?;
        let xi = f(t, u).ok_or_else(|| Error::WitnessRequired("no subgradient at a path node".into()))?;
        let w = SubgradientWitness { xi, residual_gap: 0.0 };
        Ok(self.model.slack(t, u, self.gauge, Some(&w))?.value)
    }

    fn segment(&self, t: f64, a: &GridFunction, b: &GridFunction) -> Result<(f64, f64)> {
        let d = b - a;
        let len = l2_norm(&d);
        if len == 0.0 {
            return Ok((0.0, self.at(t, a)?));
        }
        let s = self.at(t, &a.lerp(b, 0.5))?;
        Ok((self.gauge.psi(&d) + s * len, s))
    }

    /// Like [`Self::segment`] with the slack integrated along the segment
    /// instead of sampled at its midpoint; the returned slack is the mean.
    fn segment_exact(&self, t: f64, a: &GridFunction, b: &GridFunction) -> Result<(f64, f64)> {
        if !self.model.is_smooth() {
            return self.segment(t, a, b);
        }
        let d = b - a;
        let len = l2_norm(&d);
        if len == 0.0 {
            return Ok((0.0, self.at(t, a)?));
        }
        let err = RefCell::new(None);
        let f = |r: f64| match self.at(t, &a.lerp(b, r)) {
            Ok(v) => v,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                0.0
            }
        };
        let s = adaptive_simpson(&f, 0.0, 1.0, 1e-13, 40);
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok((self.gauge.psi(&d) + s * len, s))
    }
}

/// `sum_m Psi(theta_{m+1} - theta_m) + int slack |theta_{m+1} - theta_m|` over
/// the polygon through the nodes. The slack is integrated along each segment
/// for smooth energies and taken at the midpoint when it comes from a
/// witness. Stores the per-segment actions and mean slacks in `path`.
pub fn finsler_action(
    path: &mut TransitionPath,
    model: &EnergyModel,
    gauge: &Gauge,
    witness: Option<&WitnessFn>,
) -> Result<f64> {
    gauge.check_len(model.grid().n_cells())?;
    for (k, n) in path.nodes.iter().enumerate() {
        if !model.is_admissible(n) {
            return Err(Error::InfeasibleTransition(format!("node {k} is not admissible")));
        }
    }
    let ev = SlackEval { model, gauge, witness };
    for m in 0..path.segments() {
        let (a, s) = ev.segment_exact(path.t, &path.nodes[m], &path.nodes[m + 1])?;
        path.actions[m] = a;
        path.slack[m] = s;
    }
    Ok(path.total_action())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionOptions {
    pub segments: usize,
    /// Stop once a sweep lowers the action by less than `tol (1 + action)`.
    pub tol: f64,
    pub max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self {
            segments: 200,
            tol: 1e-10,
            max_sweeps: 200,
            restarts: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizedTransition {
    pub path: TransitionPath,
    pub cost: f64,
    /// Action of the straight seed.
    pub seed_cost: f64,
    /// Final action of every start (straight seed first).
    pub restart_costs: Vec<f64>,
    /// `cost - Psi(u+ - u-)`.
    pub psi_bound_gap: f64,
    /// `cost - |E_t(u-) - E_t(u+)|`.
    pub energy_bound_gap: f64,
}

/// Coordinate descent on the interior nodes with golden-section line
/// searches per cell, from the straight seed and `restarts` perturbed seeds.
pub fn optimize_transition(
    u_minus: &GridFunction,
    u_plus: &GridFunction,
    t: f64,
    model: &EnergyModel,
    gauge: &Gauge,
    witness: Option<&WitnessFn>,
    opts: &TransitionOptions,
) -> Result<OptimizedTransition> {
    if opts.segments < 2 {
        return Err(Error::InvalidParameter(
            "a transition needs at least two segments".into(),
        ));
    }
    model.check_grid(u_minus)?;
    model.check_grid(u_plus)?;
    for (name, u) in [("u-", u_minus), ("u+", u_plus)] {
        if !model.energy(t, u)?.is_finite() {
            return Err(Error::InfeasibleTransition(format!(
                "endpoint {name} is not admissible"
            )));
        }
    }
    let ev = SlackEval { model, gauge, witness };
    if u_minus == u_plus {
        let mut path = TransitionPath::new(t, vec![u_minus.clone(); opts.segments + 1])?;
        finsler_action(&mut path, model, gauge, witness)?;
        return Ok(OptimizedTransition {
            path,
            cost: 0.0,
            seed_cost: 0.0,
            restart_costs: vec![0.0],
            psi_bound_gap: 0.0,
            energy_bound_gap: 0.0,
        });
    }
    let mut seed = TransitionPath::linear(t, u_minus, u_plus, opts.segments)?;
    let seed_cost = finsler_action(&mut seed, model, gauge, witness)?;
    let mut starts = vec![seed.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let amp = 0.1 * (u_plus - u_minus).max_abs();
    let (lo, hi) = model.well().bounds();
    if amp > 0.0 {
        for _ in 0..opts.restarts {
            let shift: Vec<f64> = (0..u_minus.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = opts.segments as f64;
            let nodes = seed
                .nodes
                .iter()
                .enumerate()
                .map(|(k, n)| {
                    let bump = amp * (std::f64::consts::PI * k as f64 / m).sin();
                    let v = n
                        .values()
                        .iter()
                        .zip(&shift)
                        .map(|(x, s)| (x + bump * s).clamp(lo, hi))
                        .collect();
                    GridFunction::new(*n.grid(), v)
                })
                .collect::<Result<Vec<_>>>()?;
            starts.push(TransitionPath::new(t, nodes)?);
        }
    }
    let mut restart_costs = Vec::with_capacity(starts.len());
    let mut best: Option<TransitionPath> = None;
    for mut p in starts {
        finsler_action(&mut p, model, gauge, witness)?;
        descend(&mut p, &ev, lo, hi, opts)?;
        let c = p.total_action();
        restart_costs.push(c);
        if best.as_ref().is_none_or(|b| c < b.total_action()) {
            best = Some(p);
        }
    }
    // the descent works with midpoint slacks; report the action of the final polygon
    let mut path = best.unwrap();
    let cost = finsler_action(&mut path, model, gauge, witness)?;
    let psi = gauge.psi(&(u_plus - u_minus));
    let drop = (model.energy(t, u_minus)? - model.energy(t, u_plus)?).abs();
    Ok(OptimizedTransition {
        cost,
        seed_cost,
        restart_costs,
        psi_bound_gap: cost - psi,
        energy_bound_gap: cost - drop,
        path,
    })
}

fn descend(path: &mut TransitionPath, ev: &SlackEval, lo: f64, hi: f64, opts: &TransitionOptions) -> Result<()> {
    let m = path.segments();
    let n = path.nodes[0].len();
    let t = path.t;
    for _ in 0..opts.max_sweeps {
        let before = path.total_action();
        for k in 1..m {
            for i in 0..n {
                let a = path.nodes[k - 1].values()[i];
                let b = path.nodes[k + 1].values()[i];
                let x0 = path.nodes[k].values()[i];
                let w = 0.25 * (a - b).abs() + 1e-9 * (1.0 + a.abs().max(b.abs()));
                let (l, r) = ((a.min(b) - w).max(lo), (a.max(b) + w).min(hi));
                let mut trial = path.nodes[k].clone();
                let err = std::cell::RefCell::new(None);
                let local = |x: f64, node: &mut GridFunction| -> f64 {
                    node.values_mut()[i] = x;
                    let s1 = ev.segment(t, &path.nodes[k - 1], node);
                    let s2 = ev.segment(t, node, &path.nodes[k + 1]);
                    match (s1, s2) {
                        (Ok(p), Ok(q)) => p.0 + q.0,
                        (Err(e), _) | (_, Err(e)) => {
                            *err.borrow_mut() = Some(e);
                            f64::INFINITY
                        }
                    }
                };
                let cur = path.actions[k - 1] + path.actions[k];
                let cell = std::cell::RefCell::new(trial.clone());
                let (x, fx) = golden_section_min(|x| local(x, &mut cell.borrow_mut()), l, r, 1e-10);
                if let Some(e) = err.into_inner() {
                    return Err(e);
                }
                if fx < cur - 1e-14 * (1.0 + cur) && x != x0 {
                    trial.values_mut()[i] = x;
                    let (p, s1) = ev.segment(t, &path.nodes[k - 1], &trial)?;
                    let (q, s2) = ev.segment(t, &trial, &path.nodes[k + 1])?;
                    path.nodes[k] = trial;
                    path.actions[k - 1] = p;
                    path.actions[k] = q;
                    path.slack[k - 1] = s1;
                    path.slack[k] = s2;
                }
            }
        }
        let after = path.total_action();
        if before - after < opts.tol * (1.0 + after) {
            break;
        }
    }
    Ok(())
}

/// A maximal run of segments with the same regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRun {
    pub regime: Regime,
    pub first_segment: usize,
    pub last_segment: usize,
    pub action: f64,
    /// Viscosity recovered from the force balance per segment of a viscous
    /// run, `(F')^{-1}(slack) / |theta'|`, with `|theta'|` in the path parameter.
    pub eps_profile: Vec<f64>,
    /// The alternative profile `(F^*)'(slack) / F(|theta'|)`.
    pub alt_profile: Vec<f64>,
    /// For sliding runs: `max |E(theta_{m+1}) - E(theta_m) + Psi(d theta)| / Psi(d theta)`.
    pub sliding_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub labels: Vec<Regime>,
    pub runs: Vec<RegimeRun>,
}

/// Splits the path into sliding (slack `<= tol`) and viscous runs.
pub fn classify_transition(
    path: &TransitionPath,
    model: &EnergyModel,
    diss: &DissipationPair,
    tol: f64,
) -> Result<Classification> {
    let labels: Vec<Regime> = path
        .slack
        .iter()
        .map(|&s| if s <= tol { Regime::Sliding } else { Regime::Viscous })
        .collect();
    let mut runs = Vec::new();
    let mut start = 0;
    for m in 0..labels.len() {
        if m + 1 == labels.len() || labels[m + 1] != labels[m] {
            runs.push(make_run(path, model, diss, labels[m], start, m)?);
            start = m + 1;
        }
    }
    Ok(Classification { labels, runs })
}

fn make_run(
    path: &TransitionPath,
    model: &EnergyModel,
    diss: &DissipationPair,
    regime: Regime,
    a: usize,
    b: usize,
) -> Result<RegimeRun> {
    let mut eps_profile = Vec::new();
    let mut alt_profile = Vec::new();
    let mut sliding_residual: f64 = 0.0;
    for m in a..=b {
        let d = &path.nodes[m + 1] - &path.nodes[m];
        let dr = path.r[m + 1] - path.r[m];
        let speed = if dr > 0.0 { l2_norm(&d) / dr } else { 0.0 };
        match regime {
            Regime::Viscous => {
                let s = path.slack[m];
                eps_profile.push(if speed > 0.0 {
                    diss.viscous.df_inv(s) / speed
                } else {
                    f64::INFINITY
                });
                alt_profile.push(diss.viscous.alt_viscosity(s, speed));
            }
            Regime::Sliding => {
                let de = model.energy(path.t, &path.nodes[m + 1])? - model.energy(path.t, &path.nodes[m])?;
                let psi = diss.gauge.psi(&d);
                if psi > 0.0 {
                    sliding_residual = sliding_residual.max((de + psi).abs() / psi);
                }
            }
        }
    }
    Ok(RegimeRun {
        regime,
        first_segment: a,
        last_segment: b,
        action: path.actions[a..=b].iter().sum(),
        eps_profile,
        alt_profile,
        sliding_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Step of the rescaled time.
    pub dr: f64,
    pub max_steps: usize,
    /// Arrival once the slack falls below this value.
    pub slack_tol: f64,
    /// Size of the probes used to leave a degenerate start.
    pub probe: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            dr: 1e-3,
            max_steps: 200_000,
            slack_tol: 1e-8,
            probe: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViscousFlow {
    pub path: TransitionPath,
    pub action: f64,
    pub arrival: GridFunction,
    pub energy_drop: f64,
}

/// Integrates `dPsi(theta') + theta' + dE_t(theta) ∋ 0` at frozen `t` with
/// implicit steps, from `u_minus` until the slack vanishes again. `u_plus`
/// only scales the probes used when the start is a degenerate critical point.
pub fn viscous_transition_ode(
    u_minus: &GridFunction,
    u_plus: Option<&GridFunction>,
    t: f64,
    model: &EnergyModel,
    diss: &DissipationPair,
    opts: &FlowOptions,
) -> Result<ViscousFlow> {
    if !model.is_smooth() {
        return Err(Error::UnsupportedModel(
            "the transition flow needs a smooth energy".into(),
        ));
    }
    let gauge = &diss.gauge;
    let params = SchemeParams {
        eps: 1.0,
        tau: opts.dr,
        horizon: opts.dr,
        tol_inner: 1e-10,
        max_inner_iter: 20_000,
        init: InitStrategy::PreviousStep,
        q_ratio: None,
    };
    let solver = ViscousSolver::new(model, diss, params)?;
    let slack = |u: &GridFunction| -> Result<f64> { Ok(model.slack(t, u, gauge, None)?.value) };
    let mut nodes = vec![u_minus.clone()];
    let mut cur = u_minus.clone();
    let first = solver.step_with(&cur, t, opts.dr, 1)?;
    if first.state == cur {
        // degenerate start: look for a probe direction with positive slack
        let scale = u_plus.map_or(1.0, |p| (p - u_minus).max_abs().max(1e-300));
        let mut best: Option<(f64, GridFunction)> = None;
        for i in 0..cur.len() {
            for sgn in [-1.0, 1.0] {
                let mut v = cur.clone();
                v.values_mut()[i] += sgn * opts.probe * scale;
                if !model.is_admissible(&v) {
                    continue;
                }
                let s = slack(&v)?;
                if s > opts.slack_tol && best.as_ref().is_none_or(|b| s > b.0) {
                    // the probe must lead away, not back
                    let o = solver.step_with(&v, t, opts.dr, 1)?;
                    let moved_away = (&o.state - &cur).max_abs() > (&v - &cur).max_abs();
                    if moved_away {
                        best = Some((s, v));
                    }
                }
            }
        }
        match best {
            Some((_, v)) => {
                nodes.push(v.clone());
                cur = v;
            }
            None => {
                return Err(Error::NoTransition(
                    "the start is stable in every probed direction".into(),
                ))
            }
        }
    }
    let mut left_start = false;
    for _ in 0..opts.max_steps {
        let out = solver.step_with(&cur, t, opts.dr, 1)?;
        let moved = (&out.state - &cur).max_abs();
        cur = out.state;
        nodes.push(cur.clone());
        let s = slack(&cur)?;
        if s > opts.slack_tol {
            left_start = true;
        }
        if (left_start && s <= opts.slack_tol) || moved <= 1e-14 * (1.0 + cur.max_abs()) {
            break;
        }
    }
    let mut path = TransitionPath::new(t, nodes)?;
    let action = finsler_action(&mut path, model, gauge, None)?;
    let energy_drop = model.energy(t, u_minus)? - model.energy(t, &cur)?;
    Ok(ViscousFlow {
        path,
        action,
        arrival: cur,
        energy_drop,
    })
}
