//! The viscous incremental scheme
//! `U^n in argmin tau Psi_eps((U - U^{n-1})/tau) + E_{t_n}(U)`,
//! its trajectories and interpolants.
//!
//! Decoupled and total-variation models are solved exactly: every cell
//! function is piecewise quadratic, and the total variation coupling is
//! handled by a forward/backward dynamic programme on derivatives. Models
//! with a Dirichlet term use a monotone accelerated proximal gradient method
//! whose prox is the exact cell solve.

mod cell;
mod step;

use serde::{Deserialize, Serialize};

use crate::dissipation::{DissipationPair, Gauge, ViscousPotential};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Grid1D, GridFunction};

use step::StepProblem;
pub use step::{euler_residual, StepOutcome};

/// How a nonconvex decoupled step chooses among local minimisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Descend from the previous state.
    PreviousStep,
    /// Exact global minimisation of each cell function.
    #[default]
    GridSearchScalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub eps: f64,
    pub tau: f64,
    pub horizon: f64,
    pub tol_inner: f64,
    pub max_inner_iter: usize,
    pub init: InitStrategy,
    /// When set, enforce `tau <= q eps` and a locally stable initial state.
    pub q_ratio: Option<f64>,
}

impl SchemeParams {
    pub fn new(eps: f64, tau: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            eps,
            tau,
            horizon,
            tol_inner: 1e-8,
            max_inner_iter: 20_000,
            init: InitStrategy::default(),
            q_ratio: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps", self.eps),
            ("tau", self.tau),
            ("horizon", self.horizon),
            ("tol_inner", self.tol_inner),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner_iter == 0 {
            return Err(Error::InvalidParameter("max_inner_iter must be positive".into()));
        }
        if let Some(q) = self.q_ratio {
            if !(q > 0.0) {
                return Err(Error::InvalidParameter(format!("q_ratio must be positive, got {q}")));
            }
            if self.tau > q * self.eps * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "tau = {} exceeds q eps = {}",
                    self.tau,
                    q * self.eps
                )));
            }
        }
        Ok(())
    }

    /// Number of steps `N` with `tau (N - 1) < T <= tau N`.
    pub fn n_steps(&self) -> usize {
        let r = self.horizon / self.tau;
        let n = r.round();
        if (r - n).abs() <= 1e-9 * r.max(1.0) {
            n as usize
        } else {
            r.ceil() as usize
        }
    }
}

/// Per-step bookkeeping beyond the numbers themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub certified_global: bool,
    pub competitor_found: bool,
    pub iterations: usize,
}

/// Output of a viscous run. Index `0` holds the initial datum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid1D,
    pub eps: f64,
    pub tau: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    /// `xi^n in dPsi_eps(V^n)`; `multipliers[0]` is zero.
    pub multipliers: Vec<GridFunction>,
    pub residuals: Vec<f64>,
    /// `d_n = tau Psi_eps((U^n - U^{n-1})/tau)`; `dissipation[0] = 0`.
    pub dissipation: Vec<f64>,
    pub energies: Vec<f64>,
    pub flags: Vec<StepFlags>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// `sum_n |U^n - U^{n-1}|` in `L^2`.
    pub fn bv_total(&self) -> f64 {
        self.states.windows(2).map(|w| l2_norm(&(&w[1] - &w[0]))).sum()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let end = self.end_time();
        if self.is_empty() || !(t >= -1e-12 && t <= end + 1e-12 * end.max(1.0)) {
            return Err(Error::Domain { t, horizon: end });
        }
        Ok(())
    }

    /// Index `n` with `t in (t_{n-1}, t_n]`; `0` for `t = 0`.
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        if t <= 0.0 {
            return Ok(0);
        }
        let n = (t / self.tau - 1e-9).ceil().max(1.0) as usize;
        Ok(n.min(self.n_steps()))
    }

    /// Left-continuous piecewise constant interpolant.
    pub fn piecewise_constant(&self, t: f64) -> Result<GridFunction> {
        Ok(self.states[self.interval_of(t)?].clone())
    }

    /// Piecewise affine interpolant through the nodes.
    pub fn piecewise_affine(&self, t: f64) -> Result<GridFunction> {
        let n = self.interval_of(t)?;
        if n == 0 {
            return Ok(self.states[0].clone());
        }
        let theta = ((t - self.times[n - 1]) / self.tau).clamp(0.0, 1.0);
        Ok(self.states[n - 1].lerp(&self.states[n], theta))
    }
}

/// Solver for one `(model, dissipation, params)` triple.
#[derive(Debug, Clone)]
pub struct ViscousSolver<'a> {
    pub model: &'a EnergyModel,
    pub diss: &'a DissipationPair,
    pub params: SchemeParams,
}

impl<'a> ViscousSolver<'a> {
    pub fn new(model: &'a EnergyModel, diss: &'a DissipationPair, params: SchemeParams) -> Result<Self> {
        params.validate()?;
        diss.viscous.validate()?;
        diss.gauge.check_len(model.grid().n_cells())?;
        Ok(Self { model, diss, params })
    }

    fn problem(&self) -> StepProblem<'_> {
        StepProblem {
            model: self.model,
            diss: self.diss,
            eps: self.params.eps,
            tol: self.params.tol_inner,
            max_iter: self.params.max_inner_iter,
            init: self.params.init,
        }
    }

    /// One step of size `tau` from `u_prev` to time `t`.
    pub fn incremental_step(&self, u_prev: &GridFunction, t: f64) -> Result<StepOutcome> {
        self.problem().solve(0, t, self.params.tau, u_prev)
    }

    /// A step of arbitrary size `r` (used by the variational interpolant).
    pub fn step_with(&self, u_prev: &GridFunction, t: f64, r: f64, index: usize) -> Result<StepOutcome> {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {r}")));
        }
        self.problem().solve(index, t, r, u_prev)
    }

    /// `tau Psi_eps((u - up)/tau) + E_t(u)`.
    pub fn incremental_energy(&self, t: f64, r: f64, up: &GridFunction, u: &GridFunction) -> Result<f64> {
        self.problem().objective(t, r, up, u)
    }

    pub fn solve(&self, u0: &GridFunction) -> Result<Trajectory> {
        let p = &self.params;
        if !self.model.is_admissible(u0) {
            return Err(Error::InvalidState("initial state is not admissible".into()));
        }
        if p.q_ratio.is_some() && self.model.is_smooth() {
            let s = self.model.slack(0.0, u0, &self.diss.gauge, None)?;
            if s.value > 1e-8 {
                return Err(Error::InvalidState(format!(
                    "initial state is not locally stable (slack {:.3e})",
                    s.value
                )));
            }
        }
        let n = p.n_steps();
        let grid = *self.model.grid();
        let mut traj = Trajectory {
            grid,
            eps: p.eps,
            tau: p.tau,
            horizon: p.horizon,
            times: Vec::with_capacity(n + 1),
            states: Vec::with_capacity(n + 1),
            multipliers: Vec::with_capacity(n + 1),
            residuals: Vec::with_capacity(n + 1),
            dissipation: Vec::with_capacity(n + 1),
            energies: Vec::with_capacity(n + 1),
            flags: Vec::with_capacity(n + 1),
        };
        traj.times.push(0.0);
        traj.states.push(u0.clone());
        traj.multipliers.push(GridFunction::zeros(grid));
        traj.residuals.push(0.0);
        traj.dissipation.push(0.0);
        traj.energies.push(self.model.energy(0.0, u0)?);
        traj.flags.push(StepFlags {
            certified_global: true,
            competitor_found: false,
            iterations: 0,
        });
        let prob = self.problem();
        for k in 1..=n {
            let t = k as f64 * p.tau;
            let prev = &traj.states[k - 1];
            let out = prob.solve(k, t, p.tau, prev)?;
            let v = (&out.state - prev).scale(1.0 / p.tau);
            let d = p.tau * self.diss.psi_eps(&v, p.eps)?;
            let e = self.model.energy(t, &out.state)?;
            traj.times.push(t);
            traj.dissipation.push(d);
            traj.energies.push(e);
            traj.residuals.push(out.residual);
            traj.flags.push(StepFlags {
                certified_global: out.certified_global,
                competitor_found: out.competitor_found,
                iterations: out.iterations,
            });
            traj.multipliers.push(out.multiplier);
            traj.states.push(out.state);
        }
        Ok(traj)
    }

    /// De Giorgi variational interpolant at `t in (t_{n-1}, t_n]`: the step
    /// of size `r = t - t_{n-1}` from `U^{n-1}` at time `t`.
    pub fn variational_interpolant(&self, traj: &Trajectory, t: f64) -> Result<(GridFunction, GridFunction)> {
        let n = traj.interval_of(t)?;
        if n == 0 {
            return Ok((traj.states[0].clone(), traj.multipliers[0].clone()));
        }
        let r = t - traj.times[n - 1];
        if r <= 0.0 {
            return Ok((traj.states[n - 1].clone(), traj.multipliers[n - 1].clone()));
        }
        if (t - traj.times[n]).abs() <= 1e-14 * t.max(1.0) {
            return Ok((traj.states[n].clone(), traj.multipliers[n].clone()));
        }
        let out = self.step_with(&traj.states[n - 1], t, r, n)?;
        Ok((out.state, out.multiplier))
    }
}

/// `dist(-dE_t(u), K*)` together with the nearest point of `K*`, computed
/// from the stationarity sets of a zero step. Exact when the state is stable
/// or the model is decoupled.
pub fn stability_slack(model: &EnergyModel, gauge: &Gauge, t: f64, u: &GridFunction) -> Result<(f64, GridFunction)> {
    gauge.check_len(model.grid().n_cells())?;
    let diss = DissipationPair {
        gauge: gauge.clone(),
        viscous: ViscousPotential::Quadratic,
    };
    euler_residual(model, &diss, 1.0, t, 1.0, u, u)
}

/// Convenience wrapper around [`ViscousSolver::solve`].
pub fn solve_viscous(
    u0: &GridFunction,
    params: &SchemeParams,
    model: &EnergyModel,
    diss: &DissipationPair,
) -> Result<Trajectory> {
    ViscousSolver::new(model, diss, params.clone())?.solve(u0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{GradTerm, Loading, Well};

    fn scalar_model(g: f64) -> EnergyModel {
        // E(u) = 1/2 (u - g)^2 = W(u) with center g, no loading
        EnergyModel::new(
            Grid1D::scalar(),
            GradTerm::None,
            Well::Quadratic { lambda: 1.0, center: g },
            Loading::constant(0.0),
        )
        .unwrap()
    }

    fn brute_scalar(f: impl Fn(f64) -> f64) -> f64 {
        (0..=2_000_000)
            .map(|k| -10.0 + k as f64 * 1e-5)
            .map(|v| (v, f(v)))
            .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0
    }

    #[test]
    fn scalar_quadratic_step_matches_grid_search() {
        let m = scalar_model(3.0);
        let d = DissipationPair::default();
        let s = ViscousSolver::new(&m, &d, SchemeParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let out = s.incremental_step(&GridFunction::scalar(0.0), 1.0).unwrap();
        let oracle = brute_scalar(|v| v.abs() + 0.5 * v * v + 0.5 * (v - 3.0).powi(2));
        assert!((out.state.values()[0] - oracle).abs() < 1e-4);
        assert!((out.state.values()[0] - 1.0).abs() < 1e-14);
        assert!(out.residual < 1e-12);
        // multiplier: xi = 1 + eps v with v = 1
        assert!((out.multiplier.values()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sticking_inside_threshold() {
        let m = scalar_model(0.5);
        let d = DissipationPair::default();
        let s = ViscousSolver::new(&m, &d, SchemeParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let out = s.incremental_step(&GridFunction::scalar(0.0), 1.0).unwrap();
        assert_eq!(out.state.values()[0], 0.0);
        assert!((out.multiplier.values()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_energy_keeps_state() {
        let g = Grid1D::new(2.0, 7).unwrap();
        let m = EnergyModel::zero(g);
        let d = DissipationPair::default();
        let u0 = GridFunction::from_fn(g, |x| x.sin());
        let traj = solve_viscous(&u0, &SchemeParams::new(0.1, 0.05, 0.5).unwrap(), &m, &d).unwrap();
        assert_eq!(traj.n_steps(), 10);
        for (u, xi) in traj.states.iter().zip(&traj.multipliers) {
            assert_eq!(u, &u0);
            assert_eq!(xi.max_abs(), 0.0);
        }
    }

    #[test]
    fn step_count_brackets_horizon() {
        for (t, tau) in [(1.0, 1e-4), (1.0, 0.3), (6.0, 0.0001), (1.0, 1.0 / 3.0)] {
            let p = SchemeParams::new(1.0, tau, t).unwrap();
            let n = p.n_steps() as f64;
            assert!(tau * (n - 1.0) < t && t <= tau * n * (1.0 + 1e-12), "{t} {tau} {n}");
        }
        assert!(SchemeParams::new(0.0, 0.1, 1.0).is_err());
        assert!(SchemeParams::new(0.1, -0.1, 1.0).is_err());
    }

    #[test]
    fn interpolants_agree_at_nodes() {
        let m = EnergyModel::new(
            Grid1D::scalar(),
            GradTerm::None,
            Well::None,
            Loading::Affine { a: 2.0, b: 0.0, c: 0.0 },
        )
        .unwrap();
        let d = DissipationPair::default();
        let traj = solve_viscous(
            &GridFunction::scalar(0.0),
            &SchemeParams::new(0.5, 0.1, 1.0).unwrap(),
            &m,
            &d,
        )
        .unwrap();
        for n in 0..traj.len() {
            let t = traj.times[n];
            assert_eq!(traj.piecewise_constant(t).unwrap(), traj.states[n]);
            let a = traj.piecewise_affine(t).unwrap();
            assert!((a.values()[0] - traj.states[n].values()[0]).abs() < 1e-14);
        }
        let mid = 0.5 * (traj.times[3] + traj.times[4]);
        let a = traj.piecewise_affine(mid).unwrap().values()[0];
        let avg = 0.5 * (traj.states[3].values()[0] + traj.states[4].values()[0]);
        assert!((a - avg).abs() < 1e-14);
        assert!(matches!(traj.piecewise_affine(1.5), Err(Error::Domain { .. })));
        assert!(traj.piecewise_constant(-0.1).is_err());
    }

    #[test]
    fn tv_step_beats_perturbations() {
        let g = Grid1D::new(4.0, 32).unwrap();
        let m = EnergyModel::new(
            g,
            GradTerm::Tv { delta: 1.0 },
            Well::Indicator01,
            Loading::Affine {
                a: 1.0,
                b: -1.0,
                c: 2.0,
            },
        )
        .unwrap();
        let d = DissipationPair::default();
        let s = ViscousSolver::new(&m, &d, SchemeParams::new(0.1, 0.01, 1.0).unwrap()).unwrap();
        let up = GridFunction::from_fn(g, |x| if x < 1.0 { 1.0 } else { 0.0 });
        let out = s.step_with(&up, 0.3, 0.1, 1).unwrap();
        assert!(out.residual < 1e-9, "residual {}", out.residual);
        let f0 = s.incremental_energy(0.3, 0.1, &up, &out.state).unwrap();
        for i in 0..32 {
            for sgn in [-1e-3, 1e-3] {
                let mut v = out.state.values().to_vec();
                v[i] = (v[i] + sgn).clamp(0.0, 1.0);
                let v = GridFunction::new(g, v).unwrap();
                assert!(s.incremental_energy(0.3, 0.1, &up, &v).unwrap() >= f0 - 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_step_converges_and_decreases_energy() {
        let g = Grid1D::new(1.0, 16).unwrap();
        let m = EnergyModel::new(
            g,
            GradTerm::Dirichlet,
            Well::Quadratic {
                lambda: 1.0,
                center: 0.0,
            },
            Loading::Affine {
                a: 3.0,
                b: 1.0,
                c: -0.5,
            },
        )
        .unwrap();
        let d = DissipationPair::default();
        let s = ViscousSolver::new(&m, &d, SchemeParams::new(0.1, 0.05, 1.0).unwrap()).unwrap();
        let up = GridFunction::zeros(g);
        let out = s.step_with(&up, 1.0, 0.05, 1).unwrap();
        assert!(out.residual <= 1e-8);
        assert!(out.certified_global);
        let f = s.incremental_energy(1.0, 0.05, &up, &out.state).unwrap();
        assert!(f <= s.incremental_energy(1.0, 0.05, &up, &up).unwrap());
    }

    #[test]
    fn power_viscosity_step_satisfies_euler_equation() {
        let m = scalar_model(3.0);
        let d = DissipationPair::new(Gauge::default(), ViscousPotential::power(1.0, 3.0).unwrap()).unwrap();
        let s = ViscousSolver::new(&m, &d, SchemeParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let out = s.incremental_step(&GridFunction::scalar(0.0), 1.0).unwrap();
        // |v| + v^3/3 + (v-3)^2/2, v > 0: 1 + v^2 + v - 3 = 0
        let v = (-1.0 + (1.0f64 + 8.0).sqrt()) / 2.0;
        assert!((out.state.values()[0] - v).abs() < 1e-7, "{}", out.state.values()[0]);
    }
}
