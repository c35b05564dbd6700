//! Arclength reparameterisations of trajectories and the conversion between
//! BV curves and parameterised curves.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{JumpTriple, LimitCurve};
use crate::dissipation::{DissipationPair, Gauge};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, GridFunction};
use crate::solver::Trajectory;
use crate::transitions::TransitionPath;

/// Samples `(s_k, t(s_k), u(s_k))`. Rates are averages over the interval
/// `(s_{k-1}, s_k]` and are stored at index `k - 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterizedCurve {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub states: Vec<GridFunction>,
    pub dt_ds: Vec<f64>,
    pub psi_rate: Vec<f64>,
    /// `slack |u'|`.
    pub viscous_rate: Vec<f64>,
    /// `|u'|` in `L^2`.
    pub norm_rate: Vec<f64>,
    pub slack: Vec<f64>,
    /// Interval lies on a viscous run (positive slack).
    pub viscous: Vec<bool>,
}

impl ParameterizedCurve {
    fn with_capacity(n: usize) -> Self {
        Self {
            s: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            dt_ds: Vec::with_capacity(n),
            psi_rate: Vec::with_capacity(n),
            viscous_rate: Vec::with_capacity(n),
            norm_rate: Vec::with_capacity(n),
            slack: Vec::with_capacity(n),
            viscous: Vec::with_capacity(n),
        }
    }

    fn start(&mut self, t: f64, u: GridFunction) {
        self.s.push(0.0);
        self.t.push(t);
        self.states.push(u);
    }

    /// Appends an interval of parameter length `ds` ending at `(t, u)`, with
    /// the increments `dt`, `Psi(du)`, `slack |du|`, `|du|`.
    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, t: f64, u: GridFunction, dt: f64, psi: f64, visc: f64, norm: f64, slack: f64, ds: f64) {
        let s0 = *self.s.last().unwrap();
        self.s.push(s0 + ds);
        self.t.push(t);
        self.states.push(u);
        self.dt_ds.push(dt / ds);
        self.psi_rate.push(psi / ds);
        self.viscous_rate.push(visc / ds);
        self.norm_rate.push(norm / ds);
        self.slack.push(slack);
        self.viscous.push(slack > 0.0);
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    /// The curve `s -> (t(s/k), u(s/k))`.
    pub fn dilate(&self, k: f64) -> Self {
        let mut c = self.clone();
        c.s.iter_mut().for_each(|s| *s *= k);
        for r in [&mut c.dt_ds, &mut c.psi_rate, &mut c.viscous_rate, &mut c.norm_rate] {
            r.iter_mut().for_each(|v| *v /= k);
        }
        c
    }

    /// Largest time advance over a run of viscous intervals.
    pub fn plateau_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut k = 0;
        while k < self.viscous.len() {
            if self.viscous[k] {
                let a = k;
                while k + 1 < self.viscous.len() && self.viscous[k + 1] {
                    k += 1;
                }
                worst = worst.max(self.t[k + 1] - self.t[a]);
            }
            k += 1;
        }
        worst
    }
}

/// `s(t) = t + int_0^t Psi(u') + slack |u'| dr` on the nodes, with the slack
/// `dist(xi^n, K*)` of the step multipliers.
pub fn energy_dissipation_arclength(traj: &Trajectory, diss: &DissipationPair) -> Result<ParameterizedCurve> {
    if traj.multipliers.len() != traj.len() {
        return Err(Error::WitnessRequired("trajectory carries no multipliers".into()));
    }
    let gauge = &diss.gauge;
    let mut c = ParameterizedCurve::with_capacity(traj.len());
    c.start(traj.times[0], traj.states[0].clone());
    for n in 1..traj.len() {
        let dt = traj.times[n] - traj.times[n - 1];
        let du = &traj.states[n] - &traj.states[n - 1];
        let psi = gauge.psi(&du);
        let norm = l2_norm(&du);
        let slack = gauge.dual_dist(&traj.multipliers[n]);
        let ds = dt + psi + slack * norm;
        c.push(
            traj.times[n],
            traj.states[n].clone(),
            dt,
            psi,
            slack * norm,
            norm,
            slack,
            ds,
        );
    }
    Ok(c)
}

/// `s(t) = t + int_0^t |u'| dr`.
pub fn v_arclength(traj: &Trajectory, gauge: &Gauge) -> Result<ParameterizedCurve> {
    let mut c = ParameterizedCurve::with_capacity(traj.len());
    c.start(traj.times[0], traj.states[0].clone());
    for n in 1..traj.len() {
        let dt = traj.times[n] - traj.times[n - 1];
        let du = &traj.states[n] - &traj.states[n - 1];
        let norm = l2_norm(&du);
        let slack = traj.multipliers.get(n).map_or(0.0, |xi| gauge.dual_dist(xi));
        c.push(
            traj.times[n],
            traj.states[n].clone(),
            dt,
            gauge.psi(&du),
            slack * norm,
            norm,
            slack,
            dt + norm,
        );
    }
    Ok(c)
}

/// `t' + Psi-rate + slack |u'| - m(s)` per interval, `m` evaluated at the
/// interval midpoint (`1` by default).
pub fn normalization_residual(curve: &ParameterizedCurve, m: Option<&dyn Fn(f64) -> f64>) -> Vec<f64> {
    (0..curve.dt_ds.len())
        .map(|k| {
            let mid = 0.5 * (curve.s[k] + curve.s[k + 1]);
            let target = m.map_or(1.0, |f| f(mid));
            curve.dt_ds[k] + curve.psi_rate[k] + curve.viscous_rate[k] - target
        })
        .collect()
}

/// `t' + |u'| - 1` per interval.
pub fn v_normalization_residual(curve: &ParameterizedCurve) -> Vec<f64> {
    (0..curve.dt_ds.len())
        .map(|k| curve.dt_ds[k] + curve.norm_rate[k] - 1.0)
        .collect()
}

/// Uniform resampling in `s` with `n` intervals. States and times are
/// interpolated linearly; rates are averaged exactly over the new intervals.
pub fn resample(curve: &ParameterizedCurve, n: usize) -> Result<ParameterizedCurve> {
    if n == 0 || curve.len() < 2 {
        return Err(Error::InvalidParameter("resampling needs a nondegenerate curve".into()));
    }
    let total = curve.length();
    let cum = |rates: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0];
        for k in 0..rates.len() {
            acc.push(acc[k] + rates[k] * (curve.s[k + 1] - curve.s[k]));
        }
        acc
    };
    let sums = [
        cum(&curve.dt_ds),
        cum(&curve.psi_rate),
        cum(&curve.viscous_rate),
        cum(&curve.norm_rate),
    ];
    // piecewise linear evaluation of a node quantity at s
    let locate = |s: f64| -> (usize, f64) {
        let k = curve.s.partition_point(|&x| x < s).clamp(1, curve.len() - 1);
        let (a, b) = (curve.s[k - 1], curve.s[k]);
        let th = if b > a {
            ((s - a) / (b - a)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        (k, th)
    };
    let lin = |v: &[f64], s: f64| {
        let (k, th) = locate(s);
        v[k - 1] * (1.0 - th) + v[k] * th
    };
    let mut out = ParameterizedCurve::with_capacity(n + 1);
    out.start(curve.t[0], curve.states[0].clone());
    for j in 1..=n {
        let (s0, s1) = (total * (j - 1) as f64 / n as f64, total * j as f64 / n as f64);
        let (k, th) = locate(s1);
        let u = curve.states[k - 1].lerp(&curve.states[k], th);
        let inc: Vec<f64> = sums.iter().map(|c| lin(c, s1) - lin(c, s0)).collect();
        let slack = curve.slack[locate(0.5 * (s0 + s1)).0 - 1];
        out.push(lin(&curve.t, s1), u, inc[0], inc[1], inc[2], inc[3], slack, s1 - s0);
    }
    Ok(out)
}

/// `(int P dt, int P t' ds)` by the trapezoidal rule on the samples.
pub fn work_identity(curve: &ParameterizedCurve, model: &EnergyModel) -> Result<(f64, f64)> {
    let p: Vec<f64> = curve
        .t
        .iter()
        .zip(&curve.states)
        .map(|(&t, u)| model.power(t, u))
        .collect::<Result<_>>()?;
    let mut in_t = 0.0;
    let mut in_s = 0.0;
    for k in 1..curve.len() {
        let avg = 0.5 * (p[k] + p[k - 1]);
        in_t += avg * (curve.t[k] - curve.t[k - 1]);
        in_s += avg * curve.dt_ds[k - 1] * (curve.s[k] - curve.s[k - 1]);
    }
    Ok((in_t, in_s))
}

/// Report of the rescaled viscous energy identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledIdentity {
    /// `int F_eps ds + E(end) - E(start)`.
    pub residual: f64,
    pub dissipation: f64,
    pub work: f64,
    /// Intervals with `t' = 0`, where the integrand is infinite unless the
    /// state is frozen; they are left out.
    pub excluded: usize,
}

/// Residual of
/// `int Psi(u') + (a/eps) Phi(eps u'/a) + (a/eps) F^*(slack) - a P ds + E(end) = E(start)`
/// with `a = t'`. The power is frozen at the left sample,
/// which makes the identity agree with the rectangle form of the viscous
/// balance.
pub fn rescaled_energy_identity_residual(
    curve: &ParameterizedCurve,
    eps: f64,
    model: &EnergyModel,
    diss: &DissipationPair,
) -> Result<RescaledIdentity> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let f = diss.viscous;
    let mut dis = 0.0;
    let mut work = 0.0;
    let mut excluded = 0;
    for k in 1..curve.len() {
        let ds = curve.s[k] - curve.s[k - 1];
        let a = curve.dt_ds[k - 1];
        if a <= 0.0 {
            excluded += 1;
            continue;
        }
        let v = curve.norm_rate[k - 1];
        dis += ds * (curve.psi_rate[k - 1] + a / eps * (f.f(eps * v / a) + f.conj(curve.slack[k - 1])));
        let u = &curve.states[k - 1];
        work += model.energy(curve.t[k], u)? - model.energy(curve.t[k - 1], u)?;
    }
    let last = curve.len() - 1;
    let e0 = model.energy(curve.t[0], &curve.states[0])?;
    let e1 = model.energy(curve.t[last], &curve.states[last])?;
    Ok(RescaledIdentity {
        residual: dis - work + e1 - e0,
        dissipation: dis,
        work,
        excluded,
    })
}

/// `u(t)` is the first sample with `t(s) = t`; time plateaus carrying a state
/// change become jumps `(u(t-), u(t), u(t+))` = (first, first, last).
pub fn bv_from_parameterized(curve: &ParameterizedCurve, horizon: f64, gauge: &Gauge) -> Result<LimitCurve> {
    if curve.is_empty() {
        return Err(Error::DomainIncomplete { horizon, reached: 0.0 });
    }
    let tol = 1e-12 * horizon.abs().max(1.0);
    let reached = *curve.t.last().unwrap();
    if curve.t[0].abs() > tol || reached < horizon - tol {
        return Err(Error::DomainIncomplete { horizon, reached });
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < curve.len() {
        let a = k;
        while k + 1 < curve.len() && (curve.t[k + 1] - curve.t[a]).abs() <= tol {
            k += 1;
        }
        groups.push((a, k));
        times.push(curve.t[a]);
        states.push(curve.states[a].clone());
        k += 1;
    }
    let mut out = LimitCurve::new(times, states)?;
    for (g, &(a, b)) in groups.iter().enumerate() {
        if b == a {
            continue;
        }
        let left = curve.states[a].clone();
        let right = curve.states[b].clone();
        let size = gauge.psi(&(&right - &left));
        if size <= tol {
            continue;
        }
        out.jumps.push(JumpTriple {
            t: curve.t[a],
            t_left: curve.t[a],
            t_right: curve.t[a],
            first_sample: g,
            last_sample: g,
            middle: left.clone(),
            left,
            right,
            size,
            uncertain: false,
        });
    }
    Ok(out)
}

/// Glues `s(t) = t + Var_f(u; [0,t])`: continuous increments advance `s` by
/// `dt + Psi(du)` (the curve is taken to be locally stable there), and every
/// detected jump is traversed at frozen time along its transition path. The
/// remaining time of a jump bracket is then spent at the post-jump state.
pub fn parameterized_from_bv(
    curve: &LimitCurve,
    gauge: &Gauge,
    transitions: &[TransitionPath],
) -> Result<ParameterizedCurve> {
    if transitions.len() != curve.jumps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} transitions supplied for {} jumps",
            transitions.len(),
            curve.jumps.len()
        )));
    }
    let mut c = ParameterizedCurve::with_capacity(curve.len());
    c.start(curve.times[0], curve.states[0].clone());
    let mut k = 1;
    while k < curve.len() {
        let t0 = curve.times[k - 1];
        if let Some(j) = curve.jumps.iter().position(|j| j.first_sample == k - 1) {
            let jump = &curve.jumps[j];
            let path = &transitions[j];
            let nodes = path.nodes.len();
            for m in 1..nodes {
                let node = if m + 1 == nodes {
                    curve.states[jump.last_sample].clone()
                } else {
                    path.nodes[m].clone()
                };
                let prev = c.states.last().unwrap();
                let du = &node - prev;
                let psi = gauge.psi(&du);
                let norm = l2_norm(&du);
                let slack = path.slack[m - 1];
                let ds = psi + slack * norm;
                if ds > 0.0 {
                    c.push(t0, node, 0.0, psi, slack * norm, norm, slack, ds);
                }
            }
            let t1 = curve.times[jump.last_sample];
            if t1 > t0 {
                let u = c.states.last().unwrap().clone();
                c.push(t1, u, t1 - t0, 0.0, 0.0, 0.0, 0.0, t1 - t0);
            }
            k = jump.last_sample + 1;
            continue;
        }
        let dt = curve.times[k] - t0;
        let du = &curve.states[k] - &curve.states[k - 1];
        let psi = gauge.psi(&du);
        let ds = dt + psi;
        if ds > 0.0 {
            c.push(
                curve.times[k],
                curve.states[k].clone(),
                dt,
                psi,
                0.0,
                l2_norm(&du),
                0.0,
                ds,
            );
        }
        k += 1;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{GradTerm, Loading, Well};
    use crate::numerics::Grid1D;
    use crate::solver::{SchemeParams, ViscousSolver};

    fn frozen() -> (EnergyModel, DissipationPair, Trajectory) {
        let g = Grid1D::new(1.0, 3).unwrap();
        let m = EnergyModel::zero(g);
        let d = DissipationPair::default();
        let tr = ViscousSolver::new(&m, &d, SchemeParams::new(0.1, 0.1, 1.0).unwrap())
            .unwrap()
            .solve(&GridFunction::constant(g, 1.0))
            .unwrap();
        (m, d, tr)
    }

    #[test]
    fn frozen_system_is_identity() {
        let (m, d, tr) = frozen();
        let c = energy_dissipation_arclength(&tr, &d).unwrap();
        for (s, t) in c.s.iter().zip(&c.t) {
            assert!((s - t).abs() < 1e-15);
        }
        assert!(normalization_residual(&c, None).iter().all(|r| r.abs() < 1e-15));
        let v = v_arclength(&tr, &d.gauge).unwrap();
        assert!(v_normalization_residual(&v).iter().all(|r| r.abs() < 1e-15));
        let r = rescaled_energy_identity_residual(&c, 0.1, &m, &d).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    fn sliding_curve() -> (LimitCurve, Gauge) {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let c = LimitCurve::from_fn(times, GridFunction::scalar).unwrap();
        (c, Gauge::default())
    }

    #[test]
    fn unit_sliding_doubles_arclength() {
        let (c, g) = sliding_curve();
        let p = parameterized_from_bv(&c, &g, &[]).unwrap();
        assert!((p.length() - 2.0).abs() < 1e-14);
        assert!(p.dt_ds.iter().all(|&r| (r - 0.5).abs() < 1e-14));
        let d = p.dilate(2.0);
        assert!(normalization_residual(&d, None).iter().all(|r| (r + 0.5).abs() < 1e-14));
    }

    #[test]
    fn round_trip_with_jump() {
        let g = Gauge::default();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let c = LimitCurve::from_fn(times.clone(), |t| {
            GridFunction::scalar(if t < 0.5 { t } else { t + 3.0 })
        })
        .unwrap()
        .with_jumps(&g, None)
        .unwrap();
        assert_eq!(c.jumps.len(), 1);
        let j = &c.jumps[0];
        let mut path =
            TransitionPath::linear(j.t_left, &c.states[j.first_sample], &c.states[j.last_sample], 10).unwrap();
        // a viscous surcharge of 0.5 on every segment
        path.slack = vec![0.5; 10];
        let p = parameterized_from_bv(&c, &g, &[path.clone()]).unwrap();
        assert!(normalization_residual(&p, None).iter().all(|r| r.abs() < 1e-12));
        assert!(p.plateau_violation() == 0.0);
        let back = bv_from_parameterized(&p, 1.0, &g).unwrap();
        assert_eq!(back.times, times);
        for (a, b) in back.states.iter().zip(&c.states) {
            assert!((a.values()[0] - b.values()[0]).abs() < 1e-14);
        }
        assert_eq!(back.jumps.len(), 1);
        // s(T) - T = Var_f with the path cost in place of the Psi-jump
        let du = c.states[j.last_sample].values()[0] - c.states[j.first_sample].values()[0];
        let cost = du + 0.5 * du;
        let var_f = 1.0 + 3.0 - du + cost;
        assert!((p.length() - 1.0 - var_f).abs() < 1e-12);
    }

    #[test]
    fn incomplete_curve_is_rejected() {
        let (c, g) = sliding_curve();
        let p = parameterized_from_bv(&c, &g, &[]).unwrap();
        assert!(matches!(
            bv_from_parameterized(&p, 2.0, &g),
            Err(Error::DomainIncomplete { .. })
        ));
    }

    #[test]
    fn resampling_keeps_normalization_and_work() {
        let g = Grid1D::new(1.0, 8).unwrap();
        let m = EnergyModel::new(
            g,
            GradTerm::None,
            Well::Quadratic {
                lambda: 1.0,
                center: 0.0,
            },
            Loading::Affine { a: 2.0, b: 1.0, c: 0.0 },
        )
        .unwrap();
        let d = DissipationPair::default();
        let tr = ViscousSolver::new(&m, &d, SchemeParams::new(0.2, 0.01, 2.0).unwrap())
            .unwrap()
            .solve(&GridFunction::zeros(g))
            .unwrap();
        let c = energy_dissipation_arclength(&tr, &d).unwrap();
        let r = resample(&c, 77).unwrap();
        assert!(normalization_residual(&r, None).iter().all(|x| x.abs() < 1e-12));
        let (a, b) = work_identity(&r, &m).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        assert!((r.length() - c.length()).abs() < 1e-12);
    }
}
