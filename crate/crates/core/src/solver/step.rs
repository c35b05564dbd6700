//! One incremental minimisation `argmin tau Psi_eps((U - U_prev)/tau) + E_t(U)`
//! and the certified Euler residual of its output.

use crate::dissipation::DissipationPair;
use crate::energy::{EnergyModel, GradTerm, Well};
use crate::error::{Error, Result};
use crate::numerics::GridFunction;

use super::cell::{tv_chain_argmin, LocalQuadratic, Pwq};
use super::InitStrategy;

/// Result of one incremental step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: GridFunction,
    /// `xi in dPsi_eps(V)`, with `-xi in dE_t(U)` up to `residual`.
    pub multiplier: GridFunction,
    pub residual: f64,
    pub iterations: usize,
    /// The minimiser is a certified global one (convex or exact scalar search).
    pub certified_global: bool,
    /// A cheap perturbation test found a state with lower incremental energy.
    pub competitor_found: bool,
}

/// Inputs shared by every step of one viscous run.
pub(crate) struct StepProblem<'a> {
    pub model: &'a EnergyModel,
    pub diss: &'a DissipationPair,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitStrategy,
}

struct DissTerm {
    up: f64,
    wp: f64,
    wm: f64,
    c: f64,
}

impl LocalQuadratic for DissTerm {
    fn kinks(&self, out: &mut Vec<f64>) {
        out.push(self.up);
    }
    fn local(&self, x: f64) -> [f64; 3] {
        let s = if x > self.up { self.wp } else { -self.wm };
        let u = self.up;
        [0.5 * self.c, s - self.c * u, 0.5 * self.c * u * u - s * u]
    }
}

/// `rho/2 (x - y)^2 - b x`.
struct QuadLin {
    rho: f64,
    y: f64,
    b: f64,
}

impl LocalQuadratic for QuadLin {
    fn kinks(&self, _: &mut Vec<f64>) {}
    fn local(&self, _: f64) -> [f64; 3] {
        [
            0.5 * self.rho,
            -self.rho * self.y - self.b,
            0.5 * self.rho * self.y * self.y,
        ]
    }
}

struct WellTerm(Well);

impl LocalQuadratic for WellTerm {
    fn kinks(&self, out: &mut Vec<f64>) {
        if let Well::DoubleWell = self.0 {
            out.extend([-2.0, 2.0]);
        }
    }
    fn local(&self, x: f64) -> [f64; 3] {
        match self.0 {
            Well::None | Well::Indicator01 => [0.0; 3],
            Well::Quadratic { lambda, center } => [0.5 * lambda, -lambda * center, 0.5 * lambda * center * center],
            Well::DoubleWell => {
                if x <= -2.0 {
                    [0.5, 4.0, 8.0]
                } else if x < 2.0 {
                    [-0.5, 0.0, 4.0]
                } else {
                    [0.5, -4.0, 8.0]
                }
            }
        }
    }
}

impl StepProblem<'_> {
    fn quadratic(&self) -> bool {
        self.diss.viscous.is_quadratic()
    }

    /// Incremental objective `tau Psi_eps((U - up)/tau) + E_t(U)`.
    pub fn objective(&self, t: f64, tau: f64, up: &GridFunction, u: &GridFunction) -> Result<f64> {
        let v = (u - up).scale(1.0 / tau);
        Ok(tau * self.diss.psi_eps(&v, self.eps)? + self.model.energy(t, u)?)
    }

    fn cell(&self, i: usize, up: f64, c: f64, rho: f64, y: f64, b: f64, with_well: bool) -> Pwq {
        let g = &self.diss.gauge;
        let (lo, hi) = self.model.well().bounds();
        let d = DissTerm {
            up,
            wp: g.w_plus(i),
            wm: g.w_minus(i),
            c,
        };
        let ql = QuadLin { rho, y, b };
        if with_well {
            Pwq::build(lo, hi, &[&d, &ql, &WellTerm(self.model.well())])
        } else {
            Pwq::build(lo, hi, &[&d, &ql])
        }
    }

    /// Minimises `sum h [cell_i] + TV` with cells built from `(rho, y, b)`.
    fn prox_cells(&self, up: &[f64], c: f64, rho: f64, y: &[f64], b: &[f64], with_well: bool) -> Vec<f64> {
        let n = up.len();
        let cells: Vec<Pwq> = (0..n)
            .map(|i| self.cell(i, up[i], c, rho, y[i], b[i], with_well))
            .collect();
        if self.model.has_tv() {
            let h = self.model.grid().spacing();
            tv_chain_argmin(&cells, self.model.tv_delta() / h)
        } else {
            cells.iter().map(|f| f.argmin_convex()).collect()
        }
    }

    pub fn solve(&self, step: usize, t: f64, tau: f64, up: &GridFunction) -> Result<StepOutcome> {
        let model = self.model;
        if !model.is_admissible(up) {
            return Err(Error::InvalidState(format!(
                "previous state at step {step} is not admissible"
            )));
        }
        self.diss.gauge.check_len(up.len())?;
        let ell = model.load(t).into_values();
        let upv = up.values();
        let n = upv.len();
        let zeros = vec![0.0; n];
        let coupled_smooth = matches!(model.grad_term(), GradTerm::Dirichlet) && n > 1;

        if self.quadratic() {
            let c = self.eps / tau;
            let well_convex = c + model.well().convexity() > 0.0;
            if !coupled_smooth && well_convex {
                let x = self.prox_cells(upv, c, 0.0, &zeros, &ell, true);
                return self.finish(step, t, tau, up, x, 1, true, false);
            }
            if !coupled_smooth && !model.has_tv() {
                let global = matches!(self.init, InitStrategy::GridSearchScalar);
                let x = (0..n)
                    .map(|i| {
                        let f = self.cell(i, upv[i], c, 0.0, 0.0, ell[i], true);
                        if global {
                            f.global_min(upv[i])
                        } else {
                            f.local_min_from(upv[i])
                        }
                    })
                    .collect();
                return self.finish(step, t, tau, up, x, 1, global, false);
            }
            return self.fista(step, t, tau, up, &ell, well_convex);
        }
        if model.has_tv() || model.well().bounds().0.is_finite() {
            return Err(Error::UnsupportedModel(
                "non-quadratic viscosity is supported only without total variation or constraints".into(),
            ));
        }
        self.fista(step, t, tau, up, &ell, false)
    }

    /// Monotone accelerated proximal gradient. The smooth part holds the
    /// Dirichlet term, the well when it is not absorbed in the cells, and the
    /// radial viscosity for non-quadratic `F` is handled in the prox.
    fn fista(
        &self,
        step: usize,
        t: f64,
        tau: f64,
        up: &GridFunction,
        ell: &[f64],
        well_in_cells: bool,
    ) -> Result<StepOutcome> {
        let model = self.model;
        let grid = *model.grid();
        let n = up.len();
        let h = grid.spacing();
        let quadratic = self.quadratic();
        let c = if quadratic { self.eps / tau } else { 0.0 };
        let dirichlet = matches!(model.grad_term(), GradTerm::Dirichlet) && n > 1;
        let mut lip = if dirichlet { 4.0 / (h * h) } else { 0.0 };
        let well_smooth = !well_in_cells || !quadratic;
        if well_smooth {
            lip += model.well().curvature_bound();
        }
        let upv = up.values();
        let smooth_grad = |x: &[f64], out: &mut [f64]| {
            model.dirichlet_gradient(x, out);
            if well_smooth {
                for i in 0..n {
                    out[i] += model.well().deriv(x[i]);
                }
            }
        };
        let prox = |y: &[f64], g: &[f64], rho: f64| -> Vec<f64> {
            if quadratic {
                // cells: diss + rho/2 (x - y)^2 + (ell - g) linear term
                let b: Vec<f64> = (0..n).map(|i| ell[i] - g[i]).collect();
                self.prox_cells(upv, c, rho, y, &b, !well_smooth)
            } else {
                self.radial_prox(upv, y, g, ell, rho, tau)
            }
        };
        let obj = |x: &[f64]| self.objective(t, tau, up, &GridFunction::from_raw(grid, x.to_vec()));

        let mut x = upv.to_vec();
        let mut g = vec![0.0; n];
        if lip == 0.0 {
            smooth_grad(&x, &mut g);
            let z = prox(&x, &g, 0.0);
            return self.finish(step, t, tau, up, z, 1, quadratic, false);
        }
        let mut fx = obj(&x)?;
        let mut y = x.clone();
        let mut theta: f64 = 1.0;
        let mut last_res = f64::INFINITY;
        for it in 1..=self.max_iter {
            smooth_grad(&y, &mut g);
            let z = prox(&y, &g, lip);
            let fz = obj(&z)?;
            let x_old = std::mem::take(&mut x);
            let accepted = fz <= fx + 1e-14 * fx.abs().max(1.0);
            x = if accepted { z.clone() } else { x_old.clone() };
            if accepted {
                fx = fz;
            }
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            if accepted {
                y = (0..n)
                    .map(|i| x[i] + (theta - 1.0) / theta_new * (x[i] - x_old[i]))
                    .collect();
                theta = theta_new;
            } else {
                // restart momentum
                y = (0..n).map(|i| x[i] + theta / theta_new * (z[i] - x[i])).collect();
                theta = 1.0;
            }
            let cand = GridFunction::from_raw(grid, z);
            let res = euler_residual(model, self.diss, self.eps, t, tau, up, &cand)?.0;
            last_res = last_res.min(res);
            if res <= self.tolerance(tau, up, cand.values()) {
                let certified = model.convexity() + c > 0.0;
                return self.finish(step, t, tau, up, cand.into_values(), it, certified, !certified);
            }
        }
        Err(Error::StepFailure {
            step,
            iterations: self.max_iter,
            residual: last_res,
            reason: "accelerated proximal gradient did not reach the residual tolerance".into(),
        })
    }

    /// Prox of `Psi(D) + (tau/eps) F(eps |D| / tau)` with `D = x - up` and the
    /// linearised smooth part; soft-thresholding followed by radial scaling.
    fn radial_prox(&self, up: &[f64], y: &[f64], g: &[f64], ell: &[f64], rho: f64, tau: f64) -> Vec<f64> {
        let n = up.len();
        let gauge = &self.diss.gauge;
        let f = self.diss.viscous;
        let h = self.model.grid().spacing();
        let soft: Vec<f64> = (0..n)
            .map(|i| {
                let u = rho * (y[i] - up[i]) - g[i] + ell[i];
                if u > gauge.w_plus(i) {
                    u - gauge.w_plus(i)
                } else if u < -gauge.w_minus(i) {
                    u + gauge.w_minus(i)
                } else {
                    0.0
                }
            })
            .collect();
        let sigma = (h * soft.iter().map(|s| s * s).sum::<f64>()).sqrt();
        if sigma == 0.0 {
            return up.to_vec();
        }
        let k = self.eps / tau;
        // solve rho r + F'(k r) = sigma
        let phi = |r: f64| rho * r + f.df(k * r) - sigma;
        let (mut a, mut b) = (0.0, 1.0);
        while phi(b) < 0.0 {
            b *= 2.0;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if phi(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a <= 1e-16 * b {
                break;
            }
        }
        let r = 0.5 * (a + b);
        (0..n).map(|i| up[i] + soft[i] * r / sigma).collect()
    }

    /// `tol`, raised to the rounding level of `eps (u - up) / tau` when the
    /// step is tiny.
    fn tolerance(&self, tau: f64, up: &GridFunction, x: &[f64]) -> f64 {
        let scale = x.iter().chain(up.values()).fold(1.0f64, |m, a| m.max(a.abs()));
        let floor = 64.0 * f64::EPSILON * scale * self.eps * up.grid().length().sqrt() / tau;
        self.tol.max(floor)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        step: usize,
        t: f64,
        tau: f64,
        up: &GridFunction,
        x: Vec<f64>,
        iterations: usize,
        certified_global: bool,
        probe: bool,
    ) -> Result<StepOutcome> {
        let model = self.model;
        let state = GridFunction::new(*model.grid(), x).map_err(|e| Error::StepFailure {
            step,
            iterations,
            residual: f64::NAN,
            reason: e.to_string(),
        })?;
        let (residual, multiplier) = euler_residual(model, self.diss, self.eps, t, tau, up, &state)?;
        if residual > self.tolerance(tau, up, state.values()) {
            return Err(Error::StepFailure {
                step,
                iterations,
                residual,
                reason: "Euler residual above tolerance".into(),
            });
        }
        let competitor_found = probe && self.competitor_probe(t, tau, up, &state)?;
        Ok(StepOutcome {
            state,
            multiplier,
            residual,
            iterations,
            certified_global,
            competitor_found,
        })
    }

    /// Compares the accepted state with the previous state and with the
    /// cellwise global minimisers that ignore the coupling.
    fn competitor_probe(&self, t: f64, tau: f64, up: &GridFunction, u: &GridFunction) -> Result<bool> {
        let f0 = self.objective(t, tau, up, u)?;
        let tol = 1e-9 * (1.0 + f0.abs());
        if self.objective(t, tau, up, up)? < f0 - tol {
            return Ok(true);
        }
        if !self.quadratic() {
            return Ok(false);
        }
        let c = self.eps / tau;
        let ell = self.model.load(t).into_values();
        let cand: Vec<f64> = (0..u.len())
            .map(|i| {
                self.cell(i, up.values()[i], c, 0.0, 0.0, ell[i], true)
                    .global_min(u.values()[i])
            })
            .collect();
        let cand = GridFunction::from_raw(*u.grid(), cand);
        Ok(self.objective(t, tau, up, &cand)? < f0 - tol)
    }
}

#[derive(Debug, Clone, Copy)]
struct Interval(f64, f64);

impl Interval {
    fn point(x: f64) -> Self {
        Interval(x, x)
    }
    fn add(self, o: Interval) -> Interval {
        Interval(self.0 + o.0, self.1 + o.1)
    }
    fn dist(self, x: f64) -> f64 {
        if x < self.0 {
            self.0 - x
        } else if x > self.1 {
            x - self.1
        } else {
            0.0
        }
    }
    fn clamp(self, x: f64) -> f64 {
        x.clamp(self.0, self.1)
    }
    /// Intersection, or the point of `self` nearest to `o` if disjoint.
    fn meet(self, o: Interval) -> Interval {
        let lo = self.0.max(o.0);
        let hi = self.1.min(o.1);
        if lo <= hi {
            Interval(lo, hi)
        } else if o.1 < self.0 {
            Interval::point(self.0)
        } else {
            Interval::point(self.1)
        }
    }
    fn pick(self) -> f64 {
        match (self.0.is_finite(), self.1.is_finite()) {
            (true, true) => 0.5 * (self.0 + self.1),
            (true, false) => self.0,
            (false, true) => self.1,
            (false, false) => 0.0,
        }
    }
}

/// Distance between `dPsi_eps(V)` and `-dE_t(U)` in the dual norm, with
/// `V = (U - up)/tau`, together with the nearest multiplier in `dPsi_eps(V)`.
///
/// Total variation subgradients on faces are chosen by forward interval
/// propagation and backward selection, so the value is exact up to the face
/// threshold used to decide which faces are flat.
pub fn euler_residual(
    model: &EnergyModel,
    diss: &DissipationPair,
    eps: f64,
    t: f64,
    tau: f64,
    up: &GridFunction,
    u: &GridFunction,
) -> Result<(f64, GridFunction)> {
    let grid = *model.grid();
    let n = u.len();
    let h = grid.spacing();
    let x = u.values();
    let v: Vec<f64> = x.iter().zip(up.values()).map(|(a, b)| (a - b) / tau).collect();
    let vn = (h * v.iter().map(|a| a * a).sum::<f64>()).sqrt();
    let kappa = if vn > 0.0 { diss.viscous.df(eps * vn) / vn } else { 0.0 };
    let gauge = &diss.gauge;
    let ell = model.load(t).into_values();
    let mut g = vec![0.0; n];
    model.smooth_part_gradient(&ell, x, &mut g);
    let (lo, hi) = model.well().bounds();
    let b_set = |i: usize| -> Interval {
        if v[i] > 0.0 {
            Interval::point(gauge.w_plus(i) + kappa * v[i])
        } else if v[i] < 0.0 {
            Interval::point(-gauge.w_minus(i) + kappa * v[i])
        } else {
            Interval(-gauge.w_minus(i), gauge.w_plus(i))
        }
    };
    let normal = |i: usize| -> Interval {
        if x[i] <= lo {
            Interval(f64::NEG_INFINITY, 0.0)
        } else if x[i] >= hi {
            Interval(0.0, f64::INFINITY)
        } else {
            Interval::point(0.0)
        }
    };
    // (q_i - q_{i-1}) / h must lie in A_i = B_i + G_i + N_i
    let a_set: Vec<Interval> = (0..n)
        .map(|i| b_set(i).add(Interval::point(g[i])).add(normal(i)))
        .collect();
    let delta = model.tv_delta();
    let scale = 1.0 + x.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let eta = 1e-12 * scale;
    let face = |f: usize| -> Interval {
        if delta == 0.0 {
            return Interval::point(0.0);
        }
        let d = x[f + 1] - x[f];
        if d > eta {
            Interval::point(delta)
        } else if d < -eta {
            Interval::point(-delta)
        } else {
            Interval(-delta, delta)
        }
    };
    let s_set = |i: usize| Interval(h * a_set[i].0, h * a_set[i].1);
    let mut reach = Vec::with_capacity(n);
    let mut prev = Interval::point(0.0);
    for i in 0..n.saturating_sub(1) {
        let r = face(i).meet(prev.add(s_set(i)));
        reach.push(r);
        prev = r;
    }
    let mut q = vec![0.0; n + 1];
    // q[i + 1] stores the face value right of cell i; q[0] = q[n] = 0
    for i in (1..n).rev() {
        let target = Interval(q[i + 1] - s_set(i).1, q[i + 1] - s_set(i).0);
        q[i] = reach[i - 1].meet(target).pick();
        q[i] = reach[i - 1].clamp(q[i]);
    }
    let mut res2 = 0.0;
    let mut xi = vec![0.0; n];
    for i in 0..n {
        let flux = (q[i + 1] - q[i]) / h;
        let r = a_set[i].dist(flux);
        res2 += r * r;
        // xi in B_i nearest to flux - G_i - N_i
        let target = match normal(i) {
            Interval(a, b) if a.is_infinite() => Interval(flux - g[i] - b, f64::INFINITY),
            Interval(a, b) if b.is_infinite() => Interval(f64::NEG_INFINITY, flux - g[i] - a),
            _ => Interval::point(flux - g[i]),
        };
        let bi = b_set(i);
        let m = bi.meet(target);
        xi[i] = bi.clamp(m.clamp(flux - g[i]));
    }
    let residual = (h * res2).sqrt();
    Ok((residual, GridFunction::from_raw(grid, xi)))
}
