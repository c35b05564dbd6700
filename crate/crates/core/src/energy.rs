//! Discretised energies `E_t(u) = int beta(|u'|) + W(u) - l(t) u dx` on a
//! uniform grid, with power, smooth gradient, slack and the generalised
//! convexity probes.
//!
//! Subgradients are in the `L^2` (density) representation: the pairing with a
//! state is the `h`-weighted sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissipation::Gauge;
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Grid1D, GridFunction};

/// Gradient contribution `beta(|u'|)`, discretised on interior faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradTerm {
    None,
    /// `1/2 |u'|^2`.
    Dirichlet,
    /// `delta |u'|`.
    Tv {
        delta: f64,
    },
}

/// Pointwise potential `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Well {
    None,
    /// `lambda/2 (u - center)^2`, exactly `lambda`-convex.
    Quadratic {
        lambda: f64,
        center: f64,
    },
    /// The C^1 piecewise quadratic double well with minima at `-4` and `4`,
    /// `W(0) = 4` and curvature `-1` on `|u| < 2`.
    DoubleWell,
    /// Indicator of `[0, 1]`.
    Indicator01,
}

impl Well {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Well::None => 0.0,
            Well::Quadratic { lambda, center } => 0.5 * lambda * (u - center).powi(2),
            Well::DoubleWell => {
                if u <= -2.0 {
                    0.5 * (u + 4.0).powi(2)
                } else if u < 2.0 {
                    4.0 - 0.5 * u * u
                } else {
                    0.5 * (u - 4.0).powi(2)
                }
            }
            Well::Indicator01 => {
                if (0.0..=1.0).contains(&u) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `W'(u)`; zero in the interior of the indicator's domain.
    pub fn deriv(&self, u: f64) -> f64 {
        match *self {
            Well::None | Well::Indicator01 => 0.0,
            Well::Quadratic { lambda, center } => lambda * (u - center),
            Well::DoubleWell => {
                if u <= -2.0 {
                    u + 4.0
                } else if u < 2.0 {
                    -u
                } else {
                    u - 4.0
                }
            }
        }
    }

    /// Lower bound on `W''`.
    pub fn convexity(&self) -> f64 {
        match *self {
            Well::None | Well::Indicator01 => 0.0,
            Well::Quadratic { lambda, .. } => lambda,
            Well::DoubleWell => -1.0,
        }
    }

    /// Upper bound on `|W''|` (Lipschitz constant of `W'`).
    pub fn curvature_bound(&self) -> f64 {
        match *self {
            Well::None | Well::Indicator01 => 0.0,
            Well::Quadratic { lambda, .. } => lambda.abs(),
            Well::DoubleWell => 1.0,
        }
    }

    pub fn is_c1(&self) -> bool {
        !matches!(self, Well::Indicator01)
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Well::Indicator01 => (0.0, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

/// External loading `l(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loading {
    /// `a t + b x + c`.
    Affine { a: f64, b: f64, c: f64 },
    /// Cell values sampled at increasing `times`, interpolated by C^1 cubic
    /// Hermite splines in time.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl Loading {
    pub fn constant(c: f64) -> Self {
        Loading::Affine { a: 0.0, b: 0.0, c }
    }

    fn validate(&self, grid: &Grid1D) -> Result<()> {
        match self {
            Loading::Affine { a, b, c } => {
                if [a, b, c].iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("loading coefficients must be finite".into()))
                }
            }
            Loading::Table { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::InvalidParameter(
                        "loading table needs at least two times and one row per time".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidParameter(
                        "loading table times must be strictly increasing".into(),
                    ));
                }
                if values.iter().any(|row| row.len() != grid.n_cells()) {
                    return Err(Error::InvalidParameter(format!(
                        "loading table rows must have {} values",
                        grid.n_cells()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Returns `(l(t, .), d_t l(t, .))` on the cells of `grid`.
    pub fn sample(&self, grid: &Grid1D, t: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            Loading::Affine { a, b, c } => {
                let vals = grid.centers().iter().map(|x| a * t + b * x + c).collect();
                (vals, vec![*a; grid.n_cells()])
            }
            Loading::Table { times, values } => hermite_sample(times, values, t),
        }
    }
}

fn hermite_sample(times: &[f64], values: &[Vec<f64>], t: f64) -> (Vec<f64>, Vec<f64>) {
    let m = times.len();
    let t = t.clamp(times[0], times[m - 1]);
    let k = match times.iter().position(|&s| s > t) {
        Some(0) => 0,
        Some(k) => k - 1,
        None => m - 2,
    };
    let slope = |j: usize, i: usize| -> f64 {
        let (a, b) = if j == 0 {
            (0, 1)
        } else if j == m - 1 {
            (m - 2, m - 1)
        } else {
            (j - 1, j + 1)
        };
        (values[b][i] - values[a][i]) / (times[b] - times[a])
    };
    let dt = times[k + 1] - times[k];
    let s = (t - times[k]) / dt;
    let (h00, h10, h01, h11) = (
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        s.powi(3) - 2.0 * s * s + s,
        -2.0 * s.powi(3) + 3.0 * s * s,
        s.powi(3) - s * s,
    );
    let (d00, d10, d01, d11) = (
        6.0 * s * s - 6.0 * s,
        3.0 * s * s - 4.0 * s + 1.0,
        -6.0 * s * s + 6.0 * s,
        3.0 * s * s - 2.0 * s,
    );
    let n = values[0].len();
    let mut val = Vec::with_capacity(n);
    let mut der = Vec::with_capacity(n);
    for i in 0..n {
        let (p0, p1) = (values[k][i], values[k + 1][i]);
        let (m0, m1) = (slope(k, i) * dt, slope(k + 1, i) * dt);
        val.push(h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1);
        der.push((d00 * p0 + d10 * m0 + d01 * p1 + d11 * m1) / dt);
    }
    (val, der)
}

/// An element `xi` of the Frechet subdifferential `dE_t(u)` together with
/// the worst Frechet-inequality gap found on probe states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientWitness {
    pub xi: GridFunction,
    pub residual_gap: f64,
}

/// Value of the slack `e_t(u) = dist(-dE_t(u), K*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub value: f64,
    /// Set when the value comes from a single witness and therefore only
    /// bounds the slack from above.
    pub upper_bound_only: bool,
}

/// A discretised energy functional on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    grid: Grid1D,
    grad: GradTerm,
    well: Well,
    loading: Loading,
}

impl EnergyModel {
    pub fn new(grid: Grid1D, grad: GradTerm, well: Well, loading: Loading) -> Result<Self> {
        if let GradTerm::Tv { delta } = grad {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "total variation weight must be nonnegative, got {delta}"
                )));
            }
        }
        if let Well::Quadratic { lambda, center } = well {
            if !(lambda.is_finite() && center.is_finite()) {
                return Err(Error::InvalidParameter("quadratic well must be finite".into()));
            }
        }
        loading.validate(&grid)?;
        Ok(Self {
            grid,
            grad,
            well,
            loading,
        })
    }

    /// The model with `E == 0`.
    pub fn zero(grid: Grid1D) -> Self {
        Self {
            grid,
            grad: GradTerm::None,
            well: Well::None,
            loading: Loading::constant(0.0),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn grad_term(&self) -> GradTerm {
        self.grad
    }

    pub fn well(&self) -> Well {
        self.well
    }

    pub fn loading(&self) -> &Loading {
        &self.loading
    }

    /// No gradient term: cells evolve independently.
    pub fn is_decoupled(&self) -> bool {
        match self.grad {
            GradTerm::None => true,
            GradTerm::Tv { delta } => delta == 0.0,
            GradTerm::Dirichlet => self.grid.n_cells() == 1,
        }
    }

    /// Energy is C^1 on the whole space, so `dE_t(u)` is a singleton.
    pub fn is_smooth(&self) -> bool {
        self.well.is_c1() && !self.has_tv()
    }

    pub(crate) fn has_tv(&self) -> bool {
        matches!(self.grad, GradTerm::Tv { delta } if delta > 0.0) && self.grid.n_cells() > 1
    }

    pub(crate) fn tv_delta(&self) -> f64 {
        match self.grad {
            GradTerm::Tv { delta } if self.grid.n_cells() > 1 => delta,
            _ => 0.0,
        }
    }

    /// Lower bound on the curvature of the smooth part (`lambda`-convexity).
    pub fn convexity(&self) -> f64 {
        self.well.convexity()
    }

    pub(crate) fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn is_admissible(&self, u: &GridFunction) -> bool {
        u.grid() == &self.grid && u.is_finite() && u.values().iter().all(|&v| self.well.value(v).is_finite())
    }

    pub fn load(&self, t: f64) -> GridFunction {
        GridFunction::from_raw(self.grid, self.loading.sample(&self.grid, t).0)
    }

    pub fn load_rate(&self, t: f64) -> GridFunction {
        GridFunction::from_raw(self.grid, self.loading.sample(&self.grid, t).1)
    }

    /// Face part of the energy: Dirichlet or total variation.
    pub fn gradient_energy(&self, u: &GridFunction) -> f64 {
        let v = u.values();
        let h = self.grid.spacing();
        match self.grad {
            GradTerm::None => 0.0,
            GradTerm::Dirichlet => v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2.0 * h),
            GradTerm::Tv { delta } => delta * v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>(),
        }
    }

    /// `E_t(u)`; `+inf` outside the domain of the well.
    pub fn energy(&self, t: f64, u: &GridFunction) -> Result<f64> {
        self.check_grid(u)?;
        let (ell, _) = self.loading.sample(&self.grid, t);
        let h = self.grid.spacing();
        let mut bulk = 0.0;
        for (&ui, li) in u.values().iter().zip(ell) {
            let w = self.well.value(ui);
            if !w.is_finite() {
                return Ok(f64::INFINITY);
            }
            bulk += w - li * ui;
        }
        Ok(h * bulk + self.gradient_energy(u))
    }

    /// `P_t(u) = -int d_t l(t) u dx`.
    pub fn power(&self, t: f64, u: &GridFunction) -> Result<f64> {
        self.check_grid(u)?;
        let (_, rate) = self.loading.sample(&self.grid, t);
        let h = self.grid.spacing();
        Ok(-h * u.values().iter().zip(rate).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `L^2` gradient of the Dirichlet term (zero for the other face terms).
    pub(crate) fn dirichlet_gradient(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        if !matches!(self.grad, GradTerm::Dirichlet) || n < 2 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let h2 = self.grid.spacing().powi(2);
        for i in 0..n {
            let mut s = 0.0;
            if i > 0 {
                s += u[i] - u[i - 1];
            }
            if i + 1 < n {
                s += u[i] - u[i + 1];
            }
            out[i] = s / h2;
        }
    }

    /// Gradient of Dirichlet + `W` (C^1 part) - loading, ignoring total
    /// variation and constraints.
    pub(crate) fn smooth_part_gradient(&self, ell: &[f64], u: &[f64], out: &mut [f64]) {
        self.dirichlet_gradient(u, out);
        for i in 0..u.len() {
            out[i] += self.well.deriv(u[i]) - ell[i];
        }
    }

    /// `L^2` gradient `-u'' + W'(u) - l(t)` with natural boundary conditions.
    pub fn smooth_gradient(&self, t: f64, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        if !self.is_smooth() {
            return Err(Error::UnsupportedModel(
                "smooth gradient needs a C^1 well and no total variation term".into(),
            ));
        }
        let ell = self.loading.sample(&self.grid, t).0;
        let mut g = vec![0.0; u.len()];
        self.smooth_part_gradient(&ell, u.values(), &mut g);
        Ok(GridFunction::from_raw(self.grid, g))
    }

    /// Checks the Frechet inequality
    /// `E(v) - E(u) - <xi, v - u> >= -lambda^-/2 |v - u|^2` on probe states
    /// drawn around `u` and stores the worst gap.
    pub fn validate_witness(&self, t: f64, u: &GridFunction, xi: GridFunction) -> Result<SubgradientWitness> {
        self.check_grid(u)?;
        self.check_grid(&xi)?;
        let e0 = self.energy(t, u)?;
        if !e0.is_finite() {
            return Err(Error::InvalidState("witness base state is not admissible".into()));
        }
        let lam_minus = (-self.well.convexity()).max(0.0);
        let (lo, hi) = self.well.bounds();
        let n = u.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut gap = f64::INFINITY;
        let probe = |v: GridFunction, gap: &mut f64| -> Result<()> {
            let d = &v - u;
            let ev = self.energy(t, &v)?;
            if ev.is_finite() {
                let r = ev - e0 - xi.dot(&d) + 0.5 * lam_minus * l2_norm(&d).powi(2);
                *gap = gap.min(r);
            }
            Ok(())
        };
        for &scale in &[1e-3, 1e-1, 1.0] {
            for _ in 0..16 {
                let vals: Vec<f64> = u
                    .values()
                    .iter()
                    .map(|&x| (x + scale * rng.gen_range(-1.0..1.0)).clamp(lo, hi))
                    .collect();
                probe(GridFunction::from_raw(self.grid, vals), &mut gap)?;
            }
            for i in 0..n {
                for sign in [-1.0, 1.0] {
                    let mut vals = u.values().to_vec();
                    vals[i] = (vals[i] + sign * scale).clamp(lo, hi);
                    probe(GridFunction::from_raw(self.grid, vals), &mut gap)?;
                }
            }
        }
        Ok(SubgradientWitness {
            xi,
            residual_gap: if gap.is_finite() { gap } else { 0.0 },
        })
    }

    /// `e_t(u)`. Smooth models use the exact singleton subdifferential; for
    /// nonsmooth ones the supplied witness `xi in dE_t(u)` gives an upper
    /// bound.
    pub fn slack(
        &self,
        t: f64,
        u: &GridFunction,
        gauge: &Gauge,
        witness: Option<&SubgradientWitness>,
    ) -> Result<Slack> {
        self.check_grid(u)?;
        if self.is_smooth() {
            let g = self.smooth_gradient(t, u)?;
            return Ok(Slack {
                value: gauge.dual_dist(&-&g),
                upper_bound_only: false,
            });
        }
        let w =
            witness.ok_or_else(|| Error::WitnessRequired("slack of a nonsmooth energy needs a subgradient".into()))?;
        self.check_grid(&w.xi)?;
        Ok(Slack {
            value: gauge.dual_dist(&-&w.xi),
            upper_bound_only: true,
        })
    }

    /// Residual of `E(v) - E(u) >= <xi, v-u> + alpha |v-u|^2 - Lambda Psi_^(v-u) |v-u|`.
    #[allow(clippy::too_many_arguments)]
    pub fn check_garding(
        &self,
        t: f64,
        u: &GridFunction,
        v: &GridFunction,
        xi: &GridFunction,
        alpha: f64,
        big_lambda: f64,
        gauge: &Gauge,
    ) -> Result<f64> {
        let d = v - u;
        let n = l2_norm(&d);
        Ok(self.energy(t, v)? - self.energy(t, u)? - xi.dot(&d) - alpha * n * n + big_lambda * gauge.psi_wedge(&d) * n)
    }

    /// Residual of the two-norm convexity inequality along the segment from
    /// `u` to `v` at `theta`.
    #[allow(clippy::too_many_arguments)]
    pub fn check_lambda_convexity(
        &self,
        t: f64,
        u: &GridFunction,
        v: &GridFunction,
        theta: f64,
        alpha: f64,
        big_lambda: f64,
        gauge: &Gauge,
    ) -> Result<f64> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!("theta must lie in [0,1], got {theta}")));
        }
        let eu = self.energy(t, u)?;
        let ev = self.energy(t, v)?;
        let d = u - v;
        let n = l2_norm(&d);
        let mid = self.energy(t, &u.lerp(v, theta))?;
        let rhs = (1.0 - theta) * eu + theta * ev
            - theta * (1.0 - theta) * (alpha * n * n - big_lambda * gauge.psi_wedge(&d) * n);
        Ok(rhs - mid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tv_well(l: f64, n: usize) -> EnergyModel {
        EnergyModel::new(
            Grid1D::new(l, n).unwrap(),
            GradTerm::Tv { delta: 1.0 },
            Well::DoubleWell,
            Loading::constant(2.0),
        )
        .unwrap()
    }

    fn dirichlet(n: usize, lambda: f64) -> EnergyModel {
        EnergyModel::new(
            Grid1D::new(1.0, n).unwrap(),
            GradTerm::Dirichlet,
            Well::Quadratic { lambda, center: 0.3 },
            Loading::Affine {
                a: 3.0,
                b: 1.0,
                c: -0.5,
            },
        )
        .unwrap()
    }

    fn plateau(m: &EnergyModel, a: f64, hi: f64, lo: f64) -> GridFunction {
        GridFunction::from_fn(*m.grid(), |x| if x < a { hi } else { lo })
    }

    #[test]
    fn double_well_shape() {
        let w = Well::DoubleWell;
        assert_eq!(w.value(0.0), 4.0);
        assert_eq!(w.value(4.0), 0.0);
        assert_eq!(w.value(-4.0), 0.0);
        for u in [-2.0, 2.0] {
            let e = 1e-7;
            assert!((w.value(u + e) - w.value(u - e)).abs() < 1e-6);
            assert!((w.deriv(u + e) - w.deriv(u - e)).abs() < 1e-6);
        }
        assert_eq!(w.deriv(4.0), 0.0);
    }

    #[test]
    fn constant_state_in_double_well() {
        let m = EnergyModel::new(
            Grid1D::new(1.0, 10).unwrap(),
            GradTerm::None,
            Well::DoubleWell,
            Loading::constant(0.0),
        )
        .unwrap();
        let u = GridFunction::zeros(*m.grid());
        assert!((m.energy(0.0, &u).unwrap() - 4.0).abs() < 1e-12);
        let g = m.smooth_gradient(0.0, &GridFunction::constant(*m.grid(), 4.0)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn tv_double_well_plateau_energy_is_affine_in_t() {
        // direct evaluation: 8 (jump) + 2 l (well) - 2 (6 a - 2 (l - a)) with a = 1 + t
        let m = tv_well(4.0, 64);
        for t in [0.0, 0.5, 1.0] {
            let a = 1.0 + t;
            let e = m.energy(t, &plateau(&m, a, 6.0, -2.0)).unwrap();
            let oracle = 8.0 + 2.0 * 4.0 - 2.0 * (6.0 * a - 2.0 * (4.0 - a));
            assert!((e - oracle).abs() < 1e-10, "t={t}: {e} vs {oracle}");
        }
    }

    #[test]
    fn indicator_energy_and_power() {
        let g = Grid1D::new(4.0, 256).unwrap();
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
        let t = 0.5;
        let a = 1.5;
        let u = plateau(&m, a, 1.0, 0.0);
        let oracle = 1.0 - (t + 2.0) * a + a * a / 2.0;
        assert!((m.energy(t, &u).unwrap() - oracle).abs() < g.spacing());
        assert!((m.power(t, &u).unwrap() + a).abs() < g.spacing());
        let bad = GridFunction::constant(g, 1.5);
        assert_eq!(m.energy(t, &bad).unwrap(), f64::INFINITY);
        assert!(!m.is_admissible(&bad));
        assert!(matches!(m.smooth_gradient(t, &u), Err(Error::UnsupportedModel(_))));
        let gauge = Gauge::default();
        assert!(matches!(m.slack(t, &u, &gauge, None), Err(Error::WitnessRequired(_))));
    }

    #[test]
    fn power_vanishes_for_static_loading_and_matches_central_difference() {
        let m = tv_well(4.0, 16);
        let u = plateau(&m, 2.0, 6.0, -2.0);
        assert_eq!(m.power(0.3, &u).unwrap(), 0.0);
        let d = dirichlet(12, 1.0);
        let u = GridFunction::from_fn(*d.grid(), |x| x.sin());
        let dt = 1e-4;
        let fd = (d.energy(0.4 + dt, &u).unwrap() - d.energy(0.4 - dt, &u).unwrap()) / (2.0 * dt);
        assert!((fd - d.power(0.4, &u).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn scalar_pointwise_gradient() {
        let m = EnergyModel::new(
            Grid1D::new(1.0, 4).unwrap(),
            GradTerm::None,
            Well::DoubleWell,
            Loading::Affine { a: 1.0, b: 0.0, c: 0.0 },
        )
        .unwrap();
        let u = GridFunction::constant(*m.grid(), -4.0);
        let g = m.smooth_gradient(2.5, &u).unwrap();
        assert!(g.values().iter().all(|&v| (v + 2.5).abs() < 1e-15));
        let s = EnergyModel::new(
            Grid1D::scalar(),
            GradTerm::None,
            Well::DoubleWell,
            Loading::constant(3.0),
        )
        .unwrap();
        let sl = s
            .slack(0.0, &GridFunction::scalar(-4.0), &Gauge::default(), None)
            .unwrap();
        assert_eq!(sl.value, 2.0);
        assert!(!sl.upper_bound_only);
    }

    #[test]
    fn tv_witness_certifies_local_stability() {
        let m = tv_well(4.0, 64);
        for t in [0.0, 0.5, 1.0, 2.0] {
            let a = 1.0 + t;
            let u = plateau(&m, a, 6.0, -2.0);
            let xi = GridFunction::from_fn(*m.grid(), |x| if x < a { 1.0 / a } else { -1.0 / (4.0 - a) });
            let w = m.validate_witness(t, &u, xi).unwrap();
            assert!(w.residual_gap >= -1e-10, "gap {}", w.residual_gap);
            let s = m.slack(t, &u, &Gauge::default(), Some(&w)).unwrap();
            assert_eq!(s.value, 0.0);
            assert!(s.upper_bound_only);
        }
        // a wrong witness is caught by the probes
        let u = plateau(&m, 1.0, 6.0, -2.0);
        let w = m
            .validate_witness(0.0, &u, GridFunction::constant(*m.grid(), 3.0))
            .unwrap();
        assert!(w.residual_gap < -1e-3);
    }

    #[test]
    fn garding_and_convexity_probes() {
        let m = dirichlet(16, 1.0);
        let g = Gauge::default();
        let u = GridFunction::from_fn(*m.grid(), |x| x * x);
        let xi = m.smooth_gradient(0.2, &u).unwrap();
        assert_eq!(m.check_garding(0.2, &u, &u, &xi, 1.0, 0.0, &g).unwrap(), 0.0);
        for th in [0.0, 1.0] {
            let v = GridFunction::from_fn(*m.grid(), |x| 1.0 - x);
            assert!(m.check_lambda_convexity(0.2, &u, &v, th, 1.0, 0.0, &g).unwrap().abs() < 1e-12);
        }
        assert!(m.check_lambda_convexity(0.2, &u, &u, 0.5, 1.0, 0.0, &g).unwrap().abs() < 1e-12);
        let s = EnergyModel::new(
            Grid1D::scalar(),
            GradTerm::None,
            Well::DoubleWell,
            Loading::constant(0.0),
        )
        .unwrap();
        let u0 = GridFunction::scalar(0.0);
        let xi0 = s.smooth_gradient(0.0, &u0).unwrap();
        let r = s
            .check_garding(0.0, &u0, &GridFunction::scalar(1.0), &xi0, 1.0, 0.0, &g)
            .unwrap();
        assert!(r < 0.0);
    }

    #[test]
    fn table_loading_is_c1_and_interpolates() {
        let g = Grid1D::new(1.0, 2).unwrap();
        let times = vec![0.0, 1.0, 2.0, 3.0];
        let values = times.iter().map(|t: &f64| vec![t * t, 2.0 * t]).collect();
        let l = Loading::Table { times, values };
        let (v, _) = l.sample(&g, 2.0);
        assert!((v[0] - 4.0).abs() < 1e-14 && (v[1] - 4.0).abs() < 1e-14);
        let e = 1e-7;
        let (_, dl) = l.sample(&g, 1.0 - e);
        let (_, dr) = l.sample(&g, 1.0 + e);
        assert!((dl[0] - dr[0]).abs() < 1e-5);
        let (_, d) = l.sample(&g, 1.5);
        assert!((d[1] - 2.0).abs() < 1e-12);
        assert!(EnergyModel::new(
            g,
            GradTerm::None,
            Well::None,
            Loading::Table {
                times: vec![0.0],
                values: vec![vec![0.0, 0.0]]
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            u in proptest::collection::vec(-3.0f64..3.0, 10),
            du in proptest::collection::vec(-1.0f64..1.0, 10),
            t in 0.0f64..1.0,
        ) {
            for m in [dirichlet(10, 2.0), EnergyModel::new(Grid1D::new(1.0, 10).unwrap(), GradTerm::Dirichlet, Well::DoubleWell, Loading::Affine { a: 1.0, b: 1.0, c: 0.0 }).unwrap()] {
                let u = GridFunction::new(*m.grid(), u.clone()).unwrap();
                let du = GridFunction::new(*m.grid(), du.clone()).unwrap();
                let g = m.smooth_gradient(t, &u).unwrap();
                let s = 1e-6;
                let fd = (m.energy(t, &(&u + &du.scale(s))).unwrap() - m.energy(t, &(&u - &du.scale(s))).unwrap()) / (2.0 * s);
                let an = g.dot(&du);
                prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {} an {}", fd, an);
            }
        }

        #[test]
        fn convex_dirichlet_model_satisfies_garding(
            u in proptest::collection::vec(-3.0f64..3.0, 8),
            v in proptest::collection::vec(-3.0f64..3.0, 8),
            th in 0.0f64..1.0,
        ) {
            let m = dirichlet(8, 1.0);
            let g = Gauge::default();
            let u = GridFunction::new(*m.grid(), u).unwrap();
            let v = GridFunction::new(*m.grid(), v).unwrap();
            let xi = m.smooth_gradient(0.1, &u).unwrap();
            prop_assert!(m.check_garding(0.1, &u, &v, &xi, 0.5, 0.0, &g).unwrap() >= -1e-9);
            prop_assert!(m.check_lambda_convexity(0.1, &u, &v, th, 0.5, 0.0, &g).unwrap() >= -1e-9);
        }
    }
}
