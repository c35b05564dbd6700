//! Ready-made models with known limit curves.

use serde::{Deserialize, Serialize};

use crate::dissipation::DissipationPair;
use crate::energy::{EnergyModel, GradTerm, Loading, Well};
use crate::error::{Error, Result};
use crate::numerics::{Grid1D, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Total variation with the `[0,1]` constraint and loading `t + 2 - x`;
    /// the interface of `chi_[0,a(t)]` moves as `a(t) = 1 + t`.
    MovingInterface,
    /// Decoupled double well under the travelling loading `t + x`.
    DoubleWellWave,
    /// Total variation plus double well under the constant loading `2`.
    TvDoubleWell,
    /// Dirichlet term plus a convex quadratic well.
    DirichletWell,
}

/// Model, dissipation, initial datum and default scheme parameters.
#[derive(Debug, Clone)]
pub struct PresetSetup {
    pub model: EnergyModel,
    pub diss: DissipationPair,
    pub u0: GridFunction,
    pub horizon: f64,
    pub eps: f64,
    pub tau: f64,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::MovingInterface,
        Preset::DoubleWellWave,
        Preset::TvDoubleWell,
        Preset::DirichletWell,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::MovingInterface => "moving_interface",
            Preset::DoubleWellWave => "double_well_wave",
            Preset::TvDoubleWell => "tv_double_well",
            Preset::DirichletWell => "dirichlet_well",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset '{name}'")))
    }

    /// Default grid length and cell count.
    pub fn default_grid(&self) -> (f64, usize) {
        match self {
            Preset::MovingInterface => (4.0, 256),
            Preset::DoubleWellWave => (1.0, 64),
            Preset::TvDoubleWell => (4.0, 64),
            Preset::DirichletWell => (1.0, 32),
        }
    }

    pub fn setup(&self) -> Result<PresetSetup> {
        let (l, n) = self.default_grid();
        self.setup_on(Grid1D::new(l, n)?)
    }

    pub fn setup_on(&self, grid: Grid1D) -> Result<PresetSetup> {
        let diss = DissipationPair::default();
        let (model, u0, horizon, eps, tau) = match self {
            Preset::MovingInterface => (
                moving_interface_model(grid, 1.0)?,
                moving_interface_limit(grid, 0.0),
                1.0,
                1e-2,
                1e-4,
            ),
            Preset::DoubleWellWave => (
                double_well_wave_model(grid)?,
                GridFunction::constant(grid, -4.0),
                6.0,
                0.05,
                0.05 * 0.05 / 4.0,
            ),
            Preset::TvDoubleWell => (
                tv_double_well_model(grid, 1.0)?,
                tv_double_well_limit(grid, 0.0),
                1.0,
                0.05,
                2.5e-3,
            ),
            Preset::DirichletWell => (
                dirichlet_well_model(grid, 1.0)?,
                GridFunction::zeros(grid),
                1.0,
                0.1,
                0.01,
            ),
        };
        Ok(PresetSetup {
            model,
            diss,
            u0,
            horizon,
            eps,
            tau,
        })
    }
}

pub fn moving_interface_model(grid: Grid1D, delta: f64) -> Result<EnergyModel> {
    EnergyModel::new(
        grid,
        GradTerm::Tv { delta },
        Well::Indicator01,
        Loading::Affine {
            a: 1.0,
            b: -1.0,
            c: 2.0,
        },
    )
}

/// `chi_[0, 1+t]` on the cells (cell centres left of the interface).
pub fn moving_interface_limit(grid: Grid1D, t: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| if x < 1.0 + t { 1.0 } else { 0.0 })
}

pub fn double_well_wave_model(grid: Grid1D) -> Result<EnergyModel> {
    EnergyModel::new(
        grid,
        GradTerm::None,
        Well::DoubleWell,
        Loading::Affine { a: 1.0, b: 1.0, c: 0.0 },
    )
}

/// Limit of the viscous solutions: `max(-4, t+x-5)` for `t+x <= 3` and
/// `t+x+3` beyond.
pub fn double_well_wave_limit(grid: Grid1D, t: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| {
        let s = t + x;
        if s <= 3.0 {
            (s - 5.0).max(-4.0)
        } else {
            s + 3.0
        }
    })
}

pub fn tv_double_well_model(grid: Grid1D, delta: f64) -> Result<EnergyModel> {
    EnergyModel::new(grid, GradTerm::Tv { delta }, Well::DoubleWell, Loading::constant(2.0))
}

/// `6` on `[0, 1+t]` and `-2` on the rest.
pub fn tv_double_well_limit(grid: Grid1D, t: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| if x < 1.0 + t { 6.0 } else { -2.0 })
}

/// `xi_t = 1/a` on the plateau and `-1/(l-a)` elsewhere, `a` the plateau
/// length of the grid state.
pub fn tv_double_well_witness(grid: Grid1D, t: f64) -> GridFunction {
    let u = tv_double_well_limit(grid, t);
    let h = grid.spacing();
    let a = h * u.values().iter().filter(|&&v| v > 0.0).count() as f64;
    let l = grid.length();
    u.map(|v| if v > 0.0 { 1.0 / a } else { -1.0 / (l - a) })
}

pub fn dirichlet_well_model(grid: Grid1D, lambda: f64) -> Result<EnergyModel> {
    EnergyModel::new(
        grid,
        GradTerm::Dirichlet,
        Well::Quadratic { lambda, center: 0.0 },
        Loading::Affine {
            a: 3.0,
            b: 1.0,
            c: -0.5,
        },
    )
}

/// First downward crossing of `level` by the piecewise linear interpolant
/// through the cell centres. `None` if the state never drops below `level`;
/// `Some(0)` if it starts below.
pub fn front_position(u: &GridFunction, level: f64) -> Option<f64> {
    let g = u.grid();
    let v = u.values();
    if v[0] < level {
        return Some(0.0);
    }
    for i in 1..v.len() {
        if v[i] < level {
            let (a, b) = (v[i - 1], v[i]);
            let th = (a - level) / (a - b);
            return Some(g.center(i - 1) + th * g.spacing());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l1_norm;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()).unwrap(), p);
            assert!(p.setup().is_ok());
        }
        assert!(Preset::from_name("nope").is_err());
    }

    #[test]
    fn front_of_aligned_indicator() {
        let g = Grid1D::new(4.0, 256).unwrap();
        for t in [0.0, 0.25, 0.5, 1.0] {
            let a = front_position(&moving_interface_limit(g, t), 0.5).unwrap();
            assert!((a - (1.0 + t)).abs() < 1e-12);
        }
    }

    #[test]
    fn double_well_limit_values() {
        let g = Grid1D::new(1.0, 4).unwrap();
        // centres 0.125, 0.375, ...
        let u = double_well_wave_limit(g, 2.5);
        assert_eq!(u.values(), &[-2.375, -2.125, 6.125, 6.375]);
        assert!(double_well_wave_limit(g, 0.0).values().iter().all(|&v| v == -4.0));
    }

    #[test]
    fn tv_plateau_has_unit_l1_speed() {
        let g = Grid1D::new(4.0, 64).unwrap();
        let a = tv_double_well_limit(g, 0.0);
        let b = tv_double_well_limit(g, 0.5);
        assert!((l1_norm(&(&b - &a)) - 4.0).abs() < 1e-12);
        let xi = tv_double_well_witness(g, 0.5);
        assert!((xi.values()[0] - 1.0 / 1.5).abs() < 1e-12);
        assert!((xi.values()[63] + 1.0 / 2.5).abs() < 1e-12);
    }
}
