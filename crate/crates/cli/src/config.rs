//! Experiment configuration: TOML files, presets and `key=value` overrides.

use std::path::Path;

use bvsol_core::dissipation::{DissipationPair, Gauge, ViscousPotential};
use bvsol_core::energy::{EnergyModel, GradTerm, Loading, Well};
use bvsol_core::numerics::{Grid1D, GridFunction};
use bvsol_core::presets::Preset;
use bvsol_core::solver::{InitStrategy, SchemeParams};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of the preset the file was layered on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub dissipation: DissipationConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub length: f64,
    pub cells: usize,
    pub grad_term: GradTerm,
    pub well: Well,
    pub loading: Loading,
    pub initial: InitialData,
}

/// Initial datum on the cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// `left` on cells with centre below `at`, `right` elsewhere.
    Step {
        at: f64,
        left: f64,
        right: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

impl InitialData {
    pub fn build(&self, grid: Grid1D) -> Result<GridFunction, CliError> {
        Ok(match self {
            InitialData::Constant { value } => GridFunction::constant(grid, *value),
            InitialData::Step { at, left, right } => {
                GridFunction::from_fn(grid, |x| if x < *at { *left } else { *right })
            }
            InitialData::Values { values } => GridFunction::new(grid, values.clone())
                .map_err(|e| CliError::Config(format!("model.initial.values: {e}")))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    /// Weights of the positive parts; a single value applies to every cell.
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub viscous: ViscousPotential,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        Self {
            plus: vec![1.0],
            minus: vec![1.0],
            viscous: ViscousPotential::Quadratic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub eps: f64,
    pub tau: f64,
    pub horizon: f64,
    #[serde(default = "default_tol")]
    pub tol_inner: f64,
    #[serde(default = "default_max_iter")]
    pub max_inner_iter: usize,
    #[serde(default)]
    pub init: InitStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    20_000
}

/// Viscosities of a sweep with the step law `tau = tau_c eps^tau_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub tau_c: f64,
    pub tau_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// Discrete energy inequality.
    Inequality,
    /// Variational energy balance within its budget.
    Balance,
    /// Energy-dissipation arclength normalisation and work identity.
    Reparam,
    /// Front position series (needs `front_level`).
    Front,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Node stride of `states.csv`.
    pub stride: usize,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_level: Option<f64>,
    /// Absolute tolerance of the per-step quadrature in the balance check.
    pub balance_tol: f64,
    /// Number of uniform sample times used by sweeps.
    pub samples: usize,
    /// Keep `trajectory.json` for `diagnose` and `export`.
    pub store_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            diagnostics: vec![Diagnostic::Inequality, Diagnostic::Balance, Diagnostic::Reparam],
            front_level: None,
            balance_tol: 1e-10,
            samples: 61,
            store_trajectory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub t: f64,
    /// Endpoint values; a single value applies to every cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Vec<f64>>,
    /// A stored `trajectory.json` to take endpoints from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_step: Option<usize>,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_regime_tol")]
    pub regime_tol: f64,
    /// Cross-check with the unit-viscosity flow.
    #[serde(default = "default_true")]
    pub flow: bool,
}

fn default_segments() -> usize {
    200
}

fn default_restarts() -> usize {
    3
}

fn default_seed() -> u64 {
    7
}

fn default_regime_tol() -> f64 {
    1e-6
}

fn default_true() -> bool {
    true
}

fn initial_of(p: Preset) -> InitialData {
    match p {
        Preset::MovingInterface => InitialData::Step {
            at: 1.0,
            left: 1.0,
            right: 0.0,
        },
        Preset::DoubleWellWave => InitialData::Constant { value: -4.0 },
        Preset::TvDoubleWell => InitialData::Step {
            at: 1.0,
            left: 6.0,
            right: -2.0,
        },
        Preset::DirichletWell => InitialData::Constant { value: 0.0 },
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Result<Self, CliError> {
        let s = p.setup().map_err(|e| CliError::Config(e.to_string()))?;
        let (length, cells) = p.default_grid();
        let mut run = RunConfig::default();
        if p == Preset::MovingInterface {
            run.front_level = Some(0.5);
            run.diagnostics.push(Diagnostic::Front);
        }
        Ok(Self {
            preset: Some(p.name().to_string()),
            model: ModelConfig {
                length,
                cells,
                grad_term: s.model.grad_term(),
                well: s.model.well(),
                loading: s.model.loading().clone(),
                initial: initial_of(p),
            },
            dissipation: DissipationConfig::default(),
            scheme: SchemeConfig {
                eps: s.eps,
                tau: s.tau,
                horizon: s.horizon,
                tol_inner: default_tol(),
                max_inner_iter: default_max_iter(),
                init: InitStrategy::default(),
                q_ratio: None,
                sweep: None,
            },
            run,
            transition: None,
        })
    }

    /// Layers the file (if any) over the preset (if any), then applies the
    /// overrides in order. `preset` takes precedence over a `preset` key in
    /// the file.
    pub fn load(path: Option<&Path>, preset: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => Some(read_table(p)?),
            None => None,
        };
        let name = preset.map(str::to_string).or_else(|| {
            file.as_ref()
                .and_then(|t| t.get("preset"))
                .and_then(Value::as_str)
                .map(str::to_string)
        });
        let mut table = match &name {
            Some(n) => {
                let p = Preset::from_name(n).map_err(|e| CliError::Config(e.to_string()))?;
                to_table(&Self::preset(p)?)?
            }
            None => Table::new(),
        };
        if let Some(f) = file {
            merge(&mut table, f);
        }
        if let Some(n) = name {
            table.insert("preset".into(), Value::String(n));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        let m = &self.model;
        if !(m.length > 0.0 && m.length.is_finite()) {
            return bad("model.length", format!("must be positive, got {}", m.length));
        }
        if m.cells == 0 {
            return bad("model.cells", "must be at least 1".into());
        }
        let s = &self.scheme;
        for (name, v) in [
            ("scheme.eps", s.eps),
            ("scheme.tau", s.tau),
            ("scheme.horizon", s.horizon),
            ("scheme.tol_inner", s.tol_inner),
            ("run.balance_tol", self.run.balance_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        if let Some(sw) = &s.sweep {
            if sw.eps.is_empty() {
                return bad("scheme.sweep.eps", "needs at least one viscosity".into());
            }
            if !(sw.tau_c > 0.0) {
                return bad("scheme.sweep.tau_c", format!("must be positive, got {}", sw.tau_c));
            }
            if !(sw.tau_a > 1.0) {
                return bad(
                    "scheme.sweep.tau_a",
                    format!("must exceed 1 so that tau/eps -> 0, got {}", sw.tau_a),
                );
            }
            if let Some(e) = sw.eps.iter().find(|e| !(**e > 0.0)) {
                return bad("scheme.sweep.eps", format!("viscosities must be positive, got {e}"));
            }
        }
        if self.run.stride == 0 {
            return bad("run.stride", "must be at least 1".into());
        }
        if self.run.samples < 2 {
            return bad("run.samples", "must be at least 2".into());
        }
        if self.run.diagnostics.contains(&Diagnostic::Front) && self.run.front_level.is_none() {
            return bad("run.front_level", "required by the front diagnostic".into());
        }
        if let Some(t) = &self.transition {
            if t.segments < 2 {
                return bad("transition.segments", "must be at least 2".into());
            }
        }
        // building the core objects catches the remaining inconsistencies
        self.build()?;
        self.scheme_params()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D, CliError> {
        Grid1D::new(self.model.length, self.model.cells).map_err(|e| CliError::Config(format!("model: {e}")))
    }

    pub fn build(&self) -> Result<Built, CliError> {
        let grid = self.grid()?;
        let m = &self.model;
        let model = EnergyModel::new(grid, m.grad_term, m.well, m.loading.clone())
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let gauge = Gauge::asymmetric(self.dissipation.plus.clone(), self.dissipation.minus.clone())
            .and_then(|g| g.check_len(grid.n_cells()).map(|_| g))
            .map_err(|e| CliError::Config(format!("dissipation: {e}")))?;
        let diss = DissipationPair::new(gauge, self.dissipation.viscous)
            .map_err(|e| CliError::Config(format!("dissipation.viscous: {e}")))?;
        let u0 = m.initial.build(grid)?;
        if !model.is_admissible(&u0) {
            return Err(CliError::Config(
                "model.initial: state is not admissible for the well".into(),
            ));
        }
        Ok(Built { model, diss, u0 })
    }

    pub fn scheme_params(&self) -> Result<SchemeParams, CliError> {
        let s = &self.scheme;
        let p = SchemeParams {
            eps: s.eps,
            tau: s.tau,
            horizon: s.horizon,
            tol_inner: s.tol_inner,
            max_inner_iter: s.max_inner_iter,
            init: s.init,
            q_ratio: s.q_ratio,
        };
        p.validate().map_err(|e| CliError::Config(format!("scheme: {e}")))?;
        Ok(p)
    }

    /// `(eps_k, tau_c eps_k^tau_a)`, or the single scheme cell.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        match &self.scheme.sweep {
            Some(sw) => sw.eps.iter().map(|&e| (e, sw.tau_c * e.powf(sw.tau_a))).collect(),
            None => vec![(self.scheme.eps, self.scheme.tau)],
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub struct Built {
    pub model: EnergyModel,
    pub diss: DissipationPair,
    pub u0: GridFunction,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|x| x == "json") {
        // a run manifest: reuse its configuration echo
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = v
            .get("config")
            .ok_or_else(|| CliError::Config(format!("{}: no config in manifest", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_value(cfg.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return to_table(&cfg);
    }
    text.parse::<Table>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_table(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    Table::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))
}

/// Recursive merge; tagged enums (tables with `kind` or `form`) are replaced
/// whole when the tag changes.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if !tag_changed(b, &o) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn tag_changed(a: &Table, b: &Table) -> bool {
    ["kind", "form"]
        .iter()
        .any(|t| b.get(*t).is_some() && a.get(*t) != b.get(*t))
}

/// `section.key=value` with `value` parsed as a TOML value (bare words are
/// taken as strings).
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let path = path.trim();
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key '{path}' is malformed")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override '{path}': '{k}' is not a section"))),
        };
    }
    let last = keys[keys.len() - 1];
    match (cur.get_mut(last), value) {
        (Some(Value::Table(b)), Value::Table(o)) if !tag_changed(b, &o) => merge(b, o),
        (_, v) => {
            cur.insert(last.to_string(), v);
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
