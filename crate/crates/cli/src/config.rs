//! Experiment configuration, read from a TOML file.
//!
//! Margins and index sets are one-based here and in every report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mei_core::estimate::DEFAULT_U_GRID;
use mei_core::{GaussFrechetSpec, IndexSet, M4Spec, TauVector, MAX_DIM};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    M4,
    GaussFrechet,
    Iid,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Example2,
    Example3,
    Example4,
}

impl Preset {
    pub fn spec(self) -> M4Spec {
        match self {
            Preset::Example2 => M4Spec::example2(),
            Preset::Example3 => M4Spec::example3(),
            Preset::Example4 => M4Spec::example4(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Example2 => "example2",
            Preset::Example3 => "example3",
            Preset::Example4 => "example4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Built-in M4 specification.
    pub preset: Option<Preset>,
    /// M4 coefficients as `[signature, lag, margin, value]`; signature and
    /// margin are one-based, lag starts at zero.
    pub coefficients: Option<Vec<[f64; 4]>>,
    /// Require every margin's coefficients to sum to one.
    #[serde(default)]
    pub unit_margins: bool,
    pub rho: Option<f64>,
    /// Dimension of the i.i.d. model.
    pub d: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n: usize,
    pub replicates: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n: 100_000, replicates: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub k_n: Option<usize>,
    pub level_scale: Option<f64>,
    pub bootstrap: usize,
    /// Each entry is one `τ`; `(1, …, 1)` when empty.
    pub tau_grid: Vec<Vec<f64>>,
    /// One-based index set `J`; all margins when unset.
    pub set: Option<Vec<usize>>,
    pub policy: Option<PolicyKind>,
    /// Estimate bounds from data; costs one pass per subset.
    pub estimated_bounds: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k_n: None,
            level_scale: None,
            bootstrap: 200,
            tau_grid: Vec::new(),
            set: None,
            policy: None,
            estimated_bounds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    /// One-based margin pairs; every pair when empty.
    pub pairs: Vec<[usize; 2]>,
    pub u_grid: Vec<f64>,
    pub min_joint: usize,
    pub eta_k: Option<usize>,
    /// Analyse block maxima of this size as well as the raw series.
    pub block_size: Option<usize>,
    pub extrapolate: bool,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            u_grid: DEFAULT_U_GRID.to_vec(),
            min_joint: 50,
            eta_k: None,
            block_size: None,
            extrapolate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Also write the first replicate as `series.csv`.
    pub series_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// The model after validation.
#[derive(Debug, Clone)]
pub enum Model {
    M4 { spec: M4Spec, preset: Option<Preset> },
    GaussFrechet(GaussFrechetSpec),
    Iid { d: usize },
    Csv(PathBuf),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::M4 { .. } => ModelKind::M4,
            Model::GaussFrechet(_) => ModelKind::GaussFrechet,
            Model::Iid { .. } => ModelKind::Iid,
            Model::Csv(_) => ModelKind::Csv,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // A relative CSV path is taken relative to the config file.
        if let (Some(p), Some(base)) = (cfg.model.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// A config for one built-in M4 example.
    pub fn preset(preset: Preset) -> Self {
        Self {
            seed: None,
            model: ModelConfig {
                kind: ModelKind::M4,
                preset: Some(preset),
                coefficients: None,
                unit_margins: false,
                rho: None,
                d: None,
                path: None,
            },
            sample: SampleConfig::default(),
            estimation: EstimationConfig::default(),
            tail: TailConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Checks the whole config and resolves the model.
    pub fn model(&self) -> Result<Model, CliError> {
        let m = &self.model;
        let stray = |field: &str, present: bool| -> Result<(), CliError> {
            if present {
                Err(invalid(format!("model.{field} does not apply to kind {:?}", m.kind)))
            } else {
                Ok(())
            }
        };
        let model = match m.kind {
            ModelKind::M4 => {
                stray("rho", m.rho.is_some())?;
                stray("d", m.d.is_some())?;
                stray("path", m.path.is_some())?;
                match (m.preset, &m.coefficients) {
                    (Some(p), None) => Model::M4 { spec: p.spec(), preset: Some(p) },
                    (None, Some(rows)) => Model::M4 { spec: m4_from_rows(rows, m.unit_margins)?, preset: None },
                    _ => return Err(invalid("kind m4 needs exactly one of model.preset and model.coefficients")),
                }
            }
            ModelKind::GaussFrechet => {
                stray("preset", m.preset.is_some())?;
                stray("coefficients", m.coefficients.is_some())?;
                stray("d", m.d.is_some())?;
                stray("path", m.path.is_some())?;
                let rho = m.rho.ok_or_else(|| invalid("kind gauss_frechet needs model.rho"))?;
                Model::GaussFrechet(GaussFrechetSpec::new(rho)?)
            }
            ModelKind::Iid => {
                stray("preset", m.preset.is_some())?;
                stray("coefficients", m.coefficients.is_some())?;
                stray("rho", m.rho.is_some())?;
                stray("path", m.path.is_some())?;
                let d = m.d.unwrap_or(2);
                if d == 0 || d > MAX_DIM {
                    return Err(invalid(format!("model.d = {d} is outside 1..={MAX_DIM}")));
                }
                Model::Iid { d }
            }
            ModelKind::Csv => {
                stray("preset", m.preset.is_some())?;
                stray("coefficients", m.coefficients.is_some())?;
                stray("rho", m.rho.is_some())?;
                stray("d", m.d.is_some())?;
                Model::Csv(m.path.clone().ok_or_else(|| invalid("kind csv needs model.path"))?)
            }
        };
        self.check_numbers(&model)?;
        Ok(model)
    }

    fn check_numbers(&self, model: &Model) -> Result<(), CliError> {
        let s = &self.sample;
        if !matches!(model, Model::Csv(_)) && s.n < 2 {
            return Err(invalid(format!("sample.n = {} must be at least 2", s.n)));
        }
        if s.replicates == 0 {
            return Err(invalid("sample.replicates must be positive"));
        }
        if matches!(model, Model::Csv(_)) && s.replicates != 1 {
            return Err(invalid("a csv model has exactly one replicate"));
        }
        let e = &self.estimation;
        if e.k_n == Some(0) {
            return Err(invalid("estimation.k_n must be positive"));
        }
        if let Some(c) = e.level_scale {
            if !(c.is_finite() && c >= 1.0) {
                return Err(invalid(format!("estimation.level_scale = {c} must be finite and at least 1")));
            }
        }
        if e.policy == Some(PolicyKind::Analytic) && !matches!(model, Model::M4 { .. } | Model::GaussFrechet(_) | Model::Iid { .. }) {
            return Err(invalid("analytic levels need a simulated model"));
        }
        let t = &self.tail;
        if t.u_grid.is_empty() {
            return Err(invalid("tail.u_grid is empty"));
        }
        if let Some(u) = t.u_grid.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
            return Err(invalid(format!("tail.u_grid value {u} is not in (0, 1)")));
        }
        if t.block_size == Some(0) {
            return Err(invalid("tail.block_size must be positive"));
        }
        Ok(())
    }

    /// `τ` grid checked against dimension `d`.
    pub fn tau_grid(&self, d: usize) -> Result<Vec<TauVector>, CliError> {
        if self.estimation.tau_grid.is_empty() {
            return Ok(vec![TauVector::ones(d)?]);
        }
        self.estimation
            .tau_grid
            .iter()
            .map(|t| {
                if t.len() != d {
                    return Err(invalid(format!("tau {t:?} has {} entries, the model has {d} margins", t.len())));
                }
                Ok(TauVector::new(t.clone())?)
            })
            .collect()
    }

    pub fn index_set(&self, d: usize) -> Result<IndexSet, CliError> {
        match &self.estimation.set {
            None => Ok(IndexSet::full(d)?),
            Some(members) => Ok(IndexSet::new(&zero_based(members, d, "estimation.set")?, d)?),
        }
    }

    /// Zero-based margin pairs for tail analysis.
    pub fn pairs(&self, d: usize) -> Result<Vec<(usize, usize)>, CliError> {
        if self.tail.pairs.is_empty() {
            return Ok((0..d).flat_map(|j| (j + 1..d).map(move |jp| (j, jp))).collect());
        }
        self.tail
            .pairs
            .iter()
            .map(|p| {
                let z = zero_based(p, d, "tail.pairs")?;
                if z[0] == z[1] {
                    return Err(invalid(format!("tail pair {p:?} repeats a margin")));
                }
                Ok((z[0], z[1]))
            })
            .collect()
    }
}

fn zero_based(members: &[usize], d: usize, what: &str) -> Result<Vec<usize>, CliError> {
    members
        .iter()
        .map(|&j| {
            if j == 0 || j > d {
                Err(invalid(format!("{what}: margin {j} is outside 1..={d}")))
            } else {
                Ok(j - 1)
            }
        })
        .collect()
}

fn m4_from_rows(rows: &[[f64; 4]], unit: bool) -> Result<M4Spec, CliError> {
    let index = |x: f64, what: &str, min: usize| -> Result<usize, CliError> {
        if x.fract() != 0.0 || x < min as f64 || x > u32::MAX as f64 {
            return Err(invalid(format!("coefficient {what} {x} is not an integer >= {min}")));
        }
        Ok(x as usize)
    };
    let mut coefficients = Vec::with_capacity(rows.len());
    let mut d = 0;
    for r in rows {
        let l = index(r[0], "signature", 1)? - 1;
        let k = index(r[1], "lag", 0)?;
        let j = index(r[2], "margin", 1)? - 1;
        d = d.max(j + 1);
        coefficients.push(mei_core::Coefficient::new(l, k, j, r[3]));
    }
    Ok(M4Spec::new(d, coefficients, unit)?)
}
