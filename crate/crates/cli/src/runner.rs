//! Runs an experiment and assembles its JSON report and CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mei_core::bounds::{m4_bounds, BoundSource, BoundsReport};
use mei_core::decomp::{decomp_blocks_pooled, Identity};
use mei_core::estimate::{estimate_mei_pooled, tail_report, Estimate, EstimationSettings, MeiReport, TailSettings};
use mei_core::theory::{chibar_gap_from_exponents, m4_gamma, m4_marginal_thetas, m4_theta, m4_theta_gamma, mev_diag_exponents};
use mei_core::{
    block_maxima, simulate_gauss_frechet, simulate_iid_frechet, simulate_m4, EventKind, IndexSet, LevelPolicy, M4Spec,
    SeriesMatrix, Seed, TauVector,
};

use crate::config::{ExperimentConfig, Model, PolicyKind, Preset};
use crate::error::CliError;
use crate::ingest::{ingest_csv, write_csv};
use crate::json;

pub const SCHEMA_VERSION: u32 = 1;

/// Stream offset of the bootstrap generator; simulation replicate `r` uses
/// stream `r`.
const BOOTSTRAP_STREAM: u64 = 1 << 32;

/// `u` values for the closed-form `χ̄` gap.
const CHIBAR_GAP_U: [f64; 4] = [0.9, 0.99, 0.999, 1.0 - 1e-6];

/// Estimated bounds need every subset; skipped above this dimension.
const MAX_ESTIMATED_BOUNDS_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Mei,
    Theory,
    Bounds,
    Decomp,
    Tail,
}

impl Section {
    pub const ALL: [Section; 5] = [Section::Mei, Section::Theory, Section::Bounds, Section::Decomp, Section::Tail];

    fn key(self) -> &'static str {
        match self {
            Section::Mei => "mei",
            Section::Theory => "theory",
            Section::Bounds => "bounds",
            Section::Decomp => "decomp",
            Section::Tail => "tail",
        }
    }
}

/// Files produced by a run, held in memory until written.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Artifacts {
    pub report: Value,
    /// File name and contents of each CSV table.
    pub tables: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn report_bytes(&self) -> Result<Vec<u8>, CliError> {
        json::to_bytes(&self.report)
    }

    /// Writes `report.json` and the tables into `dir`. On failure every file
    /// written so far is removed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |path: &Path, e| CliError::Io { path: path.to_path_buf(), source: e };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut files = vec![("report.json".to_string(), self.report_bytes()?)];
        files.extend(self.tables.iter().cloned());
        let mut written = Vec::new();
        for (name, bytes) in &files {
            let path = dir.join(name);
            if let Err(e) = std::fs::write(&path, bytes) {
                remove_all(&written);
                let _ = std::fs::remove_file(&path);
                return Err(io(&path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}

pub fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        if let Err(e) = std::fs::remove_file(p) {
            log::warn!("could not remove {}: {e}", p.display());
        }
    }
}

/// Produces the replicates of a model.
pub struct Source {
    model: Model,
    n: usize,
    seed: u64,
    csv: Option<SeriesMatrix>,
}

impl Source {
    pub fn new(model: Model, n: usize, seed: u64) -> Result<Self, CliError> {
        let csv = match &model {
            Model::Csv(path) => Some(ingest_csv(path)?),
            _ => None,
        };
        let n = csv.as_ref().map_or(n, |s| s.n());
        Ok(Self { model, n, seed, csv })
    }

    pub fn d(&self) -> usize {
        match &self.model {
            Model::M4 { spec, .. } => spec.dim(),
            Model::GaussFrechet(g) => g.dim(),
            Model::Iid { d } => *d,
            Model::Csv(_) => self.csv.as_ref().map_or(0, |s| s.d()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicate(&self, r: usize) -> mei_core::Result<SeriesMatrix> {
        let seed = Seed::new(self.seed).with_stream(r as u64);
        match &self.model {
            Model::M4 { spec, .. } => simulate_m4(spec, self.n, seed),
            Model::GaussFrechet(g) => simulate_gauss_frechet(g, self.n, seed),
            Model::Iid { d } => simulate_iid_frechet(self.n, *d, seed),
            Model::Csv(_) => Ok(self.csv.clone().expect("csv loaded in new")),
        }
    }

    fn m4(&self) -> Option<(&M4Spec, Option<Preset>)> {
        match &self.model {
            Model::M4 { spec, preset } => Some((spec, *preset)),
            _ => None,
        }
    }

    fn default_policy(&self) -> LevelPolicy {
        match &self.model {
            Model::M4 { spec, .. } => LevelPolicy::for_m4(spec),
            _ => LevelPolicy::unit_frechet(self.d()),
        }
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    source: Source,
    settings: EstimationSettings,
    taus: Vec<TauVector>,
    set: IndexSet,
    replicates: usize,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self, CliError> {
        let model = cfg.model()?;
        let source = Source::new(model, cfg.sample.n, seed)?;
        let d = source.d();
        let e = &cfg.estimation;
        let policy = match e.policy {
            None => None,
            Some(PolicyKind::Analytic) => Some(source.default_policy()),
            Some(PolicyKind::Empirical) => Some(LevelPolicy::EmpiricalQuantile),
        };
        let settings = EstimationSettings {
            k_n: e.k_n,
            level_scale: e.level_scale,
            bootstrap_resamples: e.bootstrap,
            seed: Seed::new(seed).with_stream(BOOTSTRAP_STREAM),
            policy,
        };
        Ok(Self {
            taus: cfg.tau_grid(d)?,
            set: cfg.index_set(d)?,
            replicates: cfg.sample.replicates,
            cfg,
            source,
            settings,
        })
    }

    fn mei(&self, tau: &TauVector, set: &IndexSet) -> Result<MeiReport, CliError> {
        Ok(estimate_mei_pooled(self.replicates, |r| self.source.replicate(r), tau, set, &self.settings)?)
    }

    /// All replicates stacked row-wise, for rank-based statistics.
    fn stacked(&self, block: Option<usize>) -> Result<SeriesMatrix, CliError> {
        let parts: Vec<SeriesMatrix> = (0..self.replicates)
            .into_par_iter()
            .map(|r| {
                let s = self.source.replicate(r)?;
                match block {
                    Some(m) => block_maxima(&s, m),
                    None => Ok(s),
                }
            })
            .collect::<mei_core::Result<_>>()?;
        if parts.len() == 1 {
            return Ok(parts.into_iter().next().expect("one part"));
        }
        let d = parts[0].d();
        let n: usize = parts.iter().map(|p| p.n()).sum();
        let mut data = Vec::with_capacity(n * d);
        for p in &parts {
            data.extend_from_slice(p.data());
        }
        Ok(SeriesMatrix::new(n, d, data, parts[0].margin_tag())?)
    }
}

fn ok_or_none<T>(r: mei_core::Result<T>) -> Option<T> {
    r.ok()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

fn theta_surface(d: usize, rows: &[(MeiReport, Option<f64>)]) -> Vec<u8> {
    let mut out = String::new();
    let taus: Vec<String> = (1..=d).map(|j| format!("tau_{j}")).collect();
    let est = [
        "theta_hat",
        "theta_star_hat",
        "theta_star2_hat",
        "gamma_hat",
        "theta_gamma_hat",
        "theta_star_gamma_star_hat",
        "theta_star2_tau_star2_hat",
    ];
    let mut header = taus;
    for e in est {
        header.push(e.to_string());
        header.push(format!("{e}_se"));
    }
    header.push("theta_exact".into());
    let _ = writeln!(out, "{}", header.join(","));
    for (r, exact) in rows {
        let mut cells: Vec<String> = r.tau.iter().map(|t| cell(Some(*t))).collect();
        for e in [
            r.theta_hat,
            r.theta_star_hat,
            r.theta_star2_hat,
            r.gamma_hat,
            r.theta_gamma_hat,
            r.theta_star_gamma_star_hat,
            r.theta_star2_tau_star2_hat,
        ] {
            cells.push(cell(e.value));
            cells.push(cell(e.se));
        }
        cells.push(cell(*exact));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out.into_bytes()
}

fn mei_section(ctx: &Context) -> Result<(Value, Vec<u8>), CliError> {
    let mut rows = Vec::with_capacity(ctx.taus.len());
    for tau in &ctx.taus {
        let report = ctx.mei(tau, &ctx.set)?;
        let exact = ctx.source.m4().and_then(|(spec, _)| ok_or_none(m4_theta(spec, tau, &ctx.set, EventKind::Union)));
        rows.push((report, exact));
    }
    let csv = theta_surface(ctx.source.d(), &rows);
    let reports: Vec<&MeiReport> = rows.iter().map(|r| &r.0).collect();
    Ok((json::to_value(&reports)?, csv))
}

#[derive(Serialize)]
struct ClosedForms {
    tau: Vec<f64>,
    set: IndexSet,
    theta: Option<f64>,
    gamma: Option<f64>,
    theta_gamma: Option<f64>,
    theta_star: Option<f64>,
    gamma_star: Option<f64>,
    theta_star_gamma_star: Option<f64>,
    theta_star2: Option<f64>,
    tau_star2: Option<f64>,
    theta_star2_tau_star2: Option<f64>,
}

fn closed_forms(spec: &M4Spec, tau: &TauVector, set: &IndexSet) -> ClosedForms {
    let g = |k| ok_or_none(m4_gamma(spec, tau, set, k));
    let tg = |k| ok_or_none(m4_theta_gamma(spec, tau, set, k));
    let t = |k| ok_or_none(m4_theta(spec, tau, set, k));
    ClosedForms {
        tau: tau.values().to_vec(),
        set: *set,
        theta: t(EventKind::Union),
        gamma: g(EventKind::Union),
        theta_gamma: tg(EventKind::Union),
        theta_star: t(EventKind::Star),
        gamma_star: g(EventKind::Star),
        theta_star_gamma_star: tg(EventKind::Star),
        theta_star2: t(EventKind::Star2),
        tau_star2: g(EventKind::Star2),
        theta_star2_tau_star2: tg(EventKind::Star2),
    }
}

fn theory_section(ctx: &Context) -> Result<Value, CliError> {
    match &ctx.source.model {
        Model::M4 { spec, .. } => {
            let forms: Vec<ClosedForms> = ctx.taus.iter().map(|t| closed_forms(spec, t, &ctx.set)).collect();
            let diag = mev_diag_exponents(spec)?;
            let mut gaps = Vec::new();
            for p in &diag.pairs {
                let gap = chibar_gap_from_exponents(p.eps_hat_h, p.eps_h, &CHIBAR_GAP_U)?;
                gaps.push(json!({ "pair": p.pair, "gap": json::to_value(&gap)? }));
            }
            Ok(json!({
                "marginal_thetas": m4_marginal_thetas(spec),
                "margin_sums": spec.margin_sums(),
                "closed_forms": json::to_value(&forms)?,
                "mev_diag": json::to_value(&diag)?,
                "chibar_gap": gaps,
            }))
        }
        Model::GaussFrechet(g) => Ok(json!({ "rho": g.rho(), "eta": g.eta(), "chi": 0.0 })),
        Model::Iid { d } => Ok(json!({ "marginal_thetas": vec![1.0; *d], "theta": 1.0, "chi": 0.0, "chibar": 0.0, "eta": 0.5 })),
        Model::Csv(_) => Ok(Value::Null),
    }
}

/// `example2` bounds from the published inputs next to their closed forms.
fn printed_example2(spec: &M4Spec) -> Result<Value, CliError> {
    const PRINTED_THETAS: [f64; 2] = [0.7, 0.5];
    const PRINTED_STAR2: f64 = 0.1;
    const PRINTED_GAMMA: f64 = 1.9;
    let tau = TauVector::ones(2)?;
    let full = IndexSet::full(2)?;
    let gamma = PRINTED_GAMMA;
    let terms = [0.0, PRINTED_THETAS[0], PRINTED_THETAS[1], PRINTED_STAR2];
    let printed = BoundsReport::from_inputs(BoundSource::Printed, &tau, gamma, &PRINTED_THETAS, &terms, None)?;
    let oracle_thetas = m4_marginal_thetas(spec);
    let oracle_star2 = m4_theta_gamma(spec, &tau, &full, EventKind::Star2)?;
    let oracle_gamma = m4_gamma(spec, &tau, &full, EventKind::Union)?;
    let discrepant = (oracle_thetas[1] - PRINTED_THETAS[1]).abs() > 1e-12
        || (oracle_star2 - PRINTED_STAR2).abs() > 1e-12
        || (oracle_gamma - PRINTED_GAMMA).abs() > 1e-12;
    Ok(json!({
        "report": json::to_value(&printed)?,
        "new_upper_theta_gamma": printed.new_upper * gamma,
        "classic_upper_theta_gamma": printed.classic_upper * gamma,
        "es_upper_theta_gamma": printed.es_upper_theta_gamma,
        "printed_thetas": PRINTED_THETAS,
        "printed_star2": PRINTED_STAR2,
        "printed_gamma": PRINTED_GAMMA,
        "oracle_gamma": oracle_gamma,
        "oracle_thetas": oracle_thetas,
        "oracle_star2": oracle_star2,
        "inputs_discrepant": discrepant,
    }))
}

fn estimated_bounds(ctx: &Context, tau: &TauVector) -> Result<Option<BoundsReport>, CliError> {
    let d = ctx.source.d();
    let full = IndexSet::full(d)?;
    let whole = ctx.mei(tau, &full)?;
    let mut terms = vec![0.0; 1 << d];
    for set in IndexSet::all_nonempty(d)? {
        let r = if set.len() == d { whole.clone() } else { ctx.mei(tau, &set)? };
        match r.theta_star2_tau_star2_hat.value {
            Some(v) => terms[set.mask() as usize] = v,
            None => return Ok(None),
        }
    }
    let thetas: Option<Vec<f64>> = whole
        .marginal_theta_tau
        .iter()
        .zip(tau.values())
        .map(|(e, t)| e.value.map(|v| v / t))
        .collect();
    let (Some(thetas), Some(gamma)) = (thetas, whole.gamma_hat.value) else {
        return Ok(None);
    };
    Ok(Some(BoundsReport::from_inputs(BoundSource::Estimate, tau, gamma, &thetas, &terms, whole.theta_hat.value)?))
}

fn bounds_section(ctx: &Context) -> Result<Value, CliError> {
    let mut out = BTreeMap::new();
    if let Some((spec, preset)) = ctx.source.m4() {
        let closed: Vec<BoundsReport> = ctx.taus.iter().map(|t| m4_bounds(spec, t)).collect::<mei_core::Result<_>>()?;
        out.insert("closed_form", json::to_value(&closed)?);
        if preset == Some(Preset::Example2) {
            out.insert("printed_example2", printed_example2(spec)?);
        }
    }
    let d = ctx.source.d();
    if ctx.cfg.estimation.estimated_bounds && d <= MAX_ESTIMATED_BOUNDS_DIM {
        let mut est = Vec::new();
        for tau in &ctx.taus {
            match estimated_bounds(ctx, tau)? {
                Some(r) => est.push(json::to_value(&r)?),
                None => est.push(json!({ "tau": tau.values(), "undefined": true })),
            }
        }
        out.insert("estimated", Value::Array(est));
    }
    json::to_value(&out)
}

fn decomp_section(ctx: &Context) -> Result<Value, CliError> {
    if ctx.source.d() < 2 {
        return Ok(Value::Array(Vec::new()));
    }
    let mut out = Vec::new();
    for tau in &ctx.taus {
        let blocks = decomp_blocks_pooled(ctx.replicates, |r| ctx.source.replicate(r), tau, &ctx.settings)?;
        for id in [Identity::CommonLevel, Identity::Nested] {
            out.push(json::to_value(&blocks.report(id, &ctx.settings))?);
        }
    }
    Ok(Value::Array(out))
}

fn tail_section(ctx: &Context) -> Result<(Value, Vec<u8>), CliError> {
    let t = &ctx.cfg.tail;
    let settings = TailSettings { min_joint: t.min_joint, extrapolate: t.extrapolate };
    let pairs = ctx.cfg.pairs(ctx.source.d())?;
    let mut samples = vec![("raw", ctx.stacked(None)?)];
    if let Some(m) = t.block_size {
        samples.push(("block_maxima", ctx.stacked(Some(m))?));
    }
    let mut csv = String::from("sample,margin_1,margin_2,u,copula_diag,chi,chi_conditional,chibar,joint_exceedances\n");
    let mut out = BTreeMap::new();
    for (name, sample) in &samples {
        let mut reports = Vec::new();
        for &pair in &pairs {
            let r = tail_report(sample, pair, &t.u_grid, t.eta_k, settings)?;
            for (c, b) in r.chi.points.iter().zip(&r.chibar.points) {
                let _ = writeln!(
                    csv,
                    "{name},{},{},{},{},{},{},{},{}",
                    r.pair.0,
                    r.pair.1,
                    cell(Some(c.u)),
                    cell(Some(c.copula_diag)),
                    cell(Some(c.chi)),
                    cell(c.chi_conditional),
                    cell(Some(b.chibar)),
                    c.joint_exceedances
                );
            }
            reports.push(r);
        }
        out.insert(*name, json::to_value(&reports)?);
    }
    if let Some(m) = t.block_size {
        out.insert("block_size", json!(m));
    }
    Ok((json::to_value(&out)?, csv.into_bytes()))
}

fn model_summary(ctx: &Context) -> Value {
    let preset = ctx.source.m4().and_then(|(_, p)| p).map(Preset::name);
    json!({
        "kind": ctx.source.model.kind(),
        "preset": preset,
        "d": ctx.source.d(),
        "n": ctx.source.n(),
        "replicates": ctx.replicates,
    })
}

/// Runs the chosen sections and returns the report body.
fn run_sections(ctx: &Context, sections: &[Section], tables: &mut Vec<(String, Vec<u8>)>) -> Result<Value, CliError> {
    let mut out = serde_json::Map::new();
    for &s in sections {
        let v = match s {
            Section::Mei => {
                let (v, csv) = mei_section(ctx)?;
                tables.push(("theta_surface.csv".into(), csv));
                v
            }
            Section::Theory => theory_section(ctx)?,
            Section::Bounds => bounds_section(ctx)?,
            Section::Decomp => decomp_section(ctx)?,
            Section::Tail => {
                let (v, csv) = tail_section(ctx)?;
                tables.push(("tail_curves.csv".into(), csv));
                v
            }
        };
        out.insert(s.key().into(), v);
    }
    Ok(Value::Object(out))
}

fn series_table(ctx: &Context) -> Result<(String, Vec<u8>), CliError> {
    let mut bytes = Vec::new();
    write_csv(&ctx.source.replicate(0)?, &mut bytes).map_err(|e| CliError::Serialize(e.to_string()))?;
    Ok(("series.csv".into(), bytes))
}

/// Runs `sections` of one experiment.
pub fn run_config(cfg: &ExperimentConfig, seed: u64, command: &str, sections: &[Section]) -> Result<Artifacts, CliError> {
    let ctx = Context::new(cfg, seed)?;
    let mut tables = Vec::new();
    let body = run_sections(&ctx, sections, &mut tables)?;
    if cfg.output.series_csv {
        tables.push(series_table(&ctx)?);
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config": json::to_value(cfg)?,
        "model": model_summary(&ctx),
        "sections": body,
    });
    Ok(Artifacts { report, tables })
}

/// Every section of one experiment.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    run_config(cfg, seed, "run", &Section::ALL)
}

/// The first replicate as CSV.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Artifacts, CliError> {
    let ctx = Context::new(cfg, seed)?;
    let table = series_table(&ctx)?;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "seed": seed,
        "config": json::to_value(cfg)?,
        "model": model_summary(&ctx),
        "sections": {},
    });
    Ok(Artifacts { report, tables: vec![table] })
}

pub const REPRODUCE_N: usize = 1_000_000;

/// Configs of the preset suite. `base` supplies the sample size,
/// replicates and estimation settings.
pub fn reproduce_configs(base: Option<&ExperimentConfig>) -> Vec<ExperimentConfig> {
    [Preset::Example2, Preset::Example3, Preset::Example4]
        .into_iter()
        .map(|p| {
            let mut cfg = ExperimentConfig::preset(p);
            cfg.sample.n = REPRODUCE_N;
            cfg.tail.block_size = Some(1000);
            if p == Preset::Example2 {
                cfg.estimation.tau_grid = vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 3.0], vec![3.0, 2.0]];
            }
            if let Some(b) = base {
                cfg.sample = b.sample.clone();
                cfg.estimation.k_n = b.estimation.k_n;
                cfg.estimation.level_scale = b.estimation.level_scale;
                cfg.estimation.bootstrap = b.estimation.bootstrap;
                cfg.tail.u_grid = b.tail.u_grid.clone();
                cfg.tail.min_joint = b.tail.min_joint;
                cfg.tail.block_size = b.tail.block_size.or(cfg.tail.block_size);
            }
            cfg
        })
        .collect()
}

/// Runs the preset suite. Tables are prefixed with the example name.
pub fn reproduce_paper(base: Option<&ExperimentConfig>, seed: u64) -> Result<Artifacts, CliError> {
    let mut examples = serde_json::Map::new();
    let mut tables = Vec::new();
    for cfg in reproduce_configs(base) {
        let name = cfg.model.preset.map(Preset::name).unwrap_or("m4");
        let a = run_config(&cfg, seed, "reproduce-paper", &Section::ALL)?;
        tables.extend(a.tables.into_iter().map(|(f, b)| (format!("{name}_{f}"), b)));
        examples.insert(name.to_string(), a.report);
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "reproduce-paper",
        "seed": seed,
        "examples": examples,
    });
    Ok(Artifacts { report, tables })
}

/// Estimates keyed by name; used by tests to read reports back.
pub fn estimate_value(v: &Value) -> Estimate {
    Estimate { value: v["value"].as_f64(), se: v["se"].as_f64() }
}
