//! End-to-end experiment: generate, collect, train, tune, evaluate, report.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! instances/<split>/<name>.json   instances/<split>/index.json
//! datasets/<split>/...            (train and validation only)
//! models/pas.ckpt  models/idpas.ckpt  models/<model>_curve.csv
//! tune/<approach>.json            tuned settings and the full grid
//! eval/runs.json  eval/reference.json
//! report/metrics.csv summary.csv summary.md curves.csv grid.csv COLUMNS.txt
//! ```
//!
//! Every phase seed is `derive_seed(master_seed, phase, index)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{collect_dataset, label_statistics, load_dataset, DatasetError, LabelStatistics, Split};
use crate::eval::{
    best_known, compute_metrics, gap_curves, select_grid, summarize, write_curves_csv, write_metrics_csv, write_summary_csv,
    EvalError, GridResult, GridRow, RunRecord, SummaryRow,
};
use crate::gat::{load_checkpoint_for, save_checkpoint, train, write_curve_csv, GatDims, GatError, GatParams, TrainConfig, TrainExample};
use crate::gen::{gen_instance, FamilyConfig, GenError};
use crate::graph::{encode_with_identity, GraphError};
use crate::milp::{solve_mip, SolveError, SolverConfig};
use crate::mip::{load_instance, save_instance, MipError, MipInstance};
use crate::pas::{binary_eligible, k_from_fraction, run_pas_scored, score_instance, zero_eligible, PasError, PasSettings, PasVariant, ScoredInstance};
use crate::util::{derive_seed, write_atomic};

pub const PLAIN: &str = "Plain";
pub const PAS: &str = "PaS";
pub const ID_PAS: &str = "ID-PaS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {}: {what}", path.display())]
    Missing { path: PathBuf, what: String },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pas(#[from] PasError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Configuration problems (bad values, missing inputs) as opposed to
    /// failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::Missing { .. })
            || matches!(self, PipelineError::Gen(GenError::Config(_)))
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.display().to_string(), source }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 60, validation: 20, test: 20 }
    }
}

/// Time limits in clock seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Per-instance solution-pool collection.
    pub collect: f64,
    /// Per validation solve during grid search.
    pub tune: f64,
    /// Per test solve; also the horizon of the test primal integral.
    pub test: f64,
    /// Per-instance reference solve used only for the best-known value.
    pub reference: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { collect: 10.0, tune: 3.0, test: 10.0, reference: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: usize,
    pub heads: usize,
    /// Identity bits for the ID-PaS model; `None` uses `ceil(log2 n)`.
    pub identity_bits: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed: 16, heads: 4, identity_bits: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub deltas: Vec<usize>,
    /// Fractions of the eligible variables used as k0.
    pub k0_fractions: Vec<f64>,
    /// k1 of the PaS baseline as a fraction of its eligible variables.
    pub pas_k1_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { deltas: vec![1, 5, 10], k0_fractions: vec![0.5, 0.6, 0.7, 0.8, 0.9], pas_k1_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyConfig,
    pub splits: SplitSizes,
    pub u_p: usize,
    pub pool_restarts: usize,
    pub budgets: Budgets,
    /// Base solver settings; time limits and seeds are set per phase.
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: FamilyConfig::mmcnp(1),
            splits: SplitSizes::default(),
            u_p: 50,
            pool_restarts: 1,
            budgets: Budgets::default(),
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            out_dir: PathBuf::from("out"),
            master_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| PipelineError::Missing { path: path.into(), what: "config file".into() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.family.validate()?;
        if self.splits.train == 0 || self.splits.validation == 0 || self.splits.test == 0 {
            return bad("every split needs at least one instance");
        }
        if self.u_p == 0 {
            return bad("u_p must be at least 1");
        }
        let b = &self.budgets;
        if [b.collect, b.tune, b.test, b.reference].iter().any(|t| !(*t > 0.0)) {
            return bad("budgets must be positive");
        }
        if self.model.embed == 0 || self.model.heads == 0 || self.model.embed % self.model.heads != 0 {
            return bad("model.embed must be a positive multiple of model.heads");
        }
        if self.grid.deltas.is_empty() || self.grid.k0_fractions.is_empty() {
            return bad("grid sets must be non-empty");
        }
        if self.grid.k0_fractions.iter().chain([&self.grid.pas_k1_fraction]).any(|f| !(0.0..=1.0).contains(f)) {
            return bad("grid fractions must lie in [0, 1]");
        }
        if self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return bad("train.batch_size and train.lr must be positive");
        }
        Ok(())
    }

    pub fn dir(&self, sub: &str) -> PathBuf {
        self.out_dir.join(sub)
    }

    fn phase_seed(&self, phase: &str, index: u64) -> u64 {
        derive_seed(self.master_seed, phase, index)
    }

    fn solver(&self, limit: f64, phase: &str) -> SolverConfig {
        SolverConfig { time_limit: limit, rng_seed: self.phase_seed(phase, 0), pool_capacity: 1, ..self.solver.clone() }
    }
}

fn split_size(cfg: &RunConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.splits.train,
        Split::Validation => cfg.splits.validation,
        Split::Test => cfg.splits.test,
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| PipelineError::Missing { path: path.into(), what: what.into() })?;
    Ok(serde_json::from_str(&text)?)
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("[idpas] {}", msg.as_ref());
}

// ---------------------------------------------------------------------------
// gen

/// Writes every split's instances plus an `index.json` listing their file
/// names in order. Returns the number of instances written.
pub fn run_gen(cfg: &RunConfig) -> Result<usize> {
    cfg.validate()?;
    let mut total = 0;
    for split in SPLITS {
        let dir = cfg.dir("instances").join(split.name());
        let n = split_size(cfg, split);
        let insts: Vec<MipInstance> = (0..n)
            .into_par_iter()
            .map(|i| gen_instance(&cfg.family, cfg.phase_seed(&format!("gen-{}", split.name()), i as u64)))
            .collect::<std::result::Result<_, _>>()?;
        let mut names = Vec::with_capacity(n);
        for inst in &insts {
            let file = format!("{}.json", inst.name);
            save_instance(inst, &dir.join(&file))?;
            names.push(file);
        }
        write_json(&names, &dir.join("index.json"))?;
        progress(format!("gen: {} {} instances", n, split.name()));
        total += n;
    }
    Ok(total)
}

pub fn instance_files(cfg: &RunConfig, split: Split) -> Result<Vec<PathBuf>> {
    let dir = cfg.dir("instances").join(split.name());
    let names: Vec<String> = read_json(&dir.join("index.json"), "instance index (run `gen` first)")?;
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<MipInstance>> {
    instance_files(cfg, split)?.iter().map(|p| Ok(load_instance(p)?)).collect()
}

// ---------------------------------------------------------------------------
// collect

pub fn dataset_manifest(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.dir("datasets").join(split.name()).join("manifest.json")
}

/// Collects label datasets for the training and validation splits and
/// returns the training-pool label statistics.
pub fn run_collect(cfg: &RunConfig) -> Result<LabelStatistics> {
    cfg.validate()?;
    let mut train_stats = None;
    for split in [Split::Train, Split::Validation] {
        let files = instance_files(cfg, split)?;
        let solver = cfg.solver(cfg.budgets.collect, &format!("collect-{}", split.name()));
        let out = cfg.dir("datasets").join(split.name());
        progress(format!("collect: solving {} {} instances", files.len(), split.name()));
        let (manifest, samples) = collect_dataset(&files, split, cfg.u_p, &solver, cfg.pool_restarts, &out)?;
        let stats = label_statistics(&samples)?;
        progress(format!(
            "collect: {} samples, {} excluded, zero fraction {:.3}",
            manifest.samples.len(),
            manifest.excluded.len(),
            stats.zero_fraction
        ));
        if split == Split::Train {
            train_stats = Some(stats);
        }
    }
    Ok(train_stats.expect("train split collected"))
}

// ---------------------------------------------------------------------------
// train

/// The two learned models: the plain PaS scorer and the identity-aware one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Pas,
    IdPas,
}

impl ModelKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            ModelKind::Pas => "pas",
            ModelKind::IdPas => "idpas",
        }
    }

    pub fn approach(self) -> &'static str {
        match self {
            ModelKind::Pas => PAS,
            ModelKind::IdPas => ID_PAS,
        }
    }

    pub fn variant(self) -> PasVariant {
        match self {
            ModelKind::Pas => PasVariant::BinaryPas,
            ModelKind::IdPas => PasVariant::IdPas,
        }
    }
}

pub const MODELS: [ModelKind; 2] = [ModelKind::Pas, ModelKind::IdPas];

pub fn identity_bits_for(n_vars: usize) -> usize {
    (usize::BITS - n_vars.saturating_sub(1).leading_zeros()).max(1) as usize
}

/// Model dimensions for `kind` given the family's variable count.
pub fn model_dims(cfg: &RunConfig, kind: ModelKind, n_vars: usize) -> GatDims {
    let b = match kind {
        ModelKind::Pas => 0,
        ModelKind::IdPas => cfg.model.identity_bits.unwrap_or_else(|| identity_bits_for(n_vars)),
    };
    GatDims::for_graphs(cfg.model.embed, cfg.model.heads, b)
}

pub fn checkpoint_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.dir("models").join(format!("{}.ckpt", kind.file_stem()))
}

fn examples(data: &[(MipInstance, crate::dataset::TrainingSample)], width: usize) -> Result<Vec<TrainExample>> {
    data.iter()
        .map(|(inst, s)| Ok(TrainExample { graph: encode_with_identity(inst, width)?, labels: s.labels.clone() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: &'static str,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Trains the PaS and ID-PaS models on the collected datasets.
pub fn run_train(cfg: &RunConfig) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let tol = cfg.solver.feas_tol.max(1e-6);
    let (_, train_data) = load_dataset(&require(&dataset_manifest(cfg, Split::Train), "training dataset (run `collect` first)")?, tol)?;
    let (_, val_data) = load_dataset(&require(&dataset_manifest(cfg, Split::Validation), "validation dataset (run `collect` first)")?, tol)?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(PipelineError::Config("collected datasets are empty".into()));
    }
    let n_vars = train_data[0].0.num_vars();
    let mut out = Vec::new();
    for kind in MODELS {
        let dims = model_dims(cfg, kind, n_vars);
        let tcfg = TrainConfig { seed: cfg.phase_seed(&format!("train-{}", kind.file_stem()), 0), ..cfg.train.clone() };
        progress(format!("train: {} model, identity bits {}", kind.approach(), dims.identity_width));
        let tr = examples(&train_data, dims.identity_width)?;
        let va = examples(&val_data, dims.identity_width)?;
        let ckpt = checkpoint_path(cfg, kind);
        let outcome = train(&tr, &va, dims, &tcfg, Some(&ckpt))?;
        save_checkpoint(&outcome.best, Some(&outcome.state), &ckpt)?;
        write_curve_csv(&outcome.curve, &cfg.dir("models").join(format!("{}_curve.csv", kind.file_stem())))?;
        progress(format!(
            "train: {} best epoch {} validation loss {:.4}",
            kind.approach(),
            outcome.best_epoch,
            outcome.state.best_val_loss
        ));
        out.push(TrainSummary {
            model: kind.approach(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.state.best_val_loss,
            steps: outcome.state.step,
        });
    }
    Ok(out)
}

fn require(path: &Path, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(PipelineError::Missing { path: path.into(), what: what.into() })
    }
}

/// Loads the checkpoint for `kind`, checking it against the instances.
pub fn load_model(cfg: &RunConfig, kind: ModelKind, n_vars: usize) -> Result<GatParams> {
    let path = require(&checkpoint_path(cfg, kind), &format!("{} checkpoint (run `train` first)", kind.approach()))?;
    Ok(load_checkpoint_for(&path, &model_dims(cfg, kind, n_vars))?)
}

// ---------------------------------------------------------------------------
// tune

/// Neighborhood settings for one grid point on one instance.
pub fn settings_for(cfg: &RunConfig, kind: ModelKind, inst: &MipInstance, k0_fraction: f64, delta: usize) -> PasSettings {
    match kind {
        ModelKind::IdPas => {
            let elig = zero_eligible(inst).iter().filter(|b| **b).count();
            PasSettings { variant: PasVariant::IdPas, k0: k_from_fraction(k0_fraction, elig), k1: 0, delta }
        }
        ModelKind::Pas => {
            let elig = binary_eligible(inst).iter().filter(|b| **b).count();
            let k0 = k_from_fraction(k0_fraction, elig);
            let k1 = ((cfg.grid.pas_k1_fraction * elig as f64).floor() as usize).min(elig - k0);
            PasSettings { variant: PasVariant::BinaryPas, k0, k1, delta }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedApproach {
    pub approach: String,
    pub k0_fraction: f64,
    pub delta: usize,
    pub grid: GridResult,
}

pub fn tuned_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.dir("tune").join(format!("{}.json", kind.file_stem()))
}

fn clamp_trace(trace: &[(f64, f64)], horizon: f64) -> Vec<(f64, f64)> {
    trace.iter().map(|&(t, v)| (t.min(horizon), v)).collect()
}

fn record(inst: &MipInstance, approach: &str, trace: &[(f64, f64)], final_objective: Option<f64>, horizon: f64) -> RunRecord {
    RunRecord { instance: inst.name.clone(), approach: approach.to_string(), trace: clamp_trace(trace, horizon), final_objective }
}

fn score_all(insts: &[MipInstance], params: &GatParams) -> Result<Vec<ScoredInstance>> {
    insts.par_iter().map(|inst| Ok(score_instance(inst, params)?)).collect()
}

/// Grid search of `(k0 fraction, delta)` for both learned approaches on the
/// validation split. The best-known value of each validation instance is the
/// best objective over every grid run and a plain solve.
pub fn run_tune(cfg: &RunConfig) -> Result<Vec<TunedApproach>> {
    cfg.validate()?;
    let val = load_split(cfg, Split::Validation)?;
    let n_vars = val[0].num_vars();
    let horizon = cfg.budgets.tune;
    let solver = cfg.solver(horizon, "tune");
    let pairs: Vec<(f64, usize)> =
        cfg.grid.k0_fractions.iter().flat_map(|&f| cfg.grid.deltas.iter().map(move |&d| (f, d))).collect();

    progress(format!("tune: plain solves on {} validation instances", val.len()));
    let plain: Vec<RunRecord> = val
        .par_iter()
        .map(|inst| {
            let r = solve_mip(inst, &solver)?;
            Ok(record(inst, PLAIN, &r.incumbents, r.best_objective(), horizon))
        })
        .collect::<Result<_>>()?;

    // runs[model][pair][instance]
    let mut runs: Vec<Vec<Vec<(RunRecord, bool)>>> = Vec::new();
    for kind in MODELS {
        let params = load_model(cfg, kind, n_vars)?;
        let scored = score_all(&val, &params)?;
        let mut per_pair = Vec::new();
        for (p, &(frac, delta)) in pairs.iter().enumerate() {
            progress(format!("tune: {} pair {}/{} (k0 {:.0}%, delta {})", kind.approach(), p + 1, pairs.len(), 100.0 * frac, delta));
            let recs: Vec<(RunRecord, bool)> = val
                .par_iter()
                .zip(&scored)
                .map(|(inst, sc)| {
                    let s = settings_for(cfg, kind, inst, frac, delta);
                    let r = run_pas_scored(inst, sc, &s, &solver)?;
                    Ok((record(inst, kind.approach(), &r.result.incumbents, r.result.best_objective(), horizon), r.is_infeasible()))
                })
                .collect::<Result<_>>()?;
            per_pair.push(recs);
        }
        runs.push(per_pair);
    }

    let all: Vec<RunRecord> =
        plain.iter().cloned().chain(runs.iter().flatten().flatten().map(|(r, _)| r.clone())).collect();
    let v_star = best_known(&all, &BTreeMap::new());
    let mut out = Vec::new();
    for (m, kind) in MODELS.iter().enumerate() {
        let rows: Vec<GridRow> = pairs
            .iter()
            .zip(&runs[m])
            .map(|(&(k0_fraction, delta), recs)| {
                let only: Vec<RunRecord> = recs.iter().map(|(r, _)| r.clone()).collect();
                let metrics = compute_metrics(&only, &v_star, horizon)?;
                let n = metrics.len() as f64;
                Ok(GridRow {
                    k0_fraction,
                    delta,
                    mean_pg: metrics.iter().map(|r| r.pg).sum::<f64>() / n,
                    mean_pi: metrics.iter().map(|r| r.pi).sum::<f64>() / n,
                    infeasible: recs.iter().filter(|(_, inf)| *inf).count(),
                })
            })
            .collect::<Result<_>>()?;
        let grid = select_grid(rows)?;
        let sel = grid.selected_row().clone();
        progress(format!(
            "tune: {} selected k0 {:.0}% delta {} (mean PI {:.4}, mean PG {:.4})",
            kind.approach(),
            100.0 * sel.k0_fraction,
            sel.delta,
            sel.mean_pi,
            sel.mean_pg
        ));
        let tuned = TunedApproach { approach: kind.approach().into(), k0_fraction: sel.k0_fraction, delta: sel.delta, grid };
        write_json(&tuned, &tuned_path(cfg, *kind))?;
        out.push(tuned);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// eval

pub fn runs_path(cfg: &RunConfig) -> PathBuf {
    cfg.dir("eval").join("runs.json")
}

pub fn reference_path(cfg: &RunConfig) -> PathBuf {
    cfg.dir("eval").join("reference.json")
}

/// Runs Plain, PaS and ID-PaS on every test instance with the tuned
/// settings, plus one longer reference solve per instance.
pub fn run_eval(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let test = load_split(cfg, Split::Test)?;
    let n_vars = test[0].num_vars();
    let horizon = cfg.budgets.test;
    let mut learned = Vec::new();
    for kind in MODELS {
        let params = load_model(cfg, kind, n_vars)?;
        let tuned: TunedApproach = read_json(&tuned_path(cfg, kind), &format!("tuned {} settings (run `tune` first)", kind.approach()))?;
        learned.push((kind, params, tuned));
    }
    let solver = cfg.solver(horizon, "eval");
    let reference = cfg.solver(cfg.budgets.reference, "reference");

    progress(format!("eval: {} test instances", test.len()));
    let per_instance: Vec<(Vec<RunRecord>, Option<f64>)> = test
        .par_iter()
        .map(|inst| {
            let mut recs = Vec::new();
            let r = solve_mip(inst, &solver)?;
            recs.push(record(inst, PLAIN, &r.incumbents, r.best_objective(), horizon));
            for (kind, params, tuned) in &learned {
                let sc = score_instance(inst, params)?;
                let s = settings_for(cfg, *kind, inst, tuned.k0_fraction, tuned.delta);
                let r = run_pas_scored(inst, &sc, &s, &solver)?;
                recs.push(record(inst, kind.approach(), &r.result.incumbents, r.result.best_objective(), horizon));
            }
            let refr = solve_mip(inst, &reference)?;
            progress(format!("eval: {} done", inst.name));
            Ok((recs, refr.best_objective()))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    let mut refs = BTreeMap::new();
    for (inst, (recs, refv)) in test.iter().zip(per_instance) {
        runs.extend(recs);
        if let Some(v) = refv {
            refs.insert(inst.name.clone(), v);
        }
    }
    write_json(&runs, &runs_path(cfg))?;
    write_json(&refs, &reference_path(cfg))?;
    Ok(runs)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub metrics: Vec<crate::eval::MetricsRecord>,
}

impl Report {
    pub fn row(&self, approach: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.approach == approach)
    }
}

pub fn approaches() -> Vec<String> {
    [PLAIN, PAS, ID_PAS].iter().map(|s| s.to_string()).collect()
}

const COLUMNS: &str = "\
Improvement percentages and Wilcoxon p-values are relative to Plain (the
embedded branch-and-bound solver without prediction). v* is the best final
objective over all approaches and one reference solve per instance. Times
are clock seconds.

metrics.csv   one row per test instance and approach
  instance, approach
  pg               primal gap of the final objective, capped at 1
  pg_raw           uncapped primal gap
  pi               primal integral over [0, T]
  final_objective  NA when no incumbent was found
  v_star           best-known objective

summary.csv   one row per approach
  pg_mean, pg_std, pg_wins, pg_mean_improvement (%), pg_wilcoxon_p
  pi_mean, pi_std, pi_wins, pi_mean_improvement (%), pi_wilcoxon_p
  pg_cell, pi_cell  \"mean (improvement%)\" as printed in summary.md
  Wins: every approach tied for the best value on an instance gets a win.

curves.csv    mean capped primal gap at 64 evenly spaced times in [0, T]
  time, then one column per approach

grid.csv      validation grid search, one row per approach and grid point
  approach, k0_fraction, delta, mean_pg, mean_pi, infeasible, selected
";

/// Computes metrics from the evaluation runs and writes the report files.
pub fn run_report(cfg: &RunConfig) -> Result<Report> {
    let runs: Vec<RunRecord> = read_json(&runs_path(cfg), "evaluation runs (run `eval` first)")?;
    let refs: BTreeMap<String, f64> = read_json(&reference_path(cfg), "reference values (run `eval` first)")?;
    let dir = cfg.dir("report");
    let names = approaches();
    let horizon = cfg.budgets.test;
    let v_star = best_known(&runs, &refs);
    let metrics = compute_metrics(&runs, &v_star, horizon)?;
    let summary = summarize(&metrics, &names, PLAIN)?;
    write_metrics_csv(&metrics, &dir.join("metrics.csv"))?;
    write_summary_csv(&summary, &dir.join("summary.csv"))?;
    let (times, cols) = gap_curves(&runs, &v_star, &names, horizon);
    write_curves_csv(&times, &names, &cols, &dir.join("curves.csv"))?;

    let mut grids = Vec::new();
    for kind in MODELS {
        if let Ok(t) = read_json::<TunedApproach>(&tuned_path(cfg, kind), "") {
            grids.push((t.approach.clone(), t.grid));
        }
    }
    crate::eval::write_grid_csv(&grids, &dir.join("grid.csv"))?;
    write_atomic(&dir.join("COLUMNS.txt"), COLUMNS.as_bytes()).map_err(|e| PipelineError::io(&dir, e))?;
    let md = summary_markdown(&summary, &cfg.family.family_name().to_string(), horizon);
    write_atomic(&dir.join("summary.md"), md.as_bytes()).map_err(|e| PipelineError::io(&dir, e))?;
    progress(format!("report: written to {}", dir.display()));
    Ok(Report { summary, metrics })
}

/// The summary in the layout `mean (improvement%) | std | wins` per metric.
pub fn summary_markdown(rows: &[SummaryRow], family: &str, horizon: f64) -> String {
    let p = |v: Option<f64>| v.map_or("-".to_string(), |p| format!("{p:.4}"));
    let mut s = format!(
        "# {family}: {} test instances, T = {horizon} s\n\nImprovements and p-values are relative to Plain.\n\n\
         | Approach | PG mean | PG std | PG wins | PG p | PI mean | PI std | PI wins | PI p |\n\
         |---|---|---|---|---|---|---|---|---|\n",
        rows.first().map_or(0, |r| r.instances)
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {:.2} ({:.1}%) | {:.2} | {} | {} | {:.2} ({:.1}%) | {:.2} | {} | {} |\n",
            r.approach,
            r.pg_mean,
            r.pg_improvement,
            r.pg_std,
            r.pg_wins,
            p(r.pg_p),
            r.pi_mean,
            r.pi_improvement,
            r.pi_std,
            r.pi_wins,
            p(r.pi_p)
        ));
    }
    s
}

/// Runs every phase in order.
pub fn run_all(cfg: &RunConfig) -> Result<Report> {
    run_gen(cfg)?;
    run_collect(cfg)?;
    run_train(cfg)?;
    run_tune(cfg)?;
    run_eval(cfg)?;
    run_report(cfg)
}
