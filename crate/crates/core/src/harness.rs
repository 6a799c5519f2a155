//! Experiment runner: drives an agent against the simulator or a recorded
//! trace, writes the artifacts of each run and summarizes suites of runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    act, run_cycle, trajectory_csv, write_heatmaps, AgentHyperparams, AgentState, Decision, Provenance,
    ScoreMatrix, COLD_IG, COLD_PV,
};
use crate::bayesnet::{model_from_json, model_to_json, GenerativeModel, VarKind, FULFILLED_STATE};
use crate::domain::{format_real, read_samples_csv, write_samples_csv, Configuration, MetricBatch, MetricSample};
use crate::error::{Error, Result};
use crate::sim::{
    builtin_devices, builtin_service, generate_batch, true_fulfillment, true_optimum, DeviceCatalog, Scenario,
    ServiceProfile,
};

/// Identical consecutive decisions that count as convergence.
pub const CONVERGENCE_RUN: usize = 5;
/// Oracle samples used for final and optimal fulfillment.
pub const ORACLE_SAMPLES: usize = 10_000;
/// Allowed shortfall against the true optimum for an optimal match.
pub const OPTIMAL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batches come from the calibrated simulator.
    #[default]
    Simulate,
    /// Batches are cut from a recorded sample trace; the trace decides
    /// which configuration each window ran under.
    Replay { trace: PathBuf },
}

fn default_cycles() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub service: String,
    pub device: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    /// Directory for this run's artifacts; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub hyper: AgentHyperparams,
    /// Directory holding `services/`, `profiles/` and `devices.json` to use
    /// instead of the built-in profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(service: &str, device: &str, seed: u64, cycles: usize) -> Self {
        ExperimentConfig {
            service: service.into(),
            device: device.into(),
            seed,
            cycles,
            out: None,
            mode: Mode::Simulate,
            hyper: AgentHyperparams::default(),
            data_dir: None,
        }
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(context, e))
    }

    pub fn label(&self) -> String {
        format!("{} x {} (seed {})", self.service, self.device, self.seed)
    }

    /// Hyperparameters with the experiment seed applied.
    pub fn effective_hyper(&self) -> AgentHyperparams {
        AgentHyperparams {
            seed: self.seed,
            ..self.hyper.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidExperiment("cycles must be at least 1".into()));
        }
        self.effective_hyper().validate()
    }

    /// Resolves the service and device profiles this experiment refers to.
    pub fn scenario(&self) -> Result<Scenario> {
        let hyper = self.effective_hyper();
        let (profile, devices) = match &self.data_dir {
            None => (builtin_service(&self.service)?, builtin_devices()),
            Some(dir) => load_profiles(dir, &self.service)?,
        };
        let device = devices.device(&self.device, &self.service)?;
        Scenario::new(Arc::new(profile), device, hyper.seed, hyper.window_ms)
    }
}

fn load_profiles(dir: &Path, service: &str) -> Result<(ServiceProfile, DeviceCatalog)> {
    let file = format!("{}.json", service.to_lowercase());
    let def = dir.join("services").join(&file);
    let prof = dir.join("profiles").join(&file);
    for p in [&def, &prof] {
        if !p.exists() {
            return Err(Error::ProfileNotFound(p.display().to_string()));
        }
    }
    let devices_path = dir.join("devices.json");
    let text = fs::read_to_string(&devices_path)
        .map_err(|_| Error::ProfileNotFound(devices_path.display().to_string()))?;
    let devices = DeviceCatalog::from_json(&text, &devices_path.display().to_string())?;
    Ok((ServiceProfile::from_files(&def, &prof)?, devices))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trajectory: Vec<Decision>,
    pub model: GenerativeModel,
    /// Scores the agent would act on next.
    pub matrix: ScoreMatrix,
    pub converged: bool,
    pub converged_at: Option<usize>,
    pub chosen: Configuration,
    /// Oracle fulfillment of `chosen` when simulating; the last observed
    /// batch fulfillment when replaying.
    pub final_fulfillment: f64,
    /// True optimum and its fulfillment; simulation only.
    pub optimum: Option<(Configuration, f64)>,
    /// Every file written for this run.
    pub files: Vec<PathBuf>,
}

impl ExperimentResult {
    /// Chosen configuration is the optimum or within tolerance of it.
    pub fn optimal_match(&self) -> Option<bool> {
        self.optimum
            .as_ref()
            .map(|(c, f)| *c == self.chosen || self.final_fulfillment >= f - OPTIMAL_TOLERANCE)
    }
}

/// Start of the trailing run of identical choices if it is long enough.
pub fn convergence(history: &[Decision]) -> Option<usize> {
    let last = &history.last()?.chosen;
    let run = history.iter().rev().take_while(|d| &d.chosen == last).count();
    (run >= CONVERGENCE_RUN).then(|| history[history.len() - run].cycle)
}

/// Cuts a trace into windows of `window_ms` from its first timestamp.
/// Empty windows are skipped; a trailing window whose samples do not span
/// the whole window is dropped. Every window must hold a single
/// configuration.
pub fn window_trace(samples: &[MetricSample], window_ms: u64, path: &Path) -> Result<Vec<MetricBatch>> {
    let mismatch = |detail: String| Error::ReplaySchemaMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if window_ms == 0 {
        return Err(Error::InvalidExperiment("window_ms must be positive".into()));
    }
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.timestamp_ms;
    let mut groups: Vec<(u64, Vec<MetricSample>)> = Vec::new();
    for s in samples {
        if s.timestamp_ms < t0 {
            return Err(mismatch(format!("timestamp {} precedes the first sample", s.timestamp_ms)));
        }
        let w = (s.timestamp_ms - t0) / window_ms;
        match groups.last_mut() {
            Some((k, g)) if *k == w => g.push(s.clone()),
            Some((k, _)) if *k > w => {
                return Err(mismatch(format!("timestamp {} goes back in time", s.timestamp_ms)));
            }
            _ => groups.push((w, vec![s.clone()])),
        }
    }
    if let Some((k, g)) = groups.last() {
        let start = t0 + k * window_ms;
        let span = g.last().expect("non-empty").timestamp_ms - start;
        let n = g.len() as u64;
        // Evenly spaced samples over a full window leave a gap of one
        // sample period after the last one.
        if span + window_ms.div_ceil(n) < window_ms {
            groups.pop();
        }
    }
    groups
        .into_iter()
        .map(|(k, g)| {
            MetricBatch::new(g, window_ms).map_err(|e| mismatch(format!("window {k}: {e}")))
        })
        .collect()
}

fn read_trace(path: &Path, sc: &Scenario) -> Result<Vec<MetricSample>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let samples = read_samples_csv(file, sc.space(), &path.display().to_string()).map_err(|e| {
        Error::ReplaySchemaMismatch {
            path: path.to_path_buf(),
            detail: match e {
                Error::Parse { message, .. } => message,
                other => other.to_string(),
            },
        }
    })?;
    if let Some(s) = samples.first() {
        for slo in sc.slos() {
            if !s.values.contains_key(&slo.metric) {
                return Err(Error::ReplaySchemaMismatch {
                    path: path.to_path_buf(),
                    detail: format!("no column for metric `{}` of SLO `{}`", slo.metric, slo.name),
                });
            }
        }
    }
    Ok(samples)
}

fn write_file(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|source| Error::UnwritableOutput {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

/// Runs one experiment. Decision 0 is the cold-start action; every further
/// decision follows one perceived window, so `cycles` decisions consume
/// `cycles - 1` windows.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let sc = config.scenario()?;
    let hyper = config.effective_hyper();
    let mut state = AgentState::new(sc.space().clone(), sc.slos().to_vec(), hyper)?;
    let mut observed: Vec<MetricSample> = Vec::new();
    act(&mut state)?;
    match &config.mode {
        Mode::Simulate => {
            for k in 1..config.cycles {
                let batch = generate_batch(&sc, &state.current.clone(), k as u64)?;
                run_cycle(&mut state, &batch)?;
                observed.extend_from_slice(batch.samples());
            }
        }
        Mode::Replay { trace } => {
            let samples = read_trace(trace, &sc)?;
            let batches = window_trace(&samples, sc.window_ms, trace)?;
            for batch in batches.iter().take(config.cycles - 1) {
                state.current = batch.config().expect("windows are non-empty").clone();
                run_cycle(&mut state, batch)?;
                observed.extend_from_slice(batch.samples());
            }
        }
    }

    let matrix = match state.score_matrix() {
        Err(Error::ColdStart) => ScoreMatrix::uniform(sc.space(), COLD_PV, COLD_IG, Provenance::Interpolated),
        other => other?,
    };
    let chosen = state.current.clone();
    let (final_fulfillment, optimum) = match config.mode {
        Mode::Simulate => (
            true_fulfillment(&sc, &chosen, ORACLE_SAMPLES)?,
            Some(true_optimum(&sc, ORACLE_SAMPLES)?),
        ),
        Mode::Replay { .. } => (state.last_fulfillment().map_or(0.0, |f| f.overall), None),
    };
    let converged_at = convergence(&state.history);

    let mut files = Vec::new();
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir).map_err(|source| Error::UnwritableOutput {
            path: dir.clone(),
            source,
        })?;
        let slos = sc.slos();
        write_file(
            dir.join("trajectory.csv"),
            &trajectory_csv(&state.history, sc.space(), slos)?,
            &mut files,
        )?;
        write_file(dir.join("model.json"), &model_to_json(&state.model), &mut files)?;
        write_file(dir.join("dag.dot"), &state.model.dag().to_dot(), &mut files)?;
        files.extend(write_heatmaps(&matrix, sc.space(), dir)?);
        let mut metrics = Vec::new();
        write_samples_csv(&mut metrics, sc.space(), sc.service.metrics(), &observed)?;
        write_file(
            dir.join("metrics.csv"),
            std::str::from_utf8(&metrics).expect("csv output is utf-8"),
            &mut files,
        )?;
    }

    Ok(ExperimentResult {
        config: config.clone(),
        trajectory: state.history,
        model: state.model,
        matrix,
        converged: converged_at.is_some(),
        converged_at,
        chosen,
        final_fulfillment,
        optimum,
        files,
    })
}

/// One line of the suite summary. Failed experiments keep their row with
/// empty result fields and the reason in `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub service: String,
    pub device: String,
    pub seed: u64,
    pub chosen: Option<Configuration>,
    pub final_fulfillment: Option<f64>,
    pub converged_at: Option<usize>,
    pub optimal_match: Option<bool>,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn from_result(r: &ExperimentResult) -> Self {
        SummaryRow {
            service: r.config.service.clone(),
            device: r.config.device.clone(),
            seed: r.config.seed,
            chosen: Some(r.chosen.clone()),
            final_fulfillment: Some(r.final_fulfillment),
            converged_at: r.converged_at,
            optimal_match: r.optimal_match(),
            error: None,
        }
    }

    fn failed(config: &ExperimentConfig, e: &Error) -> Self {
        SummaryRow {
            service: config.service.clone(),
            device: config.device.clone(),
            seed: config.seed,
            chosen: None,
            final_fulfillment: None,
            converged_at: None,
            optimal_match: None,
            error: Some(e.to_string()),
        }
    }
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "service",
    "device",
    "chosen_config",
    "final_fulfillment",
    "converged_at",
    "optimal_match",
];

/// Summary CSV, one row per experiment in input order.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.service.clone(),
            r.device.clone(),
            r.chosen.as_ref().map(ToString::to_string).unwrap_or_default(),
            r.final_fulfillment.map(format_real).unwrap_or_default(),
            r.converged_at.map(|c| c.to_string()).unwrap_or_default(),
            r.optimal_match.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidBatch(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug)]
pub struct SuiteReport {
    pub rows: Vec<SummaryRow>,
    pub results: Vec<Result<ExperimentResult>>,
    pub files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = (&SummaryRow, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.error.as_deref().map(|e| (r, e)))
    }
}

/// Directory name for one experiment inside a suite output directory.
pub fn run_dir_name(config: &ExperimentConfig) -> String {
    format!("{}_{}_s{}", config.service, config.device, config.seed)
}

/// Runs every experiment on a pool of `parallelism` threads. Experiments
/// without their own output directory write under `out`. A failing
/// experiment is reported in its row and does not stop the others.
pub fn run_suite(configs: &[ExperimentConfig], parallelism: usize, out: Option<&Path>) -> Result<SuiteReport> {
    if configs.is_empty() {
        return Err(Error::InvalidExperiment("suite has no experiments".into()));
    }
    if parallelism == 0 {
        return Err(Error::InvalidExperiment("parallelism must be at least 1".into()));
    }
    let configs: Vec<ExperimentConfig> = configs
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if c.out.is_none() {
                c.out = out.map(|o| o.join(run_dir_name(&c)));
            }
            c
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidExperiment(format!("thread pool: {e}")))?;
    let results: Vec<Result<ExperimentResult>> = pool.install(|| configs.par_iter().map(run_experiment).collect());
    let rows: Vec<SummaryRow> = configs
        .iter()
        .zip(&results)
        .map(|(c, r)| match r {
            Ok(r) => SummaryRow::from_result(r),
            Err(e) => SummaryRow::failed(c, e),
        })
        .collect();
    let mut files = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| Error::UnwritableOutput {
            path: dir.to_path_buf(),
            source,
        })?;
        write_file(dir.join("summary.csv"), &summary_csv(&rows)?, &mut files)?;
        let errors: Vec<&SummaryRow> = rows.iter().filter(|r| r.error.is_some()).collect();
        if !errors.is_empty() {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["service", "device", "seed", "error"])?;
            for r in errors {
                w.write_record([
                    r.service.as_str(),
                    r.device.as_str(),
                    &r.seed.to_string(),
                    r.error.as_deref().unwrap_or_default(),
                ])?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidBatch(format!("csv flush: {e}")))?;
            write_file(
                dir.join("errors.csv"),
                &String::from_utf8(bytes).expect("csv output is utf-8"),
                &mut files,
            )?;
        }
    }
    Ok(SuiteReport { rows, results, files })
}

/// A suite file: explicit experiments, a service × device × seed grid, or
/// both (explicit ones first).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub experiments: Vec<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<SuiteGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteGrid {
    pub services: Vec<String>,
    pub devices: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default)]
    pub hyper: AgentHyperparams,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl SuiteConfig {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(context, e))
    }

    /// The twelve calibrated service × device scenarios.
    pub fn calibrated(seeds: &[u64], cycles: usize) -> Self {
        SuiteConfig {
            experiments: Vec::new(),
            grid: Some(SuiteGrid {
                services: crate::sim::SERVICE_IDS.map(String::from).to_vec(),
                devices: crate::sim::DEVICE_IDS.map(String::from).to_vec(),
                seeds: seeds.to_vec(),
                cycles,
                hyper: AgentHyperparams::default(),
            }),
            parallelism: None,
        }
    }

    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = self.experiments.clone();
        if let Some(g) = &self.grid {
            for s in &g.services {
                for d in &g.devices {
                    for &seed in &g.seeds {
                        out.push(ExperimentConfig {
                            hyper: g.hyper.clone(),
                            ..ExperimentConfig::new(s, d, seed, g.cycles)
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub edges: Vec<(String, String)>,
    pub text: String,
    pub dot: String,
}

/// Human-readable summary of a model: variables, learned edges and the
/// fulfillment probability of every SLO per parent combination.
pub fn describe_model(model: &GenerativeModel) -> InspectReport {
    let vars = model.variables();
    let mut text = String::new();
    let _ = writeln!(text, "variables ({}), trained on {} rows:", vars.len(), model.trained_on());
    for v in vars {
        let kind = match v.kind {
            VarKind::Parameter => "parameter",
            VarKind::SloIndicator => "slo",
        };
        let _ = writeln!(text, "  {} [{kind}]: {}", v.name, v.states.join(", "));
    }
    let edges = model.dag().edge_names();
    if edges.is_empty() {
        let _ = writeln!(text, "edges: none (no dependencies learned)");
    } else {
        let _ = writeln!(text, "edges ({}):", edges.len());
        for (p, c) in &edges {
            let _ = writeln!(text, "  {p} -> {c}");
        }
    }
    for cpt in model.cpts() {
        let node = &vars[cpt.node()];
        if node.kind != VarKind::SloIndicator {
            continue;
        }
        let _ = writeln!(text, "P({} = fulfilled | parents):", node.name);
        for combo in 0..cpt.combinations() {
            let parents: Vec<String> = cpt
                .parents()
                .iter()
                .zip(cpt.combo_states(combo))
                .map(|(&p, s)| format!("{}={}", vars[p].name, vars[p].states[s]))
                .collect();
            let label = if parents.is_empty() {
                "(none)".to_string()
            } else {
                parents.join(", ")
            };
            let p = cpt.probs()[combo * cpt.cardinality() + FULFILLED_STATE];
            let _ = writeln!(text, "  {label}: {p:.4}");
        }
    }
    InspectReport {
        edges,
        text,
        dot: model.dag().to_dot(),
    }
}

pub fn inspect_model(path: &Path) -> Result<InspectReport> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model = model_from_json(&text, &path.display().to_string())?;
    Ok(describe_model(&model))
}
