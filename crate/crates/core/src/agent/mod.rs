//! The action-perception cycle: perceive a metric window (fulfillment,
//! surprise, model update) and act (score every configuration, pick one).

mod export;

pub use export::{heatmap_csv, trajectory_csv, trajectory_header, write_heatmaps};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayesnet::{
    discretize_batch, infer_indexed, learn_structure, network_variables, update_parameters, Dag,
    Dataset, EdgeBlacklist, GenerativeModel, VarKind, FULFILLED_STATE,
};
use crate::domain::{enumerate_configs, rank_distance, Configuration, MetricBatch, ParameterSpace, SloSpec};
use crate::error::{Error, Result};
use crate::slo::{batch_fulfillment, FulfillmentReport};

/// Uniform prior used before any configuration has been observed.
pub const COLD_PV: f64 = 50.0;
pub const COLD_IG: f64 = 100.0;

/// Per-configuration record of visits and per-batch mean surprise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigStats {
    pub visit_count: usize,
    pub surprise_history: Vec<f64>,
    pub last_fulfillment: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub pv: f64,
    pub ig: f64,
    pub provenance: Provenance,
}

/// pv and ig per grid configuration, in grid order. Partial until
/// [`interpolate_scores`] fills the unobserved cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    configs: Vec<Configuration>,
    entries: Vec<Option<ScoreEntry>>,
}

impl ScoreMatrix {
    pub fn new(space: &ParameterSpace) -> Self {
        let configs = enumerate_configs(space);
        let entries = vec![None; configs.len()];
        ScoreMatrix { configs, entries }
    }

    /// Matrix with every cell set to the same values.
    pub fn uniform(space: &ParameterSpace, pv: f64, ig: f64, provenance: Provenance) -> Self {
        let mut m = Self::new(space);
        m.entries.fill(Some(ScoreEntry { pv, ig, provenance }));
        m
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn entry(&self, index: usize) -> Option<&ScoreEntry> {
        self.entries.get(index).and_then(Option::as_ref)
    }

    pub fn get(&self, config: &Configuration) -> Option<&ScoreEntry> {
        let i = self.configs.iter().position(|c| c == config)?;
        self.entry(i)
    }

    pub fn set_index(&mut self, index: usize, entry: ScoreEntry) {
        self.entries[index] = Some(entry);
    }

    pub fn set(&mut self, config: &Configuration, entry: ScoreEntry) -> Result<()> {
        let i = self
            .configs
            .iter()
            .position(|c| c == config)
            .ok_or_else(|| Error::InvalidConfiguration(format!("{config} is not on the grid")))?;
        self.set_index(i, entry);
        Ok(())
    }

    pub fn is_total(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Configuration, Option<&ScoreEntry>)> {
        self.configs.iter().zip(self.entries.iter().map(Option::as_ref))
    }
}

/// What the per-batch surprise recorded for a configuration measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurpriseScope {
    /// `-ln P(row)` over every variable, parameters included.
    Joint,
    /// `-ln P(slo indicators | parameters)`: how well the model predicted
    /// the outcome of the configuration that was actually applied.
    Outcome,
    /// Outcome surprise minus the outcome entropy the model predicts once
    /// it has learned from the batch, floored at zero. Irreducible noise
    /// cancels, so a noisy but well-understood configuration stops looking
    /// informative.
    #[default]
    Reducible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentHyperparams {
    pub w_pv: f64,
    pub w_ig: f64,
    pub pseudocount: f64,
    pub structure_relearn_period: usize,
    pub window_ms: u64,
    pub seed: u64,
    pub surprise: SurpriseScope,
    /// On a tie between observed configurations that includes the current
    /// one, stay put instead of drawing.
    pub stay_on_tie: bool,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        AgentHyperparams {
            w_pv: 2.0,
            w_ig: 1.0,
            pseudocount: 1.0,
            structure_relearn_period: 5,
            window_ms: 2000,
            seed: 0,
            surprise: SurpriseScope::default(),
            stay_on_tie: true,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.w_pv) || !positive(self.w_ig) {
            return Err(Error::InvalidExperiment("weights must be positive".into()));
        }
        if !positive(self.pseudocount) {
            return Err(Error::InvalidExperiment("pseudocount must be positive".into()));
        }
        if self.structure_relearn_period == 0 {
            return Err(Error::InvalidExperiment(
                "structure_relearn_period must be at least 1".into(),
            ));
        }
        if self.window_ms == 0 {
            return Err(Error::InvalidExperiment("window_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    Observed,
    Interpolated,
    TieBreak,
}

impl Rationale {
    pub fn as_str(self) -> &'static str {
        match self {
            Rationale::Observed => "observed",
            Rationale::Interpolated => "interpolated",
            Rationale::TieBreak => "tie_break",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub cycle: usize,
    pub chosen: Configuration,
    pub pv: f64,
    pub ig: f64,
    pub score: f64,
    /// Fulfillment of the batch perceived just before this decision.
    pub fulfillment: Option<FulfillmentReport>,
    pub rationale: Rationale,
}

impl Decision {
    pub fn fulfillment_observed(&self) -> Option<f64> {
        self.fulfillment.as_ref().map(|f| f.overall)
    }
}

/// Everything the agent carries between cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub model: GenerativeModel,
    pub stats: BTreeMap<Configuration, ConfigStats>,
    pub current: Configuration,
    pub slos: Vec<SloSpec>,
    pub space: ParameterSpace,
    pub hyper: AgentHyperparams,
    pub cycle: usize,
    pub history: Vec<Decision>,
    /// Every discretized row perceived so far, for structure relearning.
    pub data: Dataset,
    pub batches_seen: usize,
    last_fulfillment: Option<FulfillmentReport>,
    rng: ChaCha8Rng,
}

impl AgentState {
    /// Fresh agent: empty DAG, uniform CPTs, positioned at the grid midpoint.
    pub fn new(space: ParameterSpace, slos: Vec<SloSpec>, hyper: AgentHyperparams) -> Result<Self> {
        hyper.validate()?;
        if slos.is_empty() {
            return Err(Error::NoSlos);
        }
        for s in &slos {
            s.validate(Some(&space))?;
        }
        let vars = network_variables(&space, &slos);
        let model = GenerativeModel::uninformed(Dag::empty(vars.clone())?, hyper.pseudocount)?;
        let stats = enumerate_configs(&space)
            .into_iter()
            .map(|c| (c, ConfigStats::default()))
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        Ok(AgentState {
            model,
            stats,
            current: space.midpoint(),
            slos,
            data: Dataset::empty(vars)?,
            space,
            hyper,
            cycle: 0,
            history: Vec::new(),
            batches_seen: 0,
            last_fulfillment: None,
            rng,
        })
    }

    pub fn stats_for(&self, config: &Configuration) -> Option<&ConfigStats> {
        self.stats.get(config)
    }

    pub fn last_fulfillment(&self) -> Option<&FulfillmentReport> {
        self.last_fulfillment.as_ref()
    }

    /// pv/ig for every configuration as [`act`] would see it now.
    pub fn score_matrix(&self) -> Result<ScoreMatrix> {
        build_matrix(self)
    }
}

fn slo_nodes(model: &GenerativeModel) -> Vec<usize> {
    model
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::SloIndicator)
        .map(|(i, _)| i)
        .collect()
}

fn config_evidence(model: &GenerativeModel, config: &Configuration) -> Result<Vec<(usize, usize)>> {
    let mut evidence = Vec::new();
    for (i, v) in model.variables().iter().enumerate() {
        if v.kind != VarKind::Parameter {
            continue;
        }
        let label = config
            .get(&v.name)
            .ok_or_else(|| Error::Schema(format!("{config} assigns no state to `{}`", v.name)))?;
        let s = v
            .state_index(label)
            .ok_or_else(|| Error::Schema(format!("`{label}` is not a state of `{}`", v.name)))?;
        evidence.push((i, s));
    }
    if evidence.len() != config.assignment.len() {
        return Err(Error::Schema(format!(
            "{config} assigns parameters the model does not know"
        )));
    }
    Ok(evidence)
}

/// `100 × P(every SLO fulfilled | config)`.
pub fn compute_pv(model: &GenerativeModel, config: &Configuration, slos: &[SloSpec]) -> Result<f64> {
    let nodes = slo_nodes(model);
    for s in slos {
        if !nodes.iter().any(|&n| model.variables()[n].name == s.name) {
            return Err(Error::Schema(format!("model has no indicator for SLO `{}`", s.name)));
        }
    }
    let query: Vec<usize> = slos
        .iter()
        .map(|s| model.dag().index_of(&s.name).expect("checked above"))
        .collect();
    let evidence = config_evidence(model, config)?;
    let d = infer_indexed(model, &query, &evidence)?;
    let p = d.prob(&vec![FULFILLED_STATE; query.len()]);
    Ok((100.0 * p).clamp(0.0, 100.0))
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median of all surprise values recorded across configurations.
pub fn global_median(stats: &BTreeMap<Configuration, ConfigStats>) -> Option<f64> {
    let mut pooled: Vec<f64> = stats
        .values()
        .flat_map(|s| s.surprise_history.iter().copied())
        .collect();
    median(&mut pooled)
}

/// `100 ×` the configuration's median surprise over the global median.
pub fn compute_ig(stats: &BTreeMap<Configuration, ConfigStats>, config: &Configuration) -> Result<f64> {
    let own = stats
        .get(config)
        .ok_or_else(|| Error::InvalidConfiguration(format!("no statistics for {config}")))?;
    let mut hist = own.surprise_history.clone();
    let local = median(&mut hist)
        .ok_or_else(|| Error::InvalidConfiguration(format!("{config} has no surprise history")))?;
    match global_median(stats) {
        Some(g) if g > 0.0 => Ok(100.0 * local / g),
        _ => Err(Error::DegenerateHistory),
    }
}

/// Fills every unobserved cell with the inverse-distance weighted mean of
/// the nearest observed cells. Observed cells are left as they are.
pub fn interpolate_scores(matrix: &ScoreMatrix, space: &ParameterSpace) -> Result<ScoreMatrix> {
    let ranks: Vec<Vec<usize>> = matrix
        .configs
        .iter()
        .map(|c| space.ranks(c))
        .collect::<Result<_>>()?;
    let observed: Vec<usize> = (0..matrix.len())
        .filter(|&i| matches!(matrix.entry(i), Some(e) if e.provenance == Provenance::Observed))
        .collect();
    if observed.is_empty() {
        return Err(Error::ColdStart);
    }
    let mut out = matrix.clone();
    for i in 0..matrix.len() {
        if observed.contains(&i) {
            continue;
        }
        let dists: Vec<(usize, usize)> = observed
            .iter()
            .map(|&j| (j, rank_distance(&ranks[i], &ranks[j])))
            .collect();
        let dmin = dists.iter().map(|d| d.1).min().expect("observed is non-empty");
        let nearest: Vec<usize> = dists.iter().filter(|d| d.1 == dmin).map(|d| d.0).collect();
        let entry = if let [only] = nearest.as_slice() {
            let e = matrix.entry(*only).expect("observed");
            ScoreEntry {
                provenance: Provenance::Interpolated,
                ..*e
            }
        } else {
            // All nearest cells share one distance, so the inverse-distance
            // weights are equal; kept explicit for clarity.
            let w = 1.0 / dmin as f64;
            let total = w * nearest.len() as f64;
            let (pv, ig) = nearest.iter().fold((0.0, 0.0), |(pv, ig), &j| {
                let e = matrix.entry(j).expect("observed");
                (pv + w * e.pv, ig + w * e.ig)
            });
            ScoreEntry {
                pv: pv / total,
                ig: ig / total,
                provenance: Provenance::Interpolated,
            }
        };
        out.set_index(i, entry);
    }
    Ok(out)
}

/// Result of [`select_action`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub config: Configuration,
    pub score: f64,
    /// Number of configurations sharing the best score.
    pub tied: usize,
}

pub fn score_of(entry: &ScoreEntry, hyper: &AgentHyperparams) -> f64 {
    hyper.w_pv * entry.pv + hyper.w_ig * entry.ig
}

/// Argmax of `w_pv·pv + w_ig·ig`; equal scores are broken uniformly at
/// random. Scores within a relative `1e-9` of the best count as equal, so
/// rescaling both weights keeps the same tie set.
pub fn select_action(matrix: &ScoreMatrix, hyper: &AgentHyperparams, rng: &mut impl Rng) -> Result<Selection> {
    if !matrix.is_total() || matrix.is_empty() {
        return Err(Error::InvalidConfiguration("score matrix must cover the whole grid".into()));
    }
    let scores: Vec<f64> = (0..matrix.len())
        .map(|i| score_of(matrix.entry(i).expect("total"), hyper))
        .collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * best.abs();
    let ties: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= best - tol).collect();
    let index = if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    };
    Ok(Selection {
        index,
        config: matrix.configs[index].clone(),
        score: scores[index],
        tied: ties.len(),
    })
}

fn outcome_surprise(model: &GenerativeModel, rows: &Dataset) -> f64 {
    let slo = slo_nodes(model);
    rows.rows()
        .iter()
        .map(|r| {
            let lp: f64 = slo.iter().map(|&n| model.cpt(n).prob_in_row(&r.states).ln()).sum();
            (-lp).max(0.0)
        })
        .sum()
}

fn predicted_entropy(model: &GenerativeModel, rows: &Dataset) -> f64 {
    let slo = slo_nodes(model);
    rows.rows()
        .iter()
        .map(|r| {
            slo.iter()
                .map(|&n| {
                    let cpt = model.cpt(n);
                    let parents: Vec<usize> = cpt.parents().iter().map(|&p| r.states[p]).collect();
                    cpt.row(&parents).iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Mean per-row surprise of `rows` under `model`; `updated` is the model
/// after learning from `rows` (same structure).
pub fn mean_surprise(
    model: &GenerativeModel,
    updated: &GenerativeModel,
    rows: &Dataset,
    scope: SurpriseScope,
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.check_schema(rows)?;
    let total = match scope {
        SurpriseScope::Joint => crate::bayesnet::batch_surprise(model, rows)?,
        SurpriseScope::Outcome => outcome_surprise(model, rows),
        SurpriseScope::Reducible => (outcome_surprise(model, rows) - predicted_entropy(updated, rows)).max(0.0),
    };
    Ok(total / rows.len() as f64)
}

/// Evaluates the batch, records its surprise against `current`, updates
/// the CPTs and, on schedule, relearns the structure from all rows so far.
/// On error the state is left untouched.
pub fn perceive(state: &mut AgentState, batch: &MetricBatch) -> Result<()> {
    let config = batch.config().ok_or(Error::EmptyBatch)?;
    if *config != state.current {
        return Err(Error::InvalidBatch(format!(
            "batch captured under {config}, agent is at {}",
            state.current
        )));
    }
    let report = batch_fulfillment(batch, &state.slos, &state.space)?;
    let rows = discretize_batch(batch, &state.slos, &state.space)?;
    let updated = update_parameters(&state.model, &rows, state.hyper.pseudocount)?;
    let surprise = mean_surprise(&state.model, &updated, &rows, state.hyper.surprise)?;
    if !surprise.is_finite() {
        return Err(Error::InvalidModel(format!("surprise {surprise} is not finite")));
    }
    let mut data = state.data.clone();
    data.append(&rows)?;
    let batches_seen = state.batches_seen + 1;
    let model = if batches_seen % state.hyper.structure_relearn_period == 0 {
        let dag = learn_structure(&data, &EdgeBlacklist::new());
        crate::bayesnet::fit_parameters(&dag, &data, state.hyper.pseudocount)?
    } else {
        updated
    };

    // Commit.
    let stats = state.stats.get_mut(&state.current).expect("current is on the grid");
    stats.visit_count += 1;
    stats.surprise_history.push(surprise);
    stats.last_fulfillment = Some(report.overall);
    state.model = model;
    state.data = data;
    state.batches_seen = batches_seen;
    state.last_fulfillment = Some(report);
    Ok(())
}

fn build_matrix(state: &AgentState) -> Result<ScoreMatrix> {
    let mut matrix = ScoreMatrix::new(&state.space);
    let degenerate = global_median(&state.stats).is_none_or(|g| g <= 0.0);
    let mut any = false;
    for i in 0..matrix.len() {
        let config = matrix.configs[i].clone();
        let visited = state.stats.get(&config).is_some_and(|s| !s.surprise_history.is_empty());
        if !visited {
            continue;
        }
        any = true;
        let pv = compute_pv(&state.model, &config, &state.slos)?;
        let ig = if degenerate {
            COLD_IG
        } else {
            compute_ig(&state.stats, &config)?
        };
        matrix.set_index(
            i,
            ScoreEntry {
                pv,
                ig,
                provenance: Provenance::Observed,
            },
        );
    }
    if !any {
        return Err(Error::ColdStart);
    }
    interpolate_scores(&matrix, &state.space)
}

/// Scores the grid, picks the next configuration and moves there.
pub fn act(state: &mut AgentState) -> Result<Decision> {
    let (config, entry, rationale) = match build_matrix(state) {
        Ok(matrix) => {
            let mut rng = state.rng.clone();
            let mut sel = select_action(&matrix, &state.hyper, &mut rng)?;
            if sel.tied > 1 && state.hyper.stay_on_tie {
                let tol = 1e-9 * sel.score.abs();
                let tied_observed = (0..matrix.len())
                    .map(|i| matrix.entry(i).expect("total"))
                    .filter(|e| score_of(e, &state.hyper) >= sel.score - tol)
                    .all(|e| e.provenance == Provenance::Observed);
                if let Some(i) = matrix.configs.iter().position(|c| *c == state.current) {
                    let here = score_of(matrix.entry(i).expect("total"), &state.hyper);
                    if tied_observed && here >= sel.score - tol {
                        sel.index = i;
                        sel.config = state.current.clone();
                        sel.score = here;
                    }
                }
            }
            let entry = *matrix.entry(sel.index).expect("total");
            let rationale = if sel.tied > 1 {
                Rationale::TieBreak
            } else {
                match entry.provenance {
                    Provenance::Observed => Rationale::Observed,
                    Provenance::Interpolated => Rationale::Interpolated,
                }
            };
            state.rng = rng;
            (sel.config, entry, rationale)
        }
        Err(Error::ColdStart) => (
            state.space.midpoint(),
            ScoreEntry {
                pv: COLD_PV,
                ig: COLD_IG,
                provenance: Provenance::Interpolated,
            },
            Rationale::TieBreak,
        ),
        Err(e) => return Err(e),
    };
    let decision = Decision {
        cycle: state.cycle,
        chosen: config.clone(),
        pv: entry.pv,
        ig: entry.ig,
        score: score_of(&entry, &state.hyper),
        fulfillment: state.last_fulfillment.clone(),
        rationale,
    };
    state.current = config;
    state.history.push(decision.clone());
    state.cycle += 1;
    Ok(decision)
}

/// Perceive then act; on error the state is left untouched.
pub fn run_cycle(state: &mut AgentState, batch: &MetricBatch) -> Result<Decision> {
    let mut next = state.clone();
    perceive(&mut next, batch)?;
    let d = act(&mut next)?;
    *state = next;
    Ok(d)
}
