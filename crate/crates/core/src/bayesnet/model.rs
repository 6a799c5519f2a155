use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dag::{Dag, VariableDef};
use super::data::{Dataset, ObservationRow};
use crate::error::{Error, Result};

/// Conditional probability table of one node. Parent combinations are
/// indexed in mixed radix over `parents` (ascending variable index, last
/// parent varying fastest); `probs[combo * card + state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    node: usize,
    parents: Vec<usize>,
    parent_cards: Vec<usize>,
    card: usize,
    counts: Option<Vec<u64>>,
    probs: Vec<f64>,
}

impl Cpt {
    pub(crate) fn zeroed(dag: &Dag, node: usize) -> Self {
        let parents = dag.parents(node);
        let parent_cards: Vec<usize> = parents
            .iter()
            .map(|&p| dag.nodes()[p].cardinality())
            .collect();
        let card = dag.nodes()[node].cardinality();
        let combos: usize = parent_cards.iter().product();
        Cpt {
            node,
            parents,
            parent_cards,
            card,
            counts: Some(vec![0; combos * card]),
            probs: vec![1.0 / card as f64; combos * card],
        }
    }

    pub(crate) fn from_probs(dag: &Dag, node: usize, probs: Vec<f64>) -> Result<Self> {
        let mut cpt = Cpt::zeroed(dag, node);
        if probs.len() != cpt.probs.len() {
            return Err(Error::InvalidModel(format!(
                "CPT of `{}` has {} entries, expected {}",
                dag.nodes()[node].name,
                probs.len(),
                cpt.probs.len()
            )));
        }
        cpt.counts = None;
        cpt.probs = probs;
        cpt.check(&dag.nodes()[node].name)?;
        Ok(cpt)
    }

    /// Attaches counts to a table read from disk. The stored probabilities
    /// are kept as-is.
    pub(crate) fn with_counts(mut self, counts: Vec<u64>) -> Self {
        debug_assert_eq!(counts.len(), self.probs.len());
        self.counts = Some(counts);
        self
    }

    fn check(&self, name: &str) -> Result<()> {
        for (combo, row) in self.probs.chunks(self.card).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "CPT row {combo} of `{name}` is not a positive distribution"
                )));
            }
        }
        Ok(())
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn cardinality(&self) -> usize {
        self.card
    }

    pub fn combinations(&self) -> usize {
        self.probs.len() / self.card
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Combination index of the parents' states in a complete row.
    pub(crate) fn combo_in_row(&self, states: &[usize]) -> usize {
        self.parents
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&p, &c)| acc * c + states[p])
    }

    /// Parent states (in `parents` order) for a combination index.
    pub fn combo_states(&self, mut combo: usize) -> Vec<usize> {
        let mut out = vec![0; self.parents.len()];
        for (slot, &c) in out.iter_mut().zip(&self.parent_cards).rev() {
            *slot = combo % c;
            combo /= c;
        }
        out
    }

    /// Distribution of the node given parent states in `parents` order.
    pub fn row(&self, parent_states: &[usize]) -> &[f64] {
        let combo = parent_states
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&s, &c)| acc * c + s);
        &self.probs[combo * self.card..(combo + 1) * self.card]
    }

    /// `P(x_node | x_parents)` read off a complete row.
    pub fn prob_in_row(&self, states: &[usize]) -> f64 {
        self.probs[self.combo_in_row(states) * self.card + states[self.node]]
    }

    fn recompute(&mut self, pseudocount: f64) {
        let Some(counts) = &self.counts else { return };
        for (probs, counts) in self.probs.chunks_mut(self.card).zip(counts.chunks(self.card)) {
            let total: u64 = counts.iter().sum();
            let denom = total as f64 + pseudocount * self.card as f64;
            for (p, &n) in probs.iter_mut().zip(counts) {
                *p = (n as f64 + pseudocount) / denom;
            }
        }
    }
}

/// DAG plus one CPT per node: the agent's model of the service.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    dag: Dag,
    cpts: Vec<Cpt>,
    trained_on: usize,
    pseudocount: f64,
}

impl GenerativeModel {
    /// Model with no data: every CPT row uniform.
    pub fn uninformed(dag: Dag, pseudocount: f64) -> Result<Self> {
        check_pseudocount(pseudocount)?;
        let cpts = (0..dag.len()).map(|i| Cpt::zeroed(&dag, i)).collect();
        Ok(GenerativeModel {
            dag,
            cpts,
            trained_on: 0,
            pseudocount,
        })
    }

    /// Model from explicit probability tables, one per node in node order.
    /// Such a model carries no counts and cannot be updated incrementally.
    pub fn from_tables(dag: Dag, tables: Vec<Vec<f64>>, trained_on: usize) -> Result<Self> {
        if tables.len() != dag.len() {
            return Err(Error::InvalidModel(format!(
                "{} tables for {} nodes",
                tables.len(),
                dag.len()
            )));
        }
        let cpts = tables
            .into_iter()
            .enumerate()
            .map(|(i, t)| Cpt::from_probs(&dag, i, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(GenerativeModel {
            dag,
            cpts,
            trained_on,
            pseudocount: 0.0,
        })
    }

    pub(crate) fn from_parts(dag: Dag, cpts: Vec<Cpt>, trained_on: usize, pseudocount: f64) -> Self {
        GenerativeModel {
            dag,
            cpts,
            trained_on,
            pseudocount,
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn variables(&self) -> &[VariableDef] {
        self.dag.nodes()
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    pub fn cpt(&self, node: usize) -> &Cpt {
        &self.cpts[node]
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn pseudocount(&self) -> f64 {
        self.pseudocount
    }

    /// `ln P(row | model)` from the DAG factorization.
    pub fn log_prob(&self, row: &ObservationRow) -> f64 {
        self.cpts.iter().map(|c| c.prob_in_row(&row.states).ln()).sum()
    }

    pub(crate) fn check_schema(&self, data: &Dataset) -> Result<()> {
        if data.variables() != self.dag.nodes() {
            return Err(Error::Schema(
                "dataset variables differ from model variables".into(),
            ));
        }
        Ok(())
    }
}

fn check_pseudocount(pseudocount: f64) -> Result<()> {
    if !(pseudocount > 0.0) || !pseudocount.is_finite() {
        return Err(Error::InvalidModel(format!(
            "pseudocount must be positive, got {pseudocount}"
        )));
    }
    Ok(())
}

/// Laplace-smoothed maximum-likelihood CPTs for `dag` on `data`.
pub fn fit_parameters(dag: &Dag, data: &Dataset, pseudocount: f64) -> Result<GenerativeModel> {
    let model = GenerativeModel::uninformed(dag.clone(), pseudocount)?;
    update_parameters(&model, data, pseudocount)
}

/// Adds the counts of `new` to the model's sufficient statistics and
/// re-derives the CPTs; equal to refitting on all data seen so far.
pub fn update_parameters(
    model: &GenerativeModel,
    new: &Dataset,
    pseudocount: f64,
) -> Result<GenerativeModel> {
    check_pseudocount(pseudocount)?;
    model.check_schema(new)?;
    let mut out = model.clone();
    out.pseudocount = pseudocount;
    for cpt in &mut out.cpts {
        let card = cpt.card;
        let node = cpt.node;
        let combos: Vec<usize> = new.rows().iter().map(|r| cpt.combo_in_row(&r.states)).collect();
        let counts = cpt.counts.as_mut().ok_or_else(|| {
            Error::InvalidModel("model has no counts; refit instead of updating".into())
        })?;
        for (row, combo) in new.rows().iter().zip(combos) {
            counts[combo * card + row.states[node]] += 1;
        }
        cpt.recompute(pseudocount);
    }
    out.trained_on += new.len();
    Ok(out)
}

/// `-ln P(row | model)`.
pub fn row_surprise(model: &GenerativeModel, row: &ObservationRow) -> f64 {
    // Rounding can leave -0.0 or a tiny negative for a probability-1 row.
    (-model.log_prob(row)).max(0.0)
}

/// Sum of row surprises.
pub fn batch_surprise(model: &GenerativeModel, rows: &Dataset) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.check_schema(rows)?;
    Ok(rows.rows().iter().map(|r| row_surprise(model, r)).sum())
}

/// Ancestral sampling of `n` complete rows.
pub fn sample_model(model: &GenerativeModel, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = model.dag.topological_order();
    let vars = model.variables().to_vec();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut states = vec![0usize; vars.len()];
        for &node in &order {
            let cpt = &model.cpts[node];
            let combo = cpt.combo_in_row(&states);
            let probs = &cpt.probs[combo * cpt.card..(combo + 1) * cpt.card];
            states[node] = draw(probs, rng.random::<f64>());
        }
        rows.push(ObservationRow { states });
    }
    Dataset::new(vars, rows)
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}
