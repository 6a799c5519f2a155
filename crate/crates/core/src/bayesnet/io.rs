//! JSON persistence of generative models.
//!
//! ```json
//! {"variables": [...], "edges": [["fps", "time"]],
//!  "cpts": {"time": {"parents": ["fps"], "table": {"fps=5": [0.2, 0.8]}}},
//!  "trained_on": 120}
//! ```
//!
//! Models written by this crate also carry `counts` per CPT and the
//! `pseudocount`, so a reloaded model can keep learning incrementally.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dag::{Dag, VariableDef};
use super::model::{Cpt, GenerativeModel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    variables: Vec<VariableDef>,
    edges: Vec<[String; 2]>,
    cpts: BTreeMap<String, CptFile>,
    trained_on: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pseudocount: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CptFile {
    parents: Vec<String>,
    table: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<BTreeMap<String, Vec<u64>>>,
}

fn combo_key(model_vars: &[VariableDef], cpt: &Cpt, combo: usize) -> String {
    cpt.parents()
        .iter()
        .zip(cpt.combo_states(combo))
        .map(|(&p, s)| format!("{}={}", model_vars[p].name, model_vars[p].states[s]))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn model_to_json(model: &GenerativeModel) -> String {
    let vars = model.variables();
    let mut cpts = BTreeMap::new();
    for cpt in model.cpts() {
        let card = cpt.cardinality();
        let mut table = BTreeMap::new();
        let mut counts = cpt.counts().map(|_| BTreeMap::new());
        for combo in 0..cpt.combinations() {
            let key = combo_key(vars, cpt, combo);
            table.insert(key.clone(), cpt.probs()[combo * card..(combo + 1) * card].to_vec());
            if let (Some(out), Some(c)) = (counts.as_mut(), cpt.counts()) {
                out.insert(key, c[combo * card..(combo + 1) * card].to_vec());
            }
        }
        cpts.insert(
            vars[cpt.node()].name.clone(),
            CptFile {
                parents: cpt.parents().iter().map(|&p| vars[p].name.clone()).collect(),
                table,
                counts,
            },
        );
    }
    let file = ModelFile {
        variables: vars.to_vec(),
        edges: model
            .dag()
            .edge_names()
            .into_iter()
            .map(|(p, c)| [p, c])
            .collect(),
        cpts,
        trained_on: model.trained_on(),
        pseudocount: (model.pseudocount() > 0.0).then_some(model.pseudocount()),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_json(text: &str, context: &str) -> Result<GenerativeModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    let bad = |message: String| Error::Parse {
        context: context.to_string(),
        message,
    };
    let edges: Vec<(&str, &str)> = file
        .edges
        .iter()
        .map(|[p, c]| (p.as_str(), c.as_str()))
        .collect();
    let dag = Dag::with_edges(file.variables.clone(), &edges).map_err(|e| bad(format!("edges: {e}")))?;

    let mut cpts = Vec::with_capacity(dag.len());
    let mut all_counts = Vec::with_capacity(dag.len());
    for (node, var) in dag.nodes().iter().enumerate() {
        let entry = file
            .cpts
            .get(&var.name)
            .ok_or_else(|| bad(format!("cpts: missing entry for `{}`", var.name)))?;
        let expected: Vec<String> = dag
            .parents(node)
            .iter()
            .map(|&p| dag.nodes()[p].name.clone())
            .collect();
        let mut given = entry.parents.clone();
        given.sort_by_key(|n| dag.index_of(n));
        if given != expected || entry.parents.len() != expected.len() {
            return Err(bad(format!(
                "cpts.{}.parents: {:?} does not match edges {:?}",
                var.name, entry.parents, expected
            )));
        }
        let probe = Cpt::zeroed(&dag, node);
        if entry.table.len() != probe.combinations() {
            return Err(bad(format!(
                "cpts.{}.table: {} rows, expected {}",
                var.name,
                entry.table.len(),
                probe.combinations()
            )));
        }
        let mut probs = Vec::with_capacity(probe.probs().len());
        let mut counts = entry.counts.as_ref().map(|_| Vec::new());
        for combo in 0..probe.combinations() {
            let key = combo_key(dag.nodes(), &probe, combo);
            let row = entry
                .table
                .get(&key)
                .ok_or_else(|| bad(format!("cpts.{}.table: missing row `{key}`", var.name)))?;
            if row.len() != var.cardinality() {
                return Err(bad(format!(
                    "cpts.{}.table[{key}]: {} entries, expected {}",
                    var.name,
                    row.len(),
                    var.cardinality()
                )));
            }
            probs.extend_from_slice(row);
            if let (Some(out), Some(src)) = (counts.as_mut(), entry.counts.as_ref()) {
                let c = src
                    .get(&key)
                    .filter(|c| c.len() == var.cardinality())
                    .ok_or_else(|| bad(format!("cpts.{}.counts[{key}] missing or malformed", var.name)))?;
                out.extend_from_slice(c);
            }
        }
        cpts.push(Cpt::from_probs(&dag, node, probs).map_err(|e| bad(e.to_string()))?);
        all_counts.push(counts);
    }

    let pseudocount = file.pseudocount.unwrap_or(0.0);
    let cpts = cpts
        .into_iter()
        .zip(all_counts)
        .map(|(cpt, counts)| match counts {
            Some(c) if pseudocount > 0.0 => cpt.with_counts(c),
            _ => cpt,
        })
        .collect();
    Ok(GenerativeModel::from_parts(dag, cpts, file.trained_on, pseudocount))
}
