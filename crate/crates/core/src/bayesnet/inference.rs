//! Exact posterior queries by sum-product variable elimination.

use std::collections::BTreeMap;

use super::model::GenerativeModel;
use crate::error::{Error, Result};

/// Table over a set of variables; `vars` ascending, last variable varying
/// fastest in `values`.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn unit() -> Self {
        Factor {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![1.0],
        }
    }

    fn from_cpt(model: &GenerativeModel, node: usize) -> Self {
        let cpt = model.cpt(node);
        let mut vars: Vec<usize> = cpt.parents().to_vec();
        vars.push(node);
        vars.sort_unstable();
        let cards: Vec<usize> = vars
            .iter()
            .map(|&v| model.variables()[v].cardinality())
            .collect();
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut full = vec![0usize; model.variables().len()];
        for idx in 0..size {
            for (v, s) in vars.iter().zip(unravel(idx, &cards)) {
                full[*v] = s;
            }
            values.push(cpt.prob_in_row(&full));
        }
        Factor { vars, cards, values }
    }

    fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    /// Fixes `var` to `state`, dropping it from the scope.
    fn reduce(&self, var: usize, state: usize) -> Factor {
        let Some(pos) = self.position(var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        for idx in 0..size {
            let mut states = unravel(idx, &cards);
            states.insert(pos, state);
            values.push(self.values[ravel(&states, &self.cards)]);
        }
        Factor { vars, cards, values }
    }

    fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| {
                self.position(*v)
                    .map(|p| self.cards[p])
                    .or_else(|| other.position(*v).map(|p| other.cards[p]))
                    .expect("variable from one of the operands")
            })
            .collect();
        let map_a: Vec<usize> = self.vars.iter().map(|v| vars.binary_search(v).unwrap()).collect();
        let map_b: Vec<usize> = other.vars.iter().map(|v| vars.binary_search(v).unwrap()).collect();
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut sa = vec![0; self.vars.len()];
        let mut sb = vec![0; other.vars.len()];
        for idx in 0..size {
            let states = unravel(idx, &cards);
            for (slot, &m) in sa.iter_mut().zip(&map_a) {
                *slot = states[m];
            }
            for (slot, &m) in sb.iter_mut().zip(&map_b) {
                *slot = states[m];
            }
            values.push(self.values[ravel(&sa, &self.cards)] * other.values[ravel(&sb, &other.cards)]);
        }
        Factor { vars, cards, values }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.position(var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let size: usize = cards.iter().product();
        let mut values = vec![0.0; size];
        for (idx, v) in self.values.iter().enumerate() {
            let mut states = unravel(idx, &self.cards);
            states.remove(pos);
            values[ravel(&states, &cards)] += v;
        }
        Factor { vars, cards, values }
    }
}

fn unravel(mut idx: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    for (slot, &c) in out.iter_mut().zip(cards).rev() {
        *slot = idx % c;
        idx /= c;
    }
    out
}

fn ravel(states: &[usize], cards: &[usize]) -> usize {
    states.iter().zip(cards).fold(0, |acc, (&s, &c)| acc * c + s)
}

/// Joint distribution over the query variables, in query order; the last
/// query variable varies fastest in `probs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub variables: Vec<String>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn prob(&self, states: &[usize]) -> f64 {
        self.probs[ravel(states, &self.cards)]
    }
}

/// Posterior of `query` given `evidence` (variable → state label).
pub fn infer(
    model: &GenerativeModel,
    query: &[&str],
    evidence: &BTreeMap<String, String>,
) -> Result<Distribution> {
    let vars = model.variables();
    let lookup = |name: &str| {
        vars.iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown variable `{name}`")))
    };
    let mut query_idx = Vec::with_capacity(query.len());
    for q in query {
        let i = lookup(q)?;
        if query_idx.contains(&i) {
            return Err(Error::Schema(format!("variable `{q}` queried twice")));
        }
        query_idx.push(i);
    }
    let mut evidence_idx = Vec::with_capacity(evidence.len());
    for (name, label) in evidence {
        let i = lookup(name)?;
        if query_idx.contains(&i) {
            return Err(Error::Schema(format!(
                "variable `{name}` is both queried and observed"
            )));
        }
        let s = vars[i]
            .state_index(label)
            .ok_or_else(|| Error::Schema(format!("`{label}` is not a state of `{name}`")))?;
        evidence_idx.push((i, s));
    }
    infer_indexed(model, &query_idx, &evidence_idx)
}

/// Index-based form of [`infer`]; `evidence` pairs are (variable, state).
pub fn infer_indexed(
    model: &GenerativeModel,
    query: &[usize],
    evidence: &[(usize, usize)],
) -> Result<Distribution> {
    let n = model.variables().len();
    let mut factors: Vec<Factor> = (0..n)
        .map(|node| {
            evidence
                .iter()
                .fold(Factor::from_cpt(model, node), |f, &(v, s)| f.reduce(v, s))
        })
        .collect();

    let mut hidden: Vec<usize> = (0..n)
        .filter(|v| !query.contains(v) && !evidence.iter().any(|e| e.0 == *v))
        .collect();
    while !hidden.is_empty() {
        // Greedy min-size: eliminate the variable whose joined factor is smallest.
        let (pick, var) = hidden
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut scope: Vec<usize> = factors
                    .iter()
                    .filter(|f| f.position(v).is_some())
                    .flat_map(|f| f.vars.iter().copied())
                    .collect();
                scope.sort_unstable();
                scope.dedup();
                let size: usize = scope.iter().map(|&u| model.variables()[u].cardinality()).product();
                (size, i, v)
            })
            .min()
            .map(|(_, i, v)| (i, v))
            .expect("hidden is non-empty");
        hidden.swap_remove(pick);
        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.position(var).is_some());
        factors = rest;
        let joined = touching.iter().fold(Factor::unit(), |acc, f| acc.product(f));
        factors.push(joined.sum_out(var));
    }

    let joint = factors.iter().fold(Factor::unit(), |acc, f| acc.product(f));
    let total: f64 = joint.values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidModel("evidence has zero probability".into()));
    }
    // `joint.vars` is ascending; reorder to the caller's query order.
    let cards: Vec<usize> = query.iter().map(|&q| model.variables()[q].cardinality()).collect();
    let size: usize = cards.iter().product();
    let mut probs = Vec::with_capacity(size);
    let mut sorted_states = vec![0; joint.vars.len()];
    for idx in 0..size {
        let states = unravel(idx, &cards);
        for (q, s) in query.iter().zip(&states) {
            sorted_states[joint.position(*q).expect("query variable survives")] = *s;
        }
        probs.push(joint.values[ravel(&sorted_states, &joint.cards)] / total);
    }
    Ok(Distribution {
        variables: query
            .iter()
            .map(|&q| model.variables()[q].name.clone())
            .collect(),
        cards,
        probs,
    })
}
