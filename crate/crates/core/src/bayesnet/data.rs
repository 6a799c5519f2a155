use serde::{Deserialize, Serialize};

use super::dag::{validate_variables, VariableDef, FULFILLED_STATE};
use crate::domain::{MetricBatch, ParameterSpace, SloSpec};
use crate::error::{Error, Result};
use crate::slo::sample_fulfills;

/// A complete assignment: `states[i]` is the state index of variable `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationRow {
    pub states: Vec<usize>,
}

impl ObservationRow {
    pub fn new(states: Vec<usize>) -> Self {
        ObservationRow { states }
    }

    /// Builds a row from `(variable, label)` pairs covering every variable.
    pub fn from_labels(vars: &[VariableDef], assignment: &[(&str, &str)]) -> Result<Self> {
        let mut states = vec![usize::MAX; vars.len()];
        for (name, label) in assignment {
            let i = vars
                .iter()
                .position(|v| v.name == *name)
                .ok_or_else(|| Error::Schema(format!("unknown variable `{name}`")))?;
            states[i] = vars[i]
                .state_index(label)
                .ok_or_else(|| Error::Schema(format!("`{label}` is not a state of `{name}`")))?;
        }
        if let Some(i) = states.iter().position(|&s| s == usize::MAX) {
            return Err(Error::Schema(format!(
                "row does not assign `{}`",
                vars[i].name
            )));
        }
        Ok(ObservationRow { states })
    }

    pub fn label<'a>(&self, vars: &'a [VariableDef], var: usize) -> &'a str {
        &vars[var].states[self.states[var]]
    }
}

/// Discretized observations over a fixed variable list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    variables: Vec<VariableDef>,
    rows: Vec<ObservationRow>,
}

impl Dataset {
    pub fn new(variables: Vec<VariableDef>, rows: Vec<ObservationRow>) -> Result<Self> {
        validate_variables(&variables)?;
        let ds = Dataset {
            variables,
            rows: Vec::new(),
        };
        let mut ds = ds;
        ds.extend(rows)?;
        Ok(ds)
    }

    pub fn empty(variables: Vec<VariableDef>) -> Result<Self> {
        Self::new(variables, Vec::new())
    }

    pub fn variables(&self) -> &[VariableDef] {
        &self.variables
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn check_row(&self, row: &ObservationRow) -> Result<()> {
        if row.states.len() != self.variables.len() {
            return Err(Error::Schema(format!(
                "row has {} entries, expected {}",
                row.states.len(),
                self.variables.len()
            )));
        }
        for (v, &s) in self.variables.iter().zip(&row.states) {
            if s >= v.cardinality() {
                return Err(Error::Schema(format!(
                    "state {s} out of range for `{}`",
                    v.name
                )));
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ObservationRow>) -> Result<()> {
        for row in rows {
            self.check_row(&row)?;
            self.rows.push(row);
        }
        Ok(())
    }

    /// Appends all rows of `other`, which must share the variable list.
    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        if other.variables != self.variables {
            return Err(Error::Schema("datasets have different variables".into()));
        }
        self.rows.extend(other.rows.iter().cloned());
        Ok(())
    }

    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let (a, b) = self.rows.split_at(at.min(self.rows.len()));
        (
            Dataset {
                variables: self.variables.clone(),
                rows: a.to_vec(),
            },
            Dataset {
                variables: self.variables.clone(),
                rows: b.to_vec(),
            },
        )
    }
}

/// Network variables for a service: one node per parameter (in space order)
/// followed by one boolean indicator per SLO (in SLO order).
pub fn network_variables(space: &ParameterSpace, slos: &[SloSpec]) -> Vec<VariableDef> {
    space
        .specs()
        .iter()
        .map(|s| VariableDef::parameter(&s.name, s.states.iter().map(|st| st.label.clone()).collect()))
        .chain(slos.iter().map(|s| VariableDef::slo(&s.name)))
        .collect()
}

/// One row per sample: parameters take the batch configuration, each SLO
/// indicator is `fulfilled` iff the sample meets that SLO.
pub fn discretize_batch(
    batch: &MetricBatch,
    slos: &[SloSpec],
    space: &ParameterSpace,
) -> Result<Dataset> {
    let config = batch.config().ok_or(Error::EmptyBatch)?;
    let ranks = space.ranks(config)?;
    let mut rows = Vec::with_capacity(batch.len());
    for sample in batch.samples() {
        let mut states = ranks.clone();
        for slo in slos {
            let ok = sample_fulfills(sample, slo, space)?;
            states.push(if ok == 1 { FULFILLED_STATE } else { 1 - FULFILLED_STATE });
        }
        rows.push(ObservationRow { states });
    }
    Dataset::new(network_variables(space, slos), rows)
}
