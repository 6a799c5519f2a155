//! Shared vocabulary: parameter grids, configurations, metric samples and
//! SLO specifications.
//!
//! Configurations are addressed two ways. Externally they are name → label
//! maps; internally the agent and simulator use the grid index produced by
//! [`ParameterSpace::index_of`], which enumerates the Cartesian product in
//! lexicographic order (first parameter most significant, ranks ascending).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One discrete state of a tunable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
}

impl StateDef {
    pub fn numeric(label: impl Into<String>, value: f64) -> Self {
        StateDef {
            label: label.into(),
            numeric: Some(value),
        }
    }

    pub fn categorical(label: impl Into<String>) -> Self {
        StateDef {
            label: label.into(),
            numeric: None,
        }
    }
}

/// A tunable knob and its ordered states; the ordinal rank of a state is its
/// position in `states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub states: Vec<StateDef>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, states: Vec<StateDef>) -> Result<Self> {
        let spec = ParameterSpec {
            name: name.into(),
            states,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Numeric parameter whose labels are the printed numbers.
    pub fn numeric(name: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(
            name,
            values
                .iter()
                .map(|v| StateDef::numeric(format_number(*v), *v))
                .collect(),
        )
    }

    pub fn categorical(name: impl Into<String>, labels: &[&str]) -> Result<Self> {
        Self::new(name, labels.iter().map(|l| StateDef::categorical(*l)).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidSpace("parameter with empty name".into()));
        }
        if self.states.is_empty() {
            return Err(Error::InvalidSpace(format!(
                "parameter `{}` has no states",
                self.name
            )));
        }
        for (i, s) in self.states.iter().enumerate() {
            if self.states[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::InvalidSpace(format!(
                    "parameter `{}` repeats state `{}`",
                    self.name, s.label
                )));
            }
            if let Some(v) = s.numeric {
                if !v.is_finite() {
                    return Err(Error::InvalidSpace(format!(
                        "parameter `{}` state `{}` has non-finite value",
                        self.name, s.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// One point of the grid: parameter name → state label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    pub assignment: BTreeMap<String, String>,
}

impl Configuration {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Configuration {
            assignment: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn get(&self, parameter: &str) -> Option<&str> {
        self.assignment.get(parameter).map(String::as_str)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in &self.assignment {
            if !first {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
            first = false;
        }
        Ok(())
    }
}

/// The ordered discrete grid of tunable knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParameterSpec>", into = "Vec<ParameterSpec>")]
pub struct ParameterSpace {
    specs: Vec<ParameterSpec>,
}

impl TryFrom<Vec<ParameterSpec>> for ParameterSpace {
    type Error = Error;

    fn try_from(specs: Vec<ParameterSpec>) -> Result<Self> {
        ParameterSpace::new(specs)
    }
}

impl From<ParameterSpace> for Vec<ParameterSpec> {
    fn from(space: ParameterSpace) -> Self {
        space.specs
    }
}

impl ParameterSpace {
    pub fn new(specs: Vec<ParameterSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidSpace("no parameters".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            s.validate()?;
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter `{}`",
                    s.name
                )));
            }
        }
        Ok(ParameterSpace { specs })
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParameterSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Number of grid points.
    pub fn size(&self) -> usize {
        self.specs.iter().map(ParameterSpec::len).product()
    }

    /// Ordinal ranks of `config`, in spec order.
    pub fn ranks(&self, config: &Configuration) -> Result<Vec<usize>> {
        if config.assignment.len() != self.specs.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{config} assigns {} parameters, space has {}",
                config.assignment.len(),
                self.specs.len()
            )));
        }
        self.specs
            .iter()
            .map(|spec| {
                let label = config.get(&spec.name).ok_or_else(|| {
                    Error::InvalidConfiguration(format!("{config} lacks `{}`", spec.name))
                })?;
                spec.rank_of(label).ok_or_else(|| {
                    Error::InvalidConfiguration(format!(
                        "`{label}` is not a state of `{}`",
                        spec.name
                    ))
                })
            })
            .collect()
    }

    pub fn from_ranks(&self, ranks: &[usize]) -> Result<Configuration> {
        if ranks.len() != self.specs.len() {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} ranks, got {}",
                self.specs.len(),
                ranks.len()
            )));
        }
        let mut assignment = BTreeMap::new();
        for (spec, &r) in self.specs.iter().zip(ranks) {
            let state = spec.states.get(r).ok_or_else(|| {
                Error::InvalidConfiguration(format!("rank {r} out of range for `{}`", spec.name))
            })?;
            assignment.insert(spec.name.clone(), state.label.clone());
        }
        Ok(Configuration { assignment })
    }

    /// Grid index of `config` in [`enumerate_configs`] order.
    pub fn index_of(&self, config: &Configuration) -> Result<usize> {
        Ok(self.index_of_ranks(&self.ranks(config)?))
    }

    pub(crate) fn index_of_ranks(&self, ranks: &[usize]) -> usize {
        self.specs
            .iter()
            .zip(ranks)
            .fold(0, |acc, (spec, &r)| acc * spec.len() + r)
    }

    pub(crate) fn ranks_at(&self, mut index: usize) -> Vec<usize> {
        let mut ranks = vec![0; self.specs.len()];
        for (slot, spec) in ranks.iter_mut().zip(&self.specs).rev() {
            *slot = index % spec.len();
            index /= spec.len();
        }
        ranks
    }

    pub fn config_at(&self, index: usize) -> Result<Configuration> {
        if index >= self.size() {
            return Err(Error::InvalidConfiguration(format!(
                "grid index {index} out of range (size {})",
                self.size()
            )));
        }
        self.from_ranks(&self.ranks_at(index))
    }

    /// Median rank per parameter (lower median for even counts).
    pub fn midpoint(&self) -> Configuration {
        let ranks: Vec<usize> = self.specs.iter().map(|s| (s.len() - 1) / 2).collect();
        self.from_ranks(&ranks).expect("median ranks are in range")
    }

    /// Numeric value of `parameter` under `config`.
    pub fn numeric_value(&self, config: &Configuration, parameter: &str) -> Result<f64> {
        let spec = self.spec(parameter).ok_or_else(|| Error::ThresholdEvaluation {
            parameter: parameter.into(),
            reason: "unknown parameter".into(),
        })?;
        let label = config.get(parameter).ok_or_else(|| Error::ThresholdEvaluation {
            parameter: parameter.into(),
            reason: format!("not assigned in {config}"),
        })?;
        let state = spec
            .states
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::ThresholdEvaluation {
                parameter: parameter.into(),
                reason: format!("unknown state `{label}`"),
            })?;
        state.numeric.ok_or_else(|| Error::ThresholdEvaluation {
            parameter: parameter.into(),
            reason: format!("state `{label}` is not numeric"),
        })
    }

    /// Compact `v1/v2/...` label in spec order, used in CSV output.
    pub fn short_label(&self, config: &Configuration) -> String {
        self.specs
            .iter()
            .map(|s| config.get(&s.name).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Full Cartesian product of `space` in lexicographic order of spec order and
/// state rank.
pub fn enumerate_configs(space: &ParameterSpace) -> Vec<Configuration> {
    (0..space.size())
        .map(|i| space.from_ranks(&space.ranks_at(i)).expect("index in range"))
        .collect()
}

/// Manhattan distance over ordinal ranks.
pub fn neighbor_distance(
    a: &Configuration,
    b: &Configuration,
    space: &ParameterSpace,
) -> Result<usize> {
    let ra = space.ranks(a)?;
    let rb = space.ranks(b)?;
    Ok(rank_distance(&ra, &rb))
}

pub(crate) fn rank_distance(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum()
}

/// SLO bound, either fixed or derived from a numeric parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThresholdExpr {
    #[serde(rename = "const")]
    Constant(f64),
    /// `numerator / numeric(parameter)`, e.g. a per-frame time budget.
    #[serde(rename = "reciprocal")]
    ScaledReciprocal { numerator: f64, parameter: String },
}

impl ThresholdExpr {
    pub fn evaluate(&self, space: &ParameterSpace, config: &Configuration) -> Result<f64> {
        evaluate_threshold(self, space, config)
    }
}

pub fn evaluate_threshold(
    expr: &ThresholdExpr,
    space: &ParameterSpace,
    config: &Configuration,
) -> Result<f64> {
    match expr {
        ThresholdExpr::Constant(v) => Ok(*v),
        ThresholdExpr::ScaledReciprocal {
            numerator,
            parameter,
        } => {
            let value = space.numeric_value(config, parameter)?;
            if value == 0.0 {
                return Err(Error::ThresholdEvaluation {
                    parameter: parameter.clone(),
                    reason: "numeric value is zero".into(),
                });
            }
            Ok(numerator / value)
        }
    }
}

/// A named inclusive bound on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub name: String,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<ThresholdExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<ThresholdExpr>,
}

impl SloSpec {
    pub fn new(
        name: impl Into<String>,
        metric: impl Into<String>,
        lower: Option<ThresholdExpr>,
        upper: Option<ThresholdExpr>,
    ) -> Result<Self> {
        let slo = SloSpec {
            name: name.into(),
            metric: metric.into(),
            lower,
            upper,
        };
        slo.validate(None)?;
        Ok(slo)
    }

    pub fn at_most(name: &str, metric: &str, bound: ThresholdExpr) -> Result<Self> {
        Self::new(name, metric, None, Some(bound))
    }

    pub fn at_least(name: &str, metric: &str, bound: ThresholdExpr) -> Result<Self> {
        Self::new(name, metric, Some(bound), None)
    }

    /// Checks the bound invariants, and when `space` is given, that every
    /// reciprocal bound references a parameter whose states are all nonzero
    /// numbers.
    pub fn validate(&self, space: Option<&ParameterSpace>) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSlo {
            name: self.name.clone(),
            reason,
        };
        if self.lower.is_none() && self.upper.is_none() {
            return Err(invalid("no bound given".into()));
        }
        if let (Some(ThresholdExpr::Constant(lo)), Some(ThresholdExpr::Constant(hi))) =
            (&self.lower, &self.upper)
        {
            if lo > hi {
                return Err(invalid(format!("lower bound {lo} exceeds upper bound {hi}")));
            }
        }
        for bound in self.lower.iter().chain(self.upper.iter()) {
            match bound {
                ThresholdExpr::Constant(v) if !v.is_finite() => {
                    return Err(invalid("non-finite constant bound".into()))
                }
                ThresholdExpr::ScaledReciprocal {
                    numerator,
                    parameter,
                } => {
                    if !numerator.is_finite() {
                        return Err(invalid("non-finite numerator".into()));
                    }
                    if let Some(space) = space {
                        let spec = space
                            .spec(parameter)
                            .ok_or_else(|| invalid(format!("unknown parameter `{parameter}`")))?;
                        if spec
                            .states
                            .iter()
                            .any(|s| s.numeric.is_none_or(|v| v == 0.0))
                        {
                            return Err(invalid(format!(
                                "parameter `{parameter}` has zero or non-numeric states"
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One observation of every metric at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub timestamp_ms: u64,
    pub values: BTreeMap<String, f64>,
    pub config: Configuration,
}

impl MetricSample {
    pub fn value(&self, metric: &str) -> Result<f64> {
        self.values
            .get(metric)
            .copied()
            .ok_or_else(|| Error::MissingMetric(metric.to_string()))
    }
}

/// One evaluation window of samples captured under a single configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBatch {
    samples: Vec<MetricSample>,
    pub window_ms: u64,
}

impl MetricBatch {
    pub fn new(samples: Vec<MetricSample>, window_ms: u64) -> Result<Self> {
        if let Some(first) = samples.first() {
            for pair in samples.windows(2) {
                if pair[1].timestamp_ms < pair[0].timestamp_ms {
                    return Err(Error::InvalidBatch("timestamps decrease".into()));
                }
            }
            if samples.iter().any(|s| s.config != first.config) {
                return Err(Error::InvalidBatch(
                    "samples captured under different configurations".into(),
                ));
            }
            for s in &samples {
                if let Some((k, _)) = s.values.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::InvalidBatch(format!("metric `{k}` is not finite")));
                }
            }
        }
        Ok(MetricBatch { samples, window_ms })
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn config(&self) -> Option<&Configuration> {
        self.samples.first().map(|s| &s.config)
    }

    pub fn into_samples(self) -> Vec<MetricSample> {
        self.samples
    }
}

/// Parameter space plus SLO set of one service, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDefinition {
    #[serde(default)]
    pub name: String,
    pub parameters: ParameterSpace,
    pub slos: Vec<SloSpec>,
}

impl ServiceDefinition {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let def: ServiceDefinition =
            serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slos.is_empty() {
            return Err(Error::NoSlos);
        }
        for (i, slo) in self.slos.iter().enumerate() {
            slo.validate(Some(&self.parameters))?;
            if self.slos[..i].iter().any(|o| o.name == slo.name) {
                return Err(Error::InvalidSlo {
                    name: slo.name.clone(),
                    reason: "duplicate name".into(),
                });
            }
            if self.parameters.spec(&slo.name).is_some() {
                return Err(Error::InvalidSlo {
                    name: slo.name.clone(),
                    reason: "collides with a parameter name".into(),
                });
            }
        }
        Ok(())
    }

    /// Metric names constrained by at least one SLO, sorted and unique.
    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.slos.iter().map(|s| s.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    }
}

/// Writes samples as `timestamp_ms,<params...>,<metrics...>`.
pub fn write_samples_csv<W: Write>(
    writer: W,
    space: &ParameterSpace,
    metrics: &[String],
    samples: &[MetricSample],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp_ms".to_string()];
    header.extend(space.names().map(str::to_string));
    header.extend(metrics.iter().cloned());
    w.write_record(&header)?;
    for s in samples {
        let mut record = vec![s.timestamp_ms.to_string()];
        for name in space.names() {
            let label = s.config.get(name).ok_or_else(|| {
                Error::InvalidConfiguration(format!("{} lacks `{name}`", s.config))
            })?;
            record.push(label.to_string());
        }
        for m in metrics {
            record.push(format_real(s.value(m)?));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub(crate) fn format_real(v: f64) -> String {
    format!("{v:?}")
}

/// Reads samples written by [`write_samples_csv`]. Every column after the
/// parameter columns is a metric.
pub fn read_samples_csv<R: Read>(
    reader: R,
    space: &ParameterSpace,
    context: &str,
) -> Result<Vec<MetricSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mismatch = |detail: String| Error::Parse {
        context: context.to_string(),
        message: detail,
    };
    if header.first().map(String::as_str) != Some("timestamp_ms") {
        return Err(mismatch("first column must be timestamp_ms".into()));
    }
    let k = space.specs().len();
    let params: Vec<&str> = space.names().collect();
    if header.len() < 1 + k || header[1..=k].iter().map(String::as_str).ne(params.iter().copied())
    {
        return Err(mismatch(format!(
            "expected parameter columns {:?} after timestamp_ms",
            params
        )));
    }
    let metrics = &header[1 + k..];
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let timestamp_ms = field(0)
            .parse::<u64>()
            .map_err(|e| mismatch(format!("line {row}, timestamp_ms: {e}")))?;
        let config = Configuration::new(
            params
                .iter()
                .enumerate()
                .map(|(i, p)| (p.to_string(), field(i + 1).to_string())),
        );
        space
            .ranks(&config)
            .map_err(|e| mismatch(format!("line {row}: {e}")))?;
        let mut values = BTreeMap::new();
        for (j, m) in metrics.iter().enumerate() {
            let v = field(1 + k + j)
                .parse::<f64>()
                .map_err(|e| mismatch(format!("line {row}, {m}: {e}")))?;
            if !v.is_finite() {
                return Err(mismatch(format!("line {row}, {m}: not finite")));
            }
            values.insert(m.clone(), v);
        }
        out.push(MetricSample {
            timestamp_ms,
            values,
            config,
        });
    }
    Ok(out)
}
