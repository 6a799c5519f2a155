//! SLO fulfillment of a metric batch: per-sample indicators, per-SLO ratios
//! and their unweighted mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{MetricBatch, MetricSample, ParameterSpace, SloSpec};
use crate::error::{Error, Result};

/// Fulfillment of every SLO over one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FulfillmentReport {
    pub per_slo: BTreeMap<String, f64>,
    pub overall: f64,
    pub sample_count: usize,
}

/// 1 iff `lower <= value <= upper`; a missing bound is unbounded.
pub fn sample_fulfills(
    sample: &MetricSample,
    slo: &SloSpec,
    space: &ParameterSpace,
) -> Result<u8> {
    let value = sample.value(&slo.metric)?;
    if let Some(lower) = &slo.lower {
        if value < lower.evaluate(space, &sample.config)? {
            return Ok(0);
        }
    }
    if let Some(upper) = &slo.upper {
        if value > upper.evaluate(space, &sample.config)? {
            return Ok(0);
        }
    }
    Ok(1)
}

/// Share of samples within the SLO's bounds.
pub fn slo_fulfillment(batch: &MetricBatch, slo: &SloSpec, space: &ParameterSpace) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut hits = 0usize;
    for s in batch.samples() {
        hits += sample_fulfills(s, slo, space)? as usize;
    }
    Ok(hits as f64 / batch.len() as f64)
}

pub fn batch_fulfillment(
    batch: &MetricBatch,
    slos: &[SloSpec],
    space: &ParameterSpace,
) -> Result<FulfillmentReport> {
    if slos.is_empty() {
        return Err(Error::NoSlos);
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut per_slo = BTreeMap::new();
    for slo in slos {
        per_slo.insert(slo.name.clone(), slo_fulfillment(batch, slo, space)?);
    }
    let overall = per_slo.values().sum::<f64>() / per_slo.len() as f64;
    Ok(FulfillmentReport {
        per_slo,
        overall,
        sample_count: batch.len(),
    })
}
