//! Seeded simulator standing in for a real edge service: calibrated
//! per-cell metric generators, device adjustments and a Monte-Carlo oracle
//! for the true fulfillment of every configuration.

mod profile;

pub use profile::{
    builtin_devices, builtin_service, DeviceAdjustment, DeviceCatalog, DeviceEntry, DeviceProfile,
    MetricGenerator, ProfileCell, ProfileFile, ServiceProfile, DEVICE_IDS, SERVICE_IDS,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::domain::{enumerate_configs, Configuration, MetricBatch, MetricSample, ParameterSpace, SloSpec};
use crate::error::{Error, Result};
use crate::slo::sample_fulfills;

/// Parameter whose numeric value sets the sample rate of a batch.
pub const RATE_PARAMETER: &str = "fps";

const STREAM_BATCH: u64 = 0x6261_7463_6800_0001;
const STREAM_ORACLE: u64 = 0x6f72_6163_6c65_0002;

/// One service running on one device, with its own random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub service: Arc<ServiceProfile>,
    pub device: DeviceProfile,
    pub seed: u64,
    pub window_ms: u64,
}

impl Scenario {
    pub fn new(service: Arc<ServiceProfile>, device: DeviceProfile, seed: u64, window_ms: u64) -> Result<Self> {
        if window_ms == 0 {
            return Err(Error::InvalidExperiment("window_ms must be positive".into()));
        }
        Ok(Scenario {
            service,
            device,
            seed,
            window_ms,
        })
    }

    /// Scenario over the built-in profiles, e.g. `("CV", "NX-")`.
    pub fn builtin(service: &str, device: &str, seed: u64, window_ms: u64) -> Result<Self> {
        let profile = builtin_service(service)?;
        let device = builtin_devices().device(device, service)?;
        Self::new(Arc::new(profile), device, seed, window_ms)
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.service.definition.parameters
    }

    pub fn slos(&self) -> &[SloSpec] {
        &self.service.definition.slos
    }

    pub fn label(&self) -> String {
        format!("{} x {}", self.service.id, self.device.id)
    }

    /// Device-adjusted generators for one configuration.
    pub fn generators(&self, config: &Configuration) -> Result<BTreeMap<String, MetricGenerator>> {
        let idx = self.space().index_of(config)?;
        let a = self.device.adjustment;
        Ok(self
            .service
            .cell(idx)
            .iter()
            .map(|(name, g)| {
                let g = match name.as_str() {
                    "time" => MetricGenerator {
                        mean: g.mean * a.time_multiplier,
                        std: g.std * a.time_multiplier,
                    },
                    "energy" => MetricGenerator {
                        mean: g.mean * a.energy_multiplier + a.energy_offset,
                        std: g.std * a.energy_multiplier,
                    },
                    _ => *g,
                };
                (name.clone(), g)
            })
            .collect())
    }

    /// Samples per window: the configured frame rate times the window length.
    pub fn batch_size(&self, config: &Configuration) -> Result<usize> {
        let fps = match self.space().spec(RATE_PARAMETER) {
            Some(_) => self.space().numeric_value(config, RATE_PARAMETER)?,
            None => 1.0,
        };
        Ok(((fps * self.window_ms as f64 / 1000.0).round() as usize).max(1))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0, |acc, &p| splitmix(acc ^ p))
}

/// Normal draw conditioned on being non-negative.
fn truncated_normal(rng: &mut ChaCha8Rng, g: MetricGenerator) -> f64 {
    if g.std == 0.0 {
        return g.mean.max(0.0);
    }
    for _ in 0..1000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = g.mean + g.std * z;
        if x >= 0.0 {
            return x;
        }
    }
    // Mean is many deviations below zero; all mass sits at the boundary.
    0.0
}

fn draw(rng: &mut ChaCha8Rng, gens: &BTreeMap<String, MetricGenerator>) -> BTreeMap<String, f64> {
    gens.iter()
        .map(|(name, g)| (name.clone(), truncated_normal(rng, *g)))
        .collect()
}

/// One window of metrics under `config`; a pure function of
/// (seed, cycle, config).
pub fn generate_batch(scenario: &Scenario, config: &Configuration, cycle: u64) -> Result<MetricBatch> {
    let idx = scenario.space().index_of(config)?;
    let gens = scenario.generators(config)?;
    let n = scenario.batch_size(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[scenario.seed, STREAM_BATCH, cycle, idx as u64]));
    let start = cycle * scenario.window_ms;
    let samples = (0..n)
        .map(|i| MetricSample {
            timestamp_ms: start + i as u64 * scenario.window_ms / n as u64,
            values: draw(&mut rng, &gens),
            config: config.clone(),
        })
        .collect();
    MetricBatch::new(samples, scenario.window_ms)
}

/// Monte-Carlo estimate of the mean SLO fulfillment of `config` over `n`
/// fresh samples, drawn from a stream separate from [`generate_batch`].
pub fn true_fulfillment(scenario: &Scenario, config: &Configuration, n: usize) -> Result<f64> {
    let idx = scenario.space().index_of(config)?;
    let gens = scenario.generators(config)?;
    let slos = scenario.slos();
    if slos.is_empty() {
        return Err(Error::NoSlos);
    }
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[scenario.seed, STREAM_ORACLE, idx as u64]));
    let mut hits = vec![0u64; slos.len()];
    for _ in 0..n {
        let sample = MetricSample {
            timestamp_ms: 0,
            values: draw(&mut rng, &gens),
            config: config.clone(),
        };
        for (h, slo) in hits.iter_mut().zip(slos) {
            *h += u64::from(sample_fulfills(&sample, slo, scenario.space())?);
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / n as f64).sum::<f64>() / slos.len() as f64)
}

/// Exhaustive argmax of [`true_fulfillment`]; ties go to the lowest total
/// ordinal rank, then the lowest grid index.
pub fn true_optimum(scenario: &Scenario, n: usize) -> Result<(Configuration, f64)> {
    let space = scenario.space();
    let mut best: Option<(f64, usize, Configuration)> = None;
    for config in enumerate_configs(space) {
        let f = true_fulfillment(scenario, &config, n)?;
        let rank: usize = space.ranks(&config)?.iter().sum();
        let better = match &best {
            None => true,
            Some((bf, br, _)) => f > *bf || (f == *bf && rank < *br),
        };
        if better {
            best = Some((f, rank, config));
        }
    }
    let (f, _, c) = best.expect("grid is non-empty");
    Ok((c, f))
}
