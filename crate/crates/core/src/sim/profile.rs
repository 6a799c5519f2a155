use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Configuration, ServiceDefinition};
use crate::error::{Error, Result};

/// Mean and standard deviation of one metric in one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricGenerator {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub config: Configuration,
    pub metrics: BTreeMap<String, MetricGenerator>,
}

/// On-disk profile table: metric generators per configuration, measured on
/// the named reference device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub service: String,
    pub device: String,
    pub cells: Vec<ProfileCell>,
}

/// A service's parameter space, SLOs and per-cell metric generators, indexed
/// by grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProfile {
    pub id: String,
    pub definition: ServiceDefinition,
    pub reference_device: String,
    metrics: Vec<String>,
    cells: Vec<BTreeMap<String, MetricGenerator>>,
}

impl ServiceProfile {
    pub fn new(definition: ServiceDefinition, file: ProfileFile) -> Result<Self> {
        definition.validate()?;
        let space = &definition.parameters;
        let mut cells: Vec<Option<BTreeMap<String, MetricGenerator>>> = vec![None; space.size()];
        let metrics: Vec<String> = file
            .cells
            .first()
            .map(|c| c.metrics.keys().cloned().collect())
            .unwrap_or_default();
        for cell in file.cells {
            let idx = space
                .index_of(&cell.config)
                .map_err(|e| Error::InvalidProfile(format!("{}: {e}", file.service)))?;
            if cells[idx].is_some() {
                return Err(Error::InvalidProfile(format!(
                    "{}: cell {} listed twice",
                    file.service, cell.config
                )));
            }
            if cell.metrics.keys().ne(metrics.iter()) {
                return Err(Error::InvalidProfile(format!(
                    "{}: cell {} has metrics {:?}, expected {:?}",
                    file.service,
                    cell.config,
                    cell.metrics.keys().collect::<Vec<_>>(),
                    metrics
                )));
            }
            for (name, g) in &cell.metrics {
                if !g.mean.is_finite() || !g.std.is_finite() || g.std < 0.0 {
                    return Err(Error::InvalidProfile(format!(
                        "{}: cell {} metric `{name}` has invalid mean/std",
                        file.service, cell.config
                    )));
                }
            }
            cells[idx] = Some(cell.metrics);
        }
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::InvalidProfile(format!(
                        "{}: no cell for {}",
                        file.service,
                        space.config_at(i).expect("index in range")
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for slo in &definition.slos {
            if !metrics.contains(&slo.metric) {
                return Err(Error::InvalidProfile(format!(
                    "{}: SLO `{}` constrains metric `{}` which the profile does not generate",
                    file.service, slo.name, slo.metric
                )));
            }
        }
        Ok(ServiceProfile {
            id: file.service,
            definition,
            reference_device: file.device,
            metrics,
            cells,
        })
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn cell(&self, index: usize) -> &BTreeMap<String, MetricGenerator> {
        &self.cells[index]
    }

    pub fn from_files(service: &Path, profile: &Path) -> Result<Self> {
        let def = read(service)?;
        let def = ServiceDefinition::from_json(&def, &service.display().to_string())?;
        let text = read(profile)?;
        let file: ProfileFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(profile.display().to_string(), e))?;
        Self::new(def, file)
    }
}

/// How a device shifts the reference metrics of one service: processing
/// time is scaled, energy is scaled and offset. Other metrics pass through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceAdjustment {
    pub time_multiplier: f64,
    pub energy_multiplier: f64,
    pub energy_offset: f64,
}

impl DeviceAdjustment {
    pub const IDENTITY: DeviceAdjustment = DeviceAdjustment {
        time_multiplier: 1.0,
        energy_multiplier: 1.0,
        energy_offset: 0.0,
    };
}

/// A device (power mode included) as seen by one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: String,
    #[serde(flatten)]
    pub adjustment: DeviceAdjustment,
}

impl DeviceProfile {
    /// Base device name and whether this is the power-limited mode, from the
    /// `+`/`-` suffix.
    pub fn mode(&self) -> (&str, Option<bool>) {
        if let Some(base) = self.id.strip_suffix('-') {
            (base, Some(true))
        } else if let Some(base) = self.id.strip_suffix('+') {
            (base, Some(false))
        } else {
            (&self.id, None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub id: String,
    pub adjustments: BTreeMap<String, DeviceAdjustment>,
}

/// Device catalogue: per-device adjustments keyed by service id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCatalog {
    pub devices: Vec<DeviceEntry>,
}

impl DeviceCatalog {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cat: DeviceCatalog = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.devices {
            for (svc, a) in &d.adjustments {
                if !(a.time_multiplier > 0.0) || !(a.energy_multiplier > 0.0) || !a.energy_offset.is_finite()
                {
                    return Err(Error::InvalidProfile(format!(
                        "device {} / {svc}: multipliers must be positive",
                        d.id
                    )));
                }
            }
        }
        // A power-limited mode is never faster than the same board unconstrained.
        for d in &self.devices {
            let Some(base) = d.id.strip_suffix('-') else { continue };
            let Some(plus) = self.devices.iter().find(|o| o.id == format!("{base}+")) else {
                continue;
            };
            for (svc, a) in &d.adjustments {
                if let Some(p) = plus.adjustments.get(svc) {
                    if a.time_multiplier <= p.time_multiplier {
                        return Err(Error::InvalidProfile(format!(
                            "device {}: {svc} time multiplier must exceed {}'s",
                            d.id, plus.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn device(&self, id: &str, service: &str) -> Result<DeviceProfile> {
        let entry = self
            .devices
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::ProfileNotFound(format!("device `{id}`")))?;
        let adjustment = entry
            .adjustments
            .get(service)
            .copied()
            .ok_or_else(|| Error::ProfileNotFound(format!("device `{id}` has no entry for `{service}`")))?;
        Ok(DeviceProfile {
            id: id.to_string(),
            adjustment,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

const SERVICES: [(&str, &str, &str); 3] = [
    (
        "CV",
        include_str!("../../data/services/cv.json"),
        include_str!("../../data/profiles/cv.json"),
    ),
    (
        "QR",
        include_str!("../../data/services/qr.json"),
        include_str!("../../data/profiles/qr.json"),
    ),
    (
        "LI",
        include_str!("../../data/services/li.json"),
        include_str!("../../data/profiles/li.json"),
    ),
];
const DEVICES: &str = include_str!("../../data/devices.json");

pub const SERVICE_IDS: [&str; 3] = ["CV", "QR", "LI"];
pub const DEVICE_IDS: [&str; 4] = ["AGX+", "AGX-", "NX+", "NX-"];

/// Built-in calibrated service profile.
pub fn builtin_service(id: &str) -> Result<ServiceProfile> {
    let (_, def, prof) = SERVICES
        .iter()
        .find(|(s, _, _)| *s == id)
        .ok_or_else(|| Error::ProfileNotFound(format!("service `{id}`")))?;
    let def = ServiceDefinition::from_json(def, &format!("builtin service {id}"))?;
    let file: ProfileFile = serde_json::from_str(prof)
        .map_err(|e| Error::parse(format!("builtin profile {id}"), e))?;
    ServiceProfile::new(def, file)
}

pub fn builtin_devices() -> DeviceCatalog {
    DeviceCatalog::from_json(DEVICES, "builtin devices").expect("built-in catalogue is valid")
}
