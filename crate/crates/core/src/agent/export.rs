use std::path::{Path, PathBuf};

use super::{Decision, ScoreMatrix};
use crate::domain::{format_real, ParameterSpace, SloSpec};
use crate::error::{Error, Result};

pub fn trajectory_header(space: &ParameterSpace, slos: &[SloSpec]) -> Vec<String> {
    let mut h = vec!["cycle".to_string()];
    h.extend(space.names().map(str::to_string));
    h.extend(["pv", "ig", "score", "fulfillment_overall"].map(String::from));
    h.extend(slos.iter().map(|s| format!("fulfillment_{}", s.name)));
    h.push("rationale".into());
    h
}

/// One row per decision. Fulfillment columns are empty for the cold-start
/// decision, which has no preceding batch.
pub fn trajectory_csv(history: &[Decision], space: &ParameterSpace, slos: &[SloSpec]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trajectory_header(space, slos))?;
    for d in history {
        let mut rec = vec![d.cycle.to_string()];
        for name in space.names() {
            rec.push(d.chosen.get(name).unwrap_or_default().to_string());
        }
        rec.push(format_real(d.pv));
        rec.push(format_real(d.ig));
        rec.push(format_real(d.score));
        match &d.fulfillment {
            Some(f) => {
                rec.push(format_real(f.overall));
                for s in slos {
                    rec.push(f.per_slo.get(&s.name).map(|v| format_real(*v)).unwrap_or_default());
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), slos.len() + 1)),
        }
        rec.push(d.rationale.as_str().to_string());
        w.write_record(&rec)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidBatch(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Heat map of `pv` or `ig`: rows are the states of the first parameter,
/// columns the states of the second. `slice` fixes the remaining
/// parameters (state index per parameter beyond the second).
pub fn heatmap_csv(matrix: &ScoreMatrix, space: &ParameterSpace, metric: &str, slice: &[usize]) -> Result<String> {
    let specs = space.specs();
    if specs.len() < 2 {
        return Err(Error::InvalidSpace("heat maps need at least two parameters".into()));
    }
    if slice.len() != specs.len() - 2 {
        return Err(Error::InvalidSpace(format!(
            "slice fixes {} parameters, expected {}",
            slice.len(),
            specs.len() - 2
        )));
    }
    let pick = |e: &super::ScoreEntry| match metric {
        "pv" => Ok(e.pv),
        "ig" => Ok(e.ig),
        other => Err(Error::InvalidExperiment(format!("unknown heat map metric `{other}`"))),
    };
    let (rows, cols) = (&specs[0], &specs[1]);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![format!("{}\\{}", rows.name, cols.name)];
    header.extend(cols.states.iter().map(|s| s.label.clone()));
    w.write_record(&header)?;
    for (r, rs) in rows.states.iter().enumerate() {
        let mut rec = vec![rs.label.clone()];
        for c in 0..cols.len() {
            let mut ranks = vec![r, c];
            ranks.extend_from_slice(slice);
            let config = space.from_ranks(&ranks)?;
            let value = match matrix.get(&config) {
                Some(e) => format_real(pick(e)?),
                None => String::new(),
            };
            rec.push(value);
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Writes `<metric>_heatmap.csv` for pv and ig into `dir`; spaces with a
/// third parameter get one file per state of it, suffixed with the state.
pub fn write_heatmaps(matrix: &ScoreMatrix, space: &ParameterSpace, dir: &Path) -> Result<Vec<PathBuf>> {
    let extra: Vec<usize> = space.specs().iter().skip(2).map(|s| s.len()).collect();
    let slices: Vec<Vec<usize>> = if extra.is_empty() {
        vec![vec![]]
    } else {
        let total: usize = extra.iter().product();
        (0..total)
            .map(|mut k| {
                let mut s = vec![0; extra.len()];
                for (slot, &n) in s.iter_mut().zip(&extra).rev() {
                    *slot = k % n;
                    k /= n;
                }
                s
            })
            .collect()
    };
    let mut written = Vec::new();
    for metric in ["pv", "ig"] {
        for slice in &slices {
            let suffix: String = space
                .specs()
                .iter()
                .skip(2)
                .zip(slice)
                .map(|(spec, &i)| format!("_{}-{}", spec.name, spec.states[i].label))
                .collect();
            let path = dir.join(format!("{metric}_heatmap{suffix}.csv"));
            let text = heatmap_csv(matrix, space, metric, slice)?;
            std::fs::write(&path, text).map_err(|source| Error::UnwritableOutput {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
    }
    Ok(written)
}
