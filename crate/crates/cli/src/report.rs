//! Stage reports of single predictions and error reports over subject sets.

use std::fmt::Write as _;

use bodyshape_core::refine::RoundReport;
use bodyshape_core::{MeasurementProfile, RefinementConfig, StageReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ErrorKind, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub termination: String,
    pub dropped: Vec<String>,
}

impl From<&RoundReport> for RoundRecord {
    fn from(r: &RoundReport) -> Self {
        Self {
            initial_energy: r.initial_energy,
            final_energy: r.final_energy,
            iterations: r.iterations,
            termination: r.termination.as_str().to_owned(),
            dropped: r.dropped.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// `E_m` at the end of the stage.
    pub energy: f64,
    /// Signed `measured - target` in mm; `null` where undefined.
    pub residuals: Vec<Option<f64>>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub l: Option<f64>,
    pub lambda: f64,
    pub weight_rounds: usize,
    pub vertex_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub config: ConfigRecord,
    pub measurements: Vec<String>,
    pub targets: Vec<f64>,
    pub predicted_weights: Vec<f64>,
    pub initial_weights: Vec<f64>,
    pub stage1_weights: Vec<f64>,
    pub initial: StageRecord,
    pub stage1: StageRecord,
    pub stage2: StageRecord,
}

impl PredictionRecord {
    pub fn new(
        profile: &MeasurementProfile,
        targets: &[f64],
        config: &RefinementConfig,
        r: &StageReport,
    ) -> Self {
        let rounds = |rs: &[RoundReport]| rs.iter().map(RoundRecord::from).collect();
        Self {
            config: ConfigRecord {
                l: config.clamp_multiplier.is_finite().then_some(config.clamp_multiplier),
                lambda: config.smoothness_weight,
                weight_rounds: config.weight_rounds,
                vertex_rounds: config.vertex_rounds,
            },
            measurements: profile.names().map(str::to_owned).collect(),
            targets: targets.to_vec(),
            predicted_weights: r.predicted_weights.0.clone(),
            initial_weights: r.initial_weights.0.clone(),
            stage1_weights: r.stage1_weights.0.clone(),
            initial: StageRecord {
                energy: r.initial_energy,
                residuals: r.initial_residuals.clone(),
                rounds: Vec::new(),
            },
            stage1: StageRecord {
                energy: r.stage1_energy,
                residuals: r.stage1_residuals.clone(),
                rounds: rounds(&r.weight_rounds),
            },
            stage2: StageRecord {
                energy: r.stage2_energy,
                residuals: r.final_residuals.clone(),
                rounds: rounds(&r.vertex_rounds),
            },
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// How the reported dimensions are made up from profile specs: ungrouped
/// specs stand alone, grouped specs are summed per group, and each group
/// sits where its first member appears.
pub fn dimensions(profile: &MeasurementProfile) -> Vec<(String, Vec<usize>)> {
    let mut dims: Vec<(String, Vec<usize>)> = Vec::new();
    let mut group_slot: Vec<(String, usize)> = Vec::new();
    for (i, spec) in profile.specs().iter().enumerate() {
        match &spec.group {
            None => dims.push((spec.name.clone(), vec![i])),
            Some(g) => match group_slot.iter().find(|(name, _)| name == g) {
                Some(&(_, slot)) => dims[slot].1.push(i),
                None => {
                    group_slot.push((g.clone(), dims.len()));
                    dims.push((g.clone(), vec![i]));
                }
            },
        }
    }
    dims
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dimensions: Vec<String>,
    /// Profile indices summed into each dimension.
    pub members: Vec<Vec<usize>>,
    /// `errors[subject][dimension]`, absolute, mm.
    pub errors: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    pub maximum: Vec<f64>,
    /// Mean over every subject and dimension.
    pub overall_average: f64,
}

impl EvaluationReport {
    /// `measured[s][i]` and `targets[s][i]` follow profile order.
    pub fn new(profile: &MeasurementProfile, measured: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        if measured.len() != targets.len() {
            return Err(CliError::input(format!(
                "{} predicted shapes but {} target rows",
                measured.len(),
                targets.len()
            )));
        }
        let q = profile.len();
        if let Some(bad) = measured.iter().chain(targets).find(|r| r.len() != q) {
            return Err(CliError::input(format!("row of {} values for {q} measurements", bad.len())));
        }
        let dims = dimensions(profile);
        let errors: Vec<Vec<f64>> = measured
            .iter()
            .zip(targets)
            .map(|(m, t)| {
                dims.iter()
                    .map(|(_, members)| members.iter().map(|&i| (m[i] - t[i]).abs()).sum())
                    .collect()
            })
            .collect();
        let n = errors.len();
        let k = dims.len();
        let column = |d: usize| errors.iter().map(move |row| row[d]);
        let average = (0..k)
            .map(|d| if n == 0 { 0.0 } else { column(d).sum::<f64>() / n as f64 })
            .collect();
        let maximum = (0..k).map(|d| column(d).fold(0.0, f64::max)).collect();
        let cells = n * k;
        let overall_average = if cells == 0 {
            0.0
        } else {
            errors.iter().flatten().sum::<f64>() / cells as f64
        };
        let (dimensions, members) = dims.into_iter().unzip();
        Ok(Self {
            dimensions,
            members,
            errors,
            average,
            maximum,
            overall_average,
        })
    }

    pub fn table(&self) -> String {
        comparison_table(&[("error", self)])
    }
}

/// Per-dimension average and maximum per method, then the overall averages.
pub fn comparison_table(methods: &[(&str, &EvaluationReport)]) -> String {
    let Some((_, first)) = methods.first() else {
        return String::new();
    };
    let width = first
        .dimensions
        .iter()
        .map(String::len)
        .chain(["dimension (mm)".len(), "overall average".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "dimension (mm)");
    for (name, _) in methods {
        let _ = write!(out, "  {:>14}  {:>14}", format!("{name} avg"), format!("{name} max"));
    }
    out.push('\n');
    for (d, dim) in first.dimensions.iter().enumerate() {
        let _ = write!(out, "{dim:<width$}");
        for (_, r) in methods {
            let _ = write!(out, "  {:>14.4}  {:>14.4}", r.average[d], r.maximum[d]);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<width$}", "overall average");
    for (_, r) in methods {
        let _ = write!(out, "  {:>14.4}  {:>14}", r.overall_average, "");
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

/// Turns per-measurement residuals into measured values, failing on the
/// first undefined one.
pub fn measured_from_residuals(
    profile: &MeasurementProfile,
    targets: &[f64],
    residuals: &[Option<f64>],
) -> Result<Vec<f64>> {
    residuals
        .iter()
        .zip(targets)
        .zip(profile.names())
        .map(|((r, t), name)| {
            r.map(|r| t + r).ok_or_else(|| {
                CliError::new(
                    ErrorKind::MeasurementUndefined,
                    format!("measurement `{name}` is undefined on the predicted shape"),
                )
            })
        })
        .collect()
}
