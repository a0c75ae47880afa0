//! Self-contained experiment protocols on synthetic mannequin families.
//!
//! Every protocol trains a model on seeded family members, builds target
//! measurement vectors, predicts each subject twice (feature analysis only,
//! and the full refinement pipeline) and evaluates both against the targets.

use std::path::Path;

use bodyshape_core::measure::measure_all;
use bodyshape_core::synth::{
    add_local_bump, fit_gaussian, sample_close, sample_ellipsoid, sample_family, Mannequin,
    ShapeFamily, MANNEQUIN_DEFAULT_RESOLUTION,
};
use bodyshape_core::{
    predict_shape, ComponentCount, MeasurementVector, Normalization, RefinementConfig, TriangleMesh,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::model_file::{train_model, TrainedModel};
use crate::report::{comparison_table, measured_from_residuals, to_json, EvaluationReport};
use crate::table::{format_table, MeasurementTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// Targets drawn from a Gaussian fitted to the training measurements.
    Close,
    /// Targets on the Mahalanobis ellipsoid of radius `k`.
    Ellipsoid(f64),
    /// Targets measured on held-out family members.
    Heldout,
    /// Held-out members carrying a local bump the family cannot express.
    SmallTraining,
}

impl Protocol {
    pub fn name(self) -> String {
        match self {
            Protocol::Close => "close".into(),
            Protocol::Ellipsoid(k) => format!("ellipsoid-{k}"),
            Protocol::Heldout => "heldout".into(),
            Protocol::SmallTraining => "small-training".into(),
        }
    }
}

/// Landmark the small-training bump is centred on, and the circumference it
/// crosses.
pub const BUMP_LANDMARK: &str = "waist_front";
pub const BUMP_MEASUREMENT: &str = "waist_circumference";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub resolution: usize,
    /// Deformation modes of the synthetic family.
    pub modes: usize,
    pub training: usize,
    pub subjects: usize,
    pub bump_radius: f64,
    pub bump_amplitude: f64,
    pub refinement: RefinementConfig,
}

impl ExperimentConfig {
    /// Protocol defaults: 40 training shapes and 10 subjects, or 35 and 5
    /// with `s = 10` for the small-training protocol.
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        let small = protocol == Protocol::SmallTraining;
        let refinement = if small {
            RefinementConfig::default().with_rounds(10)
        } else {
            RefinementConfig::default()
        };
        Self {
            protocol,
            seed,
            resolution: MANNEQUIN_DEFAULT_RESOLUTION,
            modes: 8,
            training: if small { 35 } else { 40 },
            subjects: if small { 5 } else { 10 },
            bump_radius: 80.0,
            bump_amplitude: 25.0,
            refinement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub targets: Vec<f64>,
    pub initial_energy: f64,
    pub stage1_energy: f64,
    pub stage2_energy: f64,
    pub stage1_residuals: Vec<Option<f64>>,
    pub final_residuals: Vec<Option<f64>>,
    /// `max_i |W_i| / sigma_i` of the clamped initial weights.
    pub initial_clamp_ratio: f64,
    /// Same for the stage-one weights.
    pub stage1_clamp_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub seed: u64,
    pub resolution: usize,
    pub vertices: usize,
    pub triangles: usize,
    pub modes: usize,
    pub training: usize,
    pub components: usize,
    pub l: Option<f64>,
    pub lambda: f64,
    pub s: usize,
    pub measurements: Vec<String>,
    pub bump_measurement: Option<String>,
    pub feature_analysis: EvaluationReport,
    pub full: EvaluationReport,
    pub subjects: Vec<SubjectRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub targets: MeasurementTable,
    pub feature_analysis: MeasurementTable,
    pub full: MeasurementTable,
}

/// Independent stream seeds from one experiment seed.
fn stream(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ tag
}

fn clamp_ratio(weights: &[f64], stddevs: &[f64]) -> f64 {
    weights
        .iter()
        .zip(stddevs)
        .map(|(w, s)| if *s > 0.0 { w.abs() / s } else { 0.0 })
        .fold(0.0, f64::max)
}

pub struct Setup {
    pub mannequin: Mannequin,
    pub family: ShapeFamily,
    pub training: Vec<TriangleMesh>,
    pub model: TrainedModel,
}

/// Template, family, training set and trained model for `config`.
pub fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let mannequin = Mannequin::new(config.resolution)?;
    let family = ShapeFamily::random(mannequin.mesh.clone(), config.modes, stream(config.seed, 1))?;
    let training = sample_family(&family, config.training, stream(config.seed, 2))?;
    let model = train_model(
        &training,
        &mannequin.body_profile(),
        ComponentCount::All,
        Normalization::Eigenvalue,
    )?;
    Ok(Setup {
        mannequin,
        family,
        training,
        model,
    })
}

fn measure_rows(meshes: &[TriangleMesh], setup: &Setup) -> Result<Vec<MeasurementVector>> {
    meshes
        .par_iter()
        .map(|m| measure_all(m, &setup.model.profile).map_err(CliError::from))
        .collect()
}

/// Target vectors for the protocol.
pub fn targets(config: &ExperimentConfig, setup: &Setup) -> Result<Vec<MeasurementVector>> {
    let seed = stream(config.seed, 3);
    match config.protocol {
        Protocol::Close | Protocol::Ellipsoid(_) => {
            let rows: Vec<Vec<f64>> = measure_rows(&setup.training, setup)?
                .into_iter()
                .map(MeasurementVector::into_inner)
                .collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let g = fit_gaussian(&refs)?;
            Ok(match config.protocol {
                Protocol::Ellipsoid(k) => sample_ellipsoid(&g, k, config.subjects, seed)?,
                _ => sample_close(&g, config.subjects, seed)?,
            })
        }
        Protocol::Heldout => {
            let shapes = sample_family(&setup.family, config.subjects.max(2), seed)?;
            measure_rows(&shapes[..config.subjects], setup)
        }
        Protocol::SmallTraining => {
            let center = setup
                .mannequin
                .landmark(BUMP_LANDMARK)
                .expect("mannequin has the bump landmark");
            let shapes = sample_family(&setup.family, config.subjects.max(2), seed)?;
            let bumped = shapes[..config.subjects]
                .iter()
                .map(|m| add_local_bump(m, center, config.bump_radius, config.bump_amplitude))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            measure_rows(&bumped, setup)
        }
    }
}

/// Runs the protocol. Subjects are predicted in parallel on the current
/// rayon pool and gathered in input order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if config.subjects == 0 {
        return Err(CliError::input("need at least one subject"));
    }
    let setup = setup(config)?;
    let targets = targets(config, &setup)?;
    let model = &setup.model;
    let profile = &model.profile;
    let stddevs = model.pca.stddevs();
    let results = targets
        .par_iter()
        .map(|t| -> Result<_> {
            let p = predict_shape(&model.pca, &model.features, profile, t, &config.refinement)?;
            let r = &p.report;
            let baseline = measured_from_residuals(profile, t.values(), &r.initial_residuals)?;
            let full = measured_from_residuals(profile, t.values(), &r.final_residuals)?;
            let record = SubjectRecord {
                targets: t.values().to_vec(),
                initial_energy: r.initial_energy,
                stage1_energy: r.stage1_energy,
                stage2_energy: r.stage2_energy,
                stage1_residuals: r.stage1_residuals.clone(),
                final_residuals: r.final_residuals.clone(),
                initial_clamp_ratio: clamp_ratio(r.initial_weights.as_slice(), &stddevs),
                stage1_clamp_ratio: clamp_ratio(r.stage1_weights.as_slice(), &stddevs),
            };
            Ok((baseline, full, record))
        })
        .collect::<Result<Vec<_>>>()?;

    let target_rows: Vec<Vec<f64>> = targets.iter().map(|t| t.values().to_vec()).collect();
    let mut baseline_rows = Vec::with_capacity(results.len());
    let mut full_rows = Vec::with_capacity(results.len());
    let mut subjects = Vec::with_capacity(results.len());
    for (b, f, s) in results {
        baseline_rows.push(b);
        full_rows.push(f);
        subjects.push(s);
    }
    let names: Vec<String> = profile.names().map(str::to_owned).collect();
    let report = ExperimentReport {
        protocol: config.protocol.name(),
        seed: config.seed,
        resolution: config.resolution,
        vertices: model.pca.vertex_count(),
        triangles: model.pca.mean().triangle_count(),
        modes: config.modes,
        training: config.training,
        components: model.pca.component_count(),
        l: config
            .refinement
            .clamp_multiplier
            .is_finite()
            .then_some(config.refinement.clamp_multiplier),
        lambda: config.refinement.smoothness_weight,
        s: config.refinement.vertex_rounds,
        measurements: names.clone(),
        bump_measurement: (config.protocol == Protocol::SmallTraining).then(|| BUMP_MEASUREMENT.to_owned()),
        feature_analysis: EvaluationReport::new(profile, &baseline_rows, &target_rows)?,
        full: EvaluationReport::new(profile, &full_rows, &target_rows)?,
        subjects,
    };
    Ok(ExperimentOutcome {
        report,
        targets: MeasurementTable::new(names.clone(), target_rows)?,
        feature_analysis: MeasurementTable::new(names.clone(), baseline_rows)?,
        full: MeasurementTable::new(names, full_rows)?,
    })
}

pub fn summary(outcome: &ExperimentOutcome) -> String {
    let r = &outcome.report;
    let mut s = format!(
        "protocol {} seed {} ({} vertices, {} training shapes, r = {})\n\n",
        r.protocol, r.seed, r.vertices, r.training, r.components
    );
    s.push_str(&comparison_table(&[
        ("feature analysis", &r.feature_analysis),
        ("full", &r.full),
    ]));
    s
}

/// Bundle file names and contents, in write order.
pub fn bundle(outcome: &ExperimentOutcome) -> Vec<(&'static str, String)> {
    vec![
        ("report.json", to_json(&outcome.report)),
        ("summary.txt", summary(outcome)),
        ("targets.csv", format_table(&outcome.targets)),
        ("feature_analysis.csv", format_table(&outcome.feature_analysis)),
        ("full.csv", format_table(&outcome.full)),
    ]
}

pub fn write_bundle(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::from(e).context(dir.display()))?;
    for (name, contents) in bundle(outcome) {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::from(e).context(path.display()))?;
    }
    Ok(())
}
