//! Trained model bundle (PCA space, feature map and the measurement profile
//! it was trained with) and its JSON file format.

use std::path::Path;

use bodyshape_core::measure::measure_all;
use bodyshape_core::model::{train_feature_map, train_pca};
use bodyshape_core::{
    ComponentCount, FeatureMap, MeasurementProfile, Normalization, PcaModel, TriangleMesh,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::profile::{profile_from_records, profile_records, SpecRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub pca: PcaModel,
    pub features: FeatureMap,
    pub profile: MeasurementProfile,
}

/// PCA, per-mesh measurement and feature analysis over one training set.
/// Measurements are taken in parallel and gathered in input order.
pub fn train_model(
    meshes: &[TriangleMesh],
    profile: &MeasurementProfile,
    components: ComponentCount,
    normalization: Normalization,
) -> Result<TrainedModel> {
    let pca = train_pca(meshes, components)?;
    let measured = meshes
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            measure_all(m, profile)
                .map(|v| v.into_inner())
                .map_err(|e| CliError::from(e).context(format!("training mesh {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = meshes.iter().map(|m| pca.project(m)).collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&[f64]> = measured.iter().map(Vec::as_slice).collect();
    let features = train_feature_map(&pca, &refs, &weights, normalization)?;
    Ok(TrainedModel {
        pca,
        features,
        profile: profile.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureMapRecord {
    /// Row-major, `r` rows of `q + 1` entries.
    matrix: Vec<Vec<f64>>,
    normalization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    m: usize,
    r: usize,
    n: usize,
    mean: Vec<f64>,
    /// One entry per component, each a full `3m` column.
    basis: Vec<Vec<f64>>,
    variances: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    feature_map: FeatureMapRecord,
    profile: Vec<SpecRecord>,
}

fn parse_normalization(s: &str) -> Result<Normalization> {
    match s {
        "eigenvalue" => Ok(Normalization::Eigenvalue),
        "stddev" => Ok(Normalization::StdDev),
        other => Err(CliError::input(format!("unknown normalization `{other}`"))),
    }
}

pub fn format_model(model: &TrainedModel) -> String {
    let pca = &model.pca;
    let basis = pca.basis();
    let fm = model.features.matrix();
    let record = ModelRecord {
        m: pca.vertex_count(),
        r: pca.component_count(),
        n: pca.training_count(),
        mean: pca.mean_flat().to_vec(),
        basis: basis.column_iter().map(|c| c.iter().copied().collect()).collect(),
        variances: pca.variances().to_vec(),
        triangles: pca.mean().triangles().to_vec(),
        feature_map: FeatureMapRecord {
            matrix: fm.row_iter().map(|r| r.iter().copied().collect()).collect(),
            normalization: model.features.normalization().as_str().to_owned(),
        },
        profile: profile_records(&model.profile),
    };
    let mut s = serde_json::to_string(&record).expect("model serializes");
    s.push('\n');
    s
}

pub fn parse_model(text: &str) -> Result<TrainedModel> {
    let rec: ModelRecord = serde_json::from_str(text)?;
    let dim = 3 * rec.m;
    if rec.mean.len() != dim {
        return Err(CliError::input(format!("mean has {} entries, expected {dim}", rec.mean.len())));
    }
    if rec.basis.len() != rec.r || rec.basis.iter().any(|c| c.len() != dim) {
        return Err(CliError::input(format!("basis must be {} columns of {dim}", rec.r)));
    }
    if rec.variances.len() != rec.r {
        return Err(CliError::input(format!("expected {} variances", rec.r)));
    }
    let mean = TriangleMesh::unflatten(&rec.mean, rec.triangles)?;
    let basis = DMatrix::from_fn(dim, rec.r, |i, j| rec.basis[j][i]);
    let pca = PcaModel::from_parts(mean, basis, rec.variances, rec.n)?;
    let profile = profile_from_records(&rec.profile, pca.vertex_count(), pca.mean().triangle_count())?;
    let cols = profile.len() + 1;
    let rows = &rec.feature_map.matrix;
    if rows.len() != rec.r || rows.iter().any(|row| row.len() != cols) {
        return Err(CliError::input(format!("feature map must be {} x {cols}", rec.r)));
    }
    let matrix = DMatrix::from_fn(rec.r, cols, |i, j| rows[i][j]);
    let features = FeatureMap::from_parts(matrix, parse_normalization(&rec.feature_map.normalization)?);
    Ok(TrainedModel { pca, features, profile })
}

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, format_model(model)).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    parse_model(&text).map_err(|e| e.context(path.display()))
}
