//! Measurement profile files: a JSON array of spec objects with 0-based
//! vertex and triangle indices.

use std::path::Path;

use bodyshape_core::{MeasurementKind, MeasurementProfile, MeasurementSpec, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecType {
    Euclidean,
    Geodesic,
    Circumference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecRecord {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: SpecType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl SpecRecord {
    pub fn from_spec(spec: &MeasurementSpec) -> Self {
        let mut rec = SpecRecord {
            name: spec.name.clone(),
            kind: SpecType::Euclidean,
            a: None,
            b: None,
            anchor: None,
            normal: None,
            region: None,
            group: spec.group.clone(),
        };
        match &spec.kind {
            MeasurementKind::Euclidean { a, b } | MeasurementKind::Geodesic { a, b } => {
                if matches!(spec.kind, MeasurementKind::Geodesic { .. }) {
                    rec.kind = SpecType::Geodesic;
                }
                rec.a = Some(*a);
                rec.b = Some(*b);
            }
            MeasurementKind::Circumference {
                anchor,
                normal,
                region,
            } => {
                rec.kind = SpecType::Circumference;
                rec.anchor = Some(*anchor);
                rec.normal = Some([normal.x, normal.y, normal.z]);
                rec.region = Some(region.clone());
            }
        }
        rec
    }

    pub fn to_spec(&self) -> Result<MeasurementSpec> {
        let need = |v: Option<usize>, field: &str| {
            v.ok_or_else(|| CliError::input(format!("measurement `{}` is missing `{field}`", self.name)))
        };
        let spec = match self.kind {
            SpecType::Euclidean => MeasurementSpec::euclidean(&self.name, need(self.a, "a")?, need(self.b, "b")?),
            SpecType::Geodesic => MeasurementSpec::geodesic(&self.name, need(self.a, "a")?, need(self.b, "b")?),
            SpecType::Circumference => {
                let n = self
                    .normal
                    .ok_or_else(|| CliError::input(format!("measurement `{}` is missing `normal`", self.name)))?;
                let region = self
                    .region
                    .clone()
                    .ok_or_else(|| CliError::input(format!("measurement `{}` is missing `region`", self.name)))?;
                MeasurementSpec::circumference(
                    &self.name,
                    need(self.anchor, "anchor")?,
                    Vec3::new(n[0], n[1], n[2]),
                    region,
                )
            }
        };
        Ok(match &self.group {
            Some(g) => spec.in_group(g),
            None => spec,
        })
    }
}

pub fn profile_records(profile: &MeasurementProfile) -> Vec<SpecRecord> {
    profile.specs().iter().map(SpecRecord::from_spec).collect()
}

/// Builds a profile from records, validated against the given topology.
pub fn profile_from_records(
    records: &[SpecRecord],
    vertex_count: usize,
    triangle_count: usize,
) -> Result<MeasurementProfile> {
    let specs = records.iter().map(SpecRecord::to_spec).collect::<Result<Vec<_>>>()?;
    Ok(MeasurementProfile::new(specs, vertex_count, triangle_count)?)
}

pub fn format_profile(profile: &MeasurementProfile) -> String {
    let mut s = serde_json::to_string_pretty(&profile_records(profile)).expect("profile serializes");
    s.push('\n');
    s
}

pub fn parse_profile(text: &str, vertex_count: usize, triangle_count: usize) -> Result<MeasurementProfile> {
    let records: Vec<SpecRecord> = serde_json::from_str(text)?;
    profile_from_records(&records, vertex_count, triangle_count)
}

pub fn read_profile(path: &Path, vertex_count: usize, triangle_count: usize) -> Result<MeasurementProfile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    parse_profile(&text, vertex_count, triangle_count).map_err(|e| e.context(path.display()))
}
