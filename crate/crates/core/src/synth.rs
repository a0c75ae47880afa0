//! Synthetic shape families and measurement samplers.
//!
//! Two templates are provided: a "mannequin" (an elliptical torso of
//! revolution with head, and four tube limbs stitched into rectangular holes
//! so the result stays a single closed genus-0 surface) and a "blob" (a
//! deformed sphere). Families are exactly linear: a template plus a seeded
//! combination of smooth harmonic displacement modes.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::measure::{MeasureError, MeasurementProfile, MeasurementSpec, MeasurementVector};
use crate::mesh::{EdgeGraph, MeshError, Triangle, TriangleMesh, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("resolution {found} is below the minimum {min}")]
    ResolutionTooSmall { found: usize, min: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("could not draw {what} after {attempts} attempts")]
    RetryLimit { what: &'static str, attempts: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Free-standing template selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Mannequin,
    Blob,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Mannequin => "mannequin",
            TemplateKind::Blob => "blob",
        }
    }

    pub fn default_resolution(self) -> usize {
        match self {
            TemplateKind::Mannequin => MANNEQUIN_DEFAULT_RESOLUTION,
            TemplateKind::Blob => BLOB_DEFAULT_RESOLUTION,
        }
    }
}

pub fn make_template(kind: TemplateKind, resolution: usize) -> Result<TriangleMesh, SynthError> {
    match kind {
        TemplateKind::Mannequin => Ok(Mannequin::new(resolution)?.mesh),
        TemplateKind::Blob => Ok(Blob::new(resolution)?.mesh),
    }
}

pub const MANNEQUIN_DEFAULT_RESOLUTION: usize = 32;
pub const BLOB_DEFAULT_RESOLUTION: usize = 24;

/// Torso meridian control rings `(x radius, y radius, height)` in mm, from
/// the crotch to the crown.
const TORSO_PROFILE: &[[f64; 3]] = &[
    [0.0, 0.0, 800.0],
    [90.0, 60.0, 800.0],
    [170.0, 110.0, 805.0],
    [185.0, 120.0, 850.0],
    [175.0, 110.0, 950.0],
    [150.0, 95.0, 1050.0],
    [165.0, 110.0, 1150.0],
    [180.0, 120.0, 1250.0],
    [190.0, 115.0, 1350.0],
    [120.0, 80.0, 1420.0],
    [55.0, 55.0, 1460.0],
    [55.0, 55.0, 1510.0],
    [85.0, 95.0, 1560.0],
    [90.0, 100.0, 1620.0],
    [70.0, 80.0, 1680.0],
    [0.0, 0.0, 1710.0],
];

const ARM_HOLE: (f64, f64) = (1260.0, 1360.0);
const WAIST_HEIGHT: f64 = 1050.0;
const CHEST_HEIGHT: f64 = 1200.0;
const HIP_HEIGHT: f64 = 880.0;
const NECK_HEIGHT: f64 = 1480.0;
const HEAD_HEIGHT: f64 = 1600.0;
/// Rings on each side of a torso circumference included in its region.
const TORSO_BAND: usize = 6;
const LIMB_BAND: usize = 4;

/// Radius profile `(arc fraction, radius)` along a limb.
const ARM_RADIUS: &[[f64; 2]] = &[[0.0, 48.0], [0.15, 45.0], [0.5, 38.0], [0.85, 30.0], [1.0, 28.0]];
const LEG_RADIUS: &[[f64; 2]] = &[[0.0, 80.0], [0.15, 75.0], [0.5, 52.0], [0.65, 55.0], [0.9, 38.0], [1.0, 36.0]];

fn interpolate(table: &[[f64; 2]], t: f64) -> f64 {
    for w in table.windows(2) {
        if t <= w[1][0] {
            let s = (t - w[0][0]) / (w[1][0] - w[0][0]);
            return w[0][1] + s * (w[1][1] - w[0][1]);
        }
    }
    table[table.len() - 1][1]
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Which part of the mannequin a triangle belongs to, with its ring band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Torso(usize),
    Limb(usize, usize),
}

struct Limb {
    name: &'static str,
    /// Vertex indices per ring (ring 0 is the hole boundary).
    rings: Vec<Vec<usize>>,
    tangents: Vec<Vec3>,
    tip: usize,
}

/// The mannequin template with named landmarks and its body profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Mannequin {
    pub mesh: TriangleMesh,
    landmarks: BTreeMap<String, usize>,
    specs: Vec<MeasurementSpec>,
}

struct MannequinBuilder {
    segments: usize,
    rings: usize,
    verts: Vec<Vec3>,
    tris: Vec<Triangle>,
    parts: Vec<Part>,
    ring_heights: Vec<f64>,
    ring_radii: Vec<f64>,
}

impl MannequinBuilder {
    fn torso_index(&self, k: usize, s: usize) -> usize {
        1 + k * self.segments + s % self.segments
    }

    fn top_pole(&self) -> usize {
        1 + self.rings * self.segments
    }

    fn ring_near(&self, z: f64) -> usize {
        // first non-disc ring whose height is closest to z
        (0..self.rings)
            .filter(|&k| self.ring_heights[k] > 806.0)
            .min_by(|&a, &b| {
                (self.ring_heights[a] - z)
                    .abs()
                    .partial_cmp(&(self.ring_heights[b] - z).abs())
                    .expect("finite heights")
            })
            .expect("torso has side rings")
    }

    fn build_torso(&mut self) {
        let n = TORSO_PROFILE.len();
        let mut arc = vec![0.0; n];
        for i in 1..n {
            let (p, q) = (TORSO_PROFILE[i - 1], TORSO_PROFILE[i]);
            arc[i] = arc[i - 1] + ((q[0] - p[0]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
        }
        let total = arc[n - 1];
        self.verts.push(Vec3::new(0.0, 0.0, TORSO_PROFILE[0][2]));
        for k in 0..self.rings {
            let target = total * (k + 1) as f64 / (self.rings + 1) as f64;
            let i = (1..n).find(|&i| arc[i] >= target).expect("target within profile");
            let s = (target - arc[i - 1]) / (arc[i] - arc[i - 1]);
            let lerp = |c: usize| TORSO_PROFILE[i - 1][c] + s * (TORSO_PROFILE[i][c] - TORSO_PROFILE[i - 1][c]);
            let (a, b, z) = (lerp(0), lerp(1), lerp(2));
            self.ring_heights.push(z);
            self.ring_radii.push(a);
            for seg in 0..self.segments {
                let theta = 2.0 * PI * seg as f64 / self.segments as f64;
                self.verts.push(Vec3::new(a * theta.cos(), b * theta.sin(), z));
            }
        }
        self.verts.push(Vec3::new(0.0, 0.0, TORSO_PROFILE[n - 1][2]));
    }

    /// Torso triangles, skipping the quads `(k, s)` in `holes`.
    fn torso_triangles(&mut self, holes: &[(usize, usize, usize, usize)]) {
        let sg = self.segments;
        let in_hole = |k: usize, s: usize| {
            holes
                .iter()
                .any(|&(k0, h, s0, w)| k >= k0 && k < k0 + h && (s + sg - s0) % sg < w)
        };
        for s in 0..sg {
            self.tris.push([0, self.torso_index(0, s + 1), self.torso_index(0, s)]);
            self.parts.push(Part::Torso(0));
        }
        for k in 0..self.rings - 1 {
            for s in 0..sg {
                if in_hole(k, s) {
                    continue;
                }
                let (v00, v01) = (self.torso_index(k, s), self.torso_index(k, s + 1));
                let (v10, v11) = (self.torso_index(k + 1, s), self.torso_index(k + 1, s + 1));
                self.tris.push([v00, v01, v11]);
                self.tris.push([v00, v11, v10]);
                self.parts.push(Part::Torso(k));
                self.parts.push(Part::Torso(k));
            }
        }
        let top = self.top_pole();
        for s in 0..sg {
            let k = self.rings - 1;
            self.tris.push([self.torso_index(k, s), self.torso_index(k, s + 1), top]);
            self.parts.push(Part::Torso(k));
        }
    }

    /// Boundary loop of the hole of quads `k0..k0+h` by `s0..s0+w`.
    fn hole_loop(&self, k0: usize, h: usize, s0: usize, w: usize) -> Vec<usize> {
        let mut ring = Vec::with_capacity(2 * (h + w));
        for j in 0..=w {
            ring.push(self.torso_index(k0, s0 + j));
        }
        for k in k0 + 1..=k0 + h {
            ring.push(self.torso_index(k, s0 + w));
        }
        for j in (0..w).rev() {
            ring.push(self.torso_index(k0 + h, s0 + j));
        }
        for k in (k0 + 1..k0 + h).rev() {
            ring.push(self.torso_index(k, s0));
        }
        ring
    }

    #[allow(clippy::too_many_arguments)]
    fn build_limb(
        &mut self,
        name: &'static str,
        index: usize,
        boundary: Vec<usize>,
        outward: Vec3,
        direction: Vec3,
        lead: f64,
        length: f64,
        radius: &[[f64; 2]],
        ring_count: usize,
    ) -> Limb {
        let n = boundary.len();
        let c0 = boundary.iter().map(|&i| self.verts[i]).sum::<Vec3>() / n as f64;
        let p0 = c0;
        let p1 = c0 + outward * lead;
        let p2 = p1 + direction.normalize() * length;
        let bezier = |t: f64| p0 * ((1.0 - t) * (1.0 - t)) + p1 * (2.0 * t * (1.0 - t)) + p2 * (t * t);
        let tangent = |t: f64| ((p1 - p0) * (2.0 * (1.0 - t)) + (p2 - p1) * (2.0 * t)).normalize();

        // arc-length parametrisation of the centre curve
        const SAMPLES: usize = 400;
        let mut arc = vec![0.0; SAMPLES + 1];
        for i in 1..=SAMPLES {
            let (a, b) = (bezier((i - 1) as f64 / SAMPLES as f64), bezier(i as f64 / SAMPLES as f64));
            arc[i] = arc[i - 1] + (b - a).norm();
        }
        let at_fraction = |u: f64| {
            let target = u * arc[SAMPLES];
            let i = (1..=SAMPLES).find(|&i| arc[i] >= target).unwrap_or(SAMPLES);
            let s = if arc[i] > arc[i - 1] {
                (target - arc[i - 1]) / (arc[i] - arc[i - 1])
            } else {
                0.0
            };
            ((i - 1) as f64 + s) / SAMPLES as f64
        };

        let d0 = self.verts[boundary[0]] - c0;
        let e1_0 = (d0 - outward * d0.dot(&outward)).normalize();
        let e2_0 = outward.cross(&e1_0);
        let angles: Vec<f64> = boundary
            .iter()
            .map(|&i| {
                let d = self.verts[i] - c0;
                d.dot(&e2_0).atan2(d.dot(&e1_0))
            })
            .collect();

        let mut rings = vec![boundary.clone()];
        let mut tangents = vec![outward];
        for j in 1..=ring_count {
            let u = j as f64 / ring_count as f64;
            let t = at_fraction(u);
            let (c, tan) = (bezier(t), tangent(t));
            let e1 = (e1_0 - tan * e1_0.dot(&tan)).normalize();
            let e2 = tan.cross(&e1);
            let r = interpolate(radius, u);
            let beta = smoothstep(u / 0.15);
            let mut ring = Vec::with_capacity(n);
            for (k, &b) in boundary.iter().enumerate() {
                let circle = c + (e1 * angles[k].cos() + e2 * angles[k].sin()) * r;
                let carried = self.verts[b] + (c - c0);
                ring.push(self.verts.len());
                self.verts.push(carried * (1.0 - beta) + circle * beta);
            }
            rings.push(ring);
            tangents.push(tan);
        }
        let end = tangent(1.0);
        let tip = self.verts.len();
        self.verts.push(p2 + end * (0.6 * interpolate(radius, 1.0)));

        let mut tris = Vec::new();
        let mut parts = Vec::new();
        for j in 0..ring_count {
            for i in 0..n {
                let (a, b) = (rings[j][i], rings[j][(i + 1) % n]);
                let (c, d) = (rings[j + 1][(i + 1) % n], rings[j + 1][i]);
                tris.push([a, b, c]);
                tris.push([a, c, d]);
                parts.push(Part::Limb(index, j));
                parts.push(Part::Limb(index, j));
            }
        }
        for i in 0..n {
            tris.push([rings[ring_count][i], rings[ring_count][(i + 1) % n], tip]);
            parts.push(Part::Limb(index, ring_count));
        }
        // the tube uses edge boundary[0] -> boundary[1]; the torso must use
        // it in the opposite direction
        let (a, b) = (boundary[0], boundary[1]);
        let torso_forward = self.tris.iter().any(|t| {
            (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b)
        });
        if torso_forward {
            for t in &mut tris {
                t.swap(1, 2);
            }
        }
        self.tris.extend(tris);
        self.parts.extend(parts);
        Limb {
            name,
            rings,
            tangents,
            tip,
        }
    }
}

impl Mannequin {
    /// `resolution` is the number of segments around the torso; it must be a
    /// multiple of 8 and at least 16.
    pub fn new(resolution: usize) -> Result<Self, SynthError> {
        if resolution < 16 {
            return Err(SynthError::ResolutionTooSmall {
                found: resolution,
                min: 16,
            });
        }
        if !resolution.is_multiple_of(8) {
            return Err(SynthError::InvalidParameter("mannequin resolution must be a multiple of 8"));
        }
        let sg = resolution;
        let mut b = MannequinBuilder {
            segments: sg,
            rings: 5 * sg / 4,
            verts: Vec::new(),
            tris: Vec::new(),
            parts: Vec::new(),
            ring_heights: Vec::new(),
            ring_radii: Vec::new(),
        };
        b.build_torso();

        let arm_rings: Vec<usize> = (0..b.rings)
            .filter(|&k| b.ring_heights[k] >= ARM_HOLE.0 && b.ring_heights[k] <= ARM_HOLE.1)
            .collect();
        let leg_rings: Vec<usize> = (0..b.rings)
            .filter(|&k| b.ring_heights[k] <= 806.0 && b.ring_radii[k] >= 30.0 && b.ring_radii[k] <= 160.0)
            .collect();
        let span = |r: &[usize]| (r[0], (r[r.len() - 1] - r[0]).max(2));
        let (arm_k0, arm_h) = span(&arm_rings);
        let (leg_k0, leg_h) = span(&leg_rings);
        let arm_w = sg / 8;
        let leg_w = 2 * ((3 * sg) as f64 / 32.0).round() as usize;
        let right = |w: usize| sg - w / 2;
        let left = |w: usize| sg / 2 - w / 2;
        let holes = [
            (arm_k0, arm_h, right(arm_w), arm_w),
            (arm_k0, arm_h, left(arm_w), arm_w),
            (leg_k0, leg_h, right(leg_w), leg_w),
            (leg_k0, leg_h, left(leg_w), leg_w),
        ];
        b.torso_triangles(&holes);

        let arm_dir = |sign: f64| Vec3::new(sign * 0.55, 0.0, -0.83);
        let leg_dir = |sign: f64| Vec3::new(sign * 0.06, 0.0, -1.0);
        let arm_count = 7 * sg / 16;
        let leg_count = 9 * sg / 16;
        let limbs = [
            ("arm_r", holes[0], Vec3::x(), arm_dir(1.0), 40.0, 600.0, ARM_RADIUS, arm_count),
            ("arm_l", holes[1], -Vec3::x(), arm_dir(-1.0), 40.0, 600.0, ARM_RADIUS, arm_count),
            ("leg_r", holes[2], -Vec3::z(), leg_dir(1.0), 20.0, 720.0, LEG_RADIUS, leg_count),
            ("leg_l", holes[3], -Vec3::z(), leg_dir(-1.0), 20.0, 720.0, LEG_RADIUS, leg_count),
        ];
        let mut built = Vec::new();
        for (index, (name, (k0, h, s0, w), out, dir, lead, len, radius, count)) in limbs.into_iter().enumerate() {
            let boundary = b.hole_loop(k0, h, s0, w);
            built.push(b.build_limb(name, index, boundary, out, dir, lead, len, radius, count));
        }

        // drop vertices left inside the holes
        let mut used = vec![false; b.verts.len()];
        for t in &b.tris {
            for &v in t {
                used[v] = true;
            }
        }
        let mut remap = vec![usize::MAX; b.verts.len()];
        let mut verts = Vec::with_capacity(b.verts.len());
        for (i, v) in b.verts.iter().enumerate() {
            if used[i] {
                remap[i] = verts.len();
                verts.push(*v);
            }
        }
        let tris: Vec<Triangle> = b.tris.iter().map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]]).collect();
        let mesh = TriangleMesh::new(verts, tris)?;

        let mut landmarks = BTreeMap::new();
        let mut mark = |name: &str, v: usize| {
            debug_assert_ne!(remap[v], usize::MAX, "landmark {name} removed");
            landmarks.insert(name.to_string(), remap[v]);
        };
        let quarter = [0, sg / 4, sg / 2, 3 * sg / 4];
        let ring_marks = [
            ("waist", WAIST_HEIGHT),
            ("chest", CHEST_HEIGHT),
            ("hip", HIP_HEIGHT),
            ("neck", NECK_HEIGHT),
            ("head", HEAD_HEIGHT),
        ];
        for (prefix, z) in ring_marks {
            let k = b.ring_near(z);
            for (suffix, s) in ["r", "front", "l", "back"].iter().zip(quarter) {
                mark(&alloc::format!("{prefix}_{suffix}"), b.torso_index(k, s));
            }
        }
        mark("crotch", 0);
        mark("crown", b.top_pole());
        let shoulder_k = (arm_k0 + arm_h + 1).min(b.rings - 1);
        mark("shoulder_r", b.torso_index(shoulder_k, 0));
        mark("shoulder_l", b.torso_index(shoulder_k, sg / 2));
        for limb in &built {
            let side = &limb.name[limb.name.len() - 1..];
            let kind = &limb.name[..3];
            let (tip, mid, low) = match kind {
                "arm" => ("hand", "elbow", "wrist"),
                _ => ("foot", "knee", "ankle"),
            };
            let count = limb.rings.len() - 1;
            mark(&alloc::format!("{tip}_{side}"), limb.tip);
            mark(&alloc::format!("{mid}_{side}"), limb.rings[count / 2][0]);
            mark(&alloc::format!("{low}_{side}"), limb.rings[(9 * count) / 10][0]);
        }

        let torso_band = |k: usize| -> Vec<usize> {
            b.parts
                .iter()
                .enumerate()
                .filter(|(_, p)| matches!(p, Part::Torso(j) if j + TORSO_BAND >= k && *j <= k + TORSO_BAND))
                .map(|(i, _)| i)
                .collect()
        };
        let limb_band = |limb: usize, j: usize| -> Vec<usize> {
            b.parts
                .iter()
                .enumerate()
                .filter(|(_, p)| matches!(p, Part::Limb(l, r) if *l == limb && r + LIMB_BAND >= j && *r <= j + LIMB_BAND))
                .map(|(i, _)| i)
                .collect()
        };
        let lm = |name: &str| landmarks[name];

        let mut specs = vec![
            MeasurementSpec::euclidean("stature", lm("crown"), lm("foot_r")),
            MeasurementSpec::euclidean("shoulder_breadth", lm("shoulder_r"), lm("shoulder_l")),
            MeasurementSpec::euclidean("arm_length_r", lm("shoulder_r"), lm("hand_r")),
            MeasurementSpec::euclidean("arm_length_l", lm("shoulder_l"), lm("hand_l")),
            MeasurementSpec::euclidean("inseam_r", lm("crotch"), lm("foot_r")),
            MeasurementSpec::euclidean("inseam_l", lm("crotch"), lm("foot_l")),
            MeasurementSpec::euclidean("hip_breadth", lm("hip_r"), lm("hip_l")),
            MeasurementSpec::euclidean("waist_breadth", lm("waist_r"), lm("waist_l")),
            MeasurementSpec::euclidean("waist_depth", lm("waist_front"), lm("waist_back")),
            MeasurementSpec::euclidean("chest_depth", lm("chest_front"), lm("chest_back")),
            MeasurementSpec::euclidean("chest_breadth", lm("chest_r"), lm("chest_l")),
            MeasurementSpec::euclidean("torso_length", lm("neck_front"), lm("crotch")),
            MeasurementSpec::euclidean("head_breadth", lm("head_r"), lm("head_l")),
            MeasurementSpec::euclidean("forearm_r", lm("elbow_r"), lm("hand_r")),
        ];
        for (name, z) in [("chest", CHEST_HEIGHT), ("waist", WAIST_HEIGHT), ("hip", HIP_HEIGHT)] {
            let k = b.ring_near(z);
            specs.push(MeasurementSpec::circumference(
                alloc::format!("{name}_circumference"),
                lm(&alloc::format!("{name}_front")),
                Vec3::z(),
                torso_band(k),
            ));
        }
        let leg_r = &built[2];
        let thigh = leg_r.rings.len() / 5;
        specs.push(MeasurementSpec::circumference(
            "thigh_circumference_r",
            remap[leg_r.rings[thigh][0]],
            leg_r.tangents[thigh],
            limb_band(2, thigh),
        ));
        for (group, limb, ring) in [("knee_l", 3usize, 0.5), ("forearm_circumference_r", 0usize, 0.7)] {
            let limb_ref = &built[limb];
            let j = (ring * (limb_ref.rings.len() - 1) as f64).round() as usize;
            let r = &limb_ref.rings[j];
            let n = r.len();
            let q: Vec<usize> = (0..4).map(|i| remap[r[i * n / 4]]).collect();
            for i in 0..4 {
                specs.push(
                    MeasurementSpec::geodesic(alloc::format!("{group}_{}", i + 1), q[i], q[(i + 1) % 4])
                        .in_group(group),
                );
            }
        }
        MeasurementProfile::for_mesh(specs.clone(), &mesh)?;
        Ok(Self {
            mesh,
            landmarks,
            specs,
        })
    }

    pub fn landmark(&self, name: &str) -> Option<usize> {
        self.landmarks.get(name).copied()
    }

    pub fn landmarks(&self) -> impl Iterator<Item = (&str, usize)> {
        self.landmarks.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// 14 Euclidean lengths, 4 circumferences and two composite girths made
    /// of four geodesics each.
    pub fn body_profile(&self) -> MeasurementProfile {
        MeasurementProfile::for_mesh(self.specs.clone(), &self.mesh).expect("validated at build")
    }
}

/// Deformed UV sphere with seven face-style geodesic measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub mesh: TriangleMesh,
    landmarks: BTreeMap<String, usize>,
}

/// Face landmarks as directions from the centre (+y is the front).
const FACE_LANDMARKS: &[(&str, [f64; 3])] = &[
    ("nose_tip", [0.0, 1.0, 0.0]),
    ("chin", [0.0, 0.7, -0.7]),
    ("forehead", [0.0, 0.75, 0.65]),
    ("eye_r", [0.35, 0.85, 0.3]),
    ("eye_l", [-0.35, 0.85, 0.3]),
    ("ear_r", [1.0, 0.0, 0.1]),
    ("ear_l", [-1.0, 0.0, 0.1]),
    ("mouth_r", [0.3, 0.85, -0.35]),
    ("mouth_l", [-0.3, 0.85, -0.35]),
];

const FACE_GEODESICS: &[(&str, &str, &str)] = &[
    ("eye_span", "eye_r", "eye_l"),
    ("nose_to_chin", "nose_tip", "chin"),
    ("forehead_to_nose", "forehead", "nose_tip"),
    ("ear_to_ear_front", "ear_r", "ear_l"),
    ("mouth_width", "mouth_r", "mouth_l"),
    ("eye_to_ear_r", "eye_r", "ear_r"),
    ("eye_to_mouth_l", "eye_l", "mouth_l"),
];

impl Blob {
    /// `resolution` latitude bands (at least 11); twice as many segments.
    pub fn new(resolution: usize) -> Result<Self, SynthError> {
        if resolution < 11 {
            return Err(SynthError::ResolutionTooSmall {
                found: resolution,
                min: 11,
            });
        }
        let (bands, sg) = (resolution, 2 * resolution);
        let shape = |d: Vec3| {
            let nose = (-(1.0 - d.y).powi(2) / 0.02).exp();
            let r = 1.0 + 0.12 * nose + 0.04 * (3.0 * d.z).cos() * d.x * d.x;
            Vec3::new(80.0 * d.x * r, 95.0 * d.y * r, 120.0 * d.z * r)
        };
        let mut verts = vec![shape(-Vec3::z())];
        for k in 1..bands {
            let polar = PI * k as f64 / bands as f64;
            for s in 0..sg {
                let az = 2.0 * PI * s as f64 / sg as f64;
                verts.push(shape(Vec3::new(polar.sin() * az.cos(), polar.sin() * az.sin(), -polar.cos())));
            }
        }
        verts.push(shape(Vec3::z()));
        let idx = |k: usize, s: usize| 1 + k * sg + s % sg;
        let top = verts.len() - 1;
        let mut tris = Vec::new();
        for s in 0..sg {
            tris.push([0, idx(0, s + 1), idx(0, s)]);
        }
        for k in 0..bands - 2 {
            for s in 0..sg {
                tris.push([idx(k, s), idx(k, s + 1), idx(k + 1, s + 1)]);
                tris.push([idx(k, s), idx(k + 1, s + 1), idx(k + 1, s)]);
            }
        }
        for s in 0..sg {
            tris.push([idx(bands - 2, s), idx(bands - 2, s + 1), top]);
        }
        let mesh = TriangleMesh::new(verts, tris)?;
        let mut landmarks = BTreeMap::new();
        for (name, d) in FACE_LANDMARKS {
            let target = shape(Vec3::new(d[0], d[1], d[2]).normalize());
            let nearest = (0..mesh.vertex_count())
                .min_by(|&a, &b| {
                    let (da, db) = (mesh.vertices()[a] - target, mesh.vertices()[b] - target);
                    da.norm_squared().partial_cmp(&db.norm_squared()).expect("finite")
                })
                .expect("non-empty mesh");
            landmarks.insert(name.to_string(), nearest);
        }
        Ok(Self { mesh, landmarks })
    }

    pub fn landmark(&self, name: &str) -> Option<usize> {
        self.landmarks.get(name).copied()
    }

    pub fn face_profile(&self) -> MeasurementProfile {
        let specs = FACE_GEODESICS
            .iter()
            .map(|(name, a, b)| MeasurementSpec::geodesic(*name, self.landmarks[*a], self.landmarks[*b]))
            .collect();
        MeasurementProfile::for_mesh(specs, &self.mesh).expect("landmarks are valid vertices")
    }
}

/// Largest allowed mode magnitude relative to the bounding-box diagonal.
pub const MODE_MAGNITUDE: f64 = 0.05;
/// Largest allowed `|f(i) - f(j)| / |p_i - p_j|` over template edges.
pub const MODE_EDGE_RATIO: f64 = 0.45;
const HARMONICS: usize = 3;
const MAX_FREQUENCY: f64 = 1.0;

/// Displacement field, one vector per template vertex.
pub type Mode = Vec<Vec3>;

/// Unscaled sum of random low-frequency cosines per coordinate.
fn harmonic_mode(template: &TriangleMesh, rng: &mut ChaCha8Rng) -> Mode {
    let (lo, hi) = template.bounding_box();
    let centre = (lo + hi) * 0.5;
    let diag = template.bounding_box_diagonal();
    let mut terms = Vec::with_capacity(3 * HARMONICS);
    for _ in 0..3 * HARMONICS {
        let omega = Vec3::new(
            rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
            rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
            rng.random_range(-MAX_FREQUENCY..MAX_FREQUENCY),
        );
        let amplitude: f64 = rng.random_range(-1.0..1.0);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        terms.push((omega, amplitude, phase));
    }
    let raw: Vec<Vec3> = template
        .vertices()
        .iter()
        .map(|p| {
            let x = (p - centre) / diag;
            let mut f = Vec3::zeros();
            for (c, chunk) in terms.chunks(HARMONICS).enumerate() {
                f[c] = chunk
                    .iter()
                    .map(|(w, a, ph)| a * (2.0 * PI * w.dot(&x) + ph).cos())
                    .sum();
            }
            f
        })
        .collect();
    raw
}

/// Rescales `field` to the magnitude and edge-stretch limits.
fn scaled(template: &TriangleMesh, field: Mode) -> Mode {
    let diag = template.bounding_box_diagonal();
    let peak = field.iter().map(|f| f.norm()).fold(0.0, f64::max);
    let steepest = template
        .edges()
        .iter()
        .map(|&(a, b)| {
            let len = (template.vertices()[a] - template.vertices()[b]).norm();
            (field[a] - field[b]).norm() / len
        })
        .fold(0.0, f64::max);
    let mut scale = MODE_MAGNITUDE * diag / peak;
    if steepest > 0.0 {
        scale = scale.min(MODE_EDGE_RATIO / steepest);
    }
    field.into_iter().map(|f| f * scale).collect()
}

fn dot(a: &Mode, b: &Mode) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Removes the components along `modes` (twice, for round-off) and returns
/// the fraction of the norm that survived.
fn orthogonalize(field: &mut Mode, modes: &[Mode]) -> f64 {
    let before = dot(field, field).sqrt();
    for _ in 0..2 {
        for m in modes {
            let c = dot(field, m) / dot(m, m);
            for (f, v) in field.iter_mut().zip(m) {
                *f -= v * c;
            }
        }
    }
    dot(field, field).sqrt() / before
}

/// `k` smooth, mutually orthogonal displacement fields on `template`.
pub fn make_modes(template: &TriangleMesh, k: usize, seed: u64) -> Result<Vec<Mode>, SynthError> {
    if k == 0 {
        return Err(SynthError::InvalidParameter("mode count must be at least 1"));
    }
    const ATTEMPTS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::with_capacity(k);
    while modes.len() < k {
        let mut accepted = false;
        for _ in 0..ATTEMPTS {
            let mut field = harmonic_mode(template, &mut rng);
            if orthogonalize(&mut field, &modes) > 1e-3 {
                modes.push(scaled(template, field));
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(SynthError::RetryLimit {
                what: "an independent mode",
                attempts: ATTEMPTS,
            });
        }
    }
    Ok(modes)
}

/// Default coefficient standard deviations: `0.4 * 0.85^k`, floored at
/// `0.02` so long families stay well conditioned.
pub fn default_stddevs(k: usize) -> Vec<f64> {
    (0..k).map(|i| (0.4 * 0.85f64.powi(i as i32)).max(0.02)).collect()
}

/// `template + sum_k c_k mode_k` with `c_k ~ N(0, stddev_k^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFamily {
    template: TriangleMesh,
    modes: Vec<Mode>,
    stddevs: Vec<f64>,
}

impl ShapeFamily {
    pub fn new(template: TriangleMesh, modes: Vec<Mode>, stddevs: Vec<f64>) -> Result<Self, SynthError> {
        if modes.len() != stddevs.len() {
            return Err(SynthError::DimensionMismatch {
                expected: modes.len(),
                found: stddevs.len(),
            });
        }
        if let Some(bad) = modes.iter().find(|m| m.len() != template.vertex_count()) {
            return Err(SynthError::DimensionMismatch {
                expected: template.vertex_count(),
                found: bad.len(),
            });
        }
        if stddevs.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SynthError::InvalidParameter("stddevs must be finite and non-negative"));
        }
        Ok(Self {
            template,
            modes,
            stddevs,
        })
    }

    /// Random modes with [`default_stddevs`].
    pub fn random(template: TriangleMesh, k: usize, seed: u64) -> Result<Self, SynthError> {
        let modes = make_modes(&template, k, seed)?;
        Self::new(template, modes, default_stddevs(k))
    }

    pub fn template(&self) -> &TriangleMesh {
        &self.template
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    pub fn shape(&self, coefficients: &[f64]) -> Result<TriangleMesh, SynthError> {
        if coefficients.len() != self.modes.len() {
            return Err(SynthError::DimensionMismatch {
                expected: self.modes.len(),
                found: coefficients.len(),
            });
        }
        let mut verts = self.template.vertices().to_vec();
        for (mode, c) in self.modes.iter().zip(coefficients) {
            for (v, f) in verts.iter_mut().zip(mode) {
                *v += f * *c;
            }
        }
        Ok(self.template.with_vertices(verts)?)
    }

    pub fn sample_coefficients(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                self.stddevs
                    .iter()
                    .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

/// `n` seeded family members.
pub fn sample_family(family: &ShapeFamily, n: usize, seed: u64) -> Result<Vec<TriangleMesh>, SynthError> {
    if n < 2 {
        return Err(SynthError::NotEnoughSamples(n));
    }
    family
        .sample_coefficients(n, seed)
        .iter()
        .map(|c| family.shape(c))
        .collect()
}

/// Pushes vertices within graph distance `radius` of `center` along their
/// area-weighted normals by `amplitude * cos^2(pi d / (2 radius))`.
pub fn add_local_bump(
    mesh: &TriangleMesh,
    center: usize,
    radius: f64,
    amplitude: f64,
) -> Result<TriangleMesh, SynthError> {
    mesh.vertex(center)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SynthError::InvalidParameter("bump radius must be positive"));
    }
    if !amplitude.is_finite() {
        return Err(SynthError::InvalidParameter("bump amplitude must be finite"));
    }
    let graph = EdgeGraph::build(mesh)?;
    let dist = graph.distances_within(center, radius);
    let normals = mesh.vertex_normals();
    let verts = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = dist[i];
            if d < radius {
                let w = (PI * d / (2.0 * radius)).cos();
                p + normals[i] * (amplitude * w * w)
            } else {
                *p
            }
        })
        .collect();
    Ok(mesh.with_vertices(verts)?)
}

/// Relative ridge added to the covariance diagonal.
pub const GAUSSIAN_RIDGE: f64 = 1e-9;
const MAX_REJECTIONS: usize = 10_000;

/// Multivariate Gaussian over measurement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
}

impl MeasurementGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, SynthError> {
        let q = mean.len();
        if covariance.nrows() != q || covariance.ncols() != q {
            return Err(SynthError::DimensionMismatch {
                expected: q,
                found: covariance.nrows(),
            });
        }
        let cholesky = covariance
            .clone()
            .cholesky()
            .ok_or(SynthError::NotPositiveDefinite)?
            .l();
        Ok(Self {
            mean,
            covariance,
            cholesky,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor `L` with `L L^T = covariance`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64, SynthError> {
        if x.len() != self.dimension() {
            return Err(SynthError::DimensionMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        let d = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .cholesky
            .solve_lower_triangular(&d)
            .ok_or(SynthError::NotPositiveDefinite)?;
        Ok(z.norm())
    }

    /// The point `mu + k * diag(covariance)`.
    pub fn diagonal_offset(&self, k: f64) -> Vec<f64> {
        (0..self.dimension())
            .map(|i| self.mean[i] + k * self.covariance[(i, i)])
            .collect()
    }

    fn draw_positive(
        &self,
        rng: &mut ChaCha8Rng,
        what: &'static str,
        mut offset: impl FnMut(&mut ChaCha8Rng) -> DVector<f64>,
    ) -> Result<MeasurementVector, SynthError> {
        for _ in 0..MAX_REJECTIONS {
            let x = &self.mean + &self.cholesky * offset(rng);
            if x.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Ok(MeasurementVector::new(x.as_slice().to_vec())?);
            }
        }
        Err(SynthError::RetryLimit {
            what,
            attempts: MAX_REJECTIONS,
        })
    }
}

/// Sample mean and covariance (divisor `n - 1`) plus a ridge of
/// `GAUSSIAN_RIDGE` times the mean diagonal (at least 1).
pub fn fit_gaussian(samples: &[&[f64]]) -> Result<MeasurementGaussian, SynthError> {
    let n = samples.len();
    if n < 2 {
        return Err(SynthError::NotEnoughSamples(n));
    }
    let q = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != q) {
        return Err(SynthError::DimensionMismatch {
            expected: q,
            found: bad.len(),
        });
    }
    let mut mean = DVector::zeros(q);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(q, q);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    let mean_diag = if q == 0 { 0.0 } else { cov.trace() / q as f64 };
    let ridge = GAUSSIAN_RIDGE * mean_diag.max(1.0);
    for i in 0..q {
        cov[(i, i)] += ridge;
    }
    MeasurementGaussian::new(mean, cov)
}

/// `count` draws of `mu + L z`; draws with non-positive entries are
/// rejected.
pub fn sample_close(
    gaussian: &MeasurementGaussian,
    count: usize,
    seed: u64,
) -> Result<Vec<MeasurementVector>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = gaussian.dimension();
    (0..count)
        .map(|_| {
            gaussian.draw_positive(&mut rng, "a positive close sample", |rng| {
                DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal))
            })
        })
        .collect()
}

/// `count` draws of `mu + k L u` with `u` uniform on the unit sphere, so
/// every sample lies at Mahalanobis distance `k`.
pub fn sample_ellipsoid(
    gaussian: &MeasurementGaussian,
    k: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<MeasurementVector>, SynthError> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(SynthError::InvalidParameter("ellipsoid radius must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = gaussian.dimension();
    (0..count)
        .map(|_| {
            gaussian.draw_positive(&mut rng, "a positive ellipsoid sample", |rng| loop {
                let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = z.norm();
                if norm > 1e-12 {
                    break z * (k / norm);
                }
            })
        })
        .collect()
}
