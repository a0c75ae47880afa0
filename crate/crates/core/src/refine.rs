//! Measurement-driven shape refinement.
//!
//! Each measurement becomes a sum of squared-length residual terms
//! `(|p - q|^2 - t^2)^2`. Geodesic paths and circumference hulls are broken
//! into per-edge terms whose targets split the measurement target in
//! proportion to the current edge lengths; that split, the path vertices and
//! the hull point encodings stay frozen during one inner solve and are
//! recomputed between solves.
//!
//! Refinement runs in two stages. Stage one minimises the measurement energy
//! over PCA weights (clamping after every solve), stage two minimises
//! `(1 - lambda) E_m + lambda E_s` over free vertex positions starting from
//! the stage-one shape, where `E_s` penalises differences between the
//! displacements of neighbouring vertices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::measure::{
    circumference, geodesic_path, measure_one, MeasureError, MeasurementKind, MeasurementProfile,
    MeasurementVector,
};
use crate::mesh::{EdgeGraph, MeshError, TriangleMesh, Vec3};
use crate::model::{FeatureMap, ModelError, PcaModel, ShapeWeights};
use crate::solver::{minimize, minimize_scaled, SolveConfig, SolverError, Termination};
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error("invalid refinement configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Squared-length residual term between two mesh vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTerm {
    pub a: usize,
    pub b: usize,
    pub target: f64,
}

/// A point `alpha * p[a] + (1 - alpha) * p[b]` with fixed encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEncoding {
    pub a: usize,
    pub b: usize,
    pub alpha: f64,
}

impl PointEncoding {
    fn locate(&self, x: &[f64]) -> Vec3 {
        point(x, self.a) * self.alpha + point(x, self.b) * (1.0 - self.alpha)
    }
}

/// Squared-length residual term between two hull points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullEdgeTerm {
    pub from: PointEncoding,
    pub to: PointEncoding,
    pub target: f64,
}

/// Which terms a measurement contributed to a freeze.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMeasurement {
    pub name: String,
    pub target: f64,
    /// Range into the matching term list; `None` when the measurement was
    /// dropped or contributes nothing (zero current length).
    pub terms: Option<core::ops::Range<usize>>,
}

/// Constraint set frozen for one inner solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrozenConstraints {
    pub euclidean: Vec<EdgeTerm>,
    pub geodesic: Vec<EdgeTerm>,
    pub circumference: Vec<HullEdgeTerm>,
    pub measurements: Vec<FrozenMeasurement>,
    /// Names of measurements left out because they were undefined on the
    /// mesh at freeze time.
    pub dropped: Vec<String>,
}

/// What to do when a circumference (or geodesic) cannot be evaluated while
/// freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndefinedPolicy {
    Fail,
    Drop,
}

/// Recomputes geodesic paths and circumference hulls on `mesh` and splits
/// every target over the current edges in proportion to their lengths.
pub fn freeze_constraints(
    mesh: &TriangleMesh,
    profile: &MeasurementProfile,
    targets: &MeasurementVector,
    policy: UndefinedPolicy,
) -> Result<FrozenConstraints, RefineError> {
    profile.check_mesh(mesh)?;
    if targets.len() != profile.len() {
        return Err(MeasureError::LengthMismatch {
            expected: profile.len(),
            found: targets.len(),
        }
        .into());
    }
    let needs_graph = profile
        .specs()
        .iter()
        .any(|s| matches!(s.kind, MeasurementKind::Geodesic { .. }));
    let graph = if needs_graph {
        Some(EdgeGraph::build(mesh)?)
    } else {
        None
    };

    let mut frozen = FrozenConstraints::default();
    for (spec, &target) in profile.specs().iter().zip(targets.values()) {
        let name = || spec.name.clone();
        let undefined = |e: MeasureError, frozen: &mut FrozenConstraints| -> Result<(), RefineError> {
            match policy {
                UndefinedPolicy::Drop if e.is_undefined() => {
                    frozen.dropped.push(spec.name.clone());
                    frozen.measurements.push(FrozenMeasurement {
                        name: spec.name.clone(),
                        target,
                        terms: None,
                    });
                    Ok(())
                }
                _ => Err(e.into()),
            }
        };
        match &spec.kind {
            MeasurementKind::Euclidean { a, b } => {
                let start = frozen.euclidean.len();
                frozen.euclidean.push(EdgeTerm { a: *a, b: *b, target });
                frozen.measurements.push(FrozenMeasurement {
                    name: name(),
                    target,
                    terms: Some(start..start + 1),
                });
            }
            MeasurementKind::Geodesic { a, b } => {
                let graph = graph.as_ref().expect("graph built for geodesics");
                let path = match geodesic_path(mesh, graph, *a, *b) {
                    Ok(p) => p,
                    Err(e) => {
                        undefined(measure_error_named(e, &spec.name), &mut frozen)?;
                        continue;
                    }
                };
                let start = frozen.geodesic.len();
                if path.length > 0.0 {
                    let ratio = target / path.length;
                    for (w, len) in path.vertices.windows(2).zip(&path.edge_lengths) {
                        frozen.geodesic.push(EdgeTerm {
                            a: w[0],
                            b: w[1],
                            target: ratio * len,
                        });
                    }
                }
                let end = frozen.geodesic.len();
                frozen.measurements.push(FrozenMeasurement {
                    name: name(),
                    target,
                    terms: (end > start).then_some(start..end),
                });
            }
            MeasurementKind::Circumference {
                anchor,
                normal,
                region,
            } => {
                let hull = match circumference(mesh, *anchor, *normal, region) {
                    Ok(h) => h,
                    Err(e) => {
                        undefined(measure_error_named(e, &spec.name), &mut frozen)?;
                        continue;
                    }
                };
                let ratio = target / hull.perimeter;
                let n = hull.points.len();
                let start = frozen.circumference.len();
                for k in 0..n {
                    let (p, q) = (hull.points[k], hull.points[(k + 1) % n]);
                    frozen.circumference.push(HullEdgeTerm {
                        from: PointEncoding {
                            a: p.a,
                            b: p.b,
                            alpha: p.alpha,
                        },
                        to: PointEncoding {
                            a: q.a,
                            b: q.b,
                            alpha: q.alpha,
                        },
                        target: ratio * hull.edge_lengths[k],
                    });
                }
                let end = frozen.circumference.len();
                frozen.measurements.push(FrozenMeasurement {
                    name: name(),
                    target,
                    terms: Some(start..end),
                });
            }
        }
    }
    Ok(frozen)
}

fn measure_error_named(e: MeasureError, name: &str) -> MeasureError {
    match e {
        MeasureError::Undefined { .. } => MeasureError::Undefined { name: name.into() },
        MeasureError::Unreachable { a, b, .. } => MeasureError::Unreachable {
            name: name.into(),
            a,
            b,
        },
        other => other,
    }
}

fn point(x: &[f64], i: usize) -> Vec3 {
    Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

fn add_to(grad: &mut [f64], i: usize, v: Vec3, weight: f64) {
    grad[3 * i] += weight * v.x;
    grad[3 * i + 1] += weight * v.y;
    grad[3 * i + 2] += weight * v.z;
}

/// `(|p - q|^2 - t^2)^2` and its gradient `4 (|p - q|^2 - t^2)(p - q)` with
/// respect to `p`.
fn residual_term(p: Vec3, q: Vec3, target: f64) -> (f64, Vec3) {
    let d = p - q;
    let r = d.norm_squared() - target * target;
    (r * r, d * (4.0 * r))
}

fn edge_terms_energy(terms: &[EdgeTerm], x: &[f64], grad: &mut [f64], weight: f64) -> f64 {
    let mut e = 0.0;
    for t in terms {
        let (v, g) = residual_term(point(x, t.a), point(x, t.b), t.target);
        e += v;
        add_to(grad, t.a, g, weight);
        add_to(grad, t.b, g, -weight);
    }
    e
}

/// Euclidean distance energy. Gradients (scaled by `weight`) are added to
/// `grad`, which is indexed like the flattened coordinates `x`.
pub fn energy_euclidean(x: &[f64], frozen: &FrozenConstraints, grad: &mut [f64], weight: f64) -> f64 {
    edge_terms_energy(&frozen.euclidean, x, grad, weight)
}

/// Geodesic path-edge energy, accumulated like [`energy_euclidean`].
pub fn energy_geodesic(x: &[f64], frozen: &FrozenConstraints, grad: &mut [f64], weight: f64) -> f64 {
    edge_terms_energy(&frozen.geodesic, x, grad, weight)
}

/// Circumference hull-edge energy; hull points are fixed convex
/// combinations of two vertices, so their gradients split by `alpha`.
pub fn energy_circumference(
    x: &[f64],
    frozen: &FrozenConstraints,
    grad: &mut [f64],
    weight: f64,
) -> f64 {
    let mut e = 0.0;
    for t in &frozen.circumference {
        let (v, g) = residual_term(t.from.locate(x), t.to.locate(x), t.target);
        e += v;
        add_to(grad, t.from.a, g, weight * t.from.alpha);
        add_to(grad, t.from.b, g, weight * (1.0 - t.from.alpha));
        add_to(grad, t.to.a, g, -weight * t.to.alpha);
        add_to(grad, t.to.b, g, -weight * (1.0 - t.to.alpha));
    }
    e
}

/// `E_m = E_e + E_g + E_c`.
pub fn measurement_energy(x: &[f64], frozen: &FrozenConstraints, grad: &mut [f64], weight: f64) -> f64 {
    let e = energy_euclidean(x, frozen, grad, weight);
    let g = energy_geodesic(x, frozen, grad, weight);
    let c = energy_circumference(x, frozen, grad, weight);
    e + g + c
}

/// Measurement energy of a mesh with its per-vertex gradient.
pub fn measurement_energy_of(mesh: &TriangleMesh, frozen: &FrozenConstraints) -> (f64, Vec<Vec3>) {
    let x = mesh.flatten();
    let mut g = vec![0.0; x.len()];
    let e = measurement_energy(&x, frozen, &mut g, 1.0);
    (e, g.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

/// Measurement energy expanded around a base configuration `x0`: each
/// residual is evaluated as `c0 + 2 d0.dd + |dd|^2`, with `d0` the base
/// difference vector and `c0 = |d0|^2 - t^2`, so small displacements are not
/// lost to cancellation against the target.
#[derive(Debug, Clone)]
pub struct AnchoredEnergy {
    pairs: Vec<AnchoredPair>,
}

#[derive(Debug, Clone)]
struct AnchoredPair {
    from: PointEncoding,
    to: PointEncoding,
    base: Vec3,
    offset: f64,
}

impl AnchoredEnergy {
    pub fn new(frozen: &FrozenConstraints, base: &[f64]) -> Self {
        let vertex = |i: usize| PointEncoding { a: i, b: i, alpha: 1.0 };
        let edges = frozen
            .euclidean
            .iter()
            .chain(&frozen.geodesic)
            .map(|t| (vertex(t.a), vertex(t.b), t.target));
        let hull = frozen.circumference.iter().map(|t| (t.from, t.to, t.target));
        let pairs = edges
            .chain(hull)
            .map(|(from, to, target)| {
                let d = from.locate(base) - to.locate(base);
                AnchoredPair {
                    from,
                    to,
                    base: d,
                    offset: d.norm_squared() - target * target,
                }
            })
            .collect();
        Self { pairs }
    }

    /// `E_m` at `x0 + delta`, with the gradient (scaled by `weight`) added
    /// to `grad`.
    pub fn energy(&self, delta: &[f64], grad: &mut [f64], weight: f64) -> f64 {
        let mut e = 0.0;
        for p in &self.pairs {
            let dd = p.from.locate(delta) - p.to.locate(delta);
            let r = p.offset + dd.dot(&(p.base * 2.0 + dd));
            e += r * r;
            let g = (p.base + dd) * (4.0 * r);
            add_to(grad, p.from.a, g, weight * p.from.alpha);
            add_to(grad, p.from.b, g, weight * (1.0 - p.from.alpha));
            add_to(grad, p.to.a, g, -weight * p.to.alpha);
            add_to(grad, p.to.b, g, -weight * (1.0 - p.to.alpha));
        }
        e
    }

    /// Per-vertex curvature estimate at `delta = 0`, scaled by `weight` and
    /// added to all three coordinates of each vertex in `diag`.
    ///
    /// Each pair contributes the largest eigenvalue of its Gauss-Newton block
    /// `8 c^2 d d^T`. The plain diagonal would be nearly zero across a pair,
    /// inviting long steps that rotate the pair instead of stretching it.
    pub fn add_hessian_diagonal(&self, diag: &mut [f64], weight: f64) {
        for p in &self.pairs {
            let len2 = p.base.norm_squared();
            for (v, c) in [
                (p.from.a, p.from.alpha),
                (p.from.b, 1.0 - p.from.alpha),
                (p.to.a, p.to.alpha),
                (p.to.b, 1.0 - p.to.alpha),
            ] {
                let w = 8.0 * weight * c * c * len2;
                for k in 0..3 {
                    diag[3 * v + k] += w;
                }
            }
        }
    }
}

/// Smoothness of the displacement field `x - reference`:
/// `sum_i sum_{j in N(i)} |d_i - d_j|^2`, every neighbouring pair counted
/// from both sides.
#[derive(Debug, Clone)]
pub struct Smoothness {
    reference: Vec<f64>,
    neighborhoods: Vec<Vec<usize>>,
}

impl Smoothness {
    pub fn new(reference: &TriangleMesh) -> Self {
        Self {
            reference: reference.flatten(),
            neighborhoods: reference.neighborhoods(),
        }
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Energy, with its exact gradient (scaled by `weight`) added to `grad`.
    pub fn energy(&self, x: &[f64], grad: &mut [f64], weight: f64) -> f64 {
        let disp = |i: usize| point(x, i) - point(&self.reference, i);
        let mut e = 0.0;
        for (i, ring) in self.neighborhoods.iter().enumerate() {
            let di = disp(i);
            for &j in ring {
                let diff = di - disp(j);
                e += diff.norm_squared();
                add_to(grad, i, diff, 2.0 * weight);
                add_to(grad, j, diff, -2.0 * weight);
            }
        }
        e
    }
}

impl Smoothness {
    /// Exact Hessian diagonal (`4 |N(i)|` per coordinate), scaled by
    /// `weight` and added to `diag`.
    pub fn add_hessian_diagonal(&self, diag: &mut [f64], weight: f64) {
        for (i, ring) in self.neighborhoods.iter().enumerate() {
            let h = 4.0 * weight * ring.len() as f64;
            diag[3 * i..3 * i + 3].iter_mut().for_each(|v| *v += h);
        }
    }
}

/// Reciprocal of a Hessian diagonal estimate; entries with no curvature get
/// the mean of the others.
fn inverse_diagonal(diag: &[f64]) -> Vec<f64> {
    let positive: Vec<f64> = diag.iter().copied().filter(|d| *d > 0.0 && d.is_finite()).collect();
    let fill = if positive.is_empty() {
        1.0
    } else {
        positive.iter().sum::<f64>() / positive.len() as f64
    };
    diag.iter()
        .map(|&d| if d > 0.0 && d.is_finite() { 1.0 / d } else { 1.0 / fill })
        .collect()
}

/// Smoothness energy of `mesh` relative to `reference`.
pub fn energy_smoothness(mesh: &TriangleMesh, reference: &TriangleMesh) -> Result<(f64, Vec<Vec3>), RefineError> {
    if !mesh.same_topology(reference) || mesh.vertex_count() != reference.vertex_count() {
        return Err(MeshError::TopologyMismatch.into());
    }
    let x = mesh.flatten();
    let mut g = vec![0.0; x.len()];
    let e = Smoothness::new(reference).energy(&x, &mut g, 1.0);
    Ok((e, g.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    /// Weights are clamped to `clamp_multiplier` standard deviations.
    pub clamp_multiplier: f64,
    /// Smoothness weight in stage two, within `[0, 1]`.
    pub smoothness_weight: f64,
    /// Constraint recomputations in stage one.
    pub weight_rounds: usize,
    /// Constraint recomputations in stage two.
    pub vertex_rounds: usize,
    pub solver: SolveConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            clamp_multiplier: 3.0,
            smoothness_weight: 0.1,
            weight_rounds: 3,
            vertex_rounds: 3,
            solver: SolveConfig::default(),
        }
    }
}

impl RefinementConfig {
    /// Same recomputation count for both stages.
    pub fn with_rounds(mut self, s: usize) -> Self {
        self.weight_rounds = s;
        self.vertex_rounds = s;
        self
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.clamp_multiplier > 0.0) {
            return Err(RefineError::InvalidConfig("clamp multiplier must be positive"));
        }
        if !(0.0..=1.0).contains(&self.smoothness_weight) {
            return Err(RefineError::InvalidConfig("smoothness weight must lie in [0, 1]"));
        }
        if self.weight_rounds == 0 || self.vertex_rounds == 0 {
            return Err(RefineError::InvalidConfig("recomputation counts must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of one frozen-constraint solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub energy_trace: Vec<f64>,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStage {
    pub weights: ShapeWeights,
    pub rounds: Vec<RoundReport>,
    /// Constraints of the last round.
    pub frozen: FrozenConstraints,
}

/// Stage one: minimise `E_m` over PCA weights, recomputing constraints
/// `weight_rounds` times and clamping after every solve.
pub fn optimize_weights(
    model: &PcaModel,
    profile: &MeasurementProfile,
    targets: &MeasurementVector,
    start: &ShapeWeights,
    config: &RefinementConfig,
) -> Result<WeightStage, RefineError> {
    config.validate()?;
    if start.len() != model.component_count() {
        return Err(ModelError::WeightLength {
            expected: model.component_count(),
            found: start.len(),
        }
        .into());
    }
    let mut w = start.clone();
    let mut rounds = Vec::with_capacity(config.weight_rounds);
    let mut frozen = FrozenConstraints::default();
    for _ in 0..config.weight_rounds {
        let mesh = model.synthesize(&w)?;
        frozen = freeze_constraints(&mesh, profile, targets, UndefinedPolicy::Drop)?;
        let anchored = AnchoredEnergy::new(&frozen, &mesh.flatten());
        let base = DVector::from_column_slice(&w.0);
        let mut coords_grad = vec![0.0; 3 * model.vertex_count()];
        let mut objective = |wv: &[f64], g: &mut [f64]| {
            let delta = model.basis() * (DVector::from_column_slice(wv) - &base);
            coords_grad.iter_mut().for_each(|v| *v = 0.0);
            let e = anchored.energy(delta.as_slice(), &mut coords_grad, 1.0);
            g.copy_from_slice(&model.pull_back(&coords_grad));
            e
        };
        let report = minimize(&mut objective, &w.0, &config.solver)?;
        w = model.clamp_weights(&ShapeWeights(report.x), config.clamp_multiplier);
        rounds.push(RoundReport {
            initial_energy: report.energy_trace[0],
            final_energy: report.energy,
            iterations: report.iterations,
            termination: report.termination,
            energy_trace: report.energy_trace,
            dropped: frozen.dropped.clone(),
        });
    }
    Ok(WeightStage {
        weights: w,
        rounds,
        frozen,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexStage {
    pub mesh: TriangleMesh,
    pub rounds: Vec<RoundReport>,
    pub frozen: FrozenConstraints,
}

/// Stage two: minimise `(1 - lambda) E_m + lambda E_s` over vertex
/// positions. Displacements are measured from `start` in every round.
pub fn optimize_vertices(
    start: &TriangleMesh,
    profile: &MeasurementProfile,
    targets: &MeasurementVector,
    config: &RefinementConfig,
) -> Result<VertexStage, RefineError> {
    config.validate()?;
    let lambda = config.smoothness_weight;
    let smooth = Smoothness::new(start);
    let mut mesh = start.clone();
    let mut rounds = Vec::with_capacity(config.vertex_rounds);
    let mut frozen = FrozenConstraints::default();
    for _ in 0..config.vertex_rounds {
        frozen = freeze_constraints(&mesh, profile, targets, UndefinedPolicy::Drop)?;
        let base = mesh.flatten();
        let anchored = AnchoredEnergy::new(&frozen, &base);
        let mut x = base.clone();
        let mut objective = |delta: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            for ((xi, b), d) in x.iter_mut().zip(&base).zip(delta) {
                *xi = b + d;
            }
            let em = anchored.energy(delta, g, 1.0 - lambda);
            let es = smooth.energy(&x, g, lambda);
            (1.0 - lambda) * em + lambda * es
        };
        let mut diag = vec![0.0; base.len()];
        anchored.add_hessian_diagonal(&mut diag, 1.0 - lambda);
        smooth.add_hessian_diagonal(&mut diag, lambda);
        let scale = inverse_diagonal(&diag);
        let report = minimize_scaled(&mut objective, &vec![0.0; base.len()], &config.solver, &scale)?;
        let moved: Vec<f64> = base.iter().zip(&report.x).map(|(b, d)| b + d).collect();
        mesh = mesh.with_flat(&moved)?;
        rounds.push(RoundReport {
            initial_energy: report.energy_trace[0],
            final_energy: report.energy,
            iterations: report.iterations,
            termination: report.termination,
            energy_trace: report.energy_trace,
            dropped: frozen.dropped.clone(),
        });
    }
    Ok(VertexStage { mesh, rounds, frozen })
}

/// Signed residuals `measured - target` per measurement; `None` where a
/// measurement is undefined on `mesh`.
pub fn measurement_residuals(
    mesh: &TriangleMesh,
    profile: &MeasurementProfile,
    targets: &MeasurementVector,
) -> Result<Vec<Option<f64>>, RefineError> {
    profile.check_mesh(mesh)?;
    let graph = EdgeGraph::build(mesh).ok();
    profile
        .specs()
        .iter()
        .zip(targets.values())
        .map(|(spec, &t)| match measure_one(mesh, graph.as_ref(), spec) {
            Ok(v) => Ok(Some(v - t)),
            Err(e) if e.is_undefined() => Ok(None),
            Err(MeasureError::Mesh(MeshError::ZeroLengthEdge { .. })) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect()
}

/// Per-stage diagnostics of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// Feature-map weights before clamping.
    pub predicted_weights: ShapeWeights,
    /// Clamped feature-map weights (the stage-one starting point).
    pub initial_weights: ShapeWeights,
    /// Weights after stage one.
    pub stage1_weights: ShapeWeights,
    /// `E_m` of the initial shape on the first stage-one freeze.
    pub initial_energy: f64,
    /// `E_m` after stage one on its last freeze.
    pub stage1_energy: f64,
    /// `E_m` of the final mesh on the last stage-two freeze.
    pub stage2_energy: f64,
    pub weight_rounds: Vec<RoundReport>,
    pub vertex_rounds: Vec<RoundReport>,
    pub initial_residuals: Vec<Option<f64>>,
    pub stage1_residuals: Vec<Option<f64>>,
    pub final_residuals: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Shape synthesised from the clamped feature-map weights.
    pub initial_mesh: TriangleMesh,
    /// Stage-one shape.
    pub pca_mesh: TriangleMesh,
    /// Stage-two shape.
    pub mesh: TriangleMesh,
    pub report: StageReport,
}

/// Full pipeline: feature map, clamp, weight-space refinement, vertex-space
/// refinement.
pub fn predict_shape(
    model: &PcaModel,
    features: &FeatureMap,
    profile: &MeasurementProfile,
    targets: &MeasurementVector,
    config: &RefinementConfig,
) -> Result<Prediction, RefineError> {
    config.validate()?;
    if targets.len() != profile.len() {
        return Err(MeasureError::LengthMismatch {
            expected: profile.len(),
            found: targets.len(),
        }
        .into());
    }
    let predicted = features.predict_weights(model, targets.values())?;
    let initial = model.clamp_weights(&predicted, config.clamp_multiplier);
    let initial_mesh = model.synthesize(&initial)?;

    let stage1 = optimize_weights(model, profile, targets, &initial, config)?;
    let pca_mesh = model.synthesize(&stage1.weights)?;
    let stage2 = optimize_vertices(&pca_mesh, profile, targets, config)?;

    let energy = |mesh: &TriangleMesh, frozen: &FrozenConstraints| {
        let x = mesh.flatten();
        let mut g = vec![0.0; x.len()];
        measurement_energy(&x, frozen, &mut g, 1.0)
    };
    let initial_energy = stage1.rounds.first().map_or(0.0, |r| r.initial_energy);
    let stage1_energy = energy(&pca_mesh, &stage1.frozen);
    let stage2_energy = energy(&stage2.mesh, &stage2.frozen);

    let report = StageReport {
        predicted_weights: predicted,
        initial_weights: initial,
        stage1_weights: stage1.weights.clone(),
        initial_energy,
        stage1_energy,
        stage2_energy,
        weight_rounds: stage1.rounds,
        vertex_rounds: stage2.rounds,
        initial_residuals: measurement_residuals(&initial_mesh, profile, targets)?,
        stage1_residuals: measurement_residuals(&pca_mesh, profile, targets)?,
        final_residuals: measurement_residuals(&stage2.mesh, profile, targets)?,
    };
    Ok(Prediction {
        initial_mesh,
        pca_mesh,
        mesh: stage2.mesh,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{measure_all, MeasurementSpec};
    use crate::solver::finite_difference_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn octahedron() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(-1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, -1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(0.0, 0.0, -1.0),
            ],
            vec![
                [0, 2, 4],
                [2, 1, 4],
                [1, 3, 4],
                [3, 0, 4],
                [2, 0, 5],
                [1, 2, 5],
                [3, 1, 5],
                [0, 3, 5],
            ],
        )
        .unwrap()
    }

    /// Polyline strip: vertices 0..n on a line with a parallel partner row.
    fn path_mesh(lengths: &[f64]) -> TriangleMesh {
        let mut verts = vec![Vec3::zeros()];
        let mut x = 0.0;
        for l in lengths {
            x += l;
            verts.push(Vec3::new(x, 0.0, 0.0));
        }
        let n = verts.len();
        // partner row far away so the path along y = 0 stays shortest
        for k in 0..n {
            verts.push(Vec3::new(verts[k].x, 50.0, 0.0));
        }
        let mut tris = Vec::new();
        for k in 0..n - 1 {
            tris.push([k, k + 1, n + k]);
            tris.push([k + 1, n + k + 1, n + k]);
        }
        TriangleMesh::new(verts, tris).unwrap()
    }

    #[test]
    fn geodesic_targets_split_proportionally() {
        let mesh = path_mesh(&[1.0, 3.0]);
        let profile = MeasurementProfile::for_mesh(vec![MeasurementSpec::geodesic("g", 0, 2)], &mesh).unwrap();
        let t = MeasurementVector::new(vec![8.0]).unwrap();
        let f = freeze_constraints(&mesh, &profile, &t, UndefinedPolicy::Fail).unwrap();
        let targets: Vec<f64> = f.geodesic.iter().map(|e| e.target).collect();
        assert_eq!(targets, vec![2.0, 6.0]);

        let met = MeasurementVector::new(vec![4.0]).unwrap();
        let f = freeze_constraints(&mesh, &profile, &met, UndefinedPolicy::Fail).unwrap();
        let x = mesh.flatten();
        let mut g = vec![0.0; x.len()];
        assert_eq!(energy_geodesic(&x, &f, &mut g, 1.0), 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn octahedron_hull_targets() {
        let mesh = octahedron();
        let spec = MeasurementSpec::circumference("c", 0, Vec3::z(), 0..8);
        let profile = MeasurementProfile::for_mesh(vec![spec], &mesh).unwrap();
        let t = MeasurementVector::new(vec![8.0 * 2f64.sqrt()]).unwrap();
        let f = freeze_constraints(&mesh, &profile, &t, UndefinedPolicy::Fail).unwrap();
        assert_eq!(f.circumference.len(), 4);
        for e in &f.circumference {
            assert!((e.target - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        }
        let sum: f64 = f.circumference.iter().map(|e| e.target).sum();
        assert!((sum - t.values()[0]).abs() < 1e-9);
    }

    #[test]
    fn undefined_circumference_policy() {
        let mesh = octahedron();
        let spec = MeasurementSpec::circumference("apex", 4, Vec3::z(), 0..8);
        let profile = MeasurementProfile::for_mesh(vec![spec], &mesh).unwrap();
        let t = MeasurementVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            freeze_constraints(&mesh, &profile, &t, UndefinedPolicy::Fail),
            Err(RefineError::Measure(MeasureError::Undefined { .. }))
        ));
        let f = freeze_constraints(&mesh, &profile, &t, UndefinedPolicy::Drop).unwrap();
        assert_eq!(f.dropped, vec![String::from("apex")]);
        assert!(f.circumference.is_empty());
    }

    #[test]
    fn euclidean_term_by_substitution() {
        let frozen = FrozenConstraints {
            euclidean: vec![EdgeTerm {
                a: 0,
                b: 1,
                target: 2f64.sqrt(),
            }],
            ..Default::default()
        };
        let x = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut g = [0.0; 6];
        let e = energy_euclidean(&x, &frozen, &mut g, 1.0);
        assert!((e - 1.0).abs() < 1e-15);
        assert!((g[0] + 4.0).abs() < 1e-14 && g[1] == 0.0 && g[2] == 0.0);
        assert!((g[3] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn geodesic_terms_at_double_length() {
        let frozen = FrozenConstraints {
            geodesic: vec![EdgeTerm { a: 0, b: 1, target: 2.0 }, EdgeTerm { a: 1, b: 2, target: 2.0 }],
            ..Default::default()
        };
        let x = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let mut g = [0.0; 9];
        assert_eq!(energy_geodesic(&x, &frozen, &mut g, 1.0), 18.0);
    }

    #[test]
    fn hull_term_with_vertex_points_matches_euclidean() {
        let x = [0.3, -1.0, 2.0, 1.5, 0.5, -0.25];
        let hull = FrozenConstraints {
            circumference: vec![HullEdgeTerm {
                from: PointEncoding { a: 0, b: 0, alpha: 1.0 },
                to: PointEncoding { a: 1, b: 1, alpha: 1.0 },
                target: 0.7,
            }],
            ..Default::default()
        };
        let eu = FrozenConstraints {
            euclidean: vec![EdgeTerm { a: 0, b: 1, target: 0.7 }],
            ..Default::default()
        };
        let (mut g1, mut g2) = ([0.0; 6], [0.0; 6]);
        assert_eq!(
            energy_circumference(&x, &hull, &mut g1, 1.0),
            energy_euclidean(&x, &eu, &mut g2, 1.0)
        );
        assert_eq!(g1, g2);
    }

    #[test]
    fn midpoint_hull_point_splits_gradient() {
        // q0 = midpoint of p0, p1; q1 = p2
        let x = [0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 3.0, 0.0];
        let frozen = FrozenConstraints {
            circumference: vec![HullEdgeTerm {
                from: PointEncoding { a: 0, b: 1, alpha: 0.5 },
                to: PointEncoding { a: 2, b: 2, alpha: 1.0 },
                target: 1.0,
            }],
            ..Default::default()
        };
        let mut g = [0.0; 9];
        energy_circumference(&x, &frozen, &mut g, 1.0);
        let (_, gq) = residual_term(Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 3.0, 0.0), 1.0);
        for k in 0..3 {
            assert!((g[k] - 0.5 * gq[k]).abs() < 1e-12);
            assert!((g[3 + k] - 0.5 * gq[k]).abs() < 1e-12);
            assert!((g[6 + k] + gq[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_literal_double_count() {
        let reference = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = Smoothness::new(&reference);
        let mut g = [0.0; 9];
        assert_eq!(s.energy(&reference.flatten(), &mut g, 1.0), 0.0);
        // move vertex 0 by (1, 0, 0): pairs (0,1) and (0,2) each count twice
        let moved = reference.map_vertices(|p| if *p == Vec3::zeros() { Vec3::x() } else { *p });
        let e = s.energy(&moved.flatten(), &mut g, 1.0);
        assert_eq!(e, 4.0);
        let shifted = reference.map_vertices(|p| p + Vec3::new(3.0, -1.0, 2.0));
        let mut g = [0.0; 9];
        assert!(s.energy(&shifted.flatten(), &mut g, 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothness_two_vertex_example() {
        // two vertices joined by one edge: E = 2 |(1,0,0)|^2
        let s = Smoothness {
            reference: vec![0.0; 6],
            neighborhoods: vec![vec![1], vec![0]],
        };
        let mut g = [0.0; 6];
        assert_eq!(s.energy(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &mut g, 1.0), 2.0);
    }

    fn random_frozen(rng: &mut ChaCha8Rng, m: usize) -> FrozenConstraints {
        let pick = |rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m);
            if b == a {
                b = (a + 1) % m;
            }
            (a, b)
        };
        let mut f = FrozenConstraints::default();
        for _ in 0..4 {
            let (a, b) = pick(rng);
            f.euclidean.push(EdgeTerm { a, b, target: rng.random_range(0.5..3.0) });
            let (a, b) = pick(rng);
            f.geodesic.push(EdgeTerm { a, b, target: rng.random_range(0.1..1.0) });
            let (a, b) = pick(rng);
            let (c, d) = pick(rng);
            f.circumference.push(HullEdgeTerm {
                from: PointEncoding { a, b, alpha: rng.random_range(0.0..1.0) },
                to: PointEncoding { a: c, b: d, alpha: 1.0 },
                target: rng.random_range(0.1..2.0),
            });
        }
        f
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let m = 6;
            let x: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let frozen = random_frozen(&mut rng, m);
            let mut g = vec![0.0; x.len()];
            measurement_energy(&x, &frozen, &mut g, 1.0);
            let fd = finite_difference_gradient(
                |y| measurement_energy(y, &frozen, &mut vec![0.0; y.len()], 1.0),
                &x,
                1e-5,
            );
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * scale, "relative error {}", err / scale);
        }
    }

    #[test]
    fn weight_stage_is_stationary_at_mean_targets() {
        let mesh = octahedron();
        let meshes: Vec<TriangleMesh> = (0..4)
            .map(|k| mesh.map_vertices(|p| p * (1.0 + 0.1 * k as f64) + Vec3::new(0.0, 0.0, 0.05 * (k * k) as f64)))
            .collect();
        let model = crate::model::train_pca(&meshes, crate::model::ComponentCount::All).unwrap();
        let specs = vec![
            MeasurementSpec::euclidean("e", 4, 5),
            MeasurementSpec::geodesic("g", 0, 1),
            MeasurementSpec::circumference("c", 0, Vec3::z(), 0..8),
        ];
        let profile = MeasurementProfile::for_mesh(specs, &mesh).unwrap();
        let targets = measure_all(model.mean(), &profile).unwrap();
        let start = ShapeWeights::zeros(model.component_count());
        let stage = optimize_weights(&model, &profile, &targets, &start, &RefinementConfig::default()).unwrap();
        assert!(stage.weights.0.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn anchored_energy_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 6;
        let base: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.3..0.3)).collect();
        let delta: Vec<f64> = x.iter().zip(&base).map(|(a, b)| a - b).collect();
        let frozen = random_frozen(&mut rng, m);
        let (mut g1, mut g2) = (vec![0.0; 3 * m], vec![0.0; 3 * m]);
        let direct = measurement_energy(&x, &frozen, &mut g1, 1.0);
        let anchored = AnchoredEnergy::new(&frozen, &base).energy(&delta, &mut g2, 1.0);
        assert!((direct - anchored).abs() < 1e-9 * direct.max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = RefinementConfig {
            smoothness_weight: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(RefinementConfig::default().with_rounds(0).validate().is_err());
        let bad = RefinementConfig {
            clamp_multiplier: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
