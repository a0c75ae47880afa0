//! Measurement definitions and their digital evaluation on a mesh.
//!
//! Three kinds are supported: straight-line distance between two vertices,
//! graph geodesic distance between two vertices, and circumference, i.e. the
//! perimeter of the convex hull of a plane section through an anchor vertex.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::hull::convex_hull_2d;
use crate::mesh::{EdgeGraph, MeshError, TriangleMesh, Vec3};

/// Vertices closer than this to a section plane count as lying on it.
pub const ON_PLANE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("measurement {name:?}: index {index} out of range ({count} available)")]
    IndexOutOfRange { name: String, index: usize, count: usize },
    #[error("measurement {name:?}: plane normal is not unit length")]
    NonUnitNormal { name: String },
    #[error("measurement {name:?}: circumference region is empty")]
    EmptyRegion { name: String },
    #[error("duplicate measurement name {0:?}")]
    DuplicateName(String),
    #[error("mesh has {found_vertices} vertices / {found_triangles} triangles, profile expects {vertices} / {triangles}")]
    CountMismatch {
        vertices: usize,
        triangles: usize,
        found_vertices: usize,
        found_triangles: usize,
    },
    #[error("measurement {name:?}: vertex {b} is unreachable from vertex {a}")]
    Unreachable { name: String, a: usize, b: usize },
    #[error("measurement {name:?} is undefined on this mesh (empty or degenerate section)")]
    Undefined { name: String },
    #[error("measurement {name:?} evaluated to a non-positive length {value}")]
    NonPositive { name: String, value: f64 },
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("measurement value {index} is not a positive finite length: {value}")]
    InvalidValue { index: usize, value: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementKind {
    Euclidean { a: usize, b: usize },
    Geodesic { a: usize, b: usize },
    Circumference {
        anchor: usize,
        normal: Vec3,
        /// Triangle indices intersected with the plane, sorted and unique.
        region: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    pub name: String,
    /// Members of a composite measurement share a group label.
    pub group: Option<String>,
    pub kind: MeasurementKind,
}

impl MeasurementSpec {
    pub fn euclidean(name: impl Into<String>, a: usize, b: usize) -> Self {
        Self {
            name: name.into(),
            group: None,
            kind: MeasurementKind::Euclidean { a, b },
        }
    }

    pub fn geodesic(name: impl Into<String>, a: usize, b: usize) -> Self {
        Self {
            name: name.into(),
            group: None,
            kind: MeasurementKind::Geodesic { a, b },
        }
    }

    pub fn circumference(
        name: impl Into<String>,
        anchor: usize,
        normal: Vec3,
        region: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut region: Vec<usize> = region.into_iter().collect();
        region.sort_unstable();
        region.dedup();
        Self {
            name: name.into(),
            group: None,
            kind: MeasurementKind::Circumference {
                anchor,
                normal,
                region,
            },
        }
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    fn validate(&self, vertex_count: usize, triangle_count: usize) -> Result<(), MeasureError> {
        let check = |index: usize, count: usize| {
            if index < count {
                Ok(())
            } else {
                Err(MeasureError::IndexOutOfRange {
                    name: self.name.clone(),
                    index,
                    count,
                })
            }
        };
        match &self.kind {
            MeasurementKind::Euclidean { a, b } | MeasurementKind::Geodesic { a, b } => {
                check(*a, vertex_count)?;
                check(*b, vertex_count)
            }
            MeasurementKind::Circumference {
                anchor,
                normal,
                region,
            } => {
                check(*anchor, vertex_count)?;
                if (normal.norm() - 1.0).abs() > 1e-12 {
                    return Err(MeasureError::NonUnitNormal {
                        name: self.name.clone(),
                    });
                }
                if region.is_empty() {
                    return Err(MeasureError::EmptyRegion {
                        name: self.name.clone(),
                    });
                }
                region.iter().try_for_each(|&t| check(t, triangle_count))
            }
        }
    }
}

/// Ordered set of measurements valid against one reference topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementProfile {
    specs: Vec<MeasurementSpec>,
    vertex_count: usize,
    triangle_count: usize,
}

impl MeasurementProfile {
    pub fn new(
        specs: Vec<MeasurementSpec>,
        vertex_count: usize,
        triangle_count: usize,
    ) -> Result<Self, MeasureError> {
        let mut names = BTreeSet::new();
        for spec in &specs {
            if !names.insert(spec.name.as_str()) {
                return Err(MeasureError::DuplicateName(spec.name.clone()));
            }
            spec.validate(vertex_count, triangle_count)?;
        }
        Ok(Self {
            specs,
            vertex_count,
            triangle_count,
        })
    }

    /// Profile validated against the topology of `mesh`.
    pub fn for_mesh(specs: Vec<MeasurementSpec>, mesh: &TriangleMesh) -> Result<Self, MeasureError> {
        Self::new(specs, mesh.vertex_count(), mesh.triangle_count())
    }

    pub fn specs(&self) -> &[MeasurementSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangle_count(&self) -> usize {
        self.triangle_count
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn check_mesh(&self, mesh: &TriangleMesh) -> Result<(), MeasureError> {
        if mesh.vertex_count() != self.vertex_count || mesh.triangle_count() != self.triangle_count {
            return Err(MeasureError::CountMismatch {
                vertices: self.vertex_count,
                triangles: self.triangle_count,
                found_vertices: mesh.vertex_count(),
                found_triangles: mesh.triangle_count(),
            });
        }
        Ok(())
    }
}

/// Measurement values in millimetres, aligned with a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector(Vec<f64>);

impl MeasurementVector {
    /// Every value must be a positive finite length.
    pub fn new(values: Vec<f64>) -> Result<Self, MeasureError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(MeasureError::InvalidValue { index, value });
        }
        Ok(Self(values))
    }

    pub fn for_profile(values: Vec<f64>, profile: &MeasurementProfile) -> Result<Self, MeasureError> {
        if values.len() != profile.len() {
            return Err(MeasureError::LengthMismatch {
                expected: profile.len(),
                found: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Shortest edge path between two vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub vertices: Vec<usize>,
    /// Length of edge `(vertices[k], vertices[k + 1])`.
    pub edge_lengths: Vec<f64>,
    pub length: f64,
}

/// A section point `alpha * p[a] + (1 - alpha) * p[b]`. Mesh vertices are
/// encoded with `a == b` and `alpha == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint {
    pub a: usize,
    pub b: usize,
    pub alpha: f64,
    pub position: Vec3,
}

impl SectionPoint {
    pub fn vertex(index: usize, position: Vec3) -> Self {
        Self {
            a: index,
            b: index,
            alpha: 1.0,
            position,
        }
    }

    /// Position of this point on a mesh with the same topology.
    pub fn locate(&self, vertices: &[Vec3]) -> Vec3 {
        vertices[self.a] * self.alpha + vertices[self.b] * (1.0 - self.alpha)
    }

    pub fn is_vertex(&self) -> bool {
        self.a == self.b || self.alpha == 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionChain {
    pub points: Vec<SectionPoint>,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// Orthonormal in-plane axes. The helper axis is the coordinate axis
    /// along which the normal has its smallest component.
    pub fn frame(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let k = (0..3)
            .min_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs()))
            .unwrap_or(0);
        let mut axis = Vec3::zeros();
        axis[k] = 1.0;
        let u = n.cross(&axis).normalize();
        let v = n.cross(&u);
        (u, v)
    }
}

/// Convex hull of a section chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CircumferencePolygon {
    /// Hull points in counter-clockwise order (as seen against the normal).
    pub points: Vec<SectionPoint>,
    /// Length of hull edge `(points[k], points[(k + 1) % n])`.
    pub edge_lengths: Vec<f64>,
    pub perimeter: f64,
}

pub fn euclidean_length(mesh: &TriangleMesh, a: usize, b: usize) -> Result<f64, MeshError> {
    Ok((mesh.vertex(a)? - mesh.vertex(b)?).norm())
}

/// Dijkstra path over mesh edges.
pub fn geodesic_path(
    mesh: &TriangleMesh,
    graph: &EdgeGraph,
    a: usize,
    b: usize,
) -> Result<GeodesicPath, MeasureError> {
    mesh.vertex(a)?;
    mesh.vertex(b)?;
    let vertices = graph.shortest_path(a, b).ok_or_else(|| MeasureError::Unreachable {
        name: String::new(),
        a,
        b,
    })?;
    let pts = mesh.vertices();
    let edge_lengths: Vec<f64> = vertices
        .windows(2)
        .map(|w| (pts[w[0]] - pts[w[1]]).norm())
        .collect();
    let length = edge_lengths.iter().sum();
    Ok(GeodesicPath {
        vertices,
        edge_lengths,
        length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PointKey {
    Vertex(usize),
    Edge(usize, usize),
}

/// Intersects the triangles in `region` with `plane`.
///
/// Chain points are on-plane mesh vertices or edge crossings; segments from
/// neighbouring triangles are joined through shared points. Chains come out
/// in a fixed order (by their smallest point key).
pub fn plane_section(mesh: &TriangleMesh, region: &[usize], plane: &Plane) -> Vec<SectionChain> {
    let pts = mesh.vertices();
    let dist: Vec<f64> = pts.iter().map(|p| plane.signed_distance(p)).collect();
    let on = |v: usize| dist[v].abs() < ON_PLANE_TOLERANCE;

    let mut nodes: BTreeMap<PointKey, SectionPoint> = BTreeMap::new();
    let mut segments: BTreeSet<(PointKey, PointKey)> = BTreeSet::new();
    let mut tris: Vec<usize> = region.iter().copied().filter(|&t| t < mesh.triangle_count()).collect();
    tris.sort_unstable();
    tris.dedup();

    for &ti in &tris {
        let t = mesh.triangles()[ti];
        let mut keys: Vec<PointKey> = Vec::with_capacity(3);
        for &v in &t {
            if on(v) {
                keys.push(PointKey::Vertex(v));
                nodes
                    .entry(PointKey::Vertex(v))
                    .or_insert_with(|| SectionPoint::vertex(v, pts[v]));
            }
        }
        for k in 0..3 {
            let (i, j) = (t[k], t[(k + 1) % 3]);
            if on(i) || on(j) || (dist[i] > 0.0) == (dist[j] > 0.0) {
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let key = PointKey::Edge(a, b);
            keys.push(key);
            nodes.entry(key).or_insert_with(|| {
                let alpha = dist[b] / (dist[b] - dist[a]);
                SectionPoint {
                    a,
                    b,
                    alpha,
                    position: pts[a] * alpha + pts[b] * (1.0 - alpha),
                }
            });
        }
        let mut add = |p: PointKey, q: PointKey| {
            if p != q {
                segments.insert(if p < q { (p, q) } else { (q, p) });
            }
        };
        match keys.len() {
            2 => add(keys[0], keys[1]),
            // triangle lying in the plane contributes its boundary
            3 => {
                add(keys[0], keys[1]);
                add(keys[1], keys[2]);
                add(keys[2], keys[0]);
            }
            _ => {}
        }
    }

    let mut adjacency: BTreeMap<PointKey, Vec<PointKey>> = BTreeMap::new();
    for &(p, q) in &segments {
        adjacency.entry(p).or_default().push(q);
        adjacency.entry(q).or_default().push(p);
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }

    let mut visited: BTreeSet<PointKey> = BTreeSet::new();
    let mut chains = Vec::new();
    for &seed in adjacency.keys() {
        if visited.contains(&seed) {
            continue;
        }
        // collect the component, then start the walk at an open end if any
        let mut component = vec![seed];
        let mut seen: BTreeSet<PointKey> = BTreeSet::from([seed]);
        let mut k = 0;
        while k < component.len() {
            for &q in &adjacency[&component[k]] {
                if seen.insert(q) {
                    component.push(q);
                }
            }
            k += 1;
        }
        let closed = component.iter().all(|key| adjacency[key].len() == 2);
        let start = component
            .iter()
            .copied()
            .filter(|key| adjacency[key].len() == 1)
            .min()
            .unwrap_or_else(|| *component.iter().min().unwrap());

        let mut order = Vec::with_capacity(component.len());
        let mut stack = vec![start];
        while let Some(key) = stack.pop() {
            if !visited.insert(key) {
                continue;
            }
            order.push(nodes[&key]);
            for &q in adjacency[&key].iter().rev() {
                if !visited.contains(&q) {
                    stack.push(q);
                }
            }
        }
        chains.push(SectionChain {
            points: order,
            closed,
        });
    }
    chains
}

/// Convex-hull circumference of the section through `anchor`.
pub fn circumference(
    mesh: &TriangleMesh,
    anchor: usize,
    normal: Vec3,
    region: &[usize],
) -> Result<CircumferencePolygon, MeasureError> {
    let undefined = || MeasureError::Undefined { name: String::new() };
    let origin = mesh.vertex(anchor)?;
    let plane = Plane { point: origin, normal };
    let chains = plane_section(mesh, region, &plane);
    let chain = select_chain(&chains, anchor, &origin).ok_or_else(undefined)?;

    let (u, v) = plane.frame();
    let flat: Vec<[f64; 2]> = chain
        .points
        .iter()
        .map(|q| {
            let d = q.position - origin;
            [d.dot(&u), d.dot(&v)]
        })
        .collect();
    let hull = convex_hull_2d(&flat);
    if hull.len() < 2 {
        return Err(undefined());
    }
    let points: Vec<SectionPoint> = hull.iter().map(|&i| chain.points[i]).collect();
    let n = points.len();
    let edge_lengths: Vec<f64> = (0..n)
        .map(|k| (points[k].position - points[(k + 1) % n].position).norm())
        .collect();
    let perimeter: f64 = edge_lengths.iter().sum();
    if perimeter <= 0.0 {
        return Err(undefined());
    }
    Ok(CircumferencePolygon {
        points,
        edge_lengths,
        perimeter,
    })
}

/// The chain containing the anchor vertex, else the chain with the point
/// nearest to it (earlier chains win ties).
fn select_chain<'a>(chains: &'a [SectionChain], anchor: usize, origin: &Vec3) -> Option<&'a SectionChain> {
    chains
        .iter()
        .find(|c| c.points.iter().any(|p| p.is_vertex() && p.a == anchor))
        .or_else(|| {
            chains
                .iter()
                .map(|c| {
                    let d = c
                        .points
                        .iter()
                        .map(|p| (p.position - origin).norm())
                        .fold(f64::INFINITY, f64::min);
                    (c, d)
                })
                .fold(None, |best: Option<(&SectionChain, f64)>, (c, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((c, d)),
                })
                .map(|(c, _)| c)
        })
}

/// Evaluates one spec. `graph` must be the edge graph of `mesh` when the spec
/// is geodesic.
pub fn measure_one(
    mesh: &TriangleMesh,
    graph: Option<&EdgeGraph>,
    spec: &MeasurementSpec,
) -> Result<f64, MeasureError> {
    let named = |e: MeasureError| e.with_name(&spec.name);
    match &spec.kind {
        MeasurementKind::Euclidean { a, b } => Ok(euclidean_length(mesh, *a, *b)?),
        MeasurementKind::Geodesic { a, b } => {
            let owned;
            let graph = match graph {
                Some(g) => g,
                None => {
                    owned = EdgeGraph::build(mesh)?;
                    &owned
                }
            };
            Ok(geodesic_path(mesh, graph, *a, *b).map_err(named)?.length)
        }
        MeasurementKind::Circumference {
            anchor,
            normal,
            region,
        } => Ok(circumference(mesh, *anchor, *normal, region)
            .map_err(named)?
            .perimeter),
    }
}

/// Evaluates every measurement of `profile`, in profile order.
pub fn measure_all(
    mesh: &TriangleMesh,
    profile: &MeasurementProfile,
) -> Result<MeasurementVector, MeasureError> {
    profile.check_mesh(mesh)?;
    let needs_graph = profile
        .specs()
        .iter()
        .any(|s| matches!(s.kind, MeasurementKind::Geodesic { .. }));
    let graph = if needs_graph {
        Some(EdgeGraph::build(mesh)?)
    } else {
        None
    };
    let mut values = Vec::with_capacity(profile.len());
    for spec in profile.specs() {
        let value = measure_one(mesh, graph.as_ref(), spec)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(MeasureError::NonPositive {
                name: spec.name.clone(),
                value,
            });
        }
        values.push(value);
    }
    Ok(MeasurementVector(values))
}

impl MeasureError {
    fn with_name(self, name: &str) -> Self {
        match self {
            MeasureError::Unreachable { a, b, .. } => MeasureError::Unreachable {
                name: name.into(),
                a,
                b,
            },
            MeasureError::Undefined { .. } => MeasureError::Undefined { name: name.into() },
            other => other,
        }
    }

    /// True for errors meaning "this measurement does not exist on this shape".
    pub fn is_undefined(&self) -> bool {
        matches!(self, MeasureError::Undefined { .. } | MeasureError::Unreachable { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    pub(crate) fn octahedron() -> TriangleMesh {
        let v = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ];
        let t = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        TriangleMesh::new(v, t).unwrap()
    }

    fn all_triangles(m: &TriangleMesh) -> Vec<usize> {
        (0..m.triangle_count()).collect()
    }

    #[test]
    fn euclidean_basics() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 4.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(euclidean_length(&m, 0, 1).unwrap(), 5.0);
        assert_eq!(euclidean_length(&m, 1, 1).unwrap(), 0.0);
        let doubled = m.map_vertices(|p| p * 2.0);
        assert_eq!(euclidean_length(&doubled, 0, 1).unwrap(), 10.0);
        assert!(euclidean_length(&m, 0, 3).is_err());
    }

    #[test]
    fn geodesic_on_split_square() {
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let g = EdgeGraph::build(&m).unwrap();
        // (1,0) -> (0,1): both two-edge routes have length 2
        let p = geodesic_path(&m, &g, 1, 3).unwrap();
        assert_eq!(p.length, 2.0);
        assert_eq!(p.edge_lengths.len(), 2);
        let adj = geodesic_path(&m, &g, 0, 1).unwrap();
        assert_eq!(adj.vertices, vec![0, 1]);
        assert_eq!(adj.length, 1.0);
        let same = geodesic_path(&m, &g, 2, 2).unwrap();
        assert!(same.edge_lengths.is_empty());
        assert_eq!(same.length, 0.0);
    }

    #[test]
    fn geodesic_between_components_is_unreachable() {
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(6.0, 0.0, 0.0),
                Vec3::new(5.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let profile =
            MeasurementProfile::for_mesh(vec![MeasurementSpec::geodesic("gap", 0, 4)], &m).unwrap();
        assert_eq!(
            measure_all(&m, &profile),
            Err(MeasureError::Unreachable {
                name: "gap".to_string(),
                a: 0,
                b: 4
            })
        );
    }

    #[test]
    fn octahedron_section_above_equator() {
        let m = octahedron();
        let plane = Plane {
            point: Vec3::new(0.0, 0.0, 0.5),
            normal: Vec3::z(),
        };
        let chains = plane_section(&m, &all_triangles(&m), &plane);
        assert_eq!(chains.len(), 1);
        assert!(chains[0].closed);
        let mut got: Vec<[f64; 3]> = chains[0]
            .points
            .iter()
            .map(|q| [q.position.x, q.position.y, q.position.z])
            .collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [[-0.5, 0.0, 0.5], [0.0, -0.5, 0.5], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        for (g, e) in got.iter().zip(expected) {
            for k in 0..3 {
                assert!((g[k] - e[k]).abs() < 1e-12);
            }
        }
        for q in &chains[0].points {
            assert!(plane.signed_distance(&q.position).abs() < 1e-9);
            assert!((q.locate(m.vertices()) - q.position).norm() < 1e-9);
        }
    }

    #[test]
    fn plane_above_mesh_is_empty() {
        let m = octahedron();
        let plane = Plane {
            point: Vec3::new(0.0, 0.0, 2.0),
            normal: Vec3::z(),
        };
        assert!(plane_section(&m, &all_triangles(&m), &plane).is_empty());
    }

    #[test]
    fn octahedron_equator_circumference() {
        let m = octahedron();
        let c = circumference(&m, 0, Vec3::z(), &all_triangles(&m)).unwrap();
        assert_eq!(c.points.len(), 4);
        assert!(c.points.iter().all(|p| p.is_vertex()));
        assert!((c.perimeter - 4.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn plane_through_apex_is_undefined() {
        let m = octahedron();
        let spec = MeasurementSpec::circumference("apex", 4, Vec3::z(), all_triangles(&m));
        let profile = MeasurementProfile::for_mesh(vec![spec], &m).unwrap();
        assert_eq!(
            measure_all(&m, &profile),
            Err(MeasureError::Undefined {
                name: "apex".to_string()
            })
        );
    }

    #[test]
    fn profile_validation() {
        let m = octahedron();
        let dup = vec![MeasurementSpec::euclidean("x", 0, 1), MeasurementSpec::geodesic("x", 0, 1)];
        assert_eq!(
            MeasurementProfile::for_mesh(dup, &m),
            Err(MeasureError::DuplicateName("x".into()))
        );
        let bad_normal = vec![MeasurementSpec::circumference("c", 0, Vec3::new(0.0, 0.0, 2.0), [0])];
        assert!(matches!(
            MeasurementProfile::for_mesh(bad_normal, &m),
            Err(MeasureError::NonUnitNormal { .. })
        ));
        let empty = vec![MeasurementSpec::circumference("c", 0, Vec3::z(), [])];
        assert!(matches!(
            MeasurementProfile::for_mesh(empty, &m),
            Err(MeasureError::EmptyRegion { .. })
        ));
        let oob = vec![MeasurementSpec::circumference("c", 0, Vec3::z(), [8])];
        assert!(matches!(
            MeasurementProfile::for_mesh(oob, &m),
            Err(MeasureError::IndexOutOfRange { index: 8, .. })
        ));
    }

    #[test]
    fn measure_all_keeps_profile_order_and_is_deterministic() {
        let m = octahedron();
        let specs = vec![
            MeasurementSpec::geodesic("g", 0, 1),
            MeasurementSpec::euclidean("e", 0, 1),
            MeasurementSpec::circumference("c", 0, Vec3::z(), all_triangles(&m)),
        ];
        let profile = MeasurementProfile::for_mesh(specs, &m).unwrap();
        let v = measure_all(&m, &profile).unwrap();
        assert_eq!(v.len(), 3);
        assert!((v.values()[0] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(v.values()[1], 2.0);
        let again = measure_all(&m, &profile).unwrap();
        for (x, y) in v.values().iter().zip(again.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn measurement_vector_rejects_non_positive() {
        assert!(MeasurementVector::new(vec![1.0, 0.0]).is_err());
        assert!(MeasurementVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(MeasurementVector::new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn frame_is_orthonormal() {
        for n in [Vec3::z(), Vec3::new(1.0, 2.0, 3.0).normalize(), Vec3::new(-0.3, 0.0, 0.9).normalize()] {
            let plane = Plane { point: Vec3::zeros(), normal: n };
            let (u, v) = plane.frame();
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
            assert!(u.dot(&v).abs() < 1e-12);
            assert!(u.dot(&n).abs() < 1e-12);
        }
    }
}
