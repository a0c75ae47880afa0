//! Indexed triangle meshes, edge graphs and adjacency queries.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// A point or displacement in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Vertex-index triple of one triangle.
pub type Triangle = [usize; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index}, but the mesh has {vertex_count} vertices")]
    TriangleIndexOutOfRange {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("triangle {triangle} repeats a vertex index")]
    RepeatedIndex { triangle: usize },
    #[error("vertex {0} is not referenced by any triangle")]
    UnreferencedVertex(usize),
    #[error("vertex index {index} out of range (vertex count {vertex_count})")]
    VertexOutOfRange { index: usize, vertex_count: usize },
    #[error("coordinate vector length {0} is not a multiple of 3")]
    NotMultipleOfThree(usize),
    #[error("expected {expected} vertices, found {found}")]
    VertexCountMismatch { expected: usize, found: usize },
    #[error("meshes do not share the same triangle topology")]
    TopologyMismatch,
    #[error("edge ({a}, {b}) has zero length")]
    ZeroLengthEdge { a: usize, b: usize },
}

/// Indexed triangle surface.
///
/// The triangle list is shared behind an [`Arc`] so that meshes of one
/// corresponded set (training shapes, synthesized shapes, intermediate
/// refinement states) share a single topology allocation.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Arc<[Triangle]>,
}

impl PartialEq for TriangleMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.same_topology(other)
    }
}

impl TriangleMesh {
    /// Builds a mesh and checks index ranges, repeated indices and that every
    /// vertex is used by some triangle.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<Triangle>) -> Result<Self, MeshError> {
        validate_topology(vertices.len(), &triangles)?;
        Ok(Self {
            vertices,
            triangles: triangles.into(),
        })
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            triangles: Arc::clone(&self.triangles),
        })
    }

    /// Same topology, positions taken from a flattened `(x0, y0, z0, x1, ...)` vector.
    pub fn with_flat(&self, coords: &[f64]) -> Result<Self, MeshError> {
        self.with_vertices(unflatten_points(coords)?)
    }

    /// Inverse of [`TriangleMesh::flatten`].
    pub fn unflatten(coords: &[f64], triangles: Vec<Triangle>) -> Result<Self, MeshError> {
        Self::new(unflatten_points(coords)?, triangles)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn shared_triangles(&self) -> Arc<[Triangle]> {
        Arc::clone(&self.triangles)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex(&self, index: usize) -> Result<Vec3, MeshError> {
        self.vertices
            .get(index)
            .copied()
            .ok_or(MeshError::VertexOutOfRange {
                index,
                vertex_count: self.vertices.len(),
            })
    }

    pub fn same_topology(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.triangles, &other.triangles) || self.triangles == other.triangles
    }

    /// Component order `(x0, y0, z0, x1, ...)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.vertices.len());
        for p in &self.vertices {
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        out
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(triangle_edges)
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Edges incident to more than two triangles.
    pub fn non_manifold_edges(&self) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in self.triangles.iter() {
            for e in triangle_edges(t) {
                *counts.entry(e).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .filter(|&(_, c)| c > 2)
            .map(|(e, _)| e)
            .collect()
    }

    /// All vertices sharing a triangle with `v`, sorted, excluding `v`.
    pub fn one_ring(&self, v: usize) -> Result<Vec<usize>, MeshError> {
        self.vertex(v)?;
        let mut ring: Vec<usize> = self
            .triangles
            .iter()
            .filter(|t| t.contains(&v))
            .flat_map(|t| t.iter().copied())
            .filter(|&u| u != v)
            .collect();
        ring.sort_unstable();
        ring.dedup();
        Ok(ring)
    }

    /// One-ring of every vertex at once.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            rings[a].push(b);
            rings[b].push(a);
        }
        for ring in &mut rings {
            ring.sort_unstable();
        }
        rings
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Area-weighted vertex normals (unit length; zero where undefined).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for t in self.triangles.iter() {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            // cross product is twice the area times the unit normal
            let n = (b - a).cross(&(c - a));
            for &i in t {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Applies `f` to every vertex position.
    pub fn map_vertices(&self, f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: Arc::clone(&self.triangles),
        }
    }
}

fn triangle_edges(t: &Triangle) -> [(usize, usize); 3] {
    let e = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    [e(t[0], t[1]), e(t[1], t[2]), e(t[2], t[0])]
}

fn validate_topology(vertex_count: usize, triangles: &[Triangle]) -> Result<(), MeshError> {
    let mut used = vec![false; vertex_count];
    for (ti, t) in triangles.iter().enumerate() {
        for &i in t {
            if i >= vertex_count {
                return Err(MeshError::TriangleIndexOutOfRange {
                    triangle: ti,
                    index: i,
                    vertex_count,
                });
            }
            used[i] = true;
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(MeshError::RepeatedIndex { triangle: ti });
        }
    }
    match used.iter().position(|&u| !u) {
        Some(v) => Err(MeshError::UnreferencedVertex(v)),
        None => Ok(()),
    }
}

fn unflatten_points(coords: &[f64]) -> Result<Vec<Vec3>, MeshError> {
    if !coords.len().is_multiple_of(3) {
        return Err(MeshError::NotMultipleOfThree(coords.len()));
    }
    Ok(coords
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect())
}

/// Symmetric vertex adjacency weighted by Euclidean edge length.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl EdgeGraph {
    /// One graph edge per unique mesh edge, weighted by its current length.
    pub fn build(mesh: &TriangleMesh) -> Result<Self, MeshError> {
        let mut adjacency = vec![Vec::new(); mesh.vertex_count()];
        let pts = mesh.vertices();
        for (a, b) in mesh.edges() {
            let w = (pts[a] - pts[b]).norm();
            if w <= 0.0 {
                return Err(MeshError::ZeroLengthEdge { a, b });
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_unstable_by_key(|&(v, _)| v);
        }
        Ok(Self { adjacency })
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Dijkstra from `source` to `target`. Returns the vertex sequence, or
    /// `None` when `target` is unreachable.
    ///
    /// Among equal-length predecessors the smaller vertex index wins, so the
    /// result does not depend on heap ordering.
    pub fn shortest_path(&self, source: usize, target: usize) -> Option<Vec<usize>> {
        let (_, pred) = self.dijkstra(source, Some(target), f64::INFINITY);
        if source != target && pred[target] == usize::MAX {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while cur != source {
            cur = pred[cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    /// Graph distances from `source`; vertices farther than `limit` are
    /// reported as infinite.
    pub fn distances_within(&self, source: usize, limit: f64) -> Vec<f64> {
        self.dijkstra(source, None, limit).0
    }

    fn dijkstra(&self, source: usize, target: Option<usize>, limit: f64) -> (Vec<f64>, Vec<usize>) {
        let n = self.adjacency.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry { dist: 0.0, vertex: source });
        while let Some(HeapEntry { dist: d, vertex: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            if let Some(t) = target {
                // equal-distance relaxations may still lower pred[t]
                if d > dist[t] {
                    break;
                }
            }
            done[u] = true;
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd > limit {
                    continue;
                }
                if nd < dist[v] || (nd == dist[v] && !done[v] && u < pred[v]) {
                    dist[v] = nd;
                    pred[v] = u;
                    heap.push(HeapEntry { dist: nd, vertex: v });
                }
            }
        }
        (dist, pred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, vertex)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    /// Apex 0 at the origin with a closed rim of `n` vertices around it.
    fn fan(n: usize) -> TriangleMesh {
        let mut verts = vec![Vec3::new(0.0, 0.0, 1.0)];
        for k in 0..n {
            let t = core::f64::consts::TAU * k as f64 / n as f64;
            verts.push(Vec3::new(t.cos(), t.sin(), 0.0));
        }
        let tris = (0..n).map(|k| [0, 1 + k, 1 + (k + 1) % n]).collect();
        TriangleMesh::new(verts, tris).unwrap()
    }

    #[test]
    fn edge_graph_of_single_triangle() {
        let g = EdgeGraph::build(&single_triangle()).unwrap();
        assert_eq!(g.edge_count(), 3);
        let mut w: Vec<f64> = (0..3)
            .flat_map(|v| g.neighbors(v).iter().filter(move |&&(u, _)| u > v).map(|&(_, w)| w))
            .collect();
        w.sort_by(f64::total_cmp);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 1.0);
        assert!((w[2] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shared_edge_counted_once() {
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
        assert_eq!(EdgeGraph::build(&m).unwrap().edge_count(), 5);
        assert_eq!(m.edges().len(), 5);
        assert!(m.non_manifold_edges().is_empty());
    }

    #[test]
    fn scaling_doubles_weights() {
        let m = single_triangle();
        let g1 = EdgeGraph::build(&m).unwrap();
        let g2 = EdgeGraph::build(&m.map_vertices(|p| p * 2.0)).unwrap();
        for v in 0..3 {
            for (a, b) in g1.neighbors(v).iter().zip(g2.neighbors(v)) {
                assert_eq!(a.0, b.0);
                assert_eq!(2.0 * a.1, b.1);
            }
        }
    }

    #[test]
    fn zero_length_edge_rejected() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(EdgeGraph::build(&m), Err(MeshError::ZeroLengthEdge { a: 0, b: 1 }));
    }

    #[test]
    fn invalid_topologies_rejected() {
        let p = vec![Vec3::zeros(); 3];
        assert!(matches!(
            TriangleMesh::new(p.clone(), vec![[0, 1, 3]]),
            Err(MeshError::TriangleIndexOutOfRange { index: 3, .. })
        ));
        assert_eq!(
            TriangleMesh::new(p.clone(), vec![[0, 1, 1]]),
            Err(MeshError::RepeatedIndex { triangle: 0 })
        );
        let mut p4 = p;
        p4.push(Vec3::zeros());
        assert_eq!(
            TriangleMesh::new(p4, vec![[0, 1, 2]]),
            Err(MeshError::UnreferencedVertex(3))
        );
    }

    #[test]
    fn one_ring_of_fan_apex_and_rim() {
        let m = fan(6);
        assert_eq!(m.one_ring(0).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        // rim vertex 1 touches the apex and its two rim neighbours
        assert_eq!(m.one_ring(1).unwrap(), vec![0, 2, 6]);
        assert_eq!(single_triangle().one_ring(2).unwrap(), vec![0, 1]);
        assert!(m.one_ring(7).is_err());
    }

    #[test]
    fn one_ring_is_symmetric() {
        let m = fan(7);
        let rings = m.neighborhoods();
        for i in 0..m.vertex_count() {
            assert_eq!(rings[i], m.one_ring(i).unwrap());
            assert!(!rings[i].contains(&i));
            for &j in &rings[i] {
                assert!(rings[j].contains(&i));
            }
        }
    }

    #[test]
    fn flatten_order_and_zero_vector() {
        let m = TriangleMesh::new(
            vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0), Vec3::new(7.0, 8.0, 9.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.flatten()[..6], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let z = TriangleMesh::unflatten(&[0.0; 9], vec![[0, 1, 2]]).unwrap();
        assert!(z.vertices().iter().all(|p| *p == Vec3::zeros()));
        assert_eq!(
            TriangleMesh::unflatten(&[0.0; 8], vec![[0, 1, 2]]),
            Err(MeshError::NotMultipleOfThree(8))
        );
    }

    #[test]
    fn shortest_path_prefers_smaller_predecessor_on_ties() {
        // unit square with diagonal 0-2; 1 -> 3 has two equal routes via 0 or 2
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
        assert_eq!(g.shortest_path(1, 3).unwrap(), vec![1, 0, 3]);
        assert_eq!(g.shortest_path(2, 2).unwrap(), vec![2]);
    }

    proptest! {
        #[test]
        fn flatten_round_trip(coords in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let m = TriangleMesh::unflatten(&coords, vec![[0, 1, 2], [1, 2, 3]]).unwrap();
            prop_assert_eq!(m.flatten(), coords.clone());
            let again = TriangleMesh::unflatten(&m.flatten(), m.triangles().to_vec()).unwrap();
            prop_assert_eq!(again, m);
        }
    }
}
