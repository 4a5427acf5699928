//! Conforming triangulations of polygonal domains with newest-vertex bisection (NVB).
//!
//! Triangles are stored as ordered vertex triples `[a, b, c]` where the edge `(a, b)`
//! is the refinement edge and `c` is the newest vertex. Bisecting `[a, b, c]` through
//! the midpoint `m` of `(a, b)` produces `[c, a, m]` and `[b, c, m]`, whose refinement
//! edges are the two old edges `(c, a)` and `(b, c)`.
//!
//! Meshes are immutable; refinement returns a new mesh together with a
//! [`RefinementRecord`] that links it to its parent. New vertices are always midpoints
//! of edges of the parent mesh and are identified through edge identity, never through
//! coordinate comparison.

use std::io::{self, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

/// Sentinel for "no neighbouring triangle" in [`Topology::edge_triangles`].
pub const NO_TRIANGLE: u32 = u32::MAX;

/// Edge numbering of a triangulation.
///
/// Edges are sorted by `(lo, hi)` vertex index. Local edge `j` of a triangle
/// `[v0, v1, v2]` joins `v_j` and `v_{j+1}` (so local edge 0 is the refinement edge)
/// and is opposite to `v_{j+2}`.
#[derive(Debug, Clone)]
pub struct Topology {
    edges: Vec<[u32; 2]>,
    triangle_edges: Vec<[u32; 3]>,
    edge_triangles: Vec<[u32; 2]>,
    lo_offsets: Vec<u32>,
    overshared: usize,
}

impl Topology {
    fn build(n_vertices: usize, triangles: &[[u32; 3]]) -> Self {
        // Counting sort of all half-edges by their smaller endpoint.
        let mut lo_count = vec![0u32; n_vertices + 1];
        for tri in triangles {
            for j in 0..3 {
                let (a, b) = (tri[j], tri[(j + 1) % 3]);
                lo_count[a.min(b) as usize + 1] += 1;
            }
        }
        for v in 0..n_vertices {
            lo_count[v + 1] += lo_count[v];
        }
        let mut cursor = lo_count.clone();
        let mut slots = vec![(0u32, 0u32); triangles.len() * 3];
        for (t, tri) in triangles.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (tri[j], tri[(j + 1) % 3]);
                let lo = a.min(b) as usize;
                slots[cursor[lo] as usize] = (a.max(b), (t * 3 + j) as u32);
                cursor[lo] += 1;
            }
        }

        let mut edges = Vec::with_capacity(triangles.len() * 3 / 2 + n_vertices);
        let mut edge_triangles: Vec<[u32; 2]> = Vec::with_capacity(edges.capacity());
        let mut triangle_edges = vec![[0u32; 3]; triangles.len()];
        let mut lo_offsets = vec![0u32; n_vertices + 1];
        let mut overshared = 0;
        for lo in 0..n_vertices {
            lo_offsets[lo] = edges.len() as u32;
            let bucket = &mut slots[lo_count[lo] as usize..lo_count[lo + 1] as usize];
            bucket.sort_unstable();
            let mut k = 0;
            while k < bucket.len() {
                let hi = bucket[k].0;
                let id = edges.len() as u32;
                edges.push([lo as u32, hi]);
                let mut adj = [NO_TRIANGLE; 2];
                let mut n_adj = 0;
                while k < bucket.len() && bucket[k].0 == hi {
                    let half = bucket[k].1 as usize;
                    triangle_edges[half / 3][half % 3] = id;
                    if n_adj < 2 {
                        adj[n_adj] = (half / 3) as u32;
                    }
                    n_adj += 1;
                    k += 1;
                }
                if n_adj > 2 {
                    overshared += 1;
                }
                edge_triangles.push(adj);
            }
        }
        lo_offsets[n_vertices] = edges.len() as u32;
        Self {
            edges,
            triangle_edges,
            edge_triangles,
            lo_offsets,
            overshared,
        }
    }

    pub fn edges(&self) -> &[[u32; 2]] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[u32; 3]] {
        &self.triangle_edges
    }

    /// The (at most two) triangles adjacent to each edge; missing slots hold [`NO_TRIANGLE`].
    pub fn edge_triangles(&self) -> &[[u32; 2]] {
        &self.edge_triangles
    }

    pub fn is_interior(&self, edge: usize) -> bool {
        self.edge_triangles[edge][1] != NO_TRIANGLE
    }

    pub fn find_edge(&self, a: u32, b: u32) -> Option<usize> {
        let (lo, hi) = (a.min(b) as usize, a.max(b));
        if lo + 1 >= self.lo_offsets.len() {
            return None;
        }
        let range = self.lo_offsets[lo] as usize..self.lo_offsets[lo + 1] as usize;
        self.edges[range.clone()]
            .binary_search_by_key(&hi, |e| e[1])
            .ok()
            .map(|k| range.start + k)
    }
}

/// Links a refined mesh to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRecord {
    /// Parent triangle (index in the input mesh) of every child triangle.
    pub parent_of: Vec<u32>,
    /// Vertex count of the parent mesh; new vertex `i` has index `parent_vertex_count + i`.
    pub parent_vertex_count: usize,
    /// Endpoints of the bisected parent edge for each new vertex.
    pub new_vertex_parents: Vec<[u32; 2]>,
}

impl RefinementRecord {
    pub fn identity(n_vertices: usize, n_triangles: usize) -> Self {
        Self {
            parent_of: (0..n_triangles as u32).collect(),
            parent_vertex_count: n_vertices,
            new_vertex_parents: Vec::new(),
        }
    }

    pub fn child_vertex_count(&self) -> usize {
        self.parent_vertex_count + self.new_vertex_parents.len()
    }
}

/// How a marked triangle is refined before closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkedRefinement {
    /// One bisection of the refinement edge.
    Single,
    /// All three edges bisected (three bisections, four children).
    #[default]
    Full,
}

/// Axis-aligned rectangle split into two triangles along the diagonal from
/// `lower` to `upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareDomain {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Default for SquareDomain {
    fn default() -> Self {
        Self {
            lower: [-1.0, -1.0],
            upper: [1.0, 1.0],
        }
    }
}

#[derive(Debug)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[u32; 3]>,
    boundary_edges: Vec<[u32; 2]>,
    generation: u32,
    topology: OnceLock<Topology>,
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary_edges: self.boundary_edges.clone(),
            generation: self.generation,
            topology: OnceLock::new(),
        }
    }
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.triangles == other.triangles
            && self.boundary_edges == other.boundary_edges
    }
}

/// Signed area of the triangle `(a, b, c)`; positive for counter-clockwise order.
pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// The two-triangle square uniformly refined `pre_refinements` times, with every
/// exterior edge marked Dirichlet.
pub fn initial_mesh(domain: &SquareDomain, pre_refinements: usize) -> TriMesh {
    let mut mesh = TriMesh::square_with_diagonal(domain);
    for _ in 0..pre_refinements {
        mesh = mesh.uniform_refine().0;
    }
    mesh
}

impl TriMesh {
    /// Builds a mesh from raw parts and validates every invariant.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[u32; 3]>,
        boundary_edges: Vec<[u32; 2]>,
    ) -> Result<Self, MeshError> {
        let n = vertices.len() as u32;
        if triangles.iter().flatten().chain(boundary_edges.iter().flatten()).any(|&v| v >= n) {
            return Err(MeshError::Invalid("vertex index out of range".into()));
        }
        let mesh = Self::from_parts(vertices, triangles, boundary_edges, 0);
        mesh.check_invariants()?;
        Ok(mesh)
    }

    pub(crate) fn from_parts(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[u32; 3]>,
        boundary_edges: Vec<[u32; 2]>,
        generation: u32,
    ) -> Self {
        Self {
            vertices,
            triangles,
            boundary_edges,
            generation,
            topology: OnceLock::new(),
        }
    }

    /// Two triangles sharing the diagonal `lower -> upper`, which is the refinement
    /// edge of both.
    pub fn square_with_diagonal(domain: &SquareDomain) -> Self {
        let [x0, y0] = domain.lower;
        let [x1, y1] = domain.upper;
        let vertices = vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
        let triangles = vec![[0, 2, 3], [2, 0, 1]];
        let boundary_edges = vec![[0, 1], [1, 2], [2, 3], [3, 0]];
        Self::from_parts(vertices, triangles, boundary_edges, 0)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[[u32; 2]] {
        &self.boundary_edges
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn topology(&self) -> &Topology {
        self.topology
            .get_or_init(|| Topology::build(self.vertices.len(), &self.triangles))
    }

    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    /// Vertices lying on a Dirichlet edge.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for &[a, b] in &self.boundary_edges {
            mask[a as usize] = true;
            mask[b as usize] = true;
        }
        mask
    }

    pub fn free_vertex_count(&self) -> usize {
        self.dirichlet_mask().iter().filter(|&&d| !d).count()
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| triangle_min_angle(self.corners(t)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks orientation, conformity and boundary closure.
    pub fn check_invariants(&self) -> Result<(), MeshError> {
        for t in 0..self.n_triangles() {
            let area = self.area(t);
            if area.is_nan() || area <= 0.0 {
                return Err(MeshError::Invalid(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }
        let topo = self.topology();
        if topo.overshared > 0 {
            return Err(MeshError::Invalid(format!(
                "{} edges are shared by more than two triangles",
                topo.overshared
            )));
        }
        let mut on_boundary = vec![false; topo.edges.len()];
        for &[a, b] in &self.boundary_edges {
            match topo.find_edge(a, b) {
                Some(e) if !on_boundary[e] => on_boundary[e] = true,
                Some(_) => {
                    return Err(MeshError::Invalid(format!("boundary edge ({a},{b}) listed twice")))
                }
                None => {
                    return Err(MeshError::Invalid(format!(
                        "boundary edge ({a},{b}) is not a mesh edge"
                    )))
                }
            }
        }
        for (e, adj) in topo.edge_triangles.iter().enumerate() {
            let single = adj[1] == NO_TRIANGLE;
            if single != on_boundary[e] {
                let [a, b] = topo.edges[e];
                return Err(MeshError::Invalid(if single {
                    format!("edge ({a},{b}) has one triangle but is not a boundary edge (hanging node)")
                } else {
                    format!("boundary edge ({a},{b}) is shared by two triangles")
                }));
            }
        }
        let mut degree = vec![0u8; self.vertices.len()];
        for &[a, b] in &self.boundary_edges {
            degree[a as usize] = degree[a as usize].saturating_add(1);
            degree[b as usize] = degree[b as usize].saturating_add(1);
        }
        if let Some(v) = degree.iter().position(|&d| d != 0 && d != 2) {
            return Err(MeshError::Invalid(format!(
                "boundary is not a union of closed loops at vertex {v}"
            )));
        }
        Ok(())
    }

    /// Bisects the refinement edge of every marked triangle and closes the refinement
    /// so the result is conforming.
    pub fn refine_nvb(&self, marked: &[usize]) -> Result<(TriMesh, RefinementRecord), MeshError> {
        self.refine_nvb_with(marked, MarkedRefinement::Single)
    }

    /// Like [`Self::refine_nvb`], with a choice of how many edges of each marked
    /// triangle are bisected.
    pub fn refine_nvb_with(
        &self,
        marked: &[usize],
        rule: MarkedRefinement,
    ) -> Result<(TriMesh, RefinementRecord), MeshError> {
        let topo = self.topology();
        let mut edge_marked = vec![false; topo.edges.len()];
        for &t in marked {
            if t >= self.n_triangles() {
                return Err(MeshError::TriangleOutOfRange {
                    index: t,
                    count: self.n_triangles(),
                });
            }
            let edges = topo.triangle_edges[t];
            match rule {
                MarkedRefinement::Single => edge_marked[edges[0] as usize] = true,
                MarkedRefinement::Full => edges.iter().for_each(|&e| edge_marked[e as usize] = true),
            }
        }
        // Closure: a triangle with any marked edge must have its refinement edge marked.
        let mut work: Vec<u32> = (0..edge_marked.len() as u32)
            .filter(|&e| edge_marked[e as usize])
            .collect();
        while let Some(e) = work.pop() {
            for &t in &topo.edge_triangles[e as usize] {
                if t == NO_TRIANGLE {
                    continue;
                }
                let r = topo.triangle_edges[t as usize][0];
                if !edge_marked[r as usize] {
                    edge_marked[r as usize] = true;
                    work.push(r);
                }
            }
        }
        Ok(self.bisect_marked_edges(&edge_marked))
    }

    /// Bisects every edge once, splitting every triangle into four children.
    pub fn uniform_refine(&self) -> (TriMesh, RefinementRecord) {
        let marked = vec![true; self.topology().edges.len()];
        self.bisect_marked_edges(&marked)
    }

    fn bisect_marked_edges(&self, edge_marked: &[bool]) -> (TriMesh, RefinementRecord) {
        let topo = self.topology();
        let n_old = self.vertices.len();
        let mut vertices = self.vertices.clone();
        let mut new_vertex_parents = Vec::new();
        let mut midpoint = vec![u32::MAX; topo.edges.len()];
        for (e, &[a, b]) in topo.edges.iter().enumerate() {
            if edge_marked[e] {
                midpoint[e] = vertices.len() as u32;
                let (pa, pb) = (self.vertices[a as usize], self.vertices[b as usize]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                new_vertex_parents.push([a, b]);
            }
        }
        if new_vertex_parents.is_empty() {
            let record = RefinementRecord::identity(n_old, self.n_triangles());
            return (self.clone(), record);
        }

        let mut triangles = Vec::with_capacity(self.triangles.len() + 2 * new_vertex_parents.len());
        let mut parent_of = Vec::with_capacity(triangles.capacity());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let [e0, e1, e2] = topo.triangle_edges[t].map(|e| e as usize);
            let t = t as u32;
            if !edge_marked[e0] {
                triangles.push([a, b, c]);
                parent_of.push(t);
                continue;
            }
            let m = midpoint[e0];
            // left child [c, a, m], refinement edge (c, a) = e2
            if edge_marked[e2] {
                let m2 = midpoint[e2];
                triangles.push([m, c, m2]);
                triangles.push([a, m, m2]);
                parent_of.extend([t, t]);
            } else {
                triangles.push([c, a, m]);
                parent_of.push(t);
            }
            // right child [b, c, m], refinement edge (b, c) = e1
            if edge_marked[e1] {
                let m1 = midpoint[e1];
                triangles.push([m, b, m1]);
                triangles.push([c, m, m1]);
                parent_of.extend([t, t]);
            } else {
                triangles.push([b, c, m]);
                parent_of.push(t);
            }
        }

        let mut boundary_edges = Vec::with_capacity(self.boundary_edges.len() * 2);
        for &[p, q] in &self.boundary_edges {
            let e = topo
                .find_edge(p, q)
                .expect("boundary edge missing from topology");
            if edge_marked[e] {
                boundary_edges.push([p, midpoint[e]]);
                boundary_edges.push([midpoint[e], q]);
            } else {
                boundary_edges.push([p, q]);
            }
        }

        let mesh = TriMesh::from_parts(vertices, triangles, boundary_edges, self.generation + 1);
        let record = RefinementRecord {
            parent_of,
            parent_vertex_count: n_old,
            new_vertex_parents,
        };
        (mesh, record)
    }

    /// Locates `x`, returning the containing triangle and its barycentric coordinates.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 3])> {
        const SLACK: f64 = 1e-12;
        (0..self.n_triangles()).find_map(|t| {
            let [a, b, c] = self.corners(t);
            let area = signed_area(a, b, c);
            let l0 = signed_area(x, b, c) / area;
            let l1 = signed_area(a, x, c) / area;
            let l2 = 1.0 - l0 - l1;
            (l0 >= -SLACK && l1 >= -SLACK && l2 >= -SLACK).then_some((t, [l0, l1, l2]))
        })
    }

    /// Evaluates the P1 function with nodal values `coeffs` at `x`.
    pub fn eval_p1(&self, coeffs: &[f64], x: [f64; 2]) -> Option<f64> {
        let (t, lambda) = self.locate(x)?;
        let tri = self.triangles[t];
        Some((0..3).map(|i| lambda[i] * coeffs[tri[i] as usize]).sum())
    }

    /// Writes the ASCII mesh format: a `vertices <n> triangles <m>` header, `n` vertex
    /// lines (optionally followed by a nodal value), `m` triangle lines with 0-based
    /// indices, then `boundary <b>` and `b` edge lines.
    pub fn write_ascii<W: Write>(&self, mut out: W, nodal: Option<&[f64]>) -> io::Result<()> {
        writeln!(out, "vertices {} triangles {}", self.n_vertices(), self.n_triangles())?;
        for (v, p) in self.vertices.iter().enumerate() {
            match nodal {
                Some(values) => writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], values[v])?,
                None => writeln!(out, "{:.17e} {:.17e}", p[0], p[1])?,
            }
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "boundary {}", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(out, "{} {}", e[0], e[1])?;
        }
        Ok(())
    }
}

fn triangle_min_angle(p: [[f64; 2]; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let cross = u[0] * v[1] - u[1] * v[0];
            let dot = u[0] * v[0] + u[1] * v[1];
            cross.abs().atan2(dot)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Transfers a P1 function to a refined mesh: old vertices keep their values and
/// every new vertex receives the mean of its two parents.
pub fn midpoint_prolongate(coeffs: &[f64], record: &RefinementRecord) -> Result<Vec<f64>, MeshError> {
    if coeffs.len() != record.parent_vertex_count {
        return Err(MeshError::LengthMismatch {
            expected: record.parent_vertex_count,
            got: coeffs.len(),
        });
    }
    let mut out = Vec::with_capacity(record.child_vertex_count());
    out.extend_from_slice(coeffs);
    for &[a, b] in &record.new_vertex_parents {
        out.push(0.5 * (out[a as usize] + out[b as usize]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> TriMesh {
        TriMesh::square_with_diagonal(&SquareDomain::default())
    }

    fn assert_nested(parent: &TriMesh, child: &TriMesh, record: &RefinementRecord) {
        let mut child_area = vec![0.0; parent.n_triangles()];
        for (c, &p) in record.parent_of.iter().enumerate() {
            child_area[p as usize] += child.area(c);
        }
        for t in 0..parent.n_triangles() {
            let a = parent.area(t);
            assert!((child_area[t] - a).abs() <= 1e-12 * a, "triangle {t}");
        }
        for (i, &[a, b]) in record.new_vertex_parents.iter().enumerate() {
            let m = child.vertices()[record.parent_vertex_count + i];
            let (pa, pb) = (child.vertices()[a as usize], child.vertices()[b as usize]);
            assert_eq!(m, [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
    }

    #[test]
    fn base_square() {
        let m = initial_mesh(&SquareDomain::default(), 0);
        assert_eq!((m.n_vertices(), m.n_triangles()), (4, 2));
        m.check_invariants().unwrap();
    }

    #[test]
    fn initial_mesh_counts() {
        let m = initial_mesh(&SquareDomain::default(), 3);
        assert_eq!(m.n_vertices(), 81);
        assert_eq!(m.n_triangles(), 128);
        m.check_invariants().unwrap();
        assert!((m.total_area() - 4.0).abs() < 1e-14);
        let perimeter: f64 = m
            .boundary_edges()
            .iter()
            .map(|&[a, b]| {
                let (p, q) = (m.vertices()[a as usize], m.vertices()[b as usize]);
                (p[0] - q[0]).hypot(p[1] - q[1])
            })
            .sum();
        assert!((perimeter - 8.0).abs() < 1e-14);
    }

    #[test]
    fn triangle_count_matches_enumeration() {
        // Count leaves by explicit quadrisection of each base triangle.
        fn leaves(depth: usize) -> usize {
            if depth == 0 {
                1
            } else {
                (0..4).map(|_| leaves(depth - 1)).sum()
            }
        }
        assert_eq!(2 * leaves(3), 128);
    }

    #[test]
    fn uniform_vertex_counts() {
        let mut m = square();
        for r in 1..=4u32 {
            let (child, record) = m.uniform_refine();
            child.check_invariants().unwrap();
            assert_nested(&m, &child, &record);
            // brute-force: distinct grid points of the (2^r+1)^2 lattice present
            let mut pts: Vec<(i64, i64)> = child
                .vertices()
                .iter()
                .map(|p| (((p[0] + 1.0) * 2f64.powi(r as i32 - 1)).round() as i64, ((p[1] + 1.0) * 2f64.powi(r as i32 - 1)).round() as i64))
                .collect();
            pts.sort_unstable();
            pts.dedup();
            assert_eq!(pts.len(), child.n_vertices());
            assert_eq!(child.n_vertices(), (2usize.pow(r) + 1).pow(2));
            assert_eq!(child.n_triangles(), 2 * 4usize.pow(r));
            m = child;
        }
    }

    #[test]
    fn one_step_uniform() {
        let (m, _) = square().uniform_refine();
        assert_eq!((m.n_vertices(), m.n_triangles()), (9, 8));
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = initial_mesh(&SquareDomain::default(), 2);
        let (child, record) = m.refine_nvb(&[]).unwrap();
        assert_eq!(child, m);
        assert!(record.new_vertex_parents.is_empty());
    }

    #[test]
    fn closure_bisects_neighbour_across_diagonal() {
        let m = square();
        let (child, record) = m.refine_nvb(&[0]).unwrap();
        child.check_invariants().unwrap();
        assert_eq!(child.n_triangles(), 4);
        assert_eq!(child.n_vertices(), 5);
        assert_eq!(child.vertices()[4], [0.0, 0.0]);
        assert_eq!(record.parent_of, vec![0, 0, 1, 1]);
    }

    #[test]
    fn rejects_out_of_range_marks() {
        let err = square().refine_nvb(&[2]).unwrap_err();
        assert_eq!(err, MeshError::TriangleOutOfRange { index: 2, count: 2 });
    }

    #[test]
    fn detects_hanging_node() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        // Lower triangle bisected, upper not: vertex 4 hangs on the diagonal.
        let tris = vec![[0, 2, 3], [1, 4, 0], [2, 4, 1]];
        let bnd = vec![[0, 1], [1, 2], [2, 3], [3, 0]];
        let err = TriMesh::new(v, tris, bnd).unwrap_err();
        assert!(matches!(err, MeshError::Invalid(msg) if msg.contains("hanging")));
    }

    #[test]
    fn prolongation_preserves_constants_and_linears() {
        let m = initial_mesh(&SquareDomain::default(), 1);
        let (child, record) = m.refine_nvb(&[0, 3, 5]).unwrap();
        let ones = midpoint_prolongate(&vec![1.0; m.n_vertices()], &record).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let x1: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        let fine = midpoint_prolongate(&x1, &record).unwrap();
        for (v, p) in child.vertices().iter().enumerate() {
            assert!((fine[v] - p[0]).abs() < 1e-15);
        }
        assert_eq!(
            midpoint_prolongate(&[1.0], &record).unwrap_err(),
            MeshError::LengthMismatch { expected: m.n_vertices(), got: 1 }
        );
    }

    #[test]
    fn ascii_export_layout() {
        let m = square();
        let mut buf = Vec::new();
        m.write_ascii(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "vertices 4 triangles 2");
        assert_eq!(lines[5], "0 2 3");
        assert_eq!(lines[7], "boundary 4");
        assert_eq!(lines.len(), 1 + 4 + 2 + 1 + 4);
    }
}
