//! P1 finite elements for the pathwise Poisson problem with homogeneous Dirichlet data.

use std::sync::Arc;

use crate::error::FemError;
use crate::mesh::TriMesh;
use crate::quadrature::{rule_for_degree, TriangleRule};
use crate::sparse::{pcg, CsrMatrix, Jacobi, Preconditioner, SolveStats};

/// Relative residual tolerance of the iterative solvers.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Default load quadrature degree (seven-point rule).
pub const DEFAULT_QUAD_DEGREE: usize = 5;

/// Area and barycentric gradients of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl TriGeom {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let two_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        let inv = 1.0 / two_area;
        let grad = |i: usize| {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv]
        };
        Self {
            area: 0.5 * two_area,
            grads: [grad(0), grad(1), grad(2)],
        }
    }

    pub fn grad_dot(&self, i: usize, j: usize) -> f64 {
        self.grads[i][0] * self.grads[j][0] + self.grads[i][1] * self.grads[j][1]
    }

    /// Gradient of the P1 function with the given corner values.
    pub fn gradient(&self, values: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += values[i] * self.grads[i][0];
            g[1] += values[i] * self.grads[i][1];
        }
        g
    }
}

pub(crate) fn checked_geometry(mesh: &TriMesh, t: usize) -> Result<TriGeom, FemError> {
    let geom = TriGeom::new(mesh.corners(t));
    if !(geom.area > 0.0) {
        return Err(FemError::DegenerateTriangle {
            triangle: t,
            area: geom.area,
        });
    }
    Ok(geom)
}

pub(crate) fn corner_values(values: &[f64], tri: [u32; 3]) -> [f64; 3] {
    tri.map(|v| values[v as usize])
}

pub(crate) fn map_point(p: &[[f64; 2]; 3], lambda: &[f64; 3]) -> [f64; 2] {
    [
        lambda[0] * p[0][0] + lambda[1] * p[1][0] + lambda[2] * p[2][0],
        lambda[0] * p[0][1] + lambda[1] * p[1][1] + lambda[2] * p[2][1],
    ]
}

/// The linear system on all vertices, with Dirichlet rows and columns replaced by the
/// identity. Restricted to free vertices this is exactly the eliminated system.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet: Vec<bool>,
}

impl SparseSystem {
    pub fn free_count(&self) -> usize {
        self.dirichlet.iter().filter(|&&d| !d).count()
    }
}

#[derive(Debug, Clone)]
pub struct P1Solution {
    pub mesh: Arc<TriMesh>,
    pub coeffs: Vec<f64>,
    pub dirichlet_mask: Vec<bool>,
}

impl P1Solution {
    pub fn new(mesh: Arc<TriMesh>, coeffs: Vec<f64>) -> Self {
        let dirichlet_mask = mesh.dirichlet_mask();
        Self {
            mesh,
            coeffs,
            dirichlet_mask,
        }
    }
}

/// CSR layout of a P1 stiffness matrix and the positions of every mesh edge in it.
fn stiffness_pattern(mesh: &TriMesh) -> (CsrMatrix, Vec<usize>, Vec<[usize; 2]>) {
    let topo = mesh.topology();
    let n = mesh.n_vertices();
    let edges = topo.edges();
    let mut row_ptr = vec![0usize; n + 1];
    for &[a, b] in edges {
        row_ptr[a as usize + 1] += 1;
        row_ptr[b as usize + 1] += 1;
    }
    for v in 0..n {
        row_ptr[v + 1] += row_ptr[v] + 1;
    }
    let nnz = row_ptr[n];
    let mut col_idx = vec![0u32; nnz];
    let mut cursor: Vec<usize> = row_ptr[..n].to_vec();
    let mut edge_pos = vec![[0usize; 2]; edges.len()];
    // Edges are sorted by (lo, hi): first all lower neighbours, then the diagonal,
    // then the upper neighbours keeps every row sorted.
    for (e, &[lo, hi]) in edges.iter().enumerate() {
        let c = &mut cursor[hi as usize];
        col_idx[*c] = lo;
        edge_pos[e][1] = *c;
        *c += 1;
    }
    let mut diag_pos = vec![0usize; n];
    for v in 0..n {
        col_idx[cursor[v]] = v as u32;
        diag_pos[v] = cursor[v];
        cursor[v] += 1;
    }
    for (e, &[lo, hi]) in edges.iter().enumerate() {
        let c = &mut cursor[lo as usize];
        col_idx[*c] = hi;
        edge_pos[e][0] = *c;
        *c += 1;
    }
    let matrix = CsrMatrix::from_raw(n, row_ptr, col_idx, vec![0.0; nnz]);
    (matrix, diag_pos, edge_pos)
}

/// The unconstrained P1 stiffness matrix, integrated exactly.
pub fn assemble_stiffness(mesh: &TriMesh) -> Result<CsrMatrix, FemError> {
    let (mut matrix, diag_pos, edge_pos) = stiffness_pattern(mesh);
    let topo = mesh.topology();
    let values = matrix.values_mut();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = checked_geometry(mesh, t)?;
        let tri_edges = topo.triangle_edges()[t];
        for i in 0..3 {
            values[diag_pos[tri[i] as usize]] += g.area * g.grad_dot(i, i);
        }
        for (j, &e) in tri_edges.iter().enumerate() {
            let k = g.area * g.grad_dot(j, (j + 1) % 3);
            let [p, q] = edge_pos[e as usize];
            values[p] += k;
            values[q] += k;
        }
    }
    Ok(matrix)
}

/// Load vector `(f, phi_i)` on all vertices.
pub fn assemble_load(
    mesh: &TriMesh,
    source: &(dyn Fn([f64; 2]) -> f64 + Sync),
    rule: &TriangleRule,
) -> Result<Vec<f64>, FemError> {
    let mut load = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = checked_geometry(mesh, t)?;
        let p = mesh.corners(t);
        let mut local = [0.0; 3];
        for (lambda, w) in rule.points.iter().zip(rule.weights) {
            let fw = source(map_point(&p, lambda)) * w * g.area;
            for i in 0..3 {
                local[i] += fw * lambda[i];
            }
        }
        for i in 0..3 {
            load[tri[i] as usize] += local[i];
        }
    }
    Ok(load)
}

/// Replaces Dirichlet rows and columns by the identity and zeroes their right-hand side.
pub fn apply_dirichlet(matrix: &mut CsrMatrix, rhs: &mut [f64], dirichlet: &[bool]) {
    let n = matrix.n_rows();
    let row_ptr = matrix.row_ptr().to_vec();
    let cols = matrix.col_idx().to_vec();
    let values = matrix.values_mut();
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k] as usize;
            if dirichlet[i] || dirichlet[j] {
                values[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
        if dirichlet[i] {
            rhs[i] = 0.0;
        }
    }
}

pub fn assemble_system(
    mesh: &TriMesh,
    source: &(dyn Fn([f64; 2]) -> f64 + Sync),
    quad_degree: usize,
) -> Result<SparseSystem, FemError> {
    let rule = rule_for_degree(quad_degree)?;
    let mut matrix = assemble_stiffness(mesh)?;
    let mut rhs = assemble_load(mesh, source, &rule)?;
    let dirichlet = mesh.dirichlet_mask();
    apply_dirichlet(&mut matrix, &mut rhs, &dirichlet);
    Ok(SparseSystem {
        matrix,
        rhs,
        dirichlet,
    })
}

/// Solves with a caller-supplied preconditioner, starting from `initial`.
pub fn solve_with(
    system: &SparseSystem,
    pc: &dyn Preconditioner,
    initial: Option<Vec<f64>>,
) -> Result<(Vec<f64>, SolveStats), FemError> {
    let n = system.rhs.len();
    let mut x = initial.unwrap_or_else(|| vec![0.0; n]);
    if x.len() != n {
        return Err(FemError::LengthMismatch { expected: n, got: x.len() });
    }
    for (xi, &d) in x.iter_mut().zip(&system.dirichlet) {
        if d {
            *xi = 0.0;
        }
    }
    let cap = 10 * system.free_count().max(1);
    let stats = pcg(&system.matrix, &system.rhs, &mut x, pc, SOLVER_TOLERANCE, cap)?;
    Ok((x, stats))
}

/// Diagonally preconditioned CG solve of an assembled system.
pub fn solve_dirichlet(mesh: Arc<TriMesh>, system: &SparseSystem) -> Result<P1Solution, FemError> {
    if system.rhs.len() != mesh.n_vertices() {
        return Err(FemError::LengthMismatch {
            expected: mesh.n_vertices(),
            got: system.rhs.len(),
        });
    }
    let (coeffs, _) = solve_with(system, &Jacobi::new(&system.matrix), None)?;
    Ok(P1Solution {
        mesh,
        coeffs,
        dirichlet_mask: system.dirichlet.clone(),
    })
}

/// `int_D u^2` for a P1 function given by nodal values, exact via the edge-midpoint rule.
pub fn integrate_square(mesh: &TriMesh, coeffs: &[f64]) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = corner_values(coeffs, *tri);
        let (m0, m1, m2) = (0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a));
        total += mesh.area(t) / 3.0 * (m0 * m0 + m1 * m1 + m2 * m2);
    }
    total
}

/// The quantity of interest `psi(u) = int_D u^2`.
pub fn qoi_psi(u: &P1Solution) -> f64 {
    integrate_square(&u.mesh, &u.coeffs)
}
