//! Dual-weighted-residual estimation of the error in `psi(u) = int u^2`.
//!
//! The dual problem `a(v, w) = int 2 u_h v` is solved in the P1 space; its error is
//! approximated in the space of quadratic edge bubbles `b_E = 4 l_i l_j` by one
//! diagonal solve, and the primal residual tested with that approximation gives the
//! element indicators.

use std::sync::Arc;

use crate::error::FemError;
use crate::fem::{
    apply_dirichlet, assemble_stiffness, checked_geometry, corner_values, map_point, solve_with, P1Solution,
    SparseSystem, TriGeom,
};
use crate::mesh::TriMesh;
use crate::quadrature::TriangleRule;
use crate::sparse::Jacobi;

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    /// Signed indicator per triangle.
    pub per_element: Vec<f64>,
    /// `|sum of per_element|`, summed in index order.
    pub global_estimate: f64,
}

impl IndicatorField {
    pub fn from_elements(per_element: Vec<f64>) -> Self {
        let global_estimate = per_element.iter().sum::<f64>().abs();
        Self {
            per_element,
            global_estimate,
        }
    }
}

/// Bubble coefficients of the dual-error approximation, indexed by mesh edge;
/// boundary edges carry zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeight {
    pub edge_coeffs: Vec<f64>,
}

/// Load vector `int 2 u phi_i`, exact for P1 `u`, with Dirichlet entries zeroed.
pub fn dual_rhs(mesh: &TriMesh, u: &[f64], dirichlet: &[bool]) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let vals = corner_values(u, *tri);
        let s: f64 = vals.iter().sum();
        let c = 2.0 * mesh.area(t) / 12.0;
        for i in 0..3 {
            rhs[tri[i] as usize] += c * (vals[i] + s);
        }
    }
    for (r, &d) in rhs.iter_mut().zip(dirichlet) {
        if d {
            *r = 0.0;
        }
    }
    rhs
}

/// Solves the linearised dual problem for `psi` at `u` (Jacobi-preconditioned CG).
pub fn solve_dual(u: &P1Solution) -> Result<P1Solution, FemError> {
    let mesh = &u.mesh;
    let mut matrix = assemble_stiffness(mesh)?;
    let mut rhs = dual_rhs(mesh, &u.coeffs, &u.dirichlet_mask);
    apply_dirichlet(&mut matrix, &mut rhs, &u.dirichlet_mask);
    let system = SparseSystem {
        matrix,
        rhs,
        dirichlet: u.dirichlet_mask.clone(),
    };
    let (coeffs, _) = solve_with(&system, &Jacobi::new(&system.matrix), None)?;
    Ok(P1Solution {
        mesh: Arc::clone(mesh),
        coeffs,
        dirichlet_mask: u.dirichlet_mask.clone(),
    })
}

/// Per-triangle bubble integrals for local edge `j` (vertices `j`, `j+1`, opposite `j+2`).
struct BubbleMoments {
    /// `int_T grad b_E`.
    grad_integral: [f64; 2],
    /// `a_T(b_E, b_E)`.
    energy: f64,
}

fn bubble_moments(g: &TriGeom, j: usize) -> BubbleMoments {
    let (i1, i2, k) = (j, (j + 1) % 3, (j + 2) % 3);
    let c = -4.0 * g.area / 3.0;
    BubbleMoments {
        grad_integral: [c * g.grads[k][0], c * g.grads[k][1]],
        energy: 8.0 * g.area / 3.0 * (g.grad_dot(i1, i1) + g.grad_dot(i2, i2) + g.grad_dot(i1, i2)),
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Diagonal hierarchical surplus of the dual error:
/// `c_E = (int 2 u b_E - a(w, b_E)) / a(b_E, b_E)` on interior edges.
pub fn hierarchical_dual_weight(mesh: &TriMesh, u: &[f64], w: &[f64]) -> Result<DualWeight, FemError> {
    let topo = mesh.topology();
    let n_edges = topo.edges().len();
    let mut residual = vec![0.0; n_edges];
    let mut energy = vec![0.0; n_edges];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = checked_geometry(mesh, t)?;
        let uv = corner_values(u, *tri);
        let grad_w = g.gradient(corner_values(w, *tri));
        for (j, &e) in topo.triangle_edges()[t].iter().enumerate() {
            let (i1, i2, k) = (j, (j + 1) % 3, (j + 2) % 3);
            let m = bubble_moments(&g, j);
            let load = 2.0 * g.area * (2.0 * uv[i1] + 2.0 * uv[i2] + uv[k]) / 15.0;
            residual[e as usize] += load - dot2(grad_w, m.grad_integral);
            energy[e as usize] += m.energy;
        }
    }
    let edge_coeffs = (0..n_edges)
        .map(|e| if topo.is_interior(e) { residual[e] / energy[e] } else { 0.0 })
        .collect();
    Ok(DualWeight { edge_coeffs })
}

/// `eta_T = sum_E c_E (int_T f b_E - grad u_h . int_T grad b_E)`.
pub fn element_indicators(
    mesh: &TriMesh,
    u: &[f64],
    weight: &DualWeight,
    source: &(dyn Fn([f64; 2]) -> f64 + Sync),
    rule: &TriangleRule,
) -> Result<IndicatorField, FemError> {
    let topo = mesh.topology();
    let mut per_element = Vec::with_capacity(mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = checked_geometry(mesh, t)?;
        let p = mesh.corners(t);
        let grad_u = g.gradient(corner_values(u, *tri));
        let mut f_bubble = [0.0; 3];
        for (lambda, w) in rule.points.iter().zip(rule.weights) {
            let fw = source(map_point(&p, lambda)) * w * g.area;
            for (j, fb) in f_bubble.iter_mut().enumerate() {
                *fb += fw * 4.0 * lambda[j] * lambda[(j + 1) % 3];
            }
        }
        let mut eta = 0.0;
        for (j, &e) in topo.triangle_edges()[t].iter().enumerate() {
            let c = weight.edge_coeffs[e as usize];
            if c != 0.0 {
                let m = bubble_moments(&g, j);
                eta += c * (f_bubble[j] - dot2(grad_u, m.grad_integral));
            }
        }
        per_element.push(eta);
    }
    Ok(IndicatorField::from_elements(per_element))
}

/// Minimal set of elements carrying a `theta` fraction of `sum |eta_T|`.
///
/// Elements are taken in order of decreasing `|eta_T|`, ties by ascending index.
/// The result is sorted ascending.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Result<Vec<usize>, FemError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(FemError::InvalidTheta(theta));
    }
    let total: f64 = indicators.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| indicators[b].abs().total_cmp(&indicators[a].abs()));
    let target = theta * total;
    let mut acc = 0.0;
    let mut count = order.len();
    for (n, &i) in order.iter().enumerate() {
        acc += indicators[i].abs();
        if acc >= target {
            count = n + 1;
            break;
        }
    }
    let mut marked = order[..count].to_vec();
    marked.sort_unstable();
    Ok(marked)
}
