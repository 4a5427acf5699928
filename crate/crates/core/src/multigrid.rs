//! Geometric multigrid over the nested meshes of one refinement trajectory.
//!
//! Each level keeps its assembled (Dirichlet-constrained) stiffness matrix and the
//! chain of refinement records that maps the previous level onto it. Consecutive
//! adaptive meshes that grow by less than a factor two are merged into one level so
//! that the total work of a V-cycle stays proportional to the finest mesh.

use crate::error::FemError;
use crate::mesh::RefinementRecord;
use crate::sparse::{CsrMatrix, DenseCholesky, Preconditioner};

/// New-vertex parents of one refinement step; all that prolongation needs.
#[derive(Debug, Clone)]
struct Bisections {
    parent_vertex_count: usize,
    parents: Vec<[u32; 2]>,
}

impl Bisections {
    fn prolongate(&self, coarse: &[f64], fine: &mut Vec<f64>) {
        fine.clear();
        fine.extend_from_slice(&coarse[..self.parent_vertex_count]);
        for &[a, b] in &self.parents {
            let v = 0.5 * (fine[a as usize] + fine[b as usize]);
            fine.push(v);
        }
    }

    /// Transpose of [`Self::prolongate`], in place: folds new-vertex entries onto
    /// their parents and truncates.
    fn restrict(&self, fine: &mut Vec<f64>) {
        let n = self.parent_vertex_count;
        for (i, &[a, b]) in self.parents.iter().enumerate().rev() {
            let v = 0.5 * fine[n + i];
            fine[a as usize] += v;
            fine[b as usize] += v;
        }
        fine.truncate(n);
    }
}

#[derive(Debug, Clone)]
struct Level {
    matrix: CsrMatrix,
    diag: Vec<f64>,
    dirichlet: Vec<bool>,
    /// Refinement steps leading from the previous level to this one.
    chain: Vec<Bisections>,
}

/// Symmetric V-cycle preconditioner: one forward Gauss-Seidel sweep before and one
/// backward sweep after the coarse correction, exact solve on the coarsest level.
#[derive(Debug, Clone)]
pub struct MultigridHierarchy {
    levels: Vec<Level>,
    coarse: DenseCholesky,
}

impl MultigridHierarchy {
    pub fn new(matrix: CsrMatrix, dirichlet: Vec<bool>) -> Result<Self, FemError> {
        let coarse = DenseCholesky::factor(&matrix)?;
        Ok(Self {
            levels: vec![Level {
                diag: matrix.diagonal(),
                matrix,
                dirichlet,
                chain: Vec::new(),
            }],
            coarse,
        })
    }

    /// Adds the system of a mesh obtained from the current finest mesh by `record`.
    pub fn push(&mut self, record: &RefinementRecord, matrix: CsrMatrix, dirichlet: Vec<bool>) {
        let step = Bisections {
            parent_vertex_count: record.parent_vertex_count,
            parents: record.new_vertex_parents.clone(),
        };
        let diag = matrix.diagonal();
        let m = self.levels.len();
        if m >= 2 && matrix.n_rows() < 2 * self.levels[m - 2].matrix.n_rows() {
            let last = &mut self.levels[m - 1];
            last.matrix = matrix;
            last.diag = diag;
            last.dirichlet = dirichlet;
            last.chain.push(step);
        } else {
            self.levels.push(Level {
                matrix,
                diag,
                dirichlet,
                chain: vec![step],
            });
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest_matrix(&self) -> &CsrMatrix {
        &self.levels.last().expect("hierarchy is never empty").matrix
    }

    fn vcycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        if l == 0 {
            self.coarse.solve(b, x);
            return;
        }
        let level = &self.levels[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        level.matrix.gauss_seidel(&level.diag, b, x, true);

        let mut r = vec![0.0; b.len()];
        level.matrix.mul_vec(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        for step in level.chain.iter().rev() {
            step.restrict(&mut r);
        }
        let coarse = &self.levels[l - 1];
        for (ri, &d) in r.iter_mut().zip(&coarse.dirichlet) {
            if d {
                *ri = 0.0;
            }
        }
        let mut e = vec![0.0; r.len()];
        self.vcycle(l - 1, &r, &mut e);
        let mut buf = Vec::new();
        for step in &level.chain {
            step.prolongate(&e, &mut buf);
            std::mem::swap(&mut e, &mut buf);
        }
        for ((xi, ei), &d) in x.iter_mut().zip(&e).zip(&level.dirichlet) {
            if !d {
                *xi += ei;
            }
        }
        level.matrix.gauss_seidel(&level.diag, b, x, false);
    }
}

impl Preconditioner for MultigridHierarchy {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.vcycle(self.levels.len() - 1, r, z);
    }
}
