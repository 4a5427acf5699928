//! Benchmark problems: the one-peak Poisson problem with a random peak location and
//! anisotropy, a zero stub, and an analytic tensor-Gaussian family for sparse-grid
//! stress tests.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use libm::erf;

use crate::mesh::{initial_mesh, SquareDomain, TriMesh};

/// A family of Poisson problems `-Δu = f(., y)` on `(-1, 1)^2` with `u = 0` on the
/// boundary, indexed by a parameter `y` from a box with uniform density.
pub trait PathwiseProblem: Send + Sync {
    fn name(&self) -> &str;
    fn param_dim(&self) -> usize;
    fn param_bounds(&self) -> Vec<[f64; 2]>;
    fn source(&self, x: [f64; 2], y: &[f64]) -> f64;
    /// Starting mesh of every refinement trajectory.
    fn initial_mesh(&self) -> Arc<TriMesh>;
    /// Closed-form `psi(u(y))`, if known.
    fn oracle(&self, _y: &[f64]) -> Option<f64> {
        None
    }
    /// Closed-form `E[psi(u)]`, if known.
    fn reference(&self) -> Option<f64> {
        None
    }
}

fn default_mesh(cell: &OnceLock<Arc<TriMesh>>) -> Arc<TriMesh> {
    Arc::clone(cell.get_or_init(|| Arc::new(initial_mesh(&SquareDomain::default(), 3))))
}

/// `int_{-1}^{1} exp(-c (x - y)^2) dx`.
pub fn gaussian_segment_integral(c: f64, y: f64) -> f64 {
    let s = c.sqrt();
    0.5 * (PI / c).sqrt() * (erf(s * (1.0 - y)) + erf(s * (1.0 + y)))
}

/// `u(x, y) = exp(-beta (alpha(y1) (x1 - y1)^2 + (x2 - y2)^2))` with
/// `alpha(y1) = slope * y1 + offset`, `y` uniform on `[-1/4, 1/4]^2`.
#[derive(Debug)]
pub struct OnePeakProblem {
    pub beta: f64,
    pub alpha_slope: f64,
    pub alpha_offset: f64,
    pub half_width: f64,
    mesh: OnceLock<Arc<TriMesh>>,
}

impl OnePeakProblem {
    pub fn new(beta: f64, alpha_slope: f64, alpha_offset: f64) -> Self {
        Self {
            beta,
            alpha_slope,
            alpha_offset,
            half_width: 0.25,
            mesh: OnceLock::new(),
        }
    }

    /// `beta = 50`, `alpha(y1) = 18 y1 + 11/2`, so `alpha` ranges over `[1, 10]`.
    pub fn anisotropic() -> Self {
        Self::new(50.0, 18.0, 5.5)
    }

    /// `alpha = 1`.
    pub fn isotropic() -> Self {
        Self::new(50.0, 0.0, 1.0)
    }

    pub fn alpha(&self, y1: f64) -> f64 {
        self.alpha_slope * y1 + self.alpha_offset
    }

    pub fn exact_solution(&self, x: [f64; 2], y: &[f64]) -> f64 {
        let (d1, d2) = (x[0] - y[0], x[1] - y[1]);
        (-self.beta * (self.alpha(y[0]) * d1 * d1 + d2 * d2)).exp()
    }

    /// `psi(u(y)) = int_D u^2` with the exact finite integration limits.
    pub fn pathwise_qoi(&self, y: &[f64]) -> f64 {
        let c1 = 2.0 * self.beta * self.alpha(y[0]);
        let c2 = 2.0 * self.beta;
        gaussian_segment_integral(c1, y[0]) * gaussian_segment_integral(c2, y[1])
    }

    /// The same integral over the whole plane.
    pub fn pathwise_qoi_unbounded(&self, y: &[f64]) -> f64 {
        PI / (2.0 * self.beta * self.alpha(y[0]).sqrt())
    }

    /// `E[psi(u)]` with the integrals over the plane; the boundary truncation is below
    /// `1e-20` for the default configuration.
    pub fn reference_expectation(&self) -> f64 {
        let lo = self.alpha(-self.half_width);
        let hi = self.alpha(self.half_width);
        let mean_inv_sqrt = if (hi - lo).abs() < 1e-300 {
            1.0 / lo.sqrt()
        } else {
            2.0 * (hi.sqrt() - lo.sqrt()) / (hi - lo)
        };
        PI / (2.0 * self.beta) * mean_inv_sqrt
    }
}

impl PathwiseProblem for OnePeakProblem {
    fn name(&self) -> &str {
        if self.alpha_slope == 0.0 {
            "one-peak-isotropic"
        } else {
            "one-peak"
        }
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn param_bounds(&self) -> Vec<[f64; 2]> {
        vec![[-self.half_width, self.half_width]; 2]
    }

    fn source(&self, x: [f64; 2], y: &[f64]) -> f64 {
        let a = self.alpha(y[0]);
        let b = self.beta;
        let (d1, d2) = (x[0] - y[0], x[1] - y[1]);
        let q = a * d1 * d1 + d2 * d2;
        let u = (-b * q).exp();
        u * (2.0 * b * (a + 1.0) - 4.0 * b * b * (a * a * d1 * d1 + d2 * d2))
    }

    fn initial_mesh(&self) -> Arc<TriMesh> {
        default_mesh(&self.mesh)
    }

    fn oracle(&self, y: &[f64]) -> Option<f64> {
        Some(self.pathwise_qoi(y))
    }

    fn reference(&self) -> Option<f64> {
        Some(self.reference_expectation())
    }
}

/// `f = 0`, hence `u = 0` and `psi = 0` for every parameter.
#[derive(Debug, Default)]
pub struct ZeroProblem {
    mesh: OnceLock<Arc<TriMesh>>,
}

impl PathwiseProblem for ZeroProblem {
    fn name(&self) -> &str {
        "zero"
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn param_bounds(&self) -> Vec<[f64; 2]> {
        vec![[-0.25, 0.25]; 2]
    }

    fn source(&self, _x: [f64; 2], _y: &[f64]) -> f64 {
        0.0
    }

    fn initial_mesh(&self) -> Arc<TriMesh> {
        default_mesh(&self.mesh)
    }

    fn oracle(&self, _y: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn reference(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `g(y) = prod_n exp(-((y_n - c_n) / l_n)^2)` on `[-1, 1]^N` with uniform density.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGaussian {
    pub centers: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl TensorGaussian {
    /// Length scales growing geometrically, so later dimensions matter less.
    pub fn anisotropic(dim: usize, base_length: f64, growth: f64) -> Self {
        Self {
            centers: (0..dim).map(|n| 0.1 * ((n % 3) as f64 - 1.0)).collect(),
            lengths: (0..dim).map(|n| base_length * growth.powi(n as i32)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let mut e = 0.0;
        for ((yn, c), l) in y.iter().zip(&self.centers).zip(&self.lengths) {
            let t = (yn - c) / l;
            e += t * t;
        }
        (-e).exp()
    }

    pub fn exact_mean(&self) -> f64 {
        self.centers
            .iter()
            .zip(&self.lengths)
            .map(|(&c, &l)| 0.5 * gaussian_segment_integral(1.0 / (l * l), c))
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_value_and_symmetry() {
        let p = OnePeakProblem::anisotropic();
        let y = [0.1, -0.2];
        assert_eq!(p.exact_solution([0.1, -0.2], &y), 1.0);
        let t = 0.037;
        assert_eq!(p.exact_solution([0.4, -0.2 + t], &y), p.exact_solution([0.4, -0.2 - t], &y));
    }

    #[test]
    fn boundary_values_are_negligible() {
        let p = OnePeakProblem::anisotropic();
        let mut worst = 0.0f64;
        for i in 0..=40 {
            for j in 0..=40 {
                let y = [-0.25 + i as f64 / 80.0, -0.25 + j as f64 / 80.0];
                for k in 0..=200 {
                    let s = -1.0 + k as f64 / 100.0;
                    for x in [[s, -1.0], [s, 1.0], [-1.0, s], [1.0, s]] {
                        worst = worst.max(p.exact_solution(x, &y));
                    }
                }
            }
        }
        assert!(worst <= (-9.0 * 50.0 / 16.0f64).exp() * (1.0 + 1e-12));
        assert!(worst < 7e-13);
    }

    #[test]
    fn source_at_peak() {
        let p = OnePeakProblem::anisotropic();
        assert!((p.source([0.0, 0.0], &[0.0, 0.0]) - 650.0).abs() < 1e-12);
        let y = [0.2, -0.1];
        assert!((p.source([0.2, -0.1], &y) - 100.0 * (p.alpha(0.2) + 1.0)).abs() < 1e-10);
        assert!(p.source([0.9, 0.9], &[-0.25, -0.25]).abs() < 1e-40);
    }

    #[test]
    fn source_is_negative_laplacian() {
        // Five-point Laplacian: the residual must shrink by about 4 when h halves.
        let p = OnePeakProblem::anisotropic();
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let y = [-0.25 + 0.5 * next(), -0.25 + 0.5 * next()];
            let x = [y[0] + 0.2 * (next() - 0.5), y[1] + 0.2 * (next() - 0.5)];
            let residual = |h: f64| {
                let u = |a: f64, b: f64| p.exact_solution([x[0] + a, x[1] + b], &y);
                let lap = (u(h, 0.0) + u(-h, 0.0) + u(0.0, h) + u(0.0, -h) - 4.0 * u(0.0, 0.0)) / (h * h);
                (-lap - p.source(x, &y)).abs()
            };
            let (r1, r2) = (residual(1e-3), residual(5e-4));
            let scale = 100.0 * (p.alpha(y[0]) + 1.0);
            assert!(r1 < 1e-2 * scale, "{r1}");
            if r1 > 1e-6 * scale {
                let ratio = r1 / r2;
                assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
            }
        }
    }

    #[test]
    fn oracle_reference_point() {
        let p = OnePeakProblem::anisotropic();
        let v = p.pathwise_qoi(&[-0.22, -0.22]);
        assert!((v - 0.025315675).abs() < 5e-10, "{v}");
    }

    #[test]
    fn isotropic_oracle_at_origin() {
        let p = OnePeakProblem::isotropic();
        let v = p.pathwise_qoi(&[0.0, 0.0]);
        assert!((v - PI / 100.0).abs() < 1e-12);
        // Independent check: composite Simpson in both directions.
        let n = 2000;
        let h = 2.0 / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut s = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = [-1.0 + i as f64 * h, -1.0 + j as f64 * h];
                s += w(i) * w(j) * p.exact_solution(x, &[0.0, 0.0]).powi(2);
            }
        }
        s *= h * h / 9.0;
        assert!((s - v).abs() < 1e-9, "{s} {v}");
    }

    #[test]
    fn reference_value() {
        let p = OnePeakProblem::anisotropic();
        let q = p.reference_expectation();
        // The quoted digits are truncated, not rounded.
        assert!((q - 0.015095545).abs() < 1e-9);
        let closed = (10f64.sqrt() - 1.0) * PI / (9.0 * 50.0);
        assert!((q - closed).abs() < 1e-16);
        let p2 = OnePeakProblem::new(100.0, 18.0, 5.5);
        assert!((p2.reference_expectation() - q / 2.0).abs() < 1e-16);
    }

    #[test]
    fn tensor_clenshaw_curtis_average_matches_reference() {
        // 33-point Clenshaw-Curtis rule from Fejer-type cosine sums, computed here
        // independently of the sparse-grid module.
        let m = 33usize;
        let n = m - 1;
        let nodes: Vec<f64> = (0..m).map(|j| -(PI * j as f64 / n as f64).cos()).collect();
        let weights: Vec<f64> = (0..m)
            .map(|j| {
                let theta = PI * j as f64 / n as f64;
                let mut s = 0.0;
                for k in 0..=n / 2 {
                    let c = if k == 0 || 2 * k == n { 0.5 } else { 1.0 };
                    s += c * (2.0 * k as f64 * theta).cos() * 2.0 / (1.0 - 4.0 * (k * k) as f64);
                }
                let e = if j == 0 || j == n { 0.5 } else { 1.0 };
                e * 2.0 / n as f64 * s / 2.0
            })
            .collect();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let p = OnePeakProblem::anisotropic();
        let mut avg = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                avg += wa * wb * p.pathwise_qoi(&[0.25 * a, 0.25 * b]);
            }
        }
        assert!((avg - p.reference_expectation()).abs() <= 1e-8, "{avg}");
    }

    #[test]
    fn oracle_derivative_in_y1() {
        let p = OnePeakProblem::anisotropic();
        let b = p.beta;
        for &y in &[[-0.22, -0.22], [0.0, 0.1], [0.24, -0.05]] {
            // d/dy and d/dc of int exp(-c (x - y)^2) over [-1, 1].
            let c1 = 2.0 * b * p.alpha(y[0]);
            let i1 = gaussian_segment_integral(c1, y[0]);
            let (e_lo, e_hi) = ((-c1 * (1.0 + y[0]).powi(2)).exp(), (-c1 * (1.0 - y[0]).powi(2)).exp());
            let di_dy = e_lo - e_hi;
            let di_dc = ((1.0 - y[0]) * e_hi + (1.0 + y[0]) * e_lo) / (2.0 * c1) - i1 / (2.0 * c1);
            let i2 = gaussian_segment_integral(2.0 * b, y[1]);
            let analytic = (di_dy + di_dc * 2.0 * b * p.alpha_slope) * i2;
            let h = 1e-5;
            let fd = (p.pathwise_qoi(&[y[0] + h, y[1]]) - p.pathwise_qoi(&[y[0] - h, y[1]])) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-6, "{fd} {analytic}");
        }
    }

    #[test]
    fn finite_limits_match_plane_integral() {
        let p = OnePeakProblem::anisotropic();
        for i in 0..=10 {
            for j in 0..=10 {
                let y = [-0.25 + 0.05 * i as f64, -0.25 + 0.05 * j as f64];
                let (a, b) = (p.pathwise_qoi(&y), p.pathwise_qoi_unbounded(&y));
                assert!((a - b).abs() <= 1e-12 * b);
            }
        }
    }

    #[test]
    fn zero_problem() {
        let z = ZeroProblem::default();
        assert_eq!(z.source([0.3, 0.1], &[0.0, 0.0]), 0.0);
        assert_eq!(z.reference(), Some(0.0));
        assert_eq!(z.initial_mesh().n_vertices(), 81);
    }

    #[test]
    fn tensor_gaussian_mean() {
        let g = TensorGaussian::anisotropic(3, 0.8, 2.0);
        // Midpoint rule on a fine tensor grid.
        let n = 200;
        let h = 2.0 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let y = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h, -1.0 + (k as f64 + 0.5) * h];
                    s += g.value(&y);
                }
            }
        }
        s /= (n * n * n) as f64;
        assert!((s - g.exact_mean()).abs() < 1e-5);
    }
}
