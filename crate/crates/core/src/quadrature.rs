//! Symmetric quadrature rules on triangles, in barycentric coordinates.

use crate::error::FemError;

#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    /// Barycentric points.
    pub points: &'static [[f64; 3]],
    /// Weights relative to the triangle area; they sum to one.
    pub weights: &'static [f64],
    pub degree: usize,
}

const EDGE_MIDPOINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
const THIRDS: [f64; 3] = [1.0 / 3.0; 3];

const A1: f64 = 0.059_715_871_789_769_81;
const B1: f64 = 0.470_142_064_105_115_05;
const A2: f64 = 0.797_426_985_353_087_2;
const B2: f64 = 0.101_286_507_323_456_33;
const W0: f64 = 0.225;
const W1: f64 = 0.132_394_152_788_506_16;
const W2: f64 = 0.125_939_180_544_827_17;

const SEVEN_POINT: [[f64; 3]; 7] = [
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [A1, B1, B1],
    [B1, A1, B1],
    [B1, B1, A1],
    [A2, B2, B2],
    [B2, A2, B2],
    [B2, B2, A2],
];
const SEVEN_WEIGHTS: [f64; 7] = [W0, W1, W1, W1, W2, W2, W2];

/// Edge-midpoint rule, exact for quadratics.
pub const MIDPOINT_RULE: TriangleRule = TriangleRule {
    points: &EDGE_MIDPOINTS,
    weights: &THIRDS,
    degree: 2,
};

/// Seven-point rule, exact for polynomials of degree five.
pub const SEVEN_POINT_RULE: TriangleRule = TriangleRule {
    points: &SEVEN_POINT,
    weights: &SEVEN_WEIGHTS,
    degree: 5,
};

/// Smallest bundled rule exact to at least `degree`.
pub fn rule_for_degree(degree: usize) -> Result<TriangleRule, FemError> {
    match degree {
        2 => Ok(MIDPOINT_RULE),
        3..=5 => Ok(SEVEN_POINT_RULE),
        d => Err(FemError::UnsupportedQuadrature(d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of l0^a l1^b l2^c over a triangle of unit area.
    fn monomial(a: u32, b: u32, c: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) * f(c) / f(a + b + c + 2)
    }

    #[test]
    fn exactness() {
        for rule in [MIDPOINT_RULE, SEVEN_POINT_RULE] {
            for a in 0..=rule.degree as u32 {
                for b in 0..=(rule.degree as u32 - a) {
                    let c = rule.degree as u32 - a - b;
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                        .sum();
                    assert!((q - monomial(a, b, c)).abs() < 1e-14, "{a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn degree_selection() {
        assert_eq!(rule_for_degree(2).unwrap().points.len(), 3);
        assert_eq!(rule_for_degree(5).unwrap().points.len(), 7);
        assert_eq!(rule_for_degree(6).unwrap_err(), FemError::UnsupportedQuadrature(6));
    }
}
