//! Gauss-Legendre quadrature on the unit interval, square and cube.
//!
//! Reference-cell weights are normalized so that they sum to the measure of
//! the reference cell ([0,1]^d), i.e. to one; assembly multiplies by the
//! physical cell volume or face area.

use crate::vec3::Vec3;

/// Nodes of the n-point Gauss-Legendre rule on [0,1].
pub fn gauss_nodes(n: usize) -> Vec<f64> {
    match n {
        1 => vec![0.5],
        2 => vec![0.211_324_865_405_187_1, 0.788_675_134_594_812_9],
        3 => vec![0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7],
        4 => vec![
            0.069_431_844_202_973_71,
            0.330_009_478_207_571_9,
            0.669_990_521_792_428_1,
            0.930_568_155_797_026_3,
        ],
        6 => vec![
            0.033_765_242_898_423_99,
            0.169_395_306_766_867_74,
            0.380_690_406_958_401_56,
            0.619_309_593_041_598_44,
            0.830_604_693_233_132_3,
            0.966_234_757_101_576_0,
        ],
        _ => panic!("unsupported Gauss rule size {n}"),
    }
}

/// Weights of the n-point Gauss-Legendre rule on [0,1] (sum to one).
pub fn gauss_weights(n: usize) -> Vec<f64> {
    match n {
        1 => vec![1.0],
        2 => vec![0.5, 0.5],
        3 => vec![
            0.277_777_777_777_777_8,
            0.444_444_444_444_444_4,
            0.277_777_777_777_777_8,
        ],
        4 => vec![
            0.173_927_422_568_726_93,
            0.326_072_577_431_273_1,
            0.326_072_577_431_273_1,
            0.173_927_422_568_726_93,
        ],
        6 => vec![
            0.085_662_246_189_585_17,
            0.180_380_786_524_069_3,
            0.233_956_967_286_345_52,
            0.233_956_967_286_345_52,
            0.180_380_786_524_069_3,
            0.085_662_246_189_585_17,
        ],
        _ => panic!("unsupported Gauss rule size {n}"),
    }
}

/// Tensor-product quadrature on the reference cell [0,1]^3.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// n^3-point tensor Gauss rule on the unit cube.
    pub fn tensor_cube(n: usize) -> Self {
        let x = gauss_nodes(n);
        let w = gauss_weights(n);
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    points.push([x[i], x[j], x[k]]);
                    weights.push(w[i] * w[j] * w[k]);
                }
            }
        }
        QuadratureRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 2D tensor rule on the unit square, used for face integrals.
#[derive(Debug, Clone)]
pub struct FaceRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl FaceRule {
    pub fn tensor_square(n: usize) -> Self {
        let x = gauss_nodes(n);
        let w = gauss_weights(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        FaceRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// 1D rule on [0,1] used for path averages between two states.
#[derive(Debug, Clone)]
pub struct XiRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl XiRule {
    pub fn gauss(n: usize) -> Self {
        XiRule {
            nodes: gauss_nodes(n),
            weights: gauss_weights(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}

impl Default for XiRule {
    fn default() -> Self {
        XiRule::gauss(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_1d(n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let x = gauss_nodes(n);
        let w = gauss_weights(n);
        x.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum()
    }

    #[test]
    fn gauss_rules_exact_for_polynomials() {
        // n-point Gauss is exact through degree 2n-1; check x^d against 1/(d+1).
        for &n in &[1usize, 2, 3, 4, 6] {
            for d in 0..(2 * n) {
                let exact = 1.0 / (d as f64 + 1.0);
                let got = integrate_1d(n, |x| x.powi(d as i32));
                assert!(
                    (got - exact).abs() < 1e-14,
                    "n={n} degree={d}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn cube_weights_sum_to_reference_volume() {
        let rule = QuadratureRule::tensor_cube(3);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(rule.len(), 27);
    }

    #[test]
    fn face_rule_integrates_bilinear() {
        let rule = FaceRule::tensor_square(3);
        let got: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0] * p[1])
            .sum();
        assert!((got - 0.25).abs() < 1e-14);
    }
}
