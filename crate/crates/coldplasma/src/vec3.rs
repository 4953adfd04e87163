//! Small fixed-size vector helpers used throughout the crate.
//!
//! Points, displacements and field values are plain `[f64; 3]` arrays; the
//! free functions here keep the hot loops allocation-free.

pub type Vec3 = [f64; 3];

pub const ZERO: Vec3 = [0.0, 0.0, 0.0];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn axpy(s: f64, a: Vec3, b: Vec3) -> Vec3 {
    [s * a[0] + b[0], s * a[1] + b[1], s * a[2] + b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: Vec3) -> f64 {
    a[0].abs().max(a[1].abs()).max(a[2].abs())
}

/// Linear interpolation `(1 - s) * a + s * b`; `s = 0` returns `a`.
#[inline]
pub fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [
        (1.0 - s) * a[0] + s * b[0],
        (1.0 - s) * a[1] + s * b[1],
        (1.0 - s) * a[2] + s * b[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_is_orthogonal() {
        let a = [1.0, 2.0, 3.0];
        let b = [-0.5, 4.0, 1.5];
        let c = cross(a, b);
        assert!(dot(c, a).abs() < 1e-14);
        assert!(dot(c, b).abs() < 1e-14);
    }

    #[test]
    fn lerp_endpoints() {
        let a = [1.0, -2.0, 0.25];
        let b = [3.0, 5.0, -1.0];
        assert_eq!(lerp(a, b, 0.0), a);
        assert_eq!(lerp(a, b, 1.0), b);
    }
}
