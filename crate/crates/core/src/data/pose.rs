use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

/// Position in meters plus orientation as a rotation vector in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Vec3,
}

impl Pose {
    pub fn new(position: Vec3, rotation: Vec3) -> Self {
        Pose { position, rotation }
    }

    /// Rotation vectors are kept in the canonical ball of radius π.
    pub fn is_canonical(&self) -> bool {
        norm3(&self.rotation) < std::f64::consts::PI + 1e-6
    }

    pub fn translated(&self, shift: &Vec3) -> Pose {
        Pose {
            position: add3(&self.position, shift),
            rotation: self.rotation,
        }
    }
}

#[inline]
pub fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Rotate `v` by the rotation vector `r` (Rodrigues' formula).
pub fn rotate(r: &Vec3, v: &Vec3) -> Vec3 {
    let theta = norm3(r);
    if theta < 1e-12 {
        return *v;
    }
    let k = scale3(r, 1.0 / theta);
    let (s, c) = theta.sin_cos();
    let cross = [
        k[1] * v[2] - k[2] * v[1],
        k[2] * v[0] - k[0] * v[2],
        k[0] * v[1] - k[1] * v[0],
    ];
    let kdotv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    [
        v[0] * c + cross[0] * s + k[0] * kdotv * (1.0 - c),
        v[1] * c + cross[1] * s + k[1] * kdotv * (1.0 - c),
        v[2] * c + cross[2] * s + k[2] * kdotv * (1.0 - c),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_about_z() {
        let r = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let out = rotate(&r, &[1.0, 0.0, 0.0]);
        assert!((out[0]).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12 && out[2].abs() < 1e-12);
    }

    #[test]
    fn rotation_preserves_length() {
        let r = [0.3, -0.7, 1.1];
        let v = [0.2, 1.5, -0.4];
        assert!((norm3(&rotate(&r, &v)) - norm3(&v)).abs() < 1e-12);
    }

    #[test]
    fn canonical_bound() {
        assert!(Pose::new([0.0; 3], [0.0, 3.1, 0.0]).is_canonical());
        assert!(!Pose::new([0.0; 3], [0.0, 3.2, 0.0]).is_canonical());
    }
}
