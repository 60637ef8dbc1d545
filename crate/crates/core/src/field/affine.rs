use serde::{Deserialize, Serialize};

/// Determinants at or below this magnitude are treated as singular.
pub const SINGULAR_DET: f64 = 1e-6;

/// Per-stroke affine map `T(p) = p + c + G (p - P)`.
///
/// `g` is the mean displacement gradient (row `k` holds the derivatives of
/// displacement component `k` along x and y), `c` the mean displacement and
/// `anchor` the region centroid `P`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineStrokeTransform {
    pub g: [[f64; 2]; 2],
    pub c: [f64; 2],
    pub anchor: [f64; 2],
    /// Set when this transform is a translation-only stand-in for a
    /// singular inverse.
    #[serde(default)]
    pub fallback: bool,
}

impl AffineStrokeTransform {
    pub fn identity() -> Self {
        Self::translation([0.0, 0.0])
    }

    pub fn translation(c: [f64; 2]) -> Self {
        Self {
            g: [[0.0; 2]; 2],
            c,
            anchor: [0.0, 0.0],
            fallback: false,
        }
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`,
    /// followed by a shift.
    pub fn similarity(center: [f64; 2], angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            g: [[scale * c - 1.0, -scale * s], [scale * s, scale * c - 1.0]],
            c: shift,
            anchor: center,
            fallback: false,
        }
    }

    /// Displacement `c + G (p - P)` at `p`.
    #[inline]
    pub fn displacement(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.anchor[0];
        let dy = p[1] - self.anchor[1];
        [
            self.c[0] + self.g[0][0] * dx + self.g[0][1] * dy,
            self.c[1] + self.g[1][0] * dx + self.g[1][1] * dy,
        ]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let d = self.displacement(p);
        [p[0] + d[0], p[1] + d[1]]
    }

    /// `det(I + G)`.
    pub fn det(&self) -> f64 {
        (1.0 + self.g[0][0]) * (1.0 + self.g[1][1]) - self.g[0][1] * self.g[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > SINGULAR_DET
    }

    /// Inverse map, anchored at the image of this transform's anchor.
    ///
    /// When `|det(I + G)| <= SINGULAR_DET` the result keeps only the
    /// translation (`G = 0`, `c = -c`) and carries `fallback = true`.
    pub fn invert(&self) -> Self {
        let anchor = [self.anchor[0] + self.c[0], self.anchor[1] + self.c[1]];
        let c = [-self.c[0], -self.c[1]];
        let det = self.det();
        if det.abs() <= SINGULAR_DET {
            return Self {
                g: [[0.0; 2]; 2],
                c,
                anchor,
                fallback: true,
            };
        }
        let a = [[1.0 + self.g[0][0], self.g[0][1]], [self.g[1][0], 1.0 + self.g[1][1]]];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        Self {
            g: [[inv[0][0] - 1.0, inv[0][1]], [inv[1][0], inv[1][1] - 1.0]],
            c,
            anchor,
            fallback: self.fallback,
        }
    }

    /// Same map expressed about a different anchor.
    pub fn reanchored(&self, anchor: [f64; 2]) -> Self {
        Self {
            g: self.g,
            c: self.displacement(anchor),
            anchor,
            fallback: self.fallback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inverts_to_identity() {
        let inv = AffineStrokeTransform::identity().invert();
        for p in [[0.0, 0.0], [10.0, -3.0], [200.0, 17.5]] {
            let q = inv.apply(p);
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
        assert!(!inv.fallback);
    }

    #[test]
    fn translation_inverse() {
        let inv = AffineStrokeTransform::translation([5.0, -2.0]).invert();
        let q = inv.apply([30.0, 40.0]);
        assert!((q[0] - 25.0).abs() < 1e-12 && (q[1] - 42.0).abs() < 1e-12);
    }

    #[test]
    fn singular_falls_back_to_translation() {
        let t = AffineStrokeTransform {
            g: [[-1.0, 0.0], [0.0, 0.0]],
            c: [3.0, 4.0],
            anchor: [10.0, 10.0],
            fallback: false,
        };
        let inv = t.invert();
        assert!(inv.fallback);
        assert_eq!(inv.g, [[0.0; 2]; 2]);
        assert_eq!(inv.c, [-3.0, -4.0]);
    }

    #[test]
    fn reanchoring_preserves_the_map() {
        let t = AffineStrokeTransform::similarity([50.0, 60.0], 0.3, 1.1, [2.0, -1.0]);
        let r = t.reanchored([0.0, 0.0]);
        for p in [[0.0, 0.0], [100.0, 20.0], [-4.0, 77.0]] {
            let (a, b) = (t.apply(p), r.apply(p));
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }
}
