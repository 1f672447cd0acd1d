//! Triangle with per-vertex normals and barycentric interpolation.
//!
//! Barycentric weights are `(u, v, 1 - u - v)` on `(v0, v1, v2)`.

use super::tape::Real;
use super::vec::{self, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tri {
    pub v: [Vec3; 3],
    pub n: [Vec3; 3],
}

impl Tri {
    pub fn new(v: [Vec3; 3], n: [Vec3; 3]) -> Self {
        Tri { v, n }
    }

    /// Triangle whose three vertex normals are its face normal.
    pub fn flat(v: [Vec3; 3]) -> Result<Self> {
        let n = face_normal(v)?;
        Ok(Tri { v, n: [n; 3] })
    }

    pub fn area(&self) -> f64 {
        area(self.v)
    }

    pub fn bary_point(&self, u: f64, v: f64) -> Vec3 {
        bary_point(self.v.map(vec::lift), u, v)
    }

    pub fn bary_normal(&self, u: f64, v: f64) -> Result<Vec3> {
        let raw = bary_blend(self.n.map(vec::lift::<f64>), u, v);
        if vec::norm(raw) < 1e-12 {
            return Err(Error::Degenerate(format!(
                "interpolated normal vanishes at (u, v) = ({u}, {v})"
            )));
        }
        Ok(vec::normalize(raw))
    }

    pub fn centroid(&self) -> Vec3 {
        self.bary_point(1.0 / 3.0, 1.0 / 3.0)
    }
}

#[inline]
pub fn bary_blend<S: Real>(p: [[S; 3]; 3], u: S, v: S) -> [S; 3] {
    let w = S::one() - u - v;
    std::array::from_fn(|i| p[0][i] * u + p[1][i] * v + p[2][i] * w)
}

#[inline]
pub fn bary_point<S: Real>(v: [[S; 3]; 3], u: S, w: S) -> [S; 3] {
    bary_blend(v, u, w)
}

/// Normalised barycentric normal; callers guard against a vanishing blend.
#[inline]
pub fn bary_normal<S: Real>(n: [[S; 3]; 3], u: S, v: S) -> [S; 3] {
    vec::normalize(bary_blend(n, u, v))
}

#[inline]
pub fn area<S: Real>(v: [[S; 3]; 3]) -> S {
    vec::norm(vec::cross(vec::sub(v[1], v[0]), vec::sub(v[2], v[0]))) * 0.5
}

pub fn face_normal(v: [Vec3; 3]) -> Result<Vec3> {
    let c = vec::cross(vec::sub(v[1], v[0]), vec::sub(v[2], v[0]));
    let n = vec::norm(c);
    if n < 2e-12 {
        return Err(Error::Degenerate("zero-area triangle has no normal".into()));
    }
    Ok(vec::scale(c, 1.0 / n))
}

/// Barycentric `(u, v)` of `p` in the plane of `tri` (least-squares for
/// off-plane points, i.e. the coordinates of the orthogonal projection).
pub fn barycentric_of(tri: [Vec3; 3], p: Vec3) -> (f64, f64) {
    // p ≈ v2 + u (v0 - v2) + v (v1 - v2)
    let e0 = vec::sub(tri[0], tri[2]);
    let e1 = vec::sub(tri[1], tri[2]);
    let r = vec::sub(p, tri[2]);
    let (a, b, c) = (vec::dot(e0, e0), vec::dot(e0, e1), vec::dot(e1, e1));
    let (d, e) = (vec::dot(r, e0), vec::dot(r, e1));
    let den = a * c - b * b;
    ((c * d - b * e) / den, (a * e - b * d) / den)
}

/// Barycentric `(u, v)` of the point of `tri` closest to `p`; always inside
/// the closed simplex.
pub fn closest_point_bary(tri: [Vec3; 3], p: Vec3) -> (f64, f64) {
    // Region walk from Ericson, Real-Time Collision Detection 5.1.5, on (a, b, c) = (v0, v1, v2).
    let [a, b, c] = tri;
    let ab = vec::sub(b, a);
    let ac = vec::sub(c, a);
    let ap = vec::sub(p, a);
    let d1 = vec::dot(ab, ap);
    let d2 = vec::dot(ac, ap);
    // weights returned as (wa, wb, wc)
    let w = if d1 <= 0.0 && d2 <= 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        let bp = vec::sub(p, b);
        let d3 = vec::dot(ab, bp);
        let d4 = vec::dot(ac, bp);
        if d3 >= 0.0 && d4 <= d3 {
            (0.0, 1.0, 0.0)
        } else {
            let vc = d1 * d4 - d3 * d2;
            if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
                let t = d1 / (d1 - d3);
                (1.0 - t, t, 0.0)
            } else {
                let cp = vec::sub(p, c);
                let d5 = vec::dot(ab, cp);
                let d6 = vec::dot(ac, cp);
                if d6 >= 0.0 && d5 <= d6 {
                    (0.0, 0.0, 1.0)
                } else {
                    let vb = d5 * d2 - d1 * d6;
                    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
                        let t = d2 / (d2 - d6);
                        (1.0 - t, 0.0, t)
                    } else {
                        let va = d3 * d6 - d5 * d4;
                        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
                            let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
                            (0.0, 1.0 - t, t)
                        } else {
                            let den = 1.0 / (va + vb + vc);
                            let v = vb * den;
                            let w = vc * den;
                            (1.0 - v - w, v, w)
                        }
                    }
                }
            }
        }
    };
    clamp_to_simplex(w.0, w.1)
}

/// Snaps round-off so that `u, v >= 0` and `u + v <= 1` hold exactly.
pub fn clamp_to_simplex(u: f64, v: f64) -> (f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    let s = u + v;
    let (u, mut v) = if s > 1.0 { (u / s, v / s) } else { (u, v) };
    v = v.min(1.0 - u);
    while u + v > 1.0 {
        v = (v - f64::EPSILON).max(0.0);
    }
    (u, v)
}

pub fn in_simplex(u: f64, v: f64) -> bool {
    u >= 0.0 && v >= 0.0 && u + v <= 1.0
}
