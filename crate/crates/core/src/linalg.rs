//! Fixed-size 3-vector and 3x3 matrix helpers used by the loss terms and
//! the inverse-consistent inference path.

pub type Vec3 = [f64; 3];
/// Row-major: `m[r][c]`.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[c][r] = m[r][c];
        }
    }
    t
}

#[inline]
pub fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix: `cof[r][c]` is the signed minor of entry (r, c).
/// Equals `det(m) * m^{-T}` and is the gradient of `det` w.r.t. `m`.
pub fn cofactor(m: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
            c[r][k] = m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1];
        }
    }
    c
}

fn frobenius(m: &Mat3) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inverse via the adjugate. Returns `None` for singular or non-finite input.
/// When the adjugate result is poorly conditioned it is refined with a
/// partial-pivoting elimination.
pub fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det(m);
    if !d.is_finite() || d == 0.0 {
        return None;
    }
    let cof = cofactor(m);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            inv[r][c] = cof[c][r] / d;
        }
    }
    let scale_m = frobenius(m);
    if d.abs() < 1e-8 * scale_m.powi(3) {
        return pivoted_inverse(m).or(Some(inv));
    }
    Some(inv)
}

fn pivoted_inverse(m: &Mat3) -> Option<Mat3> {
    let mut a = *m;
    let mut inv = IDENTITY;
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for k in 0..3 {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for row in 0..3 {
            if row != col {
                let f = a[row][col];
                for k in 0..3 {
                    a[row][k] -= f * a[col][k];
                    inv[row][k] -= f * inv[col][k];
                }
            }
        }
    }
    Some(inv)
}

/// Frobenius-norm condition number `|m|_F |m^{-1}|_F`; infinite when singular.
pub fn condition_number(m: &Mat3) -> f64 {
    match inverse(m) {
        Some(inv) => frobenius(m) * frobenius(&inv),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut c = [[0.0; 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                c[r][k] = (0..3).map(|j| a[r][j] * b[j][k]).sum();
            }
        }
        c
    }

    #[test]
    fn inverse_roundtrip() {
        let m = [[2.0, 0.3, -0.1], [0.5, 1.5, 0.2], [-0.4, 0.1, 0.9]];
        let p = mat_mul(&m, &inverse(&m).unwrap());
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((p[r][c] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn near_singular_uses_pivoting() {
        let m = [[1e-6, 1.0, 0.0], [1.0, 1e-6, 0.0], [0.0, 0.0, 1e-7]];
        let inv = inverse(&m).unwrap();
        let p = mat_mul(&m, &inv);
        for r in 0..3 {
            assert!((p[r][r] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(inverse(&m).is_none());
        assert!(condition_number(&m).is_infinite());
    }

    #[test]
    fn cofactor_is_det_gradient() {
        let m = [[1.2, 0.3, -0.1], [0.5, 0.8, 0.2], [-0.4, 0.1, 1.1]];
        let cof = cofactor(&m);
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..3 {
                let mut p = m;
                let mut q = m;
                p[r][c] += h;
                q[r][c] -= h;
                let fd = (det(&p) - det(&q)) / (2.0 * h);
                assert!((fd - cof[r][c]).abs() < 1e-9);
            }
        }
    }
}
