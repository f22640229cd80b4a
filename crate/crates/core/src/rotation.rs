//! Small dense rotation helpers on `[[f64; 3]; 3]`.

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn planar(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Skew matrix `[w]_x` with `[w]_x v = w × v`.
pub fn skew(w: &[f64; 3]) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

/// Axial vector of the skew part of `m`.
pub fn unskew(m: &Mat3) -> [f64; 3] {
    [0.5 * (m[2][1] - m[1][2]), 0.5 * (m[0][2] - m[2][0]), 0.5 * (m[1][0] - m[0][1])]
}

/// Rotation by `|v|` about `v / |v|` (Rodrigues).
pub fn rodrigues(v: &[f64; 3]) -> Mat3 {
    let th = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if th == 0.0 {
        return IDENTITY;
    }
    let k = skew(&[v[0] / th, v[1] / th, v[2] / th]);
    let k2 = mul(&k, &k);
    let (s, c) = th.sin_cos();
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    r
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn apply(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (0..3).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

pub fn apply_transpose(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (0..3).map(|k| a[k][i] * v[k]).sum();
    }
    out
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Max-norm distance of `a^T a` from the identity.
pub fn orthogonality_defect(a: &Mat3) -> f64 {
    let ata = mul(&transpose(a), a);
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            m = m.max((ata[i][j] - target).abs());
        }
    }
    m
}

/// Gram–Schmidt on the columns.
pub fn reorthonormalize(a: &Mat3) -> Mat3 {
    let mut cols = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut v = [a[0][j], a[1][j], a[2][j]];
        for prev in cols.iter().take(j) {
            let d: f64 = (0..3).map(|i| v[i] * prev[i]).sum();
            for i in 0..3 {
                v[i] -= d * prev[i];
            }
        }
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        for x in v.iter_mut() {
            *x /= n;
        }
        cols[j] = v;
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = cols[j][i];
        }
    }
    out
}
