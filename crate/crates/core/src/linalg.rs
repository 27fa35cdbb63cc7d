//! Small dense 3x3 helpers: products, determinants and singular values.

/// A real 3x3 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub fn zeros() -> Self {
        Matrix3([[0.0; 3]; 3])
    }

    pub fn from_columns(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Self {
        Matrix3([
            [a[0], b[0], c[0]],
            [a[1], b[1], c[1]],
            [a[2], b[2], c[2]],
        ])
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, &v| acc.max(v.abs()))
    }

    /// Singular values in descending order, via one-sided Jacobi on the
    /// columns. Converges in a handful of sweeps for 3x3 input.
    pub fn singular_values(&self) -> [f64; 3] {
        let mut col = [self.column(0), self.column(1), self.column(2)];
        for _sweep in 0..30 {
            let mut rotated = false;
            for p in 0..2 {
                for q in (p + 1)..3 {
                    let (a, b, g) = (dot(col[p], col[p]), dot(col[q], col[q]), dot(col[p], col[q]));
                    if g.abs() <= 1e-30 * (a * b).sqrt() + f64::MIN_POSITIVE {
                        continue;
                    }
                    rotated = true;
                    let zeta = (b - a) / (2.0 * g);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..3 {
                        let (vp, vq) = (col[p][i], col[q][i]);
                        col[p][i] = c * vp - s * vq;
                        col[q][i] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv = [
            dot(col[0], col[0]).sqrt(),
            dot(col[1], col[1]).sqrt(),
            dot(col[2], col[2]).sqrt(),
        ];
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sv
    }

    /// Number of singular values above `rel_tol` times the largest one.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let sv = self.singular_values();
        if !(sv[0] > 0.0) {
            return 0;
        }
        sv.iter().filter(|&&s| s > rel_tol * sv[0]).count()
    }
}

/// Eigenvalues and orthonormal eigenvectors (as columns) of a symmetric
/// matrix, by cyclic Jacobi rotations.
pub fn sym_eigen(m: &Matrix3) -> ([f64; 3], Matrix3) {
    let mut a = m.0;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * (diag + f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..2 {
            for q in (p + 1)..3 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..3 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..3 {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], Matrix3(v))
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm_inf(a: [f64; 3]) -> f64 {
    a[0].abs().max(a[1].abs()).max(a[2].abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singular_values_of_diagonal() {
        let m = Matrix3([[3.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]]);
        let sv = m.singular_values();
        assert_relative_eq!(sv[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(sv[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sv[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_of_column_deficient_matrix() {
        let m = Matrix3::from_columns([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]);
        assert_eq!(m.numerical_rank(1e-10), 2);
        assert_eq!(Matrix3::zeros().numerical_rank(1e-10), 0);
    }

    #[test]
    fn rank_matches_determinant_on_random_matrices() {
        // rank 3 iff det != 0; scale-aware comparison against the Jacobi route
        let mut state = 0x243f6a8885a308d3_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..200 {
            let m = Matrix3([
                [next(), next(), next()],
                [next(), next(), next()],
                [next(), next(), next()],
            ]);
            let scale = m.max_abs().powi(3).max(f64::MIN_POSITIVE);
            if m.det().abs() > 1e-6 * scale {
                assert_eq!(m.numerical_rank(1e-10), 3);
            }
        }
    }

    #[test]
    fn singular_product_equals_abs_det() {
        let m = Matrix3([[0.3, -1.2, 0.7], [2.0, 0.1, -0.4], [-0.5, 0.9, 1.1]]);
        let sv = m.singular_values();
        assert_relative_eq!(sv[0] * sv[1] * sv[2], m.det().abs(), epsilon = 1e-10);
    }

    #[test]
    fn symmetric_eigendecomposition_reconstructs_the_matrix() {
        let m = Matrix3([[2.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 0.7]]);
        let (lambda, v) = sym_eigen(&m);
        // reconstruct sum lambda_k v_k v_k^T
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += lambda[k] * v.0[r][k] * v.0[c][k];
                }
                assert_relative_eq!(acc, m.0[r][c], epsilon = 1e-12);
            }
        }
        // columns are orthonormal
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(v.column(i), v.column(j));
                assert_relative_eq!(d, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }
}
