//! Cyclic Jacobi diagonalization for small real symmetric matrices.

/// Eigenvalues (ascending) and the matching column eigenvectors of a real
/// symmetric 3x3 matrix. Iterates plane rotations until the off-diagonal
/// mass drops below `1e-12` of the Frobenius norm (or is exactly zero).
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let norm = a.iter().flat_map(|r| r.iter()).map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * norm.max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= tol {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vectors = [[0.0; 3]; 3];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = v[row][src];
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(values: [f64; 3], vectors: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| vectors[i][k] * values[k] * vectors[j][k]).sum();
            }
        }
        out
    }

    #[test]
    fn diagonal_input_is_sorted() {
        let (vals, _) = symmetric_eigen3([[3.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(vals, [-1.0, 2.0, 3.0]);
    }

    #[test]
    fn reconstructs_dense_matrix() {
        let m = [[2878.0, 81.4, 0.0], [81.4, 0.0, 81.4], [0.0, 81.4, 2878.0]];
        let (vals, vecs) = symmetric_eigen3(m);
        let r = reconstruct(vals, vecs);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - m[i][j]).abs() < 1e-9, "{i}{j}: {} vs {}", r[i][j], m[i][j]);
            }
        }
        // orthonormal columns
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| vecs[k][a] * vecs[k][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }
}
