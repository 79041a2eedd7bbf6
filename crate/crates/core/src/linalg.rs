//! Small dense row-major matrix helpers sized for desk-scale metric tensors
//! (dimensions in the single digits). Nothing here allocates per element or
//! dispatches dynamically; the hot paths in geometry call straight into these.

/// y = A x for a row-major `rows x cols` matrix.
pub fn matvec(rows: usize, cols: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y[r] = acc;
    }
    y
}

/// Gram matrix J^T J (`cols x cols`) of a row-major `rows x cols` matrix.
pub fn gram(rows: usize, cols: usize, j: &[f64]) -> Vec<f64> {
    debug_assert_eq!(j.len(), rows * cols);
    let mut g = vec![0.0; cols * cols];
    for r in 0..rows {
        let row = &j[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let ji = row[i];
            if ji == 0.0 {
                continue;
            }
            for k in 0..cols {
                g[i * cols + k] += ji * row[k];
            }
        }
    }
    g
}

/// Congruence J^T G J (`cols x cols`) for J of shape `rows x cols` and a
/// symmetric G of shape `rows x rows`.
pub fn congruence(rows: usize, cols: usize, j: &[f64], g: &[f64]) -> Vec<f64> {
    debug_assert_eq!(j.len(), rows * cols);
    debug_assert_eq!(g.len(), rows * rows);
    // tmp = G J, shape rows x cols
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in 0..rows {
            let grk = g[r * rows + k];
            if grk == 0.0 {
                continue;
            }
            let jrow = &j[k * cols..(k + 1) * cols];
            let trow = &mut tmp[r * cols..(r + 1) * cols];
            for c in 0..cols {
                trow[c] += grk * jrow[c];
            }
        }
    }
    // out = J^T tmp, shape cols x cols
    let mut out = vec![0.0; cols * cols];
    for r in 0..rows {
        let jrow = &j[r * cols..(r + 1) * cols];
        let trow = &tmp[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let ji = jrow[i];
            if ji == 0.0 {
                continue;
            }
            for k in 0..cols {
                out[i * cols + k] += ji * trow[k];
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// x^T A x for a row-major `dim x dim` matrix.
pub fn quadratic_form(dim: usize, a: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(x.len(), dim);
    let mut acc = 0.0;
    for r in 0..dim {
        let row = &a[r * dim..(r + 1) * dim];
        let mut inner = 0.0;
        for c in 0..dim {
            inner += row[c] * x[c];
        }
        acc += x[r] * inner;
    }
    acc
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
/// The input is symmetrized first; matrices here are tiny, so sweeps to
/// machine precision are cheap.
pub fn sym_eigenvalues(dim: usize, a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), dim * dim);
    let mut m = a.to_vec();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let avg = 0.5 * (m[i * dim + j] + m[j * dim + i]);
            m[i * dim + j] = avg;
            m[j * dim + i] = avg;
        }
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                off += m[i * dim + j] * m[i * dim + j];
            }
        }
        let scale = (0..dim)
            .map(|i| m[i * dim + i].abs())
            .fold(1e-300_f64, f64::max);
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = m[p * dim + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * dim + q] - m[p * dim + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = m[k * dim + p];
                    let akq = m[k * dim + q];
                    m[k * dim + p] = c * akp - s * akq;
                    m[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = m[p * dim + k];
                    let aqk = m[q * dim + k];
                    m[p * dim + k] = c * apk - s * aqk;
                    m[q * dim + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..dim).map(|i| m[i * dim + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("non-finite eigenvalue"));
    eig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_hand_case() {
        // [[1,2],[3,4],[5,6]] * [1,-1] = [-1,-1,-1]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = matvec(3, 2, &a, &[1.0, -1.0]);
        assert_eq!(y, vec![-1.0, -1.0, -1.0]);
    }

    #[test]
    fn gram_matches_direct_product() {
        let j = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let g = gram(3, 2, &j);
        // J^T J = [[35, 44], [44, 56]]
        assert_eq!(g, vec![35.0, 44.0, 44.0, 56.0]);
    }

    #[test]
    fn congruence_with_identity_is_gram() {
        let j = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75]; // 3x2
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = congruence(3, 2, &j, &eye);
        let b = gram(3, 2, &j);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_form_hand_case() {
        // x^T [[2,1],[1,3]] x with x=[1,2] -> 2 + 2*2 + 3*4 = 18
        let a = [2.0, 1.0, 1.0, 3.0];
        assert_eq!(quadratic_form(2, &a, &[1.0, 2.0]), 18.0);
    }

    #[test]
    fn jacobi_eigenvalues_2x2_known() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let eig = sym_eigenvalues(2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues_match_nalgebra() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for dim in 2..=6 {
            let j: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = gram(dim, dim, &j);
            let ours = sym_eigenvalues(dim, &g);
            let m = nalgebra::DMatrix::from_row_slice(dim, dim, &g);
            let mut theirs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in ours.iter().zip(&theirs) {
                assert!(
                    (a - b).abs() < 1e-9 * (1.0 + b.abs()),
                    "dim {dim}: {a} vs {b}"
                );
            }
        }
    }
}
