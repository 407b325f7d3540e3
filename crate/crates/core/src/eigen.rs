//! Cyclic Jacobi eigendecomposition for symmetric dense matrices.
//!
//! Rotations are applied until the off-diagonal Frobenius norm drops below
//! `1e-12 * ||H||_F`. Eigenvalues come back ascending with matching
//! orthonormal eigenvector columns.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending eigenvalues.
    pub values: DVector<f64>,
    /// Column k is the unit eigenvector of `values[k]`.
    pub vectors: DMatrix<f64>,
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    acc.sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen(h: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::NotSymmetric { asym });
    }

    let mut a = h.clone();
    // enforce exact symmetry so the rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = DMatrix::identity(n, n);
    let frob = a.norm();
    let target = 1e-12 * frob;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let s = theta.signum();
                    s / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp - s * (akq + tau * akp);
                        a[(p, k)] = a[(k, p)];
                        a[(k, q)] = akq + s * (akp - tau * akq);
                        a[(q, k)] = a[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp - s * (vkq + tau * vkp);
                    v[(k, q)] = vkq + s * (vkp - tau * vkq);
                }
            }
        }
    }

    // sort ascending, carrying the eigenvector columns along
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values = DVector::from_fn(n, |k, _| a[(order[k], order[k])]);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        vectors.set_column(k, &v.column(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        0.5 * (&m + m.transpose())
    }

    #[test]
    fn diagonal_matrix_sorted() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let e = symmetric_eigen(&h).unwrap();
        assert_eq!(
            e.values.iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 2.0, 3.0]
        );
        // identity-permutation vectors up to sign
        for k in 0..3 {
            let col = e.vectors.column(k);
            let nonzero: Vec<usize> = (0..3).filter(|&i| col[i].abs() > 1e-12).collect();
            assert_eq!(nonzero.len(), 1);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigen(&h).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for seed in [1u64, 2, 3] {
            let h = random_symmetric(6, seed);
            let e = symmetric_eigen(&h).unwrap();
            let lambda = DMatrix::from_diagonal(&e.values);
            let rebuilt = &e.vectors * lambda * e.vectors.transpose();
            assert!((rebuilt - &h).norm() < 1e-9, "seed {seed}");
            let gram = e.vectors.transpose() * &e.vectors;
            assert!((gram - DMatrix::identity(6, 6)).norm() < 1e-12);
            // HV = V Lambda within 1e-8 ||H||
            let hv = &h * &e.vectors;
            let vl = &e.vectors * DMatrix::from_diagonal(&e.values);
            assert!((hv - vl).norm() < 1e-8 * h.norm());
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let mut h = random_symmetric(4, 9);
        h[(0, 1)] += 1e-3;
        assert!(matches!(symmetric_eigen(&h), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn handles_moderately_large_matrices() {
        let h = random_symmetric(60, 17);
        let e = symmetric_eigen(&h).unwrap();
        let hv = &h * &e.vectors;
        let vl = &e.vectors * DMatrix::from_diagonal(&e.values);
        assert!((hv - vl).norm() < 1e-8 * h.norm());
    }
}
