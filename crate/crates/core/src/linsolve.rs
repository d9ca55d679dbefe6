//! Direct linear solvers: sparse LU for fine and neighborhood systems, dense
//! LU for projected coarse systems, and a dense generalized symmetric
//! eigensolver. All factorizations are delegated to `faer`; this module adds
//! residual verification and a few steps of iterative refinement.

use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::{norm2, CsrMatrix};

/// Relative residual target `‖Ax − b‖ ≤ RESIDUAL_TOL · ‖b‖`.
pub const RESIDUAL_TOL: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 4;

/// Sparse LU factorization of a square [`CsrMatrix`].
pub struct SparseLu {
    matrix: CsrMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                context: "sparse LU (square)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut triplets = Vec::with_capacity(a.nnz());
        for r in 0..n {
            let (cols, vals) = a.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| Triplet::new(r, c, v)));
        }
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Singular {
                context: "sparse LU",
                detail: format!("{e:?}"),
            })?;
        let lu = csc.sp_lu().map_err(|e| Error::Singular {
            context: "sparse LU",
            detail: format!("{e:?}"),
        })?;
        Ok(Self {
            matrix: a.clone(),
            lu,
        })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves `A x = b` with iterative refinement; fails if the relative
    /// residual stays above [`RESIDUAL_TOL`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        refine(|x| self.matrix.mul_vec(x), |r| self.raw_solve(r), b, "sparse LU")
    }
}

fn refine(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    inverse: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    context: &'static str,
) -> Result<Vec<f64>> {
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let mut x = inverse(b);
    let mut rel = f64::INFINITY;
    for _ in 0..=REFINEMENT_STEPS {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            break;
        }
        if rel <= RESIDUAL_TOL {
            return Ok(x);
        }
        let dx = inverse(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    Err(Error::Singular {
        context,
        detail: format!("relative residual {rel:e} after {REFINEMENT_STEPS} refinement steps"),
    })
}

/// One-shot sparse solve `A x = b`.
pub fn linear_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::Dimension {
            context: "linear_solve rhs",
            expected: a.nrows(),
            actual: b.len(),
        });
    }
    SparseLu::factor(a)?.solve(b)
}

/// Dense LU solve with partial pivoting and refinement.
pub fn dense_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Dimension {
            context: "dense_solve",
            expected: a.nrows(),
            actual: b.len(),
        });
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let lu = a.partial_piv_lu();
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
            .collect()
    };
    let inverse = |r: &[f64]| -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(r.len(), 1, |i, _| r[i]);
        lu.solve_in_place(rhs.as_mut());
        (0..r.len()).map(|i| rhs[(i, 0)]).collect()
    };
    refine(apply, inverse, b, "dense LU")
}

/// Eigenpairs of the symmetric-definite pencil `A v = λ B v`.
pub struct GeneralizedEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`, `B`-orthonormal.
    pub vectors: Mat<f64>,
}

/// Dense generalized symmetric eigensolver through the Cholesky reduction
/// `L⁻¹ A L⁻ᵀ` with `B = L Lᵀ`.
///
/// Eigenvectors are sign-normalized so that their largest-magnitude entry is
/// positive (first such index on ties).
pub fn generalized_symmetric_eigen(a: &Mat<f64>, b: &Mat<f64>) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Dimension {
            context: "generalized eigenproblem",
            expected: n,
            actual: b.nrows(),
        });
    }
    let llt = b.llt(Side::Lower).map_err(|e| {
        Error::Eigen(format!(
            "mass matrix is not numerically positive definite ({e:?}); regularize the snapshot space"
        ))
    })?;
    let l = llt.L();

    // C = L⁻¹ A L⁻ᵀ, formed as L⁻¹ (L⁻¹ A)ᵀ using the symmetry of A.
    let mut x = a.to_owned();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));

    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values: Vec<f64> = (0..n).map(|k| evd.S().column_vector()[k]).collect();
    let mut vectors = evd.U().to_owned();
    solve_upper_triangular_in_place(l.transpose(), vectors.as_mut(), Par::Seq);

    for k in 0..n {
        let mut best = 0usize;
        for i in 0..n {
            if vectors[(i, k)].abs() > vectors[(best, k)].abs() {
                best = i;
            }
        }
        if vectors[(best, k)] < 0.0 {
            for i in 0..n {
                vectors[(i, k)] = -vectors[(i, k)];
            }
        }
    }

    // Order numerically tied eigenvalues by the index of their dominant entry.
    let dominant = |k: usize| -> usize {
        let mut best = 0usize;
        for i in 0..n {
            if vectors[(i, k)].abs() > vectors[(best, k)].abs() {
                best = i;
            }
        }
        best
    };
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (values[end] - values[start]).abs() <= 1e-12 * scale {
            end += 1;
        }
        order[start..end].sort_by_key(|&k| dominant(k));
        start = end;
    }
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let sorted_vectors = Mat::<f64>::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    Ok(GeneralizedEigen {
        values: sorted_values,
        vectors: sorted_vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let x = linear_solve(&CsrMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_spd() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = linear_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_spd_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let g: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut v: f64 = (0..n).map(|k| g[i][k] * g[j][k]).sum();
                if i == j {
                    v += 1.0;
                }
                triplets.push((i, j, v));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &triplets);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = linear_solve(&a, &b).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) <= RESIDUAL_TOL * norm2(&b));

        let dense = a.to_faer_dense();
        let y = dense_solve(&dense, &b).unwrap();
        let r: Vec<f64> = a.mul_vec(&y).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) <= RESIDUAL_TOL * norm2(&b));
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(linear_solve(&a, &[1.0, 0.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn two_dof_pencil() {
        let a = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { 1.0 } else { -1.0 });
        let b = Mat::<f64>::identity(2, 2);
        let e = generalized_symmetric_eigen(&a, &b).unwrap();
        assert!(e.values[0].abs() < 1e-14);
        assert!((e.values[1] - 2.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[(0, 0)] - s).abs() < 1e-14 && (e.vectors[(1, 0)] - s).abs() < 1e-14);
    }
}
