//! Dense linear algebra shared by the rest of the crate.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. `vec` stacks columns, and `kron`
//! uses the standard block layout where block `(i, j)` is `a[(i, j)] * b`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{JlsError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance for every rank decision.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Numerical rank together with the spectrum it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    /// Absolute cutoff actually applied to the singular values.
    pub threshold: f64,
}

impl RankReport {
    /// Ratio between the smallest kept and the largest discarded singular
    /// value. Infinite when nothing is discarded or the discarded part is 0.
    pub fn spectral_gap(&self) -> f64 {
        spectral_gap(&self.singular_values, self.rank)
    }
}

pub(crate) fn spectral_gap(descending: &[f64], rank: usize) -> f64 {
    if rank == 0 {
        return match descending.first() {
            Some(&v) if v > 0.0 => 0.0,
            _ => f64::INFINITY,
        };
    }
    match descending.get(rank) {
        None => f64::INFINITY,
        Some(&next) if next <= 0.0 => f64::INFINITY,
        Some(&next) => descending[rank - 1] / next,
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * br, j * bc), (br, bc));
            block.zip_apply(b, |o, bv| *o = aij * bv);
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(a: &Matrix) -> Vector {
    // nalgebra stores column-major, so the raw slice is already vec(A).
    Vector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for a `rows x cols` matrix.
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(JlsError::Dimension(format!(
            "cannot reshape a length-{} vector into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Counts singular values above `tol * sigma_max * max(rows, cols)`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> RankReport {
    let singular_values = singular_values(m);
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let threshold = tol * sigma_max * m.nrows().max(m.ncols()) as f64;
    let rank = if sigma_max == 0.0 {
        0
    } else {
        singular_values.iter().filter(|&&s| s > threshold).count()
    };
    RankReport {
        rank,
        singular_values,
        tolerance: tol,
        threshold,
    }
}

/// Moore-Penrose pseudoinverse, discarding singular values at the
/// [`numerical_rank`] threshold.
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return Matrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let threshold = tol * sigma_max * rows.max(cols) as f64;
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if sigma_max == 0.0 || s <= threshold {
            continue;
        }
        let vk = v_t.row(k).transpose();
        let uk = u.column(k);
        out += (vk * uk.transpose()) / s;
    }
    out
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(JlsError::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Nearest PSD matrix in Frobenius norm: symmetrize, then clip negative
/// eigenvalues to zero.
pub fn psd_project(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * Matrix::from_diagonal(&clipped) * v.transpose();
    symmetrize(&out)
}

/// Eigenvalues of the symmetric part, sorted descending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Orthonormal basis (as columns) of the column space of `m`, keeping
/// directions whose singular value exceeds `tol * sigma_max`.
pub fn orthonormal_basis(m: &Matrix, tol: f64) -> Matrix {
    let rows = m.nrows();
    if m.is_empty() {
        return Matrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return Matrix::zeros(rows, 0);
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| svd.singular_values[k] > tol * sigma_max)
        .collect();
    Matrix::from_fn(rows, keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthonormal basis of `{vec(X) : X = X^T}` inside `R^{n^2}`, one column per
/// pair `i <= j` in row-major pair order.
pub fn symmetric_basis(n: usize) -> Matrix {
    let dim = n * (n + 1) / 2;
    let mut out = Matrix::zeros(n * n, dim);
    let mut col = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                out[(i + n * i, col)] = 1.0;
            } else {
                let w = std::f64::consts::FRAC_1_SQRT_2;
                out[(i + n * j, col)] = w;
                out[(j + n * i, col)] = w;
            }
            col += 1;
        }
    }
    out
}

/// Orthogonal projector onto the symmetric subspace, `(I + K) / 2` with `K`
/// the commutation matrix.
pub fn symmetric_projector(n: usize) -> Matrix {
    let e = symmetric_basis(n);
    &e * e.transpose()
}

/// `m^k` by repeated multiplication.
pub fn matrix_power(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Powers `m^0 .. m^max` by repeated multiplication.
pub fn matrix_powers(m: &Matrix, max: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(Matrix::identity(m.nrows(), m.ncols()));
    for k in 1..=max {
        let next = &out[k - 1] * m;
        out.push(next);
    }
    out
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &Matrix) -> f64 {
        m.amax()
    }

    #[test]
    fn kron_identity_and_basis_vectors() {
        assert_eq!(
            kron(&Matrix::identity(2, 2), &Matrix::identity(2, 2)),
            Matrix::identity(4, 4)
        );
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let k = kron(&e1, &e1);
        assert_eq!(k.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kron_block_layout() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_row_slice(1, 2, &[5.0, 7.0]);
        let k = kron(&a, &b);
        let expected =
            Matrix::from_row_slice(2, 4, &[5.0, 7.0, 10.0, 14.0, 15.0, 21.0, 20.0, 28.0]);
        assert_eq!(k, expected);
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b, c, d) = (
                random(2, 2, &mut rng),
                random(2, 2, &mut rng),
                random(2, 2, &mut rng),
                random(2, 2, &mut rng),
            );
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            assert!(max_abs(&(lhs - rhs)) < 1e-12);
        }
    }

    #[test]
    fn kron_associative_and_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b, c) = (
            random(2, 3, &mut rng),
            random(3, 2, &mut rng),
            random(2, 2, &mut rng),
        );
        let lhs = kron(&kron(&a, &b), &c);
        let rhs = kron(&a, &kron(&b, &c));
        assert!(max_abs(&(lhs - rhs)) < 1e-12);

        let a2 = random(2, 3, &mut rng);
        let lin = kron(&(&a * 2.0 + &a2 * -0.5), &b);
        let split = kron(&a, &b) * 2.0 - kron(&a2, &b) * 0.5;
        assert!(max_abs(&(lin - split)) < 1e-12);
    }

    #[test]
    fn vec_stacks_columns() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&Matrix::zeros(2, 2)), Vector::zeros(4));
        assert_eq!(unvec(&vec(&a), 2, 2).unwrap(), a);
        assert!(unvec(&vec(&a), 3, 2).is_err());
    }

    #[test]
    fn vec_of_outer_product_is_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random(3, 1, &mut rng);
            let y = random(4, 1, &mut rng);
            let outer = &x * y.transpose();
            let lhs = Matrix::from_column_slice(12, 1, vec(&outer).as_slice());
            let rhs = kron(&y, &x);
            assert!(max_abs(&(lhs - rhs)) < 1e-12);
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(
            numerical_rank(&Matrix::identity(3, 3), DEFAULT_RANK_TOL).rank,
            3
        );
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-14]));
        assert_eq!(numerical_rank(&d, 1e-8).rank, 1);
        let z = numerical_rank(&Matrix::zeros(3, 2), DEFAULT_RANK_TOL);
        assert_eq!(z.rank, 0);
        assert_eq!(z.singular_values[0], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random(5, 1, &mut rng);
        let mut m = Matrix::zeros(5, 2);
        m.set_column(0, &v.column(0));
        m.set_column(1, &(v.column(0) * 2.0));
        let report = numerical_rank(&m, DEFAULT_RANK_TOL);
        assert_eq!(report.rank, 1);
        assert!(report.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_invariant_under_permutation_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let low = random(6, 2, &mut rng) * random(2, 5, &mut rng);
        let base = numerical_rank(&low, DEFAULT_RANK_TOL).rank;
        assert_eq!(base, 2);
        let mut permuted = low.clone();
        permuted.swap_rows(0, 4);
        permuted.swap_columns(1, 3);
        assert_eq!(numerical_rank(&permuted, DEFAULT_RANK_TOL).rank, base);
        let q = random(6, 6, &mut rng).qr().q();
        assert_eq!(numerical_rank(&(q * &low), DEFAULT_RANK_TOL).rank, base);
    }

    #[test]
    fn pinv_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let p = pinv(&d, DEFAULT_RANK_TOL);
        assert_eq!(p, Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0])));
        let i = Matrix::identity(4, 4);
        assert!(max_abs(&(pinv(&i, DEFAULT_RANK_TOL) - &i)) < 1e-15);
    }

    #[test]
    fn pinv_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let a = random(4, 3, &mut rng);
            let x = pinv(&a, DEFAULT_RANK_TOL);
            assert!(max_abs(&(&a * &x * &a - &a)) < 1e-9);
            assert!(max_abs(&(&x * &a * &x - &x)) < 1e-9);
            let ax = &a * &x;
            let xa = &x * &a;
            assert!(max_abs(&(&ax - ax.transpose())) < 1e-9);
            assert!(max_abs(&(&xa - xa.transpose())) < 1e-9);
            let back = pinv(&x, DEFAULT_RANK_TOL);
            assert!(max_abs(&(back - &a)) < 1e-8);
        }
    }

    fn power_iteration_radius(m: &Matrix) -> f64 {
        // |lambda_max| = lim ||M^k||^(1/k); normalize each step to avoid overflow.
        let mut p = Matrix::identity(m.nrows(), m.ncols());
        let mut log_scale = 0.0;
        let steps = 4000;
        for _ in 0..steps {
            p = &p * m;
            let nrm = p.norm();
            log_scale += nrm.ln();
            p /= nrm;
        }
        (log_scale / steps as f64).exp()
    }

    #[test]
    fn spectral_radius_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![0.3, -0.9]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.9, epsilon = 1e-12);
        let rot = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-12);
        // z^2 - z - 1
        let companion = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(
            spectral_radius(&companion).unwrap(),
            golden,
            epsilon = 1e-12
        );
        assert_relative_eq!(golden, 1.6180339887, epsilon = 1e-10);
        assert!(spectral_radius(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let m = random(4, 4, &mut rng);
            let direct = spectral_radius(&m).unwrap();
            let power = power_iteration_radius(&m);
            // The power estimate converges like O(log(k)/k); compare loosely
            // here and tightly on a symmetric matrix below.
            assert!(
                (direct - power).abs() < 5e-3 * direct.max(1.0),
                "{direct} vs {power}"
            );
        }
        let s = random(4, 4, &mut rng);
        let s = &s + s.transpose();
        let top = sym_eigenvalues(&s)
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!((spectral_radius(&s).unwrap() - top).abs() < 1e-9);
    }

    #[test]
    fn psd_projection_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
        let p = psd_project(&d);
        assert!(max_abs(&(p - Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])))) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random(4, 4, &mut rng);
        let psd = &g * g.transpose();
        assert!(max_abs(&(psd_project(&psd) - &psd)) < 1e-12);
    }

    #[test]
    fn psd_projection_is_nearest_among_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random(4, 4, &mut rng);
        let m = symmetrize(&m);
        let proj = psd_project(&m);
        assert!(sym_eigenvalues(&proj).iter().all(|&l| l > -1e-12));
        let best = (&m - &proj).norm();
        for _ in 0..100 {
            let g = random(4, 4, &mut rng);
            let q = &g * g.transpose();
            assert!(best <= (&m - q).norm() + 1e-12);
        }
        let twice = psd_project(&proj);
        assert!(max_abs(&(twice - proj)) < 1e-12);
    }

    #[test]
    fn symmetric_basis_is_orthonormal_and_symmetric() {
        for n in 1..5 {
            let e = symmetric_basis(n);
            assert_eq!(e.ncols(), n * (n + 1) / 2);
            let gram = e.transpose() * &e;
            assert!(max_abs(&(gram - Matrix::identity(e.ncols(), e.ncols()))) < 1e-15);
            for c in 0..e.ncols() {
                let x = unvec(&e.column(c).into_owned(), n, n).unwrap();
                assert_eq!(x, x.transpose());
            }
        }
    }

    #[test]
    fn orthonormal_basis_drops_dependent_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random(5, 2, &mut rng);
        let m = Matrix::from_fn(5, 3, |r, c| {
            if c < 2 {
                a[(r, c)]
            } else {
                a[(r, 0)] - a[(r, 1)]
            }
        });
        let q = orthonormal_basis(&m, 1e-10);
        assert_eq!(q.ncols(), 2);
        assert!(orthonormal_basis(&Matrix::zeros(3, 2), 1e-10).ncols() == 0);
    }
}
