//! Proper orthogonal decomposition by the method of snapshots.
//!
//! The correlation matrix C_ij = (s_i, s_j)_W is built with a weighted
//! inner product (cell volumes for concentration/source fields, face
//! areas for flux fields), its symmetric eigenproblem C Q = Q Lambda is
//! solved at snapshot scale, and modes follow the 1/sqrt(lambda) recipe.

use crate::fom::SnapshotRole;
use crate::scalar::Real;
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("snapshot set is empty")]
    Empty,
    #[error("all snapshots are zero")]
    AllZero,
    #[error("requested {requested} modes but only {available} snapshots are available")]
    TooManyModes { requested: usize, available: usize },
    #[error("field length {got} does not match basis dimension {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("coefficient vector length {got} exceeds mode count {expected}")]
    CoeffMismatch { got: usize, expected: usize },
    #[error("all test columns are zero")]
    AllZeroTest,
}

/// Numerical-rank threshold relative to the leading eigenvalue.
pub const RANK_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis<R> {
    /// n_dof x n_modes, W-orthonormal columns, deterministic sign.
    pub modes: DMatrix<R>,
    /// Full descending eigenvalue list of the correlation matrix
    /// (length = number of snapshots), kept for the energy indicators.
    pub eigenvalues: Vec<R>,
    /// Per-dof quadrature weights of the inner product.
    pub weights: Vec<R>,
    pub role: SnapshotRole,
}

/// Weighted correlation matrix SᵀWS, rows parallelized.
fn correlation<R: Real>(data: &DMatrix<R>, weights: &[R]) -> DMatrix<R> {
    let ns = data.ncols();
    let nd = data.nrows();
    let cols: Vec<&[R]> = (0..ns).map(|j| &data.as_slice()[j * nd..(j + 1) * nd]).collect();
    let rows: Vec<Vec<R>> = (0..ns)
        .into_par_iter()
        .map(|i| {
            let si = cols[i];
            (0..ns)
                .map(|j| {
                    if j < i {
                        R::zero() // filled by symmetry
                    } else {
                        let sj = cols[j];
                        let mut acc = R::zero();
                        for d in 0..nd {
                            acc += si[d] * sj[d] * weights[d];
                        }
                        acc
                    }
                })
                .collect()
        })
        .collect();
    let mut c = DMatrix::zeros(ns, ns);
    for i in 0..ns {
        for j in i..ns {
            c[(i, j)] = rows[i][j];
            c[(j, i)] = rows[i][j];
        }
    }
    c
}

pub fn compute_pod<R: Real>(
    data: &DMatrix<R>,
    weights: &[R],
    n_modes: usize,
    role: SnapshotRole,
) -> Result<PodBasis<R>, PodError> {
    let ns = data.ncols();
    let nd = data.nrows();
    if ns == 0 || nd == 0 {
        return Err(PodError::Empty);
    }
    if weights.len() != nd {
        return Err(PodError::SizeMismatch { got: weights.len(), expected: nd });
    }
    if n_modes > ns {
        return Err(PodError::TooManyModes { requested: n_modes, available: ns });
    }

    let corr = correlation(data, weights);
    let eig = corr.symmetric_eigen();
    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<R> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let lambda1 = eigenvalues[0];
    if lambda1 <= R::zero() {
        return Err(PodError::AllZero);
    }

    // Truncate at the numerical rank.
    let floor = R::of(RANK_THRESHOLD) * lambda1;
    let rank = eigenvalues.iter().filter(|&&l| l > floor).count();
    let n = n_modes.min(rank);

    let mut modes = DMatrix::zeros(nd, n);
    for (m, &k) in order.iter().take(n).enumerate() {
        let lam = eigenvalues[m];
        let inv_sqrt = R::one() / num_traits::Float::sqrt(lam);
        let q = eig.eigenvectors.column(k);
        for d in 0..nd {
            let mut acc = R::zero();
            for j in 0..ns {
                acc += data[(d, j)] * q[j];
            }
            modes[(d, m)] = acc * inv_sqrt;
        }
    }

    // Two-pass modified Gram-Schmidt in the W inner product: eigenvector
    // modes lose orthonormality near the rank threshold (roundoff scaled
    // by 1/sqrt(lambda)), and downstream Galerkin operators require the
    // mass-orthonormality to hold to near machine precision.
    for _ in 0..2 {
        for m in 0..n {
            for p in 0..m {
                let mut dot = R::zero();
                for d in 0..nd {
                    dot += modes[(d, m)] * modes[(d, p)] * weights[d];
                }
                for d in 0..nd {
                    let s = modes[(d, p)] * dot;
                    modes[(d, m)] -= s;
                }
            }
            let mut nrm2 = R::zero();
            for d in 0..nd {
                nrm2 += modes[(d, m)] * modes[(d, m)] * weights[d];
            }
            let inv = R::one() / num_traits::Float::sqrt(nrm2);
            for d in 0..nd {
                modes[(d, m)] *= inv;
            }
        }
    }

    // Deterministic sign: orient each mode towards the snapshot mean so
    // dominant-mode coefficients come out positive (operators assembled
    // per mode and contracted against the coefficients prefer the
    // physical orientation). Fluctuation modes with a negligible mean
    // coefficient fall back to "first noticeable entry positive".
    for m in 0..n {
        let mut mean_coeff = R::zero();
        for j in 0..ns {
            let mut dot = R::zero();
            for d in 0..nd {
                dot += data[(d, j)] * modes[(d, m)] * weights[d];
            }
            mean_coeff += dot;
        }
        mean_coeff /= R::of(ns as f64);
        let rms = num_traits::Float::sqrt(
            num_traits::Float::max(eigenvalues[m], R::zero()) / R::of(ns as f64),
        );
        let flip = if num_traits::Float::abs(mean_coeff) > R::of(1e-8) * rms {
            mean_coeff < R::zero()
        } else {
            let col = modes.column(m);
            let max_abs = col
                .iter()
                .fold(R::zero(), |a, &v| num_traits::Float::max(a, num_traits::Float::abs(v)));
            let tol = R::of(1e-12) * max_abs;
            col.iter().find(|&&v| num_traits::Float::abs(v) > tol).map(|&lead| lead < R::zero()).unwrap_or(false)
        };
        if flip {
            for d in 0..nd {
                modes[(d, m)] = -modes[(d, m)];
            }
        }
    }

    Ok(PodBasis { modes, eigenvalues, weights: weights.to_vec(), role })
}

impl<R: Real> PodBasis<R> {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_dof(&self) -> usize {
        self.modes.nrows()
    }

    /// Numerical rank of the snapshot set the basis was computed from.
    pub fn rank(&self) -> usize {
        let floor = R::of(RANK_THRESHOLD) * self.eigenvalues[0];
        self.eigenvalues.iter().filter(|&&l| l > floor).count()
    }

    /// Leading-mode sub-basis. The orthonormalization is triangular, so
    /// the first k modes span the same space as before truncation.
    pub fn truncated(&self, k: usize) -> Result<PodBasis<R>, PodError> {
        if k == 0 || k > self.n_modes() {
            return Err(PodError::TooManyModes { requested: k, available: self.n_modes() });
        }
        Ok(PodBasis {
            modes: self.modes.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues.clone(),
            weights: self.weights.clone(),
            role: self.role,
        })
    }

    /// sigma_hat_i = lambda_i / lambda_1.
    pub fn normalized_eigenvalues(&self) -> Vec<R> {
        let l1 = self.eigenvalues[0];
        self.eigenvalues.iter().map(|&l| l / l1).collect()
    }

    /// Retained energy E_n = sum_{i<=n} lambda_i / sum_i lambda_i.
    pub fn retained_energy(&self, n: usize) -> R {
        let total: R = self.eigenvalues.iter().fold(R::zero(), |a, &l| a + num_traits::Float::max(l, R::zero()));
        let head: R = self
            .eigenvalues
            .iter()
            .take(n)
            .fold(R::zero(), |a, &l| a + num_traits::Float::max(l, R::zero()));
        head / total
    }

    pub fn inner(&self, a: &[R], b: &[R]) -> R {
        let mut s = R::zero();
        for d in 0..a.len() {
            s += a[d] * b[d] * self.weights[d];
        }
        s
    }

    pub fn norm(&self, a: &[R]) -> R {
        num_traits::Float::sqrt(self.inner(a, a))
    }

    /// a_k = (field, phi_k)_W for all retained modes.
    pub fn project(&self, field: &[R]) -> Result<Vec<R>, PodError> {
        if field.len() != self.n_dof() {
            return Err(PodError::SizeMismatch { got: field.len(), expected: self.n_dof() });
        }
        Ok((0..self.n_modes())
            .map(|k| {
                let col = self.modes.column(k);
                let mut s = R::zero();
                for d in 0..field.len() {
                    s += field[d] * col[d] * self.weights[d];
                }
                s
            })
            .collect())
    }

    /// sum_k a_k phi_k; |a| may be shorter than the mode count.
    pub fn reconstruct(&self, a: &[R]) -> Result<Vec<R>, PodError> {
        if a.len() > self.n_modes() {
            return Err(PodError::CoeffMismatch { got: a.len(), expected: self.n_modes() });
        }
        let mut out = vec![R::zero(); self.n_dof()];
        for (k, &ak) in a.iter().enumerate() {
            let col = self.modes.column(k);
            for d in 0..out.len() {
                out[d] += ak * col[d];
            }
        }
        Ok(out)
    }

    /// Mean over nonzero columns of ||c - P_n c||_W / ||c||_W;
    /// returns (error, skipped zero-column count).
    pub fn projection_error_series(
        &self,
        test: &DMatrix<R>,
        n: usize,
    ) -> Result<(R, usize), PodError> {
        if test.nrows() != self.n_dof() {
            return Err(PodError::SizeMismatch { got: test.nrows(), expected: self.n_dof() });
        }
        let n = n.min(self.n_modes());
        let mut total = R::zero();
        let mut count = 0usize;
        let mut skipped = 0usize;
        for j in 0..test.ncols() {
            let col: Vec<R> = test.column(j).iter().copied().collect();
            let nc = self.norm(&col);
            if nc == R::zero() {
                skipped += 1;
                continue;
            }
            let a = self.project(&col)?;
            let rec = self.reconstruct(&a[..n])?;
            let diff: Vec<R> = col.iter().zip(&rec).map(|(&x, &y)| x - y).collect();
            total += self.norm(&diff) / nc;
            count += 1;
        }
        if count == 0 {
            return Err(PodError::AllZeroTest);
        }
        Ok((total / R::of(count as f64), skipped))
    }

    /// Eigenvalue CSV: index, lambda, sigma_hat, E_n.
    pub fn eigen_csv(&self) -> String {
        let mut out = String::from("index,lambda,sigma_hat,retained_energy\n");
        let sh = self.normalized_eigenvalues();
        for i in 0..self.eigenvalues.len() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                i + 1,
                self.eigenvalues[i].to_f64(),
                sh[i].to_f64(),
                self.retained_energy(i + 1).to_f64()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_weights(n: usize, v: f64) -> Vec<f64> {
        vec![v; n]
    }

    #[test]
    fn orthonormal_pair_is_reproduced() {
        // snapshots e_1/sqrt(V), e_2/sqrt(V) are already W-orthonormal
        let v: f64 = 0.25;
        let n = 8;
        let mut data = DMatrix::zeros(n, 2);
        data[(0, 0)] = 1.0 / v.sqrt();
        data[(1, 1)] = 1.0 / v.sqrt();
        let basis = compute_pod(&data, &uniform_weights(n, v), 2, SnapshotRole::Concentration).unwrap();
        assert_eq!(basis.n_modes(), 2);
        assert!((basis.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((basis.eigenvalues[1] - 1.0).abs() < 1e-12);
        for m in 0..2 {
            let col: Vec<f64> = basis.modes.column(m).iter().copied().collect();
            let nrm = basis.norm(&col);
            assert!((nrm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_snapshot_truncates_to_rank_one() {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = DMatrix::from_fn(n, 2, |r, _| s[r]);
        let basis = compute_pod(&data, &uniform_weights(n, 1.0), 2, SnapshotRole::Concentration).unwrap();
        assert_eq!(basis.n_modes(), 1);
        assert!(basis.eigenvalues[1].abs() <= 1e-12 * basis.eigenvalues[0]);
    }

    #[test]
    fn full_rank_reconstruction_matches_svd_oracle() {
        let nd = 100;
        let ns = 50;
        let v = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DMatrix::from_fn(nd, ns, |_, _| rng.gen_range(-1.0..1.0));
        let w = uniform_weights(nd, v);
        let basis = compute_pod(&data, &w, ns, SnapshotRole::Concentration).unwrap();
        assert_eq!(basis.n_modes(), ns);

        // reconstruction Phi (Phi^T W S) = S at full rank
        for j in 0..ns {
            let col: Vec<f64> = data.column(j).iter().copied().collect();
            let rec = basis.reconstruct(&basis.project(&col).unwrap()).unwrap();
            let err: f64 = col.iter().zip(&rec).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "col {j} err {err}");
        }

        // eigenvalues equal squared singular values of W^(1/2) S (dense SVD oracle)
        let ws = DMatrix::from_fn(nd, ns, |r, c| v.sqrt() * data[(r, c)]);
        let svd = ws.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().map(|&s| s * s).collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (l, s) in basis.eigenvalues.iter().zip(&sv) {
            assert!((l - s).abs() < 1e-9 * sv[0], "{l} vs {s}");
        }
    }

    #[test]
    fn projection_identities() {
        let nd = 30;
        let ns = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = DMatrix::from_fn(nd, ns, |_, _| rng.gen_range(-1.0..1.0));
        let w = uniform_weights(nd, 0.5);
        let basis = compute_pod(&data, &w, ns, SnapshotRole::Concentration).unwrap();

        // phi_1 projects to e_1
        let m0: Vec<f64> = basis.modes.column(0).iter().copied().collect();
        let a = basis.project(&m0).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-10);
        for &v in &a[1..] {
            assert!(v.abs() < 1e-10);
        }

        // zero field projects to zero
        let z = basis.project(&vec![0.0; nd]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        // random field: reconstruct(project) equals the dense W-orthogonal projector
        let f: Vec<f64> = (0..nd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rec = basis.reconstruct(&basis.project(&f).unwrap()).unwrap();
        // dense projector oracle: P = Phi Phi^T W
        let phi = &basis.modes;
        let wmat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.clone()));
        let p = phi * phi.transpose() * wmat;
        let fv = nalgebra::DVector::from_vec(f);
        let oracle = &p * &fv;
        for d in 0..nd {
            assert!((rec[d] - oracle[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_error_series_properties() {
        let nd = 40;
        let ns = 15;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(nd, ns, |_, _| rng.gen_range(-1.0..1.0));
        let w = uniform_weights(nd, 1.0);
        let basis = compute_pod(&data, &w, ns, SnapshotRole::Concentration).unwrap();

        // training set at full rank: error ~ 0
        let (err_full, _) = basis.projection_error_series(&data, basis.rank()).unwrap();
        assert!(err_full <= 1e-10, "err {err_full:e}");

        // n = 0: error exactly 1
        let (err0, _) = basis.projection_error_series(&data, 0).unwrap();
        assert!((err0 - 1.0).abs() < 1e-14);

        // monotone non-increasing sweep on an unseen test set
        let test = DMatrix::from_fn(nd, 10, |_, _| rng.gen_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for n in 0..=basis.n_modes() {
            let (e, _) = basis.projection_error_series(&test, n).unwrap();
            assert!(e <= prev + 1e-12, "n={n}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn snapshot_level_optimality() {
        // sum_i ||c_i - P_n c_i||^2_W = sum_{k>n} lambda_k
        let nd = 50;
        let ns = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = DMatrix::from_fn(nd, ns, |_, _| rng.gen_range(-1.0..1.0));
        let w = uniform_weights(nd, 0.2);
        let basis = compute_pod(&data, &w, ns, SnapshotRole::Concentration).unwrap();
        for n in [1usize, 5, 10, 19] {
            let mut lhs = 0.0;
            for j in 0..ns {
                let col: Vec<f64> = data.column(j).iter().copied().collect();
                let a = basis.project(&col).unwrap();
                let rec = basis.reconstruct(&a[..n]).unwrap();
                let diff: Vec<f64> = col.iter().zip(&rec).map(|(x, y)| x - y).collect();
                lhs += basis.inner(&diff, &diff);
            }
            let rhs: f64 = basis.eigenvalues[n..].iter().sum();
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-12), "n={n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn error_cases() {
        let data: DMatrix<f64> = DMatrix::zeros(5, 3);
        assert!(matches!(
            compute_pod(&data, &uniform_weights(5, 1.0), 2, SnapshotRole::Source),
            Err(PodError::AllZero)
        ));
        let ok = DMatrix::from_fn(5, 3, |r, c| (r + c) as f64 + 1.0);
        assert!(matches!(
            compute_pod(&ok, &uniform_weights(5, 1.0), 4, SnapshotRole::Source),
            Err(PodError::TooManyModes { .. })
        ));
    }
}
