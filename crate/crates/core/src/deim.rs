//! Discrete empirical interpolation of the source term.
//!
//! Greedy magic-point selection in its original form: the first point at
//! the largest-magnitude entry of the first source mode, each subsequent
//! point at the largest-magnitude entry of the current interpolation
//! residual. Points are restricted to the source support (road cells).
//! The reduced map F_r = Phi^T W U (P^T U)^{-1} folds the mass weights
//! in, so the online evaluation is a small matrix-vector product fed by
//! point evaluations only.

use crate::grid::StructuredGrid;
use crate::pod::PodBasis;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeimError {
    #[error("requested {requested} DEIM modes but only {available} source modes exist")]
    TooManyModes { requested: usize, available: usize },
    #[error("P^T U is numerically singular (condition {cond:e})")]
    Singular { cond: f64 },
    #[error("source support is empty")]
    EmptySupport,
    #[error("expected {expected} magic-point values, got {got}")]
    Dimension { got: usize, expected: usize },
    #[error("empty snapshot set")]
    EmptySnapshots,
}

const COND_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct DeimModel<R> {
    /// Source POD modes U (n_dof x N_DEIM).
    pub source_modes: DMatrix<R>,
    /// Magic-point cell indices, selection order.
    pub magic_points: Vec<usize>,
    /// Interpolation operator U (P^T U)^{-1}.
    pub interp: DMatrix<R>,
    /// Reduced source map F_r (N_rb x N_DEIM).
    pub reduced_map: DMatrix<R>,
    /// P^T U, kept for coefficient solves.
    pub ptu: DMatrix<R>,
    /// Condition number of P^T U.
    pub condition: f64,
    /// Inner-product weights of the source space.
    pub weights: Vec<R>,
}

pub fn build_deim<R: Real>(
    source_basis: &PodBasis<R>,
    conc_basis: &PodBasis<R>,
    support: &[usize],
    n_deim: usize,
) -> Result<DeimModel<R>, DeimError> {
    if support.is_empty() {
        return Err(DeimError::EmptySupport);
    }
    let avail = source_basis.n_modes();
    if n_deim == 0 || n_deim > avail {
        return Err(DeimError::TooManyModes { requested: n_deim, available: avail });
    }
    let nd = source_basis.n_dof();
    let u = source_basis.modes.columns(0, n_deim).into_owned();

    let argmax_on_support = |r: &DVector<R>| -> usize {
        let mut best = support[0];
        let mut best_val = R::of(-1.0);
        for &cell in support {
            let v = num_traits::Float::abs(r[cell]);
            if v > best_val {
                best_val = v;
                best = cell;
            }
        }
        best
    };

    let mut points = Vec::with_capacity(n_deim);
    points.push(argmax_on_support(&u.column(0).into_owned()));
    for i in 1..n_deim {
        // residual of interpolating mode i with the points chosen so far
        let ui = u.columns(0, i).into_owned();
        let ptu_i = DMatrix::from_fn(i, i, |r, c| ui[(points[r], c)]);
        let rhs = DVector::from_fn(i, |r, _| u[(points[r], i)]);
        let coeff = ptu_i
            .lu()
            .solve(&rhs)
            .ok_or(DeimError::Singular { cond: f64::INFINITY })?;
        let mut resid = u.column(i).into_owned();
        resid -= &ui * coeff;
        let q = argmax_on_support(&resid);
        points.push(q);
    }
    debug_assert_eq!(
        points.iter().collect::<std::collections::HashSet<_>>().len(),
        points.len(),
        "magic points must be distinct"
    );

    let ptu = DMatrix::from_fn(n_deim, n_deim, |r, c| u[(points[r], c)]);
    let svd = ptu.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(R::zero(), |a, &v| num_traits::Float::max(a, v));
    let smin = svd.singular_values.iter().fold(smax, |a, &v| num_traits::Float::min(a, v));
    let cond = if smin > R::zero() { (smax / smin).to_f64() } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(DeimError::Singular { cond });
    }

    let ptu_inv = ptu
        .clone()
        .lu()
        .try_inverse()
        .ok_or(DeimError::Singular { cond })?;
    let interp = &u * &ptu_inv;

    // F_r = Phi^T W * interp
    let n_rb = conc_basis.n_modes();
    let w = &conc_basis.weights;
    let mut reduced_map = DMatrix::zeros(n_rb, n_deim);
    for i in 0..n_rb {
        let phi = conc_basis.modes.column(i);
        for j in 0..n_deim {
            let mut acc = R::zero();
            for d in 0..nd {
                acc += phi[d] * w[d] * interp[(d, j)];
            }
            reduced_map[(i, j)] = acc;
        }
    }

    Ok(DeimModel {
        source_modes: u,
        magic_points: points,
        interp,
        reduced_map,
        ptu,
        condition: cond,
        weights: source_basis.weights.clone(),
    })
}

impl<R: Real> DeimModel<R> {
    pub fn n_deim(&self) -> usize {
        self.magic_points.len()
    }

    /// Solves (P^T U) p = f(q) for the interpolation coefficients.
    pub fn coefficients(&self, values_at_points: &[R]) -> Result<Vec<R>, DeimError> {
        if values_at_points.len() != self.n_deim() {
            return Err(DeimError::Dimension { got: values_at_points.len(), expected: self.n_deim() });
        }
        let rhs = DVector::from_column_slice(values_at_points);
        let p = self
            .ptu
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(DeimError::Singular { cond: self.condition })?;
        Ok(p.iter().copied().collect())
    }

    /// Full-order DEIM approximation from magic-point values.
    pub fn approximate(&self, values_at_points: &[R]) -> Result<Vec<R>, DeimError> {
        if values_at_points.len() != self.n_deim() {
            return Err(DeimError::Dimension { got: values_at_points.len(), expected: self.n_deim() });
        }
        let v = DVector::from_column_slice(values_at_points);
        Ok((&self.interp * v).iter().copied().collect())
    }

    /// Reduced source from magic-point values; the map already folds in
    /// the interpolation solve.
    pub fn reduced_source(&self, values_at_points: &[R]) -> Result<Vec<R>, DeimError> {
        if values_at_points.len() != self.n_deim() {
            return Err(DeimError::Dimension { got: values_at_points.len(), expected: self.n_deim() });
        }
        let v = DVector::from_column_slice(values_at_points);
        Ok((&self.reduced_map * v).iter().copied().collect())
    }

    fn weighted_norm(&self, a: &[R]) -> R {
        let mut s = R::zero();
        for d in 0..a.len() {
            s += a[d] * a[d] * self.weights[d];
        }
        num_traits::Float::sqrt(s)
    }

    /// Mean relative W-norm reconstruction error over snapshot columns.
    pub fn reconstruction_error(&self, snapshots: &DMatrix<R>) -> Result<R, DeimError> {
        if snapshots.ncols() == 0 {
            return Err(DeimError::EmptySnapshots);
        }
        let mut total = R::zero();
        let mut count = 0usize;
        for j in 0..snapshots.ncols() {
            let col: Vec<R> = snapshots.column(j).iter().copied().collect();
            let nrm = self.weighted_norm(&col);
            if nrm == R::zero() {
                continue;
            }
            let at_points: Vec<R> = self.magic_points.iter().map(|&q| col[q]).collect();
            let rec = self.approximate(&at_points)?;
            let diff: Vec<R> = col.iter().zip(&rec).map(|(&a, &b)| a - b).collect();
            total += self.weighted_norm(&diff) / nrm;
            count += 1;
        }
        if count == 0 {
            return Err(DeimError::EmptySnapshots);
        }
        Ok(total / R::of(count as f64))
    }

    /// Magic-point CSV: order, cell index, x, y.
    pub fn magic_points_csv(&self, g: &StructuredGrid<R>) -> String {
        let mut out = String::from("order,cell,x,y\n");
        for (k, &q) in self.magic_points.iter().enumerate() {
            let (x, y) = g.cell_center(q);
            out.push_str(&format!("{},{},{},{}\n", k + 1, q, x.to_f64(), y.to_f64()));
        }
        out
    }
}

/// Error-vs-size sweep on training and test sets; returns
/// (n_deim, train error, test error) rows plus a CSV rendering.
pub fn deim_error_curve<R: Real>(
    source_basis: &PodBasis<R>,
    conc_basis: &PodBasis<R>,
    support: &[usize],
    sizes: &[usize],
    train: &DMatrix<R>,
    test: &DMatrix<R>,
) -> Result<(Vec<(usize, R, R)>, String), DeimError> {
    let mut rows = Vec::new();
    let mut csv = String::from("n_deim,train_error,test_error\n");
    for &n in sizes {
        let model = build_deim(source_basis, conc_basis, support, n)?;
        let e_train = model.reconstruction_error(train)?;
        let e_test = model.reconstruction_error(test)?;
        rows.push((n, e_train, e_test));
        csv.push_str(&format!("{},{:e},{:e}\n", n, e_train.to_f64(), e_test.to_f64()));
    }
    Ok((rows, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::SnapshotRole;
    use crate::pod::compute_pod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random source snapshots supported on `support`.
    fn source_set(nd: usize, support: &[usize], ns: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(nd, ns);
        for j in 0..ns {
            for &c in support {
                m[(c, j)] = rng.gen_range(0.0..1.0);
            }
        }
        m
    }

    fn bases(
        data: &DMatrix<f64>,
        nd: usize,
        n_src: usize,
        n_rb: usize,
        seed: u64,
    ) -> (PodBasis<f64>, PodBasis<f64>) {
        let w = vec![0.5; nd];
        let src = compute_pod(data, &w, n_src, SnapshotRole::Source).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let conc_data = DMatrix::from_fn(nd, n_rb + 3, |_, _| rng.gen_range(-1.0..1.0));
        let conc = compute_pod(&conc_data, &w, n_rb, SnapshotRole::Concentration).unwrap();
        (src, conc)
    }

    #[test]
    fn first_magic_point_is_argmax_of_first_mode() {
        let nd = 30;
        let support: Vec<usize> = (5..15).collect();
        let data = source_set(nd, &support, 8, 1);
        let (src, conc) = bases(&data, nd, 8, 3, 1);
        let model = build_deim(&src, &conc, &support, 1).unwrap();
        let chi1 = src.modes.column(0);
        let q_oracle = support
            .iter()
            .copied()
            .max_by(|&a, &b| chi1[a].abs().partial_cmp(&chi1[b].abs()).unwrap())
            .unwrap();
        assert_eq!(model.magic_points[0], q_oracle);
    }

    #[test]
    fn disjoint_components_get_distinct_points() {
        // two disjoint support islands driven by independent signals
        let nd = 40;
        let island_a: Vec<usize> = vec![3, 4];
        let island_b: Vec<usize> = vec![30, 31];
        let support: Vec<usize> = island_a.iter().chain(&island_b).copied().collect();
        let mut data = DMatrix::zeros(nd, 6);
        for j in 0..6 {
            for &c in &island_a {
                data[(c, j)] = 1.0 + j as f64;
            }
            for &c in &island_b {
                data[(c, j)] = (j as f64 * 0.7).cos() + 2.0;
            }
        }
        let (src, conc) = bases(&data, nd, 2, 2, 2);
        let model = build_deim(&src, &conc, &support, 2).unwrap();
        let in_a = model.magic_points.iter().filter(|q| island_a.contains(q)).count();
        let in_b = model.magic_points.iter().filter(|q| island_b.contains(q)).count();
        assert_eq!(in_a, 1);
        assert_eq!(in_b, 1);
    }

    #[test]
    fn full_rank_training_reconstruction_is_exact() {
        let nd = 50;
        let support: Vec<usize> = (10..22).collect();
        let data = source_set(nd, &support, 12, 3);
        let (src, conc) = bases(&data, nd, 12, 5, 3);
        let rank = src.rank();
        let model = build_deim(&src, &conc, &support, rank).unwrap();
        let err = model.reconstruction_error(&data).unwrap();
        assert!(err <= 1e-10, "err {err:e}");
    }

    #[test]
    fn coefficient_identities() {
        let nd = 40;
        let support: Vec<usize> = (0..20).collect();
        let data = source_set(nd, &support, 10, 4);
        let (src, conc) = bases(&data, nd, 10, 4, 4);
        let model = build_deim(&src, &conc, &support, 6).unwrap();

        // f = chi_1 -> p = e_1
        let chi1: Vec<f64> = src.modes.column(0).iter().copied().collect();
        let at_q: Vec<f64> = model.magic_points.iter().map(|&q| chi1[q]).collect();
        let p = model.coefficients(&at_q).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10);
        for &v in &p[1..] {
            assert!(v.abs() < 1e-10);
        }

        // f = 0 -> p = 0
        let p0 = model.coefficients(&vec![0.0; 6]).unwrap();
        assert!(p0.iter().all(|&v| v == 0.0));

        // random f in span(U): reconstruction matches a dense least-squares oracle
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = {
            let c = DVector::from_column_slice(&coeffs);
            (model.source_modes.columns(0, 6) * c).iter().copied().collect()
        };
        let at_q: Vec<f64> = model.magic_points.iter().map(|&q| f[q]).collect();
        let rec = model.approximate(&at_q).unwrap();
        let rel: f64 = {
            let num: f64 = rec.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = f.iter().map(|v| v.powi(2)).sum::<f64>().sqrt();
            num / den
        };
        assert!(rel <= 1e-10, "rel {rel:e}");
    }

    #[test]
    fn interpolation_identity_at_magic_points() {
        let nd = 35;
        let support: Vec<usize> = (5..25).collect();
        let data = source_set(nd, &support, 9, 5);
        let (src, conc) = bases(&data, nd, 9, 4, 5);
        let model = build_deim(&src, &conc, &support, 5).unwrap();
        let col: Vec<f64> = data.column(2).iter().copied().collect();
        let at_q: Vec<f64> = model.magic_points.iter().map(|&q| col[q]).collect();
        let rec = model.approximate(&at_q).unwrap();
        let scale = at_q.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (k, &q) in model.magic_points.iter().enumerate() {
            assert!((rec[q] - at_q[k]).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn reduced_map_consistent_with_two_step_path() {
        let nd = 30;
        let support: Vec<usize> = (8..20).collect();
        let data = source_set(nd, &support, 8, 6);
        let (src, conc) = bases(&data, nd, 8, 4, 6);
        let model = build_deim(&src, &conc, &support, 6).unwrap();
        let col: Vec<f64> = data.column(1).iter().copied().collect();
        let at_q: Vec<f64> = model.magic_points.iter().map(|&q| col[q]).collect();
        // one-step: F_r p
        let fr_p = model.reduced_source(&at_q).unwrap();
        // two-step: Phi^T W f_DEIM
        let f_deim = model.approximate(&at_q).unwrap();
        let oracle = conc.project(&f_deim).unwrap();
        let scale = oracle.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (a, b) in fr_p.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn error_curve_monotone_on_training_set() {
        let nd = 45;
        let support: Vec<usize> = (10..30).collect();
        let train = source_set(nd, &support, 14, 7);
        let test = source_set(nd, &support, 6, 8);
        let (src, conc) = bases(&train, nd, 14, 5, 7);
        let sizes: Vec<usize> = (1..=src.rank()).collect();
        let (rows, csv) = deim_error_curve(&src, &conc, &support, &sizes, &train, &test).unwrap();
        let mut prev = f64::INFINITY;
        for &(n, e_train, _) in &rows {
            assert!(e_train <= prev + 1e-12, "n={n}");
            prev = e_train;
        }
        // exact at full rank
        assert!(rows.last().unwrap().1 <= 1e-10);
        assert!(csv.lines().count() == sizes.len() + 1);
    }
}
