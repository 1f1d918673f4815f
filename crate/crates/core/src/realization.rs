//! State dimension inference and the rank diagnostics around it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JlsError, Result};
use crate::model::JlsModel;
use crate::numerics::{
    self, numerical_rank, orthonormal_basis, symmetric_basis, Matrix, RankReport,
};
use crate::oracle;

/// Singular values below this fraction of the largest are dropped when a
/// subspace basis is re-orthonormalized.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Result of a subspace fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRank {
    pub rank: usize,
    /// Subspace dimension after each iteration, starting with the seed span.
    pub dimensions: Vec<usize>,
}

/// Smallest subspace containing `seed` and invariant under every map in
/// `maps`. Each step adds `sum_l A_l V` and re-orthonormalizes.
fn invariant_closure(seed: &Matrix, maps: &[Matrix]) -> SubspaceRank {
    let n = seed.nrows();
    let mut basis = orthonormal_basis(seed, DEFLATION_TOL);
    let mut dimensions = vec![basis.ncols()];
    for _ in 0..n {
        if basis.ncols() == 0 || basis.ncols() == n {
            break;
        }
        let k = basis.ncols();
        let mut grown = Matrix::zeros(n, k * (maps.len() + 1));
        grown.columns_mut(0, k).copy_from(&basis);
        for (l, a) in maps.iter().enumerate() {
            grown.columns_mut((l + 1) * k, k).copy_from(&(a * &basis));
        }
        let next = orthonormal_basis(&grown, DEFLATION_TOL);
        let done = next.ncols() == k;
        basis = next;
        dimensions.push(basis.ncols());
        if done {
            break;
        }
    }
    SubspaceRank {
        rank: basis.ncols(),
        dimensions,
    }
}

/// Dimension of the smallest mode-invariant subspace containing `col(B)`.
pub fn controllability_rank(model: &JlsModel) -> SubspaceRank {
    invariant_closure(&model.b, &model.modes)
}

/// Dimension of the smallest subspace containing `row(C)` and invariant
/// under right multiplication by every mode.
pub fn observability_rank(model: &JlsModel) -> SubspaceRank {
    let transposed: Vec<Matrix> = model.modes.iter().map(Matrix::transpose).collect();
    invariant_closure(&model.c.transpose(), &transposed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDimEstimate {
    pub n: usize,
    pub rank: RankReport,
    /// The rank equals `k(k+1)/2` for a `k^2`-row `Y_O`: the output window
    /// is the bottleneck, so a larger `n` would look the same.
    pub window_limited: bool,
}

/// `n` with `n(n+1)/2 = rank(Y_O)`.
pub fn infer_state_dim(y: &Matrix, tol: f64) -> Result<StateDimEstimate> {
    let rank = numerical_rank(y, tol);
    let side = (y.nrows() as f64).sqrt().round() as usize;
    let window_limited =
        side * side == y.nrows() && rank.rank > 0 && rank.rank == side * (side + 1) / 2;
    if window_limited {
        log::warn!(
            "rank {} fills the output window; n may be larger",
            rank.rank
        );
    }
    let n = triangular_root(rank.rank).map_err(|(lower, upper)| JlsError::NotTriangular {
        rank: rank.rank,
        lower,
        upper,
    })?;
    Ok(StateDimEstimate {
        n,
        rank,
        window_limited,
    })
}

/// `Ok(n)` when `r = n(n+1)/2`, otherwise the two neighbouring triangular
/// numbers.
pub fn triangular_root(r: usize) -> std::result::Result<usize, (usize, usize)> {
    let mut n = ((((8 * r + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    while n * (n + 1) / 2 > r {
        n -= 1;
    }
    while (n + 1) * (n + 2) / 2 <= r {
        n += 1;
    }
    if n * (n + 1) / 2 == r {
        Ok(n)
    } else {
        Err((n * (n + 1) / 2, (n + 1) * (n + 2) / 2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub rank_c: usize,
    pub rank_b: usize,
    pub rank_h: usize,
    pub rank_c_sym: usize,
}

/// First horizon at which each column reaches its final value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Saturation {
    pub rank_c: usize,
    pub rank_b: usize,
    pub rank_h: usize,
    pub rank_c_sym: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationScan {
    pub rows: Vec<ScanRow>,
    pub saturation: Saturation,
    pub tolerance: f64,
}

pub const SCAN_CSV_HEADER: &str = "T,rank_C,rank_B,rank_H,rank_C_sym";

impl SaturationScan {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCAN_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.horizon, r.rank_c, r.rank_b, r.rank_h, r.rank_c_sym
            ));
        }
        out
    }
}

/// Ranks of `C_T`, `B_T`, `H_T = C_T B_T` and `C_T E_n` (the restriction to
/// the symmetric subspace) for `T = 1..=t_max`.
pub fn rank_saturation_scan(model: &JlsModel, t_max: usize, tol: f64) -> Result<SaturationScan> {
    model.ensure_valid()?;
    if t_max == 0 {
        return Err(JlsError::Dimension("T_max must be at least 1".into()));
    }
    let sym = symmetric_basis(model.n);
    let rows: Vec<ScanRow> = (1..=t_max)
        .into_par_iter()
        .map(|t| -> Result<ScanRow> {
            let c_t = oracle::expected_obs_kron(model, t)?;
            let b_t = oracle::expected_ctrl_kron(model, t)?;
            Ok(ScanRow {
                horizon: t,
                rank_c: numerical_rank(&c_t, tol).rank,
                rank_b: numerical_rank(&b_t, tol).rank,
                rank_h: numerical_rank(&(&c_t * &b_t), tol).rank,
                rank_c_sym: numerical_rank(&(&c_t * &sym), tol).rank,
            })
        })
        .collect::<Result<_>>()?;
    let first = |get: fn(&ScanRow) -> usize| {
        let last = get(rows.last().expect("t_max >= 1"));
        rows.iter()
            .find(|r| get(r) == last)
            .expect("last row matches")
            .horizon
    };
    let saturation = Saturation {
        rank_c: first(|r| r.rank_c),
        rank_b: first(|r| r.rank_b),
        rank_h: first(|r| r.rank_h),
        rank_c_sym: first(|r| r.rank_c_sym),
    };
    Ok(SaturationScan {
        rows,
        saturation,
        tolerance: tol,
    })
}

/// Symmetric-subspace ranks that must all reach `n(n+1)/2` for the
/// observation matrix to reveal `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumption4Report {
    pub pass: bool,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub required: usize,
    pub obs_sym_rank: usize,
    pub ctrl_sym_rank: usize,
    /// Same restriction for the excitation window's input-to-state map.
    pub reach_sym_rank: usize,
}

/// Necessary-condition check: `rank(C_T E_n)`, `rank(B_T E_pT)` and the
/// same for the reach operator are all at least `n(n+1)/2`.
pub fn assumption4_diagnostic(model: &JlsModel, t: usize) -> Result<Assumption4Report> {
    model.ensure_valid()?;
    let tol = numerics::DEFAULT_RANK_TOL;
    let required = model.n * (model.n + 1) / 2;
    let sym_in = symmetric_basis(model.p * t);
    let obs = oracle::expected_obs_kron(model, t)? * symmetric_basis(model.n);
    let ctrl = oracle::expected_ctrl_kron(model, t)? * &sym_in;
    let reach = oracle::expected_reach_kron(model, t)? * &sym_in;
    let obs_sym_rank = numerical_rank(&obs, tol).rank;
    let ctrl_sym_rank = numerical_rank(&ctrl, tol).rank;
    let reach_sym_rank = numerical_rank(&reach, tol).rank;
    Ok(Assumption4Report {
        pass: obs_sym_rank >= required && ctrl_sym_rank >= required && reach_sym_rank >= required,
        horizon: t,
        required,
        obs_sym_rank,
        ctrl_sym_rank,
        reach_sym_rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationReport {
    pub rank: usize,
    pub n: usize,
    pub tolerance: f64,
    pub singular_values: Vec<f64>,
    pub spectral_gap: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// First scanned horizon at which the symmetric rank of `C_T` settles.
    #[serde(rename = "T_star")]
    pub saturation_horizon: Option<usize>,
    pub r_b: Option<usize>,
    pub r_c: Option<usize>,
}

impl RealizationReport {
    /// Report for observations alone; model-derived fields stay empty.
    /// A window-limited rank is an error here since it bounds nothing.
    pub fn from_observations(y: &Matrix, horizon: usize, tol: f64) -> Result<Self> {
        let est = infer_state_dim(y, tol)?;
        if est.window_limited {
            let side = (y.nrows() as f64).sqrt().round() as usize;
            return Err(JlsError::HorizonTooShort {
                rank: est.rank.rank,
                capacity: side * (side + 1) / 2,
            });
        }
        Ok(Self {
            rank: est.rank.rank,
            n: est.n,
            tolerance: tol,
            spectral_gap: est.rank.spectral_gap(),
            singular_values: est.rank.singular_values,
            horizon,
            saturation_horizon: None,
            r_b: None,
            r_c: None,
        })
    }

    /// Adds the controllability/observability ranks and the saturation
    /// horizon over `1..=horizon`.
    pub fn with_model(mut self, model: &JlsModel) -> Result<Self> {
        let scan = rank_saturation_scan(model, self.horizon, self.tolerance)?;
        self.saturation_horizon = Some(scan.saturation.rank_c_sym);
        self.r_b = Some(controllability_rank(model).rank);
        self.r_c = Some(observability_rank(model).rank);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{exact_observations, standard_basis};
    use crate::fixtures;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn kalman_ctrl(a: &Matrix, b: &Matrix) -> usize {
        let n = a.nrows();
        let mut blocks = Vec::new();
        let mut cur = b.clone();
        for _ in 0..n {
            blocks.push(cur.clone());
            cur = a * cur;
        }
        let cols: usize = blocks.iter().map(|m| m.ncols()).sum();
        let mut k = Matrix::zeros(n, cols);
        let mut at = 0;
        for m in &blocks {
            k.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        numerical_rank(&k, 1e-9).rank
    }

    #[test]
    fn example2_ranks() {
        let model = fixtures::example2();
        assert_eq!(controllability_rank(&model).rank, 3);
        assert_eq!(observability_rank(&model).rank, 3);
    }

    #[test]
    fn zero_b_and_c() {
        let mut model = fixtures::example2();
        model.b = Matrix::zeros(3, 1);
        model.c = Matrix::zeros(1, 3);
        assert_eq!(controllability_rank(&model).rank, 0);
        assert_eq!(observability_rank(&model).rank, 0);
    }

    #[test]
    fn lti_matches_kalman() {
        let model = fixtures::lti2();
        assert_eq!(controllability_rank(&model).rank, 2);
        assert_eq!(observability_rank(&model).rank, 2);
        let mut a = Matrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 2)] = 1.0;
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let model = JlsModel::new(vec![a], b, c, vec![1.0]).unwrap();
        assert_eq!(controllability_rank(&model).rank, 3);
        assert_eq!(observability_rank(&model).rank, 3);
    }

    #[test]
    fn dimensions_are_nondecreasing_and_bounded() {
        for seed in 0..20 {
            let model = fixtures::random_model(4, 2, 1, 1, seed, 0.9);
            let r = controllability_rank(&model);
            assert!(r.dimensions.windows(2).all(|w| w[0] <= w[1]));
            assert!(r.dimensions.len() <= model.n + 1);
        }
    }

    #[test]
    fn triangular_numbers() {
        assert_eq!(triangular_root(6), Ok(3));
        assert_eq!(triangular_root(1), Ok(1));
        assert_eq!(triangular_root(0), Ok(0));
        assert_eq!(triangular_root(5), Err((3, 6)));
        assert_eq!(triangular_root(2), Err((1, 3)));
        for n in 0..200usize {
            assert_eq!(triangular_root(n * (n + 1) / 2), Ok(n));
        }
    }

    #[test]
    fn infer_rejects_non_triangular() {
        let mut y = Matrix::zeros(16, 6);
        for i in 0..5 {
            y[(i, i)] = 1.0;
        }
        match infer_state_dim(&y, 1e-9) {
            Err(JlsError::NotTriangular { rank, lower, upper }) => {
                assert_eq!((rank, lower, upper), (5, 3, 6));
            }
            other => panic!("unexpected {other:?}"),
        }
        y[(5, 5)] = 1.0;
        assert_eq!(infer_state_dim(&y, 1e-9).unwrap().n, 3);
    }

    #[test]
    fn scan_examples() {
        let lti = rank_saturation_scan(&fixtures::lti2(), 6, 1e-9).unwrap();
        assert_eq!(lti.rows.last().unwrap().rank_c_sym, 3);
        assert!(lti.saturation.rank_c_sym <= 5);

        let scalar = rank_saturation_scan(&fixtures::scalar(3), 3, 1e-9).unwrap();
        for r in &scalar.rows {
            assert_eq!((r.rank_c, r.rank_b, r.rank_h, r.rank_c_sym), (1, 1, 1, 1));
        }
        assert_eq!(scalar.saturation.rank_c_sym, 1);

        let ex2 = rank_saturation_scan(&fixtures::example2(), 12, 1e-9).unwrap();
        assert!(ex2.saturation.rank_c_sym <= 11);
        assert!(ex2.rows[10..].iter().all(|r| r.rank_c_sym == 6));
        assert!(ex2
            .rows
            .windows(2)
            .all(|w| w[0].rank_c_sym <= w[1].rank_c_sym));

        let csv = lti.to_csv();
        assert!(csv.starts_with("T,rank_C,rank_B,rank_H,rank_C_sym\n1,"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn assumption4_examples() {
        let r = assumption4_diagnostic(&fixtures::example2(), 11).unwrap();
        assert!(r.pass);
        assert_eq!(r.obs_sym_rank, 6);

        let mut blind = fixtures::example2();
        blind.c = Matrix::zeros(1, 3);
        let r = assumption4_diagnostic(&blind, 4).unwrap();
        assert!(!r.pass);
        assert_eq!(r.obs_sym_rank, 0);

        // C only sees the first state of a diagonal system.
        let a = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.3]));
        let model = JlsModel::new(
            vec![a],
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            vec![1.0],
        )
        .unwrap();
        let r = assumption4_diagnostic(&model, 5).unwrap();
        assert!(!r.pass);
        assert!(r.obs_sym_rank < 3);
    }

    #[test]
    fn infer_on_exact_observations() {
        for (model, expect) in [(fixtures::example2(), 3), (fixtures::lti2(), 2)] {
            let n = model.n;
            let t = n * n + n - 1;
            assert!(assumption4_diagnostic(&model, t).unwrap().pass);
            let obs = exact_observations(&model, &standard_basis(model.p, t).unwrap()).unwrap();
            let report = RealizationReport::from_observations(&obs.y, t, 1e-9)
                .unwrap()
                .with_model(&model)
                .unwrap();
            assert_eq!(report.n, expect);
            assert_eq!(report.rank, expect * (expect + 1) / 2);
            assert!(report.spectral_gap >= 1e3);
            assert_eq!(report.r_b, Some(expect));
        }
    }

    #[test]
    fn undersized_horizon_fails_for_example2() {
        let model = fixtures::example2();
        let obs = exact_observations(&model, &standard_basis(1, 1).unwrap()).unwrap();
        let est = infer_state_dim(&obs.y, 1e-9).unwrap();
        assert!(est.window_limited);
        assert!(matches!(
            RealizationReport::from_observations(&obs.y, 1, 1e-9),
            Err(JlsError::HorizonTooShort {
                rank: 1,
                capacity: 1
            })
        ));
        // saturated at T = 3 but exactly at the window size
        let obs = exact_observations(&model, &standard_basis(1, 3).unwrap()).unwrap();
        let est = infer_state_dim(&obs.y, 1e-9).unwrap();
        assert_eq!(est.n, 3);
        assert!(est.window_limited);
        let obs = exact_observations(&model, &standard_basis(1, 4).unwrap()).unwrap();
        assert!(!infer_state_dim(&obs.y, 1e-9).unwrap().window_limited);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ranks_survive_similarity(seed in 0u64..1000, n in 2usize..5, s in 1usize..4) {
            let model = fixtures::random_model(n, s, 1, 1, seed, 0.9);
            // well-conditioned: identity plus a small perturbation
            let pert = fixtures::random_model(n, 1, 1, 1, seed + 7, 0.3).modes[0].clone();
            let z = Matrix::identity(n, n) + pert;
            let zi = z.clone().try_inverse().unwrap();
            let moved = JlsModel::new(
                model.modes.iter().map(|a| &z * a * &zi).collect(),
                &z * &model.b,
                &model.c * &zi,
                model.probs.clone(),
            ).unwrap();
            prop_assert_eq!(controllability_rank(&model).rank, controllability_rank(&moved).rank);
            prop_assert_eq!(observability_rank(&model).rank, observability_rank(&moved).rank);
        }

        #[test]
        fn single_mode_matches_kalman(seed in 0u64..1000, n in 1usize..5) {
            let mut model = fixtures::random_model(n, 1, 1, 1, seed, 0.9);
            // make some instances uncontrollable
            if seed % 3 == 0 && n > 1 {
                model.modes[0] = Matrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| 0.1 * (i + 1) as f64));
                model.b = Matrix::zeros(n, 1);
                model.b[(0, 0)] = 1.0;
            }
            prop_assert_eq!(controllability_rank(&model).rank, kalman_ctrl(&model.modes[0], &model.b));
            prop_assert_eq!(
                observability_rank(&model).rank,
                kalman_ctrl(&model.modes[0].transpose(), &model.c.transpose())
            );
        }
    }
}
