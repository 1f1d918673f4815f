//! Reference models: the two worked examples from the jump linear system
//! literature this crate reproduces, an LTI system, and seeded random
//! models.

use rand::Rng;

use crate::model::JlsModel;
use crate::numerics::Matrix;
use crate::rng;

/// Two modes on `R^3`: the identity and a cyclic shift, `B = e_1`,
/// `C = e_1^T`, equal probabilities. Weakly controllable and observable
/// (both ranks 3) but not mean-square stable as written.
pub fn example2() -> JlsModel {
    let a1 = Matrix::identity(3, 3);
    let a2 = Matrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    JlsModel::new(
        vec![a1, a2],
        Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        vec![0.5, 0.5],
    )
    .expect("fixture is valid")
}

/// Four modes on `R^3` with `A_4 = A_1 + A_2 + A_3`, so only three modes
/// are needed. `B = 1`, `C = 1^T`, uniform probabilities.
pub fn example3() -> JlsModel {
    let a1 = Matrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
    let a2 = Matrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let a3 = Matrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let a4 = Matrix::identity(3, 3);
    JlsModel::new(
        vec![a1, a2, a3, a4],
        Matrix::from_element(3, 1, 1.0),
        Matrix::from_element(1, 3, 1.0),
        vec![0.25; 4],
    )
    .expect("fixture is valid")
}

/// Single-mode, controllable and observable system with `n = 2`.
pub fn lti2() -> JlsModel {
    JlsModel::new(
        vec![Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.3])],
        Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
        Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        vec![1.0],
    )
    .expect("fixture is valid")
}

/// Scalar system (`n = 1`) with `s` modes.
pub fn scalar(s: usize) -> JlsModel {
    let modes = (0..s)
        .map(|i| Matrix::from_element(1, 1, 0.2 + 0.15 * i as f64))
        .collect();
    JlsModel::new(
        modes,
        Matrix::from_element(1, 1, 1.0),
        Matrix::from_element(1, 1, 1.0),
        vec![1.0 / s as f64; s],
    )
    .expect("fixture is valid")
}

/// Seeded random model. Each mode has spectral norm `scale`, so for
/// `scale < 1` the model is mean-square stable. Probabilities are drawn
/// from `[0.2, 1)` and normalized.
pub fn random_model(n: usize, s: usize, m: usize, p: usize, seed: u64, scale: f64) -> JlsModel {
    let mut rng = rng::substream(seed, 0x5eed);
    let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let modes: Vec<Matrix> = (0..s)
        .map(|_| {
            let g = draw(n, n);
            let norm = g.clone().svd(false, false).singular_values.max();
            g * (scale / norm)
        })
        .collect();
    let b = draw(n, p);
    let c = draw(m, n);
    let weights: Vec<f64> = (0..s).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // absorb rounding so the sum is 1 to within an ulp or two
    let head: f64 = probs[..s - 1].iter().sum();
    probs[s - 1] = 1.0 - head;
    JlsModel::new(modes, b, c, probs).expect("random model is valid")
}
