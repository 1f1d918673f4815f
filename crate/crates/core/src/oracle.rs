//! Exact expectation operators over i.i.d. switch sequences.
//!
//! For a horizon `T` every stacked operator uses `T` blocks, indexed by the
//! length `0..T-1` of the mode product they carry:
//!
//! * `C_mu = [C; C A_{mu_1}; ...; C A_{mu_{T-1}} .. A_{mu_1}]`  (`mT x n`)
//! * `B_sigma = [B, A_{sigma_1} B, ..., A_{sigma_{T-1}} .. A_{sigma_1} B]`  (`n x pT`)
//! * `R_sigma`, the input-to-state map of an excitation window: column
//!   block `k` (input `u_k`) is `A_{sigma_{T-1}} .. A_{sigma_{k+1}} B`.
//!
//! `B_sigma` products share their innermost factor while `R_sigma` products
//! share their outermost one, so `E[B (x) B]` and `E[R (x) R]` only coincide
//! when the mean matrix commutes with every mode. The excitation experiment
//! observes `R`, so observation matrices are built from [`expected_reach_kron`].
//!
//! Closed forms use `M = sum p_i A_i` and `S = sum p_i A_i (x) A_i`, with all
//! powers taken by repeated multiplication. [`brute_force_expectation`]
//! enumerates sequences and is the independent check for all of them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{JlsError, Result};
use crate::model::{JlsModel, SwitchSequence};
use crate::numerics::{kron, matrix_powers, Matrix};

/// Default limit on weighted terms in [`brute_force_expectation`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

pub fn mean_matrix(model: &JlsModel) -> Matrix {
    model
        .modes
        .iter()
        .zip(&model.probs)
        .fold(Matrix::zeros(model.n, model.n), |acc, (a, &q)| acc + a * q)
}

pub fn second_moment(model: &JlsModel) -> Matrix {
    let n2 = model.n * model.n;
    model
        .modes
        .iter()
        .zip(&model.probs)
        .fold(Matrix::zeros(n2, n2), |acc, (a, &q)| acc + kron(a, a) * q)
}

/// Writes an `m^2 x cols` block `(j, k)` of `E[X (x) X]` for a stacked `X`
/// with `rows_per_block = m` into its interleaved Kronecker rows.
fn place_row_block(out: &mut Matrix, block: &Matrix, j: usize, k: usize, m: usize, t: usize) {
    for a in 0..m {
        for b in 0..m {
            let row = (j * m + a) * (m * t) + k * m + b;
            out.row_mut(row).copy_from(&block.row(a * m + b));
        }
    }
}

fn place_col_block(out: &mut Matrix, block: &Matrix, j: usize, k: usize, p: usize, t: usize) {
    for x in 0..p {
        for y in 0..p {
            let col = (j * p + x) * (p * t) + k * p + y;
            out.column_mut(col).copy_from(&block.column(x * p + y));
        }
    }
}

fn check_horizon(t: usize) -> Result<()> {
    if t == 0 {
        Err(JlsError::Dimension("horizon T must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// `C_T = E[C_mu (x) C_mu]`, an `m^2 T^2 x n^2` matrix.
pub fn expected_obs_kron(model: &JlsModel, t: usize) -> Result<Matrix> {
    check_horizon(t)?;
    let (n, m) = (model.n, model.m);
    let mp = matrix_powers(&mean_matrix(model), t);
    let sp = matrix_powers(&second_moment(model), t);
    let c = &model.c;
    let mut out = Matrix::zeros(m * m * t * t, n * n);
    for j in 0..t {
        for k in 0..t {
            let block = if j >= k {
                kron(&(c * &mp[j - k]), c) * &sp[k]
            } else {
                kron(c, &(c * &mp[k - j])) * &sp[j]
            };
            place_row_block(&mut out, &block, j, k, m, t);
        }
    }
    Ok(out)
}

/// `B_T = E[B_sigma (x) B_sigma]`, an `n^2 x p^2 T^2` matrix.
pub fn expected_ctrl_kron(model: &JlsModel, t: usize) -> Result<Matrix> {
    check_horizon(t)?;
    let (n, p) = (model.n, model.p);
    let mp = matrix_powers(&mean_matrix(model), t);
    let sp = matrix_powers(&second_moment(model), t);
    let bb = kron(&model.b, &model.b);
    let eye = Matrix::identity(n, n);
    let mut out = Matrix::zeros(n * n, p * p * t * t);
    for j in 0..t {
        for k in 0..t {
            let block = if k >= j {
                kron(&eye, &mp[k - j]) * &sp[j] * &bb
            } else {
                kron(&mp[j - k], &eye) * &sp[k] * &bb
            };
            place_col_block(&mut out, &block, j, k, p, t);
        }
    }
    Ok(out)
}

/// `R_T = E[R_sigma (x) R_sigma]`, the second moment of the excitation
/// window's input-to-state map, `n^2 x p^2 T^2`.
pub fn expected_reach_kron(model: &JlsModel, t: usize) -> Result<Matrix> {
    check_horizon(t)?;
    let (n, p) = (model.n, model.p);
    let mp = matrix_powers(&mean_matrix(model), t);
    let sp = matrix_powers(&second_moment(model), t);
    let bb = kron(&model.b, &model.b);
    let eye = Matrix::identity(n, n);
    let mut out = Matrix::zeros(n * n, p * p * t * t);
    for j in 0..t {
        for k in 0..t {
            // product lengths carried by inputs u_j and u_k
            let (a, b) = (t - 1 - j, t - 1 - k);
            let block = if a <= b {
                &sp[a] * kron(&eye, &mp[b - a]) * &bb
            } else {
                &sp[b] * kron(&mp[a - b], &eye) * &bb
            };
            place_col_block(&mut out, &block, j, k, p, t);
        }
    }
    Ok(out)
}

/// `H_T = C_T B_T = E[H_{mu,sigma} (x) H_{mu,sigma}]` with `H = C_mu B_sigma`.
pub fn expected_hankel_kron(model: &JlsModel, t: usize) -> Result<Matrix> {
    Ok(expected_obs_kron(model, t)? * expected_ctrl_kron(model, t)?)
}

/// The closed-form operators for one horizon.
#[derive(Debug, Clone, Serialize)]
pub struct ExpectationOperators {
    pub horizon: usize,
    #[serde(skip)]
    pub mean: Matrix,
    #[serde(skip)]
    pub second_moment: Matrix,
    #[serde(skip)]
    pub obs: Matrix,
    #[serde(skip)]
    pub ctrl: Matrix,
    #[serde(skip)]
    pub reach: Matrix,
    #[serde(skip)]
    pub hankel: Matrix,
}

impl ExpectationOperators {
    pub fn new(model: &JlsModel, t: usize) -> Result<Self> {
        let obs = expected_obs_kron(model, t)?;
        let ctrl = expected_ctrl_kron(model, t)?;
        let hankel = &obs * &ctrl;
        Ok(Self {
            horizon: t,
            mean: mean_matrix(model),
            second_moment: second_moment(model),
            reach: expected_reach_kron(model, t)?,
            obs,
            ctrl,
            hankel,
        })
    }
}

/// `C_mu`: stacked `C A_{mu_j} .. A_{mu_1}` for product lengths `0..T-1`.
pub fn obs_stack(model: &JlsModel, mu: &[usize], t: usize) -> Matrix {
    let (n, m) = (model.n, model.m);
    let mut out = Matrix::zeros(m * t, n);
    let mut prod = Matrix::identity(n, n);
    for j in 0..t {
        if j > 0 {
            prod = &model.modes[mu[j - 1]] * prod;
        }
        out.view_mut((j * m, 0), (m, n))
            .copy_from(&(&model.c * &prod));
    }
    out
}

/// `B_sigma`: `[B, A_{sigma_1} B, ..]` for product lengths `0..T-1`.
pub fn ctrl_stack(model: &JlsModel, sigma: &[usize], t: usize) -> Matrix {
    let (n, p) = (model.n, model.p);
    let mut out = Matrix::zeros(n, p * t);
    let mut block = model.b.clone();
    for j in 0..t {
        if j > 0 {
            block = &model.modes[sigma[j - 1]] * block;
        }
        out.view_mut((0, j * p), (n, p)).copy_from(&block);
    }
    out
}

/// `R_sigma`: maps stacked inputs `u_0..u_{T-1}` to `x_T` when `sigma[k]`
/// is the switch `theta(k)` applied at step `k`. `sigma[0]` has no effect
/// because `x_0 = 0`.
pub fn reach_stack(model: &JlsModel, sigma: &[usize], t: usize) -> Matrix {
    let (n, p) = (model.n, model.p);
    let mut out = Matrix::zeros(n, p * t);
    // prod = A_{sigma[t-1]} .. A_{sigma[k+1]}, grown on the right
    let mut prod = Matrix::identity(n, n);
    for k in (0..t).rev() {
        if k + 1 < t {
            prod *= &model.modes[sigma[k + 1]];
        }
        out.view_mut((0, k * p), (n, p))
            .copy_from(&(&prod * &model.b));
    }
    out
}

/// Hankel map of one copy: stacked inputs `u_0..u_{T-1}` to stacked outputs
/// `y_T..y_{2T-1}`, where the copy runs the switches `sigma` followed by
/// `mu` (so `theta(k) = sigma[k]` for `k < T` and `theta(T + j) = mu[j]`).
pub fn hankel_for_copy(
    model: &JlsModel,
    mu: &SwitchSequence,
    sigma: &SwitchSequence,
    t: usize,
) -> Result<Matrix> {
    check_horizon(t)?;
    if mu.len() < t || sigma.len() < t {
        return Err(JlsError::Dimension(format!(
            "copy sequences of length {} and {} are shorter than T = {t}",
            mu.len(),
            sigma.len()
        )));
    }
    mu.check_range(model.s())?;
    sigma.check_range(model.s())?;
    Ok(obs_stack(model, mu.as_slice(), t) * reach_stack(model, sigma.as_slice(), t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `E[C_mu (x) C_mu]`
    Obs,
    /// `E[B_sigma (x) B_sigma]`
    Ctrl,
    /// `E[R_sigma (x) R_sigma]`
    Reach,
    /// `E[H (x) H]` with `H = C_mu B_sigma`, over independent `mu`, `sigma`.
    Hankel,
}

/// Iterates `[s]^len` in lexicographic order, first entry most significant.
fn decode_sequence(mut index: u128, s: usize, len: usize) -> (Vec<usize>, u128) {
    let mut seq = vec![0; len];
    for slot in seq.iter_mut().rev() {
        *slot = (index % s as u128) as usize;
        index /= s as u128;
    }
    (seq, index)
}

fn sequence_weight(probs: &[f64], seq: &[usize]) -> f64 {
    seq.iter().map(|&i| probs[i]).product()
}

/// Probability-weighted sum over every sequence in `[s]^T` (pairs of
/// sequences for [`Target::Hankel`]), built directly from the per-sequence
/// stacks. Terms are summed in fixed chunks in enumeration order and the
/// chunk sums are reduced pairwise, so the result does not depend on thread
/// scheduling.
pub fn brute_force_expectation(
    model: &JlsModel,
    t: usize,
    target: Target,
    cap: u128,
) -> Result<Matrix> {
    check_horizon(t)?;
    let s = model.s();
    let per_sequence = (s as u128).checked_pow(t as u32).unwrap_or(u128::MAX);
    let terms = match target {
        Target::Hankel => per_sequence.saturating_mul(per_sequence),
        _ => per_sequence,
    };
    if terms > cap {
        return Err(JlsError::EnumerationCap { terms, cap });
    }
    let (n, m, p) = (model.n, model.m, model.p);
    let shape = match target {
        Target::Obs => (m * m * t * t, n * n),
        Target::Ctrl | Target::Reach => (n * n, p * p * t * t),
        Target::Hankel => (m * m * t * t, p * p * t * t),
    };
    let term = |index: u128| -> Matrix {
        match target {
            Target::Obs | Target::Ctrl | Target::Reach => {
                let (seq, _) = decode_sequence(index, s, t);
                let stack = match target {
                    Target::Obs => obs_stack(model, &seq, t),
                    Target::Ctrl => ctrl_stack(model, &seq, t),
                    _ => reach_stack(model, &seq, t),
                };
                kron(&stack, &stack) * sequence_weight(&model.probs, &seq)
            }
            Target::Hankel => {
                let (sigma, _) = decode_sequence(index % per_sequence, s, t);
                let (mu, _) = decode_sequence(index / per_sequence, s, t);
                let h = obs_stack(model, &mu, t) * ctrl_stack(model, &sigma, t);
                let w = sequence_weight(&model.probs, &mu) * sequence_weight(&model.probs, &sigma);
                kron(&h, &h) * w
            }
        }
    };
    const CHUNK: u128 = 256;
    let chunks = terms.div_ceil(CHUNK);
    let partial: Vec<Matrix> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let start = c as u128 * CHUNK;
            let end = (start + CHUNK).min(terms);
            (start..end).fold(Matrix::zeros(shape.0, shape.1), |acc, i| acc + term(i))
        })
        .collect();
    Ok(pairwise_sum(partial, shape))
}

fn pairwise_sum(mut parts: Vec<Matrix>, shape: (usize, usize)) -> Matrix {
    if parts.is_empty() {
        return Matrix::zeros(shape.0, shape.1);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("non-empty")
}
