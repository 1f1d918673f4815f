//! Ensemble excitation: drive `N` independent copies with each basis input
//! for `T` steps, then record the free response.
//!
//! For basis input `v_j` and copy `m` the copy runs `2T` steps with
//! `u = Pi(v_j)`; `Yhat = [y_T; ..; y_{2T-1}]` and
//! `Yhat+ = [y_{T+1}; ..; y_{2T}]`. Column `j` of `Y_O` is the average of
//! `vec(Yhat Yhat^T) = Yhat (x) Yhat` over copies, and likewise for `Y_O+`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JlsError, Result};
use crate::model::{self, matrix_to_rows, JlsModel};
use crate::numerics::{self, kron, Matrix, Vector};
use crate::oracle;
use crate::rng;

/// Base inputs `v_1..v_{pT}` and their polarization extension
/// `v_i`, `v_i + v_j`, `v_i - v_j` for `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBasis {
    pub p: usize,
    pub horizon: usize,
    pub base: Vec<Vector>,
    pub extended: Vec<Vector>,
}

impl InputBasis {
    /// Extends any set of `pT` linearly independent vectors.
    pub fn from_base(p: usize, horizon: usize, base: Vec<Vector>) -> Result<Self> {
        let dim = p * horizon;
        if dim == 0 {
            return Err(JlsError::Dimension("p and T must be at least 1".into()));
        }
        if base.len() != dim || base.iter().any(|v| v.len() != dim) {
            return Err(JlsError::Dimension(format!(
                "basis needs {dim} vectors of length {dim}"
            )));
        }
        let stacked = Matrix::from_columns(&base);
        let rank = numerics::numerical_rank(&stacked, numerics::DEFAULT_RANK_TOL).rank;
        if rank != dim {
            return Err(JlsError::RankDeficient(format!(
                "input basis spans {rank} of {dim} dimensions"
            )));
        }
        let mut extended = base.clone();
        for i in 0..dim {
            for j in (i + 1)..dim {
                extended.push(&base[i] + &base[j]);
                extended.push(&base[i] - &base[j]);
            }
        }
        Ok(Self {
            p,
            horizon,
            base,
            extended,
        })
    }

    /// Number of extended inputs, `(pT)^2`.
    pub fn d(&self) -> usize {
        self.extended.len()
    }

    pub fn dim(&self) -> usize {
        self.p * self.horizon
    }

    /// `V = [v_1 (x) v_1, .., v_d (x) v_d]`, `(pT)^2 x d`.
    pub fn kron_matrix(&self) -> Matrix {
        let dim = self.dim();
        let mut out = Matrix::zeros(dim * dim, self.d());
        for (j, v) in self.extended.iter().enumerate() {
            let col = kron(
                &Matrix::from_column_slice(dim, 1, v.as_slice()),
                &Matrix::from_column_slice(dim, 1, v.as_slice()),
            );
            out.set_column(j, &col.column(0));
        }
        out
    }
}

/// Coordinate basis `e_1..e_{pT}` with its extension.
pub fn standard_basis(p: usize, horizon: usize) -> Result<InputBasis> {
    let dim = p * horizon;
    let base = (0..dim)
        .map(|i| {
            let mut e = Vector::zeros(dim);
            e[i] = 1.0;
            e
        })
        .collect();
    InputBasis::from_base(p, horizon, base)
}

/// A finitely supported input signal: `u_k` for `k < T`, zero afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub blocks: Vec<Vector>,
    p: usize,
}

impl InputSignal {
    pub fn at(&self, k: usize) -> Vector {
        self.blocks
            .get(k)
            .cloned()
            .unwrap_or_else(|| Vector::zeros(self.p))
    }

    pub fn support(&self) -> usize {
        self.blocks.len()
    }
}

/// Splits `v` into `p`-blocks `u_0..u_{T-1}` in order.
pub fn embed_input(v: &Vector, p: usize, horizon: usize) -> Result<InputSignal> {
    if p == 0 || v.len() != p * horizon {
        return Err(JlsError::Dimension(format!(
            "input vector has length {}, expected p*T = {}",
            v.len(),
            p * horizon
        )));
    }
    let blocks = (0..horizon)
        .map(|k| v.rows(k * p, p).into_owned())
        .collect();
    Ok(InputSignal { blocks, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationMode {
    MonteCarlo,
    Exact,
}

impl std::fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MonteCarlo => "monte-carlo",
            Self::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Copies per input; absent in exact mode.
    #[serde(rename = "N")]
    pub copies: Option<usize>,
    pub d: usize,
    pub seed: Option<u64>,
    pub mode: ObservationMode,
    pub m: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPair {
    pub meta: ObservationMeta,
    /// `(mT)^2 x d`
    pub y: Matrix,
    /// `(mT)^2 x d`
    pub y_plus: Matrix,
}

/// Monte Carlo observation matrices with `copies` independent copies per
/// basis input. Copy `m` of input `j` draws its `2T` switches from stream
/// [`rng::excitation_stream`]`(j, m)`; inputs are processed in parallel and
/// each column is summed in copy order, so output is bit-reproducible.
pub fn collect_observations(
    model: &JlsModel,
    basis: &InputBasis,
    copies: usize,
    seed: u64,
) -> Result<ObservationPair> {
    model.ensure_valid()?;
    check_basis(model, basis)?;
    if copies == 0 {
        return Err(JlsError::Dimension("N must be at least 1".into()));
    }
    let stability = model::mean_square_stable(model)?;
    if !stability.stable {
        log::warn!(
            "model is not mean-square stable (rho(S) = {}); Monte Carlo averages may not settle",
            stability.spectral_radius
        );
    }
    let t = basis.horizon;
    let rows = (model.m * t).pow(2);
    let columns: Vec<(Vector, Vector)> = basis
        .extended
        .par_iter()
        .enumerate()
        .map(|(j, v)| -> Result<(Vector, Vector)> {
            let signal = embed_input(v, basis.p, t)?;
            let mut acc = Vector::zeros(rows);
            let mut acc_plus = Vector::zeros(rows);
            for m in 0..copies {
                let switches =
                    model::draw_switches(&model.probs, 2 * t, seed, rng::excitation_stream(j, m));
                let traj = model::simulate_with_switches(model, &switches, &signal.blocks)?;
                // outputs[k] holds y_{k+1}
                let window = stack(&traj.outputs[t - 1..2 * t - 1]);
                let window_plus = stack(&traj.outputs[t..2 * t]);
                acc += kron_vec(&window);
                acc_plus += kron_vec(&window_plus);
            }
            Ok((acc / copies as f64, acc_plus / copies as f64))
        })
        .collect::<Result<_>>()?;
    let mut y = Matrix::zeros(rows, basis.d());
    let mut y_plus = Matrix::zeros(rows, basis.d());
    for (j, (col, col_plus)) in columns.into_iter().enumerate() {
        y.set_column(j, &col);
        y_plus.set_column(j, &col_plus);
    }
    Ok(ObservationPair {
        meta: ObservationMeta {
            horizon: t,
            copies: Some(copies),
            d: basis.d(),
            seed: Some(seed),
            mode: ObservationMode::MonteCarlo,
            m: model.m,
            p: model.p,
        },
        y,
        y_plus,
    })
}

/// Infinite-ensemble limit: `Y_O = C_T R_T V` and `Y_O+ = C_T S R_T V`.
pub fn exact_observations(model: &JlsModel, basis: &InputBasis) -> Result<ObservationPair> {
    model.ensure_valid()?;
    check_basis(model, basis)?;
    let t = basis.horizon;
    let obs = oracle::expected_obs_kron(model, t)?;
    let state = oracle::expected_reach_kron(model, t)? * basis.kron_matrix();
    let s = oracle::second_moment(model);
    Ok(ObservationPair {
        meta: ObservationMeta {
            horizon: t,
            copies: None,
            d: basis.d(),
            seed: None,
            mode: ObservationMode::Exact,
            m: model.m,
            p: model.p,
        },
        y: &obs * &state,
        y_plus: &obs * (s * &state),
    })
}

fn check_basis(model: &JlsModel, basis: &InputBasis) -> Result<()> {
    if basis.p != model.p {
        return Err(JlsError::Dimension(format!(
            "basis built for p = {} but model has p = {}",
            basis.p, model.p
        )));
    }
    Ok(())
}

fn stack(outputs: &[Vector]) -> Vector {
    Vector::from_iterator(
        outputs.iter().map(|y| y.len()).sum(),
        outputs.iter().flat_map(|y| y.iter().copied()),
    )
}

fn kron_vec(v: &Vector) -> Vector {
    let n = v.len();
    Vector::from_fn(n * n, |i, _| v[i / n] * v[i % n])
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    metadata: ObservationMeta,
    #[serde(rename = "Y_O")]
    y: Vec<Vec<f64>>,
    #[serde(rename = "Y_O_plus")]
    y_plus: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(JlsError::Parse(format!("{what} has ragged rows")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(JlsError::NonFinite(what.into()));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl ObservationPair {
    fn check_shapes(&self) -> Result<()> {
        let rows = (self.meta.m * self.meta.horizon).pow(2);
        for (name, mat) in [("Y_O", &self.y), ("Y_O_plus", &self.y_plus)] {
            if mat.shape() != (rows, self.meta.d) {
                return Err(JlsError::Dimension(format!(
                    "{name} is {}x{}, metadata implies {rows}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    self.meta.d
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile {
            metadata: self.meta.clone(),
            y: matrix_to_rows(&self.y),
            y_plus: matrix_to_rows(&self.y_plus),
        };
        crate::format::to_json(&file, false)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BundleFile = serde_json::from_str(text)?;
        let pair = Self {
            y: rows_to_matrix(&file.y, "Y_O")?,
            y_plus: rows_to_matrix(&file.y_plus, "Y_O_plus")?,
            meta: file.metadata,
        };
        pair.check_shapes()?;
        Ok(pair)
    }

    /// Long-format CSV: a metadata header line and its values, then one
    /// `matrix,row,col,value` record per entry.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut out = String::from("T,N,d,seed,mode,m,p\n");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            self.meta.horizon,
            opt(self.meta.copies.map(|n| n.to_string())),
            self.meta.d,
            opt(self.meta.seed.map(|s| s.to_string())),
            self.meta.mode,
            self.meta.m,
            self.meta.p
        ));
        out.push_str("matrix,row,col,value\n");
        for (name, mat) in [("Y_O", &self.y), ("Y_O_plus", &self.y_plus)] {
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    out.push_str(&format!(
                        "{name},{r},{c},{}\n",
                        crate::format::fmt17(mat[(r, c)])
                    ));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| JlsError::Parse(format!("observation CSV: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("T,N,d,seed,mode,m,p") {
            return Err(bad("missing metadata header"));
        }
        let values: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("missing metadata"))?
            .split(',')
            .collect();
        if values.len() != 7 {
            return Err(bad("metadata needs 7 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let opt = |s: &str| -> Result<Option<u64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad integer"))
            }
        };
        let mode = match values[4] {
            "monte-carlo" => ObservationMode::MonteCarlo,
            "exact" => ObservationMode::Exact,
            _ => return Err(bad("unknown mode")),
        };
        let meta = ObservationMeta {
            horizon: num(values[0])?,
            copies: opt(values[1])?.map(|n| n as usize),
            d: num(values[2])?,
            seed: opt(values[3])?,
            mode,
            m: num(values[5])?,
            p: num(values[6])?,
        };
        if lines.next() != Some("matrix,row,col,value") {
            return Err(bad("missing entry header"));
        }
        let rows = (meta.m * meta.horizon).pow(2);
        let mut y = Matrix::zeros(rows, meta.d);
        let mut y_plus = Matrix::zeros(rows, meta.d);
        let mut seen = 0usize;
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad("entry needs 4 fields"));
            }
            let (r, c) = (num(f[1])?, num(f[2])?);
            let value: f64 = f[3].parse().map_err(|_| bad("bad float"))?;
            if !value.is_finite() {
                return Err(JlsError::NonFinite(f[0].into()));
            }
            let target = match f[0] {
                "Y_O" => &mut y,
                "Y_O_plus" => &mut y_plus,
                _ => return Err(bad("unknown matrix name")),
            };
            if r >= rows || c >= meta.d {
                return Err(bad("entry index out of range"));
            }
            target[(r, c)] = value;
            seen += 1;
        }
        if seen != 2 * rows * meta.d {
            return Err(bad("wrong number of entries"));
        }
        Ok(Self { meta, y, y_plus })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }
}
