//! Jump linear system model, simulation under i.i.d. switching, and model
//! level diagnostics.
//!
//! ```text
//! x_{k+1} = A[theta(k)] x_k + B u_k,    y_k = C x_k,    x_0 = 0
//! ```
//!
//! Mode indices are 0-based in memory. Files and the command line use
//! 1-based indices; [`SwitchSequence::from_one_based`] and
//! [`SwitchSequence::to_one_based`] are the only conversion points.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{JlsError, Result};
use crate::numerics::{self, Matrix, RankReport, Vector};
use crate::oracle;
use crate::rng::{self, ModeSampler};

/// Tolerance on `sum(probs) == 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Margin used by [`mean_square_stable`]: stable iff `rho(S) < 1 - tol`.
pub const STABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JlsModel {
    /// State dimension `n`.
    pub n: usize,
    /// Output dimension `m`.
    pub m: usize,
    /// Input dimension `p`.
    pub p: usize,
    /// Mode matrices `A_1 .. A_s`, each `n x n`.
    pub modes: Vec<Matrix>,
    /// Input matrix, `n x p`.
    pub b: Matrix,
    /// Output matrix, `m x n`.
    pub c: Matrix,
    /// Switching probabilities, one per mode.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// On-disk model layout: matrices are row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub s: usize,
    pub modes: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(JlsError::Parse(format!("{what} has ragged rows")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(JlsError::NonFinite(what.to_string()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl JlsModel {
    /// Builds a model with dimensions read off the matrices and validates it.
    pub fn new(modes: Vec<Matrix>, b: Matrix, c: Matrix, probs: Vec<f64>) -> Result<Self> {
        let model = Self {
            n: b.nrows(),
            m: c.nrows(),
            p: b.ncols(),
            modes,
            b,
            c,
            probs,
        };
        let report = model.validate();
        if report.is_valid() {
            Ok(model)
        } else {
            Err(JlsError::InvalidModel(report.violations))
        }
    }

    /// Number of modes `s`.
    pub fn s(&self) -> usize {
        self.modes.len()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(JlsError::InvalidModel(report.violations))
        }
    }

    /// Multiplies every mode matrix by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            modes: self.modes.iter().map(|a| a * factor).collect(),
            ..self.clone()
        }
    }

    pub fn from_file_repr(file: &ModelFile) -> Result<Self> {
        let modes = file
            .modes
            .iter()
            .enumerate()
            .map(|(i, rows)| rows_to_matrix(rows, &format!("mode {}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        if file.probs.iter().any(|x| !x.is_finite()) {
            return Err(JlsError::NonFinite("probs".into()));
        }
        let model = Self {
            n: file.n,
            m: file.m,
            p: file.p,
            modes,
            b: rows_to_matrix(&file.b, "B")?,
            c: rows_to_matrix(&file.c, "C")?,
            probs: file.probs.clone(),
        };
        let mut report = model.validate();
        if file.s != model.s() {
            report.violations.insert(
                0,
                format!("declared s = {} but {} modes given", file.s, model.s()),
            );
        }
        if report.is_valid() {
            Ok(model)
        } else {
            Err(JlsError::InvalidModel(report.violations))
        }
    }

    pub fn to_file_repr(&self) -> ModelFile {
        ModelFile {
            n: self.n,
            m: self.m,
            p: self.p,
            s: self.s(),
            modes: self.modes.iter().map(matrix_to_rows).collect(),
            b: matrix_to_rows(&self.b),
            c: matrix_to_rows(&self.c),
            probs: self.probs.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file_repr(&file)
    }

    pub fn to_json_string(&self) -> Result<String> {
        crate::format::to_json(&self.to_file_repr(), true)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

pub fn validate_model(model: &JlsModel) -> ValidationReport {
    let mut violations = Vec::new();
    let (n, m, p) = (model.n, model.m, model.p);
    if n == 0 {
        violations.push("state dimension n must be at least 1".to_string());
    }
    if m == 0 {
        violations.push("output dimension m must be at least 1".to_string());
    }
    if p == 0 {
        violations.push("input dimension p must be at least 1".to_string());
    }
    if model.modes.is_empty() {
        violations.push("at least one mode is required".to_string());
    }
    for (i, a) in model.modes.iter().enumerate() {
        if !a.is_square() {
            violations.push(format!(
                "mode {} is non-square ({}x{})",
                i + 1,
                a.nrows(),
                a.ncols()
            ));
        } else if a.nrows() != n {
            violations.push(format!(
                "mode {} is {}x{}, expected {n}x{n}",
                i + 1,
                a.nrows(),
                a.ncols()
            ));
        }
        if !numerics::all_finite(a) {
            violations.push(format!("mode {} has non-finite entries", i + 1));
        }
    }
    if model.b.shape() != (n, p) {
        violations.push(format!(
            "B is {}x{}, expected {n}x{p}",
            model.b.nrows(),
            model.b.ncols()
        ));
    }
    if model.c.shape() != (m, n) {
        violations.push(format!(
            "C is {}x{}, expected {m}x{n}",
            model.c.nrows(),
            model.c.ncols()
        ));
    }
    if !numerics::all_finite(&model.b) || !numerics::all_finite(&model.c) {
        violations.push("B or C has non-finite entries".to_string());
    }
    if model.probs.len() != model.modes.len() {
        violations.push(format!(
            "{} probabilities given for {} modes",
            model.probs.len(),
            model.modes.len()
        ));
    }
    for (i, &q) in model.probs.iter().enumerate() {
        if !q.is_finite() || q <= 0.0 {
            violations.push(format!(
                "probability {} is {q}, must be strictly positive",
                i + 1
            ));
        }
    }
    let total: f64 = model.probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        violations.push(format!("probabilities sum to {total}, expected 1"));
    }
    ValidationReport { violations }
}

/// A switch realization `theta(0), theta(1), ...`, stored 0-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwitchSequence(pub Vec<usize>);

impl SwitchSequence {
    pub fn new(zero_based: Vec<usize>) -> Self {
        Self(zero_based)
    }

    /// Constant sequence of `len` copies of a 0-based mode.
    pub fn constant(mode: usize, len: usize) -> Self {
        Self(vec![mode; len])
    }

    pub fn from_one_based(entries: &[usize]) -> Result<Self> {
        entries
            .iter()
            .enumerate()
            .map(|(position, &e)| {
                e.checked_sub(1).ok_or(JlsError::SwitchOutOfRange {
                    position,
                    index: e,
                    modes: 0,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Parses a comma separated list of 1-based mode indices, e.g. `"2,2,1"`.
    pub fn parse_one_based(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Ok(Self::default());
        }
        let entries = trimmed
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| JlsError::Parse(format!("bad switch index {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_one_based(&entries)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn check_range(&self, modes: usize) -> Result<()> {
        match self.0.iter().position(|&i| i >= modes) {
            Some(position) => Err(JlsError::SwitchOutOfRange {
                position,
                index: self.0[position] + 1,
                modes,
            }),
            None => Ok(()),
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Self(v)
    }
}

impl fmt::Display for SwitchSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_one_based().iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `u_0 .. u_{K-1}`, zero padded to the horizon.
    pub inputs: Vec<Vector>,
    /// `y_1 .. y_K`.
    pub outputs: Vec<Vector>,
    pub switches: SwitchSequence,
    /// `x_0 .. x_K`.
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.outputs.len()
    }
}

/// Deterministic rollout for `switches.len()` steps; inputs past the end of
/// `inputs` are zero.
pub fn simulate_with_switches(
    model: &JlsModel,
    switches: &SwitchSequence,
    inputs: &[Vector],
) -> Result<Trajectory> {
    switches.check_range(model.s())?;
    if inputs.len() > switches.len() {
        return Err(JlsError::Dimension(format!(
            "{} inputs but only {} switches",
            inputs.len(),
            switches.len()
        )));
    }
    if let Some(bad) = inputs.iter().position(|u| u.len() != model.p) {
        return Err(JlsError::Dimension(format!(
            "input {bad} has length {}, expected {}",
            inputs[bad].len(),
            model.p
        )));
    }
    let horizon = switches.len();
    let zero_input = Vector::zeros(model.p);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon);
    let mut padded = Vec::with_capacity(horizon);
    let mut x = Vector::zeros(model.n);
    states.push(x.clone());
    for (k, &mode) in switches.as_slice().iter().enumerate() {
        let u = inputs.get(k).unwrap_or(&zero_input);
        x = &model.modes[mode] * &x + &model.b * u;
        outputs.push(&model.c * &x);
        states.push(x.clone());
        padded.push(u.clone());
    }
    Ok(Trajectory {
        inputs: padded,
        outputs,
        switches: switches.clone(),
        states,
    })
}

/// Draws `len` i.i.d. switches from `probs` on the given stream.
pub fn draw_switches(probs: &[f64], len: usize, seed: u64, stream: u64) -> SwitchSequence {
    let sampler = ModeSampler::new(probs);
    let mut rng = rng::substream(seed, stream);
    SwitchSequence((0..len).map(|_| sampler.sample(&mut rng)).collect())
}

/// Rollout with switches drawn i.i.d. from `model.probs` on stream
/// [`rng::SIMULATION_STREAM`] of `seed`.
pub fn simulate_random(
    model: &JlsModel,
    inputs: &[Vector],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if inputs.len() > horizon {
        return Err(JlsError::Dimension(format!(
            "{} inputs exceed horizon {horizon}",
            inputs.len()
        )));
    }
    let switches = draw_switches(&model.probs, horizon, seed, rng::SIMULATION_STREAM);
    simulate_with_switches(model, &switches, inputs)
}

/// `count` inputs with entries uniform on `[-1, 1)`, from stream
/// [`rng::INPUT_STREAM`] of `seed`.
pub fn uniform_inputs(p: usize, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = rng::substream(seed, rng::INPUT_STREAM);
    (0..count)
        .map(|_| Vector::from_fn(p, |_, _| 2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub spectral_radius: f64,
    pub stable: bool,
}

/// Mean-square stability via `rho(sum p_i A_i (x) A_i) < 1 - tol`.
pub fn mean_square_stable(model: &JlsModel) -> Result<StabilityReport> {
    let s = oracle::second_moment(model);
    let spectral_radius = numerics::spectral_radius(&s)?;
    Ok(StabilityReport {
        spectral_radius,
        stable: spectral_radius < 1.0 - STABILITY_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimalityReport {
    /// Dimension of `span{vec(A_1), .., vec(A_s)}`.
    pub rank: usize,
    pub modes: usize,
    pub minimal: bool,
    pub rank_report: RankReport,
}

pub fn minimality_check(model: &JlsModel) -> MinimalityReport {
    let n2 = model.n * model.n;
    let mut stack = Matrix::zeros(n2, model.s());
    for (i, a) in model.modes.iter().enumerate() {
        stack.set_column(i, &numerics::vec(a));
    }
    let rank_report = numerics::numerical_rank(&stack, numerics::DEFAULT_RANK_TOL);
    MinimalityReport {
        rank: rank_report.rank,
        modes: model.s(),
        minimal: rank_report.rank == model.s(),
        rank_report,
    }
}

/// Expected number of copies before `sequence` is seen once:
/// `prod_j 1 / p_{sigma_j}`. Returns `f64::INFINITY` if any probability
/// along the sequence is zero.
pub fn worst_case_sample_bound(model: &JlsModel, sequence: &SwitchSequence) -> Result<f64> {
    sequence.check_range(model.s())?;
    let mut bound = 1.0;
    for &i in sequence.as_slice() {
        let q = model.probs[i];
        if q <= 0.0 {
            return Ok(f64::INFINITY);
        }
        bound /= q;
    }
    Ok(bound)
}
