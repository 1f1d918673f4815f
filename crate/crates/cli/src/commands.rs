use std::io::Write;
use std::path::{Path, PathBuf};

use jls_core::excitation::{self, InputBasis, ObservationMode, ObservationPair};
use jls_core::format::{fmt17, to_json};
use jls_core::model::{self, JlsModel, MinimalityReport, SwitchSequence};
use jls_core::modes::{self, Factorization, FactorizationKind, ModeEstimate, PfConfig};
use jls_core::realization::{self, Assumption4Report, RealizationReport, SubspaceRank};
use jls_core::{JlsError, Vector};
use serde::Serialize;

use crate::{
    CheckArgs, Command, EstimateArgs, ExciteArgs, FactorizationArg, Format, Mode, ModesArgs,
    ObservationArgs, OutputArgs, ScanArgs, SimulateArgs, FIXTURE_DIR_ENV,
};

pub const EXIT_MODEL: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_INFERENCE: u8 = 4;

const DEFAULT_COPIES: usize = 1000;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn model(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MODEL,
            message: message.into(),
        }
    }
}

/// Errors raised while computing: inference problems map to 4, anything
/// else is a bad configuration.
impl From<JlsError> for CliError {
    fn from(err: JlsError) -> Self {
        let code = match err {
            JlsError::NotTriangular { .. }
            | JlsError::HorizonTooShort { .. }
            | JlsError::RankDeficient(_)
            | JlsError::Solver(_)
            | JlsError::NonFinite(_) => EXIT_INFERENCE,
            JlsError::InvalidModel(_) => EXIT_MODEL,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(args) => simulate(&args),
        Command::Excite(args) => excite(&args),
        Command::EstimateDim(args) => estimate_dim(&args),
        Command::EstimateModes(args) => estimate_modes(&args),
        Command::Check(args) => check(&args),
        Command::Scan(args) => scan(&args),
    }
}

/// Resolves `path` as given, then under the fixture directory.
fn resolve_model_path(path: &Path) -> Option<PathBuf> {
    if path.is_file() {
        return Some(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(FIXTURE_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.is_file() {
                return Some(candidate);
            }
        }
    }
    None
}

fn load_model(path: &Path) -> CliResult<JlsModel> {
    let resolved = resolve_model_path(path)
        .ok_or_else(|| CliError::model(format!("model file {} not found", path.display())))?;
    JlsModel::load(&resolved).map_err(|e| CliError::model(format!("{}: {e}", resolved.display())))
}

fn emit(out: &OutputArgs, text: &str) -> CliResult<()> {
    match &out.output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::config(format!("cannot write to stdout: {e}")))
        }
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> CliResult<String> {
    Ok(to_json(value, true)?)
}

fn parse_switches(text: &str) -> CliResult<SwitchSequence> {
    SwitchSequence::parse_one_based(text).map_err(|e| CliError::config(e.to_string()))
}

fn positive(name: &str, value: usize) -> CliResult<usize> {
    if value == 0 {
        Err(CliError::config(format!("--{name} must be at least 1")))
    } else {
        Ok(value)
    }
}

fn positive_tol(name: &str, value: f64) -> CliResult<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::config(format!(
            "--{name} must be a positive number"
        )))
    }
}

#[derive(Serialize)]
struct TrajectoryOut {
    horizon: usize,
    /// theta(1)..theta(K-1), 1-based; replayable with --switches.
    switches: Vec<usize>,
    seed: Option<u64>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let (switches, input_len, seed) = match (&args.switches, args.t) {
        (Some(text), _) => {
            let effective = parse_switches(text)?;
            effective
                .check_range(model.s())
                .map_err(|e| CliError::config(e.to_string()))?;
            // theta(0) multiplies x_0 = 0, so any mode will do
            let full = SwitchSequence::new(vec![0]).concat(&effective);
            let len = full.len().div_ceil(2);
            (full, len, None)
        }
        (None, Some(t)) => {
            let t = positive("T", t)?;
            let drawn = model::draw_switches(
                &model.probs,
                2 * t,
                args.seed,
                jls_core::rng::SIMULATION_STREAM,
            );
            (drawn, t, Some(args.seed))
        }
        (None, None) => return Err(CliError::config("simulate needs --T or --switches")),
    };
    let inputs: Vec<Vector> = if args.impulse {
        let mut u = Vector::zeros(model.p);
        u[0] = 1.0;
        vec![u]
    } else {
        model::uniform_inputs(model.p, input_len, args.seed)
    };
    let traj = model::simulate_with_switches(&model, &switches, &inputs)?;
    let effective = traj.switches.to_one_based()[1..].to_vec();
    let text = match args.out.format.unwrap_or(Format::Json) {
        Format::Json => json(&TrajectoryOut {
            horizon: traj.horizon(),
            switches: effective,
            seed,
            inputs: traj
                .inputs
                .iter()
                .map(|u| u.iter().copied().collect())
                .collect(),
            outputs: traj
                .outputs
                .iter()
                .map(|y| y.iter().copied().collect())
                .collect(),
        })?,
        Format::Csv => {
            let mut head = vec!["k".to_string(), "theta".to_string()];
            head.extend((1..=model.p).map(|i| format!("u{i}")));
            head.extend((1..=model.m).map(|i| format!("y{i}")));
            let mut text = head.join(",") + "\n";
            for k in 0..traj.horizon() {
                let mut row = vec![(k + 1).to_string()];
                row.push(if k == 0 {
                    String::new()
                } else {
                    effective[k - 1].to_string()
                });
                row.extend(traj.inputs[k].iter().map(|&v| fmt17(v)));
                row.extend(traj.outputs[k].iter().map(|&v| fmt17(v)));
                text.push_str(&row.join(","));
                text.push('\n');
            }
            text
        }
    };
    emit(&args.out, &text)
}

struct Observations {
    pair: ObservationPair,
    basis: InputBasis,
    model: Option<JlsModel>,
}

fn gather(args: &ObservationArgs) -> CliResult<Observations> {
    let model = args.model.as_deref().map(load_model).transpose()?;
    if let Some(path) = &args.observations {
        let pair = ObservationPair::load(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let Some(m) = &model {
            if (m.m, m.p) != (pair.meta.m, pair.meta.p) {
                return Err(CliError::config(
                    "observation bundle does not match the model's m and p",
                ));
            }
        }
        let basis = excitation::standard_basis(pair.meta.p, pair.meta.horizon)?;
        if basis.d() != pair.meta.d {
            return Err(CliError::config(
                "bundle was not built from the standard input basis",
            ));
        }
        return Ok(Observations { pair, basis, model });
    }
    let model = model.ok_or_else(|| CliError::config("need --model or --observations"))?;
    let t = positive("T", args.t.unwrap_or(model.n * model.n + model.n - 1))?;
    let basis = excitation::standard_basis(model.p, t)?;
    let pair = match args.mode.unwrap_or(Mode::Exact) {
        Mode::Exact => {
            if args.n.is_some() {
                log::warn!("--N is ignored in exact mode");
            }
            excitation::exact_observations(&model, &basis)?
        }
        Mode::MonteCarlo => {
            let copies = positive("N", args.n.unwrap_or(DEFAULT_COPIES))?;
            log::info!(
                "simulating {copies} copies for each of {} inputs",
                basis.d()
            );
            excitation::collect_observations(&model, &basis, copies, args.seed)?
        }
    };
    Ok(Observations {
        pair,
        basis,
        model: Some(model),
    })
}

fn excite(args: &ExciteArgs) -> CliResult<()> {
    let obs = gather(&args.obs)?;
    let text = match args.out.format.unwrap_or(Format::Json) {
        Format::Json => obs.pair.to_json()?,
        Format::Csv => obs.pair.to_csv(),
    };
    emit(&args.out, &text)
}

fn estimate_dim(args: &EstimateArgs) -> CliResult<()> {
    let tol = positive_tol("tol", args.tol)?;
    let obs = gather(&args.obs)?;
    let mut report = RealizationReport::from_observations(&obs.pair.y, obs.pair.meta.horizon, tol)?;
    if let Some(model) = &obs.model {
        report = report.with_model(model)?;
    }
    let text = match args.out.format.unwrap_or(Format::Json) {
        Format::Json => json(&report)?,
        Format::Csv => {
            let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
            format!(
                "rank,n,tolerance,spectral_gap,T,T_star,r_B,r_C\n{},{},{},{},{},{},{},{}\n",
                report.rank,
                report.n,
                fmt17(report.tolerance),
                fmt17(report.spectral_gap),
                report.horizon,
                opt(report.saturation_horizon),
                opt(report.r_b),
                opt(report.r_c)
            )
        }
    };
    emit(&args.out, &text)
}

#[derive(Serialize)]
struct ModesOut<'a> {
    s: usize,
    n: usize,
    converged: bool,
    gauge_ambiguous: bool,
    observation_mode: ObservationMode,
    #[serde(flatten)]
    estimate: &'a ModeEstimate,
}

fn estimate_modes(args: &ModesArgs) -> CliResult<()> {
    let tol = positive_tol("tol", args.est.tol)?;
    let rank_tol = positive_tol("mode-tol", args.mode_tol)?;
    let config = PfConfig {
        b: args.b,
        max_iter: positive("max-iter", args.max_iter)?,
        seed: args.est.obs.seed,
        starts: positive("starts", args.starts)?,
        rank_tol,
        ..PfConfig::default()
    };
    if let Some(b) = config.b {
        positive_tol("b", b)?;
    }
    let obs = gather(&args.est.obs)?;
    let factorization = match args.factorization {
        FactorizationArg::Oracle => {
            let model = obs
                .model
                .as_ref()
                .ok_or_else(|| CliError::config("oracle factorization needs --model"))?;
            Factorization::Oracle {
                model,
                basis: &obs.basis,
            }
        }
        FactorizationArg::Blind => Factorization::Blind,
    };
    let estimate =
        modes::estimate_modes(&obs.pair.y, &obs.pair.y_plus, tol, &config, &factorization)?;
    if !estimate.solution.converged {
        log::warn!(
            "solver did not converge; best residual {:e}",
            estimate.solution.residual
        );
    }
    let text = match args.est.out.format.unwrap_or(Format::Json) {
        Format::Json => json(&ModesOut {
            s: estimate.s(),
            n: estimate.state.n,
            converged: estimate.solution.converged,
            gauge_ambiguous: estimate.factorization == FactorizationKind::Blind,
            observation_mode: obs.pair.meta.mode,
            estimate: &estimate,
        })?,
        Format::Csv => {
            let mut text =
                String::from("iteration,objective_after_p,objective_after_z,z_condition,rank\n");
            for r in &estimate.solution.iterations {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.iteration,
                    fmt17(r.objective_after_p),
                    fmt17(r.objective_after_z),
                    fmt17(r.z_condition),
                    r.rank
                ));
            }
            text
        }
    };
    emit(&args.est.out, &text)
}

#[derive(Serialize)]
struct CheckOut {
    #[serde(rename = "r_B")]
    r_b: usize,
    #[serde(rename = "r_C")]
    r_c: usize,
    controllability: SubspaceRank,
    observability: SubspaceRank,
    spectral_radius: f64,
    mean_square_stable: bool,
    minimality: MinimalityReport,
    assumption4: Assumption4Report,
    switches: Option<Vec<usize>>,
    worst_case_sample_bound: Option<f64>,
}

fn check(args: &CheckArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let t = positive("T", args.t.unwrap_or(model.n * model.n + model.n - 1))?;
    let switches = args.switches.as_deref().map(parse_switches).transpose()?;
    let bound = switches
        .as_ref()
        .map(|s| model::worst_case_sample_bound(&model, s))
        .transpose()
        .map_err(|e| CliError::config(e.to_string()))?;
    let ctrl = realization::controllability_rank(&model);
    let obsv = realization::observability_rank(&model);
    let stability = model::mean_square_stable(&model)?;
    let out = CheckOut {
        r_b: ctrl.rank,
        r_c: obsv.rank,
        controllability: ctrl,
        observability: obsv,
        spectral_radius: stability.spectral_radius,
        mean_square_stable: stability.stable,
        minimality: model::minimality_check(&model),
        assumption4: realization::assumption4_diagnostic(&model, t)?,
        switches: switches.map(|s| s.to_one_based()),
        worst_case_sample_bound: bound,
    };
    let text = match args.out.format.unwrap_or(Format::Json) {
        Format::Json => json(&out)?,
        Format::Csv => {
            let mut rows = vec![
                ("r_B", out.r_b.to_string()),
                ("r_C", out.r_c.to_string()),
                ("spectral_radius", fmt17(out.spectral_radius)),
                ("mean_square_stable", out.mean_square_stable.to_string()),
                ("minimality_rank", out.minimality.rank.to_string()),
                ("modes", out.minimality.modes.to_string()),
                ("minimal", out.minimality.minimal.to_string()),
                ("assumption4_T", out.assumption4.horizon.to_string()),
                ("assumption4_pass", out.assumption4.pass.to_string()),
                (
                    "assumption4_obs_sym_rank",
                    out.assumption4.obs_sym_rank.to_string(),
                ),
                (
                    "assumption4_ctrl_sym_rank",
                    out.assumption4.ctrl_sym_rank.to_string(),
                ),
            ];
            if let Some(b) = out.worst_case_sample_bound {
                rows.push(("worst_case_sample_bound", fmt17(b)));
            }
            let mut text = String::from("key,value\n");
            for (k, v) in rows {
                text.push_str(&format!("{k},{v}\n"));
            }
            text
        }
    };
    emit(&args.out, &text)
}

fn scan(args: &ScanArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let tol = positive_tol("tol", args.tol)?;
    let t_max = positive("T", args.t.unwrap_or(model.n * model.n + model.n + 2))?;
    let scan = realization::rank_saturation_scan(&model, t_max, tol)?;
    let text = match args.out.format.unwrap_or(Format::Csv) {
        Format::Csv => scan.to_csv(),
        Format::Json => json(&scan)?,
    };
    emit(&args.out, &text)
}
