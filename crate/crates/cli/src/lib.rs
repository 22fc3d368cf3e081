//! Library half of the `gyromodal` command: file formats and the three
//! subcommands, kept free of argument parsing so they can be driven from tests.

pub mod formats;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use gyromodal::spectral::{build_gram, modal_basis};
use gyromodal::trajectory::{energy, evaluate_state, mode_shapes, project_initial_conditions};
use gyromodal::verify::{
    integrate_reference, random_system, run_invariant_suite, step_times, InvariantReport,
    RandomSystemSpec, ToleranceProfile,
};
use gyromodal::{GyroError, StateVector, SystemMatrices};

use formats::{write_trajectory, IcFile, ModesFile, SystemFile, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    VerificationFailed = 1,
    Validation = 2,
    Numerical = 3,
    Discrepancy = 4,
    Usage = 64,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(code: Exit, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Exit::Usage, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<GyroError> for CliError {
    fn from(e: GyroError) -> Self {
        let code = if e.is_validation() {
            Exit::Validation
        } else {
            Exit::Numerical
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Modal,
    Rk4,
    Both,
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::new(Exit::Validation, format!("cannot read {}: {e}", path.display())))
}

pub fn load_system(path: &Path) -> Result<SystemMatrices, CliError> {
    SystemFile::parse(&read_input(path)?)?.to_system()
}

/// Writes to the file, or to stdout when no path is given.
fn emit(output: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let result = match output {
        Some(path) => fs::File::create(path).and_then(|f| {
            let mut w = io::BufWriter::new(f);
            body(&mut w)?;
            w.flush()
        }),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).and_then(|_| lock.flush())
        }
    };
    result.map_err(|e| {
        let target = output.map_or("stdout".to_string(), |p| p.display().to_string());
        CliError::usage(format!("cannot write {target}: {e}"))
    })
}

#[derive(Debug, Clone)]
pub struct ModesArgs {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub format: Format,
}

pub fn cmd_modes(args: &ModesArgs) -> Result<Exit, CliError> {
    let sys = load_system(&args.input)?;
    let modes = ModesFile::from_system(&sys)?;
    let body = match args.format {
        Format::Json => modes.to_json(),
        Format::Text => modes.to_text(),
    };
    emit(args.output.as_deref(), |w| w.write_all(body.as_bytes()))?;
    Ok(Exit::Ok)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub input: PathBuf,
    pub ic: PathBuf,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub method: Method,
    pub output: Option<PathBuf>,
    /// Largest acceptable max-norm gap between the two trajectories with `both`.
    pub tol: f64,
}

/// Outcome of a `simulate` run; `max_discrepancy` is set for `both`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub exit: Exit,
    pub max_discrepancy: Option<f64>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateSummary, CliError> {
    if !(args.t0.is_finite() && args.t1.is_finite() && args.t1 > args.t0) {
        return Err(CliError::usage(format!(
            "--t1 must exceed --t0 (got t0={}, t1={})",
            args.t0, args.t1
        )));
    }
    if !(args.dt.is_finite() && args.dt > 0.0) {
        return Err(CliError::usage(format!("--dt must be positive (got {})", args.dt)));
    }
    if !(args.tol >= 0.0) {
        return Err(CliError::usage(format!("--tol must be non-negative (got {})", args.tol)));
    }
    let sys = load_system(&args.input)?;
    let ic = IcFile::parse(&read_input(&args.ic)?)?.to_state(sys.dim())?;
    let span = args.t1 - args.t0;
    let offsets = step_times(span, args.dt)?;

    let modal: Option<Vec<StateVector>> = match args.method {
        Method::Rk4 => None,
        Method::Modal | Method::Both => {
            let basis = modal_basis(&sys)?;
            let shapes = mode_shapes(&basis)?;
            let params = project_initial_conditions(&build_gram(&sys)?, &basis, &ic)?;
            Some(offsets.iter().map(|&s| evaluate_state(&shapes, &params, s)).collect())
        }
    };
    let rk4: Option<Vec<StateVector>> = match args.method {
        Method::Modal => None,
        Method::Rk4 | Method::Both => Some(integrate_reference(&sys, &ic, span, args.dt)?.states),
    };

    let n = sys.dim();
    let max_discrepancy = match (&modal, &rk4) {
        (Some(m), Some(r)) => Some(
            m.iter()
                .zip(r)
                .map(|(a, b)| (a.stacked() - b.stacked()).amax())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    let primary = modal.as_ref().or(rk4.as_ref()).expect("at least one trajectory");
    let secondary = if modal.is_some() { rk4.as_ref() } else { None };
    emit(args.output.as_deref(), |w| {
        write_trajectory(
            w,
            n,
            offsets.iter().enumerate().map(|(i, &s)| TrajectoryRow {
                t: args.t0 + s,
                state: &primary[i],
                energy: energy(&sys, &primary[i]),
                extra: secondary.map(|r| (&r[i], energy(&sys, &r[i]))),
            }),
            secondary.is_some(),
        )
    })?;

    let exit = match max_discrepancy {
        Some(d) if !(d <= args.tol) => Exit::Discrepancy,
        _ => Exit::Ok,
    };
    Ok(SimulateSummary {
        exit,
        max_discrepancy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSource {
    File(PathBuf),
    Random(RandomSystemSpec),
}

/// Parses `n=6,b_scale=1,cap=1e4`; `b_scale` defaults to 1 and `cap` to 1e4.
pub fn parse_random_spec(text: &str, seed: u64) -> Result<RandomSystemSpec, CliError> {
    let mut n = None;
    let mut spec = RandomSystemSpec::new(1, seed);
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--random expects key=value, got `{item}`")))?;
        let bad = || CliError::usage(format!("--random: bad value in `{item}`"));
        match key.trim() {
            "n" => n = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
            "b_scale" => spec.b_scale = value.trim().parse().map_err(|_| bad())?,
            "cap" | "condition_cap" => spec.condition_cap = value.trim().parse().map_err(|_| bad())?,
            other => return Err(CliError::usage(format!("--random: unknown key `{other}`"))),
        }
    }
    spec.n = n.ok_or_else(|| CliError::usage("--random needs n=<dimension>"))?;
    if spec.n == 0 || !(spec.condition_cap > 1.0) || !spec.b_scale.is_finite() || spec.b_scale < 0.0 {
        return Err(CliError::usage(
            "--random needs n >= 1, cap > 1 and a finite non-negative b_scale",
        ));
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub source: SystemSource,
    /// `key=value` overrides applied after the environment profile.
    pub overrides: Vec<(String, f64)>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

pub fn tolerance_profile(overrides: &[(String, f64)]) -> Result<ToleranceProfile, CliError> {
    let mut tol = ToleranceProfile::from_env()
        .map_err(|e| CliError::usage(format!("{}: {e}", ToleranceProfile::ENV_VAR)))?;
    for (key, value) in overrides {
        tol.apply_overrides(&format!("{key}={value:e}"))
            .map_err(|e| CliError::usage(format!("--tol-{key}: {e}")))?;
    }
    Ok(tol)
}

pub fn report_text(report: &InvariantReport) -> String {
    let width = report.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:width$}  {:>12}     {:>10}  result\n", "check", "residual", "bound");
    for c in &report.checks {
        out.push_str(&format!(
            "{:width$}  {:>12.4e}  {:>2} {:>10.1e}  {}\n",
            c.name,
            c.residual,
            c.comparator.symbol(),
            c.bound,
            if c.passed { "PASS" } else { "FAIL" }
        ));
        if let Some(d) = &c.detail {
            out.push_str(&format!("{:width$}  ({d})\n", ""));
        }
    }
    let failed = report.failures().count();
    out.push_str(&format!(
        "{} of {} checks passed\n",
        report.checks.len() - failed,
        report.checks.len()
    ));
    out
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Exit, CliError> {
    let tol = tolerance_profile(&args.overrides)?;
    let sys = match &args.source {
        SystemSource::File(path) => load_system(path)?,
        SystemSource::Random(spec) => random_system(spec)?,
    };
    let report = run_invariant_suite(&sys, &tol);
    let body = match args.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => report_text(&report),
    };
    emit(args.output.as_deref(), |w| w.write_all(body.as_bytes()))?;
    Ok(if report.passed {
        Exit::Ok
    } else {
        Exit::VerificationFailed
    })
}
