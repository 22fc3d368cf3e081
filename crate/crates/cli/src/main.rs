use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gyromodal_cli::{
    cmd_modes, cmd_simulate, cmd_verify, parse_random_spec, CliError, Exit, Format, Method,
    ModesArgs, SimulateArgs, SystemSource, VerifyArgs,
};

#[derive(Parser)]
#[command(name = "gyromodal", version, about = "Normal modes and motions of linear gyroscopic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute frequencies and complex modes z = h + i r.
    Modes {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Write a trajectory as CSV from the closed form, RK4, or both.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        /// JSON file {"eta0": [...], "etadot0": [...]} holding the state at t0.
        #[arg(long)]
        ic: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, allow_hyphen_values = true)]
        t1: f64,
        #[arg(long, allow_hyphen_values = true)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Modal)]
        method: MethodArg,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Exit with status 4 when `both` trajectories differ by more than this.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run the invariant suite on a system file or a seeded random system.
    Verify(VerifyCli),
}

#[derive(Args)]
struct VerifyCli {
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    input: Option<PathBuf>,
    /// Random system, e.g. `n=6,b_scale=1,cap=1e4`.
    #[arg(long)]
    random: Option<String>,
    #[arg(long, default_value_t = 0, requires = "random")]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    tol_ortho: Option<f64>,
    #[arg(long)]
    tol_residual: Option<f64>,
    #[arg(long)]
    tol_eigen: Option<f64>,
    #[arg(long)]
    tol_gram: Option<f64>,
    #[arg(long)]
    tol_roundtrip: Option<f64>,
    #[arg(long)]
    tol_conservation: Option<f64>,
    #[arg(long)]
    tol_oracle: Option<f64>,
    #[arg(long)]
    tol_classical: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Text,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Text => Format::Text,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Modal,
    Rk4,
    Both,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Modal => Method::Modal,
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Both => Method::Both,
        }
    }
}

fn verify_args(v: VerifyCli) -> Result<VerifyArgs, CliError> {
    let source = match (v.input, v.random) {
        (Some(path), None) => SystemSource::File(path),
        (None, Some(spec)) => SystemSource::Random(parse_random_spec(&spec, v.seed)?),
        _ => return Err(CliError::usage("give exactly one of --input and --random")),
    };
    let overrides = [
        ("ortho", v.tol_ortho),
        ("residual", v.tol_residual),
        ("eigen", v.tol_eigen),
        ("gram", v.tol_gram),
        ("roundtrip", v.tol_roundtrip),
        ("conservation", v.tol_conservation),
        ("oracle", v.tol_oracle),
        ("classical", v.tol_classical),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
    .collect();
    Ok(VerifyArgs {
        source,
        overrides,
        format: v.format.into(),
        output: v.output,
    })
}

fn run(cli: Cli) -> Result<Exit, CliError> {
    match cli.command {
        Command::Modes { input, output, format } => cmd_modes(&ModesArgs {
            input,
            output,
            format: format.into(),
        }),
        Command::Simulate {
            input,
            ic,
            t0,
            t1,
            dt,
            method,
            output,
            tol,
        } => {
            let summary = cmd_simulate(&SimulateArgs {
                input,
                ic,
                t0,
                t1,
                dt,
                method: method.into(),
                output,
                tol,
            })?;
            if let Some(d) = summary.max_discrepancy {
                eprintln!("# max_discrepancy={d:.16e}");
            }
            Ok(summary.exit)
        }
        Command::Verify(v) => cmd_verify(&verify_args(v)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage.code() as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(exit) => ExitCode::from(exit.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.code() as u8)
        }
    }
}
