//! Command-line front end: every computation writes deterministic CSV or JSON.

mod commands;
mod error;
mod figures;
mod output;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::PathBuf;

/// Thread count for internal sweeps; the only environment input.
const THREADS_ENV: &str = "CANARD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pwl-canard", version, about = "Canard cycles of a four-zone piecewise-linear slow-fast system")]
struct Cli {
    /// JSON object whose keys override the command's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

/// Full system parameters. `m` may be given directly or as a sign with |m| = sqrt(eps).
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ParamArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<f64>,
    /// minus (m = -sqrt(eps)) or plus (m = +sqrt(eps)).
    #[arg(long)]
    pub sign: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
}

/// Parameters of commands that work at the maximal canard value of `a`.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SignArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    /// Accepted when |m| = sqrt(eps); only its sign is used.
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<f64>,
    #[arg(long)]
    pub sign: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Landmarks and equilibrium classification as JSON.
    Model {
        #[command(flatten)]
        #[serde(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orbit through (x0, y0) sampled as CSV t,x,y,zone.
    Simulate {
        #[arg(long, allow_negative_numbers = true)]
        x0: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        y0: Option<f64>,
        #[command(flatten)]
        #[serde(flatten)]
        params: ParamArgs,
        /// Number of zone passages to follow.
        #[arg(long, default_value_t = 20)]
        crossings: usize,
        /// Sample spacing in time.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximal canard connection with series comparisons as JSON.
    Connect {
        #[command(flatten)]
        #[serde(flatten)]
        params: SignArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Canard explosion branch CSV, with optional fold CSV.
    Branch {
        #[command(flatten)]
        #[serde(flatten)]
        params: SignArgs,
        /// Approximate number of points on the adaptive width grid.
        #[arg(long)]
        points: Option<usize>,
        /// Explicit comma-separated widths instead of the adaptive grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        widths: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Roots of the hyperbolicity functions and their series as JSON.
    Rzero {
        #[command(flatten)]
        #[serde(flatten)]
        params: SignArgs,
        /// 3z or 4z; both when omitted.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value of k that puts a saddle-node cycle at the given width.
    Snk {
        #[arg(long, allow_negative_numbers = true)]
        x0: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        eps: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        m: Option<f64>,
        #[arg(long)]
        sign: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        k_lo: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        k_hi: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Small cycles near the Hopf-like value as JSON.
    Hopf {
        #[command(flatten)]
        #[serde(flatten)]
        params: SignArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Data sets behind the reference plots.
    Figures {
        /// fig3, fig4, fig5, fig6a, fig6b or fig7.
        #[arg(long)]
        id: String,
        #[arg(long, allow_negative_numbers = true)]
        eps: Option<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the acceptance criteria; exit 1 if any fails.
    Verify {
        #[arg(long)]
        criterion: Option<u8>,
    },
}

/// Applies a JSON config on top of the parsed flags. Unknown keys and a
/// mismatched command name are usage errors.
fn merge_config(cmd: Command, path: &PathBuf) -> Result<Command, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config is not JSON: {e}")))?;
    let Value::Object(file) = file else {
        return Err(CliError::Usage("config must be a JSON object".into()));
    };
    let mut base = serde_json::to_value(&cmd).map_err(|e| CliError::Usage(e.to_string()))?;
    let obj = base.as_object_mut().expect("commands serialize as objects");
    for (key, v) in file {
        if key == "command" {
            if v != obj["command"] {
                return Err(CliError::Usage(format!("config is for command {v}, not {}", obj["command"])));
            }
            continue;
        }
        if !obj.contains_key(&key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        obj.insert(key, v);
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = (|| {
        init_threads()?;
        let cmd = match &cli.config {
            Some(p) => merge_config(cli.command, p)?,
            None => cli.command,
        };
        if cli.print_config {
            return output::emit(None, &output::json_bytes(&cmd)?);
        }
        commands::dispatch(&cmd)
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report());
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
