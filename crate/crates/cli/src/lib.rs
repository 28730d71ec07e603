//! Library side of the `cogdiag` command-line tool. Every subcommand is a
//! plain function so it can be driven from tests without a subprocess.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::correlate::Selection;
use crate::config::{parse_methods, Overrides, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{correlations_csv, doa_csv};

#[derive(Debug, Parser)]
#[command(name = "cogdiag", version, about = "Cognitive diagnosis of model checkpoints from response logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub qmatrix: PathBuf,
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and write its canonical form.
    Ingest {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with a ground-truth sidecar.
    Simulate {
        /// TOML or JSON spec; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured diagnosis methods and write the report.
    Diagnose {
        /// TOML or JSON run configuration.
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of ncdm, icdm, fewshot.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Pearson correlation between numeric columns of a CSV table or report.
    Correlate {
        input: PathBuf,
        /// Pairs as `x:y,x:z`.
        #[arg(long, conflicts_with = "against")]
        pairs: Option<String>,
        /// Correlate this column with every other numeric column.
        #[arg(long)]
        against: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Degree of agreement of a states table against the response log.
    Doa {
        #[arg(long)]
        states: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlearning-objective calculators.
    Objectives {
        #[command(subcommand)]
        command: ObjectivesCommand,
    },
    /// Summarize a saved report.
    Report {
        input: PathBuf,
        /// Verify the schema and the content hash.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ObjectivesCommand {
    /// Evaluate JSON requests read from a file (`-` for stdin).
    Eval { input: PathBuf },
}

fn emit(out: Option<&PathBuf>, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(p) => commands::write_text(p, text),
        None => stdout.write_all(text.as_bytes()).map_err(CliError::from),
    }
}

/// Executes one parsed command, writing human output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Ingest { dataset, out } => {
            let summary = commands::ingest::run(&commands::ingest::IngestArgs {
                catalog: &dataset.catalog,
                qmatrix: &dataset.qmatrix,
                logs: &dataset.logs,
                registry: dataset.registry.as_deref(),
                out: &out,
            })?;
            writeln!(
                stdout,
                "dataset is consistent: {} students, {} exercises, {} concepts, {} responses\nwrote {}",
                summary.students,
                summary.exercises,
                summary.concepts,
                summary.responses,
                out.display()
            )?;
        }
        Command::Simulate { spec, out, seed } => {
            let mut spec = commands::simulate::load_spec(spec.as_deref())?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let sim = commands::simulate::generate(&spec)?;
            commands::simulate::write(&sim, &out)?;
            stdout.write_all(commands::simulate::render_summary(&sim).as_bytes())?;
        }
        Command::Diagnose {
            config,
            seed,
            out,
            methods,
        } => {
            let overrides = Overrides {
                seed,
                output_dir: out,
                methods: methods.as_deref().map(parse_methods).transpose()?,
            };
            let config = RunConfig::load(&config, &overrides)?;
            let run = commands::diagnose::run(&config)?;
            stdout.write_all(report::render_summary(&run.report).as_bytes())?;
            writeln!(stdout, "\nwrote {} files to {}", run.files.len(), config.output_dir.display())?;
            if let Some(e) = run.failure {
                return Err(e);
            }
        }
        Command::Correlate {
            input,
            pairs,
            against,
            out,
        } => {
            let columns = commands::correlate::load_columns(&input)?;
            let selection = match (pairs, against) {
                (Some(p), _) => Selection::Pairs(commands::correlate::parse_pairs(&p)?),
                (None, Some(a)) => Selection::Against(a),
                (None, None) => Selection::All,
            };
            let rows = commands::correlate::correlate(&columns, &selection)?;
            emit(out.as_ref(), &correlations_csv(&rows), stdout)?;
        }
        Command::Doa {
            states,
            dataset,
            method,
            out,
        } => {
            let method = method
                .map(|m| m.parse().map_err(|e: cogdiag::Error| CliError::Parse(e.to_string())))
                .transpose()?;
            let report = commands::doa::run(&commands::doa::DoaArgs {
                states: &states,
                catalog: &dataset.catalog,
                qmatrix: &dataset.qmatrix,
                logs: &dataset.logs,
                registry: dataset.registry.as_deref(),
                method,
            })?;
            emit(out.as_ref(), &doa_csv(&report), stdout)?;
        }
        Command::Objectives {
            command: ObjectivesCommand::Eval { input },
        } => {
            let text = if input.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin())?
            } else {
                std::fs::read_to_string(&input)
                    .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", input.display())))?
            };
            let value = commands::objectives::eval_json(&text)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&value).expect("json value serializes"))?;
        }
        Command::Report { input, check } => {
            stdout.write_all(commands::report::run(&input, check)?.as_bytes())?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
