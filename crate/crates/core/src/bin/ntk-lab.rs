use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ntk_lab::lab::{run_experiment, write_results, ExperimentKind, ExperimentSpec, RunContext};
use ntk_lab::verify::{render_table, run_suite};
use ntk_lab::Error;

/// Closed-form minimizers of wide networks, checked against training.
#[derive(Parser)]
#[command(name = "ntk-lab", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in property suite.
    Verify,
    /// Interpolator, GD closed form and trained GD across σ.
    SigmaSweep(RunArgs),
    /// GD against SGD and adaptive optimizers across widths.
    AdaptiveCompare(RunArgs),
    /// Mini-batch SGD/AdaGrad against their full-batch versions.
    BatchSweep(RunArgs),
    /// Distance between full and linearized training across widths.
    LinGap(RunArgs),
    /// Shrink σ along a ladder and pick it on validation loss.
    Mitigate(RunArgs),
    /// Monte-Carlo estimate of the output norm at initialization.
    McNorm(RunArgs),
    /// Random-feature least squares with more samples than features.
    Underparam(RunArgs),
    /// Re-linearize GD after T steps.
    LateLin(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML); defaults are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override a spec key, e.g. `--set network.width=512`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory the results file is written to.
    #[arg(long, env = "NTK_LAB_OUT", default_value = ".")]
    out: PathBuf,
    /// Base seed, overriding the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (kind, args) = match cli.command {
        Command::Verify => return verify(),
        Command::SigmaSweep(a) => (ExperimentKind::SigmaSweep, a),
        Command::AdaptiveCompare(a) => (ExperimentKind::AdaptiveCompare, a),
        Command::BatchSweep(a) => (ExperimentKind::BatchSweep, a),
        Command::LinGap(a) => (ExperimentKind::LinearizationGap, a),
        Command::Mitigate(a) => (ExperimentKind::Mitigation, a),
        Command::McNorm(a) => (ExperimentKind::McInitNorm, a),
        Command::Underparam(a) => (ExperimentKind::UnderparamDemo, a),
        Command::LateLin(a) => (ExperimentKind::LateLinearization, a),
    };
    let spec = match load_spec(kind, &args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let path = output_path(&spec, &args.out);
    let ctx = RunContext::new(args.jobs);
    let out = match run_experiment(&spec, &ctx).and_then(|out| write_results(&path, &out).map(|_| out)) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if matches!(e, Error::Config { .. } | Error::SpecFile { .. }) { 2 } else { 1 });
        }
    };
    println!("{} rows -> {} ({} failed)", out.records.len(), path.display(), out.failures);
    if out.failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn verify() -> ExitCode {
    let checks = run_suite();
    print!("{}", render_table(&checks));
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

/// The experiment file (or defaults) with the subcommand's experiment kind, the
/// `--set` overrides and `--seed` applied.
fn load_spec(kind: ExperimentKind, args: &RunArgs) -> ntk_lab::Result<ExperimentSpec> {
    let text = match &args.spec {
        Some(p) => std::fs::read_to_string(p).map_err(|source| Error::SpecFile { path: p.clone(), source })?,
        None => String::new(),
    };
    if let Ok(table) = text.parse::<toml::Table>() {
        if let Some(declared) = table.get("experiment").and_then(|v| v.as_str()) {
            if declared != kind.name() {
                return Err(Error::Config {
                    key: "experiment".into(),
                    msg: format!("spec declares `{declared}` but the subcommand runs `{}`", kind.name()),
                });
            }
        }
    }
    let mut overrides = vec![format!("experiment={}", kind.name())];
    overrides.extend(args.overrides.iter().cloned());
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let spec = ExperimentSpec::from_toml_with_overrides(&text, &overrides)?;
    if spec.experiment != kind {
        return Err(Error::Config {
            key: "experiment".into(),
            msg: format!("override selects `{}` but the subcommand runs `{}`", spec.experiment, kind.name()),
        });
    }
    Ok(spec)
}

fn output_path(spec: &ExperimentSpec, out_dir: &Path) -> PathBuf {
    let name = if spec.output.is_empty() { format!("{}.csv", spec.experiment.name()) } else { spec.output.clone() };
    out_dir.join(name)
}
