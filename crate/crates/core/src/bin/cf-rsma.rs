//! Command-line front end: runs preset or custom sweeps and writes results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cf_rsma::experiment::{parse_axis_spec, parse_modes, run_and_write, Preset, SweepSpec};
use cf_rsma::link::{MismatchPolicy, RunOptions};
use cf_rsma::{Error, SimConfig};

#[derive(Parser, Debug)]
#[command(name = "cf-rsma", version, about = "Cell-free massive MIMO RSMA downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a sweep and write results.csv, manifest.json and optional plots.
    Run(RunArgs),
    /// Print the effective configuration of a preset as TOML.
    Config {
        #[arg(long, default_value = "custom")]
        preset: String,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// fig_a, fig_b, fig_c or custom.
    #[arg(long, default_value = "custom")]
    preset: String,
    /// TOML config; its keys override the preset's fixed parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated modes, e.g. RSMA_DL_PILOTS,SDMA.
    #[arg(long)]
    modes: Option<String>,
    /// Sweep axis as AXIS=v1,v2,... (K, L, velocity, tau_c); replaces preset axes. Repeat for two axes.
    #[arg(long = "sweep")]
    sweeps: Vec<String>,
    /// Emit an SVG plot next to the CSV.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    plot: bool,
    #[arg(long, env = "CF_RSMA_THREADS")]
    threads: Option<usize>,
    /// Check every drop's closed-form DL statistics against this many oracle trials.
    #[arg(long)]
    verify_stats: Option<usize>,
    /// On a statistics mismatch continue with oracle statistics instead of failing.
    #[arg(long)]
    stats_fallback: bool,
    /// Run sweep points concurrently.
    #[arg(long)]
    parallel_points: bool,
}

fn build_spec(args: &RunArgs) -> cf_rsma::Result<SweepSpec> {
    let preset: Preset = args.preset.parse()?;
    let mut base = SweepSpec::preset_base(preset);
    if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        base = SimConfig::from_toml_str_over(&base, &text)?;
    }
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    if let Some(d) = args.drops {
        base.drops = d;
    }
    if let Some(r) = args.realizations {
        base.realizations = r;
    }
    let mut spec = SweepSpec::from_preset(preset, base);
    if let Some(m) = &args.modes {
        spec.modes = parse_modes(m)?;
    }
    if !args.sweeps.is_empty() {
        spec.axes = args
            .sweeps
            .iter()
            .map(|s| parse_axis_spec(s))
            .collect::<cf_rsma::Result<_>>()?;
    }
    spec.validate()?;
    Ok(spec)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::PilotCapacity { .. } | Error::Clustering(_) => 2,
        Error::StatsMismatch { .. } => 3,
        _ => 1,
    }
}

fn run(args: RunArgs) -> cf_rsma::Result<()> {
    let spec = build_spec(&args)?;
    let options = RunOptions {
        threads: args.threads,
        verify_samples: args.verify_stats,
        on_mismatch: if args.stats_fallback {
            MismatchPolicy::Fallback
        } else {
            MismatchPolicy::Fail
        },
    };
    let result = run_and_write(&spec, &options, args.parallel_points, &args.output, args.plot)?;
    for (p, r) in result.points.iter().zip(&result.reports) {
        let axes: Vec<String> = p.values.iter().map(|(a, v)| format!("{}={v}", a.as_str())).collect();
        eprintln!(
            "{:<18} {:<28} sum SE {:.4} +- {:.4}",
            p.mode.as_str(),
            axes.join(" "),
            r.se_sum,
            r.se_sum_stderr
        );
        for flag in &r.stats_flags {
            eprintln!("  warning: {flag}");
        }
    }
    eprintln!("wrote {}", args.output.join("results.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Config { preset } => preset.parse::<Preset>().map(|p| {
            print!("{}", SweepSpec::preset_base(p).to_toml_string());
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
