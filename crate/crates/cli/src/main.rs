use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wastetwin_cli::{cmd_digest, cmd_optimize, cmd_pipeline, cmd_sortline, CliError, DigestOptions, OptimizeOptions, RunConfig};

#[derive(Parser)]
#[command(name = "wastetwin", version, about = "Waste sorting cell and biogas digester twin")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch digestion under PID temperature control.
    Digest {
        #[arg(long)]
        days: Option<f64>,
        /// Built-in scenario name or scenario file.
        #[arg(long)]
        scenario: Option<String>,
        /// Fragment written by `sortline`.
        #[arg(long)]
        scenario_fragment: Option<PathBuf>,
    },
    /// Surrogate-assisted setpoint adaptation on a fed digester.
    Optimize {
        /// maximize_gas_rate or track_pressure.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        days: Option<f64>,
        /// Pressure target for track_pressure, kPa.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Pick-and-place sorting of a simulated object stream.
    Sortline {
        #[arg(long)]
        objects: Option<usize>,
    },
    /// Sortline, then digest its food waste, then optimize.
    Pipeline,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config = RunConfig::load_or_default(cli.config.as_deref())?;
    let out = cli
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let line = match cli.command {
        Command::Digest { days, scenario, scenario_fragment } => {
            let s = cmd_digest(&config, &DigestOptions { days, scenario, fragment: scenario_fragment }, &out)?;
            format!(
                "digest: {} total {:.3} L over {} d, peak day {}",
                s.scenario,
                s.total_gas_l,
                s.days,
                s.peak_day.map_or("-".into(), |d| d.to_string())
            )
        }
        Command::Optimize { objective, days, target } => {
            let s = cmd_optimize(&config, &OptimizeOptions { objective, days, target_kpa: target }, &out)?;
            format!(
                "optimize: {} cycles ({} degraded), held-out R² {}, stabilization {}",
                s.cycles,
                s.degraded_cycles,
                s.heldout_r2.map_or("n/a".into(), |v| format!("{v:.4}")),
                s.stabilization_ratio.map_or("n/a".into(), |v| format!("{v:.4}"))
            )
        }
        Command::Sortline { objects } => {
            let r = cmd_sortline(&config, objects, &out)?;
            format!(
                "sortline: {} objects, accuracy {}, {} binned, {} skipped, {:.1} objects/h",
                r.objects,
                r.accuracy.as_ref().map_or("n/a".into(), |a| format!("{:.4}", a.accuracy)),
                r.binned,
                r.skipped,
                r.throughput_per_hour
            )
        }
        Command::Pipeline => {
            let s = cmd_pipeline(&config, &out)?;
            format!(
                "pipeline: {:.3} g VS sorted, {:.3} L gas, held-out R² {}",
                s.fragment.vs_loaded,
                s.digest.total_gas_l,
                s.optimize.heldout_r2.map_or("n/a".into(), |v| format!("{v:.4}"))
            )
        }
    };
    Ok(format!("{line}\noutputs in {}", out.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
