use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use wastetwin_core::control::{run_adaptive_campaign, run_pid_scenario, safety::write_events_csv, CampaignReport, PidGains};
use wastetwin_core::plant::peak_day;
use wastetwin_core::sortline::line::SortOutcome;
use wastetwin_core::sortline::{run_sortline, BiodegradableFragment, SortReport};
use wastetwin_core::telemetry::{config_digest, format_g17, RunManifest, TelemetryRun};

use crate::config::{RunConfig, ScenarioSource};
use crate::CliError;

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Files are collected in memory and written together at the end.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    fn json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(runtime)?;
        text.push(b'\n');
        self.add(rel, text);
        Ok(())
    }

    fn telemetry(&mut self, rel: impl Into<PathBuf>, run: &TelemetryRun) -> Result<(), CliError> {
        let mut buf = Vec::new();
        run.write_csv(&mut buf).map_err(runtime)?;
        self.add(rel, buf);
        Ok(())
    }

    fn nest(&mut self, dir: &str, other: Outputs) {
        for (p, b) in other.files {
            self.files.push((Path::new(dir).join(p), b));
        }
    }

    fn write(self, root: &Path) -> Result<(), CliError> {
        for (rel, bytes) in self.files {
            let path = root.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
            }
            let f = fs::File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(f);
            w.write_all(&bytes)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// The digest ignores where outputs go, so identical runs share a run id.
fn manifest(config: &RunConfig, start_min: f64, end_min: f64) -> Result<RunManifest, CliError> {
    let mut c = config.clone();
    c.out_dir = None;
    let digest = config_digest(&c).map_err(runtime)?;
    Ok(RunManifest::new(config.seeds(), digest, start_min, end_min))
}

#[derive(Debug, Clone, Default)]
pub struct DigestOptions {
    pub days: Option<f64>,
    pub scenario: Option<String>,
    pub fragment: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigestSummary {
    pub scenario: String,
    pub vs_loaded_g: f64,
    pub days: f64,
    pub dt_min: f64,
    pub setpoint_temperature: f64,
    pub rpm: f64,
    pub gains: PidGains,
    pub total_gas_l: f64,
    pub peak_day: Option<usize>,
    pub daily_gas_l: Vec<f64>,
    pub safety_events: usize,
}

fn digest_run(config: &RunConfig, source: ScenarioSource<'_>) -> Result<(DigestSummary, Outputs), CliError> {
    let plan = config.digest_plan(source)?;
    let out = run_pid_scenario(
        &plan.model,
        &plan.gains,
        &config.safety,
        &config.sensors,
        plan.setpoint,
        plan.rpm,
        plan.days,
        plan.dt_min,
    )
    .map_err(runtime)?;
    let daily = out.run.daily_yields();
    let summary = DigestSummary {
        scenario: plan.model.scenario.name.clone(),
        vs_loaded_g: plan.model.scenario.vs_loaded,
        days: plan.days,
        dt_min: plan.dt_min,
        setpoint_temperature: plan.setpoint,
        rpm: plan.rpm,
        gains: plan.gains,
        total_gas_l: daily.iter().sum(),
        peak_day: peak_day(&daily),
        daily_gas_l: daily.clone(),
        safety_events: out.safety_events.len(),
    };
    let mut files = Outputs::default();
    files.telemetry("telemetry.csv", &out.run.telemetry)?;
    let mut csv = String::from("day,gas_L\n");
    for (d, g) in daily.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", d + 1, format_g17(*g)));
    }
    files.add("daily_yield.csv", csv.into_bytes());
    let mut ev = Vec::new();
    write_events_csv(&out.safety_events, &mut ev).map_err(runtime)?;
    files.add("safety_events.csv", ev);
    files.json("digest_summary.json", &summary)?;
    files.json("manifest.json", &manifest(config, 0.0, out.run.final_state.t_min)?)?;
    Ok((summary, files))
}

pub fn cmd_digest(config: &RunConfig, opts: &DigestOptions, out_dir: &Path) -> Result<DigestSummary, CliError> {
    let mut config = config.clone();
    if let Some(d) = opts.days {
        config.digest.days = d;
    }
    if opts.scenario.is_some() && opts.fragment.is_some() {
        return Err(CliError::Usage("--scenario and --scenario-fragment are mutually exclusive".into()));
    }
    if let Some(s) = &opts.scenario {
        config.digest.scenario = s.clone();
    }
    let source = match &opts.fragment {
        Some(p) => ScenarioSource::Fragment(p),
        None => ScenarioSource::Named(&config.digest.scenario),
    };
    let (summary, files) = digest_run(&config, source)?;
    files.write(out_dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct OptimizeOptions {
    pub objective: Option<String>,
    pub days: Option<f64>,
    pub target_kpa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSummary {
    pub cycles: usize,
    pub degraded_cycles: usize,
    pub final_setpoint: Option<[f64; 2]>,
    pub heldout_r2: Option<f64>,
    pub stabilization_ratio: Option<f64>,
}

fn optimize_run(config: &RunConfig) -> Result<(CampaignReport, Outputs), CliError> {
    let plan = config.optimize_plan()?;
    let outcome = run_adaptive_campaign(
        &plan.model,
        &config.campaign,
        &plan.gains,
        &config.safety,
        &config.sensors,
        plan.days,
        plan.dt_min,
    )
    .map_err(runtime)?;
    let report = outcome.report;
    let mut files = Outputs::default();
    files.json("campaign.json", &report)?;
    for c in &report.cycles {
        if c.pso_trace.is_empty() {
            continue;
        }
        let mut csv = String::from("iteration,best_value\n");
        for p in &c.pso_trace {
            csv.push_str(&format!("{},{}\n", p.iteration, format_g17(p.best_value)));
        }
        files.add(format!("pso_traces/cycle_{:03}.csv", c.cycle), csv.into_bytes());
    }
    let mut csv = String::from("t_min,pressure_kpa\n");
    for (t, p) in &report.pressure_trace {
        csv.push_str(&format!("{},{}\n", format_g17(*t), format_g17(*p)));
    }
    files.add("pressure_trace.csv", csv.into_bytes());
    files.telemetry("telemetry.csv", &outcome.telemetry)?;
    let mut ev = Vec::new();
    write_events_csv(&report.safety_events, &mut ev).map_err(runtime)?;
    files.add("safety_events.csv", ev);
    let end = outcome.telemetry.records().last().map_or(0.0, |r| r.t);
    files.json("manifest.json", &manifest(config, 0.0, end)?)?;
    Ok((report, files))
}

fn summarize(report: &CampaignReport) -> OptimizeSummary {
    use wastetwin_core::control::CycleStatus;
    OptimizeSummary {
        cycles: report.cycles.len(),
        degraded_cycles: report.cycles.iter().filter(|c| c.status == CycleStatus::Degraded).count(),
        final_setpoint: report.cycles.last().map(|c| [c.setpoint_temperature, c.setpoint_rpm]),
        heldout_r2: report.heldout_r2,
        stabilization_ratio: report.stabilization_ratio,
    }
}

fn apply_optimize_options(config: &mut RunConfig, opts: &OptimizeOptions) -> Result<(), CliError> {
    if let Some(d) = opts.days {
        config.optimize.days = d;
    }
    if let Some(t) = opts.target_kpa {
        config.optimize.track_target_kpa = t;
    }
    if let Some(o) = &opts.objective {
        config.set_objective(o)?;
    } else if opts.target_kpa.is_some() {
        config.set_objective("track_pressure")?;
    }
    Ok(())
}

pub fn cmd_optimize(config: &RunConfig, opts: &OptimizeOptions, out_dir: &Path) -> Result<OptimizeSummary, CliError> {
    let mut config = config.clone();
    apply_optimize_options(&mut config, opts)?;
    let (report, files) = optimize_run(&config)?;
    files.write(out_dir)?;
    Ok(summarize(&report))
}

fn sortline_run(config: &RunConfig, objects: usize, base: &str) -> Result<(SortOutcome, Outputs), CliError> {
    config.check_sortline(objects)?;
    let stream = wastetwin_core::sortline::StreamConfig { objects, ..config.stream.clone() };
    let outcome = run_sortline(&stream, &config.classifier, &config.cell, &config.arm, base).map_err(runtime)?;
    let mut files = Outputs::default();
    files.json("sort_report.json", &outcome.report)?;
    files.add("biodegradable_fragment.toml", outcome.fragment.to_toml().into_bytes());
    files.json("manifest.json", &manifest(config, 0.0, outcome.report.makespan_min)?)?;
    Ok((outcome, files))
}

pub fn cmd_sortline(config: &RunConfig, objects: Option<usize>, out_dir: &Path) -> Result<SortReport, CliError> {
    let mut config = config.clone();
    if let Some(n) = objects {
        config.stream.objects = n;
    }
    // The fragment must name a scenario the digest stage can load.
    resolve_base(&config)?;
    let (outcome, files) = sortline_run(&config, config.stream.objects, &config.pipeline.substrate)?;
    files.write(out_dir)?;
    Ok(outcome.report)
}

fn resolve_base(config: &RunConfig) -> Result<(), CliError> {
    crate::config::resolve_scenario(ScenarioSource::Named(&config.pipeline.substrate)).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub sortline: SortReport,
    pub fragment: BiodegradableFragment,
    pub digest: DigestSummary,
    pub optimize: OptimizeSummary,
}

/// Sort, digest the sorted food waste, then adapt setpoints.
pub fn cmd_pipeline(config: &RunConfig, out_dir: &Path) -> Result<PipelineSummary, CliError> {
    let objects = config.pipeline.objects;
    config.check_sortline(objects)?;
    let probe = BiodegradableFragment { base: config.pipeline.substrate.clone(), vs_loaded: 0.0 };
    config.digest_plan(ScenarioSource::Inline(&probe))?;
    config.optimize_plan()?;

    let (sorted, sort_files) = sortline_run(config, objects, &config.pipeline.substrate)?;
    let (digest, digest_files) = digest_run(config, ScenarioSource::Inline(&sorted.fragment))?;
    let (report, opt_files) = optimize_run(config)?;

    let summary = PipelineSummary {
        sortline: sorted.report,
        fragment: sorted.fragment,
        digest,
        optimize: summarize(&report),
    };
    let mut files = Outputs::default();
    files.nest("sortline", sort_files);
    files.nest("digest", digest_files);
    files.nest("optimize", opt_files);
    files.json("pipeline_summary.json", &summary)?;
    files.json("manifest.json", &manifest(config, 0.0, 0.0)?)?;
    files.write(out_dir)?;
    Ok(summary)
}
