//! Run configuration: one TOML document, optionally layered over included
//! files, resolved and validated before anything is simulated or written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wastetwin_core::control::{AdaptationPolicy, ObjectiveSpec, PidGains, SafetyEnvelope};
use wastetwin_core::plant::{load_scenario, PlantModel, ScenarioFile, SensorModel};
use wastetwin_core::sortline::{ArmModel, BiodegradableFragment, CellConfig, ClassifierModel, StreamConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigestConfig {
    /// Built-in scenario name or path to a scenario file.
    pub scenario: String,
    pub days: f64,
    pub dt_min: f64,
    /// Defaults to the scenario's optimum temperature.
    pub setpoint_temperature: Option<f64>,
    pub rpm: f64,
}

impl Default for DigestConfig {
    fn default() -> Self {
        Self {
            scenario: "lignocellulose".into(),
            days: 10.0,
            dt_min: 15.0,
            setpoint_temperature: None,
            rpm: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub scenario: String,
    /// Batch load at t = 0 on top of the continuous feed, g VS.
    pub initial_vs_g: f64,
    pub days: f64,
    pub dt_min: f64,
    /// Used when the objective is set to `track_pressure` on the command line.
    pub track_target_kpa: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            scenario: "food_waste".into(),
            initial_vs_g: 0.0,
            days: 4.0,
            dt_min: 15.0,
            track_target_kpa: 4.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Objects sorted in the first stage.
    pub objects: usize,
    /// Scenario whose kinetics the sorted food waste follows.
    pub substrate: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            objects: 100,
            substrate: "food_waste".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    /// Files merged underneath this one, relative to it. Consumed on load.
    pub include: Vec<PathBuf>,
    pub digest: DigestConfig,
    pub optimize: OptimizeConfig,
    pub pipeline: PipelineConfig,
    /// Derived from the vessel by the Ziegler–Nichols rule when absent.
    pub pid: Option<PidGains>,
    pub safety: SafetyEnvelope,
    pub sensors: SensorModel,
    pub campaign: AdaptationPolicy,
    pub classifier: ClassifierModel,
    pub stream: StreamConfig,
    pub cell: CellConfig,
    pub arm: ArmModel,
}

/// Later tables win key by key; nested tables merge recursively.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table, CliError> {
    let canon = path
        .canonicalize()
        .map_err(|e| CliError::Config(format!("cannot read config '{}': {e}", path.display())))?;
    if stack.contains(&canon) {
        return Err(CliError::Config(format!("config include cycle through '{}'", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config '{}': {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(CliError::Config(format!("{}: include entries must be strings, got {other}", path.display()))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => {
            return Err(CliError::Config(format!("{}: include must be an array, got {other}", path.display())));
        }
    };
    stack.push(canon);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        merge(&mut merged, load_table(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        // Merged over the serialized defaults so a partial nested table keeps
        // its parent's defaults rather than the nested type's own.
        let mut table = toml::Table::try_from(Self::default())
            .map_err(|e| CliError::Config(format!("cannot serialize built-in defaults: {e}")))?;
        merge(&mut table, load_table(path, &mut Vec::new())?);
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Seeds of every stochastic component, keyed by component.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("campaign".to_string(), self.campaign.seed),
            ("classifier".to_string(), self.classifier.seed),
            ("pick".to_string(), self.cell.seed),
            ("pso".to_string(), self.campaign.pso.seed),
            ("sensors".to_string(), self.sensors.seed),
            ("stream".to_string(), self.stream.seed),
        ])
    }
}

fn config_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{context}: {e}"))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{name} must be > 0, got {v}")))
    }
}

/// A fully checked digest run.
#[derive(Debug, Clone)]
pub struct DigestPlan {
    pub model: PlantModel,
    pub gains: PidGains,
    pub setpoint: f64,
    pub rpm: f64,
    pub days: f64,
    pub dt_min: f64,
}

pub enum ScenarioSource<'a> {
    Named(&'a str),
    Fragment(&'a Path),
    /// A fragment produced in-process.
    Inline(&'a BiodegradableFragment),
}

pub fn resolve_scenario(source: ScenarioSource<'_>) -> Result<ScenarioFile, CliError> {
    let from_fragment = |f: &BiodegradableFragment| -> Result<ScenarioFile, CliError> {
        let mut sc = load_scenario(&f.base).map_err(|e| CliError::Config(e.to_string()))?;
        sc.substrate.vs_loaded = f.vs_loaded;
        Ok(sc)
    };
    match source {
        ScenarioSource::Named(name) => load_scenario(name).map_err(|e| CliError::Config(e.to_string())),
        ScenarioSource::Fragment(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read scenario fragment '{}': {e}", path.display())))?;
            let f = BiodegradableFragment::parse(&text, &path.display().to_string())
                .map_err(|e| CliError::Config(e.to_string()))?;
            from_fragment(&f)
        }
        ScenarioSource::Inline(f) => from_fragment(f),
    }
}

impl RunConfig {
    fn gains_for(&self, model: &PlantModel, rpm: f64, dt_min: f64) -> Result<PidGains, CliError> {
        let g = self
            .pid
            .unwrap_or_else(|| PidGains::ziegler_nichols(&model.params, rpm, dt_min));
        g.validate().map_err(config_err("pid"))?;
        Ok(g)
    }

    fn check_shared(&self) -> Result<(), CliError> {
        self.safety.validate().map_err(config_err("safety"))?;
        self.sensors.validate().map_err(config_err("sensors"))?;
        Ok(())
    }

    pub fn digest_plan(&self, source: ScenarioSource<'_>) -> Result<DigestPlan, CliError> {
        let d = &self.digest;
        positive("days", d.days)?;
        positive("digest.dt_min", d.dt_min)?;
        self.check_shared()?;
        let sc = resolve_scenario(source)?;
        let model = PlantModel::new(sc.vessel, sc.substrate).map_err(config_err("scenario"))?;
        let setpoint = d.setpoint_temperature.unwrap_or(model.scenario.t_opt);
        let t = self.safety.temperature;
        if !(setpoint >= t.min && setpoint <= t.max) {
            return Err(CliError::Config(format!(
                "digest setpoint {setpoint} °C lies outside the safety envelope [{}, {}]",
                t.min, t.max
            )));
        }
        if !(d.rpm >= 0.0 && d.rpm <= model.params.rpm_max) {
            return Err(CliError::Config(format!("digest.rpm must lie in [0, {}]", model.params.rpm_max)));
        }
        let gains = self.gains_for(&model, d.rpm, d.dt_min)?;
        Ok(DigestPlan {
            model,
            gains,
            setpoint,
            rpm: d.rpm,
            days: d.days,
            dt_min: d.dt_min,
        })
    }

    pub fn optimize_plan(&self) -> Result<OptimizePlan, CliError> {
        let o = &self.optimize;
        positive("days", o.days)?;
        positive("optimize.dt_min", o.dt_min)?;
        if !(o.initial_vs_g.is_finite() && o.initial_vs_g >= 0.0) {
            return Err(CliError::Config("optimize.initial_vs_g must be >= 0".into()));
        }
        self.check_shared()?;
        let mut sc = resolve_scenario(ScenarioSource::Named(&o.scenario))?;
        sc.substrate.vs_loaded = o.initial_vs_g;
        let model = PlantModel::new(sc.vessel, sc.substrate).map_err(config_err("scenario"))?;
        self.campaign
            .validate(&self.safety, model.params.rpm_max)
            .map_err(config_err("campaign"))?;
        let boot_days = self.campaign.bootstrap_hours / 24.0;
        if o.days <= boot_days {
            return Err(CliError::Usage(format!(
                "days must exceed the {boot_days} d bootstrap, got {}",
                o.days
            )));
        }
        let gains = self.gains_for(&model, self.campaign.nominal_rpm, o.dt_min)?;
        Ok(OptimizePlan {
            model,
            gains,
            days: o.days,
            dt_min: o.dt_min,
        })
    }

    pub fn check_sortline(&self, objects: usize) -> Result<(), CliError> {
        if objects == 0 {
            return Err(CliError::Usage("objects must be >= 1".into()));
        }
        self.stream.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.classifier.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.cell.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.cell.homography().map_err(|e| CliError::Config(e.to_string()))?;
        self.arm.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn set_objective(&mut self, name: &str) -> Result<(), CliError> {
        self.campaign.objective = match name {
            "maximize_gas_rate" => ObjectiveSpec::MaximizeGasRate,
            "track_pressure" => ObjectiveSpec::TrackPressureTarget(self.optimize.track_target_kpa),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown objective '{other}' (expected maximize_gas_rate or track_pressure)"
                )))
            }
        };
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizePlan {
    pub model: PlantModel,
    pub gains: PidGains,
    pub days: f64,
    pub dt_min: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn includes_merge_under_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "base.toml", "[digest]\ndays = 3.0\nrpm = 40.0\n[stream]\nobjects = 7\n");
        let top = write(dir.path(), "top.toml", "include = [\"base.toml\"]\n[digest]\ndays = 5.0\n");
        let c = RunConfig::load(&top).unwrap();
        assert_eq!(c.digest.days, 5.0);
        assert_eq!(c.digest.rpm, 40.0);
        assert_eq!(c.stream.objects, 7);
        assert!(c.include.is_empty());
    }

    #[test]
    fn include_cycles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.toml", "include = [\"b.toml\"]\n");
        let b = write(dir.path(), "b.toml", "include = [\"a.toml\"]\n");
        assert!(matches!(RunConfig::load(&b), Err(CliError::Config(m)) if m.contains("cycle")));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", "[digest]\ndayz = 3\n");
        assert!(matches!(RunConfig::load(&p), Err(CliError::Config(_))));
    }

    #[test]
    fn digest_plan_checks_days_and_scenario() {
        let mut c = RunConfig::default();
        c.digest.days = 0.0;
        assert!(matches!(c.digest_plan(ScenarioSource::Named("lignocellulose")), Err(CliError::Usage(_))));
        let c = RunConfig::default();
        let err = c.digest_plan(ScenarioSource::Named("/no/such/file.toml")).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.toml"));
    }

    #[test]
    fn default_config_resolves() {
        let c = RunConfig::default();
        c.digest_plan(ScenarioSource::Named(&c.digest.scenario)).unwrap();
        c.optimize_plan().unwrap();
        c.check_sortline(c.stream.objects).unwrap();
    }

    #[test]
    fn seeds_cover_every_component() {
        assert_eq!(RunConfig::default().seeds().len(), 6);
    }
}
