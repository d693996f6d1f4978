//! Pick-and-place cell fed by a Poisson object stream.
//!
//! One arm serves objects first come, first served. Each object is
//! classified, mapped from its pixel to the table, solved for a tool-down
//! grasp, and picked; a failed grasp is retried once and then the object
//! passes through unsorted. Masses are integer milligrams so the mass
//! balance closes exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierModel, Detection};
use super::homography::{fit_homography, pixel_to_world, Homography};
use super::kinematics::{inverse_kinematics, move_time, ArmModel, Pose};
use super::metrics::{accuracy, AccuracyReport};
use super::{SortlineError, WasteClass};

/// Tool z axis pointing straight down.
const TOOL_DOWN: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub objects: usize,
    /// Optional cut-off on arrival time, min.
    pub duration_min: Option<f64>,
    pub arrival_rate_per_min: f64,
    /// Relative class frequencies in [`WasteClass::ALL`] order.
    pub class_mix: [f64; 4],
    /// Median wet mass per item, g.
    pub mass_median_g: f64,
    /// Standard deviation of ln(mass).
    pub mass_sigma: f64,
    /// Volatile-solids fraction of food-waste wet mass.
    pub food_vs_fraction: f64,
    pub image_size: [f64; 2],
    /// Pixels kept clear at the image border.
    pub image_margin: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            objects: 10_000,
            duration_min: None,
            arrival_rate_per_min: 4.0,
            class_mix: [0.4, 0.15, 0.25, 0.2],
            mass_median_g: 5.0,
            mass_sigma: 0.4,
            food_vs_fraction: 0.2,
            image_size: [640.0, 480.0],
            image_margin: 20.0,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), SortlineError> {
        let err = |m: String| Err(SortlineError::Config(m));
        if self.objects == 0 {
            return err("stream.objects must be >= 1".into());
        }
        if let Some(d) = self.duration_min {
            if !(d.is_finite() && d > 0.0) {
                return err(format!("stream.duration_min must be > 0, got {d}"));
            }
        }
        if !(self.arrival_rate_per_min.is_finite() && self.arrival_rate_per_min > 0.0) {
            return err("stream.arrival_rate_per_min must be > 0".into());
        }
        if self.class_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return err("stream.class_mix needs non-negative weights with a positive sum".into());
        }
        if !(self.mass_median_g.is_finite() && self.mass_median_g > 0.0) {
            return err("stream.mass_median_g must be > 0".into());
        }
        if !(self.mass_sigma.is_finite() && self.mass_sigma >= 0.0) {
            return err("stream.mass_sigma must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.food_vs_fraction) {
            return err("stream.food_vs_fraction must lie in [0, 1]".into());
        }
        let [w, h] = self.image_size;
        if !(w.is_finite() && h.is_finite() && self.image_margin >= 0.0 && 2.0 * self.image_margin < w.min(h)) {
            return err("stream.image_size must exceed twice image_margin".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correspondence {
    pub pixel: [f64; 2],
    /// Table plane in the arm base frame, m.
    pub world: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub threshold: f64,
    /// Probability that a single grasp attempt fails.
    pub pick_failure_prob: f64,
    pub grip_s: f64,
    pub release_s: f64,
    /// Grasp height above the table plane, m.
    pub pick_height: f64,
    pub calibration: Vec<Correspondence>,
    /// Place positions in [`WasteClass::ALL`] order, m.
    pub bins: [[f64; 3]; 4],
    pub ready_joints: [f64; 6],
    pub seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        let c = |pixel: [f64; 2], world: [f64; 2]| Correspondence { pixel, world };
        Self {
            threshold: 0.5,
            pick_failure_prob: 0.02,
            grip_s: 0.8,
            release_s: 0.5,
            pick_height: 0.03,
            // Slight keystone: the near edge of the image covers less table.
            calibration: vec![
                c([0.0, 0.0], [0.24, -0.075]),
                c([640.0, 0.0], [0.24, 0.075]),
                c([640.0, 480.0], [0.14, 0.065]),
                c([0.0, 480.0], [0.14, -0.065]),
            ],
            bins: [[0.12, -0.15, 0.08], [0.20, -0.14, 0.08], [0.20, 0.14, 0.08], [0.12, 0.15, 0.08]],
            ready_joints: [0.34, 1.78, 1.93, -2.14, 1.5708, -1.23],
            seed: 0,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<(), SortlineError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SortlineError::Config(format!("cell.threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.pick_failure_prob) {
            return Err(SortlineError::Config("cell.pick_failure_prob must lie in [0, 1]".into()));
        }
        for (name, v) in [("grip_s", self.grip_s), ("release_s", self.release_s), ("pick_height", self.pick_height)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SortlineError::Config(format!("cell.{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn homography(&self) -> Result<Homography, SortlineError> {
        let pairs: Vec<_> = self.calibration.iter().map(|c| (c.pixel, c.world)).collect();
        fit_homography(&pairs)
            .map(|f| f.homography)
            .map_err(|e| SortlineError::Config(format!("cell.calibration: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NotAccepted,
    Kinematics,
    PickFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub object: usize,
    pub t_min: f64,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortReport {
    pub objects: usize,
    pub detected: usize,
    pub accepted: usize,
    pub binned: usize,
    pub binned_correctly: usize,
    pub skipped: usize,
    pub reattempts: usize,
    pub threshold: f64,
    /// Over every detection, as if the threshold were 0.
    pub accuracy: Option<AccuracyReport<WasteClass>>,
    /// Over detections accepted at `threshold`.
    pub accuracy_at_threshold: Option<AccuracyReport<WasteClass>>,
    pub makespan_min: f64,
    /// Binned objects per hour of makespan.
    pub throughput_per_hour: f64,
    pub mass_in_mg: u64,
    pub mass_binned_mg: u64,
    pub mass_skipped_mg: u64,
    pub food_waste_binned_mg: u64,
    pub biodegradable_vs_g: f64,
    pub skips: Vec<SkipRecord>,
}

/// Substrate hand-off to the digester: a base scenario name and the loaded
/// volatile solids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiodegradableFragment {
    pub base: String,
    pub vs_loaded: f64,
}

impl BiodegradableFragment {
    pub fn to_toml(&self) -> String {
        format!(
            "# Biodegradable output of a sortline run.\nbase = {}\nvs_loaded = {:?}\n",
            toml::Value::String(self.base.clone()),
            self.vs_loaded
        )
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, SortlineError> {
        let f: Self = toml::from_str(text).map_err(|e| SortlineError::Config(format!("{origin}: {e}")))?;
        if !(f.vs_loaded.is_finite() && f.vs_loaded >= 0.0) {
            return Err(SortlineError::Config(format!("{origin}: vs_loaded must be >= 0")));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone)]
pub struct SortOutcome {
    pub report: SortReport,
    pub fragment: BiodegradableFragment,
    pub detections: Vec<Detection>,
}

fn sample_class(mix: &[f64; 4], u: f64) -> WasteClass {
    let total: f64 = mix.iter().sum();
    let mut acc = 0.0;
    for (i, w) in mix.iter().enumerate() {
        acc += w / total;
        if u < acc && *w > 0.0 {
            return WasteClass::ALL[i];
        }
    }
    WasteClass::ALL[mix.iter().rposition(|w| *w > 0.0).expect("positive weight")]
}

struct PlacePlan {
    joints: [[f64; 6]; 4],
}

fn plan_bins(arm: &ArmModel, cell: &CellConfig) -> Result<PlacePlan, SortlineError> {
    let mut joints = [[0.0; 6]; 4];
    for (k, bin) in cell.bins.iter().enumerate() {
        let pose = Pose { position: *bin, rotation: TOOL_DOWN };
        joints[k] = inverse_kinematics(arm, &pose, &cell.ready_joints)
            .map_err(|e| SortlineError::Config(format!("cell.bins[{k}] ({}): {e}", WasteClass::ALL[k])))?
            .joints;
    }
    Ok(PlacePlan { joints })
}

pub fn run_sortline(
    stream: &StreamConfig,
    classifier: &ClassifierModel,
    cell: &CellConfig,
    arm: &ArmModel,
    base_scenario: &str,
) -> Result<SortOutcome, SortlineError> {
    stream.validate()?;
    cell.validate()?;
    arm.validate()?;
    let h = cell.homography()?;
    let mut ready = cell.ready_joints;
    arm.project(&mut ready);
    let plan = plan_bins(arm, cell)?;
    let mut detector = Classifier::new(classifier.clone())?;

    let mut stream_rng = ChaCha8Rng::seed_from_u64(stream.seed);
    let mut pick_rng = ChaCha8Rng::seed_from_u64(cell.seed);
    let gap = Exp::new(stream.arrival_rate_per_min).map_err(|e| SortlineError::Config(e.to_string()))?;
    let mass = LogNormal::new(stream.mass_median_g.ln(), stream.mass_sigma)
        .map_err(|e| SortlineError::Config(e.to_string()))?;
    let [w, hgt] = stream.image_size;
    let m = stream.image_margin;

    let mut report = SortReport {
        objects: 0,
        detected: 0,
        accepted: 0,
        binned: 0,
        binned_correctly: 0,
        skipped: 0,
        reattempts: 0,
        threshold: cell.threshold,
        accuracy: None,
        accuracy_at_threshold: None,
        makespan_min: 0.0,
        throughput_per_hour: 0.0,
        mass_in_mg: 0,
        mass_binned_mg: 0,
        mass_skipped_mg: 0,
        food_waste_binned_mg: 0,
        biodegradable_vs_g: 0.0,
        skips: Vec::new(),
    };
    let mut detections = Vec::with_capacity(stream.objects);
    let mut t_arrival = 0.0;
    let mut arm_free = 0.0f64;

    for object in 0..stream.objects {
        t_arrival += gap.sample(&mut stream_rng);
        if stream.duration_min.is_some_and(|d| t_arrival > d) {
            break;
        }
        let class = sample_class(&stream.class_mix, stream_rng.random());
        let mg = (mass.sample(&mut stream_rng) * 1000.0).round().max(1.0) as u64;
        let pixel = [stream_rng.random_range(m..=w - m), stream_rng.random_range(m..=hgt - m)];
        let grasp_fails = [pick_rng.random::<f64>() < cell.pick_failure_prob, pick_rng.random::<f64>() < cell.pick_failure_prob];

        report.objects += 1;
        report.mass_in_mg += mg;
        let det = detector.classify(class, pixel, cell.threshold)?;
        detections.push(det);
        report.detected += usize::from(det.predicted_class.is_some());

        let skip = |report: &mut SortReport, t: f64, reason: SkipReason, detail: String| {
            report.skipped += 1;
            report.mass_skipped_mg += mg;
            report.skips.push(SkipRecord { object, t_min: t, reason, detail });
        };
        let Some(predicted) = det.predicted_class.filter(|_| det.accepted) else {
            skip(&mut report, t_arrival, SkipReason::NotAccepted, format!("confidence {:.3}", det.confidence));
            continue;
        };
        report.accepted += 1;

        let start = t_arrival.max(arm_free);
        let grasp = pixel_to_world(&h, pixel).and_then(|[x, y]| {
            let pose = Pose { position: [x, y, cell.pick_height], rotation: TOOL_DOWN };
            inverse_kinematics(arm, &pose, &ready)
        });
        let q_pick = match grasp {
            Ok(s) => s.joints,
            Err(e) => {
                skip(&mut report, start, SkipReason::Kinematics, e.to_string());
                continue;
            }
        };
        let approach_s = move_time(arm, &ready, &q_pick);
        let mut busy_s = approach_s + cell.grip_s;
        let picked = if !grasp_fails[0] {
            true
        } else {
            report.reattempts += 1;
            busy_s += cell.grip_s;
            !grasp_fails[1]
        };
        if !picked {
            arm_free = start + (busy_s + approach_s) / 60.0;
            skip(&mut report, start, SkipReason::PickFailed, "grasp failed twice".into());
            continue;
        }
        let q_bin = &plan.joints[predicted.index()];
        busy_s += move_time(arm, &q_pick, q_bin) + cell.release_s + move_time(arm, q_bin, &ready);
        arm_free = start + busy_s / 60.0;
        report.binned += 1;
        report.mass_binned_mg += mg;
        if predicted == class {
            report.binned_correctly += 1;
            if class.is_biodegradable() {
                report.food_waste_binned_mg += mg;
            }
        }
    }

    let all: Vec<_> = detections
        .iter()
        .filter_map(|d| d.predicted_class.map(|p| (d.true_class, p)))
        .collect();
    let kept: Vec<_> = detections
        .iter()
        .filter(|d| d.accepted)
        .filter_map(|d| d.predicted_class.map(|p| (d.true_class, p)))
        .collect();
    report.accuracy = accuracy(&all, &WasteClass::ALL).ok();
    report.accuracy_at_threshold = accuracy(&kept, &WasteClass::ALL).ok();
    report.makespan_min = t_arrival.max(arm_free);
    report.throughput_per_hour = if report.makespan_min > 0.0 {
        report.binned as f64 / (report.makespan_min / 60.0)
    } else {
        0.0
    };
    report.biodegradable_vs_g = report.food_waste_binned_mg as f64 / 1000.0 * stream.food_vs_fraction;
    let fragment = BiodegradableFragment {
        base: base_scenario.to_string(),
        vs_loaded: report.biodegradable_vs_g,
    };
    Ok(SortOutcome { report, fragment, detections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(objects: usize) -> StreamConfig {
        StreamConfig { objects, ..StreamConfig::default() }
    }

    fn run(stream: &StreamConfig, cell: &CellConfig) -> SortOutcome {
        run_sortline(stream, &ClassifierModel::default(), cell, &ArmModel::default(), "food_waste").unwrap()
    }

    #[test]
    fn default_cell_reaches_the_whole_image() {
        let cell = CellConfig::default();
        let h = cell.homography().unwrap();
        let arm = ArmModel::default();
        for u in [20.0, 320.0, 620.0] {
            for v in [20.0, 240.0, 460.0] {
                let [x, y] = pixel_to_world(&h, [u, v]).unwrap();
                let pose = Pose { position: [x, y, cell.pick_height], rotation: TOOL_DOWN };
                assert!(inverse_kinematics(&arm, &pose, &cell.ready_joints).is_ok(), "({u}, {v})");
            }
        }
    }

    #[test]
    fn diagonal_classifier_scores_near_its_diagonal() {
        let out = run(&small(10_000), &CellConfig::default());
        let acc = out.report.accuracy.as_ref().unwrap().accuracy;
        assert!((acc - 0.98).abs() <= 0.01, "{acc}");
        assert!(out.report.accuracy_at_threshold.as_ref().unwrap().accuracy >= acc);
        assert!(out.report.skips.iter().all(|s| s.reason != SkipReason::Kinematics));
    }

    #[test]
    fn certain_pick_failure_bins_nothing() {
        let cell = CellConfig { pick_failure_prob: 1.0, ..CellConfig::default() };
        let r = run(&small(300), &cell).report;
        assert_eq!(r.binned, 0);
        assert_eq!(r.throughput_per_hour, 0.0);
        assert_eq!(r.reattempts, r.accepted);
        assert_eq!(r.fragment_mass(), 0.0);
    }

    #[test]
    fn same_seed_same_report() {
        let a = run(&small(500), &CellConfig::default()).report;
        let b = run(&small(500), &CellConfig::default()).report;
        assert_eq!(a, b);
    }

    #[test]
    fn fragment_round_trips_through_toml() {
        let f = BiodegradableFragment { base: "food_waste".into(), vs_loaded: 12.345678901234567 };
        assert_eq!(BiodegradableFragment::parse(&f.to_toml(), "mem").unwrap(), f);
        assert!(BiodegradableFragment::parse("base = \"x\"\nvs_loaded = -1.0\n", "mem").is_err());
    }

    #[test]
    fn duration_cuts_the_stream() {
        let s = StreamConfig { duration_min: Some(10.0), ..small(10_000) };
        let r = run(&s, &CellConfig::default()).report;
        assert!(r.objects < 100 && r.objects > 10);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(small(0).validate().is_err());
        let cell = CellConfig { threshold: 1.5, ..CellConfig::default() };
        assert!(cell.validate().is_err());
        let mut cell = CellConfig::default();
        cell.calibration.truncate(3);
        assert!(cell.homography().is_err());
        let mut cell = CellConfig::default();
        cell.bins[1] = [2.0, 0.0, 0.0];
        assert!(run_sortline(&small(5), &ClassifierModel::default(), &cell, &ArmModel::default(), "food_waste").is_err());
    }

    impl SortReport {
        fn fragment_mass(&self) -> f64 {
            self.biodegradable_vs_g
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mass_balance_closes(seed in 0u64..1000, fail in 0.0f64..1.0, thr in 0.0f64..1.0) {
            let s = StreamConfig { seed, ..small(150) };
            let cell = CellConfig { pick_failure_prob: fail, threshold: thr, seed, ..CellConfig::default() };
            let r = run(&s, &cell).report;
            prop_assert_eq!(r.mass_in_mg, r.mass_binned_mg + r.mass_skipped_mg);
            prop_assert_eq!(r.objects, r.binned + r.skipped);
        }

        #[test]
        fn raising_threshold_never_adds_wrong_acceptances(seed in 0u64..1000, lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let s = StreamConfig { seed, ..small(200) };
            let wrong = |t: f64| {
                let cell = CellConfig { threshold: t, ..CellConfig::default() };
                run(&s, &cell).detections.iter().filter(|d| d.accepted && !d.is_correct()).count()
            };
            prop_assert!(wrong(hi) <= wrong(lo));
        }
    }
}
