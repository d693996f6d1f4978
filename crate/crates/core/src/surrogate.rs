//! Least-squares response surface with R² scoring.
//!
//! Expanded features are z-scored, the target is centered, and the normal
//! equations are solved on the correlation Gram matrix with a fixed ridge
//! floor on the diagonal. Coefficients are mapped back to raw units, so a
//! model always reads as `intercept + w · expand(x)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{Channel, TelemetryRun};

pub const RIDGE_FLOOR: f64 = 1e-10;
/// An exactly dependent column leaves a pivot of about twice the ridge, so
/// anything under this multiple is treated as dependent.
const COLLINEAR_PIVOT_FACTOR: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("input error: {0}")]
    Input(String),
    #[error("underdetermined fit: {rows} rows for {required} unknowns")]
    Underdetermined { rows: usize, required: usize },
    #[error("rank-deficient design: expanded columns {columns:?} are collinear")]
    Collinear { columns: Vec<usize> },
    #[error("R² undefined: observed values have zero total sum of squares")]
    UndefinedMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Linear,
    #[default]
    QuadraticWithInteractions,
}

impl FeatureMap {
    pub fn expanded_len(&self, raw: usize) -> usize {
        match self {
            FeatureMap::Linear => raw,
            FeatureMap::QuadraticWithInteractions => raw + raw + raw * raw.saturating_sub(1) / 2,
        }
    }

    /// Order: `x_i`, then `x_i²`, then `x_i·x_j` for `i < j`.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.expanded_len(x.len()));
        out.extend_from_slice(x);
        if *self == FeatureMap::QuadraticWithInteractions {
            out.extend(x.iter().map(|v| v * v));
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    out.push(x[i] * x[j]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, SurrogateError> {
        let d = Self { inputs, targets };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn raw_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, input: Vec<f64>, target: f64) {
        self.inputs.push(input);
        self.targets.push(target);
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.inputs.len() != self.targets.len() {
            return Err(SurrogateError::Input(format!(
                "{} input rows but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let dim = self.raw_dim();
        for (i, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != dim {
                return Err(SurrogateError::Input(format!(
                    "row {i} has {} features, expected {dim}",
                    x.len()
                )));
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(SurrogateError::Input(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// Averages each channel over bins `(t_from + k·w, t_from + (k+1)·w]`
    /// up to `t_to`. Left-open, so a frame logged at the instant a setpoint
    /// changes counts toward the block that produced it. Bins missing any
    /// requested channel are dropped.
    pub fn from_telemetry(
        run: &TelemetryRun,
        inputs: &[Channel],
        target: Channel,
        bin_minutes: f64,
        t_from: f64,
        t_to: f64,
    ) -> Result<Self, SurrogateError> {
        if !(bin_minutes > 0.0) {
            return Err(SurrogateError::Input("bin width must be positive".into()));
        }
        let records = run
            .read_window(&[], t_from, t_to)
            .map_err(|e| SurrogateError::Input(e.to_string()))?;
        let mut bins: BTreeMap<i64, BTreeMap<Channel, (f64, usize)>> = BTreeMap::new();
        for r in records.into_iter().filter(|r| r.t > t_from) {
            let key = ((r.t - t_from) / bin_minutes).ceil() as i64 - 1;
            let acc = bins.entry(key).or_default().entry(r.channel).or_insert((0.0, 0));
            acc.0 += r.value;
            acc.1 += 1;
        }
        let mut data = Dataset::default();
        for channels in bins.values() {
            let mean = |c: &Channel| channels.get(c).map(|(s, n)| s / *n as f64);
            let x: Option<Vec<f64>> = inputs.iter().map(mean).collect();
            if let (Some(x), Some(y)) = (x, mean(&target)) {
                data.push(x, y);
            }
        }
        data.validate()?;
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub feature_map: FeatureMap,
    /// `[intercept, w_0, w_1, ...]` in raw units.
    pub coefficients: Vec<f64>,
    /// `None` for models not produced by [`fit`].
    pub train_r2: Option<f64>,
    pub raw_dim: usize,
    pub ridge: f64,
}

impl RegressionModel {
    pub fn from_parts(feature_map: FeatureMap, raw_dim: usize, intercept: f64, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), feature_map.expanded_len(raw_dim));
        let mut coefficients = Vec::with_capacity(weights.len() + 1);
        coefficients.push(intercept);
        coefficients.extend(weights);
        Self {
            feature_map,
            coefficients,
            train_r2: None,
            raw_dim,
            ridge: 0.0,
        }
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn weights(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        if x.len() != self.raw_dim {
            return Err(SurrogateError::Input(format!(
                "expected {} features, got {}",
                self.raw_dim,
                x.len()
            )));
        }
        let z = self.feature_map.expand(x);
        Ok(self.intercept() + z.iter().zip(self.weights()).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, SurrogateError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Ordinary least squares on the expanded features.
pub fn fit(data: &Dataset, feature_map: FeatureMap) -> Result<RegressionModel, SurrogateError> {
    data.validate()?;
    let n = data.len();
    let raw = data.raw_dim();
    let p = feature_map.expanded_len(raw);
    if n < p + 1 || n < 2 {
        return Err(SurrogateError::Underdetermined {
            rows: n,
            required: p + 1,
        });
    }

    let z: Vec<Vec<f64>> = data.inputs.iter().map(|x| feature_map.expand(x)).collect();
    let nf = n as f64;
    let mean: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scale: Vec<f64> = (0..p)
        .map(|j| (z.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    let constant: Vec<usize> = (0..p)
        .filter(|&j| !(scale[j] > 1e-12 * mean[j].abs().max(1.0)))
        .collect();
    if !constant.is_empty() {
        return Err(SurrogateError::Collinear { columns: constant });
    }
    let y_mean = data.targets.iter().sum::<f64>() / nf;

    let s: Vec<Vec<f64>> = z
        .iter()
        .map(|r| (0..p).map(|j| (r[j] - mean[j]) / scale[j]).collect())
        .collect();
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, y) in s.iter().zip(&data.targets) {
        for a in 0..p {
            rhs[a] += row[a] * (y - y_mean) / nf;
            for b in 0..=a {
                gram[a][b] += row[a] * row[b] / nf;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b][a] = gram[a][b];
        }
        gram[a][a] += RIDGE_FLOOR;
    }

    let l = cholesky_with_pivot_check(&gram)?;
    let beta_std = cholesky_solve(&l, &rhs);

    let weights: Vec<f64> = beta_std.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let intercept = y_mean - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    let mut model = RegressionModel::from_parts(feature_map, raw, intercept, weights);
    model.ridge = RIDGE_FLOOR;
    let pred = model.predict_all(&data.inputs)?;
    model.train_r2 = Some(r2_score(&data.targets, &pred)?);
    Ok(model)
}

fn cholesky_with_pivot_check(g: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SurrogateError> {
    let p = g.len();
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let pivot = g[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot <= COLLINEAR_PIVOT_FACTOR * RIDGE_FLOOR {
            return Err(SurrogateError::Collinear {
                columns: collinear_partners(g, j),
            });
        }
        l[j][j] = pivot.sqrt();
        for i in j + 1..p {
            let s = g[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / l[j][j];
        }
    }
    Ok(l)
}

/// Column `j` regressed on columns `0..j`; returns those with material
/// weight plus `j` itself.
fn collinear_partners(g: &[Vec<f64>], j: usize) -> Vec<usize> {
    let mut cols = Vec::new();
    if j > 0 {
        let sub: Vec<Vec<f64>> = (0..j).map(|a| g[a][..j].to_vec()).collect();
        let rhs: Vec<f64> = (0..j).map(|a| g[a][j]).collect();
        if let Ok(l) = cholesky_with_pivot_check(&sub) {
            let c = cholesky_solve(&l, &rhs);
            cols.extend((0..j).filter(|&k| c[k].abs() > 1e-6));
        } else {
            cols.extend(0..j);
        }
    }
    cols.push(j);
    cols
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut y = vec![0.0; p];
    for i in 0..p {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        x[i] = (y[i] - (i + 1..p).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Coefficient of determination, `1 - RSS/TSS`.
pub fn r2_score(observed: &[f64], predicted: &[f64]) -> Result<f64, SurrogateError> {
    if observed.len() != predicted.len() {
        return Err(SurrogateError::Input(format!(
            "length mismatch: {} observed vs {} predicted",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.len() < 2 {
        return Err(SurrogateError::Input("need at least 2 observations".into()));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let tss: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(SurrogateError::UndefinedMetric);
    }
    let rss: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - rss / tss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::TelemetryRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain normal-equation solve by Gaussian elimination with partial
    /// pivoting, no scaling. Independent reference for well-conditioned data.
    fn oracle_ols(xs: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = xs[0].len() + 1;
        let mut a = vec![vec![0.0; p + 1]; p];
        for (x, yi) in xs.iter().zip(y) {
            let row: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += row[i] * row[j];
                }
                a[i][p] += row[i] * yi;
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn exact_linear_data() {
        let d = Dataset::new(
            (0..4).map(|x| vec![x as f64]).collect(),
            (0..4).map(|x| 2.0 * x as f64 + 1.0).collect(),
        )
        .unwrap();
        let m = fit(&d, FeatureMap::Linear).unwrap();
        assert!((m.weights()[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept() - 1.0).abs() < 1e-9);
        assert!((m.train_r2.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.predict(&[5.0]).unwrap() - 11.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_temperature_curve_is_recovered() {
        let truth = |t: f64| 3.0 + 0.5 * t - 0.02 * t * t;
        let temps: Vec<f64> = (0..12).map(|i| 10.0 + 2.5 * i as f64).collect();
        let d = Dataset::new(
            temps.iter().map(|&t| vec![t]).collect(),
            temps.iter().map(|&t| truth(t)).collect(),
        )
        .unwrap();
        let m = fit(&d, FeatureMap::QuadraticWithInteractions).unwrap();
        assert!((m.intercept() - 3.0).abs() < 1e-6, "{:?}", m.coefficients);
        assert!((m.weights()[0] - 0.5).abs() < 1e-6);
        assert!((m.weights()[1] + 0.02).abs() < 1e-6);
        assert!((m.predict(&[20.0]).unwrap() - 5.0).abs() < 1e-6);
    }

    #[test]
    fn single_row_two_features_is_underdetermined() {
        let d = Dataset::new(vec![vec![1.0, 2.0]], vec![3.0]).unwrap();
        assert!(matches!(
            fit(&d, FeatureMap::Linear),
            Err(SurrogateError::Underdetermined { rows: 1, required: 3 })
        ));
    }

    #[test]
    fn collinear_columns_are_named() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 3.0 * i as f64 + 1.0, (i * i) as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = Dataset::new(xs, y).unwrap();
        match fit(&d, FeatureMap::Linear) {
            Err(SurrogateError::Collinear { columns }) => assert_eq!(columns, vec![0, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_collinear_with_intercept() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 4.0]).collect();
        let d = Dataset::new(xs, (0..6).map(|i| i as f64).collect()).unwrap();
        assert_eq!(
            fit(&d, FeatureMap::Linear),
            Err(SurrogateError::Collinear { columns: vec![1] })
        );
    }

    #[test]
    fn predict_dimension_mismatch() {
        let m = RegressionModel::from_parts(FeatureMap::Linear, 1, 1.0, vec![2.0]);
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(SurrogateError::Input(_))));
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let m = RegressionModel::from_parts(FeatureMap::QuadraticWithInteractions, 3, 4.5, vec![0.0; 9]);
        assert_eq!(m.predict(&[1.0, -7.0, 1e3]).unwrap(), 4.5);
    }

    #[test]
    fn expansion_order() {
        let z = FeatureMap::QuadraticWithInteractions.expand(&[2.0, 3.0, 5.0]);
        assert_eq!(z, vec![2.0, 3.0, 5.0, 4.0, 9.0, 25.0, 6.0, 10.0, 15.0]);
        assert_eq!(FeatureMap::QuadraticWithInteractions.expanded_len(3), 9);
    }

    #[test]
    fn r2_identities() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((r2_score(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(r2_score(&y, &[2.5; 4]).unwrap().abs() < 1e-12);
        let r2 = r2_score(&y, &[1.1, 1.9, 3.2, 3.9]).unwrap();
        // RSS = 0.01+0.01+0.04+0.01 = 0.07, TSS = 5.
        assert!((r2 - 0.986).abs() < 1e-12);
        assert!(r2_score(&y, &[4.0, 3.0, 2.0, 1.0]).unwrap() < 0.0);
    }

    #[test]
    fn r2_errors() {
        assert_eq!(r2_score(&[2.0, 2.0], &[1.0, 3.0]), Err(SurrogateError::UndefinedMetric));
        assert!(matches!(r2_score(&[1.0], &[1.0]), Err(SurrogateError::Input(_))));
        assert!(matches!(r2_score(&[1.0, 2.0], &[1.0]), Err(SurrogateError::Input(_))));
    }

    #[test]
    fn model_json_shape() {
        let m = RegressionModel::from_parts(FeatureMap::Linear, 1, 1.0, vec![2.0]);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["feature_map"], "linear");
        assert_eq!(v["coefficients"], serde_json::json!([1.0, 2.0]));
        let back: RegressionModel = serde_json::from_value(v).unwrap();
        assert_eq!(back.coefficients, m.coefficients);
    }

    #[test]
    fn dataset_from_binned_telemetry() {
        let mut run = TelemetryRun::new();
        for m in 0..=60 {
            let t = m as f64;
            let v = 30.0 + ((m + 29) / 30) as f64;
            run.append(TelemetryRecord::ok(t, Channel::Temperature, v)).unwrap();
            run.append(TelemetryRecord::ok(t, Channel::Pressure, 2.0 * v)).unwrap();
        }
        // t = 0 sits on the left edge and is excluded.
        let d = Dataset::from_telemetry(&run, &[Channel::Temperature], Channel::Pressure, 30.0, 0.0, 60.0).unwrap();
        assert_eq!(d.inputs, vec![vec![31.0], vec![32.0]]);
        assert_eq!(d.targets, vec![62.0, 64.0]);
    }

    fn random_problem(seed: u64, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y = xs
            .iter()
            .map(|x| 1.0 + x.iter().enumerate().map(|(i, v)| (i as f64 + 0.5) * v).sum::<f64>() + rng.random_range(-0.5..0.5))
            .collect();
        (xs, y)
    }

    #[test]
    fn agrees_with_unscaled_oracle() {
        for seed in 0..10 {
            let (xs, y) = random_problem(seed, 30, 3);
            let m = fit(&Dataset::new(xs.clone(), y.clone()).unwrap(), FeatureMap::Linear).unwrap();
            let want = oracle_ols(&xs, &y);
            for (a, b) in m.coefficients.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fit_beats_perturbed_coefficients() {
        let (xs, y) = random_problem(42, 40, 2);
        let d = Dataset::new(xs.clone(), y.clone()).unwrap();
        let m = fit(&d, FeatureMap::QuadraticWithInteractions).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut other = m.clone();
            for c in other.coefficients.iter_mut() {
                *c += rng.random_range(-0.05..0.05);
            }
            let r2 = r2_score(&y, &other.predict_all(&xs).unwrap()).unwrap();
            assert!(m.train_r2.unwrap() >= r2);
        }
    }

    proptest! {
        #[test]
        fn affine_target_invariance(seed in 0u64..1000, a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0], b in -100.0f64..100.0) {
            let (xs, y) = random_problem(seed, 25, 2);
            let m1 = fit(&Dataset::new(xs.clone(), y.clone()).unwrap(), FeatureMap::QuadraticWithInteractions).unwrap();
            let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let m2 = fit(&Dataset::new(xs, y2).unwrap(), FeatureMap::QuadraticWithInteractions).unwrap();
            prop_assert!((m1.train_r2.unwrap() - m2.train_r2.unwrap()).abs() < 1e-9);
        }

        #[test]
        fn row_permutation_invariance(seed in 0u64..1000, shift in 1usize..24) {
            let (xs, y) = random_problem(seed, 25, 2);
            let m1 = fit(&Dataset::new(xs.clone(), y.clone()).unwrap(), FeatureMap::QuadraticWithInteractions).unwrap();
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.rotate_left(shift);
            idx.reverse();
            let xs2 = idx.iter().map(|&i| xs[i].clone()).collect();
            let y2 = idx.iter().map(|&i| y[i]).collect();
            let m2 = fit(&Dataset::new(xs2, y2).unwrap(), FeatureMap::QuadraticWithInteractions).unwrap();
            for (c1, c2) in m1.coefficients.iter().zip(&m2.coefficients) {
                prop_assert!((c1 - c2).abs() < 1e-9 * c1.abs().max(1.0));
            }
        }
    }
}
