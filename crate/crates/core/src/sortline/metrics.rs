//! Classification accuracy: overall fraction correct plus one-vs-rest
//! counts per class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SortlineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ClassCounts {
    /// (TP + TN) / (TP + TN + FP + FN).
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.tn + self.fp + self.fn_;
        (self.tp + self.tn) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport<C: Ord> {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub per_class: BTreeMap<C, ClassCounts>,
}

/// Overall accuracy over `(true, predicted)` pairs, with a one-vs-rest table
/// for every class in `classes` and every class that occurs.
pub fn accuracy<C: Ord + Copy>(outcomes: &[(C, C)], classes: &[C]) -> Result<AccuracyReport<C>, SortlineError> {
    if outcomes.is_empty() {
        return Err(SortlineError::Metric("accuracy of an empty outcome set".into()));
    }
    let mut per_class: BTreeMap<C, ClassCounts> = classes.iter().map(|&c| (c, ClassCounts::default())).collect();
    for &(t, p) in outcomes {
        per_class.entry(t).or_default();
        per_class.entry(p).or_default();
    }
    let mut correct = 0;
    for &(t, p) in outcomes {
        correct += u64::from(t == p);
        for (&c, n) in per_class.iter_mut() {
            match (t == c, p == c) {
                (true, true) => n.tp += 1,
                (true, false) => n.fn_ += 1,
                (false, true) => n.fp += 1,
                (false, false) => n.tn += 1,
            }
        }
    }
    let total = outcomes.len() as u64;
    Ok(AccuracyReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sortline::WasteClass;

    #[test]
    fn four_outcome_example() {
        let r = accuracy(&[('A', 'A'), ('A', 'B'), ('B', 'B'), ('B', 'B')], &[]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        let a = r.per_class[&'A'];
        assert_eq!(a, ClassCounts { tp: 1, fn_: 1, fp: 0, tn: 2 });
        assert_eq!(a.accuracy(), 0.75);
        assert_eq!(r.per_class[&'B'], ClassCounts { tp: 2, fn_: 0, fp: 1, tn: 1 });
    }

    #[test]
    fn ninety_eight_of_a_hundred() {
        let mut v = vec![(WasteClass::Paper, WasteClass::Paper); 98];
        v.extend([(WasteClass::Paper, WasteClass::Metal); 2]);
        assert_eq!(accuracy(&v, &WasteClass::ALL).unwrap().accuracy, 0.98);
    }

    #[test]
    fn perfect_predictions_have_no_errors() {
        let v: Vec<_> = WasteClass::ALL.iter().map(|&c| (c, c)).collect();
        let r = accuracy(&v, &WasteClass::ALL).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.values().all(|n| n.fp == 0 && n.fn_ == 0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(accuracy::<u8>(&[], &[1]), Err(SortlineError::Metric(_))));
    }

    #[test]
    fn listed_classes_always_appear() {
        let r = accuracy(&[(WasteClass::Metal, WasteClass::Metal)], &WasteClass::ALL).unwrap();
        assert_eq!(r.per_class.len(), 4);
        assert_eq!(r.per_class[&WasteClass::Plastic].tn, 1);
    }
}
