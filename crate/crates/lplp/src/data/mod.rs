//! Instances, bags, partial label proportions, and dataset splits.
//!
//! Class indexing convention used throughout the crate: `0` is the negative
//! class, `1..=C` are the positive classes. A proportion vector `p` over the
//! positive classes has length `C`, with `p[c-1]` the share of class `c`.

mod io;
mod synth;

pub use io::{load_dataset, parse_dataset, save_dataset, serialize_dataset};
pub use synth::{
    compose_bag, compose_negative_bag, sample_partial_proportions, synth_gaussian_dataset,
    InstancePools, SynthConfig,
};

use thiserror::Error;

/// Tolerance for "sums to one" checks on stored proportion vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class {class} pool exhausted: need {needed}, have {available}")]
    PoolExhausted { class: usize, needed: usize, available: usize },
    #[error("bag {bag_id}: {message}")]
    Validation { bag_id: u64, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sample. `true_label` is generator ground truth: it is used by the
/// evaluation harness and by the oracle methods only, never by the weakly
/// supervised training paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub true_label: usize,
    pub features: Vec<f64>,
}

/// Bag-level supervision. Proportions over the positive classes exist
/// exactly when the bag is positive.
#[derive(Debug, Clone, PartialEq)]
pub enum BagLabel {
    Negative,
    Positive { proportions: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: u64,
    pub instances: Vec<Instance>,
    pub label: BagLabel,
}

impl Bag {
    pub fn is_positive(&self) -> bool {
        matches!(self.label, BagLabel::Positive { .. })
    }

    /// Binary bag label as a real: 1.0 for positive, 0.0 for negative.
    pub fn binary_label(&self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    /// Partial label proportions over the positive classes, if positive.
    pub fn proportions(&self) -> Option<&[f64]> {
        match &self.label {
            BagLabel::Positive { proportions } => Some(proportions),
            BagLabel::Negative => None,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Check the structural invariants against the dataset's `C` and `d`.
    pub fn validate(&self, num_positive_classes: usize, feature_dim: usize) -> Result<(), DataError> {
        let fail = |message: String| DataError::Validation { bag_id: self.id, message };
        if self.instances.is_empty() {
            return Err(fail("bag has no instances".into()));
        }
        for inst in &self.instances {
            if inst.features.len() != feature_dim {
                return Err(fail(format!(
                    "instance {} has {} features, expected {}",
                    inst.id,
                    inst.features.len(),
                    feature_dim
                )));
            }
            if inst.true_label > num_positive_classes {
                return Err(fail(format!(
                    "instance {} has label {} > C = {}",
                    inst.id, inst.true_label, num_positive_classes
                )));
            }
        }
        match &self.label {
            BagLabel::Negative => {
                if let Some(bad) = self.instances.iter().find(|i| i.true_label != 0) {
                    return Err(fail(format!(
                        "negative bag contains instance {} with label {}",
                        bad.id, bad.true_label
                    )));
                }
            }
            BagLabel::Positive { proportions } => {
                if proportions.len() != num_positive_classes {
                    return Err(fail(format!(
                        "proportion vector has length {}, expected {}",
                        proportions.len(),
                        num_positive_classes
                    )));
                }
                if proportions.iter().any(|&p| p < 0.0) {
                    return Err(fail("proportion vector has a negative entry".into()));
                }
                let total: f64 = proportions.iter().sum();
                if (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(fail(format!("proportions sum to {total}, expected 1")));
                }
            }
        }
        Ok(())
    }
}

/// A full dataset: three bag splits plus the shape metadata they share.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub num_positive_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub train: Vec<Bag>,
    pub validation: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl DatasetSplit {
    pub fn splits(&self) -> [(&'static str, &[Bag]); 3] {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test)]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_positive_classes < 1 {
            return Err(DataError::InvalidConfig("need at least one positive class".into()));
        }
        let mut seen: std::collections::HashMap<u64, &'static str> = std::collections::HashMap::new();
        for (name, bags) in self.splits() {
            for bag in bags {
                bag.validate(self.num_positive_classes, self.feature_dim)?;
                for inst in &bag.instances {
                    match seen.get(&inst.id) {
                        Some(other) if *other != name => {
                            return Err(DataError::Validation {
                                bag_id: bag.id,
                                message: format!(
                                    "instance {} appears in both {} and {}",
                                    inst.id, other, name
                                ),
                            });
                        }
                        _ => {
                            seen.insert(inst.id, name);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Extend a partial proportion vector over the positive classes into a full
/// distribution over all `C+1` classes, given the negative-class share:
/// `((1-p_neg)·p_1, …, (1-p_neg)·p_C, p_neg)`. The negative class sits last.
pub fn full_proportion_from_partial(proportions: &[f64], p_neg: f64) -> Vec<f64> {
    debug_assert!((0.0..=1.0).contains(&p_neg));
    let mut full: Vec<f64> = proportions.iter().map(|&p| (1.0 - p_neg) * p).collect();
    full.push(p_neg);
    full
}
