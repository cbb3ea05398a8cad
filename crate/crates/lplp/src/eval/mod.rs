//! Metrics (instance accuracy, per-class IoU, mIoU), model evaluation over
//! bag splits, and the experiment grid runner.

mod experiment;

pub use experiment::{
    load_experiment_config, run_experiment, CellOutcome, CellResult, ExperimentConfig,
    ExperimentError, ExperimentOutcome, ExperimentSummary, MethodSummary, MetricStats,
};

use crate::data::Bag;
use crate::train::{infer_instance, TrainedModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {predictions} predictions vs {truths} ground-truth labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("every class is empty in both truth and prediction; mIoU is undefined")]
    NoScoredClasses,
    #[error("model expects {model_dim}-dimensional features, data has {data_dim}")]
    DimensionMismatch { model_dim: usize, data_dim: usize },
}

/// Row-indexed by true class, column-indexed by predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        assert!(num_classes > 0);
        ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        assert!(truth < self.num_classes && prediction < self.num_classes);
        self.counts[truth * self.num_classes + prediction] += 1;
    }

    pub fn count(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.num_classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.count(k, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Accuracy after collapsing all positive classes into one: measures the
    /// positive/negative decision alone.
    pub fn binary_accuracy(&self) -> f64 {
        let mut correct = self.count(0, 0);
        for truth in 1..self.num_classes {
            for pred in 1..self.num_classes {
                correct += self.count(truth, pred);
            }
        }
        correct as f64 / self.total() as f64
    }
}

/// Fraction of exact label matches.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class intersection over union `TP / (TP + FP + FN)` and its
/// unweighted mean. Classes absent from both truth and prediction are
/// excluded (`None` in the per-class vector and skipped by the mean).
pub fn miou(confusion: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64), EvalError> {
    let k = confusion.num_classes();
    let mut per_class = Vec::with_capacity(k);
    let mut sum = 0.0;
    let mut included = 0usize;
    for class in 0..k {
        let tp = confusion.count(class, class);
        let fp: u64 = (0..k).filter(|&t| t != class).map(|t| confusion.count(t, class)).sum();
        let fn_: u64 = (0..k).filter(|&p| p != class).map(|p| confusion.count(class, p)).sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            included += 1;
        }
    }
    if included == 0 {
        return Err(EvalError::NoScoredClasses);
    }
    Ok((per_class, sum / included as f64))
}

/// Instance-level evaluation of a trained model over a bag split.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub confusion: ConfusionMatrix,
}

fn model_input_dim(model: &TrainedModel) -> usize {
    match model {
        TrainedModel::Masked(t) => t.feature.spec.input_dim(),
        TrainedModel::Flat(m) => m.feature.spec.input_dim(),
        TrainedModel::TwoStage(m) => m.mil.feature.spec.input_dim(),
    }
}

/// Run [`infer_instance`] over every instance of every bag and score the
/// predictions against the ground-truth labels.
pub fn evaluate(
    model: &TrainedModel,
    bags: &[Bag],
    threshold: f64,
    num_positive_classes: usize,
) -> Result<EvalReport, EvalError> {
    if bags.is_empty() || bags.iter().all(|b| b.is_empty()) {
        return Err(EvalError::Empty);
    }
    let model_dim = model_input_dim(model);
    let mut confusion = ConfusionMatrix::new(num_positive_classes + 1);
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for bag in bags {
        for inst in &bag.instances {
            if inst.features.len() != model_dim {
                return Err(EvalError::DimensionMismatch {
                    model_dim,
                    data_dim: inst.features.len(),
                });
            }
            let pred = infer_instance(model, &inst.features, threshold);
            confusion.record(inst.true_label, pred.label);
            predictions.push(pred.label);
            truths.push(inst.true_label);
        }
    }
    let acc = accuracy(&predictions, &truths)?;
    debug_assert_eq!(acc, confusion.accuracy());
    let (per_class_iou, mean_iou) = miou(&confusion)?;
    Ok(EvalReport {
        method: String::new(),
        seed: 0,
        dataset_fingerprint: String::new(),
        accuracy: acc,
        per_class_iou,
        miou: mean_iou,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BagLabel, Instance};
    use crate::nets::{Mlp, MlpSpec, ModelTriple};

    #[test]
    fn accuracy_worked_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 0, 1, 2]).unwrap(), 0.75);
        assert!(matches!(
            accuracy(&[0, 1], &[0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn miou_hand_worked_example() {
        // truths (0,0,1,1) vs predictions (0,1,1,1).
        let mut confusion = ConfusionMatrix::new(2);
        confusion.record(0, 0);
        confusion.record(0, 1);
        confusion.record(1, 1);
        confusion.record(1, 1);
        let (per_class, mean) = miou(&confusion).unwrap();
        assert_eq!(per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((mean - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(confusion.accuracy(), 0.75);
    }

    #[test]
    fn perfect_diagonal_scores_one() {
        let mut confusion = ConfusionMatrix::new(3);
        for k in 0..3 {
            confusion.record(k, k);
        }
        let (per_class, mean) = miou(&confusion).unwrap();
        assert!(per_class.iter().all(|c| *c == Some(1.0)));
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn absent_class_is_excluded_from_the_mean() {
        let mut confusion = ConfusionMatrix::new(3);
        confusion.record(0, 0);
        confusion.record(1, 0);
        // Class 2 never appears in truth or prediction.
        let (per_class, mean) = miou(&confusion).unwrap();
        assert_eq!(per_class[2], None);
        assert!((mean - (0.5 + 0.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn miou_is_invariant_under_joint_relabeling() {
        let mut rng = crate::rng::stream(41, "miou-perm", 0);
        use rand::Rng;
        let k = 3;
        let truths: Vec<usize> = (0..60).map(|_| rng.gen_range(0..k)).collect();
        let preds: Vec<usize> = (0..60).map(|_| rng.gen_range(0..k)).collect();
        let build = |relabel: &dyn Fn(usize) -> usize| {
            let mut c = ConfusionMatrix::new(k);
            for (&t, &p) in truths.iter().zip(&preds) {
                c.record(relabel(t), relabel(p));
            }
            miou(&c).unwrap().1
        };
        let identity = build(&|x| x);
        let rotated = build(&|x| (x + 1) % k);
        let swapped = build(&|x| match x {
            0 => 2,
            2 => 0,
            other => other,
        });
        assert!((identity - rotated).abs() < 1e-15);
        assert!((identity - swapped).abs() < 1e-15);
    }

    #[test]
    fn empty_confusion_is_an_error() {
        let confusion = ConfusionMatrix::new(2);
        assert!(matches!(miou(&confusion), Err(EvalError::NoScoredClasses)));
    }

    #[test]
    fn binary_accuracy_collapses_positive_classes() {
        let mut confusion = ConfusionMatrix::new(3);
        confusion.record(1, 2); // wrong subtype, right side of the boundary
        confusion.record(2, 2);
        confusion.record(0, 0);
        confusion.record(0, 1); // false positive
        assert_eq!(confusion.accuracy(), 0.5);
        assert_eq!(confusion.binary_accuracy(), 0.75);
    }

    fn oracle_like_model() -> TrainedModel {
        // Feature passthrough (4 -> 4 identity); score head keyed on
        // coordinate 0; class head keyed on coordinates 1 and 2.
        let feature = {
            let spec = MlpSpec::new(vec![4, 4]);
            let mut params = vec![0.0; spec.num_params()];
            for i in 0..4 {
                params[i * 4 + i] = 1.0;
            }
            Mlp { spec, params }
        };
        let score_head = {
            let spec = MlpSpec::new(vec![4, 1]);
            let mut params = vec![0.0; spec.num_params()];
            params[0] = 60.0;
            Mlp { spec, params }
        };
        let class_head = {
            let spec = MlpSpec::new(vec![4, 2]);
            let mut params = vec![0.0; spec.num_params()];
            params[1] = 60.0; // class 1 logit reads coordinate 1
            params[4 + 2] = 60.0; // class 2 logit reads coordinate 2
            Mlp { spec, params }
        };
        TrainedModel::Masked(ModelTriple { feature, score_head, class_head })
    }

    fn labeled_bag(labels: &[usize]) -> Bag {
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut features = vec![0.0; 4];
                features[0] = if label == 0 { -1.0 } else { 1.0 };
                if label > 0 {
                    features[label] = 1.0;
                }
                Instance { id: i as u64, true_label: label, features }
            })
            .collect();
        Bag { id: 0, instances, label: BagLabel::Negative }
    }

    #[test]
    fn oracle_model_scores_perfectly() {
        // The bag label plays no role in evaluation; reuse one container.
        let bag = labeled_bag(&[0, 1, 2, 1, 0, 2]);
        let report = evaluate(&oracle_like_model(), &[bag], 0.5, 2).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.miou, 1.0);
    }

    #[test]
    fn constant_model_matches_label_frequency() {
        // Zero-parameter flat model predicts a constant label; accuracy on a
        // balanced three-class mix is exactly one third.
        let flat = TrainedModel::Flat(crate::train::FlatModel {
            feature: Mlp {
                spec: MlpSpec::new(vec![4, 4]),
                params: vec![0.0; MlpSpec::new(vec![4, 4]).num_params()],
            },
            head: Mlp {
                spec: MlpSpec::new(vec![4, 3]),
                params: vec![0.0; MlpSpec::new(vec![4, 3]).num_params()],
            },
            num_positive_classes: 2,
        });
        let bag = labeled_bag(&[0, 0, 1, 1, 2, 2]);
        let report = evaluate(&flat, &[bag], 0.5, 2).unwrap();
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_equals_trace_over_total() {
        let bag = labeled_bag(&[0, 1, 2, 2, 0]);
        let report = evaluate(&oracle_like_model(), &[bag], 0.5, 2).unwrap();
        assert_eq!(
            report.accuracy,
            report.confusion.trace() as f64 / report.confusion.total() as f64
        );
        assert_eq!(report.confusion.total(), 5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = oracle_like_model();
        let bag = Bag {
            id: 0,
            instances: vec![Instance { id: 0, true_label: 0, features: vec![1.0, 2.0] }],
            label: BagLabel::Negative,
        };
        assert!(matches!(
            evaluate(&model, &[bag], 0.5, 2),
            Err(EvalError::DimensionMismatch { model_dim: 4, data_dim: 2 })
        ));
    }
}
