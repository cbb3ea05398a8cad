//! Per-method training objectives: each maps (parameter blocks, bag) to a
//! scalar loss, optionally with per-block gradients from one backward pass.

use crate::autodiff::{softmax, sum, Tape, Var};
use crate::data::{full_proportion_from_partial, Bag};
use crate::llp::{masked_proportion, ppl_loss, proportion_cross_entropy, proportion_loss, LOG_FLOOR};
use crate::mil::{aggregate, mil_loss, AggregationKind};
use crate::nets::{BoundMlp, BoundTriple, MlpSpec};

pub(crate) type Params = Vec<Vec<f64>>;

/// A training objective over named parameter blocks.
pub(crate) trait Objective: Sync {
    fn block_names(&self) -> &'static [&'static str];
    /// Loss of one bag at the given parameters; with `with_grads`, also the
    /// per-block gradients from a single backward pass.
    fn bag_loss(&self, params: &Params, bag: &Bag, with_grads: bool) -> (f64, Option<Params>);
}

fn bind<'t>(tape: &'t Tape, spec: &MlpSpec, params: &[f64]) -> BoundMlp<'t> {
    BoundMlp::from_vars(spec.clone(), params.iter().map(|&p| tape.var(p)).collect())
}

/// Joint loss of the proposed method on one bag: the proportion loss through
/// the soft positive-instance mask for positive bags, plus the weighted MIL
/// binary cross-entropy for every bag. Negative bags carry no proportion
/// term; their supervision is the bag label alone.
pub fn joint_loss<'t>(
    bound: &BoundTriple<'t>,
    tape: &'t Tape,
    bag: &Bag,
    kind: AggregationKind,
    w_mil: f64,
) -> Var<'t> {
    let features: Vec<Vec<Var<'t>>> =
        bag.instances.iter().map(|inst| bound.features(tape, &inst.features)).collect();
    let scores: Vec<Var<'t>> = features.iter().map(|f| bound.instance_score(f)).collect();
    let bag_score = aggregate(&scores, kind);
    let mil = mil_loss(bag.binary_label(), bag_score);
    match bag.proportions() {
        Some(target) => {
            let class_probs: Vec<Vec<Var<'t>>> =
                features.iter().map(|f| bound.class_probs(f)).collect();
            let estimate = masked_proportion(&scores, &class_probs);
            proportion_loss(target, &estimate) + mil * w_mil
        }
        None => mil * w_mil,
    }
}

/// Objective of the jointly trained model (blocks: f, g, h).
pub(crate) struct JointObjective {
    pub feature_spec: MlpSpec,
    pub score_spec: MlpSpec,
    pub class_spec: MlpSpec,
    pub kind: AggregationKind,
    pub w_mil: f64,
}

impl Objective for JointObjective {
    fn block_names(&self) -> &'static [&'static str] {
        &["feature", "score_head", "class_head"]
    }

    fn bag_loss(&self, params: &Params, bag: &Bag, with_grads: bool) -> (f64, Option<Params>) {
        let tape = Tape::new();
        let bound = BoundTriple {
            feature: bind(&tape, &self.feature_spec, &params[0]),
            score_head: bind(&tape, &self.score_spec, &params[1]),
            class_head: bind(&tape, &self.class_spec, &params[2]),
        };
        let loss = joint_loss(&bound, &tape, bag, self.kind, self.w_mil);
        if !with_grads {
            return (loss.value(), None);
        }
        tape.backward(loss);
        (
            loss.value(),
            Some(vec![
                bound.feature.gradients(),
                bound.score_head.gradients(),
                bound.class_head.gradients(),
            ]),
        )
    }
}

/// Map a true class label in `{0..C}` onto the `C+1`-way head's output
/// index: positive classes first, negative class last.
pub fn class_to_head_index(label: usize, num_positive_classes: usize) -> usize {
    if label == 0 {
        num_positive_classes
    } else {
        label - 1
    }
}

/// Inverse of [`class_to_head_index`].
pub fn head_index_to_class(index: usize, num_positive_classes: usize) -> usize {
    if index == num_positive_classes {
        0
    } else {
        index + 1
    }
}

/// Which loss a single `C+1`-way head is trained with.
pub(crate) enum FlatLoss {
    /// Supervised cross-entropy on instance labels (oracle).
    InstanceCrossEntropy,
    /// Proportion loss against the realized full `C+1` proportions (oracle).
    FullProportion,
    /// Partial-proportion loss; `renormalize` selects how positive bags
    /// treat the head's negative output.
    Partial { renormalize: bool },
}

/// Objective for the flat-head methods ce / pl / ppl (blocks: f, head).
pub(crate) struct FlatObjective {
    pub feature_spec: MlpSpec,
    pub head_spec: MlpSpec,
    pub num_positive_classes: usize,
    pub loss: FlatLoss,
}

impl FlatObjective {
    fn full_target(&self, bag: &Bag) -> Vec<f64> {
        let c = self.num_positive_classes;
        match bag.proportions() {
            Some(partial) => {
                let negatives =
                    bag.instances.iter().filter(|i| i.true_label == 0).count() as f64;
                let p_neg = negatives / bag.len() as f64;
                full_proportion_from_partial(partial, p_neg)
            }
            None => {
                let mut target = vec![0.0; c + 1];
                target[c] = 1.0;
                target
            }
        }
    }
}

impl Objective for FlatObjective {
    fn block_names(&self) -> &'static [&'static str] {
        &["feature", "head"]
    }

    fn bag_loss(&self, params: &Params, bag: &Bag, with_grads: bool) -> (f64, Option<Params>) {
        let tape = Tape::new();
        let feature = bind(&tape, &self.feature_spec, &params[0]);
        let head = bind(&tape, &self.head_spec, &params[1]);
        let rows: Vec<Vec<Var<'_>>> = bag
            .instances
            .iter()
            .map(|inst| {
                let input: Vec<Var<'_>> =
                    inst.features.iter().map(|&x| tape.var(x)).collect();
                softmax(&head.forward(&feature.forward(&input)))
            })
            .collect();
        let loss = match &self.loss {
            FlatLoss::InstanceCrossEntropy => {
                let terms: Vec<Var<'_>> = rows
                    .iter()
                    .zip(&bag.instances)
                    .map(|(row, inst)| {
                        let idx = class_to_head_index(inst.true_label, self.num_positive_classes);
                        row[idx].clamp(LOG_FLOOR, f64::INFINITY).ln().neg()
                    })
                    .collect();
                sum(&terms) / terms.len() as f64
            }
            FlatLoss::FullProportion => {
                let n = rows.len() as f64;
                let averaged: Vec<Var<'_>> = (0..self.num_positive_classes + 1)
                    .map(|k| {
                        let column: Vec<Var<'_>> = rows.iter().map(|row| row[k]).collect();
                        sum(&column) / n
                    })
                    .collect();
                proportion_cross_entropy(&self.full_target(bag), &averaged)
            }
            FlatLoss::Partial { renormalize } => ppl_loss(bag, &rows, *renormalize),
        };
        if !with_grads {
            return (loss.value(), None);
        }
        tape.backward(loss);
        (loss.value(), Some(vec![feature.gradients(), head.gradients()]))
    }
}

/// Stand-alone MIL objective for the two-stage baseline's first stage
/// (blocks: f, g).
pub(crate) struct MilObjective {
    pub feature_spec: MlpSpec,
    pub score_spec: MlpSpec,
    pub kind: AggregationKind,
}

impl Objective for MilObjective {
    fn block_names(&self) -> &'static [&'static str] {
        &["feature", "score_head"]
    }

    fn bag_loss(&self, params: &Params, bag: &Bag, with_grads: bool) -> (f64, Option<Params>) {
        let tape = Tape::new();
        let feature = bind(&tape, &self.feature_spec, &params[0]);
        let score_head = bind(&tape, &self.score_spec, &params[1]);
        let scores: Vec<Var<'_>> = bag
            .instances
            .iter()
            .map(|inst| {
                let input: Vec<Var<'_>> =
                    inst.features.iter().map(|&x| tape.var(x)).collect();
                score_head.forward(&feature.forward(&input))[0].sigmoid()
            })
            .collect();
        let loss = mil_loss(bag.binary_label(), aggregate(&scores, self.kind));
        if !with_grads {
            return (loss.value(), None);
        }
        tape.backward(loss);
        (loss.value(), Some(vec![feature.gradients(), score_head.gradients()]))
    }
}

/// Second-stage LLP objective: plain proportion loss over the hard-selected
/// positive subsets (blocks: f, h).
pub(crate) struct SubsetProportionObjective {
    pub feature_spec: MlpSpec,
    pub class_spec: MlpSpec,
    pub num_positive_classes: usize,
}

impl Objective for SubsetProportionObjective {
    fn block_names(&self) -> &'static [&'static str] {
        &["feature", "class_head"]
    }

    fn bag_loss(&self, params: &Params, bag: &Bag, with_grads: bool) -> (f64, Option<Params>) {
        let target = bag
            .proportions()
            .expect("two-stage LLP only trains on positive bags");
        let tape = Tape::new();
        let feature = bind(&tape, &self.feature_spec, &params[0]);
        let class_head = bind(&tape, &self.class_spec, &params[1]);
        let n = bag.len() as f64;
        let rows: Vec<Vec<Var<'_>>> = bag
            .instances
            .iter()
            .map(|inst| {
                let input: Vec<Var<'_>> =
                    inst.features.iter().map(|&x| tape.var(x)).collect();
                softmax(&class_head.forward(&feature.forward(&input)))
            })
            .collect();
        let averaged: Vec<Var<'_>> = (0..self.num_positive_classes)
            .map(|k| {
                let column: Vec<Var<'_>> = rows.iter().map(|row| row[k]).collect();
                sum(&column) / n
            })
            .collect();
        let loss = proportion_cross_entropy(target, &averaged);
        if !with_grads {
            return (loss.value(), None);
        }
        tape.backward(loss);
        (loss.value(), Some(vec![feature.gradients(), class_head.gradients()]))
    }
}

/// Test scaffold: a parameter-independent loss, so validation never improves
/// after the first epoch and the loop's stopping logic can be scripted.
#[cfg(test)]
pub(crate) struct ConstantObjective {
    pub value: f64,
}

#[cfg(test)]
impl Objective for ConstantObjective {
    fn block_names(&self) -> &'static [&'static str] {
        &["only"]
    }

    fn bag_loss(&self, params: &Params, _bag: &Bag, with_grads: bool) -> (f64, Option<Params>) {
        let grads = with_grads.then(|| params.iter().map(|p| vec![0.0; p.len()]).collect());
        (self.value, grads)
    }
}
