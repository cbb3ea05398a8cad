//! Training drivers for the five methods, the Adam optimizer, early
//! stopping, inference, and checkpoint files.
//!
//! `ours` trains the joint objective end to end; `two_stage` trains MIL
//! first, freezes it, and fits a fresh extractor plus class head on the
//! hard-selected positive instances; `ppl` trains a single `C+1`-way head
//! on partial proportions; `ce` and `pl` are the supervised and
//! full-proportion oracles and read generator ground truth by design.

mod adam;
mod checkpoint;
mod loop_core;
mod objectives;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{load_checkpoint, save_checkpoint, write_metrics, CheckpointMeta};
pub use loop_core::EarlyStopping;
pub use objectives::{class_to_head_index, head_index_to_class, joint_loss};

use loop_core::{run_loop, LoopOutcome, LoopSettings};
use objectives::{
    FlatLoss, FlatObjective, JointObjective, MilObjective, Objective, Params,
    SubsetProportionObjective,
};

use crate::data::{Bag, DataError, DatasetSplit, Instance};
use crate::mil::AggregationKind;
use crate::nets::{
    default_class_spec, default_feature_spec, default_score_spec, softmax_values, Mlp, ModelTriple,
};
use crate::rng::derive_seed;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset unsuitable for this method: {0}")]
    DataMismatch(String),
    #[error("non-finite loss at epoch {epoch}; aborting")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradient in parameter block `{block}` at epoch {epoch}; aborting")]
    NonFiniteGradient { epoch: usize, block: &'static str },
    #[error("stage-2 selection left no usable bag in the {split} split")]
    EmptySelection { split: &'static str },
    #[error("checkpoint parse error at line {line}: {message}")]
    CheckpointParse { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The five training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Supervised cross-entropy oracle (instance labels).
    Ce,
    /// Full-proportion oracle (realized `C+1` proportions).
    Pl,
    /// Partial-proportion loss baseline.
    Ppl,
    /// MIL trained alone, then LLP on hard-selected instances.
    TwoStage,
    /// Joint MIL + LLP through the soft mask.
    Ours,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Ce, Method::Pl, Method::Ppl, Method::TwoStage, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Pl => "pl",
            Method::Ppl => "ppl",
            Method::TwoStage => "two_stage",
            Method::Ours => "ours",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ce" => Ok(Method::Ce),
            "pl" => Ok(Method::Pl),
            "ppl" => Ok(Method::Ppl),
            "two_stage" => Ok(Method::TwoStage),
            "ours" => Ok(Method::Ours),
            other => Err(format!(
                "unknown method `{other}` (expected ce, pl, ppl, two_stage, or ours)"
            )),
        }
    }
}

/// Either a pinned pooling function or selection over all three on
/// validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregationChoice {
    Fixed(AggregationKind),
    SelectOnValidation,
}

/// Training hyperparameters. The defaults are the experiment protocol:
/// learning rate 3e-4 with Adam, 16-bag batches, MIL weight 0.01, early
/// stopping after 30 stale epochs, pooling selected on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub batch_bags: usize,
    pub w_mil: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub aggregation: AggregationChoice,
    pub lse_r: f64,
    pub inference_threshold: f64,
    pub seed: u64,
    /// PPL positive bags: renormalize the head's positive block (default)
    /// or ignore the negative output.
    pub ppl_renormalize: bool,
    /// Initialize the stage-2 extractor from the frozen stage-1 one instead
    /// of training a fresh one.
    pub two_stage_reuse_features: bool,
}

impl TrainConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        TrainConfig {
            method,
            learning_rate: 3e-4,
            batch_bags: 16,
            w_mil: 0.01,
            patience: 30,
            max_epochs: 1000,
            aggregation: AggregationChoice::SelectOnValidation,
            lse_r: crate::mil::DEFAULT_LSE_R,
            inference_threshold: 0.5,
            seed,
            ppl_renormalize: true,
            two_stage_reuse_features: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_bags == 0 {
            return bad("batch size must be at least 1 bag".into());
        }
        if self.w_mil < 0.0 {
            return bad(format!("w_mil must be non-negative, got {}", self.w_mil));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.inference_threshold > 0.0 && self.inference_threshold < 1.0) {
            return bad(format!(
                "inference threshold must lie strictly inside (0, 1), got {}",
                self.inference_threshold
            ));
        }
        if self.lse_r <= 0.0 {
            return bad(format!("lse sharpness must be positive, got {}", self.lse_r));
        }
        Ok(())
    }

    fn kinds(&self) -> Vec<AggregationKind> {
        match self.aggregation {
            AggregationChoice::Fixed(kind) => vec![kind],
            AggregationChoice::SelectOnValidation => vec![
                AggregationKind::Mean,
                AggregationKind::Max,
                AggregationKind::Lse { r: self.lse_r },
            ],
        }
    }
}

/// One line of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub timestamp: u64,
    pub epochs_since_improvement: usize,
}

/// Stage-1 MIL model: shared extractor plus the binary score head.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub feature: Mlp,
    pub score_head: Mlp,
}

impl MilModel {
    pub fn score_value(&self, features: &[f64]) -> f64 {
        let feat = self.feature.forward_values(features);
        crate::nets::stable_sigmoid(self.score_head.forward_values(&feat)[0])
    }
}

/// Single `C+1`-way head over its own extractor (ce, pl, ppl).
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel {
    pub feature: Mlp,
    pub head: Mlp,
    pub num_positive_classes: usize,
}

impl FlatModel {
    pub fn full_probs_value(&self, features: &[f64]) -> Vec<f64> {
        let feat = self.feature.forward_values(features);
        softmax_values(&self.head.forward_values(&feat))
    }
}

/// Frozen stage-1 MIL plus the independently trained stage-2 classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageModel {
    pub mil: MilModel,
    pub feature: Mlp,
    pub class_head: Mlp,
}

/// Any trained model, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    /// Jointly trained triple (method `ours`).
    Masked(ModelTriple),
    /// Flat `C+1`-way head (methods `ce`, `pl`, `ppl`).
    Flat(FlatModel),
    /// Two-stage baseline.
    TwoStage(TwoStageModel),
}

/// Per-instance inference output.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    /// Positive-instance score in [0, 1].
    pub score: f64,
    /// Distribution over the `C` positive classes.
    pub class_probs: Vec<f64>,
    /// Final label in `{0..C}` (0 = negative).
    pub label: usize,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: TrainedModel,
    pub method: Method,
    pub chosen_aggregation: Option<AggregationKind>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub log: Vec<EpochRecord>,
    /// Positive bags dropped by stage-2 selection (train, validation).
    pub skipped_stage2_bags: Option<(usize, usize)>,
}

fn validate_pairing(config: &TrainConfig, data: &DatasetSplit) -> Result<(), TrainError> {
    data.validate()?;
    for (name, bags) in [("train", &data.train), ("validation", &data.validation)] {
        if bags.is_empty() {
            return Err(TrainError::DataMismatch(format!("{name} split is empty")));
        }
    }
    let needs_proportions = !matches!(config.method, Method::Ce);
    if needs_proportions && !data.train.iter().any(|b| b.is_positive()) {
        return Err(TrainError::DataMismatch(
            "no positive bag with proportions in the training split".into(),
        ));
    }
    Ok(())
}

/// Train one method on one dataset. Fully deterministic in
/// `(config, data)`: identical inputs give bit-identical models and logs
/// (timestamps aside).
pub fn train(config: &TrainConfig, data: &DatasetSplit) -> Result<TrainState, TrainError> {
    config.validate()?;
    validate_pairing(config, data)?;
    match config.method {
        Method::Ours => train_joint(config, data),
        Method::Ce | Method::Pl | Method::Ppl => train_flat(config, data),
        Method::TwoStage => train_two_stage(config, data),
    }
}

fn settings(config: &TrainConfig, tag: &str) -> LoopSettings {
    LoopSettings {
        learning_rate: config.learning_rate,
        batch_bags: config.batch_bags,
        patience: config.patience,
        max_epochs: config.max_epochs,
        seed: derive_seed(config.seed, tag, 0),
    }
}

/// Run the loop once per candidate pooling function from a shared
/// initialization; keep the run with the lowest best validation loss
/// (first candidate wins ties).
fn select_kind<O: Objective>(
    kinds: &[AggregationKind],
    make: impl Fn(AggregationKind) -> O,
    init: &Params,
    train_bags: &[Bag],
    val_bags: &[Bag],
    loop_settings: &LoopSettings,
) -> Result<(AggregationKind, LoopOutcome), TrainError> {
    let mut best: Option<(AggregationKind, LoopOutcome)> = None;
    for &kind in kinds {
        let objective = make(kind);
        let outcome = run_loop(&objective, init.clone(), train_bags, val_bags, loop_settings)?;
        let better = match &best {
            None => true,
            Some((_, incumbent)) => outcome.best_val_loss < incumbent.best_val_loss,
        };
        if better {
            best = Some((kind, outcome));
        }
    }
    Ok(best.expect("at least one aggregation kind"))
}

fn state_from_outcome(
    model: TrainedModel,
    method: Method,
    chosen: Option<AggregationKind>,
    outcome: LoopOutcome,
) -> TrainState {
    TrainState {
        model,
        method,
        chosen_aggregation: chosen,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        best_val_loss: outcome.best_val_loss,
        epochs_since_improvement: outcome.epochs_run - outcome.best_epoch,
        log: outcome.log,
        skipped_stage2_bags: None,
    }
}

fn train_joint(config: &TrainConfig, data: &DatasetSplit) -> Result<TrainState, TrainError> {
    let model = ModelTriple::init_default(
        data.feature_dim,
        data.num_positive_classes,
        derive_seed(config.seed, "joint-init", 0),
    );
    let init: Params = vec![
        model.feature.params.clone(),
        model.score_head.params.clone(),
        model.class_head.params.clone(),
    ];
    let loop_settings = settings(config, "joint");
    let (kind, outcome) = select_kind(
        &config.kinds(),
        |kind| JointObjective {
            feature_spec: model.feature.spec.clone(),
            score_spec: model.score_head.spec.clone(),
            class_spec: model.class_head.spec.clone(),
            kind,
            w_mil: config.w_mil,
        },
        &init,
        &data.train,
        &data.validation,
        &loop_settings,
    )?;
    let [f, g, h]: [Vec<f64>; 3] =
        outcome.best_params.clone().try_into().expect("three blocks");
    let trained = ModelTriple {
        feature: Mlp { spec: model.feature.spec.clone(), params: f },
        score_head: Mlp { spec: model.score_head.spec.clone(), params: g },
        class_head: Mlp { spec: model.class_head.spec.clone(), params: h },
    };
    Ok(state_from_outcome(TrainedModel::Masked(trained), config.method, Some(kind), outcome))
}

fn train_flat(config: &TrainConfig, data: &DatasetSplit) -> Result<TrainState, TrainError> {
    let c = data.num_positive_classes;
    let feature = Mlp::init(
        default_feature_spec(data.feature_dim),
        derive_seed(config.seed, "flat-feature-init", 0),
    );
    let head = Mlp::init(default_class_spec(c + 1), derive_seed(config.seed, "flat-head-init", 0));
    let loss = match config.method {
        Method::Ce => FlatLoss::InstanceCrossEntropy,
        Method::Pl => FlatLoss::FullProportion,
        Method::Ppl => FlatLoss::Partial { renormalize: config.ppl_renormalize },
        _ => unreachable!("train_flat only handles ce, pl, ppl"),
    };
    let objective = FlatObjective {
        feature_spec: feature.spec.clone(),
        head_spec: head.spec.clone(),
        num_positive_classes: c,
        loss,
    };
    let init: Params = vec![feature.params.clone(), head.params.clone()];
    let outcome =
        run_loop(&objective, init, &data.train, &data.validation, &settings(config, "flat"))?;
    let [f, head_params]: [Vec<f64>; 2] =
        outcome.best_params.clone().try_into().expect("two blocks");
    let trained = FlatModel {
        feature: Mlp { spec: feature.spec.clone(), params: f },
        head: Mlp { spec: head.spec.clone(), params: head_params },
        num_positive_classes: c,
    };
    Ok(state_from_outcome(TrainedModel::Flat(trained), config.method, None, outcome))
}

/// Hard-select the positive instances of each positive bag with the frozen
/// stage-1 scorer (`score >= threshold` keeps the instance). Bags whose
/// selection is empty are skipped and counted.
fn select_positive_subsets(mil: &MilModel, bags: &[Bag], threshold: f64) -> (Vec<Bag>, usize) {
    let mut subsets = Vec::new();
    let mut skipped = 0usize;
    for bag in bags.iter().filter(|b| b.is_positive()) {
        let kept: Vec<Instance> = bag
            .instances
            .iter()
            .filter(|inst| mil.score_value(&inst.features) >= threshold)
            .cloned()
            .collect();
        if kept.is_empty() {
            skipped += 1;
        } else {
            subsets.push(Bag { id: bag.id, instances: kept, label: bag.label.clone() });
        }
    }
    (subsets, skipped)
}

fn train_two_stage(config: &TrainConfig, data: &DatasetSplit) -> Result<TrainState, TrainError> {
    // Stage 1: MIL alone, with its own aggregation selection and stopping.
    let feature = Mlp::init(
        default_feature_spec(data.feature_dim),
        derive_seed(config.seed, "stage1-feature-init", 0),
    );
    let score_head =
        Mlp::init(default_score_spec(), derive_seed(config.seed, "stage1-score-init", 0));
    let init: Params = vec![feature.params.clone(), score_head.params.clone()];
    let (kind, stage1) = select_kind(
        &config.kinds(),
        |kind| MilObjective {
            feature_spec: feature.spec.clone(),
            score_spec: score_head.spec.clone(),
            kind,
        },
        &init,
        &data.train,
        &data.validation,
        &settings(config, "stage1"),
    )?;
    let [f1, g1]: [Vec<f64>; 2] = stage1.best_params.clone().try_into().expect("two blocks");
    let mil = MilModel {
        feature: Mlp { spec: feature.spec.clone(), params: f1 },
        score_head: Mlp { spec: score_head.spec.clone(), params: g1 },
    };

    // Stage 2: freeze the scorer, train a fresh extractor and class head on
    // the selected subsets with their stored proportions.
    let threshold = config.inference_threshold;
    let (subset_train, skipped_train) = select_positive_subsets(&mil, &data.train, threshold);
    let (subset_val, skipped_val) = select_positive_subsets(&mil, &data.validation, threshold);
    if subset_train.is_empty() {
        return Err(TrainError::EmptySelection { split: "train" });
    }
    if subset_val.is_empty() {
        return Err(TrainError::EmptySelection { split: "validation" });
    }

    let stage2_feature = if config.two_stage_reuse_features {
        mil.feature.clone()
    } else {
        Mlp::init(
            default_feature_spec(data.feature_dim),
            derive_seed(config.seed, "stage2-feature-init", 0),
        )
    };
    let class_head = Mlp::init(
        default_class_spec(data.num_positive_classes),
        derive_seed(config.seed, "stage2-class-init", 0),
    );
    let objective = SubsetProportionObjective {
        feature_spec: stage2_feature.spec.clone(),
        class_spec: class_head.spec.clone(),
        num_positive_classes: data.num_positive_classes,
    };
    let init2: Params = vec![stage2_feature.params.clone(), class_head.params.clone()];
    let stage2 = run_loop(&objective, init2, &subset_train, &subset_val, &settings(config, "stage2"))?;
    let [f2, h2]: [Vec<f64>; 2] = stage2.best_params.clone().try_into().expect("two blocks");
    let model = TwoStageModel {
        mil,
        feature: Mlp { spec: stage2_feature.spec.clone(), params: f2 },
        class_head: Mlp { spec: class_head.spec.clone(), params: h2 },
    };

    let mut log = stage1.log;
    log.extend(stage2.log.iter().cloned());
    Ok(TrainState {
        model: TrainedModel::TwoStage(model),
        method: config.method,
        chosen_aggregation: Some(kind),
        best_epoch: stage2.best_epoch,
        epochs_run: stage2.epochs_run,
        best_val_loss: stage2.best_val_loss,
        epochs_since_improvement: stage2.epochs_run - stage2.best_epoch,
        log,
        skipped_stage2_bags: Some((skipped_train, skipped_val)),
    })
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Classify one instance into `{0..C}`: score below the threshold means
/// negative, otherwise the arg-max positive class (lowest index on ties).
/// Flat-head models classify by arg-max over all `C+1` outputs instead, with
/// their score defined as the total positive mass.
pub fn infer_instance(model: &TrainedModel, features: &[f64], threshold: f64) -> InstancePrediction {
    match model {
        TrainedModel::Masked(triple) => {
            let score = triple.score_value(features);
            let class_probs = triple.class_probs_value(features);
            two_stage_rule(score, class_probs, threshold)
        }
        TrainedModel::TwoStage(model) => {
            let score = model.mil.score_value(features);
            let feat = model.feature.forward_values(features);
            let class_probs = softmax_values(&model.class_head.forward_values(&feat));
            two_stage_rule(score, class_probs, threshold)
        }
        TrainedModel::Flat(model) => {
            let full = model.full_probs_value(features);
            let c = model.num_positive_classes;
            let label = head_index_to_class(argmax_lowest(&full), c);
            let positive_mass: f64 = full[..c].iter().sum();
            let class_probs = if positive_mass > 0.0 {
                full[..c].iter().map(|p| p / positive_mass).collect()
            } else {
                vec![1.0 / c as f64; c]
            };
            InstancePrediction { score: positive_mass, class_probs, label }
        }
    }
}

fn two_stage_rule(score: f64, class_probs: Vec<f64>, threshold: f64) -> InstancePrediction {
    let label = if score < threshold { 0 } else { argmax_lowest(&class_probs) + 1 };
    InstancePrediction { score, class_probs, label }
}
