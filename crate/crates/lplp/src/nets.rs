//! Small MLPs: a shared feature extractor `f`, a binary instance scorer `g`
//! (sigmoid output), and a positive-class head `h` (softmax output).
//!
//! Hidden layers use ReLU; the final layer of every MLP is linear, with the
//! squashing (sigmoid / softmax) applied by the head-specific wrappers.
//! Parameters are flat `Vec<f64>`s laid out layer by layer, weights
//! (row-major, `out x in`) before biases.

use crate::autodiff::{softmax, Tape, Var};
use crate::rng::{derive_seed, stream};
use rand::Rng;
use rand_distr::StandardNormal;

/// Layer widths, input dimension first. `[8, 32, 16]` is two layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Self {
        assert!(layer_widths.len() >= 2, "an MLP needs an input width and at least one layer");
        assert!(layer_widths.iter().all(|&w| w > 0), "layer widths must be positive");
        MlpSpec { layer_widths }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// He-style initialization: weights ~ Normal(0, 2/fan_in), biases 0.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "init", 0);
    let mut params = Vec::with_capacity(spec.num_params());
    for w in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(std * rng.sample::<f64, _>(StandardNormal));
        }
        params.extend(std::iter::repeat(0.0).take(fan_out));
    }
    params
}

/// An MLP: spec plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Mlp { spec, params }
    }

    /// Bind the parameters to a tape as leaves, for a differentiable pass.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        let vars: Vec<Var<'t>> = self.params.iter().map(|&p| tape.var(p)).collect();
        BoundMlp::from_vars(self.spec.clone(), vars)
    }

    /// Plain-value forward pass for inference; mirrors [`BoundMlp::forward`].
    pub fn forward_values(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.spec.input_dim(), "input dimension mismatch");
        let mut activations: Vec<f64> = input.to_vec();
        let mut offset = 0;
        let layers = self.spec.layer_widths.len() - 1;
        for (layer, w) in self.spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut z = biases[o];
                for (i, &x) in activations.iter().enumerate() {
                    z += weights[o * fan_in + i] * x;
                }
                if layer + 1 < layers && z < 0.0 {
                    z = 0.0;
                }
                next.push(z);
            }
            activations = next;
        }
        activations
    }
}

/// An MLP whose parameters live as leaves on a tape.
pub struct BoundMlp<'t> {
    spec: MlpSpec,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundMlp<'t> {
    /// Wrap existing leaves (e.g. the parameter vector handed to the
    /// gradient checker) as this MLP's parameters.
    pub fn from_vars(spec: MlpSpec, vars: Vec<Var<'t>>) -> Self {
        assert_eq!(vars.len(), spec.num_params(), "parameter count mismatch");
        BoundMlp { spec, vars }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Adjoints of the parameters, in layout order. Valid after backward.
    pub fn gradients(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.adjoint()).collect()
    }

    /// Forward pass: ReLU between layers, linear final layer.
    pub fn forward(&self, input: &[Var<'t>]) -> Vec<Var<'t>> {
        assert_eq!(input.len(), self.spec.input_dim(), "input dimension mismatch");
        let mut activations: Vec<Var<'t>> = input.to_vec();
        let mut offset = 0;
        let layers = self.spec.layer_widths.len() - 1;
        for (layer, w) in self.spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.vars[offset..offset + fan_in * fan_out];
            let biases = &self.vars[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut z = biases[o];
                for (i, &x) in activations.iter().enumerate() {
                    z = z + weights[o * fan_in + i] * x;
                }
                next.push(if layer + 1 < layers { z.relu() } else { z });
            }
            activations = next;
        }
        activations
    }
}

/// The three networks of the joint model: shared feature extractor,
/// binary score head, and positive-class head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTriple {
    pub feature: Mlp,
    pub score_head: Mlp,
    pub class_head: Mlp,
}

/// Default desk-scale architecture for the feature extractor.
pub fn default_feature_spec(feature_dim: usize) -> MlpSpec {
    MlpSpec::new(vec![feature_dim, 32, 16])
}

/// Default single-layer score head on top of the 16-dim features.
pub fn default_score_spec() -> MlpSpec {
    MlpSpec::new(vec![16, 1])
}

/// Default single-layer class head over `num_classes` outputs.
pub fn default_class_spec(num_classes: usize) -> MlpSpec {
    MlpSpec::new(vec![16, num_classes])
}

impl ModelTriple {
    /// Default architecture for `feature_dim` inputs and `c` positive
    /// classes, with each part initialized from its own derived seed.
    pub fn init_default(feature_dim: usize, c: usize, seed: u64) -> Self {
        let triple = ModelTriple {
            feature: Mlp::init(default_feature_spec(feature_dim), derive_seed(seed, "feature", 0)),
            score_head: Mlp::init(default_score_spec(), derive_seed(seed, "score-head", 0)),
            class_head: Mlp::init(default_class_spec(c), derive_seed(seed, "class-head", 0)),
        };
        triple.check_shapes();
        triple
    }

    fn check_shapes(&self) {
        assert_eq!(self.score_head.spec.output_dim(), 1, "score head must output one logit");
        assert_eq!(
            self.feature.spec.output_dim(),
            self.score_head.spec.input_dim(),
            "feature/score dimension mismatch"
        );
        assert_eq!(
            self.feature.spec.output_dim(),
            self.class_head.spec.input_dim(),
            "feature/class dimension mismatch"
        );
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundTriple<'t> {
        BoundTriple {
            feature: self.feature.bind(tape),
            score_head: self.score_head.bind(tape),
            class_head: self.class_head.bind(tape),
        }
    }

    /// Inference-path instance score.
    pub fn score_value(&self, features: &[f64]) -> f64 {
        let feat = self.feature.forward_values(features);
        let logit = self.score_head.forward_values(&feat)[0];
        stable_sigmoid(logit)
    }

    /// Inference-path class distribution over the positive classes.
    pub fn class_probs_value(&self, features: &[f64]) -> Vec<f64> {
        let feat = self.feature.forward_values(features);
        softmax_values(&self.class_head.forward_values(&feat))
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The model triple bound to a tape.
pub struct BoundTriple<'t> {
    pub feature: BoundMlp<'t>,
    pub score_head: BoundMlp<'t>,
    pub class_head: BoundMlp<'t>,
}

impl<'t> BoundTriple<'t> {
    /// Shared features for one instance.
    pub fn features(&self, tape: &'t Tape, instance_features: &[f64]) -> Vec<Var<'t>> {
        let input: Vec<Var<'t>> = instance_features.iter().map(|&x| tape.var(x)).collect();
        self.feature.forward(&input)
    }

    /// Positive-instance score in (0, 1): sigmoid of the score-head logit.
    pub fn instance_score(&self, features: &[Var<'t>]) -> Var<'t> {
        self.score_head.forward(features)[0].sigmoid()
    }

    /// Class distribution over the positive classes: softmax of the
    /// class-head logits.
    pub fn class_probs(&self, features: &[Var<'t>]) -> Vec<Var<'t>> {
        softmax(&self.class_head.forward(features))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn biases_start_at_zero() {
        let spec = MlpSpec::new(vec![4, 3, 2]);
        let params = init_params(&spec, 1);
        // Layer 1 biases.
        assert!(params[12..15].iter().all(|&b| b == 0.0));
        // Layer 2 biases.
        assert!(params[15 + 6..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn weight_variance_tracks_he_target() {
        let spec = MlpSpec::new(vec![32, 320]);
        let params = init_params(&spec, 5);
        let weights = &params[..32 * 320];
        let n = weights.len() as f64;
        let mean: f64 = weights.iter().sum::<f64>() / n;
        let var: f64 = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 32.0;
        assert!((var - target).abs() / target < 0.10, "sample var {var}, target {target}");
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(vec![8, 8]);
        assert_eq!(init_params(&spec, 3), init_params(&spec, 3));
        assert_ne!(init_params(&spec, 3), init_params(&spec, 4));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(vec![3, 4, 2]);
        let mlp = Mlp { spec: spec.clone(), params: vec![0.0; spec.num_params()] };
        assert_eq!(mlp.forward_values(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3]);
        let mut params = vec![0.0; spec.num_params()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let mlp = Mlp { spec, params };
        let x = [0.25, -1.5, 3.0];
        assert_eq!(mlp.forward_values(&x), x.to_vec());
    }

    #[test]
    fn random_params_stay_finite_on_a_box() {
        let mut rng = crate::rng::stream(2, "nets-finite", 0);
        use rand::Rng;
        let model = ModelTriple::init_default(6, 3, 17);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let s = model.score_value(&x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            let z = model.class_probs_value(&x);
            assert!(z.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn graph_forward_matches_value_forward() {
        let model = ModelTriple::init_default(5, 2, 40);
        let x = [0.3, -0.8, 1.4, 0.0, -2.2];
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let feat = bound.features(&tape, &x);
        let score = bound.instance_score(&feat);
        let probs = bound.class_probs(&feat);
        assert!((score.value() - model.score_value(&x)).abs() < 1e-14);
        let z = model.class_probs_value(&x);
        for (graph, plain) in probs.iter().zip(&z) {
            assert!((graph.value() - plain).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_scorer_outputs_half() {
        let mut model = ModelTriple::init_default(4, 2, 9);
        for p in &mut model.score_head.params {
            *p = 0.0;
        }
        assert_eq!(model.score_value(&[1.0, 2.0, 3.0, 4.0]), 0.5);
    }

    #[test]
    fn large_logit_saturates_score() {
        let spec = MlpSpec::new(vec![2, 1]);
        let mut params = vec![0.0; spec.num_params()];
        params[2] = 20.0; // bias
        let scorer = Mlp { spec, params };
        let logit = scorer.forward_values(&[0.0, 0.0])[0];
        assert!(stable_sigmoid(logit) >= 0.999_999_9);
    }

    #[test]
    fn class_probs_sum_to_one_and_pick_the_peaked_logit() {
        let p = softmax_values(&[5.0, 0.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.98);

        let uniform = softmax_values(&[0.0, 0.0]);
        assert_eq!(uniform, vec![0.5, 0.5]);
    }

    #[test]
    fn score_is_pure() {
        let model = ModelTriple::init_default(4, 2, 31);
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(model.score_value(&x), model.score_value(&x));
    }

    /// Split a flat parameter vector into the triple's three bound parts.
    fn bind_from_flat<'t>(
        model: &ModelTriple,
        vars: &[Var<'t>],
    ) -> (BoundMlp<'t>, BoundMlp<'t>, BoundMlp<'t>) {
        let nf = model.feature.spec.num_params();
        let ng = model.score_head.spec.num_params();
        let f = BoundMlp::from_vars(model.feature.spec.clone(), vars[..nf].to_vec());
        let g = BoundMlp::from_vars(model.score_head.spec.clone(), vars[nf..nf + ng].to_vec());
        let h = BoundMlp::from_vars(model.class_head.spec.clone(), vars[nf + ng..].to_vec());
        (f, g, h)
    }

    #[test]
    fn head_gradients_pass_finite_difference_checks() {
        let mut rng = crate::rng::stream(77, "nets-gradcheck", 0);
        use rand::Rng;
        for trial in 0..20 {
            let d = rng.gen_range(2..6);
            let c = rng.gen_range(2..4);
            let model = ModelTriple {
                feature: Mlp::init(MlpSpec::new(vec![d, 6, 4]), rng.gen()),
                score_head: Mlp::init(MlpSpec::new(vec![4, 1]), rng.gen()),
                class_head: Mlp::init(MlpSpec::new(vec![4, c]), rng.gen()),
            };
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let flat: Vec<f64> = model
                .feature
                .params
                .iter()
                .chain(&model.score_head.params)
                .chain(&model.class_head.params)
                .copied()
                .collect();
            // A scalar mixing both heads so every parameter matters.
            let report = grad_check(
                |tape, vars| {
                    let (f, g, h) = bind_from_flat(&model, vars);
                    let input: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
                    let feat = f.forward(&input);
                    let score = g.forward(&feat)[0].sigmoid();
                    let probs = softmax(&h.forward(&feat));
                    score * probs[0]
                },
                &flat,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "trial {trial}: {report}");
        }
    }

    #[test]
    fn feature_extractor_receives_gradient_from_both_heads() {
        let model = ModelTriple::init_default(4, 2, 3);
        let x = [0.4, -0.2, 0.9, 1.3];

        let tape = Tape::new();
        let bound = model.bind(&tape);
        let feat = bound.features(&tape, &x);
        let score = bound.instance_score(&feat);
        tape.backward(score);
        assert!(bound.feature.gradients().iter().any(|&g| g != 0.0));

        let tape = Tape::new();
        let bound = model.bind(&tape);
        let feat = bound.features(&tape, &x);
        let probs = bound.class_probs(&feat);
        tape.backward(probs[0]);
        assert!(bound.feature.gradients().iter().any(|&g| g != 0.0));
    }
}
