//! Output-aggregation MIL: pool per-instance scores into a bag score and
//! apply a bag-level binary cross-entropy.

use crate::autodiff::{sum, Tape, Var};
use crate::data::Bag;
use crate::nets::BoundTriple;

/// How instance scores are pooled into the bag score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregationKind {
    Mean,
    /// Hard max; gradient goes to the arg-max score, lowest index on ties.
    Max,
    /// Log-sum-exp with sharpness `r`: `(1/r)·log((1/n)·Σ exp(r·s_j))`.
    /// The `1/n` term keeps the output inside `[min s, max s]`, so it
    /// interpolates from mean pooling (r → 0) to max pooling (r → ∞).
    Lse { r: f64 },
}

/// Default log-sum-exp sharpness: intermediate between mean and max at the
/// default bag size of 32.
pub const DEFAULT_LSE_R: f64 = 4.0;

impl AggregationKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            AggregationKind::Lse { r } if *r <= 0.0 => {
                Err(format!("lse sharpness must be positive, got {r}"))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationKind::Mean => write!(f, "mean"),
            AggregationKind::Max => write!(f, "max"),
            AggregationKind::Lse { r } => write!(f, "lse(r={r})"),
        }
    }
}

/// Pool instance scores into the bag score.
///
/// # Panics
///
/// Panics on an empty score slice.
pub fn aggregate<'t>(scores: &[Var<'t>], kind: AggregationKind) -> Var<'t> {
    assert!(!scores.is_empty(), "cannot aggregate an empty bag");
    match kind {
        AggregationKind::Mean => sum(scores) / scores.len() as f64,
        AggregationKind::Max => {
            let mut best = scores[0];
            for &s in &scores[1..] {
                if s.value() > best.value() {
                    best = s;
                }
            }
            best
        }
        AggregationKind::Lse { r } => {
            assert!(r > 0.0, "lse sharpness must be positive");
            // Shift by the (detached) max so exp never overflows; the
            // identity lse(s) = m + (1/r)·log((1/n)·Σ exp(r·(s-m))) holds
            // for any fixed m, values and gradients alike.
            let m = scores.iter().map(|s| s.value()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<Var<'t>> = scores.iter().map(|&s| ((s - m) * r).exp()).collect();
            (sum(&exps) / scores.len() as f64).ln() / r + m
        }
    }
}

/// Bag-level binary cross-entropy. The bag score is clamped to
/// `[1e-12, 1 - 1e-12]` before the logarithms, so saturated scores cannot
/// produce non-finite losses.
pub fn mil_loss<'t>(bag_label: f64, bag_score: Var<'t>) -> Var<'t> {
    debug_assert!(bag_label == 0.0 || bag_label == 1.0);
    let s = bag_score.clamp(1e-12, 1.0 - 1e-12);
    let one_minus = (1.0 - s).ln();
    let log_s = s.ln();
    (log_s * bag_label + one_minus * (1.0 - bag_label)).neg()
}

/// Forward MIL pass over a bag: per-instance scores (in instance order, for
/// reuse as the LLP soft mask), the pooled bag score, and the loss term.
pub fn mil_bag_forward<'t>(
    bound: &BoundTriple<'t>,
    tape: &'t Tape,
    bag: &Bag,
    kind: AggregationKind,
) -> (Vec<Var<'t>>, Var<'t>, Var<'t>) {
    assert!(!bag.is_empty(), "cannot run MIL on an empty bag");
    let scores: Vec<Var<'t>> = bag
        .instances
        .iter()
        .map(|inst| {
            let feat = bound.features(tape, &inst.features);
            bound.instance_score(&feat)
        })
        .collect();
    let bag_score = aggregate(&scores, kind);
    let loss = mil_loss(bag.binary_label(), bag_score);
    (scores, bag_score, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::data::{BagLabel, Instance};
    use crate::nets::ModelTriple;
    use rand::Rng;

    fn score_vars<'t>(tape: &'t Tape, values: &[f64]) -> Vec<Var<'t>> {
        values.iter().map(|&v| tape.var(v)).collect()
    }

    #[test]
    fn mean_and_max_basics() {
        let tape = Tape::new();
        let s = score_vars(&tape, &[0.2, 0.8]);
        assert!((aggregate(&s, AggregationKind::Mean).value() - 0.5).abs() < 1e-15);
        assert_eq!(aggregate(&s, AggregationKind::Max).value(), 0.8);
    }

    #[test]
    fn max_routes_gradient_to_first_of_tied_scores() {
        let tape = Tape::new();
        let a = tape.var(0.7);
        let b = tape.var(0.7);
        let m = aggregate(&[a, b], AggregationKind::Max);
        m.backward();
        assert_eq!(a.adjoint(), 1.0);
        assert_eq!(b.adjoint(), 0.0);
    }

    #[test]
    fn lse_unit_sharpness_worked_example() {
        let tape = Tape::new();
        let s = score_vars(&tape, &[0.0, 1.0]);
        let lse = aggregate(&s, AggregationKind::Lse { r: 1.0 });
        let expected = ((1.0 + std::f64::consts::E) / 2.0).ln();
        assert!((lse.value() - expected).abs() < 1e-12);
        assert!((lse.value() - 0.62011).abs() < 1e-5);
    }

    #[test]
    fn aggregate_stays_between_min_and_max() {
        let mut rng = crate::rng::stream(8, "mil-bounds", 0);
        for _ in 0..100 {
            let n = rng.gen_range(1..64);
            let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for kind in [
                AggregationKind::Mean,
                AggregationKind::Max,
                AggregationKind::Lse { r: 0.5 },
                AggregationKind::Lse { r: DEFAULT_LSE_R },
                AggregationKind::Lse { r: 50.0 },
            ] {
                let tape = Tape::new();
                let s = score_vars(&tape, &values);
                let agg = aggregate(&s, kind).value();
                assert!(
                    agg >= lo - 1e-12 && agg <= hi + 1e-12,
                    "{kind}: {agg} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn lse_interpolates_between_mean_and_max() {
        let mut rng = crate::rng::stream(9, "mil-limits", 0);
        for _ in 0..100 {
            let values: Vec<f64> = (0..32).map(|_| rng.gen::<f64>()).collect();
            let tape = Tape::new();
            let s = score_vars(&tape, &values);
            let mean = aggregate(&s, AggregationKind::Mean).value();
            let max = aggregate(&s, AggregationKind::Max).value();
            let soft = aggregate(&s, AggregationKind::Lse { r: 0.01 }).value();
            let sharp = aggregate(&s, AggregationKind::Lse { r: 100.0 }).value();
            assert!((soft - mean).abs() < 1e-3, "lse(0.01)={soft} mean={mean}");
            assert!((sharp - max).abs() < 0.05, "lse(100)={sharp} max={max}");
        }
    }

    #[test]
    #[should_panic(expected = "empty bag")]
    fn aggregating_nothing_is_a_usage_error() {
        let _ = aggregate(&[], AggregationKind::Mean);
    }

    #[test]
    fn loss_vanishes_on_perfect_predictions() {
        let tape = Tape::new();
        let confident_pos = tape.var(1.0);
        assert!(mil_loss(1.0, confident_pos).value() < 1e-11);
        let confident_neg = tape.var(0.0);
        assert!(mil_loss(0.0, confident_neg).value() < 1e-11);
    }

    #[test]
    fn loss_at_half_is_ln_two() {
        let tape = Tape::new();
        let s = tape.var(0.5);
        let loss = mil_loss(1.0, s);
        assert!((loss.value() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss.value() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = crate::rng::stream(10, "mil-loss", 0);
        for _ in 0..200 {
            let tape = Tape::new();
            let s = tape.var(rng.gen::<f64>());
            let y = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            assert!(mil_loss(y, s).value() >= 0.0);
        }
    }

    fn tiny_bag(labels: &[usize], seed: u64) -> Bag {
        let mut rng = crate::rng::stream(seed, "mil-bag", 0);
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Instance {
                id: i as u64,
                true_label: label,
                features: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            })
            .collect();
        let positives: Vec<usize> = labels.iter().filter(|&&l| l > 0).copied().collect();
        let label = if positives.is_empty() {
            BagLabel::Negative
        } else {
            let c1 = positives.iter().filter(|&&l| l == 1).count() as f64;
            let total = positives.len() as f64;
            BagLabel::Positive { proportions: vec![c1 / total, 1.0 - c1 / total] }
        };
        Bag { id: 0, instances, label }
    }

    #[test]
    fn zero_scorer_on_negative_bag_gives_ln_two() {
        let mut model = ModelTriple::init_default(4, 2, 21);
        for p in &mut model.score_head.params {
            *p = 0.0;
        }
        let bag = tiny_bag(&[0, 0, 0], 4);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (scores, bag_score, loss) = mil_bag_forward(&bound, &tape, &bag, AggregationKind::Mean);
        assert!(scores.iter().all(|s| s.value() == 0.5));
        assert_eq!(bag_score.value(), 0.5);
        assert!((loss.value() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn scores_stay_in_the_open_unit_interval() {
        let model = ModelTriple::init_default(4, 2, 22);
        let bag = tiny_bag(&[0, 1, 2, 0, 1], 5);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let (scores, _, _) = mil_bag_forward(&bound, &tape, &bag, AggregationKind::Max);
        assert!(scores.iter().all(|s| s.value() > 0.0 && s.value() < 1.0));
    }

    #[test]
    fn loss_is_permutation_invariant_for_mean_and_lse() {
        let values = [0.1, 0.9, 0.4, 0.6, 0.3];
        let mut shuffled = values;
        shuffled.reverse();
        for kind in [AggregationKind::Mean, AggregationKind::Lse { r: DEFAULT_LSE_R }, AggregationKind::Max] {
            let tape = Tape::new();
            let a = aggregate(&score_vars(&tape, &values), kind);
            let b = aggregate(&score_vars(&tape, &shuffled), kind);
            let la = mil_loss(1.0, a).value();
            let lb = mil_loss(1.0, b).value();
            assert!((la - lb).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn bag_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(23, "mil-gradcheck", 0);
        for kind in [
            AggregationKind::Mean,
            AggregationKind::Max,
            AggregationKind::Lse { r: DEFAULT_LSE_R },
        ] {
            let model = ModelTriple {
                feature: crate::nets::Mlp::init(crate::nets::MlpSpec::new(vec![4, 5, 3]), rng.gen()),
                score_head: crate::nets::Mlp::init(crate::nets::MlpSpec::new(vec![3, 1]), rng.gen()),
                class_head: crate::nets::Mlp::init(crate::nets::MlpSpec::new(vec![3, 2]), rng.gen()),
            };
            let bag = tiny_bag(&[0, 1, 2, 1], rng.gen());
            let nf = model.feature.spec.num_params();
            let ng = model.score_head.spec.num_params();
            let flat: Vec<f64> = model
                .feature
                .params
                .iter()
                .chain(&model.score_head.params)
                .copied()
                .collect();
            let report = grad_check(
                |tape, vars| {
                    let f = crate::nets::BoundMlp::from_vars(
                        model.feature.spec.clone(),
                        vars[..nf].to_vec(),
                    );
                    let g = crate::nets::BoundMlp::from_vars(
                        model.score_head.spec.clone(),
                        vars[nf..nf + ng].to_vec(),
                    );
                    let scores: Vec<Var> = bag
                        .instances
                        .iter()
                        .map(|inst| {
                            let input: Vec<Var> =
                                inst.features.iter().map(|&x| tape.var(x)).collect();
                            g.forward(&f.forward(&input))[0].sigmoid()
                        })
                        .collect();
                    mil_loss(bag.binary_label(), aggregate(&scores, kind))
                },
                &flat,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "{kind}: {report}");
        }
    }
}
