//! Proportion estimation and losses for the LLP side.
//!
//! The soft-masked estimate weights each instance's class distribution by
//! its MIL score, so positive instances dominate the bag-level proportion
//! while the whole expression stays differentiable in f, g, and h.

use crate::autodiff::{sum, Var};
use crate::data::Bag;

/// Guard on the soft-mask denominator and the PPL positive-block mass. The
/// denominator is `max(mask_sum, EPS)`, which leaves the ratio structure of
/// the estimate untouched (and exactly mask-scale-invariant) whenever the
/// mask carries any weight, while an all-zero mask degrades to a bounded
/// value instead of a division by zero.
pub const MASK_EPS: f64 = 1e-8;

/// Mask sums below this are flagged for trainer diagnostics.
pub const DEGENERATE_MASK_SUM: f64 = 1e-6;

/// Floor applied to probabilities before loss-side logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Soft-masked bag-level proportion estimate over the positive classes.
pub struct MaskedProportionEstimate<'t> {
    /// Estimated proportions; sum to 1 whenever the mask is non-degenerate.
    pub proportions: Vec<Var<'t>>,
    /// Total mask weight Σ ŝ_j.
    pub mask_sum: Var<'t>,
    /// True when the mask sum fell below [`DEGENERATE_MASK_SUM`].
    pub degenerate_mask: bool,
}

/// Estimate the positive-class proportions of a bag as the score-weighted
/// average of the per-instance class distributions.
pub fn masked_proportion<'t>(
    scores: &[Var<'t>],
    class_probs: &[Vec<Var<'t>>],
) -> MaskedProportionEstimate<'t> {
    assert_eq!(scores.len(), class_probs.len(), "one class distribution per score");
    assert!(!scores.is_empty(), "cannot estimate proportions of an empty bag");
    let c = class_probs[0].len();
    assert!(class_probs.iter().all(|z| z.len() == c), "ragged class distributions");

    let mask_sum = sum(scores);
    let denominator = if mask_sum.value() < MASK_EPS {
        // Detached floor: keeps the graph finite when every score is ~0.
        mask_sum.tape().var(MASK_EPS)
    } else {
        mask_sum
    };
    let proportions = (0..c)
        .map(|class| {
            let weighted: Vec<Var<'t>> = scores
                .iter()
                .zip(class_probs)
                .map(|(&s, z)| s * z[class])
                .collect();
            sum(&weighted) / denominator
        })
        .collect();
    MaskedProportionEstimate {
        proportions,
        mask_sum,
        degenerate_mask: mask_sum.value() < DEGENERATE_MASK_SUM,
    }
}

/// Bag-level cross-entropy between a target distribution and estimated
/// probabilities: `-Σ target_k · log(max(estimate_k, 1e-12))`. Works for any
/// matching dimension (partial C-way targets and full (C+1)-way targets).
pub fn proportion_cross_entropy<'t>(target: &[f64], estimate: &[Var<'t>]) -> Var<'t> {
    assert_eq!(target.len(), estimate.len(), "target/estimate length mismatch");
    assert!(!target.is_empty());
    let mut terms = Vec::with_capacity(target.len());
    for (&t, &e) in target.iter().zip(estimate) {
        if t == 0.0 {
            // 0·log(x) contributes nothing; skipping it avoids pointless
            // clamp nodes for one-hot targets.
            continue;
        }
        terms.push(e.clamp(LOG_FLOOR, f64::INFINITY).ln() * t);
    }
    if terms.is_empty() {
        estimate[0].tape().var(0.0)
    } else {
        sum(&terms).neg()
    }
}

/// Proportion loss between the bag's stored partial proportions and a
/// soft-masked estimate. Minimized exactly at `estimate = target`, where it
/// equals the target entropy.
pub fn proportion_loss<'t>(target: &[f64], estimate: &MaskedProportionEstimate<'t>) -> Var<'t> {
    proportion_cross_entropy(target, &estimate.proportions)
}

/// Partial-proportion loss over a `C+1`-way head:
///
/// - negative bags: full proportion loss against `(0, …, 0, 1)`;
/// - positive bags: the averaged distribution's positive block is
///   renormalized to the `C`-simplex and compared against the stored
///   partial proportions (set `renormalize: false` to instead score the raw
///   positive block, ignoring the negative output).
pub fn ppl_loss<'t>(bag: &Bag, full_class_probs: &[Vec<Var<'t>>], renormalize: bool) -> Var<'t> {
    assert_eq!(bag.len(), full_class_probs.len(), "one distribution per instance");
    assert!(!bag.is_empty());
    let classes = full_class_probs[0].len();
    let n = bag.len() as f64;
    let averaged: Vec<Var<'t>> = (0..classes)
        .map(|k| {
            let column: Vec<Var<'t>> = full_class_probs.iter().map(|z| z[k]).collect();
            sum(&column) / n
        })
        .collect();
    match bag.proportions() {
        None => {
            let mut target = vec![0.0; classes];
            target[classes - 1] = 1.0;
            proportion_cross_entropy(&target, &averaged)
        }
        Some(target) => {
            assert_eq!(target.len() + 1, classes, "head must have C+1 outputs");
            let block = &averaged[..classes - 1];
            if renormalize {
                let mass = sum(block);
                let denominator = if mass.value() < MASK_EPS {
                    mass.tape().var(MASK_EPS)
                } else {
                    mass
                };
                let renormalized: Vec<Var<'t>> =
                    block.iter().map(|&z| z / denominator).collect();
                proportion_cross_entropy(target, &renormalized)
            } else {
                proportion_cross_entropy(target, block)
            }
        }
    }
}
