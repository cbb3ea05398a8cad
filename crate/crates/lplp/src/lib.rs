//! Weakly supervised instance classification from partial label proportions.
//!
//! A bag of instances carries a binary label (does it contain any positive
//! instance?) and, for positive bags, the proportions among the `C` positive
//! classes only — the negative-class share is unknown. This crate trains a
//! `C+1`-way instance classifier from that supervision by combining two
//! weakly supervised subproblems end-to-end:
//!
//! - a MIL head scoring each instance as positive/negative, trained with a
//!   bag-level binary cross-entropy over pooled instance scores, and
//! - an LLP head predicting positive-class probabilities, trained with a
//!   proportion loss whose per-bag estimate weights instances by the
//!   differentiable MIL scores (a soft positive-instance mask).
//!
//! The crate also ships the comparison suite around that method: supervised
//! and full-proportion oracles (`ce`, `pl`), the partial-proportion-loss
//! baseline (`ppl`), an independently trained two-stage pipeline, a synthetic
//! Gaussian bag generator, metrics (accuracy, mIoU), and a CLI driving the
//! whole experiment grid.
//!
//! Everything runs on a small scalar reverse-mode autodiff tape
//! ([`autodiff::Tape`]) so that gradients of every loss are checkable against
//! finite differences ([`autodiff::grad_check`]).

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod llp;
pub mod mil;
pub mod nets;
pub mod rng;
pub mod train;

pub mod cli;
