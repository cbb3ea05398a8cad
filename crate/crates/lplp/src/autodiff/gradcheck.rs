//! Central-finite-difference verification of tape gradients.

use super::{Tape, Var};

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    /// Largest relative error over all checked coordinates.
    pub worst_relative_error: f64,
    /// Coordinate attaining the worst error, if any coordinate was checked.
    pub worst_coordinate: Option<usize>,
    /// Coordinates compared against finite differences.
    pub checked: usize,
    /// Coordinates skipped because the ± evaluations straddled a relu kink.
    pub skipped_at_kink: usize,
    /// Set when a loss evaluation was non-finite; names the offending
    /// coordinate (or the unperturbed build).
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(message: String) -> Self {
        GradCheckReport {
            passed: false,
            worst_relative_error: f64::INFINITY,
            worst_coordinate: None,
            checked: 0,
            skipped_at_kink: 0,
            failure: Some(message),
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(msg) = &self.failure {
            return write!(f, "FAIL ({msg})");
        }
        write!(
            f,
            "{} worst_rel_err={:.3e}{} checked={} skipped_at_kink={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.worst_relative_error,
            match self.worst_coordinate {
                Some(i) => format!(" at coordinate {i}"),
                None => String::new(),
            },
            self.checked,
            self.skipped_at_kink,
        )
    }
}

/// Compare the tape's adjoints for `params` against central finite
/// differences `(f(θ+e) − f(θ−e)) / 2e`, one coordinate at a time.
///
/// `build_loss` must deterministically rebuild the same scalar loss from the
/// given parameter leaves. Relative error uses a `max(1, |analytic|,
/// |numeric|)` denominator. Coordinates whose ± evaluations disagree on any
/// relu activation are skipped: the central difference straddles a kink
/// there and says nothing about the subgradient.
pub fn grad_check<F>(build_loss: F, params: &[f64], step: f64, tol: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    assert!(step > 0.0, "grad_check: step must be positive");
    assert!(tol > 0.0, "grad_check: tol must be positive");

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let loss = build_loss(&tape, &vars);
    if !loss.value().is_finite() {
        return GradCheckReport::failed(format!(
            "loss is non-finite ({}) at the unperturbed point",
            loss.value()
        ));
    }
    tape.backward(loss);
    let analytic: Vec<f64> = vars.iter().map(|v| v.adjoint()).collect();

    let eval = |theta: &[f64]| -> (f64, Vec<bool>) {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = theta.iter().map(|&p| tape.var(p)).collect();
        let loss = build_loss(&tape, &vars);
        (loss.value(), tape.relu_signature())
    };

    let mut report = GradCheckReport {
        passed: true,
        worst_relative_error: 0.0,
        worst_coordinate: None,
        checked: 0,
        skipped_at_kink: 0,
        failure: None,
    };
    let mut theta = params.to_vec();
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + step;
        let (f_plus, sig_plus) = eval(&theta);
        theta[i] = saved - step;
        let (f_minus, sig_minus) = eval(&theta);
        theta[i] = saved;

        if !f_plus.is_finite() || !f_minus.is_finite() {
            return GradCheckReport::failed(format!(
                "loss is non-finite when perturbing coordinate {i}"
            ));
        }
        if sig_plus != sig_minus {
            report.skipped_at_kink += 1;
            continue;
        }

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.worst_relative_error {
            report.worst_relative_error = rel;
            report.worst_coordinate = Some(i);
        }
        if rel > tol {
            report.passed = false;
        }
    }
    report
}
