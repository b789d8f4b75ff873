//! Central finite-difference gradient verification.
//!
//! The analytic backward passes in this crate are all hand-derived, so every
//! network is validated against numeric differentiation: perturb one scalar
//! parameter at a time by ±h, re-evaluate the loss, and compare the central
//! difference against the gradient the backward pass produced.

use super::{perturb_param, Parameterized};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error across all checked parameters.
    pub worst_rel: f64,
    /// Parameter index (flat, visit order) where the worst error occurred.
    pub worst_index: usize,
    /// Analytic / numeric pair at the worst index.
    pub worst_pair: (f64, f64),
    /// Number of scalar parameters checked.
    pub checked: usize,
}

/// Relative error with an absolute floor: differences below `floor` count
/// as exact so that near-zero gradients do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= 1e-8 {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}

/// True when every (analytic, numeric) pair agrees within `tol` relative
/// error (with the absolute floor of [`rel_err`]).
pub fn grads_close(pairs: &[(f64, f64)], tol: f64) -> bool {
    pairs.iter().all(|&(a, b)| rel_err(a, b) <= tol)
}

/// Check every scalar parameter of `net` against a central finite
/// difference of `loss`.
///
/// The caller must have already run the forward/backward pass that fills the
/// parameter gradients; `loss` re-evaluates the same scalar loss from
/// scratch (it is called with temporarily perturbed parameters).
pub fn grad_check<N: Parameterized>(
    net: &mut N,
    loss: &mut dyn FnMut(&N) -> f64,
    h: f64,
) -> GradCheckReport {
    let analytic = net.flat_grads();
    let mut report = GradCheckReport {
        worst_rel: 0.0,
        worst_index: 0,
        worst_pair: (0.0, 0.0),
        checked: analytic.len(),
    };
    for i in 0..analytic.len() {
        perturb_param(net, i, h);
        let plus = loss(net);
        perturb_param(net, i, -2.0 * h);
        let minus = loss(net);
        perturb_param(net, i, h);
        let numeric = (plus - minus) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        if e > report.worst_rel {
            report.worst_rel = e;
            report.worst_index = i;
            report.worst_pair = (analytic[i], numeric);
        }
    }
    report
}
