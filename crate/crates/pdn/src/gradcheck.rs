//! Central finite-difference gradient checking.
//!
//! The checker re-runs the forward pass from scratch for every perturbed
//! entry, so it stays independent of the backward implementation it
//! validates. The builder closure must be deterministic: stochastic pieces
//! (dropout) have to derive their randomness from a fixed seed inside the
//! closure.

use crate::autodiff::{Tape, Value};
use crate::error::Result;
use crate::sparse::DenseMatrix;

/// Default step for central differences on f64.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Relative tolerance from the f64 central-difference noise floor.
pub const REL_TOL: f64 = 1e-4;
/// Absolute errors below this floor always pass.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// max |analytic - numeric| / max(|analytic|, |numeric|) over entries
    /// whose magnitude exceeds the absolute floor
    pub max_rel_err: f64,
    /// max |analytic - numeric| over all entries
    pub max_abs_err: f64,
    /// entries compared
    pub checked: usize,
}

impl GradCheck {
    /// Entries whose absolute error is under [`ABS_FLOOR`] never contribute
    /// to `max_rel_err`, so the relative tolerance is the whole criterion.
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Runs one analytic backward pass and compares every leaf gradient against
/// central differences of the rebuilt forward pass.
pub fn finite_diff_check<B>(initial: &[DenseMatrix], h: f64, build: &B) -> Result<GradCheck>
where
    B: Fn(&mut Tape, &[Value]) -> Result<Value>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Value> = initial.iter().map(|d| tape.leaf(d.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    tape.backward(loss)?;
    let analytic: Vec<DenseMatrix> = leaves.iter().map(|v| tape.grad(*v).clone()).collect();

    let eval = |data: &[DenseMatrix]| -> Result<f64> {
        let mut t = Tape::new();
        let ls: Vec<Value> = data.iter().map(|d| t.leaf(d.clone())).collect();
        let l = build(&mut t, &ls)?;
        Ok(t.data(l).get(0, 0))
    };

    let mut work: Vec<DenseMatrix> = initial.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].values().len() {
            let orig = work[p].values()[i];
            work[p].values_mut()[i] = orig + h;
            let f_plus = eval(&work)?;
            work[p].values_mut()[i] = orig - h;
            let f_minus = eval(&work)?;
            work[p].values_mut()[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let ad = analytic[p].values()[i];
            let abs_err = (ad - numeric).abs();
            let denom = ad.abs().max(numeric.abs());
            report.max_abs_err = report.max_abs_err.max(abs_err);
            if abs_err > ABS_FLOOR && denom > 0.0 {
                report.max_rel_err = report.max_rel_err.max(abs_err / denom);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Convenience assertion used throughout the test suites.
pub fn assert_grads_close<B>(initial: &[DenseMatrix], h: f64, build: &B)
where
    B: Fn(&mut Tape, &[Value]) -> Result<Value>,
{
    let report = finite_diff_check(initial, h, build).expect("gradient check forward failed");
    assert!(
        report.passes(REL_TOL),
        "gradient check failed: max_rel_err={:.3e} max_abs_err={:.3e} over {} entries",
        report.max_rel_err,
        report.max_abs_err,
        report.checked
    );
}
