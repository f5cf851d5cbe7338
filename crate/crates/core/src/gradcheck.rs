//! Finite-difference gradient verification.
//!
//! Every layer in this crate ships a hand-written backward pass; this is the
//! harness they are all validated against.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences.
///
/// `f` must be a deterministic, smooth scalar function of the flat coordinate
/// vector `point`; `analytic` is the claimed gradient at `point`. Returns the
/// maximum over coordinates of
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if point.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "finite_diff_check: {} coordinates but {} gradient entries",
            point.len(),
            analytic.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Contract("finite_diff_check: eps must be > 0".into()));
    }

    let base_a = f(point)?;
    let base_b = f(point)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::Numeric(format!(
            "non-deterministic forward: two calls at the same point gave {base_a} and {base_b}"
        )));
    }

    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let saved = probe[i];
        probe[i] = saved + eps;
        let plus = f(&probe)?;
        probe[i] = saved - eps;
        let minus = f(&probe)?;
        probe[i] = saved;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
