//! Desk-scale fidelity and alignment measures.
//!
//! Fidelity is per-dimension RMS distance (scale transfers across dims);
//! alignment is the log-density of the edited point under the
//! target-conditioned mixture, which scores multimodal targets properly.

use serde::Serialize;

use crate::field::GaussianMixture;
use crate::{Error, Real, Result};

/// Fidelity/alignment pair for one edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricPair {
    /// Per-dimension RMS distance to the original point; lower is better.
    pub fidelity: f64,
    /// Log-density under the target mixture at `t = 0`; higher is better.
    pub alignment: f64,
}

/// `||a - b||_2 / sqrt(d)`.
pub fn fidelity<R: Real>(a: &[R], b: &[R]) -> Result<R> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut sq = R::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        sq = sq + d * d;
    }
    Ok((sq / R::from_usize(a.len()).unwrap()).sqrt())
}

/// Mixture log-density of `y0` at `t = 0`.
pub fn alignment<R: Real>(y0: &[R], target: &GaussianMixture<R>) -> R {
    target.log_density(y0)
}
