//! Gradient verification against central finite differences.

use super::{Parameter, Tensor};
use crate::error::{FaorError, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Max relative error over the sampled entries, where the relative error
    /// is |analytic − numeric| / max(|analytic|, |numeric|, 1e-3).
    pub max_rel_err: f64,
    pub samples: usize,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare analytic gradients of `loss_fn` against central finite differences
/// over up to `max_samples` randomly chosen parameter entries.
///
/// `loss_fn` must rebuild the forward graph on every call (parameter data is
/// perturbed in place between calls and restored afterwards).
pub fn finite_difference_check<T: Scalar, F>(
    params: &[&Parameter<T>],
    loss_fn: F,
    step: f64,
    max_samples: usize,
    rng: &mut impl Rng,
) -> Result<FdReport>
where
    F: Fn() -> Result<Tensor<T>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<T>> = params
        .iter()
        .map(|p| {
            p.grad()
                .unwrap_or_else(|| vec![T::zero(); p.len()])
        })
        .collect();
    for p in params {
        p.zero_grad();
    }

    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            entries.push((pi, ei));
        }
    }
    entries.shuffle(rng);
    entries.truncate(max_samples);
    if entries.is_empty() {
        return Err(FaorError::invalid("no parameter entries to check"));
    }

    let mut report = FdReport {
        max_rel_err: 0.0,
        samples: entries.len(),
        worst: None,
    };
    for (pi, ei) in entries {
        let p = params[pi];
        let original = p.to_vec();
        let base = original[ei].to_f64_lossy();

        let mut plus = original.clone();
        plus[ei] = T::from_f64(base + step);
        p.set_data(&plus)?;
        let l_plus = loss_fn()?.item()?.to_f64_lossy();

        let mut minus = original.clone();
        minus[ei] = T::from_f64(base - step);
        p.set_data(&minus)?;
        let l_minus = loss_fn()?.item()?.to_f64_lossy();

        p.set_data(&original)?;

        let numeric = (l_plus - l_minus) / (2.0 * step);
        let a = analytic[pi][ei].to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(1e-3);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((p.name().to_string(), ei, a, numeric));
        }
    }
    Ok(report)
}
