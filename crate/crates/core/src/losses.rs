//! Training objectives: mean squared error and the Poincaré-ball loss.
//!
//! Both return the value together with the gradient with respect to the
//! prediction, so the caller can feed it straight into backpropagation.

use crate::error::{Error, Result};
use crate::geometry::arcosh1p;

/// Default denominator guard for [`poincare_loss`].
pub const DEFAULT_LOSS_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_wrt_pred: Vec<f64>,
}

/// What [`poincare_loss_with_policy`] does with a sample whose denominator
/// `(1 − n_p²)(1 − n_t²) + δ` is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainPolicy {
    /// Fail with a domain error naming the out-of-ball operand.
    Reject,
    /// Treat the sample like a bound clamp: zero value, zero gradient.
    Clamp,
}

fn check_shapes(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::usage(format!(
            "shape mismatch: pred has {} elements, target has {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// `mean((target − pred)²)`, gradient `2(pred − target)/N`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<LossOutput> {
    check_shapes(pred, target)?;
    if pred.is_empty() {
        return Ok(LossOutput {
            value: 0.0,
            grad_wrt_pred: Vec::new(),
        });
    }
    let n = pred.len() as f64;
    let value = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        / n;
    let grad_wrt_pred = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok(LossOutput {
        value,
        grad_wrt_pred,
    })
}

/// Poincaré-ball loss averaged over `batch` samples laid out row-major.
///
/// Per sample, with `msq(x) = mean(x²)`:
///
/// ```text
/// A = 1 + 2·msq(pred − target) / ((1 − msq(pred))·(1 − msq(target)) + δ)
/// loss = arcosh(max(A, 1))
/// ```
pub fn poincare_loss(pred: &[f64], target: &[f64], batch: usize, delta: f64) -> Result<LossOutput> {
    poincare_loss_with_policy(pred, target, batch, delta, DomainPolicy::Reject).map(|(o, _)| o)
}

/// [`poincare_loss`] with an explicit out-of-domain policy. Also returns
/// the number of samples that hit the policy.
pub fn poincare_loss_with_policy(
    pred: &[f64],
    target: &[f64],
    batch: usize,
    delta: f64,
    policy: DomainPolicy,
) -> Result<(LossOutput, usize)> {
    check_shapes(pred, target)?;
    if batch == 0 {
        if pred.is_empty() {
            return Ok((
                LossOutput {
                    value: 0.0,
                    grad_wrt_pred: Vec::new(),
                },
                0,
            ));
        }
        return Err(Error::usage("batch size 0 with non-empty prediction"));
    }
    if !pred.len().is_multiple_of(batch) || pred.is_empty() {
        return Err(Error::usage(format!(
            "{} elements do not split into {batch} non-empty samples",
            pred.len()
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::usage(format!("delta {delta} must be non-negative")));
    }

    let width = pred.len() / batch;
    let n = width as f64;
    let b = batch as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    let mut masked = 0;

    for (s, (p, t)) in pred.chunks(width).zip(target.chunks(width)).enumerate() {
        let m_res = p.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let m_pred = p.iter().map(|x| x * x).sum::<f64>() / n;
        let m_tgt = t.iter().map(|x| x * x).sum::<f64>() / n;
        let denom = (1.0 - m_pred) * (1.0 - m_tgt) + delta;
        if !(denom > 0.0) {
            match policy {
                DomainPolicy::Reject => {
                    let which = if m_pred >= 1.0 { "pred" } else { "target" };
                    return Err(Error::domain(format!(
                        "sample {s}: `{which}` mean-square outside the unit interval \
                         (msq(pred) = {m_pred}, msq(target) = {m_tgt})"
                    )));
                }
                DomainPolicy::Clamp => {
                    masked += 1;
                    continue;
                }
            }
        }
        let z = 2.0 * m_res / denom;
        total += arcosh1p(z);
        if z <= 0.0 {
            continue;
        }
        // d arcosh(1 + z)/dz = 1/sqrt(z(z + 2))
        let outer = 1.0 / (z * (z + 2.0)).sqrt() / b;
        let dden_dpred = -(1.0 - m_tgt);
        let g = &mut grad[s * width..(s + 1) * width];
        for ((gi, x), y) in g.iter_mut().zip(p).zip(t) {
            let dm_res = 2.0 * (x - y) / n;
            let dm_pred = 2.0 * x / n;
            let dz = 2.0 * (dm_res * denom - m_res * dden_dpred * dm_pred) / (denom * denom);
            *gi = outer * dz;
        }
    }

    Ok((
        LossOutput {
            value: total / b,
            grad_wrt_pred: grad,
        },
        masked,
    ))
}
