use crate::error::{CoreError, Result};

/// `‖pred − truth‖₂ / ‖truth‖₂`. A zero reference gives 0 for an exact
/// match and infinity otherwise.
pub fn relative_error(pred: &[f32], truth: &[f32]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "relative_error on mismatched lengths");
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth) {
        let d = p as f64 - t as f64;
        num += d * d;
        den += (t as f64) * (t as f64);
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// One relative error per channel of a `[C, H, W]` snapshot.
pub fn channel_errors(pred: &[f32], truth: &[f32], channels: usize) -> Vec<f64> {
    let n = truth.len() / channels;
    pred.chunks(n)
        .zip(truth.chunks(n))
        .map(|(p, t)| relative_error(p, t))
        .collect()
}

/// Time average of the first `horizon` per-step errors, where entry `k`
/// holds the error after `k + 1` steps.
pub fn mean_rollout_error(per_step: &[f64], horizon: usize) -> Result<f64> {
    if horizon == 0 || horizon > per_step.len() {
        return Err(CoreError::Invalid(format!(
            "horizon {horizon} outside 1..={}",
            per_step.len()
        )));
    }
    Ok(per_step[..horizon].iter().sum::<f64>() / horizon as f64)
}

/// Mean and population standard deviation of each column.
pub fn column_stats(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    (0..first.len())
        .map(|j| {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect()
}
