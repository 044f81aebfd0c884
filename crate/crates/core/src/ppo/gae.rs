use super::TrainError;

/// Generalized advantage estimation over consecutive episode segments.
///
/// `segment_ends` holds the exclusive end index of each segment within
/// `rewards` (the last one equals `rewards.len()`). `values` carries one
/// entry per step plus one bootstrap entry at the tail of every segment,
/// laid out segment by segment, so `values.len() == rewards.len() +
/// segment_ends.len()`. Use a bootstrap of 0 for a true terminal state.
///
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    segment_ends: &[usize],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    if values.len() != rewards.len() + segment_ends.len() {
        return Err(TrainError::InvalidArgument(format!(
            "gae: {} values for {} rewards in {} segments",
            values.len(),
            rewards.len(),
            segment_ends.len()
        )));
    }
    if segment_ends.last().copied().unwrap_or(0) != rewards.len()
        || segment_ends.windows(2).any(|w| w[0] >= w[1])
        || segment_ends.first() == Some(&0)
    {
        return Err(TrainError::InvalidArgument(
            "gae: segment ends must be strictly increasing and cover every reward".into(),
        ));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut ret = vec![0.0; rewards.len()];
    let mut start = 0;
    for (k, &end) in segment_ends.iter().enumerate() {
        let v = &values[start + k..end + k + 1];
        let mut running = 0.0;
        for t in (start..end).rev() {
            let i = t - start;
            let delta = rewards[t] + gamma * v[i + 1] - v[i];
            running = delta + gamma * lambda * running;
            adv[t] = running;
            ret[t] = running + v[i];
        }
        start = end;
    }
    Ok((adv, ret))
}

/// Rescales `xs` in place to mean 0 and (population) std 1. A constant
/// batch is only centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}
