use crate::error::{Error, Result};

/// Generalised advantage estimates and value targets.
///
/// `dones[t]` marks the last transition of an episode; nothing is bootstrapped
/// across it. `bootstrap` is the value after the final transition when that
/// transition is not terminal.
///
/// ```
/// use keyplan::ppo::compute_gae;
/// let (adv, ret) = compute_gae(&[1.0], &[0.25], &[true], 0.0, 0.95, 0.97).unwrap();
/// assert_eq!(adv, vec![0.75]);
/// assert_eq!(ret, vec![1.0]);
/// ```
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Contract(format!("gae: {n} rewards, {} values, {} done flags", values.len(), dones.len())));
    }
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_value = 0.0;
            next_advantage = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        let a = delta + gamma * lambda * next_advantage;
        advantages[t] = a;
        next_value = values[t];
        next_advantage = a;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Shift and scale to zero mean and unit variance. Constant inputs become zero.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}
