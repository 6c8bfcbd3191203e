/// KL weight: linear ramp from 0 to `beta_max` over `anneal_steps`.
pub fn beta_schedule(step: u64, anneal_steps: u64, beta_max: f64) -> f64 {
    if anneal_steps == 0 {
        return beta_max;
    }
    beta_max * (step as f64 / anneal_steps as f64).min(1.0)
}

/// Constant `lr` until `decay_start · total`, then linear to zero at `total`.
pub fn lr_schedule(step: u64, total: u64, lr: f64, decay_start: f64) -> f64 {
    let start = (decay_start * total as f64).floor();
    let s = step as f64;
    if s < start {
        return lr;
    }
    let span = total as f64 - start;
    if span <= 0.0 {
        return 0.0;
    }
    lr * ((total as f64 - s) / span).clamp(0.0, 1.0)
}

/// Rescale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|v| *v *= s);
    }
    norm
}
