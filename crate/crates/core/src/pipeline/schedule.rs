use super::config::TrainConfig;

/// Linear warmup from `warmup_lr` to `base_lr`, then half-cosine decay that
/// reaches 0 on the last optimizer step of the run.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.total_epochs * steps_per_epoch;
    if step < warmup {
        return cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return cfg.base_lr;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
