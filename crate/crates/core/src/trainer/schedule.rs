use super::TrainConfig;
use crate::{Error, Result};

/// Constant `lr0` through `epochs_constant_lr`, then linear to zero at
/// `epochs_total`. Epochs count from one.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch < 1 || epoch > cfg.epochs_total {
        return Err(Error::Config(format!(
            "epoch {epoch} outside 1..={}",
            cfg.epochs_total
        )));
    }
    if epoch <= cfg.epochs_constant_lr {
        return Ok(cfg.lr0);
    }
    let remaining = (cfg.epochs_total - epoch) as f64;
    let span = (cfg.epochs_total - cfg.epochs_constant_lr) as f64;
    Ok(cfg.lr0 * remaining / span)
}
