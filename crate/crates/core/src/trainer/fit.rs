use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;

use super::checkpoint::{checkpoint_name, save_checkpoint};
use super::schedule::lr_at_epoch;
use super::step::{StepMetrics, Trainer, METRIC_KEYS};
use super::TrainConfig;
use crate::data::{encode_label, DomainDataset, ImageTensor};
use crate::networks::Generator;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";

/// Hooks run synchronously on the training thread.
pub trait FitCallback {
    fn on_step(&mut self, _trainer: &Trainer, _metrics: &StepMetrics) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl FitCallback for () {}

/// Collects every step's metrics in memory.
#[derive(Debug, Default)]
pub struct MetricsRecorder {
    pub steps: Vec<StepMetrics>,
}

impl FitCallback for MetricsRecorder {
    fn on_step(&mut self, _trainer: &Trainer, metrics: &StepMetrics) -> Result<()> {
        self.steps.push(*metrics);
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Where metrics, checkpoints and sample grids go. Nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
}

pub fn sample_grid_name(epoch: usize) -> String {
    format!("samples_epoch{epoch}.png")
}

/// Builds a trainer for `dataset` and runs it to completion.
pub fn fit(
    cfg: TrainConfig,
    dataset: &DomainDataset,
    opts: &FitOptions,
    callbacks: &mut dyn FitCallback,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(cfg, dataset.m(), dataset.height())?;
    trainer.fit(dataset, opts, callbacks)?;
    Ok(trainer)
}

fn csv_header(double: bool) -> String {
    let mut cols = vec!["iteration", "epoch"];
    cols.extend(METRIC_KEYS);
    if double {
        cols.extend(["d2_adv", "d2_cls"]);
    }
    cols.push("lr");
    cols.join(",")
}

fn open_metrics(dir: &Path, double: bool) -> Result<File> {
    let path = dir.join(METRICS_FILE);
    let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    if fresh {
        writeln!(f, "{}", csv_header(double)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(f)
}

impl Trainer {
    /// Runs the remaining epochs, resuming after `self.epoch()`. Stops early
    /// once `max_iterations` is reached; the last epoch touched is then
    /// checkpointed as if complete.
    pub fn fit(&mut self, dataset: &DomainDataset, opts: &FitOptions, callbacks: &mut dyn FitCallback) -> Result<()> {
        if dataset.m() != self.net.m || dataset.height() != self.net.resolution || dataset.width() != self.net.resolution {
            return Err(Error::Config(format!(
                "dataset ({} domains, {}x{}) does not match the networks ({} domains, {r}x{r})",
                dataset.m(),
                dataset.height(),
                dataset.width(),
                self.net.m,
                r = self.net.resolution
            )));
        }
        self.domain_names = dataset.domain_names();
        let double = self.discriminator2.is_some();
        let mut csv = match &opts.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Some(open_metrics(dir, double)?)
            }
            None => None,
        };
        let total = self.cfg.epochs_total;
        let batch_size = self.cfg.batch_size;
        let max_iterations = self.cfg.max_iterations;
        let every = self.cfg.checkpoint_every;
        for epoch in self.epoch + 1..=total {
            if max_iterations.is_some_and(|cap| self.iteration >= cap) {
                break;
            }
            let lr = lr_at_epoch(&self.cfg, epoch)?;
            self.set_learning_rate(lr);
            self.running = Default::default();
            let mut order = dataset.flat_index();
            order.shuffle(&mut self.rng);
            for sources in order.chunks(batch_size) {
                if max_iterations.is_some_and(|cap| self.iteration >= cap) {
                    break;
                }
                let batch = self.make_batch(dataset, sources)?;
                let metrics = match self.train_step(&batch) {
                    Ok(m) => m,
                    Err(Error::Numerics(msg)) => return Err(self.numerics_dump(opts, epoch, &msg)),
                    Err(e) => return Err(e),
                };
                if let (Some(f), Some(dir)) = (csv.as_mut(), &opts.out_dir) {
                    let mut row = vec![self.iteration.to_string(), epoch.to_string()];
                    row.extend(metrics.entries().iter().map(|(_, v)| v.to_string()));
                    row.push(lr.to_string());
                    writeln!(f, "{}", row.join(",")).map_err(|e| Error::io(dir.join(METRICS_FILE), e))?;
                }
                callbacks.on_step(self, &metrics)?;
            }
            self.epoch = epoch;
            let stopping = epoch == total || max_iterations.is_some_and(|cap| self.iteration >= cap);
            if let Some(dir) = &opts.out_dir {
                if epoch % every == 0 || stopping {
                    save_checkpoint(self, &dir.join(checkpoint_name(epoch)))?;
                    let grid = sample_grid(&self.generators.translator, dataset)?;
                    let path = dir.join(sample_grid_name(epoch));
                    grid.save(&path)?;
                }
            }
            callbacks.on_epoch_end(self)?;
        }
        if let Some(f) = csv.as_mut() {
            let _ = f.flush();
        }
        Ok(())
    }

    fn numerics_dump(&self, opts: &FitOptions, epoch: usize, msg: &str) -> Error {
        let Some(dir) = &opts.out_dir else {
            return Error::Numerics(format!("{msg} at iteration {}", self.iteration + 1));
        };
        let path = dir.join(format!("numerics_dump_iter{}.json", self.iteration + 1));
        let dump = serde_json::json!({
            "error": msg,
            "iteration": self.iteration + 1,
            "epoch": epoch,
            "epoch_means_so_far": self.running.means(),
            "config": self.cfg,
        });
        match serde_json::to_string_pretty(&dump)
            .map_err(Error::from)
            .and_then(|s| std::fs::write(&path, s).map_err(|e| Error::io(&path, e)))
        {
            Ok(()) => Error::Numerics(format!("{msg}; diagnostics written to {}", path.display())),
            Err(e) => Error::Numerics(format!("{msg}; writing diagnostics failed: {e}")),
        }
    }
}

/// Mosaic with one row per domain (its first image) and columns for the
/// source followed by its translation into every domain.
pub fn sample_grid(generator: &Generator, dataset: &DomainDataset) -> Result<RgbImage> {
    let (h, w, m) = (dataset.height(), dataset.width(), dataset.m());
    let mut grid = RgbImage::new(((m + 1) * w) as u32, (m * h) as u32);
    for row in 0..m {
        let source = dataset.image(row, 0);
        let x = ImageTensor::from_records(&vec![source; m], h, w, generator.dtype())?;
        let labels = (0..m).map(|k| encode_label(k, m, h, w)).collect::<Result<Vec<_>>>()?;
        let out = generator.translate_each(&x, &labels)?;
        let mut tiles = vec![source.to_vec()];
        for k in 0..m {
            tiles.push(out.record(k)?);
        }
        for (col, tile) in tiles.iter().enumerate() {
            let img = crate::data::record_to_rgb(tile, h, w);
            image::imageops::replace(&mut grid, &img, (col * w) as i64, (row * h) as i64);
        }
    }
    Ok(grid)
}
