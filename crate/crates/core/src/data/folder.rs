//! `<root>/<domain>/*.{png,jpg}` ingestion and export.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};

use super::{denormalize, normalize, Domain, DomainDataset, Pairing};
use crate::{Error, Result};

pub const PAIRING_FILE: &str = "pairing.json";

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Images are bilinearly resized to `resolution x resolution`.
    pub resolution: usize,
    /// Cap per domain, taking files in name order.
    pub max_per_domain: Option<usize>,
}

impl LoadOptions {
    pub fn new(resolution: usize) -> Self {
        LoadOptions {
            resolution,
            max_per_domain: None,
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads one domain per subdirectory, in lexicographic order of the
/// subdirectory names. Files that fail to decode are skipped with a warning.
/// A `pairing.json` at the root is picked up when it matches the layout.
pub fn load_domain_folders(root: &Path, opts: &LoadOptions) -> Result<DomainDataset> {
    super::check_image_size(opts.resolution, opts.resolution)?;
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let size = opts.resolution as u32;
    let mut domains = Vec::new();
    for dir in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("non UTF-8 directory name {}", dir.display())))?
            .to_string();
        let mut images = Vec::new();
        for file in read_dir_sorted(&dir)?.into_iter().filter(|p| is_image(p)) {
            if opts.max_per_domain.is_some_and(|cap| images.len() >= cap) {
                break;
            }
            match image::open(&file) {
                Ok(img) => images.push(square_record(&img, size)),
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
        if images.is_empty() {
            return Err(Error::Dataset(format!("domain `{name}` has no decodable images")));
        }
        domains.push(Domain { name, images });
    }
    if domains.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} holds {} domain directories, need at least 2",
            root.display(),
            domains.len()
        )));
    }
    let pairing_path = root.join(PAIRING_FILE);
    let pairing = if pairing_path.is_file() {
        let text = fs::read_to_string(&pairing_path).map_err(|e| Error::io(&pairing_path, e))?;
        Some(serde_json::from_str::<Pairing>(&text)?)
    } else {
        None
    };
    let res = opts.resolution;
    match DomainDataset::new(domains.clone(), res, res, pairing) {
        Ok(ds) => Ok(ds),
        Err(Error::Dataset(msg)) if pairing_path.is_file() => {
            log::warn!("ignoring {}: {msg}", pairing_path.display());
            DomainDataset::new(domains, res, res, None)
        }
        Err(e) => Err(e),
    }
}

fn square_record(img: &image::DynamicImage, size: u32) -> Vec<f32> {
    let mut rgb = img.to_rgb8();
    if rgb.dimensions() != (size, size) {
        rgb = image::imageops::resize(&rgb, size, size, FilterType::Triangle);
    }
    rgb_to_record(&rgb)
}

/// Reads one image file as a CHW `[-1, 1]` record resized to
/// `resolution x resolution`.
pub fn load_image_file(path: &Path, resolution: usize) -> Result<Vec<f32>> {
    super::check_image_size(resolution, resolution)?;
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    Ok(square_record(&img, resolution as u32))
}

/// Writes a CHW `[-1, 1]` record as a PNG.
pub fn save_record(record: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    record_to_rgb(record, height, width).save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

fn rgb_to_record(img: &RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = (y * w + x) as usize;
        for c in 0..3 {
            out[c * plane + i] = normalize(px[c]);
        }
    }
    out
}

/// Converts a CHW `[-1, 1]` record into an 8-bit RGB image.
pub(crate) fn record_to_rgb(record: &[f32], height: usize, width: usize) -> RgbImage {
    let plane = height * width;
    ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        Rgb([
            denormalize(record[i]),
            denormalize(record[plane + i]),
            denormalize(record[2 * plane + i]),
        ])
    })
}

/// Writes every domain as `<root>/<name>/<index>.png`, plus `pairing.json`
/// when the dataset carries ground-truth correspondences.
pub fn export_dataset(dataset: &DomainDataset, root: &Path) -> Result<()> {
    for d in dataset.domains() {
        let dir = root.join(&d.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, rec) in d.images.iter().enumerate() {
            save_record(rec, dataset.height(), dataset.width(), &dir.join(format!("{i:05}.png")))?;
        }
    }
    if let Some(p) = dataset.pairing() {
        let path = root.join(PAIRING_FILE);
        fs::write(&path, serde_json::to_string_pretty(p)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
