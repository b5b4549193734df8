use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::classifier::{classification_accuracy, EvalClassifier};
use super::fid::fid;
use crate::data::{encode_label, DomainDataset, ImageTensor};
use crate::networks::Generator;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

const TRANSLATE_BATCH: usize = 16;

/// Every image of a dataset translated into every other domain.
#[derive(Debug, Clone, Default)]
pub struct TranslatedSet {
    pub images: Vec<Vec<f32>>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TranslatedSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_refs(&self) -> Vec<&[f32]> {
        self.images.iter().map(Vec::as_slice).collect()
    }
}

pub fn translate_to_other_domains(generator: &Generator, dataset: &DomainDataset) -> Result<TranslatedSet> {
    let (h, w, m) = (dataset.height(), dataset.width(), dataset.m());
    if generator.m() != m || generator.resolution() != h || w != h {
        return Err(Error::Config(format!(
            "generator ({} domains, {r}x{r}) does not match the dataset ({m} domains, {h}x{w})",
            generator.m(),
            r = generator.resolution()
        )));
    }
    let jobs: Vec<(usize, usize, usize)> = dataset
        .flat_index()
        .into_iter()
        .flat_map(|(d, i)| (0..m).filter(move |&t| t != d).map(move |t| (d, i, t)))
        .collect();
    let mut out = TranslatedSet::default();
    for chunk in jobs.chunks(TRANSLATE_BATCH) {
        let records: Vec<&[f32]> = chunk.iter().map(|&(d, i, _)| dataset.image(d, i)).collect();
        let x = ImageTensor::from_records(&records, h, w, generator.dtype())?;
        let labels = chunk
            .iter()
            .map(|&(_, _, t)| encode_label(t, m, h, w))
            .collect::<Result<Vec<_>>>()?;
        let y = generator.translate_each(&x, &labels)?;
        for (k, &(d, _, t)) in chunk.iter().enumerate() {
            out.images.push(y.record(k)?);
            out.sources.push(d);
            out.targets.push(t);
        }
    }
    Ok(out)
}

/// Ground-truth counterparts from the dataset's pairing, laid out like
/// [`translate_to_other_domains`]. An upper-bound control for scoring.
pub fn paired_targets(dataset: &DomainDataset) -> Result<TranslatedSet> {
    let pairing = dataset
        .pairing()
        .ok_or_else(|| Error::Dataset("the dataset has no pairing to draw ground truth from".into()))?;
    let m = dataset.m();
    let mut out = TranslatedSet::default();
    for (d, i) in dataset.flat_index() {
        let row = pairing
            .pairs
            .iter()
            .find(|row| row[d] == i)
            .ok_or_else(|| Error::Dataset(format!("image {i} of domain {d} has no paired scene")))?;
        for t in (0..m).filter(|&t| t != d) {
            out.images.push(dataset.image(t, row[t]).to_vec());
            out.sources.push(d);
            out.targets.push(t);
        }
    }
    Ok(out)
}

/// Every image "translated" by returning it unchanged. A lower-bound control.
pub fn identity_translations(dataset: &DomainDataset) -> TranslatedSet {
    let m = dataset.m();
    let mut out = TranslatedSet::default();
    for (d, i) in dataset.flat_index() {
        for t in (0..m).filter(|&t| t != d) {
            out.images.push(dataset.image(d, i).to_vec());
            out.sources.push(d);
            out.targets.push(t);
        }
    }
    out
}

/// Short stable fingerprint of a training configuration.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEval {
    pub images: usize,
    pub ca_top1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ca_top5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub ca_top1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ca_top5: Option<f64>,
    pub fid: f64,
    /// Keyed by target domain name.
    pub per_domain: BTreeMap<String, DomainEval>,
}

/// Translates every holdout image into every other domain and scores the
/// result with [`score_translations`].
pub fn evaluate_translator(
    generator: &Generator,
    classifier: &EvalClassifier,
    holdout: &DomainDataset,
    config_hash: String,
) -> Result<EvalReport> {
    let set = translate_to_other_domains(generator, holdout)?;
    score_translations(&set, classifier, holdout, config_hash)
}

/// Classifier accuracy of `set` against its target domains, overall and per
/// target, and FID against the real `holdout` images in the classifier's
/// feature space.
pub fn score_translations(
    set: &TranslatedSet,
    classifier: &EvalClassifier,
    holdout: &DomainDataset,
    config_hash: String,
) -> Result<EvalReport> {
    if classifier.m() != holdout.m() {
        return Err(Error::Config(format!(
            "classifier has {} classes, dataset has {} domains",
            classifier.m(),
            holdout.m()
        )));
    }
    let refs = set.image_refs();
    let overall = classification_accuracy(classifier, &refs, &set.targets)?;
    let names = holdout.domain_names();
    let mut per_domain = BTreeMap::new();
    for (t, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..set.len()).filter(|&k| set.targets[k] == t).collect();
        if idx.is_empty() {
            continue;
        }
        let images: Vec<&[f32]> = idx.iter().map(|&k| refs[k]).collect();
        let acc = classification_accuracy(classifier, &images, &vec![t; idx.len()])?;
        per_domain.insert(
            name.clone(),
            DomainEval {
                images: idx.len(),
                ca_top1: acc.top1,
                ca_top5: acc.top5,
            },
        );
    }
    let real: Vec<&[f32]> = holdout.flat_index().iter().map(|&(d, i)| holdout.image(d, i)).collect();
    let fid = fid(classifier, &real, &refs)?;
    Ok(EvalReport {
        config_hash,
        ca_top1: overall.top1,
        ca_top5: overall.top5,
        fid,
        per_domain,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("config {}\n", self.config_hash);
        let _ = writeln!(out, "CA top-1  {:.4}", self.ca_top1);
        if let Some(t5) = self.ca_top5 {
            let _ = writeln!(out, "CA top-5  {t5:.4}");
        }
        let _ = writeln!(out, "FID       {:.4}", self.fid);
        let width = self.per_domain.keys().map(String::len).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "target", "images", "top-1");
        for (name, d) in &self.per_domain {
            let _ = writeln!(out, "{name:<width$}  {:>6}  {:>6.4}", d.images, d.ca_top1);
        }
        out
    }
}
