//! Classification accuracy of translations, FID under a pluggable
//! embedder, and the model-capacity comparison.

mod capacity;
mod classifier;
mod fid;
mod report;

pub use capacity::{capacity_report, model_parameters, CapacityEntry, CapacityReport, ModelCount};
pub use classifier::{
    classification_accuracy, train_eval_classifier, ClassificationAccuracy, ClassifierConfig, EvalClassifier,
    TrainingRecord, FEATURE_DIM, MIN_IMAGES_PER_CLASS,
};
pub use fid::{fid, frechet_distance, gaussian_stats, GaussianStats};
pub use report::{
    config_hash, evaluate_translator, identity_translations, paired_targets, score_translations,
    translate_to_other_domains, DomainEval, EvalReport, TranslatedSet,
};

use crate::Result;

/// Maps an image to a fixed-length feature vector. Must be deterministic.
pub trait FeatureEmbedder {
    fn dim(&self) -> usize;

    /// One feature vector per CHW record.
    fn embed(&self, images: &[&[f32]]) -> Result<Vec<Vec<f64>>>;
}
