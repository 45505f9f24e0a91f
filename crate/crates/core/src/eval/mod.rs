//! Representation quality checks: frozen-feature extraction, the linear probe
//! and a small whole-network fine-tune.

mod features;
mod finetune;
mod probe;
mod report;

pub use features::{extract_features, load_encoder, random_encoder, FeatureTable};
pub use finetune::{finetune_small, FinetuneConfig};
pub use probe::{accuracy_and_confusion, linear_probe, stratified_split, ProbeResult, SoftmaxClassifier, MIN_PER_CLASS, TEST_FRACTION};
pub use report::{render_confusion_png, results_csv, write_confusion_png, write_results_csv, ResultRow, RESULTS_HEADER};
