//! Information-aware and cross-modal masking.
//!
//! Per-patch information scores (Sobel gradient magnitude plus luminance
//! variance) are fused across modalities, bucketed against batch quantiles
//! into masking probabilities, and realized as Bernoulli masks. The
//! other-modality student stream then has visible patches substituted with
//! masked content, and the fusion mask keeps any position visible in at
//! least one modality.

mod info;
mod maps;
mod probability;
mod substitution;
mod viz;

pub use info::{fuse_info_scores, gradient_magnitude, patch_info_score, patch_info_score_weighted, ScoreWeights};
pub use maps::{InfoScoreMap, MaskMap, MaskProbabilityMap};
pub use probability::{
    assign_mask_probabilities, linear_quantile, sample_masks, uniform_probabilities, HIGH_INFO_PROB, LOW_INFO_PROB,
    MID_INFO_PROB,
};
pub use substitution::{
    apply_cross_modal_substitution, fuse_masks, substitution_probability, SubstitutionOutcome, SubstitutionSchedule,
};
pub use viz::{render_mask_png, write_mask_png};
