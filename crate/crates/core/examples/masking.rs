//! Information-aware masking on one synthetic pair: per-patch scores, fused
//! scores, bucket probabilities, Bernoulli masks, cross-modal substitution
//! and the fusion mask. Writes mask overlays as PNGs.
//!
//! cargo run --example masking [out_dir]

use std::path::PathBuf;

use mmpretrain::data::generate_synthetic_pair;
use mmpretrain::masking::{
    apply_cross_modal_substitution, assign_mask_probabilities, fuse_info_scores, fuse_masks, patch_info_score,
    sample_masks, substitution_probability, write_mask_png, SubstitutionSchedule,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("mmpt-masking"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let pair = generate_synthetic_pair(11, 64, 4)?;

    let s_rgb = patch_info_score(&pair.rgb);
    let s_other = patch_info_score(&pair.other);
    let fused = fuse_info_scores(&s_rgb, &s_other)?;
    let probs = assign_mask_probabilities(std::slice::from_ref(&fused))?.remove(0);
    println!("grid {}x{}  q20 {:.4}  q80 {:.4}", fused.rows, fused.cols, probs.q20, probs.q80);
    for r in 0..fused.rows {
        let row: Vec<String> = (0..fused.cols)
            .map(|c| format!("{:7.3}/{:.1}", fused.scores[r * fused.cols + c], probs.probs[r * fused.cols + c]))
            .collect();
        println!("  {}", row.join(" "));
    }

    let m_rgb = sample_masks(&probs, 1);
    let m_other = sample_masks(&probs, 2);
    let rho = substitution_probability(25, &SubstitutionSchedule::default());
    let sub = apply_cross_modal_substitution(&pair.other, &m_other, rho, 3)?;
    let m_fusion = fuse_masks(&m_rgb, &m_other)?;
    println!(
        "masked rgb {}/{}  other {}/{}  fusion {}  rho {rho}  substituted {:?}",
        m_rgb.masked_count(),
        m_rgb.len(),
        m_other.masked_count(),
        m_other.len(),
        m_fusion.masked_count(),
        sub.substituted
    );
    let a = write_mask_png(&out, &pair.pair_id, &pair.rgb, &m_rgb, &[])?;
    let b = write_mask_png(&out, &pair.pair_id, &sub.image, &m_other, &sub.substituted)?;
    println!("wrote {} and {}", a.display(), b.display());
    Ok(())
}
