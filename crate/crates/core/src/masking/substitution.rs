use rand::Rng;
use serde::{Deserialize, Serialize};

use super::maps::MaskMap;
use crate::error::{Error, Result};
use crate::raster::ModalityImage;
use crate::rng;

/// Step schedule for the cross-modal substitution probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstitutionSchedule {
    pub rho_start: f64,
    pub rho_step: f64,
    pub epochs_per_step: usize,
    pub rho_max: f64,
}

impl Default for SubstitutionSchedule {
    fn default() -> Self {
        Self {
            rho_start: 0.1,
            rho_step: 0.1,
            epochs_per_step: 10,
            rho_max: 0.7,
        }
    }
}

impl SubstitutionSchedule {
    /// Schedule that never substitutes.
    pub fn disabled() -> Self {
        Self {
            rho_start: 0.0,
            rho_step: 0.0,
            epochs_per_step: 1,
            rho_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.rho_start)
            && (self.rho_start..=1.0).contains(&self.rho_max)
            && self.rho_step >= 0.0
            && self.epochs_per_step >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid substitution schedule {self:?}")))
        }
    }
}

pub fn substitution_probability(epoch: usize, sched: &SubstitutionSchedule) -> f64 {
    let steps = (epoch / sched.epochs_per_step) as f64;
    // Multiply the step count by ten and divide afterwards so decimal
    // schedules such as 0.1 + 0.1 * 2 land exactly on 0.3.
    let rho = (sched.rho_start * 10.0 + sched.rho_step * 10.0 * steps) / 10.0;
    rho.min(sched.rho_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionOutcome {
    pub image: ModalityImage,
    /// Visible positions whose content was replaced, ascending.
    pub substituted: Vec<usize>,
}

/// Replaces each visible patch, with probability `rho`, by the content of a
/// masked patch of the same image drawn uniformly at random.
pub fn apply_cross_modal_substitution(
    image: &ModalityImage,
    mask: &MaskMap,
    rho: f64,
    seed: u64,
) -> Result<SubstitutionOutcome> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("substitution probability {rho} outside [0, 1]")));
    }
    let (rows, cols) = image.grid();
    if (mask.rows, mask.cols) != (rows, cols) {
        return Err(Error::shape((rows, cols), (mask.rows, mask.cols)));
    }
    let masked = mask.masked_positions();
    let mut out = SubstitutionOutcome {
        image: image.clone(),
        substituted: Vec::new(),
    };
    if rho == 0.0 || masked.is_empty() {
        return Ok(out);
    }
    let mut rng = rng::stream(seed, &[]);
    for p in mask.visible_positions() {
        if rng.gen::<f64>() < rho {
            let src = masked[rng.gen_range(0..masked.len())];
            out.image.copy_patch(image, src, p);
            out.substituted.push(p);
        }
    }
    Ok(out)
}

/// A position stays masked after fusion only if masked in both modalities.
pub fn fuse_masks(m_rgb: &MaskMap, m_other: &MaskMap) -> Result<MaskMap> {
    m_rgb.check_same_shape(m_other)?;
    Ok(MaskMap {
        rows: m_rgb.rows,
        cols: m_rgb.cols,
        masked: m_rgb.masked.iter().zip(&m_other.masked).map(|(a, b)| *a && *b).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Modality;

    #[test]
    fn schedule_points() {
        let s = SubstitutionSchedule::default();
        assert_eq!(substitution_probability(0, &s), 0.1);
        assert_eq!(substitution_probability(25, &s), 0.3);
        assert_eq!(substitution_probability(120, &s), 0.7);
        assert_eq!(substitution_probability(1000, &SubstitutionSchedule::disabled()), 0.0);
    }

    #[test]
    fn rho_out_of_range_rejected() {
        let img = ModalityImage::filled(4, 4, 1, 0.0, Modality::Other, 2).unwrap();
        let m = MaskMap::none(2, 2);
        assert!(apply_cross_modal_substitution(&img, &m, 1.5, 0).is_err());
        assert!(apply_cross_modal_substitution(&img, &m, -0.1, 0).is_err());
    }

    #[test]
    fn fuse_masks_spec_case() {
        let a = MaskMap::from_masked_positions(1, 4, &[0, 2]).unwrap();
        let b = MaskMap::from_masked_positions(1, 4, &[2, 3]).unwrap();
        assert_eq!(fuse_masks(&a, &b).unwrap().masked_positions(), vec![2]);
    }
}
