use mmpretrain::masking::{
    apply_cross_modal_substitution, assign_mask_probabilities, fuse_info_scores, fuse_masks, gradient_magnitude,
    patch_info_score, patch_info_score_weighted, sample_masks, substitution_probability, uniform_probabilities, InfoScoreMap, MaskMap,
    MaskProbabilityMap, ScoreWeights, SubstitutionSchedule,
};
use mmpretrain::raster::{Modality, ModalityImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, n: usize, channels: usize, patch: usize) -> ModalityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..n * n * channels).map(|_| rng.gen::<f64>()).collect();
    ModalityImage::new(n, n, channels, px, Modality::Rgb, patch).unwrap()
}

fn luminance(img: &ModalityImage) -> Vec<f64> {
    let c = img.channels();
    img.pixels().chunks(c).map(|px| px.iter().sum::<f64>() / c as f64).collect()
}

/// Direct 3x3 Sobel convolution with clamped indices.
fn sobel_oracle(img: &ModalityImage) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let lum = luminance(img);
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let yy = (y + dy as isize - 1).clamp(0, h - 1);
                    let xx = (x + dx as isize - 1).clamp(0, w - 1);
                    let v = lum[(yy * w + xx) as usize];
                    gx += kx[dy][dx] * v;
                    gy += ky[dy][dx] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

#[test]
fn sobel_matches_convolution_oracle() {
    for seed in 0..5 {
        let img = random_image(seed, 8, 3, 4);
        let got = gradient_magnitude(&img);
        let want = sobel_oracle(&img);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }
}

#[test]
fn sobel_ramp_interior_is_eight() {
    let px: Vec<f64> = (0..64).map(|i| (i % 8) as f64).collect();
    let img = ModalityImage::new(8, 8, 1, px, Modality::Rgb, 8).unwrap();
    let g = gradient_magnitude(&img);
    for y in 1..7 {
        for x in 1..7 {
            assert_eq!(g[y * 8 + x], 8.0);
        }
    }
}

#[test]
fn patch_score_matches_brute_force() {
    let img = random_image(9, 32, 3, 8);
    let grad = sobel_oracle(&img);
    let lum = luminance(&img);
    let map = patch_info_score(&img);
    assert_eq!((map.rows, map.cols), (4, 4));
    for pr in 0..4 {
        for pc in 0..4 {
            let idx: Vec<usize> = (0..8).flat_map(|y| (0..8).map(move |x| (pr * 8 + y) * 32 + pc * 8 + x)).collect();
            let n = idx.len() as f64;
            let mean_grad = idx.iter().map(|&i| grad[i]).sum::<f64>() / n;
            let mean = idx.iter().map(|&i| lum[i]).sum::<f64>() / n;
            let var = idx.iter().map(|&i| (lum[i] - mean).powi(2)).sum::<f64>() / n;
            let got = map.scores[pr * 4 + pc];
            assert!((got - (mean_grad + var)).abs() < 1e-8);
        }
    }
}

#[test]
fn constant_image_scores_zero() {
    let img = ModalityImage::filled(32, 32, 3, 0.4, Modality::Other, 16).unwrap();
    assert!(patch_info_score(&img).scores.iter().all(|s| *s == 0.0));
}

#[test]
fn two_by_two_patch_variance() {
    let img = ModalityImage::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0], Modality::Rgb, 2).unwrap();
    let var_only = patch_info_score_weighted(&img, ScoreWeights { gradient: 0.0, variance: 1.0 });
    assert_eq!(var_only.scores, vec![0.25]);
    let full = patch_info_score(&img).scores[0];
    let grad_mean = gradient_magnitude(&img).iter().sum::<f64>() / 4.0;
    assert!((full - grad_mean - 0.25).abs() < 1e-12);
}

#[test]
fn fuse_masks_examples() {
    let m_rgb = MaskMap::from_masked_positions(1, 4, &[0, 2]).unwrap();
    let m_other = MaskMap::from_masked_positions(1, 4, &[2, 3]).unwrap();
    assert_eq!(fuse_masks(&m_rgb, &m_other).unwrap().masked_positions(), vec![2]);
    assert_eq!(fuse_masks(&m_rgb, &MaskMap::none(1, 4)).unwrap().masked_count(), 0);
    assert!(fuse_masks(&m_rgb, &MaskMap::none(2, 2)).is_err());
}

#[test]
fn fuse_scores_examples() {
    let a = InfoScoreMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = InfoScoreMap::new(2, 2, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
    assert_eq!(fuse_info_scores(&a, &b).unwrap().scores, vec![5.0; 4]);
    let zero = InfoScoreMap::new(2, 2, vec![0.0; 4]).unwrap();
    assert_eq!(fuse_info_scores(&a, &zero).unwrap(), a);
}

#[test]
fn quantile_buckets_for_one_to_hundred() {
    let map = InfoScoreMap::new(10, 10, (1..=100).map(f64::from).collect()).unwrap();
    let probs = assign_mask_probabilities(&[map]).unwrap().remove(0);
    let count = |p: f64| probs.probs.iter().filter(|x| **x == p).count();
    assert!((probs.q20 - 20.8).abs() < 1e-12 && (probs.q80 - 80.2).abs() < 1e-12);
    let below = (1..=100).filter(|v| f64::from(*v) < 20.8).count();
    let above = (1..=100).filter(|v| f64::from(*v) > 80.2).count();
    assert_eq!((count(0.8), count(0.3), count(0.5)), (below, above, 100 - below - above));
    assert_eq!((below, above), (20, 20));
}

#[test]
fn identical_scores_all_middle_bucket() {
    let map = InfoScoreMap::new(3, 3, vec![2.5; 9]).unwrap();
    let probs = assign_mask_probabilities(&[map]).unwrap().remove(0);
    assert!(probs.probs.iter().all(|p| *p == 0.5));
    assert_eq!(probs.q20, probs.q80);
}

#[test]
fn quantiles_pool_the_whole_batch() {
    let low = InfoScoreMap::new(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let high = InfoScoreMap::new(1, 5, vec![6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
    let probs = assign_mask_probabilities(&[low, high]).unwrap();
    assert_eq!(probs[0].q20, probs[1].q20);
    assert!(probs[0].probs[0] == 0.8 && probs[1].probs[4] == 0.3);
    assert!(assign_mask_probabilities(&[]).is_err());
}

#[test]
fn sample_masks_extremes_and_rate() {
    assert_eq!(sample_masks(&uniform_probabilities(4, 4, 0.0), 1).masked_count(), 0);
    assert_eq!(sample_masks(&uniform_probabilities(4, 4, 1.0), 1).masked_count(), 16);
    let rate = sample_masks(&uniform_probabilities(100, 100, 0.52), 5).masked_fraction();
    assert!((rate - 0.52).abs() <= 0.02, "{rate}");
    assert_eq!(sample_masks(&uniform_probabilities(8, 8, 0.5), 3), sample_masks(&uniform_probabilities(8, 8, 0.5), 3));
}

#[test]
fn rho_examples() {
    let s = SubstitutionSchedule::default();
    assert_eq!(substitution_probability(0, &s), 0.1);
    assert_eq!(substitution_probability(25, &s), 0.3);
    assert_eq!(substitution_probability(120, &s), 0.7);
    assert_eq!(substitution_probability(77, &SubstitutionSchedule::disabled()), 0.0);
}

#[test]
fn substitution_rho_one_copies_the_single_masked_patch() {
    let img = random_image(4, 32, 3, 8);
    let mask = MaskMap::from_masked_positions(4, 4, &[6]).unwrap();
    let out = apply_cross_modal_substitution(&img, &mask, 1.0, 11).unwrap();
    assert_eq!(out.substituted.len(), 15);
    for p in 0..16 {
        assert_eq!(out.image.patch_pixels(p), img.patch_pixels(6));
    }
}

#[test]
fn substitution_half_rate_concentrates() {
    let img = random_image(5, 320, 1, 8);
    // 40x40 grid: 600 masked patches leave 1000 visible
    let mask = MaskMap::from_masked_positions(40, 40, &(0..600).collect::<Vec<_>>()).unwrap();
    let out = apply_cross_modal_substitution(&img, &mask, 0.5, 12).unwrap();
    assert!((450..=550).contains(&out.substituted.len()), "{}", out.substituted.len());
}

#[test]
fn substitution_rejects_bad_rho() {
    let img = random_image(6, 16, 3, 8);
    let mask = MaskMap::none(2, 2);
    assert!(apply_cross_modal_substitution(&img, &mask, 1.5, 0).is_err());
    assert_eq!(apply_cross_modal_substitution(&img, &mask, 0.7, 0).unwrap().image, img);
}

fn grid_strategy() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 16)
}

proptest! {
    #[test]
    fn fuse_masks_laws(a in grid_strategy(), b in grid_strategy()) {
        let (ma, mb) = (MaskMap::new(4, 4, a).unwrap(), MaskMap::new(4, 4, b).unwrap());
        let ab = fuse_masks(&ma, &mb).unwrap();
        prop_assert_eq!(&ab, &fuse_masks(&mb, &ma).unwrap());
        prop_assert_eq!(&fuse_masks(&ma, &ma).unwrap(), &ma);
        prop_assert!(ab.masked_count() <= ma.masked_count().min(mb.masked_count()));
    }

    #[test]
    fn probabilities_are_bucketed(scores in prop::collection::vec(0.0f64..10.0, 1..200)) {
        let n = scores.len();
        let map = InfoScoreMap::new(1, n, scores).unwrap();
        let probs: MaskProbabilityMap = assign_mask_probabilities(&[map]).unwrap().remove(0);
        prop_assert!(probs.q20 <= probs.q80);
        prop_assert!(probs.probs.iter().all(|p| [0.3, 0.5, 0.8].contains(p)));
    }

    #[test]
    fn distinct_scores_keep_extreme_buckets_small(seed in any::<u64>(), n in 5usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * 0.5).collect();
        let probs = assign_mask_probabilities(&[InfoScoreMap::new(1, n, scores).unwrap()]).unwrap().remove(0);
        let extreme = probs.probs.iter().filter(|p| **p != 0.5).count();
        prop_assert!(extreme as f64 <= 0.4 * n as f64 + 2.0);
    }

    #[test]
    fn substitution_never_touches_masked_patches(
        bits in grid_strategy(),
        rho in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let img = random_image(seed, 16, 3, 4);
        let mask = MaskMap::new(4, 4, bits).unwrap();
        let out = apply_cross_modal_substitution(&img, &mask, rho, seed).unwrap();
        for p in mask.masked_positions() {
            prop_assert_eq!(out.image.patch_pixels(p), img.patch_pixels(p));
        }
        prop_assert!(out.substituted.iter().all(|p| !mask.masked[*p]));
        prop_assert_eq!(&out, &apply_cross_modal_substitution(&img, &mask, rho, seed).unwrap());
    }

    #[test]
    fn scores_are_nonnegative_and_finite(seed in any::<u64>()) {
        let s = patch_info_score(&random_image(seed, 16, 3, 8));
        prop_assert!(s.scores.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
