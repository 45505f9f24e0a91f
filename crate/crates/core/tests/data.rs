use std::fs::File;
use std::io::BufWriter;

use approx::assert_abs_diff_eq;
use mmpretrain::data::{
    denormalize, generate_synthetic_dataset, generate_synthetic_pair, load_hr_pairs, normalize, read_labels,
    read_manifest, replicate_dsm_channels, write_dataset, NormStats,
};
use mmpretrain::eval::{linear_probe, FeatureTable};
use mmpretrain::masking::patch_info_score;
use mmpretrain::raster::{Modality, ModalityImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, n: usize, channels: usize) -> ModalityImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..n * n * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    ModalityImage::new(n, n, channels, px, Modality::Other, 16).unwrap()
}

#[test]
fn synthetic_pairs_are_deterministic_and_aligned() {
    let a = generate_synthetic_pair(42, 64, 4).unwrap();
    assert_eq!(a, generate_synthetic_pair(42, 64, 4).unwrap());
    assert_ne!(a, generate_synthetic_pair(43, 64, 4).unwrap());
    assert_eq!((a.rgb.height(), a.other.height(), a.rgb.channels(), a.other.channels()), (64, 64, 3, 3));
    assert!(a.label.is_some_and(|l| l < 4));
    assert!(generate_synthetic_pair(1, 40, 4).is_err());
    assert_eq!(generate_synthetic_dataset(9, 5, 32, 4).unwrap(), generate_synthetic_dataset(9, 5, 32, 4).unwrap());
}

#[test]
fn background_pair_scores_near_zero() {
    let bg = generate_synthetic_pair(5, 64, 0).unwrap();
    assert_eq!(bg.label, None);
    let busy = generate_synthetic_pair(5, 64, 4).unwrap();
    for (quiet, loud) in [(&bg.rgb, &busy.rgb), (&bg.other, &busy.other)] {
        let q = patch_info_score(quiet).scores.iter().cloned().fold(0.0, f64::max);
        let l = patch_info_score(loud).scores.iter().cloned().fold(0.0, f64::max);
        assert!(q < 0.25, "background max score {q}");
        assert!(q < l / 2.0, "background {q} vs primitives {l}");
    }
}

/// Per-pair mean of each RGB channel and of the height channel.
fn pooled_means(p: &mmpretrain::data::ModalityPair) -> Vec<f64> {
    let n = (p.rgb.pixels().len() / 3) as f64;
    let mut m = vec![0.0; 4];
    for (rgb, other) in p.rgb.pixels().chunks(3).zip(p.other.pixels().chunks(3)) {
        for k in 0..3 {
            m[k] += rgb[k] / n;
        }
        m[3] += other[0] / n;
    }
    m
}

#[test]
fn class_means_separate_beyond_noise() {
    const PIXEL_NOISE: f64 = 0.03;
    let pairs = generate_synthetic_dataset(1000, 1000, 32, 4).unwrap();
    let feats: Vec<Vec<f64>> = pairs.iter().map(pooled_means).collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.label.unwrap()).collect();
    let mut means = vec![vec![0.0; 4]; 4];
    let mut counts = [0usize; 4];
    for (f, l) in feats.iter().zip(&labels) {
        counts[*l] += 1;
        for k in 0..4 {
            means[*l][k] += f[k];
        }
    }
    assert!(counts.iter().all(|c| *c > 100), "{counts:?}");
    for l in 0..4 {
        means[l].iter_mut().for_each(|v| *v /= counts[l] as f64);
    }
    for a in 0..4 {
        for b in a + 1..4 {
            let gap = (0..4).map(|k| (means[a][k] - means[b][k]).powi(2)).sum::<f64>().sqrt();
            assert!(gap > PIXEL_NOISE, "classes {a},{b}: gap {gap}");
        }
    }
    let ids = pairs.iter().map(|p| p.pair_id.clone()).collect();
    let table = FeatureTable::new(ids, feats, labels, "raw-pixels").unwrap();
    let acc = linear_probe(&table, 0).unwrap().accuracy;
    assert!(acc > 0.35, "raw-pixel probe {acc}");
}

#[test]
fn replicate_examples() {
    let v = random_image(1, 16, 1);
    let r = replicate_dsm_channels(&v).unwrap();
    assert_eq!(r.channels(), 3);
    for (px, orig) in r.pixels().chunks(3).zip(v.pixels()) {
        assert_eq!(px, [*orig; 3]);
    }
    let zeros = ModalityImage::filled(16, 16, 1, 0.0, Modality::Other, 16).unwrap();
    assert!(replicate_dsm_channels(&zeros).unwrap().pixels().iter().all(|p| *p == 0.0));
    assert!(replicate_dsm_channels(&r).is_err());
}

#[test]
fn normalize_examples() {
    let x = random_image(2, 16, 3);
    assert_eq!(normalize(&x, &[0.0; 3], &[1.0; 3]).unwrap(), x);
    let c = ModalityImage::filled(16, 16, 3, 0.7, Modality::Rgb, 16).unwrap();
    assert!(normalize(&c, &[0.7; 3], &[0.2; 3]).unwrap().pixels().iter().all(|p| *p == 0.0));
    assert!(normalize(&x, &[0.0; 3], &[1.0, 0.0, 1.0]).is_err());
    assert!(normalize(&x, &[0.0; 2], &[1.0; 2]).is_err());
}

proptest! {
    #[test]
    fn normalize_round_trip(seed in any::<u64>(), mean in prop::array::uniform3(-3.0f64..3.0), std in prop::array::uniform3(0.05f64..4.0)) {
        let x = random_image(seed, 16, 3);
        let back = denormalize(&normalize(&x, &mean, &std).unwrap(), &mean, &std).unwrap();
        for (a, b) in back.pixels().iter().zip(x.pixels()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_pairs_share_geometry(seed in any::<u64>(), classes in 1usize..8) {
        let p = generate_synthetic_pair(seed, 32, classes).unwrap();
        prop_assert_eq!(p.rgb.grid(), p.other.grid());
        prop_assert!(p.label.unwrap() < classes);
        prop_assert!(p.rgb.pixels().iter().chain(p.other.pixels()).all(|v| v.is_finite()));
    }
}

fn written(count: usize) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let pairs = generate_synthetic_dataset(3, count, 32, 4).unwrap();
    let manifest = write_dataset(dir.path(), &pairs, &NormStats::default()).unwrap();
    (dir, manifest)
}

#[test]
fn reader_yields_pairs_in_manifest_order() {
    let (dir, path) = written(3);
    let mut manifest = read_manifest(&path).unwrap();
    manifest.tile_size = 32;
    let pairs: Vec<_> = load_hr_pairs(&manifest).collect::<Result<_, _>>().unwrap();
    let ids: Vec<_> = manifest.records.iter().map(|r| r.pair_id.clone()).collect();
    assert_eq!(pairs.iter().map(|p| p.pair_id.clone()).collect::<Vec<_>>(), ids);
    let source = generate_synthetic_dataset(3, 3, 32, 4).unwrap();
    for (got, want) in pairs.iter().zip(&source) {
        assert_eq!(got.other.channels(), 3);
        for (a, b) in got.rgb.pixels().iter().zip(want.rgb.pixels()) {
            assert!((a - b.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let (lo, hi) = got.other.pixels().iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
    }
    let labels = read_labels(dir.path()).unwrap();
    for p in &source {
        assert_eq!(labels[&p.pair_id], p.label.unwrap());
    }
}

#[test]
fn reader_names_the_bad_pair() {
    let (dir, path) = written(3);
    let mut manifest = read_manifest(&path).unwrap();
    manifest.tile_size = 32;
    let bad = manifest.records[1].clone();
    let file = File::create(dir.path().join(&bad.other_path)).unwrap();
    let mut enc = tiff::encoder::TiffEncoder::new(BufWriter::new(file)).unwrap();
    enc.write_image::<tiff::encoder::colortype::Gray32Float>(16, 16, &[0.5f32; 256]).unwrap();
    drop(enc);
    let results: Vec<_> = load_hr_pairs(&manifest).collect();
    assert!(results[0].is_ok() && results[2].is_ok());
    let msg = results[1].as_ref().unwrap_err().to_string();
    assert!(msg.contains(&bad.pair_id) && msg.contains("16x16"), "{msg}");

    std::fs::remove_file(dir.path().join(&manifest.records[2].rgb_path)).unwrap();
    let msg = load_hr_pairs(&manifest).nth(2).unwrap().unwrap_err().to_string();
    assert!(msg.contains(&manifest.records[2].pair_id), "{msg}");
}

#[test]
fn manifest_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.tsv");
    std::fs::write(&path, "").unwrap();
    let empty = read_manifest(&path).unwrap();
    assert_eq!(load_hr_pairs(&empty).count(), 0);

    std::fs::write(&path, "a\tb.png\n").unwrap();
    assert!(read_manifest(&path).is_err());
    assert!(read_manifest(&dir.path().join("missing.tsv")).is_err());

    std::fs::write(&path, "a\ta.png\ta.tif\n").unwrap();
    std::fs::write(dir.path().join("stats.txt"), "rgb_mean=0.5,0.5,0.5\nrgb_std=0.2,0.2,0.2\n").unwrap();
    let m = read_manifest(&path).unwrap();
    assert_eq!((m.stats.rgb_mean, m.stats.other_std), ([0.5; 3], [1.0; 3]));
    std::fs::write(dir.path().join("stats.txt"), "bogus=1,2,3\n").unwrap();
    assert!(read_manifest(&path).is_err());
}
