//! Synthetic aligned pairs: class-dependent primitives painted into an RGB
//! raster, extruded into a smooth height field for the other modality.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ModalityPair;
use crate::error::{Error, Result};
use crate::raster::{Modality, ModalityImage};
use crate::rng::{self, tag};

pub const SYNTH_PATCH_SIZE: usize = 16;

const PALETTE: [[f64; 3]; 4] = [[0.85, 0.35, 0.30], [0.30, 0.75, 0.35], [0.30, 0.40, 0.85], [0.80, 0.75, 0.25]];
const RGB_NOISE: f64 = 0.03;
const DSM_NOISE: f64 = 0.01;

#[derive(Clone, Copy)]
enum Shape {
    Disk,
    Square,
    Bar,
    Ring,
}

impl Shape {
    fn of_class(k: usize) -> Shape {
        match k % 4 {
            0 => Shape::Disk,
            1 => Shape::Square,
            2 => Shape::Bar,
            _ => Shape::Ring,
        }
    }

    fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        match self {
            Shape::Disk => dy * dy + dx * dx <= r * r,
            Shape::Square => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
            Shape::Bar => dy.abs() <= r * 0.35 && dx.abs() <= r * 1.4,
            Shape::Ring => {
                let d2 = dy * dy + dx * dx;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
        }
    }
}

struct Primitive {
    class: usize,
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
    height: f64,
}

fn primitive(rng: &mut ChaCha8Rng, class: usize, size: f64, radius: (f64, f64)) -> Primitive {
    let r = rng.gen_range(radius.0..radius.1);
    let tint = PALETTE[class % 4];
    let jitter: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    // classes past the palette reuse shapes and colors at a different height band
    let band = (class / 4) as f64;
    Primitive {
        class,
        cy: rng.gen_range(r..size - r),
        cx: rng.gen_range(r..size - r),
        radius: r,
        color: [0, 1, 2].map(|c| 0.6 * tint[c] + 0.4 * jitter[c]),
        height: (0.35 + 0.15 * (class % 4) as f64 + 0.3 * band) * rng.gen_range(0.8..1.2),
    }
}

/// Deterministic pair for `seed`. `n_classes == 0` yields a smooth,
/// primitive-free background with no label.
pub fn generate_synthetic_pair(seed: u64, size: usize, n_classes: usize) -> Result<ModalityPair> {
    if size == 0 || size % SYNTH_PATCH_SIZE != 0 {
        return Err(Error::invalid(format!("synthetic size {size} is not a multiple of {SYNTH_PATCH_SIZE}")));
    }
    let mut rng = rng::stream(seed, &[tag::SYNTH]);
    let s = size as f64;
    let background = n_classes == 0;

    let base: [f64; 3] = [0, 1, 2].map(|_| 0.35 + 0.1 * rng.gen::<f64>());
    let ground_tilt = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let wave = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU));

    let mut prims = Vec::new();
    if !background {
        let main = rng.gen_range(0..n_classes);
        let count = rng.gen_range(1..=2);
        for _ in 0..count {
            prims.push(primitive(&mut rng, main, s, (s / 8.0, s / 4.5)));
        }
        if n_classes > 1 && rng.gen_bool(0.5) {
            let other = (main + rng.gen_range(1..n_classes)) % n_classes;
            prims.push(primitive(&mut rng, other, s, (s / 14.0, s / 9.0)));
        }
    }

    let mut rgb = Vec::with_capacity(size * size * 3);
    let mut dsm = Vec::with_capacity(size * size);
    let mut area = vec![0usize; n_classes.max(1)];
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut color = base;
            let mut height = 0.1
                + ground_tilt.0 * fy / s
                + ground_tilt.1 * fx / s
                + 0.05 * (std::f64::consts::TAU * (wave.0 * fy + wave.1 * fx) / s + wave.2).sin();
            let mut top = None;
            for p in &prims {
                if Shape::of_class(p.class).contains(fy - p.cy, fx - p.cx, p.radius) {
                    color = p.color;
                    height = height.max(0.1 + p.height);
                    top = Some(p.class);
                }
            }
            if let Some(k) = top {
                area[k] += 1;
            }
            if background {
                rgb.extend_from_slice(&color);
                dsm.push(height);
            } else {
                for c in color {
                    rgb.push(c + RGB_NOISE * rng.sample::<f64, _>(StandardNormal));
                }
                dsm.push(height + DSM_NOISE * rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    let label = if background {
        None
    } else {
        area.iter().enumerate().max_by_key(|(k, a)| (**a, std::cmp::Reverse(*k))).map(|(k, _)| k)
    };
    let rgb = ModalityImage::new(size, size, 3, rgb, Modality::Rgb, SYNTH_PATCH_SIZE)?;
    let dsm = ModalityImage::new(size, size, 1, dsm, Modality::Other, SYNTH_PATCH_SIZE)?;
    let other = super::replicate_dsm_channels(&dsm)?;
    ModalityPair::new(rgb, other, format!("synth_{seed:016x}"), label)
}

/// `count` pairs with ids `synth_00000…`, each seeded from `(seed, index)`.
pub fn generate_synthetic_dataset(seed: u64, count: usize, size: usize, n_classes: usize) -> Result<Vec<ModalityPair>> {
    (0..count)
        .map(|i| {
            let mut pair = generate_synthetic_pair(rng::derive_seed(seed, &[tag::SYNTH, i as u64]), size, n_classes)?;
            pair.pair_id = format!("synth_{i:05}");
            Ok(pair)
        })
        .collect()
}
