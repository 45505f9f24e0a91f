//! On-disk pair layout: `root/{pair_id}_dom.png` (8-bit, 3 channels) and
//! `root/{pair_id}_dsm.tif` (32-bit float, 1 channel), listed in a manifest
//! with one `pair_id<TAB>rgb_relpath<TAB>other_relpath` record per line.
//! Normalization statistics live in a `key=value` sidecar next to it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{replicate_dsm_channels, normalize, ModalityPair};
use crate::error::{Error, Result};
use crate::raster::{Modality, ModalityImage};

pub const DEFAULT_TILE_SIZE: usize = 512;
const STATS_FILE: &str = "stats.txt";
const LABELS_FILE: &str = "labels.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub pair_id: String,
    pub rgb_path: PathBuf,
    pub other_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    pub other_mean: [f64; 3],
    pub other_std: [f64; 3],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            rgb_mean: [0.0; 3],
            rgb_std: [1.0; 3],
            other_mean: [0.0; 3],
            other_std: [1.0; 3],
        }
    }
}

impl NormStats {
    fn parse(text: &str) -> Result<Self> {
        let mut stats = NormStats::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("stats line without '=': {line}")))?;
            let nums: Vec<f64> = value
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("stats key {key}: {e}")))?;
            let arr: [f64; 3] = nums
                .try_into()
                .map_err(|_| Error::Config(format!("stats key {key} needs three values")))?;
            match key.trim() {
                "rgb_mean" => stats.rgb_mean = arr,
                "rgb_std" => stats.rgb_std = arr,
                "other_mean" => stats.other_mean = arr,
                "other_std" => stats.other_std = arr,
                other => return Err(Error::Config(format!("unknown stats key {other}"))),
            }
        }
        Ok(stats)
    }

    fn render(&self) -> String {
        let f = |a: &[f64; 3]| format!("{},{},{}", a[0], a[1], a[2]);
        format!(
            "rgb_mean={}\nrgb_std={}\nother_mean={}\nother_std={}\n",
            f(&self.rgb_mean),
            f(&self.rgb_std),
            f(&self.other_mean),
            f(&self.other_std)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub stats: NormStats,
    pub tile_size: usize,
    pub patch_size: usize,
}

/// Parses `path` (the manifest) and its optional stats sidecar.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!("{}:{}: expected 3 tab-separated fields", path.display(), i + 1)));
        }
        records.push(ManifestRecord {
            pair_id: fields[0].to_string(),
            rgb_path: PathBuf::from(fields[1]),
            other_path: PathBuf::from(fields[2]),
        });
    }
    let stats_path = root.join(STATS_FILE);
    let stats = if stats_path.exists() {
        NormStats::parse(&std::fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?)?
    } else {
        NormStats::default()
    };
    Ok(DatasetManifest {
        root,
        records,
        stats,
        tile_size: DEFAULT_TILE_SIZE,
        patch_size: 16,
    })
}

/// `pair_id → label` from the optional `labels.tsv` beside the manifest.
pub fn read_labels(root: &Path) -> Result<HashMap<String, usize>> {
    let path = root.join(LABELS_FILE);
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, label) = l
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("{}: bad label line {l}", path.display())))?;
            let label = label
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{}: label for {id}: {e}", path.display())))?;
            Ok((id.to_string(), label))
        })
        .collect()
}

fn pair_err(id: &str, reason: impl Into<String>) -> Error {
    Error::Pair {
        pair_id: id.to_string(),
        reason: reason.into(),
    }
}

fn read_dom(path: &Path, id: &str, tile: usize, patch: usize) -> Result<ModalityImage> {
    let img = image::open(path).map_err(|e| pair_err(id, format!("{}: {e}", path.display())))?;
    if img.color().channel_count() != 3 {
        return Err(pair_err(id, format!("DOM has {} channels, expected 3", img.color().channel_count())));
    }
    let rgb = img.to_rgb8();
    if (rgb.width() as usize, rgb.height() as usize) != (tile, tile) {
        return Err(pair_err(id, format!("DOM is {}x{}, expected {tile}x{tile}", rgb.width(), rgb.height())));
    }
    let px = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    ModalityImage::new(tile, tile, 3, px, Modality::Rgb, patch)
}

fn read_dsm(path: &Path, id: &str, tile: usize, patch: usize) -> Result<ModalityImage> {
    let file = File::open(path).map_err(|e| pair_err(id, format!("{}: {e}", path.display())))?;
    let mut dec = tiff::decoder::Decoder::new(std::io::BufReader::new(file))
        .map_err(|e| pair_err(id, format!("{}: {e}", path.display())))?;
    let (w, h) = dec.dimensions().map_err(|e| pair_err(id, e.to_string()))?;
    if (w as usize, h as usize) != (tile, tile) {
        return Err(pair_err(id, format!("DSM is {w}x{h}, expected {tile}x{tile}")));
    }
    match dec.colortype().map_err(|e| pair_err(id, e.to_string()))? {
        tiff::ColorType::Gray(32) => {}
        other => return Err(pair_err(id, format!("DSM must be single-channel 32-bit float, got {other:?}"))),
    }
    let values: Vec<f64> = match dec.read_image().map_err(|e| pair_err(id, e.to_string()))? {
        tiff::decoder::DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        _ => return Err(pair_err(id, "DSM samples are not 32-bit float")),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(pair_err(id, "DSM contains non-finite heights"));
    }
    // per-tile min-max to [0, 1]
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let scaled = values
        .into_iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    ModalityImage::new(tile, tile, 1, scaled, Modality::Other, patch)
}

fn load_one(m: &DatasetManifest, rec: &ManifestRecord) -> Result<ModalityPair> {
    let id = rec.pair_id.as_str();
    let dom = read_dom(&m.root.join(&rec.rgb_path), id, m.tile_size, m.patch_size)?;
    let dsm = read_dsm(&m.root.join(&rec.other_path), id, m.tile_size, m.patch_size)?;
    let rgb = normalize(&dom, &m.stats.rgb_mean, &m.stats.rgb_std)?;
    let other = normalize(&replicate_dsm_channels(&dsm)?, &m.stats.other_mean, &m.stats.other_std)?;
    ModalityPair::new(rgb, other, id, None)
}

/// Yields pairs in manifest order; every failure names its pair.
pub fn load_hr_pairs(manifest: &DatasetManifest) -> impl Iterator<Item = Result<ModalityPair>> + '_ {
    manifest.records.iter().map(move |rec| load_one(manifest, rec))
}

/// Writes pairs in the on-disk layout with a manifest, stats sidecar and
/// label file. RGB is quantized to 8 bits; the other modality's channel 0 is
/// stored as the float DSM. Returns the manifest path.
pub fn write_dataset(dir: &Path, pairs: &[ModalityPair], stats: &NormStats) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut labels = String::new();
    for pair in pairs {
        let (h, w) = pair.size();
        let rgb_name = format!("{}_dom.png", pair.pair_id);
        let dsm_name = format!("{}_dsm.tif", pair.pair_id);

        let bytes: Vec<u8> = (0..h * w)
            .flat_map(|i| (0..3).map(move |c| (i, c)))
            .map(|(i, c)| {
                let v = pair.rgb.pixels()[i * pair.rgb.channels() + c.min(pair.rgb.channels() - 1)];
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized h*w*3");
        let rgb_path = dir.join(&rgb_name);
        img.save_with_format(&rgb_path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", rgb_path.display())))?;

        let heights: Vec<f32> = pair
            .other
            .pixels()
            .chunks_exact(pair.other.channels())
            .map(|px| px[0] as f32)
            .collect();
        let dsm_path = dir.join(&dsm_name);
        let file = File::create(&dsm_path).map_err(|e| Error::io(&dsm_path, e))?;
        let mut enc = tiff::encoder::TiffEncoder::new(BufWriter::new(file))
            .map_err(|e| Error::Image(format!("{}: {e}", dsm_path.display())))?;
        enc.write_image::<tiff::encoder::colortype::Gray32Float>(w as u32, h as u32, &heights)
            .map_err(|e| Error::Image(format!("{}: {e}", dsm_path.display())))?;

        manifest.push_str(&format!("{}\t{rgb_name}\t{dsm_name}\n", pair.pair_id));
        if let Some(label) = pair.label {
            labels.push_str(&format!("{}\t{label}\n", pair.pair_id));
        }
    }
    let write = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        let mut f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))
    };
    write("manifest.tsv", &manifest)?;
    write(STATS_FILE, &stats.render())?;
    if !labels.is_empty() {
        write(LABELS_FILE, &labels)?;
    }
    Ok(dir.join("manifest.tsv"))
}
