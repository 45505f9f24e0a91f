use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};

const CELL: u32 = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub checkpoint_tag: String,
    pub protocol: String,
    pub accuracy: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: &str = "checkpoint_tag,protocol,accuracy,seed";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.checkpoint_tag, r.protocol, r.accuracy, r.seed));
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, results_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Row-normalized confusion matrix as a heat map: white is 0, dark blue is 1.
pub fn render_confusion_png(confusion: &[Vec<usize>]) -> Result<Vec<u8>> {
    let k = confusion.len() as u32;
    if k == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let mut img = RgbImage::new(k * CELL, k * CELL);
    for (t, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = |full: f64| (255.0 - frac * (255.0 - full)).round() as u8;
            let color = Rgb([shade(20.0), shade(60.0), shade(140.0)]);
            for y in 0..CELL {
                for x in 0..CELL {
                    img.put_pixel(p as u32 * CELL + x, t as u32 * CELL + y, color);
                }
            }
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(bytes)
}

pub fn write_confusion_png(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    std::fs::write(path, render_confusion_png(confusion)?).map_err(|e| Error::io(path, e))
}
