//! Generates a seeded synthetic benchmark and prints class balance and
//! class-conditional mean pixel values for both modalities.
//!
//! cargo run --example synthetic_data

use mmpretrain::data::generate_synthetic_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = generate_synthetic_dataset(7, 200, 32, 4)?;
    let mut counts = [0usize; 4];
    let mut rgb_mean = [[0.0f64; 3]; 4];
    let mut height_mean = [0.0f64; 4];
    for pair in &pairs {
        let k = pair.label.expect("synthetic pairs are labelled");
        counts[k] += 1;
        let px = pair.rgb.pixels();
        let n = (px.len() / 3) as f64;
        for (c, slot) in rgb_mean[k].iter_mut().enumerate() {
            *slot += px.iter().skip(c).step_by(3).sum::<f64>() / n;
        }
        let other = pair.other.pixels();
        height_mean[k] += other.iter().step_by(3).sum::<f64>() / n;
    }
    println!("pairs {}  size {:?}  first id {}", pairs.len(), pairs[0].size(), pairs[0].pair_id);
    for k in 0..4 {
        let c = counts[k].max(1) as f64;
        println!(
            "class {k}: {:3} pairs  mean rgb [{:.3} {:.3} {:.3}]  mean height {:.3}",
            counts[k],
            rgb_mean[k][0] / c,
            rgb_mean[k][1] / c,
            rgb_mean[k][2] / c,
            height_mean[k] / c
        );
    }
    let background = mmpretrain::data::generate_synthetic_pair(3, 32, 0)?;
    println!("background pair label {:?}", background.label);
    Ok(())
}
