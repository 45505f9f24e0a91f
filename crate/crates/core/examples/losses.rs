//! The four training losses on hand-sized inputs, their weighted total, and
//! the full self-check suite (oracles, finite-difference gradients, masking
//! statistics, EMA law).
//!
//! cargo run --example losses

use candle_core::{Device, Tensor};
use mmpretrain::losses::{
    alignment_loss, hsic_loss, modality_bce_loss, reconstruction_loss_tensor, scalar, total_loss, AlignMode, LossWeights,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dev = Device::Cpu;
    let pred = Tensor::from_vec(vec![1.0f64; 4], (1, 4), &dev)?;
    let target = Tensor::zeros((1, 4), candle_core::DType::F64, &dev)?;
    println!("rec, one row off by ones in 4 dims: {}", scalar(&reconstruction_loss_tensor(&pred, &target)?)?);

    let q = Tensor::from_vec(vec![1.0f64, 0.0], (1, 2), &dev)?;
    let p = Tensor::from_vec(vec![0.0f64, 1.0], (1, 2), &dev)?;
    let n = Tensor::from_vec(vec![0.0f64, 1.0, 0.0, 1.0, 0.0, 1.0], (1, 3, 2), &dev)?;
    let align = scalar(&alignment_loss(&q, &p, &n, 1.0, AlignMode::Standard)?)?;
    println!("align, tau 1, all similarities 0, 3 negatives: {align:.4} (ln 4 = {:.4})", 4f64.ln());

    let x = Tensor::from_vec(vec![0.0f64, 2.0], (2, 1), &dev)?;
    let y = Tensor::from_vec(vec![0.0f64, 4.0], (2, 1), &dev)?;
    println!("hsic [[0],[2]] vs [[0],[4]]: {}", scalar(&hsic_loss(&x, &y)?)?);

    let logits = Tensor::from_vec(vec![3f64.ln()], 1, &dev)?;
    let labels = Tensor::from_vec(vec![1.0f64], 1, &dev)?;
    println!("bce, logit ln 3 with label 1: {:.4}", scalar(&modality_bce_loss(&logits, &labels)?)?);

    let total = total_loss([1.0, 1.0, 1.0, 1.0], &LossWeights::default())?;
    println!("total of unit components with default weights: {total}");

    println!();
    let results = mmpretrain::verify::run_all()?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} properties, {failed} failed", results.len());
    Ok(())
}
