//! Self-check suite run by `losses-check`: each property compares a library
//! routine with an independent computation and reports pass or fail.

use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{self, AlignMode, LossWeights};
use crate::masking::{
    assign_mask_probabilities, fuse_masks, sample_masks, substitution_probability, InfoScoreMap, MaskMap,
    SubstitutionSchedule, HIGH_INFO_PROB, LOW_INFO_PROB, MID_INFO_PROB,
};
use crate::model::EmaState;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
}

/// `trace(K H L H) / (n−1)²` with `K = XXᵀ`, `L = YYᵀ`, `H = I − 11ᵀ/n`.
pub fn kernel_hsic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let gram = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum()).collect())
            .collect()
    };
    let h = |i: usize, j: usize| (i == j) as u8 as f64 - 1.0 / n as f64;
    let mul = |a: &[Vec<f64>], b: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b(k, j)).sum()).collect())
            .collect()
    };
    let (k, l) = (gram(x), gram(y));
    let kh = mul(&k, &h);
    let lh = mul(&l, &h);
    let trace: f64 = (0..n).map(|i| (0..n).map(|j| kh[i][j] * lh[j][i]).sum::<f64>()).sum();
    trace / ((n - 1) * (n - 1)) as f64
}

fn check_hsic_oracle() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=16);
        let d = rng.gen_range(1..=8);
        let (x, y) = (rand_matrix(&mut rng, n, d), rand_matrix(&mut rng, n, d));
        let got = losses::scalar(&losses::hsic_loss(&tensor(&x)?, &tensor(&y)?)?)?;
        let want = kernel_hsic(&x, &y);
        worst = worst.max((got - want).abs() / want.abs().max(1e-300));
    }
    Ok(PropertyResult {
        name: "hsic-kernel-oracle",
        passed: worst < 1e-8,
        detail: format!("max relative error {worst:.3e} over 100 draws"),
    })
}

/// Norm-wise relative error between the autodiff gradient of `f` at `x0` and
/// central differences with step `h`.
pub fn gradient_error(f: &dyn Fn(&Tensor) -> Result<Tensor>, x0: &[f64], shape: &[usize], h: f64) -> Result<f64> {
    let var = Var::from_tensor(&Tensor::from_slice(x0, shape, &Device::Cpu)?)?;
    let grads = f(var.as_tensor())?.backward()?;
    let analytic = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
        None => vec![0.0; x0.len()],
    };
    let eval = |v: &[f64]| -> Result<f64> { losses::scalar(&f(&Tensor::from_slice(v, shape, &Device::Cpu)?)?) };
    let mut numeric = Vec::with_capacity(x0.len());
    let mut probe = x0.to_vec();
    for i in 0..x0.len() {
        probe[i] = x0[i] + h;
        let up = eval(&probe)?;
        probe[i] = x0[i] - h;
        let down = eval(&probe)?;
        probe[i] = x0[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

fn check_gradients() -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tau = 0.5;
    let w = LossWeights::default();
    let mut out = Vec::new();
    type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>);
    let cases: Vec<Case> = vec![
        (
            "grad-rec",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (n, d) = (rng.gen_range(1..=8), rng.gen_range(1..=16));
                let target = tensor(&rand_matrix(rng, n, d))?;
                let x0: Vec<f64> = rand_matrix(rng, n, d).concat();
                gradient_error(&|x| losses::reconstruction_loss_tensor(x, &target), &x0, &[n, d], 1e-5)
            }),
        ),
        (
            "grad-align",
            Box::new(move |rng: &mut ChaCha8Rng| {
                let (n, d, k) = (rng.gen_range(1..=8), rng.gen_range(2..=16), rng.gen_range(1..=4));
                let pos = tensor(&rand_matrix(rng, n, d))?;
                let neg = tensor(&rand_matrix(rng, n * k, d))?.reshape((n, k, d))?;
                let x0: Vec<f64> = rand_matrix(rng, n, d).concat();
                gradient_error(
                    &|x| losses::alignment_loss(x, &pos, &neg, tau, AlignMode::Standard),
                    &x0,
                    &[n, d],
                    1e-5,
                )
            }),
        ),
        (
            "grad-hsic",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (n, d) = (rng.gen_range(2..=8), rng.gen_range(1..=16));
                let y = tensor(&rand_matrix(rng, n, d))?;
                let x0: Vec<f64> = rand_matrix(rng, n, d).concat();
                gradient_error(&|x| losses::hsic_loss(x, &y), &x0, &[n, d], 1e-5)
            }),
        ),
        (
            "grad-cls",
            Box::new(|rng: &mut ChaCha8Rng| {
                let n = rng.gen_range(1..=16);
                let labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
                let labels = Tensor::from_vec(labels, n, &Device::Cpu)?;
                let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
                gradient_error(&|z| losses::modality_bce_loss(z, &labels), &x0, &[n], 1e-5)
            }),
        ),
        (
            "grad-total",
            Box::new(move |rng: &mut ChaCha8Rng| {
                let (n, d, k) = (rng.gen_range(2..=8), rng.gen_range(2..=8), rng.gen_range(1..=4));
                let target = tensor(&rand_matrix(rng, n, d))?;
                let y = tensor(&rand_matrix(rng, n, d))?;
                let neg = tensor(&rand_matrix(rng, n * k, d))?.reshape((n, k, d))?;
                let proj = tensor(&rand_matrix(rng, d, 1))?;
                let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
                let labels = Tensor::from_vec(labels, n, &Device::Cpu)?;
                let x0: Vec<f64> = rand_matrix(rng, n, d).concat();
                let f = |x: &Tensor| -> Result<Tensor> {
                    let rec = losses::reconstruction_loss_tensor(x, &target)?;
                    let align = losses::alignment_loss(x, &y, &neg, tau, AlignMode::Standard)?;
                    let hsic = losses::hsic_loss(x, &y)?;
                    let cls = losses::modality_bce_loss(&x.matmul(&proj)?.squeeze(1)?, &labels)?;
                    losses::total_loss_tensor([&rec, &align, &hsic, &cls], &w)
                };
                gradient_error(&f, &x0, &[n, d], 1e-5)
            }),
        ),
    ];
    for (name, case) in cases {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            worst = worst.max(case(&mut rng)?);
        }
        out.push(PropertyResult {
            name,
            passed: worst < 1e-4,
            detail: format!("max relative error {worst:.3e} over 20 instances"),
        });
    }
    Ok(out)
}

fn check_mask_statistics() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    let map = InfoScoreMap::new(100, 100, scores.clone())?;
    let probs = assign_mask_probabilities(std::slice::from_ref(&map))?.remove(0);
    // oracle: rank-based buckets with linear-interpolated quantiles
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let (q20, q80) = (q(0.2), q(0.8));
    let buckets_match = scores.iter().zip(&probs.probs).all(|(&s, &p)| {
        let want = if s < q20 {
            LOW_INFO_PROB
        } else if s > q80 {
            HIGH_INFO_PROB
        } else {
            MID_INFO_PROB
        };
        p == want
    });
    let rate = sample_masks(&probs, 7).masked_fraction();
    Ok(PropertyResult {
        name: "mask-rate",
        passed: buckets_match && (rate - 0.52).abs() <= 0.02,
        detail: format!("empirical rate {rate:.4}, buckets match oracle: {buckets_match}"),
    })
}

fn check_rho_schedule() -> PropertyResult {
    let sched = SubstitutionSchedule::default();
    let table = [(0, 0.1), (9, 0.1), (10, 0.2), (25, 0.3), (59, 0.6), (60, 0.7), (500, 0.7)];
    let bad: Vec<String> = table
        .iter()
        .filter(|(e, want)| substitution_probability(*e, &sched) != *want)
        .map(|(e, want)| format!("epoch {e}: {} != {want}", substitution_probability(*e, &sched)))
        .collect();
    PropertyResult {
        name: "rho-schedule",
        passed: bad.is_empty(),
        detail: if bad.is_empty() { "7 epochs exact".into() } else { bad.join("; ") },
    }
}

fn check_fusion_union() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = 0;
    for _ in 0..1000 {
        let (a, b): (u16, u16) = (rng.gen(), rng.gen());
        let to_mask = |bits: u16| MaskMap::new(4, 4, (0..16).map(|i| bits >> i & 1 == 1).collect());
        let fused = fuse_masks(&to_mask(a)?, &to_mask(b)?)?;
        let union: Vec<usize> = (0..16).filter(|i| (a >> i & 1 == 0) || (b >> i & 1 == 0)).collect();
        failures += (fused.visible_positions() != union) as usize;
    }
    Ok(PropertyResult {
        name: "fusion-union",
        passed: failures == 0,
        detail: format!("{failures} mismatches over 1000 mask pairs"),
    })
}

fn check_ema_law() -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for m in [0.9, 0.996] {
        let student: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut state = EmaState {
            names: vec!["w".into()],
            shapes: vec![vec![32]],
            teacher_params: (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            momentum: m,
        };
        let dist = |t: &[f64]| t.iter().zip(&student).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let d0 = dist(&state.teacher_params);
        for k in 1..=50 {
            state.update_in_place(&student)?;
            let ratio = dist(&state.teacher_params) / d0;
            worst = worst.max((ratio - m.powi(k)).abs());
        }
    }
    Ok(PropertyResult {
        name: "ema-law",
        passed: worst < 1e-10,
        detail: format!("max deviation from m^k {worst:.3e}"),
    })
}

/// Runs every property; the caller decides how to report.
pub fn run_all() -> Result<Vec<PropertyResult>> {
    let mut out = vec![check_hsic_oracle()?];
    out.extend(check_gradients()?);
    out.push(check_mask_statistics()?);
    out.push(check_rho_schedule());
    out.push(check_fusion_union()?);
    out.push(check_ema_law()?);
    Ok(out)
}
