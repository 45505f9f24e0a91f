use candle_core::{DType, Device, Tensor};
use mmpretrain::data::generate_synthetic_dataset;
use mmpretrain::masking::{fuse_masks, MaskMap};
use mmpretrain::model::{
    cosine_momentum, ema_update, encoder_from_map, patchify, sincos_2d, unpatchify, EmaState, ModelConfig, Network,
    Role, TokenBatch, TokenKind, TokenSequence, ENCODER_PREFIX,
};
use mmpretrain::pipeline::{ExperimentConfig, Trainer};
use mmpretrain::raster::{Modality, ModalityImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    let mut cfg = ModelConfig::toy();
    cfg.image_size = 64;
    cfg.dropout = 0.0;
    cfg.drop_path = 0.0;
    cfg
}

fn network(cfg: &ModelConfig, seed: u64) -> Network {
    Network::init(cfg, ChaCha8Rng::seed_from_u64(seed)).unwrap().0
}

fn random_patches(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..p).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_vec2::<f64>().unwrap()
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn patch_counts() {
    let big = ModalityImage::filled(320, 320, 3, 0.0, Modality::Rgb, 16).unwrap();
    let p = patchify(&big, 16).unwrap();
    assert_eq!((p.len(), p[0].len()), (400, 768));
    let toy = ModalityImage::filled(32, 32, 3, 0.0, Modality::Rgb, 16).unwrap();
    assert_eq!(patchify(&toy, 16).unwrap().len(), 4);
    assert!(patchify(&toy, 5).is_err());
}

#[test]
fn patchify_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let px: Vec<f64> = (0..48 * 32 * 3).map(|_| rng.gen()).collect();
    let img = ModalityImage::new(48, 32, 3, px, Modality::Other, 16).unwrap();
    let back = unpatchify(&patchify(&img, 16).unwrap(), (3, 2), 16, 3, Modality::Other).unwrap();
    assert_eq!(back, img);
}

#[test]
fn sincos_origin_is_zero_sine_unit_cosine() {
    let pe = sincos_2d(4, 4, 16);
    let row0 = &pe[0];
    // per axis: first half sines, second half cosines
    for half in row0.chunks(8) {
        assert!(half[..4].iter().all(|v| *v == 0.0));
        assert!(half[4..].iter().all(|v| *v == 1.0));
    }
}

#[test]
fn embeddings_are_additive() {
    let cfg = tiny();
    let net = network(&cfg, 2);
    let patch = random_patches(3, 1, cfg.patch_dim()).remove(0);
    let same = vec![patch; cfg.num_patches()];
    let rgb = rows(&net.encoder.embed_tokens(&same, Modality::Rgb).unwrap().tokens);
    let other = rows(&net.encoder.embed_tokens(&same, Modality::Other).unwrap().tokens);
    let pe = sincos_2d(cfg.grid(), cfg.grid(), cfg.encoder_dim);
    // identical patches: tokens differ only by positional encodings
    for p in 1..cfg.num_patches() {
        for d in 0..cfg.encoder_dim {
            let want = pe[p][d] - pe[0][d];
            assert!((rgb[p][d] - rgb[0][d] - want).abs() < 1e-12);
        }
    }
    // same patch and position across modalities: a constant offset
    let offset: Vec<f64> = (0..cfg.encoder_dim).map(|d| other[0][d] - rgb[0][d]).collect();
    for p in 0..cfg.num_patches() {
        for d in 0..cfg.encoder_dim {
            assert!((other[p][d] - rgb[p][d] - offset[d]).abs() < 1e-12);
        }
    }
    assert!(net.encoder.embed_tokens(&random_patches(4, 16, 7), Modality::Rgb).is_err());
}

#[test]
fn student_and_teacher_agree_without_masking() {
    let cfg = tiny();
    let net = network(&cfg, 5);
    let tokens = net.encoder.embed_tokens(&random_patches(6, 16, cfg.patch_dim()), Modality::Rgb).unwrap();
    let none = MaskMap::none(4, 4);
    let s = net.encoder.encode(&tokens, &none, Role::Student).unwrap();
    let t = net.encoder.encode(&tokens, &none, Role::Teacher).unwrap();
    assert!(max_abs_diff(&rows(&s.tokens), &rows(&t.tokens)) < 1e-6);
}

#[test]
fn student_drops_masked_positions() {
    let cfg = tiny();
    let net = network(&cfg, 7);
    let tokens = net.encoder.embed_tokens(&random_patches(8, 16, cfg.patch_dim()), Modality::Rgb).unwrap();
    let mask = MaskMap::from_masked_positions(4, 4, &[0, 5, 9]).unwrap();
    let s = net.encoder.encode(&tokens, &mask, Role::Student).unwrap();
    assert_eq!(s.len(), 13);
    assert_eq!(s.positions, mask.visible_positions());
    let all = MaskMap::from_masked_positions(4, 4, &(0..16).collect::<Vec<_>>()).unwrap();
    assert!(net.encoder.encode(&tokens, &all, Role::Student).is_err());
    assert_eq!(net.encoder.encode(&tokens, &all, Role::Teacher).unwrap().len(), 16);
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = tiny();
    let net = network(&cfg, 9);
    let tokens = net.encoder.embed_tokens(&random_patches(10, 16, cfg.patch_dim()), Modality::Other).unwrap();
    let perm: Vec<usize> = vec![3, 0, 15, 7, 1, 2, 14, 4, 5, 13, 6, 8, 12, 9, 11, 10];
    let idx = Tensor::from_vec(perm.iter().map(|&i| i as u32).collect::<Vec<_>>(), 16, &Device::Cpu).unwrap();
    let shuffled = TokenSequence::new(
        tokens.tokens.index_select(&idx, 0).unwrap(),
        perm.iter().map(|&i| tokens.positions[i]).collect(),
        TokenKind::Other,
    )
    .unwrap();
    let none = MaskMap::none(4, 4);
    let a = rows(&net.encoder.encode(&tokens, &none, Role::Teacher).unwrap().tokens);
    let b = rows(&net.encoder.encode(&shuffled, &none, Role::Teacher).unwrap().tokens);
    let a_perm: Vec<Vec<f64>> = perm.iter().map(|&i| a[i].clone()).collect();
    assert!(max_abs_diff(&a_perm, &b) < 1e-6);
}

#[test]
fn ema_examples() {
    let state = |t: f64, m: f64| EmaState {
        names: vec!["w".into()],
        shapes: vec![vec![1]],
        teacher_params: vec![t],
        momentum: m,
    };
    assert_eq!(ema_update(&state(1.0, 1.0), &[5.0]).unwrap().teacher_params, vec![1.0]);
    assert_eq!(ema_update(&state(1.0, 0.0), &[5.0]).unwrap().teacher_params, vec![5.0]);
    let mut s = state(1.0, 0.99);
    for k in 1..=20 {
        s = ema_update(&s, &[0.0]).unwrap();
        assert!((s.teacher_params[0] - 0.99f64.powi(k)).abs() < 1e-15);
    }
    assert!(ema_update(&s, &[0.0, 1.0]).is_err());
}

#[test]
fn momentum_schedule_endpoints() {
    assert_eq!(cosine_momentum(0.996, 1.0, 0, 100), 0.996);
    assert!((cosine_momentum(0.996, 1.0, 100, 100) - 1.0).abs() < 1e-15);
    assert_eq!(cosine_momentum(0.996, 0.996, 37, 100), 0.996);
}

fn sequence(net: &Network, seed: u64, modality: Modality, mask: &MaskMap) -> TokenSequence {
    let cfg = &net.cfg;
    let tokens = net.encoder.embed_tokens(&random_patches(seed, cfg.num_patches(), cfg.patch_dim()), modality).unwrap();
    net.encoder.encode(&tokens, mask, Role::Student).unwrap()
}

#[test]
fn fusion_keeps_the_union_and_takes_single_tokens_as_is() {
    let cfg = tiny();
    let net = network(&cfg, 11);
    let m_rgb = MaskMap::from_masked_positions(4, 4, &[0, 1, 2, 3, 4, 5]).unwrap();
    let m_other = MaskMap::from_masked_positions(4, 4, &[2, 3, 4, 5, 6, 7, 8]).unwrap();
    let f_rgb = sequence(&net, 12, Modality::Rgb, &m_rgb);
    let f_other = sequence(&net, 13, Modality::Other, &m_other);
    let fused = net.fusion.fuse(&f_rgb, &f_other, &m_rgb, &m_other).unwrap();
    assert_eq!(fused.positions, fuse_masks(&m_rgb, &m_other).unwrap().visible_positions());
    assert_eq!(fused.dim(), cfg.fusion_dim);

    let (b_rgb, b_other) = (TokenBatch::from_sequence(&f_rgb).unwrap(), TokenBatch::from_sequence(&f_other).unwrap());
    let (input, unions) = net.fusion.fused_input(&b_rgb, &b_other).unwrap();
    let input = rows(&input.get(0).unwrap());
    let proj_rgb = rows(&net.fusion.project(&b_rgb).unwrap().get(0).unwrap());
    let proj_other = rows(&net.fusion.project(&b_other).unwrap().get(0).unwrap());
    for (slot, p) in unions[0].iter().enumerate() {
        let r = f_rgb.positions.iter().position(|q| q == p);
        let o = f_other.positions.iter().position(|q| q == p);
        let want: Vec<f64> = match (r, o) {
            (Some(r), Some(o)) => proj_rgb[r].iter().zip(&proj_other[o]).map(|(a, b)| (a + b) / 2.0).collect(),
            (Some(r), None) => proj_rgb[r].clone(),
            (None, Some(o)) => proj_other[o].clone(),
            (None, None) => unreachable!("union positions come from one of the inputs"),
        };
        assert!(max_abs_diff(&[want], &[input[slot].clone()]) < 1e-12, "position {p}");
    }
}

#[test]
fn decoder_query_bookkeeping() {
    let cfg = tiny();
    let net = network(&cfg, 14);
    let m = MaskMap::from_masked_positions(4, 4, &[1, 2, 3]).unwrap();
    let fused = net
        .fusion
        .fuse(&sequence(&net, 15, Modality::Rgb, &m), &sequence(&net, 16, Modality::Other, &m), &m, &m)
        .unwrap();
    assert!(net.decoder.decode(&fused, &[], Modality::Rgb).unwrap().is_empty());
    let out = net.decoder.decode(&fused, &[1, 2, 3], Modality::Rgb).unwrap();
    assert_eq!((out.len(), out.dim()), (3, cfg.decoder_dim));
    let r = rows(&out.tokens);
    assert!(max_abs_diff(&[r[0].clone()], &[r[1].clone()]) > 1e-9);
    let pred = net.predictor.predict_targets(&out).unwrap();
    assert_eq!((pred.len(), pred.dim(), pred.positions.clone()), (3, cfg.encoder_dim, vec![1, 2, 3]));
}

#[test]
fn predictor_is_affine() {
    let cfg = tiny();
    let net = network(&cfg, 17);
    let dev = Device::Cpu;
    let zero = Tensor::zeros((2, cfg.decoder_dim), DType::F64, &dev).unwrap();
    let bias = net.predictor.linear.bias.to_vec1::<f64>().unwrap();
    for row in rows(&net.predictor.forward(&zero).unwrap()) {
        assert_eq!(row, bias);
    }
    let a = Tensor::from_vec(random_patches(18, 2, cfg.decoder_dim).concat(), (2, cfg.decoder_dim), &dev).unwrap();
    let b = Tensor::from_vec(random_patches(19, 2, cfg.decoder_dim).concat(), (2, cfg.decoder_dim), &dev).unwrap();
    let lhs = rows(&net.predictor.forward(&(&a + &b).unwrap()).unwrap());
    let rhs = rows(
        &(net.predictor.forward(&a).unwrap() + net.predictor.forward(&b).unwrap())
            .unwrap()
            .broadcast_sub(&net.predictor.linear.bias)
            .unwrap(),
    );
    assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
}

#[test]
fn modality_head_examples() {
    let cfg = tiny();
    let mut net = network(&cfg, 20);
    let d = cfg.aux_dim();
    let dev = Device::Cpu;
    let head = &mut net.modality_head;
    head.linear.weight = Tensor::zeros((1, d), DType::F64, &dev).unwrap();
    head.linear.bias = Tensor::zeros(1, DType::F64, &dev).unwrap();
    let tokens = Tensor::from_vec(random_patches(21, 5, d).concat(), (5, d), &dev).unwrap();
    assert!(head.logits(&tokens).unwrap().to_vec1::<f64>().unwrap().iter().all(|z| *z == 0.0));

    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    head.linear.weight = Tensor::from_vec(e1, (1, d), &dev).unwrap();
    let mut t = vec![0.0; d];
    t[0] = 3.0;
    let seq = TokenSequence::new(Tensor::from_vec(t, (1, d), &dev).unwrap(), vec![0], TokenKind::Rgb).unwrap();
    assert_eq!(head.classify_modality(&seq).unwrap(), vec![3.0]);

    let w = Tensor::from_vec(random_patches(22, 1, d).concat(), (1, d), &dev).unwrap();
    head.linear.weight = w.clone();
    head.linear.bias = Tensor::from_vec(vec![0.25], 1, &dev).unwrap();
    let batch = head.logits(&tokens).unwrap().to_vec1::<f64>().unwrap();
    let wv = w.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    for (row, z) in rows(&tokens).iter().zip(batch) {
        let want: f64 = row.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>() + 0.25;
        assert!((z - want).abs() < 1e-12);
    }
    assert!(head.logits(&Tensor::zeros((2, d + 1), DType::F64, &dev).unwrap()).is_err());
}

#[test]
fn teacher_changes_only_through_ema() {
    let mut cfg = ExperimentConfig::toy();
    cfg.model.dropout = 0.0;
    cfg.model.drop_path = 0.0;
    cfg.train.grad_accum_steps = 1;
    cfg.train.batch_size = 4;
    let pairs = generate_synthetic_dataset(3, 4, 32, 4).unwrap();
    let mut trainer = Trainer::new(&cfg, 4).unwrap();
    let before = trainer.ema.teacher_params.clone();
    trainer.train_step(&pairs, 0).unwrap();
    let m = trainer.ema.momentum;
    let student = trainer.ema.student_flat(&trainer.store).unwrap();
    for ((t, t0), s) in trainer.ema.teacher_params.iter().zip(&before).zip(&student) {
        assert!((t - (m * t0 + (1.0 - m) * s)).abs() < 1e-15);
    }
    // the rebuilt teacher encoder reflects exactly the EMA parameters
    let rebuilt = encoder_from_map(&cfg.model, &trainer.ema.to_map().unwrap()).unwrap();
    let toks = rebuilt.embed_tokens(&random_patches(23, 4, cfg.model.patch_dim()), Modality::Rgb).unwrap();
    let none = MaskMap::none(2, 2);
    let a = rows(&rebuilt.encode(&toks, &none, Role::Teacher).unwrap().tokens);
    let b = rows(&trainer.teacher.encode(&toks, &none, Role::Teacher).unwrap().tokens);
    assert_eq!(a, b);
    assert!(trainer.ema.names.iter().all(|n| n.starts_with(ENCODER_PREFIX)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_positions_complement_fused_mask(a in any::<u16>(), b in any::<u16>()) {
        let grid = |bits: u16| MaskMap::new(4, 4, (0..16).map(|i| (bits >> i) & 1 == 1).collect()).unwrap();
        let (ma, mb) = (grid(a), grid(b));
        prop_assume!(ma.masked_count() < 16 && mb.masked_count() < 16);
        let cfg = tiny();
        let net = network(&cfg, 30);
        let fused = net.fusion.fuse(&sequence(&net, 31, Modality::Rgb, &ma), &sequence(&net, 32, Modality::Other, &mb), &ma, &mb).unwrap();
        let fm = fuse_masks(&ma, &mb).unwrap();
        prop_assert_eq!(fused.len(), 16 - fm.masked_count());
        prop_assert_eq!(fused.positions, fm.visible_positions());
    }
}
