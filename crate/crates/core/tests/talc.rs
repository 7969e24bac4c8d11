use hmpdm_tensor::{ParamStore, Tensor};
use hmpdm::talc::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn level(s: f64) -> NoiseLevel {
    NoiseLevel::new(s, SIGMA_MIN, SIGMA_MAX).unwrap()
}

#[test]
fn noise_level_bounds() {
    assert!(NoiseLevel::new(0.001, SIGMA_MIN, SIGMA_MAX).is_err());
    assert!(NoiseLevel::new(81.0, SIGMA_MIN, SIGMA_MAX).is_err());
    assert!(NoiseLevel::new(1.0, 0.0, SIGMA_MAX).is_err());
}

#[test]
fn noise_at_sigma_min_has_matching_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = Tensor::<f64>::zeros(&[1, 100_000]);
    let out = add_noise(&z, &[level(SIGMA_MIN)], &mut rng).unwrap();
    let n = out.numel() as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let std = (out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - SIGMA_MIN).abs() < 0.1 * SIGMA_MIN, "{std}");
}

#[test]
fn noise_mean_within_clt_bound_and_reproducible() {
    let sigma = 3.0;
    let z = Tensor::<f64>::full(&[1, 100_000], 0.7);
    let draw = |seed| add_noise(&z, &[level(sigma)], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let a = draw(9);
    let n = a.numel() as f64;
    let mean_dev = a.data().iter().map(|v| v - 0.7).sum::<f64>() / n;
    assert!(mean_dev.abs() < 3.0 * sigma / n.sqrt(), "{mean_dev}");
    assert_eq!(a.data(), draw(9).data());
}

#[test]
fn joint_mask_and_history_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = Tensor::<f32>::new(&[1, 2, 4, 8, 8], hmpdm_tensor::init::normal(&mut rng, 512, 1.0)).unwrap();
    let z = Tensor::<f32>::zeros(&[1, 4, 4, 8, 8]);
    let j = make_joint(&h, &z, &[level(1.0)]).unwrap();
    assert_eq!(j.data.shape(), &[1, 6, 4, 8, 8]);
    assert_eq!(j.mask.values(), &[1, 1, 0, 0, 0, 0]);
    assert_eq!(&j.data.data()[..512], h.data());
    assert!(FrameMask::new(0, 4).is_err());
    let bad = Tensor::<f32>::zeros(&[1, 4, 3, 8, 8]);
    assert!(make_joint(&h, &bad, &[level(1.0)]).is_err());
}

#[test]
fn sinusoid_at_zero_has_unit_cosines() {
    let v = sinusoidal(0.0, 8).unwrap();
    assert_eq!(&v[..4], &[0.0; 4]);
    assert_eq!(&v[4..], &[1.0; 4]);
    assert!(sinusoidal(1.0, 7).is_err());
}

#[test]
fn history_rows_ignore_sigma_and_embedders_start_equal() {
    let mut store = ParamStore::<f64>::new();
    let emb = DualTimeEmbedding::new(&mut store, 16, SIGMA_MIN, 5).unwrap();
    let mask = FrameMask::new(2, 3).unwrap();
    let a = emb.time_embedding(&store, &level(0.5), &mask).unwrap();
    let b = emb.time_embedding(&store, &level(40.0), &mask).unwrap();
    assert_eq!(&a.data()[..32], &b.data()[..32]);
    assert_ne!(&a.data()[32..], &b.data()[32..]);
    let clean = emb.clean.forward(&store, &[0.25 * SIGMA_MIN.ln()]).unwrap();
    let noise = emb.noise.forward(&store, &[0.25 * SIGMA_MIN.ln()]).unwrap();
    assert_eq!(clean.data(), noise.data());
}

#[test]
fn coefficient_examples() {
    let c = precondition_coeffs(0.0, false);
    assert_eq!((c.c_skip, c.c_in, c.c_out), (1.0, 1.0, 0.0));
    let c = precondition_coeffs(1.0, false);
    assert_eq!((c.c_skip, c.c_in), (0.5, 0.5));
    assert!((c.c_out - 0.75f64.sqrt()).abs() < 1e-15);
    let c = precondition_coeffs(0.002, false);
    let expect = (1.0 - (1.0 / (1.0 + 4e-6f64)).powi(2)).sqrt();
    assert!((c.c_out - expect).abs() < 1e-12 && (c.c_out - 0.002828).abs() < 1e-6);
    let c = precondition_coeffs(2.0, true);
    assert!((c.c_in - 1.0 / 5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn denoise_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = hmpdm_tensor::init::normal(&mut rng, 2 * 3 * 2 * 2 * 2, 1.0);
    let x = Tensor::<f64>::new(&[2, 3, 2, 2, 2], data).unwrap();
    let zero = NoiseLevel::clean(SIGMA_MIN, SIGMA_MAX).unwrap();
    let joint = JointLatent {
        data: x.clone(),
        mask: FrameMask::new(1, 2).unwrap(),
        sigmas: vec![zero, zero],
    };
    let out = denoise(&joint, false, |t| t.scale(5.0).map_err(Into::into)).unwrap();
    assert_eq!(out.data(), x.data());

    let joint = JointLatent {
        sigmas: vec![level(SIGMA_MAX), level(1.0)],
        ..joint
    };
    let out = denoise(&joint, false, |t| Ok(Tensor::zeros(t.shape()))).unwrap();
    let c = precondition_coeffs(SIGMA_MAX, false).c_skip;
    let half = x.numel() / 2;
    for (o, v) in out.data()[..half].iter().zip(&x.data()[..half]) {
        assert!((o - c * v).abs() < 1e-15);
    }
    for (o, v) in out.data()[half..].iter().zip(&x.data()[half..]) {
        assert!((o - 0.5 * v).abs() < 1e-15);
    }
}
