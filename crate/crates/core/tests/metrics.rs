use hmpdm::codec::VideoClip;
use nalgebra::{DMatrix, DVector};

const C1: f64 = 0.01 * 0.01;
use hmpdm::metrics::*;
use hmpdm_tensor::Tensor;

fn clip(values: Vec<f32>, t: usize, h: usize, w: usize) -> VideoClip {
    VideoClip::new(Tensor::new(&[1, t, 3, h, w], values).unwrap()).unwrap()
}

#[test]
fn psnr_closed_forms() {
    let gt = clip(vec![0.0; 3 * 16 * 16], 1, 16, 16);
    let pred = clip(vec![0.1; 3 * 16 * 16], 1, 16, 16);
    assert!((psnr(&pred, &gt).unwrap() - 20.0).abs() < 1e-5);
    assert_eq!(psnr(&gt, &gt).unwrap(), PSNR_CAP_DB);
}

#[test]
fn ssim_constant_frames() {
    let a = clip(vec![0.5; 3 * 16 * 16], 1, 16, 16);
    let b = clip(vec![0.6; 3 * 16 * 16], 1, 16, 16);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let (ma, mb) = (0.5f32 as f64, 0.6f32 as f64);
    let (la, lb): (f64, f64) = (LUMA.iter().map(|w| w * ma).sum(), LUMA.iter().map(|w| w * mb).sum());
    let expect = (2.0 * la * lb + C1) / (la * la + lb * lb + C1);
    assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
    assert!((expect - (2.0 * 0.5 * 0.6 + C1) / (0.25 + 0.36 + C1)).abs() < 1e-6);
    let small = clip(vec![0.5; 3 * 8 * 8], 1, 8, 8);
    assert!(ssim(&small, &small).is_err());
}

#[test]
fn frechet_closed_forms() {
    let mu0 = DVector::from_vec(vec![0.0]);
    let mu1 = DVector::from_vec(vec![1.0]);
    let one = DMatrix::from_element(1, 1, 1.0);
    let four = DMatrix::from_element(1, 1, 4.0);
    assert!((frechet_from_moments(&mu0, &one, &mu1, &one).unwrap() - 1.0).abs() < 1e-12);
    assert!((frechet_from_moments(&mu0, &one, &mu0, &four).unwrap() - 1.0).abs() < 1e-12);
    let feats: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
    assert!(frechet_distance(&feats, &feats).unwrap().abs() < 1e-8);
    assert!(frechet_distance(&feats[..1], &feats).is_err());
}

#[test]
fn best_of_rules() {
    assert_eq!(best_of_trajectories(&[10.0, 20.0, 15.0], Better::Higher).unwrap(), (1, 20.0));
    assert_eq!(best_of_trajectories(&[3.0, 1.0, 2.0], Better::Lower).unwrap(), (1, 1.0));
    assert_eq!(best_of_trajectories(&[7.0], Better::Higher).unwrap(), (0, 7.0));
    assert!(best_of_trajectories(&[], Better::Higher).is_err());
    let c = ClipEval::select("c", vec![0.2, 0.1, 0.9], vec![30.0, 10.0, 12.0]).unwrap();
    assert_eq!((c.ssim_trajectory, c.psnr_trajectory), (2, 0));
}

#[test]
fn report_aggregates_are_means() {
    let a = ClipEval::select("a", vec![0.5, 0.7], vec![20.0, 18.0]).unwrap();
    let b = ClipEval::select("b", vec![0.9, 0.3], vec![10.0, 30.0]).unwrap();
    let r = EvalReport::new(2, vec![a, b], None).unwrap();
    assert!((r.ssim - 0.8).abs() < 1e-12 && (r.psnr - 25.0).abs() < 1e-12);
    assert_eq!(r.jsonl().unwrap().lines().count(), 3);
    assert!(r.table().contains("mean"));
}
