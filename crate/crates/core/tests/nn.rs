use hmpdm_tensor::{init, ParamStore, Tensor};
use hmpdm::nn::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn space_to_depth_roundtrip_is_exact() {
    let data: Vec<f32> = (0..2 * 3 * 8 * 8).map(|v| v as f32 * 0.37).collect();
    let x = Tensor::new(&[2, 3, 8, 8], data).unwrap();
    let tok = space_to_depth(&x, 4).unwrap();
    assert_eq!(tok.shape(), &[2, 4, 48]);
    let back = depth_to_space(&tok, 3, 2, 2, 4).unwrap();
    assert_eq!(back.data(), x.data());
}

#[test]
fn merge_unmerge_inverse() {
    let grid = TokenGrid::new(2, 4, 4);
    let x = Tensor::<f64>::new(&[1, 32, 3], (0..96).map(|v| v as f64).collect()).unwrap();
    let m = merge_tokens(&x, grid).unwrap();
    assert_eq!(m.shape(), &[1, 8, 12]);
    // first merged token = cells (0,0),(0,1),(1,0),(1,1) of frame 0
    assert_eq!(&m.data()[..3], &x.data()[..3]);
    assert_eq!(&m.data()[3..6], &x.data()[3..6]);
    assert_eq!(&m.data()[6..9], &x.data()[12..15]);
    let back = unmerge_tokens(&m, grid.halved().unwrap()).unwrap();
    assert_eq!(back.data(), x.data());
}

#[test]
fn zero_linear_outputs_exact_zero() {
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::zeros(&mut store, "z", 3, 2).unwrap();
    let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
    assert!(lin.forward(&store, &x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_weights_are_row_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let attn = Attention::new(&mut store, "a", 8, 6, 2, 4, false, &mut rng).unwrap();
    let q = Tensor::new(&[2, 5, 8], init::normal(&mut rng, 80, 1.0)).unwrap();
    let m = Tensor::new(&[2, 3, 6], init::normal(&mut rng, 36, 1.0)).unwrap();
    let w = attn.weights(&store, &q, &m).unwrap();
    assert_eq!(w.shape(), &[4, 5, 3]);
    for row in w.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
