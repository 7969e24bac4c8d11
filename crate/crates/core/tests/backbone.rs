use hmpdm_tensor::{init, ParamStore, Tensor};
use hmpdm::backbone::*;
use hmpdm::mape::{Mape, MapeConfig, StageConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(store: &mut ParamStore<f64>, seed: u64) -> (Mape, Backbone) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mape = Mape::new(
        store,
        MapeConfig {
            stage: StageConfig {
                blocks_per_stage: 1,
                ..StageConfig::default()
            },
            frames: 2,
            channels: 4,
            height: 8,
            width: 8,
            temporal: true,
        },
        &mut rng,
    )
    .unwrap();
    let bb = Backbone::new(
        store,
        BackboneConfig {
            widths: [32, 64, 64],
            heads: 4,
            mlp_ratio: 2,
            channels: 4,
            frames: 6,
            height: 8,
            width: 8,
            memory_dim: 64,
            time_dim: 16,
        },
        &mut rng,
    )
    .unwrap();
    (mape, bb)
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, init::normal(&mut ChaCha8Rng::seed_from_u64(seed), n, 1.0)).unwrap()
}

fn randomize_head(store: &mut ParamStore<f64>) {
    let id = store.find("backbone.head.weight").expect("head weight");
    let n = store.get(id).numel();
    store.set(id, init::normal(&mut ChaCha8Rng::seed_from_u64(99), n, 0.1)).unwrap();
}

#[test]
fn output_shape_and_pyramid_independence_at_init() {
    let mut store = ParamStore::new();
    let (mape, bb) = setup(&mut store, 1);
    randomize_head(&mut store);
    let j = rand(&[1, 6, 4, 8, 8], 2);
    let sc = rand(&[1, 6, 4, 8, 8], 3);
    let e = rand(&[1, 6, 16], 4);
    let a = bb.forward(&store, &j, &e, &mape.forward(&store, &rand(&[1, 2, 4, 8, 8], 5)).unwrap(), &sc).unwrap();
    let b = bb.forward(&store, &j, &e, &mape.forward(&store, &rand(&[1, 2, 4, 8, 8], 6)).unwrap(), &sc).unwrap();
    assert_eq!(a.shape(), &[1, 6, 4, 8, 8]);
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().any(|v| *v != 0.0));
}

#[test]
fn memory_duplication_leaves_cross_attention_unchanged() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = CrossAttentionLayer::new(&mut store, "x", 32, 64, 4, &mut rng).unwrap();
    let id = layer.attention().out_layer().weight_id();
    store.set(id, init::normal(&mut rng, 32 * 32, 0.2)).unwrap();
    let z = rand(&[2, 10, 32], 8);
    let m = rand(&[2, 3, 64], 9);
    let dup = Tensor::concat(&[m.clone(), m.clone()], 1).unwrap();
    let a = layer.forward(&store, &z, &m).unwrap();
    let b = layer.forward(&store, &z, &dup).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    let w = layer.attention().weights(&store, &z, &m).unwrap();
    for row in w.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn misaligned_pyramid_rejected() {
    let mut store = ParamStore::new();
    let (mape, bb) = setup(&mut store, 1);
    let mut pyr = mape.forward(&store, &rand(&[1, 2, 4, 8, 8], 5)).unwrap();
    assert!(bb.check_alignment(&pyr).is_ok());
    pyr.grids.swap(0, 1);
    assert!(bb.check_alignment(&pyr).is_err());
}

#[test]
fn large_inputs_stay_finite() {
    let mut store = ParamStore::new();
    let (mape, bb) = setup(&mut store, 2);
    randomize_head(&mut store);
    let j = rand(&[1, 6, 4, 8, 8], 2).scale(1e3).unwrap();
    let pyr = mape.forward(&store, &rand(&[1, 2, 4, 8, 8], 5).scale(1e3).unwrap()).unwrap();
    let out = bb.forward(&store, &j, &rand(&[1, 6, 16], 4), &pyr, &j).unwrap();
    assert!(out.data().iter().all(|v| v.is_finite()));
}
