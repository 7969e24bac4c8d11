use hmpdm_tensor::Tensor;

#[test]
fn permute_matches_naive_transpose() {
    let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
    let t = Tensor::new(&[2, 3, 4], data.clone()).unwrap();
    let out = t.permute(&[2, 0, 1]).unwrap().to_vec();
    // out[k][i][j] = in[i][j][k]
    for k in 0..4 {
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(out[k * 6 + i * 3 + j], data[i * 12 + j * 4 + k]);
            }
        }
    }
}
