mod common;

use common::{check_network, gradient_suite, rng, uniform_tensor, GRAD_TOL};
use sbfnet::layers::LayerSpec;
use sbfnet::network::Sequential;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, err) in gradient_suite() {
        assert!(err < GRAD_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn single_sample_input_is_checked_like_a_batch() {
    let net = Sequential::new(
        &[4, 4, 1],
        vec![LayerSpec::conv3x3(1, 2), LayerSpec::Relu, LayerSpec::Flatten, LayerSpec::dense(32, 2)],
        9,
    )
    .unwrap();
    let x = uniform_tensor(&mut rng(9), &[4, 4, 1], -1.0, 1.0);
    assert!(check_network(&net, &x, 9) < GRAD_TOL);
}
