mod common;

#[test]
fn every_loss_matches_central_differences() {
    for seed in [3, 17, 29] {
        for (name, err) in common::gradient_errors(seed).unwrap() {
            assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:.3e}");
        }
    }
}

#[test]
fn checker_flags_a_wrong_gradient() {
    use candle_core::{Device, Tensor};
    // a detached factor halves the gradient of x^2
    let x = Tensor::new(&[0.3f64, -0.7, 1.1], &Device::Cpu).unwrap();
    let wrong = |v: &[Tensor]| -> xmodseg::Result<Tensor> { Ok((&v[0] * &v[0].detach())?.sum_all()?) };
    let err = common::finite_difference_error(&wrong, &[x]).unwrap();
    assert!(err > 0.1, "{err}");
}
