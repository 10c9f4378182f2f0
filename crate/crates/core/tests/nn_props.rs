use dspp_core::nn::{MlpModel, MlpSpec};
use proptest::prelude::*;

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parameter_gradient_matches_differences(
        layers in 1usize..5,
        width in 1usize..9,
        seed in 0u64..1000,
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
    ) {
        let net = MlpModel::<f64>::init(MlpSpec::new(2, layers, width), seed).unwrap();
        let input = [x0, x1];
        let grad = net.grad_params(&input).unwrap();
        prop_assert_eq!(grad.len(), net.params().len());
        for i in 0..grad.len() {
            let fd = central_difference(
                |v| {
                    let mut p = net.params().to_vec();
                    p[i] = v;
                    MlpModel::from_params(*net.spec(), p).unwrap().forward(&input).unwrap()
                },
                net.params()[i],
            );
            prop_assert!((grad[i] - fd).abs() <= 1e-6 + 1e-5 * fd.abs(), "param {}: {} vs {}", i, grad[i], fd);
        }
    }

    #[test]
    fn input_gradient_matches_differences(
        layers in 1usize..5,
        width in 1usize..9,
        seed in 0u64..1000,
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
    ) {
        let net = MlpModel::<f64>::init(MlpSpec::new(2, layers, width), seed).unwrap();
        let grad = net.grad_input(&[x0, x1]).unwrap();
        let d0 = central_difference(|v| net.forward(&[v, x1]).unwrap(), x0);
        let d1 = central_difference(|v| net.forward(&[x0, v]).unwrap(), x1);
        prop_assert!((grad[0] - d0).abs() <= 1e-6 + 1e-5 * d0.abs());
        prop_assert!((grad[1] - d1).abs() <= 1e-6 + 1e-5 * d1.abs());
    }

    #[test]
    fn output_stays_within_its_bound(
        layers in 1usize..5,
        width in 1usize..9,
        seed in 0u64..1000,
        x0 in -1e3f64..1e3,
        x1 in -1e3f64..1e3,
    ) {
        let net = MlpModel::<f64>::init(MlpSpec::new(2, layers, width), seed).unwrap();
        prop_assert!(net.forward(&[x0, x1]).unwrap().abs() <= net.output_bound() + 1e-12);
    }
}
