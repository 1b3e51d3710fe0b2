mod common;

use common::{check_layer, check_network, random_tensor, GRAD_TOL};
use eegbench::tensornn::loss::softmax_rows;
use eegbench::tensornn::{cross_entropy, Activation, Adam, AdamConfig, Layer, LayerSpec, NetworkGraph, Padding, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_grads(what: &str, errs: &[(String, f64)]) {
    for (name, e) in errs {
        assert!(*e < GRAD_TOL, "{what} {name}: relative error {e:e}");
    }
}

#[test]
fn conv_gradients_valid_same_and_strided() {
    let cases = [
        (LayerSpec::conv(2, 3, [2, 3], Padding::Valid), [2, 2, 4, 7]),
        (LayerSpec::conv(2, 3, [3, 4], Padding::Same), [2, 2, 5, 6]),
        (
            LayerSpec::Conv2d {
                in_maps: 1,
                filters: 2,
                kernel: [1, 3],
                stride: [1, 2],
                padding: Padding::Valid,
                bias: false,
            },
            [3, 1, 2, 9],
        ),
    ];
    for (i, (spec, shape)) in cases.iter().enumerate() {
        assert_grads(&format!("conv case {i}"), &check_layer(spec, *shape, 10 + i as u64, 64));
    }
}

#[test]
fn depthwise_and_separable_gradients() {
    let dw = LayerSpec::DepthwiseConv2d {
        in_maps: 3,
        depth_multiplier: 2,
        kernel: [4, 1],
        stride: [1, 1],
        padding: Padding::Valid,
    };
    assert_grads("depthwise", &check_layer(&dw, [2, 3, 4, 5], 1, 64));
    let sep = LayerSpec::SeparableConv2d {
        in_maps: 4,
        filters: 3,
        kernel: [1, 5],
        padding: Padding::Same,
    };
    assert_grads("separable", &check_layer(&sep, [2, 4, 1, 9], 2, 64));
}

#[test]
fn batchnorm_gradients_through_batch_statistics() {
    assert_grads("batchnorm", &check_layer(&LayerSpec::BatchNorm { maps: 3 }, [4, 3, 2, 5], 3, 120));
}

#[test]
fn dense_gradients() {
    let spec = LayerSpec::Dense { inputs: 12, outputs: 3 };
    assert_grads("dense", &check_layer(&spec, [3, 2, 2, 3], 4, 64));
}

#[test]
fn parameter_free_layer_gradients() {
    let specs = [
        LayerSpec::Activation { function: Activation::Elu },
        LayerSpec::Activation { function: Activation::Square },
        LayerSpec::Activation { function: Activation::Softmax },
        LayerSpec::MaxPool { pool: [1, 3], stride: [1, 2] },
        LayerSpec::AvgPool { pool: [2, 3], stride: [1, 2] },
        LayerSpec::Dropout { rate: 0.4 },
        LayerSpec::SwapMapsHeight,
    ];
    for (i, s) in specs.iter().enumerate() {
        assert_grads(s.kind_name(), &check_layer(s, [2, 3, 2, 9], 20 + i as u64, 200));
    }
    // log is checked on strictly positive inputs, as it is used after squaring
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = Layer::from_spec(&LayerSpec::Activation { function: Activation::Log }).unwrap();
    let x = Tensor::from_fn([1, 1, 1, 6], |i| 0.5 + i[3] as f64);
    let g = random_tensor([1, 1, 1, 6], &mut rng);
    let gx = layer.backward(&x, &g, &[]).unwrap();
    for i in 0..6 {
        assert!((gx.data()[i] - g.data()[i] / x.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn two_layer_network_gradients() {
    let specs = [
        LayerSpec::conv(1, 3, [2, 3], Padding::Valid),
        LayerSpec::Activation { function: Activation::Elu },
        LayerSpec::Dense { inputs: 18, outputs: 3 },
    ];
    let mut net = NetworkGraph::new([1, 2, 8], 3, &specs).unwrap();
    net.init(7);
    assert_grads("toy net", &check_network(&mut net, 4, 7, 64));
}

fn dense_net(weights: &[f64], bias: &[f64]) -> NetworkGraph {
    let mut net = NetworkGraph::new([1, 1, 2], 2, &[LayerSpec::Dense { inputs: 2, outputs: 2 }]).unwrap();
    let state: Vec<f64> = weights.iter().chain(bias).copied().collect();
    net.load_state(&state).unwrap();
    net
}

#[test]
fn dense_softmax_is_multinomial_logistic_regression() {
    // weights laid out (inputs, outputs)
    let w = [0.3, -0.2, 0.5, 0.1];
    let b = [0.05, -0.1];
    let net = dense_net(&w, &b);
    let xs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 2.0], [0.5, -0.5]];
    let ys = [0usize, 1, 1, 0];
    let x = Tensor::from_fn([4, 1, 1, 2], |i| xs[i[0]][i[3]]);
    let (loss, _) = cross_entropy(&net.infer(&x).unwrap(), &ys).unwrap();

    let mut expected = 0.0;
    for (xi, &yi) in xs.iter().zip(&ys) {
        let z: Vec<f64> = (0..2).map(|k| b[k] + xi[0] * w[k] + xi[1] * w[2 + k]).collect();
        let lse = (z[0].exp() + z[1].exp()).ln();
        expected += lse - z[yi];
    }
    expected /= 4.0;
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
}

#[test]
fn adam_reduces_loss_on_separable_points() {
    let mut net = NetworkGraph::new([1, 1, 2], 2, &[LayerSpec::Dense { inputs: 2, outputs: 2 }]).unwrap();
    net.init(3);
    let xs = [[2.0, 1.0], [1.5, 2.0], [-2.0, -1.0], [-1.0, -2.5]];
    let ys = [0usize, 0, 1, 1];
    let x = Tensor::from_fn([4, 1, 1, 2], |i| xs[i[0]][i[3]]);
    let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kinds = net.layer_kinds();
    let mut losses = Vec::new();
    for _ in 0..=10 {
        let logits = net.forward_train(&x, &mut rng).unwrap();
        let (loss, g) = cross_entropy(&logits, &ys).unwrap();
        losses.push(loss);
        net.backward(&g).unwrap();
        adam.step(net.param_slots(), &kinds).unwrap();
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn eval_forward_is_pure_and_train_forward_follows_the_seed() {
    let specs = [
        LayerSpec::conv(1, 4, [2, 3], Padding::Valid),
        LayerSpec::BatchNorm { maps: 4 },
        LayerSpec::Activation { function: Activation::Elu },
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { inputs: 4 * 6, outputs: 2 },
    ];
    let mut net = NetworkGraph::new([1, 2, 8], 2, &specs).unwrap();
    net.init(11);
    let x = random_tensor([3, 1, 2, 8], &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());

    let a = net.clone().forward_train(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = net.clone().forward_train(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let c = net.clone().forward_train(&x, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

// beyond a logit gap of about 36 the larger probability rounds to exactly 1.0
proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-15.0f64..15.0, 2..40), k in 2usize..5) {
        let n = values.len() / k;
        prop_assume!(n > 0);
        let logits = Tensor::from_vec([n, k, 1, 1], values[..n * k].to_vec()).unwrap();
        for row in softmax_rows(&logits) {
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn valid_conv_and_pool_shapes_follow_the_floor_formula(
        h in 1usize..12, w in 1usize..40, kh in 1usize..4, kw in 1usize..8, sw in 1usize..4,
    ) {
        prop_assume!(kh <= h && kw <= w);
        let conv = Layer::from_spec(&LayerSpec::Conv2d {
            in_maps: 1, filters: 2, kernel: [kh, kw], stride: [1, sw], padding: Padding::Valid, bias: true,
        }).unwrap();
        prop_assert_eq!(conv.output_shape([1, 1, h, w]).unwrap(), [1, 2, h - kh + 1, (w - kw) / sw + 1]);
        let same = Layer::from_spec(&LayerSpec::conv(1, 2, [kh, kw], Padding::Same)).unwrap();
        prop_assert_eq!(same.output_shape([1, 1, h, w]).unwrap(), [1, 2, h, w]);
        let pool = Layer::from_spec(&LayerSpec::AvgPool { pool: [kh, kw], stride: [1, sw] }).unwrap();
        prop_assert_eq!(pool.output_shape([1, 1, h, w]).unwrap(), [1, 1, h - kh + 1, (w - kw) / sw + 1]);
    }
}
