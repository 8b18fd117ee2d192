use proptest::prelude::*;
use rcunet_tensor::ops::{self, BatchNormMode};
use rcunet_tensor::{clip_gradients, Tape, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-5.0f64..5.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn map_shape() -> impl Strategy<Value = Vec<usize>> {
    (1usize..7, 1usize..7, 1usize..4).prop_map(|(h, w, c)| vec![h, w, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delta_kernel_is_identity(x in map_shape().prop_flat_map(tensor)) {
        let c = x.shape()[2];
        let mut k = Tensor::zeros([3, 3, c, c]);
        for i in 0..c {
            k.set(&[1, 1, i, i], 1.0);
        }
        let tape = Tape::new();
        let y = ops::conv2d(tape.constant(x.clone()), tape.constant(k), None).unwrap();
        prop_assert_eq!(y.value().data().to_vec(), x.data().to_vec());
    }

    #[test]
    fn transpose_doubles_extents(x in map_shape().prop_flat_map(tensor)) {
        let c = x.shape()[2];
        let tape = Tape::new();
        let y = ops::conv_transpose2d(tape.constant(x.clone()), tape.constant(Tensor::full([6, 6, c, 2], 0.1)), None, 2, 2).unwrap();
        prop_assert_eq!(y.shape(), vec![2 * x.shape()[0], 2 * x.shape()[1], 2]);
    }

    #[test]
    fn forward_ops_stay_finite(x in map_shape().prop_flat_map(tensor)) {
        let c = x.shape()[2];
        let tape = Tape::new();
        let v = tape.constant(x);
        let y = ops::elu(ops::conv2d(v, tape.constant(Tensor::full([3, 3, c, 2], 0.3)), None).unwrap());
        let y = ops::maxpool2x2(y).unwrap();
        prop_assert!(y.value().all_finite());
    }

    #[test]
    fn batchnorm_standardizes(x in (2usize..6, 2usize..6, 1usize..4).prop_map(|(a, b, c)| vec![a, b, c]).prop_flat_map(tensor)) {
        let k = x.shape()[2];
        let n = x.len() / k;
        // skip degenerate constant features
        for f in 0..k {
            let col: Vec<f64> = x.data().iter().skip(f).step_by(k).copied().collect();
            let m = col.iter().sum::<f64>() / n as f64;
            prop_assume!(col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64) > 1e-2);
        }
        let tape = Tape::new();
        let (y, _) = ops::batchnorm(tape.constant(x), tape.constant(Tensor::full([k], 1.0)), tape.constant(Tensor::zeros([k])), BatchNormMode::Train, 0.0).unwrap();
        let y = y.value();
        for f in 0..k {
            let col: Vec<f64> = y.data().iter().skip(f).step_by(k).copied().collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|o| (o - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clipping_bounds_every_element(mut g in prop::collection::vec(-1e4f64..1e4, 0..50)) {
        let orig = g.clone();
        clip_gradients(&mut g, 100.0);
        for (c, o) in g.iter().zip(&orig) {
            prop_assert!(c.abs() <= 100.0);
            if o.abs() <= 100.0 {
                prop_assert_eq!(c, o);
            }
        }
    }

    #[test]
    fn gradient_shapes_match_values(x in map_shape().prop_flat_map(tensor)) {
        let tape = Tape::new();
        let v = tape.variable(x.clone());
        let grads = tape.backward(ops::sum(ops::elu(v))).unwrap();
        prop_assert_eq!(grads.wrt(v).shape().to_vec(), x.shape().to_vec());
    }
}
