use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, DEFAULT_STEP};
use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for ops with a kink there.
fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Weighted sum so that every output element gets a distinct cotangent.
fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).numel();
    let w = Tensor::from_fn(g.shape(y).to_vec(), |i| 0.3 + (i as f64 * 0.7).sin() / (n as f64).sqrt());
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = g.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new([2, 1], vec![3.0, 4.0]).unwrap());
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[11.0]);

    assert!(matches!(g.matmul(a, a), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
    let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
        let p = g.matmul(v[0], v[1])?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn elementwise_identities_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[2, 3]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let zero = g.constant(Tensor::zeros([2, 3]));
    let one = g.constant(Tensor::ones([1, 3]));
    let s = g.add(xv, zero).unwrap();
    assert_eq!(g.value(s), &x);
    let m = g.mul(xv, one).unwrap();
    assert_eq!(g.value(m), &x);
    let bad = g.constant(Tensor::zeros([3, 2]));
    assert!(g.add(xv, bad).is_err());

    let inputs = [random(&mut rng, &[2, 3]), random(&mut rng, &[1, 3])];
    let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
        let y = g.add(v[0], v[1])?;
        Ok(weighted_sum(g, y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn broadcast_over_trailing_unit_axis() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = g.constant(Tensor::new([2, 1], vec![10., 20.]).unwrap());
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11., 12., 13., 24., 25., 26.]);
}

#[test]
fn activation_examples() {
    assert_eq!(Activation::Relu.eval(-1.0), 0.0);
    assert_eq!(Activation::Relu.eval(2.0), 2.0);
    assert_eq!(Activation::Silu.eval(0.0), 0.0);
    let r = check_inputs(&[Tensor::scalar(1.0)], DEFAULT_STEP, |g, v| {
        let y = g.silu(v[0]);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([3], vec![0.0; 3]).unwrap());
    let y = g.softmax_last(x);
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::new([2], vec![1000.0, 0.0]).unwrap());
    let y = g.softmax_last(x);
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);

    let x = g.constant(Tensor::new([4], vec![2.0, 1.0, 0.0, -1.0]).unwrap());
    let y = g.softmax_last(x);
    let z: f64 = [2.0f64, 1.0, 0.0, -1.0].iter().map(|v| v.exp()).sum();
    let expected = [2.0f64.exp() / z, 1.0f64.exp() / z, 1.0 / z, (-1.0f64).exp() / z];
    for (a, b) in g.value(y).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    let four_sf: Vec<f64> = g.value(y).data().iter().map(|v| (v * 1e4).round() / 1e4).collect();
    assert_eq!(four_sf, vec![0.6439, 0.2369, 0.0871, 0.0321]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn([50, 7], |_| rng.random_range(-30.0..30.0)));
    let y = g.softmax_last(x);
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::ones([4]));
    let bias = g.constant(Tensor::zeros([4]));
    let x = g.constant(Tensor::full([1, 4], 3.5));
    let y = g.layer_norm(x, gain, bias).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let gain = g.constant(Tensor::ones([2]));
    let bias = g.constant(Tensor::zeros([2]));
    let x = g.constant(Tensor::new([1, 2], vec![1.0, 3.0]).unwrap());
    let y = g.layer_norm(x, gain, bias).unwrap();
    // mean 2, variance 1: (x − 2)/sqrt(1 + 1e-5)
    let d = g.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-4 && (d[1] - 1.0).abs() < 1e-4);
    assert!((d[1] - 1.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&mut rng, &[4, 8]), random(&mut rng, &[8]), random(&mut rng, &[8])];
    let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2])?;
        Ok(weighted_sum(g, y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

/// Direct nested-loop convolution, zero padding.
fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += x.data()[(ic * h + iy as usize) * wd + ix as usize]
                                * w.data()[((oc * c + ic) * k + ky) * k + kx];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

#[test]
fn conv_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[1, 5, 5]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::ones([1, 1, 1, 1]));
    let y = g.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let mut hot = Tensor::zeros([1, 5, 5]);
    hot.data_mut()[2 * 5 + 2] = 1.0;
    let hv = g.constant(hot);
    let w3 = g.constant(Tensor::ones([1, 1, 3, 3]));
    let y = g.conv2d(hv, w3, None, 1, 1).unwrap();
    for yy in 0..5 {
        for xx in 0..5 {
            let inside = (1..=3).contains(&yy) && (1..=3).contains(&xx);
            assert_eq!(g.value(y).data()[yy * 5 + xx], if inside { 1.0 } else { 0.0 });
        }
    }

    let tiny = g.constant(Tensor::zeros([1, 1, 1]));
    assert!(g.conv2d(tiny, w3, None, 1, 0).is_err());
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (3, 1, 0)] {
        let x = random(&mut rng, &[3, 9, 8]);
        let w = random(&mut rng, &[4, 3, k, k]);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, None, stride, pad).unwrap();
        let want = conv_oracle(&x, &w, stride, pad);
        assert_eq!(g.value(y).numel(), want.len());
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [random(&mut rng, &[2, 8, 8]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])];
    let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        Ok(weighted_sum(g, y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn upsample_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([1, 1, 1], vec![1.0]).unwrap());
    let y = g.upsample_nearest2x(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0; 4]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = g.leaf(random(&mut rng, &[2, 3, 3]));
    let y = g.upsample_nearest2x(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 4.0));

    let r = check_inputs(&[random(&mut rng, &[2, 3, 4])], DEFAULT_STEP, |g, v| {
        let y = g.upsample_nearest2x(v[0])?;
        Ok(weighted_sum(g, y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    // a second sweep without reset accumulates
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);

    assert!(matches!(g.backward(sq), Err(Error::Shape(_))));
}

#[test]
fn fan_out_sums_both_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [random(&mut rng, &[3, 3])];
    let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
        let a = g.silu(v[0]);
        let b = g.matmul(v[0], a)?;
        let c = g.add(b, v[0])?;
        Ok(weighted_sum(g, c))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn params_receive_accumulated_gradients() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new([2], vec![3.0, -1.0]).unwrap());
    for _ in 0..2 {
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let s = g.sum(w);
        g.backward(s).unwrap();
        g.accumulate_into(&mut store);
    }
    assert_eq!(store.grad(id), &[2.0, 2.0]);
    store.zero_grad();
    assert_eq!(store.grad(id), &[0.0, 0.0]);
}

#[test]
fn layout_ops_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, &[3, 8, 4]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = g.patchify(xv, 2).unwrap();
    assert_eq!(g.shape(p), &[8, 12]);
    let back = g.unpatchify(p, 3, 8, 4, 2).unwrap();
    assert_eq!(g.value(back), &x);

    let m = g.constant(random(&mut rng, &[3, 5]));
    let t = g.transpose2d(m).unwrap();
    let tt = g.transpose2d(t).unwrap();
    assert_eq!(g.value(tt), g.value(m));

    let parts: Vec<Var> = (0..5).map(|c| g.narrow(m, 1, c, 1).unwrap()).collect();
    let joined = g.concat(&parts, 1).unwrap();
    assert_eq!(g.value(joined), g.value(m));

    let rows = g.index_rows(m, &[2, 0]).unwrap();
    let placed = g.scatter_rows(rows, &[2, 0], 3).unwrap();
    let v = g.value(placed).data().to_vec();
    assert_eq!(&v[0..5], &g.value(m).data()[0..5]);
    assert!(v[5..10].iter().all(|&z| z == 0.0));
    assert_eq!(&v[10..15], &g.value(m).data()[10..15]);
}

/// Every primitive against central differences on 20 random instances.
#[test]
fn primitives_pass_finite_difference_property() {
    type Build = fn(&mut Graph, &[Var]) -> crate::Result<Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Build, bool)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1]), false),
        ("add", vec![vec![2, 3], vec![1, 3]], |g, v| g.add(v[0], v[1]), false),
        ("sub", vec![vec![2, 3], vec![2, 1]], |g, v| g.sub(v[0], v[1]), false),
        ("mul", vec![vec![2, 3], vec![1, 3]], |g, v| g.mul(v[0], v[1]), false),
        ("div", vec![vec![2, 3], vec![2, 3]], |g, v| g.div(v[0], v[1]), true),
        ("relu", vec![vec![2, 5]], |g, v| Ok(g.relu(v[0])), true),
        ("silu", vec![vec![2, 5]], |g, v| Ok(g.silu(v[0])), false),
        ("sigmoid", vec![vec![2, 5]], |g, v| Ok(g.sigmoid(v[0])), false),
        ("softmax", vec![vec![3, 4]], |g, v| Ok(g.softmax_last(v[0])), false),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |g, v| g.layer_norm(v[0], v[1], v[2]), false),
        ("conv3x3", vec![vec![2, 6, 6], vec![2, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], None, 1, 1), false),
        ("conv1x1s2", vec![vec![2, 6, 6], vec![3, 2, 1, 1]], |g, v| g.conv2d(v[0], v[1], None, 2, 0), false),
        ("upsample", vec![vec![2, 3, 3]], |g, v| g.upsample_nearest2x(v[0]), false),
        ("sum_last", vec![vec![3, 4]], |g, v| Ok(g.sum_last(v[0])), false),
        ("concat", vec![vec![2, 3], vec![2, 2]], |g, v| g.concat(&[v[0], v[1]], 1), false),
        ("transpose", vec![vec![3, 4]], |g, v| g.transpose2d(v[0]), false),
        ("scale", vec![vec![4]], |g, v| Ok(g.scale(v[0], -2.5)), false),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, shapes, build, avoid_zero) in cases {
        for _ in 0..20 {
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|s| if avoid_zero { random_away_from_zero(&mut rng, s) } else { random(&mut rng, s) })
                .collect();
            let r = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
                let y = build(g, v)?;
                Ok(weighted_sum(g, y))
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "{name}: {r:?}");
        }
    }
}
