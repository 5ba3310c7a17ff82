use dsrgan::autodiff::{
    op_cases, Activation, BnMode, GradCheckOptions, Graph, RunningStats, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct six-loop convolution (plus batch) used as the reference.
fn conv_loops(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let [f, _, kk, _] = k.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for fo in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for a in 0..kk {
                            for bb in 0..kk {
                                let y = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + bb) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    s += x.data()[((b * c + ci) * h + y as usize) * w + xx as usize]
                                        * k.data()[((fo * c + ci) * kk + a) * kk + bb];
                                }
                            }
                        }
                    }
                    out[((b * f + fo) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

/// Transposed convolution via zero-stuffing, padding by `k-1-pad`, and a
/// stride-1 convolution with the flipped, channel-swapped kernel.
fn conv_transposed_stuffed(y: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, f, h, w] = y.shape().try_into().unwrap();
    let [_, c, kk, _] = k.shape().try_into().unwrap();
    let border = kk - 1 - pad;
    let sh = (h - 1) * stride + 1 + 2 * border;
    let sw = (w - 1) * stride + 1 + 2 * border;
    let mut stuffed = vec![0.0; n * f * sh * sw];
    for b in 0..n {
        for fi in 0..f {
            for i in 0..h {
                for j in 0..w {
                    stuffed[((b * f + fi) * sh + border + i * stride) * sw + border + j * stride] =
                        y.data()[((b * f + fi) * h + i) * w + j];
                }
            }
        }
    }
    let mut flipped = vec![0.0; c * f * kk * kk];
    for fi in 0..f {
        for ci in 0..c {
            for a in 0..kk {
                for bb in 0..kk {
                    flipped[((ci * f + fi) * kk + (kk - 1 - a)) * kk + (kk - 1 - bb)] =
                        k.data()[((fi * c + ci) * kk + a) * kk + bb];
                }
            }
        }
    }
    conv_loops(
        &Tensor::new(vec![n, f, sh, sw], stuffed).unwrap(),
        &Tensor::new(vec![c, f, kk, kk], flipped).unwrap(),
        1,
        0,
    )
}

#[test]
fn conv2d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random(&[2, 1, 5, 6], &mut rng);
    let mut kd = vec![0.0; 9];
    kd[4] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let k = g.constant(Tensor::new(vec![1, 1, 3, 3], kd).unwrap());
    let y = g.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn conv2d_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stride, pad, hw) in [(1, 0, 8), (1, 1, 8), (2, 1, 8), (2, 0, 9)] {
        let kk = if stride == 2 && pad == 1 { 4 } else { 3 };
        let x = random(&[2, 3, hw, hw], &mut rng);
        let k = random(&[4, 3, kk, kk], &mut rng);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        let reference = conv_loops(&x, &k, stride, pad);
        assert_eq!(g.shape(y), reference.shape());
        assert!(max_abs_diff(g.value(y).data(), reference.data()) < 1e-12);
    }
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
    let wrong_c = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
    let err = g.conv2d(x, wrong_c, 1, 0).unwrap_err().to_string();
    assert!(err.contains("input channels"), "{err}");
    let k = g.constant(Tensor::zeros(&[2, 3, 3, 3]));
    // (8 - 3) / 2 is not exact
    assert!(g.conv2d(x, k, 2, 0).is_err());
    let big = g.constant(Tensor::zeros(&[2, 3, 11, 11]));
    assert!(g.conv2d(x, big, 1, 1).is_err());
    let flat = g.constant(Tensor::zeros(&[3, 8]));
    assert!(g.conv2d(flat, k, 1, 0).is_err());
}

#[test]
fn conv_transposed_single_tap_broadcast() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 1, 1], 2.5));
    let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv2d_transposed(x, k, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[2.5; 4]);
}

#[test]
fn conv_transposed_matches_zero_stuffed_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (stride, pad, kk) in [(1, 0, 3), (2, 1, 4), (2, 0, 2), (1, 1, 3)] {
        let y = random(&[2, 4, 5, 5], &mut rng);
        let k = random(&[4, 3, kk, kk], &mut rng);
        let mut g = Graph::new();
        let (yv, kv) = (g.constant(y.clone()), g.constant(k.clone()));
        let out = g.conv2d_transposed(yv, kv, stride, pad).unwrap();
        let reference = conv_transposed_stuffed(&y, &k, stride, pad);
        let expect_h = 4 * stride + kk - 2 * pad;
        assert_eq!(g.shape(out), &[2, 3, expect_h, expect_h]);
        assert_eq!(g.shape(out), reference.shape());
        assert!(max_abs_diff(g.value(out).data(), reference.data()) < 1e-12);
    }
}

#[test]
fn conv_adjoint_identity() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (stride, pad, kk) = [(1, 0, 3), (2, 1, 4), (1, 1, 3)][seed as usize % 3];
        let x = random(&[2, 3, 8, 8], &mut rng);
        let k = random(&[5, 3, kk, kk], &mut rng);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let cx = g.conv2d(xv, kv, stride, pad).unwrap();
        let y = random(g.shape(cx), &mut rng);
        let yv = g.constant(y.clone());
        let ty = g.conv2d_transposed(yv, kv, stride, pad).unwrap();
        assert_eq!(g.shape(ty), x.shape());
        let lhs = g.value(cx).dot(&y);
        let rhs = x.dot(g.value(ty));
        assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn dense_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 4], &mut rng);
    let mut eye = vec![0.0; 16];
    (0..4).for_each(|i| eye[i * 5] = 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::new(vec![4, 4], eye).unwrap());
    let b = g.constant(Tensor::zeros(&[4]));
    let y = g.dense(xv, w, b).unwrap();
    assert_eq!(g.value(y), &x);

    let w0 = g.constant(Tensor::zeros(&[4, 2]));
    let b2 = g.constant(Tensor::from_vec(vec![0.5, -2.0]));
    let y = g.dense(xv, w0, b2).unwrap();
    for row in g.value(y).data().chunks(2) {
        assert_eq!(row, &[0.5, -2.0]);
    }

    let w = random(&[4, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
    let y = g.dense(xv, wv, bv).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut s = b.data()[j];
            for k in 0..4 {
                s += x.data()[i * 4 + k] * w.data()[k * 2 + j];
            }
            assert!((g.value(y).data()[i * 2 + j] - s).abs() < 1e-12);
        }
    }
    let bad = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.dense(xv, bad, bv).is_err());
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.item(s), 0.5);
    let m5 = g.constant(Tensor::scalar(-5.0));
    let l = g.activation(m5, Activation::LeakyRelu(0.2)).unwrap();
    assert!((g.item(l) + 1.0).abs() < 1e-15);
    assert!(g.activation(m5, Activation::LeakyRelu(1.5)).is_err());

    let big = g.constant(Tensor::from_vec(vec![-30.0, -3.0, 0.1, 3.0, 30.0]));
    let t = g.tanh(big).unwrap();
    assert!(g.value(t).data().iter().all(|v| v.abs() <= 1.0));
    let s = g.sigmoid(big).unwrap();
    assert!(g.value(s).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn batch_norm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[4, 3, 5, 5], &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gamma = g.constant(Tensor::from_vec(vec![1.0, 2.0, -0.5]));
    let beta = g.constant(Tensor::from_vec(vec![0.0, 1.0, 3.0]));
    let mut rs = RunningStats::new(3);
    let y = g.batch_norm(xv, gamma, beta, BnMode::Train, &mut rs).unwrap();

    // Direct statistics oracle.
    let inner = 25;
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|b| x.data()[(b * 3 + c) * inner..][..inner].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let (gm, bt) = ([1.0, 2.0, -0.5][c], [0.0, 1.0, 3.0][c]);
        let mut out = Vec::new();
        for b in 0..4 {
            for i in 0..inner {
                let idx = (b * 3 + c) * inner + i;
                let expect = gm * (x.data()[idx] - mean) / (var + 1e-5).sqrt() + bt;
                assert!((g.value(y).data()[idx] - expect).abs() < 1e-10);
                out.push(g.value(y).data()[idx]);
            }
        }
        let om = out.iter().sum::<f64>() / out.len() as f64;
        let osd = (out.iter().map(|v| (v - om).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        assert!((om - bt).abs() < 1e-6);
        assert!((osd - f64::abs(gm)).abs() < 1e-3);
        let unbiased = var * 100.0 / 99.0;
        assert!((rs.mean[c] - 0.1 * mean).abs() < 1e-12);
        assert!((rs.var[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_constant_channel_is_beta() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 2, 3, 3], 7.0));
    let gamma = g.constant(Tensor::from_vec(vec![1.0, 4.0]));
    let beta = g.constant(Tensor::from_vec(vec![0.25, -1.0]));
    let mut rs = RunningStats::new(2);
    let y = g.batch_norm(x, gamma, beta, BnMode::Train, &mut rs).unwrap();
    let d = g.value(y).data();
    assert!(d[..9].iter().all(|&v| v == 0.25));
    assert!(d[9..].iter().all(|&v| v == -1.0));

    let bad = g.constant(Tensor::from_vec(vec![1.0]));
    assert!(g.batch_norm(x, bad, beta, BnMode::Train, &mut rs).is_err());
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
    let gamma = g.constant(Tensor::from_vec(vec![2.0]));
    let beta = g.constant(Tensor::from_vec(vec![1.0]));
    let mut rs = RunningStats {
        mean: vec![1.0],
        var: vec![4.0 - 1e-5],
    };
    let before = rs.clone();
    let y = g.batch_norm(x, gamma, beta, BnMode::Eval, &mut rs).unwrap();
    assert_eq!(rs, before);
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-12);
    assert!((d[1] - 3.0).abs() < 1e-12);
}

#[test]
fn concat_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 3, 4, 4], &mut rng);
    let mut g = Graph::new();
    let av = g.leaf(a.clone(), true);
    let empty = g.constant(Tensor::zeros(&[2, 0, 4, 4]));
    let c = g.channel_concat(av, empty).unwrap();
    assert_eq!(g.value(c), &a);

    let mut g = Graph::new();
    let av = g.leaf(a.clone(), true);
    let bv = g.leaf(random(&[2, 5, 4, 4], &mut rng), true);
    let c = g.channel_concat(av, bv).unwrap();
    let s = g.sum(c).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(av).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(g.grad(bv).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 4, 4]));
    let y = g.constant(Tensor::zeros(&[2, 3, 5, 4]));
    assert!(g.channel_concat(x, y).is_err());
    let y = g.constant(Tensor::zeros(&[3, 3, 4, 4]));
    assert!(g.channel_concat(x, y).is_err());
}

#[test]
fn split_after_concat_round_trips() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..4);
        let (c1, c2) = (rng.random_range(1..5), rng.random_range(1..5));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let a = random(&[n, c1, h, w], &mut rng);
        let b = random(&[n, c2, h, w], &mut rng);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.channel_concat(av, bv).unwrap();
        let ra = g.slice_axis1(c, 0, c1).unwrap();
        let rb = g.slice_axis1(c, c1, c2).unwrap();
        assert_eq!(g.value(ra), &a);
        assert_eq!(g.value(rb), &b);
        // a occupies the leading channels of each sample
        let inner = h * w;
        for i in 0..n {
            assert_eq!(
                &g.value(c).data()[i * (c1 + c2) * inner..][..c1 * inner],
                &a.data()[i * c1 * inner..][..c1 * inner]
            );
        }
    }
}

#[test]
fn backward_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 4], &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let s = g.sum(xv).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(xv).unwrap().data().iter().all(|&v| v == 1.0));
    assert_eq!(g.grad(s).unwrap().data(), &[1.0]);

    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let sq = g.mul(xv, xv).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    g.backward(half).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &x);

    let mut g = Graph::new();
    let xv = g.leaf(x, true);
    assert!(g.backward(xv).is_err());
    let s = g.sum(xv).unwrap();
    g.backward(s).unwrap();
    assert!(g.backward(s).is_err(), "graph is single-use");
}

/// Finite-difference checks of each operator on small random shapes.
#[test]
fn every_operator_passes_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..10u64 {
        for mut case in op_cases(1000 + seed) {
            let report = case.check(opts).unwrap();
            assert!(report.passes(1e-4), "{} seed {seed}: {report:?}", case.name);
        }
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut g = Graph::new();
        let x = g.leaf(random(&[2, 3, 8, 8], &mut rng), true);
        let k = g.leaf(random(&[4, 3, 4, 4], &mut rng), true);
        let y = g.conv2d(x, k, 2, 1).unwrap();
        let t = g.tanh(y).unwrap();
        let s = g.sum(t).unwrap();
        g.backward(s).unwrap();
        (
            g.value(t).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g.grad(k).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
