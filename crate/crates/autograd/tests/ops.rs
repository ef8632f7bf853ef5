mod common;

use common::*;
use mabn_autograd::{lstm_cell, stable_sigmoid, AutogradError, Tape, Tensor, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Weighted sum so the upstream gradient is not uniform.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = random(tape.shape(x), &mut r);
    let w = tape.constant(w);
    let p = tape.hadamard(x, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn hadamard_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let m = tape.constant(t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]));
    let out = tape.hadamard(a, m).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 2.0, 3.0, 0.0]);

    let ones = tape.constant(Tensor::ones(vec![2, 2]));
    let same = tape.hadamard(a, ones).unwrap();
    assert_eq!(tape.value(same), tape.value(a));
}

#[test]
fn hadamard_broadcasts_mask_over_channels() {
    let mut tape = Tape::new();
    let f = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
    let mask = tape.constant(t(&[1, 2], &[0.5, 2.0]));
    let out = tape.hadamard(f, mask).unwrap();
    assert_eq!(tape.value(out).data(), &[0.5, 4.0, 1.5, 8.0]);
    assert_eq!(tape.shape(out), &[2, 1, 2]);

    let bad = tape.constant(Tensor::ones(vec![3]));
    let err = tape.hadamard(f, bad).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[3]") && msg.contains("[2, 1, 2]"), "{msg}");
}

#[test]
fn hadamard_gradient_is_the_other_factor() {
    let mut r = rng(1);
    let a = random(&[3, 4], &mut r);
    let b = random(&[3, 4], &mut r);
    let mut tape = Tape::new();
    let (va, vb) = (tape.variable(a), tape.variable(b.clone()));
    let p = tape.hadamard(va, vb).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(va).unwrap(), b);

    let err = gradient_error(
        &|tp, v| {
            let p = tp.hadamard(v[0], v[1]).unwrap();
            tp.sum(p).unwrap()
        },
        &[random(&[3, 4], &mut r), random(&[3, 4], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
    let err = gradient_error(
        &|tp, v| {
            let p = tp.hadamard(v[0], v[1]).unwrap();
            weighted_sum(tp, p, 9)
        },
        &[random(&[2, 3, 3], &mut r), random(&[3, 3], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 3, 3]));
    let k = tape.constant(Tensor::ones(vec![1, 1, 2, 2]));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let y = tape.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[4.0; 4]);

    let mut r = rng(2);
    let input = random(&[1, 4, 5], &mut r);
    let x = tape.constant(input.clone());
    let mut ident = Tensor::zeros(vec![1, 1, 3, 3]);
    ident.data_mut()[4] = 1.0;
    let k = tape.constant(ident);
    let y = tape.conv2d(x, k, b, 1, 1).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv2d_output_size_and_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![2, 7, 6]));
    let k = tape.constant(Tensor::ones(vec![4, 2, 3, 3]));
    let b = tape.constant(Tensor::zeros(vec![4]));
    let y = tape.conv2d(x, k, b, 2, 1).unwrap();
    // floor((7 + 2 - 3) / 2) + 1 = 4, floor((6 + 2 - 3) / 2) + 1 = 3
    assert_eq!(tape.shape(y), &[4, 4, 3]);

    let big = tape.constant(Tensor::ones(vec![1, 2, 8, 8]));
    let b1 = tape.constant(Tensor::zeros(vec![1]));
    assert!(matches!(
        tape.conv2d(x, big, b1, 1, 0),
        Err(AutogradError::Shape { .. })
    ));
    assert!(tape.conv2d(x, k, b, 0, 0).is_err());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng(3);
    let inputs = [
        random(&[2, 5, 5], &mut r),
        random(&[3, 2, 3, 3], &mut r),
        random(&[3], &mut r),
    ];
    let err = gradient_error(
        &|tp, v| {
            let y = tp.conv2d(v[0], v[1], v[2], 1, 0).unwrap();
            tp.sum(y).unwrap()
        },
        &inputs,
    );
    assert!(err < 1e-4, "{err}");
    let err = gradient_error(
        &|tp, v| {
            let y = tp.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
            weighted_sum(tp, y, 4)
        },
        &inputs,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn conv1d_examples_and_gradients() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 4]));
    let k = tape.constant(Tensor::ones(vec![1, 1, 2]));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let y = tape.conv1d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0]);

    let seq = t(&[1, 4], &[0.3, -1.0, 2.0, 5.0]);
    let x = tape.constant(seq.clone());
    let k = tape.constant(Tensor::ones(vec![1, 1, 1]));
    let y = tape.conv1d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.value(y), &seq);

    let too_wide = tape.constant(Tensor::ones(vec![1, 1, 7]));
    assert!(tape.conv1d(x, too_wide, b, 1, 1).is_err());

    let mut r = rng(5);
    let err = gradient_error(
        &|tp, v| {
            let y = tp.conv1d(v[0], v[1], v[2], 1, 1).unwrap();
            weighted_sum(tp, y, 6)
        },
        &[
            random(&[2, 9], &mut r),
            random(&[3, 2, 3], &mut r),
            random(&[3], &mut r),
        ],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn linear_examples_and_gradients() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[1.0, 2.0]));
    let w = tape.constant(t(&[2, 2], &[1.0, 1.0, 0.0, 1.0]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 2.0]);

    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = tape.linear(x, eye, Some(b)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let bad = tape.constant(Tensor::ones(vec![3, 3]));
    assert!(tape.linear(x, bad, None).is_err());

    let batch = tape.constant(t(&[2, 2], &[1.0, 2.0, -1.0, 0.5]));
    let y = tape.linear(batch, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 2.0, -0.5, 0.5]);

    let mut r = rng(7);
    let err = gradient_error(
        &|tp, v| {
            let y = tp.linear(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(tp, y, 8)
        },
        &[random(&[4], &mut r), random(&[3, 4], &mut r), random(&[3], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
    let err = gradient_error(
        &|tp, v| {
            let y = tp.linear(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(tp, y, 8)
        },
        &[random(&[5, 4], &mut r), random(&[3, 4], &mut r), random(&[3], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sigmoid_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, 50.0, -50.0]));
    let y = tape.sigmoid(x).unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.5);
    assert!((v[1] - 1.0).abs() < 1e-15 && v[1] < 1.0);
    assert!(v[2].abs() < 1e-15 && v[2] > 0.0);
    assert!(stable_sigmoid(-1e4) > 0.0 && stable_sigmoid(1e4) < 1.0);
}

#[test]
fn sigmoid_derivative() {
    let mut r = rng(9);
    let x = random(&[6], &mut r);
    let mut tape = Tape::new();
    let v = tape.variable(x.clone());
    let y = tape.sigmoid(v).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(v).unwrap();
    for (gi, xi) in g.data().iter().zip(x.data()) {
        let s = 1.0 / (1.0 + (-xi).exp());
        assert!((gi - s * (1.0 - s)).abs() < 1e-15);
    }
    let err = gradient_error(
        &|tp, v| {
            let y = tp.sigmoid(v[0]).unwrap();
            weighted_sum(tp, y, 10)
        },
        &[random(&[7], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn tanh_examples_and_gradient() {
    let mut r = rng(11);
    let x = random(&[8], &mut r);
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::zeros(vec![1]));
    let tz = tape.tanh(zero).unwrap();
    assert_eq!(tape.value(tz).data(), &[0.0]);
    let pos = tape.constant(x.clone());
    let neg = tape.constant(x.map(|v| -v));
    let tp = tape.tanh(pos).unwrap();
    let tn = tape.tanh(neg).unwrap();
    for (a, b) in tape.value(tp).data().iter().zip(tape.value(tn).data()) {
        assert_eq!(*a, -*b);
    }
    let err = gradient_error(
        &|tp, v| {
            let y = tp.tanh(v[0]).unwrap();
            weighted_sum(tp, y, 12)
        },
        &[x],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn global_avg_pool_examples_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]));
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5, 7.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.25; 8]);

    let mut r = rng(13);
    let err = gradient_error(
        &|tp, v| {
            let y = tp.global_avg_pool(v[0]).unwrap();
            tp.sum(y).unwrap()
        },
        &[random(&[3, 4, 5], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn concat_examples_and_gradient() {
    let mut tape = Tape::new();
    let a = tape.variable(t(&[1], &[1.0]));
    let b = tape.variable(t(&[1], &[2.0]));
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
    let single = tape.concat(&[a], 0).unwrap();
    assert_eq!(tape.value(single), tape.value(a));

    let m1 = tape.variable(Tensor::ones(vec![2, 3, 2]));
    let m2 = tape.variable(Tensor::ones(vec![2, 1, 2]));
    let joined = tape.concat(&[m1, m2], 1).unwrap();
    assert_eq!(tape.shape(joined), &[2, 4, 2]);
    assert!(tape.concat(&[m1, m2], 0).is_err());

    let s = tape.sum(joined).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(m1).unwrap(), Tensor::ones(vec![2, 3, 2]));
    assert_eq!(tape.grad(m2).unwrap(), Tensor::ones(vec![2, 1, 2]));

    let mut r = rng(14);
    let err = gradient_error(
        &|tp, v| {
            let y = tp.concat(&[v[0], v[1], v[2]], 1).unwrap();
            weighted_sum(tp, y, 15)
        },
        &[
            random(&[2, 1, 3], &mut r),
            random(&[2, 2, 3], &mut r),
            random(&[2, 3, 3], &mut r),
        ],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn softmax_cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(t(&[2], &[0.0, 0.0]));
    let ce = tape.softmax_cross_entropy(l, 0).unwrap();
    assert!((tape.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let l = tape.constant(t(&[2], &[100.0, 0.0]));
    let ce = tape.softmax_cross_entropy(l, 0).unwrap();
    assert!(tape.value(ce).item().abs() < 1e-15);

    assert!(matches!(
        tape.softmax_cross_entropy(l, 2),
        Err(AutogradError::Index { .. })
    ));
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut r = rng(16);
    let logits = random(&[5], &mut r);
    let mut tape = Tape::new();
    let l = tape.variable(logits.clone());
    let ce = tape.softmax_cross_entropy(l, 3).unwrap();
    tape.backward(ce).unwrap();
    let p = mabn_autograd::softmax(logits.data());
    for (k, g) in tape.grad(l).unwrap().data().iter().enumerate() {
        let want = p[k] - if k == 3 { 1.0 } else { 0.0 };
        assert!((g - want).abs() < 1e-15);
    }
    let err = gradient_error(&|tp, v| tp.softmax_cross_entropy(v[0], 1).unwrap(), &[logits]);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn plumbing_op_gradients() {
    let mut r = rng(17);
    let err = gradient_error(
        &|tp, v| {
            let e = tp.expand(v[0], &[2, 3]).unwrap();
            let sl = tp.slice(v[1], 1, 2).unwrap();
            let row = tp.embedding(v[2], 1).unwrap();
            let j = tp.concat(&[sl, row], 0).unwrap();
            let r = tp.reshape(e, vec![4, 3]).unwrap();
            let a = weighted_sum(tp, r, 18);
            let b = weighted_sum(tp, j, 19);
            let s = tp.add(a, b).unwrap();
            tp.scale(s, 0.5).unwrap()
        },
        &[random(&[2], &mut r), random(&[4], &mut r), random(&[3, 2], &mut r)],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn lstm_zero_case() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![3]));
    let h = tape.constant(Tensor::zeros(vec![2]));
    let c = tape.constant(Tensor::zeros(vec![2]));
    let w = tape.constant(Tensor::zeros(vec![8, 5]));
    let b = tape.constant(Tensor::zeros(vec![8]));
    let (h1, c1) = lstm_cell(&mut tape, x, h, c, w, b).unwrap();
    assert_eq!(tape.value(h1).data(), &[0.0, 0.0]);
    assert_eq!(tape.value(c1).data(), &[0.0, 0.0]);

    let wrong = tape.constant(Tensor::zeros(vec![8, 4]));
    assert!(lstm_cell(&mut tape, x, h, c, wrong, b).is_err());
}

#[test]
fn lstm_saturated_forget_gate_keeps_cell() {
    let d = 3;
    let mut r = rng(20);
    let x = random(&[2], &mut r);
    let h_prev = random(&[d], &mut r);
    let c_prev = random(&[d], &mut r);
    let mut w = random(&[4 * d, 2 + d], &mut r);
    // keep pre-activations of the forget and input gates small
    for row in 0..2 * d {
        for col in 0..2 + d {
            w.data_mut()[row * (2 + d) + col] *= 0.01;
        }
    }
    let mut b = random(&[4 * d], &mut r);
    for k in 0..d {
        b.data_mut()[k] = -20.0;
        b.data_mut()[d + k] = 20.0;
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = [&x, &h_prev, &c_prev, &w, &b]
        .iter()
        .map(|t| tape.constant((*t).clone()))
        .collect();
    let (h, c) = lstm_cell(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4]).unwrap();

    // Direct evaluation of the output gate.
    let xh: Vec<f64> = x.data().iter().chain(h_prev.data()).copied().collect();
    for k in 0..d {
        let c_k = tape.value(c).data()[k];
        assert!((c_k - c_prev.data()[k]).abs() < 1e-6, "{c_k}");
        let row = 3 * d + k;
        let o_pre: f64 = b.data()[row]
            + (0..2 + d)
                .map(|j| w.data()[row * (2 + d) + j] * xh[j])
                .sum::<f64>();
        let want = stable_sigmoid(o_pre) * c_prev.data()[k].tanh();
        assert!((tape.value(h).data()[k] - want).abs() < 1e-6);
    }
}

#[test]
fn lstm_bptt_matches_finite_differences() {
    let (d_in, d) = (3, 4);
    let mut r = rng(21);
    let inputs = [
        random(&[d_in], &mut r),
        random(&[d_in], &mut r),
        random(&[d_in], &mut r),
        random(&[4 * d, d_in + d], &mut r),
        random(&[4 * d], &mut r),
        random(&[d], &mut r),
    ];
    let err = gradient_error(
        &|tp, v| {
            let mut h = tp.constant(Tensor::zeros(vec![d]));
            let mut c = tp.constant(Tensor::zeros(vec![d]));
            for &x in &v[..3] {
                (h, c) = lstm_cell(tp, x, h, c, v[3], v[4]).unwrap();
            }
            let hc = tp.add(h, c).unwrap();
            let p = tp.hadamard(hc, v[5]).unwrap();
            tp.sum(p).unwrap()
        },
        &inputs,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[1], &[3.0]));
    let unused = tape.variable(t(&[2], &[1.0, 1.0]));
    let sq = tape.hadamard(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);
    assert_eq!(tape.backward(loss), Err(AutogradError::AlreadyBackpropagated));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::ones(vec![2]));
    assert!(matches!(tape.backward(x), Err(AutogradError::NonScalarLoss(_))));
}

#[test]
fn constants_have_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::ones(vec![2]));
    let v = tape.variable(Tensor::ones(vec![2]));
    let p = tape.hadamard(c, v).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(v).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn identical_inputs_give_identical_gradients() {
    let run = || {
        let mut r = rng(30);
        let mut tape = Tape::new();
        let x = tape.variable(random(&[2, 6, 6], &mut r));
        let k = tape.variable(random(&[3, 2, 3, 3], &mut r));
        let b = tape.variable(random(&[3], &mut r));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        let y = tape.tanh(y).unwrap();
        let p = tape.global_avg_pool(y).unwrap();
        let loss = tape.softmax_cross_entropy(p, 2).unwrap();
        tape.backward(loss).unwrap();
        (
            tape.value(loss).item().to_bits(),
            tape.grad(k).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
