use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check_input, rel_err};

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_add_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4);
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let e = g.constant(eye).unwrap();
    let av = g.constant(a.clone()).unwrap();
    let p = g.matmul(e, av).unwrap();
    assert_eq!(g.value(p), &a);
    let z = g.constant(Tensor::zeros(&[3, 4])).unwrap();
    let s = g.add(av, z).unwrap();
    assert_eq!(g.value(s), &a);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn sum_matmul_gradient_is_column_sums_of_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 4, 5);
    let mut g = Graph::new();
    let av = g.input(a.clone()).unwrap();
    let bv = g.constant(b.clone()).unwrap();
    let p = g.matmul(av, bv).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    let da = grads.wrt(av).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let row_sum: f64 = b.row_slice(k).iter().sum();
            assert!((da[i * 4 + k] - row_sum).abs() < 1e-12);
        }
    }
    let err = check_input(&a, |g, x| {
        let bv = g.constant(b.clone())?;
        let p = g.matmul(x, bv)?;
        g.sum(p)
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_family_closed_forms() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.7; 11])).unwrap();
    let s = g.softmax(x, Axis::Cols).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 11.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::row(vec![0.0, 3f64.ln()])).unwrap();
    let l = g.log_softmax(x, Axis::Cols).unwrap();
    let d = g.value(l).data();
    assert!((d[0] + 4f64.ln()).abs() < 1e-12);
    assert!((d[1] - 0.75f64.ln()).abs() < 1e-12);
    // large logits stay finite
    let x = g.constant(Tensor::row(vec![1e4, -1e4, 0.0])).unwrap();
    assert!(g.log_softmax(x, Axis::Cols).is_ok());
}

#[test]
fn relu_of_negative_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![-0.5, -3.0, -1e-9])).unwrap();
    let r = g.relu(x).unwrap();
    assert!(g.value(r).data().iter().all(|v| *v == 0.0));
}

#[test]
fn l1_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = rand_tensor(&mut rng, 5, 40);
    let mut shifted = t.clone();
    shifted.data_mut().iter_mut().for_each(|v| *v += 1.0);
    let mut g = Graph::new();
    let a = g.constant(t.clone()).unwrap();
    let b = g.constant(t.clone()).unwrap();
    let l = g.l1_loss(a, b).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let p = g.constant(shifted).unwrap();
    let l = g.l1_loss(p, b).unwrap();
    assert!((g.value(l).item() - 200.0).abs() < 1e-9);

    // away from ties, gradient is sign(prediction - target)
    let pred = rand_tensor(&mut rng, 3, 4);
    let err = check_input(&pred, |g, x| {
        let tv = g.constant(Tensor::zeros(&[3, 4]))?;
        g.l1_loss(x, tv)
    })
    .unwrap();
    assert!(err < 1e-6);
    let mut g = Graph::new();
    let x = g.input(pred.clone()).unwrap();
    let z = g.constant(Tensor::zeros(&[3, 4])).unwrap();
    let l = g.l1_loss(x, z).unwrap();
    let gr = g.backward(l).unwrap();
    for (d, v) in gr.wrt(x).unwrap().iter().zip(pred.data()) {
        assert_eq!(*d, v.signum());
    }
}

#[test]
fn l1_subgradient_at_tie_is_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(vec![1.0, 2.0])).unwrap();
    let t = g.constant(Tensor::row(vec![1.0, 0.0])).unwrap();
    let l = g.l1_loss(x, t).unwrap();
    let gr = g.backward(l).unwrap();
    assert_eq!(gr.wrt(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::row(vec![0.0, 1.0])).unwrap();
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    let gr = g.backward(s).unwrap();
    assert_eq!(gr.wrt(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.3; 11])).unwrap();
    let ce = g.cross_entropy(x, 4).unwrap();
    assert!((g.value(ce).item() - 11f64.ln()).abs() < 1e-12);

    let x = g.constant(Tensor::row(vec![10.0, 0.0])).unwrap();
    let ce = g.cross_entropy(x, 0).unwrap();
    let sigma = 10f64.exp() / (10f64.exp() + 1.0);
    assert!((g.value(ce).item() + sigma.ln()).abs() < 1e-15);
    assert!((g.value(ce).item() - 4.54e-5).abs() < 1e-7);

    let mut prev = f64::INFINITY;
    for scale in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let x = g.constant(Tensor::row(vec![scale, 0.0, 0.0])).unwrap();
        let ce = g.cross_entropy(x, 0).unwrap();
        let v = g.value(ce).item();
        assert!(v < prev);
        prev = v;
    }
    let x = g.constant(Tensor::row(vec![0.0; 3])).unwrap();
    assert!(matches!(
        g.cross_entropy(x, 3),
        Err(crate::Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
}

#[test]
fn xavier_bounds_determinism_and_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = xavier_uniform(&[100, 100], &mut rng).unwrap();
    let a = (6.0f64 / 200.0).sqrt();
    assert!((a - 0.1732).abs() < 1e-4);
    assert!(w.data().iter().all(|v| v.abs() <= a));
    let mut rng2 = ChaCha8Rng::seed_from_u64(7);
    assert_eq!(w, xavier_uniform(&[100, 100], &mut rng2).unwrap());
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var - a * a / 3.0).abs() < 0.1 * a * a / 3.0);
    assert!(xavier_uniform(&[3, 4, 5], &mut rng).is_err());
}

#[test]
fn adam_examples() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::row(vec![1.5, -2.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    let grads = ParamGrads::zeros_like(&store);
    adam.step(&mut store, &grads, 0.1).unwrap();
    assert_eq!(store.value(id).data(), &[1.5, -2.0]);

    // one step with constant gradient moves by ≈ lr against its sign
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::row(vec![0.0, 0.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut grads = ParamGrads::zeros_like(&store);
    grads.get_mut(id).copy_from_slice(&[3.0, -0.25]);
    adam.step(&mut store, &grads, 2e-4).unwrap();
    let w = store.value(id).data();
    assert!((w[0] + 2e-4).abs() < 1e-9);
    assert!((w[1] - 2e-4).abs() < 1e-9);

    // (w - 3)^2 from 0
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(0.0));
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut grads = ParamGrads::zeros_like(&store);
    for _ in 0..200 {
        let w = store.value(id).item();
        grads.get_mut(id)[0] = 2.0 * (w - 3.0);
        adam.step(&mut store, &grads, 0.1).unwrap();
    }
    assert!((store.value(id).item() - 3.0).abs() < 0.1);
    assert_eq!(adam.step_count(), 200);
}

#[test]
fn adam_rejects_mismatched_store() {
    let mut a = ParamStore::new();
    a.add("w", Tensor::row(vec![0.0]));
    let mut b = ParamStore::new();
    b.add("w", Tensor::row(vec![0.0]));
    b.add("v", Tensor::row(vec![0.0]));
    let mut adam = Adam::new(&a, AdamConfig::default());
    let grads = ParamGrads::zeros_like(&b);
    assert!(adam.step(&mut b, &grads, 0.1).is_err());
}

#[test]
fn lr_schedule_anneals_after_third_epoch() {
    assert_eq!(lr_schedule(1, 2e-4), 2e-4);
    assert_eq!(lr_schedule(3, 2e-4), 2e-4);
    assert_eq!(lr_schedule(4, 2e-4), 1e-4);
    let seq: Vec<f64> = (1..=5).map(|e| lr_schedule(e, 2e-4)).collect();
    assert_eq!(seq, vec![2e-4, 2e-4, 2e-4, 1e-4, 1e-4]);
}

#[test]
fn dropout_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![1.0; 100_000])).unwrap();
    let e = g.dropout(x, 0.1, Mode::Eval, &mut rng).unwrap();
    assert_eq!(g.value(e), g.value(x));
    let z = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(g.value(z), g.value(x));
    let d = g.dropout(x, 0.1, Mode::Train, &mut rng).unwrap();
    let mean = g.value(d).data().iter().sum::<f64>() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.01);
    assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::new();
    assert!(matches!(
        g.constant(Tensor::row(vec![f64::NAN])),
        Err(crate::Error::NonFinite(_))
    ));
    let a = g.constant(Tensor::row(vec![1e300])).unwrap();
    assert!(matches!(g.mul(a, a), Err(crate::Error::NonFinite("mul"))));
}

/// Every differentiable op against central differences on random inputs.
#[test]
fn universal_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let x = rand_tensor(&mut rng, 3, 4);
        let w = rand_tensor(&mut rng, 4, 3);
        let other = rand_tensor(&mut rng, 3, 4);
        let bias = rand_tensor(&mut rng, 1, 4);
        let mask: Vec<f64> = (0..12).map(|i| (i % 3) as f64 * 0.5).collect();
        type Case = Box<dyn Fn(&mut Graph<'static>, Var) -> crate::Result<Var>>;
        let cases: Vec<(&str, Case)> = vec![
            ("matmul", Box::new({ let w = w.clone(); move |g, x| { let w = g.constant(w.clone())?; let y = g.matmul(x, w)?; g.sum(y) } })),
            ("matmul_rhs", Box::new({ let o = other.clone(); move |g, x| { let t = g.transpose(x)?; let o = g.constant(o.clone())?; let y = g.matmul(o, t)?; let y = g.tanh(y)?; g.sum(y) } })),
            ("add_mul_sub", Box::new({ let o = other.clone(); move |g, x| { let o = g.constant(o.clone())?; let a = g.add(x, o)?; let m = g.mul(a, x)?; let s = g.sub(m, o)?; g.sum(s) } })),
            ("add_row", Box::new({ let b = bias.clone(); move |g, x| { let b = g.input(b.clone())?; let y = g.add_row(x, b)?; let y = g.mul(y, y)?; g.mean(y) } })),
            ("scale_mul_const", Box::new({ let m = mask.clone(); move |g, x| { let y = g.scale(x, -1.7)?; let y = g.mul_const(y, m.clone())?; let y = g.sigmoid(y)?; g.sum(y) } })),
            ("scale_by", Box::new(|g, x| { let s = g.pick(x, 5)?; let y = g.scale_by(x, s)?; let y = g.tanh(y)?; g.sum(y) })),
            ("concat_narrow", Box::new(|g, x| { let a = g.narrow(x, Axis::Cols, 1, 2)?; let b = g.narrow(x, Axis::Rows, 0, 2)?; let bt = g.transpose(b)?; let c = g.concat(&[a, x], Axis::Cols)?; let r = g.concat(&[c, c], Axis::Rows)?; let s = g.sigmoid(r)?; let s1 = g.sum(s)?; let s2 = g.sum(bt)?; let s2 = g.scale(s2, 0.3)?; g.add(s1, s2) })),
            ("rows", Box::new(|g, x| { let r = g.rows(x, &[2, 0, 2])?; let r = g.tanh(r)?; g.sum(r) })),
            ("relu", Box::new(|g, x| { let r = g.relu(x)?; let r = g.mul(r, r)?; g.sum(r) })),
            ("softmax", Box::new(|g, x| { let s = g.softmax(x, Axis::Cols)?; let s = g.mul(s, x)?; g.sum(s) })),
            ("softmax_rows", Box::new(|g, x| { let s = g.softmax(x, Axis::Rows)?; let s = g.mul(s, x)?; g.sum(s) })),
            ("log_softmax", Box::new(|g, x| { let s = g.log_softmax(x, Axis::Cols)?; let p = g.pick(s, 7)?; let q = g.pick(s, 2)?; g.add(p, q) })),
            ("log_softmax_rows", Box::new(|g, x| { let s = g.log_softmax(x, Axis::Rows)?; let s = g.mul(s, x)?; g.sum(s) })),
            ("l1", Box::new({ let o = other.clone(); move |g, x| { let o = g.constant(o.clone())?; g.l1_loss(x, o) } })),
            ("cross_entropy", Box::new(|g, x| { let r = g.narrow(x, Axis::Rows, 1, 1)?; g.cross_entropy(r, 2) })),
            ("log_sum_exp", Box::new(|g, x| { let a = g.pick(x, 0)?; let b = g.pick(x, 3)?; let c = g.pick(x, 11)?; g.log_sum_exp(&[a, b, c]) })),
            ("lstm_cell", Box::new(|g, x| { let a = g.narrow(x, Axis::Rows, 0, 1)?; let b = g.narrow(x, Axis::Rows, 1, 1)?; let gates = g.concat(&[a, b], Axis::Cols)?; let c = g.narrow(x, Axis::Rows, 2, 1)?; let c = g.narrow(c, Axis::Cols, 0, 2)?; let hc = g.lstm_cell(gates, c)?; let hc = g.mul(hc, hc)?; g.sum(hc) })),
            ("stat_pool", Box::new(|g, x| { let p = g.stat_pool(x)?; let p = g.mul(p, p)?; g.sum(p) })),
        ];
        for (name, f) in &cases {
            let err = check_input(&x, f).unwrap();
            assert!(err < 1e-4, "trial {trial} op {name}: rel err {err}");
        }
    }
}

#[test]
fn composed_graph_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, 4, 3);
    let w1 = rand_tensor(&mut rng, 3, 5);
    let w2 = rand_tensor(&mut rng, 5, 2);
    let err = check_input(&x, |g, x| {
        let w1 = g.constant(w1.clone())?;
        let w2 = g.constant(w2.clone())?;
        let h = g.matmul(x, w1)?;
        let h = g.tanh(h)?;
        let p = g.stat_pool(h)?;
        let o = g.matmul(h, w2)?;
        let o = g.log_softmax(o, Axis::Cols)?;
        let s = g.sum(o)?;
        let q = g.sum(p)?;
        g.sub(q, s)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn checkpoint_roundtrip_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut s = ParamStore::new();
    s.add("enc.w", rand_tensor(&mut rng, 3, 4));
    s.add("enc.b", Tensor::row(vec![1.0, -2.5]));
    let bytes = s.to_bytes();
    assert_eq!(&bytes[..4], b"APCV");
    let back = ParamStore::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.checksum(), s.checksum());
    assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ParamStore::from_bytes(&bad).is_err());
}

#[test]
fn rel_err_guard() {
    assert_eq!(rel_err(1.0, 1.0), 0.0);
    assert!(rel_err(1e-9, 0.0) < 1e-4);
}
