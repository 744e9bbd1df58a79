use cgm_numeric::{ops, Adam, Archive, NumericError, Tape, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_returns_operand() {
    let m = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::eye(3));
    let mv = tape.constant(m.clone());
    let out = tape.matmul(i, mv).unwrap();
    assert_eq!(tape.value(out), &m);
}

#[test]
fn matmul_inner_mismatch_is_shape_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 1]));
    match tape.matmul(a, b) {
        Err(NumericError::Shape { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![4, 1]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn closed_form_activations() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).item(), 0.5);
    let m1 = tape.constant(Tensor::scalar(-1.0));
    let e = tape.elu(m1);
    assert!((tape.value(e).item() - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((tape.value(e).item() + 0.6321).abs() < 1e-4);
}

#[test]
fn log_of_nonpositive_is_domain_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.log(x), Err(NumericError::Domain { .. })));
}

#[test]
fn clipmax_bounds_from_above() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.5, 1.0, 2.5]));
    let y = tape.clipmax(x, 1.0);
    assert_eq!(tape.value(y).data(), &[0.5, 1.0, 1.0]);
}

#[test]
fn softmax_examples() {
    let u = ops::softmax(&t(&[3], &[0.0, 0.0, 0.0]), 0).unwrap();
    for &v in u.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let big = ops::softmax(&t(&[2], &[1000.0, 1000.0]), 0).unwrap();
    assert_eq!(big.data(), &[0.5, 0.5]);
    // axis 0 of a 2x2 normalizes columns
    let cols = ops::softmax(&t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]), 0).unwrap();
    assert_eq!(cols.data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn layernorm_constant_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4], &[3.0, 3.0, 3.0, 3.0]));
    let g = tape.constant(Tensor::ones(&[4]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = tape.layernorm(x, g, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layernorm_standardizes_rows() {
    let mut r = cgm_numeric::rng::seeded(3);
    let x = Tensor::<f64>::randn(&[5, 16], 3.0, &mut r).map(|v| v + 7.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[16]));
    let b = tape.constant(Tensor::zeros(&[16]));
    let y = tape.layernorm(xv, g, b).unwrap();
    for row in 0..5 {
        let r = tape.value(y).row(row);
        let mean = r.iter().sum::<f64>() / 16.0;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn diamond_graph_sums_both_paths() {
    // y = a*b + exp(a) with a shared; dy/da = b + exp(a)
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(0.7));
    let b = tape.param(Tensor::scalar(-1.3));
    let p1 = tape.mul(a, b).unwrap();
    let p2 = tape.exp(a);
    let y = tape.add(p1, p2).unwrap();
    let g = tape.backward(y).unwrap();
    let ga = g.get(a).unwrap().item();
    assert!((ga - (-1.3 + 0.7f64.exp())).abs() < 1e-12);
    assert!((g.get(b).unwrap().item() - 0.7).abs() < 1e-12);
    // every recorded node is visited exactly once
    assert_eq!(g.visited(), tape.len());
}

#[test]
fn backward_skips_constant_branches() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(2.0));
    let c = tape.constant(Tensor::scalar(5.0));
    let cc = tape.exp(c);
    let y = tape.mul(a, cc).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.get(c).is_none());
    assert!((g.get(a).unwrap().item() - 5f64.exp()).abs() < 1e-9);
    assert_eq!(g.visited(), 2);
}

#[test]
fn unsupported_broadcast_errors() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[3, 4]));
    let b = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(tape.add(a, b).is_err());
    let c = tape.constant(Tensor::zeros(&[4]));
    let s = tape.add(a, c).unwrap();
    assert_eq!(tape.shape(s), &[3, 4]);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = vec![t(&[3], &[1.0, -2.0, 0.5])];
    let before = params.clone();
    let mut opt = Adam::new(&params, 0.1);
    opt.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
    assert_eq!(params, before);
}

#[test]
fn adam_first_step_moves_by_lr() {
    // m = 0.1, v = 0.001 -> bias corrected 1 and 1 -> step = lr / (1 + eps)
    let mut params = vec![Tensor::scalar(1.0f64)];
    let mut opt = Adam::new(&params, 0.1);
    opt.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((params[0].item() - expected).abs() < 1e-12);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut r = cgm_numeric::rng::seeded(11);
        let mut p = vec![Tensor::<f32>::randn(&[4, 4], 1.0, &mut r)];
        let mut opt = Adam::new(&p, 1e-2);
        for _ in 0..20 {
            let g = vec![Tensor::<f32>::randn(&[4, 4], 1.0, &mut r)];
            opt.step(&mut p, &g).unwrap();
        }
        (p, opt.state)
    };
    let (p1, s1) = run();
    let (p2, s2) = run();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&p1[0]), bits(&p2[0]));
    assert_eq!(s1, s2);
}

#[test]
fn archive_rejects_truncation_and_dtype_confusion() {
    let mut a = Archive::new();
    a.put("w", &t(&[2], &[1.0, 2.0]));
    let bytes = a.to_bytes();
    assert!(Archive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let back = Archive::from_bytes(&bytes).unwrap();
    assert!(back.get::<f32>("w").is_err());
    assert!(back.get::<f64>("missing").is_err());
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_simplex(
        xs in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::vector(xs.clone());
        let s = ops::softmax(&x, 0).unwrap();
        let sum: f64 = s.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(s.data().iter().all(|&v| v >= 0.0 && v <= 1.0));
        let shifted = ops::softmax(&x.map(|v| v + shift), 0).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn archive_round_trip_is_bit_exact(
        a in prop::collection::vec(any::<f32>(), 0..40),
        b in prop::collection::vec(any::<f64>(), 1..40),
        key in "[a-z]{1,8}",
        val in ".{0,16}",
    ) {
        let mut ar = Archive::new();
        ar.put("a", &Tensor::vector(a.clone()));
        ar.put("b/nested", &Tensor::new(&[1, b.len()], b.clone()).unwrap());
        ar.set_meta(&key, val.clone());
        let bytes = ar.to_bytes();
        let back = Archive::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ar);
        prop_assert_eq!(back.to_bytes(), bytes);
        let ra: Tensor<f32> = back.get("a").unwrap();
        let bits: Vec<u32> = ra.data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, orig);
        prop_assert_eq!(back.meta(&key), Some(val.as_str()));
    }
}
