use cgm_numeric::gradcheck::{self, op_suite};
use cgm_numeric::{Tape, Tensor};

#[test]
fn every_tape_op_matches_finite_differences() {
    for seed in 0..5 {
        for (name, rep) in op_suite(seed).unwrap() {
            assert!(
                rep.passes(1e-4),
                "seed {seed} op {name}: max rel err {:.3e} ({:?})",
                rep.max_rel_err,
                rep.worst
            );
        }
    }
}

#[test]
fn matmul_gradient_at_1e_6() {
    let mut r = cgm_numeric::rng::seeded(99);
    let a = Tensor::<f64>::randn(&[2, 3], 1.0, &mut r);
    let b = Tensor::<f64>::randn(&[3, 1], 1.0, &mut r);
    let rep = gradcheck::check(&[a, b], gradcheck::STEP, |t, v| t.matmul(v[0], v[1])).unwrap();
    assert!(rep.max_rel_err < 1e-6, "{rep:?}");
}

#[test]
fn exp_gradient_at_point_three() {
    let rep = gradcheck::check(&[Tensor::scalar(0.3)], gradcheck::STEP, |t: &mut Tape<f64>, v| {
        Ok(t.exp(v[0]))
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-6, "{rep:?}");
}

#[test]
fn composed_graph_gradient() {
    // softmax(layernorm(x W + b)) pinned through a diamond
    let mut r = cgm_numeric::rng::seeded(7);
    let inputs = vec![
        Tensor::<f64>::randn(&[3, 4], 1.0, &mut r),
        Tensor::<f64>::randn(&[4, 5], 0.5, &mut r),
        Tensor::<f64>::randn(&[5], 0.1, &mut r),
    ];
    let rep = gradcheck::check(&inputs, gradcheck::STEP, |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add(h, v[2])?;
        let g = t.constant(Tensor::ones(&[5]));
        let z = t.constant(Tensor::zeros(&[5]));
        let n = t.layernorm(h, g, z)?;
        let s = t.softmax(n)?;
        let e = t.tanh(h);
        t.mul(s, e)
    })
    .unwrap();
    assert!(rep.passes(1e-4), "{rep:?}");
}
