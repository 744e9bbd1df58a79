use cgm_numeric::gradcheck::{check, STEP};
use cgm_numeric::{Tape, Tensor};

fn bce(logits: &[f64], target: &[f64], alpha: f64) -> f64 {
    let mut t: Tape<f64> = Tape::new();
    let x = t.constant(Tensor::from_f64(&[logits.len()], logits).unwrap());
    let y = t.constant(Tensor::from_f64(&[target.len()], target).unwrap());
    let l = t.weighted_bce(x, y, alpha).unwrap();
    t.value(l).item()
}

#[test]
fn positive_at_zero_logit() {
    let v = bce(&[0.0], &[1.0], 5.0);
    assert!((v - 5.0 * 2f64.ln()).abs() < 1e-12);
    assert!((v - 3.466).abs() < 1e-3);
}

#[test]
fn confident_negative_costs_nothing() {
    assert!(bce(&[-60.0], &[0.0], 5.0) < 1e-20);
}

#[test]
fn averages_over_steps() {
    // Direct formula with sigmoid computed by hand.
    let (x, y) = ([0.3, -1.2, 2.0], [0.5, 0.0, 1.0]);
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let expect: f64 = x
        .iter()
        .zip(&y)
        .map(|(&z, &t)| -(5.0 * t * sig(z).ln() + (1.0 - t) * (1.0 - sig(z)).ln()))
        .sum::<f64>()
        / 3.0;
    assert!((bce(&x, &y, 5.0) - expect).abs() < 1e-12);
}

#[test]
fn gradient_matches_finite_differences() {
    let target = Tensor::from_f64(&[2, 5], &[0.0, 0.5, 1.0, 1.0, 0.0, 0.2, 0.0, 1.0, 0.7, 0.0]).unwrap();
    let logits = Tensor::from_f64(&[2, 5], &[-2.0, 0.3, 1.5, -0.4, 0.9, 0.0, -3.0, 2.2, 0.1, -0.7]).unwrap();
    let rep = check(&[logits], STEP, |t, v| {
        let y = t.constant(target.clone());
        t.weighted_bce(v[0], y, 5.0)
    })
    .unwrap();
    assert!(rep.passes(1e-6), "{rep:?}");
}
