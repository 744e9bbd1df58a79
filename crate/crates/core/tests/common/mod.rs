#![allow(dead_code)]

use cgm_numeric::gradcheck::rel_err;
use cgm_numeric::{rng, ParamStore, Session, Tensor, Var};

/// Reduces any output to a scalar with fixed pseudo-random weights.
pub fn weighted_sum(s: &mut Session<f64>, out: Var) -> Var {
    let shape = s.tape.shape(out).to_vec();
    let mut r = rng::seeded(0x5eed);
    let w = s.constant(Tensor::uniform(&shape, 1.0, &mut r));
    let p = s.tape.mul(out, w).unwrap();
    s.tape.sum(p)
}

/// Largest relative error between tape gradients and central differences
/// over every parameter element of `store`.
pub fn param_gradcheck<F>(store: &mut ParamStore<f64>, f: F) -> f64
where
    F: Fn(&mut Session<f64>) -> Var,
{
    let analytic = {
        let mut s = Session::new(store, false, 0);
        let out = f(&mut s);
        let loss = weighted_sum(&mut s, out);
        s.param_grads(loss).unwrap()
    };
    let eval = |st: &ParamStore<f64>| {
        let mut s = Session::new(st, false, 0);
        let out = f(&mut s);
        let loss = weighted_sum(&mut s, out);
        s.tape.value(loss).item()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for e in 0..store.get(id).numel() {
            let orig = store.get(id).data()[e];
            store.get_mut(id).data_mut()[e] = orig + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[e] = orig - h;
            let dn = eval(store);
            store.get_mut(id).data_mut()[e] = orig;
            let num = (up - dn) / (2.0 * h);
            worst = worst.max(rel_err(analytic[pi].data()[e], num));
        }
    }
    worst
}

/// Row-wise layer norm with unit gain and zero bias, epsilon matching the tape.
pub fn layernorm_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().sum::<f64>() / cols as f64;
        let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / cols as f64;
        let sd = (v + 1e-5).sqrt();
        out.extend(row.iter().map(|a| (a - m) / sd));
    }
    out
}
