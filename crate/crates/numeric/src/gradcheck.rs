//! Central finite-difference gradient checks.
//!
//! The checker only ever runs forward passes to build its numeric estimate,
//! so it stays independent of the backward rules it verifies.

use crate::error::Result;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default perturbation for 64-bit checks.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F, weights: &mut Option<Tensor<f64>>) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = if tape.value(out).numel() == 1 {
        out
    } else {
        // Reduce non-scalar outputs with fixed pseudo-random weights.
        let w = weights
            .get_or_insert_with(|| {
                let mut r = rng::seeded(0x6772_6164);
                Tensor::uniform(tape.shape(out), 1.0, &mut r)
            })
            .clone();
        let wv = tape.constant(w);
        let prod = tape.mul(out, wv)?;
        tape.sum(prod)
    };
    Ok((tape, vars, loss))
}

/// Compares tape gradients of `f` against central differences for every
/// element of every input. Non-scalar outputs are reduced with fixed weights.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    let (tape, vars, loss) = eval(inputs, &f, &mut weights)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let (t1, _, l1) = eval(&work, &f, &mut weights)?;
            let fp = t1.value(l1).item();
            work[i].data_mut()[e] = orig - step;
            let (t2, _, l2) = eval(&work, &f, &mut weights)?;
            let fm = t2.value(l2).item();
            work[i].data_mut()[e] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[i].data()[e];
            let r = rel_err(a, numeric);
            report.checked += 1;
            if r > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(r);
                report.worst = Some(Mismatch {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: r,
                });
            }
        }
    }
    Ok(report)
}

type Case = (&'static str, Vec<Tensor<f64>>, CaseFn);
type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Moves entries at least `margin` away from zero so kinks are not straddled.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

/// Finite-difference checks of every differentiable tape operation on
/// randomized shapes drawn from `seed`. Returns one report per operation.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand::Rng as _;
    let mut r = rng::seeded(seed);
    let mut dim = |lo: usize, hi: usize| r.random_range(lo..=hi);
    let (m, k, n) = (dim(1, 4), dim(1, 5), dim(1, 4));
    let (rows, cols) = (dim(2, 4), dim(2, 5));
    let (steps, chans, width) = (dim(3, 7), dim(1, 3), dim(2, 4));
    let (batch, cin, cout) = (dim(1, 2), dim(1, 3), dim(1, 3));
    let (len, p, ns, pout) = (dim(2, 8), dim(1, 3), dim(1, 4), dim(1, 3));
    let mut r = rng::seeded(seed ^ 0xA5A5);
    let mut rn = |shape: &[usize]| Tensor::<f64>::randn(shape, 1.0, &mut r);

    let mut cases: Vec<Case> = vec![
        ("matmul 2x3.3x1", vec![rn(&[2, 3]), rn(&[3, 1])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul random", vec![rn(&[m, k]), rn(&[k, n])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![rn(&[rows, cols]), rn(&[rows, cols])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add lead-broadcast", vec![rn(&[rows, cols]), rn(&[cols])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add scalar-broadcast", vec![rn(&[rows, cols]), rn(&[1])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub lead-broadcast", vec![rn(&[rows, cols]), rn(&[1, cols])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("sub narrow-left", vec![rn(&[cols]), rn(&[rows, cols])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![rn(&[rows, cols]), rn(&[rows, cols])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul lead-broadcast", vec![rn(&[rows, cols]), rn(&[cols])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_scalar", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.add_scalar(v[0], 0.3)))),
        ("mul_scalar", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.mul_scalar(v[0], -1.7)))),
        ("neg", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.neg(v[0])))),
        ("sigmoid", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("elu", vec![away_from_zero(rn(&[rows, cols]), 0.05)], Box::new(|t, v| Ok(t.elu(v[0])))),
        ("silu", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.silu(v[0])))),
        ("relu", vec![away_from_zero(rn(&[rows, cols]), 0.05)], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("softplus", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.softplus(v[0])))),
        ("exp", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.exp(v[0])))),
        ("exp at 0.3", vec![Tensor::scalar(0.3)], Box::new(|t, v| Ok(t.exp(v[0])))),
        ("log", vec![rn(&[rows, cols]).map(|x| x.abs() + 0.2)], Box::new(|t, v| t.log(v[0]))),
        ("abs", vec![away_from_zero(rn(&[rows, cols]), 0.05)], Box::new(|t, v| Ok(t.abs(v[0])))),
        (
            "clamp",
            vec![rn(&[rows, cols]).map(|x| if (x - 0.5).abs() < 0.05 || (x + 0.5).abs() < 0.05 { x + 0.11 } else { x })],
            Box::new(|t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        ),
        (
            "clipmax",
            vec![rn(&[rows, cols]).map(|x| if (x - 1.0).abs() < 0.05 { x + 0.11 } else { x })],
            Box::new(|t, v| Ok(t.clipmax(v[0], 1.0))),
        ),
        ("softmax", vec![rn(&[rows, cols])], Box::new(|t, v| t.softmax(v[0]))),
        (
            "layernorm",
            vec![rn(&[rows, cols]), rn(&[cols]), rn(&[cols])],
            Box::new(|t, v| t.layernorm(v[0], v[1], v[2])),
        ),
        ("sum", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", vec![rn(&[rows, cols])], Box::new(|t, v| Ok(t.mean(v[0])))),
        (
            "concat_cols",
            vec![rn(&[rows, cols]), rn(&[rows, 2])],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
        ),
        ("slice_cols", vec![rn(&[rows, cols])], Box::new(|t, v| t.slice_cols(v[0], 1, 2))),
        (
            "concat_rows",
            vec![rn(&[rows, cols]), rn(&[1, cols])],
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
        ),
        ("slice_rows", vec![rn(&[rows, cols])], Box::new(|t, v| t.slice_rows(v[0], 1, 2))),
        (
            "scale_rows",
            vec![rn(&[rows, cols]), rn(&[rows, 1])],
            Box::new(|t, v| t.scale_rows(v[0], v[1])),
        ),
        ("transpose", vec![rn(&[rows, cols])], Box::new(|t, v| t.transpose(v[0]))),
        ("reshape", vec![rn(&[rows, cols])], Box::new(move |t, v| t.reshape(v[0], &[cols, rows]))),
        ("gather_rows", vec![rn(&[rows, cols])], Box::new(|t, v| t.gather_rows(v[0], &[1, 0, 1]))),
        (
            "dropout",
            vec![rn(&[rows, cols])],
            Box::new(|t, v| {
                let mut r = rng::seeded(5);
                Ok(t.dropout(v[0], 0.3, &mut r))
            }),
        ),
        ("time_slice", vec![rn(&[2, steps, 3])], Box::new(|t, v| t.time_slice(v[0], 1))),
        (
            "stack_time",
            vec![rn(&[2, 3]), rn(&[2, 3]), rn(&[2, 3])],
            Box::new(|t, v| t.stack_time(&[v[0], v[1], v[2]])),
        ),
        (
            "causal_conv",
            vec![rn(&[steps, chans]), rn(&[chans, width]), rn(&[chans])],
            Box::new(|t, v| t.causal_conv(v[0], v[1], v[2])),
        ),
        (
            "causal_conv batched",
            vec![rn(&[batch, steps, chans]), rn(&[chans, width]), rn(&[chans])],
            Box::new(|t, v| t.causal_conv(v[0], v[1], v[2])),
        ),
        (
            "conv1d dilated",
            vec![rn(&[batch, steps, cin]), rn(&[cout, cin, 3]), rn(&[cout])],
            Box::new(|t, v| t.conv1d(v[0], v[1], v[2], 2)),
        ),
        (
            "diag_scan",
            vec![
                rn(&[len, p]),
                rn(&[len]).map(|x| 0.2 + x.abs()),
                rn(&[ns]).map(|x| 0.5 * x),
                rn(&[ns, p]),
                rn(&[pout, ns]),
                rn(&[ns]),
            ],
            Box::new(|t, v| t.diag_scan(v[0], v[1], v[2], v[3], v[4], v[5])),
        ),
        (
            "diag_scan batched",
            vec![
                rn(&[batch, len, p]),
                rn(&[batch, len]).map(|x| 0.2 + x.abs()),
                rn(&[ns]).map(|x| 0.5 * x),
                rn(&[ns, p]),
                rn(&[pout, ns]),
                rn(&[ns]),
            ],
            Box::new(|t, v| t.diag_scan(v[0], v[1], v[2], v[3], v[4], v[5])),
        ),
        (
            "pinball",
            vec![rn(&[rows, 3])],
            Box::new(move |t, v| {
                // targets sit well away from predictions to avoid the kink
                let pred = t.value(v[0]).clone();
                let tgt: Vec<f64> = (0..pred.rows()).map(|i| if i % 2 == 0 { 5.0 } else { -5.0 }).collect();
                let y = t.constant(Tensor::vector(tgt));
                t.pinball(v[0], y, &[0.1, 0.5, 0.9])
            }),
        ),
        (
            "weighted_bce",
            vec![rn(&[rows, cols])],
            Box::new(move |t, v| {
                let n = t.value(v[0]).numel();
                let y: Vec<f64> = (0..n).map(|i| [0.0, 1.0, 0.5, 0.25][i % 4]).collect();
                let y = t.constant(Tensor::vector(y));
                t.weighted_bce(v[0], y, 5.0)
            }),
        ),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, inputs, f) in cases.drain(..) {
        out.push((name, check(&inputs, STEP, f)?));
    }
    Ok(out)
}
