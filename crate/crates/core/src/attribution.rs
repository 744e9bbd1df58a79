//! Hidden-attention attribution: lag kernels unrolled from scan traces and
//! normalized into row-stochastic lag-importance maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ssm::ScanTrace;

pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_EPS: f64 = 1e-9;
/// Trailing window used when a sequence is longer than this.
pub const DEFAULT_WINDOW: usize = 60;

#[inline]
fn tri(l: usize, j: usize) -> usize {
    l * (l + 1) / 2 + j
}

/// Lower-triangular block of lag kernels over a window `[start, start + size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernels {
    pub start: usize,
    pub size: usize,
    pub p_out: usize,
    pub p: usize,
    /// Packed `(l, j <= l)` blocks of `[p_out, p]`.
    data: Vec<f64>,
}

impl Kernels {
    /// `K_{lj}` with window-relative indices, `j <= l`.
    pub fn get(&self, l: usize, j: usize) -> &[f64] {
        assert!(j <= l && l < self.size, "kernel index ({l}, {j}) outside window");
        let blk = self.p_out * self.p;
        let o = tri(l, j) * blk;
        &self.data[o..o + blk]
    }

    /// Channel-wise l1 norms as a square matrix, zero above the diagonal.
    pub fn psi(&self) -> Psi {
        let mut data = vec![0.0; self.size * self.size];
        for l in 0..self.size {
            for j in 0..=l {
                data[l * self.size + j] = self.get(l, j).iter().map(|x| x.abs()).sum();
            }
        }
        Psi {
            size: self.size,
            data,
        }
    }
}

/// Resolves a trailing window over a sequence of `len` steps.
fn window_start(len: usize, window: Option<usize>) -> usize {
    match window {
        Some(w) if w < len => len - w,
        _ => 0,
    }
}

/// Unrolls `K_{lj} = C_l exp(sum_{t=j}^{l-1} dt_t Lambda) B_j` for `j <= l`
/// inside the trailing `window` (whole trace when `None`).
///
/// For each row the decay product is extended one factor at a time while `j`
/// walks backwards, so no exponent sum is recomputed.
pub fn unroll_kernels(trace: &ScanTrace, window: Option<usize>) -> Kernels {
    let sh = trace.shape;
    let start = window_start(sh.len, window);
    let size = sh.len - start;
    let blk = sh.p_out * sh.p;
    let mut data = vec![0.0; size * (size + 1) / 2 * blk];
    let decays: Vec<Vec<f64>> = (0..sh.len).map(|t| trace.decay(t)).collect();
    let mut cb = vec![0.0; sh.p_out * sh.n];
    for l in 0..size {
        let abs_l = start + l;
        let c = trace.c_at(abs_l);
        let mut e = vec![1.0; sh.n];
        for j in (0..=l).rev() {
            let abs_j = start + j;
            // cb = C_l diag(e)
            for o in 0..sh.p_out {
                for k in 0..sh.n {
                    cb[o * sh.n + k] = c[o * sh.n + k] * e[k];
                }
            }
            let b = trace.b_at(abs_j);
            let out = &mut data[tri(l, j) * blk..(tri(l, j) + 1) * blk];
            for o in 0..sh.p_out {
                for k in 0..sh.n {
                    let w = cb[o * sh.n + k];
                    if w == 0.0 {
                        continue;
                    }
                    let row = &b[k * sh.p..(k + 1) * sh.p];
                    for (dst, &bv) in out[o * sh.p..(o + 1) * sh.p].iter_mut().zip(row) {
                        *dst += w * bv;
                    }
                }
            }
            if j > 0 {
                for (ek, ak) in e.iter_mut().zip(&decays[abs_j - 1]) {
                    *ek *= ak;
                }
            }
        }
    }
    Kernels {
        start,
        size,
        p_out: sh.p_out,
        p: sh.p,
        data,
    }
}

/// Applies the kernels to an input `x [len, p]` of the original trace:
/// `sum_{j in window, j <= l} K_{lj} x_j` for each window row.
pub fn kernel_apply(k: &Kernels, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; k.size * k.p_out];
    for l in 0..k.size {
        for j in 0..=l {
            let m = k.get(l, j);
            let xj = &x[(k.start + j) * k.p..(k.start + j + 1) * k.p];
            for o in 0..k.p_out {
                z[l * k.p_out + o] += m[o * k.p..(o + 1) * k.p]
                    .iter()
                    .zip(xj)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    }
    z
}

/// Square matrix of kernel magnitudes `psi(K_{lj})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Psi {
    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.data[l * self.size + j]
    }

    pub fn scaled(&self, k: f64) -> Psi {
        Psi {
            size: self.size,
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }
}

/// Which map a [`AttentionMap`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSel {
    Head(usize),
    Aggregate,
}

/// Row-stochastic, lower-triangular lag weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub size: usize,
    /// Square, row-major; zero above the diagonal.
    pub weights: Vec<f64>,
    pub layer: Option<usize>,
    pub head: HeadSel,
    pub tau: f64,
    pub eps: f64,
    /// Absolute sequence index of row/column 0.
    pub start: usize,
}

impl AttentionMap {
    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.weights[l * self.size + j]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.weights[l * self.size..(l + 1) * self.size]
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.size)
            .map(|l| (self.row(l).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_causal(&self) -> bool {
        (0..self.size).all(|l| self.row(l)[l + 1..].iter().all(|&w| w == 0.0))
    }

    /// Mean over rows `rows` of the full weight rows.
    pub fn mean_rows(&self, rows: std::ops::Range<usize>) -> Vec<f64> {
        let n = rows.len().max(1) as f64;
        let mut acc = vec![0.0; self.size];
        for l in rows {
            for (a, w) in acc.iter_mut().zip(self.row(l)) {
                *a += w;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

fn check_temperature(tau: f64, eps: f64) -> Result<()> {
    if !(tau > 0.0) || !(eps > 0.0) {
        return Err(CoreError::Config(format!(
            "attribution needs tau > 0 and eps > 0, got {tau} and {eps}"
        )));
    }
    Ok(())
}

fn softmax_rows(psi: &Psi, tau: f64, eps: f64) -> Vec<f64> {
    let n = psi.size;
    let mut w = vec![0.0; n * n];
    for l in 0..n {
        let scores: Vec<f64> = (0..=l).map(|j| (psi.get(l, j) + eps).ln() / tau).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            w[l * n + j] = e / z;
        }
    }
    w
}

/// `alpha_{lj} = softmax_{j <= l}(log(psi_{lj} + eps) / tau)`.
pub fn lag_importance_psi(psi: &Psi, tau: f64, eps: f64) -> Result<AttentionMap> {
    check_temperature(tau, eps)?;
    Ok(AttentionMap {
        size: psi.size,
        weights: softmax_rows(psi, tau, eps),
        layer: None,
        head: HeadSel::Head(0),
        tau,
        eps,
        start: 0,
    })
}

pub fn lag_importance(k: &Kernels, tau: f64, eps: f64) -> Result<AttentionMap> {
    let mut m = lag_importance_psi(&k.psi(), tau, eps)?;
    m.start = k.start;
    Ok(m)
}

/// Head-aggregated map: softmax of the log of the head-mean magnitude.
pub fn head_aggregate(psis: &[Psi], tau: f64, eps: f64) -> Result<AttentionMap> {
    check_temperature(tau, eps)?;
    let first = psis
        .first()
        .ok_or_else(|| CoreError::Empty("no heads to aggregate".into()))?;
    if psis.iter().any(|p| p.size != first.size) {
        return Err(CoreError::Shape("head maps differ in size".into()));
    }
    let h = psis.len() as f64;
    let mut mean = vec![0.0; first.data.len()];
    for p in psis {
        for (m, x) in mean.iter_mut().zip(&p.data) {
            *m += x / h;
        }
    }
    let psi = Psi {
        size: first.size,
        data: mean,
    };
    Ok(AttentionMap {
        size: psi.size,
        weights: softmax_rows(&psi, tau, eps),
        layer: None,
        head: HeadSel::Aggregate,
        tau,
        eps,
        start: 0,
    })
}

/// Elementwise mean of aligned maps, rows re-normalized to sum 1.
pub fn cohort_average(maps: &[AttentionMap]) -> Result<AttentionMap> {
    let first = maps
        .first()
        .ok_or_else(|| CoreError::Empty("no maps to average".into()))?;
    if maps.iter().any(|m| m.size != first.size) {
        return Err(CoreError::Shape("maps differ in size".into()));
    }
    let n = first.size;
    let mut w = vec![0.0; n * n];
    for m in maps {
        for (a, x) in w.iter_mut().zip(&m.weights) {
            *a += x / maps.len() as f64;
        }
    }
    for l in 0..n {
        let s: f64 = w[l * n..(l + 1) * n].iter().sum();
        if s > 0.0 {
            w[l * n..(l + 1) * n].iter_mut().for_each(|x| *x /= s);
        }
    }
    Ok(AttentionMap {
        weights: w,
        ..first.clone()
    })
}

/// CSV with columns `l, j, weight` (window-relative indices, lower triangle).
pub fn write_map_csv(path: impl AsRef<Path>, map: &AttentionMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["l", "j", "weight"])?;
    for l in 0..map.size {
        for j in 0..=l {
            w.write_record([l.to_string(), j.to_string(), format!("{}", map.get(l, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Heatmap with `scale` pixels per cell; brighter is heavier, each row scaled by its maximum.
pub fn write_map_png(path: impl AsRef<Path>, map: &AttentionMap, scale: u32) -> Result<()> {
    let scale = scale.max(1);
    let n = map.size as u32;
    let mut img = image::RgbImage::new((n * scale).max(1), (n * scale).max(1));
    for l in 0..map.size {
        let rmax = map.row(l).iter().copied().fold(0.0, f64::max).max(1e-300);
        for j in 0..map.size {
            let px = if j > l {
                image::Rgb([255, 255, 255])
            } else {
                let v = (map.get(l, j) / rmax).clamp(0.0, 1.0);
                // dark blue to yellow
                let r = (255.0 * v) as u8;
                let g = (40.0 + 215.0 * v) as u8;
                let b = (110.0 * (1.0 - v)) as u8;
                image::Rgb([r, g, b])
            };
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(j as u32 * scale + dx, l as u32 * scale + dy, px);
                }
            }
        }
    }
    img.save(path).map_err(|e| CoreError::Image(e.to_string()))
}
