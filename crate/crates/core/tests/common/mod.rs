//! Independent loop oracles shared by the integration tests.

#![allow(dead_code)]

use cto_core::metrics::inner_boundary;
use cto_core::stitch::PatchGroup;
use cto_tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), dims).unwrap()
}

pub fn at(t: &Tensor<f64>, idx: &[usize]) -> f64 {
    let dims = t.dims();
    let mut flat = 0;
    for (i, &d) in idx.iter().zip(dims) {
        flat = flat * d + i;
    }
    t.data()[flat]
}

/// Direct evaluation of grouped multi-head attention, one token at a time.
pub fn attention_oracle(
    g: &PatchGroup<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    wo: &Tensor<f64>,
    heads: usize,
    dk: usize,
) -> Vec<f64> {
    let d = g.tensor.dims();
    let (n, p, c, gh, gw) = (d[0], d[1], d[2], d[3], d[4]);
    let tokens = gh * gw;
    let inner = heads * dk;
    let mut out = vec![0.0; g.tensor.numel()];
    let w = |m: &Tensor<f64>, r: usize, col: usize| m.data()[r * m.dims()[1] + col];
    for ni in 0..n {
        for pi in 0..p {
            let x = |t: usize, ch: usize| at(&g.tensor, &[ni, pi, ch, t / gw, t % gw]);
            let proj = |m: &Tensor<f64>| -> Vec<Vec<f64>> {
                (0..tokens)
                    .map(|t| (0..inner).map(|o| (0..c).map(|ch| x(t, ch) * w(m, ch, o)).sum()).collect())
                    .collect()
            };
            let (q, k, v) = (proj(wq), proj(wk), proj(wv));
            let mut merged = vec![vec![0.0; inner]; tokens];
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                for t in 0..tokens {
                    let scores: Vec<f64> = (0..tokens)
                        .map(|u| {
                            cols.clone().map(|e| q[t][e] * k[u][e]).sum::<f64>() / (dk as f64).sqrt()
                        })
                        .collect();
                    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for col in cols.clone() {
                        merged[t][col] = (0..tokens).map(|u| e[u] / z * v[u][col]).sum();
                    }
                }
            }
            for t in 0..tokens {
                for ch in 0..c {
                    let y: f64 = (0..inner).map(|e| merged[t][e] * w(wo, e, ch)).sum();
                    out[(((ni * p + pi) * c + ch) * gh + t / gw) * gw + t % gw] = y;
                }
            }
        }
    }
    out
}

/// Correlation of a replicate-padded map with a 3×3 kernel by direct loops.
pub fn sobel_oracle(x: &Tensor<f64>, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let d = x.dims();
    let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
    let mut out = vec![0.0; x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let mut acc = 0.0;
                    for (i, row) in k.iter().enumerate() {
                        for (j, &kij) in row.iter().enumerate() {
                            let rr = (r as isize + i as isize - 1).clamp(0, h as isize - 1) as usize;
                            let cc = (col as isize + j as isize - 1).clamp(0, w as isize - 1) as usize;
                            acc += kij * at(x, &[ni, ci, rr, cc]);
                        }
                    }
                    out[((ni * c + ci) * h + r) * w + col] = acc;
                }
            }
        }
    }
    out
}

/// Mean nearest-neighbour distances between the two boundary sets by
/// comparing every pair.
pub fn hausdorff_oracle(a: &[bool], b: &[bool], h: usize, w: usize) -> f64 {
    let pts = |m: &[bool]| -> Vec<(f64, f64)> {
        inner_boundary(m, h, w)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
            .collect()
    };
    let (pa, pb) = (pts(a), pts(b));
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).fold(f64::MAX, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (directed(&pa, &pb) + directed(&pb, &pa))
}
