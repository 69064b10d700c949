//! Fast paths checked against direct loop implementations.

use cto_tensor::{concat_channels, conv2d, matmul, PadMode, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), dims).unwrap()
}

/// Six nested loops over (n, o, y, x, c, i, j) with explicit zero padding.
#[allow(clippy::too_many_arguments)]
fn conv_reference(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (cin_g, cout_g) = (cin / groups, cout / groups);
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            let g = o / cout_g;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for c in 0..cin_g {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let ci = g * cin_g + c;
                                acc += k[((o * cin_g + c) * kh + i) * kw + j]
                                    * x[((b * cin + ci) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[1, 2, 5, 5]);
    let k = random(&mut rng, &[3, 2, 3, 3]);
    let y = conv2d(&x, &k, None, 1, 1, 1).unwrap();
    let expect = conv_reference(x.data(), (1, 2, 5, 5), k.data(), (3, 3, 3), None, 1, 1, 1);
    assert_eq!(y.dims(), &[1, 3, 5, 5]);
    assert!(max_abs_diff(y.data(), &expect) < 1e-6);
}

#[test]
fn conv2d_variants_match_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // (n, cin, h, w, cout, kh, kw, stride, pad, groups)
    let cases = [
        (2, 4, 7, 6, 6, 3, 3, 2, 1, 2),
        (1, 3, 8, 8, 3, 3, 3, 1, 1, 3),
        (2, 5, 4, 4, 7, 1, 1, 1, 0, 1),
        (1, 3, 9, 9, 4, 7, 7, 2, 3, 1),
        (3, 2, 6, 5, 2, 2, 3, 1, 0, 1),
    ];
    for (n, cin, h, w, cout, kh, kw, stride, pad, groups) in cases {
        let x = random(&mut rng, &[n, cin, h, w]);
        let k = random(&mut rng, &[cout, cin / groups, kh, kw]);
        let b = random(&mut rng, &[cout]);
        let y = conv2d(&x, &k, Some(&b), stride, pad, groups).unwrap();
        let expect = conv_reference(
            x.data(),
            (n, cin, h, w),
            k.data(),
            (cout, kh, kw),
            Some(b.data()),
            stride,
            pad,
            groups,
        );
        assert!(max_abs_diff(y.data(), &expect) < 1e-12);
    }
}

#[test]
fn depthwise_identity_kernels_reproduce_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 4, 6, 6]);
    let mut k = vec![0.0; 4 * 9];
    for c in 0..4 {
        k[c * 9 + 4] = 1.0;
    }
    let k = Tensor::new(k, &[4, 1, 3, 3]).unwrap();
    let y = conv2d(&x, &k, None, 1, 1, 4).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[4, 5]);
    let b = random(&mut rng, &[5, 6]);
    let c = matmul(&a, &b).unwrap();
    let mut expect = vec![0.0; 24];
    for i in 0..4 {
        for j in 0..6 {
            for p in 0..5 {
                expect[i * 6 + j] += a.data()[i * 5 + p] * b.data()[p * 6 + j];
            }
        }
    }
    assert!(max_abs_diff(c.data(), &expect) < 1e-6);
}

#[test]
fn bilinear_matches_closed_form() {
    let x = Tensor::<f64>::new(vec![0., 1., 2., 3.], &[1, 1, 2, 2]).unwrap();
    let y = x.upsample_bilinear(4, 4).unwrap();
    // Half-pixel source coordinate, clamped at the low edge; separable weights.
    let src = |o: usize| (((o as f64) + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    let value = |r: f64, c: f64| {
        let v = [[0.0, 1.0], [2.0, 3.0]];
        (1.0 - r) * ((1.0 - c) * v[0][0] + c * v[0][1]) + r * ((1.0 - c) * v[1][0] + c * v[1][1])
    };
    for oy in 0..4 {
        for ox in 0..4 {
            let expect = value(src(oy), src(ox));
            assert!(
                (y.data()[oy * 4 + ox] - expect).abs() < 1e-12,
                "({oy},{ox})"
            );
        }
    }
    assert_eq!(y.data()[0], 0.0);
    assert_eq!(y.data()[15], 3.0);
}

#[test]
fn reflect_pad_then_crop_recovers_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[1, 2, 5, 7]);
    let p = x.pad2d((3, 4, 2, 5), PadMode::Reflect).unwrap();
    assert_eq!(p.dims(), &[1, 2, 12, 14]);
    assert_eq!(p.crop2d(3, 2, 5, 7).unwrap().data(), x.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subsample_phases_partition_the_grid(s in prop::sample::select(vec![1usize, 2, 4]), hm in 1usize..4, wm in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 2, s * hm, s * wm]);
        let mut gathered: Vec<u64> = Vec::new();
        for a in 1..=s {
            for b in 1..=s {
                gathered.extend(x.strided_subsample(s, a, b).unwrap().data().iter().map(|v| v.to_bits()));
            }
        }
        let mut all: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        gathered.sort_unstable();
        all.sort_unstable();
        prop_assert_eq!(gathered, all);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(rows in 1usize..5, cols in 1usize..9, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[rows, cols]).scale(10.0);
        let y = x.softmax_lastdim();
        for row in y.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let shifted = x.add_scalar(shift).softmax_lastdim();
        prop_assert!(max_abs_diff(y.data(), shifted.data()) < 1e-6);
    }

    #[test]
    fn concat_slice_round_trip(c1 in 1usize..4, c2 in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, c1, 3, 3]);
        let b = random(&mut rng, &[2, c2, 3, 3]);
        let c = concat_channels(&[&a, &b]).unwrap();
        prop_assert_eq!(c.slice_channels(0, c1).unwrap().to_vec(), a.to_vec());
        prop_assert_eq!(c.slice_channels(c1, c2).unwrap().to_vec(), b.to_vec());
    }
}
