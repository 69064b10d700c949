//! Loss identities and hard-mask metrics against direct computations.

mod common;

use common::hausdorff_oracle;

use cto_core::loss::{boundary_gt, ce_loss, dice_loss, miou_loss, probabilities, total_loss, LossConfig, Targets};
use cto_core::metrics::{avg_hausdorff, dice, iou, score_labels, MetricsSummary};
use cto_core::model::ModelOutputs;
use cto_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(data: Vec<f64>, dims: &[usize]) -> Tensor<f64> {
    Tensor::new(data, dims).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    t((0..n).map(|_| rng.gen_range(0.01..0.99)).collect(), dims)
}

fn random_mask(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    t((0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect(), dims)
}

#[test]
fn binary_ce_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = [2, 1, 3, 5];
    let p = random_probs(&mut rng, &dims);
    let y = random_mask(&mut rng, &dims);
    let want: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 30.0;
    let got = ce_loss(&p, &y).unwrap().item();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn categorical_ce_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, k, h, w) = (2, 3, 2, 4);
    let logits = random_probs(&mut rng, &[n, k, h, w]).scale(6.0);
    let p = probabilities(&logits).unwrap();
    let mut onehot = vec![0.0; n * k * h * w];
    let mut want = 0.0;
    for ni in 0..n {
        for pix in 0..h * w {
            let label = rng.gen_range(0..k);
            onehot[(ni * k + label) * h * w + pix] = 1.0;
            let z: Vec<f64> = (0..k).map(|c| logits.data()[(ni * k + c) * h * w + pix]).collect();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - z[label];
        }
    }
    want /= (n * h * w) as f64;
    let got = ce_loss(&p, &t(onehot, &[n, k, h, w])).unwrap().item();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn perfect_and_disjoint_predictions() {
    let y = t(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0], &[1, 1, 2, 3]);
    assert!(ce_loss(&y, &y).unwrap().item() <= 1e-6);
    assert!(miou_loss(&y, &y).unwrap().item().abs() < 1e-5);
    assert!(dice_loss(&y, &y).unwrap().item().abs() < 1e-5);
    let opposite = y.one_minus();
    assert!((miou_loss(&opposite, &y).unwrap().item() - 1.0).abs() < 1e-5);
    assert!((dice_loss(&opposite, &y).unwrap().item() - 1.0).abs() < 1e-5);

    // One-hot two-class case averages the per-class losses.
    let two = t(vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0], &[1, 2, 2, 2]);
    assert!(miou_loss(&two, &two).unwrap().item().abs() < 1e-5);
    let swapped = t(vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[1, 2, 2, 2]);
    assert!((dice_loss(&swapped, &two).unwrap().item() - 1.0).abs() < 1e-5);
}

#[test]
fn overlap_losses_match_soft_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_probs(&mut rng, &[1, 1, 4, 4]);
    let y = random_mask(&mut rng, &[1, 1, 4, 4]);
    let inter: f64 = p.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let sp: f64 = p.data().iter().sum();
    let sy: f64 = y.data().iter().sum();
    let s = cto_core::loss::SMOOTH;
    let miou = 1.0 - (inter + s) / (sp + sy - inter + s);
    let dl = 1.0 - (2.0 * inter + s) / (sp + sy + s);
    assert!((miou_loss(&p, &y).unwrap().item() - miou).abs() < 1e-12);
    assert!((dice_loss(&p, &y).unwrap().item() - dl).abs() < 1e-12);
}

fn outputs(rng: &mut ChaCha8Rng, boundary: bool) -> (ModelOutputs<f64>, Targets<f64>) {
    let seg_logits = (0..3).map(|_| random_probs(rng, &[2, 1, 8, 8]).scale(4.0).add_scalar(-2.0)).collect();
    let boundary_logits = boundary.then(|| random_probs(rng, &[2, 1, 2, 2]).scale(4.0).add_scalar(-2.0));
    let targets = Targets {
        seg: random_mask(rng, &[2, 1, 8, 8]),
        boundary: random_mask(rng, &[2, 1, 2, 2]),
    };
    (
        ModelOutputs {
            seg_logits,
            boundary_logits,
        },
        targets,
    )
}

#[test]
fn total_loss_is_linear_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (out, y) = outputs(&mut rng, true);
    let cfg = LossConfig::for_classes(1, 3.0, 3);
    assert_eq!((cfg.alpha, cfg.levels), (3.0, 3));
    let (_, base) = total_loss(&out, &y, &LossConfig { alpha: 0.0, ..cfg.clone() }).unwrap();
    let d = base.boundary_dice.unwrap();
    for alpha in [0.5, 1.0, 3.0, 7.25] {
        let (loss, b) = total_loss(&out, &y, &LossConfig { alpha, ..cfg.clone() }).unwrap();
        assert!((b.total - (base.total + alpha * d)).abs() < 1e-12);
        assert!((b.boundary_term - alpha * d).abs() < 1e-12);
        assert_eq!(loss.item(), b.total);
        let seg: f64 = b.ce.iter().chain(&b.miou).sum();
        assert!((b.total - seg - b.boundary_term).abs() < 1e-12);
        assert_eq!(b.ce.len(), 3);
    }
}

#[test]
fn total_loss_without_boundary_head_and_level_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (out, y) = outputs(&mut rng, false);
    let (_, b) = total_loss(&out, &y, &LossConfig::for_classes(1, 3.0, 3)).unwrap();
    assert_eq!(b.boundary_dice, None);
    assert_eq!(b.boundary_term, 0.0);
    assert!(total_loss(&out, &y, &LossConfig::for_classes(1, 3.0, 2)).is_err());
}

/// Boundary ground truth by scanning each pixel's cross neighbourhood.
fn boundary_oracle(mask: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0; h * w];
    for r in 0..h {
        for c in 0..w {
            let me = mask[r * w + c] != 0;
            let mut differs = false;
            for (dr, dc) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                let nb = rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && mask[rr as usize * w + cc as usize] != 0;
                differs |= nb != me;
            }
            out[r * w + c] = u8::from(differs);
        }
    }
    out
}

#[test]
fn boundary_of_centered_square() {
    let (h, w) = (8, 8);
    let mut mask = vec![0u8; 64];
    for r in 2..6 {
        for c in 2..6 {
            mask[r * w + c] = 1;
        }
    }
    let b = boundary_gt(&mask, h, w);
    assert_eq!(b, boundary_oracle(&mask, h, w));
    // Inner ring of the square plus the outer 4-neighbour ring.
    assert_eq!(b.iter().filter(|&&v| v == 1).count(), 12 + 16);
    assert_eq!(b[3 * w + 3], 0);
    assert_eq!(b[2 * w + 2], 1);
    assert_eq!(b[w + 2], 1);
    assert_eq!(b[w + 1], 0, "diagonal neighbours are not part of the cross");
}

proptest! {
    #[test]
    fn boundary_matches_neighbourhood_scan(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<u8> = (0..h * w).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        prop_assert_eq!(boundary_gt(&mask, h, w), boundary_oracle(&mask, h, w));
    }

    #[test]
    fn dice_dominates_iou(h in 1usize..12, w in 1usize..12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
        let (d, j) = (dice(&a, &b), iou(&a, &b));
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        prop_assert!(d >= j);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_is_symmetric_and_matches_all_pairs(h in 1usize..14, w in 1usize..14, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
        let ab = avg_hausdorff(&a, &b, h, w);
        let ba = avg_hausdorff(&b, &a, h, w);
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        let want = hausdorff_oracle(&a, &b, h, w);
        if want.is_finite() {
            prop_assert!((ab - want).abs() < 1e-9, "{} vs {}", ab, want);
        } else {
            prop_assert_eq!(ab, want);
        }
        prop_assert_eq!(avg_hausdorff(&a, &a, h, w), 0.0);
    }
}

#[test]
fn hausdorff_of_single_pixels_five_apart() {
    let (h, w) = (9, 12);
    let mut a = vec![false; h * w];
    let mut b = vec![false; h * w];
    a[4 * w + 2] = true;
    b[4 * w + 7] = true;
    assert_eq!(avg_hausdorff(&a, &b, h, w), 5.0);
    let mut c = vec![false; h * w];
    c[w + 3] = true;
    // 3-4-5 triangle.
    let mut d = vec![false; h * w];
    d[5 * w + 6] = true;
    assert_eq!(avg_hausdorff(&c, &d, h, w), 5.0);
}

#[test]
fn hausdorff_empty_cases() {
    let empty = vec![false; 16];
    let mut one = vec![false; 16];
    one[5] = true;
    assert_eq!(avg_hausdorff(&empty, &empty, 4, 4), 0.0);
    assert_eq!(avg_hausdorff(&empty, &one, 4, 4), f64::INFINITY);
}

#[test]
fn dice_iou_edge_cases() {
    assert_eq!(dice(&[false; 4], &[false; 4]), 1.0);
    assert_eq!(iou(&[false; 4], &[false; 4]), 1.0);
    assert_eq!(dice(&[true, false], &[false, true]), 0.0);
    assert_eq!(dice(&[true, true, false], &[true, false, false]), 2.0 / 3.0);
    assert_eq!(iou(&[true, true, false], &[true, false, false]), 0.5);
}

#[test]
fn summary_of_an_empty_predictor_reports_undefined_distance() {
    let gt: Vec<u8> = (0..16).map(|i| u8::from(i % 5 == 0)).collect();
    let mut s = MetricsSummary::new();
    s.push(score_labels(&[0; 16], &gt, 4, 4, 2));
    s.push(score_labels(&[0; 16], &gt, 4, 4, 2));
    assert_eq!(s.dice(), 0.0);
    assert_eq!(s.avg_hd(), None);
    let j = s.to_json();
    assert_eq!(j["avg_hd"], "undefined");
    assert_eq!(j["avg_hd_undefined"], 2);
    assert_eq!(j["n_images"], 2);
}

#[test]
fn multiclass_scores_cover_each_foreground_class() {
    let gt = [0u8, 1, 1, 2, 2, 0];
    let pred = [0u8, 1, 2, 2, 2, 0];
    let scores = score_labels(&pred, &gt, 2, 3, 3);
    assert_eq!(scores.len(), 2);
    assert_eq!(scores[0].dice, 2.0 / 3.0);
    assert_eq!(scores[1].dice, 0.8);
}
