//! Dice, IoU and average Hausdorff distance for a predicted square that
//! is shifted against the ground truth.
//!
//! `cargo run --release -p cto-core --example segmentation_metrics`

use cto_core::metrics::{avg_hausdorff, dice, iou};

fn square(h: usize, w: usize, top: usize, left: usize, side: usize) -> Vec<bool> {
    (0..h * w)
        .map(|i| (top..top + side).contains(&(i / w)) && (left..left + side).contains(&(i % w)))
        .collect()
}

fn main() {
    let (h, w) = (32, 32);
    let gt = square(h, w, 8, 8, 12);
    for shift in [0, 1, 2, 4, 8] {
        let pred = square(h, w, 8, 8 + shift, 12);
        println!(
            "shift {shift}: dice {:.4}  iou {:.4}  avg_hd {:.3}",
            dice(&pred, &gt),
            iou(&pred, &gt),
            avg_hausdorff(&pred, &gt, h, w)
        );
    }
}
