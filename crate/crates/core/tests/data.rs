//! Corpus generation, on-disk round trips, folds and augmentation.

use std::path::Path;

use cto_core::data::pnm::{self, PnmKind};
use cto_core::data::{
    hard_labels, image_tensor, kfold_split, load_pairs, synth_generate, targets, train_indices, Augment, Dataset,
    Manifest, Sample, ShapeKinds, SynthSpec,
};
use cto_core::error::CtoError;
use cto_tensor::Tensor;
use proptest::prelude::*;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_images: 6,
        height: 32,
        width: 32,
        seed,
        ..SynthSpec::default()
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "masks"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn corpus_bytes_are_a_function_of_spec_and_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_generate(&small_spec(3), a.path()).unwrap();
    synth_generate(&small_spec(3), b.path()).unwrap();
    synth_generate(&small_spec(4), c.path()).unwrap();
    let (ta, tb, tc) = (read_tree(a.path()), read_tree(b.path()), read_tree(c.path()));
    assert_eq!(ta.len(), 2 + 2 * 6);
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn written_corpus_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        classes: 3,
        kinds: ShapeKinds::Blob,
        ..small_spec(8)
    };
    let manifest = synth_generate(&spec, dir.path()).unwrap();
    assert_eq!(manifest.seed, Some(8));
    assert_eq!(manifest.spec_hash.as_deref(), Some(spec.hash().as_str()));
    let data = load_pairs(dir.path()).unwrap();
    let memory: Vec<Sample> = spec.generate().unwrap().into_iter().map(|g| g.sample).collect();
    assert_eq!(data.samples, memory);
    assert_eq!(std::fs::read_to_string(dir.path().join("spec.txt")).unwrap(), spec.to_kv());
    assert!(data.samples.iter().any(|s| s.max_label() == 2));
    data.check_labels(3).unwrap();
    let err = data.check_labels(2).unwrap_err().to_string();
    assert!(err.contains("label 2"), "{err}");
}

#[test]
fn every_mask_has_foreground_and_background() {
    for g in SynthSpec::default().generate().unwrap().iter().take(50) {
        let fg = g.sample.mask.iter().filter(|&&v| v != 0).count();
        assert!(fg > 0 && fg < g.sample.mask.len(), "{}", g.sample.id);
    }
}

#[test]
fn empty_manifest_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.tsv"), "# seed=1\n\n").unwrap();
    let data = load_pairs(dir.path()).unwrap();
    assert!(data.is_empty());
}

#[test]
fn malformed_manifest_line_reports_its_offset() {
    let err = Manifest::parse("a\tb\tc\nbroken line\n", "m.tsv").unwrap_err();
    match err {
        CtoError::Format { offset, .. } => assert_eq!(offset, 6),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn truncated_pgm_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(&small_spec(1), dir.path()).unwrap();
    let mask = dir.path().join("masks/synth_00002.pgm");
    let bytes = std::fs::read(&mask).unwrap();
    std::fs::write(&mask, &bytes[..bytes.len() - 7]).unwrap();
    let err = load_pairs(dir.path()).unwrap_err();
    assert!(matches!(err, CtoError::Format { .. }), "{err}");
    assert!(err.to_string().contains("synth_00002.pgm"), "{err}");
}

#[test]
fn size_mismatch_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(&small_spec(1), dir.path()).unwrap();
    pnm::write(&dir.path().join("masks/synth_00004.pgm"), PnmKind::Gray, 16, 32, &[0; 512]).unwrap();
    let err = load_pairs(dir.path()).unwrap_err().to_string();
    assert!(err.contains("synth_00004"), "{err}");
}

#[test]
fn pnm_round_trip_with_comments() {
    let data: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
    let bytes = pnm::encode(PnmKind::Rgb, 3, 2, &data);
    let back = pnm::decode(&bytes, "x").unwrap();
    assert_eq!((back.width, back.height, back.data.clone()), (3, 2, data.clone()));
    let mut commented = b"P6\n# made by hand\n3 2\n255\n".to_vec();
    commented.extend_from_slice(&data);
    assert_eq!(pnm::decode(&commented, "y").unwrap().data, data);
    assert!(pnm::decode(b"P3\n1 1\n255\n", "z").is_err());
}

proptest! {
    #[test]
    fn folds_partition_the_indices(n in 1usize..200, k in 1usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let train = train_indices(&folds, f);
            prop_assert_eq!(train.len() + folds[f].len(), n);
            prop_assert!(train.iter().all(|i| !folds[f].contains(i)));
        }
        prop_assert_eq!(&folds, &kfold_split(n, k, seed).unwrap());
    }

    #[test]
    fn augmentation_moves_image_and_mask_together(
        hflip in any::<bool>(), vflip in any::<bool>(), turns in 0u8..4, seed in 0u64..50,
    ) {
        let g = SynthSpec { n_images: 1, height: 32, width: 32, seed, ..SynthSpec::default() }.generate_one(0);
        let s = &g.sample;
        let aug = Augment { hflip, vflip, quarter_turns: turns };
        let img = aug.apply(&s.image, 32, 32, 3);
        let mask = aug.apply(&s.mask, 32, 32, 1);
        // Each output pixel's colour and label come from the same source pixel.
        let tagged: Vec<u32> = (0..32 * 32).map(|i| i as u32).collect();
        let src = aug.apply(&tagged, 32, 32, 1);
        for (o, &i) in src.iter().enumerate() {
            let i = i as usize;
            prop_assert_eq!(mask[o], s.mask[i]);
            prop_assert_eq!(&img[o * 3..o * 3 + 3], &s.image[i * 3..i * 3 + 3]);
        }
        let mut sorted = src.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, tagged, "augmentation is a permutation");
    }
}

#[test]
fn flips_are_involutions_and_four_turns_are_identity() {
    let px: Vec<u16> = (0..36).collect();
    let h = Augment { hflip: true, ..Augment::default() };
    assert_eq!(h.apply(&h.apply(&px, 6, 6, 1), 6, 6, 1), px);
    let turn = Augment { quarter_turns: 1, ..Augment::default() };
    let mut x = px.clone();
    for _ in 0..4 {
        x = turn.apply(&x, 6, 6, 1);
    }
    assert_eq!(x, px);
    assert_ne!(turn.apply(&px, 6, 6, 1), px);
}

#[test]
fn batch_tensors_have_expected_layout() {
    let spec = small_spec(2);
    let samples: Vec<Sample> = spec.generate().unwrap().into_iter().map(|g| g.sample).collect();
    let refs: Vec<&Sample> = samples.iter().take(3).collect();
    let x = image_tensor::<f32>(&refs, &[]).unwrap();
    assert_eq!(x.dims(), &[3, 3, 32, 32]);
    assert_eq!(x.data()[32 * 32], f32::from(samples[0].image[1]) / 255.0);
    let y = targets::<f32>(&refs, &[], 2).unwrap();
    assert_eq!(y.seg.dims(), &[3, 2, 32, 32]);
    assert_eq!(y.boundary.dims(), &[3, 1, 8, 8]);
    for p in 0..32 * 32 {
        assert_eq!(y.seg.data()[p] + y.seg.data()[32 * 32 + p], 1.0);
    }
    let binary = targets::<f32>(&refs, &[], 1).unwrap();
    assert_eq!(binary.seg.dims(), &[3, 1, 32, 32]);

    let odd = Sample::new("odd".into(), 16, 32, vec![0; 16 * 32 * 3], vec![0; 16 * 32]);
    let err = image_tensor::<f32>(&[refs[0], &odd], &[]).unwrap_err().to_string();
    assert!(err.contains("odd"), "{err}");
}

#[test]
fn hard_labels_threshold_and_argmax() {
    let one = Tensor::<f32>::new(vec![-0.1, 0.0, 0.2, 3.0], &[1, 1, 2, 2]).unwrap();
    assert_eq!(hard_labels(&one).unwrap(), vec![vec![0, 0, 1, 1]]);
    let three = Tensor::<f32>::new(vec![1.0, 0.0, 0.0, 5.0, 2.0, 2.0], &[1, 3, 1, 2]).unwrap();
    assert_eq!(hard_labels(&three).unwrap(), vec![vec![2, 1]]);
}

#[test]
fn dataset_subset_preserves_order() {
    let samples: Vec<Sample> = small_spec(0).generate().unwrap().into_iter().map(|g| g.sample).collect();
    let data = Dataset {
        samples,
        ..Dataset::default()
    };
    let ids: Vec<&str> = data.subset(&[4, 1]).iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["synth_00004", "synth_00001"]);
}
