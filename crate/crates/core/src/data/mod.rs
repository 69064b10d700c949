//! Synthetic corpus, on-disk format and batching.

pub mod dataset;
pub mod pnm;
pub mod synth;

pub use dataset::{
    hard_labels, image_tensor, kfold_split, load_pairs, targets, train_indices, Augment, Dataset,
    Manifest, Sample,
};
pub use synth::{synth_generate, ShapeKinds, SynthSpec};
