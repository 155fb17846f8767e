//! Sample preparation and resampling.

mod image;
pub mod manifest;
mod ops;
mod sample;
mod sampling;

pub use self::image::Image;
pub use ops::{
    augment, augment_with, crop_resize, hist_equalize, level_cdf, pseudo_colour, split_stereo,
    AugmentParams, AugmentationSpec, BBox, StereoFrame,
};
pub use sample::{BispectralSample, Farm, Label, LabeledDataset, SAMPLE_SIZE};
pub use sampling::{
    bootstrap_indices, bootstrap_subset, random_oversample, random_oversample_indices,
    stratified_split, stratified_split_indices, DatasetSplit, SplitIndices, DEFAULT_SPLIT_RATIOS,
};
