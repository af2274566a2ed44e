//! Skeleton sequences: containers, sampling, augmentation and motion.

mod dataset;
mod sampling;
mod sequence;
mod synthetic;

pub use dataset::{
    load_dataset, Dataset, DatasetManifest, SequenceRecord, Split, DATA_FILE, FORMAT_VERSION,
    MANIFEST_FILE,
};
pub use sampling::{
    apply_rotation, random_rotation, rotation_xyz, rotation_zyx, sample_indices, uniform_sample,
    EulerAngles, Mat3, SampleMode,
};
pub use sequence::{
    compute_motion, segment, MotionSequence, SegmentedSequence, SkeletonSequence, CHANNELS,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
