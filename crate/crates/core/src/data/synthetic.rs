//! Parametric stand-in for real skeleton corpora.
//!
//! Joints are split into contiguous groups ("limbs"). Every class assigns
//! each limb its own oscillation frequency, phase, amplitude and direction;
//! a sequence is the rest pose plus those oscillations, seen from one of a
//! few camera views, with per-sequence timing and scale jitter and i.i.d.
//! Gaussian coordinate noise.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::sampling::{apply_rotation, rotation_xyz, EulerAngles};
use super::sequence::SkeletonSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub joints: usize,
    /// Raw frame count of every generated sequence.
    pub frames: usize,
    /// Standard deviation of coordinate noise, in meters.
    pub noise: f64,
    pub seed: u64,
    /// Fraction of each class assigned to the test split.
    pub test_fraction: f64,
    pub limbs: usize,
    pub subjects: u32,
    pub views: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 125,
            joints: 15,
            frames: 45,
            noise: 0.01,
            seed: 0,
            test_fraction: 0.2,
            limbs: 5,
            subjects: 10,
            views: 3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.per_class == 0 || self.joints < 2 || self.frames < 2 {
            return Err(Error::Config(
                "synthetic data needs per_class >= 1, joints >= 2, frames >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must be in [0, 1)".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config("noise must be finite and >= 0".into()));
        }
        if self.limbs == 0 || self.subjects == 0 || self.views == 0 {
            return Err(Error::Config("limbs, subjects and views must be >= 1".into()));
        }
        Ok(())
    }

    fn limb_of(&self, joint: usize) -> usize {
        joint * self.limbs.min(self.joints) / self.joints
    }
}

#[derive(Debug, Clone)]
struct LimbMotion {
    /// Cycles over the whole sequence.
    cycles: f64,
    phase: f64,
    amplitude: f64,
    axis: [f64; 3],
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: [f64; 3] = [n.sample(rng), n.sample(rng), n.sample(rng)];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 1e-6 {
            return [v[0] / len, v[1] / len, v[2] / len];
        }
    }
}

/// Generates a labelled dataset; a pure function of `spec`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let limbs = spec.limbs.min(spec.joints);

    // rest pose: each limb is a short chain hanging off a random root
    let mut rest = vec![[0.0f64; 3]; spec.joints];
    let roots: Vec<[f64; 3]> = (0..limbs)
        .map(|_| {
            [
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.1..0.1),
            ]
        })
        .collect();
    let dirs: Vec<[f64; 3]> = (0..limbs).map(|_| unit_vector(&mut rng)).collect();
    let mut depth = vec![0usize; spec.joints];
    let mut seen = vec![0usize; limbs];
    for v in 0..spec.joints {
        let g = spec.limb_of(v);
        depth[v] = seen[g];
        seen[g] += 1;
        for k in 0..3 {
            rest[v][k] = roots[g][k] + 0.12 * depth[v] as f64 * dirs[g][k];
        }
    }
    let limb_size = seen;

    let classes: Vec<Vec<LimbMotion>> = (0..spec.classes)
        .map(|_| {
            (0..limbs)
                .map(|_| LimbMotion {
                    cycles: rng.random_range(0.5..3.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amplitude: rng.random_range(0.05..0.25),
                    axis: unit_vector(&mut rng),
                })
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("noise sigma is finite");
    let test_per_class = (spec.per_class as f64 * spec.test_fraction).round() as usize;
    let train_per_class = spec.per_class - test_per_class;
    let mut entries = Vec::with_capacity(spec.classes * spec.per_class);
    for (label, motions) in classes.iter().enumerate() {
        for i in 0..spec.per_class {
            let subject = (i as u32) % spec.subjects;
            let view = rng.random_range(0..spec.views);
            let offset = rng.random_range(0.0..2.0 * PI);
            let tempo = rng.random_range(0.9..1.1);
            let scale = rng.random_range(0.9..1.1);
            let gain = rng.random_range(0.8..1.2);
            let mut frames = Array3::<f32>::zeros((spec.frames, spec.joints, 3));
            for t in 0..spec.frames {
                let s = t as f64 / spec.frames as f64;
                for v in 0..spec.joints {
                    let g = spec.limb_of(v);
                    let m = &motions[g];
                    let reach = (depth[v] + 1) as f64 / limb_size[g] as f64;
                    let lag = 0.3 * depth[v] as f64;
                    let wave = (2.0 * PI * m.cycles * tempo * s + m.phase + offset - lag).sin();
                    for k in 0..3 {
                        let x = scale * rest[v][k]
                            + gain * reach * m.amplitude * wave * m.axis[k]
                            + noise.sample(&mut rng);
                        frames[[t, v, k]] = x as f32;
                    }
                }
            }
            let yaw = (f64::from(view) - f64::from(spec.views - 1) / 2.0) * PI / 6.0;
            let seq = SkeletonSequence::new(frames)?;
            let mut seq = apply_rotation(
                &seq,
                &rotation_xyz(EulerAngles {
                    x: 0.0,
                    y: yaw,
                    z: 0.0,
                }),
            );
            seq.label = Some(label);
            seq.subject_id = Some(subject);
            seq.view_id = Some(view);
            let split = if i < train_per_class {
                Split::Train
            } else {
                Split::Test
            };
            entries.push((format!("c{label:02}_s{i:04}"), split, seq));
        }
    }
    let class_names = (0..spec.classes).map(|c| format!("class_{c:02}")).collect();
    Dataset::from_sequences(format!("synthetic-{}", spec.seed), class_names, entries)
}
