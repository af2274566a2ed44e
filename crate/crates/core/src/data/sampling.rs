use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sequence::SkeletonSequence;

/// How [`uniform_sample`] picks a frame inside each bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// A uniformly random frame from each bin.
    Train,
    /// The frame under each bin's center.
    Test,
}

/// Source frame indices chosen by [`uniform_sample`].
///
/// The source is split into `target` equal bins over `[0, len)`. Bin `i`
/// covers the real interval `[i*len/target, (i+1)*len/target)`; the chosen
/// frame is the floor of a point inside it (its center in test mode). When
/// `len < target` neighbouring bins can land on the same frame.
pub fn sample_indices<R: Rng + ?Sized>(
    len: usize,
    target: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Vec<usize> {
    assert!(len >= 1 && target >= 1, "uniform sampling needs non-empty input and output");
    (0..target)
        .map(|i| match mode {
            SampleMode::Test => (2 * i + 1) * len / (2 * target),
            SampleMode::Train => {
                let u: f64 = rng.random();
                let pos = (i as f64 + u) * len as f64 / target as f64;
                (pos.floor() as usize).min(len - 1)
            }
        })
        .collect()
}

/// Resamples `seq` to exactly `target` frames in non-decreasing source order.
pub fn uniform_sample<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    target: usize,
    mode: SampleMode,
    rng: &mut R,
) -> SkeletonSequence {
    let idx = sample_indices(seq.len(), target, mode, rng);
    seq.with_frames(seq.frames.select(Axis(0), &idx))
}

/// Rotation angles about the x, y and z axes, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerAngles {
    pub fn negated(self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// `Rx * Ry * Rz`.
pub fn rotation_xyz(angles: EulerAngles) -> Mat3 {
    mat_mul(&mat_mul(&rot_x(angles.x), &rot_y(angles.y)), &rot_z(angles.z))
}

/// `Rz * Ry * Rx`, which undoes [`rotation_xyz`] when given negated angles.
pub fn rotation_zyx(angles: EulerAngles) -> Mat3 {
    mat_mul(&mat_mul(&rot_z(angles.z), &rot_y(angles.y)), &rot_x(angles.x))
}

/// Applies `r` to every joint of every frame.
pub fn apply_rotation(seq: &SkeletonSequence, r: &Mat3) -> SkeletonSequence {
    let mut out: Array3<f32> = seq.frames.clone();
    for mut joint in out.lanes_mut(Axis(2)) {
        let p = [f64::from(joint[0]), f64::from(joint[1]), f64::from(joint[2])];
        for (k, row) in r.iter().enumerate() {
            joint[k] = (row[0] * p[0] + row[1] * p[1] + row[2] * p[2]) as f32;
        }
    }
    seq.with_frames(out)
}

/// Rotates the whole sequence by one random rotation with each Euler angle
/// drawn from `[-max_angle, max_angle]`.
pub fn random_rotation<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    max_angle: f64,
    rng: &mut R,
) -> SkeletonSequence {
    if max_angle <= 0.0 {
        return seq.clone();
    }
    let mut draw = || rng.random_range(-max_angle..=max_angle);
    let angles = EulerAngles {
        x: draw(),
        y: draw(),
        z: draw(),
    };
    apply_rotation(seq, &rotation_xyz(angles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(len: usize) -> SkeletonSequence {
        let frames = Array::from_shape_fn((len, 2, 3), |(t, v, c)| (t * 6 + v * 3 + c) as f32);
        SkeletonSequence::new(frames).unwrap()
    }

    fn frame_ids(seq: &SkeletonSequence) -> Vec<usize> {
        (0..seq.len()).map(|t| seq.frames[[t, 0, 0]] as usize / 6).collect()
    }

    #[test]
    fn test_mode_same_length_is_identity() {
        let seq = ramp(90);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(uniform_sample(&seq, 90, SampleMode::Test, &mut rng), seq);
    }

    #[test]
    fn train_mode_is_ordered_and_within_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let out = uniform_sample(&ramp(300), 90, SampleMode::Train, &mut rng);
            let ids = frame_ids(&out);
            assert_eq!(ids.len(), 90);
            assert!(ids.windows(2).all(|w| w[0] <= w[1]));
            for (i, &f) in ids.iter().enumerate() {
                // bin i of 300 -> 90 spans [10i/3, 10(i+1)/3)
                assert!(3 * f + 3 > 10 * i && 3 * f < 10 * (i + 1), "bin {i} got {f}");
            }
        }
    }

    #[test]
    fn test_mode_matches_bin_center_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let len = rng.random_range(1..400usize);
            let target = rng.random_range(1..120usize);
            let got = sample_indices(len, target, SampleMode::Test, &mut rng);
            for (i, &g) in got.iter().enumerate() {
                // the frame f whose unit cell [f, f+1) contains the bin center
                // (2i+1)*len / (2*target), found by scanning every frame
                let f = (0..len)
                    .find(|&f| {
                        f * 2 * target <= (2 * i + 1) * len
                            && (2 * i + 1) * len < (f + 1) * 2 * target
                    })
                    .unwrap();
                assert_eq!(g, f, "len {len} target {target} bin {i}");
            }
        }
    }

    #[test]
    fn short_sources_repeat_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = uniform_sample(&ramp(4), 10, SampleMode::Train, &mut rng);
        let ids = frame_ids(&out);
        assert_eq!(ids.len(), 10);
        assert!(ids.windows(2).all(|w| w[0] <= w[1]));
        assert!(ids.iter().all(|&f| f < 4));
    }

    #[test]
    fn train_mode_is_seed_deterministic() {
        let seq = ramp(137);
        let a = uniform_sample(&seq, 30, SampleMode::Train, &mut ChaCha8Rng::seed_from_u64(9));
        let b = uniform_sample(&seq, 30, SampleMode::Train, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    fn random_seq(seed: u64) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Array::from_shape_fn((8, 6, 3), |_| rng.random_range(-1.5f32..1.5));
        SkeletonSequence::new(frames).unwrap()
    }

    #[test]
    fn zero_angle_is_bit_exact() {
        let seq = random_seq(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_rotation(&seq, 0.0, &mut rng), seq);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let seq = random_seq(seed);
            let out = random_rotation(&seq, std::f64::consts::PI, &mut rng);
            for t in 0..seq.len() {
                for a in 0..seq.joints() {
                    for b in (a + 1)..seq.joints() {
                        let d = |f: &Array3<f32>| {
                            (0..3)
                                .map(|c| f64::from(f[[t, a, c]] - f[[t, b, c]]).powi(2))
                                .sum::<f64>()
                                .sqrt()
                        };
                        let (d0, d1) = (d(&seq.frames), d(&out.frames));
                        assert!((d0 - d1).abs() <= 1e-5 * d0.max(1e-6), "{d0} vs {d1}");
                    }
                }
            }
        }
    }

    #[test]
    fn reverse_order_negated_rotation_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..20 {
            let seq = random_seq(seed);
            let angles = EulerAngles {
                x: rng.random_range(-1.0..1.0),
                y: rng.random_range(-1.0..1.0),
                z: rng.random_range(-1.0..1.0),
            };
            let there = apply_rotation(&seq, &rotation_xyz(angles));
            let back = apply_rotation(&there, &rotation_zyx(angles.negated()));
            for (a, b) in seq.frames.iter().zip(back.frames.iter()) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
            }
        }
    }
}
