use ndarray::{Array3, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Number of coordinate channels per joint (x, y, z).
pub const CHANNELS: usize = 3;

/// A single-body skeleton sequence: `frames[t, v, c]` in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Array3<f32>,
    pub label: Option<usize>,
    pub subject_id: Option<u32>,
    pub view_id: Option<u32>,
}

impl SkeletonSequence {
    /// Wraps `frames` after checking shape and finiteness.
    pub fn new(frames: Array3<f32>) -> Result<Self> {
        let seq = Self {
            frames,
            label: None,
            subject_id: None,
            view_id: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joints(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    pub fn validate(&self) -> Result<()> {
        let (t, v, c) = self.frames.dim();
        if t < 2 || v < 2 || c != CHANNELS {
            return Err(Error::Shape(format!(
                "skeleton sequence must be T>=2 x V>=2 x 3, got {t} x {v} x {c}"
            )));
        }
        if let Some(bad) = self.frames.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate #{bad} is not finite")));
        }
        Ok(())
    }

    /// Same metadata, new frames.
    pub(crate) fn with_frames(&self, frames: Array3<f32>) -> Self {
        Self {
            frames,
            label: self.label,
            subject_id: self.subject_id,
            view_id: self.view_id,
        }
    }
}

/// Per-frame joint displacement; the last frame is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Array3<f64>,
}

/// `M_t = I_{t+1} - I_t` for every frame but the last, which stays zero.
///
/// Differences are taken in double precision so that a running sum from the
/// first frame reproduces every source frame exactly.
pub fn compute_motion(seq: &SkeletonSequence) -> MotionSequence {
    let (t, v, c) = seq.frames.dim();
    let mut out = Array3::<f64>::zeros((t, v, c));
    for i in 0..t.saturating_sub(1) {
        let cur = seq.frames.index_axis(Axis(0), i);
        let next = seq.frames.index_axis(Axis(0), i + 1);
        let mut row = out.index_axis_mut(Axis(0), i);
        ndarray::Zip::from(&mut row)
            .and(&cur)
            .and(&next)
            .for_each(|m, &a, &b| *m = f64::from(b) - f64::from(a));
    }
    MotionSequence { frames: out }
}

/// Frames grouped into non-overlapping segments of `segment_length` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSequence<T> {
    /// `T_e x V x (l * C)`
    pub segments: Array3<T>,
    pub segment_length: usize,
}

impl<T: Clone> SegmentedSequence<T> {
    pub fn num_segments(&self) -> usize {
        self.segments.len_of(Axis(0))
    }

    /// Inverse of [`segment`].
    pub fn unsegment(&self) -> Array3<T> {
        let (te, v, lc) = self.segments.dim();
        let l = self.segment_length;
        let c = lc / l;
        Array3::from_shape_fn((te * l, v, c), |(t, j, ch)| {
            self.segments[[t / l, j, (t % l) * c + ch]].clone()
        })
    }
}

/// Splits `frames` (`T x V x C`) into `T / l` segments; segment `(t, v)` holds
/// frames `t*l .. t*l + l` of joint `v` in time order.
pub fn segment<T: Clone>(frames: ArrayView3<'_, T>, l: usize) -> Result<SegmentedSequence<T>> {
    let (t, v, c) = frames.dim();
    if l == 0 || t % l != 0 {
        return Err(Error::Config(format!(
            "sequence length {t} is not divisible by segment length {l}"
        )));
    }
    let segments = Array3::from_shape_fn((t / l, v, l * c), |(s, j, k)| {
        frames[[s * l + k / c, j, k % c]].clone()
    });
    Ok(SegmentedSequence {
        segments,
        segment_length: l,
    })
}
