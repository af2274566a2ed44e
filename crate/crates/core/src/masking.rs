//! Motion-aware tube masking and the random / single-tube baselines.
//!
//! A sequence of `T_e` segments is tiled into tubes of `alpha` consecutive
//! segments. Every segment in a tube hides the same `K = ceil(m * V)` joints.
//! Which joints are hidden is decided per tube by ranking
//! `eta + beta * T'` where `eta ~ U(0, 1)` and `T'` is the tube's motion
//! intensity normalized by its maximum over joints.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masked joints per frame for ratio `m` over `v` joints.
///
/// The product is nudged down by 1e-9 before rounding up so that ratios
/// such as 0.7 (where `0.7 * 10` evaluates to `7.000000000000001`) give the
/// intended count.
pub fn masked_count(m: f64, v: usize) -> usize {
    ((m * v as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Number of tubes covering `segments` with tubes of length `alpha`.
pub fn tube_count(segments: usize, alpha: usize) -> usize {
    segments.div_ceil(alpha)
}

/// `S[i, v] = sum_k |M'[i, v, k]|` over the `l * C` channels of each segment.
pub fn segment_motion_intensity(motion_segments: ArrayView3<'_, f64>) -> Array2<f64> {
    motion_segments.map_axis(Axis(2), |lane| lane.iter().map(|x| x.abs()).sum())
}

/// Sums `S` over each tube's segments and divides each row by its maximum.
/// Rows that are entirely zero stay zero.
pub fn tube_motion_intensity(s: ArrayView2<'_, f64>, alpha: usize) -> Array2<f64> {
    assert!(alpha >= 1, "tube length must be at least 1");
    let (te, v) = s.dim();
    let n = tube_count(te, alpha);
    let mut out = Array2::<f64>::zeros((n, v));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let end = ((i + 1) * alpha).min(te);
        for j in (i * alpha)..end {
            row += &s.row(j);
        }
        let max = row.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            row /= max;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeMaskPlan {
    pub tube_length: usize,
    /// Masked joint indices per tube, ascending.
    pub tubes: Vec<Vec<usize>>,
    pub masking_ratio: f64,
    pub beta: f64,
    pub masked_per_frame: usize,
    pub num_joints: usize,
}

/// Draws one masking map per tube from normalized tube intensities.
///
/// `tube_intensity` is `N x V`. Joints are ranked by `eta + beta * T'` with a
/// stable ascending sort and the last `K` are masked, so on exact ties the
/// larger joint index is masked.
pub fn sample_mask<R: Rng + ?Sized>(
    tube_intensity: ArrayView2<'_, f64>,
    tube_length: usize,
    m: f64,
    beta: f64,
    rng: &mut R,
) -> Result<TubeMaskPlan> {
    let (_, v) = tube_intensity.dim();
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Config(format!("masking ratio must be in (0, 1), got {m}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let k = masked_count(m, v);
    if k >= v {
        return Err(Error::Config(format!(
            "masking {k} of {v} joints leaves nothing visible"
        )));
    }
    let mut order: Vec<usize> = (0..v).collect();
    let mut scores = vec![0.0f64; v];
    let tubes = tube_intensity
        .axis_iter(Axis(0))
        .map(|row| {
            for (p, &t) in scores.iter_mut().zip(row.iter()) {
                let eta: f64 = rng.random();
                *p = eta + beta * t;
            }
            order.clear();
            order.extend(0..v);
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            let mut chosen = order[v - k..].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    Ok(TubeMaskPlan {
        tube_length,
        tubes,
        masking_ratio: m,
        beta,
        masked_per_frame: k,
        num_joints: v,
    })
}

/// Per-segment boolean mask (`true` = masked); segment `t` uses tube `t / alpha`.
pub fn expand_mask(plan: &TubeMaskPlan, segments: usize) -> Result<Array2<bool>> {
    let expected = tube_count(segments, plan.tube_length);
    if plan.tubes.len() != expected {
        return Err(Error::Shape(format!(
            "{segments} segments with tube length {} need {expected} tubes, plan has {}",
            plan.tube_length,
            plan.tubes.len()
        )));
    }
    let mut mask = Array2::from_elem((segments, plan.num_joints), false);
    for (t, mut row) in mask.axis_iter_mut(Axis(0)).enumerate() {
        for &j in &plan.tubes[t / plan.tube_length] {
            row[j] = true;
        }
    }
    Ok(mask)
}

/// The masking schemes compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Independent per-segment maps from pure noise (`alpha = 1`, `beta = 0`).
    Random,
    /// One map for the whole sequence (`alpha = T_e`, `beta = 0`).
    SingleTube,
    /// Tubes of the configured length, noise only (`beta = 0`).
    Tube,
    /// Tubes of the configured length biased toward moving joints.
    MotionAware,
}

impl MaskStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MaskStrategy::Random => "random",
            MaskStrategy::SingleTube => "single_tube",
            MaskStrategy::Tube => "tube",
            MaskStrategy::MotionAware => "motion_aware",
        }
    }

    /// Effective `(alpha, beta)` for a sequence of `segments` segments.
    pub fn resolve(self, segments: usize, alpha: usize, beta: f64) -> (usize, f64) {
        match self {
            MaskStrategy::Random => (1, 0.0),
            MaskStrategy::SingleTube => (segments, 0.0),
            MaskStrategy::Tube => (alpha.min(segments), 0.0),
            MaskStrategy::MotionAware => (alpha.min(segments), beta),
        }
    }
}

impl std::str::FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskStrategy::Random),
            "single_tube" | "single-tube" => Ok(MaskStrategy::SingleTube),
            "tube" => Ok(MaskStrategy::Tube),
            "motion_aware" | "motion-aware" => Ok(MaskStrategy::MotionAware),
            other => Err(Error::Config(format!("unknown mask strategy {other:?}"))),
        }
    }
}

/// Baseline masks that ignore motion.
pub fn baseline_mask<R: Rng + ?Sized>(
    strategy: MaskStrategy,
    v: usize,
    segments: usize,
    m: f64,
    rng: &mut R,
) -> Result<Array2<bool>> {
    let alpha = match strategy {
        MaskStrategy::Random => 1,
        MaskStrategy::SingleTube => segments,
        other => {
            return Err(Error::Config(format!(
                "{} is not a baseline strategy",
                other.name()
            )))
        }
    };
    let zeros = Array2::<f64>::zeros((tube_count(segments, alpha), v));
    let plan = sample_mask(zeros.view(), alpha, m, 0.0, rng)?;
    expand_mask(&plan, segments)
}

/// Full mask for one sample from its per-segment motion intensity `S`.
pub fn mask_from_intensity<R: Rng + ?Sized>(
    strategy: MaskStrategy,
    s: ArrayView2<'_, f64>,
    alpha: usize,
    beta: f64,
    m: f64,
    rng: &mut R,
) -> Result<Array2<bool>> {
    let segments = s.nrows();
    let (alpha, beta) = strategy.resolve(segments, alpha, beta);
    let t = tube_motion_intensity(s, alpha);
    let plan = sample_mask(t.view(), alpha, m, beta, rng)?;
    expand_mask(&plan, segments)
}

/// Aggregate statistics over many sampled masks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MaskStats {
    pub samples: usize,
    /// Fraction of segments in which each joint was masked.
    pub joint_frequency: Vec<f64>,
    /// Probability that a joint's mask state is unchanged between adjacent
    /// segments.
    pub persistence: f64,
    /// Mean length, in segments, of consecutive masked runs.
    pub mean_masked_run: f64,
    /// Share of total motion intensity lying under masked positions.
    pub motion_coverage: f64,
}

/// Accumulates [`MaskStats`] one sample at a time.
#[derive(Debug, Clone, Default)]
pub struct MaskStatsAccumulator {
    samples: usize,
    masked: Vec<u64>,
    cells: u64,
    same: u64,
    pairs: u64,
    runs: u64,
    run_cells: u64,
    covered: f64,
    total: f64,
}

impl MaskStatsAccumulator {
    pub fn add(&mut self, mask: ArrayView2<'_, bool>, intensity: ArrayView2<'_, f64>) {
        let (te, v) = mask.dim();
        if self.masked.len() < v {
            self.masked.resize(v, 0);
        }
        self.samples += 1;
        self.cells += te as u64;
        for j in 0..v {
            let col = mask.column(j);
            let mut prev = false;
            for (t, &x) in col.iter().enumerate() {
                if x {
                    self.masked[j] += 1;
                    self.run_cells += 1;
                    if !prev {
                        self.runs += 1;
                    }
                    self.covered += intensity[[t, j]];
                }
                self.total += intensity[[t, j]];
                if t > 0 {
                    self.pairs += 1;
                    if x == prev {
                        self.same += 1;
                    }
                }
                prev = x;
            }
        }
    }

    pub fn finish(&self) -> MaskStats {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        MaskStats {
            samples: self.samples,
            joint_frequency: self
                .masked
                .iter()
                .map(|&c| ratio(c as f64, self.cells as f64))
                .collect(),
            persistence: ratio(self.same as f64, self.pairs as f64),
            mean_masked_run: ratio(self.run_cells as f64, self.runs as f64),
            motion_coverage: ratio(self.covered, self.total),
        }
    }
}
