//! Teacher targets, the masked regression loss and EMA teacher updates.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normalize_rows, Encoder, LayerTap, Parameters, Pass, Scalar, NORM_EPS};

/// Normalizes every channel over the token axis of each sample
/// (`tokens` consecutive rows), without affine parameters.
pub fn instance_norm<F: Scalar>(x: ArrayView2<'_, F>, tokens: usize, eps: f64) -> Array2<F> {
    let (rows, c) = x.dim();
    let n: F = F::from_usize(tokens).expect("token count fits");
    let eps: F = F::from_f64(eps).expect("eps fits");
    let mut out = x.to_owned();
    for b in 0..rows / tokens {
        let mut sample = out.slice_mut(ndarray::s![b * tokens..(b + 1) * tokens, ..]);
        for ch in 0..c {
            let mut col = sample.column_mut(ch);
            let mean = col.iter().fold(F::zero(), |a, &v| a + v) / n;
            col.mapv_inplace(|v| v - mean);
            let var = col.iter().fold(F::zero(), |a, &v| a + v * v) / n;
            let s = F::one() / (var + eps).sqrt();
            col.mapv_inplace(|v| v * s);
        }
    }
    out
}

/// Per-layer teacher activations and the targets built from them.
#[derive(Debug, Clone)]
pub struct TargetBundle<F> {
    pub per_layer: Vec<Array2<F>>,
    pub targets: Array2<F>,
}

/// Instance-normalizes each layer, averages the layers, then
/// layer-normalizes every token (no affine, eps 1e-6 throughout).
pub fn build_targets<F: Scalar>(per_layer: &[Array2<F>], tokens: usize) -> Result<Array2<F>> {
    let first = per_layer
        .first()
        .ok_or_else(|| Error::Config("targets need at least one teacher layer".into()))?;
    if tokens == 0 || first.nrows() % tokens != 0 {
        return Err(Error::Shape(format!(
            "{} rows do not split into {tokens}-token samples",
            first.nrows()
        )));
    }
    let mut avg = Array2::<F>::zeros(first.dim());
    for layer in per_layer {
        if layer.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "teacher layers differ in shape: {:?} vs {:?}",
                layer.dim(),
                first.dim()
            )));
        }
        avg += &instance_norm(layer.view(), tokens, NORM_EPS);
    }
    let layers: F = F::from_usize(per_layer.len()).expect("layer count fits");
    avg.mapv_inplace(|v| v / layers);
    Ok(normalize_rows(avg.view(), NORM_EPS).0)
}

/// Runs the teacher on the complete, unmasked token grid and builds targets.
pub fn teacher_targets<F: Scalar>(teacher: &Encoder<F>, segments: ArrayView2<'_, F>, tap: LayerTap) -> Result<TargetBundle<F>> {
    let out = teacher.encode_full(segments, Some(tap), &mut Pass::inference())?;
    let targets = build_targets(&out.taps, teacher.tokens())?;
    Ok(TargetBundle {
        per_layer: out.taps,
        targets,
    })
}

fn check_loss_inputs<F>(y: &ArrayView2<'_, F>, pred: &ArrayView2<'_, F>, mask: &[bool]) -> Result<usize> {
    if y.dim() != pred.dim() || y.nrows() != mask.len() {
        return Err(Error::Shape(format!(
            "targets {:?}, predictions {:?}, mask {}",
            y.dim(),
            pred.dim(),
            mask.len()
        )));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

/// Mean over masked tokens of the squared L2 distance between target and
/// prediction.
pub fn masked_l2_loss<F: Scalar>(y: ArrayView2<'_, F>, pred: ArrayView2<'_, F>, mask: &[bool]) -> Result<F> {
    let n = check_loss_inputs(&y, &pred, mask)?;
    let mut total = 0.0f64;
    for ((yr, pr), _) in y
        .axis_iter(Axis(0))
        .zip(pred.axis_iter(Axis(0)))
        .zip(mask)
        .filter(|(_, &m)| m)
    {
        let mut row = F::zero();
        Zip::from(&yr).and(&pr).for_each(|&a, &b| row += (a - b) * (a - b));
        total += row.to_f64().unwrap_or(f64::NAN);
    }
    Ok(F::from_f64(total / n as f64).expect("loss fits"))
}

/// Loss and `dL/dpred`; unmasked rows of the gradient are exactly zero.
pub fn masked_l2_grad<F: Scalar>(y: ArrayView2<'_, F>, pred: ArrayView2<'_, F>, mask: &[bool]) -> Result<(F, Array2<F>)> {
    let loss = masked_l2_loss(y, pred, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    let scale: F = F::from_f64(-2.0 / n as f64).expect("scale fits");
    let mut grad = Array2::<F>::zeros(pred.dim());
    for (((mut g, yr), pr), _) in grad
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(pred.axis_iter(Axis(0)))
        .zip(mask)
        .filter(|(_, &m)| m)
    {
        Zip::from(&mut g)
            .and(&yr)
            .and(&pr)
            .for_each(|gi, &a, &b| *gi = scale * (a - b));
    }
    Ok((loss, grad))
}

/// `teacher <- tau * teacher + (1 - tau) * student`, elementwise.
pub fn ema_update<F: Scalar, P: Parameters<F>>(teacher: &mut P, student: &P, tau: f64) -> Result<()> {
    crate::nn::check_congruent(&crate::nn::layout(teacher), &crate::nn::layout(student))?;
    let keep: F = F::from_f64(tau).expect("tau fits");
    let take: F = F::from_f64(1.0 - tau).expect("tau fits");
    let src = student.tensors();
    for (t, s) in teacher.tensors_mut().into_iter().zip(src.iter()) {
        for (d, &x) in t.data.iter_mut().zip(s.data) {
            *d = keep * *d + take * x;
        }
    }
    Ok(())
}

/// Linear ramp from `tau0` at step 0 to 1 at `total`.
pub fn tau_schedule(step: u64, total: u64, tau0: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let frac = step.min(total) as f64 / total as f64;
    tau0 + (1.0 - tau0) * frac
}

/// Spread of a target batch; near-zero values signal representation collapse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseStats {
    /// Std of each channel across a sample's tokens, averaged.
    pub per_channel_std_mean: f64,
    /// Std across channels of each token, averaged.
    pub per_token_std_mean: f64,
}

pub fn collapse_stats<F: Scalar>(y: ArrayView2<'_, F>, tokens: usize) -> CollapseStats {
    let y = y.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let (rows, c) = y.dim();
    let batch = rows / tokens.max(1);
    let mut channel = 0.0;
    for b in 0..batch {
        let sample = y.slice(ndarray::s![b * tokens..(b + 1) * tokens, ..]);
        channel += sample.std_axis(Axis(0), 0.0).sum();
    }
    let per_channel = if batch * c > 0 {
        channel / (batch * c) as f64
    } else {
        0.0
    };
    let per_token = if rows > 0 {
        y.std_axis(Axis(1), 0.0).mean().unwrap_or(0.0)
    } else {
        0.0
    };
    CollapseStats {
        per_channel_std_mean: per_channel,
        per_token_std_mean: per_token,
    }
}
