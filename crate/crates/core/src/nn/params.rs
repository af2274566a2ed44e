use ndarray::{Array, Dimension};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Read-only view of one named parameter tensor.
#[derive(Debug)]
pub struct Tensor<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

/// Mutable view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorMut<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [F],
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push<'a, F: Scalar, D: Dimension>(
    out: &mut Vec<Tensor<'a, F>>,
    prefix: &str,
    name: &str,
    arr: &'a Array<F, D>,
) {
    out.push(Tensor {
        name: join(prefix, name),
        shape: arr.shape().to_vec(),
        data: arr.as_slice().expect("parameters are contiguous"),
    });
}

pub(crate) fn push_mut<'a, F: Scalar, D: Dimension>(
    out: &mut Vec<TensorMut<'a, F>>,
    prefix: &str,
    name: &str,
    arr: &'a mut Array<F, D>,
) {
    let shape = arr.shape().to_vec();
    out.push(TensorMut {
        name: join(prefix, name),
        shape,
        data: arr.as_slice_mut().expect("parameters are contiguous"),
    });
}

/// A tree of named parameter tensors, visited in a fixed order.
///
/// Gradients use the same type as the parameters they belong to, so the
/// optimizer, EMA, checkpointing and gradient checks all walk two trees in
/// lock step.
pub trait Parameters<F: Scalar>: Clone {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>);

    fn tensors(&self) -> Vec<Tensor<'_, F>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(F::zero());
        }
        z
    }

    /// Copies values from `other`, which must have the same layout.
    fn copy_from(&mut self, other: &Self) -> Result<()> {
        check_congruent(&layout(self), &layout(other))?;
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            d.data.copy_from_slice(s.data);
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Fails unless both lists name the same tensors with the same sizes.
pub(crate) fn check_congruent(a: &[(String, usize)], b: &[(String, usize)]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::TreeMismatch(format!("{} tensors vs {}", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return Err(Error::TreeMismatch(format!(
                "{} ({}) vs {} ({})",
                x.0, x.1, y.0, y.1
            )));
        }
    }
    Ok(())
}

pub(crate) fn layout<F: Scalar, P: Parameters<F>>(p: &P) -> Vec<(String, usize)> {
    p.tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len()))
        .collect()
}

/// Order-sensitive digest of every tensor's name, shape and bytes.
pub fn param_hash<F: Scalar, P: Parameters<F>>(params: &P) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in params.tensors() {
        h.update(t.name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for x in t.data {
            h.update(x.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
