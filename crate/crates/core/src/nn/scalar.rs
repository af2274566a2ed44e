use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type of model tensors. Training runs in `f32`;
/// gradient checks instantiate the same code in `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Default {}

impl<T: NdFloat + FromPrimitive + Default> Scalar for T {}

#[inline]
pub(crate) fn cst<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in scalar type")
}
