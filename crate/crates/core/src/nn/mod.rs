//! Minimal differentiable building blocks with hand-written backward passes.
//!
//! Every layer exposes `forward` (returning its output plus whatever it needs
//! for the backward pass) and `backward` (accumulating parameter gradients
//! into a same-shaped gradient container and returning the input gradient).
//! Layers are generic over [`Real`] so models train in `f32` and are
//! gradient-checked in `f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{gradcheck, gradcheck_coords};
pub use layers::{gelu, positional_encoding, Attention, AttentionCache, Film, LayerNorm, Linear};
pub use optim::{cosine_warmup_lr, AdamW};

/// Floating-point element type of layers and models.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// A named n-dimensional array, the unit of checkpoint I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<F>) -> crate::Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(crate::Error::Shape(format!(
                "shape {:?} does not hold {} values",
                shape,
                values.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            values,
            requires_grad: true,
            grad: None,
        })
    }

    pub fn from_view(name: impl Into<String>, view: &ArrayViewD<'_, F>) -> Self {
        Self {
            name: name.into(),
            shape: view.shape().to_vec(),
            values: view.iter().copied().collect(),
            requires_grad: true,
            grad: None,
        }
    }

    pub fn to_array(&self) -> ArrayD<F> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.values.clone()).expect("validated shape")
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![F::zero(); self.values.len()]);
    }
}

/// A collection of named parameter arrays with a fixed visiting order.
///
/// Gradient containers are instances of the same type, so optimizers and
/// checkpoints can walk parameters and gradients in lockstep.
pub trait ParamSet<F: Real> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)>;
    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)>;

    /// Same structure with every value zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, mut p) in self.params_mut() {
            p.fill(F::zero());
        }
    }

    /// `self += other`, element-wise, in visiting order.
    fn add_assign_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, mut a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a += &b;
        }
    }

    /// All values flattened in visiting order.
    fn flatten(&self) -> Vec<F> {
        self.params().iter().flat_map(|(_, p)| p.iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice in visiting order.
    fn assign_flat(&mut self, flat: &[F]) {
        let mut offset = 0;
        for (_, mut p) in self.params_mut() {
            for v in p.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
    }

    fn to_tensors(&self) -> Vec<Tensor<F>> {
        self.params()
            .iter()
            .map(|(n, p)| Tensor::from_view(n.clone(), p))
            .collect()
    }

    /// Loads values by name; every parameter must be present with matching shape.
    fn load_tensors(&mut self, tensors: &[Tensor<F>]) -> crate::Result<()> {
        for (name, mut p) in self.params_mut() {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| crate::Error::Format(format!("checkpoint lacks tensor '{name}'")))?;
            if t.shape != p.shape() {
                return Err(crate::Error::Shape(format!(
                    "tensor '{name}': checkpoint {:?}, model {:?}",
                    t.shape,
                    p.shape()
                )));
            }
            for (dst, src) in p.iter_mut().zip(&t.values) {
                *dst = *src;
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
    }
}
