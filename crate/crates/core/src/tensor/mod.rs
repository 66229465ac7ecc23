//! Dense f32 tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Every kernel iterates in a fixed order that does not depend on the batch
//! size, so a row computed inside a batch is bit-identical to the same row
//! computed alone. The merge-equivalence guarantees lean on this.

mod adam;
mod kernels;
mod tape;

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};

/// Fixed constants of the tanh GELU approximation.
pub const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_56;
pub const GELU_CUBIC: f32 = 0.044715;
/// Variance epsilon inside the layernorm square root.
pub const LAYERNORM_EPS: f32 = 1e-12;
/// Score written into masked attention positions.
pub const MASK_FILL: f32 = -1e9;

/// Primitive kernels known to the tape. Used for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    BatchMatMul,
    Add,
    Mul,
    Scale,
    Sum,
    LayerNorm,
    Softmax,
    Gelu,
    Tanh,
    EmbedLookup,
    CrossEntropy,
    KlDiv,
    Mse,
    Reshape,
    Transpose12,
    SelectToken,
    MaskFill,
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::BatchMatMul => "bmm",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Scale => "scale",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::LayerNorm => "layernorm",
            PrimitiveKind::Softmax => "softmax",
            PrimitiveKind::Gelu => "gelu",
            PrimitiveKind::Tanh => "tanh",
            PrimitiveKind::EmbedLookup => "embed_lookup",
            PrimitiveKind::CrossEntropy => "cross_entropy",
            PrimitiveKind::KlDiv => "kl_div",
            PrimitiveKind::Mse => "mse",
            PrimitiveKind::Reshape => "reshape",
            PrimitiveKind::Transpose12 => "transpose12",
            PrimitiveKind::SelectToken => "select_token",
            PrimitiveKind::MaskFill => "mask_fill",
        };
        f.write_str(name)
    }
}

/// Immutable row-major f32 tensor. Cloning shares the buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f32]>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape { shape, reason: "extents must be positive".into() });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape { shape, reason: format!("expects {n} elements, got {}", data.len()) });
        }
        Ok(Tensor { shape, data: data.into() })
    }

    /// Internal constructor for kernels whose output shape is known-good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data: data.into() }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Same buffer, new shape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape { shape, reason: format!("cannot view {} elements", self.len()) });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Little-endian bytes of the payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 over the shape and the little-endian payload, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.shape.len() as u64).to_le_bytes());
        for d in &self.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.data.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// True if both tensors have the same shape and identical bit patterns.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data.iter().zip(other.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let head: Vec<f32> = self.data.iter().take(SHOWN).copied().collect();
        write!(f, "Tensor{:?}{:?}", self.shape, head)?;
        if self.len() > SHOWN {
            write!(f, "..")?;
        }
        Ok(())
    }
}
