//! Dense `f32` tensors (rank 1 to 4, row-major) and the kernels the network
//! is assembled from.
//!
//! Activations use N×C×H×W order; convolution weights use O×I×Kh×Kw.
//! Every kernel is a pure function with a fixed summation order, so equal
//! inputs always give bit-identical outputs.

mod conv;
mod ops;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub use conv::{conv2d, ConvParams};
pub use ops::{
    add, batchnorm_infer, cross_entropy, global_avg_pool, linear, relu6, softmax, BatchNormParams,
};
pub(crate) use ops::{batchnorm_infer_in_place, relu6_in_place};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let len = checked_len(dims)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let len = checked_len(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        })
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) index.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f32) -> Result<Self> {
        let len = checked_len(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: (0..len).map(f).collect(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; tensors have at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut dims = Vec::with_capacity(first.rank() + 1);
        dims.push(items.len());
        dims.extend_from_slice(first.dims());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for (i, t) in items.iter().enumerate() {
            if t.dims != first.dims {
                return Err(Error::Shape(format!(
                    "stack item {i} has dims {:?}, expected {:?}",
                    t.dims, first.dims
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(&dims, data)
    }

    /// Extracts item `index` along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Result<Self> {
        if self.rank() < 2 {
            return Err(Error::Shape("slice_outer needs rank >= 2".into()));
        }
        if index >= self.dims[0] {
            return Err(Error::Index(format!(
                "outer index {index} out of range for extent {}",
                self.dims[0]
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        Self::new(
            &self.dims[1..],
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank must be 1..={MAX_RANK}, got dims {dims:?}"
        )));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!("axis {axis} of {dims:?} is zero")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))
}
