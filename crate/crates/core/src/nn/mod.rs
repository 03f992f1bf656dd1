//! A small differentiable operator set: convolution, pooling, upsampling,
//! concatenation, activations, dropout, center-block writes and the soft
//! Dice loss, plus Adam and finite-difference gradient checking.

mod graph;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;

pub use graph::{ConvSpec, DropoutMode, Gradients, Graph, NodeId};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{AdamConfig, AdamState};
pub use params::{ParamEntry, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::volume::element_count;

/// Dense activation tensor laid out `[channels, spatial..]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if data.len() != element_count(&shape) {
            return Err(Error::ShapeMismatch(format!(
                "tensor data of length {} for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Single-channel tensor from a volume.
    pub fn from_volume(v: &crate::volume::Volume) -> Self {
        let mut shape = vec![1];
        shape.extend_from_slice(v.shape());
        Self {
            shape,
            data: v.data().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(other).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

#[cfg(test)]
mod tests;
