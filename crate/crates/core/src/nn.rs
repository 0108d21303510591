//! Plain (non-recording) tensor operations.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, TConvGeom};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
}

pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geom = ConvGeom::new(input.shape(), weight.shape(), stride, padding, 1)?;
    if let Some(b) = bias {
        b.expect_shape(&[geom.c_out])?;
    }
    let out = kernels::conv2d_forward(&geom, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(geom.out_shape(input.rank()), out)
}

pub fn max_pool2d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let (shape, out, _) = kernels::max_pool2d_forward(input.shape(), input.data(), window, stride)?;
    Tensor::new(shape, out)
}

pub fn transposed_conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let geom = TConvGeom::new(input.shape(), weight.shape(), stride)?;
    if let Some(b) = bias {
        b.expect_shape(&[geom.c_out])?;
    }
    let out = kernels::tconv2d_forward(&geom, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(geom.out_shape(input.rank()), out)
}

pub fn layer_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    axis: usize,
    eps: T,
) -> Result<Tensor<T>> {
    if axis >= input.rank() || input.shape()[axis] == 0 {
        return Err(Error::dim(format!(
            "layer_norm axis {axis} invalid for shape {:?}",
            input.shape()
        )));
    }
    let n = input.shape()[axis];
    gamma.expect_shape(&[n])?;
    beta.expect_shape(&[n])?;
    let (y, _, _) =
        kernels::layer_norm_forward(input.shape(), input.data(), axis, gamma.data(), beta.data(), eps);
    Tensor::new(input.shape().to_vec(), y)
}

pub fn activate<T: Real>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    Ok(match kind {
        Activation::Relu => input.map(|x| x.max(T::zero())),
        Activation::Gelu => input.map(kernels::gelu),
        Activation::Sigmoid => input.map(kernels::sigmoid),
        Activation::Softmax => {
            let n = *input
                .shape()
                .last()
                .ok_or_else(|| Error::dim("softmax of a rank-0 tensor"))?;
            Tensor::new(input.shape().to_vec(), kernels::softmax_rows(input.data(), n))?
        }
    })
}

pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let b = bias.map(|b| tape.constant(b.clone()));
    let y = tape.linear(x, w, b)?;
    Ok((*tape.value(y)).clone())
}
