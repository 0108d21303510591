use std::rc::Rc;

use super::{broadcast_shape, reduce_to, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::axis_split;
use crate::tensor::{numel, Real, Tensor};

fn permute_data<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let xd = x.data();
    for _ in 0..n {
        out.push(xd[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permuted shape")
}

impl<T: Real> Tape<T> {
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if numel(shape) != x.numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                x.shape()
            )));
        }
        let in_shape = x.shape().to_vec();
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())?;
        self.push("reshape", Rc::new(out), &[a], move |g| {
            vec![Some(g.clone().reshape(&in_shape).expect("same count"))]
        })
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!(
                "invalid permutation {perm:?} for shape {:?}",
                x.shape()
            )));
        }
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out = permute_data(&x, perm);
        self.push("permute", Rc::new(out), &[a], move |g| {
            vec![Some(permute_data(g, &inverse))]
        })
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    /// Broadcasts `a` to `shape`.
    pub fn expand(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if broadcast_shape(x.shape(), shape)? != shape {
            return Err(Error::dim(format!(
                "cannot expand {:?} to {shape:?}",
                x.shape()
            )));
        }
        let zeros = Tensor::zeros(shape);
        let out = super::broadcast_binary(&zeros, &x, |_, v| v)?;
        let in_shape = x.shape().to_vec();
        self.push("expand", Rc::new(out), &[a], move |g| {
            vec![Some(reduce_to(g, &in_shape))]
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::dim(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                x.shape()
            )));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out_shape = x.shape().to_vec();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let in_shape = x.shape().to_vec();
        self.push("narrow", Rc::new(Tensor::new(out_shape, out)?), &[a], move |g| {
            let mut d = Tensor::zeros(&in_shape);
            for o in 0..outer {
                d.data_mut()[(o * n + start) * inner..(o * n + start + len) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(d)]
        })
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        if axis >= first.rank() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {:?}", first.shape())));
        }
        for v in &values {
            let ok = v.rank() == first.rank()
                && v.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::dim(format!(
                    "concat shape mismatch: {:?} vs {:?} along axis {axis}",
                    first.shape(),
                    v.shape()
                )));
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        drop(values);
        self.push("concat", Rc::new(Tensor::new(out_shape, out)?), parts, move |g| {
            let mut grads: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(numel(s))).collect();
            let gd = g.data();
            let mut off = 0;
            for _ in 0..outer {
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&gd[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .map(|(d, s)| Some(Tensor::new(s.clone(), d).expect("concat grad")))
                .collect()
        })
    }
}
