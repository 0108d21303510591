//! Reverse-mode differentiation over recorded tensor operations.
//!
//! A [`Tape`] is built during a single forward pass and consumed by
//! [`Tape::backward`]. Every recorded value is checked for finiteness as it
//! is produced, so NaN/Inf never propagate silently.

mod elementwise;
mod layers;
mod shape;
mod spectral;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`] for every leaf that requires them.
pub struct Grads<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn scalar(&self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn needs(&self, vars: &[Var]) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        vars.iter().map(|v| nodes[v.0].requires_grad).collect()
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Rc<Tensor<T>>,
        parents: &[Var],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "{op} produced a non-finite value (output shape {:?})",
                value.shape()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Back-propagates from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::ones(root_value.shape()));
        }
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (p, gp) in node.parents.iter().zip(bw(&g)) {
                let Some(gp) = gp else { continue };
                if !nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(gp.shape(), nodes[p.0].value.shape(), "grad shape");
                if !gp.all_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite gradient flowing into node {} (shape {:?})",
                        p.0,
                        gp.shape()
                    )));
                }
                match grads[p.0].as_mut() {
                    Some(acc) => acc.add_assign(&gp),
                    None => grads[p.0] = Some(gp),
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!(
                    "shapes {a:?} and {b:?} do not broadcast"
                )))
            }
        };
    }
    Ok(out)
}

/// Element strides of `shape` viewed inside `out` (zero on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let lead = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[lead + i] = s;
        }
        s *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast.
fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let mut data = vec![T::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(a.shape(), b.shape(), &out, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
    Tensor::new(out, data)
}

/// Sums `g` (of broadcast shape) down to `shape`.
pub(crate) fn reduce_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    if shape.len() > g.rank() {
        let mut padded = vec![1; shape.len() - g.rank()];
        padded.extend_from_slice(g.shape());
        let g = g.clone().reshape(&padded).expect("same element count");
        return reduce_to(&g, shape);
    }
    let mut out = vec![T::zero(); numel(shape)];
    let gd = g.data();
    for_each_broadcast(g.shape(), shape, g.shape(), |i, _, io| out[io] += gd[i]);
    Tensor::new(shape.to_vec(), out).expect("reduced shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 1, 5], &[4, 1]).unwrap(), vec![3, 4, 5]);
        assert!(broadcast_shape(&[3, 2], &[3]).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = Tensor::<f64>::ones(&[2, 3, 4]);
        let r = reduce_to(&g, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert!(r.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn constants_do_not_collect_grads() {
        let t = Tape::<f64>::new();
        let a = t.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let c = t.constant(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        let p = t.mul(a, c).unwrap();
        let s = t.sum_all(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let t = Tape::<f32>::new();
        let a = t.leaf(Tensor::full(&[1], 1e30));
        let err = t.mul(a, a).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn backward_needs_scalar_root() {
        let t = Tape::<f32>::new();
        let a = t.leaf(Tensor::ones(&[2]));
        assert!(t.backward(a).is_err());
    }
}
