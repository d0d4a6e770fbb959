//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape, so node order is already a
//! topological order. [`Graph::backward`] walks the tape once in reverse and
//! accumulates vector-Jacobian products into the parents of each node.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Data handed to a backward closure.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Upstream gradient, same length as `output`.
    pub grad: &'a [f64],
    /// Which inputs need a gradient. Closures may skip the others.
    pub needs: Vec<bool>,
}

/// Returns one gradient per input, `None` where no gradient is produced.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that gradients flow into.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Records a new node whose backward pass is supplied by the caller.
    ///
    /// This is how operators outside this crate (Fourier transforms, coil
    /// operators) join the tape.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let parents: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        let backward = if requires_grad { Some(backward) } else { None };
        self.push_node(value, parents, backward, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let parent_grads = backward(&ctx);
            grads[i] = Some(grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), self.nodes[p].value.len());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape(format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.custom(
            &[x],
            out,
            Box::new(move |ctx| {
                let g = ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.output.data())
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.custom(&[a, b], out, Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.iter().map(|g| -g).collect())]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(g, y)| g * y).collect());
                let gb = ctx.needs[1].then(|| ctx.grad.iter().zip(a).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx| {
                let (b, q) = (ctx.inputs[1].data(), ctx.output.data());
                let ga = ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(g, y)| g / y).collect());
                let gb = ctx.needs[1].then(|| ctx.grad.iter().zip(b).zip(q).map(|((g, y), q)| -g * q / y).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect()).expect("same shape");
        self.custom(&[x], out, Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * c).collect())]))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v + c).collect()).expect("same shape");
        self.custom(&[x], out, Box::new(|ctx| vec![Some(ctx.grad.to_vec())]))
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(NnError::Shape(format!("mul_scalar expects a one-element factor, got {:?}", self.shape(s))));
        }
        let c = self.value(s).item();
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * c).collect())?;
        Ok(self.custom(
            &[x, s],
            out,
            Box::new(|ctx| {
                let c = ctx.inputs[1].item();
                let gx = ctx.needs[0].then(|| ctx.grad.iter().map(|g| g * c).collect());
                let gs =
                    ctx.needs[1].then(|| vec![ctx.grad.iter().zip(ctx.inputs[0].data()).map(|(g, x)| g * x).sum()]);
                vec![gx, gs]
            }),
        ))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, |x, _| sign(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |x| 1.0 / x, |_, y| -y * y)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Softplus => self.softplus(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    /// ReLU; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let n = self.value(x).len();
        self.custom(&[x], Tensor::scalar(s), Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.custom(&[x], out, Box::new(|ctx| vec![Some(ctx.grad.to_vec())])))
    }

    /// Concatenates 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .value(*xs.first().ok_or_else(|| NnError::InvalidArgument("concat of zero tensors".into()))?)
            .dims4()?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let [n, c, h, w] = self.value(x).dims4()?;
            if n != first[0] || h != first[2] || w != first[3] {
                return Err(NnError::Shape(format!("concat: {:?} vs {:?}", first, self.shape(x))));
            }
            chans.push(c);
        }
        let [n, _, h, w] = first;
        let hw = h * w;
        let total: usize = chans.iter().sum();
        let mut out = vec![0.0; n * total * hw];
        for b in 0..n {
            let mut off = 0;
            for (&x, &c) in xs.iter().zip(&chans) {
                let src = &self.value(x).data()[b * c * hw..(b + 1) * c * hw];
                out[(b * total + off) * hw..(b * total + off + c) * hw].copy_from_slice(src);
                off += c;
            }
        }
        let out = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.custom(
            xs,
            out,
            Box::new(move |ctx| {
                let mut grads = Vec::with_capacity(chans.len());
                let mut off = 0;
                for (i, &c) in chans.iter().enumerate() {
                    if ctx.needs[i] {
                        let mut g = vec![0.0; n * c * hw];
                        for b in 0..n {
                            g[b * c * hw..(b + 1) * c * hw]
                                .copy_from_slice(&ctx.grad[(b * total + off) * hw..(b * total + off + c) * hw]);
                        }
                        grads.push(Some(g));
                    } else {
                        grads.push(None);
                    }
                    off += c;
                }
                grads
            }),
        ))
    }

    /// Channels `start..start + len` of a 4-D tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(NnError::Shape(format!("channel slice {start}..{} out of 0..{c}", start + len)));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let out = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; n * c * hw];
                for b in 0..n {
                    g[(b * c + start) * hw..(b * c + start + len) * hw]
                        .copy_from_slice(&ctx.grad[b * len * hw..(b + 1) * len * hw]);
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(-50.0) > 0.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let c = g.mul(a, b).unwrap();
        g.backward(c).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap().item(), 2.0);
    }

    #[test]
    fn shared_node_accumulates() {
        // d/dx (x*x + x) = 2x + 1
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(x), Err(NnError::NotScalar(_))));
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_fn(vec![2, 1, 2, 2], |i| i as f64));
        let b = g.leaf(Tensor::from_fn(vec![2, 2, 2, 2], |i| 100.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2, 2]);
        let back = g.slice_channels(c, 1, 2).unwrap();
        assert_eq!(g.value(back), g.value(b));
        let front = g.slice_channels(c, 0, 1).unwrap();
        assert_eq!(g.value(front), g.value(a));
    }
}
