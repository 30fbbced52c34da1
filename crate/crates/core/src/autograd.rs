//! Reverse-mode differentiation over an append-only tape.
//!
//! Nodes are created in evaluation order and each refers only to earlier
//! nodes, so the tape is acyclic and a single reverse sweep visits every
//! node once.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Result, TarError};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::ops::{self, BnState};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch statistics captured by a training-mode batch norm, for updating
/// running estimates after the step.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Upsample2x {
        x: Var,
    },
    AvgPool2x {
        x: Var,
    },
    Mask {
        x: Var,
        mask: Tensor<T>,
    },
    SubConst {
        x: Var,
    },
    L1Sum {
        x: Var,
    },
    Sum {
        x: Var,
    },
    GroupMeanAbs {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// A recorded computation. Single owner, single thread; independent graphs
/// may live on independent threads.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// An unnamed leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// A named trainable leaf; its gradient is reported by [`Graph::param_grads`].
    pub fn param(&mut self, name: &str, t: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, t, true);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bias = b.map(|b| self.value(b));
        let geom = ops::conv_geom(self.value(x), self.value(w), bias, stride, pad)?;
        let y = kernels::conv2d_forward(self.value(x), self.value(w), bias, &geom);
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Conv2d { x, w, b, geom }, y, ng))
    }

    /// Batch norm. With `running: None` the batch statistics are used
    /// (training) and returned; with `Some(state)` the running statistics
    /// are used as constants (inference).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<&BnState<T>>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xv = self.value(x);
        let count = ops::check_bn(xv, self.value(gamma), self.value(beta), running.is_none())?;
        let (mean, var, stats) = match running {
            None => {
                let (m, v) = kernels::channel_stats(xv);
                let stats = BatchStats {
                    mean: m.clone(),
                    var: v.clone(),
                    count,
                };
                (m, v, Some(stats))
            }
            Some(st) => (st.mean.clone(), st.var.clone(), None),
        };
        let inv = ops::inv_std(&var, eps);
        let (y, xhat) = kernels::bn_apply(
            xv,
            &mean,
            &inv,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv,
                batch_stats: running.is_none(),
            },
            y,
            ng,
        );
        Ok((v, stats))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let y = ops::leaky_relu(self.value(x), slope)?;
        let ng = self.needs(x);
        Ok(self.push(Op::LeakyRelu { x, slope: T::of(slope) }, y, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0).expect("zero slope is valid")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = ops::tanh(self.value(x));
        let ng = self.needs(x);
        self.push(Op::Tanh { x }, y, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, y, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, y, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let y = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(Op::Scale { x, c }, y, ng)
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let y = ops::upsample_nearest2x(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(Op::Upsample2x { x }, y, ng))
    }

    pub fn avg_pool2x(&mut self, x: Var) -> Result<Var> {
        let y = ops::avg_pool2x(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(Op::AvgPool2x { x }, y, ng))
    }

    /// Elementwise product with a constant tensor.
    pub fn mask(&mut self, x: Var, mask: Tensor<T>) -> Result<Var> {
        let y = self.value(x).zip_map(&mask, |a, m| a * m)?;
        let ng = self.needs(x);
        Ok(self.push(Op::Mask { x, mask }, y, ng))
    }

    /// `x − c` for a constant tensor `c`.
    pub fn sub_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let y = self.value(x).zip_map(c, |a, b| a - b)?;
        let ng = self.needs(x);
        Ok(self.push(Op::SubConst { x }, y, ng))
    }

    pub fn l1_sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(ops::l1_sum(self.value(x)));
        let ng = self.needs(x);
        self.push(Op::L1Sum { x }, y, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).data().iter().copied().sum());
        let ng = self.needs(x);
        self.push(Op::Sum { x }, y, ng)
    }

    /// Split the channels of `[B, C, H, W]` into `groups` equal consecutive
    /// groups and return the mean absolute value of each, shape `[B, groups]`.
    pub fn group_mean_abs(&mut self, x: Var, groups: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(TarError::contract(format!(
                "group_mean_abs: {c} channels cannot split into {groups} groups"
            )));
        }
        let per = c / groups * h * w;
        let d = self.value(x).data();
        let inv = T::of(1.0 / per as f64);
        let out: Vec<T> = d
            .chunks(per)
            .map(|g| g.iter().map(|v| v.abs()).sum::<T>() * inv)
            .collect();
        let y = Tensor::from_vec(&[b, groups], out)?;
        let ng = self.needs(x);
        Ok(self.push(Op::GroupMeanAbs { x }, y, ng))
    }

    /// Populate gradients of every tracked node with respect to `loss`.
    ///
    /// Calling it twice without [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TarError::contract(
                "backward called twice without reset_grads",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(TarError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy);
            self.grads[i] = Some(gy);
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, gy: &Tensor<T>) {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Tensor<T>)> = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need_x = self.needs(*x);
                let (gx, gw, gb) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), gy, geom, need_x);
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                out.push((*w, gw));
                if let Some(b) = b {
                    out.push((*b, gb));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (gx, gg, gb) =
                    kernels::bn_backward(gy, xhat, self.value(*gamma).data(), inv_std, *batch_stats);
                let c = gg.len();
                out.push((*x, gx));
                out.push((*gamma, Tensor::from_vec(&[c], gg).expect("gamma grad")));
                out.push((*beta, Tensor::from_vec(&[c], gb).expect("beta grad")));
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let s = *slope;
                let g = xv
                    .zip_map(gy, |a, g| if a >= T::zero() { g } else { s * g })
                    .expect("same shape");
                out.push((*x, g));
            }
            Op::Tanh { x } => {
                let g = node
                    .value
                    .zip_map(gy, |y, g| g * (T::one() - y * y))
                    .expect("same shape");
                out.push((*x, g));
            }
            Op::Add { a, b } => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub { a, b } => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|g| -g)));
            }
            Op::Scale { x, c } => {
                let c = *c;
                out.push((*x, gy.map(|g| g * c)));
            }
            Op::Upsample2x { x } => out.push((*x, kernels::sum_pool2x(gy))),
            Op::AvgPool2x { x } => {
                let q = T::of(0.25);
                out.push((*x, kernels::upsample2x(gy).map(|g| g * q)));
            }
            Op::Mask { x, mask } => out.push((*x, gy.zip_map(mask, |g, m| g * m).expect("same shape"))),
            Op::SubConst { x } => out.push((*x, gy.clone())),
            Op::L1Sum { x } => {
                let g = gy.data()[0];
                out.push((*x, self.value(*x).map(|v| signum0(v) * g)));
            }
            Op::Sum { x } => {
                let g = gy.data()[0];
                out.push((*x, Tensor::full(self.value(*x).shape(), g)));
            }
            Op::GroupMeanAbs { x } => {
                let xv = self.value(*x);
                let per = xv.numel() / gy.numel();
                let inv = T::of(1.0 / per as f64);
                let mut g = xv.clone();
                for (chunk, &gv) in g.data_mut().chunks_mut(per).zip(gy.data()) {
                    chunk.iter_mut().for_each(|v| *v = signum0(*v) * gv * inv);
                }
                out.push((*x, g));
            }
        }
        for (v, g) in out {
            self.accumulate(v, g);
        }
    }

    /// Gradient of a node after [`Graph::backward`]; `None` if it received none.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Named parameter gradients (zeros for parameters the loss did not reach).
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, Tensor<T>)> + '_ {
        self.params.iter().map(|(name, v)| {
            let g = self
                .grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            (name.as_str(), g)
        })
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Hash of the sign pattern at every non-differentiable point on the
    /// tape (rectifier inputs and absolute values). Two evaluations with
    /// the same signature lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            let x = match node.op {
                Op::LeakyRelu { x, .. } | Op::L1Sum { x } | Op::GroupMeanAbs { x } => x,
                _ => continue,
            };
            x.0.hash(&mut h);
            for v in self.value(x).data() {
                let s: i8 = if *v > T::zero() {
                    1
                } else if *v < T::zero() {
                    -1
                } else {
                    0
                };
                s.hash(&mut h);
            }
        }
        h.finish()
    }
}

fn signum0<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_gradient_is_ones_for_positive_input() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_vec(&[4], vec![0.5, 1.0, 2.0, 3.0]).unwrap());
        let l = g.l1_sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn leaky_gradient_is_slope_for_negative_input() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_vec(&[3], vec![-0.5, -1.0, -2.0]).unwrap());
        let y = g.leaky_relu(x, 0.01).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.01; 3]);
    }

    #[test]
    fn backward_twice_without_reset_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::ones(&[2]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(g.backward(l).is_err());
        g.reset_grads();
        g.backward(l).unwrap();
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::ones(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full(&[2], 3.0));
        let y = g.add(x, x).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::ones(&[2]));
        let x = g.variable(Tensor::ones(&[2]));
        let y = g.add(c, x).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn group_mean_abs_splits_channels() {
        let mut g = Graph::<f64>::new();
        let data = vec![1.0, -1.0, 2.0, -2.0, 0.0, 0.0, 4.0, 4.0];
        let x = g.variable(Tensor::from_vec(&[1, 4, 1, 2], data).unwrap());
        let a = g.group_mean_abs(x, 2).unwrap();
        assert_eq!(g.value(a).data(), &[1.5, 2.0]);
    }
}
