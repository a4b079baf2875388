//! Reverse-mode autodiff over a flat tape of f64 tensors.
//!
//! A [`Graph`] is rebuilt per training step (define-by-run). Nodes hold
//! owned standard-layout arrays; backward walks the tape in reverse and
//! accumulates gradients into a [`ParamStore`](crate::nn::ParamStore).
//! The op set is the minimum needed for small transformers, MLPs and the
//! losses used in this workspace.

use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Zip};

use crate::nn::{ParamId, ParamStore};
use crate::Arr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
    Sigmoid,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Matmul,
    Bmm,
    Permute(Vec<usize>),
    Reshape,
    Concat { axis: usize },
    Softmax,
    LayerNorm { eps: f64 },
    Act(Activation),
    MeanAll,
    SumAll,
    MeanAxis { axis: usize },
    Gather { indices: Vec<usize> },
    CrossEntropy { targets: Vec<usize> },
    L2NormRows,
}

struct Node {
    value: Arr,
    parents: Vec<NodeId>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast: {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sum `grad` down to `shape` by reducing the axes that were broadcast.
fn reduce_to_shape(grad: &Arr, shape: &[usize]) -> Arr {
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, (&gd, &sd)) in g.shape().to_vec().iter().zip(shape).enumerate() {
        if sd == 1 && gd != 1 {
            let summed = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
            g = summed;
        }
    }
    g
}

fn matmul2(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>) -> Arr {
    let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-d");
    let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-d");
    a2.dot(&b2).into_dyn()
}

fn act_forward(kind: Activation, x: &Arr) -> Arr {
    match kind {
        Activation::Relu => x.mapv(|v| v.max(0.0)),
        Activation::Silu => x.mapv(|v| v / (1.0 + (-v).exp())),
        Activation::Tanh => x.mapv(f64::tanh),
        Activation::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::Exp => x.mapv(f64::exp),
        Activation::Sqrt => x.mapv(f64::sqrt),
    }
}

fn act_backward(kind: Activation, x: &Arr, y: &Arr, grad: &Arr) -> Arr {
    match kind {
        Activation::Relu => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(x).for_each(|g, &x| {
                if x <= 0.0 {
                    *g = 0.0
                }
            });
            g
        }
        Activation::Silu => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(x).for_each(|g, &x| {
                let s = 1.0 / (1.0 + (-x).exp());
                *g *= s * (1.0 + x * (1.0 - s));
            });
            g
        }
        Activation::Tanh => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
            g
        }
        Activation::Sigmoid => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
            g
        }
        Activation::Exp => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(y).for_each(|g, &y| *g *= y);
            g
        }
        Activation::Sqrt => {
            let mut g = grad.clone();
            Zip::from(&mut g).and(y).for_each(|g, &y| *g *= 0.5 / y.max(1e-300));
            g
        }
    }
}

fn softmax_last(x: &Arr) -> Arr {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
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

    pub fn value(&self, id: NodeId) -> &Arr {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.len(), 1, "node is not a scalar");
        *v.iter().next().unwrap()
    }

    fn push(&mut self, value: Arr, parents: Vec<NodeId>, op: Op, param: Option<ParamId>) -> NodeId {
        let needs_grad =
            param.is_some() || parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            op,
            needs_grad,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Arr) -> NodeId {
        self.push(value, vec![], Op::Leaf, None)
    }

    /// Trainable leaf bound to a parameter in `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), vec![], Op::Leaf, Some(id))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = broadcast_shape(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let va = self.nodes[a.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        let vb = self.nodes[b.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        self.push(va + vb, vec![a, b], Op::Add, None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = broadcast_shape(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let va = self.nodes[a.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        let vb = self.nodes[b.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        self.push(va - vb, vec![a, b], Op::Sub, None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = broadcast_shape(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        let va = self.nodes[a.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        let vb = self.nodes[b.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
        self.push(va * vb, vec![a, b], Op::Mul, None)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, vec![a], Op::Scale(c), None)
    }

    /// 2-d matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul2(&self.nodes[a.0].value.view(), &self.nodes[b.0].value.view());
        self.push(v, vec![a, b], Op::Matmul, None)
    }

    /// Batched matrix product `[b,m,k] x [b,k,n] -> [b,m,n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert_eq!(va.ndim(), 3);
        assert_eq!(vb.ndim(), 3);
        assert_eq!(va.shape()[0], vb.shape()[0], "bmm batch mismatch");
        assert_eq!(va.shape()[2], vb.shape()[1], "bmm inner mismatch");
        let (bs, m, n) = (va.shape()[0], va.shape()[1], vb.shape()[2]);
        let mut out = ArrayD::zeros(IxDyn(&[bs, m, n]));
        for i in 0..bs {
            let ai = va.index_axis(Axis(0), i);
            let bi = vb.index_axis(Axis(0), i);
            let ci = matmul2(&ai, &bi);
            out.index_axis_mut(Axis(0), i).assign(&ci);
        }
        self.push(out, vec![a, b], Op::Bmm, None)
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        self.push(v, vec![a], Op::Permute(axes.to_vec()), None)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[a.0]
            .value
            .view()
            .to_shape(IxDyn(shape))
            .expect("reshape size mismatch")
            .to_owned();
        self.push(v, vec![a], Op::Reshape, None)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        self.push(v, parts.to_vec(), Op::Concat { axis }, None)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = softmax_last(&self.nodes[a.0].value);
        self.push(v, vec![a], Op::Softmax, None)
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let d = *xv.shape().last().unwrap();
        let gv = self.nodes[gamma.0].value.clone();
        let bv = self.nodes[beta.0].value.clone();
        let mut y = xv.clone();
        for mut row in y.rows_mut() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gv[j] + bv[j];
            }
        }
        self.push(y, vec![x, gamma, beta], Op::LayerNorm { eps }, None)
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let v = act_forward(kind, &self.nodes[a.0].value);
        self.push(v, vec![a], Op::Act(kind), None)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Silu)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let m = self.nodes[a.0].value.mean().unwrap();
        self.push(Arr::from_elem(IxDyn(&[1]), m), vec![a], Op::MeanAll, None)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.sum();
        self.push(Arr::from_elem(IxDyn(&[1]), s), vec![a], Op::SumAll, None)
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.nodes[a.0].value.mean_axis(Axis(axis)).unwrap();
        self.push(v, vec![a], Op::MeanAxis { axis }, None)
    }

    /// Row lookup into a 2-d table: `table[indices] -> [n, d]`.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = &self.nodes[table.0].value;
        assert_eq!(t.ndim(), 2);
        let d = t.shape()[1];
        let mut out = ArrayD::zeros(IxDyn(&[indices.len(), d]));
        for (i, &ix) in indices.iter().enumerate() {
            out.index_axis_mut(Axis(0), i)
                .assign(&t.index_axis(Axis(0), ix));
        }
        self.push(out, vec![table], Op::Gather { indices: indices.to_vec() }, None)
    }

    /// Mean cross-entropy of `[n, c]` logits against integer targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let l = &self.nodes[logits.0].value;
        assert_eq!(l.ndim(), 2);
        assert_eq!(l.shape()[0], targets.len());
        let mut total = 0.0;
        for (row, &t) in l.rows().into_iter().zip(targets) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let mean = total / targets.len() as f64;
        self.push(
            Arr::from_elem(IxDyn(&[1]), mean),
            vec![logits],
            Op::CrossEntropy { targets: targets.to_vec() },
            None,
        )
    }

    /// L2-normalize each row of a `[n, d]` matrix.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a.0].value;
        assert_eq!(x.ndim(), 2);
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let r = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.mapv_inplace(|v| v / r);
        }
        self.push(y, vec![a], Op::L2NormRows, None)
    }

    /// Mean of squared differences, the workhorse reconstruction loss.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Backpropagate from a scalar node, accumulating into `store` grads.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Arr::from_elem(IxDyn(&[1]), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Some(pid) = self.nodes[i].param {
                store.accumulate_grad(pid, &grad);
            }
            let parents = self.nodes[i].parents.clone();
            let op = self.nodes[i].op.clone();
            let send = |slot: &mut Option<Arr>, g: Arr| match slot {
                Some(existing) => *existing += &g,
                None => *slot = Some(g),
            };
            match op {
                Op::Leaf => {}
                Op::Add => {
                    for &p in &parents {
                        let shp = self.nodes[p.0].value.shape().to_vec();
                        let g = reduce_to_shape(&grad, &shp);
                        send(&mut grads[p.0], g);
                    }
                }
                Op::Sub => {
                    let shp_a = self.nodes[parents[0].0].value.shape().to_vec();
                    let shp_b = self.nodes[parents[1].0].value.shape().to_vec();
                    send(&mut grads[parents[0].0], reduce_to_shape(&grad, &shp_a));
                    send(&mut grads[parents[1].0], reduce_to_shape(&grad.mapv(|v| -v), &shp_b));
                }
                Op::Mul => {
                    let (a, b) = (parents[0], parents[1]);
                    let shape = grad.shape().to_vec();
                    let va = self.nodes[a.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
                    let vb = self.nodes[b.0].value.broadcast(IxDyn(&shape)).unwrap().to_owned();
                    let shp_a = self.nodes[a.0].value.shape().to_vec();
                    let shp_b = self.nodes[b.0].value.shape().to_vec();
                    send(&mut grads[a.0], reduce_to_shape(&(&grad * &vb), &shp_a));
                    send(&mut grads[b.0], reduce_to_shape(&(&grad * &va), &shp_b));
                }
                Op::Scale(c) => {
                    send(&mut grads[parents[0].0], grad.mapv(|v| v * c));
                }
                Op::Matmul => {
                    let (a, b) = (parents[0], parents[1]);
                    let va = self.nodes[a.0].value.view();
                    let vb = self.nodes[b.0].value.view();
                    let bt = vb.t().as_standard_layout().to_owned().into_dyn();
                    let at = va.t().as_standard_layout().to_owned().into_dyn();
                    let ga = matmul2(&grad.view(), &bt.view());
                    let gb = matmul2(&at.view(), &grad.view());
                    send(&mut grads[a.0], ga);
                    send(&mut grads[b.0], gb);
                }
                Op::Bmm => {
                    let (a, b) = (parents[0], parents[1]);
                    let va = self.nodes[a.0].value.clone();
                    let vb = self.nodes[b.0].value.clone();
                    let bs = va.shape()[0];
                    let mut ga = ArrayD::zeros(va.raw_dim());
                    let mut gb = ArrayD::zeros(vb.raw_dim());
                    for i in 0..bs {
                        let gi = grad.index_axis(Axis(0), i);
                        let ai = va.index_axis(Axis(0), i);
                        let bi = vb.index_axis(Axis(0), i);
                        let bt = bi.t().as_standard_layout().to_owned().into_dyn();
                        let at = ai.t().as_standard_layout().to_owned().into_dyn();
                        ga.index_axis_mut(Axis(0), i)
                            .assign(&matmul2(&gi, &bt.view()));
                        gb.index_axis_mut(Axis(0), i)
                            .assign(&matmul2(&at.view(), &gi));
                    }
                    send(&mut grads[a.0], ga);
                    send(&mut grads[b.0], gb);
                }
                Op::Permute(axes) => {
                    let mut inv = vec![0usize; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inv[ax] = i;
                    }
                    let g = grad
                        .view()
                        .permuted_axes(IxDyn(&inv))
                        .as_standard_layout()
                        .to_owned();
                    send(&mut grads[parents[0].0], g);
                }
                Op::Reshape => {
                    let shp = self.nodes[parents[0].0].value.shape().to_vec();
                    let g = grad.view().to_shape(IxDyn(&shp)).unwrap().to_owned();
                    send(&mut grads[parents[0].0], g);
                }
                Op::Concat { axis } => {
                    let mut offset = 0;
                    for &p in &parents {
                        let len = self.nodes[p.0].value.shape()[axis];
                        let g = grad
                            .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + len))
                            .to_owned();
                        send(&mut grads[p.0], g);
                        offset += len;
                    }
                }
                Op::Softmax => {
                    let y = self.nodes[i].value.clone();
                    let mut g = &grad * &y;
                    // subtract y * sum(grad * y) along the last axis
                    let mut dots = g.clone();
                    for (mut drow, grow) in dots.rows_mut().into_iter().zip(g.rows()) {
                        let s: f64 = grow.sum();
                        drow.fill(s);
                    }
                    g = &g - &(&dots * &y);
                    send(&mut grads[parents[0].0], g);
                }
                Op::LayerNorm { eps } => {
                    let x = self.nodes[parents[0].0].value.clone();
                    let gv = self.nodes[parents[1].0].value.clone();
                    let d = *x.shape().last().unwrap();
                    let mut gx = ArrayD::zeros(x.raw_dim());
                    let mut ggamma = ArrayD::zeros(IxDyn(&[d]));
                    let mut gbeta = ArrayD::zeros(IxDyn(&[d]));
                    for ((xrow, grow), mut gxrow) in x
                        .rows()
                        .into_iter()
                        .zip(grad.rows())
                        .zip(gx.rows_mut())
                    {
                        let mean = xrow.sum() / d as f64;
                        let var = xrow.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                        let gy: Vec<f64> = grow.iter().cloned().collect();
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for j in 0..d {
                            let gj = gy[j] * gv[j];
                            sum_g += gj;
                            sum_gx += gj * xhat[j];
                            ggamma[j] += gy[j] * xhat[j];
                            gbeta[j] += gy[j];
                        }
                        for j in 0..d {
                            let gj = gy[j] * gv[j];
                            gxrow[j] = inv * (gj - sum_g / d as f64 - xhat[j] * sum_gx / d as f64);
                        }
                    }
                    send(&mut grads[parents[0].0], gx);
                    send(&mut grads[parents[1].0], ggamma);
                    send(&mut grads[parents[2].0], gbeta);
                }
                Op::Act(kind) => {
                    let x = &self.nodes[parents[0].0].value;
                    let y = &self.nodes[i].value;
                    let g = act_backward(kind, x, y, &grad);
                    send(&mut grads[parents[0].0], g);
                }
                Op::MeanAll => {
                    let n = self.nodes[parents[0].0].value.len() as f64;
                    let shp = self.nodes[parents[0].0].value.raw_dim();
                    let g = ArrayD::from_elem(shp, grad[0] / n);
                    send(&mut grads[parents[0].0], g);
                }
                Op::SumAll => {
                    let shp = self.nodes[parents[0].0].value.raw_dim();
                    let g = ArrayD::from_elem(shp, grad[0]);
                    send(&mut grads[parents[0].0], g);
                }
                Op::MeanAxis { axis } => {
                    let shp = self.nodes[parents[0].0].value.shape().to_vec();
                    let n = shp[axis] as f64;
                    let expanded = grad.clone().insert_axis(Axis(axis));
                    let g = expanded
                        .broadcast(IxDyn(&shp))
                        .unwrap()
                        .to_owned()
                        .mapv(|v| v / n);
                    send(&mut grads[parents[0].0], g);
                }
                Op::Gather { indices } => {
                    let shp = self.nodes[parents[0].0].value.raw_dim();
                    let mut g = ArrayD::zeros(shp);
                    for (r, &ix) in indices.iter().enumerate() {
                        let mut dst = g.index_axis_mut(Axis(0), ix);
                        dst += &grad.index_axis(Axis(0), r);
                    }
                    send(&mut grads[parents[0].0], g);
                }
                Op::CrossEntropy { targets } => {
                    let logits = &self.nodes[parents[0].0].value;
                    let mut g = softmax_last(logits);
                    let n = targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        g[[r, t]] -= 1.0;
                    }
                    g.mapv_inplace(|v| v * grad[0] / n);
                    send(&mut grads[parents[0].0], g);
                }
                Op::L2NormRows => {
                    let x = &self.nodes[parents[0].0].value;
                    let y = &self.nodes[i].value;
                    let mut g = ArrayD::zeros(x.raw_dim());
                    for ((xrow, yrow), (grow, mut gxrow)) in x
                        .rows()
                        .into_iter()
                        .zip(y.rows())
                        .zip(grad.rows().into_iter().zip(g.rows_mut()))
                    {
                        let r = xrow.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..xrow.len() {
                            gxrow[j] = (grow[j] - yrow[j] * dot) / r;
                        }
                    }
                    send(&mut grads[parents[0].0], g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::rng;

    fn fd_check<F>(mut f: F, store: &mut ParamStore, tol: f64)
    where
        F: FnMut(&ParamStore) -> (Graph, NodeId),
    {
        let (mut g, loss) = f(store);
        store.zero_grads();
        g.backward(loss, store);
        let analytic: Vec<Arr> = store.all_grads();
        let h = 1e-6;
        for pid in store.ids() {
            let n = store.value(pid).len();
            for k in 0..n {
                let orig = store.value(pid).as_slice().unwrap()[k];
                store.set_coord(pid, k, orig + h);
                let (gp, lp) = f(store);
                let fp = gp.scalar(lp);
                store.set_coord(pid, k, orig - h);
                let (gm, lm) = f(store);
                let fm = gm.scalar(lm);
                store.set_coord(pid, k, orig);
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic[pid.index()].as_slice().unwrap()[k];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "grad mismatch at {pid:?}[{k}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_composite_expression() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(11, "t", &[]);
        let w = store.register("w", rng::normal(&mut r, &[3, 4]));
        let b = store.register("b", rng::normal(&mut r, &[4]));
        let gamma = store.register("gamma", Arr::ones(IxDyn(&[4])));
        let beta = store.register("beta", Arr::zeros(IxDyn(&[4])));
        let x = rng::normal(&mut r, &[5, 3]);
        let target = rng::normal(&mut r, &[5, 4]);

        fd_check(
            |store| {
                let mut g = Graph::new();
                let xn = g.constant(x.clone());
                let wn = g.param(store, w);
                let bn = g.param(store, b);
                let gn = g.param(store, gamma);
                let be = g.param(store, beta);
                let h = g.matmul(xn, wn);
                let h = g.add(h, bn);
                let h = g.layer_norm(h, gn, be, 1e-5);
                let h = g.silu(h);
                let t = g.constant(target.clone());
                let loss = g.mse(h, t);
                (g, loss)
            },
            &mut store,
            1e-5,
        );
    }

    #[test]
    fn gradients_match_on_attention_style_ops() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(3, "t", &[]);
        let wq = store.register("wq", rng::normal(&mut r, &[4, 4]).mapv(|v| v * 0.5));
        let x = rng::normal(&mut r, &[2, 3, 4]); // [batch, tokens, dim]

        fd_check(
            |store| {
                let mut g = Graph::new();
                let xn = g.constant(x.clone());
                let wn = g.param(store, wq);
                let flat = g.reshape(xn, &[6, 4]);
                let q = g.matmul(flat, wn);
                let q = g.reshape(q, &[2, 3, 4]);
                let kt = g.permute(q, &[0, 2, 1]);
                let scores = g.bmm(q, kt);
                let scores = g.scale(scores, 0.5);
                let attn = g.softmax(scores);
                let out = g.bmm(attn, q);
                let loss = g.mean_all(out);
                // mean alone can vanish; add a second moment
                let sq = g.mul(out, out);
                let loss2 = g.mean_all(sq);
                let total = g.add(loss, loss2);
                (g, total)
            },
            &mut store,
            1e-5,
        );
    }

    #[test]
    fn gradients_match_on_gather_concat_ce_and_l2norm() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, "t", &[]);
        let table = store.register("emb", rng::normal(&mut r, &[6, 4]));
        let w = store.register("w", rng::normal(&mut r, &[8, 3]).mapv(|v| v * 0.3));
        let idx = vec![1usize, 4, 2];
        let targets = vec![0usize, 2, 1];

        fd_check(
            |store| {
                let mut g = Graph::new();
                let t = g.param(store, table);
                let rows = g.gather(t, &idx);
                let rows2 = g.gather(t, &[0, 3, 5]);
                let both = g.concat(&[rows, rows2], 1); // [3, 8]
                let normed = g.l2_normalize_rows(both);
                let wn = g.param(store, w);
                let logits = g.matmul(normed, wn);
                let loss = g.cross_entropy(logits, &targets);
                (g, loss)
            },
            &mut store,
            1e-5,
        );
    }

    #[test]
    fn broadcast_add_reduces_gradient_correctly() {
        let mut store = ParamStore::new();
        let b = store.register("b", Arr::from_elem(IxDyn(&[3]), 0.5));
        let x = Arr::ones(IxDyn(&[4, 3]));
        let mut g = Graph::new();
        let xn = g.constant(x);
        let bn = g.param(&store, b);
        let y = g.add(xn, bn);
        let loss = g.sum_all(y);
        store.zero_grads();
        g.backward(loss, &mut store);
        let gb = store.grad(b);
        assert_eq!(gb.shape(), &[3]);
        assert!(gb.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn mean_axis_backward_distributes() {
        let mut store = ParamStore::new();
        let p = store.register("p", Arr::ones(IxDyn(&[2, 3])));
        let mut g = Graph::new();
        let pn = g.param(&store, p);
        let m = g.mean_axis(pn, 0); // [3]
        let loss = g.sum_all(m);
        store.zero_grads();
        g.backward(loss, &mut store);
        assert!(store.grad(p).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}
