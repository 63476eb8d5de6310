use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use num_traits::Float;

use super::kernels;
use super::{check_same_shape, Tensor};
use crate::error::Result;
use crate::{contract_err, dim_err, index_err};

/// Handle of a recorded node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

/// Tracked input of a node: the source node if the input was on the tape,
/// `None` when it entered the op as a plain constant.
type In = Option<NodeId>;

enum Op {
    Leaf,
    Add { a: In, b: In },
    Sub { a: In, b: In },
    Mul { a: In, b: In, a_data: Arc<Vec<f64>>, b_data: Arc<Vec<f64>> },
    Div { a: In, b: In, a_data: Arc<Vec<f64>>, b_data: Arc<Vec<f64>> },
    Scale { a: In, c: f64 },
    AddScalar { a: In },
    Silu { a: In, x: Arc<Vec<f64>> },
    LnClamped { a: In, x: Arc<Vec<f64>>, min: f64 },
    Matmul { a: In, b: In, a_data: Arc<Vec<f64>>, b_data: Arc<Vec<f64>>, m: usize, k: usize, n: usize },
    Transpose2 { a: In, rows: usize, cols: usize },
    SoftmaxAxis { a: In, y: Arc<Vec<f64>>, shape: Vec<usize>, axis: usize },
    ConcatAxis { a: In, b: In, shape_a: Vec<usize>, shape_b: Vec<usize>, axis: usize },
    BilinearResize { a: In, in_shape: [usize; 3], out_h: usize, out_w: usize },
    Conv2d {
        x: In,
        k: In,
        x_data: Arc<Vec<f64>>,
        k_data: Arc<Vec<f64>>,
        x_shape: [usize; 3],
        k_shape: [usize; 4],
        stride: usize,
        pad: usize,
        out_hw: [usize; 2],
    },
    Sum { a: In },
    Mean { a: In, n: usize },
    ChannelSum { a: In, shape: Vec<usize> },
    Reshape { a: In },
    BiasAdd { a: In, b: In, shape: Vec<usize>, axis: usize },
}

struct Node {
    op: Op,
    /// Shape of this node's output; backward allocates grads from it.
    shape: Vec<usize>,
}

/// Gradient tape for one forward pass (define-by-run).
///
/// Ops record a node only when at least one input is tracked, so running
/// inference through a tape leaves it empty. Single-threaded by design:
/// use one tape per worker.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], addressed by node id.
pub struct GradMap {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl GradMap {
    /// Gradient of the backward root w.r.t. `t`. Leaves that do not reach
    /// the root get a zero gradient of the right shape.
    pub fn grad(&self, t: &Tensor) -> Result<Tensor> {
        let id = t
            .node_id()
            .ok_or_else(|| contract_err!("tensor is not on the tape"))?;
        if id.0 >= self.shapes.len() {
            return Err(contract_err!("node {} is not on this tape", id.0));
        }
        match &self.grads[id.0] {
            Some(g) => Tensor::from_vec(self.shapes[id.0].clone(), g.clone()),
            None => Ok(Tensor::zeros(self.shapes[id.0].clone())),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Register `t` as a differentiable leaf and return the tracked handle.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.shape().to_vec());
        t.clone().with_node(id, true)
    }

    fn push(&self, op: Op, shape: Vec<usize>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node { op, shape });
        id
    }

    /// Record `op` for `out` when any input is tracked; otherwise pass
    /// `out` through untouched.
    fn emit(&self, tracked: bool, requires_grad: bool, op: impl FnOnce() -> Op, out: Tensor) -> Tensor {
        debug_assert!(out.is_finite(), "non-finite values produced by an op");
        if tracked {
            let id = self.push(op(), out.shape().to_vec());
            out.with_node(id, requires_grad)
        } else {
            out
        }
    }

    fn track2(a: &Tensor, b: &Tensor) -> (bool, bool) {
        let tracked = a.node_id().is_some() || b.node_id().is_some();
        let rg = a.requires_grad() || b.requires_grad();
        (tracked, rg)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(tracked, rg, || Op::Add { a: a.node_id(), b: b.node_id() }, out))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(tracked, rg, || Op::Sub { a: a.node_id(), b: b.node_id() }, out))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(
            tracked,
            rg,
            || Op::Mul { a: a.node_id(), b: b.node_id(), a_data: a.data_arc(), b_data: b.data_arc() },
            out,
        ))
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape("div", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(
            tracked,
            rg,
            || Op::Div { a: a.node_id(), b: b.node_id(), a_data: a.data_arc(), b_data: b.data_arc() },
            out,
        ))
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let out = a.map(|v| v * c);
        self.emit(a.node_id().is_some(), a.requires_grad(), || Op::Scale { a: a.node_id(), c }, out)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        let out = a.map(|v| v + c);
        self.emit(a.node_id().is_some(), a.requires_grad(), || Op::AddScalar { a: a.node_id() }, out)
    }

    /// SiLU activation x·σ(x); smooth, so finite-difference checks behave.
    pub fn silu(&self, a: &Tensor) -> Tensor {
        let out = a.map(|v| v * kernels::sigmoid(v));
        self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::Silu { a: a.node_id(), x: a.data_arc() },
            out,
        )
    }

    /// ln(max(x, min)); the clamp keeps log terms finite near zero.
    pub fn ln_clamped(&self, a: &Tensor, min: f64) -> Tensor {
        let out = a.map(|v| Float::ln(v.max(min)));
        self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::LnClamped { a: a.node_id(), x: a.data_arc(), min },
            out,
        )
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(dim_err!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(dim_err!(
                "matmul inner extents differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            ));
        }
        let data = kernels::matmul(a.data(), b.data(), m, k, n);
        let out = Tensor::from_vec(vec![m, n], data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(
            tracked,
            rg,
            || Op::Matmul {
                a: a.node_id(),
                b: b.node_id(),
                a_data: a.data_arc(),
                b_data: b.data_arc(),
                m,
                k,
                n,
            },
            out,
        ))
    }

    pub fn transpose2(&self, a: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(dim_err!("transpose expects rank 2, got {:?}", a.shape()));
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::from_vec(vec![cols, rows], kernels::transpose2(a.data(), rows, cols))?;
        Ok(self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::Transpose2 { a: a.node_id(), rows, cols },
            out,
        ))
    }

    /// Max-stabilized softmax along `axis`; slices sum to one.
    pub fn softmax_axis(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(index_err!(
                "softmax axis {} out of range for shape {:?}",
                axis,
                a.shape()
            ));
        }
        let data = kernels::softmax_axis(a.data(), a.shape(), axis);
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let y = out.data_arc();
        Ok(self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::SoftmaxAxis { a: a.node_id(), y, shape: a.shape().to_vec(), axis },
            out,
        ))
    }

    /// Concatenate along `axis`; a's slices precede b's.
    pub fn concat_axis(&self, a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
        if a.rank() != b.rank() || axis >= a.rank() {
            return Err(dim_err!(
                "concat axis {} invalid for shapes {:?} and {:?}",
                axis,
                a.shape(),
                b.shape()
            ));
        }
        for (d, (&ea, &eb)) in a.shape().iter().zip(b.shape()).enumerate() {
            if d != axis && ea != eb {
                return Err(dim_err!(
                    "concat along axis {}: extent mismatch at axis {} for shapes {:?} and {:?}",
                    axis,
                    d,
                    a.shape(),
                    b.shape()
                ));
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] += b.shape()[axis];
        let (outer, len_a, inner) = kernels::axis_blocks(a.shape(), axis);
        let len_b = b.shape()[axis];
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for o in 0..outer {
            data.extend_from_slice(&a.data()[o * len_a * inner..(o + 1) * len_a * inner]);
            data.extend_from_slice(&b.data()[o * len_b * inner..(o + 1) * len_b * inner]);
        }
        let out = Tensor::from_vec(shape, data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(
            tracked,
            rg,
            || Op::ConcatAxis {
                a: a.node_id(),
                b: b.node_id(),
                shape_a: a.shape().to_vec(),
                shape_b: b.shape().to_vec(),
                axis,
            },
            out,
        ))
    }

    /// Bilinear resize of a c×h×w tensor (align-corners=false, half-pixel
    /// centers). Same-size targets reproduce the input exactly.
    pub fn bilinear_resize(&self, a: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        if a.rank() != 3 {
            return Err(dim_err!("resize expects c×h×w, got {:?}", a.shape()));
        }
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("resize target {}×{} has a zero extent", out_h, out_w));
        }
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let data = if out_h == h && out_w == w {
            a.data().to_vec()
        } else {
            kernels::bilinear_resize(a.data(), c, h, w, out_h, out_w)
        };
        let out = Tensor::from_vec(vec![c, out_h, out_w], data)?;
        Ok(self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::BilinearResize { a: a.node_id(), in_shape: [c, h, w], out_h, out_w },
            out,
        ))
    }

    /// 2-D cross-correlation of x[cin×h×w] with kernel[cout×cin×kh×kw].
    pub fn conv2d(&self, x: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        if x.rank() != 3 || kernel.rank() != 4 {
            return Err(dim_err!(
                "conv2d expects cin×h×w input and cout×cin×kh×kw kernel, got {:?} and {:?}",
                x.shape(),
                kernel.shape()
            ));
        }
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kcin, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        );
        if kcin != cin {
            return Err(dim_err!(
                "conv2d channel mismatch: input {:?} vs kernel {:?}",
                x.shape(),
                kernel.shape()
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(dim_err!("conv2d kernel extents must be odd, got {}×{}", kh, kw));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be positive"));
        }
        let oh = kernels::conv_out_extent(h, kh, stride, pad)
            .ok_or_else(|| dim_err!("conv2d: ({h}+2·{pad}−{kh})/{stride}+1 is not integral"))?;
        let ow = kernels::conv_out_extent(w, kw, stride, pad)
            .ok_or_else(|| dim_err!("conv2d: ({w}+2·{pad}−{kw})/{stride}+1 is not integral"))?;
        let data = kernels::conv2d(x.data(), kernel.data(), cin, h, w, cout, kh, kw, stride, pad, oh, ow);
        let out = Tensor::from_vec(vec![cout, oh, ow], data)?;
        let (tracked, rg) = Self::track2(x, kernel);
        Ok(self.emit(
            tracked,
            rg,
            || Op::Conv2d {
                x: x.node_id(),
                k: kernel.node_id(),
                x_data: x.data_arc(),
                k_data: kernel.data_arc(),
                x_shape: [cin, h, w],
                k_shape: [cout, cin, kh, kw],
                stride,
                pad,
                out_hw: [oh, ow],
            },
            out,
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let out = Tensor::scalar(a.data().iter().sum());
        self.emit(a.node_id().is_some(), a.requires_grad(), || Op::Sum { a: a.node_id() }, out)
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&self, a: &Tensor) -> Tensor {
        let n = a.numel();
        let out = Tensor::scalar(a.data().iter().sum::<f64>() / n as f64);
        self.emit(a.node_id().is_some(), a.requires_grad(), || Op::Mean { a: a.node_id(), n }, out)
    }

    /// Per-channel sums: collapse all trailing axes of a rank≥2 tensor.
    pub fn channel_sum(&self, a: &Tensor) -> Result<Tensor> {
        if a.rank() < 2 {
            return Err(dim_err!("channel_sum expects rank ≥ 2, got {:?}", a.shape()));
        }
        let c = a.shape()[0];
        let inner: usize = a.shape()[1..].iter().product();
        let data = (0..c)
            .map(|ch| a.data()[ch * inner..(ch + 1) * inner].iter().sum())
            .collect();
        let out = Tensor::from_vec(vec![c], data)?;
        Ok(self.emit(
            a.node_id().is_some(),
            a.requires_grad(),
            || Op::ChannelSum { a: a.node_id(), shape: a.shape().to_vec() },
            out,
        ))
    }

    pub fn reshape(&self, a: &Tensor, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let out = a.detached().reshaped(shape)?;
        Ok(self.emit(a.node_id().is_some(), a.requires_grad(), || Op::Reshape { a: a.node_id() }, out))
    }

    /// Broadcast-add a vector `b` along `axis` of `a`.
    pub fn bias_add(&self, a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() || b.rank() != 1 || b.shape()[0] != a.shape()[axis] {
            return Err(dim_err!(
                "bias_add: vector {:?} does not match axis {} of {:?}",
                b.shape(),
                axis,
                a.shape()
            ));
        }
        let (_, len, inner) = kernels::axis_blocks(a.shape(), axis);
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / inner) % len])
            .collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (tracked, rg) = Self::track2(a, b);
        Ok(self.emit(
            tracked,
            rg,
            || Op::BiasAdd { a: a.node_id(), b: b.node_id(), shape: a.shape().to_vec(), axis },
            out,
        ))
    }

    /// Reverse sweep from a scalar `root`; every recorded node is visited
    /// exactly once. Leaves that do not reach the root get zero gradients.
    pub fn backward(&self, root: &Tensor) -> Result<GradMap> {
        let root_id = root
            .node_id()
            .ok_or_else(|| contract_err!("backward root is not on the tape"))?;
        if root.numel() != 1 {
            return Err(contract_err!(
                "backward root must be scalar, got shape {:?}",
                root.shape()
            ));
        }
        let nodes = self.nodes.borrow();
        if root_id.0 >= nodes.len() {
            return Err(contract_err!("backward root is not on this tape"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root_id.0] = Some(vec![1.0]);

        for id in (0..=root_id.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let mut send = |input: &In, delta: Vec<f64>, numel: usize| {
                if let Some(src) = input {
                    let slot = grads[src.0].get_or_insert_with(|| vec![0.0; numel]);
                    for (acc, d) in slot.iter_mut().zip(&delta) {
                        *acc += d;
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add { a, b } => {
                    send(a, g.clone(), g.len());
                    send(b, g.clone(), g.len());
                }
                Op::Sub { a, b } => {
                    send(a, g.clone(), g.len());
                    send(b, g.iter().map(|v| -v).collect(), g.len());
                }
                Op::Mul { a, b, a_data, b_data } => {
                    send(a, g.iter().zip(b_data.iter()).map(|(g, b)| g * b).collect(), g.len());
                    send(b, g.iter().zip(a_data.iter()).map(|(g, a)| g * a).collect(), g.len());
                }
                Op::Div { a, b, a_data, b_data } => {
                    send(a, g.iter().zip(b_data.iter()).map(|(g, b)| g / b).collect(), g.len());
                    send(
                        b,
                        g.iter()
                            .zip(a_data.iter().zip(b_data.iter()))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect(),
                        g.len(),
                    );
                }
                Op::Scale { a, c } => send(a, g.iter().map(|v| v * c).collect(), g.len()),
                Op::AddScalar { a } => send(a, g.clone(), g.len()),
                Op::Silu { a, x } => send(
                    a,
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| {
                            let s = kernels::sigmoid(x);
                            g * (s + x * s * (1.0 - s))
                        })
                        .collect(),
                    g.len(),
                ),
                Op::LnClamped { a, x, min } => send(
                    a,
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| if x > *min { g / x } else { 0.0 })
                        .collect(),
                    g.len(),
                ),
                Op::Matmul { a, b, a_data, b_data, m, k, n } => {
                    if a.is_some() {
                        let bt = kernels::transpose2(b_data, *k, *n);
                        send(a, kernels::matmul(&g, &bt, *m, *n, *k), m * k);
                    }
                    if b.is_some() {
                        let at = kernels::transpose2(a_data, *m, *k);
                        send(b, kernels::matmul(&at, &g, *k, *m, *n), k * n);
                    }
                }
                Op::Transpose2 { a, rows, cols } => {
                    send(a, kernels::transpose2(&g, *cols, *rows), rows * cols);
                }
                Op::SoftmaxAxis { a, y, shape, axis } => {
                    send(a, kernels::softmax_axis_backward(&g, y, shape, *axis), g.len());
                }
                Op::ConcatAxis { a, b, shape_a, shape_b, axis } => {
                    let (outer, len_a, inner) = kernels::axis_blocks(shape_a, *axis);
                    let len_b = shape_b[*axis];
                    let numel_a: usize = shape_a.iter().product();
                    let numel_b: usize = shape_b.iter().product();
                    let mut ga = Vec::with_capacity(numel_a);
                    let mut gb = Vec::with_capacity(numel_b);
                    let block = (len_a + len_b) * inner;
                    for o in 0..outer {
                        let chunk = &g[o * block..(o + 1) * block];
                        ga.extend_from_slice(&chunk[..len_a * inner]);
                        gb.extend_from_slice(&chunk[len_a * inner..]);
                    }
                    send(a, ga, numel_a);
                    send(b, gb, numel_b);
                }
                Op::BilinearResize { a, in_shape, out_h, out_w } => {
                    let [c, h, w] = *in_shape;
                    let ga = if *out_h == h && *out_w == w {
                        g.clone()
                    } else {
                        kernels::bilinear_resize_backward(&g, c, h, w, *out_h, *out_w)
                    };
                    send(a, ga, c * h * w);
                }
                Op::Conv2d { x, k, x_data, k_data, x_shape, k_shape, stride, pad, out_hw } => {
                    let [cin, h, w] = *x_shape;
                    let [cout, _, kh, kw] = *k_shape;
                    let (gx, gk) = kernels::conv2d_backward(
                        &g, x_data, k_data, cin, h, w, cout, kh, kw, *stride, *pad, out_hw[0],
                        out_hw[1],
                    );
                    send(x, gx, cin * h * w);
                    send(k, gk, cout * cin * kh * kw);
                }
                Op::Sum { a } => {
                    if let Some(src) = a {
                        let n: usize = nodes[src.0].shape.iter().product();
                        send(a, vec![g[0]; n], n);
                    }
                }
                Op::Mean { a, n } => send(a, vec![g[0] / *n as f64; *n], *n),
                Op::ChannelSum { a, shape } => {
                    let c = shape[0];
                    let inner: usize = shape[1..].iter().product();
                    let mut ga = Vec::with_capacity(c * inner);
                    for &gc in g.iter().take(c) {
                        ga.extend(core::iter::repeat_n(gc, inner));
                    }
                    send(a, ga, c * inner);
                }
                Op::Reshape { a } => send(a, g.clone(), g.len()),
                Op::BiasAdd { a, b, shape, axis } => {
                    let (_, len, inner) = kernels::axis_blocks(shape, *axis);
                    send(a, g.clone(), g.len());
                    if b.is_some() {
                        let mut gb = vec![0.0; len];
                        for (i, gv) in g.iter().enumerate() {
                            gb[(i / inner) % len] += gv;
                        }
                        send(b, gb, len);
                    }
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(GradMap { grads, shapes })
    }
}
