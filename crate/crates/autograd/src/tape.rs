//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep over it.

use crate::error::{AutogradError, Result};
use crate::gemm::{gemm, Layout};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch() * p];
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let src_row = (c * self.h + y as usize) * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + kj) as isize - self.pad_w as isize;
                            if x >= 0 && x < self.w as isize {
                                dst[oy * self.ow + ox] = input[src_row + x as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn col2im_add(&self, cols: &[f64], input_grad: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad_h as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst_row = (c * self.h + y as usize) * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + kj) as isize - self.pad_w as isize;
                            if x >= 0 && x < self.w as isize {
                                input_grad[dst_row + x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Conv {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    GlobalAvgPool {
        x: Var,
        per_channel: usize,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        /// Contiguous block length each part contributes per outer index.
        blocks: Vec<usize>,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Expand {
        x: Var,
        reps: usize,
    },
    Embedding {
        table: Var,
        index: usize,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// An ordered record of executed operations.
///
/// One tape serves one forward pass and at most one backward pass. It is
/// `Send` but must only be driven from one thread at a time.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backpropagated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    pub(crate) fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        debug_assert!(
            value.is_finite() || inputs.iter().any(|v| !self.nodes[v.0].value.is_finite()),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Nodes that cannot receive gradient keep no backward state.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Returns `None` for values that do not require gradients and an
    /// all-zero tensor for tracked values the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        })
    }

    /// Borrowing variant of [`Tape::grad`]; `None` also when unreached.
    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Back-propagates from a scalar `loss` through every recorded op.
    ///
    /// A tape supports a single backward pass; a second call is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(AutogradError::AlreadyBackpropagated);
        }
        let loss_shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutogradError::NonScalarLoss(loss_shape.to_vec()));
        }
        self.backpropagated = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Temporarily detach the op so input buffers can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = acc(nodes, grads, v) {
                        add_into(ga, g);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += s * gi;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let nb = bv.len();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k] * bv[k % nb];
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for (k, gk) in g.iter().enumerate() {
                        gb[k % nb] += gk * av[k];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = nodes[i].value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for k in 0..gx.len() {
                        gx[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = nodes[i].value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for k in 0..gx.len() {
                        gx[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            } => {
                let (rows, fan_in, fan_out) = (*rows, *fan_in, *fan_out);
                if nodes[x.0].requires_grad {
                    let wv = nodes[w.0].value.data();
                    let gx = acc(nodes, grads, *x).unwrap();
                    // dx (rows x in) += g (rows x out) * W (out x in)
                    gemm(rows, fan_out, fan_in, 1.0, g, Layout::Normal, &wv, Layout::Normal, 1.0, gx);
                }
                if nodes[w.0].requires_grad {
                    let xv = nodes[x.0].value.data();
                    let gw = acc(nodes, grads, *w).unwrap();
                    // dW (out x in) += g^T (out x rows) * x (rows x in)
                    gemm(fan_out, rows, fan_in, 1.0, g, Layout::Transposed, &xv, Layout::Normal, 1.0, gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = acc(nodes, grads, *b) {
                        for r in 0..rows {
                            add_into(gb, &g[r * fan_out..(r + 1) * fan_out]);
                        }
                    }
                }
            }
            Op::Conv {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let (cout, patch, p) = (geom.cout, geom.patch(), geom.positions());
                if nodes[kernels.0].requires_grad {
                    let gk = acc(nodes, grads, *kernels).unwrap();
                    // dK (cout x patch) += g (cout x P) * cols^T (P x patch)
                    gemm(cout, p, patch, 1.0, g, Layout::Normal, cols, Layout::Transposed, 1.0, gk);
                }
                if let Some(gb) = acc(nodes, grads, *bias) {
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += g[o * p..(o + 1) * p].iter().sum::<f64>();
                    }
                }
                if nodes[input.0].requires_grad {
                    let kv = nodes[kernels.0].value.data();
                    let mut dcols = vec![0.0; patch * p];
                    // dcols (patch x P) = K^T (patch x cout) * g (cout x P)
                    gemm(patch, cout, p, 1.0, &kv, Layout::Transposed, g, Layout::Normal, 0.0, &mut dcols);
                    let gi = acc(nodes, grads, *input).unwrap();
                    geom.col2im_add(&dcols, gi);
                }
            }
            Op::GlobalAvgPool { x, per_channel } => {
                let n = *per_channel;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (c, gc) in g.iter().enumerate() {
                        let share = gc / n as f64;
                        for v in &mut gx[c * n..(c + 1) * n] {
                            *v += share;
                        }
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                blocks,
            } => {
                let total: usize = blocks.iter().sum();
                let mut offset = 0;
                for (part, &blk) in parts.iter().zip(blocks) {
                    if let Some(gp) = acc(nodes, grads, *part) {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + blk];
                            add_into(&mut gp[o * blk..(o + 1) * blk], src);
                        }
                    }
                    offset += blk;
                }
            }
            Op::Slice { x, start } => {
                let start = *start;
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(&mut gx[start..start + g.len()], g);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::Expand { x, reps } => {
                let reps = *reps;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (k, v) in gx.iter_mut().enumerate() {
                        *v += g[k * reps..(k + 1) * reps].iter().sum::<f64>();
                    }
                }
            }
            Op::Embedding { table, index } => {
                let index = *index;
                let dim = g.len();
                if let Some(gt) = acc(nodes, grads, *table) {
                    add_into(&mut gt[index * dim..(index + 1) * dim], g);
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(gx) = acc(nodes, grads, *x) {
                    for v in gx.iter_mut() {
                        *v += g0;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                let g0 = g[0];
                let target = *target;
                if let Some(gl) = acc(nodes, grads, *logits) {
                    for (k, v) in gl.iter_mut().enumerate() {
                        let onehot = if k == target { 1.0 } else { 0.0 };
                        *v += g0 * (probs[k] - onehot);
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

/// Gradient buffer of `v`, created on first use; `None` if `v` takes no gradient.
fn acc<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
