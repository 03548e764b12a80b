//! Reverse-mode differentiation over a linear tape.
//!
//! Values live in [`Var`]s; a node is appended to the tape only when at least
//! one input needs a gradient, so a [`Tape::no_grad`] tape records nothing and
//! intermediates are freed as soon as their `Var` is dropped.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use super::array::{numel, IndexMap, Tensor};
use super::kernels::{self, ConvGeom, LayerNormSaved, MatGeom};
use super::Scalar;
use crate::error::{config_err, usage_err, Error, Result};

type NodeId = usize;

/// A value produced on a tape, optionally tracked for differentiation.
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Tensor<T>,
    node: Option<NodeId>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_value(self) -> Tensor<T> {
        self.value
    }
}

enum Op<T> {
    Leaf,
    Add(Option<NodeId>, Option<NodeId>),
    Sub(Option<NodeId>, Option<NodeId>),
    Mul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor<T>,
        bv: Tensor<T>,
    },
    Scale(NodeId, T),
    AddSuffix {
        a: Option<NodeId>,
        b: Option<NodeId>,
        b_len: usize,
    },
    Relu {
        x: NodeId,
        out: Tensor<T>,
    },
    Sum {
        x: NodeId,
        len: usize,
    },
    Reshape(NodeId),
    Gather {
        x: NodeId,
        map: Arc<IndexMap>,
    },
    MatMul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Tensor<T>,
        bv: Tensor<T>,
        geom: MatGeom,
    },
    Conv2d {
        x: Option<NodeId>,
        w: Option<NodeId>,
        b: Option<NodeId>,
        xv: Tensor<T>,
        wv: Tensor<T>,
        geom: ConvGeom,
    },
    LayerNorm {
        x: Option<NodeId>,
        gamma: Option<NodeId>,
        beta: Option<NodeId>,
        gv: Tensor<T>,
        saved: LayerNormSaved<T>,
    },
    Softmax {
        x: NodeId,
        y: Tensor<T>,
        len: usize,
        inner: usize,
    },
}

struct Node<T> {
    op: Op<T>,
    len: usize,
    shape: Vec<usize>,
}

/// Records differentiable primitive applications.
pub struct Tape<T> {
    recording: bool,
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            recording: true,
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// A tape that evaluates operations without recording anything.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient when the tape is recording.
    pub fn leaf(&self, value: &Tensor<T>) -> Var<T> {
        let value = value.clone();
        if !self.recording {
            return Var { value, node: None };
        }
        let node = self.push(Op::Leaf, &value);
        Var {
            value,
            node: Some(node),
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: &Tensor<T>) -> Var<T> {
        Var {
            value: value.clone(),
            node: None,
        }
    }

    fn push(&self, op: Op<T>, value: &Tensor<T>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            len: value.len(),
            shape: value.shape().to_vec(),
        });
        nodes.len() - 1
    }

    fn tracked(&self, inputs: &[&Var<T>]) -> bool {
        self.recording && inputs.iter().any(|v| v.node.is_some())
    }

    fn emit(&self, value: Tensor<T>, inputs: &[&Var<T>], op: impl FnOnce() -> Op<T>) -> Var<T> {
        if self.tracked(inputs) {
            let node = self.push(op(), &value);
            Var {
                value,
                node: Some(node),
            }
        } else {
            Var { value, node: None }
        }
    }

    fn same_shape(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(config_err!(
                "{what}: shape mismatch {:?} vs {:?}",
                a.shape(),
                b.shape()
            ));
        }
        Ok(())
    }

    fn zip_with(a: &Var<T>, b: &Var<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        Tensor::from_parts(
            a.shape().to_vec(),
            a.value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape(a, b, "add")?;
        let out = Self::zip_with(a, b, |x, y| x + y);
        Ok(self.emit(out, &[a, b], || Op::Add(a.node, b.node)))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape(a, b, "sub")?;
        let out = Self::zip_with(a, b, |x, y| x - y);
        Ok(self.emit(out, &[a, b], || Op::Sub(a.node, b.node)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        Self::same_shape(a, b, "mul")?;
        let out = Self::zip_with(a, b, |x, y| x * y);
        Ok(self.emit(out, &[a, b], || Op::Mul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
        }))
    }

    pub fn scale(&self, a: &Var<T>, factor: T) -> Var<T> {
        let out = a.value.map(|v| v * factor);
        self.emit(out, &[a], || Op::Scale(a.node.unwrap(), factor))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias broadcast).
    pub fn add_broadcast(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(config_err!("cannot broadcast {sb:?} onto {sa:?}"));
        }
        let b_len = b.value.len();
        let bd = b.value.data();
        let out = Tensor::from_parts(
            sa.to_vec(),
            a.value
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + bd[i % b_len])
                .collect(),
        );
        Ok(self.emit(out, &[a, b], || Op::AddSuffix {
            a: a.node,
            b: b.node,
            b_len,
        }))
    }

    /// Rectifier; the subgradient at exactly zero is zero.
    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        let out = x.value.map(|v| if v > T::zero() { v } else { T::zero() });
        let saved = out.clone();
        self.emit(out, &[x], || Op::Relu {
            x: x.node.unwrap(),
            out: saved,
        })
    }

    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        let out = Tensor::scalar(x.value.sum());
        self.emit(out, &[x], || Op::Sum {
            x: x.node.unwrap(),
            len: x.value.len(),
        })
    }

    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let n = T::of(x.value.len() as f64);
        let s = self.sum(x);
        self.scale(&s, T::one() / n)
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = x.value.reshape(shape.to_vec())?;
        Ok(self.emit(out, &[x], || Op::Reshape(x.node.unwrap())))
    }

    /// Re-indexes `x` through `map`; adjoint is a scatter-add.
    pub fn gather(&self, x: &Var<T>, map: &Arc<IndexMap>) -> Result<Var<T>> {
        let out = x.value.gather(map)?;
        Ok(self.emit(out, &[x], || Op::Gather {
            x: x.node.unwrap(),
            map: Arc::clone(map),
        }))
    }

    pub fn permute(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let map = Arc::new(IndexMap::permute(x.shape(), axes)?);
        self.gather(x, &map)
    }

    /// `[..., m, n] · [..., n, p]`; a rank-2 rhs is shared across the batch.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` with `b: [..., p, n]`.
    pub fn matmul_nt(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: &Var<T>, b: &Var<T>, rhs_transposed: bool) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(config_err!("matmul needs rank >= 2, got {sa:?} and {sb:?}"));
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (bn, p) = if rhs_transposed {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if n != bn {
            return Err(config_err!(
                "matmul inner extents differ: {sa:?} x {sb:?}{}",
                if rhs_transposed { "ᵀ" } else { "" }
            ));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let rhs_shared = lead_b.is_empty();
        if !rhs_shared && lead_a != lead_b {
            return Err(config_err!(
                "matmul batch extents differ: {lead_a:?} vs {lead_b:?}"
            ));
        }
        let geom = MatGeom {
            batch: numel(lead_a),
            rhs_shared,
            m,
            n,
            p,
            rhs_transposed,
        };
        let data = kernels::matmul_forward(&geom, a.value.data(), b.value.data());
        let mut shape = lead_a.to_vec();
        shape.extend([m, p]);
        let out = Tensor::from_parts(shape, data);
        Ok(self.emit(out, &[a, b], || Op::MatMul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
            geom,
        }))
    }

    /// Same-size 2-D convolution with zero padding.
    ///
    /// `x: [N, Cin, H, W]`, `weight: [Cout, Cin, k, k]`, `bias: [Cout]`, `padding == (k-1)/2`.
    pub fn conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: &Var<T>, padding: usize) -> Result<Var<T>> {
        let (sx, sw) = (x.shape(), weight.shape());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(config_err!("conv2d expects rank-4 input and weight, got {sx:?}, {sw:?}"));
        }
        let k = sw[2];
        if sw[3] != k || k % 2 == 0 {
            return Err(config_err!("conv2d kernel must be square and odd, got {sw:?}"));
        }
        if padding != (k - 1) / 2 {
            return Err(config_err!(
                "conv2d padding {padding} does not preserve size for kernel {k}"
            ));
        }
        if sw[1] != sx[1] {
            return Err(config_err!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                sx[1],
                sw[1]
            ));
        }
        if bias.shape() != [sw[0]] {
            return Err(config_err!(
                "conv2d bias must be [{}], got {:?}",
                sw[0],
                bias.shape()
            ));
        }
        if !x.value.all_finite() {
            return Err(Error::Numeric("conv2d input contains non-finite values".into()));
        }
        let geom = ConvGeom {
            n: sx[0],
            cin: sx[1],
            cout: sw[0],
            h: sx[2],
            w: sx[3],
            k,
            pad: padding,
        };
        let data = kernels::conv2d_forward(&geom, x.value.data(), weight.value.data(), bias.value.data());
        let out = Tensor::from_parts(vec![geom.n, geom.cout, geom.h, geom.w], data);
        Ok(self.emit(out, &[x, weight, bias], || Op::Conv2d {
            x: x.node,
            w: weight.node,
            b: bias.node,
            xv: x.value.clone(),
            wv: weight.value.clone(),
            geom,
        }))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let d = *x.shape().last().unwrap();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(config_err!(
                "layer_norm affine parameters must be [{d}], got {:?} and {:?}",
                gamma.shape(),
                beta.shape()
            ));
        }
        if eps <= T::zero() {
            return Err(config_err!("layer_norm eps must be positive"));
        }
        let (y, saved) =
            kernels::layer_norm_forward(x.value.data(), d, gamma.value.data(), beta.value.data(), eps);
        let out = Tensor::from_parts(x.shape().to_vec(), y);
        Ok(self.emit(out, &[x, gamma, beta], || Op::LayerNorm {
            x: x.node,
            gamma: gamma.node,
            beta: beta.node,
            gv: gamma.value.clone(),
            saved,
        }))
    }

    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(config_err!("softmax axis {axis} out of range for {shape:?}"));
        }
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let y = Tensor::from_parts(shape.to_vec(), kernels::softmax_forward(x.value.data(), len, inner));
        let saved = y.clone();
        Ok(self.emit(y, &[x], || Op::Softmax {
            x: x.node.unwrap(),
            y: saved,
            len,
            inner,
        }))
    }

    /// Propagates d`loss` back to every tracked leaf.
    ///
    /// The tape is consumed: a second call fails instead of double counting.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            ));
        }
        let root = loss
            .node
            .ok_or_else(|| usage_err!("loss is detached from every tracked leaf"))?;
        if self.consumed.replace(true) {
            return Err(usage_err!("tape already consumed by a previous backward pass"));
        }
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        if root >= nodes.len() {
            return Err(usage_err!("loss was not recorded on this tape"));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();

        for (id, node) in nodes.into_iter().enumerate().rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None if matches!(node.op, Op::Leaf) => vec![T::zero(); node.len],
                None => continue,
            };
            propagate(node.op, id, g, &node.shape, &mut grads, &mut leaves);
        }
        Ok(Gradients { by_node: leaves })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: Option<NodeId>, contrib: Vec<T>) {
    let Some(id) = id else { return };
    match &mut grads[id] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn propagate<T: Scalar>(
    op: Op<T>,
    id: NodeId,
    g: Vec<T>,
    shape: &[usize],
    grads: &mut [Option<Vec<T>>],
    leaves: &mut HashMap<NodeId, Tensor<T>>,
) {
    match op {
        Op::Leaf => {
            leaves.insert(id, Tensor::from_parts(shape.to_vec(), g));
        }
        Op::Add(a, b) => {
            if b.is_some() {
                accumulate(grads, b, g.clone());
            }
            accumulate(grads, a, g);
        }
        Op::Sub(a, b) => {
            if b.is_some() {
                accumulate(grads, b, g.iter().map(|&v| -v).collect());
            }
            accumulate(grads, a, g);
        }
        Op::Mul { a, b, av, bv } => {
            if a.is_some() {
                accumulate(grads, a, g.iter().zip(bv.data()).map(|(&u, &v)| u * v).collect());
            }
            if b.is_some() {
                accumulate(grads, b, g.iter().zip(av.data()).map(|(&u, &v)| u * v).collect());
            }
        }
        Op::Scale(a, f) => accumulate(grads, Some(a), g.into_iter().map(|v| v * f).collect()),
        Op::AddSuffix { a, b, b_len } => {
            if b.is_some() {
                let mut db = vec![T::zero(); b_len];
                for chunk in g.chunks(b_len) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                accumulate(grads, b, db);
            }
            accumulate(grads, a, g);
        }
        Op::Relu { x, out } => {
            let dx = g
                .iter()
                .zip(out.data())
                .map(|(&u, &y)| if y > T::zero() { u } else { T::zero() })
                .collect();
            accumulate(grads, Some(x), dx);
        }
        Op::Sum { x, len } => accumulate(grads, Some(x), vec![g[0]; len]),
        Op::Reshape(x) => accumulate(grads, Some(x), g),
        Op::Gather { x, map } => {
            let mut dx = vec![T::zero(); numel(map.src_shape())];
            for (&src, v) in map.indices().iter().zip(g) {
                dx[src] += v;
            }
            accumulate(grads, Some(x), dx);
        }
        Op::MatMul { a, b, av, bv, geom } => {
            let (da, db) = kernels::matmul_backward(&geom, av.data(), bv.data(), &g, (a.is_some(), b.is_some()));
            if let Some(da) = da {
                accumulate(grads, a, da);
            }
            if let Some(db) = db {
                accumulate(grads, b, db);
            }
        }
        Op::Conv2d { x, w, b, xv, wv, geom } => {
            let cg = kernels::conv2d_backward(
                &geom,
                xv.data(),
                wv.data(),
                &g,
                (x.is_some(), w.is_some(), b.is_some()),
            );
            if let Some(dx) = cg.dx {
                accumulate(grads, x, dx);
            }
            if let Some(dw) = cg.dw {
                accumulate(grads, w, dw);
            }
            if let Some(db) = cg.db {
                accumulate(grads, b, db);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            gv,
            saved,
        } => {
            let d = gv.len();
            let (dx, dg, db) = kernels::layer_norm_backward(&saved, d, gv.data(), &g);
            accumulate(grads, x, dx);
            accumulate(grads, gamma, dg);
            accumulate(grads, beta, db);
        }
        Op::Softmax { x, y, len, inner } => {
            let dx = kernels::softmax_backward(y.data(), &g, len, inner);
            accumulate(grads, Some(x), dx);
        }
    }
}

/// Gradients of tracked leaves, keyed by the leaf's `Var`.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_node: HashMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|n| self.by_node.get(&n))
    }

    pub fn wrt(&self, var: &Var<T>) -> Result<Tensor<T>> {
        self.get(var)
            .cloned()
            .ok_or_else(|| usage_err!("no gradient recorded for this variable"))
    }
}
