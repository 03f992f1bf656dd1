//! Define-by-run operator graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` simply walks it in reverse.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom, Geom};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::freq::for_each_in_block;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1 with padding that preserves spatial size for odd `kernel`.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Upsample {
        x: NodeId,
        geom: Geom,
        factor: [usize; 3],
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Sigmoid {
        x: NodeId,
    },
    Dropout {
        x: NodeId,
        scale: Vec<f64>,
    },
    CenterWrite {
        base: NodeId,
        patch: NodeId,
        bounds: Vec<Range<usize>>,
    },
    DiceLoss {
        pred: NodeId,
        target: Vec<f64>,
        smooth: f64,
    },
    InstanceNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        /// Normalized activations.
        xhat: Vec<f64>,
        /// Per-channel `1 / sqrt(var + eps)`.
        inv_std: Vec<f64>,
    },
    Sum(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// How dropout nodes behave while the graph is built.
#[derive(Clone, Debug)]
pub enum DropoutMode {
    /// Identity (inference).
    Off,
    /// Fresh Bernoulli masks from a seeded generator.
    Sample(u64),
    /// Reuse masks recorded by an earlier graph, in creation order.
    Replay(Vec<Vec<f64>>),
}

pub struct Graph {
    nodes: Vec<Node>,
    mode: DropoutMode,
    rng: Option<ChaCha8Rng>,
    masks: Vec<Vec<f64>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    per_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.per_node.get(id.0).and_then(|g| g.as_deref())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn spatial_factor(shape: &[usize]) -> [usize; 3] {
    let mut f = [1; 3];
    for slot in f.iter_mut().skip(4 - shape.len()) {
        *slot = 2;
    }
    f
}

impl Graph {
    pub fn new(mode: DropoutMode) -> Self {
        let rng = match mode {
            DropoutMode::Sample(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Self {
            nodes: Vec::new(),
            mode,
            rng,
            masks: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self::new(DropoutMode::Off)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Dropout scale vectors generated so far, for [`DropoutMode::Replay`].
    pub fn dropout_masks(&self) -> &[Vec<f64>] {
        &self.masks
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let entry = store.get(id);
        let t = Tensor::new(entry.shape.clone(), entry.value.clone()).expect("stored shape");
        self.push(t, Op::Param(id))
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws.len() != xs.len() + 1 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {ws:?} incompatible with input {xs:?}"
            )));
        }
        if self.value(b).len() != ws[0] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias of length {} for {} output channels",
                self.value(b).len(),
                ws[0]
            )));
        }
        if spec.stride == 0 {
            return Err(Error::ShapeMismatch("conv stride must be positive".into()));
        }
        let gx = Geom::of(xs)?;
        let real = xs.len() - 1;
        let mut kernel = [1; 3];
        kernel[3 - real..].copy_from_slice(&ws[2..]);
        let mut stride = [1; 3];
        let mut pad = [0; 3];
        let mut output = [1; 3];
        for a in 3 - real..3 {
            stride[a] = spec.stride;
            pad[a] = spec.padding;
            let padded = gx.s[a] + 2 * spec.padding;
            if padded < kernel[a] {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {:?} larger than padded input {xs:?}",
                    &ws[2..]
                )));
            }
            output[a] = (padded - kernel[a]) / spec.stride + 1;
        }
        let geom = ConvGeom {
            ci: ws[1],
            co: ws[0],
            input: gx.s,
            output,
            kernel,
            stride,
            pad,
        };
        let data = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let mut shape = vec![geom.co];
        shape.extend_from_slice(&output[3 - real..]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Conv { x, w, b, geom }))
    }

    /// 2x max pooling on every spatial axis.
    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let g = Geom::of(&shape)?;
        if shape[1..].iter().any(|s| s % 2 != 0) {
            return Err(Error::ShapeMismatch(format!(
                "max pool needs even spatial sizes, got {shape:?}"
            )));
        }
        let factor = spatial_factor(&shape);
        let (data, argmax) = kernels::maxpool_forward(self.value(x).data(), g, factor);
        let mut out_shape = vec![shape[0]];
        out_shape.extend(shape[1..].iter().map(|s| s / 2));
        Ok(self.push(Tensor::new(out_shape, data)?, Op::MaxPool { x, argmax }))
    }

    /// 2x nearest-neighbour upsampling on every spatial axis.
    pub fn upsample(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let geom = Geom::of(&shape)?;
        let factor = spatial_factor(&shape);
        let data = kernels::upsample_forward(self.value(x).data(), geom, factor);
        let mut out_shape = vec![shape[0]];
        out_shape.extend(shape[1..].iter().map(|s| s * 2));
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Upsample { x, geom, factor }))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::ShapeMismatch(format!("concat {sa:?} with {sb:?}")));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { a, b }))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(t, Op::Sigmoid { x })
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        let n = self.value(x).len();
        let scale = match &mut self.mode {
            DropoutMode::Off => return Ok(x),
            _ if rate <= 0.0 => return Ok(x),
            DropoutMode::Sample(_) => {
                let rng = self.rng.as_mut().expect("sampling graph has an rng");
                let keep = 1.0 / (1.0 - rate);
                (0..n)
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect::<Vec<_>>()
            }
            DropoutMode::Replay(masks) => {
                let i = self.masks.len();
                let mask = masks.get(i).cloned().ok_or_else(|| {
                    Error::ShapeMismatch(format!("no recorded dropout mask #{i}"))
                })?;
                if mask.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "recorded dropout mask #{i} has {} entries, activation has {n}",
                        mask.len()
                    )));
                }
                mask
            }
        };
        self.masks.push(scale.clone());
        let t = self.value(x).zip_map(&scale, |v, s| v * s);
        Ok(self.push(t, Op::Dropout { x, scale }))
    }

    /// Per-channel normalization over the spatial axes followed by a
    /// per-channel affine map `gamma * xhat + beta`.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let g = Geom::of(&shape)?;
        if self.value(gamma).len() != g.c || self.value(beta).len() != g.c {
            return Err(Error::ShapeMismatch(format!(
                "instance norm affine parameters must have {} entries",
                g.c
            )));
        }
        let vox = g.voxels();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(g.c);
        let mut out = Vec::with_capacity(xv.len());
        for (c, chunk) in xv.chunks(vox).enumerate() {
            let mean = chunk.iter().sum::<f64>() / vox as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vox as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for v in chunk {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(gv[c] * h + bv[c]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Copy of `base` whose spatial block `bounds` is overwritten by `patch`
    /// in every channel.
    pub fn center_write(
        &mut self,
        base: NodeId,
        patch: NodeId,
        bounds: &[Range<usize>],
    ) -> Result<NodeId> {
        let bs = self.value(base).shape();
        let ps = self.value(patch).shape();
        let block: Vec<usize> = bounds.iter().map(|r| r.len()).collect();
        if bs.len() != ps.len()
            || bs[0] != ps[0]
            || ps[1..] != block[..]
            || bounds.iter().zip(&bs[1..]).any(|(r, &s)| r.end > s)
        {
            return Err(Error::ShapeMismatch(format!(
                "cannot write patch {ps:?} at {bounds:?} into {bs:?}"
            )));
        }
        let spatial = bs[1..].to_vec();
        let (bvox, pvox) = (spatial.iter().product::<usize>(), block.iter().product::<usize>());
        let mut data = self.value(base).data().to_vec();
        let p = self.value(patch).data();
        for c in 0..bs[0] {
            for_each_in_block(&spatial, bounds, |f, k| data[c * bvox + f] = p[c * pvox + k]);
        }
        let t = Tensor::new(bs.to_vec(), data)?;
        Ok(self.push(
            t,
            Op::CenterWrite {
                base,
                patch,
                bounds: bounds.to_vec(),
            },
        ))
    }

    /// Soft Dice loss `1 - (2 Σ p g + s) / (Σ p + Σ g + s)`.
    pub fn dice_loss(&mut self, pred: NodeId, target: &[f64], smooth: f64) -> Result<NodeId> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction has {} voxels, target has {}",
                p.len(),
                target.len()
            )));
        }
        let (inter, sum) = dice_terms(p, target);
        let loss = 1.0 - (2.0 * inter + smooth) / (sum + smooth);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::DiceLoss {
                pred,
                target: target.to_vec(),
                smooth,
            },
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        if terms.is_empty() || terms.iter().any(|t| self.value(*t).len() != 1) {
            return Err(Error::ShapeMismatch("sum expects one or more scalars".into()));
        }
        let total = terms.iter().map(|t| self.scalar(*t)).sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(terms.to_vec())))
    }

    /// Gradients of `root` (seeded with ones) with respect to every node.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Conv { x, w, b, geom } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    // plain inputs never need a gradient
                    let mut gx = (!matches!(self.nodes[x.0].op, Op::Leaf))
                        .then(|| std::mem::take(slot(&mut grads, *x, xv.len())));
                    let mut gw = std::mem::take(slot(&mut grads, *w, wv.len()));
                    let mut gb = std::mem::take(slot(&mut grads, *b, geom.co));
                    kernels::conv_backward(
                        xv,
                        wv,
                        &g,
                        geom,
                        gx.as_deref_mut(),
                        Some(&mut gw),
                        Some(&mut gb),
                    );
                    if let Some(gx) = gx {
                        grads[x.0] = Some(gx);
                    }
                    grads[w.0] = Some(gw);
                    grads[b.0] = Some(gb);
                }
                Op::MaxPool { x, argmax } => {
                    let gx = slot(&mut grads, *x, self.value(*x).len());
                    for (&src, gv) in argmax.iter().zip(&g) {
                        gx[src] += gv;
                    }
                }
                Op::Upsample { x, geom, factor } => {
                    let gx = slot(&mut grads, *x, self.value(*x).len());
                    kernels::upsample_backward(&g, *geom, *factor, gx);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    for (d, s) in slot(&mut grads, *a, na).iter_mut().zip(&g[..na]) {
                        *d += s;
                    }
                    let nb = self.value(*b).len();
                    for (d, s) in slot(&mut grads, *b, nb).iter_mut().zip(&g[na..]) {
                        *d += s;
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x).data();
                    let gx = slot(&mut grads, *x, xv.len());
                    for ((d, s), v) in gx.iter_mut().zip(&g).zip(xv) {
                        *d += if *v > 0.0 { *s } else { slope * s };
                    }
                }
                Op::Sigmoid { x } => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, *x, y.len());
                    for ((d, s), yv) in gx.iter_mut().zip(&g).zip(y) {
                        *d += s * yv * (1.0 - yv);
                    }
                }
                Op::Dropout { x, scale } => {
                    let gx = slot(&mut grads, *x, scale.len());
                    for ((d, s), m) in gx.iter_mut().zip(&g).zip(scale) {
                        *d += s * m;
                    }
                }
                Op::CenterWrite {
                    base,
                    patch,
                    bounds,
                } => {
                    let bs = self.value(*base).shape().to_vec();
                    let spatial = &bs[1..];
                    let bvox: usize = spatial.iter().product();
                    let pvox: usize = bounds.iter().map(|r| r.len()).product();
                    let mut to_base = g.clone();
                    let mut to_patch = vec![0.0; bs[0] * pvox];
                    for c in 0..bs[0] {
                        for_each_in_block(spatial, bounds, |f, k| {
                            to_patch[c * pvox + k] = g[c * bvox + f];
                            to_base[c * bvox + f] = 0.0;
                        });
                    }
                    for (d, s) in slot(&mut grads, *base, to_base.len()).iter_mut().zip(&to_base) {
                        *d += s;
                    }
                    for (d, s) in slot(&mut grads, *patch, to_patch.len()).iter_mut().zip(&to_patch) {
                        *d += s;
                    }
                }
                Op::DiceLoss {
                    pred,
                    target,
                    smooth,
                } => {
                    let p = self.value(*pred).data();
                    let (inter, sum) = dice_terms(p, target);
                    let num = 2.0 * inter + smooth;
                    let den = sum + smooth;
                    let gx = slot(&mut grads, *pred, p.len());
                    for (d, t) in gx.iter_mut().zip(target) {
                        *d -= g[0] * (2.0 * t * den - num) / (den * den);
                    }
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let vox = xhat.len() / c;
                    let gv = self.value(*gamma).data();
                    let mut gx = vec![0.0; xhat.len()];
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for ch in 0..c {
                        let r = ch * vox..(ch + 1) * vox;
                        let (dy, h) = (&g[r.clone()], &xhat[r.clone()]);
                        gb[ch] = dy.iter().sum();
                        gg[ch] = dy.iter().zip(h).map(|(a, b)| a * b).sum();
                        let mean_d = gv[ch] * gb[ch] / vox as f64;
                        let mean_dh = gv[ch] * gg[ch] / vox as f64;
                        for ((o, d), hv) in gx[r].iter_mut().zip(dy).zip(h) {
                            *o = inv_std[ch] * (gv[ch] * d - mean_d - hv * mean_dh);
                        }
                    }
                    for (t, v) in [(*x, gx), (*gamma, gg), (*beta, gb)] {
                        for (d, s) in slot(&mut grads, t, v.len()).iter_mut().zip(&v) {
                            *d += s;
                        }
                    }
                }
                Op::Sum(terms) => {
                    for t in terms {
                        slot(&mut grads, *t, 1)[0] += g[0];
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { per_node: grads }
    }

    /// Gradients accumulated per parameter (zeros for parameters the graph
    /// never touched).
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.iter().map(|e| vec![0.0; e.value.len()]).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(pid), Some(g)) = (&node.op, &grads.per_node[idx]) {
                for (d, s) in out[pid.0].iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        out
    }
}

fn dice_terms(p: &[f64], target: &[f64]) -> (f64, f64) {
    p.iter()
        .zip(target)
        .fold((0.0, 0.0), |(i, s), (a, b)| (i + a * b, s + a + b))
}
