//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node holding its output value. Nodes only
//! reference earlier nodes, so the record is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! The spike primitive is a hard threshold in the forward pass. Its backward
//! pass uses the fast-sigmoid surrogate `1 / (slope * |v - threshold| + 1)^2`.

use super::{GradientSet, NumericsError, ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the spike primitive evaluates in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Heaviside step, outputs exactly 0 or 1.
    #[default]
    Hard,
    /// Antiderivative of the surrogate, `d / (1 + slope * |d|)` with
    /// `d = v - threshold`. Forward and backward are then consistent, which lets
    /// finite differences verify the whole backward chain of a spiking network.
    Smooth,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatVec { w: NodeId, x: NodeId },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: f64, shift: f64 },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Spike { x: NodeId, threshold: f64, slope: f64 },
    SeqSum(Vec<NodeId>),
    SeqMean(Vec<NodeId>),
    Reshape { x: NodeId, shape: Vec<usize> },
    Slice { x: NodeId, start: usize, len: usize },
    Concat(Vec<NodeId>),
    SumAll(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, label: usize },
    Lstm { x: NodeId, w: NodeId, b: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatVec { .. } => "matvec",
            Op::Conv1d { .. } => "conv1d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Spike { .. } => "spike",
            Op::SeqSum(_) => "seq_sum",
            Op::SeqMean(_) => "seq_mean",
            Op::Reshape { .. } => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat(_) => "concat",
            Op::SumAll(_) => "sum_all",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Lstm { .. } => "lstm",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatVec { w, x } => vec![*w, *x],
            Op::Conv1d { x, w, b, .. } | Op::Lstm { x, w, b } => vec![*x, *w, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Spike { x, .. }
            | Op::Reshape { x, .. }
            | Op::Slice { x, .. }
            | Op::SumAll(x) => vec![*x],
            Op::SeqSum(xs) | Op::SeqMean(xs) | Op::Concat(xs) => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Parameter leaves registered on a tape, addressable by layer name.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    names: Vec<String>,
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Result<NodeId, NumericsError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.ids[i])
            .ok_or_else(|| NumericsError::MissingParameter(name.to_string()))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    /// Per-node intermediates kept for the backward pass (LSTM gates and cells).
    saved: Vec<Option<Vec<f64>>>,
    requires_grad: Vec<bool>,
    losses: Vec<NodeId>,
    bound: Option<ParameterSet>,
    param_ids: Vec<NodeId>,
    spike_mode: SpikeMode,
    macs: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_spike_mode(mode: SpikeMode) -> Self {
        Self {
            spike_mode: mode,
            ..Self::default()
        }
    }

    pub fn spike_mode(&self) -> SpikeMode {
        self.spike_mode
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Multiply-accumulate operations executed by recorded forward primitives.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Registers a constant (non-differentiated) input.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Input, value, false)
    }

    /// Registers every entry of `params` as a differentiable leaf.
    /// A tape carries at most one parameter set.
    pub fn bind(&mut self, params: &ParameterSet) -> Result<ParamNodes, NumericsError> {
        if self.bound.is_some() {
            return Err(NumericsError::AlreadyBound);
        }
        let mut ids = Vec::with_capacity(params.len());
        for (i, (_, t)) in params.entries().iter().enumerate() {
            ids.push(self.push_leaf(Op::Param(i), t.clone(), true));
        }
        self.param_ids = ids.clone();
        self.bound = Some(params.clone());
        Ok(ParamNodes {
            names: params.entries().iter().map(|(n, _)| n.clone()).collect(),
            ids,
        })
    }

    fn push_leaf(&mut self, op: Op, value: Tensor, grad: bool) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.saved.push(None);
        self.requires_grad.push(grad);
        id
    }

    fn push(&mut self, op: Op) -> Result<NodeId, NumericsError> {
        let (value, macs, saved) = eval(&op, &self.values, self.spike_mode)?;
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        let grad = op.inputs().iter().any(|i| self.requires_grad[i.0]);
        self.macs += macs;
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.saved.push(saved);
        self.requires_grad.push(grad);
        Ok(id)
    }

    /// `w · x` for `w` of shape `[m, n]` and `x` with `n` elements; output `[m]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::MatVec { w, x })
    }

    /// Valid 1-D convolution over the time axis with channel mixing.
    /// `x: [C, L]`, `w: [O, C, K]`, `b: [O]`; output `[O, (L - K) / stride + 1]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    ) -> Result<NodeId, NumericsError> {
        self.push(Op::Conv1d { x, w, b, stride })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Mul(a, b))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId, NumericsError> {
        self.push(Op::Affine { x, scale, shift })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Tanh(x))
    }

    /// `[x >= threshold]` forward, surrogate derivative backward.
    pub fn spike(&mut self, x: NodeId, threshold: f64, slope: f64) -> Result<NodeId, NumericsError> {
        self.push(Op::Spike {
            x,
            threshold,
            slope,
        })
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn seq_sum(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericsError> {
        self.push(Op::SeqSum(xs.to_vec()))
    }

    /// Elementwise mean of equally shaped nodes (temporal mean over steps).
    pub fn seq_mean(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericsError> {
        self.push(Op::SeqMean(xs.to_vec()))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// Contiguous range of the flattened input, output shape `[len]`.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        self.push(Op::Slice { x, start, len })
    }

    /// Flat concatenation, output shape `[total]`.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, NumericsError> {
        self.push(Op::Concat(xs.to_vec()))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::SumAll(x))
    }

    /// `logsumexp(z) - z[label]` for a 1-D logit vector.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<NodeId, NumericsError> {
        self.push(Op::SoftmaxCrossEntropy { logits, label })
    }

    /// One LSTM layer over a sequence. `x: [L, I]`, `w: [4H, I + H]` acting
    /// on the concatenation `[x_t; h_{t-1}]`, `b: [4H]`, gate order input,
    /// forget, cell, output. Zero initial state. Output: hidden states `[L, H]`.
    pub fn lstm(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.push(Op::Lstm { x, w, b })
    }

    /// Marks a scalar node as a loss output.
    pub fn set_loss(&mut self, id: NodeId) {
        self.losses.push(id);
    }

    /// Value of the single registered loss.
    pub fn loss_value(&self) -> Result<f64, NumericsError> {
        if self.losses.len() != 1 {
            return Err(NumericsError::LossCount(self.losses.len()));
        }
        let v = &self.values[self.losses[0].0];
        v.item().ok_or_else(|| NumericsError::NonScalarLoss(v.shape().to_vec()))
    }

    /// Re-evaluates every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>, NumericsError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.values.len());
        for (op, recorded) in self.ops.iter().zip(&self.values) {
            let v = match op {
                Op::Input | Op::Param(_) => recorded.clone(),
                _ => eval(op, &values, self.spike_mode)?.0,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from the single loss output. Returns one gradient per
    /// bound parameter entry; entries the loss does not depend on get zeros.
    pub fn backward(&self) -> Result<GradientSet, NumericsError> {
        if self.losses.len() != 1 {
            return Err(NumericsError::LossCount(self.losses.len()));
        }
        let loss = self.losses[0];
        if self.values[loss.0].len() != 1 {
            return Err(NumericsError::NonScalarLoss(
                self.values[loss.0].shape().to_vec(),
            ));
        }
        let params = self.bound.as_ref().ok_or(NumericsError::NothingBound)?;

        let n = self.ops.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; params.len()];

        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g, &mut grads, &mut param_grads);
        }

        let mut entries = Vec::with_capacity(params.len());
        for ((name, t), g) in params.entries().iter().zip(param_grads) {
            let data = g.unwrap_or_else(|| vec![0.0; t.len()]);
            entries.push((name.clone(), Tensor::new(t.shape().to_vec(), data)?));
        }
        Ok(GradientSet::new(ParameterSet::new(entries)?))
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        param_grads: &mut [Option<Vec<f64>>],
    ) {
        let vals = &self.values;
        let needs = |id: NodeId| self.requires_grad[id.0];
        match &self.ops[i] {
            Op::Input => {}
            Op::Param(k) => accumulate(&mut param_grads[*k], g.len(), |buf| add_into(buf, &g)),
            Op::MatVec { w, x } => {
                let wv = &vals[w.0];
                let xv = vals[x.0].data();
                let (m, ncols) = (wv.shape()[0], wv.shape()[1]);
                if needs(*w) {
                    accumulate(&mut grads[w.0], m * ncols, |buf| {
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut buf[r * ncols..(r + 1) * ncols];
                            for (b, &xj) in row.iter_mut().zip(xv) {
                                *b += gr * xj;
                            }
                        }
                    });
                }
                if needs(*x) {
                    let wd = wv.data();
                    accumulate(&mut grads[x.0], ncols, |buf| {
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wd[r * ncols..(r + 1) * ncols];
                            for (b, &wj) in buf.iter_mut().zip(row) {
                                *b += gr * wj;
                            }
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b, stride } => {
                let xv = &vals[x.0];
                let wv = &vals[w.0];
                let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let out_len = vals[i].shape()[1];
                let s = *stride;
                if needs(*b) {
                    accumulate(&mut grads[b.0], c_out, |buf| {
                        for o in 0..c_out {
                            buf[o] += g[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                        }
                    });
                }
                if needs(*w) {
                    let xd = xv.data();
                    accumulate(&mut grads[w.0], c_out * c_in * k, |buf| {
                        for o in 0..c_out {
                            let go = &g[o * out_len..(o + 1) * out_len];
                            for c in 0..c_in {
                                let xc = &xd[c * len..(c + 1) * len];
                                for kk in 0..k {
                                    let mut acc = 0.0;
                                    for (p, &gp) in go.iter().enumerate() {
                                        acc += gp * xc[p * s + kk];
                                    }
                                    buf[(o * c_in + c) * k + kk] += acc;
                                }
                            }
                        }
                    });
                }
                if needs(*x) {
                    let wd = wv.data();
                    accumulate(&mut grads[x.0], c_in * len, |buf| {
                        for o in 0..c_out {
                            let go = &g[o * out_len..(o + 1) * out_len];
                            for c in 0..c_in {
                                let bc = &mut buf[c * len..(c + 1) * len];
                                for kk in 0..k {
                                    let wk = wd[(o * c_in + c) * k + kk];
                                    for (p, &gp) in go.iter().enumerate() {
                                        bc[p * s + kk] += wk * gp;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| add_into(buf, &g));
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| add_into(buf, &g));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| add_into(buf, &g));
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o -= gi;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = vals[b.0].data();
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((o, &gi), &bi) in buf.iter_mut().zip(&g).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                }
                if needs(*b) {
                    let av = vals[a.0].data();
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        for ((o, &gi), &ai) in buf.iter_mut().zip(&g).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
            }
            Op::Affine { x, scale, .. } => {
                accumulate(&mut grads[x.0], g.len(), |buf| {
                    for (o, &gi) in buf.iter_mut().zip(&g) {
                        *o += scale * gi;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = vals[x.0].data();
                accumulate(&mut grads[x.0], g.len(), |buf| {
                    for ((o, &gi), &xi) in buf.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = vals[i].data();
                accumulate(&mut grads[x.0], g.len(), |buf| {
                    for ((o, &gi), &yi) in buf.iter_mut().zip(&g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = vals[i].data();
                accumulate(&mut grads[x.0], g.len(), |buf| {
                    for ((o, &gi), &yi) in buf.iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Spike {
                x,
                threshold,
                slope,
            } => {
                let xv = vals[x.0].data();
                accumulate(&mut grads[x.0], g.len(), |buf| {
                    for ((o, &gi), &xi) in buf.iter_mut().zip(&g).zip(xv) {
                        *o += gi * surrogate_derivative(xi, *threshold, *slope);
                    }
                });
            }
            Op::SeqSum(xs) | Op::SeqMean(xs) => {
                let scale = if matches!(self.ops[i], Op::SeqMean(_)) {
                    1.0 / xs.len() as f64
                } else {
                    1.0
                };
                for x in xs {
                    if needs(*x) {
                        accumulate(&mut grads[x.0], g.len(), |buf| {
                            for (o, &gi) in buf.iter_mut().zip(&g) {
                                *o += scale * gi;
                            }
                        });
                    }
                }
            }
            Op::Reshape { x, .. } => {
                accumulate(&mut grads[x.0], g.len(), |buf| add_into(buf, &g));
            }
            Op::Slice { x, start, len } => {
                let n = vals[x.0].len();
                accumulate(&mut grads[x.0], n, |buf| add_into(&mut buf[*start..start + len], &g));
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = vals[x.0].len();
                    if needs(*x) {
                        let part = &g[offset..offset + n];
                        accumulate(&mut grads[x.0], n, |buf| add_into(buf, part));
                    }
                    offset += n;
                }
            }
            Op::SumAll(x) => {
                let n = vals[x.0].len();
                accumulate(&mut grads[x.0], n, |buf| {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::Lstm { x, w, b } => {
                let saved = self.saved[i].as_deref().expect("lstm intermediates");
                let xv = &vals[x.0];
                let wv = &vals[w.0];
                let (steps, n_in) = (xv.shape()[0], xv.shape()[1]);
                let hidden = wv.shape()[0] / 4;
                let n_cat = n_in + hidden;
                let (xd, wd, hs) = (xv.data(), wv.data(), vals[i].data());
                let mut dw = vec![0.0; 4 * hidden * n_cat];
                let mut db = vec![0.0; 4 * hidden];
                let mut dx = vec![0.0; steps * n_in];
                let mut dh_next = vec![0.0; hidden];
                let mut dc_next = vec![0.0; hidden];
                let mut dz = vec![0.0; 4 * hidden];
                let mut dcat = vec![0.0; n_cat];
                let zeros = vec![0.0; hidden];
                for t in (0..steps).rev() {
                    let gates = &saved[t * 5 * hidden..t * 5 * hidden + 4 * hidden];
                    let c = &saved[t * 5 * hidden + 4 * hidden..(t + 1) * 5 * hidden];
                    let c_prev = if t == 0 {
                        &zeros[..]
                    } else {
                        &saved[(t - 1) * 5 * hidden + 4 * hidden..t * 5 * hidden]
                    };
                    for j in 0..hidden {
                        let (ig, fg, gg, og) =
                            (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
                        let dh = g[t * hidden + j] + dh_next[j];
                        let tc = c[j].tanh();
                        let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                        dz[j] = dc * gg * ig * (1.0 - ig);
                        dz[hidden + j] = dc * c_prev[j] * fg * (1.0 - fg);
                        dz[2 * hidden + j] = dc * ig * (1.0 - gg * gg);
                        dz[3 * hidden + j] = dh * tc * og * (1.0 - og);
                        dc_next[j] = dc * fg;
                    }
                    let xt = &xd[t * n_in..(t + 1) * n_in];
                    let h_prev = if t == 0 { &zeros[..] } else { &hs[(t - 1) * hidden..t * hidden] };
                    dcat.fill(0.0);
                    for (r, &dzr) in dz.iter().enumerate() {
                        db[r] += dzr;
                        if dzr == 0.0 {
                            continue;
                        }
                        let row = &wd[r * n_cat..(r + 1) * n_cat];
                        let drow = &mut dw[r * n_cat..(r + 1) * n_cat];
                        for (d, &v) in drow[..n_in].iter_mut().zip(xt) {
                            *d += dzr * v;
                        }
                        for (d, &v) in drow[n_in..].iter_mut().zip(h_prev) {
                            *d += dzr * v;
                        }
                        for (d, &wv) in dcat.iter_mut().zip(row) {
                            *d += dzr * wv;
                        }
                    }
                    dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dcat[..n_in]);
                    dh_next.copy_from_slice(&dcat[n_in..]);
                }
                if needs(*w) {
                    accumulate(&mut grads[w.0], dw.len(), |buf| add_into(buf, &dw));
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], db.len(), |buf| add_into(buf, &db));
                }
                if needs(*x) {
                    accumulate(&mut grads[x.0], dx.len(), |buf| add_into(buf, &dx));
                }
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                let probs = softmax(vals[logits.0].data());
                accumulate(&mut grads[logits.0], probs.len(), |buf| {
                    for (k, (o, p)) in buf.iter_mut().zip(&probs).enumerate() {
                        let target = if k == *label { 1.0 } else { 0.0 };
                        *o += g[0] * (p - target);
                    }
                });
            }
        }
    }
}

fn accumulate<F: FnOnce(&mut [f64])>(slot: &mut Option<Vec<f64>>, len: usize, f: F) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Fast-sigmoid surrogate for the derivative of the spike step.
pub fn surrogate_derivative(v: f64, threshold: f64, slope: f64) -> f64 {
    let d = slope * (v - threshold).abs() + 1.0;
    1.0 / (d * d)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

type Evaluated = (Tensor, u64, Option<Vec<f64>>);

fn eval(op: &Op, vals: &[Tensor], mode: SpikeMode) -> Result<Evaluated, NumericsError> {
    let name = op.name();
    let out = match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are never re-evaluated"),
        Op::MatVec { w, x } => {
            let (wv, xv) = (&vals[w.0], &vals[x.0]);
            if wv.shape().len() != 2 || wv.shape()[1] != xv.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: name,
                    lhs: wv.shape().to_vec(),
                    rhs: xv.shape().to_vec(),
                });
            }
            let (m, n) = (wv.shape()[0], wv.shape()[1]);
            let xd = xv.data();
            let out: Vec<f64> = wv
                .data()
                .chunks_exact(n.max(1))
                .take(m)
                .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
                .collect();
            let out = if n == 0 { vec![0.0; m] } else { out };
            return Ok((Tensor::from_parts(vec![m], out), (m * n) as u64, None));
        }
        Op::Conv1d { x, w, b, stride } => {
            let (xv, wv, bv) = (&vals[x.0], &vals[w.0], &vals[b.0]);
            let bad = || NumericsError::ShapeMismatch {
                op: name,
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            };
            if xv.shape().len() != 2 || wv.shape().len() != 3 || *stride == 0 {
                return Err(bad());
            }
            let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
            let (c_out, wc, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
            if wc != c_in || k == 0 || len < k || bv.shape() != [c_out] {
                return Err(bad());
            }
            let out_len = (len - k) / stride + 1;
            let (xd, wd) = (xv.data(), wv.data());
            let mut out = vec![0.0; c_out * out_len];
            for o in 0..c_out {
                let row = &mut out[o * out_len..(o + 1) * out_len];
                row.fill(bv.data()[o]);
                for c in 0..c_in {
                    let xc = &xd[c * len..(c + 1) * len];
                    for kk in 0..k {
                        let wk = wd[(o * c_in + c) * k + kk];
                        if wk == 0.0 {
                            continue;
                        }
                        for (p, r) in row.iter_mut().enumerate() {
                            *r += wk * xc[p * stride + kk];
                        }
                    }
                }
            }
            let macs = (c_out * c_in * k * out_len) as u64;
            return Ok((Tensor::from_parts(vec![c_out, out_len], out), macs, None));
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (av, bv) = (&vals[a.0], &vals[b.0]);
            same_shape(name, av, bv)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            Tensor::from_parts(
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        }
        Op::Affine { x, scale, shift } => map_unary(&vals[x.0], |v| scale * v + shift),
        Op::Relu(x) => map_unary(&vals[x.0], |v| if v > 0.0 { v } else { 0.0 }),
        Op::Sigmoid(x) => map_unary(&vals[x.0], sigmoid),
        Op::Tanh(x) => map_unary(&vals[x.0], f64::tanh),
        Op::Spike {
            x,
            threshold,
            slope,
        } => match mode {
            SpikeMode::Hard => map_unary(&vals[x.0], |v| if v >= *threshold { 1.0 } else { 0.0 }),
            SpikeMode::Smooth => map_unary(&vals[x.0], |v| {
                let d = v - threshold;
                d / (1.0 + slope * d.abs())
            }),
        },
        Op::SeqSum(xs) | Op::SeqMean(xs) => {
            let first = xs.first().ok_or(NumericsError::EmptySequence { op: name })?;
            let shape = vals[first.0].shape().to_vec();
            let mut out = vec![0.0; vals[first.0].len()];
            for x in xs {
                same_shape(name, &vals[first.0], &vals[x.0])?;
                add_into(&mut out, vals[x.0].data());
            }
            if matches!(op, Op::SeqMean(_)) {
                let inv = 1.0 / xs.len() as f64;
                out.iter_mut().for_each(|v| *v *= inv);
            }
            Tensor::from_parts(shape, out)
        }
        Op::Reshape { x, shape } => vals[x.0].reshape(shape)?,
        Op::Slice { x, start, len } => {
            let xv = &vals[x.0];
            if start + len > xv.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: name,
                    lhs: xv.shape().to_vec(),
                    rhs: vec![start + len],
                });
            }
            Tensor::from_parts(vec![*len], xv.data()[*start..start + len].to_vec())
        }
        Op::Concat(xs) => {
            let data: Vec<f64> = xs
                .iter()
                .flat_map(|x| vals[x.0].data().iter().copied())
                .collect();
            Tensor::from_parts(vec![data.len()], data)
        }
        Op::SumAll(x) => Tensor::from_parts(vec![1], vec![vals[x.0].data().iter().sum()]),
        Op::SoftmaxCrossEntropy { logits, label } => {
            let z = vals[logits.0].data();
            if vals[logits.0].shape().len() != 1 || *label >= z.len() {
                return Err(NumericsError::LabelOutOfRange {
                    label: *label,
                    classes: z.len(),
                });
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Tensor::from_parts(vec![1], vec![lse - z[*label]])
        }
        Op::Lstm { x, w, b } => return lstm_forward(name, &vals[x.0], &vals[w.0], &vals[b.0]),
    };
    Ok((out, 0, None))
}

fn lstm_forward(name: &'static str, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Evaluated, NumericsError> {
    let bad = || NumericsError::ShapeMismatch {
        op: name,
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    };
    if x.shape().len() != 2 || w.shape().len() != 2 || !w.shape()[0].is_multiple_of(4) {
        return Err(bad());
    }
    let (steps, n_in) = (x.shape()[0], x.shape()[1]);
    let hidden = w.shape()[0] / 4;
    let n_cat = n_in + hidden;
    if w.shape()[1] != n_cat || b.shape() != [4 * hidden] {
        return Err(bad());
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut hs = vec![0.0; steps * hidden];
    // Per step: activated gates [i, f, g, o] then the cell state.
    let mut saved = vec![0.0; steps * 5 * hidden];
    let mut cat = vec![0.0; n_cat];
    let mut c_prev = vec![0.0; hidden];
    for t in 0..steps {
        cat[..n_in].copy_from_slice(&xd[t * n_in..(t + 1) * n_in]);
        if t > 0 {
            cat[n_in..].copy_from_slice(&hs[(t - 1) * hidden..t * hidden]);
        }
        let block = &mut saved[t * 5 * hidden..(t + 1) * 5 * hidden];
        for r in 0..4 * hidden {
            let row = &wd[r * n_cat..(r + 1) * n_cat];
            let z = bd[r] + row.iter().zip(&cat).map(|(a, b)| a * b).sum::<f64>();
            block[r] = if (2 * hidden..3 * hidden).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
        for j in 0..hidden {
            let c = block[hidden + j] * c_prev[j] + block[j] * block[2 * hidden + j];
            block[4 * hidden + j] = c;
            hs[t * hidden + j] = block[3 * hidden + j] * c.tanh();
            c_prev[j] = c;
        }
    }
    let macs = (steps * 4 * hidden * n_cat) as u64;
    Ok((Tensor::from_parts(vec![steps, hidden], hs), macs, Some(saved)))
}
