use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Param(ParamId),
    Input,
    Constant,
    MatMul(NodeId, NodeId),
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Mul { a: NodeId, b: NodeId, broadcast: bool },
    Scale(NodeId, F),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, inv_std: Vec<F> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    MaxPool { x: NodeId, argmax: Vec<usize> },
    MeanPool { x: NodeId, rows: Vec<usize> },
    Embedding { table: NodeId, ids: Vec<usize> },
    Dropout { x: NodeId, mask: Vec<F> },
    Transpose(NodeId),
    MaskedFill { x: NodeId, mask: Vec<bool> },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    Sum(NodeId),
    CrossEntropy { logits: NodeId, gold: Vec<usize>, probs: Vec<F> },
}

struct Node<F> {
    /// `None` for parameter leaves, whose values live in the store.
    value: Option<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients from one backward pass.
pub struct Gradients<F> {
    params: ParamGrads<F>,
    nodes: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn params(&self) -> &ParamGrads<F> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<F> {
        self.params
    }

    /// Gradient with respect to a recorded node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&[F]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Ordered record of executed operations.
///
/// Each operation method computes its output eagerly and appends a node.
/// [`Tape::backward`] walks the nodes in exact reverse order, so a value
/// consumed by several operations accumulates one contribution per consumer.
/// Parameters are read from a shared [`ParamStore`]; several tapes may borrow
/// the same store at once.
pub struct Tape<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_nodes: Vec<Option<NodeId>>,
    recording: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

const LN_EPS: f64 = 1e-6;

impl<'p, F: Scalar> Tape<'p, F> {
    /// Recording tape with dropout disabled.
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self::build(params, true, None)
    }

    /// Non-recording tape for inference; `backward` is rejected.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Self::build(params, false, None)
    }

    /// Recording tape with dropout active, masks drawn from `seed`.
    pub fn training(params: &'p ParamStore<F>, seed: u64) -> Self {
        Self::build(params, true, Some(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn build(params: &'p ParamStore<F>, recording: bool, rng: Option<ChaCha8Rng>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            recording,
            dropout_rng: rng,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.value(id).shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<F> {
        let v = self.value(id);
        if v.shape() != [1, 1] {
            return Err(Error::shape("scalar", format!("expected 1x1, got {:?}", v.shape())));
        }
        Ok(v.data()[0])
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor<F>, kind: Op<F>, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Some(value),
            op: kind,
            requires_grad: requires_grad && self.recording,
        });
        Ok(id)
    }

    // ---- leaves -------------------------------------------------------

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: self.recording,
        });
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Leaf whose gradient is tracked and can be read after backward.
    pub fn input(&mut self, t: Tensor<F>) -> Result<NodeId> {
        self.push("input", t.detached(), Op::Input, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Result<NodeId> {
        self.push("constant", t.detached(), Op::Constant, false)
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![F::zero(); n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        let value = Tensor::new(n, m, out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let value = Tensor::new(v.cols(), v.rows(), transpose_data(v.data(), v.rows(), v.cols()))?;
        let rg = self.rg(x);
        self.push("transpose", value, Op::Transpose(x), rg)
    }

    fn broadcast_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb[0] == 1 && sb[1] == sa[1] {
            Ok(true)
        } else {
            Err(Error::shape(op, format!("{sa:?} and {sb:?}")))
        }
    }

    /// `a + b`, where `b` is either the same shape or a `1 × cols` row
    /// broadcast over every row of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.broadcast_check("add", a, b)?;
        let value = self.zip_broadcast(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push("add", value, Op::Add { a, b, broadcast }, rg)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.broadcast_check("elementwise_mul", a, b)?;
        let value = self.zip_broadcast(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push("elementwise_mul", value, Op::Mul { a, b, broadcast }, rg)
    }

    fn zip_broadcast(&self, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, if bd.len() == cols { bd[i % cols] } else { bd[i] }))
            .collect();
        Tensor::new(av.rows(), cols, data).expect("shape preserved")
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> Result<NodeId> {
        let value = self.map(x, |v| v * factor);
        let rg = self.rg(x);
        self.push("scale", value, Op::Scale(x, factor), rg)
    }

    fn map(&self, x: NodeId, f: impl Fn(F) -> F) -> Tensor<F> {
        let v = self.value(x);
        Tensor::new(v.rows(), v.cols(), v.data().iter().map(|&e| f(e)).collect()).expect("shape preserved")
    }

    // ---- activations -------------------------------------------------

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map(x, |v| if v > F::zero() { v } else { F::zero() });
        let rg = self.rg(x);
        self.push("relu", value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map(x, |v| F::one() / (F::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push("sigmoid", value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.map(x, |v| v.tanh());
        let rg = self.rg(x);
        self.push("tanh", value, Op::Tanh(x), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(v.rows(), cols, out)?;
        let rg = self.rg(x);
        self.push("softmax_rows", value, Op::Softmax(x), rg)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let cols = v.cols();
        let n = F::from_f64(cols as f64);
        let eps = F::from_f64(LN_EPS);
        let mut out = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(v.rows());
        for row in out.chunks_mut(cols) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|e| *e = (*e - mean) * inv);
            inv_std.push(inv);
        }
        let value = Tensor::new(v.rows(), cols, out)?;
        let rg = self.rg(x);
        self.push("layer_norm_rows", value, Op::LayerNorm { x, inv_std }, rg)
    }

    // ---- structural --------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", format!("column counts {cols} and {}", v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(rows, cols, data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.shape(first)[0];
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p)[0] != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {rows} and {}", self.shape(bad)[0]),
            ));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if len == 0 || start + len > v.rows() {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {:?}", start + len, v.shape())));
        }
        let c = v.cols();
        let value = Tensor::new(len, c, v.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(x);
        self.push("slice_rows", value, Op::SliceRows { x, start }, rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if len == 0 || start + len > v.cols() {
            return Err(Error::shape("slice_cols", format!("cols {start}..{} of {:?}", start + len, v.shape())));
        }
        let data = (0..v.rows())
            .flat_map(|r| v.row(r)[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(v.rows(), len, data)?;
        let rg = self.rg(x);
        self.push("slice_cols", value, Op::SliceCols { x, start }, rg)
    }

    /// Column-wise maximum over rows, giving a `1 × cols` row. Ties go to
    /// the first row attaining the maximum.
    pub fn max_pool_columns(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let cols = v.cols();
        let mut best = v.row(0).to_vec();
        let mut argmax = vec![0; cols];
        for r in 1..v.rows() {
            for (c, &e) in v.row(r).iter().enumerate() {
                if e > best[c] {
                    best[c] = e;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::new(1, cols, best)?;
        let rg = self.rg(x);
        self.push("max_pool_columns", value, Op::MaxPool { x, argmax }, rg)
    }

    /// Mean over rows, giving a `1 × cols` row. With a mask, only rows whose
    /// flag is `true` are averaged.
    pub fn mean_pool_rows(&mut self, x: NodeId, keep: Option<&[bool]>) -> Result<NodeId> {
        let v = self.value(x);
        let rows: Vec<usize> = match keep {
            Some(m) if m.len() != v.rows() => {
                return Err(Error::shape("mean_pool_rows", format!("mask of {} for {} rows", m.len(), v.rows())))
            }
            Some(m) => (0..v.rows()).filter(|&r| m[r]).collect(),
            None => (0..v.rows()).collect(),
        };
        if rows.is_empty() {
            return Err(Error::Usage("mean_pool_rows: every row is masked".into()));
        }
        let inv = F::one() / F::from_f64(rows.len() as f64);
        let mut out = vec![F::zero(); v.cols()];
        for &r in &rows {
            out.iter_mut().zip(v.row(r)).for_each(|(o, &e)| *o = *o + e);
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        let value = Tensor::new(1, v.cols(), out)?;
        let rg = self.rg(x);
        self.push("mean_pool_rows", value, Op::MeanPool { x, rows }, rg)
    }

    /// Gathers rows of `table` by id, giving `ids.len() × cols`.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::shape("embedding_lookup", "empty id sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("embedding_lookup", format!("id {bad} outside table of {} rows", t.rows())));
        }
        let data = ids.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let value = Tensor::new(ids.len(), t.cols(), data)?;
        let rg = self.rg(table);
        self.push("embedding_lookup", value, Op::Embedding { table, ids: ids.to_vec() }, rg)
    }

    /// Inverted dropout. Identity when the tape is not training or `rate == 0`.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.dropout_rng.is_none() || rate == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let rng = self.dropout_rng.as_mut().expect("checked above");
        let mask: Vec<F> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&e, &m)| e * m).collect();
        let value = Tensor::new(v.rows(), v.cols(), data)?;
        let rg = self.rg(x);
        self.push("dropout", value, Op::Dropout { x, mask }, rg)
    }

    /// Replaces entries whose mask flag is `true` with `fill`.
    pub fn masked_fill(&mut self, x: NodeId, mask: &[bool], fill: F) -> Result<NodeId> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(Error::shape("masked_fill", format!("mask of {} for {:?}", mask.len(), v.shape())));
        }
        let data = v
            .data()
            .iter()
            .zip(mask)
            .map(|(&e, &m)| if m { fill } else { e })
            .collect();
        let value = Tensor::new(v.rows(), v.cols(), data)?;
        let rg = self.rg(x);
        self.push("masked_fill", value, Op::MaskedFill { x, mask: mask.to_vec() }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push("sum", Tensor::filled(1, 1, s), Op::Sum(x), rg)
    }

    /// Mean cross-entropy of row-wise logits against gold class indices,
    /// computed through log-sum-exp. Returns a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: NodeId, gold: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        if gold.len() != v.rows() {
            return Err(Error::shape("cross_entropy", format!("{} labels for {} rows", gold.len(), v.rows())));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= v.cols()) {
            return Err(Error::Usage(format!("gold class {bad} outside [0, {})", v.cols())));
        }
        let cols = v.cols();
        let mut probs = v.data().to_vec();
        let mut total = F::zero();
        for (r, row) in probs.chunks_mut(cols).enumerate() {
            let lse = log_sum_exp(row);
            total = total + lse - row[gold[r]];
            row.iter_mut().for_each(|e| *e = (*e - lse).exp());
        }
        let loss = total / F::from_f64(gold.len() as f64);
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            Tensor::filled(1, 1, loss),
            Op::CrossEntropy { logits, gold: gold.to_vec(), probs },
            rg,
        )
    }

    // ---- backward ----------------------------------------------------

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_from(loss, &[F::one()])
    }

    /// Reverse pass seeded with an explicit upstream gradient for `root`.
    pub fn backward_from(&self, root: NodeId, seed: &[F]) -> Result<Gradients<F>> {
        if !self.recording {
            return Err(Error::Usage("backward called on a tape that is not recording".into()));
        }
        if seed.len() != self.value(root).len() {
            return Err(Error::shape("backward", format!("seed of {} for {:?}", seed.len(), self.shape(root))));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed.to_vec());
        let mut params = ParamGrads::empty(self.params.len());

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(dy);
                continue;
            }
            self.propagate(idx, &node.op, &dy, &mut grads, &mut params);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn propagate(
        &self,
        idx: usize,
        op: &Op<F>,
        dy: &[F],
        grads: &mut [Option<Vec<F>>],
        params: &mut ParamGrads<F>,
    ) {
        let out = self.nodes[idx].value.as_ref();
        let y = || out.expect("op nodes own values").data();
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [F])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let n = self.value(id).len();
            let slot = grads[id.0].get_or_insert_with(|| vec![F::zero(); n]);
            f(slot);
        };
        match op {
            Op::Param(p) => params.add_slice(*p, dy),
            Op::Input | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |g| {
                    // dA = dY · Bᵀ
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let br = &bv.data()[kk * m..(kk + 1) * m];
                            g[i * k + kk] = g[i * k + kk] + dot(dyr, br);
                        }
                    }
                });
                acc(*b, &mut |g| {
                    // dB = Aᵀ · dY
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let a_ik = av.data()[i * k + kk];
                            if a_ik == F::zero() {
                                continue;
                            }
                            let gr = &mut g[kk * m..(kk + 1) * m];
                            gr.iter_mut().zip(dyr).for_each(|(o, &d)| *o = *o + a_ik * d);
                        }
                    }
                });
            }
            Op::Add { a, b, broadcast } => {
                acc(*a, &mut |g| add_into(g, dy));
                let cols = self.value(*a).cols();
                acc(*b, &mut |g| {
                    if *broadcast {
                        for row in dy.chunks(cols) {
                            add_into(g, row);
                        }
                    } else {
                        add_into(g, dy);
                    }
                });
            }
            Op::Mul { a, b, broadcast } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let bd = bv.data();
                acc(*a, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        let bi = if *broadcast { bd[i % cols] } else { bd[i] };
                        *gi = *gi + dy[i] * bi;
                    }
                });
                acc(*b, &mut |g| {
                    for (i, (&d, &ai)) in dy.iter().zip(av.data()).enumerate() {
                        let j = if *broadcast { i % cols } else { i };
                        g[j] = g[j] + d * ai;
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(o, &d)| *o = *o + d * *f)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |g| {
                    for ((o, &d), &xi) in g.iter_mut().zip(dy).zip(xv) {
                        if xi > F::zero() {
                            *o = *o + d;
                        }
                    }
                })
            }
            Op::Sigmoid(x) => {
                let yv = y();
                acc(*x, &mut |g| {
                    for ((o, &d), &s) in g.iter_mut().zip(dy).zip(yv) {
                        *o = *o + d * s * (F::one() - s);
                    }
                })
            }
            Op::Tanh(x) => {
                let yv = y();
                acc(*x, &mut |g| {
                    for ((o, &d), &t) in g.iter_mut().zip(dy).zip(yv) {
                        *o = *o + d * (F::one() - t * t);
                    }
                })
            }
            Op::Softmax(x) => {
                let yv = y();
                let cols = self.value(*x).cols();
                acc(*x, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(cols).zip(dy.chunks(cols)).zip(yv.chunks(cols)) {
                        let inner = dot(dr, yr);
                        for ((o, &d), &s) in gr.iter_mut().zip(dr).zip(yr) {
                            *o = *o + s * (d - inner);
                        }
                    }
                })
            }
            Op::LayerNorm { x, inv_std } => {
                let yv = y();
                let cols = self.value(*x).cols();
                let n = F::from_f64(cols as f64);
                acc(*x, &mut |g| {
                    for (r, ((gr, dr), yr)) in g
                        .chunks_mut(cols)
                        .zip(dy.chunks(cols))
                        .zip(yv.chunks(cols))
                        .enumerate()
                    {
                        let sum_d = dr.iter().copied().sum::<F>();
                        let sum_dy = dot(dr, yr);
                        let k = inv_std[r] / n;
                        for ((o, &d), &yi) in gr.iter_mut().zip(dr).zip(yr) {
                            *o = *o + k * (n * d - sum_d - yi * sum_dy);
                        }
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |g| add_into(g, &dy[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut col = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    acc(p, &mut |g| {
                        for (r, gr) in g.chunks_mut(c).enumerate() {
                            add_into(gr, &dy[r * total + col..r * total + col + c]);
                        }
                    });
                    col += c;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |g| add_into(&mut g[start * c..start * c + dy.len()], dy))
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = y().len() / self.value(*x).rows();
                acc(*x, &mut |g| {
                    for (r, dr) in dy.chunks(len).enumerate() {
                        add_into(&mut g[r * c + start..r * c + start + len], dr);
                    }
                })
            }
            Op::MaxPool { x, argmax } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |g| {
                    for (col, &r) in argmax.iter().enumerate() {
                        g[r * c + col] = g[r * c + col] + dy[col];
                    }
                })
            }
            Op::MeanPool { x, rows } => {
                let c = self.value(*x).cols();
                let inv = F::one() / F::from_f64(rows.len() as f64);
                acc(*x, &mut |g| {
                    for &r in rows {
                        for (o, &d) in g[r * c..(r + 1) * c].iter_mut().zip(dy) {
                            *o = *o + d * inv;
                        }
                    }
                })
            }
            Op::Embedding { table, ids } => {
                let c = self.value(*table).cols();
                acc(*table, &mut |g| {
                    for (pos, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * c..(id + 1) * c], &dy[pos * c..(pos + 1) * c]);
                    }
                })
            }
            Op::Dropout { x, mask } => acc(*x, &mut |g| {
                for ((o, &d), &m) in g.iter_mut().zip(dy).zip(mask) {
                    *o = *o + d * m;
                }
            }),
            Op::Transpose(x) => {
                let v = self.value(*x);
                let t = transpose_data(dy, v.cols(), v.rows());
                acc(*x, &mut |g| add_into(g, &t))
            }
            Op::MaskedFill { x, mask } => acc(*x, &mut |g| {
                for ((o, &d), &m) in g.iter_mut().zip(dy).zip(mask) {
                    if !m {
                        *o = *o + d;
                    }
                }
            }),
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|o| *o = *o + dy[0])),
            Op::CrossEntropy { logits, gold, probs } => {
                let cols = self.value(*logits).cols();
                let scale = dy[0] / F::from_f64(gold.len() as f64);
                acc(*logits, &mut |g| {
                    for (r, (gr, pr)) in g.chunks_mut(cols).zip(probs.chunks(cols)).enumerate() {
                        for (c, (o, &p)) in gr.iter_mut().zip(pr).enumerate() {
                            let target = if c == gold[r] { F::one() } else { F::zero() };
                            *o = *o + scale * (p - target);
                        }
                    }
                })
            }
        }
    }
}

// ---- kernels ---------------------------------------------------------

fn matmul_into<F: Scalar>(a: &[F], b: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let a_ik = a[i * k + kk];
            if a_ik == F::zero() {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o = *o + a_ik * bv);
        }
    }
}

fn transpose_data<F: Scalar>(d: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); d.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = d[r * cols + c];
        }
    }
    out
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    max + row.iter().map(|&e| (e - max).exp()).sum::<F>().ln()
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for e in row.iter_mut() {
        *e = (*e - max).exp();
        total = total + *e;
    }
    row.iter_mut().for_each(|e| *e = *e / total);
}
