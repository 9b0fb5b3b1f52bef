//! Two-level transformer over schematic knowledge.
//!
//! Each charge has four schema texts. Every schema runs through its own
//! schema-level transformer and is mean-pooled into `s_j`; the four `s_j`
//! then pass through a charge-level transformer whose mean is `q`. The
//! group label is BiLSTM-encoded and prepended, so row `i` of the result is
//! `c_i = [group_i ; q_i]`.

use rand::Rng;

use crate::data::KnowledgeTree;
use crate::diffcore::{NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::encoders::BiLstmEncoder;
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::textgraph::Vocabulary;

/// Score given to masked attention logits before the softmax. Its
/// exponential underflows to exactly zero.
const MASK_FILL: f64 = -1e9;

/// Multi-head scaled dot-product attention.
///
/// Head `i` uses column block `i` of the `d_model × d_model` projections
/// `W^Q`, `W^K`, `W^V` (so `d_k = d_v = d_model / h`); the concatenated
/// heads are projected by `W^O`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), glorot_uniform(rng, d_model, d_model));
        Ok(MultiHeadAttention {
            w_q: w("w_q")?,
            w_k: w("w_k")?,
            w_v: w("w_v")?,
            w_o: w("w_o")?,
            heads,
            d_model,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        self.forward_with_weights(tape, q, k, v, mask).map(|(out, _)| out)
    }

    /// Also returns each head's `n_q × n_k` attention weights.
    ///
    /// `mask`, when given, is row-major `n_q × n_k` with `true` marking keys
    /// a query may attend to.
    pub fn forward_with_weights<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let ([nq, dq], [nk, dk], [nv, dv]) = (tape.shape(q), tape.shape(k), tape.shape(v));
        if dq != self.d_model || dk != self.d_model || dv != self.d_model || nk != nv {
            return Err(Error::shape(
                "multi_head_attention",
                format!("Q {:?}, K {:?}, V {:?} with d_model {}", [nq, dq], [nk, dk], [nv, dv], self.d_model),
            ));
        }
        let fill_mask: Option<Vec<bool>> = match mask {
            None => None,
            Some(m) if m.len() != nq * nk => {
                return Err(Error::shape("multi_head_attention", format!("mask of {} for {nq}x{nk}", m.len())))
            }
            Some(m) => {
                if let Some(row) = m.chunks(nk).position(|r| !r.iter().any(|&a| a)) {
                    return Err(Error::Usage(format!("attention query row {row} has every key masked")));
                }
                Some(m.iter().map(|&allowed| !allowed).collect())
            }
        };

        let hd = self.head_dim();
        let scale = F::from_f64(1.0 / (hd as f64).sqrt());
        let (wq, wk, wv, wo) = (
            tape.param(self.w_q),
            tape.param(self.w_k),
            tape.param(self.w_v),
            tape.param(self.w_o),
        );
        let qp = tape.matmul(q, wq)?;
        let kp = tape.matmul(k, wk)?;
        let kt = tape.transpose(kp)?;
        let vp = tape.matmul(v, wv)?;

        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(qp, h * hd, hd)?;
            let kh = tape.slice_rows(kt, h * hd, hd)?;
            let vh = tape.slice_cols(vp, h * hd, hd)?;
            let raw = tape.matmul(qh, kh)?;
            let mut scores = tape.scale(raw, scale)?;
            if let Some(m) = &fill_mask {
                scores = tape.masked_fill(scores, m, F::from_f64(MASK_FILL))?;
            }
            let att = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(att, vh)?);
            weights.push(att);
        }
        let cat = tape.concat_cols(&heads)?;
        Ok((tape.matmul(cat, wo)?, weights))
    }
}

/// Residual connection followed by layer normalization with gain and bias.
#[derive(Clone, Debug)]
pub struct AddNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl AddNorm {
    fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d: usize) -> Result<Self> {
        Ok(AddNorm {
            gain: store.add(format!("{prefix}.gain"), Tensor::filled(1, d, F::one()))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(1, d))?,
        })
    }

    /// `LayerNorm(x + sublayer)`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: NodeId, sublayer: NodeId) -> Result<NodeId> {
        let sum = tape.add(x, sublayer)?;
        let norm = tape.layer_norm_rows(sum)?;
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let scaled = tape.mul(norm, g)?;
        tape.add(scaled, b)
    }
}

/// Masked self-attention, self-attention and a position-wise feed-forward
/// network (inner width `4 · d_model`), each wrapped as
/// `LayerNorm(x + Sublayer(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub masked_attention: MultiHeadAttention,
    pub self_attention: MultiHeadAttention,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norms: [AddNorm; 3],
    d_model: usize,
}

impl TransformerBlock {
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let inner = 4 * d_model;
        let masked_attention = MultiHeadAttention::register(store, &format!("{prefix}.masked_attn"), d_model, heads, rng)?;
        let norm0 = AddNorm::register(store, &format!("{prefix}.norm0"), d_model)?;
        let self_attention = MultiHeadAttention::register(store, &format!("{prefix}.self_attn"), d_model, heads, rng)?;
        let norm1 = AddNorm::register(store, &format!("{prefix}.norm1"), d_model)?;
        let ffn_w1 = store.add(format!("{prefix}.ffn.w1"), glorot_uniform(rng, d_model, inner))?;
        let ffn_b1 = store.add(format!("{prefix}.ffn.b1"), Tensor::zeros(1, inner))?;
        let ffn_w2 = store.add(format!("{prefix}.ffn.w2"), glorot_uniform(rng, inner, d_model))?;
        let ffn_b2 = store.add(format!("{prefix}.ffn.b2"), Tensor::zeros(1, d_model))?;
        let norm2 = AddNorm::register(store, &format!("{prefix}.norm2"), d_model)?;
        Ok(TransformerBlock {
            masked_attention,
            self_attention,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            norms: [norm0, norm1, norm2],
            d_model,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// `pad` marks real positions with `true`. The first sublayer stops
    /// every query from attending to padding; the second attends over all
    /// rows it is given.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: NodeId, pad: Option<&[bool]>) -> Result<NodeId> {
        let [len, width] = tape.shape(x);
        if width != self.d_model {
            return Err(Error::shape("transformer_block", format!("input width {width}, d_model {}", self.d_model)));
        }
        let mask = match pad {
            None => None,
            Some(p) if p.len() != len => {
                return Err(Error::shape("transformer_block", format!("padding mask of {} for {len} rows", p.len())))
            }
            Some(p) if !p.iter().any(|&r| r) => {
                return Err(Error::Usage("transformer_block: input is all padding".into()))
            }
            Some(p) => Some((0..len).flat_map(|_| p.iter().copied()).collect::<Vec<bool>>()),
        };

        let a = self.masked_attention.forward(tape, x, x, x, mask.as_deref())?;
        let x1 = self.norms[0].forward(tape, x, a)?;

        let a = self.self_attention.forward(tape, x1, x1, x1, None)?;
        let x2 = self.norms[1].forward(tape, x1, a)?;

        let (w1, b1, w2, b2) = (
            tape.param(self.ffn_w1),
            tape.param(self.ffn_b1),
            tape.param(self.ffn_w2),
            tape.param(self.ffn_b2),
        );
        let h = tape.matmul(x2, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let f = tape.matmul(h, w2)?;
        let f = tape.add(f, b2)?;
        self.norms[2].forward(tape, x2, f)
    }
}

/// Sinusoidal position table `len × d`.
pub fn positional_encoding<F: Scalar>(len: usize, d: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            t.set(pos, i, F::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    t
}

/// Token ids of one charge's group label and four schemas, in the order
/// object, objective, subject, subjective elements.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCharge {
    pub name: String,
    pub group: Vec<usize>,
    pub schemas: [Vec<usize>; 4],
}

/// Every charge of a knowledge tree, tokenized, in tree order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedKnowledge {
    pub charges: Vec<EncodedCharge>,
}

impl EncodedKnowledge {
    pub fn from_tree(tree: &KnowledgeTree, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let encode = |text: &str| {
            let toks = crate::data::tokenize(text);
            let mut ids = vocab.encode(&toks);
            ids.truncate(max_len);
            ids
        };
        let mut charges = Vec::new();
        for (group, charge) in tree.charges() {
            let group_ids = encode(&group.name);
            if group_ids.is_empty() {
                return Err(Error::Validation(format!("charge {:?} has an empty group label", charge.name)));
            }
            let schemas = charge.schemas().map(encode);
            if let Some(k) = schemas.iter().position(Vec::is_empty) {
                return Err(Error::Validation(format!("charge {:?} is missing schema K{}", charge.name, k + 1)));
            }
            charges.push(EncodedCharge {
                name: charge.name.clone(),
                group: group_ids,
                schemas,
            });
        }
        if charges.is_empty() {
            return Err(Error::Validation("knowledge tree has no charges".into()));
        }
        Ok(EncodedKnowledge { charges })
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KnowledgeEncoderConfig {
    pub d_model: usize,
    /// Width of the group-label BiLSTM output (`s`).
    pub group_dim: usize,
    pub heads: usize,
    pub blocks_per_level: usize,
    pub share_schema_encoders: bool,
}

/// Schema-level and charge-level transformers plus the group-label BiLSTM.
#[derive(Clone, Debug)]
pub struct KnowledgeEncoder {
    /// One stack per schema slot, or a single shared stack.
    schema_stacks: Vec<Vec<TransformerBlock>>,
    charge_stack: Vec<TransformerBlock>,
    group: BiLstmEncoder,
    d_model: usize,
}

impl KnowledgeEncoder {
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: KnowledgeEncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.blocks_per_level == 0 {
            return Err(Error::Config("at least one transformer block per level is required".into()));
        }
        let stacks = if cfg.share_schema_encoders { 1 } else { 4 };
        let mut schema_stacks = Vec::with_capacity(stacks);
        for s in 0..stacks {
            let stack = (0..cfg.blocks_per_level)
                .map(|b| TransformerBlock::register(store, &format!("{prefix}.schema{s}.block{b}"), cfg.d_model, cfg.heads, rng))
                .collect::<Result<_>>()?;
            schema_stacks.push(stack);
        }
        let charge_stack = (0..cfg.blocks_per_level)
            .map(|b| TransformerBlock::register(store, &format!("{prefix}.charge.block{b}"), cfg.d_model, cfg.heads, rng))
            .collect::<Result<_>>()?;
        let group = BiLstmEncoder::register(store, &format!("{prefix}.group"), cfg.d_model, cfg.group_dim, rng)?;
        Ok(KnowledgeEncoder {
            schema_stacks,
            charge_stack,
            group,
            d_model: cfg.d_model,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Width of each row of [`Self::build_charge_representations`].
    pub fn output_dim(&self) -> usize {
        self.group.output_dim() + self.d_model
    }

    pub fn group_encoder(&self) -> &BiLstmEncoder {
        &self.group
    }

    pub fn schema_stack(&self, which: usize) -> &[TransformerBlock] {
        &self.schema_stacks[which.min(self.schema_stacks.len() - 1)]
    }

    pub fn charge_stack(&self) -> &[TransformerBlock] {
        &self.charge_stack
    }

    /// `s_which` for one schema text; `which` is 0..4 for K₁..K₄.
    pub fn encode_schema<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        embedding: ParamId,
        tokens: &[usize],
        which: usize,
    ) -> Result<NodeId> {
        if which >= 4 {
            return Err(Error::Usage(format!("schema index {which} outside 0..4")));
        }
        if tokens.is_empty() {
            return Err(Error::Usage("encode_schema: empty schema text".into()));
        }
        let table = tape.param(embedding);
        let emb = tape.embedding_lookup(table, tokens)?;
        let pos = tape.constant(positional_encoding(tokens.len(), self.d_model))?;
        let mut x = tape.add(emb, pos)?;
        for block in self.schema_stack(which) {
            x = block.forward(tape, x, None)?;
        }
        tape.mean_pool_rows(x, None)
    }

    /// `q` from the four schema vectors (each `1 × d_model`).
    pub fn encode_charge<F: Scalar>(&self, tape: &mut Tape<'_, F>, schemas: [NodeId; 4]) -> Result<NodeId> {
        let mut x = tape.concat_rows(&schemas)?;
        for block in &self.charge_stack {
            x = block.forward(tape, x, None)?;
        }
        tape.mean_pool_rows(x, None)
    }

    /// `c`, one row `[BiLSTM(group) ; q]` per charge (`m × (s + d_model)`).
    pub fn build_charge_representations<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        embedding: ParamId,
        knowledge: &EncodedKnowledge,
    ) -> Result<NodeId> {
        let mut rows = Vec::with_capacity(knowledge.len());
        for charge in &knowledge.charges {
            let mut s = [None; 4];
            for (j, schema) in charge.schemas.iter().enumerate() {
                s[j] = Some(self.encode_schema(tape, embedding, schema, j)?);
            }
            let q = self.encode_charge(tape, s.map(|n| n.expect("filled")))?;
            let g = self.group.encode_tokens(tape, embedding, &charge.group)?;
            rows.push(tape.concat_cols(&[g, q])?);
        }
        tape.concat_rows(&rows)
    }
}
