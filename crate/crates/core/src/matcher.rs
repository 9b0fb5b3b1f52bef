//! Knowledge matching network and the output classifier.

use rand::Rng;

use crate::diffcore::{NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;

/// Projects a fact vector and the charge rows into two views each, attends
/// over charges with `β` and returns `g = [e₂ ; Σᵢ βᵢ c²ᵢ]`.
#[derive(Clone, Debug)]
pub struct MatchingNetwork {
    pub w_e1: ParamId,
    pub w_e2: ParamId,
    pub w_c1: ParamId,
    pub w_c2: ParamId,
    /// Attention projection applied to `e₁`.
    pub w_f: ParamId,
    /// Attention projection applied to each `c¹ᵢ`.
    pub w_k: ParamId,
    fact_dim: usize,
    knowledge_dim: usize,
}

/// Output of [`MatchingNetwork::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Matched {
    /// `1 × 2s` knowledge-aware representation.
    pub g: NodeId,
    /// `1 × m` attention over charges.
    pub beta: NodeId,
}

impl MatchingNetwork {
    /// `fact_dim` is `s`; `knowledge_dim` is the width of a charge row.
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        fact_dim: usize,
        knowledge_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = fact_dim;
        let mut add = |name: &str, rows: usize| store.add(format!("{prefix}.{name}"), glorot_uniform(rng, rows, s));
        Ok(MatchingNetwork {
            w_e1: add("w_e1", s)?,
            w_e2: add("w_e2", s)?,
            w_c1: add("w_c1", knowledge_dim)?,
            w_c2: add("w_c2", knowledge_dim)?,
            w_f: add("w_f", s)?,
            w_k: add("w_k", s)?,
            fact_dim,
            knowledge_dim,
        })
    }

    /// Width of `g`.
    pub fn output_dim(&self) -> usize {
        2 * self.fact_dim
    }

    /// `e` is `1 × s`; `c` is `m × (s + d_model)`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, e: NodeId, c: NodeId) -> Result<Matched> {
        let [er, ec] = tape.shape(e);
        let [m, cc] = tape.shape(c);
        if er != 1 || ec != self.fact_dim {
            return Err(Error::shape("match", format!("fact vector is {er}x{ec}, expected 1x{}", self.fact_dim)));
        }
        if cc != self.knowledge_dim {
            return Err(Error::shape("match", format!("charge rows have width {cc}, expected {}", self.knowledge_dim)));
        }
        if m == 0 {
            return Err(Error::Usage("matching needs at least one charge".into()));
        }
        let p = |tape: &mut Tape<'_, F>, id| tape.param(id);

        let w = p(tape, self.w_e1);
        let e1 = tape.matmul(e, w)?;
        let w = p(tape, self.w_e2);
        let e2 = tape.matmul(e, w)?;
        let w = p(tape, self.w_c1);
        let c1 = tape.matmul(c, w)?;
        let w = p(tape, self.w_c2);
        let c2 = tape.matmul(c, w)?;

        let w = p(tape, self.w_f);
        let a = tape.matmul(e1, w)?;
        let a = tape.relu(a)?;
        let w = p(tape, self.w_k);
        let b = tape.matmul(c1, w)?;
        let b = tape.relu(b)?;
        let bt = tape.transpose(b)?;
        let scores = tape.matmul(a, bt)?;
        let beta = tape.softmax_rows(scores)?;

        let matched = tape.matmul(beta, c2)?;
        let g = tape.concat_cols(&[e2, matched])?;
        Ok(Matched { g, beta })
    }
}

/// Linear layer followed by softmax over charges.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub w_y: ParamId,
    pub b_y: ParamId,
    input_dim: usize,
    classes: usize,
}

impl Classifier {
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        Ok(Classifier {
            w_y: store.add(format!("{prefix}.w_y"), glorot_uniform(rng, input_dim, classes))?,
            b_y: store.add(format!("{prefix}.b_y"), Tensor::zeros(1, classes))?,
            input_dim,
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Unnormalized scores `g Wʸ + bʸ`.
    pub fn logits<F: Scalar>(&self, tape: &mut Tape<'_, F>, g: NodeId) -> Result<NodeId> {
        let [_, c] = tape.shape(g);
        if c != self.input_dim {
            return Err(Error::shape("classify", format!("input width {c}, expected {}", self.input_dim)));
        }
        let w = tape.param(self.w_y);
        let b = tape.param(self.b_y);
        let z = tape.matmul(g, w)?;
        tape.add(z, b)
    }

    /// Probability distribution over charges.
    pub fn classify<F: Scalar>(&self, tape: &mut Tape<'_, F>, g: NodeId) -> Result<NodeId> {
        let z = self.logits(tape, g)?;
        tape.softmax_rows(z)
    }
}

/// `−log ŷ_gold`, computed from logits by log-sum-exp.
pub fn cross_entropy_loss<F: Scalar>(tape: &mut Tape<'_, F>, logits: NodeId, gold: usize) -> Result<NodeId> {
    tape.cross_entropy(logits, &[gold])
}
