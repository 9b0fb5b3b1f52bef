//! Fact encoders: a four-layer GCN with max-pooling, and a bidirectional
//! LSTM (used for group labels and as the alternative fact encoder).

use rand::Rng;

use crate::diffcore::{NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::textgraph::AdjacencyMatrix;

/// Dense tensor view of an adjacency matrix.
pub fn adjacency_tensor<F: Scalar>(a: &AdjacencyMatrix) -> Tensor<F> {
    Tensor::from_f64(a.n(), a.n(), &a.to_dense()).expect("n >= 1")
}

/// Component-wise maximum over node rows: `e_i = max_k h_{k,i}`.
pub fn max_pool_nodes<F: Scalar>(tape: &mut Tape<'_, F>, h: NodeId) -> Result<NodeId> {
    tape.max_pool_columns(h)
}

/// Graph convolution stack `H⁽ᵏ⁺¹⁾ = ReLU(Â H⁽ᵏ⁾ W⁽ᵏ⁾)` followed by max-pooling.
#[derive(Clone, Debug)]
pub struct GcnEncoder {
    layers: Vec<ParamId>,
}

impl GcnEncoder {
    pub const LAYERS: usize = 4;

    /// Registers `W⁽⁰⁾: d × s` and three `s × s` layers.
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(Self::LAYERS);
        for k in 0..Self::LAYERS {
            let rows = if k == 0 { input_dim } else { hidden };
            layers.push(store.add(format!("{prefix}.w{k}"), glorot_uniform(rng, rows, hidden))?);
        }
        Ok(GcnEncoder { layers })
    }

    /// Wraps existing weights; there must be exactly four.
    pub fn from_layers(layers: Vec<ParamId>) -> Result<Self> {
        if layers.len() != Self::LAYERS {
            return Err(Error::Config(format!("GCN needs {} layers, got {}", Self::LAYERS, layers.len())));
        }
        Ok(GcnEncoder { layers })
    }

    pub fn layers(&self) -> &[ParamId] {
        &self.layers
    }

    /// Node representations after the last layer (`n × s`).
    pub fn propagate<F: Scalar>(&self, tape: &mut Tape<'_, F>, h0: NodeId, adj: NodeId) -> Result<NodeId> {
        let [n, d] = tape.shape(h0);
        let [an, am] = tape.shape(adj);
        let w0 = tape.store().get(self.layers[0]).shape();
        if an != n || am != n || d != w0[0] {
            return Err(Error::shape(
                "gcn_encode",
                format!("features {:?}, adjacency {:?}, first layer {:?}", [n, d], [an, am], w0),
            ));
        }
        let mut h = h0;
        for &w in &self.layers {
            let wn = tape.param(w);
            let hw = tape.matmul(h, wn)?;
            let mixed = tape.matmul(adj, hw)?;
            h = tape.relu(mixed)?;
        }
        Ok(h)
    }

    /// Fact representation `e` (`1 × s`).
    pub fn encode<F: Scalar>(&self, tape: &mut Tape<'_, F>, h0: NodeId, adj: NodeId) -> Result<NodeId> {
        let h = self.propagate(tape, h0, adj)?;
        max_pool_nodes(tape, h)
    }
}

/// Parameters of one LSTM direction, gates laid out as `[input, forget,
/// candidate, output]` along the columns.
#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl LstmDirection {
    fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_x = store.add(format!("{prefix}.w_x"), glorot_uniform(rng, input_dim, 4 * hidden))?;
        let w_h = store.add(format!("{prefix}.w_h"), glorot_uniform(rng, hidden, 4 * hidden))?;
        let mut b = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            b.set(0, c, F::one());
        }
        let bias = store.add(format!("{prefix}.b"), b)?;
        Ok(LstmDirection { w_x, w_h, bias })
    }
}

/// Single-layer bidirectional LSTM with hidden size `s / 2` per direction.
#[derive(Clone, Debug)]
pub struct BiLstmEncoder {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
    hidden: usize,
}

impl BiLstmEncoder {
    /// `output_dim` (= s) must be even.
    pub fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if output_dim % 2 != 0 {
            return Err(Error::Config(format!("BiLSTM output size {output_dim} must be even")));
        }
        let hidden = output_dim / 2;
        Ok(BiLstmEncoder {
            forward: LstmDirection::register(store, &format!("{prefix}.fwd"), input_dim, hidden, rng)?,
            backward: LstmDirection::register(store, &format!("{prefix}.bwd"), input_dim, hidden, rng)?,
            hidden,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Hidden states of one direction, indexed by input position.
    fn run<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        dir: &LstmDirection,
        x: NodeId,
        reverse: bool,
    ) -> Result<Vec<NodeId>> {
        let n = tape.shape(x)[0];
        let h = self.hidden;
        let (wx, wh, b) = (tape.param(dir.w_x), tape.param(dir.w_h), tape.param(dir.bias));
        let xw = tape.matmul(x, wx)?;
        let pre = tape.add(xw, b)?;

        let mut outputs = vec![None; n];
        let mut state: Option<(NodeId, NodeId)> = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let mut z = tape.slice_rows(pre, t, 1)?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, wh)?;
                z = tape.add(z, rec)?;
            }
            let zi = tape.slice_cols(z, 0, h)?;
            let zf = tape.slice_cols(z, h, h)?;
            let zg = tape.slice_cols(z, 2 * h, h)?;
            let zo = tape.slice_cols(z, 3 * h, h)?;
            let i = tape.sigmoid(zi)?;
            let f = tape.sigmoid(zf)?;
            let g = tape.tanh(zg)?;
            let o = tape.sigmoid(zo)?;
            let ig = tape.mul(i, g)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let fc = tape.mul(f, c_prev)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c)?;
            let h_t = tape.mul(o, tc)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }

    fn check_input<F: Scalar>(&self, tape: &Tape<'_, F>, x: NodeId) -> Result<()> {
        let expected = tape.store().get(self.forward.w_x).rows();
        let got = tape.shape(x)[1];
        if got != expected {
            return Err(Error::shape("bilstm_encode", format!("input width {got}, expected {expected}")));
        }
        Ok(())
    }

    /// `concat(final forward hidden, final backward hidden)` as `1 × s`.
    pub fn encode<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: NodeId) -> Result<NodeId> {
        self.check_input(tape, x)?;
        let fwd = self.run(tape, &self.forward, x, false)?;
        let bwd = self.run(tape, &self.backward, x, true)?;
        let last = *fwd.last().expect("n >= 1");
        tape.concat_cols(&[last, bwd[0]])
    }

    /// Per-position `concat(forward_t, backward_t)` as `n × s`.
    pub fn encode_steps<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: NodeId) -> Result<NodeId> {
        self.check_input(tape, x)?;
        let fwd = self.run(tape, &self.forward, x, false)?;
        let bwd = self.run(tape, &self.backward, x, true)?;
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat_cols(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    /// Embeds `ids` with `embedding` and encodes them.
    pub fn encode_tokens<F: Scalar>(&self, tape: &mut Tape<'_, F>, embedding: ParamId, ids: &[usize]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::Usage("bilstm_encode: empty sequence".into()));
        }
        let table = tape.param(embedding);
        let x = tape.embedding_lookup(table, ids)?;
        self.encode(tape, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Straight-line LSTM recurrence over plain vectors.
    fn lstm_oracle(xs: &[Vec<f64>], wx: &Tensor<f64>, wh: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
        let h = wh.rows();
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::new();
        for x in xs {
            let mut z = b.data().to_vec();
            for (col, zc) in z.iter_mut().enumerate() {
                for (r, &xv) in x.iter().enumerate() {
                    *zc += xv * wx.get(r, col);
                }
                for (r, &hv) in hs.iter().enumerate() {
                    *zc += hv * wh.get(r, col);
                }
            }
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                cs[k] = f * cs[k] + i * g;
                hs[k] = o * cs[k].tanh();
            }
            out.push(hs.clone());
        }
        out
    }

    #[test]
    fn gcn_identity_cascade_single_node() {
        let mut store = ParamStore::<f64>::new();
        let layers = (0..4)
            .map(|k| store.add(format!("w{k}"), Tensor::identity(3)).unwrap())
            .collect();
        let gcn = GcnEncoder::from_layers(layers).unwrap();
        let mut t = Tape::new(&store);
        let h0 = t.constant(Tensor::row_vector(vec![0.5, 0.0, 2.0]).unwrap()).unwrap();
        let adj = t.constant(Tensor::identity(1)).unwrap();
        let e = gcn.encode(&mut t, h0, adj).unwrap();
        assert_eq!(t.value(e).data(), &[0.5, 0.0, 2.0]);
    }

    #[test]
    fn gcn_rejects_mismatched_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let gcn = GcnEncoder::register(&mut store, "gcn", 3, 4, &mut rng).unwrap();
        let mut t = Tape::new(&store);
        let h0 = t.constant(Tensor::zeros(2, 3)).unwrap();
        let adj = t.constant(Tensor::identity(3)).unwrap();
        assert!(matches!(gcn.encode(&mut t, h0, adj), Err(Error::Shape { .. })));
        assert!(GcnEncoder::from_layers(vec![]).is_err());
    }

    #[test]
    fn gcn_identical_nodes_share_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let gcn = GcnEncoder::register(&mut store, "gcn", 3, 5, &mut rng).unwrap();
        let mut t = Tape::new(&store);
        let h0 = t.constant(Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![0.3, -0.2, 0.9]]).unwrap()).unwrap();
        let adj = t.constant(Tensor::filled(2, 2, 0.5)).unwrap();
        let h = gcn.propagate(&mut t, h0, adj).unwrap();
        let hv = t.value(h).clone();
        assert_eq!(hv.row(0), hv.row(1));
        let e = max_pool_nodes(&mut t, h).unwrap();
        assert_eq!(t.value(e).data(), hv.row(0));
    }

    #[test]
    fn max_pool_examples() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let h = t.constant(Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, 2.0]]).unwrap()).unwrap();
        let e = max_pool_nodes(&mut t, h).unwrap();
        assert_eq!(t.value(e).data(), &[3.0, 4.0]);
    }

    #[test]
    fn bilstm_zero_weights_give_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let zero = |s: &mut ParamStore<f64>, n: &str, r, c| s.add(n, Tensor::zeros(r, c)).unwrap();
        let fwd = LstmDirection {
            w_x: zero(&mut store, "fx", 3, 8),
            w_h: zero(&mut store, "fh", 2, 8),
            bias: zero(&mut store, "fb", 1, 8),
        };
        let bwd = LstmDirection {
            w_x: zero(&mut store, "bx", 3, 8),
            w_h: zero(&mut store, "bh", 2, 8),
            bias: zero(&mut store, "bb", 1, 8),
        };
        let enc = BiLstmEncoder { forward: fwd, backward: bwd, hidden: 2 };
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap()).unwrap();
        let y = enc.encode(&mut t, x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn bilstm_matches_unrolled_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let enc = BiLstmEncoder::register(&mut store, "lstm", 3, 4, &mut rng).unwrap();
        let xs = vec![vec![0.2, -0.4, 0.7], vec![-0.9, 0.1, 0.3]];
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::from_rows(&xs).unwrap()).unwrap();
        let out = enc.encode(&mut t, x).unwrap();
        let steps = enc.encode_steps(&mut t, x).unwrap();

        let p = |id| store.get(id);
        let fwd = lstm_oracle(&xs, p(enc.forward.w_x), p(enc.forward.w_h), p(enc.forward.bias));
        let rev: Vec<_> = xs.iter().rev().cloned().collect();
        let mut bwd = lstm_oracle(&rev, p(enc.backward.w_x), p(enc.backward.w_h), p(enc.backward.bias));
        bwd.reverse();

        let expected: Vec<f64> = fwd[1].iter().chain(&bwd[0]).copied().collect();
        for (a, b) in t.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let sv = t.value(steps);
        assert_eq!(sv.shape(), [2, 4]);
        for r in 0..2 {
            let row: Vec<f64> = fwd[r].iter().chain(&bwd[r]).copied().collect();
            for (a, b) in sv.row(r).iter().zip(&row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_rejects_empty_and_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        assert!(BiLstmEncoder::register(&mut store, "odd", 3, 5, &mut rng).is_err());
        let emb = store.add("emb", Tensor::zeros(4, 3)).unwrap();
        let enc = BiLstmEncoder::register(&mut store, "ok", 3, 6, &mut rng).unwrap();
        let mut t = Tape::new(&store);
        assert!(matches!(enc.encode_tokens(&mut t, emb, &[]), Err(Error::Usage(_))));
        let y = enc.encode_tokens(&mut t, emb, &[1, 2, 3]).unwrap();
        assert_eq!(t.shape(y), [1, 6]);
    }
}
