use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{FactEncoderKind, TrainConfig};
use crate::data::{tokenize, CaseRecord, KnowledgeTree};
use crate::diffcore::{NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::encoders::{adjacency_tensor, max_pool_nodes, BiLstmEncoder, GcnEncoder};
use crate::error::{Error, Result};
use crate::init::uniform;
use crate::lktransformer::{EncodedKnowledge, KnowledgeEncoder, KnowledgeEncoderConfig};
use crate::matcher::{Classifier, MatchingNetwork};
use crate::textgraph::{collect_cooccurrence, document_adjacency, normalize_adjacency, AdjacencyMatrix, PmiEdges, Vocabulary};

#[derive(Clone, Debug)]
pub enum FactEncoder {
    Gcn(GcnEncoder),
    BiLstm(BiLstmEncoder),
}

#[derive(Clone, Debug)]
pub struct KnowledgeBranch {
    pub encoder: KnowledgeEncoder,
    pub matcher: MatchingNetwork,
}

/// Parameter handles for every component. Registration order, names and
/// shapes depend only on the config, vocabulary size and charge count.
#[derive(Clone, Debug)]
pub struct Layout {
    pub embedding: ParamId,
    pub fact: FactEncoder,
    pub knowledge: Option<KnowledgeBranch>,
    pub classifier: Classifier,
    dropout: f64,
}

impl Layout {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        cfg: &TrainConfig,
        vocab_size: usize,
        charges: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = store.add("embedding", uniform(&mut rng, vocab_size, s, cfg.embedding_scale))?;
        let fact = match cfg.fact_encoder {
            FactEncoderKind::Gcn => FactEncoder::Gcn(GcnEncoder::register(store, "fact.gcn", s, s, &mut rng)?),
            FactEncoderKind::Bilstm => FactEncoder::BiLstm(BiLstmEncoder::register(store, "fact.bilstm", s, s, &mut rng)?),
        };
        let knowledge = if cfg.use_knowledge {
            let encoder = KnowledgeEncoder::register(
                store,
                "knowledge",
                KnowledgeEncoderConfig {
                    d_model: s,
                    group_dim: s,
                    heads: cfg.heads,
                    blocks_per_level: cfg.blocks_per_level,
                    share_schema_encoders: cfg.share_schema_encoders,
                },
                &mut rng,
            )?;
            let matcher = MatchingNetwork::register(store, "match", s, encoder.output_dim(), &mut rng)?;
            Some(KnowledgeBranch { encoder, matcher })
        } else {
            None
        };
        let width = knowledge.as_ref().map_or(s, |k| k.matcher.output_dim());
        let classifier = Classifier::register(store, "output", width, charges, &mut rng)?;
        Ok(Layout {
            embedding,
            fact,
            knowledge,
            classifier,
            dropout: cfg.dropout,
        })
    }

    /// `c` for every charge, or `None` without the knowledge branch.
    pub fn knowledge_rows<F: Scalar>(&self, tape: &mut Tape<'_, F>, knowledge: &EncodedKnowledge) -> Result<Option<NodeId>> {
        match &self.knowledge {
            Some(k) => Ok(Some(k.encoder.build_charge_representations(tape, self.embedding, knowledge)?)),
            None => Ok(None),
        }
    }

    /// Fact vector `e` (`1 × s`).
    pub fn encode_fact<F: Scalar>(&self, tape: &mut Tape<'_, F>, fact: &PreparedFact) -> Result<NodeId> {
        let table = tape.param(self.embedding);
        let h0 = tape.embedding_lookup(table, &fact.ids)?;
        match &self.fact {
            FactEncoder::Gcn(gcn) => {
                let adj = tape.constant(adjacency_tensor(&fact.adjacency))?;
                gcn.encode(tape, h0, adj)
            }
            FactEncoder::BiLstm(lstm) => {
                let steps = lstm.encode_steps(tape, h0)?;
                max_pool_nodes(tape, steps)
            }
        }
    }

    /// Logits for one fact; `c` must be given exactly when the knowledge
    /// branch exists.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, fact: &PreparedFact, c: Option<NodeId>) -> Result<Forward> {
        let e = self.encode_fact(tape, fact)?;
        let e = tape.dropout(e, self.dropout)?;
        let (g, beta) = match (&self.knowledge, c) {
            (Some(k), Some(c)) => {
                let m = k.matcher.forward(tape, e, c)?;
                (tape.dropout(m.g, self.dropout)?, Some(m.beta))
            }
            (None, None) => (e, None),
            _ => return Err(Error::Usage("knowledge rows do not match the model's knowledge branch".into())),
        };
        let logits = self.classifier.logits(tape, g)?;
        Ok(Forward { logits, beta })
    }

    /// Mean cross-entropy over `batch`, with the knowledge rows computed on
    /// the same tape.
    pub fn batch_loss<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        knowledge: &EncodedKnowledge,
        batch: &[(PreparedFact, usize)],
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let c = self.knowledge_rows(tape, knowledge)?;
        let mut losses = Vec::with_capacity(batch.len());
        for (fact, gold) in batch {
            let out = self.forward(tape, fact, c)?;
            losses.push(tape.cross_entropy(out.logits, &[*gold])?);
        }
        let stacked = tape.concat_rows(&losses)?;
        let total = tape.sum(stacked)?;
        tape.scale(total, F::from_f64(1.0 / batch.len() as f64))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub logits: NodeId,
    pub beta: Option<NodeId>,
}

/// A tokenized fact with its normalized position graph.
#[derive(Clone, Debug)]
pub struct PreparedFact {
    pub ids: Vec<usize>,
    pub adjacency: AdjacencyMatrix,
}

/// Ranked output of [`Model::predict`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    /// Charge probabilities in class order.
    pub probabilities: Vec<f64>,
    /// `(charge, probability)` by descending probability.
    pub ranked: Vec<(String, f64)>,
    /// `(charge, β)` in class order, when the knowledge branch is active.
    pub attention: Option<Vec<(String, f64)>>,
}

impl Prediction {
    pub fn top(&self) -> &str {
        &self.ranked[0].0
    }
}

/// Parameters plus everything needed to turn raw text into predictions.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub edges: PmiEdges,
    pub knowledge: KnowledgeTree,
    pub encoded: EncodedKnowledge,
    pub layout: Layout,
    pub store: ParamStore<F>,
}

impl Model<f32> {
    /// Builds vocabulary and PMI edges from `train` (plus the knowledge
    /// text when configured) and initializes parameters from the seed.
    pub fn build(config: &TrainConfig, train: &[CaseRecord], knowledge: &KnowledgeTree) -> Result<Self> {
        config.validate()?;
        knowledge.validate()?;
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let mut docs: Vec<Vec<String>> = train
            .iter()
            .map(|r| {
                let mut t = tokenize(&r.fact);
                t.truncate(config.max_fact_len);
                t
            })
            .collect();
        if config.vocab_includes_knowledge {
            docs.extend(knowledge.texts().into_iter().map(tokenize));
        }
        let vocab = Vocabulary::build(&docs, config.min_freq);
        let corpus: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
        let stats = collect_cooccurrence(&corpus, config.window_size)?;
        let edges = PmiEdges::from_stats(&stats);
        let mut model = Self::assemble(config.clone(), vocab, edges, knowledge.clone(), config.seed)?;
        if let Some(path) = &config.embeddings_file {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            model.load_word_vectors(std::io::BufReader::new(file))?;
        }
        Ok(model)
    }

    /// Overwrites embedding rows from a word-vector text stream and returns
    /// how many vocabulary entries were set. A leading `count dim` header
    /// line is skipped; tokens outside the vocabulary are ignored.
    pub fn load_word_vectors<R: std::io::BufRead>(&mut self, reader: R) -> Result<usize> {
        let s = self.config.hidden_size;
        let table = self.layout.embedding;
        let mut set = 0;
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Validation(format!("word vectors line {}: {e}", n + 1)))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() || (n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok())) {
                continue;
            }
            if fields.len() != s + 1 {
                return Err(Error::Validation(format!(
                    "word vectors line {}: expected {s} values, found {}",
                    n + 1,
                    fields.len() - 1
                )));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Validation(format!("word vectors line {}: bad number", n + 1)))?;
            let Some(id) = self.vocab.lookup(&fields[0].to_lowercase()) else { continue };
            let tensor = self.store.get_mut(table);
            for (c, v) in values.into_iter().enumerate() {
                tensor.set(id, c, v as f32);
            }
            set += 1;
        }
        Ok(set)
    }
}

impl<F: Scalar> Model<F> {
    /// Registers fresh parameters for the given vocabulary and knowledge.
    pub fn assemble(config: TrainConfig, vocab: Vocabulary, edges: PmiEdges, knowledge: KnowledgeTree, seed: u64) -> Result<Self> {
        knowledge.validate()?;
        let encoded = EncodedKnowledge::from_tree(&knowledge, &vocab, config.max_fact_len)?;
        let mut store = ParamStore::new();
        let layout = Layout::register(&mut store, &config, vocab.len(), encoded.len(), seed)?;
        Ok(Model {
            config,
            vocab,
            edges,
            knowledge,
            encoded,
            layout,
            store,
        })
    }

    pub fn num_charges(&self) -> usize {
        self.encoded.len()
    }

    pub fn charge_names(&self) -> Vec<String> {
        self.knowledge.charge_names()
    }

    /// Same model with parameters converted to another element type.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            edges: self.edges.clone(),
            knowledge: self.knowledge.clone(),
            encoded: self.encoded.clone(),
            layout: self.layout.clone(),
            store: self.store.cast(),
        }
    }

    pub fn prepare(&self, fact: &str) -> Result<PreparedFact> {
        let mut tokens = tokenize(fact);
        if tokens.is_empty() {
            return Err(Error::Usage("fact text is empty".into()));
        }
        tokens.truncate(self.config.max_fact_len);
        let ids = self.vocab.encode(&tokens);
        let adjacency = normalize_adjacency(&document_adjacency(&ids, &self.edges)?)?;
        Ok(PreparedFact { ids, adjacency })
    }

    /// Prepared facts paired with class ids; unknown charges are a
    /// validation error.
    pub fn prepare_records(&self, records: &[CaseRecord]) -> Result<Vec<(PreparedFact, usize)>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let gold = self.knowledge.charge_index(&r.charge).ok_or_else(|| {
                    Error::Validation(format!("record {}: charge {:?} is not in the knowledge tree", i + 1, r.charge))
                })?;
                let fact = self.prepare(&r.fact).map_err(|e| match e {
                    Error::Usage(msg) => Error::Validation(format!("record {}: {msg}", i + 1)),
                    other => other,
                })?;
                Ok((fact, gold))
            })
            .collect()
    }

    /// Knowledge rows evaluated once without dropout.
    pub fn knowledge_tensor(&self) -> Result<Option<Tensor<F>>> {
        let mut tape = Tape::inference(&self.store);
        let c = self.layout.knowledge_rows(&mut tape, &self.encoded)?;
        Ok(c.map(|c| tape.value(c).detached()))
    }

    /// Inference-mode logits and β for one prepared fact.
    pub fn infer(&self, fact: &PreparedFact, knowledge: Option<&Tensor<F>>) -> Result<(Vec<F>, Option<Vec<F>>)> {
        let mut tape = Tape::inference(&self.store);
        let c = knowledge.map(|t| tape.constant(t.clone())).transpose()?;
        let out = self.layout.forward(&mut tape, fact, c)?;
        let logits = tape.value(out.logits).data().to_vec();
        let beta = out.beta.map(|b| tape.value(b).data().to_vec());
        Ok((logits, beta))
    }

    pub fn predict(&self, fact: &str) -> Result<Prediction> {
        let knowledge = self.knowledge_tensor()?;
        self.predict_with(fact, knowledge.as_ref())
    }

    /// [`Self::predict`] with precomputed knowledge rows.
    pub fn predict_with(&self, fact: &str, knowledge: Option<&Tensor<F>>) -> Result<Prediction> {
        let prepared = self.prepare(fact)?;
        let (logits, beta) = self.infer(&prepared, knowledge)?;
        let probabilities = softmax(&logits);
        let names = self.charge_names();
        let mut ranked: Vec<(String, f64)> = names.iter().cloned().zip(probabilities.iter().copied()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let attention = beta.map(|b| names.into_iter().zip(b.iter().map(|&x| Scalar::to_f64(x))).collect());
        Ok(Prediction {
            probabilities,
            ranked,
            attention,
        })
    }
}

fn softmax<F: Scalar>(logits: &[F]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|&x| Scalar::to_f64(x)).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|x| x / total).collect()
}

/// Index of the largest logit; ties go to the lower class id.
pub fn argmax<F: Scalar>(logits: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}
