//! Word co-occurrence statistics, PMI edges and per-document graphs.
//!
//! Counting is presence-based over fixed-size sliding windows: a window
//! increments `W(w)` once for every distinct word it contains and
//! `W(w_i, w_j)` once for every distinct unordered pair. A document shorter
//! than the window is a single window.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Dense, 0-based token ids. Ids 0 and 1 are reserved for padding and
/// unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Vocabulary of every token occurring at least `min_freq` times, in
    /// first-occurrence order.
    pub fn build<'a, I, D>(docs: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut order = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc {
                let c = counts.entry(tok.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(tok.as_str());
                }
                *c += 1;
            }
        }
        let mut v = Self::new();
        for tok in order {
            if counts[tok] >= min_freq {
                v.insert(tok);
            }
        }
        v
    }

    /// Adds `token` if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`] if it is not known.
    pub fn id(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Validation("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[inline]
fn pair_key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Sliding-window counts `|W|`, `W(w)` and `W(w_i, w_j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CooccurrenceStats {
    window_size: usize,
    total_windows: u64,
    word_windows: HashMap<usize, u64>,
    pair_windows: HashMap<(usize, usize), u64>,
}

impl CooccurrenceStats {
    pub fn empty(window_size: usize) -> Result<Self> {
        if window_size < 2 {
            return Err(Error::Config(format!("window size must be at least 2, got {window_size}")));
        }
        Ok(CooccurrenceStats {
            window_size,
            total_windows: 0,
            word_windows: HashMap::new(),
            pair_windows: HashMap::new(),
        })
    }

    /// Counts one document. Empty documents contribute nothing.
    pub fn add_document(&mut self, doc: &[usize]) {
        if doc.is_empty() {
            return;
        }
        let w = self.window_size;
        let windows = if doc.len() <= w { 1 } else { doc.len() - w + 1 };
        let mut distinct = Vec::with_capacity(w);
        for start in 0..windows {
            let end = (start + w).min(doc.len());
            distinct.clear();
            distinct.extend_from_slice(&doc[start..end]);
            distinct.sort_unstable();
            distinct.dedup();
            self.total_windows += 1;
            for (a, &i) in distinct.iter().enumerate() {
                *self.word_windows.entry(i).or_insert(0) += 1;
                for &j in &distinct[a + 1..] {
                    *self.pair_windows.entry((i, j)).or_insert(0) += 1;
                }
            }
        }
    }

    /// Adds another shard's counts. Merging is order-independent.
    pub fn merge(&mut self, other: &CooccurrenceStats) -> Result<()> {
        if other.window_size != self.window_size {
            return Err(Error::Usage(format!(
                "cannot merge window sizes {} and {}",
                self.window_size, other.window_size
            )));
        }
        self.total_windows += other.total_windows;
        for (&k, &v) in &other.word_windows {
            *self.word_windows.entry(k).or_insert(0) += v;
        }
        for (&k, &v) in &other.pair_windows {
            *self.pair_windows.entry(k).or_insert(0) += v;
        }
        Ok(())
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// `|W|`
    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    /// `W(w_i)`
    pub fn word_count(&self, i: usize) -> u64 {
        self.word_windows.get(&i).copied().unwrap_or(0)
    }

    /// `W(w_i, w_j)`; symmetric, and 0 on the diagonal.
    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return 0;
        }
        self.pair_windows.get(&pair_key(i, j)).copied().unwrap_or(0)
    }

    /// Distinct word ids seen.
    pub fn words(&self) -> impl Iterator<Item = usize> + '_ {
        self.word_windows.keys().copied()
    }

    /// Unordered pairs `(i < j)` with nonzero co-occurrence.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.pair_windows.iter().map(|(&k, &v)| (k, v))
    }
}

/// Counts windows over a corpus of token-id documents.
pub fn collect_cooccurrence(corpus: &[Vec<usize>], window_size: usize) -> Result<CooccurrenceStats> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::Usage("cannot collect co-occurrence from an empty corpus".into()));
    }
    let mut stats = CooccurrenceStats::empty(window_size)?;
    for doc in corpus {
        stats.add_document(doc);
    }
    Ok(stats)
}

/// Positive PMI of two distinct words; 0 when PMI ≤ 0 or they never
/// co-occur.
pub fn pmi_edge_weight(stats: &CooccurrenceStats, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::Usage(format!("PMI edge requested for self-pair ({i}, {i})")));
    }
    let pair = stats.pair_count(i, j);
    if pair == 0 {
        return Ok(0.0);
    }
    let total = stats.total_windows() as f64;
    let p_ij = pair as f64 / total;
    let p_i = stats.word_count(i) as f64 / total;
    let p_j = stats.word_count(j) as f64 / total;
    let pmi = (p_ij / (p_i * p_j)).ln();
    Ok(if pmi > 0.0 { pmi } else { 0.0 })
}

/// The global word-relation set: every pair with positive PMI.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(usize, usize, f64)>", into = "Vec<(usize, usize, f64)>")]
pub struct PmiEdges {
    weights: HashMap<(usize, usize), f64>,
}

impl PmiEdges {
    pub fn from_stats(stats: &CooccurrenceStats) -> Self {
        let weights = stats
            .pairs()
            .filter_map(|((i, j), _)| {
                let w = pmi_edge_weight(stats, i, j).expect("pairs are off-diagonal");
                (w > 0.0).then_some(((i, j), w))
            })
            .collect();
        PmiEdges { weights }
    }

    /// Edge weight between two word types; 0 for absent pairs, self-pairs
    /// and the reserved ids.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j || i <= UNK || j <= UNK {
            return 0.0;
        }
        self.weights.get(&pair_key(i, j)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Edges `(i < j, weight)` in ascending id order.
    pub fn sorted(&self) -> Vec<(usize, usize, f64)> {
        let mut v: Vec<_> = self.weights.iter().map(|(&(i, j), &w)| (i, j, w)).collect();
        v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        v
    }

    /// Writes `token_i<TAB>token_j<TAB>weight` lines.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> std::io::Result<()> {
        for (i, j, w) in self.sorted() {
            let ti = vocab.token(i).unwrap_or(UNK_TOKEN);
            let tj = vocab.token(j).unwrap_or(UNK_TOKEN);
            writeln!(out, "{ti}\t{tj}\t{w}")?;
        }
        Ok(())
    }
}

impl From<Vec<(usize, usize, f64)>> for PmiEdges {
    fn from(v: Vec<(usize, usize, f64)>) -> Self {
        PmiEdges {
            weights: v.into_iter().map(|(i, j, w)| (pair_key(i, j), w)).collect(),
        }
    }
}

impl From<PmiEdges> for Vec<(usize, usize, f64)> {
    fn from(e: PmiEdges) -> Self {
        e.sorted()
    }
}

/// Symmetric nonnegative sparse matrix over a document's token positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    /// Row-wise `(column, weight)` lists, ascending by column.
    rows: Vec<Vec<(usize, f64)>>,
    normalized: bool,
}

impl AdjacencyMatrix {
    /// Raw matrix from a dense row-major buffer. Rejects asymmetric or
    /// negative input.
    pub fn from_dense(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n || n == 0 {
            return Err(Error::shape("adjacency", format!("{} values for n = {n}", values.len())));
        }
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let a = values[i * n + j];
                if a < 0.0 || a != values[j * n + i] {
                    return Err(Error::Validation(format!(
                        "adjacency must be symmetric and nonnegative (entry {i},{j})"
                    )));
                }
                if a != 0.0 {
                    rows[i].push((j, a));
                }
            }
        }
        Ok(AdjacencyMatrix {
            n,
            rows,
            normalized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    /// Number of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[i * self.n + j] = w;
            }
        }
        out
    }
}

/// Raw adjacency for one document: a node per token position, weighted by
/// the PMI edge between the underlying word types. Positions holding the
/// same word, and unknown tokens, get no edge.
pub fn document_adjacency(doc: &[usize], edges: &PmiEdges) -> Result<AdjacencyMatrix> {
    if doc.is_empty() {
        return Err(Error::Usage("cannot build a graph for an empty document".into()));
    }
    let n = doc.len();
    let mut rows = vec![Vec::new(); n];
    for p in 0..n {
        for q in 0..n {
            let w = edges.weight(doc[p], doc[q]);
            if w > 0.0 {
                rows[p].push((q, w));
            }
        }
    }
    Ok(AdjacencyMatrix {
        n,
        rows,
        normalized: false,
    })
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = Σ_j (A + I)_ij`.
pub fn normalize_adjacency(a: &AdjacencyMatrix) -> Result<AdjacencyMatrix> {
    if a.normalized {
        return Err(Error::Usage("adjacency is already normalized".into()));
    }
    let inv_sqrt_deg: Vec<f64> = a
        .rows
        .iter()
        .map(|row| 1.0 / (1.0 + row.iter().map(|&(_, w)| w).sum::<f64>()).sqrt())
        .collect();
    let rows = a
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut out: Vec<(usize, f64)> = row
                .iter()
                .map(|&(j, w)| (j, w * inv_sqrt_deg[i] * inv_sqrt_deg[j]))
                .collect();
            let pos = out.partition_point(|&(c, _)| c < i);
            out.insert(pos, (i, inv_sqrt_deg[i] * inv_sqrt_deg[i]));
            out
        })
        .collect();
    Ok(AdjacencyMatrix {
        n: a.n,
        rows,
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 2;
    const B: usize = 3;
    const C: usize = 4;
    const D: usize = 5;

    #[test]
    fn three_token_document_window_two() {
        let s = collect_cooccurrence(&[vec![A, B, C]], 2).unwrap();
        assert_eq!(s.total_windows(), 2);
        assert_eq!(s.word_count(B), 2);
        assert_eq!(s.pair_count(A, B), 1);
        assert_eq!(s.pair_count(A, C), 0);
    }

    #[test]
    fn short_document_is_one_window() {
        let s = collect_cooccurrence(&[vec![A]], 20).unwrap();
        assert_eq!(s.total_windows(), 1);
        assert_eq!(s.word_count(A), 1);
    }

    #[test]
    fn repeated_pairs_across_documents() {
        let s = collect_cooccurrence(&[vec![A, B], vec![A, B], vec![C, D]], 2).unwrap();
        assert_eq!(s.total_windows(), 3);
        assert_eq!(s.pair_count(A, B), 2);
        assert_eq!(s.pair_count(B, A), 2);
        assert_eq!(s.pair_count(C, D), 1);
    }

    #[test]
    fn empty_corpus_and_bad_window_rejected() {
        assert!(matches!(collect_cooccurrence(&[], 2), Err(Error::Usage(_))));
        assert!(matches!(collect_cooccurrence(&[vec![A]], 1), Err(Error::Config(_))));
    }

    #[test]
    fn pmi_weights() {
        let s = collect_cooccurrence(&[vec![A, B], vec![A, B], vec![C, D]], 2).unwrap();
        // p(a,b) = 2/3, p(a) = p(b) = 2/3
        let expected = ((2.0 / 3.0) / ((2.0 / 3.0) * (2.0 / 3.0)) as f64).ln();
        assert!((pmi_edge_weight(&s, A, B).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!((expected - 1.5f64.ln()).abs() < 1e-15);
        assert_eq!(pmi_edge_weight(&s, A, C).unwrap(), 0.0);
        assert!(matches!(pmi_edge_weight(&s, A, A), Err(Error::Usage(_))));

        let s = collect_cooccurrence(&[vec![A, B, A, B]], 2).unwrap();
        assert_eq!(pmi_edge_weight(&s, A, B).unwrap(), 0.0);
        assert!(PmiEdges::from_stats(&s).is_empty());
    }

    #[test]
    fn document_graph_uses_type_level_weights() {
        let s = collect_cooccurrence(&[vec![A, B], vec![A, B], vec![C, D]], 2).unwrap();
        let e = PmiEdges::from_stats(&s);
        let single = document_adjacency(&[A], &e).unwrap();
        assert_eq!(single.to_dense(), vec![0.0]);

        let w = 1.5f64.ln();
        let m = document_adjacency(&[A, B, A], &e).unwrap();
        assert_eq!(m.get(0, 1), w);
        assert_eq!(m.get(2, 1), w);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(1, 1), 0.0);

        let m = document_adjacency(&[A, UNK, B], &e).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(0, 2), w);
        assert!(document_adjacency(&[], &e).is_err());
    }

    #[test]
    fn normalization_small_cases() {
        let a = AdjacencyMatrix::from_dense(1, &[0.0]).unwrap();
        assert_eq!(normalize_adjacency(&a).unwrap().to_dense(), vec![1.0]);

        let a = AdjacencyMatrix::from_dense(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let n = normalize_adjacency(&a).unwrap();
        for v in n.to_dense() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!(normalize_adjacency(&n).is_err());
    }

    #[test]
    fn vocabulary_reserves_ids_and_round_trips() {
        let docs = vec![vec!["x".to_string(), "y".into(), "x".into()]];
        let v = Vocabulary::build(docs.iter(), 1);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("x"), 2);
        assert_eq!(v.id("y"), 3);
        assert_eq!(v.id("zzz"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn tsv_dump() {
        let mut v = Vocabulary::new();
        let a = v.insert("a");
        let b = v.insert("b");
        let c = v.insert("c");
        let d = v.insert("d");
        let s = collect_cooccurrence(&[vec![a, b], vec![a, b], vec![c, d]], 2).unwrap();
        let mut buf = Vec::new();
        PmiEdges::from_stats(&s).write_tsv(&v, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a\tb\t0.405"), "{text}");
        assert_eq!(text.lines().count(), 2);
    }
}
