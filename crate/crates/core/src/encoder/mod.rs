//! Dual encoder: two independent mean-pooled token-embedding models scored by
//! inner product, trained contrastively with one strong negative plus in-batch
//! negatives per query.
//!
//! For query `i` of a batch of `n`, the candidate documents are its positive,
//! its strong negative and the `n − 1` positives of the other queries:
//!
//! ```text
//! loss_i = −ln( e^{s(q_i, d_i⁺)} / (e^{s(q_i, d_i⁺)} + e^{s(q_i, d_i⁻)} + Σ_{j≠i} e^{s(q_i, d_j⁺)}) )
//! ```
//!
//! and the batch loss is `Σ_i loss_i`.

mod checkpoint;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{finetune_retriever, pretrain, ContrastiveExample, PretrainConfig};

use crate::scalar::{dot, log_sum_exp, softmax, Scalar};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("contrastive batch needs n ≥ 1 queries with matching positives and negatives")]
    InvalidBatch,
    #[error("no training pairs")]
    EmptyStream,
    #[error("gradient touches the frozen document encoder")]
    FrozenSideTouched,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token vocabulary; row 0 is the reserved unknown-token row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK: &'static str = "[UNK]";
    pub const UNK_ROW: usize = 0;

    /// Sorted, deduplicated tokens of `texts` after the UNK row.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = std::collections::BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t.as_ref()));
        }
        set.remove(Self::UNK);
        Self::from_rows(std::iter::once(Self::UNK.to_string()).chain(set).collect())
    }

    fn from_rows(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Number of embedding rows, UNK included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn token(&self, row: usize) -> &str {
        &self.tokens[row]
    }

    pub fn row(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ROW)
    }

    pub fn rows(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.row(t)).collect()
    }
}

/// Mean of trainable token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder<T> {
    vocab: Arc<Vocab>,
    table: Vec<T>,
    dim: usize,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn from_table(vocab: Arc<Vocab>, dim: usize, table: Vec<T>) -> Result<Self, EncoderError> {
        if table.len() != vocab.len() * dim {
            return Err(EncoderError::DimMismatch { expected: vocab.len() * dim, got: table.len() });
        }
        Ok(Self { vocab, table, dim })
    }

    fn random<R: Rng>(vocab: Arc<Vocab>, dim: usize, rng: &mut R) -> Self {
        let bound = 0.5 / dim as f64;
        let table = (0..vocab.len() * dim).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
        Self { vocab, table, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Flat row-major `|vocab| × dim` parameter table.
    pub fn table(&self) -> &[T] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [T] {
        &mut self.table
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.table[row * self.dim..(row + 1) * self.dim]
    }

    /// Mean of the rows; zero vector for an empty row list.
    pub fn encode_rows(&self, rows: &[usize]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        if rows.is_empty() {
            return out;
        }
        for &r in rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let n = T::of(rows.len() as f64);
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn encode(&self, text: &str) -> Vec<T> {
        self.encode_rows(&self.vocab.rows(text))
    }

    /// Adds `scale · g / |rows|` to the gradient of every listed row, which is
    /// the chain rule through mean pooling.
    pub(crate) fn backprop_mean(rows: &[usize], g: &[T], scale: T, out: &mut SparseGrad<T>) {
        if rows.is_empty() {
            return;
        }
        let w = scale / T::of(rows.len() as f64);
        for &r in rows {
            out.add_row(r, w, g);
        }
    }

    fn apply(&mut self, grad: &SparseGrad<T>, lr: T) {
        for (&row, g) in &grad.rows {
            let dim = self.dim;
            for (p, &gv) in self.table[row * dim..(row + 1) * dim].iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
    }
}

/// Query and document encoders over a shared vocabulary with disjoint parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder<T> {
    query: TextEncoder<T>,
    doc: TextEncoder<T>,
}

impl<T: Scalar> DualEncoder<T> {
    /// Both tables uniform in `[−0.5/dim, 0.5/dim]`, query side drawn first.
    pub fn new_random(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let vocab = Arc::new(vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = TextEncoder::random(vocab.clone(), dim, &mut rng);
        let doc = TextEncoder::random(vocab, dim, &mut rng);
        Self { query, doc }
    }

    pub fn from_parts(query: TextEncoder<T>, doc: TextEncoder<T>) -> Result<Self, EncoderError> {
        if query.dim != doc.dim {
            return Err(EncoderError::DimMismatch { expected: query.dim, got: doc.dim });
        }
        if query.vocab != doc.vocab {
            return Err(EncoderError::DimMismatch { expected: query.vocab.len(), got: doc.vocab.len() });
        }
        Ok(Self { query, doc })
    }

    pub fn dim(&self) -> usize {
        self.query.dim
    }

    pub fn vocab(&self) -> &Vocab {
        &self.query.vocab
    }

    pub fn query_encoder(&self) -> &TextEncoder<T> {
        &self.query
    }

    pub fn doc_encoder(&self) -> &TextEncoder<T> {
        &self.doc
    }

    pub fn query_encoder_mut(&mut self) -> &mut TextEncoder<T> {
        &mut self.query
    }

    pub fn doc_encoder_mut(&mut self) -> &mut TextEncoder<T> {
        &mut self.doc
    }

    pub fn encode_query(&self, text: &str) -> Vec<T> {
        self.query.encode(text)
    }

    pub fn encode_doc(&self, text: &str) -> Vec<T> {
        self.doc.encode(text)
    }

    /// `QEnc(sq)ᵀ · DEnc(d)`
    pub fn similarity(&self, sq: &str, d: &str) -> T {
        dot(&self.encode_query(sq), &self.encode_doc(d))
    }

    /// `θ ← θ − lr · ∇` on both encoders.
    pub fn apply_gradient(&mut self, grad: &Gradient<T>, lr: T) {
        self.query.apply(&grad.query, lr);
        self.doc.apply(&grad.doc, lr);
    }
}

/// Equal-length lists of queries, positive documents and strong negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    queries: Vec<String>,
    positives: Vec<String>,
    strong_negatives: Vec<String>,
}

impl ContrastiveBatch {
    pub fn new(
        queries: Vec<String>,
        positives: Vec<String>,
        strong_negatives: Vec<String>,
    ) -> Result<Self, EncoderError> {
        let n = queries.len();
        if n == 0 || positives.len() != n || strong_negatives.len() != n {
            return Err(EncoderError::InvalidBatch);
        }
        Ok(Self { queries, positives, strong_negatives })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn rows(&self, vocab: &Vocab) -> RowBatch {
        let conv = |v: &[String]| v.iter().map(|t| vocab.rows(t)).collect();
        RowBatch {
            queries: conv(&self.queries),
            positives: conv(&self.positives),
            negatives: conv(&self.strong_negatives),
        }
    }
}

/// A contrastive batch already mapped to vocabulary rows.
#[derive(Debug, Clone)]
pub(crate) struct RowBatch {
    pub queries: Vec<Vec<usize>>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

/// Row-sparse gradient of one embedding table; absent rows are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad<T> {
    dim: usize,
    rows: BTreeMap<usize, Vec<T>>,
}

impl<T: Scalar> SparseGrad<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: BTreeMap::new() }
    }

    pub fn add_row(&mut self, row: usize, scale: T, g: &[T]) {
        let entry = self.rows.entry(row).or_insert_with(|| vec![T::zero(); self.dim]);
        for (e, &v) in entry.iter_mut().zip(g) {
            *e += scale * v;
        }
    }

    pub fn get(&self, row: usize) -> Option<&[T]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().all(|v| v.iter().all(|x| x.is_zero()))
    }

    pub fn norm(&self) -> T {
        self.rows.values().flatten().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        self.rows.values_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn merge(&mut self, other: &SparseGrad<T>) {
        for (&r, g) in &other.rows {
            self.add_row(r, T::one(), g);
        }
    }
}

/// Gradient with respect to both encoders' embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub query: SparseGrad<T>,
    pub doc: SparseGrad<T>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { query: SparseGrad::new(dim), doc: SparseGrad::new(dim) }
    }

    pub fn norm(&self) -> T {
        let (q, d) = (self.query.norm(), self.doc.norm());
        (q * q + d * d).sqrt()
    }
}

/// Per-query candidate logits: index 0 is the positive, 1 the strong
/// negative, then the other queries' positives in batch order.
fn logits<T: Scalar>(q: &[T], i: usize, pos: &[Vec<T>], neg: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(pos.len() + 1);
    out.push(dot(q, &pos[i]));
    out.push(dot(q, neg));
    out.extend(pos.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| dot(q, p)));
    out
}

pub(crate) fn loss_and_gradient_rows<T: Scalar>(
    model: &DualEncoder<T>,
    batch: &RowBatch,
    want_grad: bool,
) -> (T, Gradient<T>) {
    let dim = model.dim();
    let n = batch.queries.len();
    let qs: Vec<Vec<T>> = batch.queries.iter().map(|r| model.query.encode_rows(r)).collect();
    let ps: Vec<Vec<T>> = batch.positives.iter().map(|r| model.doc.encode_rows(r)).collect();
    let ns: Vec<Vec<T>> = batch.negatives.iter().map(|r| model.doc.encode_rows(r)).collect();

    let mut loss = T::zero();
    let mut grad = Gradient::zeros(dim);
    let mut g_pos = vec![vec![T::zero(); dim]; n];
    let mut g_neg = vec![vec![T::zero(); dim]; n];
    for i in 0..n {
        let z = logits(&qs[i], i, &ps, &ns[i]);
        loss += log_sum_exp(&z) - z[0];
        if !want_grad {
            continue;
        }
        let mut c = softmax(&z);
        c[0] -= T::one();
        // candidate vectors in the same order as `logits`
        let others = (0..n).filter(|&j| j != i);
        let mut g_q = vec![T::zero(); dim];
        let mut accumulate = |coef: T, v: &[T], g_v: &mut Vec<T>| {
            for k in 0..dim {
                g_q[k] += coef * v[k];
                g_v[k] += coef * qs[i][k];
            }
        };
        accumulate(c[0], &ps[i], &mut g_pos[i]);
        accumulate(c[1], &ns[i], &mut g_neg[i]);
        for (slot, j) in others.enumerate() {
            accumulate(c[slot + 2], &ps[j], &mut g_pos[j]);
        }
        TextEncoder::backprop_mean(&batch.queries[i], &g_q, T::one(), &mut grad.query);
    }
    if want_grad {
        for j in 0..n {
            TextEncoder::backprop_mean(&batch.positives[j], &g_pos[j], T::one(), &mut grad.doc);
            TextEncoder::backprop_mean(&batch.negatives[j], &g_neg[j], T::one(), &mut grad.doc);
        }
    }
    (loss, grad)
}

/// Summed contrastive loss over the batch.
pub fn batch_loss<T: Scalar>(model: &DualEncoder<T>, batch: &ContrastiveBatch) -> T {
    loss_and_gradient_rows(model, &batch.rows(model.vocab()), false).0
}

/// Exact gradient of [`batch_loss`]; rows not touched by the batch are absent.
pub fn batch_gradient<T: Scalar>(model: &DualEncoder<T>, batch: &ContrastiveBatch) -> Gradient<T> {
    loss_and_gradient_rows(model, &batch.rows(model.vocab()), true).1
}

pub fn batch_loss_and_gradient<T: Scalar>(model: &DualEncoder<T>, batch: &ContrastiveBatch) -> (T, Gradient<T>) {
    loss_and_gradient_rows(model, &batch.rows(model.vocab()), true)
}
