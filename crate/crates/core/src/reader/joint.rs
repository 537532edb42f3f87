//! Marginalized joint objective over the retrieved documents:
//!
//! ```text
//! L = −ln Σ_d π_d · p(gold | d)        π = softmax(s),  s_d = QEnc(q) · v_d
//! p(e | d) = softmax_e(w · f(e, d, q))  over the entities mentioned in d
//! ```
//!
//! With `P = Σ_d π_d p_d` and `p_d = p(gold | d)`:
//!
//! ```text
//! ∂L/∂w   = −(1/P) Σ_d π_d p_d (f_gold,d − Σ_e p(e|d) f_e,d)
//! ∂L/∂s_d = π_d (1 − p_d / P)
//! ```
//!
//! and the query-encoder gradient is `Σ_d ∂L/∂s_d · v_d` pushed back through
//! mean pooling. Document vectors are constants here.

use std::collections::BTreeSet;

use super::{doc_features, doc_posterior, ReaderError, ReaderInput, ReaderParams, Retriever, FEATURE_COUNT};
use crate::encoder::{Gradient, TextEncoder};
use crate::kg::TripleQuery;
use crate::scalar::{softmax, Scalar};
use crate::text::tokenize;

/// Objective of one query at fixed retrieval.
#[derive(Debug, Clone, PartialEq)]
pub enum JointOutcome<T> {
    Scored {
        loss: T,
        grad_weights: [T; FEATURE_COUNT],
        /// `∂L/∂s_d` per retrieved document.
        grad_scores: Vec<T>,
    },
    /// No retrieved document mentions any entity.
    NoCandidates,
    /// The gold entity has zero probability under every document.
    Unreachable,
}

/// Joint objective and its analytic gradients for a fixed reader input.
pub fn joint_loss<T: Scalar>(
    input: &ReaderInput<T>,
    kg: &crate::kg::KgDataset,
    params: &ReaderParams<T>,
    gold: &str,
) -> JointOutcome<T> {
    let posterior = doc_posterior(input);
    let query_tokens: BTreeSet<String> = tokenize(&input.search_query).into_iter().collect();
    let mut any = false;
    // per document: p(gold | d) and f_gold − E[f]
    let mut per_doc = Vec::with_capacity(input.documents.len());
    for doc in &input.documents {
        let feats = doc_features(doc, &input.head, &query_tokens, kg);
        if feats.is_empty() {
            per_doc.push((T::zero(), [T::zero(); FEATURE_COUNT]));
            continue;
        }
        any = true;
        let logits: Vec<T> =
            feats.values().map(|f| params.weights.iter().zip(f).map(|(&w, &x)| w * x).sum()).collect();
        let probs = softmax(&logits);
        let mut expected = [T::zero(); FEATURE_COUNT];
        for (p, f) in probs.iter().zip(feats.values()) {
            for (e, &x) in expected.iter_mut().zip(f) {
                *e += *p * x;
            }
        }
        match feats.keys().position(|e| e == gold) {
            Some(i) => {
                let f = &feats[gold];
                per_doc.push((probs[i], std::array::from_fn(|j| f[j] - expected[j])));
            }
            None => per_doc.push((T::zero(), [T::zero(); FEATURE_COUNT])),
        }
    }
    if !any {
        return JointOutcome::NoCandidates;
    }
    let total: T = posterior.iter().zip(&per_doc).map(|(&pi, (p, _))| pi * *p).sum();
    if total <= T::zero() {
        return JointOutcome::Unreachable;
    }
    let mut grad_weights = [T::zero(); FEATURE_COUNT];
    for (&pi, (p, delta)) in posterior.iter().zip(&per_doc) {
        for (g, &d) in grad_weights.iter_mut().zip(delta) {
            *g -= pi * *p * d / total;
        }
    }
    let grad_scores = posterior.iter().zip(&per_doc).map(|(&pi, (p, _))| pi * (T::one() - *p / total)).collect();
    JointOutcome::Scored { loss: -total.ln(), grad_weights, grad_scores }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointStep<T> {
    /// Reader weights after one gradient step.
    pub params: ReaderParams<T>,
    /// Mean query-encoder gradient over the counted queries; the document side is empty.
    pub query_gradient: Gradient<T>,
    /// Mean loss over the counted queries, 0 when none counted.
    pub loss: T,
    pub counted: usize,
    pub skipped_no_candidates: usize,
    pub skipped_unreachable: usize,
}

/// Batch-mean joint loss at the current retriever and reader weights, with
/// the skip counts of [`joint_finetune_step`].
pub fn batch_joint_loss<T: Scalar>(
    retriever: &Retriever<'_, T>,
    params: &ReaderParams<T>,
    batch: &[(TripleQuery, String)],
    k: usize,
) -> Result<(T, usize), ReaderError> {
    let mut sum = T::zero();
    let mut counted = 0;
    for (tq, gold) in batch {
        let input = retriever.retrieve(tq, k)?;
        if let JointOutcome::Scored { loss, .. } = joint_loss(&input, retriever.kg, params, gold) {
            sum += loss;
            counted += 1;
        }
    }
    Ok((if counted == 0 { T::zero() } else { sum / T::of(counted as f64) }, counted))
}

/// One deterministic step over `batch`: reader weights move by `reader_lr`
/// against the mean weight gradient; the query-encoder gradient is returned
/// for [`crate::encoder::finetune_retriever`].
pub fn joint_finetune_step<T: Scalar>(
    retriever: &Retriever<'_, T>,
    params: &ReaderParams<T>,
    batch: &[(TripleQuery, String)],
    k: usize,
    reader_lr: f64,
) -> Result<JointStep<T>, ReaderError> {
    let dim = retriever.model.dim();
    let vocab = retriever.model.vocab();
    let mut query_gradient = Gradient::zeros(dim);
    let mut grad_w = [T::zero(); FEATURE_COUNT];
    let mut loss_sum = T::zero();
    let (mut counted, mut skipped_no_candidates, mut skipped_unreachable) = (0, 0, 0);
    for (tq, gold) in batch {
        let input = retriever.retrieve(tq, k)?;
        let (loss, gw, gs) = match joint_loss(&input, retriever.kg, params, gold) {
            JointOutcome::Scored { loss, grad_weights, grad_scores } => (loss, grad_weights, grad_scores),
            JointOutcome::NoCandidates => {
                skipped_no_candidates += 1;
                continue;
            }
            JointOutcome::Unreachable => {
                skipped_unreachable += 1;
                continue;
            }
        };
        counted += 1;
        loss_sum += loss;
        for (a, b) in grad_w.iter_mut().zip(gw) {
            *a += b;
        }
        let mut g_q = vec![T::zero(); dim];
        for (doc, g) in input.documents.iter().zip(gs) {
            for (o, &v) in g_q.iter_mut().zip(retriever.store.row(doc.position)) {
                *o += g * v;
            }
        }
        TextEncoder::backprop_mean(&vocab.rows(&input.search_query), &g_q, T::one(), &mut query_gradient.query);
    }
    let mut params = *params;
    if counted > 0 {
        let n = T::of(counted as f64);
        query_gradient.query.scale(T::one() / n);
        let lr = T::of(reader_lr);
        for (w, g) in params.weights.iter_mut().zip(grad_w) {
            *w -= lr * g / n;
        }
        loss_sum /= n;
    }
    Ok(JointStep { params, query_gradient, loss: loss_sum, counted, skipped_no_candidates, skipped_unreachable })
}
