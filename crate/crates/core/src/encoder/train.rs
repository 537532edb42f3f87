use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradient_rows, DualEncoder, EncoderError, Gradient, RowBatch};
use crate::scalar::Scalar;

/// Texts of one training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveExample {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { batch_size: 16, lr: 0.1, epochs: 3, seed: 0 }
    }
}

/// Mini-batch SGD over both encoders; returns the mean per-query loss of each epoch.
///
/// The example order is reshuffled every epoch from a stream seeded once with
/// `config.seed`. A trailing partial batch is trained with its actual size.
pub fn pretrain<T: Scalar>(
    model: &mut DualEncoder<T>,
    examples: &[ContrastiveExample],
    config: &PretrainConfig,
) -> Result<Vec<T>, EncoderError> {
    if examples.is_empty() {
        return Err(EncoderError::EmptyStream);
    }
    if config.batch_size == 0 {
        return Err(EncoderError::InvalidBatch);
    }
    let vocab = model.vocab();
    let rows: Vec<[Vec<usize>; 3]> = examples
        .iter()
        .map(|e| [vocab.rows(&e.query), vocab.rows(&e.positive), vocab.rows(&e.negative)])
        .collect();

    let lr = T::of(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for chunk in order.chunks(config.batch_size) {
            let batch = RowBatch {
                queries: chunk.iter().map(|&i| rows[i][0].clone()).collect(),
                positives: chunk.iter().map(|&i| rows[i][1].clone()).collect(),
                negatives: chunk.iter().map(|&i| rows[i][2].clone()).collect(),
            };
            let (loss, grad) = loss_and_gradient_rows(model, &batch, true);
            total += loss;
            model.apply_gradient(&grad, lr);
        }
        curve.push(total / T::of(examples.len() as f64));
    }
    Ok(curve)
}

/// Applies a gradient to the query encoder only. The document encoder, and
/// therefore every exported document embedding, stays bit-identical.
pub fn finetune_retriever<T: Scalar>(
    model: &mut DualEncoder<T>,
    feedback: &Gradient<T>,
    lr: f64,
) -> Result<(), EncoderError> {
    if !feedback.doc.is_zero() {
        return Err(EncoderError::FrozenSideTouched);
    }
    model.query.apply(&feedback.query, T::of(lr));
    Ok(())
}
