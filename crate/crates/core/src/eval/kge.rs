//! TuckER scoring `φ(h, r, t) = W ×₁ e_h ×₂ w_r ×₃ e_t`, trained with softmax
//! cross-entropy over all tails on train triples and their reciprocals.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! magic "KGKE" | version u32 | de u32 | dr u32
//! entity count u64, ids | relation count u64, ids      (u32 length + UTF-8)
//! entities f32 [|E| × de] | relations f32 [|R| × dr] | core f32 [de × dr × de]
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::binio::*;
use crate::kg::{KgDataset, KgError, Split, TripleQuery};
use crate::reader::RankedPrediction;
use crate::scalar::{desc_then_asc, softmax, Scalar};

pub const KGE_MAGIC: &[u8; 4] = b"KGKE";
pub const KGE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KgeConfig {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self { entity_dim: 32, relation_dim: 16, epochs: 100, lr: 0.01, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeRanker<T> {
    entity_ids: Vec<String>,
    relation_ids: Vec<String>,
    de: usize,
    dr: usize,
    entities: Vec<T>,
    relations: Vec<T>,
    /// `core[(i·dr + j)·de + k]`
    core: Vec<T>,
}

impl<T: Scalar> KgeRanker<T> {
    fn random(kg: &KgDataset, de: usize, dr: usize, rng: &mut ChaCha8Rng) -> Self {
        let entity_ids: Vec<String> = kg.entities().iter().map(|e| e.id.clone()).collect();
        let relation_ids: Vec<String> = kg.relations().iter().map(|r| r.id.clone()).collect();
        let mut uniform = |n: usize, bound: f64| -> Vec<T> { (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect() };
        let entities = uniform(entity_ids.len() * de, 1.0);
        let relations = uniform(relation_ids.len() * dr, 1.0);
        // unit score variance at init for unit-range embeddings
        let core = uniform(de * dr * de, 9.0 / (de as f64 * (dr as f64).sqrt()));
        Self { entity_ids, relation_ids, de, dr, entities, relations, core }
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn relation_ids(&self) -> &[String] {
        &self.relation_ids
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.de, self.dr)
    }

    /// `M[i][k] = Σ_j W[i][j][k] · w_r[j]`
    fn core_times_relation(&self, r: usize) -> Vec<T> {
        let (de, dr) = (self.de, self.dr);
        let rel = &self.relations[r * dr..(r + 1) * dr];
        let mut m = vec![T::zero(); de * de];
        for i in 0..de {
            for (j, &rj) in rel.iter().enumerate() {
                let w = &self.core[(i * dr + j) * de..(i * dr + j + 1) * de];
                for (mk, &wk) in m[i * de..(i + 1) * de].iter_mut().zip(w) {
                    *mk += wk * rj;
                }
            }
        }
        m
    }

    /// `x = W ×₁ e_h ×₂ w_r`, the vector every tail embedding is scored against.
    fn query_vector(&self, h: usize, r: usize) -> Vec<T> {
        let de = self.de;
        let m = self.core_times_relation(r);
        let head = &self.entities[h * de..(h + 1) * de];
        let mut x = vec![T::zero(); de];
        for (i, &hi) in head.iter().enumerate() {
            for (xk, &mk) in x.iter_mut().zip(&m[i * de..(i + 1) * de]) {
                *xk += hi * mk;
            }
        }
        x
    }

    fn tail_scores(&self, x: &[T]) -> Vec<T> {
        self.entities.chunks(self.de).map(|e| e.iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
    }

    fn resolve(&self, tq: &TripleQuery) -> Result<(usize, usize), KgError> {
        let h = self.entity_ids.binary_search(&tq.head).map_err(|_| KgError::UnresolvedId(tq.head.clone()))?;
        let r = self
            .relation_ids
            .iter()
            .position(|r| r == &tq.relation)
            .ok_or_else(|| KgError::UnresolvedId(tq.relation.clone()))?;
        Ok((h, r))
    }

    /// Scores of every entity as the tail, in entity-id order.
    pub fn score_tails(&self, tq: &TripleQuery) -> Result<Vec<T>, KgError> {
        let (h, r) = self.resolve(tq)?;
        Ok(self.tail_scores(&self.query_vector(h, r)))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(KGE_MAGIC)?;
        write_u32(&mut w, KGE_VERSION)?;
        write_u32(&mut w, self.de as u32)?;
        write_u32(&mut w, self.dr as u32)?;
        for ids in [&self.entity_ids, &self.relation_ids] {
            write_u64(&mut w, ids.len() as u64)?;
            for id in ids {
                write_str(&mut w, id)?;
            }
        }
        for table in [&self.entities, &self.relations, &self.core] {
            for &v in table.iter() {
                write_f32(&mut w, v.as_f32())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let r = &mut BufReader::new(fs::File::open(path)?);
        expect_magic(r, KGE_MAGIC)?;
        let version = read_u32(r)?;
        if version != KGE_VERSION {
            return Err(invalid(&format!("unsupported KGE model version {version}")).into());
        }
        let de = read_u32(r)? as usize;
        let dr = read_u32(r)? as usize;
        let ids = |r: &mut BufReader<fs::File>| -> std::io::Result<Vec<String>> {
            let n = read_u64(r)? as usize;
            (0..n).map(|_| read_str(r)).collect()
        };
        let entity_ids = ids(r)?;
        let relation_ids = ids(r)?;
        let table = |r: &mut BufReader<fs::File>, n: usize| -> std::io::Result<Vec<T>> {
            (0..n).map(|_| read_f32(r).map(|v| T::of(f64::from(v)))).collect()
        };
        let entities = table(r, entity_ids.len() * de)?;
        let relations = table(r, relation_ids.len() * dr)?;
        let core = table(r, de * dr * de)?;
        if r.read(&mut [0u8])? != 0 {
            return Err(invalid("trailing bytes after KGE model").into());
        }
        Ok(Self { entity_ids, relation_ids, de, dr, entities, relations, core })
    }
}

struct Grads<T> {
    entities: Vec<T>,
    relations: Vec<T>,
    core: Vec<T>,
}

impl<T: Scalar> Grads<T> {
    fn zeros(m: &KgeRanker<T>) -> Self {
        Self {
            entities: vec![T::zero(); m.entities.len()],
            relations: vec![T::zero(); m.relations.len()],
            core: vec![T::zero(); m.core.len()],
        }
    }
}

impl<T: Scalar> KgeRanker<T> {
    /// Adds `scale · ∇` of `−ln softmax(φ(h, r, ·))[gold]` to `g`; returns the loss.
    fn accumulate_gradient(&self, h: usize, r: usize, gold: usize, scale: T, g: &mut Grads<T>) -> T {
        let (de, dr) = (self.de, self.dr);
        let m = self.core_times_relation(r);
        let head = &self.entities[h * de..(h + 1) * de];
        let rel = &self.relations[r * dr..(r + 1) * dr];
        let mut x = vec![T::zero(); de];
        for (i, &hi) in head.iter().enumerate() {
            for (xk, &mk) in x.iter_mut().zip(&m[i * de..(i + 1) * de]) {
                *xk += hi * mk;
            }
        }
        let scores = self.tail_scores(&x);
        let loss = crate::scalar::log_sum_exp(&scores) - scores[gold];
        let mut delta = softmax(&scores);
        delta[gold] -= T::one();
        // ∂L/∂x, and ∂L/∂e_t through the tail side
        let mut g_x = vec![T::zero(); de];
        for (tail, &d) in delta.iter().enumerate() {
            let e = &self.entities[tail * de..(tail + 1) * de];
            for k in 0..de {
                g_x[k] += d * e[k];
                g.entities[tail * de + k] += scale * d * x[k];
            }
        }
        for i in 0..de {
            let gh: T = m[i * de..(i + 1) * de].iter().zip(&g_x).map(|(&a, &b)| a * b).sum();
            g.entities[h * de + i] += scale * gh;
            for j in 0..dr {
                let base = (i * dr + j) * de;
                let w = &self.core[base..base + de];
                let wg: T = w.iter().zip(&g_x).map(|(&a, &b)| a * b).sum();
                g.relations[r * dr + j] += scale * head[i] * wg;
                let hr = scale * head[i] * rel[j];
                for (gw, &gx) in g.core[base..base + de].iter_mut().zip(&g_x) {
                    *gw += hr * gx;
                }
            }
        }
        loss
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: T, t: i32) {
        let (b1, b2) = (T::of(Self::B1), T::of(Self::B2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + T::of(Self::EPS));
        }
    }
}

/// Mini-batch Adam on the batch-mean cross-entropy. Deterministic under `seed`.
pub fn train_kge<T: Scalar>(kg: &KgDataset, config: &KgeConfig) -> Result<KgeRanker<T>, EvalError> {
    if kg.split(Split::Train).is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (de, dr) = (config.entity_dim, config.relation_dim);
    let mut model = KgeRanker::<T>::random(kg, de, dr, &mut rng);
    let mut examples: Vec<(usize, usize, usize)> = kg
        .queries(Split::Train)
        .iter()
        .map(|q| {
            let (h, r) = model.resolve(q).expect("dataset ids resolve");
            let t = kg.entity_position(q.answer.as_deref().expect("train query answer")).expect("known entity");
            (h, r, t)
        })
        .collect();

    let mut adam = [Adam::new(model.entities.len()), Adam::new(model.relations.len()), Adam::new(model.core.len())];
    let lr = T::of(config.lr);
    let mut t = 0;
    for _ in 0..config.epochs {
        examples.shuffle(&mut rng);
        for batch in examples.chunks(config.batch_size.max(1)) {
            let mut g = Grads::zeros(&model);
            let scale = T::one() / T::of(batch.len() as f64);
            for &(h, r, gold) in batch {
                model.accumulate_gradient(h, r, gold, scale, &mut g);
            }
            t += 1;
            adam[0].step(&mut model.entities, &g.entities, lr, t);
            adam[1].step(&mut model.relations, &g.relations, lr, t);
            adam[2].step(&mut model.core, &g.core, lr, t);
        }
    }
    Ok(model)
}

/// Every entity ranked as the tail of `tq`, descending score, ties by id.
pub fn rank_kge<T: Scalar>(ranker: &KgeRanker<T>, tq: &TripleQuery) -> Result<RankedPrediction<T>, EvalError> {
    let scores = ranker.score_tails(tq).map_err(|e| invalid(&e.to_string()))?;
    let mut ranking: Vec<(String, T)> = ranker.entity_ids.iter().cloned().zip(scores).collect();
    ranking.sort_by(|a, b| desc_then_asc((a.1, &a.0), (b.1, &b.0)));
    Ok(RankedPrediction { query: tq.clone(), ranking })
}

pub fn rank_kge_all<T: Scalar>(ranker: &KgeRanker<T>, queries: &[TripleQuery]) -> Result<Vec<RankedPrediction<T>>, EvalError> {
    queries.par_iter().map(|q| rank_kge(ranker, q)).collect()
}
