use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DenseError, EmbeddingStore};
use crate::corpus::DocId;
use crate::scalar::{desc_then_asc, dot, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub clusters: usize,
    pub nprobe: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { clusters: 32, nprobe: 8, iterations: 10, seed: 0 }
    }
}

/// Inverted-file index: k-means partitions of the store; queries scan the
/// `nprobe` partitions whose centroids have the highest inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredIndex<T> {
    dim: usize,
    centroids: Vec<T>,
    assignments: Vec<usize>,
    lists: Vec<Vec<usize>>,
    nprobe: usize,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(v: &[T], centroids: &[T], dim: usize) -> usize {
    let mut best = (0, T::infinity());
    for (c, cent) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(v, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

impl<T: Scalar> ClusteredIndex<T> {
    /// Lloyd's k-means from `clusters` distinct seeded rows; empty clusters keep
    /// their previous centroid.
    pub fn build(store: &EmbeddingStore<T>, config: &ClusterConfig) -> Result<Self, DenseError> {
        let c = config.clusters;
        if c == 0 || c > store.count() {
            return Err(DenseError::InvalidClusters(format!("{c} clusters for {} rows", store.count())));
        }
        if config.nprobe == 0 || config.nprobe > c {
            return Err(DenseError::InvalidClusters(format!("nprobe {} with {c} clusters", config.nprobe)));
        }
        let dim = store.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut centroids: Vec<T> = sample(&mut rng, store.count(), c).iter().flat_map(|r| store.row(r).to_vec()).collect();
        let mut assignments = vec![0; store.count()];
        for _ in 0..config.iterations {
            for (r, a) in assignments.iter_mut().enumerate() {
                *a = nearest(store.row(r), &centroids, dim);
            }
            let mut sums = vec![T::zero(); c * dim];
            let mut counts = vec![0usize; c];
            for (r, &a) in assignments.iter().enumerate() {
                counts[a] += 1;
                for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(store.row(r)) {
                    *s += v;
                }
            }
            for k in (0..c).filter(|&k| counts[k] > 0) {
                let n = T::of(counts[k] as f64);
                for (cv, &s) in centroids[k * dim..(k + 1) * dim].iter_mut().zip(&sums[k * dim..(k + 1) * dim]) {
                    *cv = s / n;
                }
            }
        }
        for (r, a) in assignments.iter_mut().enumerate() {
            *a = nearest(store.row(r), &centroids, dim);
        }
        let mut lists = vec![Vec::new(); c];
        for (r, &a) in assignments.iter().enumerate() {
            lists[a].push(r);
        }
        Ok(Self { dim, centroids, assignments, lists, nprobe: config.nprobe })
    }

    pub fn clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn nprobe(&self) -> usize {
        self.nprobe
    }

    pub fn set_nprobe(&mut self, nprobe: usize) -> Result<(), DenseError> {
        if nprobe == 0 || nprobe > self.clusters() {
            return Err(DenseError::InvalidClusters(format!("nprobe {nprobe} with {} clusters", self.clusters())));
        }
        self.nprobe = nprobe;
        Ok(())
    }

    /// Cluster of each store row.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn search_positions(
        &self,
        store: &EmbeddingStore<T>,
        query: &[T],
        k: usize,
    ) -> Result<Vec<(usize, T)>, DenseError> {
        store.check_dim(query)?;
        if store.dim() != self.dim || store.count() != self.assignments.len() {
            return Err(DenseError::DimMismatch { expected: self.dim, got: store.dim() });
        }
        let mut probes: Vec<(T, usize)> =
            self.centroids.chunks(self.dim).enumerate().map(|(c, cent)| (dot(query, cent), c)).collect();
        probes.sort_by(|a, b| desc_then_asc(*a, *b));
        let rows = probes.iter().take(self.nprobe).flat_map(|&(_, c)| self.lists[c].iter().copied());
        Ok(store.top_k_of(query, rows, k))
    }

    pub fn search(&self, store: &EmbeddingStore<T>, query: &[T], k: usize) -> Result<Vec<(DocId, T)>, DenseError> {
        Ok(self
            .search_positions(store, query, k)?
            .into_iter()
            .map(|(r, s)| (store.ids()[r].clone(), s))
            .collect())
    }
}
