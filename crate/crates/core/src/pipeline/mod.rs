//! Stage orchestration over a fixed work-dir layout:
//!
//! ```text
//! pairs.jsonl  build_report.txt                 build-corpus
//! pretrain.ckpt  pretrain_loss.tsv              pretrain
//! embeddings.bin                                embed-index
//! finetune/epoch_NNN.{ckpt,reader}              finetune
//! finetune/best.{ckpt,reader}  finetune/log.tsv  finetune/best_epoch.txt
//! predictions_{valid,test}.tsv                  predict
//! report.json  report_valid.json  split_report.json   eval
//! kge.bin  kge_predictions_{valid,test}.tsv     train-kge
//! ensemble_policy.json  ensemble_predictions_test.tsv  ensemble_report.json   ensemble
//! ```

mod config;
mod fixture;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{IndexMode, RunConfig, SelectionMetric};
pub use fixture::{
    make_fixture, write_fixture, Fixture, FixtureConfig, ARTICLES_FILE, INFERABLE_FILE, UNINFERABLE_FILE,
};

use crate::bm25::{Bm25Error, Bm25Index, Bm25Params};
use crate::corpus::{build_pretraining_corpus, read_corpus, read_pairs, write_pairs, BuildReport, Corpus, CorpusError, PairConfig};
use crate::dense::{embed_corpus, ClusterConfig, ClusteredIndex, DenseError, EmbeddingStore};
use crate::encoder::{
    finetune_retriever, load_checkpoint, pretrain as pretrain_encoder, save_checkpoint, ContrastiveExample, DualEncoder,
    EncoderError, PretrainConfig, Vocab,
};
use crate::eval::{
    apply_ensemble, evaluate, evaluate_split, fit_ensemble, rank_kge_all, read_relation_split, train_kge, EvalError,
    KgeConfig, KgeRanker, MetricReport,
};
use crate::kg::{load_dataset, KgDataset, KgError, Split, TripleQuery};
use crate::reader::{
    joint_finetune_step, predict_all, read_predictions, write_predictions, FeatureReader, PredictConfig, RankedPrediction,
    ReaderError, ReaderParams, Retriever,
};

/// Scalar type of every trained artifact.
pub type Real = f32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Bm25(#[from] Bm25Error),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Stable name of the error class, for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "Config",
            Self::MissingInput(_) => "MissingInput",
            Self::Kg(_) => "Kg",
            Self::Corpus(_) => "Corpus",
            Self::Bm25(_) => "Bm25",
            Self::Encoder(_) => "Encoder",
            Self::Dense(_) => "Dense",
            Self::Reader(_) => "Reader",
            Self::Eval(_) => "Eval",
            Self::Json(_) => "Json",
            Self::Io(_) => "Io",
        }
    }
}

/// File locations inside a work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkDir(pub PathBuf);

impl WorkDir {
    pub fn pairs(&self) -> PathBuf {
        self.0.join("pairs.jsonl")
    }
    pub fn build_report(&self) -> PathBuf {
        self.0.join("build_report.txt")
    }
    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.0.join("pretrain.ckpt")
    }
    pub fn pretrain_loss(&self) -> PathBuf {
        self.0.join("pretrain_loss.tsv")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.0.join("embeddings.bin")
    }
    pub fn finetune_dir(&self) -> PathBuf {
        self.0.join("finetune")
    }
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.finetune_dir().join(format!("epoch_{epoch:03}.ckpt"))
    }
    pub fn epoch_reader(&self, epoch: usize) -> PathBuf {
        self.finetune_dir().join(format!("epoch_{epoch:03}.reader"))
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.finetune_dir().join("best.ckpt")
    }
    pub fn best_reader(&self) -> PathBuf {
        self.finetune_dir().join("best.reader")
    }
    pub fn best_epoch(&self) -> PathBuf {
        self.finetune_dir().join("best_epoch.txt")
    }
    pub fn finetune_log(&self) -> PathBuf {
        self.finetune_dir().join("log.tsv")
    }
    pub fn predictions(&self, split: Split) -> PathBuf {
        self.0.join(format!("predictions_{}.tsv", split_name(split)))
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("report.json")
    }
    pub fn report_valid(&self) -> PathBuf {
        self.0.join("report_valid.json")
    }
    pub fn split_report(&self) -> PathBuf {
        self.0.join("split_report.json")
    }
    pub fn kge_model(&self) -> PathBuf {
        self.0.join("kge.bin")
    }
    pub fn kge_predictions(&self, split: Split) -> PathBuf {
        self.0.join(format!("kge_predictions_{}.tsv", split_name(split)))
    }
    pub fn ensemble_policy(&self) -> PathBuf {
        self.0.join("ensemble_policy.json")
    }
    pub fn ensemble_predictions(&self) -> PathBuf {
        self.0.join("ensemble_predictions_test.tsv")
    }
    pub fn ensemble_report(&self) -> PathBuf {
        self.0.join("ensemble_report.json")
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

fn work_dir(cfg: &RunConfig) -> Result<WorkDir, PipelineError> {
    fs::create_dir_all(&cfg.work_dir)?;
    Ok(WorkDir(cfg.work_dir.clone()))
}

fn load_inputs(cfg: &RunConfig) -> Result<(KgDataset, Corpus), PipelineError> {
    require(&cfg.dataset_dir)?;
    require(&cfg.corpus)?;
    Ok((load_dataset(&cfg.dataset_dir)?, read_corpus(&cfg.corpus)?))
}

/// Caps the global worker pool at `KGCIR_THREADS` when set.
pub fn configure_threads() -> Result<(), PipelineError> {
    let Ok(value) = std::env::var("KGCIR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Config(format!("KGCIR_THREADS: expected a positive integer, got {value:?}")))?;
    // a pool that already exists is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn make_fixture_stage(cfg: &RunConfig) -> Result<Fixture, PipelineError> {
    cfg.validate()?;
    let fixture = make_fixture(&FixtureConfig {
        n_entities: cfg.fixture_entities,
        n_relations: cfg.fixture_relations,
        seed: cfg.seed,
    })?;
    write_fixture(&fixture, &cfg.dataset_dir, &cfg.corpus)?;
    Ok(fixture)
}

pub fn build_corpus(cfg: &RunConfig) -> Result<BuildReport, PipelineError> {
    cfg.validate()?;
    let (kg, corpus) = load_inputs(cfg)?;
    let wd = work_dir(cfg)?;
    let bm25 = Bm25Index::<f64>::build(&corpus, Bm25Params::default())?;
    let pair_cfg = PairConfig {
        sample_size: cfg.sample_size,
        n_variants: cfg.n_variants,
        negative_depth: cfg.negative_depth,
        seed: cfg.seed,
    };
    let (pairs, report) = build_pretraining_corpus(&kg, &corpus, &bm25, &pair_cfg)?;
    write_pairs(&pairs, &wd.pairs())?;
    fs::write(wd.build_report(), report.to_string())?;
    Ok(report)
}

/// Corpus text plus every entity and relation surface form, inverse labels included.
pub fn build_vocab(kg: &KgDataset, corpus: &Corpus) -> Vocab {
    let docs = corpus.documents().iter().map(|d| d.text.clone());
    let entities = kg.entities().iter().flat_map(|e| std::iter::once(e.label.clone()).chain(e.aliases.clone()));
    let relations = kg.relations().iter().flat_map(|r| std::iter::once(r.label.clone()).chain(kg.relation_aliases(r)));
    Vocab::build(docs.chain(entities).chain(relations))
}

pub fn pretrain(cfg: &RunConfig) -> Result<Vec<Real>, PipelineError> {
    cfg.validate()?;
    let (kg, corpus) = load_inputs(cfg)?;
    let wd = work_dir(cfg)?;
    require(&wd.pairs())?;
    let pairs = read_pairs(&wd.pairs())?;
    let text = |id| corpus.get(id).map(|d| d.text.clone()).ok_or_else(|| PipelineError::Config(format!("pairs.jsonl references unknown document {id}")));
    let examples = pairs
        .iter()
        .map(|p| {
            Ok(ContrastiveExample {
                query: p.search_query.clone(),
                positive: text(&p.positive)?,
                negative: text(&p.strong_negative)?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut model = DualEncoder::<Real>::new_random(build_vocab(&kg, &corpus), cfg.dim, cfg.seed);
    let pre_cfg = PretrainConfig { batch_size: cfg.batch_size, lr: cfg.lr, epochs: cfg.pretrain_epochs, seed: cfg.seed };
    let curve = pretrain_encoder(&mut model, &examples, &pre_cfg)?;
    save_checkpoint(&model, &wd.pretrain_checkpoint())?;
    let mut tsv = String::from("epoch\tmean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        tsv.push_str(&format!("{}\t{l}\n", i + 1));
    }
    fs::write(wd.pretrain_loss(), tsv)?;
    Ok(curve)
}

pub fn embed_index(cfg: &RunConfig) -> Result<EmbeddingStore<Real>, PipelineError> {
    cfg.validate()?;
    require(&cfg.corpus)?;
    let corpus = read_corpus(&cfg.corpus)?;
    let wd = work_dir(cfg)?;
    require(&wd.pretrain_checkpoint())?;
    let model = load_checkpoint::<Real>(&wd.pretrain_checkpoint())?;
    let store = embed_corpus(&model, &corpus)?;
    store.save(&wd.embeddings())?;
    Ok(store)
}

fn clustered_index(cfg: &RunConfig, store: &EmbeddingStore<Real>) -> Result<Option<ClusteredIndex<Real>>, PipelineError> {
    if cfg.index == IndexMode::Exact {
        return Ok(None);
    }
    let clusters = cfg.clusters.min(store.count());
    let index = ClusteredIndex::build(
        store,
        &ClusterConfig { clusters, nprobe: cfg.nprobe.min(clusters), iterations: 10, seed: cfg.seed },
    )?;
    Ok(Some(index))
}

fn metric_value(report: &MetricReport, metric: SelectionMetric) -> f64 {
    match metric {
        SelectionMetric::Mrr => report.mrr,
        SelectionMetric::Hits(k) => report.hits_at(k),
    }
}

/// Index of the first maximum.
pub fn select_best(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

fn predict_config(cfg: &RunConfig) -> PredictConfig {
    PredictConfig { k: cfg.k_docs, width: cfg.candidate_width, alias_grounding: cfg.alias_grounding }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: Real,
    pub counted: usize,
    pub skipped_no_candidates: usize,
    pub skipped_unreachable: usize,
    pub valid_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSummary {
    pub epochs: Vec<EpochRecord>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Joint fine-tuning of the query encoder and reader weights from the
/// pre-trained checkpoint; the best epoch by the selection metric on the
/// validation queries is copied to `finetune/best.*`.
pub fn finetune(cfg: &RunConfig) -> Result<FinetuneSummary, PipelineError> {
    cfg.validate()?;
    let (kg, corpus) = load_inputs(cfg)?;
    let wd = work_dir(cfg)?;
    require(&wd.pretrain_checkpoint())?;
    require(&wd.embeddings())?;
    let mut model = load_checkpoint::<Real>(&wd.pretrain_checkpoint())?;
    let store = EmbeddingStore::<Real>::load(&wd.embeddings())?;
    let clustered = clustered_index(cfg, &store)?;
    fs::create_dir_all(wd.finetune_dir())?;

    let mut train: Vec<(TripleQuery, String)> = kg
        .queries(Split::Train)
        .into_iter()
        .map(|q| {
            let gold = q.answer.clone().expect("train queries carry answers");
            (q, gold)
        })
        .collect();
    let valid = kg.queries(Split::Valid);
    let mut params = ReaderParams::<Real>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut records = Vec::with_capacity(cfg.finetune_epochs);
    let mut log = String::from("epoch\tloss\tcounted\tskipped_no_candidates\tskipped_unreachable\t");
    log.push_str(&format!("valid_{}\n", cfg.selection_metric));

    for epoch in 1..=cfg.finetune_epochs {
        train.shuffle(&mut rng);
        let (mut loss_sum, mut counted, mut no_cand, mut unreachable) = (0.0, 0, 0, 0);
        for batch in train.chunks(cfg.finetune_batch_size) {
            let step = {
                let mut r = Retriever::new(&model, &store, &corpus, &kg)?;
                if let Some(c) = &clustered {
                    r = r.with_clustered(c);
                }
                joint_finetune_step(&r, &params, batch, cfg.k_docs, cfg.reader_lr)?
            };
            finetune_retriever(&mut model, &step.query_gradient, cfg.finetune_lr)?;
            params = step.params;
            loss_sum += f64::from(step.loss) * step.counted as f64;
            counted += step.counted;
            no_cand += step.skipped_no_candidates;
            unreachable += step.skipped_unreachable;
        }
        save_checkpoint(&model, &wd.epoch_checkpoint(epoch))?;
        fs::write(wd.epoch_reader(epoch), params.to_line() + "\n")?;
        let valid_metric = if valid.is_empty() {
            0.0
        } else {
            let mut r = Retriever::new(&model, &store, &corpus, &kg)?;
            if let Some(c) = &clustered {
                r = r.with_clustered(c);
            }
            let preds = predict_all(&r, &FeatureReader { params }, &valid, &predict_config(cfg))?;
            metric_value(&evaluate(&preds, &kg, true)?, cfg.selection_metric)
        };
        let rec = EpochRecord {
            epoch,
            loss: (loss_sum / counted.max(1) as f64) as Real,
            counted,
            skipped_no_candidates: no_cand,
            skipped_unreachable: unreachable,
            valid_metric,
        };
        log.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            rec.epoch, rec.loss, rec.counted, rec.skipped_no_candidates, rec.skipped_unreachable, rec.valid_metric
        ));
        records.push(rec);
    }
    fs::write(wd.finetune_log(), log)?;
    let metrics: Vec<f64> = records.iter().map(|r| r.valid_metric).collect();
    let best_epoch = select_best(&metrics).map_or(0, |i| i + 1);
    if best_epoch > 0 {
        fs::copy(wd.epoch_checkpoint(best_epoch), wd.best_checkpoint())?;
        fs::copy(wd.epoch_reader(best_epoch), wd.best_reader())?;
        fs::write(wd.best_epoch(), format!("{best_epoch}\n"))?;
    }
    Ok(FinetuneSummary { epochs: records, best_epoch })
}

/// The fine-tuned model and reader weights when present, else the pre-trained model with zero weights.
pub fn load_retrieval_model(wd: &WorkDir) -> Result<(DualEncoder<Real>, ReaderParams<Real>), PipelineError> {
    if wd.best_checkpoint().exists() {
        require(&wd.best_reader())?;
        let line = fs::read_to_string(wd.best_reader())?;
        let params = ReaderParams::from_line(&line)
            .ok_or_else(|| PipelineError::Config(format!("{}: malformed reader weights", wd.best_reader().display())))?;
        Ok((load_checkpoint(&wd.best_checkpoint())?, params))
    } else {
        require(&wd.pretrain_checkpoint())?;
        Ok((load_checkpoint(&wd.pretrain_checkpoint())?, ReaderParams::default()))
    }
}

/// IR predictions for the validation and test queries.
pub fn predict(cfg: &RunConfig) -> Result<[Vec<RankedPrediction<Real>>; 2], PipelineError> {
    cfg.validate()?;
    let (kg, corpus) = load_inputs(cfg)?;
    let wd = work_dir(cfg)?;
    require(&wd.embeddings())?;
    let (model, params) = load_retrieval_model(&wd)?;
    let store = EmbeddingStore::<Real>::load(&wd.embeddings())?;
    let clustered = clustered_index(cfg, &store)?;
    let mut r = Retriever::new(&model, &store, &corpus, &kg)?;
    if let Some(c) = &clustered {
        r = r.with_clustered(c);
    }
    let reader = FeatureReader { params };
    let mut out: [Vec<RankedPrediction<Real>>; 2] = Default::default();
    for (slot, split) in out.iter_mut().zip([Split::Valid, Split::Test]) {
        *slot = predict_all(&r, &reader, &kg.queries(split), &predict_config(cfg))?;
        write_predictions(slot, &wd.predictions(split))?;
    }
    Ok(out)
}

fn load_predictions(path: &Path, kg: &KgDataset, split: Split) -> Result<Vec<RankedPrediction<Real>>, PipelineError> {
    require(path)?;
    Ok(read_predictions(path, &kg.queries(split))?)
}

fn split_files(cfg: &RunConfig) -> Result<Vec<(&'static str, Vec<String>)>, PipelineError> {
    let mut out = Vec::new();
    for (name, file) in [("inferable", INFERABLE_FILE), ("uninferable", UNINFERABLE_FILE)] {
        let path = cfg.dataset_dir.join(file);
        if path.exists() {
            out.push((name, read_relation_split(&path)?));
        }
    }
    Ok(out)
}

fn save_json<S: serde::Serialize>(value: &S, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Filtered test report of the IR predictions (`report.json`), the validation
/// report, and inferable / uninferable breakdowns for IR and, when its
/// predictions exist, KGE.
pub fn eval(cfg: &RunConfig) -> Result<MetricReport, PipelineError> {
    cfg.validate()?;
    require(&cfg.dataset_dir)?;
    let kg = load_dataset(&cfg.dataset_dir)?;
    let wd = work_dir(cfg)?;
    let test = load_predictions(&wd.predictions(Split::Test), &kg, Split::Test)?;
    let report = evaluate(&test, &kg, true)?;
    report.save(&wd.report())?;
    if wd.predictions(Split::Valid).exists() {
        let valid = load_predictions(&wd.predictions(Split::Valid), &kg, Split::Valid)?;
        evaluate(&valid, &kg, true)?.save(&wd.report_valid())?;
    }
    let splits = split_files(cfg)?;
    if !splits.is_empty() {
        let mut models: Vec<(&str, Vec<RankedPrediction<Real>>)> = vec![("ir", test)];
        if wd.kge_predictions(Split::Test).exists() {
            models.push(("kge", load_predictions(&wd.kge_predictions(Split::Test), &kg, Split::Test)?));
        }
        let mut table: BTreeMap<&str, BTreeMap<&str, MetricReport>> = BTreeMap::new();
        for (model, preds) in &models {
            for (name, rels) in &splits {
                match evaluate_split(preds, &kg, rels, true) {
                    Ok(r) => {
                        table.entry(model).or_default().insert(name, r);
                    }
                    Err(EvalError::EmptySubsetAfterFilter | EvalError::EmptySubset) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        save_json(&table, &wd.split_report())?;
    }
    Ok(report)
}

pub fn kge_config(cfg: &RunConfig) -> KgeConfig {
    KgeConfig {
        entity_dim: cfg.kge_entity_dim,
        relation_dim: cfg.kge_relation_dim,
        epochs: cfg.kge_epochs,
        lr: cfg.kge_lr,
        batch_size: cfg.kge_batch_size,
        seed: cfg.seed,
    }
}

pub fn train_kge_stage(cfg: &RunConfig) -> Result<KgeRanker<Real>, PipelineError> {
    cfg.validate()?;
    require(&cfg.dataset_dir)?;
    let kg = load_dataset(&cfg.dataset_dir)?;
    let wd = work_dir(cfg)?;
    let ranker = train_kge::<Real>(&kg, &kge_config(cfg))?;
    ranker.save(&wd.kge_model())?;
    for split in [Split::Valid, Split::Test] {
        let preds = rank_kge_all(&ranker, &kg.queries(split))?;
        write_predictions(&preds, &wd.kge_predictions(split))?;
    }
    Ok(ranker)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleReport {
    /// `ir`, `kge` and `ensemble` reports on the validation queries.
    pub valid: BTreeMap<String, MetricReport>,
    pub test: BTreeMap<String, MetricReport>,
}

pub fn ensemble(cfg: &RunConfig) -> Result<EnsembleReport, PipelineError> {
    cfg.validate()?;
    require(&cfg.dataset_dir)?;
    let kg = load_dataset(&cfg.dataset_dir)?;
    let wd = work_dir(cfg)?;
    let mut reports = [BTreeMap::new(), BTreeMap::new()];
    let mut policy = None;
    for (slot, split) in reports.iter_mut().zip([Split::Valid, Split::Test]) {
        let ir = load_predictions(&wd.predictions(split), &kg, split)?;
        let kge = load_predictions(&wd.kge_predictions(split), &kg, split)?;
        let ir_report = evaluate(&ir, &kg, true)?;
        let kge_report = evaluate(&kge, &kg, true)?;
        let p = match policy.take() {
            Some(p) => p,
            None => fit_ensemble(&ir_report, &kge_report)?,
        };
        let combined = apply_ensemble(&p, &ir, &kge)?;
        slot.insert("ensemble".to_string(), evaluate(&combined, &kg, true)?);
        slot.insert("ir".to_string(), ir_report);
        slot.insert("kge".to_string(), kge_report);
        if split == Split::Test {
            write_predictions(&combined, &wd.ensemble_predictions())?;
        }
        policy = Some(p);
    }
    policy.expect("fitted on validation").save(&wd.ensemble_policy())?;
    let [valid, test] = reports;
    let report = EnsembleReport { valid, test };
    save_json(&report, &wd.ensemble_report())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    MakeFixture,
    BuildCorpus,
    Pretrain,
    EmbedIndex,
    Finetune,
    Predict,
    Eval,
    TrainKge,
    Ensemble,
}

impl Stage {
    /// Training and evaluation order; the fixture is not part of a run.
    pub const RUN: [Stage; 8] = [
        Stage::BuildCorpus,
        Stage::Pretrain,
        Stage::EmbedIndex,
        Stage::Finetune,
        Stage::Predict,
        Stage::TrainKge,
        Stage::Eval,
        Stage::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MakeFixture => "make-fixture",
            Stage::BuildCorpus => "build-corpus",
            Stage::Pretrain => "pretrain",
            Stage::EmbedIndex => "embed-index",
            Stage::Finetune => "finetune",
            Stage::Predict => "predict",
            Stage::Eval => "eval",
            Stage::TrainKge => "train-kge",
            Stage::Ensemble => "ensemble",
        }
    }
}

/// Runs one stage and returns a short human-readable summary.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<String, PipelineError> {
    Ok(match stage {
        Stage::MakeFixture => {
            let f = make_fixture_stage(cfg)?;
            format!(
                "entities\t{}\ntriples\t{}\t{}\t{}\n",
                f.kg.entities().len(),
                f.kg.split(Split::Train).len(),
                f.kg.split(Split::Valid).len(),
                f.kg.split(Split::Test).len()
            )
        }
        Stage::BuildCorpus => build_corpus(cfg)?.to_string(),
        Stage::Pretrain => {
            pretrain(cfg)?.iter().enumerate().map(|(i, l)| format!("epoch\t{}\tloss\t{l}\n", i + 1)).collect()
        }
        Stage::EmbedIndex => {
            let s = embed_index(cfg)?;
            format!("documents\t{}\tdim\t{}\n", s.count(), s.dim())
        }
        Stage::Finetune => {
            let s = finetune(cfg)?;
            let mut out: String = s
                .epochs
                .iter()
                .map(|e| format!("epoch\t{}\tloss\t{}\tvalid_{}\t{}\n", e.epoch, e.loss, cfg.selection_metric, e.valid_metric))
                .collect();
            out.push_str(&format!("best_epoch\t{}\n", s.best_epoch));
            out
        }
        Stage::Predict => {
            let [v, t] = predict(cfg)?;
            format!("predictions\tvalid\t{}\ttest\t{}\n", v.len(), t.len())
        }
        Stage::Eval => {
            let r = eval(cfg)?;
            format!("mrr\t{}\thits@1\t{}\thits@3\t{}\thits@10\t{}\n", r.mrr, r.hits_at(1), r.hits_at(3), r.hits_at(10))
        }
        Stage::TrainKge => {
            let (de, dr) = train_kge_stage(cfg)?.dims();
            format!("kge\tentity_dim\t{de}\trelation_dim\t{dr}\n")
        }
        Stage::Ensemble => {
            let r = ensemble(cfg)?;
            ["ir", "kge", "ensemble"].iter().map(|m| format!("test_mrr\t{m}\t{}\n", r.test[*m].mrr)).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_maximum_wins() {
        assert_eq!(select_best(&[0.2, 0.7, 0.5]), Some(1));
        assert_eq!(select_best(&[0.4, 0.4]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn layout() {
        let wd = WorkDir(PathBuf::from("w"));
        assert_eq!(wd.epoch_checkpoint(2), PathBuf::from("w/finetune/epoch_002.ckpt"));
        assert_eq!(wd.predictions(Split::Test), PathBuf::from("w/predictions_test.tsv"));
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dataset_dir: dir.path().join("nope"),
            corpus: dir.path().join("nope.jsonl"),
            work_dir: dir.path().join("w"),
            ..Default::default()
        };
        let err = build_corpus(&cfg).unwrap_err();
        assert_eq!(err.kind(), "MissingInput");
    }
}
