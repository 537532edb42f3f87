//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; relative paths in a file resolve against the file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    Mrr,
    Hits(usize),
}

impl FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Self::Mrr),
            "hits@1" => Ok(Self::Hits(1)),
            "hits@3" => Ok(Self::Hits(3)),
            "hits@10" => Ok(Self::Hits(10)),
            _ => Err(format!("unknown selection metric {s:?}")),
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mrr => f.write_str("mrr"),
            Self::Hits(k) => write!(f, "hits@{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    Clustered,
}

impl FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "clustered" => Ok(Self::Clustered),
            _ => Err(format!("unknown index mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub corpus: PathBuf,
    pub work_dir: PathBuf,

    pub seed: u64,
    pub sample_size: Option<usize>,
    pub n_variants: usize,
    pub negative_depth: usize,

    pub dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pretrain_epochs: usize,

    pub k_docs: usize,
    pub candidate_width: usize,
    pub alias_grounding: bool,
    pub index: IndexMode,
    pub clusters: usize,
    pub nprobe: usize,

    pub finetune_epochs: usize,
    pub finetune_batch_size: usize,
    pub finetune_lr: f64,
    pub reader_lr: f64,
    pub selection_metric: SelectionMetric,

    pub kge_entity_dim: usize,
    pub kge_relation_dim: usize,
    pub kge_epochs: usize,
    pub kge_lr: f64,
    pub kge_batch_size: usize,

    pub fixture_entities: usize,
    pub fixture_relations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data"),
            corpus: PathBuf::from("data/corpus.jsonl"),
            work_dir: PathBuf::from("work"),
            seed: 0,
            sample_size: None,
            n_variants: 25,
            negative_depth: 1000,
            dim: 64,
            batch_size: 16,
            lr: 1.0,
            pretrain_epochs: 3,
            k_docs: 5,
            candidate_width: 64,
            alias_grounding: false,
            index: IndexMode::Exact,
            clusters: 32,
            nprobe: 8,
            finetune_epochs: 20,
            finetune_batch_size: 4,
            finetune_lr: 0.5,
            reader_lr: 1.0,
            selection_metric: SelectionMetric::Hits(10),
            kge_entity_dim: 32,
            kge_relation_dim: 16,
            kge_epochs: 100,
            kge_lr: 0.01,
            kge_batch_size: 64,
            fixture_entities: 50,
            fixture_relations: 8,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset_dir",
        "corpus",
        "work_dir",
        "seed",
        "sample_size",
        "n_variants",
        "negative_depth",
        "dim",
        "batch_size",
        "lr",
        "pretrain_epochs",
        "k_docs",
        "candidate_width",
        "alias_grounding",
        "index",
        "clusters",
        "nprobe",
        "finetune_epochs",
        "finetune_batch_size",
        "finetune_lr",
        "reader_lr",
        "selection_metric",
        "kge_entity_dim",
        "kge_relation_dim",
        "kge_epochs",
        "kge_lr",
        "kge_batch_size",
        "fixture_entities",
        "fixture_relations",
    ];

    /// Sets one key; path values are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), PipelineError> {
        let value = value.trim();
        match key {
            "dataset_dir" => self.dataset_dir = base.join(value),
            "corpus" => self.corpus = base.join(value),
            "work_dir" => self.work_dir = base.join(value),
            "seed" => self.seed = parse(key, value)?,
            "sample_size" => {
                self.sample_size = if value.is_empty() || value == "all" { None } else { Some(parse(key, value)?) }
            }
            "n_variants" => self.n_variants = parse(key, value)?,
            "negative_depth" => self.negative_depth = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "k_docs" => self.k_docs = parse(key, value)?,
            "candidate_width" => self.candidate_width = parse(key, value)?,
            "alias_grounding" => self.alias_grounding = parse(key, value)?,
            "index" => self.index = value.parse().map_err(PipelineError::Config)?,
            "clusters" => self.clusters = parse(key, value)?,
            "nprobe" => self.nprobe = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune_batch_size" => self.finetune_batch_size = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "reader_lr" => self.reader_lr = parse(key, value)?,
            "selection_metric" => self.selection_metric = value.parse().map_err(PipelineError::Config)?,
            "kge_entity_dim" => self.kge_entity_dim = parse(key, value)?,
            "kge_relation_dim" => self.kge_relation_dim = parse(key, value)?,
            "kge_epochs" => self.kge_epochs = parse(key, value)?,
            "kge_lr" => self.kge_lr = parse(key, value)?,
            "kge_batch_size" => self.kge_batch_size = parse(key, value)?,
            "fixture_entities" => self.fixture_entities = parse(key, value)?,
            "fixture_relations" => self.fixture_relations = parse(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value, base)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies `(key, value)` overrides; relative paths resolve against the working directory.
    pub fn apply_overrides<'a, I>(&mut self, overrides: I) -> Result<(), PipelineError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        for (k, v) in overrides {
            self.set(k, v, Path::new(""))?;
        }
        Ok(())
    }

    /// Every count must be at least 1.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let counts = [
            ("n_variants", self.n_variants),
            ("negative_depth", self.negative_depth),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("k_docs", self.k_docs),
            ("candidate_width", self.candidate_width),
            ("clusters", self.clusters),
            ("nprobe", self.nprobe),
            ("finetune_batch_size", self.finetune_batch_size),
            ("kge_entity_dim", self.kge_entity_dim),
            ("kge_relation_dim", self.kge_relation_dim),
            ("kge_batch_size", self.kge_batch_size),
            ("fixture_relations", self.fixture_relations),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(PipelineError::Config(format!("{k} must be at least 1")));
        }
        if self.sample_size == Some(0) {
            return Err(PipelineError::Config("sample_size must be at least 1".into()));
        }
        if self.fixture_entities < 10 {
            return Err(PipelineError::Config("fixture_entities must be at least 10".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.n_variants, c.k_docs, c.candidate_width), (25, 5, 64));
        assert_eq!((c.pretrain_epochs, c.finetune_epochs), (3, 20));
        assert_eq!(c.selection_metric, SelectionMetric::Hits(10));
        c.validate().unwrap();
    }

    #[test]
    fn file_then_overrides() {
        let text = "# run\nwork_dir = out\nseed=7\n\nk_docs = 3\nselection_metric = MRR\n";
        let mut c = RunConfig::parse_str(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.work_dir, PathBuf::from("/cfg/out"));
        assert_eq!((c.seed, c.k_docs), (7, 3));
        assert_eq!(c.selection_metric, SelectionMetric::Mrr);
        c.apply_overrides([("seed", "9"), ("work_dir", "w2")]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.work_dir, PathBuf::from("w2"));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for key in RunConfig::KEYS {
            let value = match *key {
                "alias_grounding" => "true",
                "index" => "clustered",
                "selection_metric" => "hits@3",
                "lr" | "finetune_lr" | "reader_lr" | "kge_lr" => "0.5",
                _ => "12",
            };
            c.set(key, value, Path::new("")).unwrap();
        }
        assert_eq!(c.index, IndexMode::Clustered);
    }

    #[test]
    fn errors() {
        assert!(RunConfig::parse_str("bogus = 1", Path::new("")).is_err());
        assert!(RunConfig::parse_str("seed 1", Path::new("")).is_err());
        assert!(RunConfig::parse_str("k_docs = many", Path::new("")).is_err());
        let c = RunConfig::parse_str("k_docs = 0", Path::new("")).unwrap();
        assert!(c.validate().is_err());
    }
}
