//! Knowledge-graph data model, dataset loading and triple-query verbalization.
//!
//! Every loaded relation `r` gets a synthetic inverse `r::inv` whose label is
//! `"inverse of " + label(r)`. Completion queries `(h, r, ?)` are turned into
//! search strings by concatenating the head and relation surface forms.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INVERSE_SUFFIX: &str = "::inv";
pub const INVERSE_LABEL_PREFIX: &str = "inverse of ";

pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const RELATIONS_FILE: &str = "relations.jsonl";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("dangling id `{id}` in {file} line {line}")]
    DanglingId { id: String, file: String, line: usize },
    #[error("duplicate entity id `{0}`")]
    DuplicateEntityId(String),
    #[error("duplicate relation id `{0}`")]
    DuplicateRelationId(String),
    #[error("empty label for `{0}`")]
    EmptyLabel(String),
    #[error("relation id `{0}` contains the reserved suffix `::inv`")]
    ReservedSuffix(String),
    #[error("triple ({0}, {1}, {2}) appears in more than one split")]
    OverlappingSplits(String, String, String),
    #[error("unresolved id `{0}`")]
    UnresolvedId(String),
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: String,
    pub label: String,
    pub aliases: Vec<String>,
    pub is_inverse: bool,
    /// Id of the forward relation when `is_inverse` is set.
    pub base_id: Option<String>,
}

impl Relation {
    pub fn forward(id: impl Into<String>, label: impl Into<String>, aliases: Vec<String>) -> Self {
        Self { id: id.into(), label: label.into(), aliases, is_inverse: false, base_id: None }
    }

    fn inverse_of(base: &Relation) -> Self {
        Self {
            id: inverse_id(&base.id),
            label: format!("{INVERSE_LABEL_PREFIX}{}", base.label),
            aliases: Vec::new(),
            is_inverse: true,
            base_id: Some(base.id.clone()),
        }
    }

    /// Id of the forward relation this one derives from (itself when forward).
    pub fn base(&self) -> &str {
        self.base_id.as_deref().unwrap_or(&self.id)
    }
}

pub fn inverse_id(relation: &str) -> String {
    format!("{relation}{INVERSE_SUFFIX}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self { head: head.into(), relation: relation.into(), tail: tail.into() }
    }

    /// The `(h, r, ?)` query with answer `t`.
    pub fn forward_query(&self) -> TripleQuery {
        TripleQuery { head: self.head.clone(), relation: self.relation.clone(), answer: Some(self.tail.clone()) }
    }

    /// The `(t, inv_r, ?)` query with answer `h`.
    pub fn inverse_query(&self) -> TripleQuery {
        TripleQuery { head: self.tail.clone(), relation: inverse_id(&self.relation), answer: Some(self.head.clone()) }
    }
}

/// A completion query `(head, relation, ?)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleQuery {
    pub head: String,
    pub relation: String,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Valid => "valid.tsv",
            Split::Test => "test.tsv",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// On-disk metadata record shared by `entities.jsonl` and `relations.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    label: String,
    #[serde(default)]
    aliases: Vec<String>,
}

/// An immutable, fully resolved knowledge graph with train/valid/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct KgDataset {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
}

fn clean_aliases(label: &str, aliases: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    aliases.into_iter().filter(|a| a != label && !a.is_empty() && seen.insert(a.clone())).collect()
}

impl KgDataset {
    /// Validates and assembles a dataset; entities and forward relations are
    /// sorted by id and inverse relations are synthesized.
    pub fn new(
        mut entities: Vec<Entity>,
        mut forward: Vec<Relation>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        for e in &mut entities {
            if e.label.trim().is_empty() {
                return Err(KgError::EmptyLabel(e.id.clone()));
            }
            e.aliases = clean_aliases(&e.label, std::mem::take(&mut e.aliases));
        }
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entities.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(KgError::DuplicateEntityId(w[0].id.clone()));
        }

        for r in &mut forward {
            if r.id.contains(INVERSE_SUFFIX) {
                return Err(KgError::ReservedSuffix(r.id.clone()));
            }
            if r.label.trim().is_empty() {
                return Err(KgError::EmptyLabel(r.id.clone()));
            }
            r.is_inverse = false;
            r.base_id = None;
            r.aliases = clean_aliases(&r.label, std::mem::take(&mut r.aliases));
        }
        forward.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = forward.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(KgError::DuplicateRelationId(w[0].id.clone()));
        }
        let inverses: Vec<Relation> = forward.iter().map(Relation::inverse_of).collect();
        let mut relations = forward;
        relations.extend(inverses);

        let entity_index = entities.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        let relation_index = relations.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let kg = Self { entities, relations, entity_index, relation_index, train, valid, test };

        for split in Split::ALL {
            for (i, t) in kg.split(split).iter().enumerate() {
                for (id, ok) in [
                    (&t.head, kg.entity_index.contains_key(&t.head)),
                    (&t.relation, kg.relation(&t.relation).is_some_and(|r| !r.is_inverse)),
                    (&t.tail, kg.entity_index.contains_key(&t.tail)),
                ] {
                    if !ok {
                        return Err(KgError::DanglingId {
                            id: id.clone(),
                            file: split.file_name().to_string(),
                            line: i + 1,
                        });
                    }
                }
            }
        }
        kg.check_disjoint()?;
        Ok(kg)
    }

    fn check_disjoint(&self) -> Result<(), KgError> {
        let mut owner: HashMap<&Triple, Split> = HashMap::new();
        for split in Split::ALL {
            for t in self.split(split) {
                match owner.get(t) {
                    Some(&s) if s != split => {
                        return Err(KgError::OverlappingSplits(t.head.clone(), t.relation.clone(), t.tail.clone()))
                    }
                    _ => {
                        owner.insert(t, split);
                    }
                }
            }
        }
        Ok(())
    }

    /// Entities sorted by id.
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    /// Forward relations sorted by id, followed by their inverses in the same order.
    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn forward_relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(|r| !r.is_inverse)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    /// Position of `id` in [`Self::entities`].
    pub fn entity_position(&self, id: &str) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    pub fn relation(&self, id: &str) -> Option<&Relation> {
        self.relation_index.get(id).map(|&i| &self.relations[i])
    }

    pub fn relation_position(&self, id: &str) -> Option<usize> {
        self.relation_index.get(id).copied()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Both-direction queries for a split: triple `i` yields the forward query
    /// at index `2i` and the inverse query at `2i + 1`.
    pub fn queries(&self, split: Split) -> Vec<TripleQuery> {
        self.split(split).iter().flat_map(|t| [t.forward_query(), t.inverse_query()]).collect()
    }

    fn resolve(&self, tq: &TripleQuery) -> Result<(&Entity, &Relation), KgError> {
        let head = self.entity(&tq.head).ok_or_else(|| KgError::UnresolvedId(tq.head.clone()))?;
        let rel = self.relation(&tq.relation).ok_or_else(|| KgError::UnresolvedId(tq.relation.clone()))?;
        Ok((head, rel))
    }

    /// Alternative surface forms of a relation; inverses borrow their base aliases.
    pub fn relation_aliases(&self, rel: &Relation) -> Vec<String> {
        match rel.base_id.as_deref().and_then(|b| self.relation(b)) {
            Some(base) if rel.is_inverse => {
                base.aliases.iter().map(|a| format!("{INVERSE_LABEL_PREFIX}{a}")).collect()
            }
            _ => rel.aliases.clone(),
        }
    }
}

/// `LABEL(h) ∥ LABEL(r)` joined by a single space.
pub fn f_label(tq: &TripleQuery, kg: &KgDataset) -> Result<String, KgError> {
    let (head, rel) = kg.resolve(tq)?;
    Ok(format!("{} {}", head.label, rel.label))
}

fn pick_text<'a, R: Rng + ?Sized>(label: &'a str, aliases: &'a [String], rng: &mut R) -> &'a str {
    if aliases.is_empty() || rng.gen_bool(0.5) {
        label
    } else {
        &aliases[rng.gen_range(0..aliases.len())]
    }
}

/// `TEXT(h) ∥ TEXT(r)`: each side is its label with probability 1/2, otherwise
/// a uniformly drawn alias. Head and relation are drawn independently.
pub fn f_label_alias<R: Rng + ?Sized>(tq: &TripleQuery, kg: &KgDataset, rng: &mut R) -> Result<String, KgError> {
    let (head, rel) = kg.resolve(tq)?;
    let rel_aliases = kg.relation_aliases(rel);
    let h = pick_text(&head.label, &head.aliases, rng);
    let r = pick_text(&rel.label, &rel_aliases, rng);
    Ok(format!("{h} {r}"))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, KgError> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(KgError::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn read_records(path: &Path) -> Result<Vec<LabelRecord>, KgError> {
    let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| KgError::Parse {
            file: file.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_triples(
    path: &Path,
    entities: &HashSet<String>,
    relations: &HashSet<String>,
) -> Result<Vec<Triple>, KgError> {
    let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                file,
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        for (id, known) in [(fields[0], entities), (fields[1], relations), (fields[2], entities)] {
            if !known.contains(id) {
                return Err(KgError::DanglingId { id: id.to_string(), file, line: i + 1 });
            }
        }
        out.push(Triple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Loads `train.tsv`, `valid.tsv`, `test.tsv`, `entities.jsonl` and `relations.jsonl` from `dir`.
pub fn load_dataset(dir: &Path) -> Result<KgDataset, KgError> {
    let entities: Vec<Entity> = read_records(&dir.join(ENTITIES_FILE))?
        .into_iter()
        .map(|r| Entity { id: r.id, label: r.label, aliases: r.aliases })
        .collect();
    let relations: Vec<Relation> = read_records(&dir.join(RELATIONS_FILE))?
        .into_iter()
        .map(|r| Relation::forward(r.id, r.label, r.aliases))
        .collect();
    let entity_ids: HashSet<String> = entities.iter().map(|e| e.id.clone()).collect();
    let relation_ids: HashSet<String> = relations.iter().map(|r| r.id.clone()).collect();
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        splits.push(read_triples(&dir.join(split.file_name()), &entity_ids, &relation_ids)?);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    KgDataset::new(entities, relations, train, valid, test)
}

/// Writes the dataset in the layout read by [`load_dataset`]; inverse relations are not written.
pub fn save_dataset(kg: &KgDataset, dir: &Path) -> Result<(), KgError> {
    fs::create_dir_all(dir)?;
    let mut ents = std::io::BufWriter::new(fs::File::create(dir.join(ENTITIES_FILE))?);
    for e in kg.entities() {
        let rec = LabelRecord { id: e.id.clone(), label: e.label.clone(), aliases: e.aliases.clone() };
        writeln!(ents, "{}", serde_json::to_string(&rec).expect("serializable"))?;
    }
    ents.flush()?;
    let mut rels = std::io::BufWriter::new(fs::File::create(dir.join(RELATIONS_FILE))?);
    for r in kg.forward_relations() {
        let rec = LabelRecord { id: r.id.clone(), label: r.label.clone(), aliases: r.aliases.clone() };
        writeln!(rels, "{}", serde_json::to_string(&rec).expect("serializable"))?;
    }
    rels.flush()?;
    for split in Split::ALL {
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(split.file_name()))?);
        for t in kg.split(split) {
            writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ent(id: &str, label: &str, aliases: &[&str]) -> Entity {
        Entity { id: id.into(), label: label.into(), aliases: aliases.iter().map(|s| s.to_string()).collect() }
    }

    fn small_kg() -> KgDataset {
        KgDataset::new(
            vec![ent("Q1", "John Doe", &[]), ent("Q2", "heart attack", &["cardiac arrest"]), ent("Q3", "X", &[])],
            vec![
                Relation::forward("P509", "cause of death", vec![]),
                Relation::forward("P172", "ethnic group", vec!["ethnicity".into()]),
            ],
            vec![Triple::new("Q1", "P509", "Q2"), Triple::new("Q3", "P172", "Q1")],
            vec![],
            vec![Triple::new("Q1", "P172", "Q3")],
        )
        .unwrap()
    }

    #[test]
    fn inverse_relations_are_synthesized() {
        let kg = small_kg();
        assert_eq!(kg.relations().len(), 4);
        let inv = kg.relation("P509::inv").unwrap();
        assert!(inv.is_inverse);
        assert_eq!(inv.base_id.as_deref(), Some("P509"));
        assert_eq!(inv.label, "inverse of cause of death");
    }

    #[test]
    fn f_label_concatenates_with_space() {
        let kg = small_kg();
        let tq = TripleQuery { head: "Q1".into(), relation: "P509".into(), answer: None };
        assert_eq!(f_label(&tq, &kg).unwrap(), "John Doe cause of death");
        assert_eq!(f_label(&tq, &kg).unwrap(), f_label(&tq, &kg).unwrap());
        let inv = TripleQuery { head: "Q3".into(), relation: "P172::inv".into(), answer: None };
        assert_eq!(f_label(&inv, &kg).unwrap(), "X inverse of ethnic group");
    }

    #[test]
    fn unresolved_query_is_an_error() {
        let kg = small_kg();
        let tq = TripleQuery { head: "Q9".into(), relation: "P509".into(), answer: None };
        assert!(matches!(f_label(&tq, &kg), Err(KgError::UnresolvedId(id)) if id == "Q9"));
    }

    #[test]
    fn alias_free_query_matches_label_query() {
        let kg = small_kg();
        let tq = TripleQuery { head: "Q1".into(), relation: "P509".into(), answer: None };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(f_label_alias(&tq, &kg, &mut rng).unwrap(), f_label(&tq, &kg).unwrap());
        }
    }

    #[test]
    fn alias_sampling_is_seeded() {
        let kg = small_kg();
        let tq = TripleQuery { head: "Q2".into(), relation: "P172::inv".into(), answer: None };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| f_label_alias(&tq, &kg, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        let allowed = [
            "heart attack ethnic group",
            "heart attack inverse of ethnic group",
            "heart attack inverse of ethnicity",
            "cardiac arrest inverse of ethnic group",
            "cardiac arrest inverse of ethnicity",
        ];
        for s in run(11) {
            assert!(allowed.contains(&s.as_str()) && s != allowed[0], "{s}");
        }
    }

    #[test]
    fn aliases_equal_to_label_are_dropped() {
        let kg = KgDataset::new(
            vec![ent("a", "A", &["A", "B", "B"])],
            vec![Relation::forward("r", "R", vec![])],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(kg.entity("a").unwrap().aliases, vec!["B".to_string()]);
    }

    #[test]
    fn construction_errors() {
        let r = || vec![Relation::forward("r", "R", vec![])];
        assert!(matches!(
            KgDataset::new(vec![ent("a", "A", &[]), ent("a", "B", &[])], r(), vec![], vec![], vec![]),
            Err(KgError::DuplicateEntityId(_))
        ));
        assert!(matches!(
            KgDataset::new(vec![ent("a", " ", &[])], r(), vec![], vec![], vec![]),
            Err(KgError::EmptyLabel(_))
        ));
        assert!(matches!(
            KgDataset::new(vec![], vec![Relation::forward("r::inv", "R", vec![])], vec![], vec![], vec![]),
            Err(KgError::ReservedSuffix(_))
        ));
        let t = Triple::new("a", "r", "a");
        assert!(matches!(
            KgDataset::new(vec![ent("a", "A", &[])], r(), vec![t.clone()], vec![], vec![t]),
            Err(KgError::OverlappingSplits(..))
        ));
        assert!(matches!(
            KgDataset::new(vec![ent("a", "A", &[])], r(), vec![Triple::new("a", "r::inv", "a")], vec![], vec![]),
            Err(KgError::DanglingId { .. })
        ));
    }

    #[test]
    fn queries_come_in_both_directions() {
        let kg = small_kg();
        let q = kg.queries(Split::Train);
        assert_eq!(q.len(), 4);
        assert_eq!(q[1], TripleQuery { head: "Q2".into(), relation: "P509::inv".into(), answer: Some("Q1".into()) });
    }
}
