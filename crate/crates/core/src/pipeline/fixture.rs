//! Synthetic KG plus article corpus with two kinds of relations:
//!
//! * inferable: every held-out triple's counterpart (inverse partner, or the
//!   reversed triple of a symmetric relation) is in train, and only that
//!   train counterpart is stated in text;
//! * uninferable: tails drawn uniformly at random, stated only in the head's
//!   and the tail's articles.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::corpus::{write_articles, write_corpus, Article, Corpus, Link};
use crate::eval::write_relation_split;
use crate::kg::{save_dataset, Entity, KgDataset, Relation, Triple};

pub const INFERABLE_FILE: &str = "inferable.txt";
pub const UNINFERABLE_FILE: &str = "uninferable.txt";
pub const ARTICLES_FILE: &str = "articles.jsonl";

const TEXT_RELATIONS: [(&str, &str, &str); 8] = [
    ("P509", "cause of death", "died of"),
    ("P19", "place of birth", "birthplace"),
    ("P172", "ethnic group", "ethnicity"),
    ("P1412", "languages spoken", "speaks"),
    ("P106", "occupation", "profession"),
    ("P69", "educated at", "alma mater"),
    ("P27", "country of citizenship", "citizen of"),
    ("P140", "religion", "faith"),
];

/// Consecutive entries sharing a pair index are inverses of each other.
const RULE_RELATIONS: [(&str, &str, &str, Option<usize>); 8] = [
    ("P8810", "parent", "mother or father", Some(0)),
    ("P40", "child", "offspring", Some(0)),
    ("P3373", "sibling", "brother or sister", None),
    ("P26", "spouse", "married to", None),
    ("P361", "part of", "belongs to", Some(1)),
    ("P527", "has part", "contains", Some(1)),
    ("P1038", "relative", "kin", None),
    ("P1327", "partner in business", "business partner", None),
];

const ADJECTIVES: [&str; 8] = ["quiet", "famous", "ancient", "small", "northern", "remote", "busy", "modest"];
const NOUNS: [&str; 6] = ["person", "town", "figure", "place", "scholar", "family"];
/// Sentences per article that mention one random entity and state no fact.
const FILLER_SENTENCES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub kg: KgDataset,
    pub articles: Vec<Article>,
    pub inferable: Vec<String>,
    pub uninferable: Vec<String>,
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(C[rng.gen_range(0..C.len())] as char);
        w.push(V[rng.gen_range(0..V.len())] as char);
    }
    let mut cs = w.chars();
    cs.next().map(|c| c.to_ascii_uppercase().to_string() + cs.as_str()).unwrap_or_default()
}

/// 50 / 25 / 25 held-out assignment: 0 train, 1 valid, 2 test.
fn draw_split<R: Rng>(rng: &mut R) -> usize {
    match rng.gen_range(0..4) {
        0 | 1 => 0,
        2 => 1,
        _ => 2,
    }
}

pub fn make_fixture(config: &FixtureConfig) -> Result<Fixture, PipelineError> {
    let n = config.n_entities;
    if n < 10 {
        return Err(PipelineError::Config("fixture needs at least 10 entities".into()));
    }
    let n_rule = config.n_relations / 2;
    let n_text = config.n_relations - n_rule;
    if n_text > TEXT_RELATIONS.len() || n_rule > RULE_RELATIONS.len() || n_text == 0 {
        return Err(PipelineError::Config(format!("fixture supports 1 to 16 relations, got {}", config.n_relations)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut labels = BTreeSet::new();
    let mut entities = Vec::with_capacity(n);
    for i in 0..n {
        let label = loop {
            let w = pseudo_word(&mut rng);
            if labels.insert(w.clone()) {
                break w;
            }
        };
        entities.push(Entity { id: format!("Q{i:03}"), label, aliases: vec![] });
    }

    let text_rels = &TEXT_RELATIONS[..n_text];
    let rule_rels = &RULE_RELATIONS[..n_rule];
    let mut relations: Vec<Relation> =
        text_rels.iter().map(|(id, l, a)| Relation::forward(*id, *l, vec![a.to_string()])).collect();
    relations.extend(rule_rels.iter().map(|(id, l, a, _)| Relation::forward(*id, *l, vec![a.to_string()])));

    let mut seen: BTreeSet<Triple> = BTreeSet::new();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    let mut stated: Vec<Triple> = Vec::new();
    let ent = |i: usize| entities[i].id.clone();
    let other = |rng: &mut ChaCha8Rng, h: usize| (h + rng.gen_range(1..n)) % n;

    for (id, ..) in text_rels {
        for h in 0..n {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let t = Triple::new(ent(h), *id, ent(other(&mut rng, h)));
            if seen.insert(t.clone()) {
                splits[draw_split(&mut rng)].push(t);
            }
        }
    }

    for (i, (id, _, _, pair)) in rule_rels.iter().enumerate() {
        let partner = pair.and_then(|p| {
            rule_rels.iter().enumerate().find(|&(j, r)| j != i && r.3 == Some(p)).map(|(j, r)| (j, r.0))
        });
        // a pair is generated once, from its first member
        if partner.is_some_and(|(j, _)| j < i) {
            continue;
        }
        let inverse_rel = partner.map_or(*id, |(_, p)| p);
        for h in 0..n {
            if !rng.gen_bool(if partner.is_some() { 0.6 } else { 0.4 }) {
                continue;
            }
            let t = other(&mut rng, h);
            let fact = Triple::new(ent(h), *id, ent(t));
            let counterpart = Triple::new(ent(t), inverse_rel, ent(h));
            if seen.contains(&fact) || seen.contains(&counterpart) {
                continue;
            }
            seen.insert(fact.clone());
            seen.insert(counterpart.clone());
            let held = if rng.gen_bool(0.5) { 1 + rng.gen_range(0..2) } else { 0 };
            let (mut a, mut b) = (fact, counterpart);
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut a, &mut b);
            }
            splits[held].push(a);
            stated.push(b.clone());
            splits[0].push(b);
        }
    }

    let text_ids: BTreeSet<&str> = text_rels.iter().map(|r| r.0).collect();
    stated.extend(splits.iter().flatten().filter(|t| text_ids.contains(t.relation.as_str())).cloned());
    let articles = write_articles_text(&entities, &relations, &stated, &mut rng);
    let [train, valid, test] = splits;
    let kg = KgDataset::new(entities, relations, train, valid, test)?;
    Ok(Fixture {
        kg,
        articles,
        inferable: rule_rels.iter().map(|r| r.0.to_string()).collect(),
        uninferable: text_rels.iter().map(|r| r.0.to_string()).collect(),
    })
}

/// Builds text while recording char spans of entity mentions.
struct ArticleBuilder {
    text: String,
    chars: usize,
    links: Vec<Link>,
}

impl ArticleBuilder {
    fn word(&mut self, w: &str) {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        self.text.push_str(w);
        self.chars += w.chars().count();
    }

    fn entity(&mut self, id: &str, label: &str) {
        self.word(label);
        let end = self.chars;
        self.links.push(Link { entity: id.to_string(), start: end - label.chars().count(), end });
    }
}

fn write_articles_text(
    entities: &[Entity],
    relations: &[Relation],
    stated: &[Triple],
    rng: &mut ChaCha8Rng,
) -> Vec<Article> {
    fn lookup<'a>(items: impl Iterator<Item = (&'a str, &'a str)>, id: &'a str) -> &'a str {
        items.into_iter().find(|(i, _)| *i == id).map_or(id, |(_, l)| l)
    }
    let label = |id| lookup(entities.iter().map(|e| (e.id.as_str(), e.label.as_str())), id);
    let rel_label = |id| lookup(relations.iter().map(|r| (r.id.as_str(), r.label.as_str())), id);
    let mut facts: Vec<&Triple> = stated.iter().collect();
    facts.sort();

    entities
        .iter()
        .map(|e| {
            let mut sentences: Vec<Option<&Triple>> =
                facts.iter().copied().filter(|t| t.head == e.id || t.tail == e.id).map(Some).collect();
            sentences.extend(std::iter::repeat_n(None, FILLER_SENTENCES));
            sentences.shuffle(rng);
            let mut b = ArticleBuilder { text: String::new(), chars: 0, links: Vec::new() };
            b.entity(&e.id, &e.label);
            for w in ["is", "a", ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())], NOUNS[rng.gen_range(0..NOUNS.len())], "."] {
                b.word(w);
            }
            for t in sentences {
                let Some(t) = t else {
                    let other = &entities[rng.gen_range(0..entities.len())];
                    b.entity(&other.id, &other.label);
                    for w in ["was", "seen", "near", "a", ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())], NOUNS[rng.gen_range(0..NOUNS.len())], "."] {
                        b.word(w);
                    }
                    continue;
                };
                b.word("The");
                rel_label(&t.relation).split(' ').for_each(|w| b.word(w));
                b.word("of");
                b.entity(&t.head, label(&t.head));
                b.word("is");
                b.entity(&t.tail, label(&t.tail));
                b.word(".");
            }
            Article { entity: e.id.clone(), text: b.text, links: b.links }
        })
        .collect()
}

/// Writes the dataset and split annotations into `dataset_dir`, and the
/// chunked corpus to `corpus_path` with `articles.jsonl` beside it.
pub fn write_fixture(fixture: &Fixture, dataset_dir: &Path, corpus_path: &Path) -> Result<Corpus, PipelineError> {
    save_dataset(&fixture.kg, dataset_dir)?;
    write_relation_split(&fixture.inferable, &dataset_dir.join(INFERABLE_FILE))?;
    write_relation_split(&fixture.uninferable, &dataset_dir.join(UNINFERABLE_FILE))?;
    let corpus_dir = corpus_path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(corpus_dir)?;
    write_articles(&fixture.articles, &corpus_dir.join(ARTICLES_FILE))?;
    let corpus = Corpus::from_articles(&fixture.articles)?;
    write_corpus(&corpus, corpus_path)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{inverse_id, Split};

    fn fixture(seed: u64) -> Fixture {
        make_fixture(&FixtureConfig { n_entities: 50, n_relations: 8, seed }).unwrap()
    }

    #[test]
    fn deterministic() {
        assert_eq!(fixture(3), fixture(3));
        assert_ne!(fixture(3).articles, fixture(4).articles);
    }

    #[test]
    fn uninferable_test_triples_are_co_mentioned() {
        let f = fixture(1);
        let corpus = Corpus::from_articles(&f.articles).unwrap();
        let mut checked = 0;
        for t in f.kg.split(Split::Test).iter().filter(|t| f.uninferable.contains(&t.relation)) {
            assert!(corpus.mdocs(&t.head).intersection(corpus.mdocs(&t.tail)).next().is_some(), "{t:?}");
            checked += 1;
        }
        assert!(checked >= 10, "{checked}");
    }

    #[test]
    fn inferable_held_out_triples_follow_from_train() {
        let f = fixture(2);
        let train: BTreeSet<&Triple> = f.kg.split(Split::Train).iter().collect();
        let partner = |r: &str| {
            let (i, me) = RULE_RELATIONS.iter().enumerate().find(|(_, x)| x.0 == r).unwrap();
            me.3.map_or(r.to_string(), |p| {
                RULE_RELATIONS.iter().enumerate().find(|&(j, x)| j != i && x.3 == Some(p)).unwrap().1 .0.to_string()
            })
        };
        let mut checked = 0;
        for split in [Split::Valid, Split::Test] {
            for t in f.kg.split(split).iter().filter(|t| f.inferable.contains(&t.relation)) {
                let implied = Triple::new(&t.tail, partner(&t.relation), &t.head);
                assert!(train.contains(&implied), "{t:?}");
                checked += 1;
            }
        }
        assert!(checked >= 10, "{checked}");
        assert_eq!(inverse_id("P40"), "P40::inv");
    }

    #[test]
    fn held_out_rule_facts_are_not_stated() {
        let f = fixture(5);
        for split in [Split::Valid, Split::Test] {
            for t in f.kg.split(split).iter().filter(|t| f.inferable.contains(&t.relation)) {
                let rel = &f.kg.relation(&t.relation).unwrap().label;
                let (h, tl) = (&f.kg.entity(&t.head).unwrap().label, &f.kg.entity(&t.tail).unwrap().label);
                let forward = format!("The {rel} of {h} is {tl} .");
                assert!(f.articles.iter().all(|a| !a.text.contains(&forward)), "{t:?}");
            }
        }
    }

    #[test]
    fn too_small_or_too_many() {
        assert!(make_fixture(&FixtureConfig { n_entities: 9, n_relations: 8, seed: 0 }).is_err());
        assert!(make_fixture(&FixtureConfig { n_entities: 20, n_relations: 17, seed: 0 }).is_err());
        let odd = make_fixture(&FixtureConfig { n_entities: 20, n_relations: 3, seed: 0 }).unwrap();
        assert_eq!((odd.inferable.len(), odd.uninferable.len()), (1, 2));
    }
}
