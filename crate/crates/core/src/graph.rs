//! Heterogeneous user-POI knowledge graph: entity vocabularies, composed
//! relation paths over (time slot, region[, category]), positive triples,
//! and corrupted negative sampling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkin::{assign_time_slot, CheckIn, TimeSlotSpec};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::region::RegionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoiId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// The components of one composed relation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationPath {
    pub slot: u32,
    pub region: u32,
    pub category: Option<u32>,
}

/// One knowledge-graph edge; heads are always users, tails always POIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: UserId,
    pub relation: RelationId,
    pub tail: PoiId,
}

/// Dense, insertion-ordered user and POI key tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityVocab {
    users: Vec<String>,
    pois: Vec<String>,
    user_pos: HashMap<String, u32>,
    poi_pos: HashMap<String, u32>,
}

impl EntityVocab {
    pub fn intern_user(&mut self, key: &str) -> UserId {
        if let Some(&i) = self.user_pos.get(key) {
            return UserId(i);
        }
        let i = self.users.len() as u32;
        self.users.push(key.to_string());
        self.user_pos.insert(key.to_string(), i);
        UserId(i)
    }

    pub fn intern_poi(&mut self, key: &str) -> PoiId {
        if let Some(&i) = self.poi_pos.get(key) {
            return PoiId(i);
        }
        let i = self.pois.len() as u32;
        self.pois.push(key.to_string());
        self.poi_pos.insert(key.to_string(), i);
        PoiId(i)
    }

    pub fn user_id(&self, key: &str) -> Option<UserId> {
        self.user_pos.get(key).copied().map(UserId)
    }

    pub fn poi_id(&self, key: &str) -> Option<PoiId> {
        self.poi_pos.get(key).copied().map(PoiId)
    }

    pub fn user_key(&self, id: UserId) -> &str {
        &self.users[id.0 as usize]
    }

    pub fn poi_key(&self, id: PoiId) -> &str {
        &self.pois[id.0 as usize]
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn pois(&self) -> &[String] {
        &self.pois
    }
}

/// The user-POI graph: vocabularies, interned relation paths, and the set of
/// positive triples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub vocab: EntityVocab,
    relations: Vec<RelationPath>,
    relation_pos: HashMap<RelationPath, u32>,
    categories: Vec<String>,
    category_pos: HashMap<String, u32>,
    positives: Vec<Triple>,
    positive_set: HashSet<Triple>,
    pub slots_per_day: u32,
    pub region_count: u32,
}

impl KnowledgeGraph {
    /// Interns a composed (slot, region[, category]) path; idempotent.
    pub fn compose_relation_id(&mut self, slot: u32, region: u32, category: Option<u32>) -> RelationId {
        let path = RelationPath { slot, region, category };
        if let Some(&i) = self.relation_pos.get(&path) {
            return RelationId(i);
        }
        let i = self.relations.len() as u32;
        self.relations.push(path);
        self.relation_pos.insert(path, i);
        RelationId(i)
    }

    pub fn intern_category(&mut self, key: &str) -> u32 {
        if let Some(&i) = self.category_pos.get(key) {
            return i;
        }
        let i = self.categories.len() as u32;
        self.categories.push(key.to_string());
        self.category_pos.insert(key.to_string(), i);
        i
    }

    pub fn relation_id(&self, slot: u32, region: u32, category: Option<u32>) -> Option<RelationId> {
        self.relation_pos.get(&RelationPath { slot, region, category }).copied().map(RelationId)
    }

    pub fn relation_path(&self, id: RelationId) -> &RelationPath {
        &self.relations[id.0 as usize]
    }

    pub fn relations(&self) -> &[RelationPath] {
        &self.relations
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn positives(&self) -> &[Triple] {
        &self.positives
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.positive_set.contains(t)
    }

    fn insert_positive(&mut self, t: Triple) {
        if self.positive_set.insert(t) {
            self.positives.push(t);
        }
    }

    /// Adds a positive triple with index validation; returns whether it was
    /// new. Useful for building graphs directly rather than from check-ins.
    pub fn add_positive(&mut self, head: UserId, relation: RelationId, tail: PoiId) -> Result<bool> {
        if head.0 as usize >= self.vocab.n_users() {
            return Err(Error::Data(format!("unknown user index {}", head.0)));
        }
        if tail.0 as usize >= self.vocab.n_pois() {
            return Err(Error::Data(format!("unknown poi index {}", tail.0)));
        }
        if relation.0 as usize >= self.relations.len() {
            return Err(Error::Data(format!("unknown relation index {}", relation.0)));
        }
        let t = Triple { head, relation, tail };
        let new = self.positive_set.insert(t);
        if new {
            self.positives.push(t);
        }
        Ok(new)
    }

    /// Draws `n` distinct corrupted triples for `positive`: each replaces
    /// exactly one of head/tail (side chosen uniformly) with another entity
    /// of the same type, and none of them appears in the positive set.
    pub fn sample_negatives(
        &self,
        positive: Triple,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Triple>> {
        let n_users = self.vocab.n_users() as u32;
        let n_pois = self.vocab.n_pois() as u32;
        if n_users < 2 || n_pois < 2 {
            return Err(Error::Data(
                "negative sampling needs at least 2 users and 2 POIs".into(),
            ));
        }
        let mut out = Vec::with_capacity(n);
        let mut seen = HashSet::with_capacity(n);
        let budget = 50 * n.max(1) + 100;
        for _ in 0..budget {
            if out.len() == n {
                break;
            }
            let corrupt_head = rng.random_bool(0.5);
            let candidate = if corrupt_head {
                let head = UserId(rng.random_range(0..n_users));
                if head == positive.head {
                    continue;
                }
                Triple { head, ..positive }
            } else {
                let tail = PoiId(rng.random_range(0..n_pois));
                if tail == positive.tail {
                    continue;
                }
                Triple { tail, ..positive }
            };
            if !self.positive_set.contains(&candidate) && seen.insert(candidate) {
                out.push(candidate);
            }
        }
        if out.len() < n {
            return Err(Error::Data(format!(
                "could not sample {n} distinct negatives for a triple (found {})",
                out.len()
            )));
        }
        Ok(out)
    }

    /// Writes entities.tsv, relations.tsv, and triples.tsv into `dir`.
    pub fn save_tsv(&self, dir: &Path) -> Result<()> {
        let mut entities = BufWriter::new(fs::File::create(dir.join("entities.tsv"))?);
        for (i, key) in self.vocab.users.iter().enumerate() {
            writeln!(entities, "{i}\tuser\t{key}")?;
        }
        for (i, key) in self.vocab.pois.iter().enumerate() {
            writeln!(entities, "{i}\tpoi\t{key}")?;
        }
        entities.flush()?;

        let mut relations = BufWriter::new(fs::File::create(dir.join("relations.tsv"))?);
        for (i, path) in self.relations.iter().enumerate() {
            let cat = path.category.map(|c| self.categories[c as usize].as_str()).unwrap_or("");
            writeln!(relations, "{i}\t{}\t{}\t{cat}", path.slot, path.region)?;
        }
        relations.flush()?;

        let mut triples = BufWriter::new(fs::File::create(dir.join("triples.tsv"))?);
        for t in &self.positives {
            writeln!(triples, "{}\t{}\t{}", t.head.0, t.relation.0, t.tail.0)?;
        }
        triples.flush()?;
        Ok(())
    }

    /// Reloads a graph persisted by `save_tsv`. The slot/region space sizes
    /// are not part of the tables and must be supplied from configuration.
    pub fn load_tsv(dir: &Path, slots_per_day: u32, region_count: u32) -> Result<Self> {
        let mut graph = KnowledgeGraph {
            slots_per_day,
            region_count,
            ..Default::default()
        };

        let entities = fs::File::open(dir.join("entities.tsv"))?;
        for line in std::io::BufReader::new(entities).lines() {
            let line = line?;
            let mut parts = line.split('\t');
            let idx: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("bad entities.tsv index".into()))?;
            let kind = parts.next().ok_or_else(|| Error::Data("bad entities.tsv type".into()))?;
            let key = parts.next().ok_or_else(|| Error::Data("bad entities.tsv key".into()))?;
            let assigned = match kind {
                "user" => graph.vocab.intern_user(key).0,
                "poi" => graph.vocab.intern_poi(key).0,
                other => return Err(Error::Data(format!("unknown entity type '{other}'"))),
            };
            if assigned != idx {
                return Err(Error::Data(format!(
                    "entities.tsv indices out of order: expected {assigned}, got {idx}"
                )));
            }
        }

        let relations = fs::File::open(dir.join("relations.tsv"))?;
        for line in std::io::BufReader::new(relations).lines() {
            let line = line?;
            let mut parts = line.split('\t');
            let idx: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("bad relations.tsv index".into()))?;
            let slot: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("bad relations.tsv slot".into()))?;
            let region: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("bad relations.tsv region".into()))?;
            if slot >= slots_per_day || region >= region_count {
                return Err(Error::Data(format!(
                    "relation {idx} references slot {slot}/region {region} outside the configured spaces"
                )));
            }
            let category = match parts.next() {
                None | Some("") => None,
                Some(key) => Some(graph.intern_category(key)),
            };
            let assigned = graph.compose_relation_id(slot, region, category);
            if assigned.0 != idx {
                return Err(Error::Data(format!(
                    "relations.tsv indices out of order: expected {}, got {idx}",
                    assigned.0
                )));
            }
        }

        let triples = fs::File::open(dir.join("triples.tsv"))?;
        for line in std::io::BufReader::new(triples).lines() {
            let line = line?;
            let mut parts = line.split('\t').map(|s| s.parse::<u32>());
            let (head, relation, tail) = match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(h)), Some(Ok(r)), Some(Ok(t))) => (h, r, t),
                _ => return Err(Error::Data("bad triples.tsv line".into())),
            };
            if head as usize >= graph.vocab.n_users()
                || tail as usize >= graph.vocab.n_pois()
                || relation as usize >= graph.relations.len()
            {
                return Err(Error::Data("triples.tsv references unknown index".into()));
            }
            graph.insert_positive(Triple {
                head: UserId(head),
                relation: RelationId(relation),
                tail: PoiId(tail),
            });
        }
        Ok(graph)
    }
}

/// Builds the graph from a training log: one positive triple per distinct
/// (user, composed relation path, POI) combination, with the relation
/// vocabulary restricted to observed combinations.
pub fn build_graph<T: Real>(
    train: &[CheckIn<T>],
    slots: &TimeSlotSpec,
    tz_offset_hours: f64,
    regions: &RegionModel<T>,
    use_category: bool,
) -> Result<KnowledgeGraph> {
    if train.is_empty() {
        return Err(Error::Data("cannot build a graph from an empty training log".into()));
    }
    let mut graph = KnowledgeGraph {
        slots_per_day: slots.slots_per_day(),
        region_count: regions.region_count,
        ..Default::default()
    };
    for c in train {
        let head = graph.vocab.intern_user(&c.user);
        let tail = graph.vocab.intern_poi(&c.poi);
        let slot = assign_time_slot(c.timestamp, slots, tz_offset_hours);
        let region = regions.region_of(c)?;
        let category = if use_category {
            c.category.as_deref().map(|key| graph.intern_category(key))
        } else {
            None
        };
        let relation = graph.compose_relation_id(slot, region, category);
        graph.insert_positive(Triple { head, relation, tail });
    }
    Ok(graph)
}
