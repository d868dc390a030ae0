//! Candidate extraction: rank learned user/POI pairs by TransR score, prune
//! to the best score fraction, and filter POIs by great-circle distance from
//! each user's home-location Gaussian.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkin::HomeLocation;
use crate::error::{Error, Result};
use crate::geo::haversine_km;
use crate::graph::{KnowledgeGraph, PoiId, RelationId, UserId};
use crate::num::{real, Real};
use crate::transr::TransRModel;

/// Thresholds controlling candidate extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Fraction of the best-scored pairs to keep, in (0, 1].
    pub theta_keep: f64,
    /// Home-location distance radius in kilometers.
    pub theta_d_km: f64,
    /// Radius inflation per unit of home-Gaussian spread, >= 0.
    pub sigma_multiplier: f64,
    pub max_candidates: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            theta_keep: 1.0,
            theta_d_km: 50.0,
            sigma_multiplier: 1.0,
            max_candidates: 1_000_000,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_keep > 0.0 && self.theta_keep <= 1.0) {
            return Err(Error::Config(format!(
                "theta_keep must be in (0, 1], got {}",
                self.theta_keep
            )));
        }
        if !self.theta_d_km.is_finite() || self.theta_d_km <= 0.0 {
            return Err(Error::Config("theta_d_km must be positive".into()));
        }
        if self.sigma_multiplier < 0.0 {
            return Err(Error::Config("sigma_multiplier must be non-negative".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("max_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// A (user, POI) pair scored under one relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair<T> {
    pub user: UserId,
    pub poi: PoiId,
    pub score: T,
}

/// A scored pair that survived the distance filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair<T> {
    pub user: UserId,
    pub poi: PoiId,
    pub score: T,
    pub distance_km: T,
}

/// The extracted user and POI sets feeding the spatio-temporal matrix
/// factorization, with per-pair scores retained for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    /// Retained users, ordered by their best (ascending) score.
    pub users: Vec<UserId>,
    /// Retained POIs, ordered by their best (ascending) score.
    pub pois: Vec<PoiId>,
    /// Surviving pairs in ascending score order, deduplicated to each
    /// pair's best score.
    pub pairs: Vec<CandidatePair<T>>,
    by_user: HashMap<UserId, Vec<usize>>,
}

impl<T: Real> CandidateSet<T> {
    fn from_pairs(mut pairs: Vec<CandidatePair<T>>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data(
                "empty candidate set: extraction thresholds removed every pair".into(),
            ));
        }
        pairs.sort_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .expect("finite scores")
                .then(a.user.cmp(&b.user))
                .then(a.poi.cmp(&b.poi))
        });
        let mut users = Vec::new();
        let mut pois = Vec::new();
        let mut by_user: HashMap<UserId, Vec<usize>> = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if !by_user.contains_key(&p.user) {
                users.push(p.user);
            }
            by_user.entry(p.user).or_default().push(i);
            if !pois.contains(&p.poi) {
                pois.push(p.poi);
            }
        }
        Ok(CandidateSet { users, pois, pairs, by_user })
    }

    /// Indices into `pairs` for one user's surviving POIs.
    pub fn pairs_for_user(&self, user: UserId) -> &[usize] {
        self.by_user.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Writes pairs as `user_key TAB poi_key TAB score TAB distance_km`.
    pub fn save_tsv(&self, path: &Path, graph: &KnowledgeGraph) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for p in &self.pairs {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                graph.vocab.user_key(p.user),
                graph.vocab.poi_key(p.poi),
                p.score,
                p.distance_km
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_tsv(path: &Path, graph: &KnowledgeGraph) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut pairs = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            let bad = || Error::Data(format!("bad candidates line {}", lineno + 1));
            let user_key = parts.next().ok_or_else(bad)?;
            let poi_key = parts.next().ok_or_else(bad)?;
            let score: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let distance: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let user = graph
                .vocab
                .user_id(user_key)
                .ok_or_else(|| Error::Data(format!("unknown user '{user_key}' in candidates")))?;
            let poi = graph
                .vocab
                .poi_id(poi_key)
                .ok_or_else(|| Error::Data(format!("unknown poi '{poi_key}' in candidates")))?;
            pairs.push(CandidatePair { user, poi, score: real(score), distance_km: real(distance) });
        }
        Self::from_pairs(pairs)
    }
}

/// Scores every (user, POI) pair under relation `r` and sorts ascending by
/// score; ties break by (user index, POI index).
pub fn rank_pairs<T: Real>(
    model: &TransRModel<T>,
    graph: &KnowledgeGraph,
    r: RelationId,
) -> Result<Vec<ScoredPair<T>>> {
    if r.0 as usize >= graph.n_relations() {
        return Err(Error::Data(format!("unknown relation {}", r.0)));
    }
    let mut pairs = Vec::with_capacity(graph.vocab.n_users() * graph.vocab.n_pois());
    for u in 0..graph.vocab.n_users() as u32 {
        for v in 0..graph.vocab.n_pois() as u32 {
            let user = UserId(u);
            let poi = PoiId(v);
            let score = model.score(user, r, poi)?;
            if !score.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite score for pair ({u}, {v})"
                )));
            }
            pairs.push(ScoredPair { user, poi, score });
        }
    }
    pairs.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .expect("finite scores")
            .then(a.user.cmp(&b.user))
            .then(a.poi.cmp(&b.poi))
    });
    Ok(pairs)
}

/// The same ranking worst-first, for reading the translation in the
/// POI-to-user direction.
pub fn rank_pairs_descending<T: Real>(
    model: &TransRModel<T>,
    graph: &KnowledgeGraph,
    r: RelationId,
) -> Result<Vec<ScoredPair<T>>> {
    let mut pairs = rank_pairs(model, graph, r)?;
    pairs.reverse();
    Ok(pairs)
}

/// Keeps the best `ceil(theta * n)` pairs of an ascending-sorted ranking.
pub fn prune_by_score<T: Real>(ranked: Vec<ScoredPair<T>>, theta_keep: f64) -> Vec<ScoredPair<T>> {
    let keep = (theta_keep * ranked.len() as f64).ceil() as usize;
    let mut ranked = ranked;
    ranked.truncate(keep.min(ranked.len()));
    ranked
}

/// Keeps (u, v) iff `haversine(mu_u, v) <= theta_d + sigma_multiplier * s_u`,
/// where `s_u` is the user's home-Gaussian spread in km. Order is preserved
/// and output is capped at `max_candidates`.
pub fn filter_by_distance<T: Real>(
    pairs: &[ScoredPair<T>],
    homes: &HashMap<UserId, HomeLocation<T>>,
    poi_coords: &HashMap<PoiId, (T, T)>,
    cfg: &ExtractionConfig,
) -> Result<Vec<CandidatePair<T>>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for p in pairs {
        if out.len() >= cfg.max_candidates {
            break;
        }
        let home = homes
            .get(&p.user)
            .ok_or_else(|| Error::Data(format!("no home location for user index {}", p.user.0)))?;
        let coords = poi_coords
            .get(&p.poi)
            .ok_or_else(|| Error::Data(format!("no coordinates for poi index {}", p.poi.0)))?;
        let distance = haversine_km(home.mu, *coords);
        let radius = real::<T>(cfg.theta_d_km) + real::<T>(cfg.sigma_multiplier) * home.spread_km();
        if distance <= radius {
            out.push(CandidatePair { user: p.user, poi: p.poi, score: p.score, distance_km: distance });
        }
    }
    Ok(out)
}

/// Full extraction: rank, prune, and distance-filter every relation (or the
/// given subset), then union the surviving pairs keeping each pair's best
/// score. Errors if nothing survives.
pub fn extract<T: Real>(
    model: &TransRModel<T>,
    graph: &KnowledgeGraph,
    homes: &HashMap<UserId, HomeLocation<T>>,
    poi_coords: &HashMap<PoiId, (T, T)>,
    cfg: &ExtractionConfig,
    relations: Option<&[RelationId]>,
) -> Result<CandidateSet<T>> {
    cfg.validate()?;
    let all: Vec<RelationId> = (0..graph.n_relations() as u32).map(RelationId).collect();
    let relations = relations.unwrap_or(&all);

    let mut best: HashMap<(UserId, PoiId), CandidatePair<T>> = HashMap::new();
    for &r in relations {
        let ranked = rank_pairs(model, graph, r)?;
        let pruned = prune_by_score(ranked, cfg.theta_keep);
        for pair in filter_by_distance(&pruned, homes, poi_coords, cfg)? {
            best.entry((pair.user, pair.poi))
                .and_modify(|cur| {
                    if pair.score < cur.score {
                        *cur = pair;
                    }
                })
                .or_insert(pair);
        }
    }
    CandidateSet::from_pairs(best.into_values().collect())
}
