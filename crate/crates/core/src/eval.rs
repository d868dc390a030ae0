//! Query answering and offline evaluation: top-k recommendation over the
//! trained models and Prec@k / Rec@k / F1@k against held-out check-ins.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use crate::checkin::{assign_time_slot, CheckIn, TimeSlotSpec};
use crate::error::{Error, Result};
use crate::extract::CandidateSet;
use crate::geo::haversine_km;
use crate::graph::{KnowledgeGraph, PoiId, UserId};
use crate::mf::FactorModel;
use crate::num::Real;
use crate::region::{RegionMode, RegionModel};

/// A recommendation request: who, where, when.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<T> {
    pub user: String,
    pub location: (T, T),
    pub time: i64,
}

/// Ranked POI keys with combined scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList<T> {
    pub query: Query<T>,
    pub items: Vec<(String, T)>,
}

impl<T: Real> RecommendationList<T> {
    /// Writes `rank TAB poi_key TAB score` lines.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (rank, (poi, score)) in self.items.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", rank + 1, poi, score)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-user evaluation detail at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: String,
    /// Distinct POIs the user visits in the test period.
    pub truth_size: usize,
    /// Total test check-ins (ground-truth visit frequency).
    pub test_checkins: usize,
    pub hits: usize,
    pub prec: f64,
    pub rec: f64,
}

/// Aggregate metrics at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
    pub per_user: Vec<UserMetrics>,
}

fn hits_at_k<I: Eq + Hash>(list: &[I], truth: &HashSet<I>, k: usize) -> usize {
    list.iter().take(k).filter(|item| truth.contains(item)).count()
}

/// Mean over users of `|top-k ∩ truth| / k`.
pub fn precision_at_k<I: Eq + Hash>(lists: &[Vec<I>], truths: &[HashSet<I>], k: usize) -> Result<f64> {
    validate_metric_inputs(lists, truths, k)?;
    let sum: f64 = lists
        .iter()
        .zip(truths)
        .map(|(list, truth)| hits_at_k(list, truth, k) as f64 / k as f64)
        .sum();
    Ok(sum / lists.len() as f64)
}

/// Mean over users of `|top-k ∩ truth| / |truth|`.
pub fn recall_at_k<I: Eq + Hash>(lists: &[Vec<I>], truths: &[HashSet<I>], k: usize) -> Result<f64> {
    validate_metric_inputs(lists, truths, k)?;
    let sum: f64 = lists
        .iter()
        .zip(truths)
        .map(|(list, truth)| hits_at_k(list, truth, k) as f64 / truth.len() as f64)
        .sum();
    Ok(sum / lists.len() as f64)
}

/// Harmonic mean of precision and recall; zero when both vanish.
pub fn f1_at_k(prec: f64, rec: f64) -> f64 {
    if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    }
}

fn validate_metric_inputs<I>(lists: &[Vec<I>], truths: &[HashSet<I>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("metric cutoff k must be at least 1".into()));
    }
    if lists.len() != truths.len() || lists.is_empty() {
        return Err(Error::Data("metric inputs must be non-empty and aligned".into()));
    }
    if truths.iter().any(HashSet::is_empty) {
        return Err(Error::Data("every evaluated user needs a non-empty truth set".into()));
    }
    Ok(())
}

/// Expected Prec@k of a uniform random ranking, from the hypergeometric
/// mean: for each user, `E[hits]/k = successes / pool`.
pub fn random_ranking_precision_baseline(per_user: &[(usize, usize)]) -> f64 {
    if per_user.is_empty() {
        return 0.0;
    }
    let sum: f64 = per_user
        .iter()
        .map(|&(successes, pool)| if pool > 0 { successes as f64 / pool as f64 } else { 0.0 })
        .sum();
    sum / per_user.len() as f64
}

/// Everything needed to answer queries against a trained pipeline.
#[derive(Debug, Clone)]
pub struct Recommender<T: Real> {
    pub graph: KnowledgeGraph,
    pub region_model: RegionModel<T>,
    pub slot_spec: TimeSlotSpec,
    pub tz_offset_hours: f64,
    pub candidates: CandidateSet<T>,
    pub factors: FactorModel<T>,
    /// POIs each user visited in training, excluded from recommendations
    /// when `exclude_visited` is set.
    pub train_visited: HashMap<UserId, HashSet<PoiId>>,
    pub exclude_visited: bool,
    pub poi_coords: HashMap<PoiId, (T, T)>,
}

impl<T: Real> Recommender<T> {
    fn resolve_region(&self, q: &Query<T>) -> Result<u32> {
        match self.region_model.mode {
            RegionMode::Kmeans => self.region_model.assign_region(q.location),
            RegionMode::PrecomputedLabels => {
                // No coordinate table exists for administrative labels; use
                // the label of the nearest known POI.
                let mut best: Option<(T, PoiId)> = None;
                for (&poi, &coords) in &self.poi_coords {
                    let d = haversine_km(q.location, coords);
                    match best {
                        Some((bd, bp)) if d > bd || (d == bd && poi >= bp) => {}
                        _ => best = Some((d, poi)),
                    }
                }
                let (_, poi) = best.ok_or_else(|| Error::Data("no POI coordinates available".into()))?;
                self.region_model.region_of_poi_key(self.graph.vocab.poi_key(poi))
            }
        }
    }

    /// Top-k POIs for a query: resolves the (slot, region) context, scores
    /// the user's surviving candidate POIs with the combined model, sorts
    /// descending (ties by POI index), and drops train-visited POIs.
    pub fn recommend_topk(&self, q: &Query<T>, k: usize) -> Result<RecommendationList<T>> {
        let user = self
            .graph
            .vocab
            .user_id(&q.user)
            .ok_or_else(|| Error::Data(format!("unknown user '{}'", q.user)))?;
        let slot = assign_time_slot(q.time, &self.slot_spec, self.tz_offset_hours);
        let region = self.resolve_region(q)?;
        // The relation context; composed paths not observed in training have
        // no id, which is fine for scoring.
        let _context = self.graph.relation_id(slot, region, None);

        if k == 0 {
            return Ok(RecommendationList { query: q.clone(), items: Vec::new() });
        }

        let visited = self.train_visited.get(&user);
        let mut scored: Vec<(PoiId, T)> = Vec::new();
        for &i in self.candidates.pairs_for_user(user) {
            let poi = self.candidates.pairs[i].poi;
            if self.exclude_visited && visited.is_some_and(|s| s.contains(&poi)) {
                continue;
            }
            scored.push((poi, self.factors.combine(user, poi)?));
        }
        if scored.is_empty() {
            return Err(Error::Data(format!("empty candidate pool for user '{}'", q.user)));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        let items = scored
            .into_iter()
            .map(|(poi, score)| (self.graph.vocab.poi_key(poi).to_string(), score))
            .collect();
        Ok(RecommendationList { query: q.clone(), items })
    }
}

/// Replays test-period queries per user and reports metrics at each cutoff.
///
/// Evaluated users have at least one train and one test check-in. Each query
/// uses the coordinates of the user's last train check-in and the timestamp
/// of their first test check-in; the truth set is their distinct test POIs.
/// A user whose candidate pool is empty scores zero hits.
pub fn evaluate<T: Real>(
    rec: &Recommender<T>,
    train: &[CheckIn<T>],
    test: &[CheckIn<T>],
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("evaluation cutoffs must be positive".into()));
    }
    let max_k = *ks.iter().max().expect("non-empty");

    let mut last_train: HashMap<&str, &CheckIn<T>> = HashMap::new();
    for c in train {
        match last_train.get(c.user.as_str()) {
            Some(prev) if prev.timestamp > c.timestamp => {}
            _ => {
                last_train.insert(&c.user, c);
            }
        }
    }

    let mut user_order: Vec<&str> = Vec::new();
    let mut truth: HashMap<&str, HashSet<String>> = HashMap::new();
    let mut first_test_ts: HashMap<&str, i64> = HashMap::new();
    let mut test_counts: HashMap<&str, usize> = HashMap::new();
    for c in test {
        if !truth.contains_key(c.user.as_str()) {
            user_order.push(&c.user);
        }
        truth.entry(&c.user).or_default().insert(c.poi.clone());
        let entry = first_test_ts.entry(&c.user).or_insert(c.timestamp);
        if c.timestamp < *entry {
            *entry = c.timestamp;
        }
        *test_counts.entry(&c.user).or_default() += 1;
    }

    let mut users: Vec<String> = Vec::new();
    let mut lists: Vec<Vec<String>> = Vec::new();
    let mut truths: Vec<HashSet<String>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for user in user_order {
        let Some(anchor) = last_train.get(user) else {
            continue; // no training history: not evaluable
        };
        if rec.graph.vocab.user_id(user).is_none() {
            continue;
        }
        let q = Query { user: user.to_string(), location: anchor.coords(), time: first_test_ts[user] };
        let list = match rec.recommend_topk(&q, max_k) {
            Ok(list) => list.items.into_iter().map(|(poi, _)| poi).collect(),
            // An extracted-away user still counts, with zero hits.
            Err(Error::Data(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        users.push(user.to_string());
        lists.push(list);
        truths.push(truth[user].clone());
        counts.push(test_counts[user]);
    }
    if users.is_empty() {
        return Err(Error::Data(
            "no evaluable users: none have both train and test check-ins".into(),
        ));
    }

    let mut reports = Vec::with_capacity(ks.len());
    for &k in ks {
        let prec = precision_at_k(&lists, &truths, k)?;
        let rec_ = recall_at_k(&lists, &truths, k)?;
        let per_user = users
            .iter()
            .zip(&lists)
            .zip(&truths)
            .zip(&counts)
            .map(|(((user, list), truth), &test_checkins)| {
                let hits = hits_at_k(list, truth, k);
                UserMetrics {
                    user: user.clone(),
                    truth_size: truth.len(),
                    test_checkins,
                    hits,
                    prec: hits as f64 / k as f64,
                    rec: hits as f64 / truth.len() as f64,
                }
            })
            .collect();
        reports.push(MetricsReport { k, prec, rec: rec_, f1: f1_at_k(prec, rec_), per_user });
    }
    Ok(reports)
}

/// Renders reports as `k,prec,rec,f1` CSV.
pub fn metrics_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("k,prec,rec,f1\n");
    for r in reports {
        out.push_str(&format!("{},{},{},{}\n", r.k, r.prec, r.rec, r.f1));
    }
    out
}

/// Renders the per-user breakdown as CSV.
pub fn per_user_metrics_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("k,user,truth_size,test_checkins,hits,prec,rec\n");
    for r in reports {
        for u in &r.per_user {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k, u.user, u.truth_size, u.test_checkins, u.hits, u.prec, u.rec
            ));
        }
    }
    out
}
