//! End-to-end pipeline assembly and the experiment drivers: data sparsity,
//! time-slot sweep, and embedding-dimension sweep.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkin::{
    build_frequency_matrix, fit_home_locations, CheckIn, FrequencyMatrix, HomeLocation,
    SplitDataset, TimeSlotSpec,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, Recommender};
use crate::extract::{extract, CandidateSet};
use crate::graph::{build_graph, KnowledgeGraph, PoiId, UserId};
use crate::mf::train_combined;
use crate::num::Real;
use crate::region::{cluster_regions, RegionModel};
use crate::transr::TransRModel;

/// A fully trained pipeline plus its training traces.
pub struct PipelineOutput<T: Real> {
    pub recommender: Recommender<T>,
    pub transr: TransRModel<T>,
    pub transr_trace: Vec<T>,
    pub st_trace: Vec<T>,
    pub pref_trace: Vec<T>,
}

/// First-seen coordinates of every POI in the log.
pub fn poi_coordinates<T: Real>(
    train: &[CheckIn<T>],
    graph: &KnowledgeGraph,
) -> HashMap<PoiId, (T, T)> {
    let mut coords = HashMap::new();
    for c in train {
        if let Some(poi) = graph.vocab.poi_id(&c.poi) {
            coords.entry(poi).or_insert_with(|| c.coords());
        }
    }
    coords
}

/// Home locations keyed by graph user id.
pub fn homes_by_id<T: Real>(
    homes: &HashMap<String, HomeLocation<T>>,
    graph: &KnowledgeGraph,
) -> HashMap<UserId, HomeLocation<T>> {
    homes
        .iter()
        .filter_map(|(key, home)| graph.vocab.user_id(key).map(|id| (id, home.clone())))
        .collect()
}

/// Train-visited POI sets keyed by graph ids.
pub fn visited_by_id<T: Real>(
    train: &[CheckIn<T>],
    graph: &KnowledgeGraph,
) -> HashMap<UserId, HashSet<PoiId>> {
    let mut visited: HashMap<UserId, HashSet<PoiId>> = HashMap::new();
    for c in train {
        if let (Some(u), Some(p)) = (graph.vocab.user_id(&c.user), graph.vocab.poi_id(&c.poi)) {
            visited.entry(u).or_default().insert(p);
        }
    }
    visited
}

/// Builds the region model from config: precomputed labels when a label file
/// is set, k-means over the train coordinates otherwise.
pub fn fit_region_model<T: Real>(train: &[CheckIn<T>], cfg: &Config) -> Result<RegionModel<T>> {
    match &cfg.data.region_label_file {
        Some(path) => RegionModel::from_label_file(path),
        None => {
            let points: Vec<(T, T)> = train.iter().map(|c| c.coords()).collect();
            cluster_regions(&points, cfg.data.region_k, cfg.data.kmeans_seed, cfg.data.kmeans_max_iters)
        }
    }
}

/// The restricted frequency matrix over the extracted candidate sets.
pub fn candidate_frequency_matrix<T: Real>(
    train: &[CheckIn<T>],
    graph: &KnowledgeGraph,
    candidates: &CandidateSet<T>,
) -> Result<FrequencyMatrix> {
    let rows: Vec<String> =
        candidates.users.iter().map(|&u| graph.vocab.user_key(u).to_string()).collect();
    let cols: Vec<String> =
        candidates.pois.iter().map(|&p| graph.vocab.poi_key(p).to_string()).collect();
    build_frequency_matrix(train, &rows, &cols)
}

/// Runs every stage on an existing split: regions, homes, graph, TransR,
/// extraction, the two factorizations, and recommender assembly.
pub fn run_pipeline<T: Real>(split: &SplitDataset<T>, cfg: &Config) -> Result<PipelineOutput<T>> {
    cfg.validate()?;
    let slot_spec = TimeSlotSpec::new(cfg.data.slot_hours)?;
    let region_model = fit_region_model(&split.train, cfg)?;
    let graph = build_graph(
        &split.train,
        &slot_spec,
        cfg.data.tz_offset,
        &region_model,
        cfg.graph.use_category,
    )?;
    let (transr, transr_trace) = TransRModel::train(&graph, &cfg.transr)?;

    let homes = homes_by_id(&fit_home_locations(&split.train), &graph);
    let poi_coords = poi_coordinates(&split.train, &graph);
    let candidates = extract(&transr, &graph, &homes, &poi_coords, &cfg.extraction, None)?;

    let global = build_frequency_matrix(&split.train, graph.vocab.users(), graph.vocab.pois())?;
    let restricted = candidate_frequency_matrix(&split.train, &graph, &candidates)?;
    let (factors, st_trace, pref_trace) = train_combined(
        &restricted,
        &global,
        candidates.users.clone(),
        candidates.pois.clone(),
        &cfg.mf,
    )?;

    let train_visited = visited_by_id(&split.train, &graph);
    let recommender = Recommender {
        graph,
        region_model,
        slot_spec,
        tz_offset_hours: cfg.data.tz_offset,
        candidates,
        factors,
        train_visited,
        exclude_visited: cfg.eval.exclude_train_visited,
        poi_coords,
    };
    Ok(PipelineOutput { recommender, transr, transr_trace, st_trace, pref_trace })
}

/// Trains on the split and evaluates at the config's cutoffs.
pub fn run_and_evaluate<T: Real>(
    split: &SplitDataset<T>,
    cfg: &Config,
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    let output = run_pipeline(split, cfg)?;
    evaluate(&output.recommender, &split.train, &split.test, ks)
}

/// One row of a sparsity experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub fraction: f64,
    pub prec10: f64,
    pub rec10: f64,
    pub f110: f64,
}

/// Removes each fraction of the training data (uniformly at random, nested
/// across fractions for a fixed seed), retrains the full pipeline, and
/// evaluates Prec/Rec/F1 at k = 10 against the unchanged test set.
pub fn run_sparsity_experiment<T: Real>(
    split: &SplitDataset<T>,
    fractions: &[f64],
    cfg: &Config,
    seed: u64,
) -> Result<Vec<SparsityRow>> {
    if fractions.is_empty() {
        return Err(Error::Config("sparsity experiment needs at least one fraction".into()));
    }
    for &f in fractions {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!(
                "sparsity fractions must be in [0, 1), got {f}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let drop = ((fraction * split.train.len() as f64).round() as usize).min(split.train.len());
        let dropped: HashSet<usize> = order[..drop].iter().copied().collect();
        let train: Vec<CheckIn<T>> = split
            .train
            .iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, c)| c.clone())
            .collect();
        if train.is_empty() {
            return Err(Error::Config(format!(
                "sparsity fraction {fraction} leaves no training data"
            )));
        }
        let reduced_split = SplitDataset {
            train,
            test: split.test.clone(),
            cutoff_timestamp: split.cutoff_timestamp,
        };
        let reports = run_and_evaluate(&reduced_split, cfg, &[10])?;
        let r = &reports[0];
        rows.push(SparsityRow { fraction, prec10: r.prec, rec10: r.rec, f110: r.f1 });
    }
    Ok(rows)
}

/// Renders sparsity rows as `fraction,prec@10,rec@10,f1@10` CSV.
pub fn sparsity_to_csv(rows: &[SparsityRow]) -> String {
    let mut out = String::from("fraction,prec@10,rec@10,f1@10\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.fraction, r.prec10, r.rec10, r.f110));
    }
    out
}

/// One row of a parameter sweep, mirroring the reference table columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: u64,
    pub prec1: f64,
    pub prec10: f64,
    pub prec20: f64,
    pub rec1: f64,
    pub rec10: f64,
    pub rec20: f64,
}

fn sweep_metrics<T: Real>(split: &SplitDataset<T>, cfg: &Config, param: u64) -> Result<SweepRow> {
    let reports = run_and_evaluate(split, cfg, &[1, 10, 20])?;
    Ok(SweepRow {
        param,
        prec1: reports[0].prec,
        prec10: reports[1].prec,
        prec20: reports[2].prec,
        rec1: reports[0].rec,
        rec10: reports[1].rec,
        rec20: reports[2].rec,
    })
}

/// Retrains the whole pipeline once per slot length and tabulates
/// Prec/Rec at k = 1, 10, 20. The usual grid is {1, 2, 4, 8, 12, 24}.
pub fn run_timeslot_sweep<T: Real>(
    split: &SplitDataset<T>,
    hours: &[u32],
    cfg: &Config,
) -> Result<Vec<SweepRow>> {
    if hours.is_empty() {
        return Err(Error::Config("time-slot sweep needs at least one slot length".into()));
    }
    let mut rows = Vec::with_capacity(hours.len());
    for &h in hours {
        TimeSlotSpec::new(h)?;
        let mut point_cfg = cfg.clone();
        point_cfg.data.slot_hours = h;
        rows.push(sweep_metrics(split, &point_cfg, h as u64)?);
    }
    Ok(rows)
}

/// Retrains the embedding once per dimension (entity and relation dims move
/// together) and tabulates Prec/Rec at k = 1, 10, 20. The usual grid is
/// {70, 80, 90, 100, 110, 120}.
pub fn run_dim_sweep<T: Real>(
    split: &SplitDataset<T>,
    dims: &[usize],
    cfg: &Config,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::Config("dimension sweep needs at least one dimension".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut point_cfg = cfg.clone();
        point_cfg.transr.dim_d = d;
        point_cfg.transr.dim_k = d;
        rows.push(sweep_metrics(split, &point_cfg, d as u64)?);
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with the given parameter column name.
pub fn sweep_to_csv(param_name: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{param_name},prec@1,prec@10,prec@20,rec@1,rec@10,rec@20\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.param, r.prec1, r.prec10, r.prec20, r.rec1, r.rec10, r.rec20
        ));
    }
    out
}
