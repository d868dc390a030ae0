//! `poirec`: a staged command-line pipeline for check-in driven POI
//! recommendation. Stages communicate through files in `--out-dir`:
//!
//! ```text
//! ingest       checkins.csv -> train.csv, test.csv, regions.json
//! build-graph  train.csv    -> entities.tsv, relations.tsv, triples.tsv
//! train-embed  graph        -> transr.json, loss_trace.csv
//! extract      model        -> candidates.tsv
//! train-mf     candidates   -> factors.json
//! recommend / evaluate / sweep-* / sparsity / synth
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poirec_core::checkin::{parse_checkins, split_by_date, SplitDataset, TimeSlotSpec};
use poirec_core::config::Config;
use poirec_core::error::{Error, Result};
use poirec_core::eval::{evaluate, metrics_to_csv, per_user_metrics_to_csv, Query};
use poirec_core::extract::{extract, CandidateSet};
use poirec_core::graph::{build_graph, KnowledgeGraph};
use poirec_core::mf::{train_combined, FactorModel};
use poirec_core::pipeline::{
    candidate_frequency_matrix, fit_region_model, homes_by_id, poi_coordinates,
    run_dim_sweep, run_sparsity_experiment, run_timeslot_sweep, sparsity_to_csv, sweep_to_csv,
    visited_by_id,
};
use poirec_core::region::RegionModel;
use poirec_core::synth::{generate_synthetic, SyntheticSpec};
use poirec_core::transr::{write_loss_trace, TransRModel};
use poirec_core::{CheckIn64, Recommender64};

#[derive(Parser)]
#[command(name = "poirec", version, about = "Translation-embedding POI recommendation pipeline")]
struct Cli {
    /// Pipeline configuration TOML; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding the pipeline artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Overrides every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a check-in CSV, split train/test by date, fit the region model.
    Ingest {
        /// Check-in CSV: user_id, poi_id, lat, lon, timestamp, category.
        #[arg(long)]
        input: PathBuf,
    },
    /// Build the user-POI graph tables from the train split.
    BuildGraph,
    /// Train the TransR embedding; writes the checkpoint and loss trace.
    TrainEmbed,
    /// Extract score- and distance-filtered candidate pairs.
    Extract,
    /// Train the combined matrix factorization over the candidates.
    TrainMf,
    /// Print and save the top-k POIs for one query.
    Recommend {
        #[arg(long)]
        user: String,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        /// Query timestamp (UTC seconds).
        #[arg(long)]
        time: i64,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Replay test-period queries and write metric CSVs.
    Evaluate {
        /// Cutoffs, e.g. 1,5,10,20; defaults to the config's k_list.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Retrain once per time-slot length and tabulate Prec/Rec@{1,10,20}.
    SweepTimeslot {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 2, 4, 8, 12, 24])]
        hours: Vec<u32>,
    },
    /// Retrain once per embedding dimension and tabulate Prec/Rec@{1,10,20}.
    SweepDim {
        #[arg(long, value_delimiter = ',', default_values_t = vec![70usize, 80, 90, 100, 110, 120])]
        dims: Vec<usize>,
    },
    /// Remove training data at several rates and re-evaluate at k = 10.
    Sparsity {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.3, 0.4])]
        fractions: Vec<f64>,
    },
    /// Generate a synthetic check-in log with a planted preference signal.
    Synth {
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        pois: usize,
        #[arg(long, default_value_t = 4)]
        regions: usize,
        /// Time slots per day (must divide 24).
        #[arg(long, default_value_t = 3)]
        slots: usize,
        /// Planted preference strength in [0, 1].
        #[arg(long, default_value_t = 0.9)]
        strength: f64,
        #[arg(long, default_value_t = 40)]
        checkins_per_user: usize,
        #[arg(long, default_value_t = 5)]
        preferred_per_user: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    let out_dir = &cli.out_dir;

    match cli.command {
        Command::Ingest { input } => cmd_ingest(&config, out_dir, &input),
        Command::BuildGraph => cmd_build_graph(&config, out_dir),
        Command::TrainEmbed => cmd_train_embed(&config, out_dir),
        Command::Extract => cmd_extract(&config, out_dir),
        Command::TrainMf => cmd_train_mf(&config, out_dir),
        Command::Recommend { user, lat, lon, time, k } => {
            cmd_recommend(&config, out_dir, user, (lat, lon), time, k)
        }
        Command::Evaluate { k } => cmd_evaluate(&config, out_dir, k),
        Command::SweepTimeslot { hours } => {
            let split = load_split(out_dir)?;
            let rows = run_timeslot_sweep(&split, &hours, &config)?;
            let csv = sweep_to_csv("hours", &rows);
            std::fs::write(out_dir.join("sweep_timeslot.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::SweepDim { dims } => {
            let split = load_split(out_dir)?;
            let rows = run_dim_sweep(&split, &dims, &config)?;
            let csv = sweep_to_csv("d", &rows);
            std::fs::write(out_dir.join("sweep_dim.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Sparsity { fractions } => {
            let split = load_split(out_dir)?;
            let seed = cli.seed.unwrap_or(config.data.kmeans_seed);
            let rows = run_sparsity_experiment(&split, &fractions, &config, seed)?;
            let csv = sparsity_to_csv(&rows);
            std::fs::write(out_dir.join("sparsity.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Synth {
            users,
            pois,
            regions,
            slots,
            strength,
            checkins_per_user,
            preferred_per_user,
            out,
        } => {
            let spec = SyntheticSpec {
                users,
                pois,
                regions,
                slots,
                strength,
                checkins_per_user,
                preferred_per_user,
                seed: cli.seed.unwrap_or(42),
            };
            let records = generate_synthetic::<f64>(&spec)?;
            write_checkins_csv(&out, &records)?;
            println!("wrote {} synthetic check-ins to {}", records.len(), out.display());
            Ok(())
        }
    }
}

// Artifact names inside --out-dir.
const TRAIN_CSV: &str = "train.csv";
const TEST_CSV: &str = "test.csv";
const REGIONS_JSON: &str = "regions.json";
const TRANSR_JSON: &str = "transr.json";
const LOSS_TRACE_CSV: &str = "loss_trace.csv";
const CANDIDATES_TSV: &str = "candidates.tsv";
const FACTORS_JSON: &str = "factors.json";

fn write_checkins_csv(path: &Path, records: &[CheckIn64]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "user_id,poi_id,lat,lon,timestamp,category")?;
    for c in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.user,
            c.poi,
            c.lat,
            c.lon,
            c.timestamp,
            c.category.as_deref().unwrap_or("")
        )?;
    }
    out.flush()?;
    Ok(())
}

fn load_checkins(path: &Path) -> Result<Vec<CheckIn64>> {
    let (records, _) = parse_checkins::<f64>(path, None)?;
    Ok(records)
}

fn load_split(out_dir: &Path) -> Result<SplitDataset<f64>> {
    let train = load_checkins(&out_dir.join(TRAIN_CSV))?;
    let test = load_checkins(&out_dir.join(TEST_CSV))?;
    let cutoff_timestamp = test
        .iter()
        .map(|c| c.timestamp)
        .min()
        .ok_or_else(|| Error::Data("test split is empty; rerun ingest".into()))?;
    Ok(SplitDataset { train, test, cutoff_timestamp })
}

fn load_region_model(config: &Config, out_dir: &Path) -> Result<RegionModel<f64>> {
    let mut model = RegionModel::<f64>::load_json(&out_dir.join(REGIONS_JSON))?;
    if let Some(labels) = &config.data.region_label_file {
        model.load_labels(labels)?;
    }
    Ok(model)
}

fn load_graph(config: &Config, out_dir: &Path) -> Result<KnowledgeGraph> {
    let regions = load_region_model(config, out_dir)?;
    let slots = TimeSlotSpec::new(config.data.slot_hours)?;
    KnowledgeGraph::load_tsv(out_dir, slots.slots_per_day(), regions.region_count)
}

fn cmd_ingest(config: &Config, out_dir: &Path, input: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (records, report) = parse_checkins::<f64>(input, None)?;
    println!(
        "parsed {} of {} lines ({} rejected)",
        report.parsed, report.total, report.rejected
    );
    let split = split_by_date(records, config.data.train_fraction)?;
    println!(
        "split at timestamp {}: {} train / {} test",
        split.cutoff_timestamp,
        split.train.len(),
        split.test.len()
    );
    let regions = fit_region_model(&split.train, config)?;
    println!("region model: {} regions", regions.region_count);

    write_checkins_csv(&out_dir.join(TRAIN_CSV), &split.train)?;
    write_checkins_csv(&out_dir.join(TEST_CSV), &split.test)?;
    regions.save_json(&out_dir.join(REGIONS_JSON))?;
    Ok(())
}

fn cmd_build_graph(config: &Config, out_dir: &Path) -> Result<()> {
    let train = load_checkins(&out_dir.join(TRAIN_CSV))?;
    let regions = load_region_model(config, out_dir)?;
    let slots = TimeSlotSpec::new(config.data.slot_hours)?;
    let graph = build_graph(&train, &slots, config.data.tz_offset, &regions, config.graph.use_category)?;
    println!(
        "graph: {} users, {} POIs, {} relations, {} triples",
        graph.vocab.n_users(),
        graph.vocab.n_pois(),
        graph.n_relations(),
        graph.positives().len()
    );
    graph.save_tsv(out_dir)?;
    Ok(())
}

fn cmd_train_embed(config: &Config, out_dir: &Path) -> Result<()> {
    let graph = load_graph(config, out_dir)?;
    let (model, trace) = TransRModel::<f64>::train(&graph, &config.transr)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("trained {} epochs: mean loss {first:.6} -> {last:.6}", trace.len());
    } else {
        println!("trained 0 epochs (initialization only)");
    }
    model.save_json(&out_dir.join(TRANSR_JSON))?;
    write_loss_trace(&out_dir.join(LOSS_TRACE_CSV), &trace)?;
    Ok(())
}

fn cmd_extract(config: &Config, out_dir: &Path) -> Result<()> {
    let train = load_checkins(&out_dir.join(TRAIN_CSV))?;
    let graph = load_graph(config, out_dir)?;
    let model = TransRModel::<f64>::load_json(&out_dir.join(TRANSR_JSON))?;
    let homes = homes_by_id(&poirec_core::checkin::fit_home_locations(&train), &graph);
    let coords = poi_coordinates(&train, &graph);
    let candidates = extract(&model, &graph, &homes, &coords, &config.extraction, None)?;
    println!(
        "candidates: {} pairs over {} users x {} POIs",
        candidates.pairs.len(),
        candidates.users.len(),
        candidates.pois.len()
    );
    candidates.save_tsv(&out_dir.join(CANDIDATES_TSV), &graph)?;
    Ok(())
}

fn cmd_train_mf(config: &Config, out_dir: &Path) -> Result<()> {
    let train = load_checkins(&out_dir.join(TRAIN_CSV))?;
    let graph = load_graph(config, out_dir)?;
    let candidates = CandidateSet::<f64>::load_tsv(&out_dir.join(CANDIDATES_TSV), &graph)?;
    let global =
        poirec_core::checkin::build_frequency_matrix(&train, graph.vocab.users(), graph.vocab.pois())?;
    let restricted = candidate_frequency_matrix(&train, &graph, &candidates)?;
    let (factors, st_trace, pref_trace) = train_combined::<f64>(
        &restricted,
        &global,
        candidates.users.clone(),
        candidates.pois.clone(),
        &config.mf,
    )?;
    println!(
        "factorizations: spatio-temporal objective {:.6}, preference objective {:.6}",
        st_trace.last().copied().unwrap_or(f64::NAN),
        pref_trace.last().copied().unwrap_or(f64::NAN)
    );
    factors.save_json(&out_dir.join(FACTORS_JSON))?;
    Ok(())
}

fn load_recommender(config: &Config, out_dir: &Path) -> Result<Recommender64> {
    let train = load_checkins(&out_dir.join(TRAIN_CSV))?;
    let graph = load_graph(config, out_dir)?;
    let region_model = load_region_model(config, out_dir)?;
    let candidates = CandidateSet::<f64>::load_tsv(&out_dir.join(CANDIDATES_TSV), &graph)?;
    let factors = FactorModel::<f64>::load_json(&out_dir.join(FACTORS_JSON))?;
    let train_visited = visited_by_id(&train, &graph);
    let poi_coords = poi_coordinates(&train, &graph);
    Ok(Recommender64 {
        graph,
        region_model,
        slot_spec: TimeSlotSpec::new(config.data.slot_hours)?,
        tz_offset_hours: config.data.tz_offset,
        candidates,
        factors,
        train_visited,
        exclude_visited: config.eval.exclude_train_visited,
        poi_coords,
    })
}

fn cmd_recommend(
    config: &Config,
    out_dir: &Path,
    user: String,
    location: (f64, f64),
    time: i64,
    k: usize,
) -> Result<()> {
    let rec = load_recommender(config, out_dir)?;
    let query = Query { user, location, time };
    let list = rec.recommend_topk(&query, k)?;
    for (rank, (poi, score)) in list.items.iter().enumerate() {
        println!("{}\t{}\t{}", rank + 1, poi, score);
    }
    list.save_tsv(&out_dir.join("recommendations.tsv"))?;
    Ok(())
}

fn cmd_evaluate(config: &Config, out_dir: &Path, k: Option<Vec<usize>>) -> Result<()> {
    let rec = load_recommender(config, out_dir)?;
    let split = load_split(out_dir)?;
    let ks = k.unwrap_or_else(|| config.eval.k_list.clone());
    let reports = evaluate(&rec, &split.train, &split.test, &ks)?;
    let csv = metrics_to_csv(&reports);
    std::fs::write(out_dir.join("metrics.csv"), &csv)?;
    std::fs::write(out_dir.join("metrics_per_user.csv"), per_user_metrics_to_csv(&reports))?;
    print!("{csv}");
    Ok(())
}
