//! Batch command-line surface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    chain_similarity_matrix, classify_regime, distribution_table, write_distribution_csv,
    write_similarity_matrix,
};
use crate::archive::HistoryArchive;
use crate::calibration::grid_search;
use crate::classifiers::EigenOrder;
use crate::config::{ConfigLayer, RunConfig};
use crate::correlation::Normalization;
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, CalibrationSummary};
use crate::ingest::{assemble_all, load_calendar, parse_records, write_rejects};
use crate::model::{StationTable, Trip, UserHistory};
use crate::patterns::{default_gaps, verify_patterns, PatternConfig};
use crate::pipeline::{par_map, predict_days, GraphCache, HyperParams, Pipeline};
use crate::synthetic::{china_2018_calendar, generate_population, write_corpus, ArchetypeSpec};

#[derive(Debug, Parser)]
#[command(name = "tripchain", version, about = "Predict individual transit trip chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "lp|embed")]
    pub pipeline: Option<Pipeline>,
    /// Comma-separated horizons in days.
    #[arg(long, global = true, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long, global = true, value_name = "global|marginal")]
    pub normalization: Option<Normalization>,
    #[arg(long, global = true, value_name = "smallest|largest")]
    pub eigen_order: Option<EigenOrder>,
    /// Comma-separated subset of f1,f2,f3,corr.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ablate: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub min_active_days: Option<usize>,
    #[arg(long, global = true)]
    pub validation_days: Option<usize>,
    /// Days treated as known (default: all but the longest horizon).
    #[arg(long, global = true)]
    pub known_days: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble records and a calendar into a history archive.
    Ingest {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        calendar: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampled pattern tests and the gap curve.
    Patterns {
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pairs per sample set.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        exclude_empty: bool,
    },
    /// Calibrate each user and predict the days after the known block.
    Predict {
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare methods over the configured horizons.
    Evaluate {
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of random_guess,last_week,ngram,lp,embed.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Traveller classes and weight distribution from calibration results.
    Cluster {
        /// calibration.json written by `evaluate`.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus from a TOML population spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Day-by-day chain similarity matrix of one user.
    Simmatrix {
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        user: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn flag_layer(c: &CommonArgs) -> ConfigLayer {
    ConfigLayer {
        seed: c.seed,
        workers: c.workers,
        pipeline: c.pipeline,
        horizons: c.horizons.clone(),
        normalization: c.normalization,
        eigen_order: c.eigen_order,
        ablate: c.ablate.clone(),
        min_active_days: c.min_active_days,
        validation_days: c.validation_days,
        known_days: c.known_days,
        ..ConfigLayer::default()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut flags = flag_layer(&cli.common);
    match &cli.command {
        Command::Ingest { records, calendar, out } => {
            flags.records = records.clone();
            flags.calendar = calendar.clone();
            flags.out = out.clone();
        }
        Command::Patterns { archive, out, pairs, exclude_empty } => {
            flags.archive = archive.clone();
            flags.out = out.clone();
            flags.pairs = *pairs;
            flags.exclude_empty = exclude_empty.then_some(true);
        }
        Command::Predict { archive, out } | Command::Simmatrix { archive, out, .. } => {
            flags.archive = archive.clone();
            flags.out = out.clone();
        }
        Command::Evaluate { archive, out, methods } => {
            flags.archive = archive.clone();
            flags.out = out.clone();
            flags.methods = methods.clone();
        }
        Command::Cluster { out, .. } | Command::Synth { out, .. } => flags.out = out.clone(),
    }
    let file = match &cli.common.config {
        Some(p) => ConfigLayer::load(p)?,
        None => ConfigLayer::default(),
    };
    let layer = flags.over(file);
    let explicit_seed = layer.seed;
    let cfg = RunConfig::resolve(layer)?;
    match cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Patterns { .. } => cmd_patterns(&cfg),
        Command::Predict { .. } => cmd_predict(&cfg),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Cluster { calibration, .. } => cmd_cluster(&cfg, &calibration),
        Command::Synth { spec, .. } => cmd_synth(&cfg, &spec, explicit_seed),
        Command::Simmatrix { user, .. } => cmd_simmatrix(&cfg, &user),
    }
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.require(&cfg.out, "out")?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn finish<W: Write>(mut w: W, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_archive(cfg: &RunConfig) -> Result<(HistoryArchive, Vec<UserHistory>)> {
    let a = HistoryArchive::load(cfg.require(&cfg.archive, "archive")?)?;
    let hs = a.histories()?;
    Ok((a, hs))
}

/// Known-day count: explicit, or everything but the longest horizon.
fn known_days(cfg: &RunConfig, n: usize) -> Result<usize> {
    let h = cfg.max_horizon();
    let known = match cfg.known_days {
        Some(k) => k,
        None => n.checked_sub(h).ok_or_else(|| {
            Error::Input(format!("horizon {h} exceeds the {n}-day calendar"))
        })?,
    };
    if known + h > n {
        return Err(Error::Input(format!(
            "{known} known days plus horizon {h} exceed the {n}-day calendar"
        )));
    }
    if known <= cfg.validation_days {
        return Err(Error::Input(format!(
            "{known} known days leave nothing to train on with {} validation days",
            cfg.validation_days
        )));
    }
    Ok(known)
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let records_path = cfg.require(&cfg.records, "records")?;
    let calendar_path = cfg.require(&cfg.calendar, "calendar")?;
    let out = cfg.require(&cfg.out, "out")?;
    let parsed = parse_records(records_path)?;
    let calendar = Arc::new(load_calendar(calendar_path)?);
    let mut stations = StationTable::new();
    let assembled = assemble_all(&parsed.records, calendar.clone(), &mut stations, cfg.min_active_days)?;
    HistoryArchive::new(&calendar, &stations, &assembled.histories).save(out)?;
    if !parsed.rejects.is_empty() {
        let path = out.with_extension("rejects.csv");
        let mut w = create_file(&path)?;
        write_rejects(&mut w, &parsed.rejects)?;
        finish(w, &path)?;
    }
    eprintln!(
        "{} users archived, {} below {} active days, {} rejected rows",
        assembled.histories.len(),
        assembled.filtered.len(),
        cfg.min_active_days,
        parsed.rejects.len()
    );
    Ok(())
}

fn cmd_patterns(cfg: &RunConfig) -> Result<()> {
    let (_, hs) = load_archive(cfg)?;
    let dir = out_dir(cfg)?;
    let pc = PatternConfig {
        pairs: cfg.pairs,
        seed: cfg.seed,
        gaps: default_gaps(),
        exclude_empty: cfg.exclude_empty,
    };
    let report = verify_patterns(&hs, &pc)?;
    write_json(&dir.join("patterns.json"), &report)?;
    let path = dir.join("tests.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["test", "t", "df", "p"])?;
    for t in &report.tests {
        w.write_record([t.name.clone(), t.t.to_string(), t.df.to_string(), format!("{:e}", t.p)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("gap_curve.csv");
    let mut w = create_file(&path)?;
    report.write_gap_csv(&mut w)?;
    finish(w, &path)?;
    eprintln!("{} of {} tests reject at p < 0.01", report.rejections(0.01), report.tests.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub hour: u8,
    pub origin: String,
    pub destination: String,
}

impl TripRecord {
    fn of(t: &Trip, stations: &[String]) -> Self {
        Self {
            hour: t.hour,
            origin: stations[t.origin.index()].clone(),
            destination: stations[t.destination.index()].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripProbability {
    #[serde(flatten)]
    pub trip: TripRecord,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDay {
    pub day: usize,
    pub date: chrono::NaiveDate,
    pub chain: Vec<TripRecord>,
    pub probabilities: Vec<TripProbability>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPredictions {
    pub user_id: String,
    pub params: HyperParams,
    pub validation_accuracy: f64,
    pub days: Vec<PredictedDay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub pipeline: Pipeline,
    pub normalization: Normalization,
    pub ablation: String,
    pub known_days: usize,
    pub horizon: usize,
    pub users: Vec<UserPredictions>,
}

fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let (archive, hs) = load_archive(cfg)?;
    let out = cfg.require(&cfg.out, "out")?;
    let n = archive.calendar.len();
    let known = known_days(cfg, n)?;
    let horizon = cfg.max_horizon();
    let settings = cfg.settings();
    let cache = GraphCache::new(Arc::new(archive.calendar.clone()));
    let stations = &archive.stations;
    let users = par_map(&hs, cfg.workers, |h| {
        let chains = &h.chains[..known];
        let cal = grid_search(
            chains,
            cfg.validation_days,
            &cfg.grid,
            cfg.pipeline,
            cfg.ablation,
            &settings,
            &cache,
        )?;
        let preds = predict_days(chains, known + horizon, &cal.best, &settings, &cache)?;
        let days = preds
            .iter()
            .map(|p| PredictedDay {
                day: p.day,
                date: archive.calendar.day(p.day).date,
                chain: p.chain.iter().map(|t| TripRecord::of(t, stations)).collect(),
                probabilities: p
                    .probabilities
                    .iter()
                    .map(|(t, x)| TripProbability { trip: TripRecord::of(t, stations), p: *x })
                    .collect(),
                score: p.score.as_ref().map(|s| s.score),
            })
            .collect();
        Ok(UserPredictions {
            user_id: h.user_id.clone(),
            params: cal.best,
            validation_accuracy: cal.best_accuracy,
            days,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_json(
        out,
        &PredictionFile {
            pipeline: cfg.pipeline,
            normalization: cfg.normalization,
            ablation: cfg.ablation.names(),
            known_days: known,
            horizon,
            users,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCalibration {
    pub user_id: String,
    #[serde(flatten)]
    pub summary: CalibrationSummary,
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (archive, hs) = load_archive(cfg)?;
    let dir = out_dir(cfg)?;
    let known = known_days(cfg, archive.calendar.len())?;
    let hs = crate::synthetic::with_known_days(hs, known, cfg.validation_days)?;
    let report = compare_methods(&hs, &cfg.methods, &cfg.horizons, &cfg.eval_config())?;
    let path = dir.join("report.csv");
    let mut w = create_file(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    let path = dir.join("users.csv");
    let mut w = create_file(&path)?;
    report.write_user_csv(&mut w)?;
    finish(w, &path)?;
    write_json(&dir.join("report.json"), &report)?;
    let calibration: Vec<UserCalibration> = report
        .users
        .iter()
        .flat_map(|u| {
            u.calibration.iter().map(|c| UserCalibration {
                user_id: u.user_id.clone(),
                summary: c.clone(),
            })
        })
        .collect();
    write_json(&dir.join("calibration.json"), &calibration)
}

fn cmd_cluster(cfg: &RunConfig, calibration: &Path) -> Result<()> {
    let f = std::fs::File::open(calibration).map_err(|e| Error::io(calibration, e))?;
    let records: Vec<UserCalibration> = serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|e| Error::Data(format!("{}: {e}", calibration.display())))?;
    let chosen: Vec<&UserCalibration> = records
        .iter()
        .filter(|r| r.summary.pipeline == cfg.pipeline)
        .collect();
    if chosen.is_empty() {
        return Err(Error::Data(format!(
            "{}: no {} calibration results",
            calibration.display(),
            cfg.pipeline
        )));
    }
    let dir = out_dir(cfg)?;
    let path = dir.join("classes.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["user_id", "a1", "a2", "a3", "class"])?;
    for r in &chosen {
        let s = r.summary.best.similarity;
        w.write_record([
            r.user_id.clone(),
            s.a1.to_string(),
            s.a2.to_string(),
            s.a3.to_string(),
            classify_regime(&s).name().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let params: Vec<_> = chosen.iter().map(|r| r.summary.best.similarity).collect();
    let path = dir.join("distribution.csv");
    let mut w = create_file(&path)?;
    write_distribution_csv(&mut w, &distribution_table(&params))?;
    finish(w, &path)
}

fn default_days() -> usize {
    308
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct MixEntry {
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(flatten)]
    pub spec: ArchetypeSpec,
}

/// Population spec for `synth`.
#[derive(Debug, Clone, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    /// Calendar length from 2018-01-01.
    #[serde(default = "default_days")]
    pub days: usize,
    pub seed: Option<u64>,
    pub mix: Vec<MixEntry>,
}

fn cmd_synth(cfg: &RunConfig, spec_path: &Path, explicit_seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SynthSpec = toml::from_str(&text)
        .map_err(|e| Error::Input(format!("spec {}: {}", spec_path.display(), e.message())))?;
    if spec.days == 0 {
        return Err(Error::Input("spec days must be >= 1".into()));
    }
    for m in &spec.mix {
        m.spec.validate(spec.days)?;
    }
    let mix: Vec<(ArchetypeSpec, f64)> = spec.mix.into_iter().map(|m| (m.spec, m.weight)).collect();
    let calendar = Arc::new(china_2018_calendar(spec.days));
    let seed = explicit_seed.or(spec.seed).unwrap_or(0);
    let hs = generate_population(&mix, spec.users, calendar.clone(), seed)?;
    write_corpus(out_dir(cfg)?, &hs, &calendar)
}

fn cmd_simmatrix(cfg: &RunConfig, user: &str) -> Result<()> {
    let (_, hs) = load_archive(cfg)?;
    let out = cfg.require(&cfg.out, "out")?;
    let h = hs
        .iter()
        .find(|h| h.user_id == user)
        .ok_or_else(|| Error::Input(format!("user {user} not in archive")))?;
    let m = chain_similarity_matrix(h);
    let mut w = create_file(out)?;
    write_similarity_matrix(&mut w, h.len(), &m)?;
    finish(w, out)
}
