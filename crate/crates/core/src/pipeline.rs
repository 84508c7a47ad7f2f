//! Stage orchestration shared by the command line and the acceptance tests.
//!
//! Each stage is a pure function of the configuration and its upstream
//! results; [`run_report`] chains them all. Intermediate artifacts have fixed
//! names under the configured output directory (see [`artifacts`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::camp::{Camp, HashtagSeedLabels};
use crate::classify::{
    self, build_training_set, classify_all, evaluate, train_lr, ClassifiedTweet, Evaluation, StanceModel,
    TrainingSplit,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::hashnet::{self, ConsistencyReport, CooccurrenceCounts, ValidatedHashtagNetwork};
use crate::ingest::{self, CleanTweet, DailyStats, DateRange, ParseStats, SourceWhitelist, Stopwords};
use crate::io::write_atomic;
use crate::opinion::{
    self, emit_series, mae, predict, t0_sensitivity, BucketCounts, LedgerSet, ModelId, OfficialResults,
    RetweetGraph, SeriesRow,
};
use crate::survey::{
    self, demographic_pyramid, disclosure_by_demographics, image_table, pyramid_from_margins, rake,
    transition_table, DemographicMargins, DisclosureRow, ImageRow, PanelResponse, PyramidCell, RakingWeights,
    TransitionRow,
};

/// File names of intermediate and report artifacts.
pub mod artifacts {
    pub const CLEAN: &str = "clean.ndjson";
    pub const BOTS: &str = "bots.txt";
    pub const PARSE_STATS: &str = "parse_stats.json";
    pub const DAILY_STATS: &str = "daily_stats.csv";
    pub const HASHTAG_FREQUENCY: &str = "hashtag_frequency.csv";
    pub const EDGES: &str = "hashnet_edges.csv";
    pub const VERTICES: &str = "hashnet_vertices.csv";
    pub const TRAIN: &str = "training_train.ndjson";
    pub const TEST: &str = "training_test.ndjson";
    pub const MODEL: &str = "model.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const CONFUSION: &str = "confusion.csv";
    pub const CLASSIFIED: &str = "classified.csv";
    pub const LOYALTY: &str = "loyalty.csv";
    pub const SERIES_CUMULATIVE: &str = "series_cumulative.csv";
    pub const SERIES_WINDOW: &str = "series_window.csv";
    pub const PREDICTIONS: &str = "predictions.json";
    pub const RAKING_WEIGHTS: &str = "raking_weights.csv";
    pub const TRANSITION: &str = "transition.csv";
    pub const DISCLOSURE: &str = "disclosure.csv";
    pub const IMAGE: &str = "image.csv";
    pub const PYRAMID: &str = "pyramid.csv";
    pub const REPORT_DIR: &str = "report";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{context}: {message}")]
    Data { context: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl PipelineError {
    pub fn data(context: impl Into<String>, message: impl ToString) -> Self {
        PipelineError::Data {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// 2 config error, 3 missing input, 4 data or I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingInput(_) => 3,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn open_input(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(PipelineError::MissingInput(path.to_path_buf())),
        Err(source) => Err(PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

pub fn write_output<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    write_atomic(path, fill).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

pub fn read_ndjson_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    crate::io::read_ndjson(open_input(path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))
}

pub fn write_ndjson_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_output(path, |w| crate::io::write_ndjson(w, items))
}

pub fn load_seeds(cfg: &PipelineConfig) -> Result<HashtagSeedLabels> {
    let path = cfg.resolve(&cfg.seeds);
    HashtagSeedLabels::read_csv(open_input(&path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))
}

pub fn load_official(cfg: &PipelineConfig) -> Result<Option<OfficialResults>> {
    let Some(p) = &cfg.official_results else {
        return Ok(None);
    };
    let path = cfg.resolve(p);
    OfficialResults::read_csv(open_input(&path)?)
        .map(Some)
        .map_err(|e| PipelineError::data(path.display().to_string(), e))
}

fn load_stopwords(cfg: &PipelineConfig) -> Result<Stopwords> {
    match &cfg.stopwords {
        None => Ok(Stopwords::spanish()),
        Some(p) => {
            let path = cfg.resolve(p);
            Stopwords::read(open_input(&path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))
        }
    }
}

fn load_whitelist(cfg: &PipelineConfig) -> Result<SourceWhitelist> {
    match &cfg.whitelist {
        None => Ok(SourceWhitelist::default()),
        Some(p) => {
            let path = cfg.resolve(p);
            SourceWhitelist::read(open_input(&path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub tweets: Vec<CleanTweet>,
    /// Accounts seen only through non-whitelisted clients.
    pub bots: BTreeSet<String>,
    pub parse: ParseStats,
    pub daily: DailyStats,
    pub bot_tweets: usize,
}

/// Parses the corpus, drops bot traffic and standardizes the remaining text.
pub fn ingest_stage<R: BufRead>(cfg: &PipelineConfig, corpus: R) -> Result<Ingested> {
    let whitelist = load_whitelist(cfg)?;
    let stopwords = load_stopwords(cfg)?;
    let (raw, parse) = ingest::parse_stream(corpus, Some(cfg.window())).map_err(|e| PipelineError::data("corpus", e))?;
    let (kept, bot_raw) = ingest::partition_bots(raw, &whitelist);
    let bots: BTreeSet<String> = ingest::bot_users(&kept, &bot_raw).into_iter().collect();
    let tweets: Vec<CleanTweet> = kept.par_iter().map(|t| ingest::standardize(t, &stopwords)).collect();
    let daily = ingest::corpus_stats(&tweets, &bot_raw);
    Ok(Ingested {
        tweets,
        bots,
        parse,
        daily,
        bot_tweets: bot_raw.len(),
    })
}

pub fn ingest_from_config(cfg: &PipelineConfig) -> Result<Ingested> {
    ingest_stage(cfg, open_input(&cfg.resolve(&cfg.corpus))?)
}

pub struct HashnetResult {
    pub counts: CooccurrenceCounts,
    pub network: ValidatedHashtagNetwork,
    pub consistency: ConsistencyReport,
    /// Seed camps spread over validated edges.
    pub labels: BTreeMap<String, Camp>,
}

pub fn hashnet_stage(cfg: &PipelineConfig, tweets: &[CleanTweet], seeds: &HashtagSeedLabels) -> Result<HashnetResult> {
    let counts = hashnet::count_cooccurrences(tweets, cfg.population_mode());
    let network = hashnet::validate_network(&counts, cfg.p_cutoff).map_err(|e| PipelineError::data("hashnet", e))?;
    let consistency = hashnet::label_consistency_report(&network, seeds);
    let labels = if seeds.is_empty() {
        BTreeMap::new()
    } else {
        hashnet::propagate_labels(&network, seeds, 1).map_err(|e| PipelineError::data("hashnet", e))?
    };
    Ok(HashnetResult {
        counts,
        network,
        consistency,
        labels,
    })
}

pub fn training_stage(cfg: &PipelineConfig, tweets: &[CleanTweet], seeds: &HashtagSeedLabels) -> Result<TrainingSplit> {
    build_training_set(tweets, seeds, cfg.training_cutoff, cfg.seed).map_err(|e| PipelineError::data("training set", e))
}

pub fn train_stage(cfg: &PipelineConfig, split: &TrainingSplit) -> Result<(StanceModel, Option<Evaluation>)> {
    let model = train_lr(&split.train, &cfg.lr_config()).map_err(|e| PipelineError::data("training", e))?;
    let evaluation = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &split.test).map_err(|e| PipelineError::data("evaluation", e))?)
    };
    Ok((model, evaluation))
}

/// Classifies every tweet; with `retweets_count_as_stance` off, retweets only mark presence.
pub fn classify_stage(
    cfg: &PipelineConfig,
    model: &StanceModel,
    tweets: &[CleanTweet],
    seeds: &HashtagSeedLabels,
) -> Vec<ClassifiedTweet> {
    let mut out = classify_all(model, tweets, seeds);
    if !cfg.retweets_count_as_stance {
        for (c, t) in out.iter_mut().zip(tweets) {
            if t.retweet_of_user_id.is_some() {
                c.stance = None;
            }
        }
    }
    out
}

pub fn opinion_stage(
    cfg: &PipelineConfig,
    classified: &[ClassifiedTweet],
    tweets: &[CleanTweet],
    bots: &BTreeSet<String>,
) -> Result<(LedgerSet, RetweetGraph)> {
    let genuine: Vec<ClassifiedTweet> = classified.iter().filter(|t| !bots.contains(&t.user_id)).cloned().collect();
    let ledgers = opinion::accumulate(&genuine, cfg.window()).map_err(|e| PipelineError::data("opinion", e))?;
    let bot_set = bots.iter().cloned().collect();
    Ok((ledgers, opinion::build_retweet_graph(tweets, &bot_set)))
}

/// Headline numbers of one model, shares in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: ModelId,
    pub day: NaiveDate,
    pub ff: f64,
    pub mp: f64,
    pub third: f64,
    pub undecided: Option<f64>,
    pub mae: Option<f64>,
    /// Per-camp standard deviation over the configured T0 origins, in percent.
    pub t0_std: Option<[f64; 3]>,
    pub counts: BucketCounts,
}

pub fn predict_stage(
    cfg: &PipelineConfig,
    model: ModelId,
    day: NaiveDate,
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    official: Option<&OfficialResults>,
) -> Result<ModelReport> {
    let params = cfg.opinion_params();
    let shares = predict(model, day, ledgers, graph, &params).map_err(|e| PipelineError::data("predict", e))?;
    let pct = shares.percent();
    let t0s: Vec<NaiveDate> = cfg.t0_candidates.iter().copied().filter(|t| *t < day).collect();
    let t0_std = if t0s.len() >= 2 {
        let s = t0_sensitivity(model, day, &t0s, ledgers, graph, &params).map_err(|e| PipelineError::data("t0", e))?;
        Some(s.std.map(|x| 100.0 * x))
    } else {
        None
    };
    Ok(ModelReport {
        model,
        day,
        ff: pct[0],
        mp: pct[1],
        third: pct[2],
        undecided: shares.undecided.map(|u| 100.0 * u),
        mae: official.map(|o| mae(pct, o.triple())),
        t0_std,
        counts: shares.counts,
    })
}

pub struct Series {
    pub cumulative: Vec<SeriesRow>,
    pub window: Vec<SeriesRow>,
}

pub fn series_stage(cfg: &PipelineConfig, ledgers: &LedgerSet, graph: &RetweetGraph) -> Result<Series> {
    let range = DateRange {
        start: cfg.series_start,
        end: cfg.prediction_day,
    };
    let params = cfg.opinion_params();
    let elections = cfg.elections();
    let mut cumulative = Vec::new();
    let mut window = Vec::new();
    for m in ModelId::ALL {
        let run = |w: Option<u32>| {
            emit_series(m, range, w, ledgers, graph, &params, &elections).map_err(|e| PipelineError::data("series", e))
        };
        cumulative.extend(run(None)?);
        window.extend(run(Some(cfg.window_days))?);
    }
    Ok(Series { cumulative, window })
}

pub fn write_loyalty_csv<W: Write>(out: W, ledgers: &LedgerSet, day: NaiveDate, t0: NaiveDate, k: usize) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["user_id", "base", "recent", "ultra_loyal", "group"])
        .map_err(crate::io::csv_to_io)?;
    for u in ledgers.present(day) {
        let c = u.loyalty_between(t0, day, k);
        wtr.write_record([
            u.user_id.clone(),
            c.base.to_string(),
            c.recent.to_string(),
            c.ultra_loyal.to_string(),
            c.group(),
        ])
        .map_err(crate::io::csv_to_io)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, Serialize)]
pub struct SurveyReport {
    pub respondents: usize,
    pub raking: Option<RakingWeights>,
    pub transition: Vec<TransitionRow>,
    pub disclosure: Vec<DisclosureRow>,
    pub image: Vec<ImageRow>,
    pub pyramid: Vec<PyramidCell>,
    pub census_pyramid: Option<Vec<PyramidCell>>,
}

pub fn load_panel(cfg: &PipelineConfig) -> Result<Option<Vec<PanelResponse>>> {
    let Some(p) = &cfg.panel else {
        return Ok(None);
    };
    let path = cfg.resolve(p);
    survey::read_panel_csv(open_input(&path)?)
        .map(Some)
        .map_err(|e| PipelineError::data(path.display().to_string(), e))
}

/// Census margins restricted to the configured raking axes.
pub fn load_margins(cfg: &PipelineConfig) -> Result<Option<DemographicMargins>> {
    let Some(p) = &cfg.census_margins else {
        return Ok(None);
    };
    let path = cfg.resolve(p);
    let all = DemographicMargins::read_csv(open_input(&path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))?;
    let axes = all
        .axes
        .into_iter()
        .filter(|(axis, _)| cfg.raking_axes.contains(axis))
        .collect();
    Ok(Some(DemographicMargins { axes }))
}

pub fn rake_stage(cfg: &PipelineConfig, panel: &[PanelResponse], margins: &DemographicMargins) -> Result<RakingWeights> {
    rake(panel, margins, cfg.rake_tol, cfg.rake_max_iter).map_err(|e| PipelineError::data("raking", e))
}

pub fn survey_stage(cfg: &PipelineConfig) -> Result<Option<SurveyReport>> {
    let Some(mut panel) = load_panel(cfg)? else {
        return Ok(None);
    };
    let margins = load_margins(cfg)?;
    let raking = match &margins {
        Some(m) if !m.axes.is_empty() => {
            let w = rake_stage(cfg, &panel, m)?;
            if !w.converged {
                log::warn!("raking stopped after {} passes without converging", w.iterations);
            }
            w.apply(&mut panel);
            Some(w)
        }
        _ => None,
    };
    Ok(Some(SurveyReport {
        respondents: panel.len(),
        raking,
        transition: transition_table(&panel),
        disclosure: disclosure_by_demographics(&panel),
        image: image_table(&panel),
        pyramid: demographic_pyramid(&panel),
        census_pyramid: margins.as_ref().map(pyramid_from_margins),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusSummary {
    pub parse: ParseStats,
    pub tweets: usize,
    pub users: usize,
    pub bot_accounts: usize,
    pub bot_tweets: usize,
    /// Classified tweets per stance code.
    pub stances: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HashnetSummary {
    pub hashtags: usize,
    pub validated_edges: usize,
    pub p_cutoff: f64,
    pub cross_camp_fraction: f64,
    pub propagated_labels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub train: usize,
    pub test: usize,
    pub third_party: usize,
    pub conflicts: usize,
    pub vocabulary: usize,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub prediction_day: NaiveDate,
    pub official: Option<OfficialResults>,
    pub corpus: CorpusSummary,
    pub hashnet: HashnetSummary,
    pub training: TrainingSummary,
    pub predictions: Vec<ModelReport>,
    pub loyalty: BTreeMap<String, usize>,
    pub survey: Option<SurveyReport>,
}

/// Everything `report` writes.
pub struct ReportBundle {
    pub summary: ReportSummary,
    pub ingested: Ingested,
    pub hashnet: HashnetResult,
    pub model: StanceModel,
    pub classified: Vec<ClassifiedTweet>,
    pub series: Series,
}

/// Runs every stage in memory.
pub fn run_report(cfg: &PipelineConfig) -> Result<ReportBundle> {
    let seeds = load_seeds(cfg)?;
    let official = load_official(cfg)?;
    let ingested = ingest_from_config(cfg)?;
    let hashnet = hashnet_stage(cfg, &ingested.tweets, &seeds)?;
    let split = training_stage(cfg, &ingested.tweets, &seeds)?;
    let (model, evaluation) = train_stage(cfg, &split)?;
    let classified = classify_stage(cfg, &model, &ingested.tweets, &seeds);
    let (ledgers, graph) = opinion_stage(cfg, &classified, &ingested.tweets, &ingested.bots)?;
    let predictions = ModelId::ALL
        .iter()
        .map(|m| predict_stage(cfg, *m, cfg.prediction_day, &ledgers, &graph, official.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let series = series_stage(cfg, &ledgers, &graph)?;
    let loyalty = ledgers
        .loyalty_breakdown(cfg.prediction_day, cfg.t0, cfg.k)
        .map_err(|e| PipelineError::data("loyalty", e))?;
    let survey = survey_stage(cfg)?;

    let mut stances: BTreeMap<String, usize> = BTreeMap::new();
    for c in &classified {
        *stances.entry(c.stance_code().to_string()).or_default() += 1;
    }
    let summary = ReportSummary {
        prediction_day: cfg.prediction_day,
        official,
        corpus: CorpusSummary {
            parse: ingested.parse,
            tweets: ingested.tweets.len(),
            users: ledgers.len(),
            bot_accounts: ingested.bots.len(),
            bot_tweets: ingested.bot_tweets,
            stances,
        },
        hashnet: HashnetSummary {
            hashtags: hashnet.network.vertices.len(),
            validated_edges: hashnet.network.edges.len(),
            p_cutoff: cfg.p_cutoff,
            cross_camp_fraction: hashnet.consistency.cross_fraction,
            propagated_labels: hashnet.labels.len(),
        },
        training: TrainingSummary {
            train: split.train.len(),
            test: split.test.len(),
            third_party: split.third_party.len(),
            conflicts: split.conflicts,
            vocabulary: model.vocabulary.len(),
            evaluation,
        },
        predictions,
        loyalty,
        survey,
    };
    Ok(ReportBundle {
        summary,
        ingested,
        hashnet,
        model,
        classified,
        series,
    })
}

/// Writes the bundle under `dir`; every file is replaced atomically.
pub fn write_report(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    use artifacts as a;
    let s = &bundle.summary;
    write_json(&dir.join(a::REPORT), s)?;
    write_json(&dir.join(a::PREDICTIONS), &s.predictions)?;
    write_output(&dir.join(a::DAILY_STATS), |w| bundle.ingested.daily.write_csv(w))?;
    write_output(&dir.join(a::EDGES), |w| bundle.hashnet.network.write_edges_csv(w))?;
    write_output(&dir.join(a::VERTICES), |w| {
        bundle.hashnet.network.write_vertices_csv(w, &bundle.hashnet.labels)
    })?;
    write_output(&dir.join(a::CLASSIFIED), |w| classify::write_classified_csv(w, &bundle.classified))?;
    write_output(&dir.join(a::SERIES_CUMULATIVE), |w| {
        opinion::write_series_csv(w, &bundle.series.cumulative)
    })?;
    write_output(&dir.join(a::SERIES_WINDOW), |w| opinion::write_series_csv(w, &bundle.series.window))?;
    write_output(&dir.join(a::MODEL), |w| {
        bundle.model.write_json(w).map_err(|e| io::Error::other(e.to_string()))
    })?;
    if let Some(ev) = &s.training.evaluation {
        write_output(&dir.join(a::CONFUSION), |w| ev.write_confusion_csv(w))?;
    }
    if let Some(sv) = &s.survey {
        write_survey_tables(sv, dir)?;
    }
    Ok(())
}

pub fn write_survey_tables(sv: &SurveyReport, dir: &Path) -> Result<()> {
    use artifacts as a;
    write_output(&dir.join(a::TRANSITION), |w| survey::write_transition_csv(w, &sv.transition))?;
    write_output(&dir.join(a::DISCLOSURE), |w| survey::write_disclosure_csv(w, &sv.disclosure))?;
    write_output(&dir.join(a::IMAGE), |w| survey::write_image_csv(w, &sv.image))?;
    write_output(&dir.join(a::PYRAMID), |w| survey::write_pyramid_csv(w, &sv.pyramid))?;
    if let Some(r) = &sv.raking {
        write_output(&dir.join(a::RAKING_WEIGHTS), |w| r.write_csv(w))?;
    }
    Ok(())
}

/// Inputs written by [`write_synthetic_inputs`].
pub struct SyntheticInputs {
    pub config: PipelineConfig,
    pub planted: [f64; 3],
    pub inexact_panel_rows: Vec<String>,
}

/// Writes a synthetic corpus, its planted truth and a survey panel under `dir`,
/// plus a `votecast.toml` that runs the full pipeline on them.
///
/// The official results are the planted shares, in percent.
pub fn write_synthetic_inputs(
    dir: &Path,
    spec: &crate::synth::ElectorateSpec,
    targets: &crate::synth::PanelTargets,
) -> Result<SyntheticInputs> {
    use crate::synth;
    let synth_err = |e: synth::SynthError| PipelineError::data("synth", e);
    let corpus = synth::generate_corpus(spec).map_err(synth_err)?;
    let fixture = synth::generate_panel(targets).map_err(synth_err)?;
    let planted = corpus.planted_shares();
    let official = OfficialResults {
        ff: 100.0 * planted[0],
        mp: 100.0 * planted[1],
        third: 100.0 * planted[2],
    };
    let mut config = PipelineConfig::for_synthetic(spec.start, spec.days);
    config.base_dir = dir.to_path_buf();

    write_output(&dir.join("corpus.ndjson"), |w| ingest::write_raw_ndjson(w, &corpus.tweets))?;
    write_output(&dir.join("truth.csv"), |w| corpus.write_truth_csv(w))?;
    write_output(&dir.join("seeds.csv"), |w| {
        corpus.seeds.write_csv(w).map_err(crate::io::csv_to_io)
    })?;
    write_output(&dir.join("official.csv"), |w| official.write_csv(w))?;
    write_output(&dir.join("panel.csv"), |w| survey::write_panel_csv(w, &fixture.panel))?;
    write_output(&dir.join("margins.csv"), |w| synth::census_margins().write_csv(w))?;
    let text = config.to_toml();
    write_output(&dir.join("votecast.toml"), |w| w.write_all(text.as_bytes()))?;
    Ok(SyntheticInputs {
        config,
        planted,
        inexact_panel_rows: fixture.inexact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_input_is_named() {
        let cfg = PipelineConfig {
            base_dir: "/nonexistent-dir".into(),
            ..PipelineConfig::default()
        };
        match load_seeds(&cfg) {
            Err(e @ PipelineError::MissingInput(_)) => {
                assert_eq!(e.exit_code(), 3);
                assert!(e.to_string().contains("seeds.csv"));
            }
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn retweet_toggle_keeps_presence() {
        let day = NaiveDate::from_ymd_opt(2019, 4, 1).unwrap();
        let tweet = |id: &str, rt: Option<&str>, tokens: &[&str]| CleanTweet {
            tweet_id: id.into(),
            user_id: "u".into(),
            day,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            hashtags: vec![],
            retweet_of_user_id: rt.map(String::from),
        };
        let train: Vec<classify::LabeledTweet> = (0..40)
            .map(|i| classify::LabeledTweet {
                tweet: tweet(&i.to_string(), None, if i % 2 == 0 { &["alfa"] } else { &["beta"] }),
                label: if i % 2 == 0 { Camp::Fernandez } else { Camp::Macri },
            })
            .collect();
        let cfg = PipelineConfig {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 8,
            ..PipelineConfig::default()
        };
        let model = train_lr(&train, &cfg.lr_config()).unwrap();
        let tweets = vec![tweet("a", None, &["alfa"]), tweet("b", Some("v"), &["alfa"])];
        let seeds = HashtagSeedLabels::new();
        let on = classify_stage(&cfg, &model, &tweets, &seeds);
        assert_eq!(on[1].stance, Some(Camp::Fernandez));
        let off_cfg = PipelineConfig {
            retweets_count_as_stance: false,
            ..cfg
        };
        let off = classify_stage(&off_cfg, &model, &tweets, &seeds);
        assert_eq!((off[0].stance, off[1].stance), (Some(Camp::Fernandez), None));
    }
}
