//! `votecast`: runs the forecasting pipeline one stage at a time or end to end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing input, 4 data or I/O error.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use votecast_core::classify::{self, LabeledTweet, StanceModel, TrainingSplit};
use votecast_core::config::ConfigError;
use votecast_core::ingest::CleanTweet;
use votecast_core::opinion::{self, ModelId};
use votecast_core::pipeline::{self as pl, artifacts as a, PipelineError};
use votecast_core::synth::{ElectorateSpec, PanelTargets};
use votecast_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "votecast", version, about = "Election forecasting from archived social-media streams")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus, drop bot traffic and standardize text.
    Ingest,
    /// Build and validate the hashtag co-occurrence network.
    Hashnet,
    /// Label tweets by seed hashtags and split train/test.
    BuildTraining,
    /// Fit the stance model and evaluate it on the held-out split.
    Train,
    /// Classify every tweet with the trained model.
    Classify,
    /// Build user ledgers; write loyalty classes and prediction series.
    Opinion,
    /// Print one model's prediction for one day as JSON.
    Predict {
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
        model: u8,
        /// Defaults to the configured prediction day.
        #[arg(long)]
        day: Option<NaiveDate>,
    },
    /// Rake the panel (when margins are configured) and write the survey tables.
    Survey,
    /// Rake the panel to the census margins and write the weights.
    Rake,
    /// Write a synthetic corpus, truth, panel and a config that runs on them.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Electorate spec (TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every stage and write the report bundle.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Prints to stdout; a closed pipe ends output quietly.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n"));
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    match path {
        None => {
            let cfg = PipelineConfig {
                base_dir: PathBuf::from("."),
                ..PipelineConfig::default()
            };
            Ok(cfg)
        }
        Some(p) if !p.exists() => Err(PipelineError::MissingInput(p.to_path_buf())),
        Some(p) => Ok(PipelineConfig::load(p)?),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| PipelineError::data("threads", e))?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    if cli.print_config {
        emit(cfg.to_toml().trim_end());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(ConfigError::Invalid {
            key: "command",
            reason: "no subcommand given; see --help".into(),
        }
        .into());
    };
    let out = cfg.resolve(&cfg.out_dir);
    match command {
        Command::Ingest => ingest(&cfg, &out),
        Command::Hashnet => hashnet(&cfg, &out),
        Command::BuildTraining => build_training(&cfg, &out),
        Command::Train => train(&cfg, &out),
        Command::Classify => classify_cmd(&cfg, &out),
        Command::Opinion => opinion_cmd(&cfg, &out),
        Command::Predict { model, day } => predict(&cfg, &out, model, day),
        Command::Survey => survey(&cfg, &out),
        Command::Rake => rake(&cfg, &out),
        Command::Synth {
            out,
            spec,
            users,
            days,
            seed,
        } => synth(&out, spec.as_deref(), users, days, seed),
        Command::Report => report(&cfg, &out),
    }
}

fn ingest(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let ing = pl::ingest_from_config(cfg)?;
    pl::write_ndjson_file(&out.join(a::CLEAN), &ing.tweets)?;
    pl::write_output(&out.join(a::BOTS), |w| {
        ing.bots.iter().try_for_each(|b| writeln!(w, "{b}"))
    })?;
    pl::write_json(&out.join(a::PARSE_STATS), &ing.parse)?;
    pl::write_output(&out.join(a::DAILY_STATS), |w| ing.daily.write_csv(w))?;
    eprintln!(
        "ingest: {} tweets kept, {} bot tweets from {} accounts",
        ing.tweets.len(),
        ing.bot_tweets,
        ing.bots.len()
    );
    Ok(())
}

fn read_clean(out: &Path) -> Result<Vec<CleanTweet>, PipelineError> {
    pl::read_ndjson_file(&out.join(a::CLEAN))
}

fn read_bots(out: &Path) -> Result<BTreeSet<String>, PipelineError> {
    let r = pl::open_input(&out.join(a::BOTS))?;
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| l.map(|s| s.trim().to_string()))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::data(a::BOTS, e))
}

fn hashnet(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let tweets = read_clean(out)?;
    let seeds = pl::load_seeds(cfg)?;
    let h = pl::hashnet_stage(cfg, &tweets, &seeds)?;
    pl::write_output(&out.join(a::HASHTAG_FREQUENCY), |w| h.counts.write_frequency_csv(w))?;
    pl::write_output(&out.join(a::EDGES), |w| h.network.write_edges_csv(w))?;
    pl::write_output(&out.join(a::VERTICES), |w| h.network.write_vertices_csv(w, &h.labels))?;
    emit(&serde_json::to_string_pretty(&h.consistency).expect("serializable"));
    Ok(())
}

fn build_training(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let tweets = read_clean(out)?;
    let seeds = pl::load_seeds(cfg)?;
    let split = pl::training_stage(cfg, &tweets, &seeds)?;
    pl::write_ndjson_file(&out.join(a::TRAIN), &split.train)?;
    pl::write_ndjson_file(&out.join(a::TEST), &split.test)?;
    eprintln!(
        "training set: {} train, {} test, {} third-party, {} conflicting",
        split.train.len(),
        split.test.len(),
        split.third_party.len(),
        split.conflicts
    );
    Ok(())
}

fn train(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let train: Vec<LabeledTweet> = pl::read_ndjson_file(&out.join(a::TRAIN))?;
    let test: Vec<LabeledTweet> = pl::read_ndjson_file(&out.join(a::TEST))?;
    let split = TrainingSplit {
        train,
        test,
        ..TrainingSplit::default()
    };
    let (model, evaluation) = pl::train_stage(cfg, &split)?;
    pl::write_output(&out.join(a::MODEL), |w| {
        model.write_json(w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    if let Some(ev) = &evaluation {
        pl::write_json(&out.join(a::EVALUATION), ev)?;
        pl::write_output(&out.join(a::CONFUSION), |w| ev.write_confusion_csv(w))?;
        emit(&serde_json::to_string_pretty(ev).expect("serializable"));
    }
    Ok(())
}

fn read_model(out: &Path) -> Result<StanceModel, PipelineError> {
    let path = out.join(a::MODEL);
    StanceModel::read_json(pl::open_input(&path)?).map_err(|e| PipelineError::data(a::MODEL, e))
}

fn classify_cmd(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let model = read_model(out)?;
    let tweets = read_clean(out)?;
    let seeds = pl::load_seeds(cfg)?;
    let rows = pl::classify_stage(cfg, &model, &tweets, &seeds);
    pl::write_output(&out.join(a::CLASSIFIED), |w| classify::write_classified_csv(w, &rows))
}

fn ledgers(cfg: &PipelineConfig, out: &Path) -> Result<(opinion::LedgerSet, opinion::RetweetGraph), PipelineError> {
    let path = out.join(a::CLASSIFIED);
    let classified =
        classify::read_classified_csv(pl::open_input(&path)?).map_err(|e| PipelineError::data(a::CLASSIFIED, e))?;
    let tweets = read_clean(out)?;
    let bots = read_bots(out)?;
    pl::opinion_stage(cfg, &classified, &tweets, &bots)
}

fn opinion_cmd(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let (ledgers, graph) = ledgers(cfg, out)?;
    pl::write_output(&out.join(a::LOYALTY), |w| {
        pl::write_loyalty_csv(w, &ledgers, cfg.prediction_day, cfg.t0, cfg.k)
    })?;
    let series = pl::series_stage(cfg, &ledgers, &graph)?;
    pl::write_output(&out.join(a::SERIES_CUMULATIVE), |w| opinion::write_series_csv(w, &series.cumulative))?;
    pl::write_output(&out.join(a::SERIES_WINDOW), |w| opinion::write_series_csv(w, &series.window))?;
    eprintln!("opinion: {} users, {} retweet edges", ledgers.len(), graph.edge_count());
    Ok(())
}

fn predict(cfg: &PipelineConfig, out: &Path, model: u8, day: Option<NaiveDate>) -> Result<(), PipelineError> {
    let model = ModelId::try_from(model).map_err(|e| PipelineError::data("model", e))?;
    let day = day.unwrap_or(cfg.prediction_day);
    if !cfg.window().contains(day) {
        return Err(ConfigError::Invalid {
            key: "day",
            reason: format!("{day} is outside the collection window"),
        }
        .into());
    }
    let (ledgers, graph) = ledgers(cfg, out)?;
    let official = pl::load_official(cfg)?;
    let r = pl::predict_stage(cfg, model, day, &ledgers, &graph, official.as_ref())?;
    emit(&serde_json::to_string_pretty(&r).expect("serializable"));
    Ok(())
}

fn survey(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let Some(sv) = pl::survey_stage(cfg)? else {
        return Err(ConfigError::Invalid {
            key: "panel",
            reason: "the survey stage needs a panel file".into(),
        }
        .into());
    };
    pl::write_survey_tables(&sv, out)?;
    eprintln!("survey: {} respondents", sv.respondents);
    Ok(())
}

fn rake(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let missing = |key: &'static str| -> PipelineError {
        ConfigError::Invalid {
            key,
            reason: "rake needs both panel and census_margins".into(),
        }
        .into()
    };
    let panel = pl::load_panel(cfg)?.ok_or_else(|| missing("panel"))?;
    let margins = pl::load_margins(cfg)?.ok_or_else(|| missing("census_margins"))?;
    let w = pl::rake_stage(cfg, &panel, &margins)?;
    pl::write_output(&out.join(a::RAKING_WEIGHTS), |wr| w.write_csv(wr))?;
    let summary = serde_json::json!({
        "iterations": w.iterations,
        "converged": w.converged,
        "max_margin_error": w.max_error(),
    });
    emit(&summary.to_string());
    Ok(())
}

fn synth(
    out: &Path,
    spec_path: Option<&Path>,
    users: Option<usize>,
    days: Option<u32>,
    seed: Option<u64>,
) -> Result<(), PipelineError> {
    let mut spec = match spec_path {
        None => ElectorateSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => PipelineError::MissingInput(p.to_path_buf()),
                _ => PipelineError::Io {
                    path: p.to_path_buf(),
                    source: e,
                },
            })?;
            toml::from_str(&text).map_err(|e| {
                PipelineError::from(ConfigError::Invalid {
                    key: "spec",
                    reason: e.to_string(),
                })
            })?
        }
    };
    if let Some(n) = users {
        spec.n_users = n;
    }
    if let Some(d) = days {
        spec.days = d;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Err(e) = spec.validate() {
        return Err(ConfigError::Invalid {
            key: "spec",
            reason: e.to_string(),
        }
        .into());
    }
    std::fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let inputs = pl::write_synthetic_inputs(out, &spec, &PanelTargets::default())?;
    for row in &inputs.inexact_panel_rows {
        log::warn!("panel: {row}");
    }
    let p = inputs.planted.map(|x| 100.0 * x);
    eprintln!(
        "synth: wrote {} (planted FF {:.2} MP {:.2} TP {:.2})",
        out.join("votecast.toml").display(),
        p[0],
        p[1],
        p[2]
    );
    Ok(())
}

fn report(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let bundle = pl::run_report(cfg)?;
    let dir = out.join(a::REPORT_DIR);
    pl::write_report(&bundle, &dir)?;
    for m in &bundle.summary.predictions {
        let mae = m.mae.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        emit(&format!(
            "model {}  FF {:6.2}  MP {:6.2}  TP {:6.2}  MAE {mae}",
            m.model as u8, m.ff, m.mp, m.third
        ));
    }
    eprintln!("report: {}", dir.display());
    Ok(())
}
