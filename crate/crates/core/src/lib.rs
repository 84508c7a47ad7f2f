//! Election forecasting from archived social-media streams.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`]: NDJSON parsing, client-source bot filtering, text standardization
//! - [`hashnet`]: hashtag co-occurrence network with hypergeometric edge validation
//! - [`classify`]: hashtag-labeled training sets, logistic regression and naive Bayes stance models
//! - [`opinion`]: per-user ledgers, cumulative/window opinion, loyalty classes, homophily and model predictions
//! - [`survey`]: raking and the panel tables used to quantify hidden vote
//! - [`synth`]: synthetic corpora and panels with planted ground truth
//! - [`pipeline`]: end-to-end orchestration shared by the CLI and the acceptance tests

pub mod camp;
pub mod classify;
pub mod config;
pub mod hashnet;
pub mod ingest;
pub mod io;
pub mod opinion;
pub mod pipeline;
pub mod survey;
pub mod synth;

pub use camp::{Camp, HashtagSeedLabels};
pub use classify::{ClassifiedTweet, StanceModel, Thresholds, TweetStance};
pub use config::PipelineConfig;
pub use hashnet::{CooccurrenceCounts, ValidatedHashtagNetwork};
pub use ingest::{CleanTweet, DailyStats, ParseStats, RawTweet, SourceWhitelist};
pub use opinion::{LedgerSet, ModelId, PredictionShares, RetweetGraph, UserOpinion};
pub use survey::{DemographicMargins, PanelResponse, RakingWeights};
pub use synth::ElectorateSpec;
