//! Stance classification: hashtag-labeled training sets, an L2-regularized
//! logistic regression trained by seeded mini-batch gradient descent, a
//! multinomial naive Bayes baseline, evaluation and tweet labeling.
//!
//! Probabilities are oriented towards Macri: `p -> 1` supports MP, `p -> 0`
//! supports FF. Third-party stance is only assigned through seed hashtags.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Read, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camp::{Camp, HashtagSeedLabels};
use crate::ingest::CleanTweet;
use crate::io::csv_to_io;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("no tweet before {0} carries a consistent seed hashtag")]
    EmptyTrainingSet(NaiveDate),
    #[error("training data holds a single class ({0}); need both FF and MP examples")]
    SingleClass(Camp),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("thresholds must satisfy 0 <= low < high <= 1, got ({low}, {high})")]
    Thresholds { low: f64, high: f64 },
    #[error("invalid training parameter: {0}")]
    Parameter(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.33, high: 0.66 }
    }
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, ClassifyError> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return Err(ClassifyError::Thresholds { low, high });
        }
        Ok(Self { low, high })
    }

    /// `p <= low` is FF, `p >= high` is MP, the plateau in between is unclassified.
    pub fn stance_for(&self, p: f64) -> Option<Camp> {
        if p <= self.low {
            Some(Camp::Fernandez)
        } else if p >= self.high {
            Some(Camp::Macri)
        } else {
            None
        }
    }
}

/// Label assigned to one tweet, with the model probability when the model was consulted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweetStance {
    /// `None` means unclassified.
    pub camp: Option<Camp>,
    pub p: Option<f64>,
}

pub fn stance_code(camp: Option<Camp>) -> &'static str {
    camp.map_or("U", Camp::formula)
}

fn parse_stance_code(s: &str) -> Option<Option<Camp>> {
    match s {
        "U" => Some(None),
        other => other.parse().ok().map(Some),
    }
}

/// Frozen token → column mapping, in first-seen order of sorted training tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let set: BTreeSet<&String> = docs.into_iter().flatten().collect();
        Self::from(set.into_iter().cloned().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Bag-of-words counts; out-of-vocabulary tokens are ignored.
    pub fn featurize(&self, tokens: &[String]) -> FeatureVector {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for t in tokens {
            if let Some(i) = self.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        FeatureVector { entries }
    }
}

/// Sparse token counts sorted by column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| weights[i as usize] * v)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTweet {
    #[serde(flatten)]
    pub tweet: CleanTweet,
    pub label: Camp,
}

/// Camp shared by every seed hashtag of the tweet; `None` if there is no seed or they disagree.
pub fn seed_label(tweet: &CleanTweet, seeds: &HashtagSeedLabels) -> Option<Camp> {
    let camps: BTreeSet<Camp> = seeds.camps_in(&tweet.hashtags).into_iter().collect();
    match camps.len() {
        1 => camps.into_iter().next(),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSplit {
    pub train: Vec<LabeledTweet>,
    pub test: Vec<LabeledTweet>,
    /// Third-party labeled tweets, kept out of the binary model.
    pub third_party: Vec<LabeledTweet>,
    /// Tweets with seed hashtags from more than one camp.
    pub conflicts: usize,
}

/// Labels tweets dated before `cutoff` by their seed hashtags and draws a
/// seeded 90/10 train/test partition of the FF/MP examples.
pub fn build_training_set(
    tweets: &[CleanTweet],
    seeds: &HashtagSeedLabels,
    cutoff: NaiveDate,
    rng_seed: u64,
) -> Result<TrainingSplit, ClassifyError> {
    let mut split = TrainingSplit::default();
    let mut binary = Vec::new();
    for t in tweets.iter().filter(|t| t.day < cutoff) {
        let camps: BTreeSet<Camp> = seeds.camps_in(&t.hashtags).into_iter().collect();
        match camps.len() {
            0 => {}
            1 => {
                let label = *camps.iter().next().unwrap();
                let lt = LabeledTweet { tweet: t.clone(), label };
                if label == Camp::Third {
                    split.third_party.push(lt);
                } else {
                    binary.push(lt);
                }
            }
            _ => split.conflicts += 1,
        }
    }
    if binary.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet(cutoff));
    }
    let mut order: Vec<usize> = (0..binary.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let n_train = (binary.len() * 9 + 5) / 10;
    let mut in_train = vec![false; binary.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    for (lt, train) in binary.into_iter().zip(in_train) {
        if train {
            split.train.push(lt);
        } else {
            split.test.push(lt);
        }
    }
    Ok(split)
}

/// Anything that scores a token list with the probability of supporting MP.
pub trait StanceScorer {
    fn prob_macri(&self, tokens: &[String]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step; epoch `t` (1-based) uses `learning_rate / sqrt(t)`.
    pub learning_rate: f64,
    pub seed: u64,
    pub thresholds: Thresholds,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            seed: 42,
            thresholds: Thresholds::default(),
        }
    }
}

/// Design matrix for the binary problem; target 1.0 = MP, 0.0 = FF.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn from_labeled(vocab: &Vocabulary, tweets: &[LabeledTweet]) -> Self {
        let mut ds = Dataset::default();
        for lt in tweets.iter().filter(|lt| lt.label != Camp::Third) {
            ds.features.push(vocab.featurize(&lt.tweet.tokens));
            ds.targets.push(if lt.label == Camp::Macri { 1.0 } else { 0.0 });
        }
        ds
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood plus `lambda / 2 * ||w||^2` (bias unpenalized).
pub fn objective(weights: &[f64], bias: f64, data: &Dataset, lambda: f64) -> f64 {
    let n = data.len().max(1) as f64;
    let nll: f64 = data
        .features
        .iter()
        .zip(&data.targets)
        .map(|(x, &y)| {
            let z = bias + x.dot(weights);
            softplus(z) - y * z
        })
        .sum();
    nll / n + 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`objective`] with respect to (weights, bias).
pub fn gradient(weights: &[f64], bias: f64, data: &Dataset, lambda: f64) -> (Vec<f64>, f64) {
    let n = data.len().max(1) as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
    let mut gb = 0.0;
    for (x, &y) in data.features.iter().zip(&data.targets) {
        let r = (sigmoid(bias + x.dot(weights)) - y) / n;
        gb += r;
        for &(i, v) in &x.entries {
            gw[i as usize] += r * v;
        }
    }
    (gw, gb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceModel {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub thresholds: Thresholds,
}

impl StanceModel {
    /// Log-odds of MP; linear in the token counts.
    pub fn score(&self, tokens: &[String]) -> f64 {
        self.bias + self.vocabulary.featurize(tokens).dot(&self.weights)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), ClassifyError> {
        serde_json::to_writer(out, self).map_err(|e| ClassifyError::ModelFile(e.to_string()))
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self, ClassifyError> {
        let model: StanceModel =
            serde_json::from_reader(input).map_err(|e| ClassifyError::ModelFile(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifyError::ModelFile(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        if model.weights.len() != model.vocabulary.len() {
            return Err(ClassifyError::ModelFile(
                "weight count does not match vocabulary".into(),
            ));
        }
        if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
            return Err(ClassifyError::ModelFile("non-finite weights".into()));
        }
        Thresholds::new(model.thresholds.low, model.thresholds.high)?;
        Ok(model)
    }
}

impl StanceScorer for StanceModel {
    fn prob_macri(&self, tokens: &[String]) -> f64 {
        sigmoid(self.score(tokens))
    }
}

fn check_both_classes(train: &[LabeledTweet]) -> Result<(), ClassifyError> {
    let has = |c| train.iter().any(|t| t.label == c);
    match (has(Camp::Fernandez), has(Camp::Macri)) {
        (true, true) => Ok(()),
        (true, false) => Err(ClassifyError::SingleClass(Camp::Fernandez)),
        (false, true) => Err(ClassifyError::SingleClass(Camp::Macri)),
        (false, false) => Err(ClassifyError::SingleClass(Camp::Third)),
    }
}

/// Seeded mini-batch gradient descent on [`objective`]. The L2 term is
/// applied as a proximal shrink after each data step, which stays stable for
/// any `lambda`.
pub fn train_lr(train: &[LabeledTweet], cfg: &LrConfig) -> Result<StanceModel, ClassifyError> {
    check_both_classes(train)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.learning_rate <= 0.0 || cfg.lambda < 0.0 {
        return Err(ClassifyError::Parameter(format!("{cfg:?}")));
    }
    let thresholds = Thresholds::new(cfg.thresholds.low, cfg.thresholds.high)?;
    let binary: Vec<LabeledTweet> = train
        .iter()
        .filter(|t| t.label != Camp::Third)
        .cloned()
        .collect();
    let vocab = Vocabulary::build(binary.iter().map(|t| t.tweet.tokens.as_slice()));
    let data = Dataset::from_labeled(&vocab, &binary);

    let mut weights = vec![0.0; vocab.len()];
    let mut bias = 0.0;
    let mut grad = vec![0.0; vocab.len()];
    let mut touched: Vec<u32> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        let eta = cfg.learning_rate / (epoch as f64).sqrt();
        let shrink = 1.0 / (1.0 + eta * cfg.lambda);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let m = batch.len() as f64;
            let mut gb = 0.0;
            for &i in batch {
                let x = &data.features[i];
                let r = (sigmoid(bias + x.dot(&weights)) - data.targets[i]) / m;
                gb += r;
                for &(j, v) in &x.entries {
                    if grad[j as usize] == 0.0 {
                        touched.push(j);
                    }
                    grad[j as usize] += r * v;
                }
            }
            for &j in &touched {
                weights[j as usize] -= eta * grad[j as usize];
                grad[j as usize] = 0.0;
            }
            touched.clear();
            if cfg.lambda > 0.0 {
                weights.iter_mut().for_each(|w| *w *= shrink);
            }
            bias -= eta * gb;
        }
    }
    Ok(StanceModel {
        format_version: MODEL_FORMAT_VERSION,
        vocabulary: vocab,
        weights,
        bias,
        lambda: cfg.lambda,
        thresholds,
    })
}

/// Multinomial naive Bayes over token counts with add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub vocabulary: Vocabulary,
    /// `[FF, MP]` log priors.
    pub log_prior: [f64; 2],
    /// `[FF, MP]` per-token log likelihoods.
    pub log_likelihood: [Vec<f64>; 2],
}

pub fn train_nb(train: &[LabeledTweet]) -> Result<NaiveBayesModel, ClassifyError> {
    check_both_classes(train)?;
    let binary: Vec<&LabeledTweet> = train.iter().filter(|t| t.label != Camp::Third).collect();
    let vocab = Vocabulary::build(binary.iter().map(|t| t.tweet.tokens.as_slice()));
    let v = vocab.len();
    let mut docs = [0usize; 2];
    let mut counts = [vec![0.0f64; v], vec![0.0f64; v]];
    for t in &binary {
        let c = usize::from(t.label == Camp::Macri);
        docs[c] += 1;
        for (i, x) in vocab.featurize(&t.tweet.tokens).entries {
            counts[c][i as usize] += x;
        }
    }
    let total = (docs[0] + docs[1]) as f64;
    let log_prior = [(docs[0] as f64 / total).ln(), (docs[1] as f64 / total).ln()];
    let likelihood = |c: &Vec<f64>| {
        let denom = c.iter().sum::<f64>() + v as f64;
        c.iter().map(|x| ((x + 1.0) / denom).ln()).collect::<Vec<_>>()
    };
    Ok(NaiveBayesModel {
        log_likelihood: [likelihood(&counts[0]), likelihood(&counts[1])],
        vocabulary: vocab,
        log_prior,
    })
}

impl StanceScorer for NaiveBayesModel {
    fn prob_macri(&self, tokens: &[String]) -> f64 {
        let x = self.vocabulary.featurize(tokens);
        let mut lp = self.log_prior;
        for (c, lp) in lp.iter_mut().enumerate() {
            *lp += x
                .entries
                .iter()
                .map(|&(i, v)| v * self.log_likelihood[c][i as usize])
                .sum::<f64>();
        }
        sigmoid(lp[1] - lp[0])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// `confusion[actual][predicted]`, index 0 = FF, 1 = MP.
    pub confusion: [[u64; 2]; 2],
    pub ff: ClassMetrics,
    pub mp: ClassMetrics,
    pub accuracy: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Two-class report with the decision at `p = 0.5` (`p >= 0.5` is MP).
pub fn evaluate<S: StanceScorer + Sync>(
    model: &S,
    test: &[LabeledTweet],
) -> Result<Evaluation, ClassifyError> {
    let rows: Vec<&LabeledTweet> = test.iter().filter(|t| t.label != Camp::Third).collect();
    if rows.is_empty() {
        return Err(ClassifyError::EmptyTestSet);
    }
    let mut confusion = [[0u64; 2]; 2];
    let predicted: Vec<usize> = rows
        .par_iter()
        .map(|t| usize::from(model.prob_macri(&t.tweet.tokens) >= 0.5))
        .collect();
    for (t, p) in rows.iter().zip(predicted) {
        confusion[usize::from(t.label == Camp::Macri)][p] += 1;
    }
    let metrics = |c: usize| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        }
    };
    Ok(Evaluation {
        confusion,
        ff: metrics(0),
        mp: metrics(1),
        accuracy: ratio(confusion[0][0] + confusion[1][1], rows.len() as u64),
    })
}

impl Evaluation {
    /// CSV `actual,predicted_ff,predicted_mp`.
    pub fn write_confusion_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["actual", "predicted_ff", "predicted_mp"])
            .map_err(csv_to_io)?;
        for (name, row) in ["FF", "MP"].iter().zip(self.confusion) {
            wtr.write_record([name.to_string(), row[0].to_string(), row[1].to_string()])
                .map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

/// Third-party seed hashtags short-circuit the model; otherwise the
/// probability is thresholded.
pub fn classify_tweet(model: &StanceModel, tweet: &CleanTweet, seeds: &HashtagSeedLabels) -> TweetStance {
    classify_with(model, &model.thresholds, tweet, seeds)
}

/// [`classify_tweet`] for any scorer.
pub fn classify_with<S: StanceScorer + ?Sized>(
    scorer: &S,
    thresholds: &Thresholds,
    tweet: &CleanTweet,
    seeds: &HashtagSeedLabels,
) -> TweetStance {
    let camps = seeds.camps_in(&tweet.hashtags);
    if !camps.is_empty() && camps.iter().all(|c| *c == Camp::Third) {
        return TweetStance {
            camp: Some(Camp::Third),
            p: None,
        };
    }
    let p = scorer.prob_macri(&tweet.tokens);
    TweetStance {
        camp: thresholds.stance_for(p),
        p: Some(p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTweet {
    pub tweet_id: String,
    pub user_id: String,
    pub day: NaiveDate,
    pub stance: Option<Camp>,
    pub p: Option<f64>,
}

impl ClassifiedTweet {
    pub fn stance_code(&self) -> &'static str {
        stance_code(self.stance)
    }
}

impl fmt::Display for TweetStance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(stance_code(self.camp))
    }
}

pub fn classify_all(
    model: &StanceModel,
    tweets: &[CleanTweet],
    seeds: &HashtagSeedLabels,
) -> Vec<ClassifiedTweet> {
    tweets
        .par_iter()
        .map(|t| {
            let s = classify_tweet(model, t, seeds);
            ClassifiedTweet {
                tweet_id: t.tweet_id.clone(),
                user_id: t.user_id.clone(),
                day: t.day,
                stance: s.camp,
                p: s.p,
            }
        })
        .collect()
}

/// CSV `tweet_id,user_id,day,stance,p`; stance is FF/MP/TP/U and `p` is empty
/// when the model was bypassed.
pub fn write_classified_csv<W: Write>(out: W, rows: &[ClassifiedTweet]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["tweet_id", "user_id", "day", "stance", "p"])
        .map_err(csv_to_io)?;
    for r in rows {
        wtr.write_record([
            r.tweet_id.as_str(),
            r.user_id.as_str(),
            &r.day.to_string(),
            r.stance_code(),
            &r.p.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_to_io)?;
    }
    wtr.flush()
}

pub fn read_classified_csv<R: Read>(input: R) -> io::Result<Vec<ClassifiedTweet>> {
    #[derive(Deserialize)]
    struct Row {
        tweet_id: String,
        user_id: String,
        day: NaiveDate,
        stance: String,
        p: Option<f64>,
    }
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row.map_err(csv_to_io)?;
        let stance = parse_stance_code(&row.stance).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unknown stance `{}`", row.stance),
            )
        })?;
        out.push(ClassifiedTweet {
            tweet_id: row.tweet_id,
            user_id: row.user_id,
            day: row.day,
            stance,
            p: row.p,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 7, d).unwrap()
    }

    fn clean(id: usize, tokens: &[&str], hashtags: &[&str]) -> CleanTweet {
        CleanTweet {
            tweet_id: id.to_string(),
            user_id: format!("u{}", id % 7),
            day: day(1 + (id % 28) as u32),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            hashtags: hashtags.iter().map(|s| s.to_string()).collect(),
            retweet_of_user_id: None,
        }
    }

    fn labeled(id: usize, tokens: &[&str], label: Camp) -> LabeledTweet {
        LabeledTweet {
            tweet: clean(id, tokens, &[]),
            label,
        }
    }

    fn seeds() -> HashtagSeedLabels {
        [
            ("sisepuede".to_string(), Camp::Macri),
            ("cambiemos".to_string(), Camp::Macri),
            ("cfk".to_string(), Camp::Fernandez),
            ("lavagna".to_string(), Camp::Third),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn labeling_rules() {
        let s = seeds();
        assert_eq!(seed_label(&clean(0, &[], &["sisepuede", "cambiemos"]), &s), Some(Camp::Macri));
        assert_eq!(seed_label(&clean(0, &[], &["sisepuede", "cfk"]), &s), None);
        assert_eq!(seed_label(&clean(0, &[], &["otro"]), &s), None);
    }

    #[test]
    fn training_split_partition() {
        let s = seeds();
        let tweets: Vec<CleanTweet> = (0..1000)
            .map(|i| clean(i, &["x"], if i % 2 == 0 { &["cfk"] } else { &["sisepuede"] }))
            .collect();
        let split = build_training_set(&tweets, &s, day(31), 7).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (900, 100));
        let mut ids: Vec<&str> = split
            .train
            .iter()
            .chain(&split.test)
            .map(|t| t.tweet.tweet_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 1000);

        let again = build_training_set(&tweets, &s, day(31), 7).unwrap();
        assert_eq!(again, split);
    }

    #[test]
    fn training_split_cutoff_conflicts_and_third() {
        let s = seeds();
        let tweets = vec![
            clean(1, &[], &["cfk"]),
            clean(2, &[], &["cfk", "sisepuede"]),
            clean(3, &[], &["lavagna"]),
        ];
        let split = build_training_set(&tweets, &s, day(31), 1).unwrap();
        assert_eq!(split.conflicts, 1);
        assert_eq!(split.third_party.len(), 1);
        assert_eq!(split.train.len() + split.test.len(), 1);
        assert!(matches!(
            build_training_set(&tweets, &s, day(1), 1),
            Err(ClassifyError::EmptyTrainingSet(_))
        ));
    }

    fn toy() -> Vec<LabeledTweet> {
        (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    labeled(i, &["a"], Camp::Macri)
                } else {
                    labeled(i, &["b"], Camp::Fernandez)
                }
            })
            .collect()
    }

    #[test]
    fn lr_separable_toy() {
        let model = train_lr(&toy(), &LrConfig::default()).unwrap();
        let eval = evaluate(&model, &toy()).unwrap();
        assert_eq!(eval.accuracy, 1.0);
    }

    #[test]
    fn lr_single_class_is_fatal() {
        let only_m: Vec<_> = toy().into_iter().filter(|t| t.label == Camp::Macri).collect();
        assert!(matches!(train_lr(&only_m, &LrConfig::default()), Err(ClassifyError::SingleClass(Camp::Macri))));
        assert!(train_nb(&only_m).is_err());
    }

    #[test]
    fn huge_lambda_shrinks_to_prior() {
        // 3:1 MP:FF with disjoint tokens
        let data: Vec<_> = (0..400)
            .map(|i| {
                if i % 4 == 0 {
                    labeled(i, &["b", "c"], Camp::Fernandez)
                } else {
                    labeled(i, &["a", "c"], Camp::Macri)
                }
            })
            .collect();
        let cfg = LrConfig { lambda: 1e6, epochs: 200, batch_size: 32, learning_rate: 0.5, ..LrConfig::default() };
        let model = train_lr(&data, &cfg).unwrap();
        assert!(model.weights.iter().all(|w| w.abs() < 1e-5), "{:?}", model.weights);
        let p = model.prob_macri(&["a".to_string()]);
        assert!((p - 0.75).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn lr_is_deterministic() {
        let a = train_lr(&toy(), &LrConfig { batch_size: 8, ..LrConfig::default() }).unwrap();
        let b = train_lr(&toy(), &LrConfig { batch_size: 8, ..LrConfig::default() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            b.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn score_is_linear_in_counts() {
        let model = train_lr(&toy(), &LrConfig::default()).unwrap();
        let one: Vec<String> = ["a", "b", "a", "zzz"].iter().map(|s| s.to_string()).collect();
        let two: Vec<String> = one.iter().chain(&one).cloned().collect();
        let d1 = model.score(&one) - model.bias;
        let d2 = model.score(&two) - model.bias;
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn nb_separable_and_smoothing() {
        let nb = train_nb(&toy()).unwrap();
        assert_eq!(evaluate(&nb, &toy()).unwrap().accuracy, 1.0);
        let b = nb.vocabulary.get("b").unwrap() as usize;
        assert!(nb.log_likelihood[1][b].exp() > 0.0);
        assert!(nb.log_likelihood[1][b].is_finite());
    }

    struct Fixed(f64);
    impl StanceScorer for Fixed {
        fn prob_macri(&self, _: &[String]) -> f64 {
            self.0
        }
    }

    #[test]
    fn evaluation_edge_cases() {
        let test = toy();
        let perfect = train_lr(&test, &LrConfig::default()).unwrap();
        let e = evaluate(&perfect, &test).unwrap();
        for m in [e.ff, e.mp] {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        let e = evaluate(&Fixed(0.9), &test).unwrap();
        assert_eq!(e.mp.recall, 1.0);
        assert_eq!(e.mp.precision, 0.5);
        assert_eq!(e.ff.precision, 0.0);
        assert!(evaluate(&Fixed(0.9), &[]).is_err());
        let mut buf = Vec::new();
        e.write_confusion_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "actual,predicted_ff,predicted_mp\nFF,0,20\nMP,0,20\n");
    }

    #[test]
    fn threshold_semantics() {
        let t = Thresholds::default();
        assert_eq!(t.stance_for(0.80), Some(Camp::Macri));
        assert_eq!(t.stance_for(0.50), None);
        assert_eq!(t.stance_for(0.33), Some(Camp::Fernandez));
        assert_eq!(t.stance_for(0.66), Some(Camp::Macri));
        assert!(Thresholds::new(0.7, 0.3).is_err());
    }

    #[test]
    fn third_party_bypasses_model() {
        let model = train_lr(&toy(), &LrConfig::default()).unwrap();
        let s = seeds();
        let tp = classify_tweet(&model, &clean(1, &["a"], &["lavagna"]), &s);
        assert_eq!((tp.camp, tp.p), (Some(Camp::Third), None));
        let mixed = classify_tweet(&model, &clean(1, &["a"], &["lavagna", "cfk"]), &s);
        assert!(mixed.p.is_some());
    }

    #[test]
    fn classified_csv_roundtrip_and_model_json() {
        let model = train_lr(&toy(), &LrConfig::default()).unwrap();
        let tweets = vec![clean(1, &["a"], &[]), clean(2, &["b"], &[]), clean(3, &[], &["lavagna"])];
        let rows = classify_all(&model, &tweets, &seeds());
        let mut buf = Vec::new();
        write_classified_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_classified_csv(buf.as_slice()).unwrap(), rows);

        let mut json = Vec::new();
        model.write_json(&mut json).unwrap();
        assert_eq!(StanceModel::read_json(json.as_slice()).unwrap(), model);
        let broken = String::from_utf8(json).unwrap().replace("\"format_version\":1", "\"format_version\":9");
        assert!(StanceModel::read_json(broken.as_bytes()).is_err());
    }
}
