//! Per-user opinion tracking and vote-share models.
//!
//! Every user's classified tweets are kept in a ledger of daily camp counts.
//! From it we derive the window (instantaneous) and cumulative opinions, the
//! loyalty class pair (cumulative base camp, camp of the last `k` tweets),
//! and four aggregate models:
//!
//! | model | FF / MP supporters                         | reassigned by retweet homophily |
//! |-------|--------------------------------------------|---------------------------------|
//! | 0     | cumulative plurality                       | none                            |
//! | 1     | base camp FF/MP, recent FF, MP or undecided | none                            |
//! | 2     | as model 1                                 | undecided users                 |
//! | 3     | as model 1                                 | undecided and unclassified users |
//!
//! Everything else is counted as third party. Ties are never broken: they
//! produce `Undecided`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{self, Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camp::{Camp, CampCounts};
use crate::classify::ClassifiedTweet;
use crate::ingest::{CleanTweet, DateRange};
use crate::io::csv_to_io;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OpinionError {
    #[error("day {day} is outside the collection window {start}..={end}")]
    DayOutsideWindow {
        day: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("T0 {t0} is after day {day}")]
    T0AfterDay { t0: NaiveDate, day: NaiveDate },
    #[error("window length must be at least one day")]
    EmptyWindow,
    #[error("unknown model id {0}; expected 0..=3")]
    UnknownModel(u8),
    #[error("T0 sensitivity needs at least two origins strictly before {0}")]
    T0Candidates(NaiveDate),
    #[error("tweet {tweet_id} dated {day} falls outside the collection window")]
    TweetOutsideWindow { tweet_id: String, day: NaiveDate },
    #[error("official results must list FF, MP and TP: {0}")]
    OfficialResults(String),
}

/// Opinion of one user over some range of days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserOpinion {
    Supports(Camp),
    /// Tie among the top nonzero camps.
    Undecided,
    /// No classified tweet in range.
    Unclassified,
}

impl UserOpinion {
    pub fn camp(self) -> Option<Camp> {
        match self {
            UserOpinion::Supports(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for UserOpinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserOpinion::Supports(c) => f.write_str(c.formula()),
            UserOpinion::Undecided => f.write_str("Undecided"),
            UserOpinion::Unclassified => f.write_str("Unclassified"),
        }
    }
}

/// Strict plurality over (F, M, T); a tie at the top is `Undecided`.
pub fn plurality(counts: CampCounts) -> UserOpinion {
    let votes = counts.0.map(|c| c as usize);
    if votes.iter().all(|v| *v == 0) {
        return UserOpinion::Unclassified;
    }
    crate::hashnet::strict_plurality(votes).map_or(UserOpinion::Undecided, UserOpinion::Supports)
}

/// Camp whose count exceeds the sum of the other two, else `Undecided`.
pub fn strict_majority(counts: CampCounts) -> UserOpinion {
    let total = counts.total();
    if total == 0 {
        return UserOpinion::Unclassified;
    }
    Camp::ALL
        .into_iter()
        .find(|c| 2 * counts.get(*c) > total)
        .map_or(UserOpinion::Undecided, UserOpinion::Supports)
}

/// Daily stance counts and chronological classified tweets of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLedger {
    pub user_id: String,
    pub first_seen: NaiveDate,
    pub window: DateRange,
    pub daily: BTreeMap<NaiveDate, CampCounts>,
    /// Classified tweets in chronological order.
    pub sequence: Vec<(NaiveDate, Camp)>,
}

impl UserLedger {
    pub fn new(user_id: impl Into<String>, first_seen: NaiveDate, window: DateRange) -> Self {
        Self {
            user_id: user_id.into(),
            first_seen,
            window,
            daily: BTreeMap::new(),
            sequence: Vec::new(),
        }
    }

    /// Appends one classified tweet; days must be pushed in chronological order.
    pub fn push(&mut self, day: NaiveDate, camp: Camp) {
        self.daily.entry(day).or_default().add(camp, 1);
        self.sequence.push((day, camp));
    }

    pub fn counts_between(&self, start: NaiveDate, end: NaiveDate) -> CampCounts {
        let mut total = CampCounts::default();
        if start <= end {
            for c in self.daily.range(start..=end).map(|(_, c)| c) {
                total.merge(c);
            }
        }
        total
    }

    fn check_day(&self, day: NaiveDate) -> Result<(), OpinionError> {
        if self.window.contains(day) {
            Ok(())
        } else {
            Err(OpinionError::DayOutsideWindow {
                day,
                start: self.window.start,
                end: self.window.end,
            })
        }
    }

    /// Plurality over days `d - w + 1 ..= d`.
    pub fn window_opinion(&self, d: NaiveDate, w: u32) -> Result<UserOpinion, OpinionError> {
        self.check_day(d)?;
        if w == 0 {
            return Err(OpinionError::EmptyWindow);
        }
        let start = d - chrono::Days::new(u64::from(w) - 1);
        Ok(plurality(self.counts_between(start, d)))
    }

    /// Plurality over `t0 ..= d`.
    pub fn cumulative_opinion(&self, d: NaiveDate, t0: NaiveDate) -> Result<UserOpinion, OpinionError> {
        self.check_day(d)?;
        if t0 > d {
            return Err(OpinionError::T0AfterDay { t0, day: d });
        }
        Ok(plurality(self.counts_between(t0, d)))
    }

    /// Loyalty class over `start ..= d`; `k` is the recent-tweet horizon.
    pub fn loyalty_between(&self, start: NaiveDate, d: NaiveDate, k: usize) -> LoyaltyClass {
        let counts = self.counts_between(start, d);
        let base = plurality(counts);
        let ultra_loyal = base.camp().is_some_and(|c| counts.get(c) == counts.total());
        let lo = self.sequence.partition_point(|(day, _)| *day < start);
        let hi = self.sequence.partition_point(|(day, _)| *day <= d);
        let in_range = &self.sequence[lo..hi.max(lo)];
        let mut recent = CampCounts::default();
        for (_, c) in &in_range[in_range.len().saturating_sub(k)..] {
            recent.add(*c, 1);
        }
        LoyaltyClass {
            base,
            recent: strict_majority(recent),
            ultra_loyal,
        }
    }

    pub fn loyalty_class(&self, d: NaiveDate, t0: NaiveDate, k: usize) -> Result<LoyaltyClass, OpinionError> {
        self.check_day(d)?;
        if t0 > d {
            return Err(OpinionError::T0AfterDay { t0, day: d });
        }
        Ok(self.loyalty_between(t0, d, k))
    }
}

/// Cumulative base camp paired with the camp of the last `k` classified tweets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LoyaltyClass {
    pub base: UserOpinion,
    pub recent: UserOpinion,
    pub ultra_loyal: bool,
}

impl LoyaltyClass {
    /// Report label, e.g. `ultra_loyal FF`, `loyal FF->MP`, `Undecided->TP`, `Unclassified`.
    pub fn group(&self) -> String {
        match (self.base, self.ultra_loyal) {
            (UserOpinion::Supports(c), true) => format!("ultra_loyal {}", c.formula()),
            (UserOpinion::Supports(c), false) => format!("loyal {}->{}", c.formula(), self.recent),
            (UserOpinion::Undecided, _) => format!("Undecided->{}", self.recent),
            (UserOpinion::Unclassified, _) => "Unclassified".to_string(),
        }
    }
}

/// Ledgers of every non-bot user, keyed by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerSet {
    pub window: DateRange,
    pub users: BTreeMap<String, UserLedger>,
}

/// Groups classified tweets by user. Unclassified tweets only register presence.
pub fn accumulate(tweets: &[ClassifiedTweet], window: DateRange) -> Result<LedgerSet, OpinionError> {
    let mut order: Vec<&ClassifiedTweet> = tweets.iter().collect();
    order.sort_by_key(|t| t.day);
    let mut users: BTreeMap<String, UserLedger> = BTreeMap::new();
    for t in order {
        if !window.contains(t.day) {
            return Err(OpinionError::TweetOutsideWindow {
                tweet_id: t.tweet_id.clone(),
                day: t.day,
            });
        }
        let ledger = users
            .entry(t.user_id.clone())
            .or_insert_with(|| UserLedger::new(t.user_id.clone(), t.day, window));
        if let Some(camp) = t.stance {
            ledger.push(t.day, camp);
        }
    }
    Ok(LedgerSet { window, users })
}

impl LedgerSet {
    pub fn get(&self, user: &str) -> Option<&UserLedger> {
        self.users.get(user)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    fn check_day(&self, day: NaiveDate) -> Result<(), OpinionError> {
        if self.window.contains(day) {
            Ok(())
        } else {
            Err(OpinionError::DayOutsideWindow {
                day,
                start: self.window.start,
                end: self.window.end,
            })
        }
    }

    /// Users already seen on or before `day`.
    pub fn present(&self, day: NaiveDate) -> impl Iterator<Item = &UserLedger> {
        self.users.values().filter(move |u| u.first_seen <= day)
    }

    /// Number of present users in each loyalty group.
    pub fn loyalty_breakdown(
        &self,
        day: NaiveDate,
        t0: NaiveDate,
        k: usize,
    ) -> Result<BTreeMap<String, usize>, OpinionError> {
        self.check_day(day)?;
        if t0 > day {
            return Err(OpinionError::T0AfterDay { t0, day });
        }
        let mut out = BTreeMap::new();
        for u in self.present(day) {
            *out.entry(u.loyalty_between(t0, day, k).group()).or_default() += 1;
        }
        Ok(out)
    }
}

/// Undirected simple graph of retweet relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetweetGraph {
    adj: BTreeMap<String, BTreeSet<String>>,
}

impl RetweetGraph {
    pub fn add_edge(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.adj.entry(a.to_string()).or_default().insert(b.to_string());
        self.adj.entry(b.to_string()).or_default().insert(a.to_string());
    }

    pub fn neighbors(&self, user: &str) -> impl Iterator<Item = &str> {
        self.adj.get(user).into_iter().flatten().map(String::as_str)
    }

    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.adj
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (a.as_str(), b.as_str())))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }
}

/// Builds the undirected retweet graph, dropping self-retweets and any edge touching `bots`.
pub fn build_retweet_graph(tweets: &[CleanTweet], bots: &HashSet<String>) -> RetweetGraph {
    let mut g = RetweetGraph::default();
    for t in tweets {
        if let Some(target) = &t.retweet_of_user_id {
            if !bots.contains(&t.user_id) && !bots.contains(target) {
                g.add_edge(&t.user_id, target);
            }
        }
    }
    g
}

/// Plurality camp among neighbours that already carry a decided label.
pub fn homophily_label(user: &str, graph: &RetweetGraph, decided: &HashMap<String, Camp>) -> UserOpinion {
    let mut votes = CampCounts::default();
    for n in graph.neighbors(user) {
        if let Some(c) = decided.get(n) {
            votes.add(*c, 1);
        }
    }
    match plurality(votes) {
        UserOpinion::Unclassified => UserOpinion::Undecided,
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ModelId {
    Model0,
    Model1,
    Model2,
    Model3,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Model0, ModelId::Model1, ModelId::Model2, ModelId::Model3];
}

impl TryFrom<u8> for ModelId {
    type Error = OpinionError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(ModelId::Model0),
            1 => Ok(ModelId::Model1),
            2 => Ok(ModelId::Model2),
            3 => Ok(ModelId::Model3),
            other => Err(OpinionError::UnknownModel(other)),
        }
    }
}

impl From<ModelId> for u8 {
    fn from(m: ModelId) -> u8 {
        m as u8
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomophilyMode {
    /// One pass over a frozen snapshot of decided labels.
    #[default]
    SinglePass,
    /// Repeat, feeding newly decided users back, until nothing changes.
    Iterate { max_rounds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpinionParams {
    pub t0: NaiveDate,
    pub k: usize,
    pub homophily: HomophilyMode,
}

impl Default for OpinionParams {
    fn default() -> Self {
        Self {
            t0: NaiveDate::from_ymd_opt(2019, 3, 1).unwrap(),
            k: 10,
            homophily: HomophilyMode::SinglePass,
        }
    }
}

/// Users per bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub ff: usize,
    pub mp: usize,
    pub third: usize,
    pub undecided: usize,
    pub unclassified: usize,
    /// Users present on the prediction day.
    pub users: usize,
}

/// Vote-share estimate of one model on one day. Shares are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionShares {
    pub day: NaiveDate,
    pub model: ModelId,
    pub ff: f64,
    pub mp: f64,
    pub third: f64,
    /// Model 0 only: undecided users as a fraction of users with any classified tweet.
    pub undecided: Option<f64>,
    pub counts: BucketCounts,
}

impl PredictionShares {
    pub fn triple(&self) -> [f64; 3] {
        [self.ff, self.mp, self.third]
    }

    pub fn percent(&self) -> [f64; 3] {
        self.triple().map(|x| 100.0 * x)
    }
}

/// Final per-user outcome under a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Ff,
    Mp,
    Third,
    Undecided,
    Unclassified,
}

impl Assignment {
    fn from_camp(c: Camp) -> Self {
        match c {
            Camp::Fernandez => Assignment::Ff,
            Camp::Macri => Assignment::Mp,
            Camp::Third => Assignment::Third,
        }
    }
}

/// Model-1 grouping of a loyalty class: FF/MP supporters keep their base camp
/// unless their recent tweets went to the third party.
fn grouped_supporter(class: &LoyaltyClass) -> Option<Camp> {
    match class.base {
        UserOpinion::Supports(c @ (Camp::Fernandez | Camp::Macri)) => match class.recent {
            UserOpinion::Supports(Camp::Third) => None,
            _ => Some(c),
        },
        _ => None,
    }
}

fn homophily_pass(
    pending: &[&str],
    graph: &RetweetGraph,
    decided: &mut HashMap<String, Camp>,
    mode: HomophilyMode,
) -> HashMap<String, UserOpinion> {
    let rounds = match mode {
        HomophilyMode::SinglePass => 1,
        HomophilyMode::Iterate { max_rounds } => max_rounds.max(1),
    };
    let mut result: HashMap<String, UserOpinion> = HashMap::new();
    for _ in 0..rounds {
        let snapshot = &*decided;
        let labels: Vec<(&str, UserOpinion)> = pending
            .par_iter()
            .map(|u| (*u, homophily_label(u, graph, snapshot)))
            .collect();
        let mut changed = false;
        for (u, l) in &labels {
            if result.get(*u) != Some(l) {
                changed = true;
                result.insert(u.to_string(), *l);
            }
        }
        if !changed {
            break;
        }
        for (u, l) in labels {
            if let UserOpinion::Supports(c) = l {
                decided.insert(u.to_string(), c);
            }
        }
    }
    result
}

fn evaluate_users<'a>(
    ledgers: &'a LedgerSet,
    start: NaiveDate,
    day: NaiveDate,
    k: usize,
) -> Vec<(&'a str, LoyaltyClass)> {
    let users: Vec<&UserLedger> = ledgers.present(day).collect();
    users
        .par_iter()
        .map(|u| (u.user_id.as_str(), u.loyalty_between(start, day, k)))
        .collect()
}

fn shares_from(model: ModelId, day: NaiveDate, assignments: &[Assignment]) -> PredictionShares {
    let mut counts = BucketCounts {
        users: assignments.len(),
        ..BucketCounts::default()
    };
    for a in assignments {
        match a {
            Assignment::Ff => counts.ff += 1,
            Assignment::Mp => counts.mp += 1,
            Assignment::Third => counts.third += 1,
            Assignment::Undecided => counts.undecided += 1,
            Assignment::Unclassified => counts.unclassified += 1,
        }
    }
    let denom = (counts.ff + counts.mp + counts.third) as f64;
    let share = |n: usize| if denom > 0.0 { n as f64 / denom } else { 0.0 };
    let undecided = (model == ModelId::Model0).then(|| {
        let classified = counts.ff + counts.mp + counts.third + counts.undecided;
        if classified > 0 {
            counts.undecided as f64 / classified as f64
        } else {
            0.0
        }
    });
    PredictionShares {
        day,
        model,
        ff: share(counts.ff),
        mp: share(counts.mp),
        third: share(counts.third),
        undecided,
        counts,
    }
}

fn assign_between<'a>(
    model: ModelId,
    start: NaiveDate,
    day: NaiveDate,
    ledgers: &'a LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> Vec<(&'a str, Assignment)> {
    let classes = evaluate_users(ledgers, start, day, params.k);
    if model == ModelId::Model0 {
        return classes
            .iter()
            .map(|(u, c)| {
                let a = match c.base {
                    UserOpinion::Supports(camp) => Assignment::from_camp(camp),
                    UserOpinion::Undecided => Assignment::Undecided,
                    UserOpinion::Unclassified => Assignment::Unclassified,
                };
                (*u, a)
            })
            .collect();
    }

    let mut decided: HashMap<String, Camp> = HashMap::new();
    let mut pending: Vec<&str> = Vec::new();
    let mut assignments: Vec<(&str, Assignment)> = Vec::with_capacity(classes.len());
    for (user, class) in &classes {
        if let Some(c) = grouped_supporter(class) {
            decided.insert(user.to_string(), c);
            assignments.push((user, Assignment::from_camp(c)));
            continue;
        }
        if class.base == UserOpinion::Supports(Camp::Third) {
            decided.insert(user.to_string(), Camp::Third);
        }
        let reassign = match class.base {
            UserOpinion::Undecided => model >= ModelId::Model2,
            UserOpinion::Unclassified => model == ModelId::Model3,
            UserOpinion::Supports(_) => false,
        };
        if reassign {
            pending.push(user);
        }
        assignments.push((user, Assignment::Third));
    }
    if !pending.is_empty() {
        let labels = homophily_pass(&pending, graph, &mut decided, params.homophily);
        for (user, a) in assignments.iter_mut() {
            if let Some(UserOpinion::Supports(c)) = labels.get(*user) {
                *a = Assignment::from_camp(*c);
            }
        }
    }
    assignments
}

fn predict_between(
    model: ModelId,
    start: NaiveDate,
    day: NaiveDate,
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> PredictionShares {
    let assignments: Vec<Assignment> = assign_between(model, start, day, ledgers, graph, params)
        .into_iter()
        .map(|(_, a)| a)
        .collect();
    shares_from(model, day, &assignments)
}

/// Per-user outcome behind [`predict`], in user-id order.
pub fn assignments<'a>(
    model: ModelId,
    day: NaiveDate,
    ledgers: &'a LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> Result<Vec<(&'a str, Assignment)>, OpinionError> {
    ledgers.check_day(day)?;
    if params.t0 > day {
        return Err(OpinionError::T0AfterDay { t0: params.t0, day });
    }
    Ok(assign_between(model, params.t0, day, ledgers, graph, params))
}

/// Cumulative prediction of `model` on `day` with origin `params.t0`.
pub fn predict(
    model: ModelId,
    day: NaiveDate,
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> Result<PredictionShares, OpinionError> {
    ledgers.check_day(day)?;
    if params.t0 > day {
        return Err(OpinionError::T0AfterDay { t0: params.t0, day });
    }
    Ok(predict_between(model, params.t0, day, ledgers, graph, params))
}

/// Instantaneous prediction: the same grouping restricted to the last `w` days.
pub fn predict_window(
    model: ModelId,
    day: NaiveDate,
    w: u32,
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> Result<PredictionShares, OpinionError> {
    ledgers.check_day(day)?;
    if w == 0 {
        return Err(OpinionError::EmptyWindow);
    }
    let start = day - chrono::Days::new(u64::from(w) - 1);
    Ok(predict_between(model, start, day, ledgers, graph, params))
}

/// Mean absolute error over the (FF, MP, TP) triple, in the triples' units.
pub fn mae(prediction: [f64; 3], official: [f64; 3]) -> f64 {
    prediction
        .iter()
        .zip(official)
        .map(|(p, o)| (p - o).abs())
        .sum::<f64>()
        / 3.0
}

/// Official result in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfficialResults {
    pub ff: f64,
    pub mp: f64,
    pub third: f64,
}

impl OfficialResults {
    pub fn triple(&self) -> [f64; 3] {
        [self.ff, self.mp, self.third]
    }

    /// CSV `camp,share_percent` with camps FF, MP and TP.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, OpinionError> {
        #[derive(Deserialize)]
        struct Row {
            camp: String,
            share_percent: f64,
        }
        let mut got: [Option<f64>; 3] = [None; 3];
        let mut rdr = csv::Reader::from_reader(input);
        for row in rdr.deserialize() {
            let row: Row = row.map_err(|e| OpinionError::OfficialResults(e.to_string()))?;
            let camp: Camp = row
                .camp
                .parse()
                .map_err(|e: crate::camp::UnknownCamp| OpinionError::OfficialResults(e.to_string()))?;
            got[camp.index()] = Some(row.share_percent);
        }
        match got {
            [Some(ff), Some(mp), Some(third)] => Ok(Self { ff, mp, third }),
            _ => Err(OpinionError::OfficialResults("missing camp row".into())),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["camp", "share_percent"]).map_err(csv_to_io)?;
        for (c, v) in Camp::ALL.iter().zip(self.triple()) {
            wtr.write_record([c.formula(), &v.to_string()]).map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct T0Sensitivity {
    /// Per-camp mean share (FF, MP, TP) across origins, as fractions.
    pub mean: [f64; 3],
    /// Per-camp population standard deviation across origins.
    pub std: [f64; 3],
    pub runs: Vec<PredictionShares>,
}

/// Re-runs `predict` for every origin in `t0s` and summarizes the spread.
pub fn t0_sensitivity(
    model: ModelId,
    day: NaiveDate,
    t0s: &[NaiveDate],
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
) -> Result<T0Sensitivity, OpinionError> {
    if t0s.len() < 2 || t0s.iter().any(|t| *t >= day) {
        return Err(OpinionError::T0Candidates(day));
    }
    let runs = t0s
        .iter()
        .map(|t0| predict(model, day, ledgers, graph, &OpinionParams { t0: *t0, ..*params }))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        let col: Vec<f64> = runs.iter().map(|r| r.triple()[c]).collect();
        (mean[c], std[c]) = mean_and_population_std(&col);
    }
    Ok(T0Sensitivity { mean, std, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub date: NaiveDate,
    /// Model id, or `election:<name>` for marker rows.
    pub model: String,
    pub shares: Option<PredictionShares>,
}

/// Daily predictions over `range`, cumulative from `params.t0` or over a moving
/// window of `window` days. Election days inside the range get a marker row.
pub fn emit_series(
    model: ModelId,
    range: DateRange,
    window: Option<u32>,
    ledgers: &LedgerSet,
    graph: &RetweetGraph,
    params: &OpinionParams,
    elections: &[(String, NaiveDate)],
) -> Result<Vec<SeriesRow>, OpinionError> {
    let mut rows = Vec::new();
    for day in range.days() {
        let shares = match window {
            Some(w) => predict_window(model, day, w, ledgers, graph, params)?,
            None => predict(model, day, ledgers, graph, params)?,
        };
        rows.push(SeriesRow {
            date: day,
            model: model.to_string(),
            shares: Some(shares),
        });
        for (name, _) in elections.iter().filter(|(_, d)| *d == day) {
            rows.push(SeriesRow {
                date: day,
                model: format!("election:{name}"),
                shares: None,
            });
        }
    }
    Ok(rows)
}

/// CSV `date,model,ff,mp,third,undecided,n_users`; marker rows leave the numbers empty.
pub fn write_series_csv<W: Write>(out: W, rows: &[SeriesRow]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "model", "ff", "mp", "third", "undecided", "n_users"])
        .map_err(csv_to_io)?;
    for r in rows {
        let mut rec = vec![r.date.to_string(), r.model.clone()];
        match &r.shares {
            Some(s) => {
                rec.extend([s.ff, s.mp, s.third].map(|x| format!("{x:.6}")));
                rec.push(s.undecided.map(|u| format!("{u:.6}")).unwrap_or_default());
                rec.push(s.counts.users.to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        wtr.write_record(&rec).map_err(csv_to_io)?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 3, 1).unwrap() + chrono::Days::new(u64::from(day))
    }

    fn window() -> DateRange {
        DateRange::new(d(0), d(99)).unwrap()
    }

    fn ct(user: &str, day: u32, stance: Option<Camp>) -> ClassifiedTweet {
        ClassifiedTweet {
            tweet_id: format!("{user}-{day}-{stance:?}"),
            user_id: user.to_string(),
            day: d(day),
            stance,
            p: None,
        }
    }

    const F: Option<Camp> = Some(Camp::Fernandez);
    const M: Option<Camp> = Some(Camp::Macri);
    const T: Option<Camp> = Some(Camp::Third);

    fn ledger_of(stances: &[(u32, Option<Camp>)]) -> UserLedger {
        let tweets: Vec<_> = stances.iter().map(|(day, s)| ct("u", *day, *s)).collect();
        accumulate(&tweets, window()).unwrap().users.remove("u").unwrap()
    }

    #[test]
    fn accumulate_counts_and_presence() {
        let mut tweets = vec![ct("a", 0, F), ct("a", 0, F), ct("a", 0, M)];
        tweets[1].tweet_id.push('x');
        tweets.push(ct("b", 3, None));
        let set = accumulate(&tweets, window()).unwrap();
        assert_eq!(set.get("a").unwrap().daily[&d(0)], CampCounts([2, 1, 0]));
        let b = set.get("b").unwrap();
        assert!(b.daily.is_empty() && b.sequence.is_empty());
        assert_eq!(b.first_seen, d(3));
        assert_eq!(b.cumulative_opinion(d(5), d(0)).unwrap(), UserOpinion::Unclassified);

        let mut late = ct("c", 0, F);
        late.day = d(200);
        assert!(accumulate(&[late], window()).is_err());
    }

    #[test]
    fn window_opinion_rules() {
        let u = ledger_of(&[(10, F), (10, F), (11, F), (12, M)]);
        assert_eq!(u.window_opinion(d(12), 3).unwrap(), UserOpinion::Supports(Camp::Fernandez));
        let u = ledger_of(&[(10, F), (11, F), (12, M), (12, M)]);
        assert_eq!(u.window_opinion(d(12), 3).unwrap(), UserOpinion::Undecided);
        assert_eq!(u.window_opinion(d(12), 1).unwrap(), UserOpinion::Supports(Camp::Macri));
        assert_eq!(u.window_opinion(d(20), 3).unwrap(), UserOpinion::Unclassified);
        assert_eq!(u.window_opinion(d(12), 0), Err(OpinionError::EmptyWindow));
        assert!(matches!(u.window_opinion(d(150), 3), Err(OpinionError::DayOutsideWindow { .. })));
    }

    #[test]
    fn cumulative_identity_and_loyal_user() {
        let u = ledger_of(&[(5, F), (5, M), (6, T)]);
        assert_eq!(u.cumulative_opinion(d(5), d(5)).unwrap(), u.window_opinion(d(5), 1).unwrap());
        let daily: Vec<_> = (0..60).map(|i| (i, F)).collect();
        let u = ledger_of(&daily);
        assert_eq!(u.cumulative_opinion(d(59), d(0)).unwrap(), UserOpinion::Supports(Camp::Fernandez));
        assert!(u.cumulative_opinion(d(5), d(6)).is_err());
    }

    #[test]
    fn loyalty_examples() {
        let u = ledger_of(&(0..10).map(|i| (i, M)).collect::<Vec<_>>());
        let c = u.loyalty_class(d(20), d(0), 10).unwrap();
        assert_eq!((c.base, c.ultra_loyal), (UserOpinion::Supports(Camp::Macri), true));
        assert_eq!(c.group(), "ultra_loyal MP");

        let mut s: Vec<_> = (0..20).map(|i| (i, F)).collect();
        s.extend((20..30).map(|i| (i, M)));
        let c = ledger_of(&s).loyalty_class(d(40), d(0), 10).unwrap();
        assert_eq!(c.base, UserOpinion::Supports(Camp::Fernandez));
        assert_eq!(c.recent, UserOpinion::Supports(Camp::Macri));
        assert!(!c.ultra_loyal);
        assert_eq!(c.group(), "loyal FF->MP");

        let mut s: Vec<_> = (0..20).map(|i| (i, F)).collect();
        s.extend((20..30).map(|i| (i, if i % 2 == 0 { M } else { F })));
        let c = ledger_of(&s).loyalty_class(d(40), d(0), 10).unwrap();
        assert_eq!(c.recent, UserOpinion::Undecided);

        // fewer than k tweets: use all of them
        let c = ledger_of(&[(1, T), (2, T), (3, F)]).loyalty_class(d(5), d(0), 10).unwrap();
        assert_eq!(c.recent, UserOpinion::Supports(Camp::Third));
    }

    #[test]
    fn retweet_graph_rules() {
        let mk = |u: &str, t: Option<&str>| CleanTweet {
            tweet_id: String::new(),
            user_id: u.into(),
            day: d(0),
            tokens: vec![],
            hashtags: vec![],
            retweet_of_user_id: t.map(String::from),
        };
        let tweets = vec![
            mk("a", Some("b")),
            mk("a", Some("b")),
            mk("a", Some("a")),
            mk("c", Some("a")),
            mk("d", Some("c")),
            mk("b", Some("a")),
            mk("e", None),
        ];
        let g = build_retweet_graph(&tweets, &HashSet::new());
        assert_eq!(g.edges(), vec![("a", "b"), ("a", "c"), ("c", "d")]);
        let bots: HashSet<String> = ["d".to_string()].into();
        assert_eq!(build_retweet_graph(&tweets, &bots).edge_count(), 2);
    }

    #[test]
    fn homophily_rules() {
        let mut g = RetweetGraph::default();
        for n in ["x", "y", "z"] {
            g.add_edge("u", n);
        }
        let mut decided: HashMap<String, Camp> =
            [("x".into(), Camp::Macri), ("y".into(), Camp::Macri), ("z".into(), Camp::Fernandez)].into();
        assert_eq!(homophily_label("u", &g, &decided), UserOpinion::Supports(Camp::Macri));
        decided.insert("y".into(), Camp::Fernandez);
        decided.remove("z");
        assert_eq!(homophily_label("u", &g, &decided), UserOpinion::Undecided);
        assert_eq!(homophily_label("lonely", &g, &decided), UserOpinion::Undecided);
    }

    #[test]
    fn mae_published_table_arithmetic() {
        let official = [48.24, 40.28, 11.48];
        assert_eq!(mae(official, official), 0.0);
        assert!((mae([48.9, 39.6, 11.5], official) - 1.36 / 3.0).abs() < 1e-12);
        assert!((mae([45.9, 32.5, 21.6], official) - 20.24 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_and_population_std(&[48.0, 50.0]), (49.0, 1.0));
    }

    #[test]
    fn unknown_model_id() {
        assert_eq!(ModelId::try_from(4), Err(OpinionError::UnknownModel(4)));
        assert_eq!(ModelId::try_from(3).unwrap(), ModelId::Model3);
    }

    fn mixed_set() -> (LedgerSet, RetweetGraph) {
        let mut tweets = Vec::new();
        // ultra loyal FF
        for i in 0..5 {
            tweets.push(ct("f1", i, F));
            tweets.push(ct("f2", i, F));
            tweets.push(ct("m1", i, M));
        }
        // undecided: 2 F, 2 M
        tweets.extend([ct("und", 1, F), ct("und", 2, F), ct("und", 3, M), ct("und", 4, M)]);
        // unclassified
        tweets.push(ct("unc", 2, None));
        // third party
        tweets.push(ct("t1", 2, T));
        let set = accumulate(&tweets, window()).unwrap();
        let mut g = RetweetGraph::default();
        g.add_edge("und", "f1");
        g.add_edge("unc", "m1");
        (set, g)
    }

    #[test]
    fn model_grouping() {
        let (set, g) = mixed_set();
        let p = OpinionParams { t0: d(0), ..OpinionParams::default() };
        let m0 = predict(ModelId::Model0, d(10), &set, &g, &p).unwrap();
        assert_eq!((m0.counts.ff, m0.counts.mp, m0.counts.third, m0.counts.undecided, m0.counts.unclassified), (2, 1, 1, 1, 1));
        assert!((m0.ff - 0.5).abs() < 1e-12);
        assert!((m0.undecided.unwrap() - 0.2).abs() < 1e-12);

        let m1 = predict(ModelId::Model1, d(10), &set, &g, &p).unwrap();
        assert_eq!((m1.counts.ff, m1.counts.mp, m1.counts.third), (2, 1, 3));
        let m2 = predict(ModelId::Model2, d(10), &set, &g, &p).unwrap();
        assert_eq!((m2.counts.ff, m2.counts.mp, m2.counts.third), (3, 1, 2));
        let m3 = predict(ModelId::Model3, d(10), &set, &g, &p).unwrap();
        assert_eq!((m3.counts.ff, m3.counts.mp, m3.counts.third), (3, 2, 1));
        for m in [&m1, &m2, &m3] {
            assert!((m.ff + m.mp + m.third - 1.0).abs() < 1e-12);
            assert_eq!(m.counts.users, 6);
        }
        // users only seen later are not counted
        assert_eq!(predict(ModelId::Model1, d(1), &set, &g, &p).unwrap().counts.users, 4);
    }

    #[test]
    fn iterated_homophily_reaches_further() {
        let mut tweets: Vec<_> = (0..3).map(|i| ct("f", i, F)).collect();
        tweets.push(ct("a", 1, None));
        tweets.push(ct("b", 1, None));
        let set = accumulate(&tweets, window()).unwrap();
        let mut g = RetweetGraph::default();
        g.add_edge("f", "a");
        g.add_edge("a", "b");
        let single = OpinionParams { t0: d(0), ..OpinionParams::default() };
        let iter = OpinionParams { homophily: HomophilyMode::Iterate { max_rounds: 10 }, ..single };
        assert_eq!(predict(ModelId::Model3, d(5), &set, &g, &single).unwrap().counts.ff, 2);
        assert_eq!(predict(ModelId::Model3, d(5), &set, &g, &iter).unwrap().counts.ff, 3);
    }

    #[test]
    fn t0_sensitivity_rules() {
        let (set, g) = mixed_set();
        let p = OpinionParams { t0: d(0), ..OpinionParams::default() };
        let s = t0_sensitivity(ModelId::Model1, d(10), &[d(0), d(1)], &set, &g, &p).unwrap();
        assert_eq!(s.runs.len(), 2);
        assert!(t0_sensitivity(ModelId::Model1, d(10), &[d(0)], &set, &g, &p).is_err());
        assert!(t0_sensitivity(ModelId::Model1, d(10), &[d(0), d(10)], &set, &g, &p).is_err());
    }

    #[test]
    fn series_rows_and_window_days() {
        let (set, g) = mixed_set();
        let p = OpinionParams { t0: d(0), ..OpinionParams::default() };
        let rows = emit_series(ModelId::Model0, DateRange::new(d(2), d(4)).unwrap(), None, &set, &g, &p, &[]).unwrap();
        assert_eq!(rows.len(), 3);
        let with_marker = emit_series(
            ModelId::Model0,
            DateRange::new(d(2), d(4)).unwrap(),
            Some(14),
            &set,
            &g,
            &p,
            &[("paso".into(), d(3))],
        )
        .unwrap();
        assert_eq!(with_marker.len(), 4);
        assert_eq!(with_marker[2].model, "election:paso");
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &with_marker).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,model,ff,mp,third,undecided,n_users\n"));
        assert!(text.contains(&format!("{},election:paso,,,,,\n", d(3))));

        // w = 14 at day 20 uses days 7..=20 only
        let u = ledger_of(&[(6, M), (6, M), (7, F), (20, F)]);
        assert_eq!(u.window_opinion(d(20), 14).unwrap(), UserOpinion::Supports(Camp::Fernandez));
        assert_eq!(u.window_opinion(d(20), 15).unwrap(), UserOpinion::Undecided);
    }

    #[test]
    fn official_results_csv() {
        let csv = "camp,share_percent\nFF,48.24\nMP,40.28\nTP,11.48\n";
        let o = OfficialResults::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(o.triple(), [48.24, 40.28, 11.48]);
        assert!(OfficialResults::read_csv("camp,share_percent\nFF,1\n".as_bytes()).is_err());
    }
}
