//! Synthetic electorates and survey panels with known ground truth.
//!
//! Corpus generation is deterministic for a fixed seed: every account draws
//! from its own ChaCha stream, so the output does not depend on thread count.

use std::collections::BTreeMap;
use std::io::{self, Write};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camp::{Camp, HashtagSeedLabels};
use crate::ingest::{RawTweet, DEFAULT_CLIENTS};
use crate::io::csv_to_io;
use crate::survey::{AgeGroup, Candidate, DemographicMargins, Education, Figure, Gender, Image, PanelResponse};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid electorate spec: {0}")]
    Spec(String),
    #[error("cannot hit {what} exactly: {hint}")]
    Infeasible { what: String, hint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoyaltyMix {
    /// Every tweet supports the planted camp.
    pub ultra_loyal: f64,
    /// Planted camp with `loyal_noise` of tweets for a random other camp.
    pub loyal: f64,
    /// Tweets for another camp until a switch day, then the planted camp.
    pub switchers: f64,
    /// Ultra loyal, but tweeting at `low_activity_scale` times the normal rate.
    pub low_activity: f64,
    pub loyal_noise: f64,
    /// Switch day as a fraction of the date range, drawn uniformly.
    pub switch_window: (f64, f64),
}

impl Default for LoyaltyMix {
    fn default() -> Self {
        Self {
            ultra_loyal: 0.55,
            loyal: 0.30,
            switchers: 0.05,
            low_activity: 0.10,
            loyal_noise: 0.15,
            switch_window: (0.1, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectorateSpec {
    /// Genuine accounts; bots come on top.
    pub n_users: usize,
    /// Planted (FF, MP, TP) shares.
    pub shares: [f64; 3],
    pub start: NaiveDate,
    pub days: u32,
    pub seed: u64,
    pub loyalty: LoyaltyMix,
    /// Mean daily tweet rate; per-user rates are gamma distributed.
    pub rate_mean: f64,
    /// Gamma shape of the per-user rate.
    pub rate_dispersion: f64,
    pub low_activity_scale: f64,
    /// Probability that a tweet carries a seed hashtag, per camp (F, M, T).
    pub hashtag_prob: [f64; 3],
    pub seeds_per_camp: usize,
    /// Fraction of all accounts that are bots.
    pub bot_fraction: f64,
    pub bot_clients: Vec<String>,
    /// Mean daily tweets of one bot.
    pub bot_rate: f64,
    pub vocab_per_camp: usize,
    /// Probability that a token comes from the pool shared by every camp.
    pub vocab_overlap: f64,
    pub tokens_per_tweet: (usize, usize),
    pub retweet_prob: f64,
    /// Probability that a retweet targets a same-camp account.
    pub homophily_q: f64,
}

impl Default for ElectorateSpec {
    fn default() -> Self {
        Self {
            n_users: 10_000,
            shares: [0.50, 0.40, 0.10],
            start: NaiveDate::from_ymd_opt(2019, 8, 28).unwrap(),
            days: 60,
            seed: 2019,
            loyalty: LoyaltyMix::default(),
            rate_mean: 0.5,
            rate_dispersion: 2.0,
            low_activity_scale: 0.1,
            hashtag_prob: [0.3, 0.3, 0.6],
            seeds_per_camp: 5,
            bot_fraction: 0.10,
            bot_clients: vec!["AutoPoster".into(), "dlvr.it".into(), "IFTTT".into()],
            bot_rate: 5.0,
            vocab_per_camp: 200,
            vocab_overlap: 0.30,
            tokens_per_tweet: (6, 12),
            retweet_prob: 0.2,
            homophily_q: 0.9,
        }
    }
}

fn check_fraction(name: &str, v: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SynthError::Spec(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl ElectorateSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        for (i, s) in self.shares.iter().enumerate() {
            check_fraction(&format!("shares[{i}]"), *s)?;
        }
        if (self.shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("shares must sum to 1");
        }
        let m = &self.loyalty;
        for (name, v) in [
            ("loyalty.ultra_loyal", m.ultra_loyal),
            ("loyalty.loyal", m.loyal),
            ("loyalty.switchers", m.switchers),
            ("loyalty.low_activity", m.low_activity),
            ("loyalty.loyal_noise", m.loyal_noise),
            ("loyalty.switch_window.0", m.switch_window.0),
            ("loyalty.switch_window.1", m.switch_window.1),
            ("bot_fraction", self.bot_fraction),
            ("vocab_overlap", self.vocab_overlap),
            ("retweet_prob", self.retweet_prob),
            ("homophily_q", self.homophily_q),
            ("hashtag_prob[0]", self.hashtag_prob[0]),
            ("hashtag_prob[1]", self.hashtag_prob[1]),
            ("hashtag_prob[2]", self.hashtag_prob[2]),
        ] {
            check_fraction(name, v)?;
        }
        if (m.ultra_loyal + m.loyal + m.switchers + m.low_activity - 1.0).abs() > 1e-9 {
            return bad("loyalty mix must sum to 1");
        }
        if m.switch_window.0 > m.switch_window.1 {
            return bad("switch_window must be ordered");
        }
        if self.bot_fraction >= 1.0 {
            return bad("bot_fraction must be below 1");
        }
        if !(self.rate_mean > 0.0 && self.rate_dispersion > 0.0 && self.low_activity_scale >= 0.0) {
            return bad("tweet rate parameters must be positive");
        }
        if self.bot_fraction > 0.0 && (self.bot_clients.is_empty() || !(self.bot_rate > 0.0)) {
            return bad("bots need at least one client and a positive rate");
        }
        if let Some(c) = self.bot_clients.iter().find(|c| DEFAULT_CLIENTS.contains(&c.as_str())) {
            return Err(SynthError::Spec(format!("bot client {c:?} is whitelisted")));
        }
        if self.vocab_per_camp == 0 || self.seeds_per_camp == 0 {
            return bad("vocab_per_camp and seeds_per_camp must be positive");
        }
        let (lo, hi) = self.tokens_per_tweet;
        if lo == 0 || lo > hi {
            return bad("tokens_per_tweet must be a non-empty range of positive lengths");
        }
        Ok(())
    }

    pub fn n_bots(&self) -> usize {
        (self.n_users as f64 * self.bot_fraction / (1.0 - self.bot_fraction)).round() as usize
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(i64::from(self.days) - 1)
    }

    /// Seed hashtags used by the generator, `hashtag -> camp`.
    pub fn seed_labels(&self) -> HashtagSeedLabels {
        Camp::ALL
            .iter()
            .flat_map(|c| (0..self.seeds_per_camp).map(move |j| (seed_hashtag(*c, j), *c)))
            .collect()
    }
}

fn seed_hashtag(camp: Camp, j: usize) -> String {
    let stem = match camp {
        Camp::Fernandez => "vamosff",
        Camp::Macri => "juntosmp",
        Camp::Third => "terceravia",
    };
    format!("{stem}{j}")
}

const GENERIC_HASHTAG: &str = "elecciones2019";

fn camp_word(camp: Option<Camp>, i: usize) -> String {
    let stem = match camp {
        Some(Camp::Fernandez) => "fer",
        Some(Camp::Macri) => "mac",
        Some(Camp::Third) => "ter",
        None => "com",
    };
    format!("{stem}{i}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedLoyalty {
    UltraLoyal,
    Loyal,
    Switcher,
    LowActivity,
    Bot,
}

impl PlantedLoyalty {
    pub fn label(self) -> &'static str {
        match self {
            PlantedLoyalty::UltraLoyal => "ultra_loyal",
            PlantedLoyalty::Loyal => "loyal",
            PlantedLoyalty::Switcher => "switcher",
            PlantedLoyalty::LowActivity => "low_activity",
            PlantedLoyalty::Bot => "bot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedUser {
    pub user_id: String,
    pub camp: Camp,
    pub loyalty: PlantedLoyalty,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Sorted by timestamp, then tweet id.
    pub tweets: Vec<RawTweet>,
    /// Genuine users first, then bots.
    pub truth: Vec<PlantedUser>,
    pub seeds: HashtagSeedLabels,
}

impl SyntheticCorpus {
    /// Realized camp fractions (FF, MP, TP) among genuine users.
    pub fn planted_shares(&self) -> [f64; 3] {
        let mut n = [0usize; 3];
        for u in self.truth.iter().filter(|u| u.loyalty != PlantedLoyalty::Bot) {
            n[u.camp.index()] += 1;
        }
        let total = n.iter().sum::<usize>().max(1) as f64;
        n.map(|x| x as f64 / total)
    }

    /// CSV `user_id,camp,loyalty`.
    pub fn write_truth_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["user_id", "camp", "loyalty"]).map_err(csv_to_io)?;
        for u in &self.truth {
            wtr.write_record([u.user_id.as_str(), u.camp.formula(), u.loyalty.label()])
                .map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

fn pick_camp(rng: &mut ChaCha8Rng, shares: &[f64; 3]) -> Camp {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for c in Camp::ALL {
        acc += shares[c.index()];
        if x < acc {
            return c;
        }
    }
    *Camp::ALL.iter().rev().find(|c| shares[c.index()] > 0.0).unwrap_or(&Camp::Third)
}

fn other_camp(rng: &mut ChaCha8Rng, camp: Camp) -> Camp {
    let others: Vec<Camp> = Camp::ALL.into_iter().filter(|c| *c != camp).collect();
    *others.choose(rng).unwrap()
}

struct Account {
    user_id: String,
    camp: Camp,
    loyalty: PlantedLoyalty,
    /// Camp tweeted before `switch_day` (switchers only).
    prior: Camp,
    switch_day: u32,
}

struct Generator<'a> {
    spec: &'a ElectorateSpec,
    accounts: Vec<Account>,
    /// Genuine account indices per camp, for retweet targets.
    by_camp: [Vec<usize>; 3],
}

impl Generator<'_> {
    fn text(&self, rng: &mut ChaCha8Rng, camp: Camp, hashtag_prob: f64) -> (String, Vec<String>) {
        let s = self.spec;
        let n = rng.random_range(s.tokens_per_tweet.0..=s.tokens_per_tweet.1);
        let mut words: Vec<String> = (0..n)
            .map(|_| {
                let pool = if rng.random::<f64>() < s.vocab_overlap { None } else { Some(camp) };
                camp_word(pool, rng.random_range(0..s.vocab_per_camp))
            })
            .collect();
        let mut hashtags = Vec::new();
        if rng.random::<f64>() < hashtag_prob {
            hashtags.push(seed_hashtag(camp, rng.random_range(0..s.seeds_per_camp)));
            if rng.random::<f64>() < 0.2 {
                let h = seed_hashtag(camp, rng.random_range(0..s.seeds_per_camp));
                if !hashtags.contains(&h) {
                    hashtags.push(h);
                }
            }
        }
        if rng.random::<f64>() < 0.1 {
            hashtags.push(GENERIC_HASHTAG.to_string());
        }
        words.extend(hashtags.iter().map(|h| format!("#{h}")));
        (words.join(" "), hashtags)
    }

    fn tweet(
        &self,
        rng: &mut ChaCha8Rng,
        account: usize,
        seq: u64,
        day: u32,
        camp: Camp,
        hashtag_prob: f64,
        client: &str,
    ) -> RawTweet {
        let a = &self.accounts[account];
        let (text, hashtags) = self.text(rng, camp, hashtag_prob);
        let date = self.spec.start + Duration::days(i64::from(day));
        let secs = rng.random_range(0..86_400);
        let timestamp = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).unwrap()) + Duration::seconds(secs);
        RawTweet {
            tweet_id: (account as u64 * 10_000_000 + seq).to_string(),
            user_id: a.user_id.clone(),
            timestamp,
            text,
            source_client: client.to_string(),
            hashtags,
            retweet_of_user_id: None,
            lang: "es".into(),
        }
    }

    fn retweet_target(&self, rng: &mut ChaCha8Rng, account: usize) -> Option<String> {
        let camp = self.accounts[account].camp;
        let target_camp = if rng.random::<f64>() < self.spec.homophily_q {
            camp
        } else {
            other_camp(rng, camp)
        };
        let pool = &self.by_camp[target_camp.index()];
        let pick = *pool.choose(rng)?;
        (pick != account).then(|| self.accounts[pick].user_id.clone())
    }

    fn genuine(&self, account: usize) -> Vec<RawTweet> {
        let s = self.spec;
        let a = &self.accounts[account];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(account as u64 + 1);
        let gamma = Gamma::new(s.rate_dispersion, s.rate_mean / s.rate_dispersion).unwrap();
        let mut rate: f64 = gamma.sample(&mut rng);
        if a.loyalty == PlantedLoyalty::LowActivity {
            rate *= s.low_activity_scale;
        }
        let client = *DEFAULT_CLIENTS.choose(&mut rng).unwrap();
        let mut per_day: Vec<u32> = (0..s.days)
            .map(|_| if rate > 0.0 { Poisson::new(rate).unwrap().sample(&mut rng) as u32 } else { 0 })
            .collect();
        if per_day.iter().all(|n| *n == 0) {
            per_day[rng.random_range(0..s.days as usize)] = 1;
        }
        let mut out = Vec::new();
        let mut seq = 0;
        for (day, n) in per_day.into_iter().enumerate() {
            let day = day as u32;
            for _ in 0..n {
                let camp = match a.loyalty {
                    PlantedLoyalty::Loyal if rng.random::<f64>() < s.loyalty.loyal_noise => other_camp(&mut rng, a.camp),
                    PlantedLoyalty::Switcher if day < a.switch_day => a.prior,
                    _ => a.camp,
                };
                let mut t = self.tweet(&mut rng, account, seq, day, camp, s.hashtag_prob[camp.index()], client);
                if rng.random::<f64>() < s.retweet_prob {
                    t.retweet_of_user_id = self.retweet_target(&mut rng, account);
                }
                out.push(t);
                seq += 1;
            }
        }
        out
    }

    fn bot(&self, account: usize) -> Vec<RawTweet> {
        let s = self.spec;
        let a = &self.accounts[account];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(account as u64 + 1);
        let client = s.bot_clients.choose(&mut rng).unwrap().clone();
        let poisson = Poisson::new(s.bot_rate).unwrap();
        let mut out = Vec::new();
        let mut seq = 0;
        for day in 0..s.days {
            for _ in 0..poisson.sample(&mut rng) as u32 {
                out.push(self.tweet(&mut rng, account, seq, day, a.camp, 0.8, &client));
                seq += 1;
            }
        }
        out
    }
}

/// Draws the corpus, the ground-truth sidecar and the seed hashtag labels.
pub fn generate_corpus(spec: &ElectorateSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = &spec.loyalty;
    let mut accounts = Vec::with_capacity(spec.n_users + spec.n_bots());
    let mut by_camp: [Vec<usize>; 3] = Default::default();
    for i in 0..spec.n_users {
        let camp = pick_camp(&mut master, &spec.shares);
        let x: f64 = master.random();
        let loyalty = if x < m.ultra_loyal {
            PlantedLoyalty::UltraLoyal
        } else if x < m.ultra_loyal + m.loyal {
            PlantedLoyalty::Loyal
        } else if x < m.ultra_loyal + m.loyal + m.switchers {
            PlantedLoyalty::Switcher
        } else {
            PlantedLoyalty::LowActivity
        };
        let prior = match camp {
            Camp::Fernandez => Camp::Macri,
            _ => Camp::Fernandez,
        };
        let frac = master.random_range(m.switch_window.0..=m.switch_window.1);
        by_camp[camp.index()].push(i);
        accounts.push(Account {
            user_id: format!("{}", 10_000_000 + i),
            camp,
            loyalty,
            prior,
            switch_day: (frac * f64::from(spec.days)).round() as u32,
        });
    }
    for b in 0..spec.n_bots() {
        accounts.push(Account {
            user_id: format!("{}", 90_000_000 + b),
            camp: pick_camp(&mut master, &spec.shares),
            loyalty: PlantedLoyalty::Bot,
            prior: Camp::Fernandez,
            switch_day: 0,
        });
    }
    let generator = Generator { spec, accounts, by_camp };
    let mut tweets: Vec<RawTweet> = (0..generator.accounts.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            if generator.accounts[i].loyalty == PlantedLoyalty::Bot {
                generator.bot(i)
            } else {
                generator.genuine(i)
            }
        })
        .collect();
    tweets.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.tweet_id.cmp(&b.tweet_id)));
    Ok(SyntheticCorpus {
        tweets,
        truth: generator
            .accounts
            .into_iter()
            .map(|a| PlantedUser { user_id: a.user_id, camp: a.camp, loyalty: a.loyalty })
            .collect(),
        seeds: spec.seed_labels(),
    })
}

// ---------------------------------------------------------------------------
// Survey panels

/// One row of the pre/post transition table, whole percents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTarget {
    pub pre: Candidate,
    pub n: usize,
    pub af: u32,
    pub mm: u32,
    pub other: u32,
    /// `None` for unknown pre-election answers.
    pub kept: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTarget<T> {
    pub stratum: T,
    /// Share of the disclosure denominator placed in this stratum.
    pub proportion: f64,
    pub revealed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTarget {
    pub figure: Figure,
    /// Whole percents in `Image::ALL` order.
    pub revealed: [u32; 4],
    pub not_revealed: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTargets {
    pub rows: Vec<TransitionTarget>,
    pub total_revealed: u32,
    pub gender: Vec<StratumTarget<Gender>>,
    pub age: Vec<StratumTarget<AgeGroup>>,
    pub education: Vec<StratumTarget<Education>>,
    pub images: Vec<ImageTarget>,
    pub seed: u64,
}

impl Default for PanelTargets {
    fn default() -> Self {
        use Candidate::*;
        let row = |pre, n, af, mm, other, kept| TransitionTarget { pre, n, af, mm, other, kept };
        fn st<T>(stratum: T, proportion: f64, revealed: u32) -> StratumTarget<T> {
            StratumTarget { stratum, proportion, revealed }
        }
        Self {
            rows: vec![
                row(AfCfk, 1600, 91, 2, 8, Some(91)),
                row(MmMp, 700, 6, 83, 11, Some(83)),
                row(Lavagna, 150, 19, 9, 72, Some(56)),
                row(DelCano, 100, 25, 0, 75, Some(54)),
                row(Espert, 100, 19, 14, 67, Some(53)),
                row(GomezCenturion, 133, 10, 8, 83, Some(69)),
                row(BlankNull, 100, 23, 4, 73, Some(47)),
                row(UnknownOther, 200, 53, 11, 36, None),
            ],
            total_revealed: 82,
            gender: vec![st(Gender::Male, 0.5, 83), st(Gender::Female, 0.5, 81)],
            age: vec![
                st(AgeGroup::From16To30, 0.30, 67),
                st(AgeGroup::From31To50, 0.30, 87),
                st(AgeGroup::From51To65, 0.22, 90),
                st(AgeGroup::Over65, 0.18, 89),
            ],
            education: vec![
                st(Education::FullSecondary, 0.40, 81),
                st(Education::IncompleteSecondary, 0.40, 81),
                st(Education::University, 0.20, 86),
            ],
            images: vec![
                ImageTarget { figure: Figure::Cfk, revealed: [45, 43, 6, 5], not_revealed: [20, 48, 22, 11] },
                ImageTarget { figure: Figure::Mm, revealed: [36, 50, 10, 4], not_revealed: [26, 39, 21, 14] },
                ImageTarget { figure: Figure::Af, revealed: [45, 39, 7, 8], not_revealed: [15, 28, 28, 35] },
            ],
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PanelFixture {
    pub panel: Vec<PanelResponse>,
    /// Target rows that cannot be met exactly by any sample size, with the fallback used.
    pub inexact: Vec<String>,
}

/// Counts `c` whose percentage `100 c / n` rounds to `t`, keeping clear of exact halves.
pub fn percent_interval(t: u32, n: usize) -> Option<(usize, usize)> {
    let (t, n) = (i128::from(t), n as i128);
    let lo = ((2 * t - 1) * n).div_euclid(200) + 1;
    let hi_num = (2 * t + 1) * n;
    let hi = hi_num.div_euclid(200) - i128::from(hi_num.rem_euclid(200) == 0);
    let (lo, hi) = (lo.max(0), hi.min(n));
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn hits(c: usize, t: u32, n: usize) -> bool {
    percent_interval(t, n).is_some_and(|(lo, hi)| (lo..=hi).contains(&c))
}

#[derive(Debug, PartialEq)]
enum AllocError {
    /// Some `n` would work, this one does not.
    TooSmall,
    /// Percentages cannot sum to 100 after rounding, whatever `n`.
    Inconsistent,
}

/// Integer counts summing to `n`, each rounding to its target percentage.
fn allocate(n: usize, targets: &[u32]) -> Result<Vec<usize>, AllocError> {
    let lo_sum: i64 = targets.iter().map(|t| 2 * i64::from(*t) - 1).sum();
    let hi_sum: i64 = targets.iter().map(|t| 2 * i64::from(*t) + 1).sum();
    if lo_sum >= 200 || hi_sum <= 200 {
        return Err(AllocError::Inconsistent);
    }
    let bounds: Vec<(usize, usize)> = targets
        .iter()
        .map(|t| percent_interval(*t, n).ok_or(AllocError::TooSmall))
        .collect::<Result<_, _>>()?;
    fill_to_sum(n, targets, &bounds).ok_or(AllocError::TooSmall)
}

/// Starts at the nearest in-bound counts and moves the cells furthest from
/// their ideal until the sum matches.
fn fill_to_sum(total: usize, targets: &[u32], bounds: &[(usize, usize)]) -> Option<Vec<usize>> {
    let lo: usize = bounds.iter().map(|b| b.0).sum();
    let hi: usize = bounds.iter().map(|b| b.1).sum();
    if total < lo || total > hi {
        return None;
    }
    let ideal: Vec<f64> = targets.iter().map(|t| f64::from(*t) * total as f64 / 100.0).collect();
    let mut c: Vec<usize> = ideal
        .iter()
        .zip(bounds)
        .map(|(x, (l, h))| (x.round() as usize).clamp(*l, *h))
        .collect();
    loop {
        let sum: usize = c.iter().sum();
        if sum == total {
            return Some(c);
        }
        let up = sum < total;
        let pick = (0..c.len())
            .filter(|&i| if up { c[i] < bounds[i].1 } else { c[i] > bounds[i].0 })
            .max_by(|&a, &b| {
                let gap = |i: usize| if up { ideal[i] - c[i] as f64 } else { c[i] as f64 - ideal[i] };
                gap(a).total_cmp(&gap(b)).then(b.cmp(&a))
            })?;
        if up {
            c[pick] += 1;
        } else {
            c[pick] -= 1;
        }
    }
}

/// Fallback for targets that cannot all round correctly: the largest target is
/// met exactly, the rest share the remainder in proportion.
fn allocate_pinned(n: usize, targets: &[u32]) -> Vec<usize> {
    let top = (0..targets.len()).max_by_key(|&i| (targets[i], std::cmp::Reverse(i))).unwrap();
    let ideal = f64::from(targets[top]) * n as f64 / 100.0;
    let pinned = percent_interval(targets[top], n)
        .map_or(ideal.round() as usize, |(l, h)| (ideal.round() as usize).clamp(l, h));
    let rest_targets: Vec<f64> = (0..targets.len()).filter(|&i| i != top).map(|i| f64::from(targets[i])).collect();
    let rest = largest_remainder(n - pinned, &rest_targets);
    let mut out = Vec::with_capacity(targets.len());
    let mut it = rest.into_iter();
    for i in 0..targets.len() {
        out.push(if i == top { pinned } else { it.next().unwrap() });
    }
    out
}

/// Hamilton apportionment of `n` by `weights`; ties go to the earlier index.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = n;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - out.iter().sum::<usize>();
    for &i in order.iter().cycle().take(missing) {
        out[i] += 1;
    }
    out
}

/// Exact counts of one transition row.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RowCounts {
    af: usize,
    mm: usize,
    other: usize,
    kept: usize,
}

/// Every count combination of a row that rounds to its targets.
fn row_options(t: &TransitionTarget) -> Vec<RowCounts> {
    let n = t.n;
    let (Some(af_b), Some(mm_b)) = (percent_interval(t.af, n), percent_interval(t.mm, n)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for af in af_b.0..=af_b.1 {
        for mm in mm_b.0..=mm_b.1 {
            if af + mm > n || !hits(n - af - mm, t.other, n) {
                continue;
            }
            let other = n - af - mm;
            match (t.pre.column(), t.kept) {
                (_, None) => out.push(RowCounts { af, mm, other, kept: 0 }),
                (crate::survey::TransitionColumn::Af, Some(k)) => {
                    if hits(af, k, n) {
                        out.push(RowCounts { af, mm, other, kept: af });
                    }
                }
                (crate::survey::TransitionColumn::Mm, Some(k)) => {
                    if hits(mm, k, n) {
                        out.push(RowCounts { af, mm, other, kept: mm });
                    }
                }
                (crate::survey::TransitionColumn::Other, Some(k)) => {
                    if let Some((lo, hi)) = percent_interval(k, n) {
                        out.extend((lo..=hi.min(other)).map(|kept| RowCounts { af, mm, other, kept }));
                    }
                }
            }
        }
    }
    out
}

fn row_distance(t: &TransitionTarget, r: &RowCounts) -> f64 {
    let n = t.n as f64;
    let d = |c: usize, p: u32| (c as f64 - f64::from(p) * n / 100.0).abs();
    d(r.af, t.af) + d(r.mm, t.mm) + d(r.other, t.other) + t.kept.map_or(0.0, |k| d(r.kept, k))
}

fn smallest_feasible_n(t: &TransitionTarget) -> Option<usize> {
    (t.n..t.n.max(1) * 4 + 400).find(|&n| !row_options(&TransitionTarget { n, ..t.clone() }).is_empty())
}

fn pick_rows(targets: &PanelTargets) -> Result<Vec<RowCounts>, SynthError> {
    let mut options = Vec::new();
    for t in &targets.rows {
        let opts = row_options(t);
        if opts.is_empty() {
            let hint = match smallest_feasible_n(t) {
                Some(n) => format!("row {} needs n >= {n} (got {})", t.pre, t.n),
                None => format!("row {} percentages are inconsistent", t.pre),
            };
            return Err(SynthError::Infeasible { what: format!("transition row {}", t.pre), hint });
        }
        options.push(opts);
    }
    // distinct kept counts per disclosing row, nearest-to-target first
    let kept_choices: Vec<Vec<usize>> = targets
        .rows
        .iter()
        .zip(&options)
        .map(|(t, opts)| {
            let mut ks: Vec<usize> = opts.iter().map(|o| o.kept).collect();
            ks.sort_unstable();
            ks.dedup();
            if t.kept.is_none() {
                ks.truncate(1);
            }
            ks
        })
        .collect();
    let disclosing: usize = targets.rows.iter().filter(|t| t.kept.is_some()).map(|t| t.n).sum();
    let (tot_lo, tot_hi) = percent_interval(targets.total_revealed, disclosing).ok_or_else(|| SynthError::Infeasible {
        what: "total disclosure".into(),
        hint: "the disclosing rows are empty".into(),
    })?;
    // per row: index into kept_choices, starting nearest the target rate
    let mut idx: Vec<usize> = targets
        .rows
        .iter()
        .zip(&kept_choices)
        .map(|(t, ks)| {
            let ideal = f64::from(t.kept.unwrap_or(0)) * t.n as f64 / 100.0;
            (0..ks.len())
                .min_by(|&a, &b| (ks[a] as f64 - ideal).abs().total_cmp(&(ks[b] as f64 - ideal).abs()))
                .unwrap()
        })
        .collect();
    let kept_total = |idx: &[usize]| -> usize {
        targets
            .rows
            .iter()
            .zip(&kept_choices)
            .zip(idx)
            .filter(|((t, _), _)| t.kept.is_some())
            .map(|((_, ks), i)| ks[*i])
            .sum()
    };
    loop {
        let k = kept_total(&idx);
        if (tot_lo..=tot_hi).contains(&k) {
            break;
        }
        let up = k < tot_lo;
        // move the largest row that still has room
        let row = (0..idx.len())
            .filter(|&r| targets.rows[r].kept.is_some())
            .filter(|&r| if up { idx[r] + 1 < kept_choices[r].len() } else { idx[r] > 0 })
            .max_by_key(|&r| (targets.rows[r].n, std::cmp::Reverse(r)));
        match row {
            Some(r) if up => idx[r] += 1,
            Some(r) => idx[r] -= 1,
            None => {
                return Err(SynthError::Infeasible {
                    what: format!("total disclosure {}%", targets.total_revealed),
                    hint: format!(
                        "row kept counts reach {k} of {disclosing}; rebalance row sizes towards rows whose kept rate is on the {} side",
                        if up { "high" } else { "low" }
                    ),
                })
            }
        }
    }
    Ok(targets
        .rows
        .iter()
        .zip(&options)
        .zip(kept_choices.iter().zip(&idx))
        .map(|((t, opts), (ks, i))| {
            let kept = ks[*i];
            *opts
                .iter()
                .filter(|o| o.kept == kept || t.kept.is_none())
                .min_by(|a, b| row_distance(t, a).total_cmp(&row_distance(t, b)))
                .unwrap()
        })
        .collect())
}

/// Stratum sizes and revealed counts for one axis, summing to `(n, kept)`.
fn stratum_counts<T: Copy + std::fmt::Debug>(
    axis: &str,
    strata: &[StratumTarget<T>],
    n: usize,
    kept: usize,
) -> Result<Vec<(T, usize, usize)>, SynthError> {
    let sizes = largest_remainder(n, &strata.iter().map(|s| s.proportion).collect::<Vec<_>>());
    let mut bounds = Vec::new();
    for (s, size) in strata.iter().zip(&sizes) {
        bounds.push(percent_interval(s.revealed, *size).ok_or_else(|| SynthError::Infeasible {
            what: format!("{axis} stratum {:?}", s.stratum),
            hint: format!("stratum holds {size} respondents; at least 100 are needed for whole-percent rates"),
        })?);
    }
    let rates: Vec<f64> = strata.iter().zip(&sizes).map(|(s, z)| f64::from(s.revealed) * *z as f64).collect();
    let counts = fill_weighted(kept, &rates, &bounds).ok_or_else(|| SynthError::Infeasible {
        what: format!("{axis} disclosure rates"),
        hint: format!("stratum proportions cannot average to {kept} revealed of {n}; adjust the {axis} proportions"),
    })?;
    Ok(strata.iter().zip(sizes).zip(counts).map(|((s, z), k)| (s.stratum, z, k)).collect())
}

/// Like `fill_to_sum`, with ideals given directly as `rate * size` (in percent units).
fn fill_weighted(total: usize, ideal_pct: &[f64], bounds: &[(usize, usize)]) -> Option<Vec<usize>> {
    let lo: usize = bounds.iter().map(|b| b.0).sum();
    let hi: usize = bounds.iter().map(|b| b.1).sum();
    if total < lo || total > hi {
        return None;
    }
    let ideal: Vec<f64> = ideal_pct.iter().map(|x| x / 100.0).collect();
    let mut c: Vec<usize> = ideal
        .iter()
        .zip(bounds)
        .map(|(x, (l, h))| (x.round() as usize).clamp(*l, *h))
        .collect();
    loop {
        let sum: usize = c.iter().sum();
        if sum == total {
            return Some(c);
        }
        let up = sum < total;
        let pick = (0..c.len())
            .filter(|&i| if up { c[i] < bounds[i].1 } else { c[i] > bounds[i].0 })
            .max_by(|&a, &b| {
                let gap = |i: usize| if up { ideal[i] - c[i] as f64 } else { c[i] as f64 - ideal[i] };
                gap(a).total_cmp(&gap(b)).then(b.cmp(&a))
            })?;
        if up {
            c[pick] += 1;
        } else {
            c[pick] -= 1;
        }
    }
}

/// Labels for the revealed and the hidden group of one axis, shuffled within each group.
fn axis_labels<T: Copy>(counts: &[(T, usize, usize)], rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (s, size, kept) in counts {
        yes.extend(std::iter::repeat_n(*s, *kept));
        no.extend(std::iter::repeat_n(*s, size - kept));
    }
    yes.shuffle(rng);
    no.shuffle(rng);
    (yes, no)
}

fn image_labels(
    what: &str,
    n: usize,
    targets: &[u32; 4],
    inexact: &mut Vec<String>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Image>, SynthError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let counts = match allocate(n, targets) {
        Ok(c) => c,
        Err(AllocError::Inconsistent) => {
            let sum: u32 = targets.iter().sum();
            inexact.push(format!("{what}: targets sum to {sum}%; the largest cell is kept exact"));
            allocate_pinned(n, targets)
        }
        Err(AllocError::TooSmall) => {
            return Err(SynthError::Infeasible {
                what: what.into(),
                hint: format!("group holds {n} respondents; enlarge the transition rows"),
            })
        }
    };
    let mut out: Vec<Image> = Image::ALL
        .iter()
        .zip(counts)
        .flat_map(|(img, c)| std::iter::repeat_n(*img, c))
        .collect();
    out.shuffle(rng);
    Ok(out)
}

/// Census-style population margins for raking synthetic panels.
pub fn census_margins() -> DemographicMargins {
    let axis = |cats: &[(&str, f64)]| cats.iter().map(|(c, v)| (c.to_string(), *v)).collect::<BTreeMap<_, _>>();
    let axes = BTreeMap::from([
        (
            "age_group".to_string(),
            axis(&[("16-30", 0.27), ("31-50", 0.35), ("51-65", 0.22), ("65+", 0.16)]),
        ),
        ("gender".to_string(), axis(&[("M", 0.48), ("F", 0.52)])),
        (
            "education".to_string(),
            axis(&[
                ("full secondary", 0.35),
                ("incomplete secondary", 0.40),
                ("full/incomplete university", 0.25),
            ]),
        ),
    ]);
    DemographicMargins::new(axes).expect("margins sum to one")
}

/// Builds a unit-weight panel whose weighted tables round to the targets.
pub fn generate_panel(targets: &PanelTargets) -> Result<PanelFixture, SynthError> {
    let counts = pick_rows(targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(targets.seed);
    let mut inexact = Vec::new();

    struct Draft {
        pre: Candidate,
        post: Candidate,
    }
    let mut revealed = Vec::new();
    let mut hidden = Vec::new();
    let mut unknown = Vec::new();
    for (t, c) in targets.rows.iter().zip(&counts) {
        let fallback = if t.pre == Candidate::BlankNull { Candidate::Lavagna } else { Candidate::BlankNull };
        let kept_post = match t.pre.column() {
            crate::survey::TransitionColumn::Other => t.pre,
            _ => fallback,
        };
        let other_kept = if t.kept.is_some() && t.pre.column() == crate::survey::TransitionColumn::Other {
            c.kept
        } else {
            0
        };
        let posts = std::iter::repeat_n(Candidate::AfCfk, c.af)
            .chain(std::iter::repeat_n(Candidate::MmMp, c.mm))
            .chain(std::iter::repeat_n(kept_post, other_kept))
            .chain(std::iter::repeat_n(fallback, c.other - other_kept));
        for post in posts {
            let d = Draft { pre: t.pre, post };
            if t.kept.is_none() || t.pre == Candidate::UnknownOther {
                unknown.push(d);
            } else if post == t.pre {
                revealed.push(d);
            } else {
                hidden.push(d);
            }
        }
    }

    let n = revealed.len() + hidden.len();
    let kept = revealed.len();
    let gender = stratum_counts("gender", &targets.gender, n, kept)?;
    let age = stratum_counts("age", &targets.age, n, kept)?;
    let education = stratum_counts("education", &targets.education, n, kept)?;
    let (g_yes, g_no) = axis_labels(&gender, &mut rng);
    let (a_yes, a_no) = axis_labels(&age, &mut rng);
    let (e_yes, e_no) = axis_labels(&education, &mut rng);

    let mut img_yes: BTreeMap<&str, Vec<Image>> = BTreeMap::new();
    let mut img_no: BTreeMap<&str, Vec<Image>> = BTreeMap::new();
    for it in &targets.images {
        let f = it.figure.label();
        img_yes.insert(f, image_labels(&format!("{f} Revealed"), kept, &it.revealed, &mut inexact, &mut rng)?);
        img_no.insert(f, image_labels(&format!("{f} Not Revealed"), n - kept, &it.not_revealed, &mut inexact, &mut rng)?);
    }
    let image_at = |map: &BTreeMap<&str, Vec<Image>>, fig: Figure, i: usize| {
        map.get(fig.label()).map_or(Image::NsNc, |v| v[i])
    };

    let mut panel = Vec::with_capacity(n + unknown.len());
    let mut push = |d: &Draft, age, gender, education, images: [Image; 3]| {
        panel.push(PanelResponse {
            respondent_id: format!("{}", 100_000 + panel.len()),
            pre_choice: d.pre,
            post_choice: d.post,
            age_group: age,
            gender,
            education,
            image_cfk: images[0],
            image_mm: images[1],
            image_af: images[2],
            weight: 1.0,
        });
    };
    for (i, d) in revealed.iter().enumerate() {
        let images = Figure::ALL.map(|f| image_at(&img_yes, f, i));
        push(d, a_yes[i], g_yes[i], e_yes[i], images);
    }
    for (i, d) in hidden.iter().enumerate() {
        let images = Figure::ALL.map(|f| image_at(&img_no, f, i));
        push(d, a_no[i], g_no[i], e_no[i], images);
    }
    let spread = |m: usize, props: Vec<f64>| largest_remainder(m, &props);
    let u = unknown.len();
    let ages: Vec<AgeGroup> = targets
        .age
        .iter()
        .zip(spread(u, targets.age.iter().map(|s| s.proportion).collect()))
        .flat_map(|(s, c)| std::iter::repeat_n(s.stratum, c))
        .collect();
    let genders: Vec<Gender> = targets
        .gender
        .iter()
        .zip(spread(u, targets.gender.iter().map(|s| s.proportion).collect()))
        .flat_map(|(s, c)| std::iter::repeat_n(s.stratum, c))
        .collect();
    let educations: Vec<Education> = targets
        .education
        .iter()
        .zip(spread(u, targets.education.iter().map(|s| s.proportion).collect()))
        .flat_map(|(s, c)| std::iter::repeat_n(s.stratum, c))
        .collect();
    for (i, d) in unknown.iter().enumerate() {
        let img = Image::ALL[i % 4];
        push(d, ages[i], genders[i], educations[i], [img, img, img]);
    }
    Ok(PanelFixture { panel, inexact })
}
