//! Archived tweet ingestion: NDJSON parsing, client-source bot filtering and
//! text standardization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Read, Write};
use std::sync::LazyLock;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("reading input: {0}")]
    Io(#[from] io::Error),
    #[error("whitelist is empty")]
    EmptyWhitelist,
    #[error("collection window start {start} is after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
}

/// Inclusive range of UTC calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        if start > end {
            return Err(IngestError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }

    pub fn len_days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

/// One post as archived by the collector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTweet {
    pub tweet_id: String,
    pub user_id: String,
    #[serde(with = "rfc3339_seconds")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub source_client: String,
    pub hashtags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweet_of_user_id: Option<String>,
    #[serde(default)]
    pub lang: String,
}

impl RawTweet {
    pub fn day(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

mod rfc3339_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Tweet after standardization. Tokens are lowercase except the `URL` placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanTweet {
    pub tweet_id: String,
    pub user_id: String,
    pub day: NaiveDate,
    pub tokens: Vec<String>,
    pub hashtags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweet_of_user_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub lines: u64,
    pub parsed: u64,
    pub blank: u64,
    pub malformed: u64,
    pub duplicate_ids: u64,
    pub out_of_window: u64,
    /// Records whose supplied hashtags disagree with the ones found in the text.
    pub hashtag_mismatch: u64,
}

static HASHTAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(\w+)").unwrap());
static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[#@]?\w+").unwrap());

/// Hashtags found in free text, lowercased, without `#`, in order of appearance.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    HASHTAG_RE
        .captures_iter(text)
        .map(|c| c[1].nfc().collect::<String>().to_lowercase())
        .collect()
}

// Wire record: everything optional so that a missing field is a counted skip,
// never a hard failure.
#[derive(Deserialize)]
struct WireTweet {
    tweet_id: Option<serde_json::Value>,
    user_id: Option<serde_json::Value>,
    timestamp: Option<serde_json::Value>,
    text: Option<String>,
    source_client: Option<String>,
    hashtags: Option<Vec<String>>,
    retweet_of_user_id: Option<serde_json::Value>,
    lang: Option<String>,
}

fn id_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_timestamp(v: serde_json::Value) -> Option<DateTime<Utc>> {
    match v {
        serde_json::Value::String(s) => DateTime::parse_from_rfc3339(&s)
            .ok()
            .map(|t| t.with_timezone(&Utc))
            // Twitter v1.1 `created_at`
            .or_else(|| {
                DateTime::parse_from_str(&s, "%a %b %d %H:%M:%S %z %Y")
                    .ok()
                    .map(|t| t.with_timezone(&Utc))
            }),
        serde_json::Value::Number(n) => n.as_i64().and_then(|s| DateTime::from_timestamp(s, 0)),
        _ => None,
    }
}

fn parse_line(line: &str, stats: &mut ParseStats) -> Option<RawTweet> {
    let wire: WireTweet = serde_json::from_str(line).ok()?;
    let tweet_id = id_string(wire.tweet_id?)?;
    let user_id = id_string(wire.user_id?)?;
    let timestamp = parse_timestamp(wire.timestamp?)?;
    let text = wire.text?;
    let source_client = wire.source_client?;
    let extracted = extract_hashtags(&text);
    let hashtags = match wire.hashtags {
        Some(given) => {
            let given: Vec<String> = given
                .iter()
                .map(|h| crate::camp::normalize_hashtag(h).nfc().collect())
                .collect();
            let a: BTreeSet<&String> = given.iter().collect();
            let b: BTreeSet<&String> = extracted.iter().collect();
            if a != b {
                stats.hashtag_mismatch += 1;
                log::warn!("tweet {tweet_id}: hashtags field disagrees with text");
            }
            given
        }
        None => extracted,
    };
    let retweet_of_user_id = wire.retweet_of_user_id.and_then(id_string);
    Some(RawTweet {
        tweet_id,
        user_id,
        timestamp,
        text,
        source_client,
        hashtags,
        retweet_of_user_id,
        lang: wire.lang.unwrap_or_default(),
    })
}

/// Parses one tweet per line. Malformed lines, repeated ids and tweets outside
/// `window` are skipped and counted; only I/O failures are fatal.
pub fn parse_stream<R: BufRead>(
    reader: R,
    window: Option<DateRange>,
) -> Result<(Vec<RawTweet>, ParseStats), IngestError> {
    let mut stats = ParseStats::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        stats.lines += 1;
        if line.trim().is_empty() {
            stats.blank += 1;
            continue;
        }
        let Some(tweet) = parse_line(&line, &mut stats) else {
            stats.malformed += 1;
            continue;
        };
        if let Some(w) = window {
            if !w.contains(tweet.day()) {
                stats.out_of_window += 1;
                continue;
            }
        }
        if !seen.insert(tweet.tweet_id.clone()) {
            stats.duplicate_ids += 1;
            continue;
        }
        stats.parsed += 1;
        out.push(tweet);
    }
    Ok((out, stats))
}

pub fn write_raw_ndjson<W: Write>(mut out: W, tweets: &[RawTweet]) -> io::Result<()> {
    for t in tweets {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Client names considered official; anything else is treated as automated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceWhitelist {
    allowed: BTreeSet<String>,
}

pub const DEFAULT_CLIENTS: [&str; 6] = [
    "Twitter for iPhone",
    "Twitter for Android",
    "Twitter Web App",
    "Twitter Web Client",
    "Twitter for iPad",
    "TweetDeck",
];

impl Default for SourceWhitelist {
    fn default() -> Self {
        Self {
            allowed: DEFAULT_CLIENTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SourceWhitelist {
    pub fn new<I, S>(clients: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let allowed: BTreeSet<String> = clients
            .into_iter()
            .map(|s| s.as_ref().trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if allowed.is_empty() {
            return Err(IngestError::EmptyWhitelist);
        }
        Ok(Self { allowed })
    }

    /// One client name per line.
    pub fn read<R: Read>(mut reader: R) -> Result<Self, IngestError> {
        let mut s = String::new();
        reader.read_to_string(&mut s)?;
        Self::new(s.lines())
    }

    pub fn allows(&self, client: &str) -> bool {
        self.allowed.contains(client.trim())
    }
}

pub fn filter_bots(tweet: &RawTweet, whitelist: &SourceWhitelist) -> bool {
    whitelist.allows(&tweet.source_client)
}

/// Splits a stream into (kept, bot) by client source. The two parts partition the input.
pub fn partition_bots(
    tweets: Vec<RawTweet>,
    whitelist: &SourceWhitelist,
) -> (Vec<RawTweet>, Vec<RawTweet>) {
    tweets.into_iter().partition(|t| filter_bots(t, whitelist))
}

/// Authors seen only in the bot stream.
pub fn bot_users(kept: &[RawTweet], bots: &[RawTweet]) -> HashSet<String> {
    let genuine: HashSet<&str> = kept.iter().map(|t| t.user_id.as_str()).collect();
    bots.iter()
        .filter(|t| !genuine.contains(t.user_id.as_str()))
        .map(|t| t.user_id.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            words
                .into_iter()
                .map(|w| normalize_token(w.as_ref().trim()))
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// One word per line; blank lines and `#`-prefixed comment lines are ignored.
    pub fn read<R: Read>(mut reader: R) -> io::Result<Self> {
        let mut s = String::new();
        reader.read_to_string(&mut s)?;
        Ok(Self::new(
            s.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    /// The Spanish list shipped with the crate.
    pub fn spanish() -> Self {
        Self::read(include_str!("../fixtures/stopwords_es.txt").as_bytes())
            .expect("bundled stopword list")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub const URL_TOKEN: &str = "URL";

fn normalize_token(tok: &str) -> String {
    tok.nfc().collect::<String>().to_lowercase().nfc().collect()
}

fn push_tokens(segment: &str, stopwords: &Stopwords, out: &mut Vec<String>) {
    for m in TOKEN_RE.find_iter(segment) {
        let raw = m.as_str();
        if raw == URL_TOKEN {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let raw = raw.strip_prefix('@').unwrap_or(raw);
        let body = raw.strip_prefix('#').unwrap_or(raw);
        if !body.chars().any(char::is_alphanumeric) {
            continue;
        }
        let tok = normalize_token(raw);
        if !stopwords.contains(&tok) {
            out.push(tok);
        }
    }
}

/// Tokenizes free text: URLs become `URL`, mentions lose `@`, hashtags keep `#`,
/// stopwords and punctuation-only pieces are dropped.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let text: String = text.nfc().collect();
    let mut tokens = Vec::new();
    let mut last = 0;
    for m in URL_RE.find_iter(&text) {
        push_tokens(&text[last..m.start()], stopwords, &mut tokens);
        tokens.push(URL_TOKEN.to_string());
        last = m.end();
    }
    push_tokens(&text[last..], stopwords, &mut tokens);
    tokens
}

pub fn standardize(tweet: &RawTweet, stopwords: &Stopwords) -> CleanTweet {
    CleanTweet {
        tweet_id: tweet.tweet_id.clone(),
        user_id: tweet.user_id.clone(),
        day: tweet.day(),
        tokens: tokenize(&tweet.text, stopwords),
        hashtags: tweet.hashtags.clone(),
        retweet_of_user_id: tweet.retweet_of_user_id.clone(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct DayCounts {
    tweets: u64,
    users: HashSet<String>,
    bot_tweets: u64,
    bots: HashSet<String>,
}

/// Per-day corpus volume. Partial stats over shards merge associatively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DailyStats {
    days: BTreeMap<NaiveDate, DayCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DailyStatsRow {
    pub date: NaiveDate,
    pub tweets: u64,
    pub users: u64,
    pub bot_tweets: u64,
    pub bots: u64,
}

impl DailyStats {
    pub fn add_tweet(&mut self, day: NaiveDate, user_id: &str) {
        let d = self.days.entry(day).or_default();
        d.tweets += 1;
        d.users.insert(user_id.to_string());
    }

    pub fn add_bot_tweet(&mut self, day: NaiveDate, user_id: &str) {
        let d = self.days.entry(day).or_default();
        d.bot_tweets += 1;
        d.bots.insert(user_id.to_string());
    }

    pub fn merge(&mut self, other: DailyStats) {
        for (day, c) in other.days {
            let d = self.days.entry(day).or_default();
            d.tweets += c.tweets;
            d.users.extend(c.users);
            d.bot_tweets += c.bot_tweets;
            d.bots.extend(c.bots);
        }
    }

    pub fn rows(&self) -> Vec<DailyStatsRow> {
        self.days
            .iter()
            .map(|(date, c)| DailyStatsRow {
                date: *date,
                tweets: c.tweets,
                users: c.users.len() as u64,
                bot_tweets: c.bot_tweets,
                bots: c.bots.len() as u64,
            })
            .collect()
    }

    pub fn totals(&self) -> DailyStatsRow {
        let mut users = HashSet::new();
        let mut bots = HashSet::new();
        let (mut tweets, mut bot_tweets) = (0, 0);
        for c in self.days.values() {
            tweets += c.tweets;
            bot_tweets += c.bot_tweets;
            users.extend(c.users.iter());
            bots.extend(c.bots.iter());
        }
        DailyStatsRow {
            date: self.days.keys().next().copied().unwrap_or_default(),
            tweets,
            users: users.len() as u64,
            bot_tweets,
            bots: bots.len() as u64,
        }
    }

    /// CSV `date,tweets,users,bot_tweets,bots`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["date", "tweets", "users", "bot_tweets", "bots"])
            .map_err(crate::io::csv_to_io)?;
        for r in self.rows() {
            wtr.write_record([
                r.date.to_string(),
                r.tweets.to_string(),
                r.users.to_string(),
                r.bot_tweets.to_string(),
                r.bots.to_string(),
            ])
            .map_err(crate::io::csv_to_io)?;
        }
        wtr.flush()
    }
}

pub fn corpus_stats(tweets: &[CleanTweet], bot_tweets: &[RawTweet]) -> DailyStats {
    let mut stats = DailyStats::default();
    for t in tweets {
        stats.add_tweet(t.day, &t.user_id);
    }
    for t in bot_tweets {
        stats.add_bot_tweet(t.day(), &t.user_id);
    }
    stats
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}
