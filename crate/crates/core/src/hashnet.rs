//! Hashtag co-occurrence network with hypergeometric edge validation.
//!
//! Two hashtags are linked when they appear in the same tweet. An edge is kept
//! only when the observed number of co-occurrences would be very unlikely if
//! the two hashtags were placed in tweets independently, given how often each
//! one is used and how many tweets there are.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camp::{Camp, HashtagSeedLabels};
use crate::ingest::CleanTweet;
use crate::io::csv_to_io;

pub const DEFAULT_P_CUTOFF: f64 = 1e-7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HashnetError {
    #[error("invalid hypergeometric arguments k={k}, c_i={ci}, c_j={cj}, N={n}")]
    Domain { k: u64, ci: u64, cj: u64, n: u64 },
    #[error("p-value threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("label propagation needs at least one seed label")]
    NoSeeds,
}

/// What the population size `N` of the null model counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMode {
    /// Every processed tweet.
    #[default]
    AllTweets,
    /// Only tweets carrying at least one hashtag.
    HashtagTweets,
}

/// Occurrence and co-occurrence counts. Pair keys are ordered `(a, b)` with `a < b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    pub n_tweets: u64,
    pub occurrences: BTreeMap<String, u64>,
    pub pairs: BTreeMap<(String, String), u64>,
}

impl CooccurrenceCounts {
    pub fn add_tweet<'a, I>(&mut self, hashtags: I, mode: PopulationMode)
    where
        I: IntoIterator<Item = &'a String>,
    {
        let set: BTreeSet<&String> = hashtags.into_iter().collect();
        if mode == PopulationMode::AllTweets || !set.is_empty() {
            self.n_tweets += 1;
        }
        let tags: Vec<&String> = set.into_iter().collect();
        for (i, a) in tags.iter().enumerate() {
            *self.occurrences.entry((*a).clone()).or_default() += 1;
            for b in &tags[i + 1..] {
                *self.pairs.entry(((*a).clone(), (*b).clone())).or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, other: CooccurrenceCounts) {
        self.n_tweets += other.n_tweets;
        for (k, v) in other.occurrences {
            *self.occurrences.entry(k).or_default() += v;
        }
        for (k, v) in other.pairs {
            *self.pairs.entry(k).or_default() += v;
        }
    }

    pub fn occurrence(&self, tag: &str) -> u64 {
        self.occurrences.get(tag).copied().unwrap_or(0)
    }

    pub fn pair(&self, a: &str, b: &str) -> u64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// CSV `hashtag,count`, most frequent first.
    pub fn write_frequency_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut rows: Vec<(&String, &u64)> = self.occurrences.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["hashtag", "count"]).map_err(csv_to_io)?;
        for (tag, count) in rows {
            wtr.write_record([tag.as_str(), &count.to_string()])
                .map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

pub fn count_cooccurrences(tweets: &[CleanTweet], mode: PopulationMode) -> CooccurrenceCounts {
    let mut counts = CooccurrenceCounts::default();
    for t in tweets {
        counts.add_tweet(&t.hashtags, mode);
    }
    counts
}

fn ln_factorial(n: u64) -> f64 {
    const EXACT: usize = 21;
    static TABLE: std::sync::LazyLock<[f64; EXACT]> = std::sync::LazyLock::new(|| {
        let mut t = [0.0; EXACT];
        let mut f = 1.0f64;
        for (i, slot) in t.iter_mut().enumerate().skip(1) {
            f *= i as f64;
            *slot = f.ln();
        }
        t
    });
    if (n as usize) < EXACT {
        TABLE[n as usize]
    } else {
        libm::lgamma(n as f64 + 1.0)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Upper tail `P[X >= k]` of the hypergeometric distribution with population
/// `n`, `ci` marked items and `cj` draws.
///
/// Evaluated in log space with the term ratio recurrence, summing whichever
/// tail is on the far side of the mode so every summed term is decreasing.
pub fn edge_pvalue(k: u64, ci: u64, cj: u64, n: u64) -> Result<f64, HashnetError> {
    if ci == 0 || cj == 0 || ci > n || cj > n || k > ci.min(cj) {
        return Err(HashnetError::Domain { k, ci, cj, n });
    }
    let lo = (ci + cj).saturating_sub(n);
    let hi = ci.min(cj);
    if k <= lo {
        return Ok(1.0);
    }
    let ln_norm = ln_choose(n, cj);
    let ln_pmf = |x: u64| ln_choose(ci, x) + ln_choose(n - ci, cj - x) - ln_norm;
    let (ci_f, cj_f, n_f) = (ci as f64, cj as f64, n as f64);
    // pmf(x + 1) / pmf(x)
    let ratio_up = |x: f64| (ci_f - x) * (cj_f - x) / ((x + 1.0) * (n_f - ci_f - cj_f + x + 1.0));

    let mode = ((ci + 1) as u128 * (cj + 1) as u128 / (n + 2) as u128) as u64;
    if k > mode {
        let mut term = ln_pmf(k).exp();
        let mut sum = term;
        let mut x = k;
        while x < hi && term > sum * 1e-17 {
            term *= ratio_up(x as f64);
            sum += term;
            x += 1;
        }
        Ok(sum.min(1.0))
    } else {
        let mut x = k - 1;
        let mut term = ln_pmf(x).exp();
        let mut sum = term;
        while x > lo && term > sum * 1e-17 {
            term /= ratio_up((x - 1) as f64);
            sum += term;
            x -= 1;
        }
        Ok((1.0 - sum).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedEdge {
    pub a: String,
    pub b: String,
    pub k: u64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexInfo {
    pub hashtag: String,
    pub count: u64,
    /// Whether at least one validated edge touches this hashtag.
    pub connected: bool,
}

/// Validated co-occurrence network. Every edge satisfies `p < threshold`
/// (or the threshold is vacuous, `>= 1`); the vertex report lists all hashtags.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedHashtagNetwork {
    pub vertices: Vec<VertexInfo>,
    pub edges: Vec<ValidatedEdge>,
    pub threshold: f64,
}

pub fn validate_network(
    counts: &CooccurrenceCounts,
    threshold: f64,
) -> Result<ValidatedHashtagNetwork, HashnetError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(HashnetError::Threshold(threshold));
    }
    let pairs: Vec<(&(String, String), &u64)> = counts.pairs.iter().filter(|(_, k)| **k > 0).collect();
    let scored: Vec<Result<Option<ValidatedEdge>, HashnetError>> = pairs
        .par_iter()
        .map(|((a, b), &k)| {
            let p = edge_pvalue(k, counts.occurrence(a), counts.occurrence(b), counts.n_tweets)?;
            Ok((p < threshold || threshold >= 1.0).then(|| ValidatedEdge {
                a: a.clone(),
                b: b.clone(),
                k,
                p,
            }))
        })
        .collect();
    let mut edges = Vec::new();
    for e in scored {
        if let Some(e) = e? {
            edges.push(e);
        }
    }
    let connected: BTreeSet<&str> = edges
        .iter()
        .flat_map(|e| [e.a.as_str(), e.b.as_str()])
        .collect();
    let vertices = counts
        .occurrences
        .iter()
        .map(|(tag, &count)| VertexInfo {
            hashtag: tag.clone(),
            count,
            connected: connected.contains(tag.as_str()),
        })
        .collect();
    Ok(ValidatedHashtagNetwork {
        vertices,
        edges,
        threshold,
    })
}

impl ValidatedHashtagNetwork {
    pub fn adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            adj.entry(&e.a).or_default().push(&e.b);
            adj.entry(&e.b).or_default().push(&e.a);
        }
        adj
    }

    /// CSV `hashtag_i,hashtag_j,k,p`.
    pub fn write_edges_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["hashtag_i", "hashtag_j", "k", "p"])
            .map_err(csv_to_io)?;
        for e in &self.edges {
            wtr.write_record([&e.a, &e.b, &e.k.to_string(), &format!("{:e}", e.p)])
                .map_err(csv_to_io)?;
        }
        wtr.flush()
    }

    /// CSV `hashtag,count,camp`; camp is empty for unlabeled hashtags.
    pub fn write_vertices_csv<W: Write>(
        &self,
        out: W,
        labels: &BTreeMap<String, Camp>,
    ) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["hashtag", "count", "camp"])
            .map_err(csv_to_io)?;
        for v in &self.vertices {
            let camp = labels
                .get(&v.hashtag)
                .map(|c| c.code().to_string())
                .unwrap_or_default();
            wtr.write_record([&v.hashtag, &v.count.to_string(), &camp])
                .map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCampHashtag {
    pub hashtag: String,
    pub camp: Camp,
    pub cross_edges: usize,
    pub labeled_edges: usize,
    pub cross_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConsistencyReport {
    /// Validated edges whose endpoints carry different seed camps.
    pub cross_edges: Vec<ValidatedEdge>,
    /// Edges with both endpoints seeded.
    pub labeled_edges: usize,
    pub cross_fraction: f64,
    /// Seeded hashtags with at least one cross-camp edge, most suspicious first.
    pub suspects: Vec<CrossCampHashtag>,
}

pub fn label_consistency_report(
    net: &ValidatedHashtagNetwork,
    seeds: &HashtagSeedLabels,
) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let mut per_tag: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in &net.edges {
        let (Some(ca), Some(cb)) = (seeds.get(&e.a), seeds.get(&e.b)) else {
            continue;
        };
        report.labeled_edges += 1;
        let cross = ca != cb;
        if cross {
            report.cross_edges.push(e.clone());
        }
        for tag in [e.a.as_str(), e.b.as_str()] {
            let entry = per_tag.entry(tag).or_default();
            entry.1 += 1;
            if cross {
                entry.0 += 1;
            }
        }
    }
    if report.labeled_edges > 0 {
        report.cross_fraction = report.cross_edges.len() as f64 / report.labeled_edges as f64;
    }
    report.suspects = per_tag
        .into_iter()
        .filter(|(_, (cross, _))| *cross > 0)
        .map(|(tag, (cross, labeled))| CrossCampHashtag {
            hashtag: tag.to_string(),
            camp: seeds.get(tag).expect("seeded"),
            cross_edges: cross,
            labeled_edges: labeled,
            cross_fraction: cross as f64 / labeled as f64,
        })
        .collect();
    report.suspects.sort_by(|a, b| {
        b.cross_fraction
            .total_cmp(&a.cross_fraction)
            .then(b.cross_edges.cmp(&a.cross_edges))
            .then(a.hashtag.cmp(&b.hashtag))
    });
    report
}

/// Synchronous majority propagation of seed camps over validated edges.
/// Seeds never change; ties leave a hashtag unlabeled.
pub fn propagate_labels(
    net: &ValidatedHashtagNetwork,
    seeds: &HashtagSeedLabels,
    max_rounds: usize,
) -> Result<BTreeMap<String, Camp>, HashnetError> {
    if seeds.is_empty() {
        return Err(HashnetError::NoSeeds);
    }
    let adj = net.adjacency();
    let mut labels: HashMap<&str, Camp> = seeds.iter().collect();
    for _ in 0..max_rounds {
        let mut next = labels.clone();
        for (&tag, neighbors) in &adj {
            if seeds.get(tag).is_some() {
                continue;
            }
            let mut votes = [0usize; 3];
            for n in neighbors {
                if let Some(c) = labels.get(n) {
                    votes[c.index()] += 1;
                }
            }
            match strict_plurality(votes) {
                Some(c) => {
                    next.insert(tag, c);
                }
                None => {
                    next.remove(tag);
                }
            }
        }
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect())
}

/// Camp with a strictly larger count than every other, if any count is nonzero.
pub(crate) fn strict_plurality(votes: [usize; 3]) -> Option<Camp> {
    let max = *votes.iter().max().unwrap();
    if max == 0 {
        return None;
    }
    let mut winners = Camp::ALL.into_iter().filter(|c| votes[c.index()] == max);
    let first = winners.next();
    if winners.next().is_some() {
        None
    } else {
        first
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tweet(tags: &[&str]) -> CleanTweet {
        CleanTweet {
            tweet_id: String::new(),
            user_id: String::new(),
            day: chrono::NaiveDate::from_ymd_opt(2019, 5, 1).unwrap(),
            tokens: vec![],
            hashtags: tags.iter().map(|s| s.to_string()).collect(),
            retweet_of_user_id: None,
        }
    }

    #[test]
    fn repeated_hashtag_counts_once() {
        let c = count_cooccurrences(&[tweet(&["a", "a", "b"])], PopulationMode::AllTweets);
        assert_eq!((c.occurrence("a"), c.occurrence("b"), c.pair("a", "b"), c.n_tweets), (1, 1, 1, 1));
    }

    #[test]
    fn two_tweet_counts() {
        let c = count_cooccurrences(&[tweet(&["a", "b"]), tweet(&["a"])], PopulationMode::AllTweets);
        assert_eq!((c.occurrence("a"), c.occurrence("b"), c.pair("b", "a"), c.n_tweets), (2, 1, 1, 2));
    }

    #[test]
    fn population_mode_switch() {
        let tweets = [tweet(&["a"]), tweet(&[]), tweet(&[])];
        assert_eq!(count_cooccurrences(&tweets, PopulationMode::AllTweets).n_tweets, 3);
        assert_eq!(count_cooccurrences(&tweets, PopulationMode::HashtagTweets).n_tweets, 1);
    }

    #[test]
    fn pvalue_known_values() {
        assert_eq!(edge_pvalue(0, 3, 4, 10).unwrap(), 1.0);
        // C(5,4) C(5,0) / C(10,4)
        let p = edge_pvalue(4, 5, 4, 10).unwrap();
        assert!((p - 5.0 / 210.0).abs() < 1e-14);
        assert!(edge_pvalue(5, 5, 4, 10).is_err());
        assert!(edge_pvalue(1, 0, 4, 10).is_err());
        assert!(edge_pvalue(1, 11, 4, 10).is_err());
    }

    #[test]
    fn pvalue_corpus_scale_is_finite() {
        let p = edge_pvalue(5_000, 200_000, 100_000, 67_000_000).unwrap();
        assert!(p > 0.0 && p < 1e-100 || p == 0.0);
        let p = edge_pvalue(250, 200_000, 100_000, 67_000_000).unwrap();
        assert!(p > 0.99 && p <= 1.0);
    }

    #[test]
    fn threshold_one_keeps_every_pair() {
        let tweets: Vec<_> = (0..20).map(|i| if i % 2 == 0 { tweet(&["a", "b"]) } else { tweet(&["a", "c"]) }).collect();
        let c = count_cooccurrences(&tweets, PopulationMode::AllTweets);
        let net = validate_network(&c, 1.0).unwrap();
        assert_eq!(net.edges.len(), 2);
        assert!(validate_network(&c, 0.0).is_err());
        assert!(validate_network(&c, 1.5).is_err());
    }

    #[test]
    fn zero_cooccurrence_has_no_edge() {
        let mut c = CooccurrenceCounts::default();
        for _ in 0..5 {
            c.add_tweet(&["a".to_string()], PopulationMode::AllTweets);
            c.add_tweet(&["b".to_string()], PopulationMode::AllTweets);
        }
        let net = validate_network(&c, 1.0).unwrap();
        assert!(net.edges.is_empty());
        assert_eq!(net.vertices.len(), 2);
        assert!(net.vertices.iter().all(|v| !v.connected));
    }

    fn edge(a: &str, b: &str) -> ValidatedEdge {
        ValidatedEdge { a: a.into(), b: b.into(), k: 10, p: 1e-9 }
    }

    fn net(edges: &[(&str, &str)]) -> ValidatedHashtagNetwork {
        ValidatedHashtagNetwork {
            vertices: vec![],
            edges: edges.iter().map(|(a, b)| edge(a, b)).collect(),
            threshold: 1e-7,
        }
    }

    #[test]
    fn consistency_same_camp_and_empty() {
        let seeds: HashtagSeedLabels = [("a".into(), Camp::Macri), ("b".into(), Camp::Macri)].into_iter().collect();
        let r = label_consistency_report(&net(&[("a", "b")]), &seeds);
        assert!(r.cross_edges.is_empty() && r.suspects.is_empty());
        let r = label_consistency_report(&net(&[]), &seeds);
        assert_eq!(r, ConsistencyReport::default());
    }

    #[test]
    fn mislabeled_hashtag_tops_report() {
        // f1..f4 form a clique of F hashtags; "bad" is labeled M but tied to all of them.
        let mut edges = vec![];
        let fs = ["f1", "f2", "f3", "f4"];
        for (i, a) in fs.iter().enumerate() {
            for b in &fs[i + 1..] {
                edges.push((*a, *b));
            }
            edges.push((*a, "bad"));
        }
        edges.push(("m1", "m2"));
        let mut seeds: HashtagSeedLabels = fs.iter().map(|f| (f.to_string(), Camp::Fernandez)).collect();
        seeds.insert("bad", Camp::Macri).unwrap();
        seeds.insert("m1", Camp::Macri).unwrap();
        seeds.insert("m2", Camp::Macri).unwrap();
        let r = label_consistency_report(&net(&edges), &seeds);
        assert_eq!(r.suspects[0].hashtag, "bad");
        assert_eq!(r.cross_edges.len(), 4);
        assert!((r.cross_fraction - 4.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn propagation_star_and_tie() {
        let seeds: HashtagSeedLabels = [("c".into(), Camp::Macri)].into_iter().collect();
        let labels = propagate_labels(&net(&[("c", "l1"), ("c", "l2"), ("c", "l3")]), &seeds, 1).unwrap();
        assert_eq!(labels.len(), 4);
        assert!(labels.values().all(|c| *c == Camp::Macri));

        let seeds: HashtagSeedLabels = [("m".into(), Camp::Macri), ("f".into(), Camp::Fernandez)].into_iter().collect();
        let labels = propagate_labels(&net(&[("m", "x"), ("f", "x")]), &seeds, 5).unwrap();
        assert_eq!(labels.get("x"), None);

        assert_eq!(
            propagate_labels(&net(&[]), &HashtagSeedLabels::new(), 3),
            Err(HashnetError::NoSeeds)
        );
    }

    #[test]
    fn propagation_two_blocks() {
        let mut edges = vec![];
        for block in ["m", "f"] {
            for i in 0..6 {
                edges.push((format!("{block}{i}"), format!("{block}{}", (i + 1) % 6)));
            }
        }
        let refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let seeds: HashtagSeedLabels = [("m0".into(), Camp::Macri), ("f3".into(), Camp::Fernandez)].into_iter().collect();
        let labels = propagate_labels(&net(&refs), &seeds, 10).unwrap();
        assert_eq!(labels.len(), 12);
        for (tag, camp) in labels {
            let want = if tag.starts_with('m') { Camp::Macri } else { Camp::Fernandez };
            assert_eq!(camp, want, "{tag}");
        }
    }

    proptest! {
        #[test]
        fn pvalue_monotone_and_symmetric(n in 1u64..300, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let ci = 1 + ((n - 1) as f64 * a) as u64;
            let cj = 1 + ((n - 1) as f64 * b) as u64;
            let mut prev = 1.0;
            for k in 0..=ci.min(cj) {
                let p = edge_pvalue(k, ci, cj, n).unwrap();
                let q = edge_pvalue(k, cj, ci, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!((p - q).abs() <= 1e-12 * p.max(1e-300) + 1e-15);
                prop_assert!(p <= prev + 1e-12);
                prev = p;
            }
        }

        #[test]
        fn raising_threshold_never_removes_edges(
            raw in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..4), 1..80),
            t1 in 1e-9f64..1.0, t2 in 1e-9f64..1.0,
        ) {
            let tweets: Vec<CleanTweet> = raw.iter().map(|tags| {
                let names: Vec<String> = tags.iter().map(|t| format!("h{t}")).collect();
                let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
                tweet(&refs)
            }).collect();
            let c = count_cooccurrences(&tweets, PopulationMode::AllTweets);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let small = validate_network(&c, lo).unwrap();
            let big = validate_network(&c, hi).unwrap();
            for e in &small.edges {
                prop_assert!(e.p < lo);
                prop_assert!(c.pair(&e.a, &e.b) == e.k && e.a != e.b);
                prop_assert!(big.edges.iter().any(|f| f.a == e.a && f.b == e.b));
            }
        }
    }
}
