//! Module invariants as property tests, plus the fixture-level classifier checks.

use std::collections::{BTreeMap, HashMap};

use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use votecast_core::camp::Camp;
use votecast_core::classify::{self, LabeledTweet, LrConfig, StanceScorer, Thresholds};
use votecast_core::ingest::{self, CleanTweet, DateRange, SourceWhitelist};
use votecast_core::opinion::{self, mae, ModelId, OpinionParams, RetweetGraph, UserLedger, UserOpinion};
use votecast_core::pipeline;
use votecast_core::survey::{
    disclosure_by_demographics, rake, transition_table, AgeGroup, Candidate, DemographicMargins, Education,
    Gender, Image, PanelResponse,
};
use votecast_core::synth::{self, ElectorateSpec};
use votecast_core::LedgerSet;
use votecast_core::PipelineConfig;

fn day(offset: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 8, 1).unwrap() + Days::new(offset)
}

fn window() -> DateRange {
    DateRange {
        start: day(0),
        end: day(29),
    }
}

const CAMPS: [Camp; 3] = [Camp::Fernandez, Camp::Macri, Camp::Third];

fn ledger_strategy() -> impl Strategy<Value = Vec<(u64, Vec<(u64, usize)>)>> {
    let user = (0u64..30, prop::collection::vec((0u64..30, 0usize..3), 0..20)).prop_map(|(first, mut t)| {
        t.iter_mut().for_each(|x| x.0 = x.0.max(first));
        t.sort();
        (first, t)
    });
    prop::collection::vec(user, 1..25)
}

fn build_set(users: &[(u64, Vec<(u64, usize)>)]) -> LedgerSet {
    let mut set = LedgerSet {
        window: window(),
        users: BTreeMap::new(),
    };
    for (i, (first, tweets)) in users.iter().enumerate() {
        let id = format!("u{i:02}");
        let mut l = UserLedger::new(id.clone(), day(*first), window());
        for &(d, c) in tweets {
            l.push(day(d), CAMPS[c]);
        }
        set.users.insert(id, l);
    }
    set
}

fn token_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn toy_training() -> Vec<LabeledTweet> {
    (0..40)
        .map(|i| {
            let (tokens, label): (&[&str], Camp) = if i % 2 == 0 {
                (&["a", "b", "c"], Camp::Fernandez)
            } else {
                (&["d", "e", "c"], Camp::Macri)
            };
            LabeledTweet {
                tweet: CleanTweet {
                    tweet_id: i.to_string(),
                    user_id: format!("u{i}"),
                    day: day(0),
                    tokens: tokens.iter().map(|s| s.to_string()).collect(),
                    hashtags: vec![],
                    retweet_of_user_id: None,
                },
                label,
            }
        })
        .collect()
}

fn respondent(id: usize, pre: Candidate, post: Candidate, age: AgeGroup, gender: Gender, edu: Education) -> PanelResponse {
    PanelResponse {
        respondent_id: format!("r{id}"),
        pre_choice: pre,
        post_choice: post,
        age_group: age,
        gender,
        education: edu,
        image_cfk: Image::Positive,
        image_mm: Image::Negative,
        image_af: Image::NsNc,
        weight: 1.0,
    }
}

fn panel_strategy() -> impl Strategy<Value = Vec<PanelResponse>> {
    let row = (0usize..8, 0usize..8, 0usize..4, 0usize..2, 0usize..3, 0.2f64..5.0);
    prop::collection::vec(row, 1..120).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (pre, post, a, g, e, w))| PanelResponse {
                weight: w,
                ..respondent(
                    i,
                    Candidate::ALL[pre],
                    Candidate::ALL[post],
                    AgeGroup::ALL[a],
                    Gender::ALL[g],
                    Education::ALL[e],
                )
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn threshold_partition(p in 0.0f64..=1.0) {
        let t = Thresholds::default();
        let s = t.stance_for(p);
        let ff = p <= 0.33;
        let mp = p >= 0.66;
        prop_assert_eq!(s == Some(Camp::Fernandez), ff);
        prop_assert_eq!(s == Some(Camp::Macri), mp);
        prop_assert_eq!(s.is_none(), !ff && !mp);
    }

    #[test]
    fn lr_score_is_linear_in_counts(tokens in token_list()) {
        let model = classify::train_lr(&toy_training(), &LrConfig::default()).unwrap();
        let doubled: Vec<String> = tokens.iter().chain(&tokens).cloned().collect();
        let d1 = model.score(&tokens) - model.bias;
        let d2 = model.score(&doubled) - model.bias;
        prop_assert!((d2 - 2.0 * d1).abs() <= 1e-12 * d1.abs().max(1.0));
    }

    #[test]
    fn mae_laws(a in prop::array::uniform3(0.0f64..100.0), b in prop::array::uniform3(0.0f64..100.0), perm in 0usize..6) {
        prop_assert!(mae(a, b) >= 0.0);
        prop_assert_eq!(mae(a, a), 0.0);
        if a != b {
            prop_assert!(mae(a, b) > 0.0);
        }
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let o = orders[perm];
        let pa = o.map(|i| a[i]);
        let pb = o.map(|i| b[i]);
        prop_assert!((mae(pa, pb) - mae(a, b)).abs() < 1e-12);
    }

    #[test]
    fn homophily_ignores_edge_and_user_order(
        users in ledger_strategy(),
        edges in prop::collection::vec((0usize..25, 0usize..25), 0..60),
        d in 0u64..30,
    ) {
        let n = users.len();
        let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
        let id = |i: usize| format!("u{i:02}");
        let mut forward = RetweetGraph::default();
        for (a, b) in &edges {
            forward.add_edge(&id(*a), &id(*b));
        }
        let mut backward = RetweetGraph::default();
        for (a, b) in edges.iter().rev() {
            backward.add_edge(&id(*b), &id(*a));
        }
        let set = build_set(&users);
        // rename users so the ledger map iterates in reverse
        let rename = |i: usize| format!("v{:02}", n - 1 - i);
        let mut reversed = LedgerSet { window: window(), users: BTreeMap::new() };
        for (i, l) in set.users.values().enumerate() {
            let mut l = l.clone();
            l.user_id = rename(i);
            reversed.users.insert(rename(i), l);
        }
        let mut renamed_graph = RetweetGraph::default();
        for (a, b) in &edges {
            renamed_graph.add_edge(&rename(*a), &rename(*b));
        }
        let params = OpinionParams { t0: day(0), k: 5, ..OpinionParams::default() };
        for m in ModelId::ALL {
            let x = opinion::predict(m, day(d), &set, &forward, &params).unwrap();
            let y = opinion::predict(m, day(d), &set, &backward, &params).unwrap();
            let z = opinion::predict(m, day(d), &reversed, &renamed_graph, &params).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(x.counts, z.counts);
        }
    }

    #[test]
    fn ultra_loyal_class_ignores_t0_within_activity(
        camp in 0usize..3,
        days in prop::collection::btree_set(5u64..30, 1..10),
        t0_pick in 0u64..30,
        k in 1usize..12,
    ) {
        let last = *days.iter().next_back().unwrap();
        let mut l = UserLedger::new("u", day(0), window());
        for d in &days {
            l.push(day(*d), CAMPS[camp]);
        }
        let d = day(29);
        let reference = l.loyalty_class(d, day(0), k).unwrap();
        prop_assert!(reference.ultra_loyal);
        prop_assert_eq!(reference.base, UserOpinion::Supports(CAMPS[camp]));
        let shifted = l.loyalty_class(d, day(t0_pick.min(last)), k).unwrap();
        prop_assert_eq!(shifted, reference);
    }

    #[test]
    fn bucket_counts_partition_every_day(users in ledger_strategy(), d in 0u64..30) {
        let set = build_set(&users);
        let graph = RetweetGraph::default();
        let params = OpinionParams { t0: day(0), k: 10, ..OpinionParams::default() };
        let present = set.present(day(d)).count();
        for m in ModelId::ALL {
            let s = opinion::predict(m, day(d), &set, &graph, &params).unwrap();
            let c = s.counts;
            prop_assert_eq!(c.ff + c.mp + c.third + c.undecided + c.unclassified, present);
            for x in s.triple() {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn raking_preserves_mean_and_positivity_and_is_idempotent(mut panel in panel_strategy()) {
        let census = synth::census_margins();
        let margins = DemographicMargins::new(
            census.axes.into_iter().filter(|(a, _)| a == "age_group" || a == "gender").collect(),
        ).unwrap();
        let Ok(first) = rake(&panel, &margins, 1e-10, 500) else {
            // a category absent from the sample cannot be raked to
            return Ok(());
        };
        prop_assume!(first.converged);
        let mean = first.weights.iter().map(|w| w.1).sum::<f64>() / first.weights.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
        prop_assert!(first.weights.iter().all(|w| w.1 > 0.0 && w.1.is_finite()));
        first.apply(&mut panel);
        let second = rake(&panel, &margins, 1e-10, 500).unwrap();
        prop_assert_eq!(second.iterations, 1);
        for (a, b) in first.weights.iter().zip(&second.weights) {
            prop_assert!((a.1 - b.1).abs() < 1e-8, "{} {}", a.1, b.1);
        }
    }

    #[test]
    fn transition_rows_sum_to_100(panel in panel_strategy()) {
        for r in transition_table(&panel) {
            if r.respondents > 0 {
                prop_assert!((r.af + r.mm + r.other - 100.0).abs() <= 0.05);
                if let Some(kept) = r.kept {
                    prop_assert!((0.0..=100.0).contains(&kept));
                }
            }
        }
    }

    #[test]
    fn disclosure_total_is_weighted_mean_of_strata(panel in panel_strategy()) {
        let rows = disclosure_by_demographics(&panel);
        let Some(total) = rows.iter().find(|r| r.axis == "total") else {
            return Ok(());
        };
        for axis in ["gender", "age_group", "education"] {
            let strata: Vec<_> = rows.iter().filter(|r| r.axis == axis && r.weight > 0.0).collect();
            let w: f64 = strata.iter().map(|r| r.weight).sum();
            if w > 0.0 {
                let mean = strata.iter().map(|r| r.revealed * r.weight).sum::<f64>() / w;
                prop_assert!((mean - total.revealed).abs() < 1e-9, "{axis}: {mean} vs {}", total.revealed);
            }
        }
    }
}

#[test]
fn bot_tweets_never_reach_the_genuine_stream() {
    let spec = ElectorateSpec {
        n_users: 300,
        days: 10,
        ..ElectorateSpec::default()
    };
    let corpus = synth::generate_corpus(&spec).unwrap();
    let planted_bots: std::collections::HashSet<&str> = corpus
        .truth
        .iter()
        .filter(|u| u.loyalty == synth::PlantedLoyalty::Bot)
        .map(|u| u.user_id.as_str())
        .collect();
    assert!(!planted_bots.is_empty());
    let (kept, bots) = ingest::partition_bots(corpus.tweets.clone(), &SourceWhitelist::default());
    assert_eq!(kept.len() + bots.len(), corpus.tweets.len());
    assert!(kept.iter().all(|t| !planted_bots.contains(t.user_id.as_str())));
    assert!(bots.iter().all(|t| planted_bots.contains(t.user_id.as_str())));
}

#[test]
fn synthetic_shares_are_fractions_that_sum_to_one() {
    let corpus = synth::generate_corpus(&ElectorateSpec {
        n_users: 500,
        days: 5,
        ..ElectorateSpec::default()
    })
    .unwrap();
    let s = corpus.planted_shares();
    assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Trains on the default synthetic electorate and checks the probability
/// histogram has mass at both ends, and that retraining is bit-identical.
#[test]
fn classifier_on_default_fixture_is_bimodal_and_deterministic() {
    let spec = ElectorateSpec::default();
    let corpus = synth::generate_corpus(&spec).unwrap();
    let cfg = PipelineConfig::for_synthetic(spec.start, spec.days);
    let (kept, _) = ingest::partition_bots(corpus.tweets, &SourceWhitelist::default());
    let stop = ingest::Stopwords::spanish();
    let clean: Vec<CleanTweet> = kept.iter().map(|t| ingest::standardize(t, &stop)).collect();
    let split = pipeline::training_stage(&cfg, &clean, &corpus.seeds).unwrap();
    let model = classify::train_lr(&split.train, &cfg.lr_config()).unwrap();
    let again = classify::train_lr(&split.train, &cfg.lr_config()).unwrap();
    assert_eq!(model.bias.to_bits(), again.bias.to_bits());
    assert!(model.weights.iter().zip(&again.weights).all(|(a, b)| a.to_bits() == b.to_bits()));

    let ps: Vec<f64> = clean.iter().map(|t| model.prob_macri(&t.tokens)).collect();
    let low = ps.iter().filter(|p| **p <= 0.33).count() as f64 / ps.len() as f64;
    let high = ps.iter().filter(|p| **p >= 0.66).count() as f64 / ps.len() as f64;
    assert!(low >= 0.30 && high >= 0.30, "p <= 0.33: {low:.3}, p >= 0.66: {high:.3}");
}

#[test]
fn seed_labels_agree_with_every_seed_hashtag() {
    let spec = ElectorateSpec {
        n_users: 400,
        days: 10,
        ..ElectorateSpec::default()
    };
    let corpus = synth::generate_corpus(&spec).unwrap();
    let stop = ingest::Stopwords::spanish();
    let clean: Vec<CleanTweet> = corpus.tweets.iter().map(|t| ingest::standardize(t, &stop)).collect();
    let cfg = PipelineConfig::for_synthetic(spec.start, spec.days);
    let split = pipeline::training_stage(&cfg, &clean, &corpus.seeds).unwrap();
    let labeled: HashMap<&str, Camp> = split
        .train
        .iter()
        .chain(&split.test)
        .chain(&split.third_party)
        .map(|l| (l.tweet.tweet_id.as_str(), l.label))
        .collect();
    assert!(!labeled.is_empty());
    for t in &clean {
        if let Some(label) = labeled.get(t.tweet_id.as_str()) {
            let camps = corpus.seeds.camps_in(&t.hashtags);
            assert!(!camps.is_empty() && camps.iter().all(|c| c == label));
        }
    }
}
