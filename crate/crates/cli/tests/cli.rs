use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn votecast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votecast"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A synthetic bundle in a fresh directory.
fn synth_dir(users: usize, days: u32) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = votecast(
        &["synth", "--out", ".", "--users", &users.to_string(), "--days", &days.to_string()],
        dir.path(),
    );
    ok(&out);
    dir
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
    }
    files
}

#[test]
fn report_is_byte_identical_across_runs_and_thread_counts() {
    let dir = synth_dir(1500, 30);
    ok(&votecast(&["--config", "votecast.toml", "report"], dir.path()));
    let report = dir.path().join("out/report");
    let first = read_tree(&report);
    assert!(first.contains_key(Path::new("report.json")));
    assert!(first.contains_key(Path::new("series_window.csv")));
    fs::remove_dir_all(&report).unwrap();
    ok(&votecast(&["--config", "votecast.toml", "--threads", "1", "report"], dir.path()));
    let second = read_tree(&report);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{} differs between runs", name.display());
    }
}

#[test]
fn staged_run_matches_report_and_recovers_planted_shares() {
    // Default electorate scale; smaller corpora give the default optimizer too few steps.
    let dir = synth_dir(10_000, 60);
    let cfg = ["--config", "votecast.toml"];
    for stage in ["ingest", "hashnet", "build-training", "train", "classify", "opinion"] {
        ok(&votecast(&[&cfg[..], &[stage]].concat(), dir.path()));
    }
    let staged: serde_json::Value =
        serde_json::from_str(&ok(&votecast(&[&cfg[..], &["predict", "--model", "0"]].concat(), dir.path()))).unwrap();
    ok(&votecast(&[&cfg[..], &["report"]].concat(), dir.path()));
    let report: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report/predictions.json")).unwrap()).unwrap();
    assert_eq!(staged, report[0]);
    for m in &report {
        let mae = m["mae"].as_f64().unwrap();
        assert!(mae < 1.0, "model {} MAE {mae} against planted shares", m["model"]);
    }
}

#[test]
fn rake_converges_on_synthetic_panel() {
    let dir = synth_dir(200, 10);
    let out = ok(&votecast(&["--config", "votecast.toml", "rake"], dir.path()));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["converged"], true);
    assert!(v["max_margin_error"].as_f64().unwrap() < 1e-6);
    let weights = fs::read_to_string(dir.path().join("out/raking_weights.csv")).unwrap();
    assert!(weights.starts_with("respondent_id,weight\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| votecast(args, dir.path()).status.code();

    fs::write(dir.path().join("bad.toml"), "window_dayz = 3\n").unwrap();
    let out = votecast(&["--config", "bad.toml", "report"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_dayz"));

    fs::write(dir.path().join("range.toml"), "threshold_low = 0.9\n").unwrap();
    assert_eq!(code(&["--config", "range.toml", "report"]), Some(2));

    assert_eq!(code(&["--config", "absent.toml", "report"]), Some(3));
    fs::write(dir.path().join("ok.toml"), "corpus = \"nothing.ndjson\"\n").unwrap();
    let out = votecast(&["--config", "ok.toml", "ingest"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing.ndjson"));

    fs::write(dir.path().join("nothing.ndjson"), "{not json}\n").unwrap();
    fs::write(dir.path().join("seeds.csv"), "hashtag,camp\nvamos,F\njuntos,M\n").unwrap();
    assert_eq!(code(&["--config", "ok.toml", "report"]), Some(4));
}

#[test]
fn print_config_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "k = 7\nwindow_days = 21\n").unwrap();
    let text = ok(&votecast(&["--config", "c.toml", "--print-config"], dir.path()));
    assert!(text.contains("k = 7") && text.contains("window_days = 21"), "{text}");
    fs::write(dir.path().join("again.toml"), &text).unwrap();
    let again = ok(&votecast(&["--config", "again.toml", "--print-config"], dir.path()));
    assert_eq!(text, again);
}
