use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proto_verbalizer::proto::read_checkpoint;
use proto_verbalizer::{load_dataset, sample_episode, train, TrainConfig};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pverb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pverb")).args(args).output().expect("spawn pverb")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_lines(dir: &TempDir, name: &str, lines: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, lines.join("\n")).unwrap();
    path
}

const HEADER: &str = r#"{"format_version":1,"dim":2,"class_names":["A","B"],"template_id":"t","model_id":"m"}"#;

#[test]
fn validate_accepts_the_fixture() {
    let out = pverb(&["validate", s(&fixture("four_by_ten.ndjson"))]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("0 errors"));
}

#[test]
fn validate_reports_truncated_last_line() {
    let dir = TempDir::new().unwrap();
    let path = write_lines(&dir, "t.ndjson", &[
        HEADER,
        r#"{"id":"a","split":"train","label":0,"embedding":[1,0]}"#,
        r#"{"id":"b","split":"train","label":1,"embed"#,
    ]);
    let out = pverb(&["validate", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("line 3"), "{}", text(&out));
}

#[test]
fn validate_names_the_record_with_the_wrong_dimension() {
    let dir = TempDir::new().unwrap();
    let path = write_lines(&dir, "d.ndjson", &[
        HEADER,
        r#"{"id":"fine","split":"train","label":0,"embedding":[1,0]}"#,
        r#"{"id":"too-long","split":"test","label":1,"embedding":[1,0,2]}"#,
    ]);
    let out = pverb(&["validate", s(&path)]);
    assert_ne!(code(&out), 0);
    assert!(text(&out).contains("too-long"), "{}", text(&out));
}

#[test]
fn io_failures_and_usage_errors_have_distinct_codes() {
    let out = pverb(&["validate", "/nonexistent/file.ndjson"]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("i/o error"), "{}", text(&out));
    assert_eq!(code(&pverb(&["train", "--bogus"])), 1);
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("c.ndjson");
    let missing_k = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--out", s(&ckpt)]);
    assert_eq!(code(&missing_k), 1, "{}", text(&missing_k));
    let bad_lr = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "2", "--lr", "-1", "--out", s(&ckpt)]);
    assert_eq!(code(&bad_lr), 1, "{}", text(&bad_lr));
    assert_eq!(code(&pverb(&["--help"])), 0);
}

#[test]
fn degenerate_embeddings_are_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let path = write_lines(&dir, "z.ndjson", &[
        HEADER,
        r#"{"id":"a","split":"train","label":0,"embedding":[0,0]}"#,
        r#"{"id":"b","split":"train","label":1,"embedding":[0,0]}"#,
    ]);
    let out = pverb(&["train", "--dataset", s(&path), "--k", "1", "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&out), 3, "{}", text(&out));
}

#[test]
fn train_is_byte_deterministic_with_default_dimension() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    for out in [&a, &b] {
        let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "4", "--seed", "3", "--steps", "40", "--out", s(out)]);
        assert_eq!(code(&run), 0, "{}", text(&run));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ckpt = read_checkpoint(&a).unwrap();
    assert_eq!(ckpt.header.proto_dim, 128);
    assert_eq!(ckpt.result.encoder.proto_dim(), 128);
    assert_eq!(ckpt.result.loss_trace.len(), 40);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["steps"], 40);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn zero_steps_checkpoint_is_the_seeded_initialisation() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("z.ckpt");
    let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "2", "--seed", "5", "--steps", "0", "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let ckpt = read_checkpoint(&out).unwrap();
    let ds = load_dataset(fixture("four_by_ten.ndjson")).unwrap();
    let episode = sample_episode(&ds, 4, 2, 5).unwrap();
    let init = train(&ds, &episode, &TrainConfig { steps: 0, seed: 5, ..TrainConfig::default() }).unwrap();
    assert_eq!(ckpt.result, init);
    assert!(ckpt.result.loss_trace.is_empty());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": 2, "steps": 3, "lr": 0.05}"#).unwrap();
    let out = dir.path().join("c.ckpt");
    let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--config", s(&cfg), "--steps", "5", "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let ckpt = read_checkpoint(&out).unwrap();
    assert_eq!(ckpt.header.config.steps, 5);
    assert_eq!(ckpt.header.config.learning_rate, 0.05);
    assert_eq!(ckpt.header.k_shot, 2);
    assert_eq!(ckpt.header.config.proto_dim, 128);

    fs::write(&cfg, r#"{"k": 2, "stepz": 3}"#).unwrap();
    let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--config", s(&cfg), "--out", s(&out)]);
    assert_ne!(code(&run), 0);
}

fn trained_separable(dir: &TempDir) -> PathBuf {
    let ckpt = dir.path().join("sep.ckpt");
    let run = pverb(&["train", "--dataset", s(&fixture("separable.ndjson")), "--k", "4", "--seed", "0", "--out", s(&ckpt)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    ckpt
}

#[test]
fn eval_reports_accuracy_and_scorers() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained_separable(&dir);
    let report = dir.path().join("r.json");
    let preds = dir.path().join("p.ndjson");
    let run = pverb(&["eval", "--dataset", s(&fixture("separable.ndjson")), "--checkpoint", s(&ckpt), "--out", s(&report), "--predictions", s(&preds)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["n_test"], 100);
    assert_eq!(r["scorer_ids"], serde_json::json!(["proto"]));
    assert_eq!(r["per_class"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 100);

    let run = pverb(&["eval", "--dataset", s(&fixture("separable.ndjson")), "--checkpoint", s(&ckpt), "--scorers", "proto,manual", "--out", s(&report)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["scorer_ids"], serde_json::json!(["proto", "manual", "ensemble"]));

    let run = pverb(&["eval", "--dataset", s(&fixture("separable.ndjson")), "--checkpoint", s(&ckpt), "--scorers", "oracle", "--out", s(&report)]);
    assert_eq!(code(&run), 1);
}

#[test]
fn eval_refuses_empty_test_split_and_missing_logprobs() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("c.ckpt");
    let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "2", "--steps", "5", "--out", s(&ckpt)]);
    assert_eq!(code(&run), 0);
    let report = dir.path().join("r.json");
    let run = pverb(&["eval", "--dataset", s(&fixture("four_by_ten.ndjson")), "--checkpoint", s(&ckpt), "--out", s(&report)]);
    assert_eq!(code(&run), 2);
    assert!(text(&run).contains("test split"), "{}", text(&run));
    assert!(!report.exists());

    let synth = dir.path().join("nolp.ndjson");
    let run = pverb(&["synth", "--n-way", "4", "--dim", "8", "--out", s(&synth)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let ckpt2 = dir.path().join("c2.ckpt");
    assert_eq!(code(&pverb(&["train", "--dataset", s(&synth), "--k", "2", "--steps", "2", "--out", s(&ckpt2)])), 0);
    let run = pverb(&["eval", "--dataset", s(&synth), "--checkpoint", s(&ckpt2), "--scorers", "manual", "--out", s(&report)]);
    assert_eq!(code(&run), 2);
    assert!(text(&run).contains("log-prob"), "{}", text(&run));
}

fn grid(out: &Path, k: &str, seeds: &str) -> Output {
    pverb(&["grid", "--dataset", s(&fixture("separable.ndjson")), "--k", k, "--seed", seeds, "--steps", "10", "--out", s(out)])
}

fn cell_files(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(out.join("cells"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn grid_cardinality_and_resume() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one");
    assert_eq!(code(&grid(&one, "1", "0")), 0);
    assert_eq!(cell_files(&one).len(), 1);

    let six = dir.path().join("six");
    let run = grid(&six, "1,2", "0,1,2");
    assert_eq!(code(&run), 0, "{}", text(&run));
    let cells = cell_files(&six);
    assert_eq!(cells.len(), 6);
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(six.join("aggregate.json")).unwrap()).unwrap();
    let rows = agg["summary"]["accuracy"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let accs: Vec<f64> = row["accuracies"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
        assert_eq!(accs.len(), 3);
        assert!((row["mean"].as_f64().unwrap() - accs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }
    let agg_bytes = fs::read(six.join("aggregate.json")).unwrap();
    let csv_bytes = fs::read(six.join("long.csv")).unwrap();

    let run = grid(&six, "1,2", "0,1,2");
    assert_eq!(code(&run), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(six.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["extra"]["cells_computed"], 0);
    assert_eq!(manifest["extra"]["cells_reused"], 6);
    assert_eq!(cell_files(&six), cells);
    assert_eq!(fs::read(six.join("aggregate.json")).unwrap(), agg_bytes);
    assert_eq!(fs::read(six.join("long.csv")).unwrap(), csv_bytes);

    // Changing the training config invalidates every cell.
    let run = pverb(&["grid", "--dataset", s(&fixture("separable.ndjson")), "--k", "1,2", "--seed", "0,1,2", "--steps", "11", "--out", s(&six)]);
    assert_eq!(code(&run), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(six.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["extra"]["cells_computed"], 6);

    let run = pverb(&["grid", "--dataset", s(&fixture("separable.ndjson")), "--variant", "full", "--out", s(&six)]);
    assert_eq!(code(&run), 1);
}

#[test]
fn probe_ranks_each_class_word_first() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained_separable(&dir);
    let out = dir.path().join("probe.ndjson");
    let run = pverb(&["probe", "--checkpoint", s(&ckpt), "--vocab", s(&fixture("separable.ndjson")), "--top-k", "5", "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let first = fs::read(&out).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(first.clone()).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    for (c, line) in lines.iter().enumerate() {
        let tokens = line["tokens"].as_array().unwrap();
        assert_eq!(tokens.len(), 5);
        assert!(tokens[0]["token"].as_str().unwrap().starts_with(&format!("class{c}_w")), "{line}");
    }
    let again = pverb(&["probe", "--checkpoint", s(&ckpt), "--vocab", s(&fixture("separable.ndjson")), "--top-k", "5", "--out", s(&out)]);
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read(&out).unwrap(), first);

    let wrong_dim = pverb(&["probe", "--checkpoint", s(&ckpt), "--vocab", s(&write_lines(&dir, "v.ndjson", &[HEADER, r#"{"id":"p","split":"vocab_probe","token":"x","embedding":[1,0]}"#])), "--out", s(&out)]);
    assert_eq!(code(&wrong_dim), 2);
}

#[test]
fn similarity_rows_are_distributions() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained_separable(&dir);
    let out = dir.path().join("sim.json");
    let run = pverb(&["similarity", "--checkpoint", s(&ckpt), "--checkpoint", s(&ckpt), "--probes", s(&fixture("separable.ndjson")), "--verbalizer", s(&fixture("verbalizer.json")), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let m = r["matrix"].as_array().unwrap();
    assert_eq!(m.len(), 4);
    for (i, row) in m.iter().enumerate() {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let best = (0..4).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert_eq!(best, i);
    }
}

#[test]
fn sample_writes_reproducible_episodes() {
    let dir = TempDir::new().unwrap();
    let a = pverb(&["sample", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "3", "--seed", "4", "--noise", "2"]);
    let b = pverb(&["sample", "--dataset", s(&fixture("four_by_ten.ndjson")), "--k", "3", "--seed", "4", "--noise", "2"]);
    assert_eq!(code(&a), 0, "{}", text(&a));
    assert_eq!(a.stdout, b.stdout);
    let ep: proto_verbalizer::Episode = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(ep.num_flipped(), 2);

    let file = dir.path().join("ep.json");
    fs::write(&file, &a.stdout).unwrap();
    let ckpt = dir.path().join("c.ckpt");
    let run = pverb(&["train", "--dataset", s(&fixture("four_by_ten.ndjson")), "--episode-file", s(&file), "--steps", "5", "--out", s(&ckpt)]);
    assert_eq!(code(&run), 0, "{}", text(&run));
    assert_eq!(read_checkpoint(&ckpt).unwrap().header.noise.unwrap().num_corrupted, 2);
}
