use std::path::Path;
use std::process::{Command, Output};

use cordel::data::{write_pairs_csv, Schema};
use cordel::synthetic::{numeric_difference_pairs, NumericCorpusConfig};
use serde_json::Value;

fn cordel(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cordel"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CORDEL_EMBEDDINGS")
        .output()
        .expect("spawn cordel")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

fn events<'a>(lines: &'a [Value], kind: &str) -> Vec<&'a Value> {
    lines.iter().filter(|v| v["event"] == kind).collect()
}

fn write_toy_dataset(dir: &Path) {
    std::fs::create_dir_all(dir.join("toy")).unwrap();
    let pairs = numeric_difference_pairs(&NumericCorpusConfig {
        pairs: 200,
        ..Default::default()
    });
    write_pairs_csv(&dir.join("toy/pairs.csv"), &Schema::new(["title", "brand"]).unwrap(), &pairs).unwrap();
}

fn train_toy(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "toy", "--hashed-embeddings", "--dim", "16", "--epochs", "4", "--lr", "1e-3", "--out", "m.ckpt"];
    args.extend_from_slice(extra);
    cordel(&args, dir)
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cordel(&["train", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(cordel(&["no-such-command"], dir.path()).status.code(), Some(2));
    write_toy_dataset(dir.path());
    // no embedding source given
    let out = cordel(&["train", "--data", "toy", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--hashed-embeddings"));
    assert_eq!(cordel(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cordel(&["train", "--data", "nowhere", "--hashed-embeddings", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_predict_explain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_toy_dataset(root);

    let out = train_toy(root, &["--calibrate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    assert_eq!(events(&lines, "epoch").len(), 4);
    let test_metrics: Vec<_> = events(&lines, "metrics").into_iter().filter(|v| v["split"] == "test").collect();
    assert_eq!(test_metrics.len(), 1);
    let manifest = &events(&lines, "manifest")[0]["manifest"];
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"]["model"], 0);
    assert!(root.join("m.ckpt").exists());
    assert!(root.join("m.ckpt.manifest.json").exists());
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(root.join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(&stored, manifest);

    // eval on the same split reproduces the training-time test metrics
    let out = cordel(&["eval", "--checkpoint", "m.ckpt", "--data", "toy", "--pr-csv", "pr.csv"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    let eval = events(&lines, "metrics")[0];
    assert_eq!(eval["f1"], test_metrics[0]["f1"]);
    assert_eq!(eval["prauc"], test_metrics[0]["prauc"]);
    let pr = std::fs::read_to_string(root.join("pr.csv")).unwrap();
    assert!(pr.starts_with("recall,precision"));

    // predict is deterministic and emits one row per pair
    let pairs = root.join("toy/pairs.csv");
    let pairs = pairs.to_str().unwrap();
    for out_name in ["p1.csv", "p2.csv"] {
        let out = cordel(&["predict", "--checkpoint", "m.ckpt", "--pairs", pairs, "--out", out_name], root);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let p1 = std::fs::read_to_string(root.join("p1.csv")).unwrap();
    assert_eq!(p1, std::fs::read_to_string(root.join("p2.csv")).unwrap());
    assert_eq!(p1.lines().count(), 201);
    assert!(p1.starts_with("id,score,prediction\n"));

    let out = cordel(&["explain", "--checkpoint", "m.ckpt", "--data", "toy", "--pair-index", "3"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("score ") && text.contains("unique-left") && text.contains("title"));

    let out = cordel(&["explain", "--checkpoint", "m.ckpt", "--pairs", pairs, "--pair-index", "0", "--json"], root);
    let lines = json_lines(&out);
    assert_eq!(events(&lines, "explanation")[0]["explanation"]["variant"], "sum");

    let out = cordel(&["explain", "--checkpoint", "m.ckpt", "--pairs", pairs, "--pair-index", "999"], root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn schema_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_toy_dataset(root);
    assert!(train_toy(root, &[]).status.success());
    std::fs::write(root.join("other.csv"), "left_name,right_name,label\na b,a b,1\n").unwrap();
    let out = cordel(&["predict", "--checkpoint", "m.ckpt", "--pairs", "other.csv", "--out", "p.csv"], root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn training_is_reproducible_from_the_manifest_argv() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_toy_dataset(root);
    assert!(train_toy(root, &["--seed", "7"]).status.success());
    let first = std::fs::read(root.join("m.ckpt")).unwrap();
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(root.join("m.ckpt.manifest.json")).unwrap()).unwrap();
    let argv: Vec<String> = manifest["argv"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    assert!(cordel(&args, root).status.success());
    assert_eq!(first, std::fs::read(root.join("m.ckpt")).unwrap());
}

#[test]
fn gradcheck_passes_and_detects_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = cordel(&["gradcheck", "--seeds", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out);
    let checks = events(&lines, "gradcheck");
    assert_eq!(checks.len(), 8);
    assert!(checks.iter().all(|c| c["pass"] == true));

    let out = cordel(&["gradcheck", "--variant", "attention", "--inject-fault"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let lines = json_lines(&out);
    assert_eq!(events(&lines, "gradcheck")[0]["pass"], false);
}

#[test]
fn vocab_extract_writes_sorted_unique_tokens() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("v")).unwrap();
    std::fs::write(
        dir.path().join("v/pairs.csv"),
        "left_t,right_t,label\nCoca-Cola 8 pack,coca-cola 6 pack,0\nzebra,apple,1\n",
    )
    .unwrap();
    let out = cordel(&["vocab-extract", "--data", "v", "--out", "vocab.txt"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    let tokens: Vec<&str> = vocab.lines().collect();
    let mut sorted = tokens.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(tokens, sorted);
    assert!(tokens.contains(&"8") && tokens.contains(&"zebra"));
}

fn write_easy_dataset(dir: &Path) {
    std::fs::create_dir_all(dir.join("easy")).unwrap();
    let mut text = String::from("left_title,left_kind,right_title,right_kind,label\n");
    let words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet"];
    for i in 0..40 {
        let a = format!("{} {}", words[i % 10], words[(i / 10 + i) % 10]);
        if i % 2 == 0 {
            text.push_str(&format!("{a},x,{a},x,1\n"));
        } else {
            let b = format!("{} {}", words[(i + 3) % 10], words[(i + 5) % 10]);
            text.push_str(&format!("{a},x,{b},y,0\n"));
        }
    }
    std::fs::write(dir.join("easy/pairs.csv"), text).unwrap();
}

#[test]
fn overfit_toy_model_scores_100_on_its_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_easy_dataset(root);
    let out = cordel(
        &["train", "--data", "easy", "--hashed-embeddings", "--dim", "16", "--epochs", "80", "--lr", "1e-2", "--batch-size", "8", "--out", "e.ckpt"],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cordel(&["eval", "--checkpoint", "e.ckpt", "--data", "easy", "--split", "train"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(events(&json_lines(&out), "metrics")[0]["f1"], 1.0);

    let out = cordel(&["eval", "--checkpoint", "e.ckpt", "--data", "easy", "--split", "valid", "--threshold", "0"], root);
    assert!(out.status.success());
    assert_eq!(events(&json_lines(&out), "metrics")[0]["recall"], 1.0);
}

#[test]
fn zero_learning_rate_warns_and_keeps_initial_parameters() {
    use cordel::model::{load_checkpoint, Model, ModelConfig, Variant};
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_easy_dataset(root);
    let out = cordel(&["train", "--data", "easy", "--hashed-embeddings", "--dim", "8", "--epochs", "2", "--lr", "0", "--seed", "3", "--out", "z.ckpt"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let trained = load_checkpoint(&root.join("z.ckpt")).unwrap().model;
    let initial = Model::new(ModelConfig::new(Variant::Sum, 2, 8).with_seed(3)).unwrap();
    assert_eq!(trained.params(), initial.params());
}

#[test]
fn single_pair_file_gives_single_score() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_easy_dataset(root);
    assert!(cordel(&["train", "--data", "easy", "--hashed-embeddings", "--dim", "8", "--epochs", "1", "--out", "s.ckpt"], root).status.success());
    std::fs::write(root.join("one.csv"), "id,left_title,left_kind,right_title,right_kind\nq7,alpha bravo,x,alpha,x\n").unwrap();
    let out = cordel(&["predict", "--checkpoint", "s.ckpt", "--pairs", "one.csv", "--out", "one.out.csv"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(root.join("one.out.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("q7,"));
}

#[test]
fn vocab_extract_matches_a_tokenize_and_union_oracle_and_is_idempotent() {
    use cordel::data::load_dataset;
    use cordel::lim::tokenize;
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_toy_dataset(root);
    for _ in 0..2 {
        assert!(cordel(&["vocab-extract", "--data", "toy", "--out", "v.txt"], root).status.success());
    }
    let first = std::fs::read_to_string(root.join("v.txt")).unwrap();
    assert!(cordel(&["vocab-extract", "--data", "toy", "--out", "w.txt"], root).status.success());
    assert_eq!(first, std::fs::read_to_string(root.join("w.txt")).unwrap());

    let dataset = load_dataset(&root.join("toy"), 0).unwrap();
    let mut oracle = std::collections::HashSet::new();
    for p in dataset.train.iter().chain(&dataset.valid).chain(&dataset.test) {
        for v in p.left.values.iter().chain(&p.right.values) {
            for t in tokenize(v) {
                oracle.insert(t);
            }
        }
    }
    assert_eq!(first.lines().count(), oracle.len());
}
