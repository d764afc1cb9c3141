use std::path::Path;
use std::process::{Command, Output};

fn gitvl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gitvl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gitvl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], category: &str) {
    let out = gitvl(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with(&format!("error[{category}]")), "{args:?}: {err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--mode", "caption", "--n", "1000", "--seed", "3", "--out-dir", p(d)]);
    }
    let samples = gitvl::data::read_dataset(&a).unwrap();
    assert_eq!(samples.len(), 1000);
    assert_eq!(samples, gitvl::data::read_dataset(&b).unwrap());
    assert!(!a.join("labels.txt").exists());

    let c = dir.path().join("c");
    ok(&["synth", "--mode", "classify", "--n", "40", "--out-dir", p(&c)]);
    assert!(c.join("labels.txt").exists());

    let v = dir.path().join("v");
    ok(&["synth", "--mode", "video", "--n", "3", "--out-dir", p(&v)]);
    let text = std::fs::read_to_string(v.join("trunk-00000/records.jsonl")).unwrap();
    assert!(text.lines().all(|l| l.contains("\"frames\"")));
}

#[test]
fn bad_input_is_reported_by_category() {
    let dir = tempfile::tempdir().unwrap();
    fails_with(&["train", "--out-dir", p(dir.path())], "validation");
    fails_with(
        &["train", "--train-data", "/no/such/dataset", "--out-dir", p(dir.path())],
        "validation",
    );
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "task = \"caption\"\nlearning_rate = 1\n").unwrap();
    fails_with(&["train", "--config", p(&cfg)], "format");
    fails_with(&["loader-sim", "--nodes", "0"], "validation");

    let preds = dir.path().join("p.txt");
    let gts = dir.path().join("g.txt");
    std::fs::write(&preds, "red\nblue\n").unwrap();
    std::fs::write(&gts, "red\n").unwrap();
    fails_with(
        &["eval", "--predictions", p(&preds), "--ground-truths", p(&gts), "--out-dir", p(dir.path())],
        "input",
    );
    let out = gitvl(&["synth", "--mode", "nope", "--n", "1", "--out-dir", p(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn eval_of_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.txt");
    let gts = dir.path().join("g.txt");
    std::fs::write(&preds, "crane bird\nipad\nlight blue\n").unwrap();
    std::fs::write(&gts, "cranebird\nhand-held computer\nblue\n").unwrap();
    let out = dir.path().join("out");
    let table = ok(&["eval", "--mode", "in", "--predictions", p(&preds), "--ground-truths", p(&gts), "--out-dir", p(&out)]);
    assert!(table.contains("equal"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!((report["equal_acc"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((report["in_acc"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn loader_sim_reports_bounds() {
    let text = ok(&["loader-sim", "--total", "1000", "--nodes", "3", "--ranks", "4", "--trunk-size", "8", "--json"]);
    let r: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(r["exactly_once"], true);
    assert!(r["high_water_prefetch"].as_u64().unwrap() <= 7);
    assert!(r["high_water_resident"].as_u64().unwrap() <= 12);
    assert_eq!(r["stall_total"].as_f64().unwrap(), 0.0);
    let again = ok(&["loader-sim", "--total", "1000", "--nodes", "3", "--ranks", "4", "--trunk-size", "8", "--json"]);
    assert_eq!(text, again);
    let human = ok(&["loader-sim", "--fetch-latency", "50", "--jitter", "0.5", "--seed", "2"]);
    assert!(human.contains("exactly-once        ok"));
}

/// One tiny training run shared by the generate and eval checks.
#[test]
fn train_generate_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--mode", "classify", "--n", "48", "--seed", "1", "--out-dir", p(&data), "--trunk-size", "16"]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "task = \"classify\"\ntrain_data = [{:?}]\nout_dir = {:?}\nepochs = 2\n\n[model]\nhidden_dim = 32\nencoder_layers = 1\ndecoder_layers = 1\n\n[train]\nwarmup_iters = 2\nbatch_size = 8\npeak_lr_encoder = 0.001\n",
            p(&data),
            p(&dir.path().join("run"))
        ),
    )
    .unwrap();
    let log = ok(&["train", "--config", p(&cfg)]);
    assert!(log.contains("epoch   1"));
    let run = dir.path().join("run");
    for f in ["model.ckpt", "model.toml", "vocab.txt", "loss.csv", "run.toml"] {
        assert!(run.join(f).exists(), "{f} missing");
    }

    // A deeper decoder is only a config change.
    let deep = dir.path().join("deep");
    ok(&["train", "--config", p(&cfg), "--decoder-layers", "24", "--epochs", "1", "--out-dir", p(&deep)]);

    let labels: Vec<String> = gitvl::data::read_labels(&data.join("labels.txt")).unwrap();
    for i in 0..4 {
        let idx = i.to_string();
        let out = ok(&["generate", "--checkpoint", p(&run), "--data", p(&data), "--index", &idx, "--mode", "trie"]);
        assert!(labels.contains(&out.trim_end_matches('\n').to_string()), "{out:?}");
        let greedy = ok(&["generate", "--checkpoint", p(&run), "--data", p(&data), "--index", &idx, "--greedy"]);
        let beam1 = ok(&["generate", "--checkpoint", p(&run), "--data", p(&data), "--index", &idx, "--beam", "1", "--length-penalty", "0"]);
        assert_eq!(greedy, beam1);
    }

    // Trie mode without any labels file.
    let bare = dir.path().join("bare");
    ok(&["synth", "--mode", "caption", "--n", "2", "--out-dir", p(&bare)]);
    fails_with(&["generate", "--checkpoint", p(&run), "--data", p(&bare), "--mode", "trie"], "validation");

    let out = dir.path().join("eval");
    let table = ok(&["eval", "--mode", "voc-prior", "--checkpoint", p(&run), "--data", p(&data), "--limit", "10", "--out-dir", p(&out)]);
    assert!(table.contains("voc-prior"));
    let report: gitvl::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.n, 10);
    assert!(report.samples.iter().all(|s| labels.contains(&s.prediction)));
}

#[test]
fn vqa_after_caption_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--mode", "vqa", "--n", "16", "--out-dir", p(&data)]);
    let common = ["--epochs", "1", "--batch-size", "8", "--warmup-iters", "1", "--decoder-layers", "1"];
    let pre = dir.path().join("pre");
    let mut args = vec!["train", "--task", "caption", "--train-data", p(&data), "--out-dir", p(&pre)];
    args.extend(common);
    assert!(ok(&args).contains("2 steps"));
    let run = dir.path().join("run");
    let mut args = vec![
        "train", "--task", "vqa", "--train-data", p(&data), "--out-dir", p(&run),
        "--init-checkpoint", p(&pre), "--mix-caption",
    ];
    args.extend(common);
    // Each sample contributes its question and its caption.
    assert!(ok(&args).contains("4 steps"));
    let out = ok(&["generate", "--checkpoint", p(&run), "--data", p(&data), "--greedy", "--max-steps", "3"]);
    assert!(!out.contains("cell"), "{out:?}");

    // A checkpoint whose vocabulary lacks the question words cannot be reused.
    let caps = dir.path().join("caps");
    ok(&["synth", "--mode", "caption", "--n", "8", "--out-dir", p(&caps)]);
    let cap_run = dir.path().join("cap-run");
    let mut args = vec!["train", "--task", "caption", "--train-data", p(&caps), "--out-dir", p(&cap_run)];
    args.extend(common);
    ok(&args);
    let mut args = vec![
        "train", "--task", "vqa", "--train-data", p(&data), "--out-dir", p(&run),
        "--init-checkpoint", p(&cap_run),
    ];
    args.extend(common);
    fails_with(&args, "validation");
}
