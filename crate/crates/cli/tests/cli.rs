use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

const SMOKE: &str = r#"
seed = 1

[env]
n_samples = 200

[sft]
epochs = 3

[grpo]
steps = 25
batch_size = 8

[eval]
n_test = 60
"#;

fn senti(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_senti"))
        .args(args)
        .env_remove("SENTI_OUTPUT_ROOT")
        .output()
        .expect("spawn senti")
}

fn ok(args: &[&str]) -> String {
    let out = senti(args);
    assert!(
        out.status.success(),
        "senti {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = senti(args);
    assert!(!out.status.success(), "senti {args:?} unexpectedly succeeded");
    assert_eq!(out.status.code(), Some(1));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("smoke.toml");
    std::fs::write(&config, SMOKE).unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
    }
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_writes_splits_and_is_deterministic() {
    let w = workspace();
    let (a, b) = (w.root.join("a"), w.root.join("b"));
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&b)]);
    assert_eq!(
        file_names(&a),
        [
            "cot_candidates.jsonl",
            "cot_filtered.jsonl",
            "manifest.json",
            "samples.jsonl",
            "shift.jsonl",
            "test.jsonl"
        ]
    );
    assert_eq!(lines(&a.join("samples.jsonl")), 200);
    assert_eq!(lines(&a.join("cot_candidates.jsonl")), 200);
    assert_eq!(lines(&a.join("test.jsonl")), 60);
    for f in file_names(&a) {
        if f != "manifest.json" {
            assert_eq!(
                std::fs::read(a.join(&f)).unwrap(),
                std::fs::read(b.join(&f)).unwrap(),
                "{f}"
            );
        }
    }

    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["env"]["n_samples"], 200);
    assert_eq!(m["seeds"]["seed"], 1);
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 5);

    // Rerunning from the manifest reproduces the data byte for byte.
    let c = w.root.join("c");
    ok(&["gen-data", "--config", s(&a.join("manifest.json")), "--out", s(&c)]);
    for f in ["samples.jsonl", "cot_filtered.jsonl", "test.jsonl", "shift.jsonl"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(c.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let w = workspace();
    let (a, b) = (w.root.join("a"), w.root.join("b"));
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&w.config), "--seed", "2", "--out", s(&b)]);
    assert_ne!(
        std::fs::read(a.join("samples.jsonl")).unwrap(),
        std::fs::read(b.join("samples.jsonl")).unwrap()
    );
}

#[test]
fn all_hard_fraction_flags_every_sample() {
    let w = workspace();
    let cfg = w.root.join("hard.toml");
    std::fs::write(
        &cfg,
        "[env]\nn_samples = 40\nhard_fraction = 1.0\n[eval]\nn_test = 10\n",
    )
    .unwrap();
    let out = w.root.join("hard");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("samples.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["is_hard"], true);
    }
}

#[test]
fn full_pipeline_through_plot() {
    let w = workspace();
    let data = w.root.join("data");
    let run = w.root.join("run");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data)]);

    let t = Instant::now();
    ok(&["sft", "--data", s(&data), "--out", s(&run)]);
    assert!(t.elapsed().as_secs() < 60);
    assert_eq!(lines(&run.join("sft_loss.csv")), 1 + 3);
    let rerun = w.root.join("rerun");
    ok(&["sft", "--data", s(&data), "--out", s(&rerun)]);
    for f in ["sft.ckpt", "sft_loss.csv", "sft_manifest.json"] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(rerun.join(f)).unwrap(),
            "{f}"
        );
    }

    let ckpt = run.join("sft.ckpt");
    let mut curves = Vec::new();
    for arm in ["full", "no_hint", "no_hard"] {
        ok(&[
            "grpo",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ckpt),
            "--arm",
            arm,
            "--out",
            s(&run),
        ]);
        let csv = run.join(format!("reward_{arm}.csv"));
        assert_eq!(lines(&csv), 1 + 25);
        curves.push(csv);
        let m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(run.join(format!("grpo_{arm}_manifest.json"))).unwrap()).unwrap();
        let (hint, hard) = (
            m["config"]["grpo"]["hint_enabled"].clone(),
            m["config"]["grpo"]["include_hard"].clone(),
        );
        let want = match arm {
            "full" => (true, true),
            "no_hint" => (false, true),
            _ => (true, false),
        };
        assert_eq!((hint, hard), (want.0.into(), want.1.into()), "{arm}");
        assert_eq!(m["inputs"][0]["path"], s(&ckpt));
    }

    let full = run.join("grpo_full.ckpt");
    let eval_args = ["eval", "--data", s(&data), "--checkpoint", s(&full), "--split", "shift"];
    let first = ok(&eval_args);
    let second = ok(&eval_args);
    assert_eq!(first, second);
    assert!(first.starts_with("run_id=grpo_full:shift\n"));
    assert!(first.contains("acc5=") && first.contains("acc7=NA"));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("run_id,acc7,acc5,acc3"));

    let svg = run.join("curves.svg");
    let mut args = vec!["plot", "--out", s(&svg)];
    args.extend(curves.iter().map(|c| s(c)));
    ok(&args);
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("valid XML");
    let polylines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
    assert_eq!(polylines.len(), 3);
    let legend = doc.descendants().find(|n| n.attribute("id") == Some("legend")).unwrap();
    let labels: Vec<&str> = legend
        .descendants()
        .filter(|n| n.has_tag_name("text"))
        .filter_map(|n| n.text())
        .collect();
    assert_eq!(labels, ["full", "no_hint", "no_hard"]);
    for p in polylines {
        assert_eq!(p.attribute("points").unwrap().split(' ').count(), 25);
    }
}

#[test]
fn missing_data_dir_is_a_clean_error_without_outputs() {
    let w = workspace();
    let out = w.root.join("never");
    let err = fails(&["sft", "--data", s(&w.root.join("nope")), "--out", s(&out)]);
    assert!(err.starts_with("error:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn checkpoint_from_another_vocabulary_is_rejected() {
    let w = workspace();
    let data = w.root.join("data");
    ok(&["gen-data", "--config", s(&w.config), "--out", s(&data)]);
    ok(&["sft", "--data", s(&data), "--out", s(&w.root.join("run"))]);

    let other = w.root.join("mosi.toml");
    std::fs::write(
        &other,
        format!("{SMOKE}\n").replace("[env]\n", "[env]\nprofile = \"mosi\"\n"),
    )
    .unwrap();
    let mosi = w.root.join("mosi");
    ok(&["gen-data", "--config", s(&other), "--out", s(&mosi)]);
    let out = w.root.join("g");
    let err = fails(&[
        "grpo",
        "--data",
        s(&mosi),
        "--checkpoint",
        s(&w.root.join("run/sft.ckpt")),
        "--out",
        s(&out),
    ]);
    assert!(err.contains("vocabulary hash mismatch"), "{err}");
    assert!(!out.exists());

    let garbage = w.root.join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let err = fails(&["eval", "--data", s(&data), "--checkpoint", s(&garbage)]);
    assert!(err.contains("not a checkpoint"), "{err}");
}

#[test]
fn plot_rejects_empty_or_malformed_csv() {
    let w = workspace();
    let empty = w.root.join("reward_empty.csv");
    std::fs::write(
        &empty,
        "step,mean_reward,mean_format,mean_polarity,mean_score,hard_fraction,hinted_fraction\n",
    )
    .unwrap();
    let svg = w.root.join("out.svg");
    fails(&["plot", "--out", s(&svg), s(&empty)]);
    assert!(!svg.exists());

    let bad = w.root.join("reward_bad.csv");
    std::fs::write(&bad, "step,reward\n0,1\n").unwrap();
    fails(&["plot", "--out", s(&svg), s(&bad)]);
    assert!(!svg.exists());
}

#[test]
fn bad_config_and_unknown_arm_fail() {
    let w = workspace();
    let cfg = w.root.join("bad.toml");
    std::fs::write(&cfg, "[grpo]\ngroup_size = 1\n").unwrap();
    let out = w.root.join("x");
    let err = fails(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert!(err.contains("invalid configuration"), "{err}");
    assert!(!out.exists());
    fails(&[
        "gen-data",
        "--config",
        s(&w.root.join("missing.toml")),
        "--out",
        s(&out),
    ]);

    let bad_arm = senti(&[
        "grpo",
        "--data",
        ".",
        "--checkpoint",
        "x",
        "--arm",
        "nope",
        "--out",
        "y",
    ]);
    assert_eq!(bad_arm.status.code(), Some(2));
}

#[test]
fn output_root_applies_to_relative_paths() {
    let w = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_senti"))
        .args(["gen-data", "--config", s(&w.config), "--out", "rooted"])
        .env("SENTI_OUTPUT_ROOT", &w.root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(w.root.join("rooted/samples.jsonl").is_file());
}
