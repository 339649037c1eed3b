use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use invrank::dataset::assign_fold;

const BIN: &str = env!("CARGO_BIN_EXE_invrank");

fn counter(n: i64) -> String {
    format!(
        "(set-logic LIA)
(synth-inv inv_fun ((x Int)))
(define-fun pre_fun ((x Int)) Bool (= x 0))
(define-fun trans_fun ((x Int) (x! Int)) Bool (and (< x {n}) (= x! (+ x 1))))
(define-fun post_fun ((x Int)) Bool (=> (>= x {n}) (= x {n})))
(inv-constraint inv_fun pre_fun trans_fun post_fun)
(check-synth)
"
    )
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

/// Ten counter problems, each with one correct and three wrong candidates.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for n in 1..=10 {
        let id = format!("count{n}");
        write(&root.join(format!("problems/{id}.sl")), &counter(n));
        let c = root.join("candidates").join(&id);
        write(&c.join("llm_gpt35-0.inv"), &format!("(<= x {})", n + 1));
        write(&c.join("llm_gpt35-1.inv"), "false");
        write(&c.join("llm_gpt35-2.inv"), &format!("(<= x {})", n - 1));
        write(
            &c.join("llm_gpt35-3.inv"),
            &format!("(and (<= 0 x) (<= x {n}))"),
        );
    }
    let config = root.join("invrank.toml");
    write(
        &config,
        "seed = 3\npermutations = 20\n[provider]\nkind = \"local_hash\"\ndim = 32\n[hyperparams]\nepochs = 2\nwarmup_steps = 2\n",
    );
    (dir, config)
}

fn invrank(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn parse_summarizes_corpus() {
    let (_d, cfg) = workspace();
    let out = ok(&invrank(&cfg, &["parse"]));
    assert!(out.ends_with("10 problems, 40 candidates\n"), "{out}");
}

#[test]
fn verify_is_idempotent() {
    let (d, cfg) = workspace();
    let first = ok(&invrank(&cfg, &["verify", "--jobs", "4"]));
    let path = d.path().join("dataset.jsonl");
    assert_eq!(first.trim(), path.display().to_string());
    let bytes = fs::read(&path).unwrap();
    ok(&invrank(&cfg, &["verify", "--jobs", "1"]));
    assert_eq!(fs::read(&path).unwrap(), bytes);
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert_eq!(text.matches("\"label\":\"pos\"").count(), 10);
}

#[test]
fn raw_eval_needs_no_models() {
    let (d, cfg) = workspace();
    ok(&invrank(&cfg, &["verify"]));
    let out = ok(&invrank(&cfg, &["eval", "--strategy", "raw", "--k", "1,2"]));
    let reports: Vec<&str> = out.lines().collect();
    assert_eq!(reports.len(), 3);
    let csv = fs::read_to_string(d.path().join("reports/eval.csv")).unwrap();
    assert!(csv.starts_with("strategy,problems,solved,mean_rank,median_rank,V@1,V@2,total_calls\nraw_embedding,10,10,"), "{csv}");

    let missing = invrank(&cfg, &["eval", "--strategy", "irank"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train"));
}

#[test]
fn train_then_rank_uses_held_out_fold_model() {
    let (d, cfg) = workspace();
    ok(&invrank(&cfg, &["verify"]));
    let models = ok(&invrank(&cfg, &["train"]));
    assert_eq!(models.lines().count(), 5);
    let id = (1..=10)
        .map(|n| format!("count{n}"))
        .find(|id| assign_fold(id).unwrap() == 2)
        .expect("some problem lands in fold 2");
    let out = ok(&invrank(&cfg, &["rank", "--problem", &id]));
    let ranking: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.trim()).unwrap()).unwrap();
    assert_eq!(ranking["fold"], 2);
    assert_eq!(ranking["model"], "model-fold2.json");
    assert_eq!(ranking["ranking"]["entries"].as_array().unwrap().len(), 4);
    let model: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(d.path().join("models/model-fold2.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(model["held_out_fold"], 2);
    let log = fs::read_to_string(d.path().join("models/train-fold2.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    // full evaluation is deterministic offline
    ok(&invrank(&cfg, &["eval"]));
    let md = fs::read(d.path().join("reports/eval.md")).unwrap();
    ok(&invrank(&cfg, &["eval", "--jobs", "3"]));
    assert_eq!(fs::read(d.path().join("reports/eval.md")).unwrap(), md);
    let text = String::from_utf8(md).unwrap();
    for s in ["llm_order", "expected", "tfidf", "raw_embedding", "irank"] {
        assert!(text.contains(&format!("| {s} |")), "{text}");
    }
    // generation order puts the correct candidate last
    let csv = fs::read_to_string(d.path().join("reports/eval.csv")).unwrap();
    assert!(
        csv.contains("\nllm_order,10,10,4.0000,4.0000,0.0000,100.0000,100.0000,"),
        "{csv}"
    );
}

#[test]
fn unknown_verdicts_exit_with_two() {
    let (d, cfg) = workspace();
    let fake = d.path().join("fake-solver.sh");
    write(&fake, "#!/bin/sh\necho unknown\nexec cat >/dev/null\n");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&fake, fs::Permissions::from_mode(0o755)).unwrap();
    }
    let out = invrank(&cfg, &["verify", "--solver", fake.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // the dataset is still written
    let text = fs::read_to_string(d.path().join("dataset.jsonl")).unwrap();
    assert_eq!(text.matches("\"label\":\"unknown\"").count(), 40);
    let eval = invrank(&cfg, &["eval", "--strategy", "llm"]);
    assert_eq!(eval.status.code(), Some(2));
    assert!(d.path().join("reports/eval.json").exists());
}

#[test]
fn config_and_io_failures_exit_with_one() {
    let (d, cfg) = workspace();
    fs::remove_dir_all(d.path().join("problems")).unwrap();
    assert_eq!(invrank(&cfg, &["parse"]).status.code(), Some(1));
    let bad = d.path().join("bad.toml");
    write(&bad, "[nonsense]\nx = 1\n");
    assert_eq!(invrank(&bad, &["parse"]).status.code(), Some(1));
    let (_d2, cfg2) = workspace();
    // no dataset yet
    assert_eq!(invrank(&cfg2, &["train"]).status.code(), Some(1));
}

#[test]
fn dedup_reports_kept_candidates() {
    let (d, cfg) = workspace();
    let c = d.path().join("candidates/count3");
    write(&c.join("other-0.inv"), "(> x (- 1))");
    write(&c.join("other-1.inv"), "(> (+ x 1) 0)");
    let out = ok(&invrank(&cfg, &["dedup"]));
    let csv = fs::read_to_string(out.trim()).unwrap();
    assert!(csv.starts_with("problem,candidates,kept,calls,kept_ids\n"));
    let row = csv.lines().find(|l| l.starts_with("count3,")).unwrap();
    assert!(row.starts_with("count3,6,5,"), "{row}");
    assert!(!row.contains("other-1"));
}

#[test]
fn generate_writes_candidates_from_canned_responses() {
    let (d, cfg) = workspace();
    let responses = d.path().join("responses/count2");
    write(
        &responses.join("0.txt"),
        "<code>(define-fun inv_fun ((x Int)) Bool (<= x 7))</code>",
    );
    write(&responses.join("1.txt"), "no code");
    write(
        &responses.join("2.txt"),
        "<code>(and (<= 0 x) (<= x 2))</code>",
    );
    write(&responses.join("3.txt"), "<code>(<= x 2)</code>");
    let with_responses = d.path().join("gen.toml");
    write(
        &with_responses,
        &(fs::read_to_string(&cfg).unwrap().replacen(
            "[provider]",
            "[paths]\nresponses = \"responses\"\n[provider]",
            1,
        )),
    );
    for _ in 0..2 {
        let out = ok(&invrank(
            &with_responses,
            &["generate", "--problem", "count2", "--source", "llm_gpt4"],
        ));
        assert_eq!(out, "count2\t3 samples\t2 candidates\tverified\n");
    }
    let dir = d.path().join("candidates/count2");
    assert_eq!(
        fs::read_to_string(dir.join("llm_gpt4-0.inv"))
            .unwrap()
            .trim(),
        "(define-fun inv_fun ((x Int)) Bool (<= x 7))"
    );
    assert!(dir.join("llm_gpt4-1.inv").exists());
    assert!(!dir.join("llm_gpt4-2.inv").exists());
    // the new files join the corpus
    let out = ok(&invrank(&cfg, &["parse"]));
    assert!(out.contains("count2\tfold"));
    assert!(out.ends_with("10 problems, 42 candidates\n"));
}
