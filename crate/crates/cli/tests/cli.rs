use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/demo")
}

fn clincot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clincot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config() -> String {
    fixtures().join("config.toml").display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn regions_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let heat = fixtures().join("heatmaps/case01");
    let image = fixtures().join("images/case01.txt");
    let mut args = vec![
        "regions".to_string(),
        "--image".into(),
        image.display().to_string(),
        "--out".into(),
        dir.path().display().to_string(),
    ];
    for h in ["effusion", "nodule", "consolidation", "cardiomegaly", "pneumothorax", "fracture"] {
        args.push("--heatmap".into());
        args.push(format!("{h}={}", heat.join(format!("{h}.txt")).display()));
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = clincot(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("hypothesis_id area\n"));
    assert!(out.ends_with("skipped: nodule pneumothorax\n"), "{out}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4);
}

#[test]
fn pipeline_then_train() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = clincot(&["pipeline", "-c", &config(), "--output", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dataset = dir.path().join("dataset.jsonl");
    let ckpt = dir.path().join("p.ckpt");
    let loss = dir.path().join("loss.dat");
    let o = clincot(&[
        "train",
        "-c",
        &config(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--checkpoint-out",
        ckpt.to_str().unwrap(),
        "--loss-out",
        loss.to_str().unwrap(),
        "--learning-rate",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&loss).unwrap();
    let losses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(' ').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| (l - losses[0]).abs() < 1e-12), "{text}");
}

#[test]
fn iterate_with_no_iteration_runs_one_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = clincot(&["iterate", "-c", &config(), "--output", &out, "--no-iteration"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("rounds: 1 (completed 1)"));
    assert!(dir.path().join("round_1/policy.ckpt").is_file());
    assert!(!dir.path().join("round_2").exists());
}

#[test]
fn verify_passes() {
    let o = clincot(&["verify", "-c", &config()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}

#[test]
fn config_dump_round_trips() {
    let o = clincot(&["config", "-c", &config(), "--seed", "5"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let back = clincot::config::RunConfig::parse(&text).unwrap();
    assert_eq!(back.seed, 5);
    assert_eq!(back.to_canonical_string(), text);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&clincot(&["no-such-command"])), 1);
    assert_eq!(code(&clincot(&["pipeline", "-c", "/definitely/missing.toml"])), 1);
    assert_eq!(code(&clincot(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let bad_matrix = dir.path().join("bad.txt");
    std::fs::write(&bad_matrix, "2 2\n0 0\n0 oops\n").unwrap();
    let o = clincot(&[
        "regions",
        "--image",
        bad_matrix.to_str().unwrap(),
        "--heatmap",
        &format!("a={}", bad_matrix.display()),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    // an evaluator scoring outside [0, 1] is an internal contract violation
    let bank = std::fs::read_to_string(fixtures().join("fixture_bank.jsonl")).unwrap();
    let broken: String = bank
        .lines()
        .map(|l| {
            if l.contains("\"evaluation\"") {
                let cut = l.rfind("\"score\":").unwrap();
                format!("{}\"score\":1.2}}", &l[..cut])
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let bank_path = dir.path().join("bank.jsonl");
    std::fs::write(&bank_path, broken + "\n").unwrap();
    let f = fixtures().canonicalize().unwrap();
    let cfg = format!(
        "seed = 17\n\n[paths]\nhypotheses = {:?}\ninputs = {:?}\nheatmaps = {:?}\nimages = {:?}\nfixture_bank = {:?}\noutput = {:?}\n",
        f.join("hypotheses.json"),
        f.join("inputs.jsonl"),
        f.join("heatmaps"),
        f.join("images"),
        bank_path,
        dir.path().join("out"),
    );
    let cfg_path = dir.path().join("broken.toml");
    std::fs::write(&cfg_path, cfg).unwrap();
    let o = clincot(&["pipeline", "-c", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contract violation"));
}
