mod common;

use clincot::commands::{cmd_iterate, cmd_pipeline, cmd_regions, cmd_train, cmd_verify};
use clincot::config::RunConfig;
use clincot::orchestrator::{read_manifest, RunOptions};
use clincot::pairs::read_dataset;
use clincot::Error;
use common::{demo_config, fixture_dir, read};

#[test]
fn regions_writes_masks_and_reports_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let heat = fixture_dir().join("heatmaps/case01");
    let maps: Vec<(String, std::path::PathBuf)> =
        ["effusion", "nodule", "consolidation", "cardiomegaly", "pneumothorax", "fracture"]
            .iter()
            .map(|h| (h.to_string(), heat.join(format!("{h}.txt"))))
            .collect();
    let image = fixture_dir().join("images/case01.txt");
    let s = cmd_regions(&cfg, &image, &maps, dir.path()).unwrap();
    assert_eq!(s.written.len(), 4);
    assert_eq!(s.skipped, vec!["nodule", "pneumothorax"]);
    for r in &s.written {
        let mask = clincot::grid::BinaryMask::parse_matrix(&std::fs::read_to_string(&r.path).unwrap(), None).unwrap();
        assert_eq!(mask.count_ones(), r.area);
    }
    let again = tempfile::tempdir().unwrap();
    let s2 = cmd_regions(&cfg, &image, &maps, again.path()).unwrap();
    assert_eq!(s.render(), s2.render());
    for r in &s.written {
        assert_eq!(read(&r.path), read(&again.path().join(r.path.file_name().unwrap())));
    }

    let missing = vec![("x".to_string(), heat.join("nope.txt"))];
    let e = cmd_regions(&cfg, &image, &missing, dir.path()).unwrap_err();
    assert!(e.to_string().contains("nope.txt"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn pipeline_on_two_inputs_respects_count_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo_config(dir.path());
    let lines: Vec<String> = std::fs::read_to_string(&cfg.paths.inputs)
        .unwrap()
        .lines()
        .take(2)
        .map(String::from)
        .collect();
    let inputs = dir.path().join("two.jsonl");
    std::fs::write(&inputs, lines.join("\n") + "\n").unwrap();
    cfg.paths.inputs = inputs;
    let s = cmd_pipeline(&cfg).unwrap();
    assert!(s.records > 0 && s.records <= 12, "{}", s.records);
    assert_eq!(read_dataset(&s.dataset).unwrap().len(), s.records);
}

#[test]
fn pipeline_rejects_empty_input_list() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = demo_config(dir.path());
    let empty = dir.path().join("none.jsonl");
    std::fs::write(&empty, "").unwrap();
    cfg.paths.inputs = empty;
    let e = cmd_pipeline(&cfg).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn train_from_pipeline_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let s = cmd_pipeline(&cfg).unwrap();
    let ckpt = dir.path().join("p.ckpt");
    let loss = dir.path().join("loss.dat");
    let losses = cmd_train(&cfg, &s.dataset, None, &ckpt, &loss).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    let text = std::fs::read_to_string(&loss).unwrap();
    assert_eq!(text.lines().count(), 4);

    // continue from the checkpoint
    let ckpt2 = dir.path().join("p2.ckpt");
    cmd_train(&cfg, &s.dataset, Some(&ckpt), &ckpt2, &loss).unwrap();
    assert_ne!(read(&ckpt), read(&ckpt2));

    // naive flag and zero margin scale give identical results
    let mut naive = cfg.clone();
    naive.ablation.naive_dpo = true;
    let mut zero = cfg.clone();
    zero.margin_scale = 0.0;
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let la = cmd_train(&naive, &s.dataset, None, &a, &loss).unwrap();
    let lb = cmd_train(&zero, &s.dataset, None, &b, &loss).unwrap();
    assert_eq!(la, lb);
    assert_eq!(read(&a), read(&b));
}

#[test]
fn train_reports_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let ds = dir.path().join("bad.jsonl");
    std::fs::write(&ds, "{\"schema\":\"clincot-preferences\",\"version\":1}\n{\"origin\":1}\n").unwrap();
    let e = cmd_train(&cfg, &ds, None, &dir.path().join("c"), &dir.path().join("l")).unwrap_err();
    assert!(e.to_string().contains("record 0"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn iterate_writes_round_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    let report = cmd_iterate(&cfg, RunOptions::default()).unwrap();
    assert_eq!(report.completed_rounds, 4);
    for i in 1..=4 {
        for f in ["dataset.jsonl", "policy.ckpt", "scores.log"] {
            assert!(dir.path().join(format!("round_{i}/{f}")).is_file(), "round {i} {f}");
        }
    }
    assert!(dir.path().join("report.txt").is_file());
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.config_digest, cfg.experiment_digest());
    assert_eq!(manifest.connectivity, 4);
    for (rel, sum) in &manifest.artifacts {
        assert_eq!(&clincot::digest::sha256_hex(&read(&dir.path().join(rel))), sum, "{rel}");
    }
    // each round starts from the previous round's checkpoint
    for w in manifest.lineage.windows(2) {
        assert_eq!(w[1].input_policy, w[0].output_policy);
    }
    for entry in &manifest.lineage {
        let ckpt = dir.path().join(format!("round_{}/policy.ckpt", entry.round));
        assert_eq!(clincot::digest::sha256_hex(&read(&ckpt)), entry.output_policy);
    }
}

#[test]
fn verify_passes_on_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config(dir.path());
    for c in cmd_verify(&cfg).unwrap() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}
