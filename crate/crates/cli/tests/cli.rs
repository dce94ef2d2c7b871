use std::path::Path;
use std::process::Command;

use csirff_cli::pipeline::{self, TrainingSets};
use csirff_cli::{run_ablation, ExperimentConfig, Preset, Variant};
use sha2::{Digest, Sha256};

const TINY: &str = r#"
[dataset]
n_realizations = 10
snr_grid = [20.0, 40.0]
flat_realizations = 20

[stage1]
max_epochs = 1

[stage2]
max_epochs = 2

[ls_train]
max_epochs = 5
"#;

fn csirff(dir: &Path, args: &[&str]) -> std::process::Output {
    let cfg = dir.join("tiny.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_csirff"))
        .args(args)
        .arg("--out")
        .arg(dir.join("run"))
        .arg("--config")
        .arg(&cfg)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = csirff(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    csirff(dir, args).status.code().unwrap()
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["split"]), 3, "missing population is a data error");
    assert_eq!(code(d, &["no-such-command"]), 2);
    ok(d, &["gen-population"]);
    assert_eq!(code(d, &["eval", "--checkpoint", "nowhere.ckpt"]), 3);
    assert_eq!(code(d, &["train", "--stage", "1", "--variant", "no_scl"]), 2);

    std::fs::write(d.join("bad.toml"), "[population]\nscale = 7.0\n").unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_csirff"))
        .args(["gen-population", "--config"])
        .arg(d.join("bad.toml"))
        .arg("--out")
        .arg(d.join("run"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    ok(d, &["gen-dataset"]);
    let path = d.join("run/dataset.csf");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    let out = csirff(d, &["split"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

fn digest(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn embeddings_have_unit_norm_projections_and_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in
        [&["gen-population"][..], &["gen-dataset"], &["split"], &["train", "--stage", "2", "--variant", "no_scl"]]
    {
        ok(d, args);
    }
    let ckpt = d.join("run/model_no_scl.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    ok(d, &["export-embeddings", "--checkpoint", ckpt, "--stage", "projection_z"]);
    let z = std::fs::read_to_string(d.join("run/embeddings_projection_z.csv")).unwrap();
    let mut rows = z.lines();
    assert_eq!(rows.next().unwrap().split(',').count(), 3 + 128);
    for row in rows {
        let norm: f64 = row.split(',').skip(3).map(|v| v.parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "{norm}");
    }
    let first = digest(&d.join("run/embeddings_projection_z.csv"));
    ok(d, &["export-embeddings", "--checkpoint", ckpt, "--stage", "projection_z"]);
    assert_eq!(digest(&d.join("run/embeddings_projection_z.csv")), first);

    ok(d, &["export-embeddings", "--checkpoint", ckpt, "--stage", "encoder_r"]);
    let r = std::fs::read_to_string(d.join("run/embeddings_encoder_r.csv")).unwrap();
    assert_eq!(r.lines().next().unwrap().split(',').count(), 3 + 64);
}

#[test]
fn ablation_tables_repeat_exactly() {
    let cfg = ExperimentConfig::from_parts(Preset::Desk, Some(TINY), Some(1)).unwrap();
    let pop = pipeline::population(&cfg).unwrap();
    let ds = pipeline::dataset(&cfg, &pop).unwrap();
    let split = pipeline::split(&cfg, &ds.records).unwrap();
    let variants = [Variant::NoScl, Variant::NoDaNoScl];
    let a = run_ablation(&cfg, &pop, &ds, &split, &variants, true).unwrap().table;
    let b = run_ablation(&cfg, &pop, &ds, &split, &variants, true).unwrap().table;
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.snr_db, vec![20.0, 40.0]);
    assert!(a.rows.iter().flat_map(|r| &r.accuracy).all(|v| (0.0..=100.0).contains(v)));
}

#[test]
fn stage2_refuses_mismatched_stage1() {
    let cfg = ExperimentConfig::from_parts(Preset::Desk, Some(TINY), None).unwrap();
    let pop = pipeline::population(&cfg).unwrap();
    let flat = pipeline::flat_dataset(&cfg, &pop).unwrap();
    let fs = pipeline::flat_split(&cfg, &flat.records).unwrap();
    let sets = TrainingSets { augmented: (&flat.records, &fs), flat: (&flat.records, &fs) };
    let err = pipeline::run_stage2(&cfg, &sets, Variant::Full, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
