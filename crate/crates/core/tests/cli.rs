use std::fs;
use std::path::Path;
use std::process::Command;

fn difnd(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_difnd"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn difnd");
    assert!(
        out.status.success(),
        "difnd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn short_config(dir: &Path) {
    let path = dir.join("syn/config.toml");
    let cfg = fs::read_to_string(&path).unwrap();
    let cfg = cfg
        .replace("warmup_epochs = 20", "warmup_epochs = 1")
        .replace("max_epochs = 60", "max_epochs = 2");
    assert!(cfg.contains("max_epochs = 2"));
    fs::write(&path, cfg).unwrap();
}

const RUN: [&str; 8] = [
    "--config",
    "syn/config.toml",
    "--corpus",
    "syn/corpus.bin",
    "--split",
    "syn/split.json",
    "--features",
    "syn/features.bin",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(RUN.iter()).chain(tail).copied().collect()
}

#[test]
fn synth_train_evaluate_ablate_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    difnd(dir, &["synth", "--items", "40", "--threads", "1", "--out", "syn"]);
    short_config(dir);

    difnd(dir, &with(&["train"], &["--out", "run"]));
    for entry in [
        "compressor.safetensors",
        "diffusion/denoiser.safetensors",
        "diffusion/refiner.safetensors",
        "fusion/td.safetensors",
        "fusion/mm.safetensors",
        "fusion/heads.safetensors",
    ] {
        assert!(dir.join("run/checkpoint").join(entry).exists(), "{entry}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/report.json")).unwrap()).unwrap();
    let trained = report[0]["test"]["accuracy"].as_f64().unwrap();

    difnd(
        dir,
        &with(&["evaluate"], &["--checkpoint", "run/checkpoint", "--out", "ev"]),
    );
    let ev: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(ev["accuracy"].as_f64().unwrap(), trained);

    difnd(dir, &with(&["ablate"], &["--tables", "modules", "--out", "ab"]));
    let mut r = csv::Reader::from_path(dir.join("ab/ablation.csv")).unwrap();
    assert_eq!(r.records().count(), 6);

    fs::write(dir.join("grid.toml"), "alpha = [0.5]\nbeta = []\ngamma = [2.0]\n").unwrap();
    difnd(dir, &with(&["sweep"], &["--grid", "grid.toml", "--out", "sw"]));
    let mut r = csv::Reader::from_path(dir.join("sw/sweep.csv")).unwrap();
    assert_eq!(r.records().count(), 2);
}

#[test]
fn ingest_split_augment_cod_extract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut manifest = String::new();
    for i in 0..12 {
        let label = if i % 2 == 0 { "fake" } else { "real" };
        let stance = if i % 2 == 0 { "refute" } else { "authenticate" };
        manifest.push_str(&format!(
            r#"{{"id":"n{i}","title":"Mayor Smith opens Bridge {i}","transcript":"words {i}","comments":["ok"],"event_id":"e{}","published_at":{i},"label":"{label}","debunk":[{{"body":"checked {i}","stance":"{stance}"}}]}}"#,
            i % 4
        ));
        manifest.push('\n');
    }
    fs::write(dir.join("manifest.jsonl"), manifest).unwrap();
    difnd(dir, &["ingest", "--manifest", "manifest.jsonl", "--out", "corpus.bin"]);
    difnd(
        dir,
        &[
            "split",
            "--corpus",
            "corpus.bin",
            "--mode",
            "chrono",
            "--ratios",
            "0.5,0.25,0.25",
            "--out",
            "split.json",
        ],
    );
    let plan = difnd::corpus::SplitPlan::load(&dir.join("split.json")).unwrap();
    assert_eq!(plan.view(0).unwrap().train.len(), 6);
    difnd(
        dir,
        &[
            "split",
            "--corpus",
            "corpus.bin",
            "--mode",
            "folds",
            "--k",
            "4",
            "--out",
            "folds.json",
        ],
    );
    assert_eq!(
        difnd::corpus::SplitPlan::load(&dir.join("folds.json"))
            .unwrap()
            .num_views(),
        4
    );

    difnd(
        dir,
        &[
            "augment",
            "--corpus",
            "corpus.bin",
            "--styles",
            "all",
            "--backend",
            "mock",
            "--transcript",
            "t.jsonl",
        ],
    );
    assert_eq!(
        fs::read_to_string(dir.join("augmented_debunks.jsonl"))
            .unwrap()
            .lines()
            .count(),
        60
    );
    assert_eq!(fs::read_to_string(dir.join("t.jsonl")).unwrap().lines().count(), 60);

    difnd(
        dir,
        &[
            "cod",
            "--corpus",
            "corpus.bin",
            "--backend",
            "mock",
            "--runs",
            "3",
            "--seed",
            "4",
        ],
    );
    fs::rename(dir.join("cod_records.jsonl"), dir.join("first.jsonl")).unwrap();
    difnd(
        dir,
        &[
            "cod",
            "--corpus",
            "corpus.bin",
            "--backend",
            "mock",
            "--runs",
            "3",
            "--seed",
            "4",
        ],
    );
    assert_eq!(
        fs::read(dir.join("first.jsonl")).unwrap(),
        fs::read(dir.join("cod_records.jsonl")).unwrap()
    );

    fs::write(
        dir.join("encoders.toml"),
        toml::to_string(&difnd::synth::encoder_config()).unwrap(),
    )
    .unwrap();
    let extract = [
        "extract",
        "--corpus",
        "corpus.bin",
        "--encoders",
        "encoders.toml",
        "--cache",
        "cache",
        "--augmented",
        "augmented_debunks.jsonl",
        "--cod",
        "TVA=cod_records.jsonl",
    ];
    difnd(dir, &extract);
    let first = fs::read(dir.join("features.bin")).unwrap();
    assert!(dir.join("cache/text").is_dir());
    difnd(dir, &extract);
    assert_eq!(first, fs::read(dir.join("features.bin")).unwrap());
    let table = difnd::features::FeatureTable::load(&dir.join("features.bin")).unwrap();
    assert_eq!(table.len(), 12);
    assert_eq!(table.cod_keys(), vec!["TVA".to_string()]);
}

#[test]
fn bad_cod_variant_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_difnd"))
        .current_dir(tmp.path())
        .args(["cod", "--corpus", "missing.bin", "--variant", "VT"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
