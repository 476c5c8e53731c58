use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affordgen"));
    c.env_remove("AFFORDGEN_CONFIG").env_remove("AFFORDGEN_PORT");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const TINY: &str = r#"
[paths]
corpus = "corpus"
checkpoint = "model.ckpt"
output = "out"

[dataset]
dim = 16
samples_per_class = 6
seed = 3
train_fraction = 0.67

[model]
latent_dim = 8
channel_widths = [4, 8]

[train]
epochs = 3
batch_size = 8
"#;

/// A working directory holding a tiny config, corpus and trained checkpoint.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        ok(&["--config", "tiny.toml", "dataset", "gen"], dir.path());
        let stdout = ok(&["--config", "tiny.toml", "train", "--report", "train.json"], dir.path());
        assert!(stdout.contains("held-out IoU"), "{stdout}");
        dir
    })
    .path()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn every_subcommand_has_help() {
    let tmp = TempDir::new().unwrap();
    let cases: &[(&[&str], &[&str])] = &[
        (&[], &["dataset", "train", "request", "serve"]),
        (&["dataset", "gen"], &["--dim", "--seed", "--samples", "--no-augment"]),
        (&["dataset", "ingest"], &["--input", "--classes"]),
        (&["train"], &["--epochs", "--checkpoint", "--report"]),
        (&["encode"], &["--input"]),
        (&["essence"], &["--corpus", "--out"]),
        (&["importance"], &["--checkpoint"]),
        (&["combine"], &["--base", "--top-percent", "--radius"]),
        (&["reconstruct"], &["--input", "--out"]),
        (&["afford-test", "support"], &["--probe-side", "--flatness-tol", "--pgm"]),
        (&["afford-test", "contain"], &["--radius"]),
        (&["export-mesh"], &["--sdf", "--mass"]),
        (&["request"], &["--affordances", "--base-percent"]),
        (&["serve"], &["--port", "--host"]),
    ];
    for (args, flags) in cases {
        let mut full = args.to_vec();
        full.push("--help");
        let text = ok(&full, tmp.path());
        for f in *flags {
            assert!(text.contains(f), "{args:?} help lacks {f}");
        }
    }
}

#[test]
fn bad_invocations_exit_with_usage_status() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["frobnicate"][..],
        &["train", "--epoch", "3"],
        &["combine", "--base", "tub"],
        &["request"],
        &["request", "--affordances", "contain-ability,support-ability,sit-ability"],
        &["request", "--affordances", "contain-ability"],
    ] {
        let out = run(args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn missing_inputs_are_domain_errors() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["essence", "table", "--checkpoint", "nope.ckpt", "--corpus", "nope"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    let out = run(&["--config", "absent.toml", "dataset", "gen"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dataset_gen_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let gen = |out: &str, seed: &str| {
        ok(&["dataset", "gen", "--dim", "16", "--samples", "3", "--seed", seed, "--out", out], tmp.path());
        files_under(&tmp.path().join(out))
    };
    let a = gen("a", "7");
    let b = gen("b", "7");
    let c = gen("c", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    // 4 classes x 3 shapes x 4 rotations, plus the manifest
    assert_eq!(a.len(), 4 * 3 * 4 + 1);
}

#[test]
fn config_file_from_environment() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("env.toml"),
        "[paths]\ncorpus = \"from_env\"\n[dataset]\ndim = 8\nsamples_per_class = 2\naugment = false\ntrain_fraction = 0.5\n",
    )
    .unwrap();
    let out = bin()
        .args(["dataset", "gen"])
        .env("AFFORDGEN_CONFIG", "env.toml")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(tmp.path().join("from_env/manifest.json"));
    assert_eq!(manifest["dim"], 8);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 8);
}

const BOX_OFF: &str = "OFF\n8 12 0\n0 0 0\n2 0 0\n2 1 0\n0 1 0\n0 0 3\n2 0 3\n2 1 3\n0 1 3\n\
    3 0 2 1\n3 0 3 2\n3 4 5 6\n3 4 6 7\n3 0 1 5\n3 0 5 4\n3 2 3 7\n3 2 7 6\n3 1 2 6\n3 1 6 5\n3 0 4 7\n3 0 7 3\n";

#[test]
fn ingest_voxelizes_class_directories() {
    let tmp = TempDir::new().unwrap();
    for class in ["tub", "table"] {
        let d = tmp.path().join("meshes").join(class);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("box.off"), BOX_OFF).unwrap();
    }
    std::fs::write(tmp.path().join("meshes/tub/broken.off"), "OFF\n1 1 0\n").unwrap();
    let out = run(
        &["dataset", "ingest", "--input", "meshes", "--dim", "8", "--no-split", "--no-augment", "--out", "ing"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1"));
    let manifest = read_json(tmp.path().join("ing/manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);

    std::fs::create_dir_all(tmp.path().join("meshes/sofa")).unwrap();
    let out = run(&["dataset", "ingest", "--input", "meshes", "--dim", "8", "--out", "ing2"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_is_deterministic() {
    let dir = pipeline();
    ok(&["--config", "tiny.toml", "train", "--checkpoint", "again.ckpt", "--report", "again.json"], dir);
    assert_eq!(
        std::fs::read(dir.join("model.ckpt")).unwrap(),
        std::fs::read(dir.join("again.ckpt")).unwrap()
    );
    let report = read_json(dir.join("train.json"));
    assert_eq!(report, read_json(dir.join("again.json")));
    assert_eq!(report["report"]["history"].as_array().unwrap().len(), 3);
    let iou = report["held_out_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&iou));
}

#[test]
fn essence_and_importance() {
    let dir = pipeline();
    let stdout = ok(&["--config", "tiny.toml", "essence", "chair", "--out", "ess"], dir);
    assert!(stdout.contains("essence of 'chair'"), "{stdout}");
    let e = read_json(dir.join("ess/essence_chair.json"));
    assert_eq!(e["code"]["means"].as_array().unwrap().len(), 8);
    assert!(dir.join("ess/essence_chair.binvox").is_file());

    let imp: Value = serde_json::from_str(&ok(&["--config", "tiny.toml", "importance", "chair"], dir)).unwrap();
    let scores: Vec<f64> = imp["scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mut ranking: Vec<u64> = imp["ranking"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(ranking.windows(2).all(|w| scores[w[0] as usize] >= scores[w[1] as usize]));
    ranking.sort();
    assert_eq!(ranking, (0..8).collect::<Vec<u64>>());

    let out = run(&["--config", "tiny.toml", "essence", "sofa"], dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_base_share_reproduces_base_essence() {
    let dir = pipeline();
    ok(&["--config", "tiny.toml", "essence", "tub", "--out", "base_ess"], dir);
    ok(
        &[
            "--config", "tiny.toml", "combine", "--base", "tub", "--top", "table", "--base-percent", "1", "--top-percent",
            "0", "--out", "comb10",
        ],
        dir,
    );
    let essence = read_json(dir.join("base_ess/essence_tub.json"));
    let code = read_json(dir.join("comb10/combined_code.json"));
    assert_eq!(code["means"], essence["code"]["means"]);
    for f in ["combined.binvox", "combined.obj", "support.pgm", "report.json"] {
        assert!(dir.join("comb10").join(f).is_file(), "{f}");
    }
    assert_eq!(
        std::fs::read(dir.join("comb10/combined.binvox")).unwrap(),
        std::fs::read(dir.join("base_ess/essence_tub.binvox")).unwrap()
    );
}

#[test]
fn grid_tools() {
    let dir = pipeline();
    let sample = dir.join("corpus/table/0000_r000.binvox");
    assert!(sample.is_file());
    let s = sample.to_str().unwrap();
    let stdout = ok(&["--config", "tiny.toml", "reconstruct", "--input", s, "--out", "recon.binvox"], dir);
    assert!(stdout.starts_with("IoU "), "{stdout}");
    let code: Value = serde_json::from_str(&ok(&["--config", "tiny.toml", "encode", "--input", s], dir)).unwrap();
    assert_eq!(code["means"].as_array().unwrap().len(), 8);

    let support: Value = serde_json::from_str(&ok(&["afford-test", "support", "--input", s, "--pgm", "s.pgm"], dir)).unwrap();
    assert!(support["supported_count"].as_u64().unwrap() > 0);
    assert!(std::fs::read(dir.join("s.pgm")).unwrap().starts_with(b"P"));
    let contain: Value = serde_json::from_str(&ok(&["afford-test", "contain", "--input", s], dir)).unwrap();
    assert!(contain["ratio"].as_f64().unwrap() >= 0.0);

    let stdout = ok(&["export-mesh", "--input", s, "--out", "t.obj", "--sdf", "t.sdf", "--name", "tbl"], dir);
    assert!(stdout.contains("SDF model"), "{stdout}");
    let sdf = std::fs::read_to_string(dir.join("t.sdf")).unwrap();
    assert!(sdf.contains("<inertia>") && sdf.contains("tbl"));
    assert!(std::fs::read_to_string(dir.join("t.obj")).unwrap().contains("\nf "));
}

#[test]
fn request_resolves_affordances_to_classes() {
    let dir = pipeline();
    ok(&["--config", "tiny.toml", "request", "--affordances", "contain-ability,support-ability", "--out", "req"], dir);
    let report = read_json(dir.join("req/report.json"));
    assert_eq!(report["base"], "tub");
    assert_eq!(report["top"], "table");

    std::fs::write(
        dir.join("two_tubs.toml"),
        "[[class]]\nclass_label = \"tub\"\naffordances = [\"contain-ability\"]\n\
         generator = { kind = \"tub\", width = [9, 12], depth = [6, 9], cavity_depth = [3, 5], wall_thickness = [1, 1] }\n\
         [[class]]\nclass_label = \"bowl\"\naffordances = [\"contain-ability\"]\n\
         generator = { kind = \"tub\", width = [6, 8], depth = [6, 8], cavity_depth = [2, 3], wall_thickness = [1, 1] }\n\
         [[class]]\nclass_label = \"table\"\naffordances = [\"support-ability\"]\n\
         generator = { kind = \"table\", width = [9, 12], depth = [6, 8], leg_height = [5, 6], slab_thickness = [1, 1], leg_count = [4, 4] }\n",
    )
    .unwrap();
    ok(
        &["dataset", "gen", "--dim", "16", "--samples", "3", "--no-split", "--classes", "two_tubs.toml", "--out", "amb"],
        dir,
    );
    let ask = |extra: &[&str]| {
        let mut args = vec!["--config", "tiny.toml", "request", "--corpus", "amb", "--affordances", "contain-ability,support-ability", "--out", "amb_out"];
        args.extend_from_slice(extra);
        run(&args, dir)
    };
    let out = ask(&[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tub") && err.contains("bowl") && err.contains("--base"), "{err}");

    let out = ask(&["--base", "bowl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(dir.join("amb_out/report.json"))["base"], "bowl");

    let out = ask(&["--base", "table"]);
    assert_eq!(out.status.code(), Some(1));
}
