use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deformsdf"));
    c.env_remove("DEFORMSDF_OUT").env("RUST_LOG", "warn");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small enough to run the whole pipeline in seconds.
const TINY: &[&str] = &[
    "--set", "dataset.n_conditions=2",
    "--set", "test_conditions=1",
    "--set", "dataset.surface_density=20000",
    "--set", "dataset.sampling.n_total=300",
    "--set", "arch.hidden_layers=2",
    "--set", "arch.hidden_width=16",
    "--set", "arch.hyper_hidden=8",
    "--set", "arch.encoder_point=[8,12]",
    "--set", "arch.encoder_fuse=8",
    "--set", "arch.force_code_dim=6",
    "--set", "train.pretrain_epochs=3",
    "--set", "train.epochs=2",
    "--set", "train.sdf_batch=128",
    "--set", "train.surface_batch=64",
    "--set", "infer.optimizer.iters=3",
    "--set", "infer.optimizer.restarts=1",
    "--set", "infer.optimizer.recon_resolution=16",
    "--set", "infer.optimizer.recon_points=200",
    "--set", "recon.resolution=16",
    "--set", "interp.resolution=16",
    "--set", "interp.ts=[0,0.5,1]",
    "--set", "xsection.resolution=12",
    "--set", "eval.recon_resolution=16",
    "--set", "eval.recon_points=200",
];

fn tiny(out: &Path, cmd: &str) -> Output {
    let mut args = vec![cmd];
    args.extend_from_slice(TINY);
    run(out, &args)
}

#[test]
fn help_lists_subcommands_and_schema() {
    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["gen-data", "pretrain", "train", "infer", "recon", "interp", "xsection", "correspond", "eval"] {
        assert!(text.contains(sub), "missing {sub}");
    }
    for field in ["train.epochs", "weights.delta", "dataset.sampling.n_total", "infer.optimizer.lr", "paths.checkpoint"] {
        assert!(text.contains(field), "missing {field}");
    }
}

#[test]
fn schema_violations_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochs": "many"}}"#).unwrap();
    let o = bin().args(["show-config", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));

    let o = run(dir.path(), &["show-config", "--set", "weights.nope=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));

    let o = run(dir.path(), &["show-config", "--set", "weights.delta=0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(dir.path(), &["show-config", "--set", "train.epochs=5"]);
    assert!(o.status.success());
    let shown: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(shown["train"]["epochs"], 5);
}

#[test]
fn missing_inputs_exit_with_code_3_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("trained.ckpt"), "{}", stderr(&o));
    let o = run(dir.path(), &["pretrain"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen-data"];
    args.extend_from_slice(TINY);
    let o = bin().env("DEFORMSDF_OUT", dir.path()).args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("data/train/manifest.json").exists());
}

#[test]
fn gen_data_is_idempotent_and_counts_records() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--set", "dataset.surface_density=20000", "--set", "dataset.sampling.n_total=200", "--set", "test_conditions=0"];
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.path().join("data/train/manifest.json");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["records"].as_array().unwrap().len(), 14);
    let first = fs::read(&manifest).unwrap();
    let sdf = dir.path().join("data/train/tools/paddle/def_3/sdf.bin");
    let sdf_first = fs::read(&sdf).unwrap();

    let o = run(dir.path(), &args);
    assert!(o.status.success());
    assert_eq!(fs::read(&manifest).unwrap(), first);
    assert_eq!(fs::read(&sdf).unwrap(), sdf_first);

    let run_manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("results/manifests/gen-data.json")).unwrap()).unwrap();
    assert_eq!(run_manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(run_manifest["seed"], 0);
    assert!(run_manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn whole_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for cmd in ["gen-data", "pretrain", "train", "recon", "interp", "xsection", "correspond", "infer", "eval"] {
        let o = tiny(out, cmd);
        assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
        assert!(out.join(format!("results/manifests/{cmd}.json")).exists(), "{cmd}");
    }
    for f in [
        "model/pretrained.ckpt",
        "model/trained.ckpt",
        "results/logs/pretrain.jsonl",
        "results/logs/train.jsonl",
        "results/recon/paddle_def_0.obj",
        "results/interp/interp.json",
        "results/xsection/deformed_sdf.grid.json",
        "results/correspond/paddle_zero_def_0.csv",
        "results/infer/result.json",
        "results/infer/trajectory.csv",
        "results/eval/metrics.txt",
        "results/eval/metrics.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let interp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("results/interp/interp.json")).unwrap()).unwrap();
    assert_eq!(interp.as_array().unwrap().len(), 3);
    let metrics = fs::read_to_string(out.join("results/eval/metrics.txt")).unwrap();
    assert!(metrics.contains("Test.Def"));

    let before = fs::read(out.join("results/recon/paddle_def_0.obj")).unwrap();
    assert!(tiny(out, "recon").status.success());
    assert_eq!(fs::read(out.join("results/recon/paddle_def_0.obj")).unwrap(), before);

    let o = run(out, &["recon", "--set", "recon.target.tool=nothing"]);
    assert_eq!(o.status.code(), Some(3));
}
