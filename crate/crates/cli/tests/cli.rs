use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[dataset.adr]
n_train = 4
n_valid = 2
n_test = 2
train_steps = 12
test_steps = 20
seed = 3

[dataset.adr.solver]
nodes = 8
dt = 0.031415926535897934
substeps = 4

[model]
height = 8
width = 8
coords = { k = 2 }
encoder = { kernels = [4, 8], strides = [2, 1] }
vit = { patch = 2, emb = 8, layers = 2, heads = 2, ff = 16 }
film = { hidden = 8 }

[trainer]
steps = 20
batch = 4
valid_every = 10
lr = 3e-3

[eval]
horizons = [10, 20]
batch = 2
triplet_steps = [1, 20]
triplet_sims = 1
"#;

fn aevit(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aevit"))
        .env("AEVIT_RUN_ROOT", root)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn single_run_dir(root: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("config.toml").exists())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn generate_train_evaluate_rollout_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let data = tmp.path().join("data");
    let out = ok(&aevit(&root, &["generate-data", "-c", cfg_s, "--out", data.to_str().unwrap()]));
    assert_eq!(out.lines().count(), 3);
    for s in ["train", "valid", "test"] {
        assert!(data.join(format!("{s}.bin")).exists());
    }

    ok(&aevit(&root, &["train", "-c", cfg_s, "--evaluate"]));
    let dir = single_run_dir(&root);
    for f in ["config.toml", "checkpoint.ckpt", "train_log.csv", "valid_log.csv", "metrics.json", "eval/errors.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"horizons\""));
    // The stored config resolves to the same run.
    let stored = aevit_core::RunConfig::load(&dir.join("config.toml")).unwrap();
    assert_eq!(stored, aevit_core::RunConfig::from_toml(TINY).unwrap());

    // Rerunning resumes from a finished checkpoint and reproduces the metrics.
    ok(&aevit(&root, &["evaluate", "-c", cfg_s]));
    assert_eq!(std::fs::read_to_string(dir.join("metrics.json")).unwrap(), metrics);

    let ck = dir.join("checkpoint.ckpt");
    let text = ok(&aevit(&root, &["inspect-checkpoint", ck.to_str().unwrap()]));
    assert!(text.contains("step              20 of 20"), "{text}");
    let json = ok(&aevit(&root, &["inspect-checkpoint", ck.to_str().unwrap(), "--json"]));
    assert!(json.contains("\"format\": \"aevit-checkpoint\""));

    let ro = tmp.path().join("ro");
    ok(&aevit(
        &root,
        &[
            "rollout",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            data.join("test.bin").to_str().unwrap(),
            "--horizon",
            "6",
            "--sims",
            "1",
            "--out",
            ro.to_str().unwrap(),
        ],
    ));
    let pred = aevit_core::data::load_dataset(&ro.join("predictions.bin")).unwrap();
    assert_eq!((pred.len(), pred.n_steps), (1, 6));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let read = |name: &str| {
        let root = tmp.path().join(name);
        ok(&aevit(&root, &["train", "-c", cfg.to_str().unwrap(), "--evaluate"]));
        let dir = single_run_dir(&root);
        (
            std::fs::read(dir.join("metrics.json")).unwrap(),
            std::fs::read(dir.join("train_log.csv")).unwrap(),
            std::fs::read(dir.join("checkpoint.ckpt")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn ablation_dry_run_lists_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&aevit(
        tmp.path(),
        &["ablate", "--desk", "--toggles", "film_qkv,film_layernorm", "--seeds", "0,1", "--dry-run"],
    ));
    assert!(out.starts_with("8 runs"), "{out}");
    assert_eq!(out.lines().filter(|l| l.contains("seed")).count(), 8);
    assert!(out.contains("baseline") && out.contains("+film_qkv") && out.contains("all"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bad = root.join("bad.toml");
    std::fs::write(&bad, "[trainer]\nlearning_rate = 1.0\n").unwrap();
    assert_eq!(aevit(root, &["train", "-c", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(aevit(root, &["train", "--desk", "--set", "trainer.lr=-1"]).status.code(), Some(2));
    assert_eq!(aevit(root, &["inspect-checkpoint", "/nonexistent/x.ckpt"]).status.code(), Some(4));
    let missing = root.join("missing.toml");
    assert_eq!(aevit(root, &["train", "-c", missing.to_str().unwrap()]).status.code(), Some(4));

    let cfg = root.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = aevit(root, &["train", "-c", cfg.to_str().unwrap(), "--set", "trainer.lr=1e30"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss at step"));
}
