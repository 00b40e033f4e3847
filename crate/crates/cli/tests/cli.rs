use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ipacp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipacp")).args(args).output().unwrap()
}

fn gen_data(dir: &Path) -> String {
    let data = dir.join("data");
    let out = ipacp(&[
        "gen-data",
        "--profile",
        "small",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "2",
        "--n-train",
        "4",
        "--n-test",
        "2",
        "--labeled-ratio",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.to_string_lossy().into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "# tiny run\ndata = data\nout = out\ntotal_iters = 3\npatch = 16\nwidths = 2,4\nfactor = 2\nbase_lr = 1e-3\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn generate_train_evaluate_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    assert!(Path::new(&data).join("split.json").exists());
    let cfg = write_config(dir.path(), "");

    let out = ipacp(&["train", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("out").join("checkpoint.vol");
    assert!(ckpt.exists());
    let log = fs::read_to_string(dir.path().join("out").join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let stem = dir.path().join("report");
    let out = ipacp(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--split",
        "test",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert!(csv.starts_with("id,dice,jaccard,rmse,hd95,asd\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
    assert!(stem.with_extension("json").exists());

    let out = ipacp(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", &data, "--model", "teacher", "--window", "16", "--stride", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("id,dice"));

    let out = ipacp(&["ablate", "--config", &cfg, "--axis", "loss_mode"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out").join("ablate_loss_mode.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn resume_with_stop_after() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = write_config(dir.path(), "");
    let out = ipacp(&["train", "--config", &cfg, "--stop-after", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("out").join("checkpoint.vol");
    let out = ipacp(&["train", "--config", &cfg, "--resume", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(dir.path().join("out").join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), "learning_rate = 3\n");
    assert_eq!(ipacp(&["train", "--config", &bad_key]).status.code(), Some(2));
    let odd_batch = write_config(dir.path(), "batch_size = 3\n");
    assert_eq!(ipacp(&["train", "--config", &odd_batch]).status.code(), Some(2));
    assert_eq!(ipacp(&["ablate", "--config", &odd_batch, "--axis", "colour"]).status.code(), Some(2));

    let no_data = write_config(dir.path(), "");
    assert_eq!(ipacp(&["train", "--config", &no_data]).status.code(), Some(3));
    let missing = dir.path().join("nothing.vol");
    assert_eq!(
        ipacp(&["eval", "--ckpt", missing.to_str().unwrap(), "--data", "x"]).status.code(),
        Some(3)
    );

    gen_data(dir.path());
    let diverges = write_config(dir.path(), "base_lr = 1e300\ntotal_iters = 20\n");
    assert_eq!(ipacp(&["train", "--config", &diverges]).status.code(), Some(4));
    assert!(dir.path().join("out").join("abort").join("snapshot.vol").exists());
}
