//! End-to-end subcommand tests: artifact determinism, exit codes, and the
//! checkpoint/report plumbing.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fvrec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fvrec"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = fvrec().args(args).output().expect("spawn fvrec");
    assert!(
        out.status.success(),
        "fvrec {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    fvrec()
        .args(args)
        .output()
        .expect("spawn fvrec")
        .status
        .code()
        .unwrap_or(-1)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().to_string(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

/// Tiny MovieLens-style raw files: enough users per (gender x age) cell for
/// stratification.
fn write_raw_movielens(dir: &Path) -> (PathBuf, PathBuf) {
    let ratings = dir.join("ratings.dat");
    let users = dir.join("users.dat");
    let mut r = String::new();
    let mut u = String::new();
    for user in 0..32 {
        let gender = if user % 2 == 0 { "M" } else { "F" };
        let age = if (user / 2) % 2 == 0 { 25 } else { 45 };
        u.push_str(&format!("{user}::{gender}::{age}::0::00000\n"));
        for item in 0..8 {
            let rating = if (user + item) % 3 == 0 { 5 } else { 2 };
            r.push_str(&format!("{user}::{item}::{rating}::97830{item}\n"));
        }
        // make sure every user keeps at least two positives
        r.push_str(&format!("{user}::{}::4::978301\n", 8 + user % 2));
        r.push_str(&format!("{user}::{}::5::978302\n", 10 + user % 2));
    }
    fs::write(&ratings, r).unwrap();
    fs::write(&users, u).unwrap();
    (ratings, users)
}

#[test]
fn prepare_is_bit_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (ratings, users) = write_raw_movielens(tmp.path());
    let out1 = tmp.path().join("d1");
    let out2 = tmp.path().join("d2");
    for out in [&out1, &out2] {
        run_ok(&[
            "prepare",
            "--kind",
            "movielens",
            "--ratings",
            ratings.to_str().unwrap(),
            "--users",
            users.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "data.min_item_positives=1",
        ]);
    }
    assert_eq!(dir_bytes(&out1), dir_bytes(&out2));
    let report = fs::read_to_string(out1.join("prepare_report.txt")).unwrap();
    assert!(report.contains("users_retained = 32"), "{report}");
    assert!(report.contains("[config]"));
    assert!(report.contains("seed = 42"));
}

#[test]
fn synth_train_evaluate_are_bit_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_args = [
        "--set",
        "synth.users=150",
        "--set",
        "synth.items=30",
        "--set",
        "synth.min_items=5",
        "--set",
        "synth.max_items=12",
        "--set",
        "data.frac_train=0.6",
        "--set",
        "data.frac_val=0.2",
        "--set",
        "data.frac_test=0.2",
    ];
    let d1 = tmp.path().join("s1");
    let d2 = tmp.path().join("s2");
    for d in [&d1, &d2] {
        let mut args = vec!["synth", "--out", d.to_str().unwrap()];
        args.extend_from_slice(&synth_args);
        run_ok(&args);
    }
    assert_eq!(dir_bytes(&d1), dir_bytes(&d2), "synth must be deterministic");
    assert!(d1.join("factors.tsv").exists());

    let train_args = [
        "--set",
        "model.variant=vaeemp",
        "--set",
        "model.hidden=16",
        "--set",
        "model.latent=6",
        "--set",
        "model.split_z=4",
        "--set",
        "model.adv_hidden=8",
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch=16",
        "--set",
        "eval.k=3",
        "--set",
        "eval.probe_folds=3",
    ];
    let t1 = tmp.path().join("t1");
    let t2 = tmp.path().join("t2");
    for t in [&t1, &t2] {
        let mut args = vec![
            "train",
            "--data",
            d1.to_str().unwrap(),
            "--out",
            t.to_str().unwrap(),
        ];
        args.extend_from_slice(&train_args);
        run_ok(&args);
    }
    assert_eq!(dir_bytes(&t1), dir_bytes(&t2), "train artifacts must be deterministic");
    assert!(t1.join("model.ckpt").exists());
    let log = fs::read_to_string(t1.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2, "one log line per epoch");
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for field in [
        "reconstruction",
        "prior_kl",
        "sensitive_ce",
        "independence",
        "adversary",
        "total",
        "beta",
        "alpha",
        "gamma",
        "lambda_adv",
    ] {
        assert!(
            first["loss"].get(field).is_some(),
            "log entry missing loss field {field}"
        );
    }

    let eval_args = [
        "--set",
        "eval.k=3",
        "--set",
        "eval.list_k=10",
        "--set",
        "eval.bootstrap=30",
        "--set",
        "eval.probe_folds=3",
        "--set",
        "eval.sampled=true",
    ];
    let r1 = tmp.path().join("r1.json");
    let r2 = tmp.path().join("r2.json");
    let ckpt = t1.join("model.ckpt");
    for r in [&r1, &r2] {
        let mut args = vec![
            "evaluate",
            "--model",
            ckpt.to_str().unwrap(),
            "--data",
            d1.to_str().unwrap(),
            "--out",
            r.to_str().unwrap(),
        ];
        args.extend_from_slice(&eval_args);
        run_ok(&args);
    }
    assert_eq!(
        fs::read(&r1).unwrap(),
        fs::read(&r2).unwrap(),
        "evaluation reports must be bit-identical"
    );
    let text = fs::read_to_string(&r1).unwrap();
    assert!(text.contains("\"sampled\""), "sampled section requested");
    assert!(text.contains("config_echo"));

    // report table renders both modes
    let out = run_ok(&["report", r1.to_str().unwrap()]);
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(table.contains("vaeemp"));
    assert!(table.contains("vaeemp sampled"));
    assert!(table.contains("NDCG@10"));
}

#[test]
fn sampled_section_only_when_requested() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth.users=150",
        "--set",
        "synth.items=25",
        "--set",
        "synth.min_items=4",
        "--set",
        "synth.max_items=8",
        "--set",
        "data.frac_train=0.6",
        "--set",
        "data.frac_val=0.2",
        "--set",
        "data.frac_test=0.2",
    ]);
    let train = tmp.path().join("train");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train.to_str().unwrap(),
        "--set",
        "model.variant=vaerec",
        "--set",
        "model.hidden=12",
        "--set",
        "model.latent=4",
        "--set",
        "train.epochs=1",
        "--set",
        "train.batch=16",
        "--set",
        "eval.k=3",
        "--set",
        "eval.probe_folds=2",
    ]);
    let report = tmp.path().join("report.json");
    run_ok(&[
        "evaluate",
        "--model",
        train.join("model.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--set",
        "eval.k=3",
        "--set",
        "eval.list_k=8",
        "--set",
        "eval.bootstrap=10",
        "--set",
        "eval.probe_folds=2",
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let outcomes = parsed["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 1, "no sampled section unless requested");
    assert_eq!(outcomes[0]["mode"], "deterministic");
}

#[test]
fn slim_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth.users=150",
        "--set",
        "synth.items=25",
        "--set",
        "synth.min_items=4",
        "--set",
        "synth.max_items=8",
        "--set",
        "data.frac_train=0.6",
        "--set",
        "data.frac_val=0.2",
        "--set",
        "data.frac_test=0.2",
    ]);
    let train = tmp.path().join("slim");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train.to_str().unwrap(),
        "--set",
        "model.variant=slim",
        "--set",
        "slim.l1=0.1",
        "--set",
        "slim.l2=0.1",
    ]);
    let report = tmp.path().join("slim.json");
    run_ok(&[
        "evaluate",
        "--model",
        train.join("slim.model").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--set",
        "eval.k=3",
        "--set",
        "eval.list_k=8",
        "--set",
        "eval.bootstrap=10",
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["model"], "slim");
    assert!(
        parsed["outcomes"][0]["attrs"][0]["auc"].is_null(),
        "no AUC probe for slim"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    // 2: config error (unknown key)
    assert_eq!(exit_code(&["synth", "--out", "/tmp/x", "--set", "bogus.key=1"]), 2);
    // 3: data error (missing dataset dir)
    assert_eq!(
        exit_code(&["train", "--data", "/nonexistent-fvrec", "--out", "/tmp/x"]),
        3
    );
    // 2: config error (bad variant)
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth.users=40",
        "--set",
        "synth.items=20",
        "--set",
        "synth.min_items=4",
        "--set",
        "synth.max_items=8",
    ]);
    assert_eq!(
        exit_code(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("t").to_str().unwrap(),
            "--set",
            "model.variant=nonsense",
        ]),
        2
    );
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--set",
        "synth.users=40",
        "--set",
        "synth.items=20",
        "--set",
        "synth.min_items=4",
        "--set",
        "synth.max_items=8",
    ]);
    let train = tmp.path().join("train");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train.to_str().unwrap(),
        "--set",
        "model.variant=vaerec",
        "--set",
        "model.hidden=10",
        "--set",
        "model.latent=4",
        "--set",
        "train.epochs=1",
        "--set",
        "train.batch=16",
        "--set",
        "eval.k=3",
        "--set",
        "eval.probe_folds=2",
    ]);
    let ckpt = train.join("model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let code = exit_code(&[
        "evaluate",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "corrupted checkpoint fails the checksum");
}
