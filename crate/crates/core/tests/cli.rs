//! End-to-end tests of the `imfrec` binary: happy paths for all three
//! commands, the exit-code contract (0 success, 2 usage, 3 data,
//! 4 numeric), config-file precedence, and byte-identical retraining.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imfrec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The worked example: 2 contexts, 3 items, S = {(0,0), (0,1), (1,1)}.
/// The #dims directive keeps item 2 in the catalog even though it never
/// occurs.
fn write_toy(dir: &Path) -> PathBuf {
    let path = dir.join("toy.tsv");
    std::fs::write(&path, "#dims 2 3\n0\t0\n0\t1\n1\t1\n").unwrap();
    path
}

fn train_toy(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = write_toy(dir);
    let model = dir.join("model.bin");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--model-out",
        model.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    model
}

#[test]
fn train_prints_progress_and_persists_a_restorable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(
        dir.path(),
        &[
            "--solver", "ials", "--dims", "2", "--epochs", "5", "--seed", "1",
        ],
    );
    let reloaded = imfrec::model::FactorModel::load(&model).unwrap();
    assert_eq!(reloaded.dim(), 2);
    assert_eq!(reloaded.num_contexts(), 2);
    assert_eq!(reloaded.num_items(), 3);
}

#[test]
fn train_progress_lines_have_three_tab_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let out = run(&["train", "--data", data.to_str().unwrap(), "--epochs", "3"]);
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 3);
    for (epoch, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "line {line:?}");
        assert_eq!(fields[0], epoch.to_string());
        fields[1].parse::<f64>().expect("loss field");
        fields[2].parse::<u64>().expect("elapsed-ms field");
    }
}

#[test]
fn every_solver_trains_on_the_toy_file() {
    let dir = tempfile::tempdir().unwrap();
    for solver in [
        "sgd-pointwise",
        "sgd-pairwise",
        "sgd-ssm",
        "ials",
        "ials-pairwise",
        "sgd-gramian",
    ] {
        train_toy(
            dir.path(),
            &["--solver", solver, "--epochs", "2", "--dims", "2"],
        );
    }
}

#[test]
fn identical_flags_give_byte_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let mut bytes = Vec::new();
    for rep in 0..2 {
        let model = dir.path().join(format!("m{rep}.bin"));
        let out = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--solver",
            "sgd-pairwise",
            "--dims",
            "2",
            "--epochs",
            "4",
            "--seed",
            "9",
            "--model-out",
            model.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        bytes.push(std::fs::read(&model).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn missing_data_file_exits_3_and_names_the_path() {
    let out = run(&["train", "--data", "/no/such/file.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("/no/such/file.tsv"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--epochs", "three"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("--learning-rate"));
}

#[test]
fn numeric_blowup_exits_4() {
    // A huge learning rate overflows the pointwise square-loss scores
    // into non-finite gradients.
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--solver",
        "sgd-pointwise",
        "--learning-rate",
        "1e300",
        "--epochs",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("numeric"), "{}", stderr(&out));
}

#[test]
fn evaluate_prints_the_metric_table() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "8", "--seed", "3"]);
    let data = dir.path().join("toy.tsv");
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--metrics",
        "recall,prec",
        "--n",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // Recall@|I| is 1 by construction: every relevant item fits in n=3.
    assert!(text.contains("recall@3\t1.000000"), "{text}");
    assert!(text.contains("prec@3\t"), "{text}");
}

#[test]
fn evaluate_supports_leave_k_out_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    // A context needs > k interactions to be split; give both contexts
    // two items.
    let data = dir.path().join("data.tsv");
    std::fs::write(&data, "#dims 2 3\n0\t0\n0\t1\n1\t1\n1\t2\n").unwrap();
    let model = dir.path().join("m.bin");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--dims",
        "2",
        "--epochs",
        "4",
        "--model-out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "leave-k-out",
        "--k",
        "1",
        "--seed",
        "4",
        "--metrics",
        "recall",
        "--n",
        "2",
        "--filter-train",
        "--csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("metric,value"), "{text}");
    assert!(text.contains("recall@2,"), "{text}");
}

#[test]
fn unknown_metric_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "2"]);
    let data = dir.path().join("toy.tsv");
    let out = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--metrics",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn recommend_prints_rank_item_score_lines() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "8", "--seed", "3"]);
    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--context",
        "0",
        "--n",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 2);
    for (idx, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "line {line:?}");
        assert_eq!(fields[0], (idx + 1).to_string());
        let item: usize = fields[1].parse().unwrap();
        assert!(item < 3);
        fields[2].parse::<f64>().unwrap();
    }
}

#[test]
fn recommend_excludes_seen_items_and_caps_n_at_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "8", "--seed", "3"]);
    let data = dir.path().join("toy.tsv");
    // Context 0 saw items 0 and 1, so only item 2 remains.
    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--context",
        "0",
        "--exclude-seen",
        "--n",
        "10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    assert!(lines[0].starts_with("1\t2\t"), "{text}");

    // Without exclusion, n beyond the catalog prints every item.
    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--context",
        "0",
        "--n",
        "10",
    ]);
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn recommend_folds_in_an_ad_hoc_history() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "8", "--seed", "3"]);
    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--history",
        "0,1",
        "--n",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 3);

    // A history item outside the catalog is a data error.
    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--history",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn recommend_without_context_or_history_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path(), &["--dims", "2", "--epochs", "2"]);
    let out = run(&["recommend", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&[
        "recommend",
        "--model",
        model.to_str().unwrap(),
        "--context",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("out of range"), "{}", stderr(&out));
}

#[test]
fn config_file_supplies_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# toy run\ndata={}\nsolver=ials\ndims=2\nepochs=4\nseed=1\n",
            data.display()
        ),
    )
    .unwrap();

    // Config alone: 4 progress lines.
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 4);

    // The command line overrides the file: 2 progress lines.
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 2);

    // Unknown keys are data errors.
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "no_such_flag=1\n").unwrap();
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        bad.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no_such_flag"), "{}", stderr(&out));
}

#[test]
fn malformed_tsv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("broken.tsv");
    std::fs::write(&data, "0\tnot-an-item\n").unwrap();
    let out = run(&["train", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}
