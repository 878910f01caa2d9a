use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kgrelpred"));
    c.env("KGRELPRED_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn kgrelpred")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toy_dataset(dir: &Path) {
    let train = "\
a\tparent\tb
b\tparent\tc
c\tparent\td
a\tsibling\te
e\tsibling\ta
b\tfriend\te
d\tfriend\ta
c\tsibling\tf
f\tsibling\tc
e\tparent\tf
";
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), "a\tparent\tc\nb\tsibling\td\n").unwrap();
    fs::write(dir.join("test.txt"), "d\tparent\te\nf\tfriend\tb\n").unwrap();
}

const SMALL: &[&str] = &[
    "--dim",
    "4",
    "--epochs",
    "2",
    "--batch",
    "4",
    "--workers",
    "1",
];

fn train_into(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_writes_checkpoints_and_log() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let out = tmp.path().join("run");
    let o = train_into(tmp.path(), &out, &["--attention", "random", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.final.ckpt", "model.best.ckpt", "train.log"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert!(log.contains("epoch=1 train_loss="));
    assert!(log.contains("valid_mrr="));
    assert!(log.contains("best_epoch="));
    assert!(stdout(&o).contains("test (best epoch"));
}

#[test]
fn attention_none_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let o = train_into(
        tmp.path(),
        &tmp.path().join("run"),
        &["--attention", "none"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("attention"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unreadable_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_into(&tmp.path().join("missing"), &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_predict_and_seed_summary() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let data = tmp.path().to_str().unwrap();
    let out = tmp.path().join("run");
    assert!(train_into(tmp.path(), &out, &["--seeds", "1..2"])
        .status
        .success());
    assert!(out.join("seed-1/model.best.ckpt").is_file());
    assert!(out.join("seed-2/model.best.ckpt").is_file());
    assert!(fs::read_to_string(out.join("summary.txt"))
        .unwrap()
        .contains("mrr = "));

    let ckpt = out.join("seed-{seed}/model.best.ckpt");
    let report = tmp.path().join("report.txt");
    let confusion = tmp.path().join("confusion.csv");
    let o = run(&[
        "evaluate",
        "--data",
        data,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seeds",
        "1..2",
        "--out",
        report.to_str().unwrap(),
        "--confusion",
        confusion.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for key in ["mrr = ", "mr = ", "hit1 = ", "hit3 = ", "runs = 2"] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    assert!(text.contains(" ± "));
    assert_eq!(
        fs::read_to_string(&report).unwrap(),
        text.lines()
            .skip(2)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    let csv = fs::read_to_string(&confusion).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let single = out.join("seed-1/model.best.ckpt");
    let single = single.to_str().unwrap();
    let valid = run(&[
        "evaluate",
        "--data",
        data,
        "--checkpoint",
        single,
        "--split",
        "valid",
    ]);
    let test = run(&[
        "evaluate",
        "--data",
        data,
        "--checkpoint",
        single,
        "--split",
        "test",
    ]);
    assert!(valid.status.success() && test.status.success());
    assert!(stdout(&valid).contains("triples = 2"));

    let mismatch = run(&[
        "evaluate",
        "--data",
        data,
        "--checkpoint",
        single,
        "--use-paths",
        "false",
    ]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("use_paths"));

    let o = run(&[
        "predict",
        "--data",
        data,
        "--checkpoint",
        single,
        "--head",
        "a",
        "--tail",
        "b",
        "--topk",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    let total: f64 = lines
        .iter()
        .map(|l| l.split('\t').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!(total <= 1.0 + 1e-12);
    assert!(lines[0].starts_with("1\t"));

    let o = run(&[
        "predict",
        "--data",
        data,
        "--checkpoint",
        single,
        "--head",
        "zz",
        "--tail",
        "b",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown entity"));
}

#[test]
fn evaluate_rejects_foreign_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let out = tmp.path().join("run");
    assert!(train_into(tmp.path(), &out, &[]).status.success());
    let other = tmp.path().join("other");
    fs::create_dir(&other).unwrap();
    fs::write(other.join("train.txt"), "x\tr\ty\n").unwrap();
    fs::write(other.join("valid.txt"), "").unwrap();
    fs::write(other.join("test.txt"), "x\tr\ty\n").unwrap();
    let ckpt = out.join("model.best.ckpt");
    let o = run(&[
        "evaluate",
        "--data",
        other.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary hash"));
}

#[test]
fn paths_lists_semantic_paths() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let o = run(&[
        "paths",
        "--data",
        tmp.path().to_str().unwrap(),
        "--head",
        "a",
        "--tail",
        "c",
        "--path-len",
        "2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "1\tparent -> parent"), "{text}");
    let o = run(&[
        "paths",
        "--data",
        tmp.path().to_str().unwrap(),
        "--head",
        "a",
        "--tail",
        "e",
        "--path-len",
        "1",
    ]);
    let mut lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    lines.sort();
    assert_eq!(lines, vec!["1\tsibling", "1\tsibling^-1"]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let out = tmp.path().join("run");
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "data = \"{}\"\nepochs = 3\ndim = 4\nbatch = 4\nattention = \"none\"\n",
            tmp.path().display()
        ),
    )
    .unwrap();
    // the file alone is invalid; the flag fixes it
    let bad = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--attention",
        "local",
        "--epochs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert!(log.contains("epoch=1"));
    assert!(!log.contains("epoch=2"));
}

#[test]
fn ablate_writes_csv_grid() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let out = tmp.path().join("abl");
    let o = run(&[
        "ablate",
        "--data",
        tmp.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dim",
        "2",
        "--epochs",
        "1",
        "--batch",
        "8",
        "--hops",
        "2",
        "--iterations",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 15);
    assert!(csv.starts_with("mechanisms,use_paths,hit1_mean"));
    assert!(out.join("confusion-LGR-nopaths.csv").is_file());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 15);
}

#[test]
fn paths_without_pair_reports_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let o = run(&[
        "paths",
        "--data",
        tmp.path().to_str().unwrap(),
        "--path-len",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .parse()
            .unwrap()
    };
    let size = value("vocabulary_size");
    assert_eq!(
        value("paths_of_length_1") + value("paths_of_length_2"),
        size
    );
    assert_eq!(value("training_pairs"), 10.0);
    assert!(value("distinct_paths_per_pair_max") <= size);
    assert!(value("walks_per_pair_mean") >= value("distinct_paths_per_pair_mean"));
    assert!(!text.contains("paths_of_length_3"));
}
