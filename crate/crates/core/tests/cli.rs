use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contactformer::contact::{encode_pairs, ContactMap};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contactformer"))
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prep_corpus(out: &Path) -> Output {
    let c = corpus();
    run(&[
        "prep",
        "--index",
        s(&c.join("index.tsv")),
        "--pdb-dir",
        s(&c.join("pdb")),
        "--out",
        s(out),
    ])
}

const TINY: [&str; 10] = [
    "--embed-dim",
    "8",
    "--heads",
    "2",
    "--layers",
    "1",
    "--ffn-dim",
    "16",
    "--max-len",
    "64",
];

#[test]
fn bundled_corpus_keeps_ten_and_logs_documented_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let out = prep_corpus(dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("prep {"));
    assert!(stdout.contains("kept 10\n"));
    assert!(stdout.contains("rejected INCOMPLETE 1\n"));
    assert!(stdout.contains("rejected NONSTANDARD 1\n"));
    assert!(stdout.contains("rejected NOT_FOUND 0\n"));
    assert!(stdout.contains("rejected MALFORMED 0\n"));

    let entries = fs::read_to_string(dir.path().join("entries.tsv")).unwrap();
    assert_eq!(entries.lines().count(), 10);
    let manifest = fs::read_to_string(corpus().join("manifest.tsv")).unwrap();
    let rejections = fs::read_to_string(dir.path().join("rejections.tsv")).unwrap();
    for line in manifest.lines().filter(|l| !l.starts_with('#')) {
        let (id, expected) = line.split_once('\t').unwrap();
        if expected == "KEPT" {
            assert!(
                entries.lines().any(|l| l.starts_with(&format!("{id}\t"))),
                "{id} missing"
            );
        } else {
            assert!(
                rejections.contains(&format!("{id}\t{expected}\t")),
                "{id} not {expected}"
            );
        }
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("labels.tsv")).unwrap(),
        "sf.hairpin\t0\nsf.helix\t1\n"
    );
}

#[test]
fn prep_is_idempotent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    prep_corpus(a.path());
    prep_corpus(b.path());
    for f in ["entries.tsv", "labels.tsv", "rejections.tsv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_structure_is_not_found_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("index.tsv");
    fs::write(&index, "d1abca_\tnope.pdb\tA\t-\t-\tsf.x\n").unwrap();
    let out = run(&[
        "prep",
        "--index",
        s(&index),
        "--pdb-dir",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("kept 0\n"));
    assert!(stdout.contains("rejected NOT_FOUND 1\n"));
    let rej = fs::read_to_string(dir.path().join("o/rejections.tsv")).unwrap();
    assert_eq!(rej.lines().count(), 2);
    assert!(rej.contains("d1abca_\tNOT_FOUND\t"));
    assert_eq!(
        fs::read_to_string(dir.path().join("o/entries.tsv")).unwrap(),
        ""
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        run(&["train", "--data", "x", "--out", "y", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&[
            "train",
            "--data",
            "x",
            "--out",
            "y",
            "--attention",
            "sideways"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["split", "--data", s(dir.path())]).status.code(),
        Some(2)
    );
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn pipeline_runs_end_to_end_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prep_corpus(&data);
    let out = run(&["split", "--data", s(&data), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(data.join("split.json").exists());

    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    for m in [&m1, &m2] {
        let out = train(&data, m, &["--epochs", "3", "--lr", "1e-3", "--seed", "5"]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(stdout.starts_with("model {"));
        assert!(stdout.contains("\ntrain {"));
    }
    assert_eq!(
        fs::read(m1.join("model.ckpt")).unwrap(),
        fs::read(m2.join("model.ckpt")).unwrap()
    );
    let log = fs::read_to_string(m1.join("train_log.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(m2.join("train_log.csv")).unwrap());
    assert!(log.starts_with("epoch,train_loss,val_loss,val_acc\n"));
    assert_eq!(log.lines().count(), 4);

    let ck = m1.join("model.ckpt");
    let metrics = dir.path().join("metrics");
    let out = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--which",
        "val",
        "--out",
        s(&metrics),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(metrics.join("metrics.txt")).unwrap();
    assert!(text.contains("split=val\n"));
    assert!(text.contains("accuracy="));
    assert!(text.contains("lt10.accuracy="));
    assert!(text.contains("ge10.n=0\n"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metrics.join("metrics.json")).unwrap()).unwrap();
    assert!(json["overall"]["f1"].is_number());

    let emb = dir.path().join("emb.tsv");
    let out = run(&[
        "embed",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&emb),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<String> = fs::read_to_string(&emb)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 10);
    for l in &lines {
        let f: Vec<&str> = l.split('\t').collect();
        assert_eq!(f.len(), 3);
        assert!(f[1].starts_with("sf."));
        assert_eq!(
            f[2].split(',').filter(|v| v.parse::<f32>().is_ok()).count(),
            8
        );
    }
}

#[test]
fn checkpoint_from_other_labels_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prep_corpus(&data);
    run(&["split", "--data", s(&data)]);
    let m = dir.path().join("m");
    assert_eq!(train(&data, &m, &["--epochs", "1"]).status.code(), Some(0));
    fs::write(
        data.join("labels.tsv"),
        "sf.hairpin\t0\nsf.helix\t1\nsf.zzz\t2\n",
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--checkpoint",
        s(&m.join("model.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three_with_state_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    prep_corpus(&data);
    run(&["split", "--data", s(&data)]);
    let m = dir.path().join("m");
    let out = train(
        &data,
        &m,
        &["--epochs", "5", "--lr", "1e38", "--weight-decay", "0"],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(m.join("diverged.ckpt").exists());
}

#[test]
fn full_and_contact_agree_on_complete_contact_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let seqs = [
        "ACDEFGHIK",
        "LMNPQ",
        "RSTVWYAC",
        "KKLLMMNN",
        "WYWYWY",
        "ACACAC",
        "DEDEDEDE",
        "GHIKLM",
    ];
    let mut entries = String::new();
    for (k, seq) in seqs.iter().enumerate() {
        let map = ContactMap::complete(seq.len());
        entries.push_str(&format!(
            "e{k}\tsf{}\t{seq}\t{}\n",
            k % 2,
            encode_pairs(&map)
        ));
    }
    fs::write(data.join("entries.tsv"), entries).unwrap();
    fs::write(data.join("labels.tsv"), "sf0\t0\nsf1\t1\n").unwrap();
    assert_eq!(run(&["split", "--data", s(&data)]).status.code(), Some(0));
    let (c, f) = (dir.path().join("c"), dir.path().join("f"));
    assert_eq!(
        train(
            &data,
            &c,
            &["--epochs", "3", "--lr", "1e-3", "--attention", "contact"]
        )
        .status
        .code(),
        Some(0)
    );
    assert_eq!(
        train(
            &data,
            &f,
            &["--epochs", "3", "--lr", "1e-3", "--attention", "full"]
        )
        .status
        .code(),
        Some(0)
    );
    assert_eq!(
        fs::read_to_string(c.join("train_log.csv")).unwrap(),
        fs::read_to_string(f.join("train_log.csv")).unwrap()
    );
}

#[test]
fn bundled_corpus_matches_its_generator() {
    let (files, index, expect) = contactformer::synthetic::corpus(2024);
    let c = corpus();
    assert_eq!(fs::read_to_string(c.join("index.tsv")).unwrap(), index);
    for f in &files {
        assert_eq!(
            fs::read_to_string(c.join("pdb").join(&f.name)).unwrap(),
            f.contents,
            "{}",
            f.name
        );
    }
    assert_eq!(expect.iter().filter(|e| e.rejection.is_none()).count(), 10);
}
