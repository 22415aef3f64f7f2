use std::path::Path;
use std::process::{Command, Output};

use semhash::codebook::read_codebook;
use semhash::head::{read_head, write_head};
use semhash::{init_head, write_features, FeatureSet, HashHeadParams};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semhash")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_synth(dir: &Path) -> (String, String) {
    let all = dir.join("all.usdf");
    let db = dir.join("db.usdf");
    let q = dir.join("q.usdf");
    let o = run(&["synth", "--out", p(&all), "--n", "120", "--d", "8"]);
    assert!(o.status.success());
    let o = run(&[
        "split",
        "--features",
        p(&all),
        "--queries",
        "20",
        "--db-out",
        p(&db),
        "--queries-out",
        p(&q),
    ]);
    assert!(o.status.success());
    (p(&db).to_string(), p(&q).to_string())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["gradcheck", "--loss", "j9"]).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--features", "x.usdf", "--out", "p", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["train", "--features", "x.usdf", "--out", "p", "--batch-size", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.usdf");
    let o = run(&["train", "--features", p(&missing), "--out", p(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.usdf"));
}

#[test]
fn explicit_stage_two_without_rotations_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = small_synth(dir.path());
    let out = dir.path().join("p.usdw");
    let o = run(&[
        "train",
        "--features",
        &db,
        "--out",
        p(&out),
        "--epochs-stage2",
        "3",
        "--batch-size",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_epochs_write_the_seeded_init() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = small_synth(dir.path());
    let out = dir.path().join("p.usdw");
    let o = run(&[
        "train",
        "--features",
        &db,
        "--out",
        p(&out),
        "--bits",
        "16",
        "--epochs-stage1",
        "0",
        "--seed",
        "9",
    ]);
    assert!(o.status.success());
    assert_eq!(read_head(&out).unwrap(), init_head(16, 8, 9).unwrap());
}

#[test]
fn train_echoes_config_logs_epochs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = small_synth(dir.path());
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# tiny\nbits=8\nepochs_stage1=4\nbatch_size=16\nlr=0.5\nseed=5\n").unwrap();
    let a = dir.path().join("a.usdw");
    let b = dir.path().join("b.usdw");
    let log = dir.path().join("a.log");
    let o = run(&[
        "train",
        "--features",
        &db,
        "--out",
        p(&a),
        "--log",
        p(&log),
        "--config",
        p(&cfg),
        "--lr",
        "0.001",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    // flags beat the file, the file beats defaults
    assert!(text.contains("lr=0.001\n"));
    assert!(text.contains("bits=8\n"));
    assert!(text.contains("seed=5\n"));
    assert!(text.contains("momentum=0.9\n"));
    let lines: Vec<String> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("epoch=1 j1="));
    assert!(lines[3].contains(" j4=0 total="));

    let o = run(&[
        "train",
        "--features",
        &db,
        "--out",
        p(&b),
        "--config",
        p(&cfg),
        "--lr",
        "0.001",
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = run(&[
        "train",
        "--features",
        &db,
        "--out",
        p(&b),
        "--config",
        p(&cfg),
        "--lr",
        "0.001",
        "--seed",
        "6",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("seed=6\n"));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bad_config_line_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "bits=8\nwhat\n").unwrap();
    let o = run(&["train", "--features", "x.usdf", "--out", "p", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn encode_with_constant_head_gives_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = small_synth(dir.path());
    let params = dir.path().join("ones.usdw");
    let head = HashHeadParams::from_parts(10, 8, vec![0.0; 80], vec![1.0; 10]).unwrap();
    write_head(&head, &params).unwrap();
    let out = dir.path().join("db.usdb");
    let o = run(&["encode", "--features", &db, "--params", p(&params), "--out", p(&out)]);
    assert!(o.status.success());
    let cb = read_codebook(&out).unwrap();
    assert_eq!(cb.len(), 100);
    assert_eq!(cb.ids(), (0..100).collect::<Vec<u64>>().as_slice());
    assert!(cb.iter().all(|(_, c)| c.count_ones() == 10));

    let wrong = dir.path().join("wrong.usdw");
    write_head(&init_head(4, 3, 1).unwrap(), &wrong).unwrap();
    let o = run(&["encode", "--features", &db, "--params", p(&wrong), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_with_single_class_and_large_k_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32, -(i as f32)]).collect();
    let fs = FeatureSet::from_rows(&rows, Some(vec![4; 12])).unwrap();
    let feats = dir.path().join("f.usdf");
    write_features(&fs, &feats).unwrap();
    let params = dir.path().join("p.usdw");
    write_head(&init_head(8, 2, 3).unwrap(), &params).unwrap();
    let index = dir.path().join("i.usdb");
    assert!(run(&[
        "encode",
        "--features",
        p(&feats),
        "--params",
        p(&params),
        "--out",
        p(&index)
    ])
    .status
    .success());
    let csv = dir.path().join("ap.csv");
    let o = run(&[
        "eval",
        "--index",
        p(&index),
        "--labels",
        p(&feats),
        "--queries",
        p(&feats),
        "--params",
        p(&params),
        "--K",
        "50",
        "--csv",
        p(&csv),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("map_at_k=1\n"));
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("query_id,ap\n0,1\n"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn query_by_code_prints_ranked_hits() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = small_synth(dir.path());
    let params = dir.path().join("p.usdw");
    write_head(&init_head(8, 8, 1).unwrap(), &params).unwrap();
    let index = dir.path().join("i.usdb");
    assert!(
        run(&["encode", "--features", &db, "--params", p(&params), "--out", p(&index)])
            .status
            .success()
    );
    let o = run(&[
        "query",
        "--index",
        p(&index),
        "--features",
        &db,
        "--params",
        p(&params),
        "--row",
        "3",
        "--k",
        "5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let table: Vec<&str> = text.lines().skip_while(|l| *l != "rank,id,distance").skip(1).collect();
    assert_eq!(table.len(), 5);
    // row 3 is stored, so the best hit is at distance 0
    assert!(table[0].starts_with("1,") && table[0].ends_with(",0"), "{}", table[0]);
    let o = run(&["query", "--index", p(&index), "--code", "0101", "--k", "5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_j3_passes() {
    let o = run(&["gradcheck", "--loss", "j3", "--trials", "100"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn bench_reports_throughput_and_parity() {
    let o = run(&[
        "bench",
        "--n",
        "5000",
        "--bits",
        "64",
        "--queries",
        "20",
        "--verify",
        "5",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("codes_per_second="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rate > 0.0);
    assert!(text.contains("parity=5/5"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.usdf");
    let b = dir.path().join("b.usdf");
    let c = dir.path().join("c.usdf");
    for (path, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        assert!(run(&[
            "synth",
            "--out",
            p(path),
            "--n",
            "30",
            "--d",
            "4",
            "--rotations",
            "180",
            "--seed",
            seed
        ])
        .status
        .success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join("a.usdf.manifest")).unwrap();
    assert!(manifest.contains("rotation_angles=180"));
}

#[test]
fn sweep_prints_one_row_per_rho() {
    let dir = tempfile::tempdir().unwrap();
    let (db, q) = small_synth(dir.path());
    let o = run(&[
        "sweep",
        "--features",
        &db,
        "--queries",
        &q,
        "--rho-list",
        "1,0.5",
        "--bits",
        "8",
        "--epochs-stage1",
        "3",
        "--batch-size",
        "16",
        "--K",
        "10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("map@10"));
    assert!(text.contains("spread="));
}
