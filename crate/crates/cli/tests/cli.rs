use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simplem"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "-o", "x.csv", "--truth-output", "gt.csv", "--n-pairs", "400", "--seed", "5"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn data_rows(text: &str) -> usize {
    text.lines().filter(|l| !l.starts_with('#')).count() - 1
}

/// Probability file that reproduces the ground truth exactly.
fn truth_probs(dir: &Path) {
    let gt = fs::read_to_string(dir.join("gt.csv")).unwrap();
    let mut out = String::from("left_id,right_id,prob,label\n");
    for line in gt.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let p = if f[2] == "1" { "1" } else { "0" };
        out.push_str(&format!("{},{},{p},{}\n", f[0], f[1], f[2]));
    }
    fs::write(dir.join("truth_probs.csv"), out).unwrap();
}

#[test]
fn help_documents_every_flag() {
    let d = TempDir::new().unwrap();
    let top = ok(d.path(), &["--help"]);
    let text = String::from_utf8(top.stdout).unwrap();
    for sub in ["infer", "trans-data", "trans-train", "diag", "eval", "synth"] {
        assert!(text.contains(sub), "{sub}");
    }
    let expect: &[(&str, &[&str])] = &[
        ("infer", &["--input", "--output", "--mode", "--transitivity", "--model", "--dupfree-hints", "--seed", "--config", "--threads"]),
        ("trans-data", &["--count", "--seed", "--output", "--steps"]),
        ("trans-train", &["--data", "--epochs", "--seed", "--output"]),
        ("diag", &["--what", "--input", "--probs", "--matches", "--n-left", "--n-right", "--output"]),
        ("eval", &["--pred", "--truth", "--partial"]),
        ("synth", &["--output", "--truth-output", "--lf-accuracies", "--duplicates", "--seed"]),
    ];
    for (sub, flags) in expect {
        let out = ok(d.path(), &[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        for f in *flags {
            assert!(text.contains(f), "{sub} {f}");
        }
    }
}

#[test]
fn infer_writes_one_row_per_pair_and_reruns_identically() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &[]);
    ok(d.path(), &["infer", "-i", "x.csv", "-o", "p1.csv", "--mode", "simple", "--seed", "2"]);
    ok(d.path(), &["infer", "-i", "x.csv", "-o", "p2.csv", "--mode", "simple", "--seed", "2"]);
    let p1 = fs::read_to_string(d.path().join("p1.csv")).unwrap();
    assert_eq!(p1, fs::read_to_string(d.path().join("p2.csv")).unwrap());
    assert!(p1.starts_with("# seed=2\n"));
    let x = fs::read_to_string(d.path().join("x.csv")).unwrap();
    assert_eq!(data_rows(&p1), data_rows(&x));
}

#[test]
fn auto_transitivity_writes_a_dupfree_sidecar() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &[]);
    let out = ok(d.path(), &["infer", "-i", "x.csv", "-o", "p.csv", "--mode", "simple-em", "--transitivity", "auto"]);
    let log = String::from_utf8(out.stderr).unwrap();
    assert!(log.contains("flip_fraction"));
    let p = fs::read_to_string(d.path().join("p.csv")).unwrap();
    assert_eq!(data_rows(&p), 400);
    let side = fs::read_to_string(d.path().join("p.csv.dupfree.json")).unwrap();
    assert!(side.contains("\"resolved_transitivity\""));

    ok(d.path(), &["infer", "-i", "x.csv", "-o", "q.csv", "--mode", "simple-em", "--dupfree-hints", "true,true", "--report", "r.json"]);
    let side = fs::read_to_string(d.path().join("r.json")).unwrap();
    assert!(side.contains("\"hints\"") && side.contains("\"two-side\""));
}

#[test]
fn input_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    let out = run(d.path(), &["infer", "-i", "missing.csv", "-o", "p.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    fs::write(d.path().join("bad.csv"), "left_id,right_id,a\nl1,r1,2\n").unwrap();
    let out = run(d.path(), &["infer", "-i", "bad.csv", "-o", "p.csv"]);
    assert_eq!(out.status.code(), Some(2));

    synth(d.path(), &["--task", "single-table"]);
    let out = run(d.path(), &["infer", "-i", "x.csv", "-o", "p.csv", "--mode", "simple-em", "--transitivity", "two-side"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d.path(), &["infer", "-i", "x.csv", "-o", "p.csv", "--mode", "simple-em", "--transitivity", "learned"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("p.csv").exists());

    let out = run(d.path(), &["infer", "-i", "x.csv", "-o", "no/such/dir/p.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_values_and_overrides() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &[]);
    fs::write(d.path().join("run.cfg"), "# run\ninput = x.csv\nseed = 11\nmax-iterations = 3\n").unwrap();
    ok(d.path(), &["--config", "run.cfg", "infer", "-o", "a.csv"]);
    assert!(fs::read_to_string(d.path().join("a.csv")).unwrap().starts_with("# seed=11\n"));
    ok(d.path(), &["--config", "run.cfg", "infer", "-o", "b.csv", "--seed", "12"]);
    assert!(fs::read_to_string(d.path().join("b.csv")).unwrap().starts_with("# seed=12\n"));

    fs::write(d.path().join("bad.cfg"), "input = x.csv\nsed = 1\n").unwrap();
    let out = run(d.path(), &["--config", "bad.cfg", "infer", "-o", "c.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));
}

#[test]
fn thread_count_does_not_change_output() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &[]);
    ok(d.path(), &["--threads", "1", "infer", "-i", "x.csv", "-o", "t1.csv", "--mode", "simple-em", "--transitivity", "two-side"]);
    ok(d.path(), &["--threads", "4", "infer", "-i", "x.csv", "-o", "t4.csv", "--mode", "simple-em", "--transitivity", "two-side"]);
    assert_eq!(fs::read(d.path().join("t1.csv")).unwrap(), fs::read(d.path().join("t4.csv")).unwrap());
}

#[test]
fn trans_data_and_train_formats() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["trans-data", "--count", "10", "--seed", "1", "--steps", "100", "-o", "a.bin"]);
    ok(d.path(), &["trans-data", "--count", "10", "--seed", "1", "--steps", "100", "-o", "b.bin"]);
    let a = fs::read(d.path().join("a.bin")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.bin")).unwrap());
    assert_eq!(&a[..8], b"SMPLTDAT");
    assert_eq!(u64::from_le_bytes(a[8..16].try_into().unwrap()), 10);

    ok(d.path(), &["trans-train", "--data", "a.bin", "-o", "net.bin", "--epochs", "2", "--encoder", "8,8", "--head", "4"]);
    let net = fs::read(d.path().join("net.bin")).unwrap();
    assert_eq!(&net[..8], b"SMPLTNET");
    let words: Vec<u32> = net[8..36]
        .chunks(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    // version, encoder depth and widths, head depth and width
    assert_eq!(&words[..6], &[1, 2, 8, 8, 1, 4]);

    let mut empty = b"SMPLTDAT".to_vec();
    empty.extend(0u64.to_le_bytes());
    fs::write(d.path().join("empty.bin"), empty).unwrap();
    let out = run(d.path(), &["trans-train", "--data", "empty.bin", "-o", "n2.bin"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d.path(), &["trans-data", "--count", "0", "-o", "z.bin"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dupfree_diag_on_distinct_matches() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("m.csv"), "left_id,right_id\nl1,r1\nl2,r2\nl3,r3\nl4,r4\n").unwrap();
    let out = ok(d.path(), &["diag", "--what", "dupfree", "--matches", "m.csv", "--n-left", "10", "--n-right", "10"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("\"reject\": false").count(), 2, "{text}");
    assert_eq!(text.matches("\"tested\": false").count(), 2);

    let out = run(d.path(), &["diag", "--what", "dupfree", "--matches", "m.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d.path(), &["diag", "--what", "nothing", "--matches", "m.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lfdeps_diag_flags_the_duplicated_column() {
    let d = TempDir::new().unwrap();
    ok(
        d.path(),
        &[
            "synth", "-o", "x.csv", "--truth-output", "gt.csv", "--n-pairs", "2000", "--seed", "8",
            "--lf-accuracies", "0.9,0.8,0.7,0.7", "--duplicates", "3:0:0.05",
        ],
    );
    truth_probs(d.path());
    ok(d.path(), &["diag", "--what", "lfdeps", "-i", "x.csv", "--probs", "truth_probs.csv", "-o", "deps.csv"]);
    let text = fs::read_to_string(d.path().join("deps.csv")).unwrap();
    assert!(text.contains("lf_a,polarity_a,lf_b,polarity_b,p_value_bound,dependent\n"));
    for pol in ["positive", "negative"] {
        let row = text
            .lines()
            .find(|l| l.starts_with(&format!("lf0,{pol},lf3,{pol},")))
            .unwrap();
        assert!(row.ends_with(",true"), "{row}");
    }
    let indep = text.lines().filter(|l| l.starts_with("lf1,") && l.contains(",lf2,"));
    assert!(indep.into_iter().all(|l| l.ends_with(",false")));
}

#[test]
fn eval_prints_scores() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &[]);
    truth_probs(d.path());
    let out = ok(d.path(), &["eval", "--pred", "truth_probs.csv", "--truth", "gt.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("f1=1.000000"), "{text}");
    assert!(text.contains("precision=1.000000"));
}
