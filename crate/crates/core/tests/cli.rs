use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const NETWORK: &str = "BAYES
5
2 2 2 2 2
5
1 0
2 0 1
2 0 2
3 0 1 3
3 1 2 4

2
 0.6 0.4
4
 0.7 0.3 0.2 0.8
4
 0.5 0.5 0.9 0.1
8
 0.9 0.1 0.4 0.6 0.3 0.7 0.05 0.95
8
 0.99 0.01 0.6 0.4 0.7 0.3 0.2 0.8
";

fn beem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beem"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn log10_line(o: &Output) -> f64 {
    let s = stdout(o);
    let line = s
        .lines()
        .find(|l| l.starts_with("log10(P(e)) = "))
        .expect("result line");
    line["log10(P(e)) = ".len()..].parse().unwrap()
}

fn setup(dir: &Path) -> (String, String) {
    let model = dir.join("net.uai");
    let evid = dir.join("net.uai.evid");
    fs::write(&model, NETWORK).unwrap();
    fs::write(&evid, "1 4 0\n").unwrap();
    (model.display().to_string(), evid.display().to_string())
}

#[test]
fn modes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (model, evid) = setup(dir.path());
    let wd = dir.path().join("wd");
    let stats = dir.path().join("stats.json");
    let brute = beem(&["solve", "--mode", "brute", &model, "--evidence", &evid]);
    assert!(brute.status.success());
    let inmem = beem(&["solve", "--mode", "inmem", &model, "--evidence", &evid]);
    let ext = beem(&[
        "solve",
        "--mode",
        "external",
        "--memory",
        "1G",
        "--workers",
        "4",
        "--workdir",
        wd.to_str().unwrap(),
        "--stats-json",
        stats.to_str().unwrap(),
        &model,
        "--evidence",
        &evid,
    ]);
    assert!(
        ext.status.success(),
        "{}",
        String::from_utf8_lossy(&ext.stderr)
    );
    let (b, i, e) = (log10_line(&brute), log10_line(&inmem), log10_line(&ext));
    assert!((b - i).abs() < 1e-10 && (b - e).abs() < 1e-10);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(stats).unwrap()).unwrap();
    for key in [
        "loads",
        "saves",
        "deletes",
        "bytes_read",
        "bytes_written",
        "peak_resident_bytes",
        "gap_reloads",
    ] {
        assert!(json[key].is_u64(), "{key}");
    }
    assert!(json["per_bucket"].is_array());
    assert_eq!(fs::read_dir(&wd).unwrap().count(), 0);
    let digits = stdout(&ext)
        .lines()
        .next()
        .unwrap()
        .chars()
        .filter(char::is_ascii_digit)
        .count();
    assert!(digits >= 10);
}

#[test]
fn missing_model_exits_2() {
    let o = beem(&["solve", "--mode", "inmem", "/nonexistent/model.uai"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn malformed_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.uai");
    fs::write(&p, "MARKOV\n2\n2 x\n").unwrap();
    assert_eq!(beem(&["plan", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn external_without_workdir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = setup(dir.path());
    assert_eq!(
        beem(&["solve", "--mode", "external", &model]).status.code(),
        Some(2)
    );
}

#[test]
fn oracle_cap_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.uai");
    let o = beem(&[
        "generate",
        "chain",
        "--vars",
        "30",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        beem(&["solve", "--mode", "brute", p.to_str().unwrap()])
            .status
            .code(),
        Some(5)
    );
}

#[test]
fn oversized_tables_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("clique.uai");
    let p = p.to_str().unwrap();
    assert!(
        beem(&["generate", "clique", "--vars", "14", "--card", "3", "--out", p])
            .status
            .success()
    );
    let o = beem(&["solve", "--mode", "inmem", "--memory", "1M", p]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plan_report() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = setup(dir.path());
    let o = beem(&["plan", &model]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("n = 5\n"));
    assert!(s.contains("w* = 2\n"));
    assert!(s.contains("var\ttable_size\tblock_size\tn_blocks"));

    let single = dir.path().join("one.uai");
    fs::write(&single, "MARKOV\n1\n3\n1\n1 0\n3\n 1 2 3\n").unwrap();
    assert!(stdout(&beem(&["plan", single.to_str().unwrap()])).contains("w* = 0\n"));
}

#[test]
fn dump_plan_to_stdout_and_keep_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = setup(dir.path());
    let wd = dir.path().join("wd");
    let o = beem(&[
        "solve",
        &model,
        "--workdir",
        wd.to_str().unwrap(),
        "--delete-blocks",
        "false",
        "--dump-plan",
        "-",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("var\t"));
    assert!(fs::read_dir(&wd).unwrap().count() > 0);
    assert!(log10_line(&o).abs() < 1e-12);
}

#[test]
fn fixed_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.uai");
    let p = p.to_str().unwrap();
    assert!(
        beem(&["generate", "grid", "--vars", "5", "--seed", "4", "--out", p])
            .status
            .success()
    );
    let a = stdout(&beem(&["plan", p, "--seed", "7", "--restarts", "5"]));
    let b = stdout(&beem(&["plan", p, "--seed", "7", "--restarts", "5"]));
    assert_eq!(a, b);
}
