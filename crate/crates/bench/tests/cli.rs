use std::path::Path;
use std::process::{Command, Output};

use llmsched_bench::summary::summarize;
use llmsched_bench::{BenchRow, Status, CSV_HEADER};

fn llmsched(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmsched"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<BenchRow> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn default_preset_sweep_writes_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(dir.path(), &["--runs", "2", "--threads", "1,2", "--gen", "16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = rows(&dir.path().join("results.csv"));
    // 4 schedulers x 2 thread counts x 3 precisions x 2 runs
    assert_eq!(rows.len(), 48);
    for r in &rows {
        assert_eq!(r.preset, "toy");
        assert_eq!(r.status, Status::Ok);
        assert!(r.prefill_tps.unwrap() > 0.0);
        assert!(r.decode_tps.unwrap() > 0.0);
    }
}

#[test]
fn tiny_timeout_marks_rows_and_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(
        dir.path(),
        &["--runs", "1", "--threads", "1", "--scheduler", "seq", "--dtype", "f16", "--timeout-secs", "0.001"],
    );
    assert!(out.status.success());
    let rows = rows(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].status, Status::Timeout);
    assert_eq!(rows[0].decode_tps, None);
}

#[test]
fn usage_errors_exit_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--threads", "0"][..],
        &["--scheduler", "fastest"],
        &["--dtype", "q3"],
        &["--runs", "0"],
        &["--no-such-flag"],
    ] {
        let out = llmsched(dir.path(), args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn out_of_vocabulary_prompt_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(dir.path(), &["--prompt-ids", "1,999999", "--threads", "1", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn summarize_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(
        dir.path(),
        &["--runs", "3", "--threads", "1", "--dtype", "q8", "--scheduler", "seq,graph", "--gen", "4"],
    );
    assert!(out.status.success());
    let csv = dir.path().join("results.csv");
    let cells = summarize(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(cells.len(), 2);

    let a = llmsched(dir.path(), &["summarize", "results.csv"]);
    let b = llmsched(dir.path(), &["summarize", "results.csv"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let table = String::from_utf8(a.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("3/3"));
}

#[test]
fn summarize_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), format!("{CSV_HEADER}\n")).unwrap();
    let out = llmsched(dir.path(), &["summarize", "empty.csv"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "no data\n");

    std::fs::write(dir.path().join("bad.csv"), format!("{CSV_HEADER}\ntoy,seq,x,f16,0,1,1,,ok\n")).unwrap();
    let out = llmsched(dir.path(), &["summarize", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn generated_model_file_drives_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(dir.path(), &["gen-model", "--preset", "toy", "--dtype", "q4", "--out", "toy-q4.bin"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let args = ["--model", "toy-q4.bin", "--runs", "1", "--threads", "1", "--scheduler", "seq", "--gen", "4"];
    let out = llmsched(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].preset, "toy-q4");
    assert_eq!(rows[0].dtype, "q4");
    assert_eq!(rows[0].status, Status::Ok);

    std::fs::write(dir.path().join("junk.bin"), b"not a model").unwrap();
    let out = llmsched(dir.path(), &["--model", "junk.bin", "--runs", "1", "--threads", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn profile_and_graph_dump_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = llmsched(
        dir.path(),
        &[
            "--runs", "1", "--threads", "2", "--scheduler", "graph", "--dtype", "f16", "--gen", "4",
            "--profile", "profile.json", "--dump-graph", "graph.txt",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let profile: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("profile.json")).unwrap()).unwrap();
    assert!(profile.is_array());
    let dump = std::fs::read_to_string(dir.path().join("graph.txt")).unwrap();
    assert!(dump.contains("final_out"));
}
