use std::path::Path;
use std::process::{Command, Output};

use toolpath_rl::assets::triangular_grid;
use toolpath_rl::io::{GraphFile, ToolpathFile};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_toolpath-rl"))
}

fn small_graph(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("grid.json");
    let g = triangular_grid(3, 3, 10.0);
    std::fs::write(&path, serde_json::to_string(&GraphFile::from_graph(&g)).unwrap()).unwrap();
    path
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn plan_writes_toolpath_and_prints_seed() {
    let dir = tempfile::tempdir().unwrap();
    let graph = small_graph(dir.path());
    let out = dir.path().join("tp.json");
    let (code, stdout, stderr) = run(bin()
        .args(["plan", "--mode", "ccf", "--lsg-rings", "1", "--seed", "7", "--widths", "2,2,2,8"])
        .arg("--graph")
        .arg(&graph)
        .arg("--out")
        .arg(&out));
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.lines().any(|l| l.starts_with("config: {")));
    assert!(stdout.lines().any(|l| l == "seed: 7"));
    let file = ToolpathFile::load(&out).unwrap();
    assert_eq!(file.header.seed, 7);
    assert!(file.header.totals.complete);
}

#[test]
fn baseline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let graph = small_graph(dir.path());
    let out = dir.path().join("greedy.json");
    let (code, _, stderr) = run(bin()
        .args(["baseline", "--algo", "greedy", "--lsg-rings", "1"])
        .arg("--graph")
        .arg(&graph)
        .arg("--out")
        .arg(&out));
    assert_eq!(code, 0, "{stderr}");
    let (code, stdout, stderr) = run(bin()
        .args(["report", "--format", "csv,svg"])
        .arg("--graph")
        .arg(&graph)
        .arg("--toolpath")
        .arg(&out)
        .arg("--out-dir")
        .arg(dir.path()));
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("wrote ")).count(), 2);
}

#[test]
fn malformed_graph_exits_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"nodes\": [[0,0,0]], \"edges\": [[0, 5]]").unwrap();
    let (code, _, stderr) = run(bin().args(["baseline", "--algo", "greedy"]).arg("--graph").arg(&bad));
    assert_eq!(code, 3);
    assert!(stderr.starts_with("error:"));
}

#[test]
fn usage_errors_exit_with_parse_code() {
    let (code, _, _) = run(bin().args(["plan", "--widths", "1,2,3"]));
    assert_eq!(code, 3);
    let (code, _, _) = run(bin().args(["frobnicate"]));
    assert_eq!(code, 3);
    let (code, stdout, _) = run(bin().arg("--help"));
    assert_eq!(code, 0);
    assert!(stdout.contains("plan"));
}

#[test]
fn missing_graph_is_a_general_failure() {
    let (code, _, _) = run(bin().args(["baseline", "--algo", "bfs", "--graph", "/nonexistent/graph.json"]));
    assert_eq!(code, 1);
}
