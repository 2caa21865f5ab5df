use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_neardgd");

fn write_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let text = format!(
        "\
objective.kind = quadratic
objective.n = 5
objective.p = 3
objective.mu = 0.5
objective.l = 2.0
graph.kind = ring
methods = snear_dgd(t=2) dgd
comm.kind = quantizer
comm.delta = 100
run.alpha = 0.3
run.max_iters = 150
run.seeds = 2
run.tail = 30
output.dir = {}
",
        out.display()
    );
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_subcommand_writes_traces_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out);
    let status = Command::new(BIN).args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    assert!(out.join("trace_snear_dgd_t2_q1_seed1.csv").exists());
    assert!(out.join("trace_dgd_q1_seed2.csv").exists());
    assert!(out.join("plot_error_vs_k_q1.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out);
    let trace = out.join("trace_dgd_q1_seed1.csv");
    assert!(Command::new(BIN).args(["run", "--config"]).arg(&cfg).status().unwrap().success());
    let first = std::fs::read(&trace).unwrap();
    assert!(Command::new(BIN).args(["run", "--config"]).arg(&cfg).status().unwrap().success());
    assert_eq!(first, std::fs::read(&trace).unwrap());
}

#[test]
fn bounds_subcommand_prints_theory_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &out);
    let output = Command::new(BIN).args(["bounds", "--config"]).arg(&cfg).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("const.rho ="));
    assert!(text.contains("bound.TQ1.value ="));
}

#[test]
fn presets_listed_and_printable() {
    let output = Command::new(BIN).arg("presets").output().unwrap();
    assert!(output.status.success());
    let list = String::from_utf8(output.stdout).unwrap();
    for name in ["fig1_coarse", "fig1_fine", "scaling"] {
        assert!(list.contains(name));
    }
    let one = Command::new(BIN).args(["presets", "fig1_coarse"]).output().unwrap();
    assert!(one.status.success());
    assert!(String::from_utf8(one.stdout).unwrap().contains("comm.delta = 10"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "objective.kind = quadratic\nbogus = 1\n").unwrap();
    let status = Command::new(BIN).args(["run", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let missing = Command::new(BIN)
        .args(["run", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(1));
    let bad_preset = Command::new(BIN).args(["run", "--preset", "fig9"]).status().unwrap();
    assert_eq!(bad_preset.code(), Some(1));
}

#[test]
fn divergence_is_reported_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = format!(
        "\
objective.kind = quadratic
objective.n = 4
objective.p = 3
objective.mu = 0.5
objective.l = 2.0
graph.kind = ring
methods = dgd
run.alpha = 50.0
run.max_iters = 400
output.dir = {}
",
        out.display()
    );
    let cfg = dir.path().join("div.cfg");
    std::fs::write(&cfg, text).unwrap();
    let output = Command::new(BIN).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8(output.stdout).unwrap().contains("diverged = 1/1"));
}
