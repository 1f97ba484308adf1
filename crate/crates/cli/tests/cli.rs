use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
# small time ladder
run.mesh_n = 4
run.M = 8
run.samples = 3
noise.j_max = 2
ladder.mode = time
ladder.mesh_levels = 4
ladder.time_levels = 4, 8, 16
ladder.ref_mesh_n = 4
ladder.ref_M = 64
ladder.samples = 4
";

fn snsfem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snsfem")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn convergence_output_is_independent_of_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let mut tables = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = snsfem(&["--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap(), "convergence"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for name in ["rates.csv", "fit.csv", "errors.csv", "tail.csv", "paths.csv", "manifest.json"] {
            assert!(out.join(name).exists(), "{name}");
        }
        tables.push(std::fs::read(out.join("rates.csv")).unwrap());
        let o = snsfem(&["plot", out.join("rates.csv").to_str().unwrap()]);
        assert!(o.status.success());
        assert!(out.join("rates.svg").exists());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn simulate_then_stopping_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CONFIG}run.initial = zero\n"));
    let out = dir.path().join("sim");
    let o = snsfem(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = std::fs::read_dir(&out).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("diagnostics_")
    });
    assert_eq!(files.count(), 3);
    // Fewer diagnostics files than the decay study needs.
    let o = snsfem(&["--config", &cfg, "--out", out.to_str().unwrap(), "stopping-stats"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mesh_info_reports_counts() {
    let o = snsfem(&["mesh-info"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("vertices 81"), "{text}");
    assert!(text.contains("triangles 128"));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["run.M = zero\n", "noise.decay_r = 3.5\n", "ladder.time_levels = 4, 12, 16\n", "bogus = 1\n"] {
        let cfg = write_config(dir.path(), bad);
        let o = snsfem(&["--config", &cfg, "mesh-info"]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}
