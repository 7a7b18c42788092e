use std::path::Path;
use std::process::Command;

fn vgx(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vgx")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const FOU: &str = r#"
[model]
family = "FOU"
h = [[0.5, 0.0], [0.0, 0.5]]
T = 1.0
[target]
b = [1.0, 1.0]
u = [2.0, 2.5]
[estimation]
seed = 11
n = 400
grid_sizes = [21, 41]
lambda = [1.0, 2.0]
grid_steps = [0.1]
constant_n = 400
mvn_points = 1024
"#;

#[test]
fn qp_identity_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_config(dir.path(), "[estimation]\nseed = 1\n[matrix]\nsigma = [[1, 0], [0, 1]]\n[target]\nb = [1, -1]\n");
    let out_dir = dir.path().join("out");
    let o = vgx(&["qp", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out_dir.join("qp.csv")).unwrap();
    assert_eq!(csv, "b,b_tilde,index_i,index_j,w,value,certificate_residual\n1 -1,1 0,0,1,1 0,1,0\n");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "qp");
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["outputs"][0]["name"], "qp.csv");
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FOU);
    for cmd in ["tail-mc", "compare", "sample"] {
        let mut csvs = Vec::new();
        for w in ["1", "8"] {
            let out_dir = dir.path().join(format!("{cmd}-{w}"));
            let o = vgx(&[cmd, "--config", &cfg, "--workers", w, "--out", out_dir.to_str().unwrap()]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            csvs.push(std::fs::read(out_dir.join(format!("{cmd}.csv"))).unwrap());
        }
        assert_eq!(csvs[0], csvs[1], "{cmd} differs between worker counts");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FOU);
    let run = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let o = vgx(&["tail-mc", "--config", &cfg, "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out_dir.join("tail-mc.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
    assert_eq!(run("3", "c"), run("3", "d"));
}

#[test]
fn uncovered_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = FOU
        .replace("h = [[0.5, 0.0], [0.0, 0.5]]", "h = [[0.3, 0.0], [0.0, 0.7]]")
        .replace("b = [1.0, 1.0]", "b = [-1.0, 1.0]");
    let cfg = write_config(dir.path(), &text);
    let out_dir = dir.path().join("out");
    let o = vgx(&["predict", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not covered"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn malformed_config_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &FOU.replace("\nn = 400", "\nn = \"lots\""));
    let o = vgx(&["tail-mc", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("estimation.n"), "{err}");
}

#[test]
fn json_format_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FOU);
    let out_dir = dir.path().join("out");
    let o = vgx(&["tail-mc", "--config", &cfg, "--format", "json", "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("tail-mc.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert!(!out_dir.join("tail-mc.csv").exists());
}

#[test]
fn failed_structural_check_exits_two() {
    // Distinct exponents make the increment ladder converge too slowly to pass.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[model]
family = "LampertiFBM"
h = [[0.5, 0.0], [0.0, 0.8]]
sigma = [[1.0, 0.2], [0.2, 1.0]]
T = 1.0
[target]
b = [1.0, 1.0]
u = [3.0]
[estimation]
seed = 1
"#,
    );
    let out_dir = dir.path().join("out");
    let o = vgx(&["predict", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("not covered") && err.contains("B2"), "{err}");
}
