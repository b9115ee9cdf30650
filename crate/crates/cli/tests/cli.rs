use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5
output_dir = "out"

[dataset]
window = 64

[synthetic]
records = 40

[model.trunk]
window = 64
conv1_channels = 4
conv2_channels = 4
conv1_stride = 2
conv2_stride = 2
hidden = 8

[model.lstm]
window = 64
hidden = 4

[federated]
rounds = 1
"#;

fn spikefed(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikefed"));
    cmd.args(args).env_remove("SPIKEFED_DATA_ROOT");
    if let Some(root) = env_root {
        cmd.env("SPIKEFED_DATA_ROOT", root);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = spikefed(&["ingest", "-c", &cfg, "--synthetic"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("S003\tboth-feet"));

    let o = spikefed(&["train", "-c", &cfg, "--synthetic", "--model", "all"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("lstm round 1/1"));

    let o = spikefed(&["compare", "-c", &cfg, "--synthetic"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("method\taccuracy\tenergy_uj\twsp\n"), "{table}");
    assert_eq!(table.lines().filter(|l| l.starts_with("snn\t") || l.starts_with("cnn\t") || l.starts_with("lstm\t")).count(), 3);

    let edf = dir.path().join("out/synthetic/S001/S001R04.edf");
    let o = spikefed(&["inspect", edf.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("[header]"));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nsynthetic = true\n");
    let o = spikefed(&["ingest", "-c", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));

    let cfg = write_config(dir.path(), CONFIG);
    let o = spikefed(&["train", "-c", &cfg, "--synthetic", "--rounds", "0"], None);
    assert_eq!(o.status.code(), Some(1));
    let o = spikefed(&["train", "-c", &cfg, "--synthetic", "--model", "gru"], None);
    assert_eq!(o.status.code(), Some(1));
    let o = spikefed(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(1));
    let o = spikefed(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    // The env root exists but holds no recordings.
    let o = spikefed(&["ingest", "-c", &cfg], Some(data.path()));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains(&data.path().join("S001").join("S001R04.edf").display().to_string()));

    let o = spikefed(&["inspect", "/no/such/file.edf"], None);
    assert_eq!(o.status.code(), Some(2));

    let bogus = dir.path().join("bad.edf");
    std::fs::write(&bogus, b"0       truncated").unwrap();
    let o = spikefed(&["inspect", bogus.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("byte"));

    let o = spikefed(&["train", "-c", &cfg, "--synthetic"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = blocker.join("out");
    let o = spikefed(&["ingest", "-c", &cfg, "--synthetic", "--output", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
