use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use taan::network::TaanModel;

const CONFIG: &str = r#"
seed = 1

[arch]
hidden = [8, 8]
basis_count = 8

[train]
epochs = 5
learning_rate = 0.003

[data]
source = "synthetic"
clusters = [0, 0, 1]
samples_per_task = 80
input_dim = 3
output_dim = 1
relatedness = 0.5
noise = 0.1
"#;

fn taan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_reproducible() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = taan(&["gen-data", "--config", "c.toml", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_all(&dir.path().join("a/data"));
    assert_eq!(a.len(), 9);
    assert_eq!(a, read_all(&dir.path().join("b/data")));
    let o = taan(&["gen-data", "--config", "c.toml", "--out", "c", "--seed", "2"], dir.path());
    assert!(o.status.success());
    assert_ne!(a, read_all(&dir.path().join("c/data")));
}

#[test]
fn invalid_relatedness_fails() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), CONFIG.replace("relatedness = 0.5", "relatedness = 1.5")).unwrap();
    let o = taan(&["gen-data", "--config", "bad.toml", "--out", "x"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn malformed_config_fails() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "seed = \"one\"\n").unwrap();
    let o = taan(&["train", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let o = taan(&["train", "--config", "missing.toml"], dir.path());
    assert!(!o.status.success());
    let o = taan(&["train", "--config", "c.toml", "--reg", "bogus"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn train_then_analyze() {
    let dir = setup();
    let o = taan(&["train", "--config", "c.toml", "--out", "run", "--reg", "dis", "--coef", "0.5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let model = TaanModel::load_checkpoint(&run.join("checkpoints/model.json")).unwrap();
    assert_eq!(model.task_count(), 3);
    let history = fs::read_to_string(run.join("history/history.csv")).unwrap();
    // header + 6 recorded epochs x 3 tasks x 2 layers
    assert_eq!(history.lines().count(), 1 + 6 * 3 * 2);
    assert!(run.join("reports/config.toml").is_file());

    let o = taan(&["analyze", "--config", "c.toml", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for l in 0..2 {
        assert!(run.join(format!("matrices/layer{l}.csv")).is_file());
        let pgm = fs::read(run.join(format!("matrices/layer{l}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n3 3\n255\n"));
    }
    let text = fs::read_to_string(run.join("reports/analysis.txt")).unwrap();
    assert!(text.contains("within-cluster"));
}

#[test]
fn repeated_training_gives_identical_history() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = taan(&["train", "--config", "c.toml", "--out", out, "--epochs", "3"], dir.path());
        assert!(o.status.success());
    }
    let a = fs::read(dir.path().join("a/history/history.csv")).unwrap();
    let b = fs::read(dir.path().join("b/history/history.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn moment_check_passes_and_writes_report() {
    let dir = setup();
    let o = taan(&["check", "moments", "--out", "r"], dir.path());
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(dir.path().join("r/reports/check_moments.txt").is_file());
}

#[test]
fn analyze_without_checkpoint_fails() {
    let dir = setup();
    let o = taan(&["analyze", "--config", "c.toml", "--out", "nothing"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn trains_from_generated_csv_files() {
    let dir = setup();
    assert!(taan(&["gen-data", "--config", "c.toml", "--out", "g"], dir.path()).status.success());
    let csv_config = "seed = 2\n[arch]\nhidden = [6]\nbasis_count = 6\n[train]\nepochs = 2\n\
        [data]\nsource = \"csv\"\ndir = \"g/data\"\ntasks = 3\ninput_dim = 3\ntarget_dim = 1\n";
    fs::write(dir.path().join("csv.toml"), csv_config).unwrap();
    let o = taan(&["train", "--config", "csv.toml", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = TaanModel::load_checkpoint(&dir.path().join("run/checkpoints/model.json")).unwrap();
    assert_eq!(model.task_count(), 3);

    fs::write(dir.path().join("csv.toml"), csv_config.replace("g/data", "nowhere")).unwrap();
    assert!(!taan(&["train", "--config", "csv.toml", "--out", "run"], dir.path()).status.success());
}
