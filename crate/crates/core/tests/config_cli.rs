use std::path::Path;
use std::process::Command;

fn fedsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "num_clients = 4\nglobal_rounds = 3\nclient_epochs = 1\nlearning_rate = 0.05\n\
                     bwo.max_iterations = 2\ndata.samples = 240\ndata.test_samples = 60\n\
                     data.dims = 8\nmodel.hidden = [8]\n";

#[test]
fn run_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.toml",
        &format!("strategy = \"fedbwo\"\ncsv = true\n{SMALL}"),
    );
    for out in ["r1", "r2"] {
        let status = fedsim()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "3", "--out"])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir.path().join("r1/metrics.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("r2/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("r1/metrics.csv").exists());
    let text = String::from_utf8(a).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("{\"summary\""), "{last}");
    assert!(text.lines().next().unwrap().contains("\"seed\":3") || last.contains("\"seed\":3"));
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.toml",
        &format!("strategy = \"fedavg\"\n{SMALL}"),
    );
    let status = fedsim()
        .args(["run", "--config"])
        .arg(&cfg)
        .env("FEDSIM_OUT", dir.path().join("env_out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("env_out/metrics.jsonl").exists());
}

#[test]
fn print_config_is_deterministic_and_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", "seed = 4\nbwo.Pm = 0.5\n");
    let first = fedsim()
        .args(["print-config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    let second = fedsim()
        .args(["print-config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert_eq!(
        fedsim::config::parse_config(&text).unwrap(),
        fedsim::config::parse_config("seed = 4\nbwo.Pm = 0.5").unwrap()
    );
}

#[test]
fn invalid_config_fails_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "fraction = 2.0\n");
    let out = fedsim()
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fraction"));
}

#[test]
fn validate_costs_passes() {
    let out = fedsim().arg("validate-costs").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("PASS").count(), 7, "{text}");
}

#[test]
fn cost_command_prints_both_totals() {
    let out = fedsim()
        .args([
            "cost", "--t", "30", "--c", "1.0", "--n", "10", "--m", "1000", "--eps", "8",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("300000"), "{text}");
    assert!(text.contains(&(30 * (40 + 1000 + 8)).to_string()), "{text}");
}

#[test]
fn matrix_without_baseline_marks_cost_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(
        dir.path(),
        "bwo.toml",
        &format!("strategy = \"fedbwo\"\n{SMALL}"),
    );
    let out = fedsim()
        .args(["matrix", "--repeats", "2", "--configs"])
        .arg(&a)
        .arg("--out")
        .arg(dir.path().join("m"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n/a"));
    assert!(dir.path().join("m/bwo/rep1/metrics.jsonl").exists());
    assert!(dir.path().join("m/matrix.json").exists());
}

#[test]
fn matrix_normalizes_against_fedavg() {
    let configs = vec![
        (
            "avg".to_string(),
            fedsim::config::parse_config(&format!("strategy = \"fedavg\"\n{SMALL}")).unwrap(),
        ),
        (
            "half".to_string(),
            fedsim::config::parse_config(&format!(
                "strategy = \"fedavg\"\nfraction = 0.5\n{SMALL}"
            ))
            .unwrap(),
        ),
        (
            "bwo".to_string(),
            fedsim::config::parse_config(&format!("strategy = \"fedbwo\"\n{SMALL}")).unwrap(),
        ),
    ];
    let table = fedsim::experiment::run_matrix(&configs, 2, None).unwrap();
    assert_eq!(table.baseline.as_deref(), Some("avg"));
    assert_eq!(table.rows[0].normalized_cost, Some(1.0));
    assert_eq!(table.rows[1].normalized_cost, Some(0.5));
    assert_eq!(table.rows[2].normalized_cost, Some(3.0 / (3.0 * 4.0)));
    assert_eq!(
        table.rows[2]
            .replicates
            .iter()
            .map(|r| r.seed)
            .collect::<Vec<_>>(),
        vec![0, 1]
    );
}

#[test]
fn bench_command_runs() {
    let out = fedsim()
        .args([
            "bwo-bench",
            "--function",
            "sphere",
            "--dim",
            "5",
            "--iterations",
            "50",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("best="));
}
