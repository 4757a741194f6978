use std::path::Path;
use std::process::{Command, Output};

use gradpush::harness::trace::{read_csv, CSV_HEADER};

fn gradpush(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradpush"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &str = r#"
n = 3
horizon = 60
runs = 4
seed = 12
[graph]
kind = "directed_cycle"
[objective]
kind = "quadratic_estimation"
theta_hat = 1.5
noise_bound = 0.3
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn run_writes_trace_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", SMALL);
    let out = gradpush(&["run", "--config", &cfg, "--out", "a"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let trace = std::fs::read_to_string(dir.path().join("a/trace.csv")).unwrap();
    assert!(trace.starts_with(CSV_HEADER));
    assert!(!trace.contains('\r'));
    let traces = read_csv(&dir.path().join("a/trace.csv")).unwrap();
    assert_eq!(traces.len(), 4);

    let summary = std::fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("t,node,metric,mean,se,count\n"));
    assert!(summary.lines().any(|l| l.starts_with("60,0,ln_err_zhat,")));

    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("a/manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["tracked_nodes"].as_array().unwrap().len(), 3);
    assert!(manifest["p"].as_float().unwrap() > 0.0);
    assert_eq!(manifest["config"]["seed"].as_integer(), Some(12));
}

#[test]
fn repeated_runs_are_byte_identical_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", SMALL);
    for out_dir in ["a", "b"] {
        assert!(
            gradpush(&["run", "--config", &cfg, "--out", out_dir], dir.path())
                .status
                .success()
        );
    }
    let a = std::fs::read(dir.path().join("a/trace.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert_eq!(a, b);

    let out = gradpush(
        &[
            "run",
            "--config",
            &cfg,
            "--out",
            "c",
            "--seed",
            "13",
            "--runs",
            "2",
            "--horizon",
            "20",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let traces = read_csv(&dir.path().join("c/trace.csv")).unwrap();
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[0].max_t(), 20);
    assert_ne!(std::fs::read(dir.path().join("c/trace.csv")).unwrap(), a);
}

#[test]
fn invalid_configs_exit_with_field_messages() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (SMALL.replace("horizon = 60", "horizon = 1"), "horizon"),
        (
            SMALL.replace("seed = 12", "seed = 12\ncolour = 1"),
            "colour",
        ),
        (
            SMALL.replace("noise_bound = 0.3", "noise_bound = 0.3\nextra = 2"),
            "extra",
        ),
        (SMALL.replace("directed_cycle", "hypercube"), "hypercube"),
    ];
    for (text, needle) in cases {
        let cfg = write(dir.path(), "bad.toml", &text);
        let out = gradpush(&["run", "--config", &cfg, "--out", "x"], dir.path());
        assert_eq!(out.status.code(), Some(1), "{needle}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains(needle),
            "{needle}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = gradpush(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergence_exits_with_two_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "[graph]",
        "[schedule]\nrule = \"explicit\"\np = 1e6\n[graph]",
    );
    let cfg = write(dir.path(), "div.toml", &text);
    let out = gradpush(&["run", "--config", &cfg, "--out", "d"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("d/trace.csv")).unwrap();
    assert!(trace.contains(",diverged,"));
}

#[test]
fn verify_graph_reports_windows_and_constants() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "edges.txt",
        "# two half rings\n0 0 1\n0 2 3\n1 1 2\n1 3 0\n",
    );
    let text = SMALL.replace("n = 3", "n = 4").replace(
        "kind = \"directed_cycle\"",
        "kind = \"edge_list\"\npath = \"edges.txt\"",
    );
    let cfg = write(dir.path(), "edges.toml", &text);

    let out = gradpush(
        &[
            "verify-graph",
            "--config",
            &cfg,
            "--B",
            "2",
            "--horizon",
            "20",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("windows_checked = 10") && text.contains("strongly_connected = true"));
    assert!(text.contains("delta = "), "{text}");

    let out = gradpush(
        &[
            "verify-graph",
            "--config",
            &cfg,
            "--B",
            "1",
            "--horizon",
            "20",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("first_failing_window = 0"));

    let cycle = write(dir.path(), "cycle.toml", SMALL);
    let out = gradpush(
        &[
            "verify-graph",
            "--config",
            &cycle,
            "--B",
            "1",
            "--horizon",
            "5",
        ],
        dir.path(),
    );
    assert!(stdout(&out).contains("lambda = 0.5"), "{}", stdout(&out));
}

#[test]
fn bound_and_fit_read_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        &SMALL.replace("horizon = 60", "horizon = 200"),
    );
    assert!(
        gradpush(&["run", "--config", &cfg, "--out", "r"], dir.path())
            .status
            .success()
    );

    let out = gradpush(
        &[
            "bound",
            "--config",
            &cfg,
            "--trace",
            "r/trace.csv",
            "--D",
            "100",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}{}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("tau,node,lhs_mean"));
    assert_eq!(
        text.lines().filter(|l| l.ends_with(",true")).count(),
        3,
        "{text}"
    );

    let out = gradpush(
        &[
            "bound",
            "--config",
            &cfg,
            "--trace",
            "r/trace.csv",
            "--D",
            "0.01",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max iterate norm"));

    let out = gradpush(
        &[
            "fit",
            "--trace",
            "r/trace.csv",
            "--metric",
            "dist_zhat",
            "--from",
            "20",
            "--to",
            "200",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let slope: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("slope = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(slope < 0.0, "slope {slope}");

    let out = gradpush(
        &[
            "fit",
            "--trace",
            "r/trace.csv",
            "--metric",
            "nope",
            "--from",
            "2",
            "--to",
            "9",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(
        dir.path().join("bad.csv"),
        "run,t,node,metric,value\n0,x,0,dist_z,1\n",
    )
    .unwrap();
    let out = gradpush(
        &[
            "fit", "--trace", "bad.csv", "--metric", "dist_z", "--from", "1", "--to", "9",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
