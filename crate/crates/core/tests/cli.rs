use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_midori-cpa");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Guess table rows as (guess, peak |r|).
fn guess_table(path: &Path) -> Vec<(u8, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("guess,guess_hex,peak_abs_corr,peak_sample,rank")
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

const KEY: &str = "687DED3B3C85B3F35B1009863E2A8CBF";

fn simulate(dir: &Path, name: &str, config: &str, key: &str) -> std::path::PathBuf {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("{name}.csv"));
    let o = run(&[
        "simulate",
        "--config",
        p(&cfg),
        "--key",
        key,
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn encrypt_decrypt_keysched() {
    let o = run(&["encrypt", "--key", KEY, "--pt", "42C20FD3B586879E"]);
    assert_eq!(stdout(&o), "66BCDC6270D901CD\n");
    let o = run(&["decrypt", "--key", KEY, "--ct", "66BCDC6270D901CD"]);
    assert_eq!(stdout(&o), "42C20FD3B586879E\n");
    let o = run(&["keysched", "--key", "000102030405060708090A0B0C0D0E0F"]);
    assert!(stdout(&o).starts_with("WK   0808080808080808\n"));
    assert_eq!(stdout(&o).lines().count(), 16);
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["encrypt", "--key", "00", "--pt", "0000000000000000"],
        vec!["encrypt", "--key", KEY],
        vec!["frobnicate"],
        vec![
            "export-corr",
            "--traces",
            "t.csv",
            "--cell",
            "16",
            "--round",
            "1",
            "--out",
            "x.csv",
        ],
        vec![
            "export-corr",
            "--traces",
            "t.csv",
            "--cell",
            "0",
            "--round",
            "3",
            "--out",
            "x.csv",
        ],
        vec![
            "sweep", "--config", "c.toml", "--key", KEY, "--d-grid", "100", "--trials", "0",
            "--out", "s.csv",
        ],
        vec![
            "sweep", "--config", "c.toml", "--key", KEY, "--d-grid", "1,100", "--trials", "2",
            "--out", "s.csv",
        ],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn simulate_is_deterministic_and_writes_declared_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = "noise_sigma = 1.0\nseed = 42\nnum_traces = 300\n";
    let a = simulate(dir.path(), "a", config, KEY);
    let b = simulate(dir.path(), "b", config, KEY);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 300);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = fs::read_to_string(dir.path().join("a.manifest.toml")).unwrap();
    assert!(manifest.contains(&format!("true_key = \"{KEY}\"")));
}

#[test]
fn invalid_config_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "noise_sigma = -1.0\n").unwrap();
    let out = dir.path().join("never.csv");
    let o = run(&[
        "simulate",
        "--config",
        p(&cfg),
        "--key",
        KEY,
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("noise_sigma"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn attack_noiseless_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(
        dir.path(),
        "n",
        "noise_sigma = 0.0\nnum_traces = 32\nseed = 3\n",
        KEY,
    );
    let report = dir.path().join("report.csv");
    let o = run(&["attack", "--traces", p(&traces), "--report-csv", p(&report)]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains(&format!("key: {KEY}")), "{s}");
    assert!(s.contains("verdict: SUCCESS"));
    assert!(s.contains("reproduced"));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 33);
}

#[test]
fn attack_reports_failure_with_wrong_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(dir.path(), "n", "noise_sigma = 0.0\nnum_traces = 32\n", KEY);
    let o = run(&[
        "attack",
        "--traces",
        p(&traces),
        "--alpha0",
        "0000000000000000",
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("MISMATCH"));
    assert!(s.contains("verdict: FAILURE"));
}

#[test]
fn single_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let traces = simulate(dir.path(), "one", "num_traces = 1\n", KEY);
    let o = run(&["attack", "--traces", p(&traces)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("D >= 2"));
}

#[test]
fn missing_trace_file_is_reported() {
    let o = run(&["attack", "--traces", "/nonexistent/traces.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn export_corr_on_constant_traces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from(
        "# format: midori-cpa/1\n# num_traces: 4\n# samples_per_trace: 3\n# key_known: false\n# note: flat\n",
    );
    for i in 0..4 {
        text.push_str(&format!(
            "{:016X},0000000000000000,1,1,1\n",
            i * 0x1111_1111_1111_1111u64
        ));
    }
    fs::write(&path, text).unwrap();
    let out = dir.path().join("g.csv");
    let o = run(&[
        "export-corr",
        "--traces",
        p(&path),
        "--cell",
        "0",
        "--round",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(guess_table(&out).iter().all(|&(_, r)| r == 0.0));
    assert!(stdout(&o).contains("tied"));
}

#[test]
fn export_corr_singles_out_the_true_nibble() {
    let dir = tempfile::tempdir().unwrap();
    // k0 ^ k1 has 0xA in cell 5.
    let traces = simulate(
        dir.path(),
        "w",
        "noise_sigma = 0.0\nnum_traces = 300\n",
        "00000A00000000000000000000000000",
    );
    let out = dir.path().join("g.csv");
    let matrix = dir.path().join("m.csv");
    let o = run(&[
        "export-corr",
        "--traces",
        p(&traces),
        "--cell",
        "5",
        "--round",
        "1",
        "--out",
        p(&out),
        "--matrix",
        p(&matrix),
    ]);
    assert!(o.status.success());
    let table = guess_table(&out);
    assert_eq!(table.len(), 16);
    let best = table.iter().find(|&&(g, _)| g == 10).unwrap().1;
    assert!((best - 1.0).abs() < 1e-12);
    assert!(table
        .iter()
        .filter(|&&(g, _)| g != 10)
        .all(|&(_, r)| r < best));
    assert_eq!(fs::read_to_string(&matrix).unwrap().lines().count(), 17);

    let o = run(&[
        "export-corr",
        "--traces",
        p(&traces),
        "--cell",
        "0",
        "--round",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
}

#[test]
fn sweep_noiseless_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "noise_sigma = 0.0\n").unwrap();
    let out = dir.path().join("s.csv");
    let o = run(&[
        "sweep",
        "--config",
        p(&cfg),
        "--key",
        KEY,
        "--d-grid",
        "32,64",
        "--trials",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text, "num_traces,success_rate,mean_rank\n32,1,1\n64,1,1\n");
    assert_eq!(stdout(&o), text);
}
