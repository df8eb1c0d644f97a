use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otfs-sim"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
scheme = "otfs"
equalizer = "mmse_dd"
snr_db_list = [0.0, 5.0, 10.0]
trials = 24
seed = 77

[frame]
M = 8
N = 4

[channel]
random = { L_max = 3, V_max = 2 }
"#;

#[test]
fn csv_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SMALL);
    let mut outputs = Vec::new();
    for w in ["1", "2", "8"] {
        let out = dir.path().join(format!("w{w}.csv"));
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--workers",
            w,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("scheme,snr_db,trials,ber,ser,papr_mean,papr_p99")
    );
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SMALL);
    let a = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    let b = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "78"]);
    let c = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "77",
        "--format",
        "csv",
    ]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("trials = 24", "trails = 24"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trails"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn missing_file_is_a_config_error() {
    let o = run(&["simulate", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_channel_trips_the_numerical_guard() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "z.toml",
        "scheme = \"ostf\"\nequalizer = \"one_tap_tf\"\nsnr_db_list = [inf]\ntrials = 2\n[frame]\nM = 8\nN = 2\n[channel]\ntaps = [{ delay = 0, doppler = 0, gain = [0.0, 0.0] }]\n",
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_passes_and_is_reproducible() {
    let a = run(&["selftest"]);
    let b = run(&["selftest"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!text.contains("FAIL"));
}

#[test]
fn selftest_catches_an_injected_isfft_fault() {
    let o = run(&["selftest", "--inject-fault", "isfft-sign"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn sweep_lists_every_scheme() {
    let cfg = configs().join("bpsk_awgn.toml");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    for scheme in ["otfs", "ostf", "ofdm", "scfdma"] {
        assert_eq!(
            text.lines().filter(|l| l.starts_with(&format!("{scheme},"))).count(),
            3,
            "{scheme}"
        );
    }
}

#[test]
fn inspect_channel_writes_surface_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chan");
    let cfg = configs().join("doubly_selective.toml");
    let o = run(&[
        "inspect-channel",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let surface = fs::read_to_string(out.join("tf_surface.csv")).unwrap();
    assert_eq!(surface.lines().count(), 16);
    assert!(surface.lines().all(|l| l.split(',').count() == 8));
    let taps = fs::read_to_string(out.join("taps.csv")).unwrap();
    assert_eq!(taps.lines().count(), 5);
    assert!(out.join("windowed_dd.csv").exists());
    assert!(out.join("freq_acf.csv").exists());
}

#[test]
fn papr_ccdf_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", &SMALL.replace("trials = 24", "trials = 200"));
    let o = run(&[
        "papr-ccdf",
        "--config",
        cfg.to_str().unwrap(),
        "--max-db",
        "12",
        "--step-db",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("scheme,papr_db,ccdf"));
    for scheme in ["otfs", "ostf"] {
        let curve: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with(&format!("{scheme},")))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(curve.len(), 25);
        assert_eq!(curve[0], 1.0);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn bad_ccdf_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", SMALL);
    let o = run(&["papr-ccdf", "--config", cfg.to_str().unwrap(), "--step-db", "0"]);
    assert_eq!(o.status.code(), Some(1));
}
