use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mecsim::evt::{write_trace, Gpd};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mecsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecsim"))
        .args(args)
        .env_remove("MECSIM_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = "[network]\nnum_ues = 4\nhorizon_slots = 300\n[run]\ndecision_log_interval_slots = 100\n";

#[test]
fn run_writes_outputs_and_repeats_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = mecsim(&["run", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["metrics.csv", "summary.json", "matching.csv", "virtual_queues.csv", "decisions.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,proposed,7,4,"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["points"][0]["seed"], 7);
}

#[test]
fn refuses_to_overwrite_without_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    assert!(mecsim(&["run", "--config", &cfg, "--out", out]).status.success());
    let again = mecsim(&["run", "--config", &cfg, "--out", out]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--overwrite"));
    assert!(mecsim(&["run", "--config", &cfg, "--out", out, "--overwrite"]).status.success());
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_mecsim"))
        .args(["run", "--config", &cfg])
        .env("MECSIM_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn validate_config_names_the_shape_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "[server]\ngpd_shape = 0.6\n");
    let o = mecsim(&["validate-config", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("server[0].gpd_shape") && err.contains("xi < 1/2"), "{err}");
    // `run` rejects exactly what `validate-config` rejects.
    let run = mecsim(&["run", "--config", &bad, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));

    let good = write_config(tmp.path(), "good.toml", SMALL);
    let o = mecsim(&["validate-config", "--config", &good]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn unknown_fields_and_flags_are_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write_config(tmp.path(), "typo.toml", "[network]\nnum_uez = 3\n");
    assert_eq!(mecsim(&["validate-config", "--config", &typo]).status.code(), Some(1));
    assert_eq!(mecsim(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mecsim(&["run", "--policy", "greedy"]).status.code(), Some(1));
    assert_eq!(mecsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = mecsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_writes_tables_and_per_point_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.toml",
        "[network]\nnum_ues = 3\nhorizon_slots = 200\n[sweep]\ntradeoffs = [1e8, 0.0]\npolicies = [\"proposed\", \"rss\"]\n",
    );
    let out = tmp.path().join("sweep");
    let o = mecsim(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["metrics.csv", "summary.json", "split_ratio.csv", "power_vs_v.csv", "delay_reliability.csv", "snr_cdf.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(out.join("points/0003/matching.csv").exists());
    let power = fs::read_to_string(out.join("power_vs_v.csv")).unwrap();
    let vs: Vec<f64> = power.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(vs, vec![0.0, 0.0, 1e8, 1e8]);

    // Worker count does not change results.
    let seq = tmp.path().join("seq");
    assert!(mecsim(&["sweep", "--config", &cfg, "--out", seq.to_str().unwrap(), "--workers", "1"]).status.success());
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(seq.join("metrics.csv")).unwrap());
}

#[test]
fn fit_gpd_recovers_a_synthetic_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let g = Gpd::new(40.0, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<f64> = (0..50_000).map(|_| g.sample(&mut rng)).collect();
    let path = tmp.path().join("trace.txt");
    fs::write(&path, write_trace(&xs)).unwrap();
    let o = mecsim(&["fit-gpd", "--trace", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let field = |k: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(k)).unwrap().trim().parse().unwrap()
    };
    assert!((field("scale ") / 40.0 - 1.0).abs() < 0.05);
    assert!((field("shape ") - 0.3).abs() < 0.03);
    assert!(field("ks ") < 0.02);

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "1.0\nnot-a-number\n").unwrap();
    assert_eq!(mecsim(&["fit-gpd", "--trace", bad.to_str().unwrap()]).status.code(), Some(1));
}
