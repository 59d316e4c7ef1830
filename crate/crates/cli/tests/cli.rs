use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
k = 3

[data]
n = 80

[train]
batch_size = 8
steps = 8

[metagrad_check]
steps = [6]
ks = [2, 3]
directions = 2
variants = ["data-weights", "lr-keypoints"]

[smoothness_scan]
widths = [4]
batch_sizes = [8]
norms = ["before-activation"]
final_scales = [0.125]
activations = ["gelu", "relu"]
poolings = ["average"]
seeds = 2
probes = 2
n_perturbed = 2

[select_data]
rounds = 2

[poison]
epsilon = 0.05
rounds = 2
transfer_seeds = 2

[lr_opt]
rounds = 2

[bench_replay]
ns = [8, 27]
ks = [2, 3, 8]
"#;

const COMMANDS: [&str; 6] = ["metagrad-check", "smoothness-scan", "select-data", "poison", "lr-opt", "bench-replay"];

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn metagrad(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metagrad"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path) -> PathBuf {
    let o = metagrad(&[cmd, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && !p.ends_with("timing.csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(2).map(str::to_owned).collect()
}

#[test]
fn every_command_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    for cmd in COMMANDS {
        let a = run_ok(cmd, &config, &tmp.path().join("a"));
        let b = run_ok(cmd, &config, &tmp.path().join("b"));
        let (ca, cb) = (csvs(&a), csvs(&b));
        assert!(!ca.is_empty(), "{cmd} wrote no CSV");
        assert_eq!(ca, cb, "{cmd}");
        assert_eq!(a.file_name(), b.file_name());
        for (name, bytes) in &ca {
            let head = String::from_utf8_lossy(bytes).lines().next().unwrap().to_owned();
            assert!(head.starts_with("# config_hash="), "{cmd}/{name}: {head}");
            assert!(head.contains("seed=3"), "{head}");
        }
        assert!(a.join("manifest.json").exists());
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = tmp.path().join("o");
    let a = run_ok("lr-opt", &config, &out);
    let o = metagrad(
        &["lr-opt", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", "4"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let b = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert_ne!(a, b);
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn zero_rounds_emit_only_the_initial_row() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let text = fs::read_to_string(&config).unwrap().replace("rounds = 2", "rounds = 0");
    fs::write(&config, text).unwrap();
    for cmd in ["select-data", "poison", "lr-opt"] {
        let dir = run_ok(cmd, &config, &tmp.path().join("o"));
        let rows = data_rows(&dir.join("trajectory.csv"));
        assert_eq!(rows.len(), 1, "{cmd}: {rows:?}");
        assert!(rows[0].starts_with("0,"));
    }
}

#[test]
fn injected_replay_fault_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let o = metagrad(
        &[
            "metagrad-check",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            tmp.path().to_str().unwrap(),
            "--inject-fault",
            "replay",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nondeterminism"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap().to_owned();
    let bad_key = write_config(tmp.path(), "[budget]\nmax_state = 3");
    assert_eq!(
        metagrad(&["bench-replay", "--config", bad_key.to_str().unwrap(), "--out-dir", &out], &[]).status.code(),
        Some(2)
    );
    let bad_split = write_config(tmp.path(), "").to_str().unwrap().to_owned();
    fs::write(&bad_split, SMALL.replace("n = 80", "n = 80\nsplit = [0.5, 0.6]")).unwrap();
    assert_eq!(metagrad(&["poison", "--config", &bad_split, "--out-dir", &out], &[]).status.code(), Some(2));
    assert_eq!(metagrad(&["lr-opt", "--k", "1", "--out-dir", &out], &[]).status.code(), Some(2));
    assert_eq!(metagrad(&["no-such-command"], &[]).status.code(), Some(2));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(metagrad(&["lr-opt", "--config", missing.to_str().unwrap()], &[]).status.code(), Some(1));
}

#[test]
fn tolerance_breach_exits_4_and_still_writes_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let text = fs::read_to_string(&config).unwrap().replace("directions = 2", "directions = 2\ntolerance = 0.0");
    fs::write(&config, text).unwrap();
    let out = tmp.path().join("o");
    let o =
        metagrad(&["metagrad-check", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));
    let report = fs::read_dir(out.join("metagrad-check")).unwrap().next().unwrap().unwrap().path().join("report.csv");
    assert!(data_rows(&report).iter().any(|r| r.ends_with(",false")));
}

#[test]
fn check_report_is_exact_and_within_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let dir = run_ok("metagrad-check", &config, &tmp.path().join("o"));
    let rows = data_rows(&dir.join("report.csv"));
    assert_eq!(rows.len(), 3 * 2 * 2);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[4], "true", "{r}");
        assert!(f[6].parse::<f64>().unwrap() <= 1e-4, "{r}");
        assert_eq!(f[11], "true", "{r}");
    }
}

#[test]
fn bench_rows_meet_bounds_and_equal_arity_needs_no_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let dir = run_ok("bench-replay", &config, &tmp.path().join("o"));
    let rows = data_rows(&dir.join("bench.csv"));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let f: Vec<usize> = r.split(',').take(8).map(|x| x.parse().unwrap()).collect();
        assert!(f[3] <= f[4] && f[6] <= f[7], "{r}");
        assert!(r.ends_with("true"));
    }
    assert!(rows.contains(&"8,8,1,8,16,7,0,8,true".to_string()), "{rows:?}");
    assert_eq!(data_rows(&dir.join("timing.csv")).len(), 6);
}

#[test]
fn spilling_through_the_scratch_directory_keeps_results_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scratch = tmp.path().join("scratch");
    let plain = write_config(tmp.path(), "");
    let a = run_ok("lr-opt", &plain, &tmp.path().join("a"));
    let spilled = tmp.path().join("spill.toml");
    fs::write(&spilled, format!("{SMALL}\n[budget]\nmax_states_in_memory = 2\n")).unwrap();
    let out = tmp.path().join("b");
    let o = metagrad(
        &["lr-opt", "--config", spilled.to_str().unwrap(), "--out-dir", out.to_str().unwrap()],
        &[("METAGRAD_SCRATCH_DIR", &scratch)],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(scratch.exists());
    assert_eq!(data_rows(&a.join("trajectory.csv")), data_rows(&b.join("trajectory.csv")));
}

#[test]
fn print_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let o = metagrad(&["poison", "--config", config.to_str().unwrap(), "--seed", "9", "--print-config"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    let again = tmp.path().join("again.toml");
    fs::write(&again, &text).unwrap();
    let o2 = metagrad(&["poison", "--config", again.to_str().unwrap(), "--print-config"], &[]);
    assert_eq!(String::from_utf8(o2.stdout).unwrap(), text);
}

#[test]
fn scan_rows_cover_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let dir = run_ok("smoothness-scan", &config, &tmp.path().join("o"));
    let rows = data_rows(&dir.join("scan.csv"));
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows[0].starts_with("w4-b8-before-s0.125-gelu-avg,4,8,before,0.125,avg,3,"), "{}", rows[0]);
}
