use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use critheat::cli::RunManifest;
use critheat::ensemble::{Verdict, VerdictClass};
use critheat::noise::read_noise_dump;

fn critheat(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critheat"))
        .args(args)
        .env("CRITHEAT_OUT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::read(&dir.join("manifest.json")).unwrap()
}

fn verdicts(dir: &Path) -> Vec<Verdict> {
    serde_json::from_slice(&std::fs::read(dir.join("verdicts.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL_L1: [&str; 6] = [
    "--set",
    "grid.horizon=0.05",
    "--set",
    "clamp.epsilon=0.1",
    "--set",
    "grid.N=32",
];

#[test]
fn verify_kernel_flags_the_explicit_sup_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let o = critheat(&["verify-kernel"], tmp.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let v = verdicts(&tmp.path().join("verify-kernel"));
    let failed: Vec<&str> = v.iter().filter(|v| !v.passed()).map(|v| v.name.as_str()).collect();
    assert_eq!(failed, ["kernel_sup_explicit_bound"]);
    assert_eq!(manifest(&tmp.path().join("verify-kernel")).exit_code, 1);
}

#[test]
fn minimal_config_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "min.toml", "[grid]\nN = 64\n");
    let o = critheat(&["simulate", "--config", &cfg, "--set", "grid.horizon=0.01"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for key in ["alpha = 4.0", "epsilon = 0.5", "n_max = 1000000.0", "kind = \"critical_power\""] {
        assert!(stdout.contains(key), "missing {key} in\n{stdout}");
    }
    let dir = tmp.path().join("simulate");
    for f in ["trajectory.csv", "events.csv", "summary.json", "config.toml", "verdicts.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,l1,linf,qv_accum,events_fired\n"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let alpha = write(tmp.path(), "alpha.toml", "[drift]\nalpha = 2.5\n");
    let o = critheat(&["simulate", "--config", &alpha], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("drift.alpha"), "{}", stderr(&o));

    let unknown = write(tmp.path(), "unknown.toml", "[grid]\nN = 64\nspeed = 3\n");
    let o = critheat(&["simulate", "--config", &unknown], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid.speed"), "{}", stderr(&o));

    let o = critheat(&["simulate", "--config", "/no/such/file.toml"], tmp.path());
    assert_eq!(code(&o), 2);

    let o = critheat(&["convolve", "--set", "experiment.beta=0.3"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("experiment.beta"), "{}", stderr(&o));

    let o = critheat(
        &["simulate", "--set", "sigma.kind=power", "--set", "sigma.gamma=2.0", "--set", "experiment.claims_critical=true"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));

    let o = critheat(&["no-such-command"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("simulate").exists());
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["simulate", "--seed", "42", "--set", "grid.horizon=0.05", "--set", "experiment.snapshots=[0, 20]"];
    let a_dir = tmp.path().join("a");
    let b_dir = tmp.path().join("b");
    assert_eq!(code(&critheat(&args, &a_dir)), 0);
    assert_eq!(code(&critheat(&args, &b_dir)), 0);
    let a = manifest(&a_dir.join("simulate"));
    let b = manifest(&b_dir.join("simulate"));
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.master_seed, 42);
    assert!(a.outputs.contains_key("snapshots.bin"));
    let other = tmp.path().join("c");
    critheat(&["simulate", "--seed", "43", "--set", "grid.horizon=0.05"], &other);
    assert_ne!(manifest(&other.join("simulate")).outputs["trajectory.csv"], a.outputs["trajectory.csv"]);
}

#[test]
fn manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let mut args = vec!["verify-l1", "--seed", "7", "--replicas", "100"];
    args.extend(SMALL_L1);
    let o = critheat(&args, &first);
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let m = first.join("verify-l1").join("manifest.json");
    let again = tmp.path().join("again");
    let o = critheat(&["verify-l1", "--manifest", m.to_str().unwrap()], &again);
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let a = manifest(&first.join("verify-l1"));
    let b = manifest(&again.join("verify-l1"));
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.config, b.config);
    assert_eq!(a.exit_code, b.exit_code);
    for (name, digest) in &a.outputs {
        let bytes = std::fs::read(first.join("verify-l1").join(name)).unwrap();
        assert_eq!(&critheat::cli::sha256_hex(&bytes), digest, "{name}");
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for workers in ["1", "4"] {
        let out = tmp.path().join(workers);
        let mut args = vec!["verify-l1", "--replicas", "120", "--workers", workers];
        args.extend(SMALL_L1);
        critheat(&args, &out);
        digests.push(manifest(&out.join("verify-l1")).outputs);
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn too_few_replicas_is_inconclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let o = critheat(&["verify-l1", "--replicas", "50", "--set", "grid.horizon=0.05"], tmp.path());
    assert_eq!(code(&o), 1);
    let v = verdicts(&tmp.path().join("verify-l1"));
    let classes: BTreeMap<&str, VerdictClass> = v.iter().map(|v| (v.name.as_str(), v.class)).collect();
    assert_eq!(classes["l1_submartingale"], VerdictClass::Inconclusive);
    assert_eq!(classes["quadratic_variation"], VerdictClass::Inconclusive);
    assert!(String::from_utf8_lossy(&o.stdout).contains("inconclusive"));
}

#[test]
fn noise_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let o = critheat(
        &["verify-noise", "--seed", "5", "--set", "grid.N=16", "--set", "grid.dt=0.05", "--set", "experiment.dump_noise=true"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bytes = std::fs::read(tmp.path().join("verify-noise").join("noise.bin")).unwrap();
    let (header, slices) = read_noise_dump(&mut bytes.as_slice()).unwrap();
    assert_eq!((header.n, header.steps, header.seed), (16, 20, 5));
    assert_eq!(slices.len(), 20);
}

#[test]
fn report_collects_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&critheat(&["verify-kernel"], tmp.path())), 1);
    let o = critheat(&["convolve", "--set", "grid.N=16", "--set", "grid.steps=16"], tmp.path());
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let o = critheat(&["report"], tmp.path());
    assert_eq!(code(&o), 1);
    let csv = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("run,verifier,class\n"));
    assert!(csv.contains("verify-kernel,kernel_l1_norm,pass"));
    assert!(csv.contains("verify-kernel,kernel_sup_explicit_bound,fail"));
    assert!(csv.contains("convolve,factorization_refinement,"));
    assert_eq!(code(&critheat(&["report", "/no/such/dir"], tmp.path())), 2);
}

#[test]
fn explicit_out_flag_wins_over_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let flag = tmp.path().join("flag");
    let o = critheat(
        &["simulate", "--out", flag.to_str().unwrap(), "--set", "grid.horizon=0.01"],
        &tmp.path().join("env"),
    );
    assert_eq!(code(&o), 0);
    assert!(flag.join("simulate").join("manifest.json").is_file());
    assert!(!tmp.path().join("env").exists());
}
