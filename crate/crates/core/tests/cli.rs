use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voronoi_mcmc::{exact_distribution, Control, LinearAttributeClassifier, ModelSnapshot, TinyEmbedLM};

const SMALL_TOY: &str = r#"
experiment = "toy"
probs = [0.7, 0.1, 0.1, 0.1]
temperatures = [0.25, 1.0]
n_seeds = 3

[[sampler]]
algorithm = "svs"
step_size = 0.1
disc_fraction = 0.1
burn_in = 50
n_samples = 100

[[sampler]]
algorithm = "hmc"
step_size = 0.1
burn_in = 50
n_samples = 100

[[sampler]]
algorithm = "projected-langevin"
step_size = 0.1
mucola_metropolis = true
burn_in = 50
n_samples = 100
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voronoi-mcmc"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(extra)
        .arg("--out-dir")
        .arg(out)
        .arg("run")
        .arg(config)
        .output()
        .unwrap()
}

/// Every artifact except the metadata, which records wall-clock time.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("chains")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if path.is_file() && name != "metadata.json" {
                out.push((name, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toy_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "toy.toml", SMALL_TOY);
    let out = tmp.path().join("out");
    let res = run(&cfg, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let csv = fs::read_to_string(out.join("divergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("algorithm,temperature,k,seed,n_samples,js"));
    let algs: BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(algs, BTreeSet::from(["hmc", "projected-langevin", "svs"]));
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 3);

    let chains: Vec<_> = fs::read_dir(out.join("chains")).unwrap().collect();
    assert_eq!(chains.len(), 3 * 2 * 3);
    let first = fs::read_dir(out.join("chains")).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(first).unwrap();
    assert_eq!(text.lines().count(), 100);
    let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["iter", "x", "cell", "accepted", "dH", "n_reflect", "n_refract"] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["version"].is_string());
    assert!(meta["wall_clock_seconds"].is_number());
    assert_eq!(meta["config"]["experiment"], "toy");
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "toy.toml", SMALL_TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &["--jobs", "1"]).status.success());
    let res = bin()
        .env("VORONOI_MCMC_THREADS", "4")
        .arg("--out-dir")
        .arg(&b)
        .arg("run")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert_eq!(artifacts(&a), artifacts(&b));
}

#[test]
fn seed_offset_changes_the_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "toy.toml", SMALL_TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["--seed-offset", "100"]).status.success());
    let csv_b = fs::read_to_string(b.join("divergence.csv")).unwrap();
    assert!(csv_b.lines().nth(1).unwrap().contains(",100,"));
    assert_ne!(artifacts(&a), artifacts(&b));
}

#[test]
fn json_config_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let json = r#"{"experiment": "hypercube", "dims": [3], "temperatures": [0.5], "n_seeds": 2,
        "sampler": {"algorithm": "svs", "step_size": 0.1, "burn_in": 10, "n_samples": 20}}"#;
    let cfg = write(tmp.path(), "cube.json", json);
    let out = tmp.path().join("out");
    let res = run(&cfg, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read_to_string(out.join("divergence.csv")).unwrap().lines().count(), 3);
}

#[test]
fn missing_step_size_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "experiment = \"toy\"\n[[sampler]]\nalgorithm = \"svs\"\n");
    let res = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("step_size"));
}

#[test]
fn invalid_value_exits_two_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "experiment = \"toy\"\n[[sampler]]\nalgorithm = \"svs\"\nstep_size = 0.1\ndisc_fraction = 1.5\n",
    );
    let res = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("disc_fraction"));
}

#[test]
fn sampler_failure_exits_one_with_chain_id() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "huge.toml",
        "experiment = \"toy\"\ntemperatures = [1.0]\nn_seeds = 1\n[[sampler]]\nalgorithm = \"svs\"\nstep_size = 1e6\nburn_in = 0\nn_samples = 5\n",
    );
    let res = run(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("svs/T=1/k=2/seed=0"), "{err}");
}

#[test]
fn verify_reports_each_property() {
    let res = bin().args(["verify", "--filter", "conservation"]).output().unwrap();
    assert!(res.status.success());
    let out = String::from_utf8_lossy(&res.stdout);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("PASS conservation"));

    let none = bin().args(["verify", "--filter", "no-such-property"]).output().unwrap();
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn full_verify_passes() {
    let res = bin().arg("verify").output().unwrap();
    let out = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{out}");
    for name in ["potential-gradient", "conservation", "reversibility", "jacobian-refract", "mass-identity"] {
        assert!(out.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{name}");
    }
}

#[test]
fn enumerate_dumps_the_exact_table() {
    let tmp = tempfile::tempdir().unwrap();
    let model = TinyEmbedLM::seeded(7, 3, 4, 2).unwrap();
    let control = Control::new(LinearAttributeClassifier::seeded(11, 2, 4, 1.0).unwrap(), 0, 1.5).unwrap();
    let exact = exact_distribution(&model, Some(&control)).unwrap();
    let snap = ModelSnapshot {
        model,
        control: Some(control),
    };
    let path = write(tmp.path(), "snap.json", &serde_json::to_string(&snap).unwrap());
    let res = bin().arg("enumerate").arg(&path).output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sequence,probability"));
    let rows: Vec<(Vec<usize>, f64)> = lines
        .map(|l| {
            let (seq, p) = l.split_once(',').unwrap();
            (seq.split(' ').map(|t| t.parse().unwrap()).collect(), p.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 9);
    for (seq, p) in rows {
        assert_eq!(p, exact.prob(&seq));
    }
}
