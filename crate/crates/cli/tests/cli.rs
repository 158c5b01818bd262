use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resilience_core::report::OUTPUT_FILES;
use resilience_core::synth::ScenarioSpec;
use tempfile::TempDir;

fn resilience(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resilience"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_spec(dir: &Path, spec: &ScenarioSpec) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_vec(spec).unwrap()).unwrap();
    path
}

/// A generated bundle already ingested into a workspace.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(spec: &ScenarioSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = write_spec(dir.path(), spec);
        let bundle = dir.path().join("bundle");
        let out = resilience(&["synth", "--spec", p(&spec_path), "--out", p(&bundle)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let ws = dir.path().join("ws");
        let out = resilience(&["ingest", "--inputs", p(&bundle), "--workspace", p(&ws)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        Fixture { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, extra: &[&str]) -> Output {
        let ws = self.path("ws");
        let out = self.path(out);
        let mut args = vec!["run", "--workspace", p(&ws), "--out", p(&out)];
        args.extend_from_slice(extra);
        resilience(&args)
    }
}

fn small_noisy() -> ScenarioSpec {
    ScenarioSpec::four_quadrants([15, 15, 15, 15], 1.0)
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    OUTPUT_FILES
        .iter()
        .map(|n| (n.to_string(), fs::read(dir.join(n)).unwrap()))
        .collect()
}

fn archetype_column(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("normalized.csv")).unwrap();
    text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

#[test]
fn full_run_writes_all_outputs_with_four_archetypes() {
    let fx = Fixture::new(&small_noisy());
    let out = fx.run("out", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in OUTPUT_FILES {
        assert!(fx.path("out").join(name).is_file(), "{name} missing");
    }
    assert!(fx.path("out").join("run_timings.json").is_file());
    let labels: BTreeSet<String> = archetype_column(&fx.path("out")).into_iter().collect();
    let want: BTreeSet<String> = ["HH", "HL", "LH", "LL"].iter().map(|s| s.to_string()).collect();
    assert_eq!(labels, want);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out").join("run_manifest.json")).unwrap()).unwrap();
    for name in &OUTPUT_FILES[..8] {
        let digest = manifest["outputs"][name].as_str().unwrap();
        let bytes = fs::read(fx.path("out").join(name)).unwrap();
        assert_eq!(digest, resilience_core::report::sha256_hex(&bytes), "{name}");
    }
}

#[test]
fn identical_runs_are_byte_identical_across_worker_counts() {
    let fx = Fixture::new(&small_noisy());
    assert_eq!(code(&fx.run("a", &["--workers", "1"])), 0);
    assert_eq!(code(&fx.run("b", &["--workers", "1"])), 0);
    assert_eq!(code(&fx.run("c", &["--workers", "8"])), 0);
    let a = read_outputs(&fx.path("a"));
    assert_eq!(a, read_outputs(&fx.path("b")));
    assert_eq!(a, read_outputs(&fx.path("c")));
}

#[test]
fn cluster_stage_resumes_from_persisted_features() {
    let fx = Fixture::new(&small_noisy());
    assert_eq!(code(&fx.run("out", &[])), 0);
    let first = read_outputs(&fx.path("out"));
    let out = fx.run("out", &["--stage", "cluster"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(first, read_outputs(&fx.path("out")));
}

#[test]
fn cluster_stage_without_features_is_an_input_error() {
    let fx = Fixture::new(&ScenarioSpec::noiseless(2));
    let out = fx.run("fresh", &["--stage", "cluster"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("features.csv"));
}

#[test]
fn five_clusters_on_four_quadrants_repeat_a_label() {
    let fx = Fixture::new(&small_noisy());
    let out = fx.run("out", &["--k", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let archetypes: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out").join("archetypes.json")).unwrap()).unwrap();
    let labels: Vec<&str> = archetypes["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels.len(), 5);
    assert!(labels.iter().collect::<BTreeSet<_>>().len() < 5);
}

#[test]
fn fewer_complete_cbgs_than_k_exits_3() {
    let fx = Fixture::new(&ScenarioSpec::noiseless(1));
    let out = fx.run("out", &["--k", "5"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let fx = Fixture::new(&ScenarioSpec::noiseless(1));
    let out = fx.run("out", &["--k", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("k_clusters"));

    let cfg = fx.path("bad.toml");
    fs::write(&cfg, "preparedness_window = [\"2017-08-26\", \"2017-08-25\"]\n").unwrap();
    let out = fx.run("out", &["--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("preparedness_window"));
}

#[test]
fn missing_geometry_file_exits_2_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let spec = write_spec(dir.path(), &ScenarioSpec::noiseless(1));
    assert_eq!(code(&resilience(&["synth", "--spec", p(&spec), "--out", p(&bundle)])), 0);
    fs::remove_file(bundle.join("cbgs.geojson")).unwrap();
    let ws = dir.path().join("ws");
    let out = resilience(&["ingest", "--inputs", p(&bundle), "--workspace", p(&ws)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cbgs.geojson"));
}

#[test]
fn malformed_rows_are_reported_and_ingest_succeeds() {
    let mut spec = ScenarioSpec::noiseless(1);
    spec.malformed_rows = 3;
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let spec = write_spec(dir.path(), &spec);
    assert_eq!(code(&resilience(&["synth", "--spec", p(&spec), "--out", p(&bundle)])), 0);
    let ws = dir.path().join("ws");
    let out = resilience(&["ingest", "--inputs", p(&bundle), "--workspace", p(&ws)]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3 rejected rows"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.trim_start().starts_with("row ")).count(), 3);
}

#[test]
fn synth_is_deterministic_per_seed_and_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &ScenarioSpec::noiseless(2));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for target in [&a, &b] {
        let out = resilience(&["synth", "--spec", p(&spec), "--out", p(target), "--seed", "7"]);
        assert_eq!(code(&out), 0);
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(fs::read(a.join(&name)).unwrap() == fs::read(b.join(&name)).unwrap(), "{name:?}");
    }

    let mut bad = ScenarioSpec::noiseless(2);
    bad.archetypes[3].n_cbgs = 0;
    let bad = write_spec(&dir.path().join("a"), &bad);
    let out = resilience(&["synth", "--spec", p(&bad), "--out", p(&dir.path().join("c"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("archetypes[3].n_cbgs"), "{}", stderr(&out));
}

#[test]
fn sweep_writes_one_row_per_k_and_is_repeatable() {
    let fx = Fixture::new(&small_noisy());
    let ws = fx.path("ws");
    let run = |out: &str, k_max: &str| {
        let out_dir = fx.path(out);
        let o = resilience(&["sweep-k", "--workspace", p(&ws), "--out", p(&out_dir), "--k-min", "2", "--k-max", k_max]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(out_dir.join("k_sweep.csv")).unwrap()
    };
    let one = run("s1", "2");
    assert_eq!(one.lines().count(), 2);
    assert!(one.starts_with("k,inertia,silhouette\n2,"));
    assert_eq!(run("s2", "6"), run("s3", "6"));
}

#[test]
fn env_vars_stand_in_for_flags() {
    let fx = Fixture::new(&ScenarioSpec::noiseless(2));
    let out = Command::new(env!("CARGO_BIN_EXE_resilience"))
        .arg("run")
        .env("RESILIENCE_WORKSPACE", fx.path("ws"))
        .env("RESILIENCE_OUT", fx.path("env_out"))
        .env("RESILIENCE_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = fs::read_to_string(fx.path("env_out").join("run_manifest.json")).unwrap();
    assert!(manifest.contains("\"rng_seed\": 11"));
}

#[test]
fn restarts_flag_reaches_the_model() {
    let fx = Fixture::new(&ScenarioSpec::noiseless(2));
    let out = fx.run("out", &["--restarts", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.path("out").join("cluster_model.json")).unwrap()).unwrap();
    assert_eq!(model["restarts"], 3);
}
