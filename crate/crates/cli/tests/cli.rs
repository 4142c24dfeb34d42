use std::path::Path;
use std::process::Command;

use koopcert_cli::config::Scale;
use koopcert_cli::error::exit;
use koopcert_cli::pipeline::{manifest_entries, sha256_file, Manifest, MANIFEST};
use koopcert_cli::presets::{preset, PRESETS};
use koopcert_cli::{run_pipeline, CliError, ExperimentConfig};
use koopcert_core::io::read_json;
use koopcert_core::Verdict;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_koopcert"));
    c.env("KOOPCERT_THREADS", "1");
    c
}

fn small() -> ExperimentConfig {
    let mut cfg = preset("vdp-stable").unwrap();
    cfg.name = "small".into();
    cfg.sampling.n_traj = 8;
    cfg.fit.rank = 12;
    cfg.predict.random_states = 3;
    cfg.predict.steps = 5;
    cfg
}

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml_str(text) {
        Err(CliError::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn edit(cfg: &ExperimentConfig, from: &str, to: &str) -> String {
    let text = cfg.to_toml();
    assert!(text.contains(from), "{from} not in\n{text}");
    text.replacen(from, to, 1)
}

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESETS {
        let cfg = preset(name).unwrap();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
    assert!(preset("nope").is_none());
    assert_eq!(preset("vdp-stable").unwrap().kernel.sigma, Scale::Auto);
}

#[test]
fn validation_names_the_offending_field() {
    let cfg = small();
    assert!(config_error(&edit(&cfg, "dt = 0.2", "dt = -0.2")).starts_with("sampling.dt"));
    assert!(config_error(&edit(&cfg, "rank = 12", "rank = 100000")).starts_with("fit.rank"));
    assert!(config_error(&edit(&cfg, "rank = 12", "rank = 0")).starts_with("fit.rank"));
    assert!(config_error(&edit(&cfg, "n_traj = 8", "n_traj = 0")).starts_with("sampling.n_traj"));
    assert!(config_error(&edit(&cfg, "lo = [-1.0, -1.0]", "lo = [1.0, -1.0]")).starts_with("domain.lo[0]"));
    assert!(config_error(&edit(&cfg, "lo = [-1.0, -1.0]", "lo = [-1.0]")).starts_with("domain"));
    assert!(config_error(&edit(&cfg, "sigma = \"auto\"", "sigma = -1.0")).starts_with("kernel.sigma"));
    assert!(config_error(&edit(&cfg, "beta = \"auto\"", "beta = -1e-3")).starts_with("fit.beta"));
    assert!(config_error(&edit(&cfg, "plugin = false", "plugin = true")).starts_with("certificate.delta"));
    assert!(config_error(&edit(&cfg, "steps = 5", "steps = 0")).starts_with("predict.steps"));
    assert!(config_error(&edit(&cfg, "sigma = \"auto\"", "sigma = \"wide\"")).contains("sigma"));
    let unknown = format!("{}\nbogus = 1\n", cfg.to_toml().replacen("name = ", "colour = 3\nname = ", 1));
    assert!(config_error(&unknown).contains("colour"));
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small();
    let sa = run_pipeline(&cfg, Some(a.path()), false).unwrap();
    let sb = run_pipeline(&cfg, Some(b.path()), false).unwrap();
    assert_eq!(sa, sb);
    let ea = manifest_entries(a.path()).unwrap();
    let eb = manifest_entries(b.path()).unwrap();
    assert!(ea.len() > 10);
    assert_eq!(ea, eb);

    let mut other = cfg.clone();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&other, Some(c.path()), false).unwrap();
    let ec = manifest_entries(c.path()).unwrap();
    let hash = |es: &[koopcert_cli::pipeline::ManifestEntry], p: &str| {
        es.iter().find(|e| e.path == p).unwrap().sha256.clone()
    };
    assert_ne!(hash(&ea, "dataset.csv"), hash(&ec, "dataset.csv"));
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&small(), Some(dir.path()), false).unwrap();
    let manifest: Manifest = read_json(&dir.path().join(MANIFEST)).unwrap();
    let mut on_disk = Vec::new();
    walk(dir.path(), dir.path(), &mut on_disk);
    on_disk.retain(|p| p != MANIFEST);
    on_disk.sort();
    let listed: Vec<_> = manifest.files.iter().map(|e| e.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for e in &manifest.files {
        let (bytes, sha) = sha256_file(&dir.path().join(&e.path)).unwrap();
        assert_eq!((bytes, sha), (e.bytes, e.sha256.clone()), "{}", e.path);
    }
    for required in [
        "config.toml",
        "dataset.csv",
        "dataset.json",
        "model/model.json",
        "model/theta.csv",
        "spectrum.json",
        "spectrum.csv",
        "spectrum.svg",
        "oracle.json",
        "certificate.json",
        "summary.json",
        "trajectories/traj_000.csv",
    ] {
        assert!(listed.iter().any(|p| p == required), "{required}");
    }
    assert_eq!(manifest.threads, 1);
    assert_eq!(ExperimentConfig::from_toml_str(&manifest.config).unwrap(), small());
    assert_eq!(summary.prediction.terminal_errors.len(), 3);
    assert_eq!(summary.prediction.origin_fixed, Some(true));
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            walk(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
        }
    }
}

#[test]
fn strict_mode_rejects_inconclusive_certificates() {
    let mut cfg = small();
    cfg.certificate.epsilon = 0.5;
    cfg.certificate.norm_a = 1.0;
    let summary = run_pipeline(&cfg, None, false).unwrap();
    assert_eq!(summary.verdict, Verdict::Inconclusive);
    let err = run_pipeline(&cfg, None, true).unwrap_err();
    assert_eq!(err.exit_code(), exit::INCONCLUSIVE);
}

#[test]
fn plugin_certificate_reports_estimates() {
    let mut cfg = small();
    cfg.certificate.plugin = true;
    cfg.certificate.delta = Some(0.05);
    cfg.certificate.n_mc = 200;
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, Some(dir.path()), false).unwrap();
    let cert: serde_json::Value = read_json(&dir.path().join("certificate.json")).unwrap();
    assert_eq!(cert["mode"], "plugin_heuristic");
    assert!(cert["result"]["epsilon"].as_f64().unwrap() > 0.0);
    assert!(cert["result"]["norm_a_bound"].as_f64().unwrap() > 0.0);
    assert!(cert["constants"]["c_r"].as_f64().unwrap() > 0.0);
}

#[test]
fn subcommands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_path = d.join("small.toml");
    std::fs::write(&cfg_path, small().to_toml()).unwrap();
    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(d).output().unwrap();
        eprintln!("{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
    };

    assert_eq!(run(&["simulate", "--config", "small.toml", "--out", "ds.csv"]).0, 0);
    assert!(d.join("ds.csv").exists() && d.join("ds.json").exists());
    assert_eq!(run(&["fit", "--dataset", "ds.csv", "--config", "small.toml", "--out", "model"]).0, 0);
    assert_eq!(run(&["spectrum", "--model", "model", "--out", "spec.json", "--plots"]).0, 0);
    assert!(d.join("spec.csv").exists() && d.join("spec.svg").exists());

    let (code, stdout) = run(&["certify", "--spectrum", "spec.json", "--eps", "0", "--normA", "1"]);
    assert_eq!(code, 0);
    let cert: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(cert["result"]["verdict"], "CertifiedStable");
    let args = ["certify", "--spectrum", "spec.json", "--eps", "0.5", "--normA", "1", "--strict"];
    assert_eq!(run(&args).0, exit::INCONCLUSIVE);

    let (code, stdout) = run(&["predict", "--model", "model", "--x0", "0.2,-0.1", "--steps", "4"]);
    assert_eq!(code, 0);
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines[0], "t,xhat0,xhat1,ref0,ref1,error");
    assert_eq!(lines.len(), 6);

    let (code, stdout) = run(&["predict", "--model", "model", "--x0", "0,0", "--steps", "2"]);
    assert_eq!(code, 0);
    let last: Vec<f64> = stdout.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&last[1..3], &[0.0, 0.0]);

    assert_eq!(run(&["predict", "--model", "model", "--x0", "1,2,3"]).0, exit::CONFIG);
    assert_eq!(run(&["fit", "--dataset", "missing.csv", "--rank", "3", "--out", "m2"]).0, exit::CONFIG);
    assert_eq!(run(&["reproduce", "no-such-preset"]).0, exit::CONFIG);
    assert_eq!(run(&["fit", "--dataset", "ds.csv", "--rank", "5000", "--out", "m3"]).0, exit::CONFIG);
}

#[test]
fn reproduce_and_run_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, stdout) = {
        let o = bin().args(["print-preset", "linear-oracle"]).output().unwrap();
        (o.status.code().unwrap(), String::from_utf8(o.stdout).unwrap())
    };
    assert_eq!(code, 0);
    std::fs::write(d.join("lo.toml"), &stdout).unwrap();
    let a = bin().args(["reproduce", "linear-oracle", "--out"]).arg(d.join("a")).status().unwrap();
    let b = bin().args(["run", "--config"]).arg(d.join("lo.toml")).arg("--out").arg(d.join("b")).status().unwrap();
    assert!(a.success() && b.success());
    assert_eq!(manifest_entries(&d.join("a")).unwrap(), manifest_entries(&d.join("b")).unwrap());
}

#[test]
fn non_finite_trajectories_map_to_blow_up_exit() {
    let mut cfg = small();
    cfg.system = koopcert_core::SystemSpec::LinearMap {
        matrix: vec![vec![1e200, 0.0], vec![0.0, 1e200]],
    };
    match run_pipeline(&cfg, None, false) {
        Err(e) => assert!([exit::BLOW_UP, exit::CONFIG].contains(&e.exit_code()), "{e}"),
        Ok(s) => panic!("expected failure, got rho {}", s.spectral_radius),
    }
}
