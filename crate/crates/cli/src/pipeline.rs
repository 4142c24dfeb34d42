//! The end-to-end run, writing every artifact to disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use koopcert_core::io::{
    write_dataset, write_json, write_model, write_spectrum_csv, write_spectrum_json,
    write_spectrum_svg, write_trajectory_csv,
};
use koopcert_core::predict::euclid;
use koopcert_core::spectral::{
    discrete_linearization_eigenvalues, eigenvalues_sorted, epsilon_for_samples,
    semigroup_products,
};
use koopcert_core::{
    bound_constants, certify_stability, fit, generate_snapshots, predict_one_step,
    predict_trajectory, reference_trajectory, spectrum_from, BoundConstants, CertificateResult,
    Complex64, DomainBox, EdmdModel, Mat, SnapshotDataset, SpectrumReport, SystemSpec, Verdict,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{AtStage, CliError, Stage};

/// Seed offset for held-out initial states, kept apart from the training streams.
const HELD_OUT_SALT: u64 = 0x686f_6c64_6f75_74;

/// Semigroup products up to this order are compared with the learned spectrum.
const ORACLE_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMatch {
    pub re: f64,
    pub im: f64,
    /// Distance to the nearest learned eigenvalue.
    pub distance: f64,
}

/// Learned spectrum against the semigroup generated by the linearisation at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub generators: Vec<OracleMatch>,
    pub products: Vec<OracleMatch>,
    /// Largest distance from a learned eigenvalue of modulus above 0.1 to the semigroup.
    pub max_learned_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    Given,
    /// `ε` from the sample-complexity bound with the estimated sup of the
    /// kernel diagonal; `‖A‖` replaced by the norm of the learned operator.
    PluginHeuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub mode: CertificateMode,
    pub result: CertificateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<BoundConstants>,
    /// `√μ_{r+1}‖A‖ + c_r ε` when the constants were estimated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub steps: usize,
    pub initial_states: Vec<Vec<f64>>,
    pub terminal_errors: Vec<f64>,
    pub median_terminal_error: f64,
    pub median_one_step_error: f64,
    pub starved_trajectories: usize,
    /// The predictor maps the origin to itself exactly; `None` when the
    /// kernel does not vanish there.
    pub origin_fixed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub n: usize,
    pub rank: usize,
    pub effective_rank: usize,
    pub beta: f64,
    pub sigma: Option<f64>,
    pub spectral_radius: f64,
    pub eigenvalues_above_0_9: usize,
    pub verdict: Verdict,
    pub margin: f64,
    pub oracle: OracleReport,
    pub prediction: PredictionSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config: String,
    pub versions: Vec<(String, String)>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn versions() -> Vec<(String, String)> {
    vec![
        ("koopcert".into(), env!("CARGO_PKG_VERSION").into()),
        ("faer".into(), "0.24".into()),
        ("rand_chacha".into(), "0.9".into()),
    ]
}

pub fn sha256_file(path: &Path) -> std::io::Result<(u64, String)> {
    let bytes = fs::read(path)?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if path.strip_prefix(root).map(|p| p != Path::new(MANIFEST)).unwrap_or(true) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest itself.
pub fn manifest_entries(dir: &Path) -> std::io::Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files)?;
    files.sort();
    files
        .iter()
        .map(|p| {
            let (bytes, sha256) = sha256_file(p)?;
            let rel = p.strip_prefix(dir).unwrap_or(p);
            Ok(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes,
                sha256,
            })
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Eigenvalues of the one-step linearisation at the origin.
pub fn linearization_generators(system: &SystemSpec, dt: f64) -> koopcert_core::Result<Vec<Complex64>> {
    let jac = system.linearization();
    match system {
        SystemSpec::LinearMap { .. } => {
            let n = jac.len();
            eigenvalues_sorted(&Mat::from_fn(n, n, |i, j| jac[i][j]))
        }
        _ => discrete_linearization_eigenvalues(&jac, dt),
    }
}

pub fn oracle_report(
    system: &SystemSpec,
    dt: f64,
    report: &SpectrumReport,
) -> koopcert_core::Result<OracleReport> {
    let gens = linearization_generators(system, dt)?;
    let products = semigroup_products(&gens, ORACLE_ORDER);
    let matched = |z: &Complex64| OracleMatch {
        re: z.re,
        im: z.im,
        distance: report.distance_to(*z),
    };
    let max_learned_distance = report
        .eigenvalues
        .iter()
        .filter(|e| e.modulus() > 0.1)
        .map(|e| {
            products
                .iter()
                .map(|z| (z - e.complex()).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Ok(OracleReport {
        generators: gens.iter().map(matched).collect(),
        products: products.iter().map(matched).collect(),
        max_learned_distance,
    })
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SnapshotDataset, CliError> {
    let domain = cfg.domain_box()?;
    let s = &cfg.sampling;
    generate_snapshots(&cfg.system, &domain, s.n_traj, s.dt, s.duration, cfg.seed).at(Stage::Simulate)
}

pub fn fit_model(cfg: &ExperimentConfig, ds: &SnapshotDataset) -> Result<EdmdModel, CliError> {
    let spec = cfg.kernel.resolve(ds.dim(), &ds.meta.state_bounds);
    if cfg.fit.rank > ds.len() {
        return Err(CliError::Config(format!(
            "fit.rank: {} exceeds the {} snapshot pairs simulated",
            cfg.fit.rank,
            ds.len()
        )));
    }
    fit(ds, &spec, cfg.fit.beta, cfg.fit.rank).at(Stage::Fit)
}

pub fn certificate(
    cfg: &ExperimentConfig,
    model: &EdmdModel,
    report: &SpectrumReport,
) -> Result<CertificateReport, CliError> {
    let c = &cfg.certificate;
    if !c.plugin {
        let result = certify_stability(report, c.epsilon, c.norm_a, c.delta).at(Stage::Certify)?;
        return Ok(CertificateReport {
            mode: CertificateMode::Given,
            result,
            constants: None,
            error_bound: None,
        });
    }
    let delta = c.delta.ok_or_else(|| CliError::Config("certificate.delta: required".into()))?;
    let domain: &DomainBox = &model.dataset.meta.state_bounds;
    let constants =
        bound_constants(model.kernel.spec(), domain, c.n_mc, model.rank, cfg.seed).at(Stage::Certify)?;
    let epsilon = epsilon_for_samples(constants.sup_kappa, model.n(), delta);
    let norm_a = model.operator_norm().at(Stage::Certify)?;
    let result = certify_stability(report, epsilon, norm_a, Some(delta)).at(Stage::Certify)?;
    let error_bound = Some(constants.error_bound(norm_a, epsilon));
    Ok(CertificateReport {
        mode: CertificateMode::PluginHeuristic,
        result,
        constants: Some(constants),
        error_bound,
    })
}

/// Held-out initial states: a regular interior grid followed by uniform draws.
pub fn held_out_states(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let domain = cfg.domain_box()?;
    let d = domain.dim();
    let g = cfg.predict.grid_per_axis;
    let mut states = Vec::new();
    if g > 0 {
        let total = g.pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            let x = (0..d)
                .map(|i| {
                    let k = rem % g;
                    rem /= g;
                    domain.lo[i] + (k as f64 + 0.5) / g as f64 * (domain.hi[i] - domain.lo[i])
                })
                .collect();
            states.push(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ HELD_OUT_SALT);
    states.extend((0..cfg.predict.random_states).map(|_| domain.sample(&mut rng)));
    Ok(states)
}

fn predict_all(
    cfg: &ExperimentConfig,
    model: &EdmdModel,
    out: Option<&Path>,
) -> Result<PredictionSummary, CliError> {
    let steps = cfg.predict.steps;
    let dt = cfg.sampling.dt;
    let states = held_out_states(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("trajectories"))
            .map_err(|e| CliError::Stage { stage: Stage::Output, source: e.into() })?;
    }
    let mut terminal = Vec::new();
    let mut one_step = Vec::new();
    let mut starved = 0;
    for (i, x0) in states.iter().enumerate() {
        let reference = reference_trajectory(&cfg.system, x0, dt, steps).at(Stage::Predict)?;
        let traj = predict_trajectory(model, x0, steps, cfg.predict.recursion)
            .at(Stage::Predict)?
            .with_reference(reference);
        let errors = traj.errors.as_deref().unwrap_or_default();
        terminal.push(if traj.truncated { f64::INFINITY } else { errors[steps] });
        one_step.push(errors.get(1).copied().unwrap_or(f64::INFINITY));
        if !traj.starved_steps.is_empty() {
            starved += 1;
        }
        if let Some(dir) = out {
            let path = dir.join("trajectories").join(format!("traj_{i:03}.csv"));
            write_trajectory_csv(&traj, dt, &path).at(Stage::Output)?;
        }
    }
    let origin_fixed = if model.kernel.spec().vanishes_at_origin() {
        let zero = vec![0.0; model.dataset.dim()];
        let step = predict_one_step(model, &zero).at(Stage::Predict)?;
        Some(step.state.iter().all(|&v| v == 0.0))
    } else {
        None
    };
    Ok(PredictionSummary {
        steps,
        initial_states: states,
        median_terminal_error: median(&terminal),
        median_one_step_error: median(&one_step),
        terminal_errors: terminal,
        starved_trajectories: starved,
        origin_fixed,
    })
}

/// Median one-step error of `model` on the pairs of `held_out`.
pub fn held_out_one_step_error(model: &EdmdModel, held_out: &SnapshotDataset) -> koopcert_core::Result<f64> {
    let errors = held_out
        .xs
        .iter()
        .zip(&held_out.ys)
        .map(|(x, y)| predict_one_step(model, x).map(|p| euclid(&p.state, y)))
        .collect::<koopcert_core::Result<Vec<_>>>()?;
    Ok(median(&errors))
}

fn sigma_of(model: &EdmdModel) -> Option<f64> {
    use koopcert_core::KernelSpec;
    fn find(spec: &KernelSpec) -> Option<f64> {
        match spec {
            KernelSpec::Linear => None,
            KernelSpec::Wendland { sigma, .. } => Some(*sigma),
            KernelSpec::Product { factors } => factors.iter().find_map(find),
        }
    }
    find(model.kernel.spec())
}

/// Runs every stage; when `out` is given, writes all artifacts and the manifest there.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    strict: bool,
) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    cfg.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::Stage { stage: Stage::Output, source: e.into() })?;
        fs::write(dir.join("config.toml"), cfg.to_toml())
            .map_err(|e| CliError::Stage { stage: Stage::Output, source: e.into() })?;
    }

    log::info!("{}: simulating {} trajectories", cfg.name, cfg.sampling.n_traj);
    let ds = simulate(cfg)?;
    if let Some(dir) = out {
        write_dataset(&ds, &dir.join("dataset.csv")).at(Stage::Output)?;
    }

    log::info!("{}: fitting rank {} on {} pairs", cfg.name, cfg.fit.rank, ds.len());
    let model = fit_model(cfg, &ds)?;
    if let Some(dir) = out {
        write_model(&model, &dir.join("model")).at(Stage::Output)?;
    }

    let report = spectrum_from(&model, cfg.fit.spectrum).at(Stage::Spectrum)?;
    let oracle = oracle_report(&cfg.system, cfg.sampling.dt, &report).at(Stage::Spectrum)?;
    if let Some(dir) = out {
        write_spectrum_json(&report, &dir.join("spectrum.json")).at(Stage::Output)?;
        write_spectrum_csv(&report, &dir.join("spectrum.csv")).at(Stage::Output)?;
        write_spectrum_svg(&report, &dir.join("spectrum.svg")).at(Stage::Output)?;
        write_json(&dir.join("oracle.json"), &oracle).at(Stage::Output)?;
    }
    log::info!("{}: spectral radius {:.6}", cfg.name, report.spectral_radius);

    let cert = certificate(cfg, &model, &report)?;
    if let Some(dir) = out {
        write_json(&dir.join("certificate.json"), &cert).at(Stage::Output)?;
    }

    let prediction = predict_all(cfg, &model, out)?;

    let summary = RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        label: cfg.label.clone(),
        n: model.n(),
        rank: model.rank,
        effective_rank: model.effective_rank,
        beta: model.beta,
        sigma: sigma_of(&model),
        spectral_radius: report.spectral_radius,
        eigenvalues_above_0_9: report.count_above(0.9),
        verdict: cert.result.verdict,
        margin: cert.result.margin,
        oracle,
        prediction,
    };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &summary).at(Stage::Output)?;
        let files = manifest_entries(dir).map_err(|e| CliError::Stage { stage: Stage::Output, source: e.into() })?;
        let manifest = Manifest {
            name: cfg.name.clone(),
            config: cfg.to_toml(),
            versions: versions(),
            threads: crate::threads(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            files,
        };
        write_json(&dir.join(MANIFEST), &manifest).at(Stage::Output)?;
    }
    if strict && summary.verdict == Verdict::Inconclusive {
        return Err(CliError::Inconclusive { margin: summary.margin });
    }
    Ok(summary)
}
