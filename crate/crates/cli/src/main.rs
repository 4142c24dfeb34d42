use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopcert_core::io::{
    read_dataset, read_model, read_spectrum_json, write_dataset, write_json, write_model,
    write_spectrum_csv, write_spectrum_json, write_spectrum_svg, write_trajectory_csv,
};
use koopcert_core::{
    bound_constants, certify_stability, fit, predict_trajectory, reference_trajectory,
    spectrum_from, KernelSpec, Recursion, Ridge, SpectrumSource,
};
use koopcert_cli::config::{KernelConfig, KernelVariant, Scale};
use koopcert_cli::error::{AtStage, CliError, Stage};
use koopcert_cli::pipeline::{self, CertificateMode, CertificateReport};
use koopcert_cli::{presets, run_pipeline, ExperimentConfig};

#[derive(Parser)]
#[command(name = "koopcert", version, about = "Kernel EDMD with spectral stability certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment file in TOML.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => lookup_preset(name)?,
            (None, None) => return Err(CliError::Config("pass --config or --preset".into())),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn lookup_preset(name: &str) -> Result<ExperimentConfig, CliError> {
    presets::preset(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset '{name}'; available: {}",
            presets::PRESETS.join(", ")
        ))
    })
}

#[derive(Subcommand)]
enum Command {
    /// Generate snapshot pairs and write them as CSV with a JSON sidecar.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a stored dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// Kernel and ridge settings; the flags below override them.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rank: Option<usize>,
        /// A number or "auto".
        #[arg(long)]
        beta: Option<String>,
        /// Radial support; a number or "auto".
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_variant)]
        kernel: Option<KernelVariant>,
        /// Model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the learned spectrum of a stored model.
    Spectrum {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "koopman", value_parser = parse_source)]
        source: SpectrumSource,
        /// Also write the eigenvalues as CSV and an SVG plot next to the JSON.
        #[arg(long)]
        plots: bool,
    },
    /// Evaluate the stability certificate for a stored spectrum.
    Certify {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long = "normA", alias = "norm-a", default_value_t = 0.0)]
        norm_a: f64,
        #[arg(long)]
        delta: Option<f64>,
        /// Heuristic plug-in estimates of eps and normA from the model.
        #[arg(long, requires_all = ["model", "delta"])]
        plugin: bool,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 5 when the verdict is inconclusive.
        #[arg(long)]
        strict: bool,
    },
    /// Iterate the learned predictor from an initial state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value = "state", value_parser = parse_recursion)]
        recursion: Recursion,
        /// Trajectory CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in experiment end to end.
    Reproduce {
        preset: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
    },
    /// Run an experiment file end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
    },
    /// Print a built-in experiment as TOML, or list them.
    PrintPreset { name: Option<String> },
}

fn parse_variant(s: &str) -> Result<KernelVariant, String> {
    match s {
        "linear" => Ok(KernelVariant::Linear),
        "wendland" => Ok(KernelVariant::Wendland),
        "product" => Ok(KernelVariant::Product),
        _ => Err(format!("expected linear, wendland or product, got '{s}'")),
    }
}

fn parse_source(s: &str) -> Result<SpectrumSource, String> {
    match s {
        "koopman" => Ok(SpectrumSource::Koopman),
        "koopman_dense" | "dense" => Ok(SpectrumSource::KoopmanDense),
        "theta" => Ok(SpectrumSource::Theta),
        _ => Err(format!("expected koopman, koopman_dense or theta, got '{s}'")),
    }
}

fn parse_recursion(s: &str) -> Result<Recursion, String> {
    s.parse::<Recursion>().map_err(|e| e.to_string())
}

fn parse_scale(flag: &str, s: &str) -> Result<Scale, CliError> {
    if s == "auto" {
        return Ok(Scale::Auto);
    }
    s.parse::<f64>()
        .map(Scale::Value)
        .map_err(|_| CliError::Config(format!("--{flag}: expected a number or 'auto', got '{s}'")))
}

fn output_err(e: std::io::Error) -> CliError {
    CliError::Stage { stage: Stage::Output, source: e.into() }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("{}-seed{}", cfg.name, cfg.seed)))
}

fn run_experiment(
    mut cfg: ExperimentConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
    strict: bool,
) -> Result<(), CliError> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dir = out.unwrap_or_else(|| default_out(&cfg));
    let summary = run_pipeline(&cfg, Some(&dir), strict);
    match &summary {
        Ok(s) => {
            if let Some(label) = &s.label {
                eprintln!("{}: {label}", s.name);
            }
            eprintln!(
                "{}: rho = {:.6}, verdict {:?}, median terminal error {:.3e}; artifacts in {}",
                s.name,
                s.spectral_radius,
                s.verdict,
                s.prediction.median_terminal_error,
                dir.display()
            );
        }
        Err(CliError::Inconclusive { margin }) => {
            eprintln!("inconclusive (margin {margin:.3e}); artifacts in {}", dir.display());
        }
        Err(_) => {}
    }
    summary.map(|_| ())
}

fn fit_command(
    dataset: &Path,
    config: Option<&Path>,
    rank: Option<usize>,
    beta: Option<String>,
    sigma: Option<String>,
    k: Option<usize>,
    variant: Option<KernelVariant>,
    out: &Path,
) -> Result<(), CliError> {
    let ds = read_dataset(dataset).at(Stage::Fit)?;
    let (mut kernel, mut ridge, mut r) = match config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            (cfg.kernel, cfg.fit.beta, Some(cfg.fit.rank))
        }
        None => (
            KernelConfig { variant: KernelVariant::Product, k: 1, sigma: Scale::Auto },
            Ridge::Auto,
            None,
        ),
    };
    if let Some(v) = variant {
        kernel.variant = v;
    }
    if let Some(k) = k {
        kernel.k = k;
    }
    if let Some(s) = sigma {
        kernel.sigma = parse_scale("sigma", &s)?;
    }
    if let Some(b) = beta {
        ridge = match parse_scale("beta", &b)? {
            Scale::Auto => Ridge::Auto,
            Scale::Value(v) => Ridge::Fixed(v),
        };
    }
    if rank.is_some() {
        r = rank;
    }
    let r = r.ok_or_else(|| CliError::Config("--rank: required without --config".into()))?;
    let spec: KernelSpec = kernel.resolve(ds.dim(), &ds.meta.state_bounds);
    let model = fit(&ds, &spec, ridge, r).at(Stage::Fit)?;
    write_model(&model, out).at(Stage::Output)?;
    eprintln!(
        "fitted n = {}, rank {} (effective {}), beta = {:.3e}",
        model.n(),
        model.rank,
        model.effective_rank,
        model.beta
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn certify_command(
    spectrum: &Path,
    eps: f64,
    norm_a: f64,
    delta: Option<f64>,
    plugin: bool,
    model: Option<&Path>,
    n_mc: usize,
    seed: u64,
    out: Option<&Path>,
    strict: bool,
) -> Result<(), CliError> {
    let report = read_spectrum_json(spectrum).at(Stage::Certify)?;
    let cert = if plugin {
        let model = read_model(model.expect("clap enforces --model")).at(Stage::Certify)?;
        let delta = delta.expect("clap enforces --delta");
        let constants = bound_constants(
            model.kernel.spec(),
            &model.dataset.meta.state_bounds,
            n_mc,
            model.rank,
            seed,
        )
        .at(Stage::Certify)?;
        let eps = koopcert_core::spectral::epsilon_for_samples(constants.sup_kappa, model.n(), delta);
        let norm_a = model.operator_norm().at(Stage::Certify)?;
        let result = certify_stability(&report, eps, norm_a, Some(delta)).at(Stage::Certify)?;
        CertificateReport {
            mode: CertificateMode::PluginHeuristic,
            result,
            error_bound: Some(constants.error_bound(norm_a, eps)),
            constants: Some(constants),
        }
    } else {
        CertificateReport {
            mode: CertificateMode::Given,
            result: certify_stability(&report, eps, norm_a, delta).at(Stage::Certify)?,
            constants: None,
            error_bound: None,
        }
    };
    match out {
        Some(path) => write_json(path, &cert).at(Stage::Output)?,
        None => print_json(&cert),
    }
    if strict && cert.result.verdict == koopcert_core::Verdict::Inconclusive {
        return Err(CliError::Inconclusive { margin: cert.result.margin });
    }
    Ok(())
}

fn predict_command(
    model: &Path,
    x0: &[f64],
    steps: usize,
    recursion: Recursion,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model = read_model(model).at(Stage::Predict)?;
    let meta = &model.dataset.meta;
    let mut traj = predict_trajectory(&model, x0, steps, recursion).at(Stage::Predict)?;
    match reference_trajectory(&meta.system, x0, meta.dt, steps) {
        Ok(reference) => traj = traj.with_reference(reference),
        Err(e) => log::warn!("no reference trajectory: {e}"),
    }
    if !traj.starved_steps.is_empty() {
        log::warn!("query left every kernel support at steps {:?}", traj.starved_steps);
    }
    match out {
        Some(path) => write_trajectory_csv(&traj, meta.dt, path).at(Stage::Output)?,
        None => {
            let tmp = std::env::temp_dir().join(format!("koopcert-predict-{}.csv", std::process::id()));
            write_trajectory_csv(&traj, meta.dt, &tmp).at(Stage::Output)?;
            let text = std::fs::read_to_string(&tmp).map_err(output_err)?;
            let _ = std::fs::remove_file(&tmp);
            print!("{text}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { source, out } => {
            let cfg = source.load()?;
            let ds = pipeline::simulate(&cfg)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(output_err)?;
            }
            write_dataset(&ds, &out).at(Stage::Output)?;
            eprintln!(
                "{} pairs from {} trajectories ({} aborted)",
                ds.len(),
                ds.meta.n_traj,
                ds.meta.aborted_trajectories
            );
            Ok(())
        }
        Command::Fit { dataset, config, rank, beta, sigma, k, kernel, out } => {
            fit_command(&dataset, config.as_deref(), rank, beta, sigma, k, kernel, &out)
        }
        Command::Spectrum { model, out, source, plots } => {
            let model = read_model(&model).at(Stage::Spectrum)?;
            let report = spectrum_from(&model, source).at(Stage::Spectrum)?;
            write_spectrum_json(&report, &out).at(Stage::Output)?;
            if plots {
                write_spectrum_csv(&report, &out.with_extension("csv")).at(Stage::Output)?;
                write_spectrum_svg(&report, &out.with_extension("svg")).at(Stage::Output)?;
            }
            eprintln!("spectral radius {:.6}", report.spectral_radius);
            Ok(())
        }
        Command::Certify { spectrum, eps, norm_a, delta, plugin, model, n_mc, seed, out, strict } => {
            certify_command(
                &spectrum,
                eps,
                norm_a,
                delta,
                plugin,
                model.as_deref(),
                n_mc,
                seed,
                out.as_deref(),
                strict,
            )
        }
        Command::Predict { model, x0, steps, recursion, out } => {
            predict_command(&model, &x0, steps, recursion, out.as_deref())
        }
        Command::Reproduce { preset, out, seed, strict } => {
            run_experiment(lookup_preset(&preset)?, out, seed, strict)
        }
        Command::Run { config, out, seed, strict } => {
            run_experiment(ExperimentConfig::load(&config)?, out, seed, strict)
        }
        Command::PrintPreset { name: Some(name) } => {
            print!("{}", lookup_preset(&name)?.to_toml());
            Ok(())
        }
        Command::PrintPreset { name: None } => {
            for name in presets::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    koopcert_core::set_threads(koopcert_cli::threads());
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
