//! Named experiment configurations reproduced by `koopcert reproduce`.

use koopcert_core::{Recursion, Ridge, SpectrumSource, SystemSpec};

use crate::config::{
    CertificateConfig, DomainConfig, ExperimentConfig, FitConfig, KernelConfig, KernelVariant,
    PredictConfig, SamplingConfig, Scale,
};

pub const PRESETS: [&str; 5] = [
    "vdp-stable",
    "vdp-unstable-local",
    "vdp-unstable-large",
    "vdp-wendland-only",
    "linear-oracle",
];

/// Rank used by the Van der Pol presets (1000 snapshot pairs).
pub const VDP_RANK: usize = 30;

/// Support of the radial factor in `linear-oracle`, about twenty box diameters.
pub const ORACLE_SIGMA: f64 = 60.0;

fn square(half: f64) -> DomainConfig {
    DomainConfig {
        lo: vec![-half, -half],
        hi: vec![half, half],
    }
}

fn van_der_pol(name: &str, mu: f64, half: f64, variant: KernelVariant) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 0,
        output: None,
        label: None,
        system: SystemSpec::VanDerPol { mu },
        domain: square(half),
        sampling: SamplingConfig {
            n_traj: 40,
            dt: 0.2,
            duration: 5.0,
        },
        kernel: KernelConfig {
            variant,
            k: 1,
            sigma: Scale::Auto,
        },
        fit: FitConfig {
            beta: Ridge::Auto,
            rank: VDP_RANK,
            spectrum: SpectrumSource::Koopman,
        },
        certificate: CertificateConfig::default(),
        predict: PredictConfig::default(),
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "vdp-stable" => van_der_pol(name, -1.0, 1.0, KernelVariant::Product),
        "vdp-unstable-local" => van_der_pol(name, 1.0, 0.3, KernelVariant::Product),
        "vdp-unstable-large" => van_der_pol(name, 1.0, 2.5, KernelVariant::Product),
        "vdp-wendland-only" => {
            let mut c = van_der_pol(name, -1.0, 1.0, KernelVariant::Wendland);
            c.label = Some("demonstration only: radial kernel without the linear factor".into());
            c
        }
        "linear-oracle" => ExperimentConfig {
            name: name.to_string(),
            seed: 0,
            output: None,
            label: None,
            system: SystemSpec::LinearMap {
                matrix: vec![vec![0.5, 0.0], vec![0.0, 0.8]],
            },
            domain: square(1.0),
            sampling: SamplingConfig {
                n_traj: 500,
                dt: 1.0,
                duration: 1.0,
            },
            kernel: KernelConfig {
                variant: KernelVariant::Product,
                k: 1,
                sigma: Scale::Value(ORACLE_SIGMA),
            },
            fit: FitConfig {
                beta: Ridge::Fixed(1e-8),
                rank: 30,
                spectrum: SpectrumSource::Koopman,
            },
            certificate: CertificateConfig::default(),
            predict: PredictConfig {
                steps: 10,
                random_states: 20,
                grid_per_axis: 0,
                recursion: Recursion::State,
            },
        },
        _ => return None,
    };
    Some(cfg)
}
