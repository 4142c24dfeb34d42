//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use koopcert_core::{DomainBox, KernelSpec, Recursion, Ridge, SpectrumSource, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Free-form label copied into the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub system: SystemSpec,
    pub domain: DomainConfig,
    pub sampling: SamplingConfig,
    pub kernel: KernelConfig,
    pub fit: FitConfig,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_traj: usize,
    pub dt: f64,
    pub duration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Linear,
    Wendland,
    Product,
}

/// Radial support: a number, or `"auto"` for the diameter of the sampled states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Value(f64),
    #[default]
    #[serde(with = "auto_str")]
    Auto,
}

mod auto_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{s}\""
            )))
        }
    }
}

fn default_k() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub sigma: Scale,
}

impl KernelConfig {
    /// Concrete kernel for `dim`-dimensional states spread over `states`.
    pub fn resolve(&self, dim: usize, states: &DomainBox) -> KernelSpec {
        let sigma = match self.sigma {
            Scale::Value(s) => s,
            Scale::Auto => states.diameter(),
        };
        match self.variant {
            KernelVariant::Linear => KernelSpec::Linear,
            KernelVariant::Wendland => KernelSpec::Wendland {
                dim,
                k: self.k,
                sigma,
            },
            KernelVariant::Product => KernelSpec::linear_wendland(dim, self.k, sigma),
        }
    }
}

fn default_beta() -> Ridge {
    Ridge::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_beta")]
    pub beta: Ridge,
    pub rank: usize,
    #[serde(default)]
    pub spectrum: SpectrumSource,
}

fn default_n_mc() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub norm_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Replace `epsilon` and `norm_a` with data-driven plug-in estimates.
    #[serde(default)]
    pub plugin: bool,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            norm_a: 0.0,
            delta: None,
            plugin: false,
            n_mc: default_n_mc(),
        }
    }
}

fn default_steps() -> usize {
    25
}

fn default_random_states() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Held-out initial states drawn uniformly from the domain.
    #[serde(default = "default_random_states")]
    pub random_states: usize,
    /// Additional held-out initial states on a regular grid, per axis.
    #[serde(default)]
    pub grid_per_axis: usize,
    #[serde(default)]
    pub recursion: Recursion,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            random_states: default_random_states(),
            grid_per_axis: 0,
            recursion: Recursion::State,
        }
    }
}

fn invalid(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("{path}: {}", msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn domain_box(&self) -> Result<DomainBox, CliError> {
        DomainBox::new(self.domain.lo.clone(), self.domain.hi.clone())
            .map_err(|e| invalid("domain", e.to_string()))
    }

    /// Checks every field against the preconditions of the stage it feeds.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        self.system
            .validate()
            .map_err(|e| invalid("system", e.to_string()))?;
        let dim = self.system.dim();
        if self.domain.lo.len() != dim || self.domain.hi.len() != dim {
            return Err(invalid(
                "domain",
                format!("lo and hi must have {dim} entries to match the system"),
            ));
        }
        for (i, (lo, hi)) in self.domain.lo.iter().zip(&self.domain.hi).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(
                    &format!("domain.lo[{i}]/domain.hi[{i}]"),
                    format!("need finite lo < hi, got {lo} and {hi}"),
                ));
            }
        }
        let s = &self.sampling;
        if s.n_traj == 0 {
            return Err(invalid("sampling.n_traj", "must be at least 1"));
        }
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return Err(invalid("sampling.dt", format!("must be positive, got {}", s.dt)));
        }
        if !(s.duration.is_finite() && s.duration >= s.dt) {
            return Err(invalid(
                "sampling.duration",
                format!("must be at least dt = {}, got {}", s.dt, s.duration),
            ));
        }
        if self.kernel.variant != KernelVariant::Linear {
            if let Scale::Value(sigma) = self.kernel.sigma {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(invalid("kernel.sigma", format!("must be positive, got {sigma}")));
                }
            }
        }
        let f = &self.fit;
        if let Ridge::Fixed(b) = f.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(invalid("fit.beta", format!("must be nonnegative, got {b}")));
            }
        }
        let steps = koopcert_core::dynamics::samples_per_trajectory(s.dt, s.duration);
        let max_pairs = s.n_traj * steps;
        if f.rank == 0 || f.rank > max_pairs {
            return Err(invalid(
                "fit.rank",
                format!("must lie in 1..={max_pairs} (number of snapshot pairs)"),
            ));
        }
        let c = &self.certificate;
        for (name, v) in [("certificate.epsilon", c.epsilon), ("certificate.norm_a", c.norm_a)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if let Some(d) = c.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid("certificate.delta", format!("must lie in (0, 1), got {d}")));
            }
        }
        if c.plugin {
            if c.delta.is_none() {
                return Err(invalid("certificate.delta", "required when plugin = true"));
            }
            if c.n_mc < f.rank + 1 {
                return Err(invalid(
                    "certificate.n_mc",
                    format!("must exceed fit.rank = {}", f.rank),
                ));
            }
        }
        let p = &self.predict;
        if p.steps == 0 {
            return Err(invalid("predict.steps", "must be at least 1"));
        }
        Ok(())
    }
}
