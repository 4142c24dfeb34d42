//! Learned spectrum and the stability certificate built on it.

use faer::Mat;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DomainBox;
use crate::error::{Error, Result};
use crate::kedmd::{sym_eigen_desc, EdmdModel};
use crate::kernel::{self_gram, Kernel, KernelSpec};

/// Eigenvalues with modulus above this count towards the effective rank.
pub const EFFECTIVE_RANK_CUTOFF: f64 = 1e-10;

/// Relative tolerance used to merge numerically equal covariance eigenvalues.
pub const DISTINCT_RTOL: f64 = 1e-9;

/// Smallest usable `μ_r` for the error-bound constants.
pub const MU_FLOOR: f64 = 1e-12;

/// Which matrix the eigenvalues are taken from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSource {
    /// `K = Θ̂ G_XY` through its `r × r` compression (nonzero spectrum only).
    #[default]
    Koopman,
    /// `K = Θ̂ G_XY` as a dense `n × n` matrix.
    KoopmanDense,
    /// The coefficient matrix `Θ̂` itself.
    Theta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl From<Complex64> for Eigenvalue {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Sorted by modulus, descending.
    pub eigenvalues: Vec<Eigenvalue>,
    pub spectral_radius: f64,
    pub effective_rank: usize,
    pub source: SpectrumSource,
    pub kernel: KernelSpec,
    pub beta: f64,
    pub rank: usize,
    pub n: usize,
}

impl SpectrumReport {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(Eigenvalue::modulus).collect()
    }

    /// Distance from `target` to the nearest reported eigenvalue.
    pub fn distance_to(&self, target: Complex64) -> f64 {
        self.eigenvalues
            .iter()
            .map(|e| (e.complex() - target).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn count_above(&self, modulus: f64) -> usize {
        self.eigenvalues.iter().filter(|e| e.modulus() > modulus).count()
    }
}

/// Dense eigenvalues of a real square matrix, sorted by modulus descending.
pub fn eigenvalues_sorted(m: &Mat<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals = m
        .eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    if vals.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    vals.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    Ok(vals)
}

/// Spectrum of the learned operator from the default source.
pub fn spectrum(model: &EdmdModel) -> Result<SpectrumReport> {
    spectrum_from(model, SpectrumSource::Koopman)
}

pub fn spectrum_from(model: &EdmdModel, source: SpectrumSource) -> Result<SpectrumReport> {
    let matrix = match source {
        SpectrumSource::Koopman => model.reduced_koopman_matrix(),
        SpectrumSource::KoopmanDense => model.koopman_matrix(),
        SpectrumSource::Theta => model.theta.clone(),
    };
    let vals = eigenvalues_sorted(&matrix)?;
    let spectral_radius = vals.first().map(|z| z.norm()).unwrap_or(0.0);
    let effective_rank = vals.iter().filter(|z| z.norm() > EFFECTIVE_RANK_CUTOFF).count();
    Ok(SpectrumReport {
        eigenvalues: vals.into_iter().map(Eigenvalue::from).collect(),
        spectral_radius,
        effective_rank,
        source,
        kernel: model.kernel.spec().clone(),
        beta: model.beta,
        rank: model.effective_rank,
        n: model.n(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    CertifiedStable,
    Inconclusive,
    SpectralRadiusExceedsOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateResult {
    pub verdict: Verdict,
    /// `1 − (|λ₁| + (ε + 2‖A‖)ε)`.
    pub margin: f64,
    pub spectral_radius: f64,
    pub epsilon: f64,
    pub norm_a_bound: f64,
    pub delta: Option<f64>,
}

/// `(η + 2‖A‖)η`, the bound on `‖A*A − Â*Â‖` when `‖A − Â‖ ≤ η`.
pub fn gram_perturbation_bound(norm_a: f64, eta: f64) -> f64 {
    (eta + 2.0 * norm_a) * eta
}

/// Evaluates `|λ₁(Â)| + (ε + 2‖A‖)ε < 1`.
pub fn certify_stability(
    report: &SpectrumReport,
    epsilon: f64,
    norm_a_bound: f64,
    delta: Option<f64>,
) -> Result<CertificateResult> {
    certify_radius(report.spectral_radius, epsilon, norm_a_bound, delta)
}

pub fn certify_radius(
    spectral_radius: f64,
    epsilon: f64,
    norm_a_bound: f64,
    delta: Option<f64>,
) -> Result<CertificateResult> {
    for (name, v) in [
        ("spectral radius", spectral_radius),
        ("epsilon", epsilon),
        ("norm bound", norm_a_bound),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    if let Some(d) = delta {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {d}")));
        }
    }
    let margin = 1.0 - (spectral_radius + gram_perturbation_bound(norm_a_bound, epsilon));
    let verdict = if spectral_radius > 1.0 {
        Verdict::SpectralRadiusExceedsOne
    } else if margin > 0.0 {
        Verdict::CertifiedStable
    } else {
        Verdict::Inconclusive
    };
    Ok(CertificateResult {
        verdict,
        margin,
        spectral_radius,
        epsilon,
        norm_a_bound,
        delta,
    })
}

/// Smallest `n ≥ 1` with `n ≥ 8 M² ε⁻² ln(4/δ)`.
pub fn sample_complexity(sup_kappa: f64, epsilon: f64, delta: f64) -> Result<u64> {
    if !(sup_kappa > 0.0 && sup_kappa.is_finite()) {
        return Err(Error::InvalidArgument("M_kappa must be positive".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    let bound = 8.0 * sup_kappa * sup_kappa / (epsilon * epsilon) * (4.0 / delta).ln();
    Ok(bound.ceil().max(1.0) as u64)
}

/// The `ε` reached by `n` samples: inverse of [`sample_complexity`].
pub fn epsilon_for_samples(sup_kappa: f64, n: usize, delta: f64) -> f64 {
    (8.0 * sup_kappa * sup_kappa * (4.0 / delta).ln() / n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Monte Carlo estimate of `∫ κ(x, x) dx`.
    pub m_kappa: f64,
    /// Sup of `κ(x, x)` over the box: analytic when available, else the sampled max.
    pub sup_kappa: f64,
    /// Largest `κ(x, x)` among the Monte Carlo points.
    pub sup_kappa_sampled: f64,
    pub sup_is_analytic: bool,
    /// Eigenvalues of the sampled covariance operator (Gram / n_mc), descending.
    pub mu: Vec<f64>,
    /// Distinct values of `mu`, descending.
    pub mu_distinct: Vec<f64>,
    pub rank: usize,
    pub gamma_r: f64,
    pub c_r: f64,
    pub volume: f64,
}

impl BoundConstants {
    /// `√μ_{r+1} ‖A‖ + c_r ε`.
    pub fn error_bound(&self, norm_a: f64, epsilon: f64) -> f64 {
        let tail = self.mu_distinct.get(self.rank).copied().unwrap_or(0.0);
        tail.sqrt() * norm_a + self.c_r * epsilon
    }
}

/// `sup_{x ∈ box} κ(x, x)` in closed form for linear and Wendland factors.
pub fn analytic_sup_diagonal(kernel: &KernelSpec, domain: &DomainBox) -> Option<f64> {
    match kernel {
        KernelSpec::Linear => Some(
            domain
                .lo
                .iter()
                .zip(&domain.hi)
                .map(|(l, h)| (l * l).max(h * h))
                .sum(),
        ),
        KernelSpec::Wendland { .. } => Kernel::new(kernel.clone()).ok()?.radial_diagonal(),
        KernelSpec::Product { factors } => {
            // Every factor's diagonal is maximised at the same corner (radial
            // factors are constant on the diagonal).
            factors
                .iter()
                .map(|f| analytic_sup_diagonal(f, domain))
                .product()
        }
    }
}

fn distinct_desc(values: &[f64]) -> Vec<f64> {
    let scale = values.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let mut out: Vec<f64> = Vec::new();
    for &v in values {
        match out.last() {
            Some(&last) if (last - v).abs() <= DISTINCT_RTOL * scale => {}
            _ => out.push(v),
        }
    }
    out
}

/// Monte Carlo estimates of the constants entering the learning-error bound.
pub fn bound_constants(
    kernel: &KernelSpec,
    domain: &DomainBox,
    n_mc: usize,
    rank: usize,
    seed: u64,
) -> Result<BoundConstants> {
    domain.validate()?;
    if rank == 0 || n_mc < rank + 1 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= rank < n_mc, got rank {rank}, n_mc {n_mc}"
        )));
    }
    let k = Kernel::new(kernel.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_mc).map(|_| domain.sample(&mut rng)).collect();
    let diag: Vec<f64> = points.iter().map(|p| k.eval_unchecked(p, p)).collect();
    let volume = domain.volume();
    let mean_diag = diag.iter().sum::<f64>() / n_mc as f64;
    let m_kappa = mean_diag * volume;
    let sup_sampled = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let analytic = analytic_sup_diagonal(kernel, domain);

    let gram = self_gram(&k, &points)?;
    let (vals, _) = sym_eigen_desc(&gram.entries)?;
    let mu: Vec<f64> = vals.iter().map(|v| (v / n_mc as f64).max(0.0)).collect();
    let mu_distinct = distinct_desc(&mu);
    if mu_distinct.len() < rank + 1 {
        return Err(Error::UnusableRank { rank, mu_r: 0.0 });
    }
    let mu_r = mu_distinct[rank - 1];
    if mu_r < MU_FLOOR {
        return Err(Error::UnusableRank { rank, mu_r });
    }
    let gamma_r = (0..rank)
        .map(|j| 0.5 * (mu_distinct[j] - mu_distinct[j + 1]))
        .fold(f64::INFINITY, f64::min);
    let c_r = mu_r.powf(-0.5)
        + (rank as f64 + 1.0) / (mu_r * gamma_r) * (1.0 + m_kappa) * m_kappa.max(0.0).sqrt();

    Ok(BoundConstants {
        m_kappa,
        sup_kappa: analytic.unwrap_or(sup_sampled),
        sup_kappa_sampled: sup_sampled,
        sup_is_analytic: analytic.is_some(),
        mu,
        mu_distinct,
        rank,
        gamma_r,
        c_r,
        volume,
    })
}

/// All products `Π λ_i^{α_i}` with `1 ≤ |α| ≤ max_order`.
pub fn semigroup_products(generators: &[Complex64], max_order: usize) -> Vec<Complex64> {
    fn rec(
        gens: &[Complex64],
        start: usize,
        left: usize,
        acc: Complex64,
        depth: usize,
        out: &mut Vec<Complex64>,
    ) {
        if depth > 0 {
            out.push(acc);
        }
        if left == 0 {
            return;
        }
        for i in start..gens.len() {
            rec(gens, i, left - 1, acc * gens[i], depth + 1, out);
        }
    }
    let mut out = Vec::new();
    rec(generators, 0, max_order, Complex64::new(1.0, 0.0), 0, &mut out);
    out
}

/// Eigenvalues of the time-`dt` linearisation of a continuous system at the origin.
pub fn discrete_linearization_eigenvalues(jacobian: &[Vec<f64>], dt: f64) -> Result<Vec<Complex64>> {
    let n = jacobian.len();
    let m = Mat::from_fn(n, n, |i, j| jacobian[i][j]);
    Ok(eigenvalues_sorted(&m)?
        .into_iter()
        .map(|z| (z * dt).exp())
        .collect())
}
