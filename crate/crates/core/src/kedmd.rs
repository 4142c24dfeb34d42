//! Rank-constrained, Hilbert–Schmidt regularised kernel EDMD.
//!
//! The estimated Perron–Frobenius operator is
//! `Â* = Σ_ij θ_ij κ(y_i, ·) ⊗ κ(x_j, ·)`. Expanding the regression objective
//! in Gram coordinates gives
//!
//! ```text
//! J(Θ) = (1/n) tr((ΘG_X − I)ᵀ G_Y (ΘG_X − I)) + β tr(Θ G_X Θᵀ G_Y)
//! ```
//!
//! whose stationarity condition `G_Y [(ΘG_X − I) G_X + nβ Θ G_X] = 0` is met by
//! `Θ = (G_X + nβI)⁻¹`. The rank constraint is imposed by projecting onto the
//! leading `r` eigenvectors of `G_X` (kernel PCA):
//! `Θ̂ = V_r V_rᵀ (G_X + nβI)⁻¹ = V_r diag(1 / (λ_i + nβ)) V_rᵀ`.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::dynamics::SnapshotDataset;
use crate::error::{Error, Result};
use crate::kernel::{cross_gram, self_gram, GramMatrix, Kernel, KernelSpec};

/// Relative gap below which neighbouring Gram eigenvalues count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// Scale of the automatic ridge: `β = AUTO_RIDGE_SCALE · tr(G_X) / n`.
pub const AUTO_RIDGE_SCALE: f64 = 1e-8;

/// Ridge parameter choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ridge {
    Fixed(f64),
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
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

impl From<f64> for Ridge {
    fn from(b: f64) -> Self {
        Ridge::Fixed(b)
    }
}

impl Ridge {
    pub fn resolve(self, gx: &GramMatrix) -> f64 {
        match self {
            Ridge::Fixed(b) => b,
            Ridge::Auto => AUTO_RIDGE_SCALE * gx.trace() / gx.nrows() as f64,
        }
    }
}

/// A fitted kernel EDMD model. Immutable after [`fit`].
#[derive(Clone, Debug)]
pub struct EdmdModel {
    pub dataset: SnapshotDataset,
    pub kernel: Kernel,
    pub beta: f64,
    /// Requested rank.
    pub rank: usize,
    /// Rank actually used after including every eigenvalue tied at the cutoff.
    pub effective_rank: usize,
    /// Leading eigenvalues of `G_X`, descending, clamped at zero. Holds the
    /// full spectrum for small samples and a prefix past the cutoff otherwise.
    pub gram_eigenvalues: Vec<f64>,
    /// Leading eigenvectors `V_r` of `G_X` (n × effective_rank).
    pub basis: Mat<f64>,
    /// `1 / (λ_i + nβ)` for the leading eigenvalues.
    pub inv_shifted: Vec<f64>,
    /// Coefficient matrix `Θ̂`.
    pub theta: Mat<f64>,
    /// `G_X[i][j] = κ(x_i, x_j)`.
    pub gx: GramMatrix,
    /// `G_XY[j][a] = κ(x_j, y_a)`.
    pub gxy: GramMatrix,
    /// `G_Y[a][b] = κ(y_a, y_b)`.
    pub gy: GramMatrix,
    /// `Yᵀ Θ̂` (d × n), the one-step predictor weights.
    pub(crate) predictor: Mat<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub(crate) fn sym_eigen_desc(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let n = m.nrows();
    let s = evd.S().column_vector();
    let u = evd.U();
    let vals: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vecs = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((vals, vecs))
}

/// Gram size from which the leading eigenpairs are found by subspace iteration.
pub const PARTIAL_EIGEN_MIN_N: usize = 1500;

const SUBSPACE_MAX_ITERS: usize = 60;
const SUBSPACE_SEED: u64 = 0x6b65_646d_64;

/// Leading eigenpairs of a symmetric PSD matrix by randomized subspace
/// iteration with Rayleigh–Ritz extraction. Returns at least `need` pairs,
/// descending, or `None` when the iteration does not settle.
pub(crate) fn leading_eigenpairs(m: &Mat<f64>, need: usize) -> Result<Option<(Vec<f64>, Mat<f64>)>> {
    use rand::{Rng, SeedableRng};
    let n = m.nrows();
    let p = (need + (need / 2).max(16)).min(n);
    if need == 0 || p >= n {
        return Ok(None);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SUBSPACE_SEED);
    let omega = Mat::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let mut q = (m * &omega).qr().compute_thin_Q();
    let floor = 100.0 * n as f64 * f64::EPSILON;
    for _ in 0..SUBSPACE_MAX_ITERS {
        let z = m * &q;
        let t = q.transpose() * &z;
        let t = Mat::from_fn(p, p, |i, j| 0.5 * (t[(i, j)] + t[(j, i)]));
        let (theta, w) = sym_eigen_desc(&t)?;
        let top = theta[0].abs().max(f64::MIN_POSITIVE);
        let zw = &z * &w;
        let u = &q * &w;
        let converged = (0..p)
            .take_while(|&j| {
                let res = (0..n)
                    .map(|i| {
                        let r = zw[(i, j)] - theta[j] * u[(i, j)];
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt();
                res <= (1e-10 * theta[j].abs()).max(floor * top)
            })
            .count();
        if converged >= need {
            let vals = theta[..converged].to_vec();
            let vecs = Mat::from_fn(n, converged, |i, j| u[(i, j)]);
            return Ok(Some((vals, vecs)));
        }
        q = z.qr().compute_thin_Q();
    }
    Ok(None)
}

/// Leading `rank` eigenpairs of `G_X` (clamped at zero) plus the tie-extended cutoff.
fn truncated_gram_eigen(gx: &Mat<f64>, rank: usize) -> Result<(Vec<f64>, Mat<f64>, usize)> {
    let n = gx.nrows();
    if n >= PARTIAL_EIGEN_MIN_N && 4 * (rank + 1) <= n {
        if let Some((mut vals, vecs)) = leading_eigenpairs(gx, rank + 1)? {
            vals.iter_mut().for_each(|l| *l = l.max(0.0));
            let r_eff = tie_extended_rank(&vals, rank);
            if r_eff < vals.len() {
                return Ok((vals, vecs, r_eff));
            }
        }
        log::debug!("subspace iteration did not settle; using the dense eigensolver");
    }
    let (mut vals, vecs) = sym_eigen_desc(gx)?;
    vals.iter_mut().for_each(|l| *l = l.max(0.0));
    let r_eff = tie_extended_rank(&vals, rank);
    Ok((vals, vecs, r_eff))
}

/// Cutoff rank after extending a tie at position `rank`.
pub(crate) fn tie_extended_rank(eigs: &[f64], rank: usize) -> usize {
    let scale = eigs.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let mut r = rank;
    while r < eigs.len() && (eigs[r - 1] - eigs[r]).abs() <= TIE_RTOL * scale {
        r += 1;
    }
    r
}

/// Fits `Θ̂` for the given kernel, ridge `β` and rank `r`.
pub fn fit(
    dataset: &SnapshotDataset,
    kernel: &KernelSpec,
    beta: impl Into<Ridge>,
    rank: usize,
) -> Result<EdmdModel> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!(
            "rank must lie in 1..={n}, got {rank}"
        )));
    }
    let kernel = Kernel::new(kernel.clone())?;
    if let Some(d) = kernel.spec().dim() {
        if d != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                got: d,
            });
        }
    }
    let gx = self_gram(&kernel, &dataset.xs)?;
    let beta = beta.into().resolve(&gx);
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge parameter must be nonnegative, got {beta}"
        )));
    }

    let (eigs, vecs, r_eff) = truncated_gram_eigen(&gx.entries, rank)?;

    let shift = n as f64 * beta;
    if beta == 0.0 {
        let floor = n as f64 * f64::EPSILON * eigs[0].max(f64::MIN_POSITIVE);
        if eigs[..r_eff].iter().any(|&l| l <= floor) {
            return Err(Error::SingularGram);
        }
    }
    let inv_shifted: Vec<f64> = eigs[..r_eff].iter().map(|l| 1.0 / (l + shift)).collect();
    let basis = Mat::from_fn(n, r_eff, |i, j| vecs[(i, j)]);
    let scaled = Mat::from_fn(n, r_eff, |i, j| basis[(i, j)] * inv_shifted[j]);
    let theta = &scaled * basis.transpose();

    let gxy = cross_gram(&kernel, &dataset.xs, &dataset.ys)?;
    let gy = self_gram(&kernel, &dataset.ys)?;
    let d = dataset.dim();
    let ymat = Mat::from_fn(n, d, |i, j| dataset.ys[i][j]);
    let predictor = ymat.transpose() * &theta;

    Ok(EdmdModel {
        dataset: dataset.clone(),
        kernel,
        beta,
        rank,
        effective_rank: r_eff,
        gram_eigenvalues: eigs,
        basis,
        inv_shifted,
        theta,
        gx,
        gxy,
        gy,
        predictor,
    })
}

impl EdmdModel {
    pub fn n(&self) -> usize {
        self.dataset.len()
    }

    /// `K = Θ̂ G_XY`, the matrix of `Â*` on `span{κ(y_a, ·)}`.
    pub fn koopman_matrix(&self) -> Mat<f64> {
        &self.theta * &self.gxy.entries
    }

    /// `diag(1/(λ+nβ)) V_rᵀ G_XY V_r`: shares the nonzero spectrum of `K`
    /// since `K = V_r · (diag(·) V_rᵀ G_XY)`.
    pub fn reduced_koopman_matrix(&self) -> Mat<f64> {
        let proj = self.basis.transpose() * &self.gxy.entries * &self.basis;
        Mat::from_fn(self.effective_rank, self.effective_rank, |i, j| {
            self.inv_shifted[i] * proj[(i, j)]
        })
    }

    /// `‖V_r V_rᵀ − Θ̂(G_X + nβI)‖_F`.
    pub fn stationarity_residual(&self) -> f64 {
        let n = self.n();
        let shift = n as f64 * self.beta;
        let shifted = Mat::from_fn(n, n, |i, j| {
            self.gx.entries[(i, j)] + if i == j { shift } else { 0.0 }
        });
        let lhs = &self.basis * self.basis.transpose();
        let rhs = &self.theta * &shifted;
        (&lhs - &rhs).norm_l2()
    }

    /// Regression objective evaluated at the fitted coefficients.
    pub fn fitted_objective(&self) -> f64 {
        objective(self, &self.theta)
    }

    /// `‖Â*‖` on the RKHS: the square root of the largest eigenvalue of
    /// `Θ̂ G_X Θ̂ᵀ G_Y`, computed through its `r × r` compression.
    pub fn operator_norm(&self) -> Result<f64> {
        let r = self.effective_rank;
        let w: Vec<f64> = (0..r)
            .map(|i| (self.gram_eigenvalues[i] * self.inv_shifted[i] * self.inv_shifted[i]).sqrt())
            .collect();
        let proj = self.basis.transpose() * &self.gy.entries * &self.basis;
        let m = Mat::from_fn(r, r, |i, j| w[i] * 0.5 * (proj[(i, j)] + proj[(j, i)]) * w[j]);
        let (vals, _) = sym_eigen_desc(&m)?;
        Ok(vals.first().copied().unwrap_or(0.0).max(0.0).sqrt())
    }

    /// One-step predictor weights `Yᵀ Θ̂`.
    pub fn predictor_weights(&self) -> &Mat<f64> {
        &self.predictor
    }
}

/// Gram-coordinate expansion of the regularised regression objective at `theta`.
pub fn objective(model: &EdmdModel, theta: &Mat<f64>) -> f64 {
    let n = model.n();
    let gx = &model.gx.entries;
    let gy = &model.gy.entries;
    let tg = theta * gx;
    let resid = Mat::from_fn(n, n, |i, j| tg[(i, j)] - if i == j { 1.0 } else { 0.0 });
    let fit_term = trace_of_product(&(resid.transpose() * gy), &resid) / n as f64;
    let hs_term = trace_of_product(&(&tg * theta.transpose()), gy);
    fit_term + model.beta * hs_term
}

/// `tr(AB)` without forming the product.
fn trace_of_product(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
