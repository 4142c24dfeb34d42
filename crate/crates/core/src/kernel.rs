//! Kernel evaluation and Gram assembly.

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wendland::{wendland_rho, PiecewisePoly1D};

/// Entries with magnitude below this are stored as exact zeros.
pub const GRAM_ZERO_CUTOFF: f64 = 1e-15;

const MAX_PRODUCT_DEPTH: usize = 2;

/// Declarative kernel description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `κ(x, y) = xᵀy`.
    Linear,
    /// `κ(x, y) = ρ(|x - y| / σ)` with `ρ` the Wendland profile for `(dim, k)`.
    Wendland { dim: usize, k: usize, sigma: f64 },
    /// Pointwise product of the factor kernels.
    Product { factors: Vec<KernelSpec> },
}

impl KernelSpec {
    /// The linear–Wendland product kernel.
    pub fn linear_wendland(dim: usize, k: usize, sigma: f64) -> Self {
        KernelSpec::Product {
            factors: vec![KernelSpec::Linear, KernelSpec::Wendland { dim, k, sigma }],
        }
    }

    /// State dimension fixed by the spec, if any factor fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            KernelSpec::Linear => None,
            KernelSpec::Wendland { dim, .. } => Some(*dim),
            KernelSpec::Product { factors } => factors.iter().find_map(KernelSpec::dim),
        }
    }

    /// `true` if a linear factor multiplies every term, so the kernel vanishes at the origin.
    pub fn vanishes_at_origin(&self) -> bool {
        match self {
            KernelSpec::Linear => true,
            KernelSpec::Wendland { .. } => false,
            KernelSpec::Product { factors } => factors.iter().any(KernelSpec::vanishes_at_origin),
        }
    }

    /// Returns a copy with every Wendland support scale set to `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        match self {
            KernelSpec::Linear => KernelSpec::Linear,
            KernelSpec::Wendland { dim, k, .. } => KernelSpec::Wendland {
                dim: *dim,
                k: *k,
                sigma,
            },
            KernelSpec::Product { factors } => KernelSpec::Product {
                factors: factors.iter().map(|f| f.with_sigma(sigma)).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(1)?;
        let mut dims = Vec::new();
        self.collect_dims(&mut dims);
        if let Some(&d0) = dims.first() {
            if let Some(&d) = dims.iter().find(|&&d| d != d0) {
                return Err(Error::DimensionMismatch { expected: d0, got: d });
            }
        }
        Ok(())
    }

    fn validate_at(&self, depth: usize) -> Result<()> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Wendland { dim, sigma, .. } => {
                if *dim == 0 {
                    return Err(Error::InvalidArgument("Wendland dim must be >= 1".into()));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "Wendland sigma must be positive and finite, got {sigma}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidArgument("product kernel has no factors".into()));
                }
                if depth > MAX_PRODUCT_DEPTH {
                    return Err(Error::InvalidArgument(format!(
                        "product kernels nest at most {MAX_PRODUCT_DEPTH} deep"
                    )));
                }
                factors.iter().try_for_each(|f| f.validate_at(depth + 1))
            }
        }
    }

    fn collect_dims(&self, out: &mut Vec<usize>) {
        match self {
            KernelSpec::Linear => {}
            KernelSpec::Wendland { dim, .. } => out.push(*dim),
            KernelSpec::Product { factors } => factors.iter().for_each(|f| f.collect_dims(out)),
        }
    }
}

/// Evaluation-ready kernel: the spec with its Wendland profiles built.
#[derive(Clone, Debug)]
pub struct Kernel {
    spec: KernelSpec,
    node: Node,
}

#[derive(Clone, Debug)]
enum Node {
    Linear,
    Radial {
        profile: PiecewisePoly1D,
        inv_sigma: f64,
    },
    Product(Vec<Node>),
}

impl Node {
    fn build(spec: &KernelSpec) -> Result<Self> {
        Ok(match spec {
            KernelSpec::Linear => Node::Linear,
            KernelSpec::Wendland { dim, k, sigma } => Node::Radial {
                profile: wendland_rho(*dim, *k)?,
                inv_sigma: 1.0 / sigma,
            },
            KernelSpec::Product { factors } => {
                Node::Product(factors.iter().map(Node::build).collect::<Result<_>>()?)
            }
        })
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Node::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            Node::Radial { profile, inv_sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                profile.eval_unchecked(d2.sqrt() * inv_sigma)
            }
            Node::Product(factors) => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.eval(x, y);
                    if acc == 0.0 {
                        break;
                    }
                }
                acc
            }
        }
    }

    fn diag_at_origin(&self) -> Option<f64> {
        match self {
            Node::Radial { profile, .. } => Some(profile.eval_unchecked(0.0)),
            _ => None,
        }
    }
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let node = Node::build(&spec)?;
        Ok(Self { spec, node })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Checks that `x` and `y` have the dimension the spec implies.
    pub fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if let Some(d) = self.spec.dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x, y)?;
        Ok(self.node.eval(x, y))
    }

    /// Evaluation without the dimension check, for hot loops over validated points.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.node.eval(x, y)
    }

    /// `ρ(0)` for a bare radial kernel.
    pub fn radial_diagonal(&self) -> Option<f64> {
        self.node.diag_at_origin()
    }

    /// `k(x)_j = κ(points_j, x)`.
    pub fn sections(&self, points: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        points.iter().map(|p| self.node.eval(p, x)).collect()
    }
}

/// One-off evaluation from a spec.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Kernel::new(spec.clone())?.eval(x, y)
}

/// Matrix of kernel evaluations `entries[i][j] = κ(rows[i], cols[j])`.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub entries: Mat<f64>,
    pub row_points: Vec<Vec<f64>>,
    pub col_points: Vec<Vec<f64>>,
    pub symmetric: bool,
}

impl GramMatrix {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn trace(&self) -> f64 {
        (0..self.nrows().min(self.ncols()))
            .map(|i| self.entries[(i, i)])
            .sum()
    }

    /// Smallest eigenvalue of a square self-Gram.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if !self.symmetric {
            return Err(Error::InvalidArgument(
                "min eigenvalue requested for a non-symmetric Gram".into(),
            ));
        }
        let vals = self
            .entries
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// PSD check relative to `trace / n`.
    pub fn is_psd(&self, rel_tol: f64) -> Result<bool> {
        let n = self.nrows() as f64;
        let scale = (self.trace() / n).abs().max(f64::MIN_POSITIVE);
        Ok(self.min_eigenvalue()? >= -rel_tol * scale)
    }
}

fn check_points(kernel: &Kernel, points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyPointSet)?;
    let d = first.len();
    for p in points {
        kernel.check_dims(first, p)?;
    }
    Ok(d)
}

#[inline]
fn snap(v: f64) -> f64 {
    if v.abs() < GRAM_ZERO_CUTOFF {
        0.0
    } else {
        v
    }
}

/// Self-Gram `[κ(x_i, x_j)]`, assembled from the upper triangle so it is exactly symmetric.
pub fn self_gram(kernel: &Kernel, points: &[Vec<f64>]) -> Result<GramMatrix> {
    check_points(kernel, points)?;
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| snap(kernel.eval_unchecked(&points[i], &points[j])))
                .collect()
        })
        .collect();
    let mut entries = Mat::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            entries[(i, i + off)] = v;
            entries[(i + off, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        row_points: points.to_vec(),
        col_points: points.to_vec(),
        symmetric: true,
    })
}

/// Cross-Gram `[κ(rows_i, cols_j)]`.
pub fn cross_gram(kernel: &Kernel, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Result<GramMatrix> {
    let dr = check_points(kernel, rows)?;
    let dc = check_points(kernel, cols)?;
    if dr != dc {
        return Err(Error::DimensionMismatch {
            expected: dr,
            got: dc,
        });
    }
    let vals: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|x| cols.iter().map(|y| snap(kernel.eval_unchecked(x, y))).collect())
        .collect();
    let entries = Mat::from_fn(rows.len(), cols.len(), |i, j| vals[i][j]);
    Ok(GramMatrix {
        entries,
        row_points: rows.to_vec(),
        col_points: cols.to_vec(),
        symmetric: false,
    })
}

/// Gram assembly; dispatches to [`self_gram`] when both point lists are identical.
pub fn gram(kernel: &Kernel, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> Result<GramMatrix> {
    if rows == cols {
        self_gram(kernel, rows)
    } else {
        cross_gram(kernel, rows, cols)
    }
}
