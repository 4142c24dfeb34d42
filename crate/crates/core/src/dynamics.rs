//! Benchmark dynamical systems and snapshot-pair generation.
//!
//! Continuous-time systems are turned into discrete maps by integrating the
//! vector field over one sampling interval with fixed-step RK4. Snapshot
//! pairs are consecutive samples along trajectories started uniformly in a box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest RK4 substep used by [`flow`].
pub const MAX_SUBSTEP: f64 = 1e-3;

/// Safety box half-width, in multiples of the sampling box diameter.
pub const SAFETY_FACTOR: f64 = 10.0;

/// Number of pairs re-integrated when a dataset is validated against its system.
pub const SPOT_CHECKS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `ẋ₁ = x₂, ẋ₂ = μ(1 - x₁²)x₂ - x₁`.
    VanDerPol { mu: f64 },
    /// Discrete map `x ↦ Fx`; the sampling interval is ignored.
    LinearMap { matrix: Vec<Vec<f64>> },
    /// Continuous flow `ẋ = Mx`.
    LinearFlow { matrix: Vec<Vec<f64>> },
}

fn check_square(m: &[Vec<f64>]) -> Result<usize> {
    let n = m.len();
    if n == 0 {
        return Err(Error::InvalidArgument("system matrix is empty".into()));
    }
    if let Some(row) = m.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: row.len(),
        });
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("system matrix has non-finite entries".into()));
    }
    Ok(n)
}

#[inline]
fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::VanDerPol { .. } => 2,
            SystemSpec::LinearMap { matrix } | SystemSpec::LinearFlow { matrix } => matrix.len(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, SystemSpec::LinearMap { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::VanDerPol { mu } if !mu.is_finite() => {
                Err(Error::InvalidArgument("Van der Pol mu must be finite".into()))
            }
            SystemSpec::VanDerPol { .. } => Ok(()),
            SystemSpec::LinearFlow { matrix } => check_square(matrix).map(|_| ()),
            SystemSpec::LinearMap { matrix } => {
                let n = check_square(matrix)?;
                let f = faer::Mat::from_fn(n, n, |i, j| matrix[i][j]);
                let scale = matrix
                    .iter()
                    .flatten()
                    .fold(0.0_f64, |a, v| a.max(v.abs()))
                    .max(f64::MIN_POSITIVE);
                if f.determinant().abs() <= 1e-12 * scale.powi(n as i32) {
                    return Err(Error::InvalidArgument(
                        "linear map must be nonsingular".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Vector field of a continuous-time system.
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SystemSpec::VanDerPol { mu } => {
                Ok(vec![x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])
            }
            SystemSpec::LinearFlow { matrix } => Ok(mat_vec(matrix, x)),
            SystemSpec::LinearMap { .. } => Err(Error::NotContinuous),
        }
    }

    /// Jacobian at the origin: `Df(0)` of the vector field, or the map itself.
    pub fn linearization(&self) -> Vec<Vec<f64>> {
        match self {
            SystemSpec::VanDerPol { mu } => vec![vec![0.0, 1.0], vec![-1.0, *mu]],
            SystemSpec::LinearMap { matrix } | SystemSpec::LinearFlow { matrix } => {
                matrix.clone()
            }
        }
    }
}

/// Axis-aligned box `Π [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Self {
        Self {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() {
            return Err(Error::InvalidArgument("domain box has no dimensions".into()));
        }
        if self.lo.len() != self.hi.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lo.len(),
                got: self.hi.len(),
            });
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidArgument(format!(
                    "invalid box interval [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Box around the center with half-width `SAFETY_FACTOR × diameter`.
    pub fn safety_box(&self) -> Self {
        let half = SAFETY_FACTOR * self.diameter().max(f64::MIN_POSITIVE);
        let c = self.center();
        Self {
            lo: c.iter().map(|v| v - half).collect(),
            hi: c.iter().map(|v| v + half).collect(),
        }
    }

    /// Smallest box containing every point.
    pub fn bounding(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyPointSet)?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for (i, v) in p.iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
            .collect()
    }
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// One classical RK4 step of a continuous-time system.
pub fn rk4_step(system: &SystemSpec, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if x.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: 0.0 });
    }
    let k1 = system.vector_field(x)?;
    let k2 = system.vector_field(&axpy(0.5 * h, &k1, x))?;
    let k3 = system.vector_field(&axpy(0.5 * h, &k2, x))?;
    let k4 = system.vector_field(&axpy(h, &k3, x))?;
    let out: Vec<f64> = (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: h });
    }
    Ok(out)
}

/// Time-`dt` flow map. Linear maps apply `F` once and ignore `dt`.
///
/// Continuous systems take `⌈dt / MAX_SUBSTEP⌉` equal RK4 substeps. When a
/// safety box is given, leaving it is reported as [`Error::BlowUp`].
pub fn flow(
    system: &SystemSpec,
    x: &[f64],
    dt: f64,
    safety: Option<&DomainBox>,
) -> Result<Vec<f64>> {
    if x.len() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: x.len(),
        });
    }
    let out = match system {
        SystemSpec::LinearMap { matrix } => {
            let y = mat_vec(matrix, x);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: 1.0 });
            }
            y
        }
        _ => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sampling interval must be positive, got {dt}"
                )));
            }
            let steps = (dt / MAX_SUBSTEP - 1e-9).ceil().max(1.0) as usize;
            let h = dt / steps as f64;
            let mut state = x.to_vec();
            for s in 0..steps {
                state = rk4_step(system, &state, h).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFinite {
                        time: (s + 1) as f64 * h,
                    },
                    other => other,
                })?;
                if let Some(b) = safety {
                    if !b.contains(&state) {
                        return Err(Error::BlowUp {
                            time: (s + 1) as f64 * h,
                        });
                    }
                }
            }
            state
        }
    };
    if let Some(b) = safety {
        if !b.contains(&out) {
            return Err(Error::BlowUp { time: dt });
        }
    }
    Ok(out)
}

/// Metadata persisted alongside a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: SystemSpec,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub n_traj: usize,
    /// Box the initial states were drawn from.
    pub sampling_box: DomainBox,
    /// Bounding box of every `x` in the dataset.
    pub state_bounds: DomainBox,
    /// Trajectories cut short by a blow-up.
    pub aborted_trajectories: usize,
    /// Pairs whose `y` lies outside `state_bounds`.
    pub y_exits: usize,
}

/// Snapshot pairs `(x, y = f(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl SnapshotDataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.system.dim()
    }

    /// Structural checks plus re-integration of up to [`SPOT_CHECKS`] pairs.
    pub fn validate(&self) -> Result<()> {
        if self.xs.len() != self.ys.len() {
            return Err(Error::InconsistentDataset(format!(
                "{} states but {} images",
                self.xs.len(),
                self.ys.len()
            )));
        }
        let d = self.dim();
        if let Some(p) = self.xs.iter().chain(&self.ys).find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if let Some(x) = self.xs.iter().find(|x| !self.meta.state_bounds.contains(x)) {
            return Err(Error::InconsistentDataset(format!(
                "state {x:?} outside declared bounds"
            )));
        }
        if self.is_empty() {
            return Ok(());
        }
        let stride = (self.len() / SPOT_CHECKS).max(1);
        for i in (0..self.len()).step_by(stride).take(SPOT_CHECKS) {
            let y = flow(&self.meta.system, &self.xs[i], self.meta.dt, None)?;
            let err = y
                .iter()
                .zip(&self.ys[i])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = 1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if err > 1e-9 * scale {
                return Err(Error::InconsistentDataset(format!(
                    "pair {i} deviates from the flow map by {err:e}"
                )));
            }
        }
        Ok(())
    }

    /// Pairs a dataset from raw vectors, deriving the bounds fields of `meta`.
    pub fn from_pairs(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>, mut meta: DatasetMeta) -> Result<Self> {
        meta.state_bounds = DomainBox::bounding(&xs)?;
        meta.y_exits = ys.iter().filter(|y| !meta.state_bounds.contains(y)).count();
        let ds = Self { xs, ys, meta };
        ds.validate()?;
        Ok(ds)
    }

    /// Keeps the pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let xs = indices.iter().map(|&i| self.xs[i].clone()).collect();
        let ys = indices.iter().map(|&i| self.ys[i].clone()).collect();
        Self::from_pairs(xs, ys, self.meta.clone())
    }
}

/// Number of pairs in a trajectory of length `duration` sampled every `dt`.
pub fn samples_per_trajectory(dt: f64, duration: f64) -> usize {
    ((duration / dt) + 1e-9).floor() as usize
}

fn trajectory(
    system: &SystemSpec,
    x0: Vec<f64>,
    dt: f64,
    steps: usize,
    safety: &DomainBox,
) -> (Vec<Vec<f64>>, bool) {
    let mut states = vec![x0];
    for _ in 0..steps {
        let last = states.last().expect("trajectory starts non-empty");
        match flow(system, last, dt, Some(safety)) {
            Ok(next) => states.push(next),
            Err(_) => return (states, true),
        }
    }
    (states, false)
}

/// Draws `n_traj` initial states in `domain` and emits consecutive pairs along each trajectory.
///
/// Each trajectory draws from its own ChaCha stream, so the output does not
/// depend on scheduling. A trajectory that leaves the safety box keeps the
/// pairs it produced before the blow-up and is counted in the metadata.
pub fn generate_snapshots(
    system: &SystemSpec,
    domain: &DomainBox,
    n_traj: usize,
    dt: f64,
    duration: f64,
    seed: u64,
) -> Result<SnapshotDataset> {
    system.validate()?;
    domain.validate()?;
    if domain.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: domain.dim(),
        });
    }
    if n_traj == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(duration + 1e-9 * dt >= dt) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} shorter than dt {dt}"
        )));
    }
    let steps = samples_per_trajectory(dt, duration);
    let safety = domain.safety_box();
    let runs: Vec<(Vec<Vec<f64>>, bool)> = (0..n_traj)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            trajectory(system, domain.sample(&mut rng), dt, steps, &safety)
        })
        .collect();

    let aborted = runs.iter().filter(|(_, a)| *a).count();
    if aborted > 0 {
        log::warn!("{aborted} of {n_traj} trajectories left the safety box");
    }
    let mut xs = Vec::with_capacity(n_traj * steps);
    let mut ys = Vec::with_capacity(n_traj * steps);
    for (states, _) in runs {
        for w in states.windows(2) {
            xs.push(w[0].clone());
            ys.push(w[1].clone());
        }
    }
    if xs.is_empty() {
        return Err(Error::BlowUp { time: 0.0 });
    }
    let meta = DatasetMeta {
        system: system.clone(),
        dt,
        duration,
        seed,
        n_traj,
        sampling_box: domain.clone(),
        state_bounds: domain.clone(),
        aborted_trajectories: aborted,
        y_exits: 0,
    };
    SnapshotDataset::from_pairs(xs, ys, meta)
}

/// Reference trajectory `x_0, f(x_0), …, f^steps(x_0)`.
pub fn reference_trajectory(
    system: &SystemSpec,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![x0.to_vec()];
    for _ in 0..steps {
        let next = flow(system, out.last().expect("non-empty"), dt, None)?;
        out.push(next);
    }
    Ok(out)
}
