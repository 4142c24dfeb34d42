//! State prediction with the learned operator.
//!
//! One step: `x̂₁ = Yᵀ Θ̂ k(x₀)` with `k(x)_j = κ(x_j, x)`. Multi-step
//! prediction either re-embeds each predicted state (`State`) or recurses on
//! the coefficients in `span{κ(y_a, ·)}` with `K = Θ̂ G_XY` (`Coefficient`),
//! which is the expanded product formula without re-embedding.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kedmd::EdmdModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recursion {
    #[default]
    State,
    Coefficient,
}

impl std::str::FromStr for Recursion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(Recursion::State),
            "coefficient" => Ok(Recursion::Coefficient),
            other => Err(Error::InvalidArgument(format!(
                "recursion must be 'state' or 'coefficient', got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneStep {
    pub state: Vec<f64>,
    /// Every kernel section vanished at the query point.
    pub starved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    /// `x̂_0 .. x̂_T`; `states[0]` is the supplied initial state.
    pub states: Vec<Vec<f64>>,
    pub reference: Option<Vec<Vec<f64>>>,
    /// Euclidean error per step when a reference is attached.
    pub errors: Option<Vec<f64>>,
    /// Steps at which the query point was outside every kernel support.
    pub starved_steps: Vec<usize>,
    /// Set when a non-finite state cut the prediction short.
    pub truncated: bool,
}

impl PredictedTrajectory {
    /// Attaches a reference trajectory and computes per-step errors over the common prefix.
    pub fn with_reference(mut self, reference: Vec<Vec<f64>>) -> Self {
        let errors = self
            .states
            .iter()
            .zip(&reference)
            .map(|(a, b)| euclid(a, b))
            .collect();
        self.reference = Some(reference);
        self.errors = Some(errors);
        self
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dim(model: &EdmdModel, x: &[f64]) -> Result<()> {
    let d = model.dataset.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(())
}

/// `Yᵀ Θ̂ k(x)`.
pub fn predict_one_step(model: &EdmdModel, x: &[f64]) -> Result<OneStep> {
    check_dim(model, x)?;
    let sections = model.kernel.sections(&model.dataset.xs, x);
    let starved = sections.iter().all(|&v| v == 0.0);
    let w = model.predictor_weights();
    let state = (0..w.nrows())
        .map(|i| (0..w.ncols()).map(|j| w[(i, j)] * sections[j]).sum())
        .collect();
    Ok(OneStep { state, starved })
}

fn mat_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// Iterates the predictor `steps` times from `x0`.
pub fn predict_trajectory(
    model: &EdmdModel,
    x0: &[f64],
    steps: usize,
    recursion: Recursion,
) -> Result<PredictedTrajectory> {
    check_dim(model, x0)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one prediction step".into()));
    }
    let mut states = vec![x0.to_vec()];
    let mut starved_steps = Vec::new();
    let mut truncated = false;
    match recursion {
        Recursion::State => {
            for t in 0..steps {
                let step = predict_one_step(model, states.last().expect("non-empty"))?;
                if step.starved {
                    starved_steps.push(t);
                }
                if step.state.iter().any(|v| !v.is_finite()) {
                    truncated = true;
                    break;
                }
                states.push(step.state);
            }
        }
        Recursion::Coefficient => {
            let sections = model.kernel.sections(&model.dataset.xs, x0);
            if sections.iter().all(|&v| v == 0.0) {
                starved_steps.push(0);
            }
            let ys = &model.dataset.ys;
            let d = model.dataset.dim();
            let mut coeffs = mat_vec(&model.theta, &sections);
            for t in 0..steps {
                if t > 0 {
                    let pushed = mat_vec(&model.gxy.entries, &coeffs);
                    coeffs = mat_vec(&model.theta, &pushed);
                }
                let mut x = vec![0.0; d];
                for (c, y) in coeffs.iter().zip(ys) {
                    for k in 0..d {
                        x[k] += c * y[k];
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    truncated = true;
                    break;
                }
                states.push(x);
            }
        }
    }
    Ok(PredictedTrajectory {
        states,
        reference: None,
        errors: None,
        starved_steps,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_snapshots, DomainBox, SystemSpec};
    use crate::kedmd::fit;
    use crate::kernel::KernelSpec;

    fn model(beta: f64, rank: usize, n: usize) -> EdmdModel {
        let sys = SystemSpec::LinearMap {
            matrix: vec![vec![0.5, 0.1], vec![0.0, 0.8]],
        };
        let ds = generate_snapshots(&sys, &DomainBox::symmetric(2, 1.0), n, 1.0, 1.0, 21).unwrap();
        fit(&ds, &KernelSpec::linear_wendland(2, 1, 2.0 * 2f64.sqrt()), beta, rank).unwrap()
    }

    #[test]
    fn origin_maps_to_origin() {
        let m = model(1e-6, 10, 40);
        let step = predict_one_step(&m, &[0.0, 0.0]).unwrap();
        assert_eq!(step.state, vec![0.0, 0.0]);
        assert!(step.starved);
    }

    #[test]
    fn interpolates_training_pairs() {
        let m = model(0.0, 25, 25);
        for i in [0, 7, 19] {
            let got = predict_one_step(&m, &m.dataset.xs[i]).unwrap().state;
            assert!(euclid(&got, &m.dataset.ys[i]) < 1e-8, "pair {i}");
        }
    }

    #[test]
    fn one_step_trajectory_matches_predictor() {
        let m = model(1e-8, 20, 60);
        let x0 = [0.3, -0.6];
        let traj = predict_trajectory(&m, &x0, 1, Recursion::State).unwrap();
        assert_eq!(traj.states[0], x0.to_vec());
        assert_eq!(traj.states[1], predict_one_step(&m, &x0).unwrap().state);
        assert!(predict_trajectory(&m, &x0, 0, Recursion::State).is_err());
    }

    #[test]
    fn recursions_agree_on_training_points() {
        let m = model(0.0, 30, 30);
        let x0 = m.dataset.xs[4].clone();
        let a = predict_trajectory(&m, &x0, 2, Recursion::State).unwrap();
        let b = predict_trajectory(&m, &x0, 2, Recursion::Coefficient).unwrap();
        for (p, q) in a.states.iter().zip(&b.states) {
            assert!(euclid(p, q) < 1e-6);
        }
    }

    #[test]
    fn wendland_support_starvation_flagged() {
        let sys = SystemSpec::LinearMap {
            matrix: vec![vec![0.5, 0.0], vec![0.0, 0.8]],
        };
        let ds = generate_snapshots(&sys, &DomainBox::symmetric(2, 0.5), 20, 1.0, 1.0, 2).unwrap();
        let m = fit(&ds, &KernelSpec::Wendland { dim: 2, k: 1, sigma: 0.5 }, 1e-6, 10).unwrap();
        let step = predict_one_step(&m, &[10.0, 10.0]).unwrap();
        assert!(step.starved);
        assert_eq!(step.state, vec![0.0, 0.0]);
    }

    #[test]
    fn parse_recursion() {
        assert_eq!("state".parse::<Recursion>().unwrap(), Recursion::State);
        assert_eq!("coefficient".parse::<Recursion>().unwrap(), Recursion::Coefficient);
        assert!("both".parse::<Recursion>().is_err());
    }
}
