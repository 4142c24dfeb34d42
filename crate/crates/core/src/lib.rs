//! Kernel extended dynamic mode decomposition with compactly supported
//! Wendland kernels, plus spectral stability certificates.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod kedmd;
pub mod kernel;
pub mod predict;
pub mod spectral;
pub mod wendland;

pub use dynamics::{
    generate_snapshots, reference_trajectory, DatasetMeta, DomainBox, SnapshotDataset, SystemSpec,
};
pub use error::{Error, Result};
pub use kedmd::{fit, objective, EdmdModel, Ridge};
pub use kernel::{cross_gram, eval_kernel, gram, self_gram, GramMatrix, Kernel, KernelSpec};
pub use predict::{predict_one_step, predict_trajectory, OneStep, PredictedTrajectory, Recursion};
pub use spectral::{
    bound_constants, certify_stability, sample_complexity, spectrum, spectrum_from, BoundConstants,
    CertificateResult, Eigenvalue, SpectrumReport, SpectrumSource, Verdict,
};
pub use wendland::{wendland_rho, PiecewisePoly1D};

pub use faer::Mat;
pub use num_complex::Complex64;

/// Caps worker threads for the rayon pool and for dense linear algebra.
/// The thread pool can only be sized once per process; later calls adjust the
/// linear-algebra setting alone.
pub fn set_threads(threads: usize) {
    let threads = threads.max(1);
    if rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .is_err()
    {
        log::debug!("global thread pool already initialised");
    }
    faer::set_global_parallelism(if threads == 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(threads)
    });
}
