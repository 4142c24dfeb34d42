use koopcert_core::kernel::GRAM_ZERO_CUTOFF;
use koopcert_core::spectral::{eigenvalues_sorted, gram_perturbation_bound};
use koopcert_core::*;
use proptest::prelude::*;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, dim)
}

fn kernel_spec(dim: usize) -> impl Strategy<Value = KernelSpec> {
    (0usize..3, 0usize..4, 0.3f64..4.0).prop_map(move |(v, k, sigma)| match v {
        0 => KernelSpec::Linear,
        1 => KernelSpec::Wendland { dim, k, sigma },
        _ => KernelSpec::linear_wendland(dim, k, sigma),
    })
}

fn map_dataset() -> impl Strategy<Value = SnapshotDataset> {
    (
        prop::collection::vec(-0.9f64..0.9, 4),
        8usize..40,
        any::<u64>(),
    )
        .prop_filter_map("map must be invertible", |(a, n, seed)| {
            let matrix = vec![vec![a[0], a[1]], vec![a[2], a[3]]];
            let sys = SystemSpec::LinearMap { matrix };
            generate_snapshots(&sys, &DomainBox::symmetric(2, 1.0), n, 1.0, 1.0, seed).ok()
        })
}

fn sym_matrix_norm(m: &Mat<f64>) -> f64 {
    let mtm = m.transpose() * m;
    mtm.self_adjoint_eigen(faer::Side::Lower)
        .unwrap()
        .S()
        .column_vector()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernels_are_symmetric(spec in kernel_spec(3), x in point(3), y in point(3)) {
        let a = eval_kernel(&spec, &x, &y).unwrap();
        let b = eval_kernel(&spec, &y, &x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn radial_kernel_translation_invariant(
        k in 0usize..4, sigma in 0.3f64..4.0,
        x in point(2), y in point(2), t in point(2),
    ) {
        let spec = KernelSpec::Wendland { dim: 2, k, sigma };
        let xs: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a + b).collect();
        let a = eval_kernel(&spec, &x, &y).unwrap();
        let b = eval_kernel(&spec, &xs, &ys).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn radial_diagonal_is_profile_at_zero(dim in 1usize..5, k in 0usize..4, x in point(4)) {
        let spec = KernelSpec::Wendland { dim, k, sigma: 1.0 };
        let x = &x[..dim];
        let rho0 = wendland_rho(dim, k).unwrap().eval(0.0).unwrap();
        prop_assert_eq!(eval_kernel(&spec, x, x).unwrap(), rho0);
        prop_assert_eq!(Kernel::new(spec).unwrap().radial_diagonal(), Some(rho0));
    }

    #[test]
    fn compact_support(k in 0usize..4, sigma in 0.2f64..2.0, x in point(2), dir in 0.0f64..6.3, extra in 0.0f64..3.0) {
        let y = vec![x[0] + (sigma + extra) * dir.cos(), x[1] + (sigma + extra) * dir.sin()];
        for spec in [
            KernelSpec::Wendland { dim: 2, k, sigma },
            KernelSpec::linear_wendland(2, k, sigma),
        ] {
            prop_assert_eq!(eval_kernel(&spec, &x, &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn product_kernel_vanishes_at_origin(k in 0usize..4, sigma in 0.3f64..4.0, x in point(2)) {
        let spec = KernelSpec::linear_wendland(2, k, sigma);
        prop_assert_eq!(eval_kernel(&spec, &[0.0, 0.0], &x).unwrap(), 0.0);
    }

    #[test]
    fn reproducing_norm_bounds_evaluation(
        spec in kernel_spec(2),
        centres in prop::collection::vec(point(2), 2..12),
        coeffs in prop::collection::vec(-2.0f64..2.0, 12),
        x in point(2),
    ) {
        // f = Σ a_i κ(c_i, ·); |f(x)| = |⟨f, κ(x, ·)⟩| ≤ ‖f‖ √κ(x, x)
        let kernel = Kernel::new(spec).unwrap();
        let a = &coeffs[..centres.len()];
        let g = self_gram(&kernel, &centres).unwrap();
        let norm_sq: f64 = (0..a.len())
            .flat_map(|i| (0..a.len()).map(move |j| (i, j)))
            .map(|(i, j)| a[i] * a[j] * g.entries[(i, j)])
            .sum();
        let fx: f64 = a.iter().zip(kernel.sections(&centres, &x)).map(|(c, s)| c * s).sum();
        let kxx = kernel.eval(&x, &x).unwrap();
        prop_assert!(norm_sq >= -1e-10);
        prop_assert!(fx.abs() <= (norm_sq.max(0.0) * kxx).sqrt() + 1e-9);
    }

    #[test]
    fn gram_is_psd(spec in kernel_spec(2), pts in prop::collection::vec(point(2), 1..40)) {
        let kernel = Kernel::new(spec).unwrap();
        let g = self_gram(&kernel, &pts).unwrap();
        let tr = g.trace();
        let min = g.min_eigenvalue().unwrap();
        prop_assert!(min >= -1e-8 * tr / pts.len() as f64, "min {min}, trace {tr}");
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let v = g.entries[(i, j)];
                prop_assert_eq!(v, g.entries[(j, i)]);
                prop_assert!(v == 0.0 || v.abs() >= GRAM_ZERO_CUTOFF);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_is_stationary(ds in map_dataset(), r_frac in 0.1f64..1.0, log_beta in -9.0f64..-1.0, sigma in 0.5f64..4.0) {
        let n = ds.len();
        let r = ((r_frac * n as f64).ceil() as usize).clamp(1, n);
        let m = fit(&ds, &KernelSpec::linear_wendland(2, 1, sigma), 10f64.powf(log_beta), r).unwrap();
        prop_assert!(m.stationarity_residual() <= 1e-8 * n as f64);
        prop_assert!(m.effective_rank >= r);
    }

    #[test]
    fn objective_nonincreasing_in_rank(ds in map_dataset(), log_beta in -6.0f64..-1.0) {
        let spec = KernelSpec::linear_wendland(2, 1, 2.0);
        let beta = 10f64.powf(log_beta);
        let n = ds.len();
        let mut prev = f64::INFINITY;
        for r in (1..=n).step_by((n / 6).max(1)) {
            let m = fit(&ds, &spec, beta, r).unwrap();
            let j = m.fitted_objective();
            prop_assert!(j <= prev + 1e-9 * prev.abs().max(1.0), "r={r}: {j} > {prev}");
            prev = j;
        }
    }

    #[test]
    fn nonzero_eigenvalues_bounded_by_rank(ds in map_dataset(), r_frac in 0.05f64..0.6) {
        let n = ds.len();
        let r = ((r_frac * n as f64).ceil() as usize).clamp(1, n);
        let m = fit(&ds, &KernelSpec::linear_wendland(2, 1, 2.0), 1e-6, r).unwrap();
        let dense = spectrum_from(&m, SpectrumSource::KoopmanDense).unwrap();
        let big = dense.eigenvalues.iter().filter(|e| e.modulus() > 1e-6 * dense.spectral_radius.max(1e-300)).count();
        prop_assert!(big <= m.effective_rank);
    }

    #[test]
    fn spectrum_invariant_under_sample_permutation(ds in map_dataset(), shift in 1usize..7) {
        let n = ds.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * (2 * shift + 1) + shift) % n).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == n);
        let spec = KernelSpec::linear_wendland(2, 1, 2.0);
        let r = (n / 3).max(1);
        let a = spectrum(&fit(&ds, &spec, 1e-6, r).unwrap()).unwrap();
        let b = spectrum(&fit(&ds.select(&perm).unwrap(), &spec, 1e-6, r).unwrap()).unwrap();
        prop_assert!((a.spectral_radius - b.spectral_radius).abs() <= 1e-8 * a.spectral_radius.max(1.0));
        for e in a.eigenvalues.iter().filter(|e| e.modulus() > 1e-3) {
            prop_assert!(b.distance_to(e.complex()) <= 1e-6, "{e:?}");
        }
    }

    #[test]
    fn product_kernel_predictor_fixes_origin(ds in map_dataset(), r_frac in 0.1f64..1.0) {
        let n = ds.len();
        let r = ((r_frac * n as f64).ceil() as usize).clamp(1, n);
        let m = fit(&ds, &KernelSpec::linear_wendland(2, 1, 2.0), Ridge::Auto, r).unwrap();
        let step = predict_one_step(&m, &[0.0, 0.0]).unwrap();
        prop_assert_eq!(step.state, vec![0.0, 0.0]);
    }

    #[test]
    fn squared_operator_perturbation(ds in map_dataset(), log_eta in -6.0f64..-3.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let n = ds.len();
        let m = fit(&ds, &KernelSpec::linear_wendland(2, 1, 2.0), 1e-6, (n / 2).max(1)).unwrap();
        let k = m.koopman_matrix();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let eta = 10f64.powf(log_eta);
        let scale = eta / sym_matrix_norm(&raw).sqrt();
        let e = Mat::from_fn(n, n, |i, j| raw[(i, j)] * scale);
        let kp = &k + &e;
        let rho = |a: &Mat<f64>| eigenvalues_sorted(&(a.transpose() * a)).unwrap()[0].norm();
        let norm_k = sym_matrix_norm(&k).sqrt();
        let lhs = (rho(&kp) - rho(&k)).abs();
        prop_assert!(lhs <= gram_perturbation_bound(norm_k, eta) * (1.0 + 1e-6), "{lhs}");
    }
}

#[test]
fn certificate_verdicts_follow_margin() {
    let ds = generate_snapshots(
        &SystemSpec::LinearMap { matrix: vec![vec![0.5, 0.0], vec![0.0, 0.8]] },
        &DomainBox::symmetric(2, 1.0),
        60,
        1.0,
        1.0,
        0,
    )
    .unwrap();
    let rep = spectrum(&fit(&ds, &KernelSpec::linear_wendland(2, 1, 3.0), 1e-8, 10).unwrap()).unwrap();
    proptest!(|(eps in 0.0f64..0.5, norm_a in 0.0f64..3.0)| {
        let c = certify_stability(&rep, eps, norm_a, None).unwrap();
        let margin = 1.0 - (rep.spectral_radius + (eps + 2.0 * norm_a) * eps);
        prop_assert_eq!(c.margin, margin);
        prop_assert_eq!(c.verdict == Verdict::CertifiedStable, margin > 0.0);
        prop_assert!(c.verdict != Verdict::SpectralRadiusExceedsOne);
    });
}
