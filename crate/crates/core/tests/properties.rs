//! Property tests over randomly generated spectra, coefficients and operators.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sketchreg_core::estimators::ordered_mean;
use sketchreg_core::projections::{fwht, sample_projection};
use sketchreg_core::theory::{
    optimal_dense_vector, shrinkage_alpha_form, shrinkage_factors, shrinkage_lambda_form,
    theorem1_bound, theorem2_bound, theorem4_bound,
};
use sketchreg_core::{Family, NoiseModel, ProjectionSpec, Spectrum, TauEstimate};

/// Non-increasing positive eigenvalues spanning several orders of magnitude.
fn spectrum_strategy(max_p: usize) -> impl Strategy<Value = Spectrum> {
    prop::collection::vec(-4.0f64..3.0, 1..=max_p).prop_map(|logs| {
        let mut eig: Vec<f64> = logs.into_iter().map(|l| 10f64.powf(l)).collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        Spectrum::new(eig).unwrap()
    })
}

/// Spectrum, matching β, noise level and a valid projection dimension.
fn fixture() -> impl Strategy<Value = (Spectrum, Vec<f64>, NoiseModel, usize)> {
    spectrum_strategy(30).prop_flat_map(|s| {
        let p = s.p();
        (
            Just(s),
            prop::collection::vec(-5.0f64..5.0, p),
            (0.0f64..2.0).prop_map(|v| NoiseModel::new(v).unwrap()),
            1..=p,
        )
    })
}

fn family_strategy() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Gaussian),
        Just(Family::Sign),
        (0.05f64..=1.0).prop_map(|density| Family::Sparse { density }),
        Just(Family::Srht),
    ]
}

proptest! {
    #[test]
    fn shrinkage_forms_agree(spectrum in spectrum_strategy(200), d in 1usize..500) {
        let s = spectrum.trace();
        for (&l, &a) in spectrum.eigenvalues().iter().zip(spectrum.alphas()) {
            let by_lambda = shrinkage_lambda_form(l, s, d);
            let by_alpha = shrinkage_alpha_form(a, d);
            prop_assert!((by_lambda - by_alpha).abs() <= 1e-12, "{by_lambda} vs {by_alpha}");
        }
    }

    #[test]
    fn shrinkage_is_monotone_and_bounded(spectrum in spectrum_strategy(60), d in 1usize..60) {
        let w = shrinkage_factors(&spectrum, d).unwrap().w;
        for pair in w.windows(2) {
            // Eigenvalues are non-increasing, so factors must be non-decreasing.
            prop_assert!(pair[0] <= pair[1] + 1e-15, "{pair:?}");
        }
        for &wi in &w {
            prop_assert!(wi > 0.0 && wi <= 1.0, "w = {wi}");
        }
    }

    #[test]
    fn theorem2_improves_on_theorem1_and_trivial((spectrum, beta, noise, d) in fixture()) {
        let t1 = theorem1_bound(&spectrum, &beta, noise, d).unwrap();
        let t2 = theorem2_bound(&spectrum, &beta, noise, d).unwrap();
        for (i, (b2, b1)) in t2.bias_per_direction.iter().zip(&t1.bias_per_direction).enumerate() {
            let trivial = beta[i] * beta[i] * spectrum.eigenvalues()[i];
            prop_assert!(*b2 <= b1 * (1.0 + 1e-12), "direction {i}: {b2} > {b1}");
            prop_assert!(*b2 <= trivial * (1.0 + 1e-12), "direction {i}: {b2} > {trivial}");
        }
        prop_assert_eq!(t1.variance_term, t2.variance_term);
    }

    #[test]
    fn theorem4_never_exceeds_theorem2(
        (spectrum, beta, noise, d) in fixture(),
        position in 0.0f64..=1.0,
    ) {
        let p = spectrum.p();
        let lower = (d * d) as f64 / p as f64;
        let tau = TauEstimate { d, p, tau: lower + position * (d as f64 - lower), stderr: 0.0 };
        let t2 = theorem2_bound(&spectrum, &beta, noise, d).unwrap();
        let t4 = theorem4_bound(&spectrum, &beta, noise, d, &tau).unwrap();
        prop_assert!(t4.total <= t2.total * (1.0 + 1e-12), "{} > {}", t4.total, t2.total);
    }

    #[test]
    fn optimal_vector_is_linear_in_beta(
        (spectrum, beta, _noise, d) in fixture(),
        scale in -3.0f64..3.0,
    ) {
        let v = optimal_dense_vector(&spectrum, &beta, d).unwrap();
        let scaled: Vec<f64> = beta.iter().map(|b| b * scale).collect();
        let vs = optimal_dense_vector(&spectrum, &scaled, d).unwrap();
        for (a, b) in v.iter().zip(&vs) {
            prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn lift_is_adjoint_of_projection(
        family in family_strategy(),
        p in 2usize..40,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let d = 1 + ((p - 1) as f64 * frac) as usize;
        let op = sample_projection(&ProjectionSpec::new(family, p, d, seed).unwrap()).unwrap();
        let x = DVector::from_fn(p, |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
        let g = DVector::from_fn(d, |i, _| ((i * 5 + 1) % 7) as f64 - 3.0);
        let lhs = op.project_vector(x.as_slice()).dot(&g);
        let rhs = x.dot(&op.lift(&g).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn row_projection_matches_dense_product(
        family in family_strategy(),
        n in 2usize..30,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let m = 1 + ((n - 1) as f64 * frac) as usize;
        let op = sample_projection(&ProjectionSpec::new(family, n, m, seed).unwrap()).unwrap();
        let a = DMatrix::from_fn(n, 3, |i, j| (i as f64 - 2.0 * j as f64).sin());
        let fast = op.project_rows(&a).unwrap();
        let dense = op.to_dense().transpose() * &a;
        prop_assert!((fast - dense).amax() <= 1e-12);
    }

    #[test]
    fn sampling_is_deterministic(family in family_strategy(), seed in any::<u64>()) {
        let spec = ProjectionSpec::new(family, 17, 5, seed).unwrap();
        prop_assert_eq!(sample_projection(&spec).unwrap(), sample_projection(&spec).unwrap());
    }

    #[test]
    fn fwht_twice_scales_by_length(log_n in 0u32..9, values in prop::collection::vec(-10.0f64..10.0, 256)) {
        let n = 1usize << log_n;
        let original = &values[..n];
        let mut v = original.to_vec();
        fwht(&mut v);
        fwht(&mut v);
        for (a, b) in v.iter().zip(original) {
            prop_assert!((a / n as f64 - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn ordered_mean_of_copies_is_the_vector(values in prop::collection::vec(-1e6f64..1e6, 1..10), k in 1usize..20) {
        let v = DVector::from_vec(values);
        let copies = vec![v.clone(); k];
        let mean = ordered_mean(&copies);
        prop_assert!((mean - &v).amax() <= 1e-9 * (1.0 + v.amax()));
    }
}
