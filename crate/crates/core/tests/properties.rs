use std::sync::Arc;

use nalgebra::DMatrix;
use orthocop::copula::DEFAULT_RESOLUTION;
use orthocop::partition::{check_doubly_stochastic, sinkhorn_normalize};
use orthocop::*;
use proptest::prelude::*;

fn positive_matrix(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.01f64..1.0, p * p).prop_map(move |v| DMatrix::from_row_slice(p, p, &v))
}

fn doubly_stochastic(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    positive_matrix(p).prop_map(|k| sinkhorn_normalize(&k, 1e-14, 10_000).unwrap())
}

fn checkerboard_model(m: &DMatrix<f64>) -> CopulaModel {
    let pf = make_partition(PartitionKind::Checkerboard, m.nrows()).unwrap();
    to_copula_model(&pf, m).unwrap()
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sinkhorn_gives_doubly_stochastic(k in positive_matrix(5)) {
        let m = sinkhorn_normalize(&k, 1e-13, 10_000).unwrap();
        prop_assert!(check_doubly_stochastic(&m).is_ok());
    }

    #[test]
    fn checkerboard_models_are_copulas(m in doubly_stochastic(4), u in unit(), v in unit()) {
        let model = checkerboard_model(&m);
        let report = model.validate(DEFAULT_RESOLUTION, true).unwrap();
        prop_assert_eq!(report.verdict, Verdict::Valid);
        let pts: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        prop_assert!(model.margin_deviation(&pts, 16).unwrap() < 1e-10);
        let c = model.cdf(u, v).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((model.cdf(u, 1.0).unwrap() - u).abs() < 1e-12);
        prop_assert!((model.cdf(1.0, v).unwrap() - v).abs() < 1e-12);
        prop_assert!(c <= u.min(v) + 1e-12);
        prop_assert!(c >= (u + v - 1.0).max(0.0) - 1e-12);
    }

    #[test]
    fn measures_are_bounded_and_consistent(m in doubly_stochastic(4)) {
        let model = checkerboard_model(&m);
        let rho = spearman_rho(&model);
        let tau = kendall_tau(&model);
        prop_assert!((-1.0..=1.0).contains(&rho));
        prop_assert!((-1.0..=1.0).contains(&tau));
        prop_assert!((rho - spearman_rho_quadrature(&model, 16).unwrap()).abs() < 1e-10);
        prop_assert!((tau - kendall_tau_quadrature(&model, 16).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn star_and_mix_stay_in_the_family(a in doubly_stochastic(3), b in doubly_stochastic(3), w in 0.0f64..=1.0) {
        let (ma, mb) = (checkerboard_model(&a), checkerboard_model(&b));
        let star = ma.star(&mb).unwrap();
        prop_assert_eq!(star.validate(DEFAULT_RESOLUTION, true).unwrap().verdict, Verdict::Valid);
        // The product of the cell matrices is the cell matrix of the star product.
        let direct = checkerboard_model(&(&a * &b));
        prop_assert!((star.matrix() - direct.matrix()).abs().max() < 1e-12);
        let mixed = mix(&[ma, mb], &[w, 1.0 - w]).unwrap();
        prop_assert_eq!(mixed.validate(DEFAULT_RESOLUTION, true).unwrap().verdict, Verdict::Valid);
    }

    #[test]
    fn h_inverse_is_an_inverse(p in 2usize..12) {
        for kind in [PartitionKind::Checkerboard, PartitionKind::Bernstein] {
            let pf = make_partition(kind, p).unwrap();
            let prod = pf.h_matrix() * pf.h_inverse();
            prop_assert!((prod - DMatrix::identity(p, p)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn a2_estimate_keeps_e1(pairs in prop::collection::vec((unit(), unit()), 1..40)) {
        let fam = make_trig_family(2).unwrap();
        let s = SampleSet::new(pairs, 0, "prop").unwrap();
        let a = estimate_a2(&s, &fam).unwrap().a_hat;
        for k in 0..fam.size() {
            let e = if k == 0 { 1.0 } else { 0.0 };
            prop_assert_eq!(a[(k, 0)], e);
            prop_assert_eq!(a[(0, k)], e);
        }
    }

    #[test]
    fn diagonal_trig_density_is_symmetric(theta in -0.4f64..0.4, u in unit(), v in unit()) {
        let m = CopulaModel::diagonal(Arc::new(make_trig_family(3).unwrap()), theta).unwrap();
        prop_assert!((m.density(u, v).unwrap() - m.density(v, u).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn haar_density_matches_cdf_increments(theta in 0.0f64..=1.0, i in 0usize..4, j in 0usize..4) {
        let m = CopulaModel::diagonal(Arc::new(make_haar_family(2).unwrap()), theta).unwrap();
        let (a, b) = (i as f64 / 4.0, j as f64 / 4.0);
        let (a1, b1) = (a + 0.25, b + 0.25);
        let mass = m.cdf(a1, b1).unwrap() - m.cdf(a, b1).unwrap() - m.cdf(a1, b).unwrap() + m.cdf(a, b).unwrap();
        let density = m.density(a + 0.125, b + 0.125).unwrap();
        prop_assert!((mass - density / 16.0).abs() < 1e-14);
    }

    #[test]
    fn descriptors_round_trip(h in 1u64..10, j in 0u32..6, p in 2u64..20) {
        for text in [format!("trig:{h}"), format!("haar:{}", 1u64 << j), format!("bernstein:{p}"), format!("checkerboard:{p}"), "fgm".into()] {
            let d: FamilyDescriptor = text.parse().unwrap();
            prop_assert_eq!(d.to_string(), text);
        }
    }
}
