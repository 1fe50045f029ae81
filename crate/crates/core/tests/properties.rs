mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tangent_core::fisher::{exact_fisher, expected_hessian, kl_exact};
use tangent_core::matrix_io::{read_matrix, write_matrix};
use tangent_core::metric::{damp, damp_relative, spectral_decompose, DEFAULT_RANK_TOL};
use tangent_core::quadrature::GaussLegendre;
use tangent_core::solver::conjugate_gradient;
use tangent_core::{Dataset, Family, Hypothesis, ModelSpec, Observation, ParamPoint, TangentVector};

use common::{orthogonal, random_instance, with_spectrum};

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    (1usize..=4, 1usize..=4).prop_map(|(d, k)| {
        if k == 1 {
            ModelSpec::binary_logistic(d).unwrap()
        } else {
            ModelSpec::softmax(d, k).unwrap()
        }
    })
}

/// A model with a point θ and an observation o, entries bounded by `scale`.
fn point_strategy(scale: f64) -> impl Strategy<Value = (ModelSpec, ParamPoint, Observation)> {
    model_strategy().prop_flat_map(move |m| {
        let theta = prop::collection::vec(-scale..scale, m.param_dim());
        let x = prop::collection::vec(-scale..scale, m.feature_dim());
        (Just(m), theta, x).prop_map(|(m, t, x)| {
            (m, ParamPoint::from_slice(&t).unwrap(), Observation::from_slice(&x).unwrap())
        })
    })
}

fn spd_strategy(max_dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (1usize..=max_dim, any::<u64>()).prop_flat_map(move |(n, seed)| {
        (
            Just(n),
            Just(seed),
            prop::collection::vec(lo..hi, n),
            prop::collection::vec(-1.0..1.0f64, n),
        )
            .prop_map(|(n, seed, eig, b)| {
                let q = orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), n);
                (with_spectrum(&q, &eig), DVector::from_vec(b))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn probabilities_normalize((m, theta, o) in point_strategy(5.0)) {
        let lp = m.log_probabilities(&theta, &o).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "sum = {total}");
        prop_assert!(lp.iter().all(|v| *v <= 0.0 && v.exp() > 0.0));
    }

    #[test]
    fn expected_score_vanishes((m, theta, o) in point_strategy(3.0)) {
        let probs = m.probabilities(&theta, &o).unwrap();
        let mut acc = DVector::zeros(m.param_dim());
        for (h, p) in probs.iter().enumerate() {
            acc += m.score(&theta, &o, Hypothesis(h)).unwrap().as_vector() * *p;
        }
        prop_assert!(acc.amax() <= 1e-12, "max-norm {}", acc.amax());
    }

    #[test]
    fn hessian_is_label_independent((m, theta, o) in point_strategy(3.0)) {
        let first = m.log_prob_hessian(&theta, &o, Hypothesis(0)).unwrap();
        for h in 1..m.class_count() {
            prop_assert_eq!(&first, &m.log_prob_hessian(&theta, &o, Hypothesis(h)).unwrap());
        }
    }

    #[test]
    fn nll_gradient_matches_central_differences(
        (m, theta, o) in point_strategy(2.0 / 3.0f64.sqrt()),
        seed in any::<u64>(),
    ) {
        // a few observations around o, norms kept at most 2
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = common::sampled_dataset(&mut rng, &m, &theta, 3);
        let mut obs = vec![o];
        for x in extra.observations() {
            let v = x.features();
            let n = v.norm().max(1.0);
            obs.push(Observation::new(v * (1.0 / n)).unwrap());
        }
        let labels = (0..obs.len()).map(|i| Hypothesis(i % m.class_count())).collect();
        let data = Dataset::new(obs, labels).unwrap();
        let theta = ParamPoint::new(theta.as_vector() * (2.0 / theta.norm().max(1.0))).unwrap();

        let grad = m.nll_grad(&theta, &data).unwrap();
        let h = 1e-5;
        for j in 0..m.param_dim() {
            let mut plus = theta.as_vector().clone();
            let mut minus = theta.as_vector().clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (m.nll_loss(&ParamPoint::new(plus).unwrap(), &data).unwrap()
                - m.nll_loss(&ParamPoint::new(minus).unwrap(), &data).unwrap())
                / (2.0 * h);
            let err = (fd - grad[j]).abs() / grad.amax().max(1e-3);
            prop_assert!(err <= 1e-6, "coordinate {j}: analytic {} fd {fd}", grad[j]);
        }
    }

    #[test]
    fn fisher_is_negative_expected_hessian(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng);
        let inst = random_instance(&mut rng, model, 8);
        let fisher = exact_fisher(&inst.model, &inst.theta, &inst.data).unwrap().into_matrix();
        let hess = expected_hessian(&inst.model, &inst.theta, &inst.data).unwrap();
        let gap = (&fisher + &hess).norm();
        prop_assert!(gap <= 1e-10 * (1.0 + fisher.norm()), "gap {gap}");
        let min_eig = fisher.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-10);
        prop_assert!((&fisher - fisher.transpose()).amax() <= 1e-10);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_the_diagonal(seed in any::<u64>(), scale in 0.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng);
        let inst = random_instance(&mut rng, model, 5);
        let other = inst.theta.offset(&common::direction(&mut rng, model.param_dim(), scale.max(1e-3))).unwrap();
        prop_assert!(kl_exact(&model, &inst.theta, &other, &inst.data).unwrap() >= 0.0);
        prop_assert_eq!(kl_exact(&model, &inst.theta, &inst.theta, &inst.data).unwrap(), 0.0);
    }

    #[test]
    fn damped_metric_is_positive_definite(
        seed in any::<u64>(),
        dim in 1usize..=20,
        rank_frac in 0.0..=1.0f64,
        eps in prop::sample::select(vec![1e-12, 1e-8, 1e-3, 1.0, 1e3]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = (rank_frac * dim as f64).round() as usize;
        let eig: Vec<f64> = (0..dim).map(|i| if i < rank { rand::Rng::random_range(&mut rng, 0.01..10.0) } else { 0.0 }).collect();
        let a = with_spectrum(&orthogonal(&mut rng, dim), &eig);
        let dec = spectral_decompose(&a, DEFAULT_RANK_TOL).unwrap();
        prop_assert_eq!(dec.rank(), rank);
        let smallest_kept = if rank > 0 { dec.eigvals()[rank - 1] } else { f64::INFINITY };
        let metric = damp(dec, eps).unwrap();
        let observed = metric.to_dense().symmetric_eigenvalues().min();
        prop_assert!(observed >= eps.min(smallest_kept) - 1e-12, "{observed} vs {eps} / {smallest_kept}");
        prop_assert!(observed > 0.0);
    }

    #[test]
    fn decomposition_reconstructs((a, _) in spd_strategy(12, 0.0, 5.0)) {
        let dec = spectral_decompose(&a, DEFAULT_RANK_TOL).unwrap();
        let v = dec.eigvecs();
        let n = a.nrows();
        prop_assert!((v.transpose() * v - DMatrix::identity(n, n)).amax() <= 1e-10);
        prop_assert!((dec.reconstruct() - &a).norm() <= 1e-10);
        let vals = dec.eigvals();
        prop_assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn damped_solve_inverts_matvec((a, b) in spd_strategy(12, 0.0, 5.0)) {
        prop_assume!(b.norm() > 1e-6);
        let metric = damp_relative(spectral_decompose(&a, DEFAULT_RANK_TOL).unwrap(), 1e-8).unwrap();
        let back = metric.matvec(&metric.solve(&b).unwrap()).unwrap();
        prop_assert!((&back - &b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn cg_matches_dense_solve((a, b) in spd_strategy(50, 0.1, 10.0)) {
        prop_assume!(b.norm() > 1e-6);
        let n = a.nrows();
        let trace = conjugate_gradient(&a, &TangentVector::new(b.clone()).unwrap(), 1e-12, 4 * n).unwrap();
        let dense = a.clone().cholesky().unwrap().solve(&b);
        prop_assert!((trace.solution.as_vector() - &dense).norm() <= 1e-8 * dense.norm());
    }

    #[test]
    fn cg_terminates_within_dimension((a, b) in spd_strategy(20, 0.1, 10.0)) {
        prop_assume!(b.norm() > 1e-6);
        let n = a.nrows();
        let trace = conjugate_gradient(&a, &TangentVector::new(b).unwrap(), 1e-10, n).unwrap();
        prop_assert!(trace.converged, "{} iterations, residual {:e}", trace.iterations, trace.final_residual_norm());
        prop_assert!(trace.iterations <= n);
    }

    #[test]
    fn cg_directions_are_conjugate((a, b) in spd_strategy(20, 0.1, 10.0)) {
        prop_assume!(b.norm() > 1e-6);
        let n = a.nrows();
        let trace = conjugate_gradient(&a, &TangentVector::new(b).unwrap(), 1e-10, n).unwrap();
        prop_assume!(trace.converged);
        let ap: Vec<DVector<f64>> = trace.search_directions.iter().map(|p| &a * p.as_vector()).collect();
        for i in 0..ap.len() {
            for j in 0..i {
                let pi = trace.search_directions[i].as_vector();
                let pj = trace.search_directions[j].as_vector();
                let scale = (pi.dot(&ap[i]) * pj.dot(&ap[j])).sqrt();
                prop_assert!(pi.dot(&ap[j]).abs() <= 1e-8 * scale, "p{i}ᵀAp{j} = {:e}, scale {scale:e}", pi.dot(&ap[j]));
            }
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_low_degree(n in 1usize..=32, coeffs in prop::collection::vec(-1.0..1.0f64, 1..=64)) {
        let degree = (2 * n - 1).min(coeffs.len() - 1);
        let c = &coeffs[..=degree];
        let rule = GaussLegendre::new(n).unwrap();
        let approx = rule.integrate(0.0, 1.0, |t| c.iter().rev().fold(0.0, |acc, a| acc * t + a));
        let exact: f64 = c.iter().enumerate().map(|(k, a)| a / (k + 1) as f64).sum();
        prop_assert!((approx - exact).abs() <= 1e-12 * (1.0 + c.iter().map(|v| v.abs()).sum::<f64>()));
    }

    #[test]
    fn matrix_text_roundtrip(rows in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 0..=36)) {
        let n = (rows.len() as f64).sqrt() as usize;
        let m = DMatrix::from_row_slice(n, n, &rows[..n * n]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        prop_assert_eq!(read_matrix(&buf[..]).unwrap(), m);
    }

    #[test]
    fn dataset_csv_roundtrip(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng);
        let inst = random_instance(&mut rng, model, n);
        let mut buf = Vec::new();
        inst.data.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(&buf[..], &model).unwrap(), inst.data);
    }

    #[test]
    fn offset_and_displacement_are_inverse(a in prop::collection::vec(-1e3..1e3f64, 1..8), seed in any::<u64>()) {
        let p = ParamPoint::from_slice(&a).unwrap();
        let step = common::direction(&mut ChaCha8Rng::seed_from_u64(seed), a.len(), 2.0);
        let q = p.offset(&step).unwrap();
        let back = p.displacement_to(&q).unwrap();
        assert_relative_eq!(back.as_vector(), step.as_vector(), epsilon = 1e-12, max_relative = 1e-12);
    }
}

#[test]
fn family_names_are_kebab_case() {
    assert_eq!(serde_json::to_string(&Family::BinaryLogistic).unwrap(), "\"binary-logistic\"");
}
