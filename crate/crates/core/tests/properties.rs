//! Cross-module invariants as property tests.

use proptest::prelude::*;
use uqe_core::dgp::{generate_sample, true_uqe, DgpSpec, Oracle, Variant};
use uqe_core::estimator::{EstimationConfig, FirstStage, PsKind};
use uqe_core::harness::{self, ExperimentKind, ExperimentPlan};
use uqe_core::propensity::{Link, PsModel};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn link() -> impl Strategy<Value = PsKind> {
    prop_oneof![Just(PsKind::Probit), Just(PsKind::Logit), Just(PsKind::Series)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn estimate_algebra_equivariance_and_centering(
        seed in 0u64..1_000_000,
        beta in -1.0f64..1.0,
        rho in -0.8f64..0.8,
        tau in 0.15f64..0.85,
        shift in -5.0f64..5.0,
        ps in link(),
    ) {
        let data = generate_sample(&DgpSpec::plain(beta, rho, seed), 600).unwrap();
        let config = EstimationConfig { link: ps, ..EstimationConfig::default() }.with_tau(tau);
        let first = FirstStage::fit(&data, &config).unwrap();
        let stage = first.at_tau(&data, &config).unwrap();
        let est = stage.estimate().unwrap();
        let scale = est.t2.abs().max(1e-3);
        prop_assert!((est.pi_hat * est.f_hat * est.t1 + est.t2).abs() <= 1e-12 * scale);

        let c = &stage.components;
        let n = data.n() as f64;
        for (name, v) in [("psi_dp", &c.psi_dp), ("psi_dm", &c.psi_dm), ("psi_m", &c.psi_m)] {
            let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            prop_assert!(mean(v).abs() <= 1e-10 * sd.max(1.0), "{} mean {}", name, mean(v));
        }
        prop_assert!(mean(&c.psi_q).abs() <= 1.0 / (n * est.f_hat) + 1e-12);

        // moving every outcome moves the quantile and nothing else
        let moved = data.with_outcome(data.y().iter().map(|y| y + shift).collect()).unwrap();
        let est2 = FirstStage::fit(&moved, &config).unwrap().at_tau(&moved, &config).unwrap().estimate().unwrap();
        prop_assert!((est2.y_tau - est.y_tau - shift).abs() < 1e-9);
        prop_assert!((est2.pi_hat - est.pi_hat).abs() <= 1e-6 * est.pi_hat.abs().max(1.0));
    }

    #[test]
    fn oracle_cdf_identity_and_symmetry(
        beta in -1.0f64..1.0,
        rho in -0.9f64..0.9,
        tau in 0.05f64..0.95,
        covariate in any::<bool>(),
    ) {
        let variant = if covariate { Variant::Covariate } else { Variant::Plain };
        let spec = DgpSpec { variant, beta, rho, seed: 0 };
        let oracle = Oracle::new(spec).unwrap();
        let r = oracle.evaluate(tau).unwrap();
        prop_assert!(r.identity_residual().abs() <= 1e-6);
        prop_assert!((oracle.cdf_y(r.y_tau).unwrap() - tau).abs() < 1e-9);
        prop_assert!(r.f_y_tau > 0.0);
        let mut prev = 0.0;
        for k in 0..=80 {
            let f = oracle.cdf_y(-10.0 + 0.25 * k as f64).unwrap();
            prop_assert!(f >= prev - 1e-12);
            prev = f;
        }
        prop_assert!(oracle.cdf_y(-10.0).unwrap() < 1e-6 && oracle.cdf_y(10.0).unwrap() > 1.0 - 1e-6);
        // reflecting every latent variable swaps treatment arms and the
        // direction of the intervention: tau -> 1 - tau leaves Pi unchanged
        let flipped = true_uqe(&spec, 1.0 - tau).unwrap();
        prop_assert!((flipped.pi_tau - r.pi_tau).abs() < 1e-6, "{} vs {}", flipped.pi_tau, r.pi_tau);
        if variant == Variant::Plain {
            // negating the outcome errors alone maps (beta, rho) to (-beta, -rho)
            let mirror = true_uqe(&DgpSpec { variant, beta: -beta, rho: -rho, seed: 0 }, 1.0 - tau).unwrap();
            prop_assert!((mirror.pi_tau + r.pi_tau).abs() < 1e-6, "{} vs {}", mirror.pi_tau, r.pi_tau);
            prop_assert!((mirror.y_tau + r.y_tau).abs() < 1e-8);
        }
        let null = true_uqe(&DgpSpec { variant, beta: 0.0, rho, seed: 0 }, tau).unwrap();
        prop_assert_eq!(null.pi_tau, 0.0);
    }

    #[test]
    fn parametric_derivatives_match_finite_differences(
        a0 in -1.0f64..1.0,
        a1 in 0.2f64..2.0,
        a2 in -1.0f64..1.0,
        z in -2.5f64..2.5,
        x in -2.0f64..2.0,
        logit in any::<bool>(),
    ) {
        let link = if logit { Link::Logit } else { Link::Probit };
        let alpha = vec![a0, a1, a2];
        let model = PsModel::parametric(link, alpha.clone(), 1, 1).unwrap();
        let h = 1e-5;
        let fd = (model.propensity(&[z + h], &[x]) - model.propensity(&[z - h], &[x])) / (2.0 * h);
        let an = model.dp_dz1(&[z], &[x]);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-8), "{} vs {}", fd, an);
        let grad = model.d2p_dz1_dalpha(&[z], &[x]).unwrap();
        for (k, g) in grad.iter().enumerate() {
            let mut up = alpha.clone();
            let mut dn = alpha.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (PsModel::parametric(link, up, 1, 1).unwrap().dp_dz1(&[z], &[x])
                - PsModel::parametric(link, dn, 1, 1).unwrap().dp_dz1(&[z], &[x]))
                / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "k={} {} vs {}", k, fd, g);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn experiments_do_not_depend_on_worker_count(seed in any::<u64>(), workers in 2usize..5) {
        let mut plan = ExperimentPlan::new(ExperimentKind::Power);
        plan.beta_grid = vec![0.0, 0.5];
        plan.rho_grid = vec![0.25];
        plan.tau_grid = vec![0.3, 0.5];
        plan.sizes = vec![250];
        plan.replications = 12;
        plan.seed = seed;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let a = one.install(|| harness::run(&plan)).unwrap();
        let b = many.install(|| harness::run(&plan)).unwrap();
        prop_assert_eq!(&a, &b);
        for c in &a.cells {
            prop_assert_eq!(c.completed + c.failed(), 12);
            let r = c.rate;
            prop_assert!((c.rate_se - (r * (1.0 - r) / c.completed as f64).sqrt()).abs() < 1e-15);
        }
    }
}
