mod common;

use rand::Rng;
use rand_distr::StandardNormal;
use trialsem::data::Method;
use trialsem::dist::norm_quantile;
use trialsem::rng::stream;
use trialsem::sem::{
    ate_sem, concordance, fit_sem, implied_moments, probit_coefficient, sem_loglik, sem_loglik_gradient,
    FitOptions, SemLayout, SemParams, WarmStart,
};
use trialsem::sim::{gen_sim_a, loadings_a, gamma_a, run_monte_carlo, Design, Hypothesis, McConfig, SimScenario};
use trialsem::{EndpointKind, EndpointSpec, TrialDataset};

use common::{random_dataset_all_levels, random_params};

const KINDS: [EndpointKind; 3] = [
    EndpointKind::Continuous,
    EndpointKind::Binary,
    EndpointKind::Ordinal { levels: 4 },
];

fn central_difference(params: &SemParams, ds: &TrialDataset) -> Vec<f64> {
    let x0 = params.to_free();
    (0..x0.len())
        .map(|i| {
            let h = 1e-5 * x0[i].abs().max(1.0);
            let mut x = x0.clone();
            x[i] = x0[i] + h;
            let fp = sem_loglik(&SemParams::from_free(params.layout, &x), ds);
            x[i] = x0[i] - h;
            let fm = sem_loglik(&SemParams::from_free(params.layout, &x), ds);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for point in 0..100u64 {
        let kind = KINDS[point as usize % 3];
        let ds = random_dataset_all_levels(point, 15, 3 + (point % 3) as usize, kind);
        let params = random_params(&mut stream(500, &[point]), &ds);
        let (ll, g) = sem_loglik_gradient(&params, &ds).unwrap();
        let reference = sem_loglik(&params, &ds);
        assert!((ll - reference).abs() <= 1e-9 * reference.abs().max(1.0), "{ll} vs {reference}");
        for (a, b) in g.iter().zip(central_difference(&params, &ds)) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn sign_flip_leaves_everything_unchanged() {
    for (k, &kind) in KINDS.iter().enumerate() {
        let ds = random_dataset_all_levels(40 + k as u64, 80, 3, kind);
        let fit = fit_sem(&ds, &FitOptions::default()).unwrap();
        let flipped = fit.params.flipped();
        let (a, b) = (sem_loglik(&fit.params, &ds), sem_loglik(&flipped, &ds));
        assert!((a - b).abs() <= 1e-10 * a.abs());
        for arm in 0..2 {
            let (m1, c1) = implied_moments(&fit.params, arm);
            let (m2, c2) = implied_moments(&flipped, arm);
            assert_eq!(m1, m2);
            assert!((c1.matrix() - c2.matrix()).amax() <= 1e-15);
        }
        let mut other = fit.clone();
        other.params = flipped;
        // The flip negates (γ, λ) and their covariance with everything else.
        let l = fit.params.layout;
        for i in l.lambda(0)..=l.gamma() {
            for j in 0..l.n_free() {
                if !(l.lambda(0)..=l.gamma()).contains(&j) {
                    other.param_cov[(i, j)] = -other.param_cov[(i, j)];
                    other.param_cov[(j, i)] = -other.param_cov[(j, i)];
                }
            }
        }
        let same = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
        let (r1, r2) = (ate_sem(&fit).unwrap(), ate_sem(&other).unwrap());
        assert!(same(r1.estimate, r2.estimate) && same(r1.std_error, r2.std_error));
        if kind != EndpointKind::Continuous {
            let (r1, r2) = (probit_coefficient(&fit).unwrap(), probit_coefficient(&other).unwrap());
            assert!(same(r1.estimate, r2.estimate) && same(r1.std_error, r2.std_error));
            let (r1, r2) = (concordance(&fit).unwrap(), concordance(&other).unwrap());
            assert!(same(r1.estimate, r2.estimate) && (r1.std_error - r2.std_error).abs() <= 1e-8);
        }
    }
}

#[test]
fn treatment_effect_chain_holds_at_the_optimum() {
    for seed in 0..10 {
        let ds = gen_sim_a(0.35, Hypothesis::Alternative, 250, &mut stream(seed, &[])).unwrap();
        let p = fit_sem(&ds, &FitOptions::default()).unwrap().params;
        let (m0, _) = implied_moments(&p, 0);
        let (m1, _) = implied_moments(&p, 1);
        for j in 0..3 {
            if p.lambda[j] != 0.0 {
                let chained = p.lambda[0] * (m1[j] - m0[j]) / p.lambda[j];
                assert!((p.gamma * p.lambda[0] - chained).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn large_sample_fit_recovers_the_generator() {
    let ds = gen_sim_a(0.35, Hypothesis::Alternative, 100_000, &mut stream(2024, &[])).unwrap();
    let fit = fit_sem(&ds, &FitOptions::default()).unwrap();
    let l = fit.params.layout;
    let se = |i: usize| fit.param_cov[(i, i)].sqrt();
    let gamma = gamma_a(0.35);
    assert!((gamma - 0.5).abs() < 1e-12);
    assert!((fit.params.gamma - gamma).abs() <= 3.0 * se(l.gamma()), "{}", fit.params.gamma);
    for (j, lam) in loadings_a(0.35).unwrap().iter().enumerate() {
        assert!((fit.params.lambda[j] - lam).abs() <= 3.0 * se(l.lambda(j)), "lambda{j}");
    }
}

#[test]
fn random_starts_reach_the_same_maximum() {
    let ds = gen_sim_a(0.35, Hypothesis::Alternative, 250, &mut stream(77, &[])).unwrap();
    let mut logliks = Vec::new();
    for k in 0..5 {
        let mut start = random_params(&mut stream(78, &[k]), &ds);
        // Keep the start's factor structure away from the degenerate λ = 0.
        start.lambda.iter_mut().for_each(|v| *v = v.abs().max(0.2));
        let opts = FitOptions {
            start: Some(WarmStart::from(start)),
            ..FitOptions::default()
        };
        logliks.push(fit_sem(&ds, &opts).unwrap().loglik);
    }
    let lo = logliks.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo <= 1e-4, "{logliks:?}");
}

#[test]
fn optimizer_trace_never_decreases() {
    for (k, &kind) in KINDS.iter().enumerate() {
        let ds = random_dataset_all_levels(90 + k as u64, 100, 4, kind);
        let fit = fit_sem(&ds, &FitOptions::default()).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]), "{kind:?}");
    }
}

#[test]
fn single_arm_data_is_rejected() {
    let specs: Vec<EndpointSpec> = (1..=3).map(|j| EndpointSpec::continuous(format!("y{j}"))).collect();
    let values: Vec<f64> = (0..30).map(|i| (i * 7 % 11) as f64).collect();
    let built = TrialDataset::new(vec![0; 10], values, specs);
    assert!(built.is_err() || fit_sem(&built.unwrap(), &FitOptions::default()).is_err());
}

#[test]
fn probit_coefficient_agrees_with_probit_regression() {
    let (lam, gamma) = (0.72f64, 0.5f64);
    let layout = SemLayout { p: 3, levels: Some(2) };
    let params = SemParams::new(layout, vec![-0.4, 0.0, 0.0], vec![lam, 0.6, 0.5], gamma, vec![1.0, 0.6, 0.7], vec![])
        .unwrap();
    let mut fit = fit_sem(
        &gen_sim_a(0.35, Hypothesis::Alternative, 50, &mut stream(1, &[])).unwrap(),
        &FitOptions { compute_cov: false, ..FitOptions::default() },
    )
    .unwrap();
    fit.params = params;
    let direct = probit_coefficient(&fit).unwrap().estimate;
    assert!((direct - 0.2922).abs() < 5e-5);

    // A probit regression on one binary regressor has the closed-form MLE
    // Φ⁻¹(p̂₁) − Φ⁻¹(p̂₀).
    let mut rng = stream(5, &[]);
    let n = 400_000;
    let mut succ = [0usize; 2];
    for i in 0..n {
        let a = i % 2;
        let eta = gamma * a as f64 + rng.sample::<f64, _>(StandardNormal);
        let ystar = -0.4 + lam * eta + rng.sample::<f64, _>(StandardNormal);
        succ[a] += (ystar > 0.0) as usize;
    }
    let half = (n / 2) as f64;
    let p = succ.map(|s| s as f64 / half);
    let beta = norm_quantile(p[1]).unwrap() - norm_quantile(p[0]).unwrap();
    assert!((beta - direct).abs() < 0.015, "{beta} vs {direct}");
}

#[test]
fn sem_is_at_least_as_efficient_as_saturated() {
    let sc = SimScenario::new(Design::A, Hypothesis::Alternative, 0.35, 250);
    let cfg = McConfig {
        reps: 1000,
        methods: vec![Method::Saturated, Method::Sem],
        bootstrap_b: 0,
        seed: 21,
        ..McConfig::default()
    };
    let (s, _) = run_monte_carlo(&sc, &cfg).unwrap();
    let sat = s.method(Method::Saturated).unwrap().se;
    let sem = s.method(Method::Sem).unwrap().se;
    assert!(sem <= sat, "{sem} > {sat}");
}
