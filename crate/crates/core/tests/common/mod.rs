//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use trialsem::rng::{stream, StreamRng};
use trialsem::sem::SemParams;
use trialsem::{EndpointKind, EndpointSpec, TrialDataset};

/// Φ(x) from the power series `½ + φ(x) Σ x^{2k+1}/(2k+1)!!` with
/// compensated summation. All terms share the sign of `x`.
pub fn series_norm_cdf(x: f64) -> f64 {
    let mut term = x;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut k = 0u32;
    while term.abs() > 1e-300 && (term.abs() > 1e-18 * sum.abs() || k < 5) {
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        k += 1;
        term *= x * x / (2 * k + 1) as f64;
    }
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + pdf * sum
}

/// Root of `f(x) = target` for increasing `f` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form difference in arm means of the primary.
pub fn diff_in_means(ds: &TrialDataset) -> f64 {
    let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
    for i in 0..ds.n() {
        let a = ds.arm(i) as usize;
        s[a] += ds.value(i, 0);
        c[a] += 1.0;
    }
    s[1] / c[1] - s[0] / c[0]
}

/// Random dataset with correlated endpoints and an arm shift. A
/// categorical primary is cut from a latent normal at increasing
/// thresholds.
pub fn random_dataset(rng: &mut StreamRng, n_per_arm: usize, p: usize, primary: EndpointKind) -> TrialDataset {
    let shift: f64 = rng.gen_range(-0.5..0.8);
    let load: Vec<f64> = (0..p).map(|_| rng.gen_range(0.2..0.9)).collect();
    let mut arm = Vec::new();
    let mut values = Vec::new();
    for a in 0..2u8 {
        for _ in 0..n_per_arm {
            arm.push(a);
            let eta: f64 = rng.sample(StandardNormal);
            for (j, &l) in load.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                let y = shift * a as f64 * l + l * eta + (1.0 - l * l).sqrt() * e + j as f64 * 0.1;
                let v = match (j, primary) {
                    (0, EndpointKind::Binary) => (y > 0.2) as u8 as f64,
                    (0, EndpointKind::Ordinal { levels }) => {
                        let mut k = 0;
                        while k + 1 < levels && y > -0.6 + 0.7 * k as f64 {
                            k += 1;
                        }
                        k as f64
                    }
                    _ => y,
                };
                values.push(v);
            }
        }
    }
    let mut specs: Vec<EndpointSpec> = (0..p).map(|j| EndpointSpec::continuous(format!("y{}", j + 1))).collect();
    specs[0].kind = primary;
    TrialDataset::new(arm, values, specs).expect("valid dataset")
}

/// Dataset whose every level of a categorical primary occurs in both arms.
pub fn random_dataset_all_levels(seed: u64, n_per_arm: usize, p: usize, primary: EndpointKind) -> TrialDataset {
    for attempt in 0.. {
        let mut rng = stream(seed, &[attempt]);
        let ds = random_dataset(&mut rng, n_per_arm, p, primary);
        let Some(k) = primary.levels() else { return ds };
        let ok = (0..2u8).all(|a| {
            (0..k).all(|lev| (0..ds.n()).any(|i| ds.arm(i) == a && ds.value(i, 0) == lev as f64))
        });
        if ok {
            return ds;
        }
    }
    unreachable!()
}

/// Random admissible parameters for the layout of `ds`.
pub fn random_params(rng: &mut StreamRng, ds: &TrialDataset) -> SemParams {
    let layout = trialsem::sem::SemLayout::for_dataset(ds);
    let p = layout.p;
    let nu: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let lambda: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.2..1.2)).collect();
    let gamma = rng.gen_range(-1.0..1.0);
    let theta: Vec<f64> = (0..p)
        .map(|j| if layout.theta(j).is_some() { rng.gen_range(0.2..2.0) } else { 1.0 })
        .collect();
    let mut cut = 0.0;
    let thresholds: Vec<f64> = (0..layout.n_thresholds())
        .map(|_| {
            cut += rng.gen_range(0.3..1.2);
            cut
        })
        .collect();
    SemParams::new(layout, nu, lambda, gamma, theta, thresholds).expect("admissible")
}

/// Asymptotic two-sample Kolmogorov–Smirnov p-value.
pub fn ks_two_sample_p(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * kf * kf * lam * lam).exp();
    }
    p.clamp(0.0, 1.0)
}
