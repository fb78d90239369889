use ideolens_core::stats::{
    fit_beta_regression, BetaRegressionData, FitOptions, LaplaceObjective, RandomFactor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use statrs::function::gamma::ln_gamma;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Crossed design: observation `i` has item `i % items` and name
/// `(i / items) % names`, a Bernoulli(0.5) predictor and logit mean
/// `b0 + b1 x + u_item + v_name`.
fn simulate(
    seed: u64,
    n: usize,
    items: usize,
    names: usize,
    sd: (f64, f64),
    beta: (f64, f64),
    phi: f64,
) -> BetaRegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..items)
        .map(|_| Normal::new(0.0, sd.0.max(1e-300)).unwrap().sample(&mut rng))
        .collect();
    let v: Vec<f64> = (0..names)
        .map(|_| Normal::new(0.0, sd.1.max(1e-300)).unwrap().sample(&mut rng))
        .collect();
    let mut y = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut item_labels = Vec::with_capacity(n);
    let mut name_labels = Vec::with_capacity(n);
    for i in 0..n {
        let item = i % items;
        let name = (i / items) % names;
        let x = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let mu = logistic(beta.0 + beta.1 * x + u[item] + v[name]);
        let draw = Beta::new(mu * phi, (1.0 - mu) * phi)
            .unwrap()
            .sample(&mut rng);
        y.push(draw.clamp(1e-12, 1.0 - 1e-12));
        rows.push(vec![1.0, x]);
        item_labels.push(format!("i{item:03}"));
        name_labels.push(format!("n{name:03}"));
    }
    BetaRegressionData::new(
        y,
        &rows,
        vec!["Intercept".into(), "x".into()],
        vec![
            RandomFactor::from_labels("item", &item_labels),
            RandomFactor::from_labels("name", &name_labels),
        ],
    )
    .unwrap()
}

#[test]
fn laplace_gradient_matches_central_differences() {
    let data = simulate(11, 400, 10, 8, (0.3, 0.2), (-1.0, 0.8), 25.0);
    let obj = LaplaceObjective::new(&data, vec![0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let theta = vec![
            rng.random_range(-1.5..-0.5),
            rng.random_range(0.3..1.3),
            rng.random_range(2.0..4.0),
            rng.random_range(-2.0..-0.5),
            rng.random_range(-2.0..-0.5),
        ];
        let (_, grad) = obj.value_and_gradient(&theta).unwrap();
        for j in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                "component {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }
}

fn beta_logpdf(y: f64, mu: f64, phi: f64) -> f64 {
    ln_gamma(phi) - ln_gamma(mu * phi) - ln_gamma((1.0 - mu) * phi)
        + (mu * phi - 1.0) * y.ln()
        + ((1.0 - mu) * phi - 1.0) * (1.0 - y).ln()
}

#[test]
fn laplace_close_to_quadrature_on_small_instance() {
    // One factor with 4 levels: the marginal likelihood factorizes into
    // one-dimensional integrals, evaluated here by a fine trapezoid rule.
    let mut data = simulate(5, 120, 4, 2, (0.5, 0.0), (-0.5, 0.6), 20.0);
    data.factors.truncate(1);
    let theta = [-0.5, 0.6, 20.0f64.ln(), 0.5f64.ln()];
    let obj = LaplaceObjective::new(&data, vec![0]);
    let laplace = obj.value(&theta).unwrap();

    let sigma = 0.5;
    let mut exact = 0.0;
    for level in 0..4 {
        let obs: Vec<usize> = (0..data.n())
            .filter(|&i| data.factors[0].levels[i] == level)
            .collect();
        let log_integrand = |b: f64| {
            let mut s =
                -0.5 * (b / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
            for &i in &obs {
                let eta = theta[0] + theta[1] * data.x[2 * i + 1] + b;
                s += beta_logpdf(data.y[i], logistic(eta), theta[2].exp());
            }
            s
        };
        let steps = 20_000;
        let (lo, hi) = (-6.0 * sigma, 6.0 * sigma);
        let dx = (hi - lo) / steps as f64;
        let vals: Vec<f64> = (0..=steps)
            .map(|k| log_integrand(lo + k as f64 * dx))
            .collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = vals
            .iter()
            .enumerate()
            .map(|(k, v)| (v - m).exp() * if k == 0 || k == steps { 0.5 } else { 1.0 })
            .sum();
        exact += m + (sum * dx).ln();
    }
    assert!(
        (laplace - exact).abs() < 0.02,
        "laplace {laplace} vs quadrature {exact}"
    );
}

/// Independent fixed-effects fit: Fisher scoring on β with a
/// one-dimensional Newton update for φ.
fn fixed_effects_oracle(data: &BetaRegressionData) -> (Vec<f64>, f64) {
    use statrs::function::gamma::digamma;
    let trigamma = |x: f64| {
        let h = 1e-4 * x;
        (digamma(x + h) - digamma(x - h)) / (2.0 * h)
    };
    let p = data.p();
    let n = data.n();
    let mut beta = vec![0.0; p];
    let mut phi = 10.0;
    for _ in 0..500 {
        // β step: Fisher scoring.
        let mut info = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut score = nalgebra::DVector::<f64>::zeros(p);
        for i in 0..n {
            let row = &data.x[i * p..(i + 1) * p];
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = logistic(eta);
            let g = mu * (1.0 - mu);
            let ystar = (data.y[i] / (1.0 - data.y[i])).ln();
            let mustar = digamma(mu * phi) - digamma((1.0 - mu) * phi);
            let w = phi * phi * g * g * (trigamma(mu * phi) + trigamma((1.0 - mu) * phi));
            for j in 0..p {
                score[j] += phi * g * (ystar - mustar) * row[j];
                for k in 0..p {
                    info[(j, k)] += w * row[j] * row[k];
                }
            }
        }
        let step = info.cholesky().unwrap().solve(&score);
        for j in 0..p {
            beta[j] += step[j];
        }
        // φ step: Newton on the profile in φ with β fixed, using exact
        // differences of the log-likelihood.
        let ll = |phi: f64| -> f64 {
            (0..n)
                .map(|i| {
                    let row = &data.x[i * p..(i + 1) * p];
                    let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                    beta_logpdf(data.y[i], logistic(eta), phi)
                })
                .sum()
        };
        let h = 1e-3 * phi;
        let d1 = (ll(phi + h) - ll(phi - h)) / (2.0 * h);
        let d2 = (ll(phi + h) - 2.0 * ll(phi) + ll(phi - h)) / (h * h);
        let new_phi = if d2 < 0.0 { phi - d1 / d2 } else { phi * 1.5 };
        let dphi = new_phi.clamp(phi * 0.5, phi * 2.0) - phi;
        phi += dphi;
        if step.amax() < 1e-13 && dphi.abs() < 1e-10 * phi {
            break;
        }
    }
    (beta, phi)
}

#[test]
fn pinned_variances_match_fixed_effects_oracle() {
    let data = simulate(3, 2000, 20, 10, (0.0, 0.0), (-1.0, 0.8), 25.0);
    let fit = fit_beta_regression(
        &data,
        &FitOptions {
            pin_variances_to_zero: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(fit.converged);
    let (beta, phi) = fixed_effects_oracle(&data);
    for (c, b) in fit.coefficients.iter().zip(&beta) {
        assert!((c.estimate - b).abs() < 1e-6, "{} vs {b}", c.estimate);
    }
    assert!((fit.dispersion_phi - phi).abs() < 1e-4 * phi);
    assert_eq!(fit.random_intercept_variances["item"], 0.0);
}

#[test]
fn recovers_parameters_without_random_effects() {
    let data = simulate(7, 4000, 50, 40, (0.0, 0.0), (-1.0, 0.8), 25.0);
    let fit = fit_beta_regression(&data, &FitOptions::default()).unwrap();
    assert!(fit.converged, "{fit:?}");
    assert!((fit.coefficients[0].estimate + 1.0).abs() < 0.05);
    assert!((fit.coefficients[1].estimate - 0.8).abs() < 0.05);
    assert!((fit.dispersion_phi / 25.0 - 1.0).abs() < 0.15);
}

#[test]
fn recovers_parameters_with_crossed_intercepts() {
    let data = simulate(1, 4000, 50, 40, (0.3, 0.2), (-1.0, 0.8), 25.0);
    let fit = fit_beta_regression(&data, &FitOptions::default()).unwrap();
    assert!(fit.converged, "{fit:?}");
    assert!(fit.gradient_norm < 1e-6);
    assert!((fit.coefficients[0].estimate + 1.0).abs() < 0.1, "{fit:?}");
    assert!((fit.coefficients[1].estimate - 0.8).abs() < 0.1);
    assert!((fit.dispersion_phi / 25.0 - 1.0).abs() < 0.2);
    let item_sd = fit.random_intercept_variances["item"].sqrt();
    assert!(item_sd > 0.15 && item_sd < 0.5, "{item_sd}");
}

#[test]
fn constant_response_keeps_zero_coefficients() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, (i % 2) as f64]).collect();
    let data = BetaRegressionData::new(
        vec![0.5; 40],
        &rows,
        vec!["Intercept".into(), "x".into()],
        vec![],
    )
    .unwrap();
    let fit = fit_beta_regression(&data, &FitOptions::default()).unwrap();
    assert!(fit.coefficients[0].estimate.abs() < 1e-9);
    assert!(fit.coefficients[1].estimate.abs() < 1e-9);
}
