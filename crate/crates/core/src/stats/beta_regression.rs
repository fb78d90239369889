//! Beta regression with crossed random intercepts.
//!
//! `y ~ Beta(μφ, (1-μ)φ)`, `logit μ = Xβ + Σ_k b_k[level_k]`, with
//! `b_k ~ N(0, σ_k²)` integrated out by the Laplace approximation:
//!
//! ```text
//! ℓ_L(θ) = h(b̂) - Σ_k q_k log σ_k - ½ log det H
//! h(b)   = Σ_i ℓ_i(η_i) - ½ Σ_k |b_k|² / σ_k²
//! H      = Zᵀ W Z + D⁻¹,  W_i = -∂²ℓ_i/∂η²
//! ```
//!
//! `θ = (β, log φ, log σ_k)`. The gradient is analytic: the mode `b̂`
//! depends on `θ` through `∇_b h(b̂; θ) = 0`, so `db̂/dθ = H⁻¹ ∂(∇_b h)/∂θ`,
//! and the log-determinant term needs the third η-derivative of `ℓ_i`.
//! The outer optimizer is Newton's method on a finite-difference Hessian of
//! the analytic gradient, with Levenberg damping and Armijo backtracking.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::special::{digamma, ln_gamma, tetragamma, trigamma};
use super::StatsError;
use crate::prompt::{Adjective, Directness, Verb, WayOfAsking};
use crate::scorer::ReformProbability;
use crate::stimulus::{Experiment, Preamble, PreambleGroup};

/// Fixed-effect names of the Experiment 2 design, in column order.
pub const PREDICTORS: [&str; 7] = [
    "Intercept",
    "indirect",
    "best",
    "refer",
    "choices",
    "ind_dec",
    "ideo_dec",
];

pub const ITEM_FACTOR: &str = "item";
pub const NAME_FACTOR: &str = "name";

/// Binary coding of an Experiment 2 condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionCode {
    indirect: bool,
    best: bool,
    refer: bool,
    choices: bool,
    ind_dec: bool,
    ideo_dec: bool,
}

impl ConditionCode {
    pub fn new(
        indirect: bool,
        best: bool,
        refer: bool,
        choices: bool,
        ind_dec: bool,
        ideo_dec: bool,
    ) -> Result<Self, StatsError> {
        if (best || refer) && !indirect {
            return Err(StatsError::Input("best/refer require indirect".to_string()));
        }
        if [choices, ind_dec, ideo_dec].iter().filter(|b| **b).count() > 1 {
            return Err(StatsError::Input(
                "at most one preamble code may be set".to_string(),
            ));
        }
        Ok(ConditionCode {
            indirect,
            best,
            refer,
            choices,
            ind_dec,
            ideo_dec,
        })
    }

    pub fn from_condition(way: WayOfAsking, group: PreambleGroup) -> Result<Self, StatsError> {
        let (choices, ind_dec, ideo_dec) = match group {
            PreambleGroup::Null => (false, false, false),
            PreambleGroup::Choices => (true, false, false),
            PreambleGroup::IndividualDeclaration => (false, true, false),
            PreambleGroup::IdeologyDeclaration => (false, false, true),
            other => {
                return Err(StatsError::Input(format!(
                    "`{other}` is not an Experiment 2 preamble group"
                )))
            }
        };
        ConditionCode::new(
            way.directness() == Directness::Indirect,
            way.adjective() == Some(Adjective::Best),
            way.verb() == Some(Verb::Refer),
            choices,
            ind_dec,
            ideo_dec,
        )
    }

    /// Design row, intercept first, in [`PREDICTORS`] order.
    pub fn row(&self) -> [f64; 7] {
        let f = |b: bool| if b { 1.0 } else { 0.0 };
        [
            1.0,
            f(self.indirect),
            f(self.best),
            f(self.refer),
            f(self.choices),
            f(self.ind_dec),
            f(self.ideo_dec),
        ]
    }
}

/// `y' = (y (n - 1) + 0.5) / n`, applied to every value.
pub fn squeeze_unit_interval(y: &[f64]) -> Result<Vec<f64>, StatsError> {
    if y.is_empty() {
        return Err(StatsError::Input(
            "cannot squeeze an empty sample".to_string(),
        ));
    }
    if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StatsError::Input(format!("value {bad} outside [0, 1]")));
    }
    let n = y.len() as f64;
    Ok(y.iter().map(|v| (v * (n - 1.0) + 0.5) / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFactor {
    pub name: String,
    /// Level index per observation.
    pub levels: Vec<usize>,
    /// Level labels; `labels[levels[i]]` is observation `i`'s level.
    pub labels: Vec<String>,
}

impl RandomFactor {
    /// Levels are numbered in sorted label order.
    pub fn from_labels<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        let mut uniq: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        uniq.sort();
        uniq.dedup();
        let index: BTreeMap<&str, usize> = uniq
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let levels = labels.iter().map(|s| index[s.as_ref()]).collect();
        RandomFactor {
            name: name.to_string(),
            levels,
            labels: uniq,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaRegressionData {
    pub y: Vec<f64>,
    /// Row-major `n × p` design matrix.
    pub x: Vec<f64>,
    pub predictors: Vec<String>,
    pub factors: Vec<RandomFactor>,
}

impl BetaRegressionData {
    pub fn new(
        y: Vec<f64>,
        rows: &[Vec<f64>],
        predictors: Vec<String>,
        factors: Vec<RandomFactor>,
    ) -> Result<Self, StatsError> {
        let n = y.len();
        let p = predictors.len();
        if n == 0 || p == 0 {
            return Err(StatsError::Input("empty regression data".to_string()));
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != p) {
            return Err(StatsError::Input(
                "design matrix shape does not match".to_string(),
            ));
        }
        if let Some(bad) = y.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(StatsError::Input(format!(
                "response {bad} is not strictly inside (0, 1)"
            )));
        }
        for f in &factors {
            if f.levels.len() != n {
                return Err(StatsError::Input(format!(
                    "factor `{}` has the wrong length",
                    f.name
                )));
            }
            if f.n_levels() < 2 {
                return Err(StatsError::Input(format!(
                    "factor `{}` needs at least 2 levels",
                    f.name
                )));
            }
        }
        Ok(BetaRegressionData {
            y,
            x: rows.iter().flatten().copied().collect(),
            predictors,
            factors,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.predictors.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Fix every random-intercept variance at 0 (fixed-effects fit).
    pub pin_variances_to_zero: bool,
    /// A factor whose `log σ` falls below this while still decreasing is
    /// pinned to σ = 0.
    pub boundary_log_sigma: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            pin_variances_to_zero: false,
            boundary_log_sigma: -8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub predictor: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRegressionFit {
    /// In design-column order.
    pub coefficients: Vec<Coefficient>,
    pub dispersion_phi: f64,
    pub random_intercept_variances: BTreeMap<String, f64>,
    /// Factors whose variance hit the boundary and was fixed at 0.
    pub boundary_factors: Vec<String>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n_obs: usize,
    pub mu_link: String,
}

impl BetaRegressionFit {
    pub fn coefficient(&self, predictor: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.predictor == predictor)
    }

    pub fn predictors(&self) -> Vec<&str> {
        self.coefficients
            .iter()
            .map(|c| c.predictor.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ObsDeriv {
    l: f64,
    h1: f64,
    h2: f64,
    h3: f64,
    dl_dphi: f64,
    dh1_dphi: f64,
    dh2_dphi: f64,
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

struct PhiTerms {
    phi: f64,
    ln_gamma_phi: f64,
    digamma_phi: f64,
}

impl PhiTerms {
    fn new(phi: f64) -> Self {
        PhiTerms {
            phi,
            ln_gamma_phi: ln_gamma(phi),
            digamma_phi: digamma(phi),
        }
    }
}

/// Log density and its derivatives in `η` (up to third order) and `φ`.
fn obs_deriv(eta: f64, pt: &PhiTerms, lny: f64, ln1my: f64, full: bool) -> ObsDeriv {
    let phi = pt.phi;
    let mu = logistic(eta);
    let one_mu = logistic(-eta);
    let g = mu * one_mu;
    let a = mu * phi;
    let b = one_mu * phi;
    let l = pt.ln_gamma_phi - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * lny + (b - 1.0) * ln1my;
    let psi_a = digamma(a);
    let psi_b = digamma(b);
    let r = (lny - ln1my) - (psi_a - psi_b);
    let tri_a = trigamma(a);
    let tri_b = trigamma(b);
    let t1 = tri_a + tri_b;
    let c = one_mu - mu;
    let h1 = phi * g * r;
    let h2 = phi * g * c * r - phi * phi * g * g * t1;
    if !full {
        return ObsDeriv {
            l,
            h1,
            h2,
            ..Default::default()
        };
    }
    let tet_a = tetragamma(a);
    let tet_b = tetragamma(b);
    let t2 = tet_a - tet_b;
    let s2 = mu * tet_a + one_mu * tet_b;
    let m1 = mu * tri_a - one_mu * tri_b;
    let h3 = phi * g * (c * c - 2.0 * g) * r
        - 3.0 * phi * phi * g * g * c * t1
        - phi.powi(3) * g.powi(3) * t2;
    ObsDeriv {
        l,
        h1,
        h2,
        h3,
        dl_dphi: pt.digamma_phi + mu * r + ln1my - psi_b,
        dh1_dphi: g * r - phi * g * m1,
        dh2_dphi: g * c * r - phi * g * c * m1 - 2.0 * phi * g * g * t1 - phi * phi * g * g * s2,
    }
}

/// The Laplace-approximated marginal log-likelihood as a function of
/// `θ = (β, log φ, log σ_k for each active factor)`.
pub struct LaplaceObjective<'a> {
    data: &'a BetaRegressionData,
    lny: Vec<f64>,
    ln1my: Vec<f64>,
    active: Vec<usize>,
    offsets: Vec<usize>,
    q: usize,
    warm: RefCell<Vec<f64>>,
}

struct Mode {
    b: Vec<f64>,
    h_value: f64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    eta: Vec<f64>,
}

const INNER_MAX_ITER: usize = 100;
const INNER_TOL: f64 = 1e-10;

impl<'a> LaplaceObjective<'a> {
    /// `active` lists the factors (by index into `data.factors`) whose
    /// variances are estimated; the others are fixed at σ = 0.
    pub fn new(data: &'a BetaRegressionData, active: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(active.len());
        let mut q = 0;
        for &k in &active {
            offsets.push(q);
            q += data.factors[k].n_levels();
        }
        LaplaceObjective {
            lny: data.y.iter().map(|y| y.ln()).collect(),
            ln1my: data.y.iter().map(|y| (-y).ln_1p()).collect(),
            data,
            active,
            offsets,
            q,
            warm: RefCell::new(vec![0.0; q]),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.p() + 1 + self.active.len()
    }

    fn reset_warm_start(&self) {
        self.warm.borrow_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    fn idx(&self, i: usize, a: usize) -> usize {
        self.offsets[a] + self.data.factors[self.active[a]].levels[i]
    }

    fn fixed_eta(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.data.p();
        (0..self.data.n())
            .map(|i| {
                self.data.x[i * p..(i + 1) * p]
                    .iter()
                    .zip(beta)
                    .map(|(x, b)| x * b)
                    .sum()
            })
            .collect()
    }

    fn inv_var(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.data.p();
        let mut d = vec![0.0; self.q];
        for a in 0..self.active.len() {
            let prec = (-2.0 * theta[p + 1 + a]).exp();
            let start = self.offsets[a];
            let len = self.data.factors[self.active[a]].n_levels();
            d[start..start + len].iter_mut().for_each(|v| *v = prec);
        }
        d
    }

    /// Conditional mode of the random effects; `None` if the Hessian at the
    /// mode is not positive definite.
    fn mode(&self, theta: &[f64], fixed: &[f64], pt: &PhiTerms, start: &[f64]) -> Option<Mode> {
        let n = self.data.n();
        let k = self.active.len();
        let prec = self.inv_var(theta);
        let mut b = start.to_vec();
        let assemble = |b: &[f64], fisher: bool| {
            let mut grad = DVector::<f64>::zeros(self.q);
            let mut h = DMatrix::<f64>::zeros(self.q, self.q);
            let mut value = 0.0;
            let mut eta = vec![0.0; n];
            let mut idx = [0usize; 4];
            for i in 0..n {
                let mut e = fixed[i];
                for a in 0..k {
                    idx[a] = self.idx(i, a);
                    e += b[idx[a]];
                }
                eta[i] = e;
                let d = obs_deriv(e, pt, self.lny[i], self.ln1my[i], false);
                value += d.l;
                let w = if fisher {
                    let mu = logistic(e);
                    let g = mu * (1.0 - mu);
                    pt.phi
                        * pt.phi
                        * g
                        * g
                        * (trigamma(mu * pt.phi) + trigamma((1.0 - mu) * pt.phi))
                } else {
                    -d.h2
                };
                for a in 0..k {
                    grad[idx[a]] += d.h1;
                    for c in 0..k {
                        h[(idx[a], idx[c])] += w;
                    }
                }
            }
            for j in 0..self.q {
                value -= 0.5 * b[j] * b[j] * prec[j];
                grad[j] -= b[j] * prec[j];
                h[(j, j)] += prec[j];
            }
            (value, grad, h, eta)
        };

        if self.q == 0 {
            let (value, _, _, eta) = assemble(&b, false);
            return Some(Mode {
                b,
                h_value: value,
                chol: None,
                eta,
            });
        }

        for _ in 0..INNER_MAX_ITER {
            let (value, grad, h, _) = assemble(&b, false);
            if !value.is_finite() {
                return None;
            }
            let gmax = grad.amax();
            let chol = match h.clone().cholesky() {
                Some(c) => c,
                None => assemble(&b, true).2.cholesky()?,
            };
            let step = chol.solve(&grad);
            if gmax < INNER_TOL && step.amax() < 1e-12 {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-10 {
                let cand: Vec<f64> = b
                    .iter()
                    .zip(step.iter())
                    .map(|(x, s)| x + alpha * s)
                    .collect();
                let (v2, ..) = assemble(&cand, false);
                if v2.is_finite() && v2 >= value - 1e-12 * value.abs().max(1.0) {
                    b = cand;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let (value, _, h, eta) = assemble(&b, false);
        let chol = h.cholesky()?;
        Some(Mode {
            b,
            h_value: value,
            chol: Some(chol),
            eta,
        })
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], PhiTerms) {
        let p = self.data.p();
        (&theta[..p], PhiTerms::new(theta[p].exp()))
    }

    fn value_at(&self, theta: &[f64], mode: &Mode) -> f64 {
        let p = self.data.p();
        let mut v = mode.h_value;
        for a in 0..self.active.len() {
            v -= self.data.factors[self.active[a]].n_levels() as f64 * theta[p + 1 + a];
        }
        if let Some(chol) = &mode.chol {
            let l = chol.l_dirty();
            v -= (0..self.q).map(|j| l[(j, j)].ln()).sum::<f64>();
        }
        v
    }

    fn eval(&self, theta: &[f64], want_grad: bool, warm: bool) -> Option<(f64, Vec<f64>)> {
        if theta.iter().any(|t| !t.is_finite()) {
            return None;
        }
        let (beta, pt) = self.split(theta);
        let fixed = self.fixed_eta(beta);
        let start = if warm {
            self.warm.borrow().clone()
        } else {
            vec![0.0; self.q]
        };
        let mode = self.mode(theta, &fixed, &pt, &start)?;
        let value = self.value_at(theta, &mode);
        if !value.is_finite() {
            return None;
        }
        if warm {
            self.warm.borrow_mut().clone_from(&mode.b);
        }
        if !want_grad {
            return Some((value, Vec::new()));
        }
        Some((value, self.gradient_at(theta, &pt, &mode)))
    }

    fn gradient_at(&self, theta: &[f64], pt: &PhiTerms, mode: &Mode) -> Vec<f64> {
        let n = self.data.n();
        let p = self.data.p();
        let k = self.active.len();
        let q = self.q;
        let hinv = mode.chol.as_ref().map(|c| c.inverse());
        let derivs: Vec<ObsDeriv> = (0..n)
            .map(|i| obs_deriv(mode.eta[i], pt, self.lny[i], self.ln1my[i], true))
            .collect();
        let mut s = vec![0.0; n];
        let mut r = DVector::<f64>::zeros(q);
        if let Some(hinv) = &hinv {
            for i in 0..n {
                let mut acc = 0.0;
                for a in 0..k {
                    for c in 0..k {
                        acc += hinv[(self.idx(i, a), self.idx(i, c))];
                    }
                }
                s[i] = acc;
                let u = -derivs[i].h3 * acc;
                for a in 0..k {
                    r[self.idx(i, a)] += u;
                }
            }
        }
        let v = match &mode.chol {
            Some(chol) => chol.solve(&r),
            None => DVector::zeros(0),
        };
        let vz: Vec<f64> = (0..n)
            .map(|i| (0..k).map(|a| v[self.idx(i, a)]).sum())
            .collect();

        let mut grad = vec![0.0; p + 1 + k];
        for i in 0..n {
            let d = &derivs[i];
            let w = d.h1 + 0.5 * d.h3 * s[i] - 0.5 * d.h2 * vz[i];
            let row = &self.data.x[i * p..(i + 1) * p];
            for j in 0..p {
                grad[j] += row[j] * w;
            }
            grad[p] += d.dl_dphi + 0.5 * d.dh2_dphi * s[i] - 0.5 * d.dh1_dphi * vz[i];
        }
        grad[p] *= pt.phi;
        if let Some(hinv) = &hinv {
            for a in 0..k {
                let start = self.offsets[a];
                let len = self.data.factors[self.active[a]].n_levels();
                let sigma2 = (2.0 * theta[p + 1 + a]).exp();
                let mut bb = 0.0;
                let mut tr = 0.0;
                let mut vb = 0.0;
                for j in start..start + len {
                    bb += mode.b[j] * mode.b[j];
                    tr += hinv[(j, j)];
                    vb += v[j] * mode.b[j];
                }
                grad[p + 1 + a] = (bb + tr - vb) / sigma2 - len as f64;
            }
        }
        grad
    }

    /// Laplace log-likelihood at `θ`, solved from a cold start.
    pub fn value(&self, theta: &[f64]) -> Option<f64> {
        self.eval(theta, false, false).map(|(v, _)| v)
    }

    /// Value and analytic gradient at `θ`, solved from a cold start.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.eval(theta, true, false)
    }

    /// Conditional modes of the random effects at `θ`, per active factor.
    pub fn random_effects(&self, theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        let (beta, pt) = self.split(theta);
        let fixed = self.fixed_eta(beta);
        let mode = self.mode(theta, &fixed, &pt, &vec![0.0; self.q])?;
        Some(
            (0..self.active.len())
                .map(|a| {
                    let start = self.offsets[a];
                    let len = self.data.factors[self.active[a]].n_levels();
                    mode.b[start..start + len].to_vec()
                })
                .collect(),
        )
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Negative Hessian of `ℓ_L` by differencing the analytic gradient.
fn neg_hessian(
    obj: &LaplaceObjective,
    theta: &[f64],
    grad: &[f64],
    central: bool,
) -> Option<DMatrix<f64>> {
    let d = theta.len();
    let mut hm = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let h = (if central { 1e-4 } else { 1e-5 }) * theta[j].abs().max(1.0);
        let mut tp = theta.to_vec();
        tp[j] += h;
        let (_, gp) = obj.eval(&tp, true, true)?;
        let col: Vec<f64> = if central {
            let mut tm = theta.to_vec();
            tm[j] -= h;
            let (_, gm) = obj.eval(&tm, true, true)?;
            gp.iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        } else {
            gp.iter().zip(grad).map(|(a, b)| (a - b) / h).collect()
        };
        for i in 0..d {
            hm[(i, j)] = -col[i];
        }
    }
    // Restore the warm start at the centre point.
    obj.eval(theta, false, true)?;
    Some((&hm + hm.transpose()) * 0.5)
}

/// OLS of logit(y) on X, and the moment estimate of φ from its residuals.
fn initial_values(data: &BetaRegressionData) -> Result<(Vec<f64>, f64), StatsError> {
    let n = data.n();
    let p = data.p();
    let x = DMatrix::from_row_slice(n, p, &data.x);
    let z = DVector::from_iterator(n, data.y.iter().map(|y| (y / (1.0 - y)).ln()));
    let xtx = x.transpose() * &x;
    let sv = xtx.clone().svd(false, false).singular_values;
    let max = sv.max();
    if n <= p || sv.min() <= 1e-10 * max {
        return Err(StatsError::RankDeficient);
    }
    let beta = xtx
        .cholesky()
        .ok_or(StatsError::RankDeficient)?
        .solve(&(x.transpose() * &z));
    let fitted = &x * &beta;
    let resid = &z - &fitted;
    let s2 = resid.norm_squared() / (n - p) as f64;
    let mut phi = 0.0;
    for f in fitted.iter() {
        let mu = logistic(*f);
        phi += 1.0 / (s2 * mu * (1.0 - mu)) - 1.0;
    }
    phi /= n as f64;
    let phi = if phi.is_finite() {
        phi.clamp(1.0, 1e6)
    } else {
        1.0
    };
    Ok((beta.iter().copied().collect(), phi))
}

fn initial_log_sigma(data: &BetaRegressionData, beta: &[f64], factor: &RandomFactor) -> f64 {
    let p = data.p();
    let mut sums = vec![0.0; factor.n_levels()];
    let mut counts = vec![0usize; factor.n_levels()];
    for i in 0..data.n() {
        let fitted: f64 = data.x[i * p..(i + 1) * p]
            .iter()
            .zip(beta)
            .map(|(x, b)| x * b)
            .sum();
        let z = (data.y[i] / (1.0 - data.y[i])).ln();
        sums[factor.levels[i]] += z - fitted;
        counts[factor.levels[i]] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c > 0)
        .map(|(s, c)| s / *c as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64;
    var.sqrt().max(0.05).ln()
}

/// Maximum Laplace-marginal-likelihood fit. Non-convergence is reported in
/// the result, not as an error.
pub fn fit_beta_regression(
    data: &BetaRegressionData,
    options: &FitOptions,
) -> Result<BetaRegressionFit, StatsError> {
    let p = data.p();
    let (beta0, phi0) = initial_values(data)?;
    let mut active: Vec<usize> = if options.pin_variances_to_zero {
        Vec::new()
    } else {
        (0..data.factors.len()).collect()
    };
    let mut boundary = Vec::new();
    let mut theta: Vec<f64> = beta0.clone();
    theta.push(phi0.ln());
    for &k in &active {
        theta.push(initial_log_sigma(data, &beta0, &data.factors[k]));
    }

    let mut obj = LaplaceObjective::new(data, active.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut current = obj.eval(&theta, true, true);
    if current.is_none() {
        // Start from small variances if the initial guess is unusable.
        for t in theta.iter_mut().skip(p + 1) {
            *t = 0.1f64.ln();
        }
        obj.reset_warm_start();
        current = obj.eval(&theta, true, true);
    }
    let (mut f, mut grad) = current.ok_or(StatsError::Numerical(
        "objective undefined at the starting point".to_string(),
    ))?;

    while iterations < options.max_iterations {
        if norm(&grad) < options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Boundary: a variance collapsing towards zero is fixed at zero.
        if let Some(a) = (0..active.len())
            .find(|&a| theta[p + 1 + a] < options.boundary_log_sigma && grad[p + 1 + a] < 0.0)
        {
            let k = active.remove(a);
            boundary.push(data.factors[k].name.clone());
            theta.remove(p + 1 + a);
            obj = LaplaceObjective::new(data, active.clone());
            let (f2, g2) = obj.eval(&theta, true, true).ok_or(StatsError::Numerical(
                "objective undefined after pinning a variance".to_string(),
            ))?;
            f = f2;
            grad = g2;
            continue;
        }

        let Some(nh) = neg_hessian(&obj, &theta, &grad, false) else {
            break;
        };
        let g = DVector::from_column_slice(&grad);
        let scale = nh
            .diagonal()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        let mut lambda = 0.0;
        let mut moved = false;
        while lambda <= 1e10 * scale {
            let damped = &nh + DMatrix::identity(theta.len(), theta.len()) * lambda;
            let Some(chol) = damped.cholesky() else {
                lambda = if lambda == 0.0 {
                    1e-6 * scale
                } else {
                    lambda * 10.0
                };
                continue;
            };
            let mut step = chol.solve(&g);
            let biggest = step.amax();
            if biggest > 5.0 {
                step *= 5.0 / biggest;
            }
            let slope = g.dot(&step);
            let gnorm = norm(&grad);
            let mut alpha = 1.0;
            while alpha > 1e-8 {
                let cand: Vec<f64> = theta
                    .iter()
                    .zip(step.iter())
                    .map(|(t, s)| t + alpha * s)
                    .collect();
                if let Some((f2, g2)) = obj.eval(&cand, true, true) {
                    let armijo = f2 >= f + 1e-4 * alpha * slope;
                    let flat =
                        alpha == 1.0 && f2 >= f - 1e-10 * f.abs().max(1.0) && norm(&g2) < gnorm;
                    if armijo || flat {
                        theta = cand;
                        f = f2;
                        grad = g2;
                        moved = true;
                        break;
                    }
                } else {
                    obj.eval(&theta, false, true);
                }
                alpha *= 0.5;
            }
            if moved {
                break;
            }
            lambda = if lambda == 0.0 {
                1e-3 * scale
            } else {
                lambda * 10.0
            };
        }
        if !moved {
            break;
        }
    }
    if !converged && norm(&grad) < options.gradient_tolerance {
        converged = true;
    }
    if !converged {
        tracing::warn!(
            iterations,
            gradient_norm = norm(&grad),
            "beta regression did not converge"
        );
    }

    let info = neg_hessian(&obj, &theta, &grad, true);
    let cov = info.and_then(|h| h.try_inverse());
    let mut coefficients = Vec::with_capacity(p);
    for j in 0..p {
        let se = cov
            .as_ref()
            .map(|c| c[(j, j)])
            .filter(|v| *v > 0.0)
            .map(f64::sqrt)
            .unwrap_or(f64::NAN);
        let z = theta[j] / se;
        coefficients.push(Coefficient {
            predictor: data.predictors[j].clone(),
            estimate: theta[j],
            std_error: se,
            z,
            p_value: if z.is_finite() {
                erfc(z.abs() / std::f64::consts::SQRT_2)
            } else {
                f64::NAN
            },
        });
    }
    let mut variances = BTreeMap::new();
    for (k, factor) in data.factors.iter().enumerate() {
        let v = match active.iter().position(|&a| a == k) {
            Some(a) => (2.0 * theta[p + 1 + a]).exp(),
            None => 0.0,
        };
        variances.insert(factor.name.clone(), v);
    }
    Ok(BetaRegressionFit {
        coefficients,
        dispersion_phi: theta[p].exp(),
        random_intercept_variances: variances,
        boundary_factors: boundary,
        log_likelihood: f,
        converged,
        iterations,
        gradient_norm: norm(&grad),
        n_obs: data.n(),
        mu_link: "logit".to_string(),
    })
}

/// Cells of an Experiment 2 design: `(template_id, name, way, preamble_id)`.
pub type Exp2Cell = (String, String, WayOfAsking, String);

/// Build the regression data for one model's Experiment 2 results. Every
/// combination of the observed templates and names with all ways of asking
/// and all applicable preambles must be present.
pub fn exp2_design(
    results: &[ReformProbability],
    preambles: &[Preamble],
) -> Result<BetaRegressionData, StatsError> {
    let domain = results
        .first()
        .map(|r| r.domain)
        .ok_or_else(|| StatsError::Input("no Experiment 2 results".to_string()))?;
    let bank: BTreeMap<&str, PreambleGroup> = preambles
        .iter()
        .filter(|p| p.experiment == Experiment::Exp2 && p.applies_to(domain))
        .map(|p| (p.id.as_str(), p.group))
        .collect();
    let mut present: BTreeMap<Exp2Cell, f64> = BTreeMap::new();
    for r in results {
        let way = r.way_of_asking.ok_or_else(|| {
            StatsError::Input(format!("result `{}` has no way of asking", r.item_id))
        })?;
        if r.experiment != Experiment::Exp2
            || r.domain != domain
            || !bank.contains_key(r.preamble_id.as_str())
        {
            return Err(StatsError::Input(format!(
                "result `{}` is not an Experiment 2 {} result",
                r.item_id,
                domain.as_str()
            )));
        }
        present.insert(
            (
                r.template_id.clone(),
                r.name.clone(),
                way,
                r.preamble_id.clone(),
            ),
            r.p_reform,
        );
    }
    let mut templates: Vec<&str> = results.iter().map(|r| r.template_id.as_str()).collect();
    templates.sort();
    templates.dedup();
    let mut names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    names.sort();
    names.dedup();
    let mut missing = Vec::new();
    for t in &templates {
        for n in &names {
            for w in WayOfAsking::all() {
                for pid in bank.keys() {
                    let key = (t.to_string(), n.to_string(), w, pid.to_string());
                    if !present.contains_key(&key) {
                        missing.push(format!(
                            "template={t} name={n} way={} preamble={pid}",
                            w.label()
                        ));
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(StatsError::MissingCell(missing.join("; ")));
    }

    let raw: Vec<f64> = present.values().copied().collect();
    let y = squeeze_unit_interval(&raw)?;
    let mut rows = Vec::with_capacity(present.len());
    let mut items = Vec::with_capacity(present.len());
    let mut who = Vec::with_capacity(present.len());
    for (t, n, w, pid) in present.keys() {
        rows.push(
            ConditionCode::from_condition(*w, bank[pid.as_str()])?
                .row()
                .to_vec(),
        );
        items.push(t.as_str());
        who.push(n.as_str());
    }
    BetaRegressionData::new(
        y,
        &rows,
        PREDICTORS.iter().map(|s| s.to_string()).collect(),
        vec![
            RandomFactor::from_labels(ITEM_FACTOR, &items),
            RandomFactor::from_labels(NAME_FACTOR, &who),
        ],
    )
}
