//! Ordinary Kriging with an anisotropic squared-exponential correlation.
//!
//! Correlation between inputs `a` and `b` is `exp(-Σ θ_i (a_i - b_i)²)`;
//! the training correlation matrix carries an extra `λ` on its diagonal.
//! `θ` and `λ` maximize the concentrated likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{self, LbfgsConfig};
use super::Design;
use crate::stochastic::{self, Purpose};
use crate::{Error, Result};

const LN10: f64 = std::f64::consts::LN_10;
const MAX_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nugget {
    Fixed(f64),
    Estimate { lower: f64, upper: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrigingConfig {
    /// Search range for `log10 θ_i`.
    pub log10_theta: (f64, f64),
    pub nugget: Nugget,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        KrigingConfig {
            log10_theta: (-4.0, 2.0),
            nugget: Nugget::Estimate {
                lower: 1e-8,
                upper: 1.0,
            },
            restarts: 10,
            max_iter: 100,
        }
    }
}

impl KrigingConfig {
    pub fn interpolating() -> Self {
        KrigingConfig {
            nugget: Nugget::Fixed(0.0),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrigingModel {
    pub x: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub nugget: f64,
    /// Diagonal jitter that was needed on top of the nugget.
    pub jitter: f64,
    pub mu: f64,
    pub sigma2: f64,
    /// All responses were equal; the model is the constant `mu`.
    pub degenerate: bool,
    pub neg_log_likelihood: f64,
    alpha: DVector<f64>,
    chol_l: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
    /// The query lies outside the unit box.
    pub extrapolated: bool,
}

/// Squared coordinate differences for every unordered training pair.
struct Pairs {
    n: usize,
    d: usize,
    sq: Vec<f64>,
}

impl Pairs {
    fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, |r| r.len());
        let mut sq = Vec::with_capacity(n * (n - 1) / 2 * d);
        for j in 0..n {
            for k in (j + 1)..n {
                for i in 0..d {
                    let t = x[j][i] - x[k][i];
                    sq.push(t * t);
                }
            }
        }
        Pairs { n, d, sq }
    }

    /// Off-diagonal correlations in pair order.
    fn corr(&self, theta: &[f64]) -> Vec<f64> {
        self.sq
            .chunks_exact(self.d)
            .map(|s| (-s.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>()).exp())
            .collect()
    }

    fn matrix(&self, c: &[f64], diag: f64) -> DMatrix<f64> {
        let mut r = DMatrix::from_element(self.n, self.n, 0.0);
        let mut p = 0;
        for j in 0..self.n {
            r[(j, j)] = diag;
            for k in (j + 1)..self.n {
                r[(j, k)] = c[p];
                r[(k, j)] = c[p];
                p += 1;
            }
        }
        r
    }
}

/// Cholesky of `r + jitter·I`, escalating the jitter from zero on failure.
fn factor(mut r: DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = r.nrows();
    let mut jitter = 0.0;
    loop {
        if let Some(c) = Cholesky::new(r.clone()) {
            return Some((c, jitter));
        }
        let next = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if next > MAX_JITTER {
            return None;
        }
        for i in 0..n {
            r[(i, i)] += next - jitter;
        }
        jitter = next;
    }
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    mu: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    nll: f64,
}

fn concentrated(pairs: &Pairs, c: &[f64], nugget: f64, y: &DVector<f64>) -> Option<Fit> {
    let n = pairs.n;
    let (chol, jitter) = factor(pairs.matrix(c, 1.0 + nugget))?;
    let ones = DVector::from_element(n, 1.0);
    let ri1 = chol.solve(&ones);
    let riy = chol.solve(y);
    let mu = ri1.dot(y) / ri1.sum();
    let alpha = riy - ri1 * mu;
    let resid = y.add_scalar(-mu);
    let sigma2 = (resid.dot(&alpha) / n as f64).max(1e-300);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let nll = 0.5 * n as f64 * sigma2.ln() + logdet;
    nll.is_finite().then_some(Fit {
        chol,
        jitter,
        mu,
        sigma2,
        alpha,
        nll,
    })
}

/// Box constraints handled by a logistic map of unbounded variables.
#[derive(Clone, Copy)]
struct Bound {
    lo: f64,
    hi: f64,
}

impl Bound {
    fn value(&self, z: f64) -> f64 {
        self.lo + (self.hi - self.lo) / (1.0 + (-z).exp())
    }

    fn deriv(&self, z: f64) -> f64 {
        let s = 1.0 / (1.0 + (-z).exp());
        (self.hi - self.lo) * s * (1.0 - s)
    }

    fn inverse(&self, p: f64) -> f64 {
        let w = self.hi - self.lo;
        let u = ((p - self.lo) / w).clamp(1e-4, 1.0 - 1e-4);
        (u / (1.0 - u)).ln()
    }
}

struct Problem<'a> {
    pairs: &'a Pairs,
    y: &'a DVector<f64>,
    theta_bound: Bound,
    nugget: Nugget,
}

impl Problem<'_> {
    fn nugget_bound(&self) -> Option<Bound> {
        match self.nugget {
            Nugget::Estimate { lower, upper } => Some(Bound {
                lo: lower.log10(),
                hi: upper.log10(),
            }),
            Nugget::Fixed(_) => None,
        }
    }

    fn params(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let d = self.pairs.d;
        let theta = z[..d].iter().map(|&v| 10f64.powf(self.theta_bound.value(v))).collect();
        let nugget = match (self.nugget, self.nugget_bound()) {
            (Nugget::Fixed(v), _) => v,
            (_, Some(b)) => 10f64.powf(b.value(z[d])),
            _ => unreachable!(),
        };
        (theta, nugget)
    }

    fn objective(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (theta, nugget) = self.params(z);
        let c = self.pairs.corr(&theta);
        let Some(fit) = concentrated(self.pairs, &c, nugget, self.y) else {
            return f64::NAN;
        };
        let n = self.pairs.n;
        let d = self.pairs.d;
        let rinv = fit.chol.inverse();
        let a = &fit.alpha;
        // W = R⁻¹ - ααᵀ/σ²; dNLL/dψ = ½ Σ_jk W_jk ∂R_jk/∂ψ
        let mut g_theta = vec![0.0; d];
        let mut p = 0;
        for j in 0..n {
            for k in (j + 1)..n {
                let w = rinv[(j, k)] - a[j] * a[k] / fit.sigma2;
                let wc = w * c[p];
                let sq = &self.pairs.sq[p * d..(p + 1) * d];
                for i in 0..d {
                    g_theta[i] += wc * sq[i];
                }
                p += 1;
            }
        }
        for i in 0..d {
            // ∂R_jk/∂ln θ_i = -θ_i sq_i C_jk, counted for both (j,k) and (k,j)
            let dln = -theta[i] * g_theta[i];
            grad[i] = dln * LN10 * self.theta_bound.deriv(z[i]);
        }
        if let Some(b) = self.nugget_bound() {
            let tr: f64 = (0..n).map(|j| rinv[(j, j)] - a[j] * a[j] / fit.sigma2).sum();
            grad[d] = 0.5 * nugget * tr * LN10 * b.deriv(z[d]);
        }
        fit.nll
    }
}

pub fn fit_kriging(design: &Design, cfg: &KrigingConfig, seed: u64) -> Result<KrigingModel> {
    design.check()?;
    let n = design.len();
    let d = design.dim();
    if let Nugget::Estimate { lower, upper } = cfg.nugget {
        if !(lower > 0.0 && lower <= upper) {
            return Err(Error::Config("nugget bounds must satisfy 0 < lower <= upper".into()));
        }
    }
    if let Nugget::Fixed(v) = cfg.nugget {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config("nugget must be finite and nonnegative".into()));
        }
    }
    let (lo, hi) = cfg.log10_theta;
    if !(lo < hi) {
        return Err(Error::Config("log10 theta bounds must satisfy lower < upper".into()));
    }
    let y0 = design.y[0];
    let spread = design.y.iter().fold(0.0f64, |m, v| m.max((v - y0).abs()));
    if n == 1 || spread <= 1e-12 * y0.abs().max(1.0) {
        let mu = design.y.iter().sum::<f64>() / n as f64;
        return Ok(KrigingModel {
            x: design.x.clone(),
            theta: vec![0.0; d],
            nugget: 0.0,
            jitter: 0.0,
            mu,
            sigma2: 0.0,
            degenerate: true,
            neg_log_likelihood: f64::NAN,
            alpha: DVector::zeros(0),
            chol_l: DMatrix::zeros(0, 0),
        });
    }
    if let Nugget::Fixed(v) = cfg.nugget {
        if v <= 1e-12 && design.has_duplicates(1e-12) {
            return Err(Error::Model(
                "duplicate design rows make a zero-nugget fit singular".into(),
            ));
        }
    }

    let pairs = Pairs::new(&design.x);
    let y = DVector::from_column_slice(&design.y);
    let problem = Problem {
        pairs: &pairs,
        y: &y,
        theta_bound: Bound { lo, hi },
        nugget: cfg.nugget,
    };
    let nb = problem.nugget_bound();
    let nz = d + nb.is_some() as usize;

    // start 0 sits mid-range in θ and low in λ; the rest are random
    let mut rng = stochastic::stream(seed, Purpose::KrigingFit, 0, 0);
    let mut starts = Vec::with_capacity(cfg.restarts.max(1));
    let mut first = vec![problem.theta_bound.inverse(0.5 * (lo + hi)); d];
    if let Some(b) = nb {
        first.push(b.inverse(b.lo + 0.25 * (b.hi - b.lo)));
    }
    starts.push(first);
    for _ in 1..cfg.restarts.max(1) {
        let mut z: Vec<f64> = (0..d)
            .map(|_| problem.theta_bound.inverse(rng.random_range(lo..hi)))
            .collect();
        if let Some(b) = nb {
            z.push(b.inverse(rng.random_range(b.lo..b.hi)));
        }
        starts.push(z);
    }
    let lcfg = LbfgsConfig {
        max_iter: cfg.max_iter,
        gtol: 1e-5,
        ftol: 1e-9,
        ..Default::default()
    };
    let results: Vec<optim::Minimum> = starts
        .par_iter()
        .map(|z0| optim::minimize(|z, g| problem.objective(z, g), z0, &lcfg))
        .collect();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, m)| m.f.is_finite())
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Model("kriging likelihood could not be evaluated".into()))?;
    debug_assert_eq!(best.x.len(), nz);

    let (theta, nugget) = problem.params(&best.x);
    let c = pairs.corr(&theta);
    let fit = concentrated(&pairs, &c, nugget, &y)
        .ok_or_else(|| Error::Model("kriging correlation matrix is singular".into()))?;
    Ok(KrigingModel {
        x: design.x.clone(),
        theta,
        nugget,
        jitter: fit.jitter,
        mu: fit.mu,
        sigma2: fit.sigma2,
        degenerate: false,
        neg_log_likelihood: fit.nll,
        alpha: fit.alpha,
        chol_l: fit.chol.unpack(),
    })
}

impl KrigingModel {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn corr_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|row| {
                let s: f64 = row
                    .iter()
                    .zip(x)
                    .zip(&self.theta)
                    .map(|((a, b), t)| t * (a - b) * (a - b))
                    .sum();
                (-s).exp()
            }),
        )
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        if self.degenerate {
            return self.mu;
        }
        self.mu + self.corr_vector(x).dot(&self.alpha)
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        let extrapolated = x.iter().any(|v| !(0.0..=1.0).contains(v));
        if self.degenerate {
            return Prediction {
                mean: self.mu,
                sd: 0.0,
                extrapolated,
            };
        }
        let r = self.corr_vector(x);
        let mean = self.mu + r.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a positive diagonal");
        let var = self.sigma2 * (1.0 - v.norm_squared());
        Prediction {
            mean,
            sd: var.max(0.0).sqrt(),
            extrapolated,
        }
    }

    pub fn expected_improvement(&self, x: &[f64], best: f64) -> f64 {
        let p = self.predict(x);
        super::expected_improvement(p.mean, p.sd, best)
    }

    pub fn importance(&self) -> Vec<f64> {
        self.theta.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design_1d(xs: &[f64], f: impl Fn(f64) -> f64) -> Design {
        Design::new(
            xs.iter().map(|&x| vec![x]).collect(),
            xs.iter().map(|&x| f(x)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn interpolates_linear_function() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let d = design_1d(&xs, |x| x);
        let m = fit_kriging(&d, &KrigingConfig::interpolating(), 1).unwrap();
        for (x, y) in d.x.iter().zip(&d.y) {
            let p = m.predict(x);
            assert!((p.mean - y).abs() < 1e-6, "{} vs {y}", p.mean);
            assert!(p.sd < 1e-3);
        }
    }

    #[test]
    fn constant_response_is_degenerate() {
        let d = design_1d(&[0.1, 0.4, 0.9], |_| 5.0);
        let m = fit_kriging(&d, &KrigingConfig::default(), 1).unwrap();
        assert!(m.degenerate);
        for x in [0.0, 0.33, 1.0, 3.0] {
            let p = m.predict(&[x]);
            assert_eq!(p.mean, 5.0);
            assert_eq!(p.sd, 0.0);
        }
        assert_eq!(m.importance(), vec![0.0]);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let d = design_1d(&[0.0, 0.2, 0.5, 0.7, 1.0], |x| (5.0 * x).sin());
        let m = fit_kriging(&d, &KrigingConfig::interpolating(), 2).unwrap();
        let p = m.predict(&[60.0]);
        assert!(p.extrapolated);
        assert!((p.mean - m.mu).abs() < 1e-6);
        assert!((p.sd - m.sigma2.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn symmetric_two_point_midpoint() {
        let d = design_1d(&[0.25, 0.75], |x| if x < 0.5 { 1.0 } else { 3.0 });
        let m = fit_kriging(&d, &KrigingConfig::interpolating(), 3).unwrap();
        // by symmetry the BLUP at the midpoint is the average
        assert!((m.predict(&[0.5]).mean - 2.0).abs() < 1e-9);
        assert!((m.predict(&[0.25]).mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stochastic::stream(5, Purpose::Design, 0, 0);
        let x: Vec<Vec<f64>> = (0..15).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[1]).collect();
        let pairs = Pairs::new(&x);
        let y = DVector::from_column_slice(&y);
        let pr = Problem {
            pairs: &pairs,
            y: &y,
            theta_bound: Bound { lo: -4.0, hi: 2.0 },
            nugget: Nugget::Estimate {
                lower: 1e-8,
                upper: 1.0,
            },
        };
        let z = vec![0.3, -0.5, 1.1, -0.2];
        let mut g = vec![0.0; 4];
        pr.objective(&z, &mut g);
        let mut dummy = vec![0.0; 4];
        for i in 0..4 {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (pr.objective(&zp, &mut dummy) - pr.objective(&zm, &mut dummy)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "i={i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn active_dimension_gets_larger_theta() {
        let mut wins = 0;
        for s in 0..20u64 {
            let mut rng = stochastic::stream(s, Purpose::Design, 0, 0);
            let x = stochastic::lhs(40, &[0.0, 0.0], &[1.0, 1.0], &mut rng).unwrap();
            let y = x.iter().map(|r| (6.0 * r[0]).sin()).collect();
            let d = Design::new(x, y).unwrap();
            let m = fit_kriging(&d, &KrigingConfig::default(), s).unwrap();
            if m.theta[0] > m.theta[1] {
                wins += 1;
            }
        }
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn deterministic_given_seed() {
        let d = design_1d(&[0.0, 0.3, 0.35, 0.8, 1.0], |x| x * x);
        let a = fit_kriging(&d, &KrigingConfig::default(), 9).unwrap();
        let b = fit_kriging(&d, &KrigingConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_nugget_rejects_duplicates() {
        let d = design_1d(&[0.2, 0.2, 0.9], |x| x);
        assert!(fit_kriging(&d, &KrigingConfig::interpolating(), 0).is_err());
        assert!(fit_kriging(&d, &KrigingConfig::default(), 0).is_ok());
    }

    #[test]
    fn variance_nonnegative_everywhere() {
        let d = design_1d(&[0.0, 0.1, 0.5, 0.55, 0.9], |x| (9.0 * x).cos());
        let m = fit_kriging(&d, &KrigingConfig::default(), 4).unwrap();
        for i in 0..=200 {
            let p = m.predict(&[i as f64 / 100.0 - 0.5]);
            assert!(p.sd >= 0.0 && p.sd.is_finite());
        }
    }
}
