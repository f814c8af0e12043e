//! Main-effects least-squares model on standardized inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Design;
use crate::{Error, Result};

const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// Coefficients on the raw input scale.
    pub coef: Vec<f64>,
    /// Coefficients on standardized inputs (`coef_i · sd_i`).
    pub beta: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub residual_sd: f64,
}

fn column(z: &DMatrix<f64>, j: usize) -> DVector<f64> {
    z.column(j).into_owned()
}

/// Finds the first column that is a combination of earlier ones (column 0 is
/// the intercept) and names the columns involved.
fn collinear_columns(a: &DMatrix<f64>) -> Option<Vec<usize>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..a.ncols() {
        let orig = column(a, j);
        let mut v = orig.clone();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm <= RANK_TOL * orig.norm().max(1.0) {
            // express column j in the kept columns to name its partners
            let sub = DMatrix::from_columns(&kept.iter().map(|&k| column(a, k)).collect::<Vec<_>>());
            let svd = sub.svd(true, true);
            let coef = svd.solve(&orig, 1e-12).unwrap_or_else(|_| DVector::zeros(kept.len()));
            let mut cols: Vec<usize> = kept
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8)
                .map(|(&k, _)| k)
                .collect();
            cols.push(j);
            return Some(cols);
        }
        basis.push(v / norm);
        kept.push(j);
    }
    None
}

fn describe(cols: &[usize]) -> String {
    cols.iter()
        .map(|&c| {
            if c == 0 {
                "intercept".to_string()
            } else {
                format!("x{c}")
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn fit_linear(design: &Design) -> Result<LinearModel> {
    design.check()?;
    let n = design.len();
    let d = design.dim();
    if n < d + 2 {
        return Err(Error::Model(format!(
            "linear fit needs at least {} points for {d} inputs, got {n}",
            d + 2
        )));
    }
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    for i in 0..d {
        let m = design.x.iter().map(|r| r[i]).sum::<f64>() / n as f64;
        let v = design.x.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        means[i] = m;
        sds[i] = v.sqrt();
    }
    let a = DMatrix::from_fn(n, d + 1, |r, c| {
        if c == 0 {
            1.0
        } else if sds[c - 1] > 0.0 {
            (design.x[r][c - 1] - means[c - 1]) / sds[c - 1]
        } else {
            0.0
        }
    });
    if let Some(cols) = collinear_columns(&a) {
        return Err(Error::Model(format!(
            "rank-deficient design; collinear columns: {}",
            describe(&cols)
        )));
    }
    let y0 = design.y[0];
    if design.y.iter().all(|v| *v == y0) {
        return Ok(LinearModel {
            intercept: y0,
            coef: vec![0.0; d],
            beta: vec![0.0; d],
            means,
            sds,
            residual_sd: 0.0,
        });
    }
    let y = DVector::from_column_slice(&design.y);
    let qr = a.clone().qr();
    let qty = qr.q().transpose() * &y;
    let sol = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Model("singular least-squares system".into()))?;
    let resid = &y - &a * &sol;
    let residual_sd = (resid.norm_squared() / (n - d - 1) as f64).sqrt();
    let beta: Vec<f64> = sol.iter().skip(1).copied().collect();
    let coef: Vec<f64> = beta.iter().zip(&sds).map(|(b, s)| b / s).collect();
    let intercept = sol[0] - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        intercept,
        coef,
        beta,
        means,
        sds,
        residual_sd,
    })
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn importance(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b.abs()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{self, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_x(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stochastic::stream(seed, Purpose::Design, 0, 0);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    fn sample_sd(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    #[test]
    fn recovers_exact_coefficients() {
        let x = random_x(20, 2, 1);
        let y = x.iter().map(|r| 3.0 * r[0]).collect();
        let m = fit_linear(&Design::new(x.clone(), y).unwrap()).unwrap();
        assert!((m.coef[0] - 3.0).abs() < 1e-9);
        assert!(m.coef[1].abs() < 1e-9);
        let sd1 = sample_sd(&x.iter().map(|r| r[0]).collect::<Vec<_>>());
        assert!((m.beta[0] - 3.0 * sd1).abs() < 1e-9);
        assert!(m.beta[1].abs() < 1e-9);
        assert!(m.intercept.abs() < 1e-9);
        assert!((m.importance()[0] - 3.0 * sd1).abs() < 1e-9);
    }

    #[test]
    fn constant_response() {
        let x = random_x(10, 3, 2);
        let m = fit_linear(&Design::new(x, vec![4.0; 10]).unwrap()).unwrap();
        assert!(m.beta.iter().all(|b| *b == 0.0));
        assert!((m.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let mut x = random_x(10, 3, 3);
        for r in x.iter_mut() {
            r[2] = r[0];
        }
        let y = x.iter().map(|r| r[1]).collect();
        let err = fit_linear(&Design::new(x, y).unwrap()).unwrap_err().to_string();
        assert!(err.contains("x1, x3"), "{err}");
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let mut x = random_x(10, 2, 4);
        for r in x.iter_mut() {
            r[1] = 0.5;
        }
        let y = x.iter().map(|r| r[0]).collect();
        let err = fit_linear(&Design::new(x, y).unwrap()).unwrap_err().to_string();
        assert!(err.contains("x2"), "{err}");
    }

    #[test]
    fn too_few_points() {
        let x = random_x(4, 3, 5);
        let y = vec![1.0, 2.0, 3.0, 4.0];
        assert!(fit_linear(&Design::new(x, y).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn ranking_invariant_to_affine_rescaling(
            seed in 0u64..1000,
            scale in proptest::collection::vec(0.1f64..50.0, 4),
            shift in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let x = random_x(30, 4, seed);
            let y: Vec<f64> = x.iter().map(|r| 4.0 * r[0] - 2.0 * r[1] + 0.5 * r[2] + (7.0 * r[3]).sin()).collect();
            let a = fit_linear(&Design::new(x.clone(), y.clone()).unwrap()).unwrap();
            let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().enumerate().map(|(i, v)| v * scale[i] + shift[i]).collect()).collect();
            let b = fit_linear(&Design::new(xs, y).unwrap()).unwrap();
            for (p, q) in a.importance().iter().zip(b.importance()) {
                prop_assert!((p - q).abs() < 1e-8 * (1.0 + p.abs()));
            }
            prop_assert_eq!(super::super::rank_parameters(&a.importance()), super::super::rank_parameters(&b.importance()));
        }
    }
}
