//! Slow reference solver for the non-negative KL problem.
//!
//! Plain projected gradient descent with Armijo backtracking along the
//! projection arc. It shares no code with [`crate::solver`] beyond input
//! validation, so the two can be checked against each other.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::solver::{check_problem, WeightVector};

/// Floor applied to the reconstruction, same as the solver default.
pub const ORACLE_FLOOR: f64 = 1e-12;

const ARMIJO_C: f64 = 1e-4;

struct Problem<'a> {
    y: &'a [f64],
    d: &'a DMatrix<f64>,
}

impl Problem<'_> {
    fn yhat(&self, x: &[f64]) -> Vec<f64> {
        let (p, k) = self.d.shape();
        (0..p)
            .map(|i| {
                (0..k)
                    .map(|j| self.d[(i, j)] * x[j])
                    .sum::<f64>()
                    .max(ORACLE_FLOOR)
            })
            .collect()
    }

    fn value(&self, yhat: &[f64]) -> f64 {
        let mut f = 0.0;
        for (&yi, &hi) in self.y.iter().zip(yhat) {
            f += hi - yi;
            if yi > 0.0 {
                f += yi * (yi.ln() - hi.ln());
            }
        }
        f
    }

    fn grad(&self, yhat: &[f64]) -> Vec<f64> {
        let (p, k) = self.d.shape();
        (0..k)
            .map(|j| {
                (0..p)
                    .map(|i| self.d[(i, j)] * (1.0 - self.y[i] / yhat[i]))
                    .sum()
            })
            .collect()
    }
}

/// Runs at most `iters` projected-gradient iterations from a uniform
/// positive start. Deterministic.
pub fn solve_oracle(y: &[f64], atoms: &DMatrix<f64>, iters: usize) -> Result<WeightVector> {
    check_problem(y, atoms)?;
    let prob = Problem { y, d: atoms };
    let k = atoms.ncols();
    let mass: f64 = atoms.iter().sum();
    let start = if mass > 0.0 {
        y.iter().sum::<f64>() / mass
    } else {
        1.0
    };
    let mut x = vec![start; k];
    let mut yhat = prob.yhat(&x);
    let mut f = prob.value(&yhat);
    let mut step: f64 = 1.0;

    for _ in 0..iters {
        let g = prob.grad(&yhat);
        let stationary = x.iter().zip(&g).all(|(&xj, &gj)| {
            if xj > 0.0 {
                gj.abs() <= 1e-13
            } else {
                gj >= -1e-13
            }
        });
        if stationary {
            break;
        }
        step = (step * 2.0).min(1e8);
        let mut moved = false;
        for _ in 0..80 {
            let cand: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(xj, gj)| (xj - step * gj).max(0.0))
                .collect();
            let decrease: f64 = g
                .iter()
                .zip(cand.iter().zip(&x))
                .map(|(gj, (c, xj))| gj * (c - xj))
                .sum();
            let cand_hat = prob.yhat(&cand);
            let fc = prob.value(&cand_hat);
            if fc <= f + ARMIJO_C * decrease {
                moved = cand != x;
                x = cand;
                yhat = cand_hat;
                f = fc;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    WeightVector::new(x)
}
