//! Non-negative sparse coding under the generalized KL divergence.
//!
//! Minimizes `KL(y || Dx)` over `x >= 0` where
//!
//! ```text
//! KL(y || yhat) = sum_i  y_i ln(y_i / yhat_i) - y_i + yhat_i
//! ```
//!
//! with `yhat` floored at `y_floor` and the `y_i = 0` terms reduced to
//! `yhat_i`. The solver is an active-set Newton method:
//!
//! 1. start from the single atom whose best scalar weight gives the lowest
//!    divergence;
//! 2. while the KKT conditions fail, either bring in the inactive atom with
//!    the most negative gradient (weight set by a scalar Newton step), or
//!    take a damped Newton step on the active weights. Newton steps are
//!    clipped at the boundary of the positive orthant, atoms that reach
//!    zero leave the active set, and steps are halved until the objective
//!    does not increase;
//! 3. stop once the KKT residual is below `kkt_tol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SILENCE_EPSILON;

/// Maximum number of step halvings per iteration.
const MAX_HALVINGS: usize = 30;

/// Rounding slack allowed when comparing objective values.
const DESCENT_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub max_iters: usize,
    pub y_floor: f64,
    /// Upper bound on simultaneously active atoms; `None` for no limit.
    pub max_active: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kkt_tol: 1e-6,
            max_iters: 500,
            y_floor: 1e-12,
            max_active: None,
        }
    }
}

impl SolverConfig {
    // Negated comparisons so NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0) {
            return Err(Error::Config(format!(
                "kkt_tol must be positive, got {}",
                self.kkt_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.y_floor > 0.0) {
            return Err(Error::Config(format!(
                "y_floor must be positive, got {}",
                self.y_floor
            )));
        }
        if self.max_active == Some(0) {
            return Err(Error::Config("max_active must be at least 1".into()));
        }
        Ok(())
    }
}

/// Non-negative weights, one per dictionary column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        WeightVector(vec![0.0; n])
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite(index));
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        Ok(WeightVector(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// `D x` without flooring.
    pub fn reconstruct(&self, atoms: &DMatrix<f64>) -> Vec<f64> {
        reconstruct(atoms, &self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective after initialization and after every accepted step.
    pub history: Vec<f64>,
}

/// Generalized KL divergence with `yhat` floored at `y_floor`.
pub fn kl_divergence(y: &[f64], yhat: &[f64], y_floor: f64) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    check_nonnegative(y)?;
    check_nonnegative(yhat)?;
    Ok(kl_terms(y, yhat.iter().map(|&v| v.max(y_floor))))
}

fn kl_terms(y: &[f64], yhat: impl Iterator<Item = f64>) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(&yi, hi)| {
            if yi > 0.0 {
                yi * (yi / hi).ln() - yi + hi
            } else {
                hi
            }
        })
        .sum()
}

fn check_nonnegative(v: &[f64]) -> Result<()> {
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite(index));
        }
        if value < 0.0 {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    Ok(())
}

/// Objective value at `x`.
pub fn objective(y: &[f64], atoms: &DMatrix<f64>, x: &[f64], y_floor: f64) -> f64 {
    let yhat = floored(reconstruct(atoms, x), y_floor);
    kl_terms(y, yhat.into_iter())
}

/// Gradient `D^T (1 - y / yhat)` at `x`.
pub fn gradient(y: &[f64], atoms: &DMatrix<f64>, x: &[f64], y_floor: f64) -> Vec<f64> {
    let yhat = floored(reconstruct(atoms, x), y_floor);
    grad_from(y, atoms, &yhat)
}

/// Hessian `D_A^T diag(y / yhat^2) D_A` restricted to the columns `cols`.
pub fn hessian(
    y: &[f64],
    atoms: &DMatrix<f64>,
    x: &[f64],
    y_floor: f64,
    cols: &[usize],
) -> DMatrix<f64> {
    let yhat = floored(reconstruct(atoms, x), y_floor);
    hess_from(y, atoms, &yhat, cols)
}

/// KKT residual for `min f(x) s.t. x >= 0` given the gradient at `x`.
pub fn kkt_residual(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xj, &gj)| if xj > 0.0 { gj.abs() } else { (-gj).max(0.0) })
        .fold(0.0, f64::max)
}

fn reconstruct(atoms: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let p = atoms.nrows();
    let mut out = vec![0.0; p];
    for (col, &w) in atoms.as_slice().chunks_exact(p).zip(x) {
        if w != 0.0 {
            for (o, d) in out.iter_mut().zip(col) {
                *o += w * d;
            }
        }
    }
    out
}

fn floored(mut v: Vec<f64>, y_floor: f64) -> Vec<f64> {
    for e in &mut v {
        *e = e.max(y_floor);
    }
    v
}

fn grad_from(y: &[f64], atoms: &DMatrix<f64>, yhat: &[f64]) -> Vec<f64> {
    let p = atoms.nrows();
    let r: Vec<f64> = y.iter().zip(yhat).map(|(yi, hi)| 1.0 - yi / hi).collect();
    atoms
        .as_slice()
        .chunks_exact(p)
        .map(|col| col.iter().zip(&r).map(|(d, ri)| d * ri).sum())
        .collect()
}

fn hess_from(y: &[f64], atoms: &DMatrix<f64>, yhat: &[f64], cols: &[usize]) -> DMatrix<f64> {
    let p = atoms.nrows();
    let data = atoms.as_slice();
    let w: Vec<f64> = y.iter().zip(yhat).map(|(yi, hi)| yi / (hi * hi)).collect();
    let n = cols.len();
    let mut h = DMatrix::zeros(n, n);
    for a in 0..n {
        let ca = &data[cols[a] * p..(cols[a] + 1) * p];
        let weighted: Vec<f64> = ca.iter().zip(&w).map(|(d, wi)| d * wi).collect();
        for b in a..n {
            let cb = &data[cols[b] * p..(cols[b] + 1) * p];
            let v: f64 = weighted.iter().zip(cb).map(|(u, d)| u * d).sum();
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Validates a `(y, D)` pair for either solver.
pub(crate) fn check_problem(y: &[f64], atoms: &DMatrix<f64>) -> Result<()> {
    if atoms.ncols() == 0 {
        return Err(Error::Config("empty dictionary".into()));
    }
    if y.len() != atoms.nrows() {
        return Err(Error::DimensionMismatch {
            expected: atoms.nrows(),
            got: y.len(),
        });
    }
    check_nonnegative(y)?;
    if y.iter().map(|v| v * v).sum::<f64>().sqrt() <= SILENCE_EPSILON {
        return Err(Error::SilentFrame);
    }
    Ok(())
}

struct State<'a> {
    y: &'a [f64],
    atoms: &'a DMatrix<f64>,
    floor: f64,
    x: Vec<f64>,
    active: Vec<usize>,
    yhat: Vec<f64>,
    f: f64,
}

impl<'a> State<'a> {
    fn col(&self, j: usize) -> &'a [f64] {
        let p = self.atoms.nrows();
        &self.atoms.as_slice()[j * p..(j + 1) * p]
    }

    fn eval(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let yhat = floored(reconstruct(self.atoms, x), self.floor);
        let f = kl_terms(self.y, yhat.iter().copied());
        (yhat, f)
    }

    fn accept(&mut self, x: Vec<f64>, yhat: Vec<f64>, f: f64) {
        self.x = x;
        self.yhat = yhat;
        self.f = f;
        self.active.retain(|&j| self.x[j] > 0.0);
    }

    /// Brings atom `j` in with a scalar Newton step along its coordinate.
    fn add_atom(&mut self, j: usize, gj: f64) -> bool {
        let d = self.col(j);
        let curv: f64 = d
            .iter()
            .zip(self.y)
            .zip(&self.yhat)
            .map(|((di, yi), hi)| yi * di * di / (hi * hi))
            .sum();
        let mut step = if curv > 0.0 { -gj / curv } else { 1.0 };
        for _ in 0..=MAX_HALVINGS {
            let mut x = self.x.clone();
            x[j] = step;
            let (yhat, f) = self.eval(&x);
            if f < self.f {
                self.active.push(j);
                self.accept(x, yhat, f);
                return true;
            }
            step *= 0.5;
        }
        false
    }

    /// One damped, orthant-clipped Newton step on the active weights.
    fn newton_step(&mut self, g: &[f64]) -> bool {
        let n = self.active.len();
        let h = hess_from(self.y, self.atoms, &self.yhat, &self.active);
        let ga = DVector::from_iterator(n, self.active.iter().map(|&j| g[j]));
        let mut dir = spd_solve(h, &ga).map(|v| -v).unwrap_or_else(|| -ga.clone());
        if dir.dot(&ga) >= 0.0 {
            dir = -ga;
        }

        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for (k, &j) in self.active.iter().enumerate() {
            if dir[k] < 0.0 {
                let a = self.x[j] / -dir[k];
                if a < alpha_max {
                    alpha_max = a;
                    blocking = Some(k);
                }
            }
        }
        if alpha_max > 1.0 {
            blocking = None;
        }
        let mut alpha = alpha_max.min(1.0);
        for _ in 0..=MAX_HALVINGS {
            let mut x = self.x.clone();
            for (k, &j) in self.active.iter().enumerate() {
                x[j] = (self.x[j] + alpha * dir[k]).max(0.0);
            }
            if let Some(k) = blocking {
                x[self.active[k]] = 0.0;
            }
            let (yhat, f) = self.eval(&x);
            if f <= self.f + DESCENT_SLACK {
                self.accept(x, yhat, f);
                return true;
            }
            alpha *= 0.5;
            blocking = None;
        }
        false
    }
}

/// Cholesky solve with escalating diagonal jitter on failure.
fn spd_solve(h: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = h.clone().cholesky() {
        return Some(c.solve(b));
    }
    let n = h.nrows();
    let scale = (h.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    for _ in 0..8 {
        let mut hj = h.clone();
        for i in 0..n {
            hj[(i, i)] += jitter;
        }
        if let Some(c) = hj.cholesky() {
            return Some(c.solve(b));
        }
        jitter *= 100.0;
    }
    None
}

/// Solves `min_x KL(y || Dx)` subject to `x >= 0` for the columns of `atoms`.
pub fn solve_weights(
    y: &[f64],
    atoms: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<(WeightVector, SolveReport)> {
    cfg.validate()?;
    check_problem(y, atoms)?;
    let k = atoms.ncols();
    let max_active = cfg.max_active.unwrap_or(usize::MAX);

    let zero = vec![0.0; k];
    let g0 = gradient(y, atoms, &zero, cfg.y_floor);
    if g0.iter().all(|&g| g >= 0.0) {
        let f = objective(y, atoms, &zero, cfg.y_floor);
        let report = SolveReport {
            objective: f,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
            history: vec![f],
        };
        return Ok((WeightVector::zeros(k), report));
    }

    let mut st = State {
        y,
        atoms,
        floor: cfg.y_floor,
        x: zero,
        active: Vec::new(),
        yhat: Vec::new(),
        f: 0.0,
    };
    let (yhat, f) = st.eval(&st.x);
    st.yhat = yhat;
    st.f = f;

    // Best single atom at its optimal scalar weight.
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..k {
        let d = st.col(j);
        let (sd, sy) = d
            .iter()
            .zip(y)
            .filter(|(di, _)| **di > 0.0)
            .fold((0.0, 0.0), |(a, b), (di, yi)| (a + di, b + yi));
        if sd <= 0.0 || sy <= 0.0 {
            continue;
        }
        let w = sy / sd;
        let fj = kl_terms(y, d.iter().map(|di| (w * di).max(cfg.y_floor)));
        if best.is_none_or(|(bf, _, _)| fj < bf) {
            best = Some((fj, j, w));
        }
    }
    if let Some((fj, j, w)) = best {
        if fj < st.f {
            let mut x = st.x.clone();
            x[j] = w;
            let (yhat, f) = st.eval(&x);
            st.active.push(j);
            st.accept(x, yhat, f);
        }
    }

    let mut history = vec![st.f];
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    while iterations < cfg.max_iters {
        let g = grad_from(y, atoms, &st.yhat);
        kkt = kkt_residual(&st.x, &g);
        if kkt <= cfg.kkt_tol {
            converged = true;
            break;
        }
        let active_res = st.active.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        let mut entering = None;
        let mut violation = 0.0;
        for (j, (&xj, &gj)) in st.x.iter().zip(&g).enumerate() {
            if xj == 0.0 && -gj > violation {
                violation = -gj;
                entering = Some(j);
            }
        }
        iterations += 1;
        let can_add = st.active.len() < max_active;
        let progressed = match entering {
            Some(j)
                if can_add
                    && violation > cfg.kkt_tol
                    && (violation >= active_res || active_res <= cfg.kkt_tol) =>
            {
                st.add_atom(j, g[j]) || (!st.active.is_empty() && st.newton_step(&g))
            }
            _ if !st.active.is_empty() && active_res > cfg.kkt_tol => st.newton_step(&g),
            _ => false,
        };
        if !progressed {
            break;
        }
        history.push(st.f);
    }
    if !converged {
        let g = grad_from(y, atoms, &st.yhat);
        kkt = kkt_residual(&st.x, &g);
        converged = kkt <= cfg.kkt_tol;
    }
    let report = SolveReport {
        objective: st.f,
        iterations,
        kkt_residual: kkt,
        converged,
        history,
    };
    Ok((WeightVector(st.x), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_columns(cols: &[Vec<f64>]) -> DMatrix<f64> {
        let p = cols[0].len();
        let mut data = Vec::new();
        for c in cols {
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(c.iter().map(|v| v / n));
        }
        DMatrix::from_vec(p, cols.len(), data)
    }

    fn random_problem(rng: &mut ChaCha8Rng, p: usize, k: usize) -> (Vec<f64>, DMatrix<f64>) {
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..p).map(|_| rng.gen::<f64>().powi(2) + 1e-3).collect())
            .collect();
        let y = (0..p).map(|_| rng.gen_range(0.05..1.0)).collect();
        (y, unit_columns(&cols))
    }

    #[test]
    fn kl_examples() {
        let y = [0.2, 0.5, 1.5];
        assert!(kl_divergence(&y, &y, 1e-12).unwrap().abs() < 1e-15);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5], 1e-12).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            kl_divergence(&[-1.0], &[1.0], 1e-12),
            Err(Error::NegativeEntry { .. })
        ));
        assert!(kl_divergence(&[1.0], &[1.0, 2.0], 1e-12).is_err());
    }

    #[test]
    fn kl_zero_bins_and_floor() {
        // y_i = 0 contributes yhat_i; yhat_i = 0 is floored.
        let v = kl_divergence(&[0.0, 1.0], &[0.25, 0.0], 1e-12).unwrap();
        let expected = 0.25 + (1.0f64 * (1.0 / 1e-12f64).ln() - 1.0 + 1e-12);
        assert!((v - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn kl_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let y: Vec<f64> = (0..40).map(|_| rng.gen_range(0.01..2.0)).collect();
            let h: Vec<f64> = (0..40).map(|_| rng.gen_range(0.01..2.0)).collect();
            let mut direct = 0.0;
            for i in 0..40 {
                direct += y[i] * y[i].ln() - y[i] * h[i].ln() - y[i] + h[i];
            }
            let got = kl_divergence(&y, &h, 1e-12).unwrap();
            assert!(
                (got - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                "{got} vs {direct}"
            );
        }
    }

    #[test]
    fn exact_atom_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, d) = random_problem(&mut rng, 16, 6);
        let y: Vec<f64> = d.column(3).iter().copied().collect();
        let (x, rep) = solve_weights(&y, &d, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.objective <= 1e-10);
        assert!((x.as_slice()[3] - 1.0).abs() < 1e-9);
        for (j, w) in x.as_slice().iter().enumerate() {
            if j != 3 {
                assert!(*w < 1e-9);
            }
        }
    }

    #[test]
    fn two_orthogonal_atoms() {
        let d = unit_columns(&[vec![1.0, 2.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 1.0]]);
        let y: Vec<f64> = (0..4).map(|i| 0.6 * d[(i, 0)] + 0.4 * d[(i, 1)]).collect();
        let (x, rep) = solve_weights(&y, &d, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert!((x.as_slice()[0] - 0.6).abs() < 1e-6);
        assert!((x.as_slice()[1] - 0.4).abs() < 1e-6);
        assert!(rep.objective <= 1e-10);
    }

    #[test]
    fn random_instances_are_kkt_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = SolverConfig::default();
        for _ in 0..50 {
            let (y, d) = random_problem(&mut rng, 24, 10);
            let (x, rep) = solve_weights(&y, &d, &cfg).unwrap();
            assert!(rep.converged, "{rep:?}");
            assert!(x.as_slice().iter().all(|&v| v >= 0.0));
            let g = gradient(&y, &d, x.as_slice(), cfg.y_floor);
            assert!(kkt_residual(x.as_slice(), &g) <= cfg.kkt_tol);
            assert!(rep.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn max_active_limits_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, d) = random_problem(&mut rng, 24, 10);
        let cfg = SolverConfig {
            max_active: Some(1),
            ..SolverConfig::default()
        };
        let (x, _) = solve_weights(&y, &d, &cfg).unwrap();
        assert!(x.as_slice().iter().filter(|&&v| v > 0.0).count() <= 1);
    }

    #[test]
    fn errors() {
        let d = unit_columns(&[vec![1.0, 1.0]]);
        let cfg = SolverConfig::default();
        assert!(matches!(
            solve_weights(&[0.0, 0.0], &d, &cfg),
            Err(Error::SilentFrame)
        ));
        assert!(matches!(
            solve_weights(&[1.0], &d, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(solve_weights(&[1.0, -1.0], &d, &cfg).is_err());
        assert!(SolverConfig {
            kkt_tol: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            max_iters: 0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            y_floor: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn disjoint_support_gives_zero_weights() {
        // y lives where no atom has energy: every gradient is >= 0 at x = 0.
        let d = unit_columns(&[vec![1.0, 0.0, 0.0]]);
        let (x, rep) = solve_weights(&[0.0, 0.0, 1.0], &d, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(x.as_slice(), &[0.0]);
    }
}
