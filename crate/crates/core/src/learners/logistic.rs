//! Logistic regression under quasibinomial loss.
//!
//! Minimizes
//!
//! ```text
//! f(β) = Σ wᵢ [log(1 + exp(xᵢᵀβ)) − yᵢ xᵢᵀβ] / Σ wᵢ  +  λ₂/2 ‖β‖²  +  λ₁ ‖β‖₁
//! ```
//!
//! with the first column left unpenalized when `free_first_column` is set.
//! Without an L1 term the solver is Newton/IRLS with Armijo backtracking; with
//! an L1 term each outer iteration solves the penalized quadratic model by
//! cyclic coordinate descent (proximal Newton) and then backtracks on `f`.
//! Outcomes may be any values in `[0, 1]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::expit;

/// Linear predictors beyond this magnitude at an unpenalized optimum mean the
/// fitted probabilities are numerically 0 or 1, i.e. the data are separable.
const SATURATION: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct LogisticOptions {
    pub l1: f64,
    pub l2: f64,
    pub weights: Option<Vec<f64>>,
    pub free_first_column: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            l1: 0.0,
            l2: 0.0,
            weights: None,
            free_first_column: true,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
    /// Objective value before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Max-norm of the (sub)gradient optimality residual at the returned `beta`.
    pub stationarity: f64,
}

impl LogisticFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, model has {} coefficients",
                x.ncols(),
                self.beta.len()
            )));
        }
        Ok((x * &self.beta).iter().map(|&e| expit(e)).collect())
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    w: Vec<f64>,
    penalized: Vec<bool>,
    l1: f64,
    l2: f64,
}

impl Problem<'_> {
    fn objective(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.x * beta;
        let mut loss = 0.0;
        for i in 0..self.y.len() {
            let e = eta[i];
            // log(1 + e^η) computed without overflow
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            loss += self.w[i] * (softplus - self.y[i] * e);
        }
        let mut pen = 0.0;
        for (j, &b) in beta.iter().enumerate() {
            if self.penalized[j] {
                pen += 0.5 * self.l2 * b * b + self.l1 * b.abs();
            }
        }
        loss + pen
    }

    /// Returns (η, negative gradient of the smooth part, Hessian of the smooth part).
    fn derivatives(&self, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let eta = self.x * beta;
        let n = self.y.len();
        let p = self.x.ncols();
        let mut resid = DVector::zeros(n);
        let mut xw = self.x.clone();
        for i in 0..n {
            let mu = expit(eta[i]);
            resid[i] = self.w[i] * (self.y[i] - mu);
            let h = self.w[i] * mu * (1.0 - mu);
            for j in 0..p {
                xw[(i, j)] *= h;
            }
        }
        let mut grad = self.x.tr_mul(&resid);
        let mut hess = self.x.tr_mul(&xw);
        for j in 0..p {
            if self.penalized[j] {
                grad[j] -= self.l2 * beta[j];
                hess[(j, j)] += self.l2;
            }
        }
        (eta, grad, hess)
    }

    fn stationarity(&self, beta: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..beta.len() {
            let r = if !self.penalized[j] || self.l1 == 0.0 {
                grad[j].abs()
            } else if beta[j] != 0.0 {
                (grad[j] - self.l1 * beta[j].signum()).abs()
            } else {
                (grad[j].abs() - self.l1).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }

    fn unpenalized(&self) -> bool {
        self.l1 == 0.0 && self.l2 == 0.0
    }
}

/// Fits penalized logistic regression of `y` on the columns of `x`.
///
/// Converges when the optimality residual is below `tol` in max-norm. Unpenalized
/// fits on separable data report [`Error::NonConvergence`].
pub fn fit_logistic_mle(x: &DMatrix<f64>, y: &[f64], opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but outcome has {}",
            y.len()
        )));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("logistic outcome must lie in [0, 1]".into()));
    }
    if opts.l1 < 0.0 || opts.l2 < 0.0 {
        return Err(Error::InvalidArgument("penalties must be nonnegative".into()));
    }
    let raw_w = opts.weights.clone().unwrap_or_else(|| vec![1.0; n]);
    if raw_w.len() != n || raw_w.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative, one per row".into()));
    }
    let total: f64 = raw_w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let problem = Problem {
        x,
        y,
        w: raw_w.iter().map(|v| v / total).collect(),
        penalized: (0..p).map(|j| !(opts.free_first_column && j == 0)).collect(),
        l1: opts.l1,
        l2: opts.l2,
    };

    let mut beta = DVector::zeros(p);
    let mut obj = problem.objective(&beta);
    let mut trace = vec![obj];
    let mut polished = false;

    for iter in 0..opts.max_iter {
        let (eta, grad, hess) = problem.derivatives(&beta);
        let station = problem.stationarity(&beta, &grad);
        let saturated = eta.amax() > SATURATION;
        if problem.unpenalized() && saturated {
            return Err(Error::NonConvergence(
                "fitted probabilities reached 0 or 1; the data look separable".into(),
            ));
        }
        if iter == 0 && problem.unpenalized() && rcond(&hess) < 1e-12 {
            return Err(Error::Singular("rank-deficient design with no penalty".into()));
        }
        if station <= opts.tol {
            // One extra Newton step drives the score to rounding level.
            if polished || opts.l1 > 0.0 {
                return Ok(LogisticFit {
                    beta,
                    iterations: iter,
                    objective_trace: trace,
                    stationarity: station,
                });
            }
            polished = true;
        }

        let direction = if opts.l1 > 0.0 {
            prox_newton_direction(&problem, &beta, &grad, &hess)
        } else {
            let chol = hess.clone().cholesky().ok_or_else(|| {
                if problem.unpenalized() {
                    Error::Singular("rank-deficient design with no penalty".into())
                } else {
                    Error::Singular("penalized Hessian is not positive definite".into())
                }
            })?;
            chol.solve(&grad)
        };

        // Armijo backtracking; the L1 case uses the composite decrease model.
        let slope = if opts.l1 > 0.0 {
            let mut s = -grad.dot(&direction);
            for j in 0..p {
                if problem.penalized[j] {
                    s += opts.l1 * ((beta[j] + direction[j]).abs() - beta[j].abs());
                }
            }
            s
        } else {
            -grad.dot(&direction)
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &beta + &direction * t;
            let cand_obj = problem.objective(&cand);
            if cand_obj <= obj + 1e-4 * t * slope.min(0.0) + 1e-15 * obj.abs().max(1e-300) {
                accepted = Some((cand, cand_obj));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_obj)) => {
                beta = cand;
                obj = cand_obj;
                trace.push(obj);
            }
            None => {
                if station <= opts.tol {
                    return Ok(LogisticFit {
                        beta,
                        iterations: iter,
                        objective_trace: trace,
                        stationarity: station,
                    });
                }
                return Err(Error::NonConvergence(format!(
                    "line search failed with optimality residual {station:e}"
                )));
            }
        }
    }
    let (_, grad, _) = problem.derivatives(&beta);
    let station = problem.stationarity(&beta, &grad);
    if station <= opts.tol {
        return Ok(LogisticFit {
            beta,
            iterations: opts.max_iter,
            objective_trace: trace,
            stationarity: station,
        });
    }
    Err(Error::NonConvergence(format!(
        "{} iterations, optimality residual {station:e}",
        opts.max_iter
    )))
}

/// Minimizes `−gᵀd + ½ dᵀHd + λ₁ Σ |β + d|` over `d` by cyclic coordinate descent.
fn prox_newton_direction(
    problem: &Problem<'_>,
    beta: &DVector<f64>,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> DVector<f64> {
    let p = beta.len();
    let mut z = beta.clone();
    // Hd maintained incrementally, d = z − β
    let mut hd: DVector<f64> = DVector::zeros(p);
    for _sweep in 0..2000 {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let hjj = hess[(j, j)];
            if hjj <= 0.0 {
                continue;
            }
            let dj = z[j] - beta[j];
            // partial residual excluding coordinate j
            let c = grad[j] - (hd[j] - hjj * dj);
            let unconstrained = beta[j] + c / hjj;
            let new_z = if problem.penalized[j] {
                soft_threshold(hjj * unconstrained, problem.l1) / hjj
            } else {
                unconstrained
            };
            let delta = new_z - z[j];
            if delta != 0.0 {
                for k in 0..p {
                    hd[k] += hess[(k, j)] * delta;
                }
                z[j] = new_z;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < 1e-13 {
            break;
        }
    }
    z - beta
}

/// Ratio of smallest to largest eigenvalue of a symmetric matrix.
pub(crate) fn rcond(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.amax();
    if max == 0.0 {
        return 0.0;
    }
    eig.min().max(0.0) / max
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let w: f64 = rng.random_range(-1.0..1.0);
            x[(i, 0)] = 1.0;
            x[(i, 1)] = w;
            y[i] = if rng.random::<f64>() < expit(1.0 + 2.0 * w) { 1.0 } else { 0.0 };
        }
        (x, y)
    }

    #[test]
    fn intercept_only_is_logit_of_mean() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let y = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let fit = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap();
        assert!((fit.beta[0] - logit(0.3)).abs() < 1e-10);
    }

    #[test]
    fn separable_data_do_not_converge() {
        let x = DMatrix::from_row_slice(6, 2, &[1., -3., 1., -2., 1., -1., 1., 1., 1., 2., 1., 3.]);
        let y = vec![0., 0., 0., 1., 1., 1.];
        let err = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)), "{err:?}");
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 2., 1., 0., 0., 1., 1., 2., 1., 0., 0.]);
        let y = vec![1., 0., 0., 1.];
        let err = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err:?}");
        // a ridge penalty restores a unique solution
        let opts = LogisticOptions { l2: 0.1, ..Default::default() };
        assert!(fit_logistic_mle(&x, &y, &opts).is_ok());
    }

    #[test]
    fn recovers_simulated_coefficients() {
        let (x, y) = simulate(10_000, 11);
        let fit = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 0.1, "{}", fit.beta);
        assert!((fit.beta[1] - 2.0).abs() < 0.1, "{}", fit.beta);
    }

    #[test]
    fn score_equation_holds_at_the_mle() {
        let (x, y) = simulate(500, 3);
        let fit = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap();
        let mu = fit.predict(&x).unwrap();
        for j in 0..2 {
            let s: f64 = (0..500).map(|i| x[(i, j)] * (y[i] - mu[i])).sum::<f64>() / 500.0;
            assert!(s.abs() < 1e-8, "score {j} = {s:e}");
        }
    }

    #[test]
    fn penalized_fits_are_stationary_and_monotone() {
        let (x, y) = simulate(800, 5);
        for (l1, l2) in [(0.0, 0.05), (0.02, 0.0), (0.01, 0.01), (0.5, 0.0)] {
            let opts = LogisticOptions { l1, l2, ..Default::default() };
            let fit = fit_logistic_mle(&x, &y, &opts).unwrap();
            assert!(fit.stationarity <= 1e-8, "({l1},{l2}): {:e}", fit.stationarity);
            for pair in fit.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15);
            }
        }
        // a large L1 penalty zeroes the slope
        let opts = LogisticOptions { l1: 0.5, ..Default::default() };
        let fit = fit_logistic_mle(&x, &y, &opts).unwrap();
        assert_eq!(fit.beta[1], 0.0);
    }

    #[test]
    fn fractional_outcomes_are_accepted() {
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = vec![0.2, 0.4, 0.6, 0.0];
        let fit = fit_logistic_mle(&x, &y, &LogisticOptions::default()).unwrap();
        assert!((expit(fit.beta[0]) - 0.3).abs() < 1e-10);
    }
}
