//! Class-weighted, L2-penalized logistic regression of the base model's error
//! indicator.
//!
//! Minimizes
//!
//! ```text
//! Σ_i s_i · BCE(e_i, σ(w·x_i + b)) + (λ/2)·‖w‖²
//! ```
//!
//! where `s_i` is the class weight of row `i` and `λ = 1/C`. The intercept is
//! not penalized. The solver is a damped Newton iteration started at zero with
//! an Armijo backtracking line search; the objective is strictly convex in `w`,
//! so the fixed point is the unique optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Balanced,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Penalty coefficient λ on ‖w‖²/2; the inverse of the usual `C`.
    pub l2_strength: f64,
    pub max_iterations: usize,
    /// Stop once the gradient's max-norm falls below this.
    pub convergence_tolerance: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            l2_strength: 1.0,
            max_iterations: 1000,
            convergence_tolerance: 1e-6,
            class_weighting: ClassWeighting::Balanced,
            seed: crate::seed::DEFAULT_SEED,
        }
    }
}

impl TrainingConfig {
    /// Config with the given inverse regularization strength `C`.
    pub fn with_c(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("C must be positive and finite, got {c}")));
        }
        Ok(TrainingConfig { l2_strength: 1.0 / c, ..Default::default() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength.is_finite() && self.l2_strength > 0.0) {
            return Err(Error::invalid("l2_strength must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if self.convergence_tolerance.is_nan() || self.convergence_tolerance <= 0.0 {
            return Err(Error::invalid("convergence_tolerance must be positive"));
        }
        Ok(())
    }
}

/// `w_c = n / (2·n_c)` for the negative (`false`) and positive (`true`) classes.
pub fn balanced_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&e| e).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{n} error labels with {n_pos} positive; both classes are required"
        )));
    }
    Ok((n as f64 / (2.0 * n_neg as f64), n as f64 / (2.0 * n_pos as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedWeights {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the returned iterate.
    pub objective: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct Problem<'a> {
    rows: Vec<&'a [f64]>,
    labels: &'a [bool],
    sample_weights: Vec<f64>,
    l2: f64,
    dim: usize,
}

impl Problem<'_> {
    fn margin(&self, row: &[f64], w: &[f64], b: f64) -> f64 {
        row.iter().zip(w).map(|(x, wj)| x * wj).sum::<f64>() + b
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let loss: f64 = self
            .rows
            .iter()
            .zip(self.labels)
            .zip(&self.sample_weights)
            .map(|((row, &e), s)| {
                let z = self.margin(row, w, b);
                // -log σ(z) = softplus(-z); -log(1-σ(z)) = softplus(z)
                s * if e { softplus(-z) } else { softplus(z) }
            })
            .sum();
        loss + 0.5 * self.l2 * w.iter().map(|x| x * x).sum::<f64>()
    }

    /// Gradient and Hessian over the parameter vector `[w..., b]`.
    fn derivatives(&self, w: &[f64], b: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.dim + 1;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut xa = vec![0.0; p];
        for ((row, &e), s) in self.rows.iter().zip(self.labels).zip(&self.sample_weights) {
            let mu = sigmoid(self.margin(row, w, b));
            let r = s * (mu - if e { 1.0 } else { 0.0 });
            let c = s * mu * (1.0 - mu);
            xa[..self.dim].copy_from_slice(row);
            xa[self.dim] = 1.0;
            for i in 0..p {
                grad[i] += r * xa[i];
                let cx = c * xa[i];
                for j in 0..=i {
                    hess[(i, j)] += cx * xa[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
            }
        }
        for j in 0..self.dim {
            grad[j] += self.l2 * w[j];
            hess[(j, j)] += self.l2;
        }
        (grad, hess)
    }
}

/// Fits weights and intercept on (already standardized) rows against error labels.
///
/// Hitting `max_iterations` is not an error: the best iterate is returned with
/// `converged = false`.
pub fn train_error_model<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[bool],
    config: &TrainingConfig,
) -> Result<TrainedWeights> {
    config.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let (w_neg, w_pos) = balanced_weights(labels)?;
    let dim = rows[0].as_ref().len();
    if rows.iter().any(|r| r.as_ref().len() != dim) {
        return Err(Error::invalid("rows have differing dimensions"));
    }
    let sample_weights = match config.class_weighting {
        ClassWeighting::Balanced => labels.iter().map(|&e| if e { w_pos } else { w_neg }).collect(),
        ClassWeighting::None => vec![1.0; labels.len()],
    };
    let problem =
        Problem { rows: rows.iter().map(AsRef::as_ref).collect(), labels, sample_weights, l2: config.l2_strength, dim };

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut f = problem.objective(&w, b);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        let (grad, hess) = problem.derivatives(&w, b);
        if grad.amax() <= config.convergence_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match hess.cholesky() {
            Some(chol) => chol.solve(&grad),
            None => grad.clone(),
        };
        // Armijo backtracking along -step
        let slope = -grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let w_new: Vec<f64> = w.iter().enumerate().map(|(j, wj)| wj - t * step[j]).collect();
            let b_new = b - t * step[dim];
            let f_new = problem.objective(&w_new, b_new);
            if f_new <= f + 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                f = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent possible at float resolution; this iterate is the optimum we can represent
            let (grad, _) = problem.derivatives(&w, b);
            converged = grad.amax() <= config.convergence_tolerance;
            break;
        }
    }
    if !converged && iterations >= config.max_iterations {
        let (grad, _) = problem.derivatives(&w, b);
        converged = grad.amax() <= config.convergence_tolerance;
    }
    if !converged {
        tracing::warn!(iterations, "error model did not reach the convergence tolerance");
    }
    Ok(TrainedWeights { weights: w, intercept: b, iterations, converged, objective: f })
}

/// The training objective at the given parameters; exposed for diagnostics.
pub fn training_objective<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[bool],
    config: &TrainingConfig,
    weights: &[f64],
    intercept: f64,
) -> Result<f64> {
    let (w_neg, w_pos) = balanced_weights(labels)?;
    let problem = Problem {
        rows: rows.iter().map(AsRef::as_ref).collect(),
        labels,
        sample_weights: match config.class_weighting {
            ClassWeighting::Balanced => labels.iter().map(|&e| if e { w_pos } else { w_neg }).collect(),
            ClassWeighting::None => vec![1.0; labels.len()],
        },
        l2: config.l2_strength,
        dim: weights.len(),
    };
    Ok(problem.objective(weights, intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn training_config_defaults() {
        let c = TrainingConfig::default();
        assert_eq!(c.l2_strength, 1.0);
        assert_eq!(c.max_iterations, 1000);
        assert_eq!(c.convergence_tolerance, 1e-6);
        assert_eq!(c.class_weighting, ClassWeighting::Balanced);
        assert_eq!(c.seed, 42);
        assert_eq!(TrainingConfig::with_c(4.0).unwrap().l2_strength, 0.25);
        assert!(TrainingConfig::with_c(0.0).is_err());
    }

    #[test]
    fn balanced_weight_examples() {
        assert_eq!(balanced_weights(&[false, true]).unwrap(), (1.0, 1.0));
        let (n, p) = balanced_weights(&[false, false, false, true]).unwrap();
        assert!((n - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(p, 2.0);
        let labels = [true, true, false, false, false, false, false, false];
        let (n, p) = balanced_weights(&labels).unwrap();
        // n / (2·n_0) = 8 / 12
        assert!((n - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p, 2.0);
        // weighted class masses are equal
        assert!((6.0 * n - 2.0 * p).abs() < 1e-12);
        assert!(matches!(balanced_weights(&[true, true]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn symmetric_separable_data() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            rows.push([-1.0]);
            labels.push(false);
            rows.push([1.0]);
            labels.push(true);
        }
        let fit = train_error_model(&rows, &labels, &TrainingConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.weights[0] > 0.0);
        assert!(fit.intercept.abs() < 1e-9);
    }

    #[test]
    fn constant_feature_gets_zero_weight() {
        let rows = [[3.0, -1.0], [3.0, 1.0], [3.0, 0.5], [3.0, -0.2]];
        let labels = [false, true, true, false];
        let fit = train_error_model(&rows, &labels, &TrainingConfig::default()).unwrap();
        assert!(fit.converged);
        // the intercept absorbs the constant column; only the penalty acts on its weight
        assert!(fit.weights[0].abs() < 1e-6, "{:?}", fit.weights);
    }

    #[test]
    fn rejects_single_class_and_misaligned_input() {
        let rows = [[0.0], [1.0]];
        assert!(matches!(
            train_error_model(&rows, &[false, false], &TrainingConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
        assert!(train_error_model(&rows, &[false], &TrainingConfig::default()).is_err());
    }

    #[test]
    fn iteration_cap_returns_best_iterate_unconverged() {
        let rows = [[0.0], [1.0], [2.0], [0.5]];
        let labels = [false, true, true, false];
        let cfg = TrainingConfig { max_iterations: 1, ..Default::default() };
        let fit = train_error_model(&rows, &labels, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
        let zero = training_objective(&rows, &labels, &cfg, &[0.0], 0.0).unwrap();
        assert!(fit.objective < zero);
    }

    #[test]
    fn optimum_beats_random_perturbations() {
        let mut rng = crate::seed::rng(11);
        let rows: Vec<[f64; 3]> = (0..60)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] - 0.5 * r[1] + rng.random_range(-1.0..1.0) > 0.8).collect();
        let cfg = TrainingConfig::default();
        let fit = train_error_model(&rows, &labels, &cfg).unwrap();
        assert!(fit.converged);
        for _ in 0..1000 {
            let w: Vec<f64> = fit.weights.iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
            let b = fit.intercept + rng.random_range(-0.1..0.1);
            let f = training_objective(&rows, &labels, &cfg, &w, b).unwrap();
            assert!(fit.objective <= f);
        }
    }
}
