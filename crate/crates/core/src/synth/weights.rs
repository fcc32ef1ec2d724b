// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simplex-constrained least squares for synthetic-control weights.
//!
//! Minimizes `‖y − X·w‖²` over the probability simplex with an accelerated
//! projected-gradient method (step `1/L`, `L` from power iteration on the Gram
//! matrix, momentum restarted whenever it fails to improve). The accepted
//! iterates form a non-increasing objective sequence. The result is then
//! compared against an equality-constrained re-fit on the detected support and
//! against every single-donor vertex; the best of these is returned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simplex::project_to_simplex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the objective decrease of a plain projected step.
    pub tolerance: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

/// Which candidate produced the returned weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    ProjectedGradient,
    SupportRefit,
    Vertex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    /// `‖y − X·w‖²` at the returned weights.
    pub objective: f64,
    /// `sqrt(objective / rows)`.
    pub pre_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after every accepted optimizer step, starting from the uniform weights.
    pub objective_trace: Vec<f64>,
    /// Best single-donor objective, kept as the optimality certificate.
    pub best_vertex_objective: f64,
    pub source: WeightSource,
}

/// Fits simplex weights for `pre_treated ≈ pre_donors · w`.
///
/// `pre_donors` is rows × donors. At least two rows and two donors are required.
pub fn fit_weights(pre_treated: &[f64], pre_donors: &DMatrix<f64>, options: &WeightOptions) -> Result<WeightFit> {
    if pre_donors.ncols() < 2 {
        return Err(Error::Validation(format!(
            "synthetic control needs at least 2 donors, got {}",
            pre_donors.ncols()
        )));
    }
    fit_weights_unchecked(pre_treated, pre_donors, options)
}

/// [`fit_weights`] without the two-donor minimum (placebo pools may hold one donor).
pub(crate) fn fit_weights_unchecked(
    pre_treated: &[f64],
    pre_donors: &DMatrix<f64>,
    options: &WeightOptions,
) -> Result<WeightFit> {
    let (rows, j) = pre_donors.shape();
    if j == 0 {
        return Err(Error::Validation("donor pool is empty".into()));
    }
    if rows < 2 {
        return Err(Error::Validation(format!(
            "synthetic control needs at least 2 pre-treatment dates, got {rows}"
        )));
    }
    if pre_treated.len() != rows {
        return Err(Error::Argument(format!(
            "treated series has {} entries, donor matrix {rows} rows",
            pre_treated.len()
        )));
    }
    if !(options.tolerance > 0.0) || options.max_iterations == 0 {
        return Err(Error::Argument(
            "tolerance must be positive and max_iterations nonzero".into(),
        ));
    }
    if pre_treated.iter().chain(pre_donors.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in pre-treatment block".into()));
    }

    let y = DVector::from_column_slice(pre_treated);
    let problem = Problem::new(pre_donors, &y);
    let direct = |w: &[f64]| -> f64 {
        let w = DVector::from_column_slice(w);
        (&y - pre_donors * w).norm_squared()
    };

    let (best_vertex, best_vertex_objective) = (0..j)
        .map(|k| {
            let mut e = vec![0.0; j];
            e[k] = 1.0;
            let f = direct(&e);
            (e, f)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("j > 0");

    let run = problem.optimize(options);
    let mut weights = run.weights;
    let mut objective = direct(&weights);
    let mut source = WeightSource::ProjectedGradient;

    if let Some(refit) = support_refit(pre_donors, &y, &weights) {
        let f = direct(&refit);
        if f < objective {
            weights = refit;
            objective = f;
            source = WeightSource::SupportRefit;
        }
    }
    if best_vertex_objective < objective {
        weights = best_vertex;
        objective = best_vertex_objective;
        source = WeightSource::Vertex;
    }
    if !run.converged {
        log::warn!(
            "synthetic-control weights did not converge in {} iterations; returning best iterate",
            run.iterations
        );
    }

    Ok(WeightFit {
        pre_rmse: (objective / rows as f64).sqrt(),
        weights,
        objective,
        converged: run.converged,
        iterations: run.iterations,
        objective_trace: run.trace,
        best_vertex_objective,
        source,
    })
}

struct Problem {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    norm_y: f64,
}

struct Run {
    weights: Vec<f64>,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

impl Problem {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: x.transpose() * x,
            cross: x.transpose() * y,
            norm_y: y.norm_squared(),
        }
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.gram * w)) - 2.0 * self.cross.dot(w) + self.norm_y).max(0.0)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.gram * w - &self.cross) * 2.0
    }

    /// Upper estimate of the gradient's Lipschitz constant, `2·λmax(XᵀX)`.
    fn lipschitz(&self) -> f64 {
        let n = self.gram.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let next = &self.gram * &v;
            let norm = next.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let prev = lambda;
            lambda = norm;
            v = next / norm;
            if (lambda - prev).abs() <= 1e-12 * lambda {
                break;
            }
        }
        2.0 * lambda
    }

    fn project(v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(project_to_simplex(v.as_slice()))
    }

    /// Plain projected-gradient step from `x`; doubles `lipschitz` until the
    /// step does not increase the objective.
    fn plain_step(&self, x: &DVector<f64>, fx: f64, lipschitz: &mut f64) -> (DVector<f64>, f64) {
        let g = self.gradient(x);
        loop {
            let z = Self::project(&(x - &g / *lipschitz));
            let fz = self.objective(&z);
            if fz <= fx || *lipschitz > 1e300 {
                return if fz <= fx { (z, fz) } else { (x.clone(), fx) };
            }
            *lipschitz *= 2.0;
        }
    }

    fn optimize(&self, options: &WeightOptions) -> Run {
        let j = self.gram.nrows();
        let mut x = DVector::from_element(j, 1.0 / j as f64);
        let mut fx = self.objective(&x);
        let mut trace = vec![fx];
        let mut lipschitz = self.lipschitz();
        if lipschitz == 0.0 || j == 1 {
            return Run {
                weights: x.iter().copied().collect(),
                converged: true,
                iterations: 0,
                trace,
            };
        }

        let mut momentum_point = x.clone();
        let mut t = 1.0_f64;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < options.max_iterations {
            iterations += 1;
            let g = self.gradient(&momentum_point);
            let z = Self::project(&(&momentum_point - &g / lipschitz));
            let fz = self.objective(&z);

            let (next, f_next, plain) = if fz <= fx {
                (z, fz, false)
            } else {
                // momentum overshot: restart from x with a plain step
                t = 1.0;
                let (z, fz) = self.plain_step(&x, fx, &mut lipschitz);
                (z, fz, true)
            };
            let decrease = fx - f_next;
            let prev = std::mem::replace(&mut x, next);
            fx = f_next;
            trace.push(fx);

            if decrease <= options.tolerance {
                let (check, f_check) = if plain {
                    (x.clone(), fx)
                } else {
                    let (z, fz) = self.plain_step(&x, fx, &mut lipschitz);
                    trace.push(fz);
                    (z, fz)
                };
                let verified = plain || fx - f_check <= options.tolerance;
                x = check;
                fx = f_check;
                if verified {
                    converged = true;
                    break;
                }
                t = 1.0;
                momentum_point = x.clone();
                continue;
            }

            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            momentum_point = &x + (&x - &prev) * ((t - 1.0) / t_next);
            t = t_next;
        }

        Run {
            weights: x.iter().copied().collect(),
            converged,
            iterations,
            trace,
        }
    }
}

/// Least squares on the support of `w` under `sum(w) = 1`; `None` if the
/// solution leaves the simplex or the reduced system is degenerate.
fn support_refit(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 1e-12).collect();
    let (&last, rest) = support.split_last()?;
    if rest.is_empty() {
        let mut v = vec![0.0; w.len()];
        v[last] = 1.0;
        return Some(v);
    }
    // substitute w_last = 1 − Σ others: (y − x_last) = Σ w_k (x_k − x_last)
    let base = x.column(last);
    let reduced = DMatrix::from_fn(x.nrows(), rest.len(), |i, c| x[(i, rest[c])] - base[i]);
    let rhs = y - base;
    if reduced.nrows() < reduced.ncols() {
        return None;
    }
    let svd = reduced.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    let mut v = vec![0.0; w.len()];
    let mut sum = 0.0;
    for (c, &k) in rest.iter().enumerate() {
        if sol[c] < 0.0 {
            return None;
        }
        v[k] = sol[c];
        sum += sol[c];
    }
    if sum > 1.0 {
        return None;
    }
    v[last] = 1.0 - sum;
    Some(v)
}
