// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic control: a convex combination of donor units fitted on the
//! pre-treatment window, its counterfactual and gap series, and placebo-based
//! randomization inference.

mod placebo;
mod report;
mod simplex;
mod weights;

use chrono::NaiveDate;
use nalgebra::DMatrix;

pub use placebo::{randomization_inference, PlaceboInference, SkippedPlacebo};
pub use report::{write_plot_csv, SynthReport};
pub use simplex::project_to_simplex;
pub use weights::{fit_weights, WeightFit, WeightOptions, WeightSource};

use crate::error::{Error, Result};
use crate::paneldata::PanelDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub treated_unit: String,
    pub donor_units: Vec<String>,
    /// First treated day (T0).
    pub treatment_date: NaiveDate,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Unit-level covariates matched alongside the pre-period outcomes. Each
    /// covariate is standardized across the treated unit and donors and
    /// appended as one extra row with the same weight as an outcome date.
    pub covariates: Vec<String>,
    /// Fit only on the last `n` days before T0 (e.g. 60 for deactivation studies).
    pub pre_window_days: Option<usize>,
    /// Evaluate only the first `n` days from T0.
    pub post_window_days: Option<usize>,
}

impl SynthSpec {
    pub fn new<I, S>(treated_unit: impl Into<String>, donors: I, treatment_date: NaiveDate) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let defaults = WeightOptions::default();
        Self {
            treated_unit: treated_unit.into(),
            donor_units: donors.into_iter().map(Into::into).collect(),
            treatment_date,
            max_iterations: defaults.max_iterations,
            tolerance: defaults.tolerance,
            covariates: Vec::new(),
            pre_window_days: None,
            post_window_days: None,
        }
    }

    pub fn options(&self) -> WeightOptions {
        WeightOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }

    fn validate(&self, panel: &PanelDataset, min_donors: usize) -> Result<()> {
        if self.donor_units.contains(&self.treated_unit) {
            return Err(Error::Validation(format!(
                "treated unit {} is also listed as a donor",
                self.treated_unit
            )));
        }
        if self.donor_units.len() < min_donors {
            return Err(Error::Validation(format!(
                "synthetic control needs at least {min_donors} donors, got {}",
                self.donor_units.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = self.donor_units.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::Validation(format!("donor {d} listed twice")));
        }
        let missing: Vec<&str> = std::iter::once(&self.treated_unit)
            .chain(&self.donor_units)
            .filter(|u| panel.unit_index(u).is_none())
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "unit(s) not in panel: {}",
                missing.join(", ")
            )));
        }
        let dates = panel.dates();
        if dates.is_empty() || self.treatment_date <= dates[0] || self.treatment_date > dates[dates.len() - 1] {
            return Err(Error::Validation(format!(
                "treatment date {} must fall strictly inside the panel calendar",
                self.treatment_date
            )));
        }
        for c in &self.covariates {
            if panel.covariate(c).is_none() {
                return Err(Error::Validation(format!("panel has no covariate {c:?}")));
            }
        }
        Ok(())
    }
}

/// Fitted synthetic control for one treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFit {
    pub treated_unit: String,
    pub donor_units: Vec<String>,
    pub treatment_date: NaiveDate,
    pub dates: Vec<NaiveDate>,
    /// Simplex weights, aligned with `donor_units`.
    pub weights: Vec<f64>,
    /// Pre-treatment RMSPE of the outcome over the fitting window.
    pub pre_rmse: f64,
    pub post_rmse: f64,
    /// `post_rmse / pre_rmse`; infinite when the pre-period fit is exact and the
    /// post-period is not, zero when both are exact.
    pub post_pre_ratio: f64,
    /// Mean gap over the post-treatment window: the effect estimate.
    pub mean_post_gap: f64,
    pub observed: Vec<Option<f64>>,
    pub counterfactual: Vec<Option<f64>>,
    pub gap: Vec<Option<f64>>,
    /// Date indices of the fitting window and the evaluation window.
    pub pre_range: (usize, usize),
    pub post_range: (usize, usize),
    pub converged: bool,
    pub iterations: usize,
    pub weight_source: WeightSource,
    /// Filled in by [`randomization_inference`].
    pub inference: Option<PlaceboInference>,
}

impl SynthFit {
    pub fn p_value(&self) -> Option<f64> {
        self.inference.as_ref().map(|i| i.p_value)
    }

    pub fn weight_of(&self, donor: &str) -> Option<f64> {
        self.donor_units
            .iter()
            .position(|d| d == donor)
            .map(|i| self.weights[i])
    }

    pub fn with_inference(mut self, inference: PlaceboInference) -> Self {
        self.inference = Some(inference);
        self
    }
}

pub fn fit_synth(panel: &PanelDataset, spec: &SynthSpec) -> Result<SynthFit> {
    spec.validate(panel, 2)?;
    fit_synth_inner(panel, spec)
}

fn rmse(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

pub(crate) fn ratio(post: f64, pre: f64) -> f64 {
    if pre > 0.0 {
        post / pre
    } else if post > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Shared by [`fit_synth`] and placebo refits; assumes `spec` was validated.
pub(crate) fn fit_synth_inner(panel: &PanelDataset, spec: &SynthSpec) -> Result<SynthFit> {
    let treated = panel.unit_index(&spec.treated_unit).expect("validated");
    let donors: Vec<usize> = spec
        .donor_units
        .iter()
        .map(|d| panel.unit_index(d).expect("validated"))
        .collect();
    let first_post = panel.first_index_on_or_after(spec.treatment_date);
    let pre_start = spec.pre_window_days.map_or(0, |w| first_post.saturating_sub(w));
    let post_end = spec
        .post_window_days
        .map_or(panel.n_dates(), |w| (first_post + w).min(panel.n_dates()));

    let complete = |t: usize| !panel.is_missing(treated, t) && donors.iter().all(|&d| !panel.is_missing(d, t));
    let fit_dates: Vec<usize> = (pre_start..first_post).filter(|&t| complete(t)).collect();
    if fit_dates.len() < 2 {
        return Err(Error::Validation(format!(
            "{} has {} complete pre-treatment dates; at least 2 are needed",
            spec.treated_unit,
            fit_dates.len()
        )));
    }

    let mut target: Vec<f64> = fit_dates
        .iter()
        .map(|&t| panel.value(treated, t).expect("complete"))
        .collect();
    let mut block: Vec<Vec<f64>> = fit_dates
        .iter()
        .map(|&t| donors.iter().map(|&d| panel.value(d, t).expect("complete")).collect())
        .collect();
    for name in &spec.covariates {
        let col = panel.covariate(name).expect("validated");
        let vals: Vec<f64> = std::iter::once(treated)
            .chain(donors.iter().copied())
            .map(|u| col[u])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        if sd > 0.0 {
            target.push((vals[0] - mean) / sd);
            block.push(vals[1..].iter().map(|v| (v - mean) / sd).collect());
        }
    }
    let x = DMatrix::from_fn(block.len(), donors.len(), |i, j| block[i][j]);
    let wfit = weights::fit_weights_unchecked(&target, &x, &spec.options())?;

    let observed: Vec<Option<f64>> = (0..panel.n_dates()).map(|t| panel.value(treated, t)).collect();
    let counterfactual: Vec<Option<f64>> = (0..panel.n_dates())
        .map(|t| {
            donors
                .iter()
                .zip(&wfit.weights)
                .filter(|(_, &w)| w != 0.0)
                .try_fold(0.0, |acc, (&d, &w)| panel.value(d, t).map(|v| acc + w * v))
        })
        .collect();
    let gap: Vec<Option<f64>> = observed
        .iter()
        .zip(&counterfactual)
        .map(|(o, c)| Some((*o)? - (*c)?))
        .collect();

    let pre_rmse = rmse(fit_dates.iter().filter_map(|&t| gap[t])).unwrap_or(0.0);
    let post: Vec<f64> = (first_post..post_end).filter_map(|t| gap[t]).collect();
    let Some(post_rmse) = rmse(post.iter().copied()) else {
        return Err(Error::Validation(format!(
            "post-treatment period of {} is entirely masked",
            spec.treated_unit
        )));
    };
    let mean_post_gap = post.iter().sum::<f64>() / post.len() as f64;

    Ok(SynthFit {
        treated_unit: spec.treated_unit.clone(),
        donor_units: spec.donor_units.clone(),
        treatment_date: spec.treatment_date,
        dates: panel.dates().to_vec(),
        weights: wfit.weights,
        pre_rmse,
        post_rmse,
        post_pre_ratio: ratio(post_rmse, pre_rmse),
        mean_post_gap,
        observed,
        counterfactual,
        gap,
        pre_range: (pre_start, first_post),
        post_range: (first_post, post_end),
        converged: wfit.converged,
        iterations: wfit.iterations,
        weight_source: wfit.source,
        inference: None,
    })
}
