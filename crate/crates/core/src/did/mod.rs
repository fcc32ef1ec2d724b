// SPDX-License-Identifier: MIT OR Apache-2.0

//! Difference-in-differences on a unit × date panel.
//!
//! The regression stacks every unmasked (unit, date) cell of the treated and
//! control groups and fits
//!
//! ```text
//! y = alpha + g·treated + p·post + beta0·(treated × post) + b·X + gamma·t + e
//! ```
//!
//! where `beta0` is the treatment effect. Group and post-period main effects are
//! always included; `t` is the day index centred on the panel midpoint.
//! Standard errors are classical (homoskedastic).

mod ols;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use ols::{solve_ols, solve_ols_named, OlsFit, RANK_TOLERANCE};

use crate::error::{Error, Result};
use crate::paneldata::PanelDataset;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DidSpec {
    pub treated_units: BTreeSet<String>,
    pub control_units: BTreeSet<String>,
    /// First treated day (T0).
    pub treatment_date: Option<NaiveDate>,
    /// Numeric unit-level covariates read from the panel.
    pub covariate_names: Vec<String>,
    /// Categorical unit attributes: name → unit → level. Expanded to k−1
    /// dummies, the alphabetically first level being the baseline.
    pub categorical: BTreeMap<String, BTreeMap<String, String>>,
    pub time_trend: bool,
}

impl DidSpec {
    pub fn new<T, C>(treated: T, control: C, treatment_date: NaiveDate) -> Self
    where
        T: IntoIterator,
        T::Item: Into<String>,
        C: IntoIterator,
        C::Item: Into<String>,
    {
        Self {
            treated_units: treated.into_iter().map(Into::into).collect(),
            control_units: control.into_iter().map(Into::into).collect(),
            treatment_date: Some(treatment_date),
            ..Self::default()
        }
    }

    pub fn with_time_trend(mut self, on: bool) -> Self {
        self.time_trend = on;
        self
    }

    pub fn with_covariates<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.covariate_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_categorical(mut self, name: impl Into<String>, levels: BTreeMap<String, String>) -> Self {
        self.categorical.insert(name.into(), levels);
        self
    }

    fn validate(&self, panel: &PanelDataset) -> Result<NaiveDate> {
        if self.treated_units.is_empty() || self.control_units.is_empty() {
            return Err(Error::Validation("treated and control groups must be non-empty".into()));
        }
        if let Some(u) = self.treated_units.intersection(&self.control_units).next() {
            return Err(Error::Validation(format!("unit {u} is both treated and control")));
        }
        let missing: Vec<&str> = self
            .treated_units
            .iter()
            .chain(&self.control_units)
            .filter(|u| panel.unit_index(u).is_none())
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "unit(s) not in panel: {}",
                missing.join(", ")
            )));
        }
        let t0 = self
            .treatment_date
            .ok_or_else(|| Error::Validation("treatment date is not set".into()))?;
        let dates = panel.dates();
        if dates.is_empty() || t0 <= dates[0] || t0 > dates[dates.len() - 1] {
            return Err(Error::Validation(format!(
                "treatment date {t0} must fall strictly inside the panel calendar"
            )));
        }
        for name in &self.covariate_names {
            if panel.covariate(name).is_none() {
                return Err(Error::Validation(format!("panel has no covariate {name:?}")));
            }
        }
        for (name, levels) in &self.categorical {
            for u in self.treated_units.iter().chain(&self.control_units) {
                if !levels.contains_key(u) {
                    return Err(Error::Validation(format!(
                        "categorical {name:?} has no level for unit {u}"
                    )));
                }
            }
        }
        Ok(t0)
    }
}

/// Fitted difference-in-differences model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidFit {
    pub alpha: f64,
    /// Treatment effect: coefficient on the treated × post interaction.
    pub beta0: f64,
    pub group_effect: f64,
    pub post_effect: f64,
    pub covariate_betas: BTreeMap<String, f64>,
    pub gamma: Option<f64>,
    pub stderr_beta0: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub confidence_interval: (f64, f64),
    pub n_obs: usize,
    pub df: usize,
}

struct Stacked {
    design: DMatrix<f64>,
    response: DVector<f64>,
    names: Vec<String>,
}

fn centred_day(panel: &PanelDataset, t: usize) -> f64 {
    t as f64 - (panel.n_dates() as f64 - 1.0) / 2.0
}

/// Units in canonical (sorted) order so the fit never depends on panel row order.
fn spec_units<'a>(spec: &'a DidSpec) -> impl Iterator<Item = (&'a String, bool)> {
    spec.treated_units
        .iter()
        .map(|u| (u, true))
        .chain(spec.control_units.iter().map(|u| (u, false)))
}

fn stack(panel: &PanelDataset, spec: &DidSpec, t0: NaiveDate) -> Result<Stacked> {
    let first_post = panel.first_index_on_or_after(t0);

    // group-side observation counts
    let mut counts = [[0usize; 2]; 2];
    for (unit, treated) in spec_units(spec) {
        let u = panel.unit_index(unit).expect("validated");
        for t in 0..panel.n_dates() {
            if !panel.is_missing(u, t) {
                counts[usize::from(treated)][usize::from(t >= first_post)] += 1;
            }
        }
    }
    if counts[0][1] == 0 || counts[1][1] == 0 {
        return Err(Error::Validation("post-treatment period has no observations".into()));
    }
    for (g, name) in [(1, "treated"), (0, "control")] {
        for (side, when) in [(0, "before"), (1, "on/after")] {
            if counts[g][side] < 2 {
                return Err(Error::Validation(format!(
                    "{name} group needs at least 2 observations {when} {t0}"
                )));
            }
        }
    }

    let mut names = vec![
        "alpha".to_string(),
        "treated".to_string(),
        "post".to_string(),
        "treated_x_post".to_string(),
    ];
    names.extend(spec.covariate_names.iter().cloned());
    let mut dummies: Vec<(String, String)> = Vec::new();
    for (name, levels) in &spec.categorical {
        let used: BTreeSet<&String> = spec_units(spec).map(|(u, _)| &levels[u]).collect();
        for level in used.into_iter().skip(1) {
            dummies.push((name.clone(), level.clone()));
            names.push(format!("{name}={level}"));
        }
    }
    if spec.time_trend {
        names.push("trend".to_string());
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut response = Vec::new();
    for (unit, treated) in spec_units(spec) {
        let u = panel.unit_index(unit).expect("validated");
        let g = f64::from(u8::from(treated));
        for t in 0..panel.n_dates() {
            let Some(y) = panel.value(u, t) else { continue };
            let post = f64::from(u8::from(t >= first_post));
            rows.extend([1.0, g, post, g * post]);
            for c in &spec.covariate_names {
                rows.push(panel.covariate(c).expect("validated")[u]);
            }
            for (name, level) in &dummies {
                rows.push(f64::from(u8::from(spec.categorical[name][unit] == *level)));
            }
            if spec.time_trend {
                rows.push(centred_day(panel, t));
            }
            response.push(y);
        }
    }
    let p = names.len();
    let n = response.len();
    Ok(Stacked {
        design: DMatrix::from_row_slice(n, p, &rows),
        response: DVector::from_vec(response),
        names,
    })
}

/// Two-sided p-value and 95% interval from a t statistic.
fn t_inference(estimate: f64, stderr: f64, df: usize) -> Result<(f64, f64, (f64, f64))> {
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    let t = estimate / stderr;
    let p = if t.is_nan() {
        // 0/0: an exact fit with no contrast
        if estimate == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    let q = dist.inverse_cdf(0.975);
    let half = q * stderr;
    Ok((t, p, (estimate - half, estimate + half)))
}

pub fn fit_did(panel: &PanelDataset, spec: &DidSpec) -> Result<DidFit> {
    let t0 = spec.validate(panel)?;
    let s = stack(panel, spec, t0)?;
    let n_obs = s.response.len();
    if n_obs <= s.names.len() {
        return Err(Error::Validation(format!(
            "{n_obs} observations leave no residual degrees of freedom for {} coefficients",
            s.names.len()
        )));
    }
    let fit = solve_ols_named(&s.design, &s.response, &s.names)?;
    let coef = |name: &str| {
        let j = s.names.iter().position(|n| n == name).expect("column present");
        fit.coefficients[j]
    };
    let beta0 = coef("treated_x_post");
    let stderr_beta0 = fit.stderrs[3];
    let (t_stat, p_value, confidence_interval) = t_inference(beta0, stderr_beta0, fit.df)?;

    let covariate_betas = s
        .names
        .iter()
        .zip(&fit.coefficients)
        .skip(4)
        .filter(|(n, _)| *n != "trend")
        .map(|(n, c)| (n.clone(), *c))
        .collect();

    Ok(DidFit {
        alpha: coef("alpha"),
        beta0,
        group_effect: coef("treated"),
        post_effect: coef("post"),
        covariate_betas,
        gamma: spec.time_trend.then(|| coef("trend")),
        stderr_beta0,
        t_stat,
        p_value,
        confidence_interval,
        n_obs,
        df: fit.df,
    })
}

/// Pre-period slope comparison between the treated and control groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendDiagnostic {
    /// Treated slope minus control slope, outcome units per day.
    pub slope_gap: f64,
    pub slope_gap_stderr: f64,
    pub pre_dates: usize,
}

/// Fits group-specific linear trends on pre-treatment cells only.
///
/// No verdict is returned; compare `|slope_gap|` with its standard error.
pub fn parallel_trends_diagnostic(panel: &PanelDataset, spec: &DidSpec) -> Result<TrendDiagnostic> {
    let t0 = spec.validate(panel)?;
    let pre_dates = panel.first_index_on_or_after(t0);
    if pre_dates < 3 {
        return Err(Error::DiagnosticUnavailable(format!(
            "{pre_dates} pre-treatment dates; at least 3 are needed"
        )));
    }
    let mut rows = Vec::new();
    let mut response = Vec::new();
    for (unit, treated) in spec_units(spec) {
        let u = panel.unit_index(unit).expect("validated");
        let g = f64::from(u8::from(treated));
        for t in 0..pre_dates {
            if let Some(y) = panel.value(u, t) {
                let day = centred_day(panel, t);
                rows.extend([1.0, g, day, g * day]);
                response.push(y);
            }
        }
    }
    let n = response.len();
    if n <= 4 {
        return Err(Error::DiagnosticUnavailable(
            "too few unmasked pre-treatment observations".into(),
        ));
    }
    let names = ["alpha", "treated", "slope", "treated_x_slope"].map(String::from);
    let fit = solve_ols_named(
        &DMatrix::from_row_slice(n, 4, &rows),
        &DVector::from_vec(response),
        &names,
    )
    .map_err(|e| match e {
        Error::SingularDesign { .. } => Error::DiagnosticUnavailable(format!("pre-period design is degenerate: {e}")),
        other => other,
    })?;
    Ok(TrendDiagnostic {
        slope_gap: fit.coefficients[3],
        slope_gap_stderr: fit.stderrs[3],
        pre_dates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    fn panel(rows: Vec<(&str, Vec<f64>)>) -> PanelDataset {
        let n = rows[0].1.len();
        PanelDataset::from_rows(
            "usage_hours",
            rows.iter().map(|(u, _)| u.to_string()).collect(),
            day0().iter_days().take(n).collect(),
            rows.into_iter()
                .map(|(_, r)| r.into_iter().map(Some).collect())
                .collect(),
        )
        .unwrap()
    }

    fn t0(offset: u64) -> NaiveDate {
        day0() + chrono::Days::new(offset)
    }

    #[test]
    fn flat_step_gives_exact_effect() {
        let treated: Vec<f64> = (0..20).map(|t| if t < 10 { 5.0 } else { 7.0 }).collect();
        let p = panel(vec![("T", treated), ("C", vec![5.0; 20])]);
        let fit = fit_did(&p, &DidSpec::new(["T"], ["C"], t0(10))).unwrap();
        assert!((fit.beta0 - 2.0).abs() < 1e-12, "{}", fit.beta0);
        assert!(fit.p_value < 1e-10);
        assert!(fit.confidence_interval.0 <= fit.beta0 && fit.beta0 <= fit.confidence_interval.1);
    }

    #[test]
    fn identical_series_give_zero_effect() {
        let y: Vec<f64> = (0..12).map(|t| (t as f64 * 0.7).sin()).collect();
        let p = panel(vec![("T", y.clone()), ("C", y)]);
        let fit = fit_did(&p, &DidSpec::new(["T"], ["C"], t0(6)).with_time_trend(true)).unwrap();
        assert!(fit.beta0.abs() < 1e-12);
        assert!((0.0..=1.0).contains(&fit.p_value));
    }

    #[test]
    fn treatment_date_must_be_inside() {
        let p = panel(vec![("T", vec![1.0; 6]), ("C", vec![1.0; 6])]);
        let err = fit_did(&p, &DidSpec::new(["T"], ["C"], day0())).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = fit_did(&p, &DidSpec::new(["T"], ["C"], t0(40))).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn single_post_day_is_rejected() {
        let p = panel(vec![("T", vec![1.0; 6]), ("C", vec![1.0; 6])]);
        assert!(fit_did(&p, &DidSpec::new(["T"], ["C"], t0(5))).is_err());
    }

    #[test]
    fn unit_level_covariate_collinear_with_group_is_singular() {
        let p = panel(vec![("T", vec![1.0; 8]), ("C", vec![2.0; 8])])
            .with_covariate("vpro_percentage", vec![30.0, 10.0])
            .unwrap();
        let spec = DidSpec::new(["T"], ["C"], t0(4)).with_covariates(["vpro_percentage"]);
        assert!(matches!(fit_did(&p, &spec), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn categorical_baseline_is_alphabetical() {
        let mut rows = Vec::new();
        for (u, base) in [("T1", 1.0), ("T2", 2.0), ("C1", 1.5), ("C2", 3.0)] {
            let treated = u.starts_with('T');
            rows.push((
                u,
                (0..10)
                    .map(|t| base + if treated && t >= 5 { 1.0 } else { 0.0 })
                    .collect(),
            ));
        }
        let p = panel(rows);
        let levels: BTreeMap<String, String> = [("T1", "Asia"), ("T2", "Europe"), ("C1", "Asia"), ("C2", "Europe")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let spec = DidSpec::new(["T1", "T2"], ["C1", "C2"], t0(5)).with_categorical("continent", levels);
        let fit = fit_did(&p, &spec).unwrap();
        assert!(fit.covariate_betas.contains_key("continent=Europe"));
        assert!(!fit.covariate_betas.contains_key("continent=Asia"));
        assert!((fit.beta0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trend_diagnostic_exact_slopes() {
        let treated: Vec<f64> = (0..10).map(|t| 1.0 + 0.2 * t as f64).collect();
        let control: Vec<f64> = (0..10).map(|t| 3.0 + 0.1 * t as f64).collect();
        let p = panel(vec![("T", treated), ("C", control)]);
        let d = parallel_trends_diagnostic(&p, &DidSpec::new(["T"], ["C"], t0(8))).unwrap();
        assert!((d.slope_gap - 0.1).abs() < 1e-12);

        let same: Vec<f64> = (0..10).map(|t| 0.1 * t as f64).collect();
        let p = panel(vec![("T", same.clone()), ("C", same)]);
        let d = parallel_trends_diagnostic(&p, &DidSpec::new(["T"], ["C"], t0(8))).unwrap();
        assert!(d.slope_gap.abs() < 1e-12);
    }

    #[test]
    fn trend_diagnostic_needs_three_pre_dates() {
        let p = panel(vec![("T", vec![1.0; 10]), ("C", vec![1.0; 10])]);
        let err = parallel_trends_diagnostic(&p, &DidSpec::new(["T"], ["C"], t0(2))).unwrap_err();
        assert!(matches!(err, Error::DiagnosticUnavailable(_)));
    }
}
