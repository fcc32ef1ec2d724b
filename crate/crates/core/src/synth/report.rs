// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{SkippedPlacebo, SynthFit, WeightSource};
use crate::error::{Error, Result};
use crate::paneldata::{PanelDataset, SYSTEM_COUNT};

/// JSON document for one synthetic-control run.
///
/// `post_pre_ratio` is `null` when the ratio is infinite (exact pre-period fit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub kind: String,
    pub outcome: String,
    pub treated_unit: String,
    pub treatment_date: NaiveDate,
    /// Panel metadata such as the chassis / cpu_family filter.
    pub segment: BTreeMap<String, String>,
    pub weights: BTreeMap<String, f64>,
    pub pre_rmse: f64,
    pub post_rmse: f64,
    pub post_pre_ratio: Option<f64>,
    pub mean_post_gap: f64,
    pub system_count: Option<f64>,
    pub p_value: Option<f64>,
    pub placebos: usize,
    pub skipped_placebos: Vec<SkippedPlacebo>,
    pub converged: bool,
    pub iterations: usize,
    pub weight_source: WeightSource,
    pub counterfactual: Vec<(NaiveDate, Option<f64>)>,
    pub gap: Vec<(NaiveDate, Option<f64>)>,
}

impl SynthReport {
    pub const KIND: &'static str = "synth";

    pub fn new(fit: &SynthFit, panel: &PanelDataset) -> Self {
        let system_count = panel
            .unit_index(&fit.treated_unit)
            .and_then(|u| panel.covariate(SYSTEM_COUNT).map(|c| c[u]));
        let dated = |s: &[Option<f64>]| fit.dates.iter().copied().zip(s.iter().copied()).collect();
        Self {
            kind: Self::KIND.to_string(),
            outcome: panel.outcome_name().to_string(),
            treated_unit: fit.treated_unit.clone(),
            treatment_date: fit.treatment_date,
            segment: panel
                .metadata()
                .iter()
                .filter(|(k, _)| *k != "group_by")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            weights: fit
                .donor_units
                .iter()
                .cloned()
                .zip(fit.weights.iter().copied())
                .collect(),
            pre_rmse: fit.pre_rmse,
            post_rmse: fit.post_rmse,
            post_pre_ratio: fit.post_pre_ratio.is_finite().then_some(fit.post_pre_ratio),
            mean_post_gap: fit.mean_post_gap,
            system_count,
            p_value: fit.p_value(),
            placebos: fit.inference.as_ref().map_or(0, |i| i.placebo_ratios.len()),
            skipped_placebos: fit.inference.as_ref().map(|i| i.skipped.clone()).unwrap_or_default(),
            converged: fit.converged,
            iterations: fit.iterations,
            weight_source: fit.weight_source,
            counterfactual: dated(&fit.counterfactual),
            gap: dated(&fit.gap),
        }
    }
}

/// Linear-interpolation quantile of a sorted, non-empty slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Per-date plot data: observed, counterfactual, gap and placebo-gap quantiles.
pub fn write_plot_csv<W: Write>(fit: &SynthFit, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let to_err = |e: csv::Error| Error::Validation(format!("writing plot data: {e}"));
    w.write_record([
        "date",
        "observed",
        "counterfactual",
        "gap",
        "placebo_gap_q05",
        "placebo_gap_q50",
        "placebo_gap_q95",
    ])
    .map_err(to_err)?;
    for (t, date) in fit.dates.iter().enumerate() {
        let mut placebo: Vec<f64> = fit
            .inference
            .iter()
            .flat_map(|i| i.placebo_gaps.iter().filter_map(|(_, g)| g[t]))
            .collect();
        placebo.sort_by(f64::total_cmp);
        let q = |p: f64| (!placebo.is_empty()).then(|| quantile(&placebo, p));
        w.write_record([
            date.format("%Y-%m-%d").to_string(),
            cell(fit.observed[t]),
            cell(fit.counterfactual[t]),
            cell(fit.gap[t]),
            cell(q(0.05)),
            cell(q(0.5)),
            cell(q(0.95)),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing plot data: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.05) - 0.2).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.95), 7.0);
    }
}
