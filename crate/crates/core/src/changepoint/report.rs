// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{PenaltyKind, Segmentation};
use crate::error::{Error, Result};
use crate::paneldata::PanelDataset;

/// Observed values of one panel unit with masked dates dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSeries {
    pub name: String,
    pub values: Vec<f64>,
    /// Calendar date of every retained value.
    pub dates: Vec<NaiveDate>,
    /// Position of every retained value in the full panel calendar.
    pub original_index: Vec<usize>,
    /// Full calendar, masked dates included.
    pub calendar: Vec<NaiveDate>,
}

impl DenseSeries {
    pub fn from_panel(panel: &PanelDataset, unit_id: &str) -> Result<Self> {
        let u = panel
            .unit_index(unit_id)
            .ok_or_else(|| Error::Validation(format!("unit '{unit_id}' is not in the panel")))?;
        let mut values = Vec::new();
        let mut dates = Vec::new();
        let mut original_index = Vec::new();
        for (t, date) in panel.dates().iter().enumerate() {
            if let Some(v) = panel.value(u, t) {
                values.push(v);
                dates.push(*date);
                original_index.push(t);
            }
        }
        Ok(Self {
            name: unit_id.to_string(),
            values,
            dates,
            original_index,
            calendar: panel.dates().to_vec(),
        })
    }
}

/// JSON document for one segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub kind: String,
    pub series: String,
    pub penalty: Option<PenaltyKind>,
    pub lambda_eff: Option<f64>,
    pub n: usize,
    pub k: usize,
    /// Breakpoints as indices into the dense (unmasked) series.
    pub breakpoints: Vec<usize>,
    /// Breakpoints as indices into the full calendar.
    pub breakpoints_original: Vec<usize>,
    pub breakpoint_dates: Vec<NaiveDate>,
    pub segment_means: Vec<f64>,
    pub total_cost: f64,
}

impl SegmentationReport {
    pub const KIND: &'static str = "changepoint";

    pub fn new(seg: &Segmentation, series: &DenseSeries, penalty: Option<PenaltyKind>) -> Self {
        Self {
            kind: Self::KIND.to_string(),
            series: series.name.clone(),
            penalty,
            lambda_eff: seg.lambda_eff,
            n: seg.n,
            k: seg.k,
            breakpoints: seg.breakpoints.clone(),
            breakpoints_original: seg.breakpoints.iter().map(|&b| series.original_index[b]).collect(),
            breakpoint_dates: seg.breakpoints.iter().map(|&b| series.dates[b]).collect(),
            segment_means: seg.segment_means.clone(),
            total_cost: seg.total_cost,
        }
    }
}

/// `(date, value, segment_mean)` rows over the full calendar; masked dates
/// are written as `NA`.
pub fn write_segment_plot_csv<W: Write>(seg: &Segmentation, series: &DenseSeries, sink: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Validation(format!("writing plot data: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["date", "value", "segment_mean"]).map_err(to_err)?;
    let fitted = seg.fitted();
    let mut dense = series
        .original_index
        .iter()
        .zip(series.values.iter().zip(&fitted))
        .peekable();
    for (t, date) in series.calendar.iter().enumerate() {
        let date = date.format("%Y-%m-%d").to_string();
        match dense.peek() {
            Some((&orig, (v, m))) if orig == t => {
                w.write_record([date, v.to_string(), m.to_string()]).map_err(to_err)?;
                dense.next();
            }
            _ => w.write_record([date, "NA".into(), "NA".into()]).map_err(to_err)?,
        }
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing plot data: {e}")))?;
    Ok(())
}
