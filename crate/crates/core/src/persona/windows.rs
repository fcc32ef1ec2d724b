// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{PersonaModel, UsageFeatureVector, UsageRecord};
use crate::changepoint::{detect_penalized, PenaltyConfig, Segmentation};
use crate::error::{Error, Result};

pub const DEFAULT_WIDTH_DAYS: usize = 28;
pub const DEFAULT_STRIDE_DAYS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaCountSeries {
    pub persona_names: Vec<String>,
    pub window_starts: Vec<NaiveDate>,
    pub width_days: usize,
    pub stride_days: usize,
    /// `windows × k` devices per persona.
    pub counts: Vec<Vec<u64>>,
    /// `(windows − 1) × k`; row `w` is `counts[w + 1] − counts[w]`.
    pub diffs: Vec<Vec<i64>>,
    /// Per-persona standardized `diffs` (population std; zero-std columns are 0).
    pub zscores: Vec<Vec<f64>>,
}

impl PersonaCountSeries {
    /// Start of the later window of diff row `row`.
    pub fn diff_window_start(&self, row: usize) -> NaiveDate {
        self.window_starts[row + 1]
    }

    pub fn zscore_column(&self, persona: usize) -> Vec<f64> {
        self.zscores.iter().map(|r| r[persona]).collect()
    }

    pub fn persona_index(&self, name: &str) -> Option<usize> {
        self.persona_names.iter().position(|n| n == name)
    }
}

/// Records sorted by date then device, with a duplicate check.
fn sorted(records: &[UsageRecord]) -> Result<Vec<&UsageRecord>> {
    let mut refs: Vec<&UsageRecord> = records.iter().collect();
    refs.sort_by(|a, b| (a.date, &a.device_id).cmp(&(b.date, &b.device_id)));
    for pair in refs.windows(2) {
        if pair[0].date == pair[1].date && pair[0].device_id == pair[1].device_id {
            return Err(Error::Validation(format!(
                "device {} has two usage rows on {}",
                pair[0].device_id, pair[0].date
            )));
        }
    }
    if let Some(first) = refs.first() {
        let names: Vec<&String> = first.features.keys().collect();
        if let Some(bad) = refs.iter().find(|r| !r.features.keys().eq(names.iter().copied())) {
            return Err(Error::Schema(format!(
                "usage row for {} on {} has features {:?}, expected {:?}",
                bad.device_id,
                bad.date,
                bad.features.keys().collect::<Vec<_>>(),
                names
            )));
        }
    }
    Ok(refs)
}

fn window_slice<'a>(sorted: &'a [&'a UsageRecord], start: NaiveDate, width: usize) -> &'a [&'a UsageRecord] {
    let end = start + Days::new(width as u64);
    let lo = sorted.partition_point(|r| r.date < start);
    let hi = sorted.partition_point(|r| r.date < end);
    &sorted[lo..hi]
}

/// Mean daily hours per device over the days it reported inside the window;
/// devices with zero total usage are left out.
fn average(window: &[&UsageRecord], start: NaiveDate) -> Vec<UsageFeatureVector> {
    // rows are date-ordered, so every device's sums accumulate in calendar order
    let mut acc: BTreeMap<&str, (BTreeMap<String, f64>, usize)> = BTreeMap::new();
    for r in window {
        let entry = acc.entry(r.device_id.as_str()).or_default();
        for (k, v) in &r.features {
            *entry.0.entry(k.clone()).or_insert(0.0) += v;
        }
        entry.1 += 1;
    }
    acc.into_iter()
        .filter(|(_, (sums, _))| sums.values().sum::<f64>() > 0.0)
        .map(|(device, (sums, days))| UsageFeatureVector {
            device_id: device.to_string(),
            window_start: start,
            features: sums.into_iter().map(|(k, s)| (k, s / days as f64)).collect(),
        })
        .collect()
}

/// Per-device feature vectors for the window `[start, start + width_days)`.
pub fn window_vectors(records: &[UsageRecord], start: NaiveDate, width_days: usize) -> Result<Vec<UsageFeatureVector>> {
    if width_days == 0 {
        return Err(Error::Argument("window width must be at least one day".into()));
    }
    let refs = sorted(records)?;
    Ok(average(window_slice(&refs, start, width_days), start))
}

fn zscore_columns(diffs: &[Vec<i64>], k: usize) -> Vec<Vec<f64>> {
    let m = diffs.len() as f64;
    let mut out = vec![vec![0.0; k]; diffs.len()];
    for p in 0..k {
        let col: Vec<f64> = diffs.iter().map(|r| r[p] as f64).collect();
        let mean = col.iter().sum::<f64>() / m;
        let std = (col.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / m).sqrt();
        if std > 0.0 {
            for (row, d) in out.iter_mut().zip(&col) {
                row[p] = (d - mean) / std;
            }
        }
    }
    out
}

/// Persona counts over sliding windows, assigned against frozen centroids.
///
/// Windows start at the earliest record date and advance by `stride_days`
/// while a full `width_days` window fits before the last record date.
pub fn windowed_counts(
    records: &[UsageRecord],
    model: &PersonaModel,
    width_days: usize,
    stride_days: usize,
) -> Result<PersonaCountSeries> {
    if width_days == 0 || stride_days == 0 {
        return Err(Error::Argument(
            "window width and stride must be at least one day".into(),
        ));
    }
    let refs = sorted(records)?;
    let (first, last) = match (refs.first(), refs.last()) {
        (Some(a), Some(b)) => (a.date, b.date),
        _ => return Err(Error::Argument("no usage records, so no windows".into())),
    };
    let mut window_starts = Vec::new();
    let mut start = first;
    while start + Days::new(width_days as u64 - 1) <= last {
        window_starts.push(start);
        start = start + Days::new(stride_days as u64);
    }
    if window_starts.is_empty() {
        return Err(Error::Argument(format!(
            "usage records span {} days, shorter than one {width_days}-day window",
            (last - first).num_days() + 1
        )));
    }

    let k = model.k();
    let mut counts = Vec::with_capacity(window_starts.len());
    for &start in &window_starts {
        let mut row = vec![0u64; k];
        for v in average(window_slice(&refs, start, width_days), start) {
            row[model.nearest(&v.values(&model.feature_names)?)] += 1;
        }
        counts.push(row);
    }
    let diffs: Vec<Vec<i64>> = counts
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| *b as i64 - *a as i64).collect())
        .collect();
    let zscores = zscore_columns(&diffs, k);
    Ok(PersonaCountSeries {
        persona_names: model.persona_names.clone(),
        window_starts,
        width_days,
        stride_days,
        counts,
        diffs,
        zscores,
    })
}

/// Penalized segmentation of every persona's z-score column. Breakpoint `b`
/// refers to diff row `b`, i.e. the change into window `b + 1`.
pub fn persona_changepoint(
    series: &PersonaCountSeries,
    penalty: &PenaltyConfig,
) -> Result<Vec<(String, Segmentation)>> {
    let windows = series.window_starts.len();
    if windows < 4 {
        return Err(Error::Argument(format!(
            "persona change detection needs at least 4 windows, got {windows}"
        )));
    }
    series
        .persona_names
        .iter()
        .enumerate()
        .map(|(p, name)| Ok((name.clone(), detect_penalized(&series.zscore_column(p), penalty)?)))
        .collect()
}

fn write_wide<W: Write, T: ToString>(header: &[String], starts: &[NaiveDate], rows: &[Vec<T>], sink: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Validation(format!("writing persona table: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    let mut head = vec!["window_start".to_string()];
    head.extend(header.iter().cloned());
    w.write_record(&head).map_err(to_err)?;
    for (start, row) in starts.iter().zip(rows) {
        let mut out = vec![start.format("%Y-%m-%d").to_string()];
        out.extend(row.iter().map(ToString::to_string));
        w.write_record(&out).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing persona table: {e}")))?;
    Ok(())
}

/// `window_start` plus one count column per persona.
pub fn write_counts_csv<W: Write>(series: &PersonaCountSeries, sink: W) -> Result<()> {
    write_wide(&series.persona_names, &series.window_starts, &series.counts, sink)
}

/// One z-score column per persona, keyed by the later window of each diff.
pub fn write_zscores_csv<W: Write>(series: &PersonaCountSeries, sink: W) -> Result<()> {
    write_wide(&series.persona_names, &series.window_starts[1..], &series.zscores, sink)
}
