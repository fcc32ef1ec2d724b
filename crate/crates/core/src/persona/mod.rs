// SPDX-License-Identifier: MIT OR Apache-2.0

//! Usage personas: k-means on per-category usage, frozen-centroid assignment
//! over sliding windows, and change detection on persona counts.

mod kmeans;
mod windows;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use kmeans::{assign_personas, fit_kmeans, fit_kmeans_traced, KMeansFit, MAX_LLOYD_ITERATIONS};
pub use windows::{
    persona_changepoint, window_vectors, windowed_counts, write_counts_csv, write_zscores_csv, PersonaCountSeries,
    DEFAULT_STRIDE_DAYS, DEFAULT_WIDTH_DAYS,
};

use crate::error::{Error, Result};
use crate::paneldata::calendar::{sniff_delimiter, DateFormat};

/// App categories of the generator's usage streams.
pub const DEFAULT_FEATURES: [&str; 6] = [
    "gaming",
    "web",
    "communication",
    "content_creation",
    "productivity",
    "file_sharing",
];

/// Persona labels, one per entry of [`DEFAULT_FEATURES`].
pub const DEFAULT_PERSONA_NAMES: [&str; 6] = [
    "Casual Gamers",
    "Web Users",
    "Communication Users",
    "Content Creators",
    "Office/Productivity",
    "File & Network Sharer",
];

pub const DEFAULT_PERSONA_COUNT: usize = 6;

/// One device's daily hours per app category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub date: NaiveDate,
    pub device_id: String,
    pub features: BTreeMap<String, f64>,
}

/// Mean daily hours per category for one device over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageFeatureVector {
    pub device_id: String,
    pub window_start: NaiveDate,
    pub features: BTreeMap<String, f64>,
}

impl UsageFeatureVector {
    /// Feature values in `names` order; a missing name is a schema error.
    pub fn values(&self, names: &[String]) -> Result<Vec<f64>> {
        if self.features.len() != names.len() {
            return Err(self.schema_mismatch(names));
        }
        names
            .iter()
            .map(|n| self.features.get(n).copied().ok_or_else(|| self.schema_mismatch(names)))
            .collect()
    }

    fn schema_mismatch(&self, names: &[String]) -> Error {
        Error::Schema(format!(
            "device {} has features {:?}, expected {:?}",
            self.device_id,
            self.features.keys().collect::<Vec<_>>(),
            names
        ))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in &self.features {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Validation(format!(
                    "device {} feature {name} must be finite and non-negative, got {v}",
                    self.device_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaModel {
    /// `k` rows of `feature_names.len()` coordinates.
    pub centroids: Vec<Vec<f64>>,
    pub persona_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub frozen: bool,
}

impl PersonaModel {
    pub fn new(centroids: Vec<Vec<f64>>, persona_names: Vec<String>, feature_names: Vec<String>) -> Result<Self> {
        let k = centroids.len();
        if k < 2 {
            return Err(Error::Argument(format!(
                "a persona model needs k >= 2 centroids, got {k}"
            )));
        }
        if persona_names.len() != k {
            return Err(Error::Argument(format!(
                "{} persona names for {k} centroids",
                persona_names.len()
            )));
        }
        if let Some(row) = centroids.iter().find(|c| c.len() != feature_names.len()) {
            return Err(Error::Schema(format!(
                "centroid of length {} for {} features",
                row.len(),
                feature_names.len()
            )));
        }
        for a in 0..k {
            for b in a + 1..k {
                if centroids[a] == centroids[b] {
                    return Err(Error::Validation(format!("centroids {a} and {b} coincide")));
                }
            }
        }
        Ok(Self {
            centroids,
            persona_names,
            feature_names,
            frozen: true,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Argument(format!(
                "{} persona names for {} centroids",
                names.len(),
                self.k()
            )));
        }
        self.persona_names = names;
        Ok(self)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = squared_distance(point, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Reads `date,device_id,<category>...` rows.
pub fn parse_usage_csv<R: Read>(mut source: R) -> Result<Vec<UsageRecord>> {
    const NAME: &str = "usage table";
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::parse(NAME, 0, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(&text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(NAME, 1, e.to_string()))?
        .clone();
    if headers.len() < 3 || headers.get(0) != Some("date") || headers.get(1) != Some("device_id") {
        return Err(Error::Schema(
            "usage header must be date,device_id followed by category columns".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut date_format = None;
    let mut out = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::parse(NAME, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw_date = record.get(0).unwrap_or("");
        let fmt = match date_format {
            Some(f) => f,
            None => *date_format.insert(
                DateFormat::detect(raw_date)
                    .ok_or_else(|| Error::parse(NAME, line, format!("malformed date {raw_date:?}")))?,
            ),
        };
        let date = fmt
            .parse(raw_date)
            .ok_or_else(|| Error::parse(NAME, line, format!("malformed date {raw_date:?}")))?;
        let mut features = BTreeMap::new();
        for (name, raw) in names.iter().zip(record.iter().skip(2)) {
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(NAME, line, format!("malformed {name} {raw:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "row {line}: {name} must be finite and non-negative, got {v}"
                )));
            }
            features.insert(name.clone(), v);
        }
        out.push(UsageRecord {
            date,
            device_id: record.get(1).unwrap_or("").to_string(),
            features,
        });
    }
    Ok(out)
}

/// Writes records with the category columns in `feature_names` order.
pub fn write_usage_csv<W: Write>(records: &[UsageRecord], feature_names: &[String], sink: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Validation(format!("writing usage table: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["date".to_string(), "device_id".to_string()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header).map_err(to_err)?;
    for r in records {
        let mut row = vec![r.date.format("%Y-%m-%d").to_string(), r.device_id.clone()];
        for name in feature_names {
            let v = r
                .features
                .get(name)
                .ok_or_else(|| Error::Schema(format!("record for {} lacks feature {name}", r.device_id)))?;
            row.push(v.to_string());
        }
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("writing usage table: {e}")))?;
    Ok(())
}
