// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use chrono::NaiveDate;

use super::calendar::DateFormat;
use crate::error::{Error, Result};

/// Aligned unit × date outcome matrix with unit-level covariates.
///
/// Masked cells hold `NaN` internally and are reported as `None` by
/// [`PanelDataset::value`]. Unmasked cells are always finite. Policy codes may
/// be attached per (unit, date) by [`merge_panels`](super::merge_panels).
#[derive(Debug, Clone)]
pub struct PanelDataset {
    outcome_name: String,
    unit_ids: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    missing: Vec<bool>,
    covariate_names: Vec<String>,
    covariates: Vec<Vec<f64>>,
    policy_codes: Option<Vec<u8>>,
    metadata: BTreeMap<String, String>,
}

impl PartialEq for PanelDataset {
    /// Masked cells compare equal regardless of their placeholder value.
    fn eq(&self, other: &Self) -> bool {
        self.outcome_name == other.outcome_name
            && self.unit_ids == other.unit_ids
            && self.dates == other.dates
            && self.missing == other.missing
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a == b)
            && self.covariate_names == other.covariate_names
            && self.covariates == other.covariates
            && self.policy_codes == other.policy_codes
            && self.metadata == other.metadata
    }
}

fn check_label(kind: &str, label: &str) -> Result<()> {
    if label.is_empty() || label.contains(['\t', '\n', '\r']) {
        return Err(Error::Validation(format!(
            "{kind} {label:?} must be non-empty and free of tabs/newlines"
        )));
    }
    Ok(())
}

impl PanelDataset {
    /// Builds a panel from per-unit rows; `None` marks a missing cell.
    pub fn from_rows(
        outcome_name: impl Into<String>,
        unit_ids: Vec<String>,
        dates: Vec<NaiveDate>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let outcome_name = outcome_name.into();
        check_label("outcome name", &outcome_name)?;
        if rows.len() != unit_ids.len() {
            return Err(Error::Validation(format!(
                "{} units but {} outcome rows",
                unit_ids.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &unit_ids {
            check_label("unit id", id)?;
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate unit id {id:?}")));
            }
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("panel dates must be strictly increasing".into()));
        }
        let mut values = Vec::with_capacity(unit_ids.len() * dates.len());
        let mut missing = Vec::with_capacity(values.capacity());
        for (unit, row) in unit_ids.iter().zip(rows) {
            if row.len() != dates.len() {
                return Err(Error::Validation(format!(
                    "unit {unit}: {} values for {} dates",
                    row.len(),
                    dates.len()
                )));
            }
            for (t, cell) in row.into_iter().enumerate() {
                match cell {
                    Some(v) if v.is_finite() => {
                        values.push(v);
                        missing.push(false);
                    }
                    Some(v) => {
                        return Err(Error::Validation(format!(
                            "unit {unit} on {}: non-finite value {v} must be masked",
                            dates[t]
                        )))
                    }
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(Self {
            outcome_name,
            unit_ids,
            dates,
            values,
            missing,
            covariate_names: Vec::new(),
            covariates: Vec::new(),
            policy_codes: None,
            metadata: BTreeMap::new(),
        })
    }

    /// Adds (or replaces) a unit-level covariate, one value per unit.
    pub fn with_covariate(mut self, name: impl Into<String>, per_unit: Vec<f64>) -> Result<Self> {
        let name = name.into();
        check_label("covariate name", &name)?;
        if per_unit.len() != self.unit_ids.len() {
            return Err(Error::Validation(format!(
                "covariate {name}: {} values for {} units",
                per_unit.len(),
                self.unit_ids.len()
            )));
        }
        if per_unit.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("covariate {name} has non-finite values")));
        }
        match self.covariate_names.iter().position(|n| *n == name) {
            Some(i) => self.covariates[i] = per_unit,
            None => {
                self.covariate_names.push(name);
                self.covariates.push(per_unit);
            }
        }
        Ok(self)
    }

    /// Attaches policy codes, row-major unit × date.
    pub fn with_policy_codes(mut self, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != self.values.len() {
            return Err(Error::Validation("policy code matrix has the wrong shape".into()));
        }
        self.policy_codes = Some(codes);
        Ok(self)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Result<Self> {
        let (key, value) = (key.into(), value.into());
        check_label("metadata key", &key)?;
        check_label("metadata value", &value)?;
        self.metadata.insert(key, value);
        Ok(self)
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == unit_id)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Index of the first date on or after `date`.
    pub fn first_index_on_or_after(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    pub fn value(&self, unit: usize, t: usize) -> Option<f64> {
        let i = unit * self.dates.len() + t;
        (!self.missing[i]).then_some(self.values[i])
    }

    pub fn is_missing(&self, unit: usize, t: usize) -> bool {
        self.missing[unit * self.dates.len() + t]
    }

    /// Raw outcome row; masked cells are `NaN`.
    pub fn row(&self, unit: usize) -> &[f64] {
        let n = self.dates.len();
        &self.values[unit * n..(unit + 1) * n]
    }

    pub fn missing_row(&self, unit: usize) -> &[bool] {
        let n = self.dates.len();
        &self.missing[unit * n..(unit + 1) * n]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.covariates[i].as_slice())
    }

    pub fn has_policy_codes(&self) -> bool {
        self.policy_codes.is_some()
    }

    pub fn policy_code(&self, unit: usize, t: usize) -> Option<u8> {
        self.policy_codes.as_ref().map(|c| c[unit * self.dates.len() + t])
    }

    pub fn policy_row(&self, unit: usize) -> Option<&[u8]> {
        let n = self.dates.len();
        self.policy_codes.as_ref().map(|c| &c[unit * n..(unit + 1) * n])
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Keeps the listed units, in the given order.
    pub fn select_units(&self, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| {
                self.unit_index(id)
                    .ok_or_else(|| Error::Validation(format!("unit {id:?} not in panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.dates.len();
        let gather = |src: &[f64]| -> Vec<f64> {
            idx.iter()
                .flat_map(|&u| src[u * n..(u + 1) * n].iter().copied())
                .collect()
        };
        Ok(Self {
            outcome_name: self.outcome_name.clone(),
            unit_ids: ids.to_vec(),
            dates: self.dates.clone(),
            values: gather(&self.values),
            missing: idx
                .iter()
                .flat_map(|&u| self.missing[u * n..(u + 1) * n].iter().copied())
                .collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self
                .covariates
                .iter()
                .map(|col| idx.iter().map(|&u| col[u]).collect())
                .collect(),
            policy_codes: self.policy_codes.as_ref().map(|c| {
                idx.iter()
                    .flat_map(|&u| c[u * n..(u + 1) * n].iter().copied())
                    .collect()
            }),
            metadata: self.metadata.clone(),
        })
    }

    /// Keeps the date columns whose indices are listed (ascending).
    pub(crate) fn select_dates(&self, keep: &[usize]) -> Self {
        let n = self.dates.len();
        let units = self.unit_ids.len();
        let mut values = Vec::with_capacity(units * keep.len());
        let mut missing = Vec::with_capacity(units * keep.len());
        let mut codes = self
            .policy_codes
            .as_ref()
            .map(|_| Vec::with_capacity(units * keep.len()));
        for u in 0..units {
            for &t in keep {
                values.push(self.values[u * n + t]);
                missing.push(self.missing[u * n + t]);
                if let (Some(out), Some(src)) = (codes.as_mut(), self.policy_codes.as_ref()) {
                    out.push(src[u * n + t]);
                }
            }
        }
        Self {
            outcome_name: self.outcome_name.clone(),
            unit_ids: self.unit_ids.clone(),
            dates: keep.iter().map(|&t| self.dates[t]).collect(),
            values,
            missing,
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.clone(),
            policy_codes: codes,
            metadata: self.metadata.clone(),
        }
    }

    /// Serializes to the tab-separated interchange format.
    ///
    /// ```text
    /// #causal-panel v1
    /// outcome     <name>
    /// units       <id> <id> ...
    /// dates       <YYYY-MM-DD> ...
    /// covariates  <name> ...
    /// meta        <key> <value>        (zero or more)
    /// [outcomes]
    /// <id>        <value|NA> ...       (one line per unit)
    /// [covariates]                     (only when covariates exist)
    /// <id>        <value> ...
    /// [policy]                         (only when codes are attached)
    /// <id>        <code> ...
    /// ```
    ///
    /// Floats use the shortest representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("#causal-panel v1\n");
        let _ = writeln!(out, "outcome\t{}", self.outcome_name);
        push_row(&mut out, "units", self.unit_ids.iter().map(String::as_str));
        push_row(&mut out, "dates", self.dates.iter().map(|d| DateFormat::Iso.format(*d)));
        push_row(&mut out, "covariates", self.covariate_names.iter().map(String::as_str));
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "meta\t{k}\t{v}");
        }
        out.push_str("[outcomes]\n");
        for (u, id) in self.unit_ids.iter().enumerate() {
            push_row(
                &mut out,
                id,
                (0..self.dates.len()).map(|t| match self.value(u, t) {
                    Some(v) => v.to_string(),
                    None => "NA".to_string(),
                }),
            );
        }
        if !self.covariate_names.is_empty() {
            out.push_str("[covariates]\n");
            for (u, id) in self.unit_ids.iter().enumerate() {
                push_row(&mut out, id, self.covariates.iter().map(|c| c[u].to_string()));
            }
        }
        if let Some(codes) = &self.policy_codes {
            out.push_str("[policy]\n");
            let n = self.dates.len();
            for (u, id) in self.unit_ids.iter().enumerate() {
                push_row(&mut out, id, codes[u * n..(u + 1) * n].iter().map(u8::to_string));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        PanelReader::new(text).read()
    }
}

fn push_row<I, S>(out: &mut String, head: &str, cells: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    out.push_str(head);
    for c in cells {
        out.push('\t');
        out.push_str(c.as_ref());
    }
    out.push('\n');
}

struct PanelReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

const SOURCE: &str = "panel file";

impl<'a> PanelReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, Vec<&'a str>)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.split('\t').collect()))
            .ok_or_else(|| Error::parse(SOURCE, 0, "unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, cells) = self.next_line()?;
        if cells[0] != key {
            return Err(Error::parse(SOURCE, line, format!("expected {key:?} line")));
        }
        Ok((line, cells[1..].to_vec()))
    }

    fn section<T>(
        &mut self,
        name: &str,
        ids: &[String],
        width: usize,
        mut cell: impl FnMut(usize, &str) -> Result<T>,
    ) -> Result<Vec<Vec<T>>> {
        let (line, cells) = self.next_line()?;
        if cells.len() != 1 || cells[0] != name {
            return Err(Error::parse(SOURCE, line, format!("expected section {name}")));
        }
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let (line, cells) = self.next_line()?;
            if cells[0] != id {
                return Err(Error::parse(
                    SOURCE,
                    line,
                    format!("expected row for unit {id:?}, found {:?}", cells[0]),
                ));
            }
            if cells.len() != width + 1 {
                return Err(Error::parse(
                    SOURCE,
                    line,
                    format!("expected {width} cells, found {}", cells.len() - 1),
                ));
            }
            rows.push(cells[1..].iter().map(|c| cell(line, c)).collect::<Result<Vec<_>>>()?);
        }
        Ok(rows)
    }

    fn read(mut self) -> Result<PanelDataset> {
        let (line, magic) = self.next_line()?;
        if magic != ["#causal-panel v1"] {
            return Err(Error::parse(SOURCE, line, "missing '#causal-panel v1' header"));
        }
        let (line, outcome) = self.keyed("outcome")?;
        let [outcome] = outcome.as_slice() else {
            return Err(Error::parse(SOURCE, line, "outcome line takes one name"));
        };
        let (_, units) = self.keyed("units")?;
        let units: Vec<String> = units.iter().map(|s| s.to_string()).collect();
        let (line, dates) = self.keyed("dates")?;
        let dates = dates
            .iter()
            .map(|d| {
                DateFormat::Iso
                    .parse(d)
                    .ok_or_else(|| Error::parse(SOURCE, line, format!("malformed date {d:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, cov_names) = self.keyed("covariates")?;
        let cov_names: Vec<String> = cov_names.iter().map(|s| s.to_string()).collect();
        let mut metadata = Vec::new();
        while let Some((_, l)) = self.lines.peek() {
            if !l.starts_with("meta\t") {
                break;
            }
            let (line, cells) = self.next_line()?;
            let [_, k, v] = cells.as_slice() else {
                return Err(Error::parse(SOURCE, line, "meta line takes a key and a value"));
            };
            metadata.push((k.to_string(), v.to_string()));
        }

        let float = |line: usize, c: &str| -> Result<f64> {
            c.parse::<f64>()
                .map_err(|_| Error::parse(SOURCE, line, format!("malformed number {c:?}")))
        };
        let rows = self.section("[outcomes]", &units, dates.len(), |line, c| {
            if c == "NA" {
                Ok(None)
            } else {
                float(line, c).map(Some)
            }
        })?;
        let mut panel = PanelDataset::from_rows(*outcome, units.clone(), dates.clone(), rows)?;
        if !cov_names.is_empty() {
            let rows = self.section("[covariates]", &units, cov_names.len(), float)?;
            for (j, name) in cov_names.iter().enumerate() {
                panel = panel.with_covariate(name.clone(), rows.iter().map(|r| r[j]).collect())?;
            }
        }
        if self.lines.peek().is_some_and(|(_, l)| *l == "[policy]") {
            let rows = self.section("[policy]", &units, dates.len(), |line, c| {
                c.parse::<u8>()
                    .ok()
                    .filter(|&v| v <= super::policy::MAX_POLICY_CODE)
                    .ok_or_else(|| Error::parse(SOURCE, line, format!("bad policy code {c:?}")))
            })?;
            panel = panel.with_policy_codes(rows.into_iter().flatten().collect())?;
        }
        if let Some((i, _)) = self.lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(SOURCE, i + 1, "trailing content"));
        }
        for (k, v) in metadata {
            panel = panel.with_metadata(k, v)?;
        }
        Ok(panel)
    }
}
