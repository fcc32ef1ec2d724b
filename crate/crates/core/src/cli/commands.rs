// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use super::report::{merge_artifacts, DidDocument};
use super::{
    Cli, CpdArgs, DidArgs, EventChoice, Format, IngestArgs, Outputs, PenaltyChoice, PersonaArgs, ReportArgs,
    SimulateArgs, SynthArgs,
};
use crate::changepoint::{
    detect_known_k, detect_penalized, stability_scan, write_segment_plot_csv, DenseSeries, PenaltyConfig, PenaltyKind,
    SegmentationReport,
};
use crate::did::{fit_did, parallel_trends_diagnostic, DidSpec};
use crate::error::{Error, Result};
use crate::paneldata::{
    aggregate_telemetry, base_unit, extract_treatment_events, merge_panels, parse_policy_csv, parse_telemetry_csv,
    parse_unit_labels, EventKind, GroupField, PanelDataset, PolicyTimeline, Statistic, TelemetryFilter, TreatmentEvent,
    SYSTEM_COUNT,
};
use crate::persona::{
    fit_kmeans, parse_usage_csv, persona_changepoint, window_vectors, windowed_counts, write_counts_csv,
    write_zscores_csv, PersonaModel,
};
use crate::simgen::{describe, generate, label_personas, ScenarioConfig};
use crate::synth::{fit_synth, randomization_inference, write_plot_csv, SynthReport, SynthSpec};

/// Window preceding a deactivation used to refit synthetic-control weights.
const DEACTIVATION_PRE_WINDOW_DAYS: usize = 60;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_panel(path: &Path) -> Result<PanelDataset> {
    PanelDataset::from_text(&read_text(path)?).map_err(|e| match e {
        Error::Parse { row, message, .. } => Error::Parse {
            source_name: path.display().to_string(),
            row,
            message,
        },
        other => other,
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn flatten(prefix: &str, value: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    use serde_json::Value;
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, rows);
            }
        }
        Value::Array(items) if items.iter().all(|v| !v.is_array() && !v.is_object()) => {
            let parts: Vec<String> = items.iter().map(scalar_text).collect();
            rows.push((prefix.to_string(), parts.join(";")));
        }
        // date-value series go to the plot file instead
        Value::Array(_) => {}
        other => rows.push((prefix.to_string(), scalar_text(other))),
    }
}

fn scalar_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => "NA".to_string(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `key,value` rows for every scalar field of a result document.
fn flat_csv<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    flatten("", &serde_json::to_value(value)?, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Validation(format!("writing result table: {e}"));
    w.write_record(["key", "value"]).map_err(to_err)?;
    for (k, v) in rows {
        w.write_record([k, v]).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Validation(format!("writing result table: {e}")))
}

fn document<T: Serialize>(cli: &Cli, out: &mut Outputs, name: &str, value: &T) -> Result<()> {
    match cli.format {
        Format::Json => out.file(format!("{name}.json"), json_bytes(value)?),
        Format::Csv => out.file(format!("{name}.csv"), flat_csv(value)?),
    }
    Ok(())
}

fn csv_bytes<F>(write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn timeline_of(panel: &PanelDataset, unit: usize) -> Option<PolicyTimeline> {
    let codes = panel.policy_row(unit)?.to_vec();
    PolicyTimeline::new(panel.unit_ids()[unit].clone(), panel.dates().to_vec(), codes).ok()
}

/// Earliest `kind` event among `units`, read from the panel's policy codes.
fn event_date<'a, I>(panel: &PanelDataset, units: I, kind: EventKind) -> Result<NaiveDate>
where
    I: IntoIterator<Item = &'a String>,
{
    if !panel.has_policy_codes() {
        return Err(Error::Validation(
            "panel carries no policy codes; pass --treatment-date or ingest with --policy".into(),
        ));
    }
    let mut names = Vec::new();
    let mut best: Option<NaiveDate> = None;
    for unit in units {
        names.push(unit.as_str());
        let u = panel
            .unit_index(unit)
            .ok_or_else(|| Error::Validation(format!("unit {unit} is not in the panel")))?;
        let events = timeline_of(panel, u)
            .map(|t| extract_treatment_events(&t))
            .unwrap_or_default();
        if let Some(e) = events.iter().find(|e| e.kind == kind) {
            best = Some(best.map_or(e.date, |b| b.min(e.date)));
        }
    }
    best.ok_or_else(|| {
        Error::Validation(format!(
            "no {kind:?} event in the policy codes of {}; pass --treatment-date",
            names.join(", ")
        ))
    })
}

fn segment_system_count(panel: &PanelDataset, units: &BTreeSet<String>) -> Option<f64> {
    let counts = panel.covariate(SYSTEM_COUNT)?;
    let vals: Vec<f64> = units
        .iter()
        .filter_map(|u| panel.unit_index(u).map(|i| counts[i]))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn others(panel: &PanelDataset, exclude: &BTreeSet<String>) -> Vec<String> {
    panel
        .unit_ids()
        .iter()
        .filter(|u| !exclude.contains(*u))
        .cloned()
        .collect()
}

pub(super) fn ingest(cli: &Cli, a: &IngestArgs) -> Result<Outputs> {
    let text = read_text(&a.telemetry)?;
    let records = parse_telemetry_csv(text.as_bytes()).map_err(|e| rename_source(e, &a.telemetry))?;
    let filter = TelemetryFilter {
        chassis: a.chassis.as_deref().map(str::parse).transpose()?,
        cpu_family: a.cpu_family.as_deref().map(str::parse).transpose()?,
        vpro: a.vpro,
    };
    let group_by = a
        .group_by
        .iter()
        .map(|g| g.parse::<GroupField>())
        .collect::<Result<Vec<_>>>()?;
    let selected = filter.apply(&records);
    log::info!("{} of {} telemetry rows pass the filter", selected.len(), records.len());
    let mut panel = aggregate_telemetry(selected, &group_by, &a.outcome, Statistic::Mean)?;
    if let Some(c) = filter.chassis {
        panel = panel.with_metadata("chassis", c.to_string())?;
    }
    if let Some(c) = filter.cpu_family {
        panel = panel.with_metadata("cpu_family", c.to_string())?;
    }
    if let Some(v) = filter.vpro {
        panel = panel.with_metadata("vpro", v.to_string())?;
    }

    let mut out = Outputs::default();
    let mut events: Vec<TreatmentEvent> = Vec::new();
    if let Some(path) = &a.policy {
        let text = read_text(path)?;
        let timelines = parse_policy_csv(text.as_bytes(), &a.indicator).map_err(|e| rename_source(e, path))?;
        panel = merge_panels(&panel, &timelines)?;
        events = timelines.iter().flat_map(extract_treatment_events).collect();
    }
    let masked: usize = (0..panel.n_units())
        .map(|u| panel.missing_row(u).iter().filter(|m| **m).count())
        .sum();
    out.summary = format!(
        "{}.txt: {} units x {} dates, {masked} masked cells, {} policy events\n",
        a.name,
        panel.n_units(),
        panel.n_dates(),
        events.len()
    );
    out.file(format!("{}.txt", a.name), panel.to_text().into_bytes());
    if a.policy.is_some() {
        match cli.format {
            Format::Json => out.file(format!("{}_events.json", a.name), json_bytes(&events)?),
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let to_err = |e: csv::Error| Error::Validation(format!("writing events: {e}"));
                w.write_record(["unit_id", "kind", "date"]).map_err(to_err)?;
                for e in &events {
                    let kind = format!("{:?}", e.kind).to_lowercase();
                    w.write_record([e.unit_id.clone(), kind, e.date.to_string()])
                        .map_err(to_err)?;
                }
                let bytes = w
                    .into_inner()
                    .map_err(|e| Error::Validation(format!("writing events: {e}")))?;
                out.file(format!("{}_events.csv", a.name), bytes);
            }
        }
    }
    Ok(out)
}

/// Names the input file in parse errors raised against an in-memory copy.
fn rename_source(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { row, message, .. } => Error::Parse {
            source_name: path.display().to_string(),
            row,
            message,
        },
        other => other,
    }
}

pub(super) fn did(cli: &Cli, a: &DidArgs) -> Result<Outputs> {
    let panel = read_panel(&a.panel)?;
    let treated: BTreeSet<String> = a.treated.iter().cloned().collect();
    let control: Vec<String> = if a.control.is_empty() {
        others(&panel, &treated)
    } else {
        a.control.clone()
    };
    let date = match a.treatment_date {
        Some(d) => d,
        None => event_date(&panel, &treated, EventKind::Activation)?,
    };
    let mut spec = DidSpec::new(treated.iter().cloned(), control, date)
        .with_time_trend(a.time_trend)
        .with_covariates(a.covariates.iter().cloned());
    if !a.categorical.is_empty() {
        let path = a
            .labels
            .as_ref()
            .ok_or_else(|| Error::Argument("--categorical needs a --labels table".into()))?;
        let labels = parse_unit_labels(read_text(path)?.as_bytes()).map_err(|e| rename_source(e, path))?;
        for column in &a.categorical {
            let mut levels = BTreeMap::new();
            for unit in spec.treated_units.iter().chain(&spec.control_units) {
                let level = labels
                    .get(base_unit(unit))
                    .and_then(|row| row.get(column))
                    .ok_or_else(|| {
                        Error::Validation(format!("{} has no {column} label for unit {unit}", path.display()))
                    })?;
                levels.insert(unit.clone(), level.clone());
            }
            spec = spec.with_categorical(column.clone(), levels);
        }
    }
    let fit = fit_did(&panel, &spec)?;
    let parallel_trends = if a.diagnostic {
        match parallel_trends_diagnostic(&panel, &spec) {
            Ok(d) => Some(d),
            Err(Error::DiagnosticUnavailable(m)) => {
                log::warn!("parallel-trends diagnostic skipped: {m}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let doc = DidDocument {
        kind: DidDocument::KIND.to_string(),
        outcome: panel.outcome_name().to_string(),
        segment: panel
            .metadata()
            .iter()
            .filter(|(k, _)| *k != "group_by")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        treated_units: spec.treated_units.iter().cloned().collect(),
        control_units: spec.control_units.iter().cloned().collect(),
        treatment_date: date,
        system_count: segment_system_count(&panel, &spec.treated_units),
        fit,
        parallel_trends,
    };
    let mut out = Outputs::default();
    out.summary = format!(
        "beta0 = {:.6} (se {:.6}, 95% CI [{:.6}, {:.6}], p = {:.3e}, n = {})\n",
        doc.fit.beta0,
        doc.fit.stderr_beta0,
        doc.fit.confidence_interval.0,
        doc.fit.confidence_interval.1,
        doc.fit.p_value,
        doc.fit.n_obs
    );
    document(cli, &mut out, &a.name, &doc)?;
    Ok(out)
}

pub(super) fn synth(cli: &Cli, a: &SynthArgs) -> Result<Outputs> {
    let panel = read_panel(&a.panel)?;
    let treated: BTreeSet<String> = [a.treated.clone()].into();
    let donors = if a.donors.is_empty() {
        others(&panel, &treated)
    } else {
        a.donors.clone()
    };
    let kind = match a.event {
        EventChoice::Activation => EventKind::Activation,
        EventChoice::Deactivation => EventKind::Deactivation,
    };
    let date = match a.treatment_date {
        Some(d) => d,
        None => event_date(&panel, &treated, kind)?,
    };
    let mut spec = SynthSpec::new(a.treated.clone(), donors, date);
    spec.covariates = a.covariates.clone();
    spec.max_iterations = a.max_iterations;
    spec.tolerance = a.tolerance;
    spec.pre_window_days = a
        .pre_window_days
        .or((a.event == EventChoice::Deactivation).then_some(DEACTIVATION_PRE_WINDOW_DAYS));
    spec.post_window_days = a.post_window_days;

    let mut fit = fit_synth(&panel, &spec)?;
    if a.placebo {
        let inference = randomization_inference(&panel, &spec, &fit)?;
        fit = fit.with_inference(inference);
    }
    let report = SynthReport::new(&fit, &panel);
    let mut out = Outputs::default();
    let mut summary = format!(
        "mean post gap = {:.6}, pre RMSPE = {:.6}, ratio = {}",
        fit.mean_post_gap,
        fit.pre_rmse,
        report.post_pre_ratio.map_or("inf".to_string(), |r| format!("{r:.4}"))
    );
    if let Some(p) = fit.p_value() {
        let _ = write!(summary, ", placebo p = {p:.4}");
    }
    summary.push('\n');
    for (donor, w) in &report.weights {
        if *w > 0.0 {
            let _ = writeln!(summary, "  {donor}: {w:.6}");
        }
    }
    out.summary = summary;
    document(cli, &mut out, &a.name, &report)?;
    out.file(format!("{}_plot.csv", a.name), csv_bytes(|b| write_plot_csv(&fit, b))?);
    Ok(out)
}

fn read_series_file(path: &Path) -> Result<DenseSeries> {
    let name = path.display().to_string();
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(crate::paneldata::calendar::sniff_delimiter(&text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut series = DenseSeries {
        name: path
            .file_stem()
            .map_or("series".to_string(), |s| s.to_string_lossy().into_owned()),
        values: Vec::new(),
        dates: Vec::new(),
        original_index: Vec::new(),
        calendar: Vec::new(),
    };
    let mut fmt = None;
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::parse(&name, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw_date = record.get(0).unwrap_or("");
        let f = match fmt {
            Some(f) => f,
            None => *fmt.insert(
                crate::paneldata::calendar::DateFormat::detect(raw_date)
                    .ok_or_else(|| Error::parse(&name, line, format!("malformed date {raw_date:?}")))?,
            ),
        };
        let date = f
            .parse(raw_date)
            .ok_or_else(|| Error::parse(&name, line, format!("malformed date {raw_date:?}")))?;
        if series.calendar.last().is_some_and(|d| *d >= date) {
            return Err(Error::Validation(format!(
                "{name} row {line}: dates must strictly increase"
            )));
        }
        let raw = record.get(1).unwrap_or("");
        if raw != "NA" && !raw.is_empty() {
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(&name, line, format!("malformed value {raw:?}")))?;
            series.values.push(v);
            series.dates.push(date);
            series.original_index.push(series.calendar.len());
        }
        series.calendar.push(date);
    }
    Ok(series)
}

#[derive(Serialize)]
struct StabilityEntry {
    lambda: f64,
    k: usize,
    breakpoint_dates: Vec<NaiveDate>,
    total_cost: f64,
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

pub(super) fn cpd(cli: &Cli, a: &CpdArgs) -> Result<Outputs> {
    let series = match (&a.panel, &a.series) {
        (Some(p), None) => {
            let unit = a
                .unit
                .as_ref()
                .ok_or_else(|| Error::Argument("--panel needs --unit to pick a series".into()))?;
            DenseSeries::from_panel(&read_panel(p)?, unit)?
        }
        (None, Some(s)) => read_series_file(s)?,
        _ => return Err(Error::Argument("give exactly one of --panel or --series".into())),
    };
    let (seg, kind) = match a.segments {
        Some(k) => (detect_known_k(&series.values, k)?, None),
        None => {
            let kind = match a.penalty {
                PenaltyChoice::Aic => PenaltyKind::Aic,
                PenaltyChoice::Bic => PenaltyKind::Bic,
                PenaltyChoice::Manual => PenaltyKind::Manual,
            };
            let config = PenaltyConfig {
                kind,
                lambda: a.lambda,
                noise_scale: a.noise_scale,
                max_segments: a.max_segments,
            };
            (detect_penalized(&series.values, &config)?, Some(kind))
        }
    };
    let report = SegmentationReport::new(&seg, &series, kind);
    let mut out = Outputs::default();
    let mut summary = format!(
        "{}, {}",
        plural(seg.k, "segment"),
        plural(seg.breakpoints.len(), "breakpoint")
    );
    if !report.breakpoint_dates.is_empty() {
        let dates: Vec<String> = report.breakpoint_dates.iter().map(|d| d.to_string()).collect();
        let _ = write!(summary, " at {}", dates.join(", "));
    }
    summary.push('\n');
    out.summary = summary;
    document(cli, &mut out, &a.name, &report)?;
    out.file(
        format!("{}_plot.csv", a.name),
        csv_bytes(|b| write_segment_plot_csv(&seg, &series, b))?,
    );
    if !a.stability.is_empty() {
        let scan = stability_scan(&series.values, &a.stability)?;
        let entries: Vec<StabilityEntry> = scan
            .iter()
            .map(|(l, s)| StabilityEntry {
                lambda: *l,
                k: s.k,
                breakpoint_dates: s.breakpoints.iter().map(|&b| series.dates[b]).collect(),
                total_cost: s.total_cost,
            })
            .collect();
        out.file(format!("{}_stability.json", a.name), json_bytes(&entries)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PersonaBreaks {
    persona: String,
    k: usize,
    breakpoint_rows: Vec<usize>,
    breakpoint_windows: Vec<NaiveDate>,
}

pub(super) fn persona(cli: &Cli, a: &PersonaArgs) -> Result<Outputs> {
    let text = read_text(&a.usage)?;
    let records = parse_usage_csv(text.as_bytes()).map_err(|e| rename_source(e, &a.usage))?;
    let model = match &a.model {
        Some(path) => {
            let m: PersonaModel = serde_json::from_str(&read_text(path)?)
                .map_err(|e| Error::parse(&path.display().to_string(), e.line(), e.to_string()))?;
            PersonaModel::new(m.centroids, m.persona_names, m.feature_names)?
        }
        None => {
            let start = match a.fit_window {
                Some(d) => d,
                None => records
                    .iter()
                    .map(|r| r.date)
                    .min()
                    .ok_or_else(|| Error::Validation(format!("{} has no usage rows", a.usage.display())))?,
            };
            let vectors = window_vectors(&records, start, a.width)?;
            let model = fit_kmeans(&vectors, a.k, cli.seed.unwrap_or(0))?;
            if a.generator_labels {
                label_personas(model)?
            } else {
                model
            }
        }
    };
    let series = windowed_counts(&records, &model, a.width, a.stride)?;
    let breaks: Vec<PersonaBreaks> = if series.window_starts.len() >= 4 {
        persona_changepoint(&series, &PenaltyConfig::bic())?
            .into_iter()
            .map(|(persona, seg)| PersonaBreaks {
                persona,
                k: seg.k,
                breakpoint_windows: seg.breakpoints.iter().map(|&b| series.diff_window_start(b)).collect(),
                breakpoint_rows: seg.breakpoints,
            })
            .collect()
    } else {
        log::warn!(
            "only {} windows; persona change points need 4",
            series.window_starts.len()
        );
        Vec::new()
    };

    let mut out = Outputs::default();
    let mut summary = format!("{} windows, {} personas\n", series.window_starts.len(), model.k());
    for b in &breaks {
        if !b.breakpoint_windows.is_empty() {
            let dates: Vec<String> = b.breakpoint_windows.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(summary, "  {}: change into window(s) {}", b.persona, dates.join(", "));
        }
    }
    out.summary = summary;
    out.file(format!("{}_model.json", a.name), json_bytes(&model)?);
    out.file(
        format!("{}_counts.csv", a.name),
        csv_bytes(|b| write_counts_csv(&series, b))?,
    );
    out.file(
        format!("{}_zscores.csv", a.name),
        csv_bytes(|b| write_zscores_csv(&series, b))?,
    );
    document(cli, &mut out, &format!("{}_changepoints", a.name), &breaks)?;
    Ok(out)
}

pub(super) fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<Outputs> {
    let text = read_text(&a.scenario)?;
    let is_json = a.scenario.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut config = if is_json {
        ScenarioConfig::from_json(&text)
    } else {
        ScenarioConfig::from_toml(&text)
    }
    .map_err(|e| rename_source(e, &a.scenario))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let scenario = generate(&config)?;
    let mut out = Outputs::default();
    out.files = scenario.files()?;
    let text = describe(&scenario.manifest);
    out.file("manifest.txt", text.clone().into_bytes());
    out.summary = text;
    Ok(out)
}

pub(super) fn report(cli: &Cli, a: &ReportArgs) -> Result<Outputs> {
    let mut docs = Vec::with_capacity(a.artifacts.len());
    for path in &a.artifacts {
        let name = path.display().to_string();
        let value: serde_json::Value =
            serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(&name, e.line(), e.to_string()))?;
        docs.push((name, value));
    }
    let table = merge_artifacts(&docs)?;
    let mut out = Outputs::default();
    out.summary = table.render();
    match cli.format {
        Format::Json => out.file(format!("{}.json", a.name), json_bytes(&table)?),
        Format::Csv => out.file(format!("{}.csv", a.name), table.to_csv()?),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flattening_keeps_scalars_and_lists() {
        let v = json!({"a": 1.5, "b": {"c": "x", "d": null}, "e": [1, 2], "f": [["2020-01-01", 1.0]]});
        let mut rows = Vec::new();
        flatten("", &v, &mut rows);
        assert_eq!(
            rows,
            vec![
                ("a".to_string(), "1.5".to_string()),
                ("b.c".to_string(), "x".to_string()),
                ("b.d".to_string(), "NA".to_string()),
                ("e".to_string(), "1;2".to_string()),
            ]
        );
    }

    #[test]
    fn plural_forms() {
        assert_eq!(plural(1, "segment"), "1 segment");
        assert_eq!(plural(0, "breakpoint"), "0 breakpoints");
    }
}
