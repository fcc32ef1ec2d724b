// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded scenario generator with a ground-truth manifest.
//!
//! Randomness comes from ChaCha8 seeded with `seed`: unit `i` (in config
//! order) draws from stream `i + 1`, the persona stream from stream 0, so
//! every stream is fixed by the seed alone.

mod generate;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use generate::{generate, label_personas, persona_profiles, GeneratedScenario, POLICY_INDICATOR};

use crate::error::{Error, Result};
use crate::persona::DEFAULT_PERSONA_NAMES;

fn default_vpro_fraction() -> f64 {
    0.5
}

fn default_devices() -> usize {
    9
}

fn default_persona_noise() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConfig {
    pub id: String,
    pub baseline_hours: f64,
    pub baseline_watts: f64,
    #[serde(default)]
    pub trend_per_day: f64,
    #[serde(default)]
    pub continent: String,
    #[serde(default = "default_vpro_fraction")]
    pub vpro_fraction: f64,
    #[serde(default = "default_devices")]
    pub devices_per_day: usize,
    /// Amplitude of a weekday/weekend swing in hours (Saturday and Sunday low).
    #[serde(default)]
    pub weekly_amplitude: f64,
}

impl UnitConfig {
    pub fn new(id: impl Into<String>, baseline_hours: f64, baseline_watts: f64) -> Self {
        Self {
            id: id.into(),
            baseline_hours,
            baseline_watts,
            trend_per_day: 0.0,
            continent: String::new(),
            vpro_fraction: default_vpro_fraction(),
            devices_per_day: default_devices(),
            weekly_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentConfig {
    pub unit: String,
    pub activation: NaiveDate,
    #[serde(default)]
    pub deactivation: Option<NaiveDate>,
    pub effect_hours: f64,
    #[serde(default)]
    pub effect_watts: f64,
    /// Days over which the effect ramps linearly to full size; 0 is a step.
    #[serde(default)]
    pub effect_onset_days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierConfig {
    pub probability: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaShiftConfig {
    pub date: NaiveDate,
    pub from: String,
    pub to: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub start_date: NaiveDate,
    pub days: usize,
    pub units: Vec<UnitConfig>,
    #[serde(default)]
    pub treatment: Option<TreatmentConfig>,
    /// Unit id → donor id → weight; such a unit's daily mean is the weighted
    /// donor means (its own baseline and trend are ignored).
    #[serde(default)]
    pub donor_mixture: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub outliers: Option<OutlierConfig>,
    /// Devices in the persona usage stream; 0 disables it.
    #[serde(default)]
    pub persona_devices: usize,
    #[serde(default = "default_persona_noise")]
    pub persona_noise: f64,
    #[serde(default)]
    pub persona_shift: Option<PersonaShiftConfig>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(start_date: NaiveDate, days: usize, units: Vec<UnitConfig>, seed: u64) -> Self {
        Self {
            start_date,
            days,
            units,
            treatment: None,
            donor_mixture: BTreeMap::new(),
            noise_sigma: 0.0,
            outliers: None,
            persona_devices: 0,
            persona_noise: default_persona_noise(),
            persona_shift: None,
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("scenario config", 0, e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("scenario config", e.line(), e.to_string()))
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + chrono::Days::new(self.days.saturating_sub(1) as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.days == 0 {
            return bad("scenario needs at least one day".into());
        }
        if self.units.is_empty() {
            return bad("scenario needs at least one unit".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for u in &self.units {
            if u.id.is_empty() || !ids.insert(u.id.as_str()) {
                return bad(format!("unit id {:?} is empty or repeated", u.id));
            }
            if u.devices_per_day == 0 {
                return bad(format!("unit {} needs at least one device", u.id));
            }
            if !(0.0..=1.0).contains(&u.vpro_fraction) {
                return bad(format!("unit {} vpro_fraction must lie in [0, 1]", u.id));
            }
            let finite = [u.baseline_hours, u.baseline_watts, u.trend_per_day, u.weekly_amplitude];
            if finite.iter().any(|v| !v.is_finite()) {
                return bad(format!("unit {} has a non-finite parameter", u.id));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.persona_noise.is_finite() && self.persona_noise >= 0.0) {
            return bad(format!(
                "persona_noise must be non-negative, got {}",
                self.persona_noise
            ));
        }
        if let Some(t) = &self.treatment {
            if !ids.contains(t.unit.as_str()) {
                return bad(format!("treated unit {} is not a scenario unit", t.unit));
            }
            if !(t.effect_hours.is_finite() && t.effect_watts.is_finite()) {
                return bad("treatment effects must be finite".into());
            }
            if let Some(d) = t.deactivation {
                if d <= t.activation {
                    return bad(format!("deactivation {d} is not after activation {}", t.activation));
                }
            }
        }
        for (unit, weights) in &self.donor_mixture {
            if !ids.contains(unit.as_str()) {
                return bad(format!("mixture unit {unit} is not a scenario unit"));
            }
            if weights.is_empty() {
                return bad(format!("mixture for {unit} has no donors"));
            }
            for (donor, w) in weights {
                if !ids.contains(donor.as_str()) || donor == unit || self.donor_mixture.contains_key(donor) {
                    return bad(format!(
                        "mixture for {unit} uses {donor}, which is not a plain scenario unit"
                    ));
                }
                if !(w.is_finite() && *w >= 0.0) {
                    return bad(format!("mixture weight for {donor} must be non-negative"));
                }
            }
            let total: f64 = weights.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("mixture weights for {unit} sum to {total}, not 1"));
            }
        }
        if let Some(o) = &self.outliers {
            if !(0.0..=1.0).contains(&o.probability) || !o.magnitude.is_finite() {
                return bad("outlier probability must lie in [0, 1] with a finite magnitude".into());
            }
        }
        if let Some(s) = &self.persona_shift {
            for name in [&s.from, &s.to] {
                if !DEFAULT_PERSONA_NAMES.contains(&name.as_str()) {
                    return bad(format!("unknown persona {name:?} in persona_shift"));
                }
            }
            if !(0.0..=1.0).contains(&s.fraction) {
                return bad(format!("persona_shift fraction {} outside [0, 1]", s.fraction));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub true_effect_hours: f64,
    pub true_effect_watts: f64,
    pub true_breakpoints: Vec<NaiveDate>,
    pub true_weights: Option<BTreeMap<String, f64>>,
    pub scenario_hash: String,
}

impl GroundTruthManifest {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let treatment = config.treatment.as_ref();
        let mut breakpoints: Vec<NaiveDate> = treatment
            .into_iter()
            .flat_map(|t| std::iter::once(t.activation).chain(t.deactivation))
            .chain(config.persona_shift.as_ref().map(|s| s.date))
            .collect();
        breakpoints.sort();
        breakpoints.dedup();
        Self {
            true_effect_hours: treatment.map_or(0.0, |t| t.effect_hours),
            true_effect_watts: treatment.map_or(0.0, |t| t.effect_watts),
            true_breakpoints: breakpoints,
            true_weights: treatment.and_then(|t| config.donor_mixture.get(&t.unit).cloned()),
            scenario_hash: config.hash(),
        }
    }
}

/// One `key=value` line per manifest field; absent optionals read `absent`.
pub fn describe(manifest: &GroundTruthManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "effect_hours={:?}", manifest.true_effect_hours);
    let _ = writeln!(out, "effect_watts={:?}", manifest.true_effect_watts);
    if manifest.true_breakpoints.is_empty() {
        let _ = writeln!(out, "breakpoints=absent");
    } else {
        let dates: Vec<String> = manifest.true_breakpoints.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "breakpoints={}", dates.join(","));
    }
    match &manifest.true_weights {
        Some(w) => {
            let parts: Vec<String> = w.iter().map(|(k, v)| format!("{k}:{v:?}")).collect();
            let _ = writeln!(out, "weights={}", parts.join(","));
        }
        None => {
            let _ = writeln!(out, "weights=absent");
        }
    }
    let _ = writeln!(out, "scenario_hash={}", manifest.scenario_hash);
    out
}
