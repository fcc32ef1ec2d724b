// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{GroundTruthManifest, ScenarioConfig, UnitConfig};
use crate::error::{Error, Result};
use crate::paneldata::{
    write_policy_csv, write_telemetry_csv, Chassis, CpuFamily, PolicyTimeline, TelemetryRecord, UnitLabels,
};
use crate::persona::{write_usage_csv, PersonaModel, UsageRecord, DEFAULT_FEATURES, DEFAULT_PERSONA_NAMES};

/// Policy column written by the generator (workplace closing, code 3 =
/// closing required for all but essential workplaces).
pub const POLICY_INDICATOR: &str = "C2_Workplace closing";

const DEVICE_SPREAD_HOURS: f64 = 0.25;
const DEVICE_SPREAD_WATTS: f64 = 0.5;
const PERSONA_DOMINANT_HOURS: f64 = 4.0;
const PERSONA_BACKGROUND_HOURS: f64 = 0.5;

const CHASSIS_CYCLE: [Chassis; 3] = [Chassis::Notebook, Chassis::Desktop, Chassis::TwoInOne];
const CPU_CYCLE: [CpuFamily; 3] = [CpuFamily::I3, CpuFamily::I5, CpuFamily::I7];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub config: ScenarioConfig,
    pub policy: Vec<PolicyTimeline>,
    pub telemetry: Vec<TelemetryRecord>,
    pub usage: Vec<UsageRecord>,
    pub unit_labels: UnitLabels,
    /// Unit id → true daily mean usage hours.
    pub daily_hours: BTreeMap<String, Vec<f64>>,
    pub daily_watts: BTreeMap<String, Vec<f64>>,
    pub manifest: GroundTruthManifest,
}

impl GeneratedScenario {
    /// Every output file as `(name, bytes)`, in a fixed order.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        write_policy_csv(&self.policy, POLICY_INDICATOR, &mut buf)?;
        out.push(("policy.csv".to_string(), buf));

        let mut buf = Vec::new();
        write_telemetry_csv(&self.telemetry, &mut buf)?;
        out.push(("telemetry.csv".to_string(), buf));

        let mut units = String::from("unit_id,continent\n");
        for u in &self.config.units {
            units.push_str(&format!("{},{}\n", u.id, u.continent));
        }
        out.push(("units.csv".to_string(), units.into_bytes()));

        if !self.usage.is_empty() {
            let names: Vec<String> = DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect();
            let mut buf = Vec::new();
            write_usage_csv(&self.usage, &names, &mut buf)?;
            out.push(("personas.csv".to_string(), buf));
        }

        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        out.push(("manifest.json".to_string(), manifest));
        Ok(out)
    }
}

/// Usage profile of every default persona over [`DEFAULT_FEATURES`]: one
/// dominant category and a low background elsewhere.
pub fn persona_profiles() -> Vec<Vec<f64>> {
    (0..DEFAULT_FEATURES.len())
        .map(|p| {
            (0..DEFAULT_FEATURES.len())
                .map(|c| {
                    if c == p {
                        PERSONA_DOMINANT_HOURS
                    } else {
                        PERSONA_BACKGROUND_HOURS
                    }
                })
                .collect()
        })
        .collect()
}

/// Names fitted clusters after the generator profiles, matching closest
/// (centroid, profile) pairs first.
pub fn label_personas(model: PersonaModel) -> Result<PersonaModel> {
    let profiles = persona_profiles();
    let mut cols = Vec::with_capacity(model.feature_names.len());
    for name in &model.feature_names {
        let c = DEFAULT_FEATURES
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::Schema(format!("feature {name} is not a generator category")))?;
        cols.push(c);
    }
    let mut pairs = Vec::new();
    for (i, centroid) in model.centroids.iter().enumerate() {
        for (p, profile) in profiles.iter().enumerate() {
            let d: f64 = centroid.iter().zip(&cols).map(|(x, &c)| (x - profile[c]).powi(2)).sum();
            pairs.push((d, i, p));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut names = model.persona_names.clone();
    let mut used_c = vec![false; model.k()];
    let mut used_p = vec![false; profiles.len()];
    for (_, i, p) in pairs {
        if !used_c[i] && !used_p[p] {
            used_c[i] = true;
            used_p[p] = true;
            names[i] = DEFAULT_PERSONA_NAMES[p].to_string();
        }
    }
    model.with_names(names)
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Weekend days sit `a` below the weekly mean, weekdays `0.4a` above.
fn weekly(date: NaiveDate, amplitude: f64) -> f64 {
    match date.weekday() {
        Weekday::Sat | Weekday::Sun => -amplitude,
        _ => 0.4 * amplitude,
    }
}

struct UnitDraw {
    hours: Vec<f64>,
    watts: Vec<f64>,
    offsets: Vec<(f64, f64)>,
}

fn centered_offsets(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    let raw: Vec<(f64, f64)> = (0..n).map(|_| (normal(rng), normal(rng))).collect();
    let mh = raw.iter().map(|r| r.0).sum::<f64>() / n as f64;
    let mw = raw.iter().map(|r| r.1).sum::<f64>() / n as f64;
    raw.iter()
        .map(|(h, w)| (DEVICE_SPREAD_HOURS * (h - mh), DEVICE_SPREAD_WATTS * (w - mw)))
        .collect()
}

fn effect_fraction(config: &ScenarioConfig, unit: &str, date: NaiveDate) -> f64 {
    match &config.treatment {
        Some(t) if t.unit == unit && date >= t.activation => {
            let elapsed = (date - t.activation).num_days() as f64 + 1.0;
            if t.effect_onset_days == 0 {
                1.0
            } else {
                (elapsed / t.effect_onset_days as f64).min(1.0)
            }
        }
        _ => 0.0,
    }
}

fn draw_unit(
    config: &ScenarioConfig,
    index: usize,
    unit: &UnitConfig,
    mixture: Option<(&BTreeMap<String, f64>, &BTreeMap<String, UnitDraw>)>,
) -> UnitDraw {
    let mut rng = stream(config.seed, index as u64 + 1);
    let offsets = centered_offsets(&mut rng, unit.devices_per_day);
    let treatment = config.treatment.as_ref();
    let mut hours = Vec::with_capacity(config.days);
    let mut watts = Vec::with_capacity(config.days);
    for t in 0..config.days {
        let date = config.start_date + Days::new(t as u64);
        let (mut h, mut w) = match mixture {
            Some((weights, draws)) => weights.iter().fold((0.0, 0.0), |(h, w), (donor, wt)| {
                (h + wt * draws[donor].hours[t], w + wt * draws[donor].watts[t])
            }),
            None => (
                unit.baseline_hours + unit.trend_per_day * t as f64 + weekly(date, unit.weekly_amplitude),
                unit.baseline_watts,
            ),
        };
        let frac = effect_fraction(config, &unit.id, date);
        if frac > 0.0 {
            let t = treatment.expect("effect implies treatment");
            h += frac * t.effect_hours;
            w += frac * t.effect_watts;
        }
        h += config.noise_sigma * normal(&mut rng);
        w += config.noise_sigma * normal(&mut rng);
        if let Some(o) = &config.outliers {
            if rng.random::<f64>() < o.probability {
                h += o.magnitude;
            }
        }
        hours.push(h);
        watts.push(w);
    }
    UnitDraw { hours, watts, offsets }
}

fn policy_codes(config: &ScenarioConfig, unit: &str) -> Vec<u8> {
    (0..config.days)
        .map(|t| {
            let date = config.start_date + Days::new(t as u64);
            match &config.treatment {
                Some(tr) if tr.unit == unit && date >= tr.activation => match tr.deactivation {
                    Some(d) if date >= d => 2,
                    _ => 3,
                },
                _ => 0,
            }
        })
        .collect()
}

fn persona_stream(config: &ScenarioConfig) -> Vec<UsageRecord> {
    let n = config.persona_devices;
    if n == 0 {
        return Vec::new();
    }
    let profiles = persona_profiles();
    let k = profiles.len();
    let base: Vec<usize> = (0..n).map(|j| j % k).collect();
    let mut shifted = vec![false; n];
    let shift = config.persona_shift.as_ref().map(|s| {
        let from = DEFAULT_PERSONA_NAMES
            .iter()
            .position(|p| *p == s.from)
            .expect("validated");
        let to = DEFAULT_PERSONA_NAMES
            .iter()
            .position(|p| *p == s.to)
            .expect("validated");
        let members: Vec<usize> = (0..n).filter(|&j| base[j] == from).collect();
        let take = (s.fraction * members.len() as f64).round() as usize;
        for &j in &members[..take] {
            shifted[j] = true;
        }
        (s.date, to)
    });

    let mut rng = stream(config.seed, 0);
    let mut out = Vec::with_capacity(n * config.days);
    for t in 0..config.days {
        let date = config.start_date + Days::new(t as u64);
        for j in 0..n {
            let persona = match shift {
                Some((d, to)) if shifted[j] && date >= d => to,
                _ => base[j],
            };
            let features = DEFAULT_FEATURES
                .iter()
                .zip(&profiles[persona])
                .map(|(name, mean)| {
                    let v = (mean + config.persona_noise * normal(&mut rng)).max(0.0);
                    (name.to_string(), v)
                })
                .collect();
            out.push(UsageRecord {
                date,
                device_id: format!("p{j:04}"),
                features,
            });
        }
    }
    out
}

/// Builds every output of a scenario deterministically from its config.
///
/// Each unit-day has a true mean (baseline, trend, weekly swing, treatment
/// effect and Gaussian noise, or the donor mixture in place of the first
/// three); device readings add fixed per-device offsets that sum to zero over
/// the unit, so the daily device mean equals the true mean up to rounding.
pub fn generate(config: &ScenarioConfig) -> Result<GeneratedScenario> {
    config.validate()?;
    let plain: Vec<(usize, &UnitConfig)> = config
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| !config.donor_mixture.contains_key(&u.id))
        .collect();
    let mut draws: BTreeMap<String, UnitDraw> = plain
        .par_iter()
        .map(|(i, u)| (u.id.clone(), draw_unit(config, *i, u, None)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    for (i, u) in config.units.iter().enumerate() {
        if let Some(weights) = config.donor_mixture.get(&u.id) {
            let d = draw_unit(config, i, u, Some((weights, &draws)));
            draws.insert(u.id.clone(), d);
        }
    }

    let mut telemetry = Vec::new();
    for t in 0..config.days {
        let date = config.start_date + Days::new(t as u64);
        for u in &config.units {
            let d = &draws[&u.id];
            let vpro_devices = (u.vpro_fraction * u.devices_per_day as f64).round() as usize;
            for (j, (oh, ow)) in d.offsets.iter().enumerate() {
                let rec = TelemetryRecord {
                    date,
                    device_id: format!("{}-{j:03}", u.id),
                    unit_id: u.id.clone(),
                    chassis: CHASSIS_CYCLE[j % 3],
                    cpu_family: CPU_CYCLE[(j / 3) % 3],
                    vpro: j < vpro_devices,
                    usage_hours: d.hours[t] + oh,
                    cpu_watts: d.watts[t] + ow,
                };
                rec.validate()
                    .map_err(|e| Error::Validation(format!("scenario produces an invalid reading: {e}")))?;
                telemetry.push(rec);
            }
        }
    }

    let policy = config
        .units
        .iter()
        .map(|u| PolicyTimeline::from_start(u.id.clone(), config.start_date, policy_codes(config, &u.id)))
        .collect::<Result<Vec<_>>>()?;
    let unit_labels = config
        .units
        .iter()
        .map(|u| (u.id.clone(), [("continent".to_string(), u.continent.clone())].into()))
        .collect();

    let mut daily_hours = BTreeMap::new();
    let mut daily_watts = BTreeMap::new();
    for (id, d) in draws {
        daily_hours.insert(id.clone(), d.hours);
        daily_watts.insert(id, d.watts);
    }
    Ok(GeneratedScenario {
        config: config.clone(),
        policy,
        telemetry,
        usage: persona_stream(config),
        unit_labels,
        daily_hours,
        daily_watts,
        manifest: GroundTruthManifest::from_config(config),
    })
}
