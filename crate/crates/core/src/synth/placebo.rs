// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_synth_inner, SynthFit, SynthSpec};
use crate::error::{Error, Result};
use crate::paneldata::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPlacebo {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboInference {
    /// `(1 + #{placebo ratio >= treated ratio}) / (J + 1 − skipped)`.
    pub p_value: f64,
    pub treated_ratio: f64,
    /// Post/pre RMSPE ratio per completed placebo, in donor order.
    pub placebo_ratios: Vec<(String, f64)>,
    pub placebo_gaps: Vec<(String, Vec<Option<f64>>)>,
    pub skipped: Vec<SkippedPlacebo>,
}

/// Refits the synthetic control once per donor with that donor treated as the
/// pseudo-treated unit and the remaining donors as its pool (the truly treated
/// unit is never a placebo donor).
///
/// Refits are independent and run in parallel; results are gathered in donor
/// order so the p-value does not depend on scheduling. Failed refits are
/// skipped, reported, and removed from the denominator.
pub fn randomization_inference(panel: &PanelDataset, spec: &SynthSpec, fit: &SynthFit) -> Result<PlaceboInference> {
    spec.validate(panel, 2)?;
    if fit.treated_unit != spec.treated_unit || fit.donor_units != spec.donor_units {
        return Err(Error::Validation(
            "synthetic-control fit does not belong to this specification".into(),
        ));
    }

    let outcomes: Vec<(String, Result<SynthFit>)> = spec
        .donor_units
        .par_iter()
        .map(|placebo| {
            let mut s = spec.clone();
            s.treated_unit = placebo.clone();
            s.donor_units = spec.donor_units.iter().filter(|d| *d != placebo).cloned().collect();
            (placebo.clone(), fit_synth_inner(panel, &s))
        })
        .collect();

    let mut placebo_ratios = Vec::new();
    let mut placebo_gaps = Vec::new();
    let mut skipped = Vec::new();
    for (unit, outcome) in outcomes {
        match outcome {
            Ok(f) => {
                placebo_ratios.push((unit.clone(), f.post_pre_ratio));
                placebo_gaps.push((unit, f.gap));
            }
            Err(e) => {
                log::warn!("placebo refit for {unit} skipped: {e}");
                skipped.push(SkippedPlacebo {
                    unit,
                    reason: e.to_string(),
                });
            }
        }
    }

    let treated_ratio = fit.post_pre_ratio;
    let at_least = placebo_ratios.iter().filter(|(_, r)| *r >= treated_ratio).count();
    let denominator = spec.donor_units.len() + 1 - skipped.len();
    Ok(PlaceboInference {
        p_value: (1 + at_least) as f64 / denominator as f64,
        treated_ratio,
        placebo_ratios,
        placebo_gaps,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::fit_synth;
    use chrono::NaiveDate;

    fn panel(rows: Vec<Vec<f64>>) -> PanelDataset {
        let n = rows[0].len();
        PanelDataset::from_rows(
            "usage_hours",
            (0..rows.len()).map(|i| format!("U{i}")).collect(),
            NaiveDate::from_ymd_opt(2020, 1, 1)
                .unwrap()
                .iter_days()
                .take(n)
                .collect(),
            rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn smallest_treated_ratio_gives_p_one() {
        // U0 tracks its donors equally before and after; U1 and U2 are each
        // perturbed only after T0, so their placebo ratios dominate.
        let n = 20;
        let t0 = 10;
        let base = |t: usize| 3.0 + (t as f64 * 0.7).sin();
        let u1: Vec<f64> = (0..n)
            .map(|t| base(t) + 0.1 + if t >= t0 { 2.0 } else { 0.0 })
            .collect();
        let u2: Vec<f64> = (0..n)
            .map(|t| base(t) - 0.1 - if t >= t0 { 2.0 } else { 0.0 })
            .collect();
        let u0: Vec<f64> = (0..n)
            .map(|t| base(t) + if t % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let p = panel(vec![u0, u1, u2]);
        let spec = SynthSpec::new("U0", ["U1", "U2"], p.dates()[t0]);
        let fit = fit_synth(&p, &spec).unwrap();
        let inf = randomization_inference(&p, &spec, &fit).unwrap();
        assert_eq!(inf.placebo_ratios.len(), 2);
        assert!(inf.placebo_ratios.iter().all(|(_, r)| *r >= inf.treated_ratio));
        assert_eq!(inf.p_value, 1.0);
    }

    #[test]
    fn mismatched_fit_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|j| (0..12).map(|t| (t * (j + 1)) as f64).collect())
            .collect();
        let p = panel(rows);
        let spec = SynthSpec::new("U0", ["U1", "U2", "U3"], p.dates()[6]);
        let fit = fit_synth(&p, &spec).unwrap();
        let mut other = spec.clone();
        other.treated_unit = "U1".into();
        other.donor_units = vec!["U0".into(), "U2".into(), "U3".into()];
        assert!(randomization_inference(&p, &other, &fit).is_err());
    }
}
